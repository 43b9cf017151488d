#pragma once

// Power sampling. A sampler polls a backend at a fixed period and appends
// (timestamp, watts) samples to one timeline per device. Backends:
//
//   synthetic      — watts = f(t), programmable per device
//   trace_replay   — emits a previously recorded device file verbatim
//   powercap_files — derives watts from cumulative energy counters laid
//                    out like the Linux powercap tree (<zone>/energy_uj,
//                    <zone>/name, optional <zone>/max_energy_range_uj)
//
// Marker regions share the sampler's clock so they can be projected onto
// the timelines afterwards.

#include <atomic>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "sparsewatt/clock.hpp"
#include "sparsewatt/errors.hpp"

namespace sparsewatt {

struct PowerSample {
    double t = 0.0; // seconds since monitor start
    double p = 0.0; // watts

    friend bool operator==(const PowerSample&, const PowerSample&) = default;
};

struct PowerTimeline {
    std::string device;
    std::vector<PowerSample> samples; // non-decreasing timestamps

    friend bool operator==(const PowerTimeline&, const PowerTimeline&) = default;
};

// ---------------------------------------------------------------------------
// Marker regions

enum class MarkKind { begin, end };

struct RegionMark {
    std::string name;
    MarkKind kind = MarkKind::begin;
    double t = 0.0;

    friend bool operator==(const RegionMark&, const RegionMark&) = default;
};

struct Region {
    std::string name;
    double t0 = 0.0;
    double t1 = 0.0;
};

/// Append-only mark stream; safe to call from any rank context.
class MarkStream {
public:
    explicit MarkStream(Clock* clock = nullptr) : clock_(clock ? clock : &default_clock()) {}

    void mark(const std::string& name, MarkKind kind) { mark(name, kind, clock_->now()); }

    void mark(const std::string& name, MarkKind kind, double t) {
        if (name.empty() || name.find(',') != std::string::npos ||
            name.find('\n') != std::string::npos)
            throw domain_error("region name must be non-empty and free of ',' and newlines");
        std::lock_guard lock(m_);
        marks_.push_back({name, kind, t});
    }

    std::vector<RegionMark> marks() const {
        std::lock_guard lock(m_);
        auto copy = marks_;
        std::stable_sort(copy.begin(), copy.end(),
                         [](const RegionMark& a, const RegionMark& b) { return a.t < b.t; });
        return copy;
    }

private:
    mutable std::mutex m_;
    std::vector<RegionMark> marks_;
    Clock* clock_;
};

/// Bracket-matches a complete mark stream into closed regions. Regions may
/// nest and a name may recur; an end must close the innermost open region,
/// and every region must be closed.
inline std::vector<Region> reconstruct_regions(std::vector<RegionMark> marks) {
    std::stable_sort(marks.begin(), marks.end(),
                     [](const RegionMark& a, const RegionMark& b) { return a.t < b.t; });
    std::vector<Region> out;
    std::vector<std::pair<std::string, double>> stack;
    for (const auto& m : marks) {
        if (m.kind == MarkKind::begin) {
            stack.emplace_back(m.name, m.t);
        } else {
            if (stack.empty())
                throw nesting_error("end mark '" + m.name + "' without a begin");
            if (stack.back().first != m.name)
                throw nesting_error("end mark '" + m.name + "' does not match open region '" +
                                    stack.back().first + "'");
            out.push_back({m.name, stack.back().second, m.t});
            stack.pop_back();
        }
    }
    if (!stack.empty())
        throw nesting_error("region '" + stack.back().first + "' is never closed");
    return out;
}

inline Region find_region(const std::vector<Region>& regions, const std::string& name) {
    for (const auto& r : regions)
        if (r.name == name) return r;
    throw domain_error("no region named '" + name + "'");
}

// ---------------------------------------------------------------------------
// Cumulative energy counters

struct CounterReading {
    double t = 0.0;         // seconds
    std::uint32_t raw = 0;  // cumulative count, wraps modulo 2^32
    double unit = 1e-6;     // joules per count
};

/// Counter delta with wraparound correction at `range`.
inline std::uint64_t wrap_delta(std::uint64_t prev, std::uint64_t cur, std::uint64_t range) {
    return cur >= prev ? cur - prev : cur + (range - prev);
}

/// Total energy of a cumulative 32-bit counter series: wrap-corrected raw
/// deltas scaled by the unit of the later reading.
inline double counter_to_energy(std::span<const CounterReading> readings) {
    if (readings.size() < 2)
        throw insufficient_data_error("counter_to_energy needs at least two readings");
    double joules = 0.0;
    for (std::size_t i = 1; i < readings.size(); ++i) {
        if (!(readings[i].t > readings[i - 1].t))
            throw domain_error("counter readings must have increasing timestamps");
        if (!(readings[i].unit > 0)) throw domain_error("counter unit must be positive");
        const std::uint64_t delta =
            wrap_delta(readings[i - 1].raw, readings[i].raw, std::uint64_t(1) << 32);
        joules += static_cast<double>(delta) * readings[i].unit;
    }
    return joules;
}

// ---------------------------------------------------------------------------
// Backends

class PowerBackend {
public:
    virtual ~PowerBackend() = default;
    virtual std::vector<std::string> devices() = 0;
    /// Instantaneous watts at time t, or nothing if the backend cannot
    /// produce a value yet (first counter read).
    virtual std::optional<double> read_watts(const std::string& device, double t) = 0;
    /// Replay backends bypass periodic sampling entirely.
    virtual bool replays() const { return false; }
    virtual std::vector<PowerTimeline> replay() {
        throw startup_error("backend does not replay traces");
    }
};

class SyntheticBackend final : public PowerBackend {
public:
    using Profile = std::function<double(double)>;

    void add_device(const std::string& name, Profile profile) {
        order_.push_back(name);
        profiles_[name] = std::move(profile);
    }

    std::vector<std::string> devices() override { return order_; }

    std::optional<double> read_watts(const std::string& device, double t) override {
        auto it = profiles_.find(device);
        if (it == profiles_.end()) throw domain_error("unknown synthetic device " + device);
        return it->second(t);
    }

private:
    std::vector<std::string> order_;
    std::map<std::string, Profile> profiles_;
};

// Forward declaration; defined with the file I/O below.
inline std::vector<PowerTimeline> read_device_files(const std::filesystem::path& dir);

class TraceReplayBackend final : public PowerBackend {
public:
    explicit TraceReplayBackend(std::filesystem::path dir) : dir_(std::move(dir)) {
        if (!std::filesystem::is_directory(dir_))
            throw startup_error("trace directory not found: " + dir_.string());
    }

    std::vector<std::string> devices() override {
        std::vector<std::string> names;
        for (const auto& tl : read_device_files(dir_)) names.push_back(tl.device);
        return names;
    }

    bool replays() const override { return true; }

    std::vector<PowerTimeline> replay() override { return read_device_files(dir_); }

    std::optional<double> read_watts(const std::string&, double) override {
        throw startup_error("trace_replay backend does not sample live");
    }

private:
    std::filesystem::path dir_;
};

/// Reads zones shaped like the Linux powercap tree. Watts come from the
/// delta of the cumulative energy_uj counter between consecutive reads.
class PowercapBackend final : public PowerBackend {
public:
    static std::filesystem::path default_root() {
        if (const char* env = std::getenv("SPARSEWATT_POWER_DIR")) return env;
        return "/sys/class/powercap/intel-rapl";
    }

    explicit PowercapBackend(std::filesystem::path root = {}) {
        root_ = root.empty() ? default_root() : std::move(root);
        if (!std::filesystem::is_directory(root_))
            throw startup_error("powercap root not found: " + root_.string());
        for (const auto& entry : std::filesystem::directory_iterator(root_)) {
            if (!entry.is_directory()) continue;
            const auto energy = entry.path() / "energy_uj";
            const auto name = entry.path() / "name";
            if (!std::filesystem::exists(energy) || !std::filesystem::exists(name)) continue;
            Zone z;
            z.energy_path = energy;
            z.device = sanitize(read_line(name));
            const auto range_path = entry.path() / "max_energy_range_uj";
            z.range = std::filesystem::exists(range_path)
                          ? parse_u64(read_line(range_path), range_path)
                          : (std::uint64_t(1) << 32); // MSR-style default
            zones_.push_back(std::move(z));
        }
        if (zones_.empty())
            throw startup_error("no powercap zones with energy_uj under " + root_.string());
        std::sort(zones_.begin(), zones_.end(),
                  [](const Zone& a, const Zone& b) { return a.device < b.device; });
    }

    std::vector<std::string> devices() override {
        std::vector<std::string> names;
        for (const auto& z : zones_) names.push_back(z.device);
        return names;
    }

    std::optional<double> read_watts(const std::string& device, double t) override {
        for (auto& z : zones_) {
            if (z.device != device) continue;
            const std::uint64_t raw = parse_u64(read_line(z.energy_path), z.energy_path);
            if (!z.has_prev) {
                z.prev_raw = raw;
                z.prev_t = t;
                z.has_prev = true;
                return std::nullopt;
            }
            const double dt = t - z.prev_t;
            const double uj = static_cast<double>(wrap_delta(z.prev_raw, raw, z.range));
            z.prev_raw = raw;
            z.prev_t = t;
            if (dt <= 0) return std::nullopt;
            return uj * 1e-6 / dt;
        }
        throw domain_error("unknown powercap device " + device);
    }

private:
    struct Zone {
        std::filesystem::path energy_path;
        std::string device;
        std::uint64_t range = 0;
        bool has_prev = false;
        std::uint64_t prev_raw = 0;
        double prev_t = 0.0;
    };

    static std::string read_line(const std::filesystem::path& p) {
        std::ifstream is(p);
        if (!is) throw startup_error("cannot read " + p.string());
        std::string line;
        std::getline(is, line);
        return line;
    }

    static std::uint64_t parse_u64(const std::string& s, const std::filesystem::path& p) {
        try {
            return std::stoull(s);
        } catch (const std::exception&) {
            throw parse_error(p.string() + ": expected an unsigned integer, got '" + s + "'");
        }
    }

    static std::string sanitize(const std::string& s) {
        std::string out;
        for (char c : s)
            out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_')
                       ? c
                       : '_';
        return out.empty() ? "zone" : out;
    }

    std::filesystem::path root_;
    std::vector<Zone> zones_;
};

// ---------------------------------------------------------------------------
// Sampler

class Sampler {
public:
    Sampler(PowerBackend& backend, Clock& clock, double period)
        : backend_(&backend), clock_(&clock), period_(period) {
        if (!(period > 0)) throw config_error("sampling period must be positive");
        for (const auto& dev : backend_->devices()) timelines_.push_back({dev, {}});
    }

    ~Sampler() {
        if (running_) stop();
    }

    /// Spawns one sampling thread per device (real-clock mode).
    void start() {
        if (running_) throw contract_error("sampler already running");
        if (backend_->replays()) {
            timelines_ = backend_->replay();
            return;
        }
        stop_.store(false);
        running_ = true;
        for (std::size_t d = 0; d < timelines_.size(); ++d)
            threads_.emplace_back([this, d] { sample_loop(d); });
    }

    /// Stops the threads and flushes; timelines() is valid afterwards.
    void stop() {
        stop_.store(true);
        for (auto& t : threads_) t.join();
        threads_.clear();
        running_ = false;
    }

    /// Synchronous alternative to start/stop: samples every device for
    /// `duration`, stepping the clock. This is the path virtual clocks use.
    void run_for(double duration) {
        if (running_) throw contract_error("sampler already running");
        if (backend_->replays()) {
            timelines_ = backend_->replay();
            return;
        }
        const double t_end = clock_->now() + duration;
        double next = clock_->now();
        while (next <= t_end + period_ * 1e-9) {
            const double t = clock_->now();
            for (auto& tl : timelines_)
                if (auto w = backend_->read_watts(tl.device, t)) tl.samples.push_back({t, *w});
            next += period_;
            clock_->sleep_until(next);
        }
    }

    const std::vector<PowerTimeline>& timelines() const {
        if (running_) throw contract_error("stop the sampler before reading timelines");
        return timelines_;
    }

private:
    void sample_loop(std::size_t d) {
        PowerTimeline& tl = timelines_[d];
        double next = clock_->now();
        while (!stop_.load(std::memory_order_relaxed)) {
            const double t = clock_->now();
            if (auto w = backend_->read_watts(tl.device, t)) tl.samples.push_back({t, *w});
            next += period_;
            if (next < clock_->now()) next = clock_->now(); // fell behind; do not burst
            clock_->sleep_until(next);
        }
    }

    PowerBackend* backend_;
    Clock* clock_;
    double period_;
    std::vector<PowerTimeline> timelines_;
    std::vector<std::thread> threads_;
    std::atomic<bool> stop_{false};
    bool running_ = false;
};

// ---------------------------------------------------------------------------
// Per-device power files and the marks file.
//
//   power_<device>.csv : header "timestamp_s,power_w", one sample per line
//   marks.csv          : header "name,kind,timestamp_s"
//
// Values are written with six fractional digits (LF line endings, decimal
// point), which round-trips exactly for the magnitudes involved.

namespace detail {

inline std::string fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

inline bool safe_device_name(const std::string& s) {
    if (s.empty()) return false;
    for (char c : s)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') return false;
    return true;
}

inline double parse_double_field(const std::string& field, const std::filesystem::path& file,
                                 std::size_t lineno) {
    try {
        std::size_t used = 0;
        const double v = std::stod(field, &used);
        if (used != field.size()) throw std::invalid_argument("trailing junk");
        return v;
    } catch (const std::exception&) {
        throw parse_error(file.string() + ":" + std::to_string(lineno) +
                          ": malformed number '" + field + "'");
    }
}

} // namespace detail

inline void write_device_files(const std::vector<PowerTimeline>& timelines,
                               const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (const auto& tl : timelines) {
        if (!detail::safe_device_name(tl.device))
            throw domain_error("device name '" + tl.device + "' is not filename-safe");
        std::ofstream os(dir / ("power_" + tl.device + ".csv"), std::ios::binary);
        if (!os) throw io_error("cannot write device file for " + tl.device);
        os << "timestamp_s,power_w\n";
        for (const auto& s : tl.samples)
            os << detail::fixed6(s.t) << "," << detail::fixed6(s.p) << "\n";
    }
}

inline std::vector<PowerTimeline> read_device_files(const std::filesystem::path& dir) {
    std::vector<PowerTimeline> out;
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        const auto name = entry.path().filename().string();
        if (name.starts_with("power_") && name.ends_with(".csv")) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
        const auto name = file.filename().string();
        PowerTimeline tl;
        tl.device = name.substr(6, name.size() - 10);
        std::ifstream is(file, std::ios::binary);
        if (!is) throw io_error("cannot open " + file.string());
        std::string line;
        std::size_t lineno = 0;
        if (!std::getline(is, line) || line != "timestamp_s,power_w")
            throw parse_error(file.string() + ":1: expected header 'timestamp_s,power_w'");
        ++lineno;
        while (std::getline(is, line)) {
            ++lineno;
            if (line.empty()) continue;
            const auto comma = line.find(',');
            if (comma == std::string::npos)
                throw parse_error(file.string() + ":" + std::to_string(lineno) +
                                  ": expected 'timestamp,power'");
            tl.samples.push_back(
                {detail::parse_double_field(line.substr(0, comma), file, lineno),
                 detail::parse_double_field(line.substr(comma + 1), file, lineno)});
        }
        out.push_back(std::move(tl));
    }
    return out;
}

inline void write_marks_file(const std::vector<RegionMark>& marks,
                             const std::filesystem::path& file) {
    std::ofstream os(file, std::ios::binary);
    if (!os) throw io_error("cannot write " + file.string());
    os << "name,kind,timestamp_s\n";
    for (const auto& m : marks)
        os << m.name << "," << (m.kind == MarkKind::begin ? "begin" : "end") << ","
           << detail::fixed6(m.t) << "\n";
}

inline std::vector<RegionMark> read_marks_file(const std::filesystem::path& file) {
    std::ifstream is(file, std::ios::binary);
    if (!is) throw io_error("cannot open " + file.string());
    std::vector<RegionMark> out;
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(is, line) || line != "name,kind,timestamp_s")
        throw parse_error(file.string() + ":1: expected header 'name,kind,timestamp_s'");
    ++lineno;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto c1 = line.find(',');
        const auto c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
        if (c2 == std::string::npos)
            throw parse_error(file.string() + ":" + std::to_string(lineno) +
                              ": expected 'name,kind,timestamp'");
        RegionMark m;
        m.name = line.substr(0, c1);
        const std::string kind = line.substr(c1 + 1, c2 - c1 - 1);
        if (kind == "begin")
            m.kind = MarkKind::begin;
        else if (kind == "end")
            m.kind = MarkKind::end;
        else
            throw parse_error(file.string() + ":" + std::to_string(lineno) + ": bad kind '" +
                              kind + "'");
        m.t = detail::parse_double_field(line.substr(c2 + 1), file, lineno);
        out.push_back(std::move(m));
    }
    return out;
}

/// External-monitor synchronization: the monitor writes its t=0 as a unix
/// timestamp; the application aligns its clock against it.
inline void write_epoch_file(const std::filesystem::path& dir, double epoch_unix_s) {
    std::ofstream os(dir / "epoch.txt", std::ios::binary);
    if (!os) throw io_error("cannot write epoch file");
    os << detail::fixed6(epoch_unix_s) << "\n";
}

inline double read_epoch_file(const std::filesystem::path& dir) {
    std::ifstream is(dir / "epoch.txt", std::ios::binary);
    if (!is) throw io_error("cannot open " + (dir / "epoch.txt").string());
    std::string line;
    std::getline(is, line);
    return detail::parse_double_field(line, dir / "epoch.txt", 1);
}

} // namespace sparsewatt
