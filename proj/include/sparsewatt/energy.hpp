#pragma once

// Energy accounting on recorded power timelines.
//
// Total energy is the trapezoidal integral of the power-time curve (the
// samples are read as a piecewise-linear signal). Static power is the
// median of the idle samples around the activity window; static energy is
// SP x T, and dynamic energy the remainder TE - SE. Negative DE is
// reported with a flag rather than clamped.
//
// Execution time T per device class follows the measurement split: for
// gpu-class devices it spans the detected idle transitions; for cpu-class
// devices it comes from the marker region.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sparsewatt/errors.hpp"
#include "sparsewatt/sensors.hpp"

namespace sparsewatt {

namespace detail {

/// Collapses duplicate timestamps (keeping the last sample) so the result
/// is strictly increasing.
inline std::vector<PowerSample> dedup_samples(const std::vector<PowerSample>& in) {
    std::vector<PowerSample> out;
    out.reserve(in.size());
    for (const auto& s : in) {
        if (!out.empty() && !(s.t >= out.back().t))
            throw domain_error("timeline timestamps must be non-decreasing");
        if (!out.empty() && s.t == out.back().t)
            out.back() = s;
        else
            out.push_back(s);
    }
    return out;
}

inline double median_of(std::vector<double> v) {
    if (v.empty()) throw estimation_error("median of an empty sample set");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace detail

/// Trapezoidal integral of the timeline over [t0, t1], with linear
/// interpolation at both endpoints. Additive over adjacent intervals.
inline double integrate(const PowerTimeline& timeline, double t0, double t1) {
    const auto s = detail::dedup_samples(timeline.samples);
    if (s.size() < 2) throw domain_error("integration needs at least two samples");
    if (!(t0 < t1)) throw domain_error("integration interval must satisfy t0 < t1");
    if (t0 < s.front().t || t1 > s.back().t)
        throw domain_error("integration interval [" + std::to_string(t0) + ", " +
                           std::to_string(t1) + "] outside timeline span [" +
                           std::to_string(s.front().t) + ", " + std::to_string(s.back().t) +
                           "]");

    auto value_at = [&](std::size_t seg, double t) {
        const double w = (t - s[seg].t) / (s[seg + 1].t - s[seg].t);
        return s[seg].p + w * (s[seg + 1].p - s[seg].p);
    };

    // First segment whose right endpoint is beyond t0.
    std::size_t seg = 0;
    while (seg + 2 < s.size() && s[seg + 1].t <= t0) ++seg;

    double joules = 0.0;
    double cur_t = t0;
    double cur_p = value_at(seg, t0);
    while (s[seg + 1].t < t1) {
        joules += 0.5 * (cur_p + s[seg + 1].p) * (s[seg + 1].t - cur_t);
        cur_t = s[seg + 1].t;
        cur_p = s[seg + 1].p;
        ++seg;
    }
    joules += 0.5 * (cur_p + value_at(seg, t1)) * (t1 - cur_t);
    return joules;
}

struct IdleTransitions {
    double leave_idle_t = 0.0;
    double return_idle_t = 0.0;
};

/// Finds when the device leaves and returns to idle. The baseline is the
/// median power over the first `baseline_window` seconds; a transition
/// needs power above threshold_factor x baseline sustained for at least
/// three consecutive samples.
inline IdleTransitions detect_idle_transitions(const PowerTimeline& timeline,
                                               double baseline_window,
                                               double threshold_factor) {
    const auto s = detail::dedup_samples(timeline.samples);
    if (s.size() < 3) throw no_activity_error("timeline too short for idle detection");
    if (!(baseline_window > 0)) throw domain_error("baseline window must be positive");

    std::vector<double> head;
    for (const auto& smp : s)
        if (smp.t <= s.front().t + baseline_window) head.push_back(smp.p);
    const double baseline = detail::median_of(head);
    const double threshold = threshold_factor * baseline;

    auto sustained = [&](std::size_t i) {
        return i + 2 < s.size() && s[i].p > threshold && s[i + 1].p > threshold &&
               s[i + 2].p > threshold;
    };

    std::optional<double> leave;
    for (std::size_t i = 0; i + 2 < s.size(); ++i)
        if (sustained(i)) {
            leave = s[i].t;
            break;
        }
    std::optional<double> back;
    for (std::size_t i = s.size() - 1; i >= 2; --i) {
        if (sustained(i - 2)) {
            back = s[i].t;
            break;
        }
        if (i == 2) break;
    }
    if (!leave || !back || !(*leave < *back))
        throw no_activity_error("no sustained activity above " +
                                std::to_string(threshold_factor) + " x baseline (" +
                                std::to_string(baseline) + " W)");
    return {*leave, *back};
}

/// Median power over the leading and trailing idle windows.
inline double estimate_static_power(const PowerTimeline& timeline,
                                    const IdleTransitions& idle) {
    const auto s = detail::dedup_samples(timeline.samples);
    std::vector<double> idle_samples;
    for (const auto& smp : s)
        if (smp.t < idle.leave_idle_t || smp.t > idle.return_idle_t)
            idle_samples.push_back(smp.p);
    if (idle_samples.empty())
        throw estimation_error("no idle samples outside the activity window");
    return detail::median_of(idle_samples);
}

struct Decomposition {
    double se = 0.0;
    double de = 0.0;
    bool negative_de = false;
};

/// SE = SP x T, DE = TE - SE. Negative DE is preserved and flagged.
inline Decomposition decompose(double te, double sp, double t) {
    if (!(t > 0)) throw domain_error("decompose: execution time must be positive");
    if (sp < 0) throw domain_error("decompose: static power must be non-negative");
    Decomposition d;
    d.se = sp * t;
    d.de = te - d.se;
    d.negative_de = d.de < 0;
    return d;
}

/// Piecewise-linear value of the timeline at time t.
inline double value_at(const PowerTimeline& timeline, double t) {
    const auto s = detail::dedup_samples(timeline.samples);
    if (s.size() < 2) throw domain_error("timeline too short for interpolation");
    if (t < s.front().t || t > s.back().t)
        throw domain_error("time " + std::to_string(t) + " outside timeline span");
    std::size_t seg = 0;
    while (seg + 2 < s.size() && s[seg + 1].t <= t) ++seg;
    const double w = (t - s[seg].t) / (s[seg + 1].t - s[seg].t);
    return s[seg].p + w * (s[seg + 1].p - s[seg].p);
}

/// Largest sample within [t0, t1].
inline double region_peak(const PowerTimeline& timeline, double t0, double t1) {
    double peak = -1.0;
    bool any = false;
    for (const auto& s : timeline.samples)
        if (s.t >= t0 && s.t <= t1) {
            peak = std::max(peak, s.p);
            any = true;
        }
    if (!any) throw domain_error("no samples inside the requested region");
    return peak;
}

// ---------------------------------------------------------------------------
// Reports

struct ClassEnergy {
    double te_j = 0.0;
    double se_j = 0.0;
    double de_j = 0.0;
    double sp_w = 0.0;
    double peak_w = 0.0;
    double t_s = 0.0;
    std::vector<std::string> flags;

    friend bool operator==(const ClassEnergy&, const ClassEnergy&) = default;
};

struct EnergyReport {
    std::map<std::string, ClassEnergy> classes; // keyed "cpu", "gpu"
    double de_total_j = 0.0;
    double t_s = 0.0; // workload region duration

    friend bool operator==(const EnergyReport&, const EnergyReport&) = default;
};

struct EnergyOptions {
    double baseline_window = 0.25;
    double threshold_factor = 1.2;
    std::string region_name = "kernel";
    std::map<std::string, double> static_power_override; // per class
    std::function<std::string(const std::string&)> classify;
};

/// Default device classification: anything with "gpu" in the name is
/// gpu-class, the rest cpu-class.
inline std::string default_device_class(const std::string& device) {
    return device.find("gpu") != std::string::npos ? "gpu" : "cpu";
}

/// Runs the full accounting pipeline over one region. For every device:
/// pick the T window (idle transitions for gpu-class, region marks for
/// cpu-class), integrate TE, estimate SP, decompose. Devices of one class
/// are summed; the class peak is the largest per-device region peak.
inline EnergyReport build_energy_report(const std::vector<PowerTimeline>& timelines,
                                        const std::vector<RegionMark>& marks,
                                        const EnergyOptions& opt = {}) {
    const Region region = find_region(reconstruct_regions(marks), opt.region_name);
    auto classify = opt.classify ? opt.classify : default_device_class;

    struct DeviceShare {
        double window0, window1, te, sp, peak;
        std::vector<std::string> flags;
    };
    std::map<std::string, std::vector<DeviceShare>> shares;

    for (const auto& tl : timelines) {
        const std::string cls = classify(tl.device);
        DeviceShare ds{};
        std::optional<IdleTransitions> idle;
        try {
            idle = detect_idle_transitions(tl, opt.baseline_window, opt.threshold_factor);
        } catch (const no_activity_error&) {
            idle.reset();
        }

        if (cls == "gpu" && idle) {
            ds.window0 = idle->leave_idle_t;
            ds.window1 = idle->return_idle_t;
        } else {
            ds.window0 = region.t0;
            ds.window1 = region.t1;
            if (cls == "gpu") ds.flags.push_back("idle_detection_fallback");
        }

        auto it = opt.static_power_override.find(cls);
        if (it != opt.static_power_override.end()) {
            ds.sp = it->second;
        } else if (idle) {
            ds.sp = estimate_static_power(tl, *idle);
        } else {
            std::vector<double> all;
            for (const auto& s : tl.samples) all.push_back(s.p);
            ds.sp = detail::median_of(all);
            ds.flags.push_back("static_power_from_full_trace");
        }

        const auto s = detail::dedup_samples(tl.samples);
        if (s.size() < 2) throw domain_error("device " + tl.device + " has too few samples");
        const double lo = std::max(ds.window0, s.front().t);
        const double hi = std::min(ds.window1, s.back().t);
        if (!(lo < hi))
            throw domain_error("device " + tl.device +
                               " has no samples covering the measurement window");
        ds.window0 = lo;
        ds.window1 = hi;
        ds.te = integrate(tl, lo, hi);
        try {
            ds.peak = region_peak(tl, lo, hi);
        } catch (const domain_error&) {
            // window shorter than one sampling period: no raw sample falls
            // inside, so take the interpolated boundary values
            ds.peak = std::max(value_at(tl, lo), value_at(tl, hi));
            ds.flags.push_back("peak_from_interpolation");
        }
        shares[cls].push_back(std::move(ds));
    }

    EnergyReport report;
    report.t_s = region.t1 - region.t0;
    for (auto& [cls, devs] : shares) {
        ClassEnergy ce;
        double w0 = devs.front().window0, w1 = devs.front().window1;
        for (const auto& d : devs) {
            w0 = std::min(w0, d.window0);
            w1 = std::max(w1, d.window1);
            ce.te_j += d.te;
            ce.sp_w += d.sp;
            ce.peak_w = std::max(ce.peak_w, d.peak);
            for (const auto& f : d.flags)
                if (std::find(ce.flags.begin(), ce.flags.end(), f) == ce.flags.end())
                    ce.flags.push_back(f);
        }
        ce.t_s = w1 - w0;
        const Decomposition d = decompose(ce.te_j, ce.sp_w, ce.t_s);
        ce.se_j = d.se;
        ce.de_j = d.de;
        if (d.negative_de) ce.flags.push_back("negative_DE");
        report.classes[cls] = std::move(ce);
    }
    for (const auto& [cls, ce] : report.classes) report.de_total_j += ce.de_j;
    return report;
}

struct DerivedMetrics {
    double j_per_dof = 0.0;
    double j_per_iteration = 0.0;
    std::map<std::string, double> peak_w;

    friend bool operator==(const DerivedMetrics&, const DerivedMetrics&) = default;
};

inline DerivedMetrics compute_metrics(const EnergyReport& report, std::uint64_t n_dofs,
                                      std::uint64_t iterations) {
    if (n_dofs < 1) throw domain_error("metrics: n_dofs must be at least 1");
    if (iterations < 1) throw domain_error("metrics: iterations must be at least 1");
    DerivedMetrics m;
    m.j_per_dof = report.de_total_j / static_cast<double>(n_dofs);
    m.j_per_iteration = report.de_total_j / static_cast<double>(iterations);
    for (const auto& [cls, ce] : report.classes) m.peak_w[cls] = ce.peak_w;
    return m;
}

// ---------------------------------------------------------------------------
// JSON (fixed field names; ordered_json keeps emission byte-stable)

inline nlohmann::ordered_json to_json(const ClassEnergy& ce) {
    return {{"te_j", ce.te_j},   {"se_j", ce.se_j},     {"de_j", ce.de_j},
            {"sp_w", ce.sp_w},   {"peak_w", ce.peak_w}, {"t_s", ce.t_s},
            {"flags", ce.flags}};
}

inline nlohmann::ordered_json to_json(const EnergyReport& report) {
    nlohmann::ordered_json classes = nlohmann::ordered_json::object();
    for (const auto& [cls, ce] : report.classes) classes[cls] = to_json(ce);
    return {{"t_s", report.t_s}, {"de_total_j", report.de_total_j}, {"classes", classes}};
}

inline nlohmann::ordered_json to_json(const DerivedMetrics& m) {
    nlohmann::ordered_json peaks = nlohmann::ordered_json::object();
    for (const auto& [cls, w] : m.peak_w) peaks[cls] = w;
    return {{"j_per_dof", m.j_per_dof},
            {"j_per_iteration", m.j_per_iteration},
            {"peak_w", peaks}};
}

inline ClassEnergy class_energy_from_json(const nlohmann::json& j) {
    ClassEnergy ce;
    ce.te_j = j.at("te_j").get<double>();
    ce.se_j = j.at("se_j").get<double>();
    ce.de_j = j.at("de_j").get<double>();
    ce.sp_w = j.at("sp_w").get<double>();
    ce.peak_w = j.at("peak_w").get<double>();
    ce.t_s = j.at("t_s").get<double>();
    ce.flags = j.at("flags").get<std::vector<std::string>>();
    return ce;
}

inline EnergyReport energy_report_from_json(const nlohmann::json& j) {
    EnergyReport r;
    r.t_s = j.at("t_s").get<double>();
    r.de_total_j = j.at("de_total_j").get<double>();
    for (const auto& [cls, cj] : j.at("classes").items())
        r.classes[cls] = class_energy_from_json(cj);
    return r;
}

inline DerivedMetrics metrics_from_json(const nlohmann::json& j) {
    DerivedMetrics m;
    m.j_per_dof = j.at("j_per_dof").get<double>();
    m.j_per_iteration = j.at("j_per_iteration").get<double>();
    for (const auto& [cls, w] : j.at("peak_w").items()) m.peak_w[cls] = w.get<double>();
    return m;
}

} // namespace sparsewatt
