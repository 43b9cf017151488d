#pragma once

// Seconds-based clock used by samplers, markers and solver timing. The
// real clock wraps steady_clock with a fixed epoch; the virtual clock is
// advanced explicitly and can notify hooks, which lets tests drive
// "the world" (e.g. a counter fixture) in lockstep with simulated time.

#include <chrono>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace sparsewatt {

class Clock {
public:
    virtual ~Clock() = default;
    virtual double now() = 0;
    virtual void sleep_until(double t) = 0;

    void sleep_for(double seconds) { sleep_until(now() + seconds); }
};

class RealClock final : public Clock {
public:
    RealClock() : epoch_(std::chrono::steady_clock::now()) {}

    /// Aligns this clock with a wall-clock (unix) epoch so two processes
    /// can share a timeline: t = unix_now - epoch_unix_s.
    explicit RealClock(double epoch_unix_s) : epoch_(std::chrono::steady_clock::now()) {
        const double unix_now =
            std::chrono::duration<double>(
                std::chrono::system_clock::now().time_since_epoch())
                .count();
        offset_ = unix_now - epoch_unix_s;
    }

    double now() override {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_)
                   .count() +
               offset_;
    }

    void sleep_until(double t) override {
        const double dt = t - now();
        if (dt > 0) std::this_thread::sleep_for(std::chrono::duration<double>(dt));
    }

private:
    std::chrono::steady_clock::time_point epoch_;
    double offset_ = 0.0;
};

/// Manually advanced clock. sleep_until jumps time forward and runs the
/// registered hooks at the new time. Single-threaded use only.
class VirtualClock final : public Clock {
public:
    double now() override { return t_; }

    void sleep_until(double t) override {
        if (t > t_) {
            t_ = t;
            for (auto& hook : hooks_) hook(t_);
        }
    }

    void on_advance(std::function<void(double)> hook) { hooks_.push_back(std::move(hook)); }

private:
    double t_ = 0.0;
    std::vector<std::function<void(double)>> hooks_;
};

/// Process-wide real clock; epoch is fixed on first use so samples and
/// marks taken anywhere in the process share one timeline.
inline Clock& default_clock() {
    static RealClock clock;
    return clock;
}

inline double unix_now() {
    return std::chrono::duration<double>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

} // namespace sparsewatt
