#pragma once

// Message-passing layer between ranks. Every inter-rank effect in the
// library goes through a Transport; ranks never share mutable state.
//
// Two realizations exist: the in-process one below (ranks as threads with
// mailbox queues) and the socket one in socket_transport.hpp. Collectives
// are built on point-to-point sends so both realizations share them.
//
// Reduction accounting: allreduce_sum is one reduction event no matter how
// many values are fused into the message. Solvers are specified in terms
// of these events, so the counter is part of the interface.

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <cstring>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <span>
#include <thread>
#include <vector>

#include "sparsewatt/errors.hpp"

namespace sparsewatt {

// Tags at or above this value are reserved for collectives.
constexpr int tag_internal_base = 1 << 24;
constexpr int tag_reduce = tag_internal_base + 1;
constexpr int tag_broadcast = tag_internal_base + 2;
constexpr int tag_barrier = tag_internal_base + 3;
constexpr int tag_gather = tag_internal_base + 4;

class Transport {
public:
    virtual ~Transport() = default;

    virtual int rank() const noexcept = 0;
    virtual int size() const noexcept = 0;

    virtual void send(int to, int tag, std::span<const std::byte> payload) = 0;
    virtual std::vector<std::byte> recv(int from, int tag) = 0;

    void send_doubles(int to, int tag, std::span<const double> vals) {
        send(to, tag, std::as_bytes(vals));
    }

    std::vector<double> recv_doubles(int from, int tag) {
        auto bytes = recv(from, tag);
        if (bytes.size() % sizeof(double) != 0)
            throw protocol_error("message size is not a multiple of sizeof(double)");
        std::vector<double> out(bytes.size() / sizeof(double));
        std::memcpy(out.data(), bytes.data(), bytes.size());
        return out;
    }

    /// Sum-allreduce over all ranks, in place. One reduction event; partial
    /// sums are accumulated in rank order so the result is deterministic.
    void allreduce_sum(std::span<double> vals) {
        ++reductions_;
        if (size() == 1) return;
        if (rank() == 0) {
            std::vector<double> total(vals.begin(), vals.end());
            for (int r = 1; r < size(); ++r) {
                auto part = recv_doubles(r, tag_reduce);
                if (part.size() != total.size())
                    throw protocol_error("allreduce: partial sum length mismatch");
                for (std::size_t i = 0; i < total.size(); ++i) total[i] += part[i];
            }
            for (int r = 1; r < size(); ++r) send_doubles(r, tag_reduce, total);
            std::copy(total.begin(), total.end(), vals.begin());
        } else {
            send_doubles(0, tag_reduce, vals);
            auto total = recv_doubles(0, tag_reduce);
            if (total.size() != vals.size())
                throw protocol_error("allreduce: result length mismatch");
            std::copy(total.begin(), total.end(), vals.begin());
        }
    }

    double allreduce_sum(double v) {
        allreduce_sum(std::span<double>(&v, 1));
        return v;
    }

    void barrier() {
        if (size() == 1) return;
        const std::byte token{0};
        if (rank() == 0) {
            for (int r = 1; r < size(); ++r) recv(r, tag_barrier);
            for (int r = 1; r < size(); ++r) send(r, tag_barrier, {&token, 1});
        } else {
            send(0, tag_barrier, {&token, 1});
            recv(0, tag_barrier);
        }
    }

    void broadcast(int root, std::vector<std::byte>& data) {
        if (size() == 1) return;
        if (rank() == root) {
            for (int r = 0; r < size(); ++r)
                if (r != root) send(r, tag_broadcast, data);
        } else {
            data = recv(root, tag_broadcast);
        }
    }

    /// Root receives every rank's payload (own included), in rank order.
    std::vector<std::vector<std::byte>> gather(int root, std::span<const std::byte> mine) {
        std::vector<std::vector<std::byte>> all;
        if (rank() == root) {
            all.resize(size());
            for (int r = 0; r < size(); ++r) {
                if (r == root)
                    all[r].assign(mine.begin(), mine.end());
                else
                    all[r] = recv(r, tag_gather);
            }
        } else {
            send(root, tag_gather, mine);
        }
        return all;
    }

    /// gather to rank 0 + broadcast: every rank ends up with all payloads.
    std::vector<std::vector<std::byte>> allgather(std::span<const std::byte> mine);

    std::uint64_t reduction_count() const noexcept { return reductions_; }

private:
    std::uint64_t reductions_ = 0;
};

namespace detail {

inline void append_bytes(std::vector<std::byte>& buf, const void* p, std::size_t n) {
    const auto* b = static_cast<const std::byte*>(p);
    buf.insert(buf.end(), b, b + n);
}

template <typename T>
void append_pod(std::vector<std::byte>& buf, const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    append_bytes(buf, &v, sizeof v);
}

template <typename T>
void append_pod_vector(std::vector<std::byte>& buf, const std::vector<T>& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    append_pod(buf, static_cast<std::uint64_t>(v.size()));
    append_bytes(buf, v.data(), v.size() * sizeof(T));
}

struct ByteReader {
    std::span<const std::byte> data;
    std::size_t at = 0;

    void read_raw(void* p, std::size_t n) {
        if (at + n > data.size()) throw protocol_error("truncated message");
        std::memcpy(p, data.data() + at, n);
        at += n;
    }

    template <typename T>
    T read_pod() {
        T v;
        read_raw(&v, sizeof v);
        return v;
    }

    template <typename T>
    std::vector<T> read_pod_vector() {
        auto n = read_pod<std::uint64_t>();
        std::vector<T> v(n);
        read_raw(v.data(), n * sizeof(T));
        return v;
    }

    bool done() const { return at == data.size(); }
};

} // namespace detail

inline std::vector<std::vector<std::byte>> Transport::allgather(
    std::span<const std::byte> mine) {
    if (size() == 1) return {std::vector<std::byte>(mine.begin(), mine.end())};
    auto all = gather(0, mine);
    std::vector<std::byte> flat;
    if (rank() == 0)
        for (const auto& part : all) detail::append_pod_vector(flat, part);
    broadcast(0, flat);
    if (rank() != 0) {
        detail::ByteReader rd{flat};
        all.resize(size());
        for (int r = 0; r < size(); ++r) all[r] = rd.read_pod_vector<std::byte>();
    }
    return all;
}

// ---------------------------------------------------------------------------
// In-process realization: one thread per rank, one FIFO mailbox per
// (sender, receiver) pair. recv matches by tag so unrelated exchanges can
// interleave. A failing rank poisons the hub so blocked peers unwind
// instead of deadlocking.

class InProcessHub {
public:
    explicit InProcessHub(int size) : size_(size), boxes_(size * size) {}

    int size() const noexcept { return size_; }

    void put(int from, int to, int tag, std::span<const std::byte> payload) {
        Mailbox& box = boxes_[from * size_ + to];
        {
            std::lock_guard lock(box.m);
            box.q.push_back({tag, {payload.begin(), payload.end()}});
        }
        box.cv.notify_all();
    }

    std::vector<std::byte> take(int from, int to, int tag) {
        Mailbox& box = boxes_[from * size_ + to];
        std::unique_lock lock(box.m);
        for (;;) {
            if (aborted_.load(std::memory_order_acquire))
                throw protocol_error("rank group aborted while waiting for a message");
            for (auto it = box.q.begin(); it != box.q.end(); ++it) {
                if (it->tag == tag) {
                    auto payload = std::move(it->payload);
                    box.q.erase(it);
                    return payload;
                }
            }
            box.cv.wait_for(lock, std::chrono::milliseconds(50));
        }
    }

    void abort() {
        aborted_.store(true, std::memory_order_release);
        for (auto& box : boxes_) box.cv.notify_all();
    }

private:
    struct Message {
        int tag;
        std::vector<std::byte> payload;
    };
    struct Mailbox {
        std::mutex m;
        std::condition_variable cv;
        std::deque<Message> q;
    };

    int size_;
    std::vector<Mailbox> boxes_;
    std::atomic<bool> aborted_{false};
};

class InProcessTransport final : public Transport {
public:
    InProcessTransport(std::shared_ptr<InProcessHub> hub, int rank)
        : hub_(std::move(hub)), rank_(rank) {}

    int rank() const noexcept override { return rank_; }
    int size() const noexcept override { return hub_->size(); }

    void send(int to, int tag, std::span<const std::byte> payload) override {
        if (to < 0 || to >= size()) throw protocol_error("send: bad destination rank");
        hub_->put(rank_, to, tag, payload);
    }

    std::vector<std::byte> recv(int from, int tag) override {
        if (from < 0 || from >= size()) throw protocol_error("recv: bad source rank");
        return hub_->take(from, rank_, tag);
    }

private:
    std::shared_ptr<InProcessHub> hub_;
    int rank_;
};

/// Runs `body(transport)` on `n` concurrent ranks and joins them. The first
/// exception (by order of failure) is rethrown in the caller.
inline void run_ranks(int n, const std::function<void(Transport&)>& body) {
    if (n < 1) throw domain_error("run_ranks: need at least one rank");
    auto hub = std::make_shared<InProcessHub>(n);
    std::vector<std::thread> threads;
    std::mutex err_mutex;
    std::exception_ptr first_error;

    for (int r = 0; r < n; ++r) {
        threads.emplace_back([&, r] {
            InProcessTransport tp(hub, r);
            try {
                body(tp);
            } catch (...) {
                {
                    std::lock_guard lock(err_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
                hub->abort();
            }
        });
    }
    for (auto& t : threads) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

/// run_ranks, collecting one result per rank.
template <typename T>
std::vector<T> run_ranks_collect(int n, const std::function<T(Transport&)>& body) {
    std::vector<T> results(n);
    run_ranks(n, [&](Transport& tp) { results[tp.rank()] = body(tp); });
    return results;
}

} // namespace sparsewatt
