#pragma once

// Distributed vector primitives: halo exchange, SpMV, and the BLAS-1 ops
// used by the solvers. dot and norm2 cost exactly one reduction event each;
// axpy is reduction-free.

#include <cmath>
#include <span>
#include <vector>

#include "sparsewatt/dist_matrix.hpp"
#include "sparsewatt/transport.hpp"

namespace sparsewatt {

constexpr int tag_halo = 100;

/// Owned segment plus halo of remote values. Any write to `owned` must go
/// through a helper (or be followed by invalidate_halo()); spmv refuses to
/// run on a stale halo so a forgotten exchange fails loudly instead of
/// producing silently wrong numbers.
struct DistVector {
    std::vector<double> owned;
    std::vector<double> halo;
    bool halo_fresh = false;

    void invalidate_halo() { halo_fresh = false; }

    std::size_t local_size() const { return owned.size(); }
};

inline DistVector make_vector(const LocalCsrBlock& a, double fill = 0.0) {
    DistVector x;
    x.owned.assign(a.n_local_rows, fill);
    x.halo.assign(a.n_halo, 0.0);
    x.halo_fresh = false;
    return x;
}

inline void fill(DistVector& x, double v) {
    std::fill(x.owned.begin(), x.owned.end(), v);
    x.invalidate_halo();
}

inline void copy(const DistVector& src, DistVector& dst) {
    dst.owned = src.owned;
    dst.halo.assign(dst.halo.size(), 0.0);
    dst.invalidate_halo();
}

/// Fills x's halo slots with the owning ranks' current values. Owned data
/// is not modified. With an empty plan this is a no-op apart from marking
/// the (empty) halo fresh.
inline void halo_exchange(const CommPlan& plan, Transport& tp, DistVector& x) {
    if (plan.halo_size != x.halo.size())
        throw protocol_error("halo_exchange: plan built for a different layout");
    for (const auto& nb : plan.neighbors) {
        std::vector<double> packed(nb.send_rows.size());
        for (std::size_t i = 0; i < nb.send_rows.size(); ++i)
            packed[i] = x.owned[nb.send_rows[i]];
        tp.send_doubles(nb.peer, tag_halo, packed);
    }
    for (const auto& nb : plan.neighbors) {
        auto incoming = tp.recv_doubles(nb.peer, tag_halo);
        if (incoming.size() != nb.recv_slots.size())
            throw protocol_error("halo_exchange: message size mismatch from rank " +
                                 std::to_string(nb.peer));
        for (std::size_t i = 0; i < incoming.size(); ++i)
            x.halo[nb.recv_slots[i]] = incoming[i];
    }
    x.halo_fresh = true;
}

namespace detail {

inline double x_at(const LocalCsrBlock& a, const DistVector& x, local_index lc) {
    const std::uint32_t slot = a.col_slot[lc];
    return slot < a.n_local_rows ? x.owned[slot] : x.halo[slot - a.n_local_rows];
}

inline void spmv_row(const LocalCsrBlock& a, const DistVector& x, std::uint64_t i,
                     DistVector& y) {
    double s = 0.0;
    for (std::uint64_t k = a.row_offsets[i]; k < a.row_offsets[i + 1]; ++k)
        s += a.values[k] * x_at(a, x, a.col_local[k]);
    y.owned[i] = s;
}

} // namespace detail

/// y = A x on the owned rows. Requires a fresh halo on x.
inline void spmv(const LocalCsrBlock& a, const DistVector& x, DistVector& y) {
    if (!x.halo_fresh)
        throw contract_error("spmv: halo is stale; run halo_exchange first");
    if (x.owned.size() != a.n_local_rows || y.owned.size() != a.n_local_rows)
        throw domain_error("spmv: vector sized for a different block");
    for (std::uint64_t i = 0; i < a.n_local_rows; ++i) detail::spmv_row(a, x, i, y);
    y.invalidate_halo();
}

/// Communication-overlapped variant: sends go out, interior rows (no halo
/// columns) are computed, then receives complete and boundary rows follow.
/// Produces bit-identical results to halo_exchange + spmv, since per-row
/// accumulation order is unchanged. Off by default in the solvers.
inline void spmv_overlap(const LocalCsrBlock& a, const CommPlan& plan, Transport& tp,
                         DistVector& x, DistVector& y) {
    if (plan.halo_size != x.halo.size())
        throw protocol_error("spmv_overlap: plan built for a different layout");
    if (x.owned.size() != a.n_local_rows || y.owned.size() != a.n_local_rows)
        throw domain_error("spmv_overlap: vector sized for a different block");

    for (const auto& nb : plan.neighbors) {
        std::vector<double> packed(nb.send_rows.size());
        for (std::size_t i = 0; i < nb.send_rows.size(); ++i)
            packed[i] = x.owned[nb.send_rows[i]];
        tp.send_doubles(nb.peer, tag_halo, packed);
    }

    std::size_t next_boundary = 0;
    for (std::uint64_t i = 0; i < a.n_local_rows; ++i) {
        if (next_boundary < a.boundary_rows.size() && a.boundary_rows[next_boundary] == i) {
            ++next_boundary;
            continue;
        }
        detail::spmv_row(a, x, i, y);
    }

    for (const auto& nb : plan.neighbors) {
        auto incoming = tp.recv_doubles(nb.peer, tag_halo);
        if (incoming.size() != nb.recv_slots.size())
            throw protocol_error("spmv_overlap: message size mismatch from rank " +
                                 std::to_string(nb.peer));
        for (std::size_t i = 0; i < incoming.size(); ++i)
            x.halo[nb.recv_slots[i]] = incoming[i];
    }
    x.halo_fresh = true;

    for (auto i : a.boundary_rows) detail::spmv_row(a, x, i, y);
    y.invalidate_halo();
}

/// Global dot product: per-rank partial sums, one reduction.
inline double dot(const DistVector& x, const DistVector& y, Transport& tp) {
    if (x.owned.size() != y.owned.size())
        throw domain_error("dot: length mismatch");
    double partial = 0.0;
    for (std::size_t i = 0; i < x.owned.size(); ++i) partial += x.owned[i] * y.owned[i];
    return tp.allreduce_sum(partial);
}

/// Euclidean norm, one reduction.
inline double norm2(const DistVector& x, Transport& tp) {
    double partial = 0.0;
    for (double v : x.owned) partial += v * v;
    return std::sqrt(tp.allreduce_sum(partial));
}

/// y += alpha x, purely local.
inline void axpy(double alpha, const DistVector& x, DistVector& y) {
    if (x.owned.size() != y.owned.size())
        throw domain_error("axpy: length mismatch");
    for (std::size_t i = 0; i < x.owned.size(); ++i) y.owned[i] += alpha * x.owned[i];
    y.invalidate_halo();
}

/// Full global vector, identical on every rank (gather to 0, broadcast).
inline std::vector<double> gather_to_all(const DistVector& x, Transport& tp) {
    auto parts = tp.gather(0, std::as_bytes(std::span<const double>(x.owned)));
    std::vector<std::byte> flat;
    if (tp.rank() == 0) {
        for (const auto& p : parts) flat.insert(flat.end(), p.begin(), p.end());
    }
    tp.broadcast(0, flat);
    std::vector<double> full(flat.size() / sizeof(double));
    std::memcpy(full.data(), flat.data(), flat.size());
    return full;
}

} // namespace sparsewatt
