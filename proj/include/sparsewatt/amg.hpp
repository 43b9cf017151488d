#pragma once

// Aggregation-based algebraic multigrid preconditioner.
//
// Coarsening runs a greedy maximum-weight matching on the operator's
// adjacency graph with edge weights |a_ij|/sqrt(a_ii a_jj); each pass
// merges matched vertex pairs, so k passes bound aggregate sizes by 2^k
// (three passes -> size-8 aggregates). The prolongator is piecewise
// constant, coarse operators are Galerkin triple products, smoothing is
// l1-Jacobi, and the coarsest level is solved by a dense Cholesky.
//
// The hierarchy is built serially on rank 0 from the gathered matrix and
// broadcast; V-cycle application smooths the finest level with the
// distributed operator and runs the (replicated) coarse levels serially
// on every rank.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <vector>

#include "sparsewatt/cg.hpp"
#include "sparsewatt/csr.hpp"
#include "sparsewatt/dist_ops.hpp"
#include "sparsewatt/errors.hpp"

namespace sparsewatt {

struct AggregateMap {
    std::vector<std::uint32_t> fine_to_coarse;
    std::uint64_t n_coarse = 0;

    std::vector<std::uint64_t> sizes() const {
        std::vector<std::uint64_t> s(n_coarse, 0);
        for (auto c : fine_to_coarse) s[c]++;
        return s;
    }
};

namespace detail {

struct MatchEdge {
    double weight;
    std::uint64_t i, j;
};

// One matching pass: greedy over edges by descending weight, ties broken
// by smaller (i, j). Matched pairs merge; unmatched vertices stay single.
// Coarse ids are dense, assigned in ascending order of the smaller member.
inline AggregateMap greedy_matching_pass(const CsrMatrix& a) {
    const std::uint64_t n = a.n_rows;
    std::vector<double> diag(n, 0.0);
    for (global_index i = 0; i < n; ++i) {
        diag[i] = a.at(i, i);
        if (diag[i] <= 0.0)
            throw domain_error("aggregation requires a positive diagonal (row " +
                               std::to_string(i) + ")");
    }

    std::vector<MatchEdge> edges;
    for (global_index i = 0; i < n; ++i)
        for (std::uint64_t k = a.row_offsets[i]; k < a.row_offsets[i + 1]; ++k) {
            const global_index j = a.cols[k];
            if (j <= i || a.values[k] == 0.0) continue;
            edges.push_back({std::abs(a.values[k]) / std::sqrt(diag[i] * diag[j]), i, j});
        }
    std::sort(edges.begin(), edges.end(), [](const MatchEdge& x, const MatchEdge& y) {
        if (x.weight != y.weight) return x.weight > y.weight;
        if (x.i != y.i) return x.i < y.i;
        return x.j < y.j;
    });

    constexpr std::uint64_t unmatched = ~0ull;
    std::vector<std::uint64_t> partner(n, unmatched);
    for (const auto& e : edges) {
        if (partner[e.i] == unmatched && partner[e.j] == unmatched) {
            partner[e.i] = e.j;
            partner[e.j] = e.i;
        }
    }

    AggregateMap map;
    map.fine_to_coarse.assign(n, 0);
    std::vector<bool> assigned(n, false);
    std::uint32_t next_id = 0;
    for (std::uint64_t i = 0; i < n; ++i) {
        if (assigned[i]) continue;
        map.fine_to_coarse[i] = next_id;
        assigned[i] = true;
        if (partner[i] != unmatched) {
            map.fine_to_coarse[partner[i]] = next_id;
            assigned[partner[i]] = true;
        }
        ++next_id;
    }
    map.n_coarse = next_id;
    return map;
}

} // namespace detail

/// Piecewise-constant prolongator: one unit entry per fine row.
inline CsrMatrix build_prolongator(const AggregateMap& map) {
    const std::uint64_t n_fine = map.fine_to_coarse.size();
    for (auto c : map.fine_to_coarse)
        if (c >= map.n_coarse) throw domain_error("aggregate map: id out of range");
    CsrMatrix p;
    p.n_rows = n_fine;
    p.n_cols = map.n_coarse;
    p.row_offsets.resize(n_fine + 1);
    p.cols.resize(n_fine);
    p.values.assign(n_fine, 1.0);
    for (std::uint64_t i = 0; i <= n_fine; ++i) p.row_offsets[i] = i;
    for (std::uint64_t i = 0; i < n_fine; ++i) p.cols[i] = map.fine_to_coarse[i];
    return p;
}

/// A_coarse = P' A P as a sparse triple product.
inline CsrMatrix galerkin_product(const CsrMatrix& a, const CsrMatrix& p) {
    if (a.n_cols != p.n_rows || a.n_rows != p.n_rows)
        throw domain_error("galerkin_product: dimension mismatch");
    return csr_multiply(csr_transpose(p), csr_multiply(a, p));
}

/// Repeated pairwise matching: after each pass the matching runs on the
/// aggregated (Galerkin) graph, so sizes at most double per pass.
inline AggregateMap match_and_aggregate(const CsrMatrix& a, int passes = 3) {
    if (a.n_rows != a.n_cols) throw domain_error("match_and_aggregate: matrix not square");
    AggregateMap total;
    total.fine_to_coarse.resize(a.n_rows);
    for (std::uint64_t i = 0; i < a.n_rows; ++i)
        total.fine_to_coarse[i] = static_cast<std::uint32_t>(i);
    total.n_coarse = a.n_rows;

    CsrMatrix current = a;
    for (int pass = 0; pass < passes; ++pass) {
        AggregateMap step = detail::greedy_matching_pass(current);
        if (step.n_coarse == current.n_rows) break; // nothing merged; further passes are no-ops
        for (auto& c : total.fine_to_coarse) c = step.fine_to_coarse[c];
        total.n_coarse = step.n_coarse;
        if (pass + 1 < passes) current = galerkin_product(current, build_prolongator(step));
    }
    return total;
}

/// l1 smoother diagonal: d_i = a_ii + sum_{j != i} |a_ij|.
inline std::vector<double> l1_diagonal(const CsrMatrix& a) {
    std::vector<double> d(a.n_rows, 0.0);
    for (global_index i = 0; i < a.n_rows; ++i) {
        double v = 0.0;
        for (std::uint64_t k = a.row_offsets[i]; k < a.row_offsets[i + 1]; ++k)
            v += a.cols[k] == i ? a.values[k] : std::abs(a.values[k]);
        if (v <= 0.0)
            throw domain_error("l1 diagonal not positive at row " + std::to_string(i));
        d[i] = v;
    }
    return d;
}

/// x <- x + D_l1^{-1} (b - A x), `sweeps` times.
inline void l1_jacobi(const CsrMatrix& a, const std::vector<double>& d, std::vector<double>& x,
                      const std::vector<double>& b, int sweeps) {
    std::vector<double> q;
    for (int s = 0; s < sweeps; ++s) {
        spmv_serial(a, x, q);
        for (std::uint64_t i = 0; i < a.n_rows; ++i) x[i] += (b[i] - q[i]) / d[i];
    }
}

// ---------------------------------------------------------------------------

/// Dense Cholesky factorization for the coarsest level.
class DenseCholesky {
public:
    DenseCholesky() = default;

    explicit DenseCholesky(const CsrMatrix& a) : n_(a.n_rows), l_(csr_to_dense(a)) {
        if (a.n_rows != a.n_cols) throw domain_error("cholesky: matrix not square");
        for (std::size_t j = 0; j < n_; ++j) {
            for (std::size_t k = 0; k < j; ++k) {
                const double ljk = l_[j * n_ + k];
                for (std::size_t i = j; i < n_; ++i) l_[i * n_ + j] -= l_[i * n_ + k] * ljk;
            }
            const double pivot = l_[j * n_ + j];
            if (pivot <= 0.0)
                throw domain_error("cholesky: matrix not positive definite (pivot " +
                                   std::to_string(pivot) + " at " + std::to_string(j) + ")");
            const double root = std::sqrt(pivot);
            for (std::size_t i = j; i < n_; ++i) l_[i * n_ + j] /= root;
        }
    }

    std::size_t size() const { return n_; }

    std::vector<double> solve(const std::vector<double>& b) const {
        if (b.size() != n_) throw domain_error("cholesky solve: length mismatch");
        std::vector<double> y(b);
        for (std::size_t i = 0; i < n_; ++i) {
            for (std::size_t k = 0; k < i; ++k) y[i] -= l_[i * n_ + k] * y[k];
            y[i] /= l_[i * n_ + i];
        }
        for (std::size_t ii = n_; ii-- > 0;) {
            for (std::size_t k = ii + 1; k < n_; ++k) y[ii] -= l_[k * n_ + ii] * y[k];
            y[ii] /= l_[ii * n_ + ii];
        }
        return y;
    }

    // Exposed for serialization.
    const std::vector<double>& data() const { return l_; }
    static DenseCholesky from_raw(std::size_t n, std::vector<double> l) {
        DenseCholesky c;
        c.n_ = n;
        c.l_ = std::move(l);
        return c;
    }

private:
    std::size_t n_ = 0;
    std::vector<double> l_; // row-major, lower triangle holds the factor
};

struct AmgConfig {
    int aggregate_passes = 3;
    int max_levels = 16;
    std::uint64_t min_coarse_size = 64;
    int smoother_sweeps = 4;
    // false: smoother_sweeps pre AND post (the default reading of "4
    // l1-Jacobi iterations"); true: split the total, sweeps/2 each side.
    bool split_total_sweeps = false;

    int pre_sweeps() const { return split_total_sweeps ? smoother_sweeps / 2 : smoother_sweeps; }
    int post_sweeps() const { return pre_sweeps(); }

    void validate() const {
        if (aggregate_passes < 1) throw config_error("aggregate_passes must be >= 1");
        if (max_levels < 1) throw config_error("max_levels must be >= 1");
        if (min_coarse_size < 1) throw config_error("min_coarse_size must be >= 1");
        if (smoother_sweeps < 1) throw config_error("smoother_sweeps must be >= 1");
        if (split_total_sweeps && smoother_sweeps % 2 != 0)
            throw config_error("split_total_sweeps needs an even sweep count");
    }
};

struct AmgLevel {
    CsrMatrix a;
    CsrMatrix p;           // to the next level; empty on the coarsest
    CsrMatrix r;           // p transposed, kept for the downward leg
    std::vector<double> d; // l1 smoother diagonal
};

struct AmgHierarchy {
    std::vector<AmgLevel> levels; // levels[0] is the finest
    DenseCholesky coarsest;
    AmgConfig config;
    double setup_seconds = 0.0;
    bool stagnated = false;

    std::vector<std::uint64_t> level_sizes() const {
        std::vector<std::uint64_t> s;
        for (const auto& l : levels) s.push_back(l.a.n_rows);
        return s;
    }

    double operator_complexity() const {
        double total = 0.0;
        for (const auto& l : levels) total += static_cast<double>(l.a.nnz());
        return total / static_cast<double>(levels.front().a.nnz());
    }
};

inline AmgHierarchy build_hierarchy(const CsrMatrix& a, const AmgConfig& cfg = {}) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();

    AmgHierarchy h;
    h.config = cfg;
    CsrMatrix current = a;
    int stagnant = 0;
    while (current.n_rows > cfg.min_coarse_size &&
           static_cast<int>(h.levels.size()) + 1 < cfg.max_levels) {
        AggregateMap map = match_and_aggregate(current, cfg.aggregate_passes);
        if (map.n_coarse >= current.n_rows) {
            if (++stagnant >= 2) {
                h.stagnated = true;
                break;
            }
            continue;
        }
        stagnant = 0;
        AmgLevel level;
        level.p = build_prolongator(map);
        level.r = csr_transpose(level.p);
        level.d = l1_diagonal(current);
        CsrMatrix next = csr_multiply(level.r, csr_multiply(current, level.p));
        level.a = std::move(current);
        h.levels.push_back(std::move(level));
        current = std::move(next);
    }
    AmgLevel coarsest_level;
    coarsest_level.d = l1_diagonal(current);
    coarsest_level.a = std::move(current);
    h.levels.push_back(std::move(coarsest_level));
    h.coarsest = DenseCholesky(h.levels.back().a);

    h.setup_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return h;
}

namespace detail {

inline void vcycle_level(const AmgHierarchy& h, std::size_t l, const std::vector<double>& r,
                         std::vector<double>& z) {
    const AmgLevel& lvl = h.levels[l];
    if (l + 1 == h.levels.size()) {
        z = h.coarsest.solve(r);
        return;
    }
    z.assign(lvl.a.n_rows, 0.0);
    l1_jacobi(lvl.a, lvl.d, z, r, h.config.pre_sweeps());

    std::vector<double> az;
    spmv_serial(lvl.a, z, az);
    std::vector<double> resid(r.size());
    for (std::size_t i = 0; i < r.size(); ++i) resid[i] = r[i] - az[i];

    std::vector<double> rc;
    spmv_serial(lvl.r, resid, rc);
    std::vector<double> zc;
    vcycle_level(h, l + 1, rc, zc);

    std::vector<double> corr;
    spmv_serial(lvl.p, zc, corr);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += corr[i];

    l1_jacobi(lvl.a, lvl.d, z, r, h.config.post_sweeps());
}

} // namespace detail

/// One V-cycle on the full (serial) hierarchy: z = B r.
inline std::vector<double> vcycle(const AmgHierarchy& h, const std::vector<double>& r) {
    if (h.levels.empty()) throw contract_error("vcycle: empty hierarchy");
    if (r.size() != h.levels.front().a.n_rows)
        throw domain_error("vcycle: residual length mismatch");
    std::vector<double> z;
    detail::vcycle_level(h, 0, r, z);
    return z;
}

// ---------------------------------------------------------------------------
// Serialization (rank 0 builds, everyone else receives).

namespace detail {

inline void append_csr(std::vector<std::byte>& buf, const CsrMatrix& m) {
    append_pod(buf, m.n_rows);
    append_pod(buf, m.n_cols);
    append_pod_vector(buf, m.row_offsets);
    append_pod_vector(buf, m.cols);
    append_pod_vector(buf, m.values);
}

inline CsrMatrix read_csr(ByteReader& rd) {
    CsrMatrix m;
    m.n_rows = rd.read_pod<global_index>();
    m.n_cols = rd.read_pod<global_index>();
    m.row_offsets = rd.read_pod_vector<std::uint64_t>();
    m.cols = rd.read_pod_vector<global_index>();
    m.values = rd.read_pod_vector<double>();
    return m;
}

} // namespace detail

inline std::vector<std::byte> serialize_hierarchy(const AmgHierarchy& h) {
    std::vector<std::byte> buf;
    detail::append_pod(buf, h.config);
    detail::append_pod(buf, h.setup_seconds);
    detail::append_pod(buf, h.stagnated);
    detail::append_pod(buf, static_cast<std::uint64_t>(h.levels.size()));
    for (const auto& l : h.levels) {
        detail::append_csr(buf, l.a);
        detail::append_csr(buf, l.p);
        detail::append_csr(buf, l.r);
        detail::append_pod_vector(buf, l.d);
    }
    detail::append_pod(buf, static_cast<std::uint64_t>(h.coarsest.size()));
    detail::append_pod_vector(buf, h.coarsest.data());
    return buf;
}

inline AmgHierarchy deserialize_hierarchy(std::span<const std::byte> bytes) {
    detail::ByteReader rd{bytes};
    AmgHierarchy h;
    h.config = rd.read_pod<AmgConfig>();
    h.setup_seconds = rd.read_pod<double>();
    h.stagnated = rd.read_pod<bool>();
    const auto n_levels = rd.read_pod<std::uint64_t>();
    h.levels.resize(n_levels);
    for (auto& l : h.levels) {
        l.a = detail::read_csr(rd);
        l.p = detail::read_csr(rd);
        l.r = detail::read_csr(rd);
        l.d = rd.read_pod_vector<double>();
    }
    const auto cn = rd.read_pod<std::uint64_t>();
    h.coarsest = DenseCholesky::from_raw(cn, rd.read_pod_vector<double>());
    return h;
}

// ---------------------------------------------------------------------------

/// V-cycle as a distributed preconditioner. Setup gathers the matrix to
/// rank 0, builds the hierarchy there and broadcasts it. Application
/// smooths the finest level with the distributed operator; everything from
/// the first coarse level down is replicated and runs identically on all
/// ranks, so no further communication is needed below the finest level.
class AmgPrecond final : public Preconditioner {
public:
    AmgPrecond(const LocalCsrBlock& block, const CommPlan& plan, Transport& tp,
               const AmgConfig& cfg = {}, Clock* clock = nullptr)
        : block_(&block), plan_(&plan), tp_(&tp) {
        Clock& clk = clock ? *clock : default_clock();
        const double t0 = clk.now();
        CsrMatrix full = gather_matrix(block, tp);
        std::vector<std::byte> bytes;
        if (tp.rank() == 0) {
            AmgHierarchy h = build_hierarchy(full, cfg);
            bytes = serialize_hierarchy(h);
            h_ = std::move(h);
        }
        tp.broadcast(0, bytes);
        if (tp.rank() != 0) h_ = deserialize_hierarchy(bytes);

        d_fine_.assign(block.n_local_rows, 0.0);
        const auto& d_full = h_.levels.front().d;
        for (std::uint64_t i = 0; i < block.n_local_rows; ++i)
            d_fine_[i] = d_full[block.first_global_row + i];
        setup_seconds_ = clk.now() - t0;
    }

    const AmgHierarchy& hierarchy() const { return h_; }
    double setup_seconds() const override { return setup_seconds_; }

    void apply(const DistVector& r, DistVector& z) override {
        if (r.owned.size() != block_->n_local_rows || z.owned.size() != block_->n_local_rows)
            throw domain_error("amg apply: dimension mismatch");

        if (h_.levels.size() == 1) {
            // Single level: the preconditioner is the direct coarse solve.
            DistVector rc = r;
            auto full = gather_to_all(rc, *tp_);
            auto sol = h_.coarsest.solve(full);
            for (std::uint64_t i = 0; i < block_->n_local_rows; ++i)
                z.owned[i] = sol[block_->first_global_row + i];
            z.invalidate_halo();
            return;
        }

        fill(z, 0.0);
        smooth(z, r, h_.config.pre_sweeps());

        // Fine residual, gathered so the coarse correction is replicated.
        DistVector az = make_vector(*block_);
        halo_exchange(*plan_, *tp_, z);
        spmv(*block_, z, az);
        DistVector resid = make_vector(*block_);
        for (std::uint64_t i = 0; i < block_->n_local_rows; ++i)
            resid.owned[i] = r.owned[i] - az.owned[i];
        auto resid_full = gather_to_all(resid, *tp_);

        std::vector<double> rc;
        spmv_serial(h_.levels.front().r, resid_full, rc);
        std::vector<double> zc;
        detail::vcycle_level(h_, 1, rc, zc);
        std::vector<double> corr;
        spmv_serial(h_.levels.front().p, zc, corr);
        for (std::uint64_t i = 0; i < block_->n_local_rows; ++i)
            z.owned[i] += corr[block_->first_global_row + i];
        z.invalidate_halo();

        smooth(z, r, h_.config.post_sweeps());
    }

private:
    void smooth(DistVector& x, const DistVector& b, int sweeps) {
        DistVector q = make_vector(*block_);
        for (int s = 0; s < sweeps; ++s) {
            halo_exchange(*plan_, *tp_, x);
            spmv(*block_, x, q);
            for (std::uint64_t i = 0; i < block_->n_local_rows; ++i)
                x.owned[i] += (b.owned[i] - q.owned[i]) / d_fine_[i];
            x.invalidate_halo();
        }
    }

    const LocalCsrBlock* block_;
    const CommPlan* plan_;
    Transport* tp_;
    AmgHierarchy h_;
    std::vector<double> d_fine_;
    double setup_seconds_ = 0.0;
};

} // namespace sparsewatt
