#pragma once

// Conjugate Gradient solvers for SPD systems, instrumented for the
// benchmark harness. Two variants:
//
//   hs    — the classical Hestenes/Stiefel recurrence; two reduction
//           events per iteration (p'Ap, then the fused <r,z>/<r,r> pair).
//   fused — the Chronopoulos/Gear single-reduction form; the three inner
//           products each iteration needs travel in one fused reduction.
//
// Both run the preconditioned algorithm; the identity preconditioner is
// the unpreconditioned case and produces a bit-identical iterate sequence.
// Convergence is judged on the recursively updated residual norm relative
// to ||b||; an explicit residual is recomputed once after exit.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sparsewatt/clock.hpp"
#include "sparsewatt/dist_ops.hpp"
#include "sparsewatt/errors.hpp"

namespace sparsewatt {

enum class CgVariant { hs, fused, flexible };

inline std::string to_string(CgVariant v) {
    switch (v) {
        case CgVariant::hs: return "hs";
        case CgVariant::fused: return "fused";
        case CgVariant::flexible: return "flexible";
    }
    return "?";
}

inline CgVariant cg_variant_from_string(const std::string& s) {
    if (s == "hs") return CgVariant::hs;
    if (s == "fused") return CgVariant::fused;
    if (s == "flexible") return CgVariant::flexible;
    throw config_error("unknown CG variant '" + s + "'");
}

enum class SolveMode { converge, fixed_iterations };

inline std::string to_string(SolveMode m) {
    return m == SolveMode::converge ? "converge" : "fixed";
}

inline SolveMode solve_mode_from_string(const std::string& s) {
    if (s == "converge") return SolveMode::converge;
    if (s == "fixed" || s == "fixed_iterations") return SolveMode::fixed_iterations;
    throw config_error("unknown solve mode '" + s + "'");
}

struct SolveConfig {
    double rtol = 1e-6;
    std::uint64_t maxit = 1000;
    CgVariant variant = CgVariant::hs;
    SolveMode mode = SolveMode::converge;

    void validate() const {
        if (!(rtol > 0)) throw config_error("rtol must be positive");
        if (maxit < 1) throw config_error("maxit must be at least 1");
    }
};

struct SolveStats {
    std::uint64_t iterations = 0;
    std::vector<double> relres_history; // length iterations + 1
    double setup_time = 0.0;
    double solve_time = 0.0;
    std::vector<double> per_iteration_marks;
    double final_explicit_relres = 0.0;
    std::uint64_t loop_reductions = 0; // reduction events spent inside the iteration loop
    bool converged = false;
};

/// Distributed SPD operator: y = A x including the halo exchange.
struct DistOperator {
    const LocalCsrBlock* block = nullptr;
    const CommPlan* plan = nullptr;
    Transport* tp = nullptr;

    void apply(DistVector& x, DistVector& y) const {
        halo_exchange(*plan, *tp, x);
        spmv(*block, x, y);
    }

    DistVector vector(double fill = 0.0) const { return make_vector(*block, fill); }
};

class Preconditioner {
public:
    virtual ~Preconditioner() = default;
    /// z = M^{-1} r. Must represent a fixed SPD operator.
    virtual void apply(const DistVector& r, DistVector& z) = 0;
    virtual double setup_seconds() const { return 0.0; }
};

class IdentityPrecond final : public Preconditioner {
public:
    void apply(const DistVector& r, DistVector& z) override {
        if (r.owned.size() != z.owned.size())
            throw domain_error("preconditioner: dimension mismatch");
        z.owned = r.owned;
        z.invalidate_halo();
    }
};

/// Jacobi: z_i = r_i / a_ii.
class JacobiPrecond final : public Preconditioner {
public:
    explicit JacobiPrecond(const LocalCsrBlock& a) {
        inv_diag_.assign(a.n_local_rows, 0.0);
        for (std::uint64_t i = 0; i < a.n_local_rows; ++i) {
            double d = 0.0;
            for (std::uint64_t k = a.row_offsets[i]; k < a.row_offsets[i + 1]; ++k)
                if (a.col_map[a.col_local[k]] == a.first_global_row + i) d = a.values[k];
            if (d <= 0.0)
                throw domain_error("jacobi preconditioner: non-positive diagonal at row " +
                                   std::to_string(a.first_global_row + i));
            inv_diag_[i] = 1.0 / d;
        }
    }

    void apply(const DistVector& r, DistVector& z) override {
        if (r.owned.size() != inv_diag_.size() || z.owned.size() != inv_diag_.size())
            throw domain_error("preconditioner: dimension mismatch");
        for (std::size_t i = 0; i < inv_diag_.size(); ++i)
            z.owned[i] = r.owned[i] * inv_diag_[i];
        z.invalidate_halo();
    }

private:
    std::vector<double> inv_diag_;
};

/// Called after each iteration with the current iterate; used by tests and
/// the harness for per-iteration bookkeeping.
using IterationObserver =
    std::function<void(std::uint64_t iteration, const DistVector& x, double relres)>;

namespace detail {

constexpr double breakdown_eps = 1e-300;

inline void check_curvature(double pap) {
    if (pap <= 0.0 || std::abs(pap) < breakdown_eps)
        throw breakdown_error("CG breakdown: p'Ap = " + std::to_string(pap) +
                              " (operator not SPD or search direction degenerate)");
}

inline std::pair<DistVector, SolveStats> cg_hs_impl(const DistOperator& A,
                                                    const DistVector& b, const DistVector& x0,
                                                    const SolveConfig& cfg, Preconditioner& M,
                                                    Clock& clock,
                                                    const IterationObserver& observer) {
    const double t_start = clock.now();
    SolveStats stats;
    DistVector x = x0;
    DistVector r = A.vector(), z = A.vector(), p = A.vector(), q = A.vector();

    // r0 = b - A x0
    A.apply(x, r);
    for (std::size_t i = 0; i < r.owned.size(); ++i) r.owned[i] = b.owned[i] - r.owned[i];
    r.invalidate_halo();
    M.apply(r, z);

    double partial[3] = {0.0, 0.0, 0.0}; // ||b||^2, <r,z>, <r,r>
    for (std::size_t i = 0; i < b.owned.size(); ++i) {
        partial[0] += b.owned[i] * b.owned[i];
        partial[1] += r.owned[i] * z.owned[i];
        partial[2] += r.owned[i] * r.owned[i];
    }
    A.tp->allreduce_sum(std::span<double>(partial, 3));
    const double bnorm = std::sqrt(partial[0]);
    double rz = partial[1];
    double rr = partial[2];

    if (bnorm == 0.0) {
        fill(x, 0.0);
        stats.relres_history.push_back(0.0);
        stats.solve_time = clock.now() - t_start;
        stats.converged = true;
        return {std::move(x), std::move(stats)};
    }

    stats.relres_history.push_back(std::sqrt(rr) / bnorm);
    if (cfg.mode == SolveMode::converge && stats.relres_history.back() <= cfg.rtol) {
        stats.converged = true;
        stats.final_explicit_relres = stats.relres_history.back();
        stats.solve_time = clock.now() - t_start;
        return {std::move(x), std::move(stats)};
    }

    copy(z, p);
    const std::uint64_t reductions_before_loop = A.tp->reduction_count();

    for (std::uint64_t k = 0; k < cfg.maxit; ++k) {
        if (rr == 0.0) {
            // Residual is exactly zero; remaining fixed-mode iterations are no-ops.
            stats.iterations = k + 1;
            stats.relres_history.push_back(0.0);
            stats.per_iteration_marks.push_back(clock.now());
            if (observer) observer(stats.iterations, x, 0.0);
            if (cfg.mode == SolveMode::converge) {
                stats.converged = true;
                break;
            }
            continue;
        }
        A.apply(p, q);
        double pq = 0.0;
        for (std::size_t i = 0; i < p.owned.size(); ++i) pq += p.owned[i] * q.owned[i];
        const double pap = A.tp->allreduce_sum(pq); // reduction 1
        check_curvature(pap);

        const double alpha = rz / pap;
        axpy(alpha, p, x);
        axpy(-alpha, q, r);

        M.apply(r, z);
        double pair[2] = {0.0, 0.0}; // <r,z>, <r,r>
        for (std::size_t i = 0; i < r.owned.size(); ++i) {
            pair[0] += r.owned[i] * z.owned[i];
            pair[1] += r.owned[i] * r.owned[i];
        }
        A.tp->allreduce_sum(std::span<double>(pair, 2)); // reduction 2 (fused)
        const double rz_next = pair[0];
        rr = pair[1];

        stats.iterations = k + 1;
        const double relres = std::sqrt(rr) / bnorm;
        stats.relres_history.push_back(relres);
        stats.per_iteration_marks.push_back(clock.now());
        if (observer) observer(stats.iterations, x, relres);
        if (cfg.mode == SolveMode::converge && relres <= cfg.rtol) {
            stats.converged = true;
            break;
        }
        if (rr == 0.0) continue; // fixed mode: the top-of-loop guard takes over

        const double beta = rz_next / rz;
        rz = rz_next;
        for (std::size_t i = 0; i < p.owned.size(); ++i)
            p.owned[i] = z.owned[i] + beta * p.owned[i];
        p.invalidate_halo();
    }

    stats.loop_reductions = A.tp->reduction_count() - reductions_before_loop;
    if (cfg.mode == SolveMode::fixed_iterations)
        stats.converged = stats.relres_history.back() <= cfg.rtol;

    // Explicit residual check after exit.
    DistVector ax = A.vector();
    A.apply(x, ax);
    double expl = 0.0;
    for (std::size_t i = 0; i < ax.owned.size(); ++i) {
        const double d = b.owned[i] - ax.owned[i];
        expl += d * d;
    }
    stats.final_explicit_relres = std::sqrt(A.tp->allreduce_sum(expl)) / bnorm;
    stats.solve_time = clock.now() - t_start;
    return {std::move(x), std::move(stats)};
}

inline std::pair<DistVector, SolveStats> cg_fused_impl(const DistOperator& A,
                                                       const DistVector& b,
                                                       const DistVector& x0,
                                                       const SolveConfig& cfg,
                                                       Preconditioner& M, Clock& clock,
                                                       const IterationObserver& observer) {
    const double t_start = clock.now();
    SolveStats stats;
    DistVector x = x0;
    DistVector r = A.vector(), u = A.vector(), w = A.vector();
    DistVector p = A.vector(), s = A.vector();

    A.apply(x, r);
    for (std::size_t i = 0; i < r.owned.size(); ++i) r.owned[i] = b.owned[i] - r.owned[i];
    r.invalidate_halo();

    M.apply(r, u);
    A.apply(u, w);

    double init[4] = {0.0, 0.0, 0.0, 0.0}; // ||b||^2, <r,u>, <w,u>, <r,r>
    for (std::size_t i = 0; i < b.owned.size(); ++i) {
        init[0] += b.owned[i] * b.owned[i];
        init[1] += r.owned[i] * u.owned[i];
        init[2] += w.owned[i] * u.owned[i];
        init[3] += r.owned[i] * r.owned[i];
    }
    A.tp->allreduce_sum(std::span<double>(init, 4));
    const double bnorm = std::sqrt(init[0]);
    double gamma = init[1];
    double delta = init[2];
    double rr = init[3];

    if (bnorm == 0.0) {
        fill(x, 0.0);
        stats.relres_history.push_back(0.0);
        stats.solve_time = clock.now() - t_start;
        stats.converged = true;
        return {std::move(x), std::move(stats)};
    }

    stats.relres_history.push_back(std::sqrt(rr) / bnorm);
    if (cfg.mode == SolveMode::converge && stats.relres_history.back() <= cfg.rtol) {
        stats.converged = true;
        stats.final_explicit_relres = stats.relres_history.back();
        stats.solve_time = clock.now() - t_start;
        return {std::move(x), std::move(stats)};
    }

    double alpha = 0.0;
    if (rr != 0.0) {
        check_curvature(delta);
        alpha = gamma / delta;
    }
    copy(u, p);
    copy(w, s);

    const std::uint64_t reductions_before_loop = A.tp->reduction_count();

    for (std::uint64_t k = 0; k < cfg.maxit; ++k) {
        if (rr == 0.0) {
            stats.iterations = k + 1;
            stats.relres_history.push_back(0.0);
            stats.per_iteration_marks.push_back(clock.now());
            if (observer) observer(stats.iterations, x, 0.0);
            if (cfg.mode == SolveMode::converge) {
                stats.converged = true;
                break;
            }
            continue;
        }
        axpy(alpha, p, x);
        axpy(-alpha, s, r);

        M.apply(r, u);
        A.apply(u, w);

        double fused[3] = {0.0, 0.0, 0.0}; // <r,u>, <w,u>, <r,r>
        for (std::size_t i = 0; i < r.owned.size(); ++i) {
            fused[0] += r.owned[i] * u.owned[i];
            fused[1] += w.owned[i] * u.owned[i];
            fused[2] += r.owned[i] * r.owned[i];
        }
        A.tp->allreduce_sum(std::span<double>(fused, 3)); // the one reduction per iteration
        const double gamma_next = fused[0];
        const double delta_next = fused[1];
        rr = fused[2];

        stats.iterations = k + 1;
        const double relres = std::sqrt(rr) / bnorm;
        stats.relres_history.push_back(relres);
        stats.per_iteration_marks.push_back(clock.now());
        if (observer) observer(stats.iterations, x, relres);
        if (cfg.mode == SolveMode::converge && relres <= cfg.rtol) {
            stats.converged = true;
            break;
        }
        if (rr == 0.0) continue; // recurrence coefficients degenerate; top guard takes over

        const double beta = gamma_next / gamma;
        const double denom = delta_next - beta * gamma_next / alpha; // = p'Ap of the new p
        check_curvature(denom);
        alpha = gamma_next / denom;
        gamma = gamma_next;

        for (std::size_t i = 0; i < p.owned.size(); ++i) {
            p.owned[i] = u.owned[i] + beta * p.owned[i];
            s.owned[i] = w.owned[i] + beta * s.owned[i];
        }
        p.invalidate_halo();
        s.invalidate_halo();
    }

    stats.loop_reductions = A.tp->reduction_count() - reductions_before_loop;
    if (cfg.mode == SolveMode::fixed_iterations)
        stats.converged = stats.relres_history.back() <= cfg.rtol;

    DistVector ax = A.vector();
    A.apply(x, ax);
    double expl = 0.0;
    for (std::size_t i = 0; i < ax.owned.size(); ++i) {
        const double d = b.owned[i] - ax.owned[i];
        expl += d * d;
    }
    stats.final_explicit_relres = std::sqrt(A.tp->allreduce_sum(expl)) / bnorm;
    stats.solve_time = clock.now() - t_start;
    return {std::move(x), std::move(stats)};
}

} // namespace detail

inline std::pair<DistVector, SolveStats> cg_solve(const DistOperator& A, const DistVector& b,
                                                  const DistVector& x0, const SolveConfig& cfg,
                                                  Preconditioner* M = nullptr,
                                                  Clock* clock = nullptr,
                                                  const IterationObserver& observer = {}) {
    cfg.validate();
    IdentityPrecond identity;
    Preconditioner& precond = M ? *M : static_cast<Preconditioner&>(identity);
    Clock& clk = clock ? *clock : default_clock();
    switch (cfg.variant) {
        case CgVariant::hs:
            return detail::cg_hs_impl(A, b, x0, cfg, precond, clk, observer);
        case CgVariant::fused:
            return detail::cg_fused_impl(A, b, x0, cfg, precond, clk, observer);
        case CgVariant::flexible:
            throw capability_error(
                "the flexible CG variant is named but not provided by this library");
    }
    throw config_error("unreachable CG variant");
}

} // namespace sparsewatt
