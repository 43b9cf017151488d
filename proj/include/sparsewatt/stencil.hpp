#pragma once

// Benchmark matrix generator: 3D Poisson with homogeneous Dirichlet
// boundaries on a uniform mesh, 7-point (diagonal 6, axis neighbors -1) or
// 27-point (diagonal 26, box neighbors -1, the HPCG operator). The mesh is
// mapped onto a 3D task grid; global rows are numbered subdomain-major so
// every task owns one contiguous row block.

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sparsewatt/dist_matrix.hpp"
#include "sparsewatt/errors.hpp"
#include "sparsewatt/partition.hpp"

namespace sparsewatt {

enum class Stencil { seven_point, twenty_seven_point };

inline std::string to_string(Stencil s) {
    return s == Stencil::seven_point ? "7pt" : "27pt";
}

inline Stencil stencil_from_string(const std::string& s) {
    if (s == "7pt") return Stencil::seven_point;
    if (s == "27pt") return Stencil::twenty_seven_point;
    throw config_error("unknown stencil '" + s + "' (expected 7pt or 27pt)");
}

struct MeshSpec {
    std::uint64_t nx = 1, ny = 1, nz = 1;
    Stencil stencil = Stencil::seven_point;

    std::uint64_t n_global() const { return nx * ny * nz; }

    friend bool operator==(const MeshSpec&, const MeshSpec&) = default;
};

struct TaskGrid {
    int px = 1, py = 1, pz = 1;

    int n_tasks() const { return px * py * pz; }

    friend bool operator==(const TaskGrid&, const TaskGrid&) = default;
};

namespace detail {

// Split n cells into p parts, remainder on low-index parts.
inline std::uint64_t split_start(std::uint64_t n, int p, int i) {
    const std::uint64_t base = n / p, rem = n % p;
    const std::uint64_t ui = static_cast<std::uint64_t>(i);
    return ui * base + std::min<std::uint64_t>(ui, rem);
}

inline std::uint64_t split_len(std::uint64_t n, int p, int i) {
    const std::uint64_t base = n / p, rem = n % p;
    return base + (static_cast<std::uint64_t>(i) < rem ? 1 : 0);
}

inline int split_owner(std::uint64_t n, int p, std::uint64_t g) {
    const std::uint64_t base = n / p, rem = n % p;
    const std::uint64_t wide = rem * (base + 1);
    if (g < wide) return static_cast<int>(g / (base + 1));
    return static_cast<int>(rem + (g - wide) / base);
}

} // namespace detail

inline void validate_grid(const MeshSpec& mesh, const TaskGrid& grid) {
    if (mesh.nx < 1 || mesh.ny < 1 || mesh.nz < 1)
        throw domain_error("mesh dimensions must be at least 1");
    if (grid.px < 1 || grid.py < 1 || grid.pz < 1)
        throw domain_error("task grid dimensions must be at least 1");
    if (static_cast<std::uint64_t>(grid.px) > mesh.nx ||
        static_cast<std::uint64_t>(grid.py) > mesh.ny ||
        static_cast<std::uint64_t>(grid.pz) > mesh.nz)
        throw domain_error("task grid " + std::to_string(grid.px) + "x" +
                           std::to_string(grid.py) + "x" + std::to_string(grid.pz) +
                           " does not fit mesh " + std::to_string(mesh.nx) + "x" +
                           std::to_string(mesh.ny) + "x" + std::to_string(mesh.nz));
}

/// Task coordinates use x-fastest linearization, matching node ordering.
inline int task_index(const TaskGrid& g, int tx, int ty, int tz) {
    return tx + g.px * (ty + g.py * tz);
}

inline std::uint64_t subdomain_volume(const MeshSpec& m, const TaskGrid& g, int task) {
    const int tx = task % g.px, ty = (task / g.px) % g.py, tz = task / (g.px * g.py);
    return detail::split_len(m.nx, g.px, tx) * detail::split_len(m.ny, g.py, ty) *
           detail::split_len(m.nz, g.pz, tz);
}

/// Contiguous row blocks induced by the subdomain-major numbering.
inline RowPartition stencil_partition(const MeshSpec& m, const TaskGrid& g) {
    validate_grid(m, g);
    std::vector<std::uint64_t> sizes(g.n_tasks());
    for (int t = 0; t < g.n_tasks(); ++t) sizes[t] = subdomain_volume(m, g, t);
    return RowPartition::from_sizes(sizes);
}

/// Global row of mesh node (gx, gy, gz) under subdomain-major numbering:
/// first all rows of task 0 (x-fastest within the subdomain), then task 1, ...
inline global_index node_row(const MeshSpec& m, const TaskGrid& g, const RowPartition& part,
                             std::uint64_t gx, std::uint64_t gy, std::uint64_t gz) {
    const int tx = detail::split_owner(m.nx, g.px, gx);
    const int ty = detail::split_owner(m.ny, g.py, gy);
    const int tz = detail::split_owner(m.nz, g.pz, gz);
    const int task = task_index(g, tx, ty, tz);
    const std::uint64_t lx = gx - detail::split_start(m.nx, g.px, tx);
    const std::uint64_t ly = gy - detail::split_start(m.ny, g.py, ty);
    const std::uint64_t lz = gz - detail::split_start(m.nz, g.pz, tz);
    const std::uint64_t sx = detail::split_len(m.nx, g.px, tx);
    const std::uint64_t sy = detail::split_len(m.ny, g.py, ty);
    return part.first_row(task) + lx + sx * (ly + sy * lz);
}

/// Assembles one task's row block of the Poisson operator.
inline LocalCsrBlock assemble_poisson(const MeshSpec& m, const TaskGrid& g, int rank) {
    validate_grid(m, g);
    if (rank < 0 || rank >= g.n_tasks())
        throw domain_error("assemble_poisson: rank outside task grid");
    const RowPartition part = stencil_partition(m, g);

    const int tx = rank % g.px, ty = (rank / g.px) % g.py, tz = rank / (g.px * g.py);
    const std::uint64_t x0 = detail::split_start(m.nx, g.px, tx),
                        sx = detail::split_len(m.nx, g.px, tx);
    const std::uint64_t y0 = detail::split_start(m.ny, g.py, ty),
                        sy = detail::split_len(m.ny, g.py, ty);
    const std::uint64_t z0 = detail::split_start(m.nz, g.pz, tz),
                        sz = detail::split_len(m.nz, g.pz, tz);

    const bool box = m.stencil == Stencil::twenty_seven_point;
    const double diag = box ? 26.0 : 6.0;

    std::vector<Triplet> entries;
    entries.reserve(sx * sy * sz * (box ? 27 : 7));
    for (std::uint64_t lz = 0; lz < sz; ++lz)
        for (std::uint64_t ly = 0; ly < sy; ++ly)
            for (std::uint64_t lx = 0; lx < sx; ++lx) {
                const std::uint64_t gx = x0 + lx, gy = y0 + ly, gz = z0 + lz;
                const global_index row = node_row(m, g, part, gx, gy, gz);
                entries.push_back({row, row, diag});
                for (int dz = -1; dz <= 1; ++dz)
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dx = -1; dx <= 1; ++dx) {
                            if (dx == 0 && dy == 0 && dz == 0) continue;
                            if (!box && std::abs(dx) + std::abs(dy) + std::abs(dz) != 1)
                                continue;
                            const std::int64_t nx_ = static_cast<std::int64_t>(gx) + dx;
                            const std::int64_t ny_ = static_cast<std::int64_t>(gy) + dy;
                            const std::int64_t nz_ = static_cast<std::int64_t>(gz) + dz;
                            if (nx_ < 0 || ny_ < 0 || nz_ < 0 ||
                                nx_ >= static_cast<std::int64_t>(m.nx) ||
                                ny_ >= static_cast<std::int64_t>(m.ny) ||
                                nz_ >= static_cast<std::int64_t>(m.nz))
                                continue; // Dirichlet: outside nodes are eliminated
                            const global_index col = node_row(
                                m, g, part, static_cast<std::uint64_t>(nx_),
                                static_cast<std::uint64_t>(ny_), static_cast<std::uint64_t>(nz_));
                            entries.push_back({row, col, -1.0});
                        }
            }
    return build_local_block(part.first_row(rank), part.n_rows(rank), m.n_global(),
                             std::move(entries));
}

/// Serial assembly (single task) as a plain CSR matrix.
inline CsrMatrix assemble_poisson_serial(const MeshSpec& m) {
    auto block = assemble_poisson(m, TaskGrid{1, 1, 1}, 0);
    return csr_from_triplets(m.n_global(), m.n_global(), block_to_triplets(block));
}

// ---------------------------------------------------------------------------
// Experiment sizing

enum class ScalingMode { weak, strong };

inline std::string to_string(ScalingMode m) {
    return m == ScalingMode::weak ? "weak" : "strong";
}

inline ScalingMode scaling_mode_from_string(const std::string& s) {
    if (s == "weak") return ScalingMode::weak;
    if (s == "strong") return ScalingMode::strong;
    throw config_error("unknown scaling mode '" + s + "' (expected weak or strong)");
}

struct SizedExperiment {
    MeshSpec mesh;
    TaskGrid grid;
};

namespace detail {

struct Box {
    std::uint64_t a = 0, b = 0, c = 0;
    std::uint64_t volume() const { return a * b * c; }
    std::uint64_t surface() const { return 2 * (a * b + b * c + c * a); }
};

// Near-cube factor triple whose product is closest to `target` (ties: most
// cubic, then lexicographic). Searches around the cube root.
inline Box near_cube_dims(std::uint64_t target) {
    const auto root = static_cast<std::int64_t>(std::llround(std::cbrt(double(target))));
    Box best{};
    std::uint64_t best_gap = ~0ull;
    std::uint64_t best_surface = ~0ull;
    for (std::int64_t da = -2; da <= 2; ++da)
        for (std::int64_t db = -2; db <= 2; ++db)
            for (std::int64_t dc = -2; dc <= 2; ++dc) {
                const std::int64_t a = root + da, b = root + db, c = root + dc;
                if (a < 1 || b < 1 || c < 1) continue;
                Box box{std::uint64_t(a), std::uint64_t(b), std::uint64_t(c)};
                const std::uint64_t vol = box.volume();
                const std::uint64_t gap = vol > target ? vol - target : target - vol;
                if (gap < best_gap || (gap == best_gap && box.surface() < best_surface)) {
                    best = box;
                    best_gap = gap;
                    best_surface = box.surface();
                }
            }
    return best;
}

// All integer factorizations of n into ordered triples.
inline std::vector<std::array<int, 3>> factor_triples(int n) {
    std::vector<std::array<int, 3>> out;
    for (int a = 1; a <= n; ++a) {
        if (n % a != 0) continue;
        const int rest = n / a;
        for (int b = 1; b <= rest; ++b) {
            if (rest % b != 0) continue;
            out.push_back({a, b, rest / b});
        }
    }
    return out;
}

// Exact factorization of n into a near-cube box (divisor triples only).
inline Box exact_box(std::uint64_t n) {
    Box best{1, 1, n};
    std::uint64_t best_surface = best.surface();
    for (std::uint64_t a = 1; a * a * a <= n; ++a) {
        if (n % a != 0) continue;
        const std::uint64_t rest = n / a;
        for (std::uint64_t b = a; b * b <= rest; ++b) {
            if (rest % b != 0) continue;
            Box box{a, b, rest / b};
            if (box.surface() < best_surface) {
                best = box;
                best_surface = box.surface();
            }
        }
    }
    return best;
}

} // namespace detail

/// Task grid for a given mesh: the factorization of `ranks` minimizing the
/// largest subdomain's surface area (ties: lexicographic).
inline TaskGrid choose_task_grid(const MeshSpec& mesh, int ranks) {
    bool found = false;
    TaskGrid best;
    std::uint64_t best_surface = ~0ull;
    for (const auto& [px, py, pz] : detail::factor_triples(ranks)) {
        if (std::uint64_t(px) > mesh.nx || std::uint64_t(py) > mesh.ny ||
            std::uint64_t(pz) > mesh.nz)
            continue;
        detail::Box sub{(mesh.nx + px - 1) / px, (mesh.ny + py - 1) / py,
                        (mesh.nz + pz - 1) / pz};
        if (!found || sub.surface() < best_surface) {
            found = true;
            best_surface = sub.surface();
            best = {px, py, pz};
        }
    }
    if (!found)
        throw sizing_error(std::to_string(ranks) +
                           " ranks cannot be arranged into a task grid for this mesh");
    return best;
}

/// Chooses mesh and task grid for a scaling experiment.
///
/// weak:   per-rank workload stays a near-cube of base_dofs_per_rank (within
///         5%), the mesh grows with the rank count.
/// strong: the global mesh holds exactly base_dofs_per_rank DOFs and is
///         carved into `ranks` subdomains.
///
/// Among all grid factorizations the one minimizing the largest subdomain's
/// surface area (halo volume proxy) wins; ties fall to the more compact
/// global mesh, then to lexicographic order.
inline SizedExperiment size_experiment(ScalingMode mode, std::uint64_t base_dofs_per_rank,
                                       int ranks, Stencil stencil) {
    if (ranks < 1) throw sizing_error("rank count must be at least 1");
    if (base_dofs_per_rank < 1) throw sizing_error("base DOFs must be at least 1");

    bool found = false;
    MeshSpec best_mesh;
    TaskGrid best_grid;
    std::array<std::uint64_t, 2> best_key{~0ull, ~0ull};

    if (mode == ScalingMode::weak) {
        const detail::Box local = detail::near_cube_dims(base_dofs_per_rank);
        const std::uint64_t gap = local.volume() > base_dofs_per_rank
                                      ? local.volume() - base_dofs_per_rank
                                      : base_dofs_per_rank - local.volume();
        if (gap * 20 > base_dofs_per_rank)
            throw sizing_error("base DOFs " + std::to_string(base_dofs_per_rank) +
                               " is not expressible as a near-cube mesh within 5%");
        for (const auto& [px, py, pz] : detail::factor_triples(ranks)) {
            MeshSpec mesh{local.a * px, local.b * py, local.c * pz, stencil};
            detail::Box sub{local.a, local.b, local.c};
            detail::Box global{mesh.nx, mesh.ny, mesh.nz};
            std::array<std::uint64_t, 2> key{sub.surface(), global.surface()};
            if (!found || key < best_key) {
                found = true;
                best_key = key;
                best_mesh = mesh;
                best_grid = {px, py, pz};
            }
        }
    } else {
        const detail::Box global = detail::exact_box(base_dofs_per_rank);
        best_mesh = MeshSpec{global.a, global.b, global.c, stencil};
        best_grid = choose_task_grid(best_mesh, ranks);
    }
    return {best_mesh, best_grid};
}

} // namespace sparsewatt
