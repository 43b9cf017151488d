#pragma once

// Shared test oracles. Everything here is deliberately independent of the
// library's implementation paths: Poisson operators come from an O(n^2)
// coordinate pair scan, dense linear algebra from Eigen, reference
// reductions from plain serial loops.

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <vector>

#include "sparsewatt/csr.hpp"
#include "sparsewatt/stencil.hpp"

namespace testsup {

using sparsewatt::CsrMatrix;
using sparsewatt::MeshSpec;
using sparsewatt::RowPartition;
using sparsewatt::TaskGrid;
using sparsewatt::Triplet;

struct Node {
    std::int64_t x, y, z;
};

/// Poisson triplets in natural (x-fastest) node order, found by scanning
/// all node pairs and classifying them by coordinate distance. Quadratic
/// on purpose: no shared stencil-enumeration logic with the library.
inline std::vector<Triplet> poisson_pair_scan(std::uint64_t nx, std::uint64_t ny,
                                              std::uint64_t nz, bool box_stencil) {
    const std::uint64_t n = nx * ny * nz;
    std::vector<Node> nodes(n);
    std::uint64_t at = 0;
    for (std::int64_t z = 0; z < static_cast<std::int64_t>(nz); ++z)
        for (std::int64_t y = 0; y < static_cast<std::int64_t>(ny); ++y)
            for (std::int64_t x = 0; x < static_cast<std::int64_t>(nx); ++x)
                nodes[at++] = {x, y, z};

    std::vector<Triplet> out;
    for (std::uint64_t a = 0; a < n; ++a) {
        out.push_back({a, a, box_stencil ? 26.0 : 6.0});
        for (std::uint64_t b = 0; b < n; ++b) {
            if (a == b) continue;
            const std::int64_t dx = std::abs(nodes[a].x - nodes[b].x);
            const std::int64_t dy = std::abs(nodes[a].y - nodes[b].y);
            const std::int64_t dz = std::abs(nodes[a].z - nodes[b].z);
            const bool neighbor = box_stencil ? (std::max({dx, dy, dz}) == 1)
                                              : (dx + dy + dz == 1);
            if (neighbor) out.push_back({a, b, -1.0});
        }
    }
    return out;
}

/// Renumbers natural-order triplets into a task grid's subdomain-major
/// numbering so distributed assemblies can be compared entry for entry.
inline std::vector<Triplet> renumber_for_grid(const MeshSpec& mesh, const TaskGrid& grid,
                                              const std::vector<Triplet>& natural) {
    const RowPartition part = sparsewatt::stencil_partition(mesh, grid);
    std::vector<std::uint64_t> natural_to_grid(mesh.n_global());
    std::uint64_t at = 0;
    for (std::uint64_t z = 0; z < mesh.nz; ++z)
        for (std::uint64_t y = 0; y < mesh.ny; ++y)
            for (std::uint64_t x = 0; x < mesh.nx; ++x)
                natural_to_grid[at++] = sparsewatt::node_row(mesh, grid, part, x, y, z);
    std::vector<Triplet> out;
    out.reserve(natural.size());
    for (const auto& t : natural)
        out.push_back({natural_to_grid[t.row], natural_to_grid[t.col], t.value});
    return out;
}

inline Eigen::MatrixXd to_eigen(const CsrMatrix& a) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(a.n_rows, a.n_cols);
    for (std::uint64_t i = 0; i < a.n_rows; ++i)
        for (std::uint64_t k = a.row_offsets[i]; k < a.row_offsets[i + 1]; ++k)
            m(i, a.cols[k]) = a.values[k];
    return m;
}

inline Eigen::VectorXd to_eigen(const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), v.size());
}

inline std::vector<double> from_eigen(const Eigen::VectorXd& v) {
    return {v.data(), v.data() + v.size()};
}

/// Dense SPD solve oracle (Eigen LLT).
inline std::vector<double> dense_solve(const CsrMatrix& a, const std::vector<double>& b) {
    Eigen::LLT<Eigen::MatrixXd> llt(to_eigen(a));
    return from_eigen(llt.solve(to_eigen(b)).eval());
}

inline double smallest_eigenvalue(const CsrMatrix& a) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(to_eigen(a));
    return es.eigenvalues().minCoeff();
}

/// Random sparse SPD matrix: strictly diagonally dominant with random
/// symmetric off-diagonal pattern.
inline CsrMatrix random_spd(std::uint64_t n, double density, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    std::bernoulli_distribution keep(density);
    std::vector<std::vector<double>> dense(n, std::vector<double>(n, 0.0));
    for (std::uint64_t i = 0; i < n; ++i)
        for (std::uint64_t j = i + 1; j < n; ++j)
            if (keep(rng)) {
                const double v = uni(rng);
                dense[i][j] = v;
                dense[j][i] = v;
            }
    std::vector<Triplet> trip;
    for (std::uint64_t i = 0; i < n; ++i) {
        double off = 0.0;
        for (std::uint64_t j = 0; j < n; ++j)
            if (j != i && dense[i][j] != 0.0) {
                trip.push_back({i, j, dense[i][j]});
                off += std::abs(dense[i][j]);
            }
        trip.push_back({i, i, off + 1.0 + 0.5 * std::abs(uni(rng))});
    }
    return sparsewatt::csr_from_triplets(n, n, std::move(trip));
}

/// Sparse random SPD matrix for sizes where the dense generator is too
/// heavy: a few symmetric off-diagonals per row, strictly dominant diagonal.
inline CsrMatrix random_spd_sparse(std::uint64_t n, int per_row, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::uint64_t> col(0, n - 1);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    std::map<std::pair<std::uint64_t, std::uint64_t>, double> off;
    for (std::uint64_t i = 0; i < n; ++i)
        for (int k = 0; k < per_row; ++k) {
            const std::uint64_t j = col(rng);
            if (j == i) continue;
            off[{std::min(i, j), std::max(i, j)}] = uni(rng);
        }
    std::vector<double> row_abs(n, 0.0);
    std::vector<Triplet> trip;
    for (const auto& [ij, v] : off) {
        trip.push_back({ij.first, ij.second, v});
        trip.push_back({ij.second, ij.first, v});
        row_abs[ij.first] += std::abs(v);
        row_abs[ij.second] += std::abs(v);
    }
    for (std::uint64_t i = 0; i < n; ++i)
        trip.push_back({i, i, row_abs[i] + 1.0 + 0.25 * std::abs(uni(rng))});
    return sparsewatt::csr_from_triplets(n, n, std::move(trip));
}

inline std::vector<double> random_vector(std::uint64_t n, std::uint64_t seed,
                                         double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = uni(rng);
    return v;
}

/// Serial reference dot product.
inline double dot_serial(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline bool same_triplets(std::vector<Triplet> a, std::vector<Triplet> b) {
    auto lt = [](const Triplet& x, const Triplet& y) {
        if (x.row != y.row) return x.row < y.row;
        if (x.col != y.col) return x.col < y.col;
        return x.value < y.value;
    };
    std::sort(a.begin(), a.end(), lt);
    std::sort(b.begin(), b.end(), lt);
    return a == b;
}

} // namespace testsup
