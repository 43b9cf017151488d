#pragma once

// Serial CSR storage plus the handful of sparse kernels the rest of the
// library builds on (transpose, SpGEMM, MatrixMarket I/O).

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sparsewatt/errors.hpp"

namespace sparsewatt {

using global_index = std::uint64_t;
using local_index = std::uint32_t;

struct Triplet {
    global_index row = 0;
    global_index col = 0;
    double value = 0.0;

    friend bool operator==(const Triplet&, const Triplet&) = default;
};

inline bool triplet_order(const Triplet& a, const Triplet& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
}

/// Compressed sparse row matrix with 64-bit indices, column-sorted rows.
struct CsrMatrix {
    global_index n_rows = 0;
    global_index n_cols = 0;
    std::vector<std::uint64_t> row_offsets; // length n_rows + 1
    std::vector<global_index> cols;
    std::vector<double> values;

    std::uint64_t nnz() const { return cols.size(); }

    double at(global_index i, global_index j) const {
        for (std::uint64_t k = row_offsets[i]; k < row_offsets[i + 1]; ++k)
            if (cols[k] == j) return values[k];
        return 0.0;
    }
};

inline CsrMatrix csr_from_triplets(global_index n_rows, global_index n_cols,
                                   std::vector<Triplet> entries) {
    for (const auto& e : entries) {
        if (e.row >= n_rows || e.col >= n_cols)
            throw domain_error("csr_from_triplets: entry (" + std::to_string(e.row) + ", " +
                               std::to_string(e.col) + ") outside " + std::to_string(n_rows) +
                               "x" + std::to_string(n_cols));
    }
    std::sort(entries.begin(), entries.end(), triplet_order);
    for (std::size_t k = 1; k < entries.size(); ++k) {
        if (entries[k].row == entries[k - 1].row && entries[k].col == entries[k - 1].col)
            throw domain_error("csr_from_triplets: duplicate entry at (" +
                               std::to_string(entries[k].row) + ", " +
                               std::to_string(entries[k].col) + ")");
    }

    CsrMatrix a;
    a.n_rows = n_rows;
    a.n_cols = n_cols;
    a.row_offsets.assign(n_rows + 1, 0);
    a.cols.resize(entries.size());
    a.values.resize(entries.size());
    for (const auto& e : entries) a.row_offsets[e.row + 1]++;
    for (global_index i = 0; i < n_rows; ++i) a.row_offsets[i + 1] += a.row_offsets[i];
    for (std::size_t k = 0; k < entries.size(); ++k) {
        a.cols[k] = entries[k].col;
        a.values[k] = entries[k].value;
    }
    return a;
}

inline std::vector<Triplet> csr_to_triplets(const CsrMatrix& a) {
    std::vector<Triplet> out;
    out.reserve(a.nnz());
    for (global_index i = 0; i < a.n_rows; ++i)
        for (std::uint64_t k = a.row_offsets[i]; k < a.row_offsets[i + 1]; ++k)
            out.push_back({i, a.cols[k], a.values[k]});
    return out;
}

inline CsrMatrix csr_identity(global_index n) {
    CsrMatrix a;
    a.n_rows = a.n_cols = n;
    a.row_offsets.resize(n + 1);
    a.cols.resize(n);
    a.values.assign(n, 1.0);
    for (global_index i = 0; i <= n; ++i) a.row_offsets[i] = i;
    for (global_index i = 0; i < n; ++i) a.cols[i] = i;
    return a;
}

inline CsrMatrix csr_transpose(const CsrMatrix& a) {
    CsrMatrix t;
    t.n_rows = a.n_cols;
    t.n_cols = a.n_rows;
    t.row_offsets.assign(t.n_rows + 1, 0);
    t.cols.resize(a.nnz());
    t.values.resize(a.nnz());
    for (auto c : a.cols) t.row_offsets[c + 1]++;
    for (global_index i = 0; i < t.n_rows; ++i) t.row_offsets[i + 1] += t.row_offsets[i];
    std::vector<std::uint64_t> cursor(t.row_offsets.begin(), t.row_offsets.end() - 1);
    for (global_index i = 0; i < a.n_rows; ++i)
        for (std::uint64_t k = a.row_offsets[i]; k < a.row_offsets[i + 1]; ++k) {
            std::uint64_t pos = cursor[a.cols[k]]++;
            t.cols[pos] = i;
            t.values[pos] = a.values[k];
        }
    return t;
}

// Row-by-row SpGEMM with a dense accumulator; fine at the sizes this
// library targets (coarse-grid construction, test fixtures).
inline CsrMatrix csr_multiply(const CsrMatrix& a, const CsrMatrix& b) {
    if (a.n_cols != b.n_rows)
        throw domain_error("csr_multiply: inner dimensions differ");
    CsrMatrix c;
    c.n_rows = a.n_rows;
    c.n_cols = b.n_cols;
    c.row_offsets.assign(a.n_rows + 1, 0);

    std::vector<double> acc(b.n_cols, 0.0);
    std::vector<global_index> touched;
    for (global_index i = 0; i < a.n_rows; ++i) {
        touched.clear();
        for (std::uint64_t ka = a.row_offsets[i]; ka < a.row_offsets[i + 1]; ++ka) {
            const global_index j = a.cols[ka];
            const double av = a.values[ka];
            for (std::uint64_t kb = b.row_offsets[j]; kb < b.row_offsets[j + 1]; ++kb) {
                const global_index col = b.cols[kb];
                if (acc[col] == 0.0 &&
                    std::find(touched.begin(), touched.end(), col) == touched.end())
                    touched.push_back(col);
                acc[col] += av * b.values[kb];
            }
        }
        std::sort(touched.begin(), touched.end());
        for (global_index col : touched) {
            c.cols.push_back(col);
            c.values.push_back(acc[col]);
            acc[col] = 0.0;
        }
        c.row_offsets[i + 1] = c.cols.size();
    }
    return c;
}

inline std::vector<double> csr_diagonal(const CsrMatrix& a) {
    std::vector<double> d(a.n_rows, 0.0);
    for (global_index i = 0; i < a.n_rows; ++i) d[i] = a.at(i, i);
    return d;
}

inline void spmv_serial(const CsrMatrix& a, const std::vector<double>& x,
                        std::vector<double>& y) {
    if (x.size() != a.n_cols) throw domain_error("spmv_serial: x length mismatch");
    y.assign(a.n_rows, 0.0);
    for (global_index i = 0; i < a.n_rows; ++i) {
        double s = 0.0;
        for (std::uint64_t k = a.row_offsets[i]; k < a.row_offsets[i + 1]; ++k)
            s += a.values[k] * x[a.cols[k]];
        y[i] = s;
    }
}

/// Row-major dense copy; only sensible for small matrices (tests, coarse solver).
inline std::vector<double> csr_to_dense(const CsrMatrix& a) {
    std::vector<double> d(a.n_rows * a.n_cols, 0.0);
    for (global_index i = 0; i < a.n_rows; ++i)
        for (std::uint64_t k = a.row_offsets[i]; k < a.row_offsets[i + 1]; ++k)
            d[i * a.n_cols + a.cols[k]] = a.values[k];
    return d;
}

// ---------------------------------------------------------------------------
// MatrixMarket coordinate I/O (real, general or symmetric). Used for test
// fixtures and the `gen --dump` CLI path.

inline void write_matrix_market(const CsrMatrix& a, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw io_error("cannot open " + path.string() + " for writing");
    os << "%%MatrixMarket matrix coordinate real general\n";
    os << a.n_rows << " " << a.n_cols << " " << a.nnz() << "\n";
    char buf[64];
    for (global_index i = 0; i < a.n_rows; ++i)
        for (std::uint64_t k = a.row_offsets[i]; k < a.row_offsets[i + 1]; ++k) {
            std::snprintf(buf, sizeof buf, "%.17g", a.values[k]);
            os << (i + 1) << " " << (a.cols[k] + 1) << " " << buf << "\n";
        }
    if (!os) throw io_error("write failed: " + path.string());
}

inline CsrMatrix read_matrix_market(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw io_error("cannot open " + path.string());
    std::string line;
    std::size_t lineno = 0;

    if (!std::getline(is, line)) throw parse_error(path.string() + ": empty file");
    ++lineno;
    std::istringstream banner(line);
    std::string mm, object, format, field, symmetry;
    banner >> mm >> object >> format >> field >> symmetry;
    if (mm != "%%MatrixMarket" || object != "matrix" || format != "coordinate" ||
        field != "real" || (symmetry != "general" && symmetry != "symmetric"))
        throw parse_error(path.string() + ":1: unsupported MatrixMarket banner");
    const bool symmetric = symmetry == "symmetric";

    global_index n_rows = 0, n_cols = 0;
    std::uint64_t nnz = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line[0] == '%') continue;
        std::istringstream dims(line);
        if (!(dims >> n_rows >> n_cols >> nnz))
            throw parse_error(path.string() + ":" + std::to_string(lineno) + ": bad size line");
        break;
    }

    std::vector<Triplet> entries;
    entries.reserve(nnz);
    std::uint64_t seen = 0;
    while (seen < nnz && std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '%') continue;
        std::istringstream es(line);
        global_index r, c;
        double v;
        if (!(es >> r >> c >> v))
            throw parse_error(path.string() + ":" + std::to_string(lineno) + ": bad entry");
        if (r < 1 || c < 1 || r > n_rows || c > n_cols)
            throw parse_error(path.string() + ":" + std::to_string(lineno) +
                              ": index out of range");
        entries.push_back({r - 1, c - 1, v});
        if (symmetric && r != c) entries.push_back({c - 1, r - 1, v});
        ++seen;
    }
    if (seen < nnz)
        throw parse_error(path.string() + ": expected " + std::to_string(nnz) +
                          " entries, got " + std::to_string(seen));
    return csr_from_triplets(n_rows, n_cols, std::move(entries));
}

} // namespace sparsewatt
