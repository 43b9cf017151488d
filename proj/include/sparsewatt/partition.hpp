#pragma once

// Contiguous block-row partition of [0, n_global) across ranks.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sparsewatt/csr.hpp"
#include "sparsewatt/errors.hpp"

namespace sparsewatt {

struct RowRange {
    int rank = 0;
    global_index first_row = 0;
    std::uint64_t n_rows = 0;
};

class RowPartition {
public:
    RowPartition() = default;

    /// Even split with the remainder spread over low-index ranks.
    static RowPartition contiguous(global_index n_global, int n_ranks) {
        if (n_ranks < 1) throw partition_error("partition needs at least one rank");
        std::vector<std::uint64_t> starts(n_ranks + 1, 0);
        const std::uint64_t base = n_global / n_ranks;
        const std::uint64_t rem = n_global % n_ranks;
        for (int r = 0; r < n_ranks; ++r)
            starts[r + 1] = starts[r] + base + (static_cast<std::uint64_t>(r) < rem ? 1 : 0);
        RowPartition p;
        p.starts_ = std::move(starts);
        return p;
    }

    static RowPartition from_ranges(std::vector<RowRange> ranges) {
        if (ranges.empty()) throw partition_error("empty partition descriptor");
        std::sort(ranges.begin(), ranges.end(),
                  [](const RowRange& a, const RowRange& b) { return a.rank < b.rank; });
        std::vector<std::uint64_t> starts;
        starts.push_back(0);
        for (std::size_t i = 0; i < ranges.size(); ++i) {
            if (ranges[i].rank != static_cast<int>(i))
                throw partition_error("partition ranks must be 0..n-1 without gaps");
            if (ranges[i].first_row != starts.back())
                throw partition_error("row ranges must be contiguous: rank " +
                                      std::to_string(i) + " starts at " +
                                      std::to_string(ranges[i].first_row) + ", expected " +
                                      std::to_string(starts.back()));
            starts.push_back(starts.back() + ranges[i].n_rows);
        }
        RowPartition p;
        p.starts_ = std::move(starts);
        return p;
    }

    static RowPartition from_sizes(const std::vector<std::uint64_t>& sizes) {
        std::vector<RowRange> rr(sizes.size());
        std::uint64_t at = 0;
        for (std::size_t i = 0; i < sizes.size(); ++i) {
            rr[i] = {static_cast<int>(i), at, sizes[i]};
            at += sizes[i];
        }
        return from_ranges(std::move(rr));
    }

    int size() const { return static_cast<int>(starts_.size()) - 1; }
    global_index n_global() const { return starts_.back(); }
    global_index first_row(int rank) const { return starts_.at(rank); }
    std::uint64_t n_rows(int rank) const { return starts_.at(rank + 1) - starts_.at(rank); }

    int owner(global_index g) const {
        if (g >= n_global())
            throw partition_error("row " + std::to_string(g) + " has no owning rank (n_global " +
                                  std::to_string(n_global()) + ")");
        auto it = std::upper_bound(starts_.begin(), starts_.end(), g);
        return static_cast<int>(it - starts_.begin()) - 1;
    }

    bool owns(int rank, global_index g) const {
        return g >= starts_[rank] && g < starts_[rank + 1];
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j = nlohmann::ordered_json::array();
        for (int r = 0; r < size(); ++r)
            j.push_back({{"rank", r}, {"first_row", first_row(r)}, {"n_rows", n_rows(r)}});
        return j;
    }

    static RowPartition from_json(const nlohmann::json& j) {
        std::vector<RowRange> rr;
        for (const auto& e : j)
            rr.push_back({e.at("rank").get<int>(), e.at("first_row").get<global_index>(),
                          e.at("n_rows").get<std::uint64_t>()});
        return from_ranges(std::move(rr));
    }

    friend bool operator==(const RowPartition&, const RowPartition&) = default;

private:
    std::vector<std::uint64_t> starts_{0};
};

inline void write_partition(const RowPartition& p, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw io_error("cannot open " + path.string() + " for writing");
    os << p.to_json().dump(2) << "\n";
}

inline RowPartition read_partition(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw io_error("cannot open " + path.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw parse_error(path.string() + ": " + e.what());
    }
    return RowPartition::from_json(j);
}

} // namespace sparsewatt
