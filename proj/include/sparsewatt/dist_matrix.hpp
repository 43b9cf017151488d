#pragma once

// One rank's contiguous-row CSR block and the communication plan that fills
// its halo. Global column indices are first shifted by the block's first
// row (the intermediate value is signed and may be negative for columns
// owned by lower ranks), then compacted to dense zero-based local indices;
// col_map inverts the compaction. Local indices are 4-byte, so a block may
// reference at most 2^32 - 1 distinct columns.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "sparsewatt/csr.hpp"
#include "sparsewatt/errors.hpp"
#include "sparsewatt/partition.hpp"
#include "sparsewatt/transport.hpp"

namespace sparsewatt {

struct LocalCsrBlock {
    global_index first_global_row = 0;
    std::uint64_t n_local_rows = 0;
    global_index n_global = 0;

    std::vector<std::uint64_t> row_offsets; // length n_local_rows + 1
    std::vector<local_index> col_local;     // indexes col_map
    std::vector<double> values;

    /// local column -> global column, strictly increasing.
    std::vector<global_index> col_map;

    // Derived layout. col_slot maps a local column to a position in the
    // conceptual [owned | halo] concatenation: slots below n_local_rows
    // address owned values, the rest address halo slots in col_map order.
    std::vector<std::uint32_t> col_slot;
    std::uint64_t n_halo = 0;
    std::vector<std::uint32_t> boundary_rows; // rows referencing at least one halo column

    std::uint64_t nnz() const { return col_local.size(); }
    std::uint64_t n_distinct_cols() const { return col_map.size(); }

    bool owns_col(global_index g) const {
        return g >= first_global_row && g < first_global_row + n_local_rows;
    }
};

inline LocalCsrBlock build_local_block(global_index first_row, std::uint64_t n_rows,
                                       global_index n_global,
                                       std::vector<Triplet> entries) {
    for (const auto& e : entries) {
        if (e.row < first_row || e.row >= first_row + n_rows)
            throw domain_error("build_local_block: row " + std::to_string(e.row) +
                               " outside [" + std::to_string(first_row) + ", " +
                               std::to_string(first_row + n_rows) + ")");
        if (e.col >= n_global)
            throw domain_error("build_local_block: column " + std::to_string(e.col) +
                               " outside [0, " + std::to_string(n_global) + ")");
    }
    std::sort(entries.begin(), entries.end(), triplet_order);
    for (std::size_t k = 1; k < entries.size(); ++k)
        if (entries[k].row == entries[k - 1].row && entries[k].col == entries[k - 1].col)
            throw domain_error("build_local_block: duplicate entry at (" +
                               std::to_string(entries[k].row) + ", " +
                               std::to_string(entries[k].col) + ")");

    // Shift: local column = global column - first owned row. Columns owned
    // by lower ranks come out negative here; that is expected and goes away
    // with the compaction below.
    std::vector<std::int64_t> shifted(entries.size());
    for (std::size_t k = 0; k < entries.size(); ++k)
        shifted[k] = static_cast<std::int64_t>(entries[k].col) -
                     static_cast<std::int64_t>(first_row);

    std::vector<std::int64_t> distinct(shifted);
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() > std::numeric_limits<local_index>::max())
        throw capacity_error("build_local_block: " + std::to_string(distinct.size()) +
                             " distinct columns exceed the 4-byte local index range");

    LocalCsrBlock b;
    b.first_global_row = first_row;
    b.n_local_rows = n_rows;
    b.n_global = n_global;
    b.row_offsets.assign(n_rows + 1, 0);
    b.col_local.resize(entries.size());
    b.values.resize(entries.size());
    b.col_map.resize(distinct.size());
    for (std::size_t k = 0; k < distinct.size(); ++k)
        b.col_map[k] = static_cast<global_index>(distinct[k] +
                                                 static_cast<std::int64_t>(first_row));

    for (const auto& e : entries) b.row_offsets[e.row - first_row + 1]++;
    for (std::uint64_t i = 0; i < n_rows; ++i) b.row_offsets[i + 1] += b.row_offsets[i];
    for (std::size_t k = 0; k < entries.size(); ++k) {
        auto it = std::lower_bound(distinct.begin(), distinct.end(), shifted[k]);
        b.col_local[k] = static_cast<local_index>(it - distinct.begin());
        b.values[k] = entries[k].value;
    }

    b.col_slot.resize(b.col_map.size());
    for (std::size_t k = 0; k < b.col_map.size(); ++k) {
        if (b.owns_col(b.col_map[k]))
            b.col_slot[k] = static_cast<std::uint32_t>(b.col_map[k] - first_row);
        else
            b.col_slot[k] = static_cast<std::uint32_t>(n_rows + b.n_halo++);
    }

    for (std::uint64_t i = 0; i < n_rows; ++i) {
        for (std::uint64_t k = b.row_offsets[i]; k < b.row_offsets[i + 1]; ++k) {
            if (b.col_slot[b.col_local[k]] >= n_rows) {
                b.boundary_rows.push_back(static_cast<std::uint32_t>(i));
                break;
            }
        }
    }
    return b;
}

/// Expands a block back to global (row, col, value) triplets via col_map.
inline std::vector<Triplet> block_to_triplets(const LocalCsrBlock& b) {
    std::vector<Triplet> out;
    out.reserve(b.nnz());
    for (std::uint64_t i = 0; i < b.n_local_rows; ++i)
        for (std::uint64_t k = b.row_offsets[i]; k < b.row_offsets[i + 1]; ++k)
            out.push_back({b.first_global_row + i, b.col_map[b.col_local[k]], b.values[k]});
    return out;
}

/// Global columns a block needs but does not own, ascending (= halo layout).
inline std::vector<global_index> halo_columns(const LocalCsrBlock& b) {
    std::vector<global_index> out;
    for (auto g : b.col_map)
        if (!b.owns_col(g)) out.push_back(g);
    return out;
}

// ---------------------------------------------------------------------------
// Communication plan

struct NeighborExchange {
    int peer = -1;
    std::vector<local_index> send_rows;    // owned rows whose values the peer needs
    std::vector<std::uint32_t> recv_slots; // halo positions filled by the peer
};

struct CommPlan {
    int rank = -1;
    std::uint64_t halo_size = 0;
    std::vector<NeighborExchange> neighbors; // sorted by peer rank
};

namespace detail {

inline void validate_comm_plans(const std::vector<CommPlan>& plans) {
    const int n = static_cast<int>(plans.size());
    for (int a = 0; a < n; ++a) {
        std::vector<bool> filled(plans[a].halo_size, false);
        std::uint64_t covered = 0;
        for (const auto& nb : plans[a].neighbors) {
            if (nb.peer < 0 || nb.peer >= n || nb.peer == a)
                throw partition_error("comm plan: bad neighbor rank");
            for (auto s : nb.recv_slots) {
                if (s >= plans[a].halo_size || filled[s])
                    throw partition_error("comm plan: halo slot missing or filled twice");
                filled[s] = true;
                ++covered;
            }
        }
        if (covered != plans[a].halo_size)
            throw partition_error("comm plan: halo not covered exactly once");
        // Symmetry: a's receive list from b must pair with b's send list to a.
        for (const auto& nb : plans[a].neighbors) {
            const auto& peer_plan = plans[nb.peer];
            auto it = std::find_if(peer_plan.neighbors.begin(), peer_plan.neighbors.end(),
                                   [&](const NeighborExchange& x) { return x.peer == a; });
            if (it == peer_plan.neighbors.end() ||
                it->send_rows.size() != nb.recv_slots.size())
                throw partition_error("comm plan: send/recv schedules are not symmetric");
        }
    }
}

} // namespace detail

/// Builds every rank's plan from the full set of column maps. Within one
/// neighbor pair, values travel in ascending global-column order on both
/// sides, which is what makes the two schedules line up.
inline std::vector<CommPlan> build_comm_plans(
    const RowPartition& part, std::span<const std::vector<global_index>> col_maps) {
    const int n = part.size();
    if (static_cast<int>(col_maps.size()) != n)
        throw partition_error("build_comm_plans: one col_map per rank required");

    std::vector<CommPlan> plans(n);
    for (int r = 0; r < n; ++r) plans[r].rank = r;

    auto neighbor_of = [](CommPlan& plan, int peer) -> NeighborExchange& {
        auto it = std::find_if(plan.neighbors.begin(), plan.neighbors.end(),
                               [&](const NeighborExchange& x) { return x.peer == peer; });
        if (it != plan.neighbors.end()) return *it;
        plan.neighbors.push_back({peer, {}, {}});
        return plan.neighbors.back();
    };

    for (int a = 0; a < n; ++a) {
        const global_index lo = part.first_row(a);
        const global_index hi = lo + part.n_rows(a);
        std::uint32_t halo_slot = 0;
        for (global_index g : col_maps[a]) {
            if (g >= lo && g < hi) continue;
            const int owner = part.owner(g); // throws partition_error if unowned
            neighbor_of(plans[a], owner).recv_slots.push_back(halo_slot);
            neighbor_of(plans[owner], a)
                .send_rows.push_back(static_cast<local_index>(g - part.first_row(owner)));
            ++halo_slot;
        }
        plans[a].halo_size = halo_slot;
    }
    for (auto& plan : plans)
        std::sort(plan.neighbors.begin(), plan.neighbors.end(),
                  [](const NeighborExchange& x, const NeighborExchange& y) {
                      return x.peer < y.peer;
                  });
    detail::validate_comm_plans(plans);
    return plans;
}

/// Distributed entry point: ranks swap col_maps through the transport, then
/// each computes the same global schedule and keeps its own plan.
inline CommPlan build_comm_plan(const RowPartition& part, const LocalCsrBlock& block,
                                Transport& tp) {
    std::vector<std::byte> mine;
    detail::append_pod_vector(mine, block.col_map);
    auto all = tp.allgather(mine);
    std::vector<std::vector<global_index>> col_maps(tp.size());
    for (int r = 0; r < tp.size(); ++r) {
        detail::ByteReader rd{all[r]};
        col_maps[r] = rd.read_pod_vector<global_index>();
    }
    auto plans = build_comm_plans(part, col_maps);
    return plans[tp.rank()];
}

// ---------------------------------------------------------------------------

/// Collects all blocks on rank 0 as one serial CSR matrix (empty elsewhere).
inline CsrMatrix gather_matrix(const LocalCsrBlock& block, Transport& tp) {
    std::vector<std::byte> mine;
    auto triplets = block_to_triplets(block);
    detail::append_pod_vector(mine, triplets);
    auto all = tp.gather(0, mine);
    if (tp.rank() != 0) return {};
    std::vector<Triplet> merged;
    for (auto& part : all) {
        detail::ByteReader rd{part};
        auto t = rd.read_pod_vector<Triplet>();
        merged.insert(merged.end(), t.begin(), t.end());
    }
    return csr_from_triplets(block.n_global, block.n_global, std::move(merged));
}

} // namespace sparsewatt
