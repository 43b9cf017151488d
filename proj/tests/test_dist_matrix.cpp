#include <catch2/catch_amalgamated.hpp>

#include "sparsewatt/dist_matrix.hpp"
#include "sparsewatt/stencil.hpp"
#include "support.hpp"

using namespace sparsewatt;

namespace {

// 1D Laplacian rows [first, first+n) of a global n_global system.
std::vector<Triplet> laplacian_rows(global_index first, std::uint64_t n,
                                    global_index n_global) {
    std::vector<Triplet> t;
    for (global_index i = first; i < first + n; ++i) {
        t.push_back({i, i, 2.0});
        if (i > 0) t.push_back({i, i - 1, -1.0});
        if (i + 1 < n_global) t.push_back({i, i + 1, -1.0});
    }
    return t;
}

} // namespace

TEST_CASE("shifted column indexing compacts to sorted local indices") {
    // rank owns rows [100, 200): col 150 shifts to 50, col 95 to -5;
    // compaction maps both through col_map with zero-based local indices.
    std::vector<Triplet> entries{{100, 95, 1.0}, {100, 150, 2.0}, {101, 101, 3.0}};
    LocalCsrBlock b = build_local_block(100, 100, 1000, entries);

    REQUIRE(b.col_map == std::vector<global_index>{95, 101, 150});
    REQUIRE(b.n_distinct_cols() == 3);
    // row 100: cols 95 then 150 (ascending), values preserved bit for bit
    REQUIRE(b.col_local[0] == 0);
    REQUIRE(b.col_local[1] == 2);
    REQUIRE(b.values[0] == 1.0);
    REQUIRE(b.values[1] == 2.0);
    REQUIRE(b.n_halo == 1); // column 95 is owned elsewhere
}

TEST_CASE("identity matrix block on one rank") {
    std::vector<Triplet> entries;
    for (global_index i = 0; i < 8; ++i) entries.push_back({i, i, 1.0});
    LocalCsrBlock b = build_local_block(0, 8, 8, entries);
    for (std::uint64_t i = 0; i < 8; ++i) {
        REQUIRE(b.col_map[i] == i);
        REQUIRE(b.col_local[i] == i);
    }
    REQUIRE(b.n_halo == 0);
    REQUIRE(b.boundary_rows.empty());
}

TEST_CASE("block construction rejects bad entries") {
    REQUIRE_THROWS_AS(build_local_block(0, 4, 8, {{5, 0, 1.0}}), domain_error);
    REQUIRE_THROWS_AS(build_local_block(0, 4, 8, {{0, 9, 1.0}}), domain_error);
    REQUIRE_THROWS_AS(build_local_block(0, 4, 8, {{0, 1, 1.0}, {0, 1, 2.0}}), domain_error);
}

TEST_CASE("7pt Poisson 8^3 over 2 ranks reassembles to the serial matrix") {
    const MeshSpec mesh{8, 8, 8, Stencil::seven_point};
    const TaskGrid grid{1, 1, 2};
    auto natural = testsup::poisson_pair_scan(8, 8, 8, false);
    // z-split keeps subdomain-major numbering equal to the natural order,
    // so this comparison is literal.
    std::vector<Triplet> reassembled;
    for (int r = 0; r < 2; ++r) {
        auto t = block_to_triplets(assemble_poisson(mesh, grid, r));
        reassembled.insert(reassembled.end(), t.begin(), t.end());
    }
    REQUIRE(testsup::same_triplets(reassembled, natural));
}

TEST_CASE("reassembly is a bijection on random sparse matrices") {
    CsrMatrix a = testsup::random_spd(30, 0.2, 99);
    auto all = csr_to_triplets(a);
    RowPartition part = RowPartition::contiguous(30, 4);
    std::vector<Triplet> reassembled;
    for (int r = 0; r < 4; ++r) {
        std::vector<Triplet> mine;
        for (const auto& t : all)
            if (part.owns(r, t.row)) mine.push_back(t);
        auto b = build_local_block(part.first_row(r), part.n_rows(r), 30, mine);
        auto back = block_to_triplets(b);
        reassembled.insert(reassembled.end(), back.begin(), back.end());
    }
    REQUIRE(testsup::same_triplets(reassembled, all));
}

TEST_CASE("comm plan for the 1D Laplacian over two ranks") {
    RowPartition part = RowPartition::contiguous(8, 2);
    std::vector<std::vector<global_index>> col_maps(2);
    std::vector<LocalCsrBlock> blocks;
    for (int r = 0; r < 2; ++r) {
        blocks.push_back(build_local_block(part.first_row(r), part.n_rows(r), 8,
                                           laplacian_rows(part.first_row(r), 4, 8)));
        col_maps[r] = blocks[r].col_map;
    }
    auto plans = build_comm_plans(part, col_maps);

    // rank 0 needs global column 4 from rank 1; rank 1 needs 3 from rank 0
    REQUIRE(plans[0].halo_size == 1);
    REQUIRE(plans[1].halo_size == 1);
    REQUIRE(plans[0].neighbors.size() == 1);
    REQUIRE(plans[0].neighbors[0].peer == 1);
    REQUIRE(plans[0].neighbors[0].recv_slots == std::vector<std::uint32_t>{0});
    REQUIRE(plans[0].neighbors[0].send_rows == std::vector<local_index>{3}); // row 3 -> rank 1
    REQUIRE(plans[1].neighbors[0].send_rows == std::vector<local_index>{0}); // row 4 -> rank 0
}

TEST_CASE("single rank yields an empty plan") {
    RowPartition part = RowPartition::contiguous(8, 1);
    auto b = build_local_block(0, 8, 8, laplacian_rows(0, 8, 8));
    auto plans = build_comm_plans(part, std::vector<std::vector<global_index>>{b.col_map});
    REQUIRE(plans[0].neighbors.empty());
    REQUIRE(plans[0].halo_size == 0);
}

TEST_CASE("7pt Poisson 8^3 over 8 ranks: halo sizes match a brute-force scan") {
    const MeshSpec mesh{8, 8, 8, Stencil::seven_point};
    const TaskGrid grid{2, 2, 2};
    const RowPartition part = stencil_partition(mesh, grid);

    std::vector<LocalCsrBlock> blocks;
    std::vector<std::vector<global_index>> col_maps;
    for (int r = 0; r < 8; ++r) {
        blocks.push_back(assemble_poisson(mesh, grid, r));
        col_maps.push_back(blocks.back().col_map);
    }
    auto plans = build_comm_plans(part, col_maps);

    for (int r = 0; r < 8; ++r) {
        // Brute force: count distinct off-block columns in the raw entries.
        std::vector<global_index> off;
        for (const auto& t : block_to_triplets(blocks[r]))
            if (!part.owns(r, t.col)) off.push_back(t.col);
        std::sort(off.begin(), off.end());
        off.erase(std::unique(off.begin(), off.end()), off.end());

        REQUIRE(plans[r].halo_size == off.size());
        // every subdomain of the 2x2x2 grid is a corner: 3 neighbor faces of 4x4 nodes
        REQUIRE(plans[r].halo_size == 3u * 16u);
    }
}

TEST_CASE("unowned column raises a partition error") {
    RowPartition part = RowPartition::contiguous(4, 2);
    std::vector<std::vector<global_index>> col_maps{{0, 1}, {2, 3, 7}};
    REQUIRE_THROWS_AS(build_comm_plans(part, col_maps), partition_error);
}

TEST_CASE("distributed comm plan construction agrees with the global build") {
    const MeshSpec mesh{6, 6, 6, Stencil::seven_point};
    const TaskGrid grid{1, 2, 2};
    const RowPartition part = stencil_partition(mesh, grid);

    std::vector<std::vector<global_index>> col_maps(4);
    std::vector<LocalCsrBlock> blocks(4);
    for (int r = 0; r < 4; ++r) {
        blocks[r] = assemble_poisson(mesh, grid, r);
        col_maps[r] = blocks[r].col_map;
    }
    auto expected = build_comm_plans(part, col_maps);

    run_ranks(4, [&](Transport& tp) {
        CommPlan mine = build_comm_plan(part, blocks[tp.rank()], tp);
        const CommPlan& ref = expected[tp.rank()];
        REQUIRE(mine.halo_size == ref.halo_size);
        REQUIRE(mine.neighbors.size() == ref.neighbors.size());
        for (std::size_t i = 0; i < mine.neighbors.size(); ++i) {
            REQUIRE(mine.neighbors[i].peer == ref.neighbors[i].peer);
            REQUIRE(mine.neighbors[i].send_rows == ref.neighbors[i].send_rows);
            REQUIRE(mine.neighbors[i].recv_slots == ref.neighbors[i].recv_slots);
        }
    });
}

TEST_CASE("partition descriptor JSON round trip and validation") {
    const auto dir = std::filesystem::temp_directory_path() / "sparsewatt_part";
    std::filesystem::create_directories(dir);
    RowPartition part = RowPartition::contiguous(100, 3); // 34 + 33 + 33
    REQUIRE(part.n_rows(0) == 34);
    REQUIRE(part.owner(33) == 0);
    REQUIRE(part.owner(34) == 1);
    REQUIRE_THROWS_AS(part.owner(100), partition_error);

    write_partition(part, dir / "part.json");
    REQUIRE(read_partition(dir / "part.json") == part);

    // gaps and overlaps are rejected
    REQUIRE_THROWS_AS(RowPartition::from_ranges({{0, 0, 4}, {1, 5, 4}}), partition_error);
    REQUIRE_THROWS_AS(RowPartition::from_ranges({{0, 0, 4}, {1, 3, 4}}), partition_error);
    std::filesystem::remove_all(dir);
}

TEST_CASE("gather_matrix rebuilds the serial operator on rank 0") {
    const MeshSpec mesh{5, 4, 3, Stencil::seven_point};
    const TaskGrid grid{1, 1, 3};
    auto natural = testsup::poisson_pair_scan(5, 4, 3, false);
    auto expected = testsup::renumber_for_grid(mesh, grid, natural);

    run_ranks(3, [&](Transport& tp) {
        auto block = assemble_poisson(mesh, grid, tp.rank());
        CsrMatrix full = gather_matrix(block, tp);
        if (tp.rank() == 0)
            REQUIRE(testsup::same_triplets(csr_to_triplets(full), expected));
        else
            REQUIRE(full.n_rows == 0);
    });
}
