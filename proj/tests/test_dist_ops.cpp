#include <catch2/catch_amalgamated.hpp>

#include "sparsewatt/dist_ops.hpp"
#include "sparsewatt/stencil.hpp"
#include "support.hpp"

using namespace sparsewatt;

namespace {

struct DistSetup {
    MeshSpec mesh;
    TaskGrid grid;
    RowPartition part;
    CsrMatrix serial; // under the grid numbering
};

DistSetup make_setup(std::uint64_t nx, std::uint64_t ny, std::uint64_t nz, Stencil st,
                     int ranks) {
    DistSetup s;
    s.mesh = {nx, ny, nz, st};
    s.grid = choose_task_grid(s.mesh, ranks);
    s.part = stencil_partition(s.mesh, s.grid);
    auto natural =
        testsup::poisson_pair_scan(nx, ny, nz, st == Stencil::twenty_seven_point);
    s.serial = csr_from_triplets(s.mesh.n_global(), s.mesh.n_global(),
                                 testsup::renumber_for_grid(s.mesh, s.grid, natural));
    return s;
}

} // namespace

TEST_CASE("halo exchange delivers owner values") {
    const auto s = make_setup(6, 6, 6, Stencil::seven_point, 4);
    run_ranks(4, [&](Transport& tp) {
        const int r = tp.rank();
        auto block = assemble_poisson(s.mesh, s.grid, r);
        auto plan = build_comm_plan(s.part, block, tp);

        // owned values = rank id -> every halo slot equals its owner's id
        DistVector x = make_vector(block, static_cast<double>(r));
        halo_exchange(plan, tp, x);
        REQUIRE(x.halo_fresh);
        const auto halo_cols = halo_columns(block);
        for (std::size_t k = 0; k < halo_cols.size(); ++k)
            REQUIRE(x.halo[k] == static_cast<double>(s.part.owner(halo_cols[k])));
    });
}

TEST_CASE("empty plan is a no-op that still marks the halo fresh") {
    auto block = assemble_poisson({4, 4, 4, Stencil::seven_point}, {1, 1, 1}, 0);
    run_ranks(1, [&](Transport& tp) {
        auto plan = build_comm_plan(RowPartition::contiguous(64, 1), block, tp);
        DistVector x = make_vector(block, 1.0);
        halo_exchange(plan, tp, x);
        REQUIRE(x.halo_fresh);
        REQUIRE(x.halo.empty());
    });
}

TEST_CASE("gathered owned+halo view equals the serial vector restricted to col_map") {
    const auto s = make_setup(6, 6, 6, Stencil::seven_point, 4);
    const auto xg = testsup::random_vector(s.mesh.n_global(), 123);
    run_ranks(4, [&](Transport& tp) {
        const int r = tp.rank();
        auto block = assemble_poisson(s.mesh, s.grid, r);
        auto plan = build_comm_plan(s.part, block, tp);
        DistVector x = make_vector(block);
        for (std::uint64_t i = 0; i < block.n_local_rows; ++i)
            x.owned[i] = xg[block.first_global_row + i];
        halo_exchange(plan, tp, x);
        // walk col_map: owned entries read from owned, halo entries from halo
        std::uint64_t halo_at = 0;
        for (std::size_t k = 0; k < block.col_map.size(); ++k) {
            const global_index g = block.col_map[k];
            const double got =
                block.owns_col(g) ? x.owned[g - block.first_global_row] : x.halo[halo_at++];
            REQUIRE(got == xg[g]);
        }
    });
}

TEST_CASE("spmv requires a fresh halo") {
    auto block = assemble_poisson({3, 3, 3, Stencil::seven_point}, {1, 1, 1}, 0);
    DistVector x = make_vector(block, 1.0);
    DistVector y = make_vector(block);
    REQUIRE_THROWS_AS(spmv(block, x, y), contract_error);
}

TEST_CASE("distributed spmv matches the serial oracle") {
    for (auto st : {Stencil::seven_point, Stencil::twenty_seven_point}) {
        for (int ranks : {1, 2, 4, 8}) {
            const auto s = make_setup(6, 6, 6, st, ranks);
            const auto xg = testsup::random_vector(s.mesh.n_global(), 7 + ranks);
            std::vector<double> expected;
            spmv_serial(s.serial, xg, expected);

            std::vector<double> got(s.mesh.n_global());
            run_ranks(ranks, [&](Transport& tp) {
                const int r = tp.rank();
                auto block = assemble_poisson(s.mesh, s.grid, r);
                auto plan = build_comm_plan(s.part, block, tp);
                DistVector x = make_vector(block);
                for (std::uint64_t i = 0; i < block.n_local_rows; ++i)
                    x.owned[i] = xg[block.first_global_row + i];
                halo_exchange(plan, tp, x);
                DistVector y = make_vector(block);
                spmv(block, x, y);
                for (std::uint64_t i = 0; i < block.n_local_rows; ++i)
                    got[block.first_global_row + i] = y.owned[i];
            });
            for (std::uint64_t i = 0; i < s.mesh.n_global(); ++i) {
                const double denom = std::max(1e-30, std::abs(expected[i]));
                REQUIRE(std::abs(got[i] - expected[i]) / denom <= 1e-14);
            }
        }
    }
}

TEST_CASE("overlapped spmv is bit-identical to exchange-then-compute") {
    const auto s = make_setup(6, 5, 4, Stencil::twenty_seven_point, 4);
    const auto xg = testsup::random_vector(s.mesh.n_global(), 55);
    std::vector<double> plain(s.mesh.n_global()), overlapped(s.mesh.n_global());

    for (int pass = 0; pass < 2; ++pass) {
        run_ranks(4, [&](Transport& tp) {
            const int r = tp.rank();
            auto block = assemble_poisson(s.mesh, s.grid, r);
            auto plan = build_comm_plan(s.part, block, tp);
            DistVector x = make_vector(block);
            for (std::uint64_t i = 0; i < block.n_local_rows; ++i)
                x.owned[i] = xg[block.first_global_row + i];
            DistVector y = make_vector(block);
            if (pass == 0) {
                halo_exchange(plan, tp, x);
                spmv(block, x, y);
            } else {
                spmv_overlap(block, plan, tp, x, y);
            }
            auto& dst = pass == 0 ? plain : overlapped;
            for (std::uint64_t i = 0; i < block.n_local_rows; ++i)
                dst[block.first_global_row + i] = y.owned[i];
        });
    }
    REQUIRE(plain == overlapped); // exact equality, not approximate
}

TEST_CASE("dot, norm2 and axpy match serial references across rank counts") {
    const std::uint64_t n = 1000;
    const auto xg = testsup::random_vector(n, 31);
    const auto yg = testsup::random_vector(n, 32);
    const double dot_ref = testsup::dot_serial(xg, yg);
    const double norm_ref = std::sqrt(testsup::dot_serial(xg, xg));

    for (int ranks : {1, 2, 4, 8}) {
        RowPartition part = RowPartition::contiguous(n, ranks);
        run_ranks(ranks, [&](Transport& tp) {
            const int r = tp.rank();
            DistVector x, y;
            for (std::uint64_t i = 0; i < part.n_rows(r); ++i) {
                x.owned.push_back(xg[part.first_row(r) + i]);
                y.owned.push_back(yg[part.first_row(r) + i]);
            }
            const std::uint64_t before = tp.reduction_count();
            const double d = dot(x, y, tp);
            REQUIRE(tp.reduction_count() == before + 1); // exactly one reduction
            const double nn = norm2(x, tp);
            REQUIRE(tp.reduction_count() == before + 2);

            REQUIRE(std::abs(d - dot_ref) / std::abs(dot_ref) <= 1e-13);
            REQUIRE(std::abs(nn - norm_ref) / norm_ref <= 1e-13);

            // axpy is local and reduction-free
            axpy(2.5, x, y);
            REQUIRE(tp.reduction_count() == before + 2);
            for (std::uint64_t i = 0; i < part.n_rows(r); ++i) {
                const double expect = yg[part.first_row(r) + i] + 2.5 * xg[part.first_row(r) + i];
                REQUIRE(y.owned[i] == expect);
            }
        });
    }
}

TEST_CASE("dot and axpy trivial identities") {
    run_ranks(1, [](Transport& tp) {
        DistVector e1{{1.0, 0.0, 0.0}, {}, false};
        REQUIRE(dot(e1, e1, tp) == 1.0);
        DistVector zero{{0.0, 0.0, 0.0}, {}, false};
        REQUIRE(norm2(zero, tp) == 0.0);
        DistVector y{{2.0, 3.0, 4.0}, {}, false};
        auto before = y.owned;
        axpy(0.0, e1, y);
        REQUIRE(y.owned == before);
    });

    // all-ones dot over 4 ranks: n = 1000 -> 1000
    RowPartition part = RowPartition::contiguous(1000, 4);
    run_ranks(4, [&](Transport& tp) {
        DistVector x;
        x.owned.assign(part.n_rows(tp.rank()), 1.0);
        REQUIRE(dot(x, x, tp) == 1000.0);
    });
}

TEST_CASE("distributed ops match serial on random SPD matrices up to 20^3") {
    const std::uint64_t n = 20 * 20 * 20;
    CsrMatrix a = testsup::random_spd_sparse(n, 4, 2025);
    const auto triplets = csr_to_triplets(a);
    const auto xg = testsup::random_vector(n, 1);
    const auto yg = testsup::random_vector(n, 2);

    std::vector<double> y_serial;
    spmv_serial(a, xg, y_serial);
    const double dot_ref = testsup::dot_serial(xg, yg);
    const double norm_ref = std::sqrt(testsup::dot_serial(xg, xg));

    for (int ranks : {1, 2, 4, 8}) {
        RowPartition part = RowPartition::contiguous(n, ranks);
        run_ranks(ranks, [&](Transport& tp) {
            const int r = tp.rank();
            std::vector<Triplet> mine;
            for (const auto& t : triplets)
                if (part.owns(r, t.row)) mine.push_back(t);
            auto block = build_local_block(part.first_row(r), part.n_rows(r), n, mine);
            auto plan = build_comm_plan(part, block, tp);

            DistVector x = make_vector(block), yv = make_vector(block);
            for (std::uint64_t i = 0; i < block.n_local_rows; ++i) {
                x.owned[i] = xg[block.first_global_row + i];
                yv.owned[i] = yg[block.first_global_row + i];
            }
            halo_exchange(plan, tp, x);
            DistVector y = make_vector(block);
            spmv(block, x, y);
            for (std::uint64_t i = 0; i < block.n_local_rows; ++i) {
                const double want = y_serial[block.first_global_row + i];
                REQUIRE(std::abs(y.owned[i] - want) <=
                        1e-14 * std::max(1e-30, std::abs(want)));
            }
            const double d = dot(x, yv, tp);
            REQUIRE(std::abs(d - dot_ref) / std::abs(dot_ref) <= 1e-13);
            REQUIRE(std::abs(norm2(x, tp) - norm_ref) / norm_ref <= 1e-13);

            axpy(-1.5, x, yv);
            for (std::uint64_t i = 0; i < block.n_local_rows; ++i) {
                const double want = yg[block.first_global_row + i] -
                                    1.5 * xg[block.first_global_row + i];
                REQUIRE(yv.owned[i] == want);
            }
        });
    }
}

TEST_CASE("length mismatches are rejected") {
    DistVector a{{1.0, 2.0}, {}, false};
    DistVector b{{1.0}, {}, false};
    run_ranks(1, [&](Transport& tp) { REQUIRE_THROWS_AS(dot(a, b, tp), domain_error); });
    REQUIRE_THROWS_AS(axpy(1.0, a, b), domain_error);
}
