#include <catch2/catch_amalgamated.hpp>

#include "sparsewatt/socket_transport.hpp"
#include "sparsewatt/transport.hpp"

using namespace sparsewatt;

TEST_CASE("point to point messages match by tag") {
    run_ranks(2, [](Transport& tp) {
        if (tp.rank() == 0) {
            tp.send_doubles(1, 7, std::vector<double>{1.0, 2.0});
            tp.send_doubles(1, 9, std::vector<double>{3.0});
        } else {
            // receive out of order: tag 9 first
            REQUIRE(tp.recv_doubles(0, 9) == std::vector<double>{3.0});
            REQUIRE(tp.recv_doubles(0, 7) == std::vector<double>{1.0, 2.0});
        }
    });
}

TEST_CASE("allreduce sums deterministically and counts one event") {
    for (int n : {1, 2, 4, 8}) {
        auto counts = run_ranks_collect<std::uint64_t>(n, [&](Transport& tp) {
            double v = tp.rank() + 1.0;
            const double total = tp.allreduce_sum(v);
            REQUIRE(total == n * (n + 1) / 2.0);

            double fused[3] = {1.0, 2.0, 3.0};
            tp.allreduce_sum(std::span<double>(fused, 3));
            REQUIRE(fused[0] == 1.0 * n);
            REQUIRE(fused[2] == 3.0 * n);
            return tp.reduction_count();
        });
        for (auto c : counts) REQUIRE(c == 2); // two allreduce calls, fused width is free
    }
}

TEST_CASE("broadcast and gather") {
    run_ranks(4, [](Transport& tp) {
        std::vector<std::byte> data;
        if (tp.rank() == 2) data = {std::byte{42}, std::byte{43}};
        tp.broadcast(2, data);
        REQUIRE(data.size() == 2);
        REQUIRE(data[0] == std::byte{42});

        std::byte mine{static_cast<unsigned char>(tp.rank())};
        auto all = tp.gather(0, {&mine, 1});
        if (tp.rank() == 0) {
            REQUIRE(all.size() == 4);
            for (int r = 0; r < 4; ++r) REQUIRE(all[r][0] == std::byte{(unsigned char)r});
        }
    });
}

TEST_CASE("allgather distributes every payload everywhere") {
    run_ranks(3, [](Transport& tp) {
        std::vector<std::byte> mine(tp.rank() + 1, std::byte{(unsigned char)tp.rank()});
        auto all = tp.allgather(mine);
        REQUIRE(all.size() == 3);
        for (int r = 0; r < 3; ++r) {
            REQUIRE(all[r].size() == static_cast<std::size_t>(r + 1));
            REQUIRE(all[r][0] == std::byte{(unsigned char)r});
        }
    });
}

TEST_CASE("rank failure aborts the group instead of deadlocking") {
    REQUIRE_THROWS_AS(run_ranks(2,
                                [](Transport& tp) {
                                    if (tp.rank() == 1)
                                        throw domain_error("boom");
                                    else
                                        tp.recv(1, 5); // would block forever otherwise
                                }),
                      domain_error);
}

TEST_CASE("socket transport runs the same collectives across processes") {
    const bool ok = run_ranks_forked(3, [](Transport& tp) {
        double v = tp.rank() + 1.0;
        const double total = tp.allreduce_sum(v);
        if (total != 6.0) throw protocol_error("bad allreduce over sockets");

        std::vector<std::byte> blob;
        if (tp.rank() == 0) blob.assign(100000, std::byte{7}); // forces multi-chunk writes
        tp.broadcast(0, blob);
        if (blob.size() != 100000 || blob[99999] != std::byte{7})
            throw protocol_error("bad broadcast over sockets");

        // tag matching across the wire
        if (tp.rank() == 0) {
            tp.send_doubles(1, 11, std::vector<double>{4.0});
            tp.send_doubles(1, 12, std::vector<double>{5.0});
        } else if (tp.rank() == 1) {
            if (tp.recv_doubles(0, 12) != std::vector<double>{5.0})
                throw protocol_error("tag 12 mismatch");
            if (tp.recv_doubles(0, 11) != std::vector<double>{4.0})
                throw protocol_error("tag 11 mismatch");
        }
        tp.barrier();
    });
    REQUIRE(ok);
}
