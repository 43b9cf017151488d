// sparsewatt command-line front end.
//
//   gen      generate a Poisson benchmark matrix (MatrixMarket dump)
//   solve    run CG/PCG on a generated or loaded matrix, stats as JSON
//   bench    run a scaling experiment from a JSON config
//   energy   post-process recorded power traces + marks into a report
//   monitor  sample power to per-device files (external-monitor workflow)
//
// Exit codes: 0 success, 2 configuration error, 3 numerical breakdown,
// 1 anything else.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "sparsewatt/harness.hpp"
#include "sparsewatt/socket_transport.hpp"

namespace fs = std::filesystem;
using namespace sparsewatt;

namespace {

struct GenArgs {
    std::string stencil = "7pt";
    std::uint64_t nx = 16, ny = 16, nz = 16;
    std::string dump;
    int ranks = 1;
    std::string partition_out;
};

int run_gen(const GenArgs& a) {
    MeshSpec mesh{a.nx, a.ny, a.nz, stencil_from_string(a.stencil)};
    const TaskGrid grid = choose_task_grid(mesh, a.ranks);
    const RowPartition part = stencil_partition(mesh, grid);
    CsrMatrix m = assemble_poisson_serial(mesh);
    std::cout << "mesh " << mesh.nx << "x" << mesh.ny << "x" << mesh.nz << " stencil "
              << a.stencil << " grid " << grid.px << "x" << grid.py << "x" << grid.pz
              << " rows " << m.n_rows << " nnz " << m.nnz() << "\n";
    if (!a.dump.empty()) {
        write_matrix_market(m, a.dump);
        std::cout << "wrote " << a.dump << "\n";
    }
    if (!a.partition_out.empty()) {
        write_partition(part, a.partition_out);
        std::cout << "wrote " << a.partition_out << "\n";
    }
    return 0;
}

struct SolveArgs {
    std::string variant = "hs";
    std::string precond = "none";
    double rtol = 1e-6;
    std::uint64_t maxit = 1000;
    std::string mode = "converge";
    std::string stencil = "7pt";
    std::uint64_t nx = 16, ny = 16, nz = 16;
    std::string matrix; // MatrixMarket input instead of the stencil
    int ranks = 1;
    std::string rhs = "a_times_ones";
    std::string transport = "threads";
    std::string out;
    AmgConfig amg;
};

ordered_json solve_on_ranks(const SolveArgs& a, Transport& tp,
                            const std::vector<Triplet>& all_triplets, global_index n_global,
                            const RowPartition& part, const MeshSpec* mesh,
                            const TaskGrid* grid) {
    const int r = tp.rank();
    LocalCsrBlock block;
    if (mesh) {
        block = assemble_poisson(*mesh, *grid, r);
    } else {
        std::vector<Triplet> mine;
        for (const auto& t : all_triplets)
            if (part.owns(r, t.row)) mine.push_back(t);
        block = build_local_block(part.first_row(r), part.n_rows(r), n_global,
                                  std::move(mine));
    }
    CommPlan plan = build_comm_plan(part, block, tp);
    DistOperator A{&block, &plan, &tp};

    DistVector b = make_vector(block);
    if (a.rhs == "ones") {
        fill(b, 1.0);
    } else {
        DistVector ones = make_vector(block, 1.0);
        halo_exchange(plan, tp, ones);
        spmv(block, ones, b);
    }

    SolveConfig cfg;
    cfg.rtol = a.rtol;
    cfg.maxit = a.maxit;
    cfg.variant = cg_variant_from_string(a.variant);
    cfg.mode = solve_mode_from_string(a.mode);

    std::unique_ptr<Preconditioner> M;
    if (a.precond == "jacobi")
        M = std::make_unique<JacobiPrecond>(block);
    else if (a.precond == "amg")
        M = std::make_unique<AmgPrecond>(block, plan, tp, a.amg);
    else if (a.precond != "none")
        throw config_error("unknown preconditioner '" + a.precond + "'");

    DistVector x0 = make_vector(block);
    auto [x, stats] = cg_solve(A, b, x0, cfg, M.get());
    if (M) stats.setup_time = M->setup_seconds();

    // Max error against the constructed solution (all ones) if applicable.
    double linf_local = 0.0;
    if (a.rhs == "a_times_ones")
        for (double v : x.owned) linf_local = std::max(linf_local, std::abs(v - 1.0));
    double err_buf = linf_local;
    // max via sum trick is wrong; gather instead
    auto parts = tp.gather(0, std::as_bytes(std::span<const double>(&err_buf, 1)));
    double linf = 0.0;
    if (r == 0)
        for (const auto& p : parts) {
            double v = 0.0;
            std::memcpy(&v, p.data(), sizeof v);
            linf = std::max(linf, v);
        }

    ordered_json out;
    out["variant"] = a.variant;
    out["precond"] = a.precond;
    out["ranks"] = tp.size();
    out["n_global"] = n_global;
    out["stats"] = to_json(stats);
    if (a.rhs == "a_times_ones") out["linf_error_vs_ones"] = linf;
    return out;
}

int run_solve(const SolveArgs& a) {
    std::vector<Triplet> triplets;
    global_index n_global = 0;
    RowPartition part;
    MeshSpec mesh;
    const MeshSpec* mesh_ptr = nullptr;
    TaskGrid grid;

    if (!a.matrix.empty()) {
        CsrMatrix m = read_matrix_market(a.matrix);
        if (m.n_rows != m.n_cols) throw domain_error("solve needs a square matrix");
        triplets = csr_to_triplets(m);
        n_global = m.n_rows;
        part = RowPartition::contiguous(n_global, a.ranks);
    } else {
        mesh = MeshSpec{a.nx, a.ny, a.nz, stencil_from_string(a.stencil)};
        grid = choose_task_grid(mesh, a.ranks);
        part = stencil_partition(mesh, grid);
        n_global = mesh.n_global();
        mesh_ptr = &mesh;
    }

    auto emit = [&](const ordered_json& j) {
        if (a.out.empty())
            std::cout << j.dump(2) << "\n";
        else {
            std::ofstream os(a.out, std::ios::binary);
            os << j.dump(2) << "\n";
            std::cout << "wrote " << a.out << "\n";
        }
    };

    if (a.transport == "threads") {
        ordered_json result;
        run_ranks(a.ranks, [&](Transport& tp) {
            auto j = solve_on_ranks(a, tp, triplets, n_global, part, mesh_ptr,
                                    mesh_ptr ? &grid : nullptr);
            if (tp.rank() == 0) result = std::move(j);
        });
        emit(result);
        return 0;
    }
    if (a.transport == "sockets") {
        char tmpl[] = "/tmp/sparsewatt_solve_XXXXXX";
        const char* tmp = ::mkdtemp(tmpl);
        if (!tmp) throw io_error("mkdtemp failed");
        const fs::path result_path = fs::path(tmp) / "result.json";
        const bool ok = run_ranks_forked(a.ranks, [&](Transport& tp) {
            auto j = solve_on_ranks(a, tp, triplets, n_global, part, mesh_ptr,
                                    mesh_ptr ? &grid : nullptr);
            if (tp.rank() == 0) {
                std::ofstream os(result_path, std::ios::binary);
                os << j.dump(2) << "\n";
            }
        });
        if (!ok) throw breakdown_error("a solver rank failed (see stderr)");
        std::ifstream is(result_path, std::ios::binary);
        ordered_json j = ordered_json::parse(is);
        fs::remove_all(tmp);
        emit(j);
        return 0;
    }
    throw config_error("unknown transport '" + a.transport + "' (threads or sockets)");
}

struct BenchArgs {
    std::string config;
    std::string preset;
    std::string out = "bench_out";
    bool list_presets = false;
};

int run_bench(const BenchArgs& a) {
    if (a.list_presets) {
        for (const auto& [name, _] : experiment_presets()) std::cout << name << "\n";
        return 0;
    }
    ExperimentConfig cfg;
    if (!a.preset.empty()) {
        auto presets = experiment_presets();
        auto it = presets.find(a.preset);
        if (it == presets.end()) throw config_error("unknown preset '" + a.preset + "'");
        cfg = it->second;
    }
    if (!a.config.empty()) {
        std::ifstream is(a.config, std::ios::binary);
        if (!is) throw config_error("cannot open config " + a.config);
        nlohmann::json j;
        try {
            is >> j;
        } catch (const nlohmann::json::exception& e) {
            throw config_error(std::string("config parse: ") + e.what());
        }
        cfg = experiment_config_from_json(j);
    }
    if (a.config.empty() && a.preset.empty())
        throw config_error("bench needs --config or --preset");
    cfg.validate();

    fs::create_directories(a.out);
    if (cfg.power.output_dir.empty()) cfg.power.output_dir = (fs::path(a.out) / "traces").string();

    ExperimentReport report = run_experiment(cfg);
    emit_report_json(report, fs::path(a.out) / "report.json");
    emit_report_csv(report, fs::path(a.out) / "report.csv");
    emit_report_charts(report, fs::path(a.out) / "charts");
    std::cout << "wrote " << (fs::path(a.out) / "report.json").string() << ", report.csv, charts/"
              << "\n";
    return 0;
}

struct EnergyArgs {
    std::string traces;
    std::string marks;
    std::string region;
    std::uint64_t dofs = 0;
    std::uint64_t iterations = 0;
    double baseline_window = 0.05;
    double threshold_factor = 1.2;
    double sp_cpu = -1.0;
    double sp_gpu = -1.0;
    std::string out;
};

int run_energy(const EnergyArgs& a) {
    auto timelines = read_device_files(a.traces);
    auto marks = read_marks_file(a.marks);

    EnergyOptions opt;
    opt.baseline_window = a.baseline_window;
    opt.threshold_factor = a.threshold_factor;
    if (a.sp_cpu >= 0) opt.static_power_override["cpu"] = a.sp_cpu;
    if (a.sp_gpu >= 0) opt.static_power_override["gpu"] = a.sp_gpu;
    if (!a.region.empty()) {
        opt.region_name = a.region;
    } else {
        auto regions = reconstruct_regions(marks);
        if (regions.size() != 1)
            throw config_error("trace has " + std::to_string(regions.size()) +
                               " regions; pick one with --region");
        opt.region_name = regions.front().name;
    }

    EnergyReport report = build_energy_report(timelines, marks, opt);
    ordered_json j = to_json(report);
    if (a.dofs > 0 && a.iterations > 0)
        j["metrics"] = to_json(compute_metrics(report, a.dofs, a.iterations));

    if (a.out.empty())
        std::cout << j.dump(2) << "\n";
    else {
        std::ofstream os(a.out, std::ios::binary);
        os << j.dump(2) << "\n";
        std::cout << "wrote " << a.out << "\n";
    }
    return 0;
}

struct MonitorArgs {
    std::string backend = "powercap_files";
    std::string out = "power_out";
    double period = 1e-3;
    double duration = 10.0;
    double idle_w = 30.0;
    std::string powercap_root;
};

int run_monitor(const MonitorArgs& a) {
    std::unique_ptr<PowerBackend> backend;
    if (a.backend == "powercap_files")
        backend = std::make_unique<PowercapBackend>(
            a.powercap_root.empty() ? fs::path{} : fs::path(a.powercap_root));
    else if (a.backend == "synthetic") {
        auto s = std::make_unique<SyntheticBackend>();
        s->add_device("cpu0", [w = a.idle_w](double) { return w; });
        backend = std::move(s);
    } else
        throw config_error("monitor backend must be powercap_files or synthetic");

    fs::create_directories(a.out);
    RealClock clock;
    write_epoch_file(a.out, unix_now() - clock.now());
    Sampler sampler(*backend, clock, a.period);
    sampler.start();
    clock.sleep_for(a.duration);
    sampler.stop();
    write_device_files(sampler.timelines(), a.out);
    std::size_t total = 0;
    for (const auto& tl : sampler.timelines()) total += tl.samples.size();
    std::cout << "wrote " << sampler.timelines().size() << " device file(s), " << total
              << " samples to " << a.out << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"sparse solver benchmark suite with energy accounting"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* cmd_gen = app.add_subcommand("gen", "generate a Poisson benchmark matrix");
    cmd_gen->add_option("--stencil", gen.stencil)->check(CLI::IsMember({"7pt", "27pt"}));
    cmd_gen->add_option("--nx", gen.nx)->required();
    cmd_gen->add_option("--ny", gen.ny)->required();
    cmd_gen->add_option("--nz", gen.nz)->required();
    cmd_gen->add_option("--dump", gen.dump, "write MatrixMarket file");
    cmd_gen->add_option("--ranks", gen.ranks, "task count for the partition descriptor");
    cmd_gen->add_option("--partition", gen.partition_out, "write partition JSON");

    SolveArgs solve;
    auto* cmd_solve = app.add_subcommand("solve", "solve a Poisson or MatrixMarket system");
    cmd_solve->add_option("--variant", solve.variant)
        ->check(CLI::IsMember({"hs", "fused", "flexible"}));
    cmd_solve->add_option("--precond", solve.precond)
        ->check(CLI::IsMember({"none", "jacobi", "amg"}));
    cmd_solve->add_option("--rtol", solve.rtol);
    cmd_solve->add_option("--maxit", solve.maxit);
    cmd_solve->add_option("--mode", solve.mode)
        ->check(CLI::IsMember({"converge", "fixed", "fixed_iterations"}));
    cmd_solve->add_option("--stencil", solve.stencil)->check(CLI::IsMember({"7pt", "27pt"}));
    cmd_solve->add_option("--nx", solve.nx);
    cmd_solve->add_option("--ny", solve.ny);
    cmd_solve->add_option("--nz", solve.nz);
    cmd_solve->add_option("--matrix", solve.matrix, "MatrixMarket input");
    cmd_solve->add_option("--ranks", solve.ranks);
    cmd_solve->add_option("--rhs", solve.rhs)->check(CLI::IsMember({"a_times_ones", "ones"}));
    cmd_solve->add_option("--transport", solve.transport)
        ->check(CLI::IsMember({"threads", "sockets"}));
    cmd_solve->add_option("--out", solve.out, "write stats JSON here");

    BenchArgs bench;
    auto* cmd_bench = app.add_subcommand("bench", "run a scaling experiment");
    cmd_bench->add_option("--config", bench.config, "experiment config JSON");
    cmd_bench->add_option("--preset", bench.preset, "named preset (see --list-presets)");
    cmd_bench->add_option("--out", bench.out, "output directory");
    cmd_bench->add_flag("--list-presets", bench.list_presets);

    EnergyArgs energy;
    auto* cmd_energy = app.add_subcommand("energy", "post-process recorded power traces");
    cmd_energy->add_option("--traces", energy.traces)->required();
    cmd_energy->add_option("--marks", energy.marks)->required();
    cmd_energy->add_option("--region", energy.region);
    cmd_energy->add_option("--dofs", energy.dofs);
    cmd_energy->add_option("--iterations", energy.iterations);
    cmd_energy->add_option("--baseline-window", energy.baseline_window);
    cmd_energy->add_option("--threshold-factor", energy.threshold_factor);
    cmd_energy->add_option("--sp-cpu", energy.sp_cpu, "static power override, watts");
    cmd_energy->add_option("--sp-gpu", energy.sp_gpu, "static power override, watts");
    cmd_energy->add_option("--out", energy.out);

    MonitorArgs monitor;
    auto* cmd_monitor = app.add_subcommand("monitor", "sample power to per-device files");
    cmd_monitor->add_option("--backend", monitor.backend)
        ->check(CLI::IsMember({"powercap_files", "synthetic"}));
    cmd_monitor->add_option("--out", monitor.out);
    cmd_monitor->add_option("--period", monitor.period);
    cmd_monitor->add_option("--duration", monitor.duration);
    cmd_monitor->add_option("--idle-w", monitor.idle_w);
    cmd_monitor->add_option("--powercap-root", monitor.powercap_root);

    try {
        app.parse(argc, argv);
        if (cmd_gen->parsed()) return run_gen(gen);
        if (cmd_solve->parsed()) return run_solve(solve);
        if (cmd_bench->parsed()) return run_bench(bench);
        if (cmd_energy->parsed()) return run_energy(energy);
        if (cmd_monitor->parsed()) return run_monitor(monitor);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const parse_error& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return 2;
    } catch (const sizing_error& e) {
        std::cerr << "sizing error: " << e.what() << "\n";
        return 2;
    } catch (const breakdown_error& e) {
        std::cerr << "numerical breakdown: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
