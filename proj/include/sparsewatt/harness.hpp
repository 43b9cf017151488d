#pragma once

// Experiment orchestration: sizes each rank count, assembles the stencil
// matrices (strictly before any measured region), runs the kernel under a
// live sampler with per-run marker regions, and turns the timelines into
// per-run energy reports plus per-rank-count aggregates.
//
// Protocol defaults follow the benchmark methodology: five independent
// runs, 100 repetitions per run for SpMV, weak/strong sizing, and energy
// attribution that excludes matrix assembly.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "sparsewatt/amg.hpp"
#include "sparsewatt/cg.hpp"
#include "sparsewatt/charts.hpp"
#include "sparsewatt/energy.hpp"
#include "sparsewatt/sensors.hpp"
#include "sparsewatt/stencil.hpp"
#include "sparsewatt/transport.hpp"

namespace sparsewatt {

using nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Configuration

struct PowerConfig {
    std::string backend = "synthetic"; // synthetic | trace_replay | powercap_files
    double period = 1e-3;              // counter files update at ~1 ms; default matches
    std::string output_dir;            // when set, device/marks files land here

    // synthetic backend shape
    std::vector<std::string> devices = {"gpu0", "cpu0"};
    double idle_w = 30.0;
    double active_w = 10.0; // added on top of idle while the workload runs
    double noise_sigma = 0.0;

    std::string trace_dir;     // trace_replay
    std::string powercap_root; // powercap_files; empty -> env / system default

    double baseline_window = 0.05;
    double threshold_factor = 1.2;
    double idle_pad_s = 0.15; // idle dwell before/after each run

    void validate() const {
        if (backend != "synthetic" && backend != "trace_replay" && backend != "powercap_files")
            throw config_error("unknown power backend '" + backend + "'");
        if (!(period > 0)) throw config_error("power.period must be positive");
        if (!(baseline_window > 0)) throw config_error("power.baseline_window must be positive");
        if (idle_pad_s < baseline_window)
            throw config_error("power.idle_pad_s must be >= power.baseline_window");
        if (backend == "trace_replay" && trace_dir.empty())
            throw config_error("trace_replay backend needs power.trace_dir");
    }
};

struct ExperimentConfig {
    std::string kernel = "spmv"; // spmv | cg | pcg
    Stencil stencil = Stencil::seven_point;
    ScalingMode mode = ScalingMode::weak;
    std::uint64_t base_dofs = 32768; // 32^3 per rank (weak) or total (strong)
    std::vector<int> rank_counts = {1, 2, 4, 8};
    int runs = 5;
    int reps = 100;                   // SpMV repetitions per run
    std::string rhs = "a_times_ones"; // or "ones"
    SolveConfig solver;
    std::string precond = "none"; // none | jacobi | amg (pcg defaults to amg)
    AmgConfig amg;
    PowerConfig power;
    std::uint64_t seed = 0;

    void validate() const {
        if (kernel != "spmv" && kernel != "cg" && kernel != "pcg")
            throw config_error("unknown kernel '" + kernel + "'");
        if (rank_counts.empty()) throw config_error("rank_counts must be non-empty");
        for (int r : rank_counts)
            if (r < 1) throw config_error("rank counts must be positive");
        if (runs < 1) throw config_error("runs must be at least 1");
        if (kernel == "spmv" && reps < 1) throw config_error("reps must be at least 1");
        if (rhs != "a_times_ones" && rhs != "ones")
            throw config_error("rhs must be a_times_ones or ones");
        if (precond != "none" && precond != "jacobi" && precond != "amg")
            throw config_error("unknown preconditioner '" + precond + "'");
        if (kernel == "cg" && precond != "none")
            throw config_error("kernel cg is unpreconditioned; use kernel pcg");
        solver.validate();
        amg.validate();
        power.validate();
    }

    std::string effective_precond() const {
        if (kernel == "pcg") return precond == "none" ? "amg" : precond;
        return "none";
    }
};

// ---------------------------------------------------------------------------
// Config JSON

inline ordered_json to_json(const SolveConfig& s) {
    return {{"rtol", s.rtol},
            {"maxit", s.maxit},
            {"variant", to_string(s.variant)},
            {"mode", to_string(s.mode)}};
}

inline SolveConfig solve_config_from_json(const nlohmann::json& j) {
    SolveConfig s;
    if (j.contains("rtol")) s.rtol = j.at("rtol").get<double>();
    if (j.contains("maxit")) s.maxit = j.at("maxit").get<std::uint64_t>();
    if (j.contains("variant")) s.variant = cg_variant_from_string(j.at("variant"));
    if (j.contains("mode")) s.mode = solve_mode_from_string(j.at("mode"));
    return s;
}

inline ordered_json to_json(const AmgConfig& a) {
    return {{"aggregate_passes", a.aggregate_passes},
            {"max_levels", a.max_levels},
            {"min_coarse_size", a.min_coarse_size},
            {"smoother_sweeps", a.smoother_sweeps},
            {"split_total_sweeps", a.split_total_sweeps}};
}

inline AmgConfig amg_config_from_json(const nlohmann::json& j) {
    AmgConfig a;
    if (j.contains("aggregate_passes")) a.aggregate_passes = j.at("aggregate_passes");
    if (j.contains("max_levels")) a.max_levels = j.at("max_levels");
    if (j.contains("min_coarse_size"))
        a.min_coarse_size = j.at("min_coarse_size").get<std::uint64_t>();
    if (j.contains("smoother_sweeps")) a.smoother_sweeps = j.at("smoother_sweeps");
    if (j.contains("split_total_sweeps")) a.split_total_sweeps = j.at("split_total_sweeps");
    return a;
}

inline ordered_json to_json(const PowerConfig& p) {
    return {{"backend", p.backend},
            {"period", p.period},
            {"output_dir", p.output_dir},
            {"devices", p.devices},
            {"idle_w", p.idle_w},
            {"active_w", p.active_w},
            {"noise_sigma", p.noise_sigma},
            {"trace_dir", p.trace_dir},
            {"powercap_root", p.powercap_root},
            {"baseline_window", p.baseline_window},
            {"threshold_factor", p.threshold_factor},
            {"idle_pad_s", p.idle_pad_s}};
}

inline PowerConfig power_config_from_json(const nlohmann::json& j) {
    PowerConfig p;
    if (j.contains("backend")) p.backend = j.at("backend");
    if (j.contains("period")) p.period = j.at("period");
    if (j.contains("output_dir")) p.output_dir = j.at("output_dir");
    if (j.contains("devices")) p.devices = j.at("devices").get<std::vector<std::string>>();
    if (j.contains("idle_w")) p.idle_w = j.at("idle_w");
    if (j.contains("active_w")) p.active_w = j.at("active_w");
    if (j.contains("noise_sigma")) p.noise_sigma = j.at("noise_sigma");
    if (j.contains("trace_dir")) p.trace_dir = j.at("trace_dir");
    if (j.contains("powercap_root")) p.powercap_root = j.at("powercap_root");
    if (j.contains("baseline_window")) p.baseline_window = j.at("baseline_window");
    if (j.contains("threshold_factor")) p.threshold_factor = j.at("threshold_factor");
    if (j.contains("idle_pad_s")) p.idle_pad_s = j.at("idle_pad_s");
    return p;
}

inline ordered_json to_json(const ExperimentConfig& c) {
    return {{"kernel", c.kernel},
            {"stencil", to_string(c.stencil)},
            {"mode", to_string(c.mode)},
            {"base_dofs", c.base_dofs},
            {"rank_counts", c.rank_counts},
            {"runs", c.runs},
            {"reps", c.reps},
            {"rhs", c.rhs},
            {"solver", to_json(c.solver)},
            {"precond", c.precond},
            {"amg", to_json(c.amg)},
            {"power", to_json(c.power)},
            {"seed", c.seed}};
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
    static const std::vector<std::string> known = {
        "kernel", "stencil", "mode",    "base_dofs", "rank_counts", "runs", "reps",
        "rhs",    "solver",  "precond", "amg",       "power",       "seed"};
    for (const auto& [key, _] : j.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw config_error("unknown config key '" + key + "'");
    ExperimentConfig c;
    if (j.contains("kernel")) c.kernel = j.at("kernel");
    if (j.contains("stencil")) c.stencil = stencil_from_string(j.at("stencil"));
    if (j.contains("mode")) c.mode = scaling_mode_from_string(j.at("mode"));
    if (j.contains("base_dofs")) c.base_dofs = j.at("base_dofs").get<std::uint64_t>();
    if (j.contains("rank_counts")) c.rank_counts = j.at("rank_counts").get<std::vector<int>>();
    if (j.contains("runs")) c.runs = j.at("runs");
    if (j.contains("reps")) c.reps = j.at("reps");
    if (j.contains("rhs")) c.rhs = j.at("rhs");
    if (j.contains("solver")) c.solver = solve_config_from_json(j.at("solver"));
    if (j.contains("precond")) c.precond = j.at("precond");
    if (j.contains("amg")) c.amg = amg_config_from_json(j.at("amg"));
    if (j.contains("power")) c.power = power_config_from_json(j.at("power"));
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Report structures

struct RunRecord {
    int rank_count = 0;
    int run = 0;
    std::uint64_t n_global = 0;
    MeshSpec mesh;
    TaskGrid grid;
    double assemble_s = 0.0;
    double assemble_end_t = 0.0;
    double region_t0 = 0.0;
    double region_t1 = 0.0;
    SolveStats stats;
    EnergyReport energy;
    DerivedMetrics metrics;
};

struct Stat {
    double mean = 0.0, min = 0.0, max = 0.0;
};

struct Aggregate {
    int rank_count = 0;
    int n_runs = 0;
    std::uint64_t n_global = 0;
    Stat solve_s, setup_s, de_total_j, j_per_dof, j_per_iteration, iterations;
    std::map<std::string, double> mean_de_by_class;
    std::map<std::string, double> mean_peak_by_class;
};

struct ExperimentReport {
    ExperimentConfig config;
    std::vector<RunRecord> entries;
    std::vector<Aggregate> aggregates;
};

// ---------------------------------------------------------------------------
// Deterministic per-index values (same global vector under any partition).

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline double seeded_value(std::uint64_t seed, std::uint64_t index) {
    return static_cast<double>(splitmix64(seed ^ splitmix64(index + 1)) >> 11) * 0x1.0p-53;
}

// ---------------------------------------------------------------------------

namespace detail {

inline std::unique_ptr<PowerBackend> make_power_backend(const PowerConfig& cfg,
                                                        const std::atomic<double>& activity,
                                                        std::uint64_t seed) {
    if (cfg.backend == "trace_replay")
        return std::make_unique<TraceReplayBackend>(cfg.trace_dir);
    if (cfg.backend == "powercap_files")
        return std::make_unique<PowercapBackend>(cfg.powercap_root.empty()
                                                     ? std::filesystem::path{}
                                                     : std::filesystem::path(cfg.powercap_root));
    auto backend = std::make_unique<SyntheticBackend>();
    for (std::size_t d = 0; d < cfg.devices.size(); ++d) {
        auto rng = std::make_shared<std::mt19937_64>(splitmix64(seed + d + 1));
        const double idle = cfg.idle_w, active = cfg.active_w, sigma = cfg.noise_sigma;
        backend->add_device(cfg.devices[d], [&activity, rng, idle, active, sigma](double) {
            double w = idle + active * activity.load(std::memory_order_relaxed);
            if (sigma > 0) {
                std::normal_distribution<double> noise(0.0, sigma);
                w += noise(*rng);
            }
            return std::max(0.0, w);
        });
    }
    return backend;
}

inline PowerTimeline slice_timeline(const PowerTimeline& tl, double t0, double t1) {
    PowerTimeline out{tl.device, {}};
    for (const auto& s : tl.samples)
        if (s.t >= t0 && s.t <= t1) out.samples.push_back(s);
    return out;
}

} // namespace detail

/// Runs the configured experiment. Linear-algebra results are
/// deterministic for a given seed; wall times and energies reflect the
/// actual execution.
inline ExperimentReport run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    Clock& clock = default_clock();
    ExperimentReport report;
    report.config = cfg;

    for (int ranks : cfg.rank_counts) {
        const auto sized = size_experiment(cfg.mode, cfg.base_dofs, ranks, cfg.stencil);
        const MeshSpec mesh = sized.mesh;
        const TaskGrid grid = sized.grid;
        const RowPartition part = stencil_partition(mesh, grid);

        // Input generation happens strictly before any measured region.
        const double t_asm0 = clock.now();
        std::vector<LocalCsrBlock> blocks(ranks);
        std::vector<CommPlan> plans(ranks);
        run_ranks(ranks, [&](Transport& tp) {
            blocks[tp.rank()] = assemble_poisson(mesh, grid, tp.rank());
            plans[tp.rank()] = build_comm_plan(part, blocks[tp.rank()], tp);
        });
        const double assemble_s = clock.now() - t_asm0;

        // One untimed warm-up application of the operator.
        run_ranks(ranks, [&](Transport& tp) {
            DistVector ones = make_vector(blocks[tp.rank()], 1.0);
            DistVector y = make_vector(blocks[tp.rank()]);
            halo_exchange(plans[tp.rank()], tp, ones);
            spmv(blocks[tp.rank()], ones, y);
        });
        const double assemble_end_t = clock.now();

        std::atomic<double> activity{0.0};
        auto backend = detail::make_power_backend(
            cfg.power, activity, splitmix64(cfg.seed ^ static_cast<std::uint64_t>(ranks)));
        Sampler sampler(*backend, clock, cfg.power.period);
        MarkStream marks(&clock);
        sampler.start();

        struct RunOutcome {
            SolveStats stats;
            double t0, t1;
        };
        std::vector<RunOutcome> outcomes;

        for (int run = 0; run < cfg.runs; ++run) {
            clock.sleep_for(cfg.power.idle_pad_s);
            const std::string region = "run_" + std::to_string(run);
            SolveStats run_stats;

            marks.mark(region, MarkKind::begin);
            const double t0 = clock.now();
            activity.store(1.0, std::memory_order_relaxed);
            run_ranks(ranks, [&](Transport& tp) {
                const int r = tp.rank();
                DistOperator A{&blocks[r], &plans[r], &tp};

                DistVector b = make_vector(blocks[r]);
                if (cfg.rhs == "ones") {
                    fill(b, 1.0);
                } else {
                    DistVector ones = make_vector(blocks[r], 1.0);
                    halo_exchange(plans[r], tp, ones);
                    spmv(blocks[r], ones, b);
                }

                if (cfg.kernel == "spmv") {
                    DistVector x = make_vector(blocks[r]);
                    for (std::uint64_t i = 0; i < blocks[r].n_local_rows; ++i)
                        x.owned[i] =
                            seeded_value(cfg.seed, blocks[r].first_global_row + i);
                    DistVector y = make_vector(blocks[r]);
                    const double t_loop = clock.now();
                    for (int rep = 0; rep < cfg.reps; ++rep) {
                        halo_exchange(plans[r], tp, x);
                        spmv(blocks[r], x, y);
                    }
                    if (r == 0) {
                        run_stats.iterations = static_cast<std::uint64_t>(cfg.reps);
                        run_stats.solve_time = clock.now() - t_loop;
                    }
                } else {
                    std::unique_ptr<Preconditioner> M;
                    const std::string pc = cfg.effective_precond();
                    if (pc == "jacobi")
                        M = std::make_unique<JacobiPrecond>(blocks[r]);
                    else if (pc == "amg")
                        M = std::make_unique<AmgPrecond>(blocks[r], plans[r], tp, cfg.amg,
                                                         &clock);
                    DistVector x0 = make_vector(blocks[r]);
                    auto [x, st] = cg_solve(A, b, x0, cfg.solver, M.get(), &clock);
                    if (M) st.setup_time = M->setup_seconds();
                    if (r == 0) run_stats = std::move(st);
                }
            });
            activity.store(0.0, std::memory_order_relaxed);
            marks.mark(region, MarkKind::end);
            const double t1 = clock.now();
            clock.sleep_for(cfg.power.idle_pad_s);
            outcomes.push_back({std::move(run_stats), t0, t1});
        }
        sampler.stop();
        const auto& timelines = sampler.timelines();
        const auto all_marks = marks.marks();

        if (!cfg.power.output_dir.empty()) {
            const auto dir = std::filesystem::path(cfg.power.output_dir) /
                             ("ranks_" + std::to_string(ranks));
            write_device_files(timelines, dir);
            write_marks_file(all_marks, dir / "marks.csv");
            write_epoch_file(dir, unix_now() - clock.now());
        }

        for (int run = 0; run < cfg.runs; ++run) {
            const auto& oc = outcomes[run];
            RunRecord rec;
            rec.rank_count = ranks;
            rec.run = run;
            rec.n_global = mesh.n_global();
            rec.mesh = mesh;
            rec.grid = grid;
            rec.assemble_s = assemble_s;
            rec.assemble_end_t = assemble_end_t;
            rec.region_t0 = oc.t0;
            rec.region_t1 = oc.t1;
            rec.stats = oc.stats;

            std::vector<PowerTimeline> sliced;
            for (const auto& tl : timelines)
                sliced.push_back(detail::slice_timeline(tl, oc.t0 - cfg.power.idle_pad_s,
                                                        oc.t1 + cfg.power.idle_pad_s));
            EnergyOptions opt;
            opt.baseline_window = cfg.power.baseline_window;
            opt.threshold_factor = cfg.power.threshold_factor;
            opt.region_name = "run_" + std::to_string(run);
            rec.energy = build_energy_report(sliced, all_marks, opt);
            rec.metrics = compute_metrics(rec.energy, rec.n_global,
                                          std::max<std::uint64_t>(1, rec.stats.iterations));
            report.entries.push_back(std::move(rec));
        }

        // Aggregate over exactly `runs` entries.
        Aggregate agg;
        agg.rank_count = ranks;
        agg.n_runs = cfg.runs;
        agg.n_global = mesh.n_global();
        auto fold = [&](auto getter) {
            Stat s;
            bool first = true;
            for (const auto& rec : report.entries) {
                if (rec.rank_count != ranks) continue;
                const double v = getter(rec);
                s.mean += v;
                s.min = first ? v : std::min(s.min, v);
                s.max = first ? v : std::max(s.max, v);
                first = false;
            }
            s.mean /= cfg.runs;
            return s;
        };
        agg.solve_s = fold([](const RunRecord& r) { return r.stats.solve_time; });
        agg.setup_s = fold([](const RunRecord& r) { return r.stats.setup_time; });
        agg.de_total_j = fold([](const RunRecord& r) { return r.energy.de_total_j; });
        agg.j_per_dof = fold([](const RunRecord& r) { return r.metrics.j_per_dof; });
        agg.j_per_iteration =
            fold([](const RunRecord& r) { return r.metrics.j_per_iteration; });
        agg.iterations =
            fold([](const RunRecord& r) { return static_cast<double>(r.stats.iterations); });
        for (const auto& rec : report.entries) {
            if (rec.rank_count != ranks) continue;
            for (const auto& [cls, ce] : rec.energy.classes) {
                agg.mean_de_by_class[cls] += ce.de_j / cfg.runs;
                agg.mean_peak_by_class[cls] += ce.peak_w / cfg.runs;
            }
        }
        report.aggregates.push_back(std::move(agg));
    }
    return report;
}

// ---------------------------------------------------------------------------
// Report JSON

inline ordered_json to_json(const SolveStats& s) {
    return {{"iterations", s.iterations},
            {"relres_history", s.relres_history},
            {"setup_time", s.setup_time},
            {"solve_time", s.solve_time},
            {"per_iteration_marks", s.per_iteration_marks},
            {"final_explicit_relres", s.final_explicit_relres},
            {"loop_reductions", s.loop_reductions},
            {"converged", s.converged}};
}

inline SolveStats solve_stats_from_json(const nlohmann::json& j) {
    SolveStats s;
    s.iterations = j.at("iterations").get<std::uint64_t>();
    s.relres_history = j.at("relres_history").get<std::vector<double>>();
    s.setup_time = j.at("setup_time").get<double>();
    s.solve_time = j.at("solve_time").get<double>();
    s.per_iteration_marks = j.at("per_iteration_marks").get<std::vector<double>>();
    s.final_explicit_relres = j.at("final_explicit_relres").get<double>();
    s.loop_reductions = j.at("loop_reductions").get<std::uint64_t>();
    s.converged = j.at("converged").get<bool>();
    return s;
}

inline ordered_json to_json(const Stat& s) {
    return {{"mean", s.mean}, {"min", s.min}, {"max", s.max}};
}

inline Stat stat_from_json(const nlohmann::json& j) {
    return {j.at("mean").get<double>(), j.at("min").get<double>(), j.at("max").get<double>()};
}

inline ordered_json to_json(const RunRecord& r) {
    return {{"rank_count", r.rank_count},
            {"run", r.run},
            {"n_global", r.n_global},
            {"mesh", {{"nx", r.mesh.nx}, {"ny", r.mesh.ny}, {"nz", r.mesh.nz}}},
            {"grid", {{"px", r.grid.px}, {"py", r.grid.py}, {"pz", r.grid.pz}}},
            {"assemble_s", r.assemble_s},
            {"assemble_end_t", r.assemble_end_t},
            {"region_t0", r.region_t0},
            {"region_t1", r.region_t1},
            {"stats", to_json(r.stats)},
            {"energy", to_json(r.energy)},
            {"metrics", to_json(r.metrics)}};
}

inline RunRecord run_record_from_json(const nlohmann::json& j, Stencil stencil) {
    RunRecord r;
    r.rank_count = j.at("rank_count");
    r.run = j.at("run");
    r.n_global = j.at("n_global").get<std::uint64_t>();
    r.mesh = {j.at("mesh").at("nx").get<std::uint64_t>(),
              j.at("mesh").at("ny").get<std::uint64_t>(),
              j.at("mesh").at("nz").get<std::uint64_t>(), stencil};
    r.grid = {j.at("grid").at("px").get<int>(), j.at("grid").at("py").get<int>(),
              j.at("grid").at("pz").get<int>()};
    r.assemble_s = j.at("assemble_s");
    r.assemble_end_t = j.at("assemble_end_t");
    r.region_t0 = j.at("region_t0");
    r.region_t1 = j.at("region_t1");
    r.stats = solve_stats_from_json(j.at("stats"));
    r.energy = energy_report_from_json(j.at("energy"));
    r.metrics = metrics_from_json(j.at("metrics"));
    return r;
}

inline ordered_json to_json(const Aggregate& a) {
    ordered_json de = ordered_json::object(), peak = ordered_json::object();
    for (const auto& [cls, v] : a.mean_de_by_class) de[cls] = v;
    for (const auto& [cls, v] : a.mean_peak_by_class) peak[cls] = v;
    return {{"rank_count", a.rank_count},
            {"n_runs", a.n_runs},
            {"n_global", a.n_global},
            {"solve_s", to_json(a.solve_s)},
            {"setup_s", to_json(a.setup_s)},
            {"de_total_j", to_json(a.de_total_j)},
            {"j_per_dof", to_json(a.j_per_dof)},
            {"j_per_iteration", to_json(a.j_per_iteration)},
            {"iterations", to_json(a.iterations)},
            {"mean_de_by_class", de},
            {"mean_peak_by_class", peak}};
}

inline Aggregate aggregate_from_json(const nlohmann::json& j) {
    Aggregate a;
    a.rank_count = j.at("rank_count");
    a.n_runs = j.at("n_runs");
    a.n_global = j.at("n_global").get<std::uint64_t>();
    a.solve_s = stat_from_json(j.at("solve_s"));
    a.setup_s = stat_from_json(j.at("setup_s"));
    a.de_total_j = stat_from_json(j.at("de_total_j"));
    a.j_per_dof = stat_from_json(j.at("j_per_dof"));
    a.j_per_iteration = stat_from_json(j.at("j_per_iteration"));
    a.iterations = stat_from_json(j.at("iterations"));
    for (const auto& [cls, v] : j.at("mean_de_by_class").items())
        a.mean_de_by_class[cls] = v.get<double>();
    for (const auto& [cls, v] : j.at("mean_peak_by_class").items())
        a.mean_peak_by_class[cls] = v.get<double>();
    return a;
}

inline ordered_json to_json(const ExperimentReport& r) {
    ordered_json entries = ordered_json::array(), aggregates = ordered_json::array();
    for (const auto& e : r.entries) entries.push_back(to_json(e));
    for (const auto& a : r.aggregates) aggregates.push_back(to_json(a));
    return {{"config", to_json(r.config)}, {"entries", entries}, {"aggregates", aggregates}};
}

inline ExperimentReport report_from_json(const nlohmann::json& j) {
    ExperimentReport r;
    r.config = experiment_config_from_json(j.at("config"));
    for (const auto& e : j.at("entries"))
        r.entries.push_back(run_record_from_json(e, r.config.stencil));
    for (const auto& a : j.at("aggregates")) r.aggregates.push_back(aggregate_from_json(a));
    return r;
}

inline void emit_report_json(const ExperimentReport& r, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("cannot write " + path.string());
    os << to_json(r).dump(2) << "\n";
}

inline ExperimentReport read_report_json(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open " + path.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw parse_error(path.string() + ": " + e.what());
    }
    return report_from_json(j);
}

// ---------------------------------------------------------------------------
// CSV: one row per (rank_count, run), one aggregate (mean) row per
// rank_count carrying min/max in the trailing columns.

inline void emit_report_csv(const ExperimentReport& r, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("cannot write " + path.string());
    auto g = [](double v) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.12g", v);
        return std::string(buf);
    };
    auto cls = [&](const EnergyReport& e, const std::string& c,
                   double ClassEnergy::* field) {
        auto it = e.classes.find(c);
        return it == e.classes.end() ? std::string("0") : g(it->second.*field);
    };

    os << "rank_count,run,n_global,iterations,assemble_s,setup_s,solve_s,"
          "te_cpu_j,de_cpu_j,te_gpu_j,de_gpu_j,de_total_j,j_per_dof,j_per_iteration,"
          "peak_w_cpu,peak_w_gpu,solve_s_min,solve_s_max,de_total_j_min,de_total_j_max\n";
    for (const auto& e : r.entries) {
        os << e.rank_count << "," << e.run << "," << e.n_global << "," << e.stats.iterations
           << "," << g(e.assemble_s) << "," << g(e.stats.setup_time) << ","
           << g(e.stats.solve_time) << "," << cls(e.energy, "cpu", &ClassEnergy::te_j) << ","
           << cls(e.energy, "cpu", &ClassEnergy::de_j) << ","
           << cls(e.energy, "gpu", &ClassEnergy::te_j) << ","
           << cls(e.energy, "gpu", &ClassEnergy::de_j) << "," << g(e.energy.de_total_j) << ","
           << g(e.metrics.j_per_dof) << "," << g(e.metrics.j_per_iteration) << ","
           << cls(e.energy, "cpu", &ClassEnergy::peak_w) << ","
           << cls(e.energy, "gpu", &ClassEnergy::peak_w) << ",,,,\n";
    }
    for (const auto& a : r.aggregates) {
        auto by_class = [&](const std::map<std::string, double>& m, const std::string& c) {
            auto it = m.find(c);
            return it == m.end() ? std::string("0") : g(it->second);
        };
        os << a.rank_count << ",mean," << a.n_global << "," << g(a.iterations.mean) << ",,"
           << g(a.setup_s.mean) << "," << g(a.solve_s.mean) << ",,"
           << by_class(a.mean_de_by_class, "cpu") << ",,"
           << by_class(a.mean_de_by_class, "gpu") << "," << g(a.de_total_j.mean) << ","
           << g(a.j_per_dof.mean) << "," << g(a.j_per_iteration.mean) << ","
           << by_class(a.mean_peak_by_class, "cpu") << ","
           << by_class(a.mean_peak_by_class, "gpu") << "," << g(a.solve_s.min) << ","
           << g(a.solve_s.max) << "," << g(a.de_total_j.min) << "," << g(a.de_total_j.max)
           << "\n";
    }
}

// ---------------------------------------------------------------------------
// Charts

inline void emit_report_charts(const ExperimentReport& r, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::vector<double> xs;
    std::vector<std::string> cats;
    for (const auto& a : r.aggregates) {
        xs.push_back(a.rank_count);
        cats.push_back(std::to_string(a.rank_count));
    }

    std::vector<std::string> classes;
    for (const auto& a : r.aggregates)
        for (const auto& [cls, _] : a.mean_de_by_class)
            if (std::find(classes.begin(), classes.end(), cls) == classes.end())
                classes.push_back(cls);
    std::sort(classes.begin(), classes.end());

    {
        std::vector<ChartSeries> series{{"solve", {}}, {"setup", {}}};
        for (const auto& a : r.aggregates) {
            series[0].values.push_back(a.solve_s.mean);
            series[1].values.push_back(a.setup_s.mean);
        }
        svg_line_chart(dir / "time_vs_ranks.svg", r.config.kernel + " wall time", xs, series,
                       "ranks", "seconds");
    }
    {
        std::vector<ChartSeries> layers;
        for (const auto& cls : classes) {
            ChartSeries s{"de_" + cls, {}};
            for (const auto& a : r.aggregates) {
                auto it = a.mean_de_by_class.find(cls);
                s.values.push_back(it == a.mean_de_by_class.end() ? 0.0 : it->second);
            }
            layers.push_back(std::move(s));
        }
        svg_stacked_bars(dir / "de_breakdown.svg", "dynamic energy by device class", cats,
                         layers, "ranks", "joules");
    }
    {
        std::vector<ChartSeries> layers{{"j_per_dof", {}}};
        for (const auto& a : r.aggregates) layers[0].values.push_back(a.j_per_dof.mean);
        svg_stacked_bars(dir / "j_per_dof.svg", "dynamic energy per DOF", cats, layers,
                         "ranks", "J/DOF");
    }
    {
        std::vector<ChartSeries> layers{{"j_per_iteration", {}}};
        for (const auto& a : r.aggregates)
            layers[0].values.push_back(a.j_per_iteration.mean);
        svg_stacked_bars(dir / "j_per_iteration.svg", "dynamic energy per iteration", cats,
                         layers, "ranks", "J/iteration");
    }
    {
        std::vector<ChartSeries> series;
        for (const auto& cls : classes) {
            ChartSeries s{"peak_" + cls, {}};
            for (const auto& a : r.aggregates) {
                auto it = a.mean_peak_by_class.find(cls);
                s.values.push_back(it == a.mean_peak_by_class.end() ? 0.0 : it->second);
            }
            series.push_back(std::move(s));
        }
        svg_line_chart(dir / "peak_w.svg", "power peak", xs, series, "ranks", "watts");
    }
}

// ---------------------------------------------------------------------------
// Named presets: the benchmark sizes from the reference methodology plus a
// desk-scale default. The memory-saturating sizes are far beyond desk
// hardware; they are provided for completeness, not as defaults.

inline std::map<std::string, ExperimentConfig> experiment_presets() {
    std::map<std::string, ExperimentConfig> presets;
    auto cube = [](std::uint64_t n) { return n * n * n; };

    ExperimentConfig desk;
    presets["desk_default"] = desk;

    for (ScalingMode mode : {ScalingMode::weak, ScalingMode::strong}) {
        const std::string suffix = "_" + to_string(mode);

        ExperimentConfig spmv7;
        spmv7.kernel = "spmv";
        spmv7.stencil = Stencil::seven_point;
        spmv7.mode = mode;
        spmv7.base_dofs = cube(405);
        spmv7.rank_counts = {1, 2, 4, 8, 16, 32, 64};
        presets["spmv_7pt" + suffix] = spmv7;

        ExperimentConfig spmv27 = spmv7;
        spmv27.stencil = Stencil::twenty_seven_point;
        spmv27.base_dofs = cube(260);
        presets["spmv_27pt" + suffix] = spmv27;

        ExperimentConfig cg7;
        cg7.kernel = "cg";
        cg7.stencil = Stencil::seven_point;
        cg7.mode = mode;
        cg7.base_dofs = cube(408);
        cg7.rank_counts = {1, 2, 4, 8, 16, 32, 64};
        cg7.solver.maxit = 100;
        cg7.solver.rtol = 1e-16;
        cg7.solver.mode = SolveMode::fixed_iterations;
        presets["cg_7pt" + suffix] = cg7;

        ExperimentConfig cg27 = cg7;
        cg27.stencil = Stencil::twenty_seven_point;
        cg27.base_dofs = cube(265);
        presets["cg_27pt" + suffix] = cg27;

        ExperimentConfig pcg7;
        pcg7.kernel = "pcg";
        pcg7.precond = "amg";
        pcg7.stencil = Stencil::seven_point;
        pcg7.mode = mode;
        pcg7.base_dofs = cube(370);
        pcg7.rank_counts = {1, 2, 4, 8, 16, 32, 64};
        pcg7.solver.rtol = 1e-6;
        pcg7.solver.maxit = 1000;
        presets["pcg_7pt" + suffix] = pcg7;
    }
    return presets;
}

} // namespace sparsewatt
