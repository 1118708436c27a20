// tfex command line: simulate, discover, residuals, train-gen, infer, eval,
// sweep, run-all. Exit codes: 0 success, 2 config error, 3 stage failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "tfex/pipeline.hpp"
#include "tfex/rng.hpp"

namespace fs = std::filesystem;
using namespace tfex;

namespace {

struct CommonOpts {
    std::string config_path;
    std::string out_dir = "out";
    std::optional<std::uint64_t> seed;
    std::optional<std::string> stage2;
    std::optional<int> regime;
    bool csv = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "experiment config JSON (defaults when omitted)");
    cmd->add_option("--out", opts.out_dir, "experiment output directory");
    cmd->add_option("--seed", opts.seed, "master seed override");
    cmd->add_option("--stage2", opts.stage2, "stage-II model: tfdm|tfdm-timedep|sran|vae");
    cmd->add_option("--regime", opts.regime, "triad regime preset 1..5")->check(CLI::Range(1, 5));
}

ExperimentConfig resolve_config(const CommonOpts& opts) {
    ExperimentConfig config =
        opts.config_path.empty() ? default_config() : load_config_file(opts.config_path);
    if (opts.regime) {
        config.regime = *opts.regime;
        config.spec = regime_preset(*opts.regime);
    }
    if (opts.stage2) config.stage2 = stage2_from_name(*opts.stage2);
    if (opts.seed) {
        config.data.seed = *opts.seed;
        config.eval.seed = *opts.seed + 1;
    }
    config.validate();
    return config;
}

TrajectoryBatch require_train_data(const ExperimentConfig& config, const std::string& out_dir) {
    const std::string path = out_dir + "/data/train.bin";
    if (fs::exists(path)) return load_batch(path);
    return stage_simulate(config, out_dir);
}

std::vector<ExpressionTemplate> require_expressions(const ExperimentConfig& config,
                                                    const std::string& out_dir) {
    const std::string path = out_dir + "/artifacts/expressions.json";
    if (!fs::exists(path))
        throw std::runtime_error("no discovered expressions in " + out_dir +
                                 "; run `tfex discover` first");
    (void)config;
    return expressions_from_json(read_text_file(path));
}

TrajectoryBatch eval_truth(const ExperimentConfig& config, const std::string& out_dir) {
    const std::string path = out_dir + "/data/truth.bin";
    if (fs::exists(path)) return load_batch(path);
    const auto N = static_cast<std::size_t>(std::llround(config.eval.T_test / config.data.h));
    TrajectoryBatch truth =
        simulate_batch(config.spec, config.data.init, config.eval.M_test, N, config.data.h,
                       stream_seed(config.eval.seed, 0x7247u));
    save_batch(truth, path);
    return truth;
}

void cmd_simulate(const ExperimentConfig& config, const CommonOpts& opts) {
    const TrajectoryBatch batch = stage_simulate(config, opts.out_dir);
    if (opts.csv) export_csv(batch, opts.out_dir + "/data/train.csv");
    std::printf("simulated %zu trajectories x %zu steps (h=%g) -> %s/data/train.bin\n", batch.M,
                batch.N, batch.h, opts.out_dir.c_str());
}

void cmd_discover(const ExperimentConfig& config, const CommonOpts& opts) {
    const TrajectoryBatch batch = require_train_data(config, opts.out_dir);
    const DiscoverResult result = stage_discover(config, batch, opts.out_dir);
    for (std::size_t i = 0; i < result.exprs.size(); ++i)
        std::printf("component %zu: %s\n", i + 1, render(result.exprs[i]).c_str());
}

void cmd_residuals(const ExperimentConfig& config, const CommonOpts& opts) {
    const TrajectoryBatch batch = require_train_data(config, opts.out_dir);
    const auto exprs = require_expressions(config, opts.out_dir);
    const ResidualSet residuals = stage_residuals(config, batch, exprs, opts.out_dir);
    std::printf("computed %zu residuals -> %s/data/residuals.bin\n", residuals.count(),
                opts.out_dir.c_str());
}

void cmd_train_gen(const ExperimentConfig& config, const CommonOpts& opts) {
    const TrajectoryBatch batch = require_train_data(config, opts.out_dir);
    const auto exprs = require_expressions(config, opts.out_dir);
    const std::string rpath = opts.out_dir + "/data/residuals.bin";
    const ResidualSet residuals =
        fs::exists(rpath) ? load_residuals(rpath) : stage_residuals(config, batch, exprs, opts.out_dir);
    Artifacts artifacts;
    artifacts.exprs = exprs;
    stage_train_gen(config, batch, exprs, residuals, artifacts, opts.out_dir);
    std::printf("trained stage-II model %s -> %s/artifacts/stage2_%s.json\n",
                stage2_name(config.stage2).c_str(), opts.out_dir.c_str(),
                stage2_name(config.stage2).c_str());
}

void cmd_infer(const ExperimentConfig& config, const CommonOpts& opts) {
    const Artifacts artifacts = load_artifacts(config, opts.out_dir);
    const TrajectoryBatch predicted = run_inference(artifacts, config, config.eval.M_test,
                                                    config.eval.T_test, config.eval.seed);
    save_batch(predicted, opts.out_dir + "/data/predictions.bin");
    if (opts.csv) export_csv(predicted, opts.out_dir + "/data/predictions.csv");
    std::printf("predicted %zu trajectories over T=%g -> %s/data/predictions.bin\n", predicted.M,
                config.eval.T_test, opts.out_dir.c_str());
}

void cmd_eval(const ExperimentConfig& config, const CommonOpts& opts) {
    const std::string ppath = opts.out_dir + "/data/predictions.bin";
    if (!fs::exists(ppath))
        throw std::runtime_error("no predictions in " + opts.out_dir + "; run `tfex infer` first");
    const TrajectoryBatch predicted = load_batch(ppath);
    const TrajectoryBatch truth = eval_truth(config, opts.out_dir);
    const EvalReport report = run_eval(predicted, truth, config, opts.out_dir);
    std::printf("eval: %zu moment series compared; reports in %s/reports\n",
                report.errors.size(), opts.out_dir.c_str());
    for (const auto& e : report.errors)
        std::printf("  M%-7s max_rel_err=%.4g over %zu masked points\n", e.label.c_str(),
                    e.max_rel_err, e.masked_points);
}

void cmd_sweep(const ExperimentConfig& config, const CommonOpts& opts, const std::string& kind) {
    ensure_dir(opts.out_dir + "/reports");
    std::vector<SweepRow> rows;
    if (kind == "noise-scale") {
        rows = run_noise_sweep({1, 2, 3}, {0.0, 0.5, 1.0, 1.5, 2.0}, config.data, config.stage1,
                               config.data.seed);
    } else if (kind == "sample-size") {
        rows = run_sample_size_sweep({1, 2, 3}, {1000, 2000, 4000, 10000}, 1, config.data,
                                     config.stage1, config.data.seed);
    } else {
        throw ConfigError("sweep kind must be noise-scale or sample-size");
    }
    const std::string path = opts.out_dir + "/reports/sweep_" + kind + ".csv";
    write_sweep_csv(rows, path);
    std::printf("sweep %s: %zu rows -> %s\n", kind.c_str(), rows.size(), path.c_str());
    for (const auto& r : rows)
        std::printf("  regime %d x=%g max|B_err|=%.4g\n", r.regime, r.x, r.max_err());
}

void cmd_run_all(const ExperimentConfig& config, const CommonOpts& opts) {
    const Artifacts artifacts = run_training(config, opts.out_dir);

    const auto N = static_cast<std::size_t>(std::llround(config.eval.T_test / config.data.h));
    const double bytes = static_cast<double>(config.eval.M_test) * static_cast<double>(N + 1) *
                         kTriadDim * sizeof(double);

    const auto labels =
        config.eval.moments.empty() ? default_moment_labels(kTriadDim) : config.eval.moments;
    EnsembleAccumulator pred(labels, kTriadDim, N + 1, config.data.h);
    EnsembleAccumulator truth(labels, kTriadDim, N + 1, config.data.h);

    if (bytes <= 5e8) {
        const TrajectoryBatch predicted = run_inference(artifacts, config, config.eval.M_test,
                                                        config.eval.T_test, config.eval.seed);
        save_batch(predicted, opts.out_dir + "/data/predictions.bin");
        const TrajectoryBatch tru = eval_truth(config, opts.out_dir);
        run_eval(predicted, tru, config, opts.out_dir);
    } else {
        // streaming evaluation: densities are skipped, moment series kept
        inference_stats(artifacts, config, config.eval.M_test, config.eval.T_test,
                        config.eval.seed, pred);
        simulate_stats(config.spec, config.data.init, config.eval.M_test, N, config.data.h,
                       stream_seed(config.eval.seed, 0x7247u), truth);
        run_eval_accumulated(pred, truth, config, opts.out_dir);
    }
    std::printf("run-all complete; artifacts and reports in %s\n", opts.out_dir.c_str());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"two-stage symbolic discovery and residual resampling for stochastic triad systems"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::string sweep_kind = "noise-scale";

    CLI::App* c_sim = app.add_subcommand("simulate", "generate training trajectories");
    c_sim->add_flag("--csv", opts.csv, "also export CSV");
    CLI::App* c_disc = app.add_subcommand("discover", "run the symbolic drift search");
    CLI::App* c_res = app.add_subcommand("residuals", "extract residuals from the fitted drift");
    CLI::App* c_gen = app.add_subcommand("train-gen", "train the stage-II generative model");
    CLI::App* c_inf = app.add_subcommand("infer", "resample predicted trajectories");
    c_inf->add_flag("--csv", opts.csv, "also export CSV");
    CLI::App* c_eval = app.add_subcommand("eval", "compare predicted and ground-truth statistics");
    CLI::App* c_sweep = app.add_subcommand("sweep", "coefficient-recovery sweeps");
    c_sweep->add_option("kind", sweep_kind, "noise-scale or sample-size");
    CLI::App* c_all = app.add_subcommand("run-all", "full pipeline: train, infer, evaluate");

    for (CLI::App* cmd : {c_sim, c_disc, c_res, c_gen, c_inf, c_eval, c_sweep, c_all})
        add_common(cmd, opts);

    CLI11_PARSE(app, argc, argv);

    try {
        const ExperimentConfig config = resolve_config(opts);
        const DirLock lock(opts.out_dir);
        write_text_file(opts.out_dir + "/config_resolved.json", config_to_json(config));

        if (c_sim->parsed()) cmd_simulate(config, opts);
        if (c_disc->parsed()) cmd_discover(config, opts);
        if (c_res->parsed()) cmd_residuals(config, opts);
        if (c_gen->parsed()) cmd_train_gen(config, opts);
        if (c_inf->parsed()) cmd_infer(config, opts);
        if (c_eval->parsed()) cmd_eval(config, opts);
        if (c_sweep->parsed()) cmd_sweep(config, opts, sweep_kind);
        if (c_all->parsed()) cmd_run_all(config, opts);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
