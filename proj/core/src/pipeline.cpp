#include "tfex/pipeline.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fcntl.h>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <sys/stat.h>
#include <unistd.h>

#include <json.hpp>

#include "tfex/parallel.hpp"
#include "tfex/rng.hpp"

namespace tfex {

namespace fs = std::filesystem;
using nlohmann::json;

void ensure_dir(const std::string& path) {
    std::error_code ec;
    fs::create_directories(path, ec);
    if (ec) throw std::runtime_error("cannot create directory " + path + ": " + ec.message());
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

DirLock::DirLock(const std::string& dir) {
    ensure_dir(dir);
    path_ = dir + "/.tfex.lock";
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
        if (errno == EEXIST)
            throw std::runtime_error("experiment directory is locked by another process: " + dir +
                                     " (remove " + path_ + " if stale)");
        throw std::runtime_error("cannot create lock file " + path_ + ": " +
                                 std::strerror(errno));
    }
    ::close(fd);
}

DirLock::~DirLock() {
    if (!path_.empty()) ::unlink(path_.c_str());
}

namespace {

constexpr std::uint64_t kSimulateTag = 0x51u;
constexpr std::uint64_t kDiscoverTag = 0xd15cu;
constexpr std::uint64_t kFinetuneTag = 0xf17eu;
constexpr std::uint64_t kStage2Tag = 0x57a2u;

std::string provenance_path(const std::string& out_dir) {
    return out_dir + "/artifacts/provenance.json";
}

bool provenance_matches(const ExperimentConfig& config, const std::string& out_dir) {
    const std::string path = provenance_path(out_dir);
    if (!fs::exists(path)) return false;
    try {
        const auto j = json::parse(read_text_file(path));
        return j.at("config_hash").get<std::string>() == config_hash(config);
    } catch (...) {
        return false;
    }
}

void write_provenance(const ExperimentConfig& config, const std::string& out_dir) {
    ensure_dir(out_dir + "/artifacts");
    json j;
    j["config_hash"] = config_hash(config);
    j["seed"] = config.data.seed;
    j["regime"] = config.regime;
    write_text_file(provenance_path(out_dir), j.dump(2));
}

void write_series_csv(const MomentSeries& series, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("cannot write " + path);
    std::fprintf(f, "t,value\n");
    for (std::size_t i = 0; i < series.times.size(); ++i)
        std::fprintf(f, "%.17g,%.17g\n", series.times[i], series.values[i]);
    std::fclose(f);
}

void write_histogram_csv(const Histogram2d& hist, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("cannot write " + path);
    std::fprintf(f, "# bins=%zu x=[%.17g,%.17g] y=[%.17g,%.17g] overflow=%zu\n", hist.bins,
                 hist.x_min, hist.x_max, hist.y_min, hist.y_max, hist.overflow);
    for (std::size_t i = 0; i < hist.bins; ++i) {
        for (std::size_t j = 0; j < hist.bins; ++j) {
            std::fprintf(f, "%s%.17g", j == 0 ? "" : ",", hist.density[i * hist.bins + j]);
        }
        std::fprintf(f, "\n");
    }
    std::fclose(f);
}

SeriesError series_error(const MomentSeries& pred, const MomentSeries& truth, double mask) {
    SeriesError err;
    err.label = truth.label;
    double sum = 0.0;
    for (std::size_t i = 0; i < truth.values.size() && i < pred.values.size(); ++i) {
        if (std::abs(truth.values[i]) <= mask) continue;
        const double rel = std::abs(pred.values[i] - truth.values[i]) / std::abs(truth.values[i]);
        err.max_rel_err = std::max(err.max_rel_err, rel);
        sum += rel;
        err.masked_points += 1;
    }
    err.mean_rel_err = err.masked_points ? sum / static_cast<double>(err.masked_points) : 0.0;
    return err;
}

std::vector<std::string> eval_labels(const ExperimentConfig& config) {
    return config.eval.moments.empty() ? default_moment_labels(kTriadDim) : config.eval.moments;
}

}  // namespace

TrajectoryBatch stage_simulate(const ExperimentConfig& config, const std::string& out_dir) {
    ensure_dir(out_dir + "/data");
    const std::string path = out_dir + "/data/train.bin";
    if (provenance_matches(config, out_dir) && fs::exists(path)) return load_batch(path);

    TrajectoryBatch batch = simulate_batch(config.spec, config.data.init, config.data.M,
                                           config.data.N, config.data.h,
                                           stream_seed(config.data.seed, kSimulateTag));
    write_provenance(config, out_dir);
    save_batch(batch, path);
    return batch;
}

DiscoverResult stage_discover(const ExperimentConfig& config, const TrajectoryBatch& batch,
                              const std::string& out_dir) {
    ensure_dir(out_dir + "/artifacts");
    ensure_dir(out_dir + "/reports");

    const std::string expr_path = out_dir + "/artifacts/expressions.json";
    const std::string pre_path = out_dir + "/artifacts/expressions_prefinetune.json";
    if (provenance_matches(config, out_dir) && fs::exists(expr_path) && fs::exists(pre_path)) {
        DiscoverResult cached;
        cached.exprs = expressions_from_json(read_text_file(expr_path));
        cached.exprs_prefinetune = expressions_from_json(read_text_file(pre_path));
        return cached;
    }

    DiscoverResult result;
    for (std::size_t comp = 0; comp < batch.d; ++comp) {
        const ComponentData data = build_component_data(batch, comp);
        const SearchResult search = search_component(
            data, config.stage1, stream_seed(config.data.seed, kDiscoverTag, comp));
        if (search.pool.empty())
            throw std::runtime_error("stage discover: empty candidate pool for component " +
                                     std::to_string(comp + 1));
        write_search_log_csv(search.log,
                             out_dir + "/reports/search_comp" + std::to_string(comp + 1) + ".csv");
        write_text_file(out_dir + "/reports/pool_comp" + std::to_string(comp + 1) + ".json",
                        pool_to_json(search.pool, batch.d));

        ExpressionTemplate best = make_expression(batch.d, search.pool.front().seq);
        best.set_params(search.pool.front().params);
        result.exprs_prefinetune.push_back(best);
    }

    const FinetuneResult tuned = finetune_joint(result.exprs_prefinetune, batch, config.stage1,
                                                stream_seed(config.data.seed, kFinetuneTag));
    result.exprs = tuned.exprs;
    result.finetune_initial_loss = tuned.initial_loss;
    result.finetune_final_loss = tuned.final_loss;
    if (tuned.reverted)
        throw std::runtime_error("stage discover: joint fine-tuning diverged and was reverted");

    write_provenance(config, out_dir);
    write_text_file(pre_path, expressions_to_json(result.exprs_prefinetune));
    write_text_file(expr_path, expressions_to_json(result.exprs));

    json rendered;
    for (std::size_t i = 0; i < result.exprs.size(); ++i) {
        rendered["component_" + std::to_string(i + 1)] = render(result.exprs[i]);
        rendered["component_" + std::to_string(i + 1) + "_prefinetune"] =
            render(result.exprs_prefinetune[i]);
    }
    rendered["finetune_initial_loss"] = result.finetune_initial_loss;
    rendered["finetune_final_loss"] = result.finetune_final_loss;
    write_text_file(out_dir + "/reports/expressions.json", rendered.dump(2));
    return result;
}

ResidualSet stage_residuals(const ExperimentConfig& config, const TrajectoryBatch& batch,
                            const std::vector<ExpressionTemplate>& exprs,
                            const std::string& out_dir) {
    ensure_dir(out_dir + "/data");
    ensure_dir(out_dir + "/artifacts");
    const std::string path = out_dir + "/data/residuals.bin";
    if (provenance_matches(config, out_dir) && fs::exists(path)) return load_residuals(path);

    ResidualSet residuals = compute_residuals(batch, exprs);
    write_provenance(config, out_dir);
    save_residuals(residuals, path);

    json stats;
    stats["count"] = residuals.count();
    stats["mean"] = residual_centroid(residuals);
    stats["std"] = residual_componentwise_std(residuals);
    write_text_file(out_dir + "/artifacts/residual_stats.json", stats.dump(2));
    return residuals;
}

void stage_train_gen(const ExperimentConfig& config, const TrajectoryBatch& batch,
                     const std::vector<ExpressionTemplate>& exprs, const ResidualSet& residuals,
                     Artifacts& artifacts, const std::string& out_dir) {
    ensure_dir(out_dir + "/artifacts");
    const std::string path =
        out_dir + "/artifacts/stage2_" + stage2_name(config.stage2) + ".json";
    const std::uint64_t seed = stream_seed(config.data.seed, kStage2Tag);

    artifacts.model_kind = config.stage2;
    const bool cached = provenance_matches(config, out_dir) && fs::exists(path);
    switch (config.stage2) {
        case Stage2Model::Tfdm:
            artifacts.tfdm = cached ? tfdm_from_json(read_text_file(path))
                                    : train_tfdm(residuals, config.tfdm, seed);
            if (!cached) write_text_file(path, tfdm_to_json(*artifacts.tfdm));
            break;
        case Stage2Model::TfdmTimeDependent:
            artifacts.tfdm_timedep =
                cached ? tfdm_timedep_from_json(read_text_file(path))
                       : train_tfdm_time_dependent(batch, exprs, config.tfdm, seed);
            if (!cached) write_text_file(path, tfdm_timedep_to_json(*artifacts.tfdm_timedep));
            break;
        case Stage2Model::Sran:
            artifacts.sran = cached ? sran_from_json(read_text_file(path))
                                    : train_sran(residuals, config.sran, seed);
            if (!cached) write_text_file(path, sran_to_json(*artifacts.sran));
            break;
        case Stage2Model::Vae:
            artifacts.vae = cached ? vae_from_json(read_text_file(path))
                                   : train_vae(residuals, config.vae, seed);
            if (!cached) write_text_file(path, vae_to_json(*artifacts.vae));
            break;
    }
    write_provenance(config, out_dir);
}

Artifacts run_training(const ExperimentConfig& config, const std::string& out_dir) {
    config.validate();
    ensure_dir(out_dir);

    Artifacts artifacts;
    artifacts.hash = config_hash(config);
    artifacts.seed = config.data.seed;

    std::string stage = "simulate";
    try {
        const TrajectoryBatch batch = stage_simulate(config, out_dir);
        stage = "discover";
        const DiscoverResult discovered = stage_discover(config, batch, out_dir);
        artifacts.exprs = discovered.exprs;
        artifacts.exprs_prefinetune = discovered.exprs_prefinetune;
        stage = "residuals";
        const ResidualSet residuals = stage_residuals(config, batch, artifacts.exprs, out_dir);
        artifacts.residual_stats.mean = residual_centroid(residuals);
        artifacts.residual_stats.std_dev = residual_componentwise_std(residuals);
        artifacts.residual_stats.count = residuals.count();
        stage = "train-gen";
        stage_train_gen(config, batch, artifacts.exprs, residuals, artifacts, out_dir);
    } catch (const std::exception& e) {
        throw std::runtime_error("stage " + stage + " failed: " + e.what());
    }
    return artifacts;
}

Artifacts load_artifacts(const ExperimentConfig& config, const std::string& out_dir) {
    Artifacts artifacts;
    artifacts.hash = config_hash(config);
    artifacts.seed = config.data.seed;
    artifacts.exprs = expressions_from_json(read_text_file(out_dir + "/artifacts/expressions.json"));
    const std::string pre = out_dir + "/artifacts/expressions_prefinetune.json";
    if (fs::exists(pre)) artifacts.exprs_prefinetune = expressions_from_json(read_text_file(pre));
    artifacts.model_kind = config.stage2;
    const std::string path =
        out_dir + "/artifacts/stage2_" + stage2_name(config.stage2) + ".json";
    switch (config.stage2) {
        case Stage2Model::Tfdm: artifacts.tfdm = tfdm_from_json(read_text_file(path)); break;
        case Stage2Model::TfdmTimeDependent:
            artifacts.tfdm_timedep = tfdm_timedep_from_json(read_text_file(path));
            break;
        case Stage2Model::Sran: artifacts.sran = sran_from_json(read_text_file(path)); break;
        case Stage2Model::Vae: artifacts.vae = vae_from_json(read_text_file(path)); break;
    }
    return artifacts;
}

namespace {

// One predicted trajectory written into `row(n) = state at step n`.
// Noise layout per step: d draws for the sampler input (latent draws for the
// VAE), taken from the trajectory's own stream after the d initial draws.
void predict_trajectory(const Artifacts& artifacts, const ExperimentConfig& config,
                        std::size_t N, double h, std::uint64_t traj_seed,
                        const std::function<void(std::size_t, const double*)>& emit) {
    const std::size_t d = artifacts.exprs.size();
    GaussStream rng(traj_seed);
    std::vector<double> u(d);
    for (std::size_t i = 0; i < d; ++i)
        u[i] = config.data.init.mean[i] + config.data.init.std[i] * rng.gauss();
    emit(0, u.data());

    const std::size_t xi_dim =
        artifacts.model_kind == Stage2Model::Vae ? artifacts.vae->latent : d;
    std::vector<double> xi(xi_dim);
    Eigen::VectorXd xi_vec(static_cast<Eigen::Index>(xi_dim));

    for (std::size_t n = 0; n < N; ++n) {
        const double t = static_cast<double>(n) * h;
        for (std::size_t i = 0; i < xi_dim; ++i) xi[i] = rng.gauss();

        std::vector<double> residual(d, 0.0);
        switch (artifacts.model_kind) {
            case Stage2Model::Tfdm:
                residual = artifacts.tfdm->sample(xi);
                break;
            case Stage2Model::TfdmTimeDependent:
                residual = artifacts.tfdm_timedep->sample(n, xi);
                break;
            case Stage2Model::Sran: {
                for (std::size_t i = 0; i < xi_dim; ++i)
                    xi_vec[static_cast<Eigen::Index>(i)] = xi[i];
                const Eigen::VectorXd out = artifacts.sran->net.forward(xi_vec);
                for (std::size_t i = 0; i < d; ++i)
                    residual[i] = out[static_cast<Eigen::Index>(i)];
                break;
            }
            case Stage2Model::Vae: {
                for (std::size_t i = 0; i < xi_dim; ++i)
                    xi_vec[static_cast<Eigen::Index>(i)] = xi[i];
                const Eigen::VectorXd out = artifacts.vae->decoder.forward(xi_vec);
                for (std::size_t i = 0; i < d; ++i)
                    residual[i] = out[static_cast<Eigen::Index>(i)];
                break;
            }
        }

        for (std::size_t i = 0; i < d; ++i) {
            const double drift = eval_expression(artifacts.exprs[i], u, t);
            u[i] += h * drift + residual[i];
        }
        for (std::size_t i = 0; i < d; ++i)
            if (!(std::abs(u[i]) <= kBlowUpGuard))
                throw std::runtime_error("run_inference: blow-up guard tripped at step " +
                                         std::to_string(n + 1));
        emit(n + 1, u.data());
    }
}

std::size_t steps_for(double T, double h) {
    const auto N = static_cast<std::size_t>(std::llround(T / h));
    if (N < 1) throw ConfigError("horizon shorter than one step");
    return N;
}

}  // namespace

TrajectoryBatch run_inference(const Artifacts& artifacts, const ExperimentConfig& config,
                              std::size_t M, double T, std::uint64_t seed) {
    if (artifacts.exprs.empty()) throw std::invalid_argument("run_inference: no expressions");
    const double h = config.data.h;
    const std::size_t N = steps_for(T, h);
    const std::size_t d = artifacts.exprs.size();

    const double bytes = static_cast<double>(M) * static_cast<double>(N + 1) *
                         static_cast<double>(d) * sizeof(double);
    if (bytes > 1.5e9)
        throw std::runtime_error(
            "run_inference: predicted batch would exceed 1.5 GB; use the streaming evaluation "
            "path (run-all) or reduce M_test");

    TrajectoryBatch batch(M, N, d, h);
    std::vector<std::string> errors(M);
    parallel_for(M, [&](std::size_t m) {
        try {
            predict_trajectory(artifacts, config, N, h, stream_seed(seed, m),
                               [&](std::size_t n, const double* u) {
                                   double* row = batch.state(m, n);
                                   for (std::size_t i = 0; i < d; ++i) row[i] = u[i];
                               });
        } catch (const std::exception& e) {
            errors[m] = e.what();
        }
    });
    for (const auto& e : errors)
        if (!e.empty()) throw std::runtime_error(e);
    return batch;
}

void inference_stats(const Artifacts& artifacts, const ExperimentConfig& config, std::size_t M,
                     double T, std::uint64_t seed, EnsembleAccumulator& acc) {
    const double h = config.data.h;
    const std::size_t N = steps_for(T, h);
    if (acc.steps() != N + 1)
        throw std::invalid_argument("inference_stats: accumulator step count mismatch");
    for (std::size_t m = 0; m < M; ++m) {
        predict_trajectory(artifacts, config, N, h, stream_seed(seed, m),
                           [&](std::size_t n, const double* u) { acc.add(n, u); });
    }
}

void simulate_stats(const RegimeSpec& spec, const InitialDistribution& init, std::size_t M,
                    std::size_t N, double h, std::uint64_t seed, EnsembleAccumulator& acc) {
    if (acc.steps() != N + 1)
        throw std::invalid_argument("simulate_stats: accumulator step count mismatch");
    // simulate in blocks so memory stays bounded while trajectories still run
    // through the batch simulator
    const std::size_t block = 512;
    for (std::size_t start = 0; start < M; start += block) {
        const std::size_t count = std::min(block, M - start);
        TrajectoryBatch part(count, N, kTriadDim, h);
        std::vector<std::string> errors(count);
        parallel_for(count, [&](std::size_t i) {
            GaussStream rng(stream_seed(seed, start + i));
            Vec3 u;
            for (std::size_t c = 0; c < 3; ++c) u[c] = init.mean[c] + init.std[c] * rng.gauss();
            const OuForcing* ou = std::get_if<OuForcing>(&spec.forcing);
            double forcing_state = 0.0;
            Vec3 sigma;
            for (std::size_t c = 0; c < 3; ++c) sigma[c] = spec.noise_scale * spec.noise_std[c];
            double* row = part.state(i, 0);
            for (std::size_t c = 0; c < 3; ++c) row[c] = u[c];
            for (std::size_t n = 0; n < N; ++n) {
                const double t = static_cast<double>(n) * h;
                const Vec3 drift = drift_triad(u, t, spec, forcing_state);
                Vec3 g;
                for (std::size_t c = 0; c < 3; ++c) g[c] = rng.gauss();
                u = em_step(u, drift, sigma, h, g);
                if (ou)
                    forcing_state = ou_step(forcing_state, ou->rate, ou->diffusion, h, rng.gauss());
                for (std::size_t c = 0; c < 3; ++c)
                    if (!(std::abs(u[c]) <= kBlowUpGuard)) {
                        errors[i] = "simulate_stats: blow-up guard tripped";
                        return;
                    }
                double* next = part.state(i, n + 1);
                for (std::size_t c = 0; c < 3; ++c) next[c] = u[c];
            }
        });
        for (const auto& e : errors)
            if (!e.empty()) throw std::runtime_error(e);
        for (std::size_t i = 0; i < count; ++i)
            for (std::size_t n = 0; n <= N; ++n) acc.add(n, part.state(i, n));
    }
}

namespace {

EvalReport build_report(const EnsembleAccumulator& pred, const EnsembleAccumulator& truth,
                        const ExperimentConfig& config, const std::string& out_dir,
                        const TrajectoryBatch* pred_hist, const TrajectoryBatch* truth_hist) {
    ensure_dir(out_dir + "/reports");
    ensure_dir(out_dir + "/reports/moments");

    EvalReport report;
    report.pred_series = pred.series();
    report.truth_series = truth.series();
    report.pred_mean_norm = pred.mean_norm_series();
    report.truth_mean_norm = truth.mean_norm_series();

    json summary;
    summary["config_hash"] = config_hash(config);
    summary["mask_threshold"] = config.eval.mask_threshold;
    summary["labels"] = json::array();

    for (std::size_t l = 0; l < report.pred_series.size(); ++l) {
        const auto& ps = report.pred_series[l];
        const auto& ts = report.truth_series[l];
        write_series_csv(ps, out_dir + "/reports/moments/pred_" + ps.label + ".csv");
        write_series_csv(ts, out_dir + "/reports/moments/truth_" + ts.label + ".csv");
        const SeriesError err = series_error(ps, ts, config.eval.mask_threshold);
        report.errors.push_back(err);
        summary["labels"].push_back({{"label", err.label},
                                     {"max_rel_err", err.max_rel_err},
                                     {"mean_rel_err", err.mean_rel_err},
                                     {"masked_points", err.masked_points}});
    }

    write_series_csv(report.pred_mean_norm, out_dir + "/reports/moments/pred_mean_norm.csv");
    write_series_csv(report.truth_mean_norm, out_dir + "/reports/moments/truth_mean_norm.csv");
    report.mean_norm_error =
        series_error(report.pred_mean_norm, report.truth_mean_norm, config.eval.mask_threshold);
    summary["mean_norm"] = {{"max_rel_err", report.mean_norm_error.max_rel_err},
                            {"mean_rel_err", report.mean_norm_error.mean_rel_err},
                            {"masked_points", report.mean_norm_error.masked_points}};

    for (const auto& es : pred.energy_series())
        write_series_csv(es, out_dir + "/reports/moments/pred_" + es.label + ".csv");
    for (const auto& es : truth.energy_series())
        write_series_csv(es, out_dir + "/reports/moments/truth_" + es.label + ".csv");

    // density projections from materialized batches, when available
    if (pred_hist && truth_hist) {
        const auto& hg = config.eval.histogram;
        std::vector<double> times = hg.times;
        if (times.empty()) times = {pred_hist->time(pred_hist->N)};
        for (const double t : times) {
            const auto step = static_cast<std::size_t>(std::llround(t / pred_hist->h));
            if (step > pred_hist->N || step > truth_hist->N) continue;
            for (const auto& ax : hg.axes) {
                const auto p = histogram2d(slice_at(*pred_hist, step), ax[0], ax[1], hg.bins,
                                           hg.range[0], hg.range[1], hg.range[2], hg.range[3]);
                const auto q = histogram2d(slice_at(*truth_hist, step), ax[0], ax[1], hg.bins,
                                           hg.range[0], hg.range[1], hg.range[2], hg.range[3]);
                char name[128];
                std::snprintf(name, sizeof name, "density_u%zuu%zu_t%g", ax[0] + 1, ax[1] + 1, t);
                write_histogram_csv(p, out_dir + "/reports/" + name + "_pred.csv");
                write_histogram_csv(q, out_dir + "/reports/" + name + "_truth.csv");
            }
        }
    }

    write_text_file(out_dir + "/reports/summary.json", summary.dump(2));
    return report;
}

}  // namespace

EvalReport run_eval(const TrajectoryBatch& predicted, const TrajectoryBatch& truth,
                    const ExperimentConfig& config, const std::string& out_dir) {
    if (predicted.d != truth.d || predicted.h != truth.h)
        throw std::invalid_argument("run_eval: ensembles must share h and dimension");
    if (predicted.N != truth.N)
        throw std::invalid_argument("run_eval: horizon mismatch between ensembles");

    const auto labels = eval_labels(config);
    EnsembleAccumulator pred(labels, predicted.d, predicted.N + 1, predicted.h, predicted.t0);
    EnsembleAccumulator tru(labels, truth.d, truth.N + 1, truth.h, truth.t0);
    for (std::size_t m = 0; m < predicted.M; ++m)
        for (std::size_t n = 0; n <= predicted.N; ++n) pred.add(n, predicted.state(m, n));
    for (std::size_t m = 0; m < truth.M; ++m)
        for (std::size_t n = 0; n <= truth.N; ++n) tru.add(n, truth.state(m, n));

    return build_report(pred, tru, config, out_dir, &predicted, &truth);
}

EvalReport run_eval_accumulated(const EnsembleAccumulator& pred, const EnsembleAccumulator& truth,
                                const ExperimentConfig& config, const std::string& out_dir,
                                const TrajectoryBatch* pred_hist,
                                const TrajectoryBatch* truth_hist) {
    if (pred.steps() != truth.steps())
        throw std::invalid_argument("run_eval_accumulated: horizon mismatch");
    return build_report(pred, truth, config, out_dir, pred_hist, truth_hist);
}

// --- sweeps ------------------------------------------------------------------

namespace {

// Cold-start template: ground-truth operator sequence and canonical block
// parameters, fitted coefficients zeroed.
ExpressionTemplate sweep_start_template(const RegimeSpec& spec, std::size_t comp) {
    ExpressionTemplate e = ground_truth_template(spec, comp);
    std::fill(e.linear.begin(), e.linear.end(), 0.0);
    e.nonlinear_scale = 0.0;
    e.constant = 0.0;
    if (e.time_block.ops.root == UnaryOp::Sin) e.time_block.params[4] = 0.0;
    return e;
}

SweepRow sweep_point(const std::string& kind, int regime, double x, const RegimeSpec& spec,
                     std::size_t M, const DataConfig& data, const SearchConfig& stage1,
                     std::uint64_t seed) {
    const TrajectoryBatch batch = simulate_batch(spec, data.init, M, data.N, data.h,
                                                 stream_seed(seed, kSimulateTag));

    std::vector<ExpressionTemplate> start;
    for (std::size_t comp = 0; comp < kTriadDim; ++comp)
        start.push_back(sweep_start_template(spec, comp));

    const FinetuneResult tuned =
        finetune_joint(start, batch, stage1, stream_seed(seed, kFinetuneTag));

    SweepRow row;
    row.kind = kind;
    row.regime = regime;
    row.x = x;
    row.seed = seed;
    static const MonomialKey quad_key[3] = {{0, 1, 1}, {1, 0, 1}, {1, 1, 0}};
    for (std::size_t comp = 0; comp < kTriadDim; ++comp) {
        const double b_hat = monomial_coefficient(tuned.exprs[comp], quad_key[comp]);
        row.b_err[comp] = std::abs(b_hat - spec.coupling[comp]);
    }
    return row;
}

}  // namespace

SweepRow sweep_point_noise(int regime, double noise_scale, const DataConfig& data,
                           const SearchConfig& stage1, std::uint64_t seed) {
    RegimeSpec spec = regime_preset(regime);
    spec.noise_scale = noise_scale;
    return sweep_point("noise-scale", regime, noise_scale, spec, data.M, data, stage1, seed);
}

SweepRow sweep_point_sample_size(int regime, std::size_t M, const DataConfig& data,
                                 const SearchConfig& stage1, std::uint64_t seed) {
    const RegimeSpec spec = regime_preset(regime);
    return sweep_point("sample-size", regime, static_cast<double>(M), spec, M, data, stage1, seed);
}

std::vector<SweepRow> run_noise_sweep(const std::vector<int>& regimes,
                                      const std::vector<double>& scales, const DataConfig& data,
                                      const SearchConfig& stage1, std::uint64_t seed) {
    std::vector<SweepRow> rows;
    for (const int regime : regimes)
        for (const double c : scales)
            rows.push_back(sweep_point_noise(
                regime, c, data, stage1,
                stream_seed(seed, static_cast<std::uint64_t>(regime),
                            static_cast<std::uint64_t>(std::llround(c * 1000)))));
    return rows;
}

std::vector<SweepRow> run_sample_size_sweep(const std::vector<int>& regimes,
                                            const std::vector<std::size_t>& sizes,
                                            std::size_t seeds_per_point, const DataConfig& data,
                                            const SearchConfig& stage1, std::uint64_t seed) {
    std::vector<SweepRow> rows;
    for (const int regime : regimes)
        for (const std::size_t M : sizes)
            for (std::size_t s = 0; s < seeds_per_point; ++s)
                rows.push_back(sweep_point_sample_size(
                    regime, M, data, stage1,
                    stream_seed(seed, static_cast<std::uint64_t>(regime) * 1000 + s, M)));
    return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("cannot write " + path);
    std::fprintf(f, "kind,regime,x,seed,b1_err,b2_err,b3_err,max_err\n");
    for (const auto& r : rows)
        std::fprintf(f, "%s,%d,%.17g,%llu,%.17g,%.17g,%.17g,%.17g\n", r.kind.c_str(), r.regime,
                     r.x, static_cast<unsigned long long>(r.seed), r.b_err[0], r.b_err[1],
                     r.b_err[2], r.max_err());
    std::fclose(f);
}

}  // namespace tfex
