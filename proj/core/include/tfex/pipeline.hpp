#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tfex/expression.hpp"
#include "tfex/fex.hpp"
#include "tfex/residual.hpp"
#include "tfex/sde.hpp"
#include "tfex/sran.hpp"
#include "tfex/stats.hpp"
#include "tfex/tfdm.hpp"
#include "tfex/vae.hpp"

namespace tfex {

/// Invalid configuration input; the CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Stage2Model { Tfdm, TfdmTimeDependent, Sran, Vae };
std::string stage2_name(Stage2Model model);
Stage2Model stage2_from_name(const std::string& name);

struct DataConfig {
    std::size_t M = 1000;
    std::size_t N = 1000;  // steps; T = N*h
    double h = 0.01;
    std::uint64_t seed = 1;
    InitialDistribution init = default_initial_distribution();
};

struct HistogramConfig {
    std::vector<std::array<std::size_t, 2>> axes = {{0, 2}};  // 0-based pairs
    std::size_t bins = 50;
    std::array<double, 4> range = {-6.0, 6.0, -6.0, 6.0};
    std::vector<double> times = {};  // defaults to the final time
};

struct EvalConfig {
    std::size_t M_test = 10000;
    double T_test = 20.0;
    std::uint64_t seed = 2;
    double mask_threshold = 0.05;  // |truth| below this is excluded from errors
    std::vector<std::string> moments;  // empty selects default_moment_labels
    HistogramConfig histogram;
};

struct ExperimentConfig {
    int regime = 2;  // 1..5; 0 means custom_spec is authoritative
    RegimeSpec spec = regime_preset(2);
    DataConfig data;
    SearchConfig stage1;
    Stage2Model stage2 = Stage2Model::Tfdm;
    TfdmConfig tfdm;
    SranConfig sran;
    VaeConfig vae;
    EvalConfig eval;

    void validate() const;  // throws ConfigError
};

ExperimentConfig default_config();
ExperimentConfig config_from_json(const std::string& text);
std::string config_to_json(const ExperimentConfig& config);
/// FNV-1a over the canonical JSON dump.
std::string config_hash(const ExperimentConfig& config);
ExperimentConfig load_config_file(const std::string& path);

struct ResidualStats {
    std::vector<double> mean;
    std::vector<double> std_dev;
    std::size_t count = 0;
};

struct Artifacts {
    std::vector<ExpressionTemplate> exprs;             // after joint fine-tuning
    std::vector<ExpressionTemplate> exprs_prefinetune; // pool rank-1 per component
    Stage2Model model_kind = Stage2Model::Tfdm;
    std::optional<TfdmSampler> tfdm;
    std::optional<TimeDependentTfdm> tfdm_timedep;
    std::optional<SranModel> sran;
    std::optional<VaeModel> vae;
    ResidualStats residual_stats;
    std::string hash;
    std::uint64_t seed = 0;
};

/// Exclusive ownership of an experiment directory via a lock file.
class DirLock {
public:
    explicit DirLock(const std::string& dir);
    ~DirLock();
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

private:
    std::string path_;
};

// --- pipeline stages (each persists its outputs under out_dir) -------------

TrajectoryBatch stage_simulate(const ExperimentConfig& config, const std::string& out_dir);

struct DiscoverResult {
    std::vector<ExpressionTemplate> exprs;
    std::vector<ExpressionTemplate> exprs_prefinetune;
    double finetune_initial_loss = 0.0;
    double finetune_final_loss = 0.0;
};
DiscoverResult stage_discover(const ExperimentConfig& config, const TrajectoryBatch& batch,
                              const std::string& out_dir);

ResidualSet stage_residuals(const ExperimentConfig& config, const TrajectoryBatch& batch,
                            const std::vector<ExpressionTemplate>& exprs,
                            const std::string& out_dir);

void stage_train_gen(const ExperimentConfig& config, const TrajectoryBatch& batch,
                     const std::vector<ExpressionTemplate>& exprs, const ResidualSet& residuals,
                     Artifacts& artifacts, const std::string& out_dir);

/// Full training pass (Stage I + Stage II); reuses persisted stage outputs in
/// out_dir when their provenance hash matches.
Artifacts run_training(const ExperimentConfig& config, const std::string& out_dir);

Artifacts load_artifacts(const ExperimentConfig& config, const std::string& out_dir);

/// Predicted trajectories: per step the deterministic increment h*C*(u,t)
/// plus a sampled residual increment.
TrajectoryBatch run_inference(const Artifacts& artifacts, const ExperimentConfig& config,
                              std::size_t M, double T, std::uint64_t seed);

/// Streaming variants feeding an accumulator (memory stays O(1) in M).
void inference_stats(const Artifacts& artifacts, const ExperimentConfig& config, std::size_t M,
                     double T, std::uint64_t seed, EnsembleAccumulator& acc);
void simulate_stats(const RegimeSpec& spec, const InitialDistribution& init, std::size_t M,
                    std::size_t N, double h, std::uint64_t seed, EnsembleAccumulator& acc);

struct SeriesError {
    std::string label;
    double max_rel_err = 0.0;
    double mean_rel_err = 0.0;
    std::size_t masked_points = 0;
};

struct EvalReport {
    std::vector<SeriesError> errors;       // one entry per configured label
    SeriesError mean_norm_error;
    std::vector<MomentSeries> pred_series;
    std::vector<MomentSeries> truth_series;
    MomentSeries pred_mean_norm;
    MomentSeries truth_mean_norm;
};

/// Moment-series comparison of two ensembles plus CSV/JSON reports.
EvalReport run_eval(const TrajectoryBatch& predicted, const TrajectoryBatch& truth,
                    const ExperimentConfig& config, const std::string& out_dir);

/// Same comparison from prefilled accumulators (streaming path).
EvalReport run_eval_accumulated(const EnsembleAccumulator& pred, const EnsembleAccumulator& truth,
                                const ExperimentConfig& config, const std::string& out_dir,
                                const TrajectoryBatch* pred_hist = nullptr,
                                const TrajectoryBatch* truth_hist = nullptr);

// --- coefficient sweeps -----------------------------------------------------

struct SweepRow {
    std::string kind;  // "noise-scale" or "sample-size"
    int regime = 0;
    double x = 0.0;  // noise scale c or sample count M
    std::uint64_t seed = 0;
    std::array<double, 3> b_err{0, 0, 0};

    double max_err() const { return std::max({b_err[0], b_err[1], b_err[2]}); }
};

/// Coefficient-recovery error with the ground-truth operator sequences fixed:
/// simulate at the given noise scale, fit continuous parameters by joint
/// fine-tuning from a cold start, report |B_hat - B| per component.
SweepRow sweep_point_noise(int regime, double noise_scale, const DataConfig& data,
                           const SearchConfig& stage1, std::uint64_t seed);
SweepRow sweep_point_sample_size(int regime, std::size_t M, const DataConfig& data,
                                 const SearchConfig& stage1, std::uint64_t seed);

std::vector<SweepRow> run_noise_sweep(const std::vector<int>& regimes,
                                      const std::vector<double>& scales, const DataConfig& data,
                                      const SearchConfig& stage1, std::uint64_t seed);
std::vector<SweepRow> run_sample_size_sweep(const std::vector<int>& regimes,
                                            const std::vector<std::size_t>& sizes,
                                            std::size_t seeds_per_point, const DataConfig& data,
                                            const SearchConfig& stage1, std::uint64_t seed);
void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path);

// Small helpers shared with the CLI and tests.
void ensure_dir(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

}  // namespace tfex
