#pragma once

#include "disdis/dataio.hpp"
#include "disdis/metrics.hpp"
#include "disdis/model.hpp"
#include "disdis/objective.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace disdis {

/// Exit codes of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitData = 3, kExitDivergence = 4 };

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SceneFiles {
    std::string name;
    std::vector<std::string> files;
    bool operator==(const SceneFiles&) const = default;
};

struct DataConfig {
    std::string source = "synthetic";  // "synthetic" | "files"
    // files: every scene except `holdout` trains; `holdout` evaluates (all scenes when empty)
    std::vector<SceneFiles> scenes;
    std::string holdout;
    bool augment = false;              // 24 rotated copies of every training window
    std::size_t max_train_samples = 0; // 0 keeps everything
    // synthetic
    std::vector<SyntheticPersona> personas = default_personas();
    int n_per_persona = 250;
    int eval_n_per_persona = 100;
    SynthOptions synth;
    std::uint64_t synth_seed = 1234;
};

struct TrainConfig {
    int epochs = 30;
    int batch_size = 64;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t seed = 1;
    std::vector<std::uint64_t> ablation_seeds;  // empty: {seed}
};

struct EvalConfig {
    int M = 0;           // 0 means K
    int best_of_n = 20;
    std::string out_dir = "runs/default";
};

struct ExperimentConfig {
    DataConfig data;
    ModelConfig model;
    LossConfig loss;
    TrainConfig train;
    EvalConfig eval;
    /// Directory used to resolve relative data paths.
    std::filesystem::path base_dir = ".";
};

/// Strict JSON parsing: unknown keys and ill-typed values raise ConfigError.
ExperimentConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir = ".");
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const ExperimentConfig& cfg);

struct AdamState {
    std::vector<Matrix> m;
    std::vector<Matrix> v;
};

struct EpochRecord {
    std::uint64_t step = 0;
    LossReport mean;
};

struct TrainState {
    ModelParams params;
    AdamState adam;
    std::uint64_t step = 0;
    int epoch = 0;
    std::mt19937_64 rng;
    std::vector<EpochRecord> history;
};

struct Dataset {
    std::vector<TrajectorySample> train;
    std::vector<TrajectorySample> eval;
    WindowSummary summary;  // aggregated over all loaded files
};

/// Loads or generates data per the config. Throws DataError.
Dataset resolve_data(const ExperimentConfig& cfg);

/// Fresh parameters, optimizer moments and rng for a run.
TrainState initial_state(const ExperimentConfig& cfg);

/// Runs epochs [state.epoch, cfg.train.epochs). Throws DivergenceError on a non-finite loss.
void train_epochs(const ExperimentConfig& cfg, std::span<const TrajectorySample> data, TrainState& state);
/// Same, calling on_epoch(epoch_number, epoch_mean) after every epoch.
void train_epochs(const ExperimentConfig& cfg, std::span<const TrajectorySample> data, TrainState& state,
                  const std::function<void(int, const LossReport&)>& on_epoch);

/// Order of sample indices for one epoch, a pure function of (seed, epoch, n).
std::vector<std::size_t> epoch_permutation(std::uint64_t seed, int epoch, std::size_t n);

/// train(config): resolves data, trains, writes checkpoint.json and loss_history.csv to out_dir.
TrainState train(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

void save_checkpoint(const std::filesystem::path& path, const ExperimentConfig& cfg, const TrainState& state);
std::string checkpoint_to_string(const ExperimentConfig& cfg, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path, ExperimentConfig* config_echo = nullptr);
TrainState checkpoint_from_string(const std::string& text, ExperimentConfig* config_echo = nullptr);

void write_loss_history(const std::filesystem::path& path, std::span<const EpochRecord> history);

/// Exact-enumeration evaluation; writes metrics.txt, pcmd.csv, latents.csv to out_dir.
/// Throws ConfigError if the checkpoint's K differs from cfg.model.K.
MetricReport evaluate(const TrainState& checkpoint, std::span<const TrajectorySample> data, const ExperimentConfig& cfg,
                      const std::filesystem::path& out_dir);

struct AblationRow {
    std::string variant;  // "disdis", "w/o L3", "w/o L2"
    double ade = 0.0;
    double fde = 0.0;
    double purity = -1.0;
    std::vector<double> ade_per_seed;
    std::vector<double> train_seconds;  // wall time of each seed's training
};

/// Trains {disdis, disdis w/o L3 (= cvae), disdis w/o L2} on shared data for every
/// ablation seed and reports seed-averaged most-likely ADE / FDE. Writes ablation.csv.
std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

/// Full-objective finite-difference check on a batch of synthetic samples.
ad::GradCheckReport gradcheck(const ExperimentConfig& cfg, std::size_t batch = 8, double tolerance = 1e-5,
                              std::size_t max_entries_per_param = 0);

/// Command-line entry point; returns the process exit status.
int run_cli(int argc, const char* const* argv);

}  // namespace disdis
