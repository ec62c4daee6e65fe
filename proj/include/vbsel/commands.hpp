#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "vbsel/calibration.hpp"
#include "vbsel/dataset.hpp"
#include "vbsel/inference.hpp"
#include "vbsel/selection.hpp"
#include "vbsel/training.hpp"
#include "vbsel/vbll.hpp"

namespace vbsel {

struct BalanceConfig {
    std::vector<std::size_t> target_counts;  // empty: raise every class to the largest class count
    std::size_t k_neighbors = kDefaultSmoteNeighbors;
};

struct EvalConfig {
    std::size_t mc_samples = kDefaultMcSamples;
    double threshold = 0.7;
    Measure measure = Measure::confidence;
    std::size_t ece_bins = kDefaultEceBins;
    std::size_t hist_bins = kDefaultHistogramBins;
    bool ece_accepted_only = false;
    bool write_posterior = false;
    std::vector<double> grid = default_threshold_grid();
};

/// Everything one toolkit run needs. A single global seed is fanned out to
/// per-role sub-seeds ("gen", "split", "balance", "train", "inference").
struct RunConfig {
    std::uint64_t seed = 0;
    SyntheticConfig synthetic;
    SplitRatios split;
    BalanceConfig balance;
    LayerInitConfig layer;
    TrainConfig train;
    EvalConfig eval;
};

/// Nested JSON object with optional sections `synthetic`, `split`, `balance`,
/// `layer`, `train`, `eval` plus a top-level `seed`. Unknown keys are rejected.
RunConfig run_config_from_json(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Headline metrics of one evaluation plus run metadata.
struct SummaryReport {
    std::optional<double> accuracy_accepted;
    double coverage = 0.0;
    double rejection_rate = 0.0;
    std::optional<double> ece;
    double overall_accuracy = 0.0;
    std::size_t n_samples = 0;
    double threshold = 0.0;
    Measure measure = Measure::confidence;
    std::size_t mc_samples = 0;
    std::uint64_t seed = 0;
    std::string ece_scope = "all";
    std::string toolkit_version;
};

std::string summary_to_json(const SummaryReport& s);

/// Everything an evaluation computes, before it is written out.
struct Evaluation {
    PredictionSet predictions;
    UncertaintyScores scores;
    RejectionReport rejection;
    std::optional<CalibrationReport> calibration;
    ConfidenceHistogram histogram;
    SummaryReport summary;
};

Evaluation evaluate(const VBLinearLayer& layer, const FeatureDataset& data, const RunConfig& cfg);

void cmd_gen(const RunConfig& cfg, const std::filesystem::path& out_csv);
void cmd_split(const RunConfig& cfg, const std::filesystem::path& in_csv, const std::filesystem::path& out_dir);
void cmd_balance(const RunConfig& cfg, const std::filesystem::path& in_csv, const std::filesystem::path& out_csv);
/// Writes model.json and trace.csv into out_dir.
void cmd_train(const RunConfig& cfg, const std::filesystem::path& train_csv, const std::filesystem::path& val_csv,
               const std::filesystem::path& out_dir);
/// Writes summary.json, calibration.json, predictions.csv, histogram.csv,
/// confusion_all.csv, confusion_accepted.csv (and posterior.csv on request).
SummaryReport cmd_eval(const RunConfig& cfg, const std::filesystem::path& model_json,
                       const std::filesystem::path& data_csv, const std::filesystem::path& out_dir);
RejectionCurve cmd_sweep(const RunConfig& cfg, const std::filesystem::path& model_json,
                         const std::filesystem::path& data_csv, const std::filesystem::path& out_csv);

struct GradcheckInstance {
    VBLinearLayer layer;
    Matrix batch;
    std::vector<int> labels;
    std::size_t n_train = 0;
};

/// Random layer (mu in [-0.5, 0.5], rho in [-3, 0]), standard normal inputs
/// and uniform labels; n_train equals the batch size.
GradcheckInstance random_gradcheck_instance(std::size_t num_classes, std::size_t feature_dim, std::size_t batch,
                                            std::uint64_t seed);
double cmd_gradcheck(std::size_t num_classes, std::size_t feature_dim, std::size_t batch, double h,
                     std::uint64_t seed);

/// Parses "lo:step:hi" or a comma-separated list; values are snapped to
/// 12 significant decimal digits.
std::vector<double> parse_grid(const std::string& text);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace vbsel
