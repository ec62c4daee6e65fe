#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vbsel/dataset.hpp"
#include "vbsel/matrix.hpp"
#include "vbsel/rng.hpp"
#include "vbsel/vbll.hpp"

namespace vbsel {

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 128;
    double learning_rate = 1e-2;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    std::string kl_scale_mode = "per_dataset";
    std::size_t train_mc_samples = 1;
    std::uint64_t seed = 0;
    std::optional<std::size_t> early_stop_patience;

    void validate() const;
};

/// Parses a TrainConfig JSON object; unknown keys are rejected. Missing keys
/// keep the defaults of `base`.
TrainConfig train_config_from_json(const std::string& text, const TrainConfig& base = {});

/// Negative ELBO for one minibatch: mean cross-entropy plus KL / n_train.
struct LossBreakdown {
    double nll = 0.0;
    double kl = 0.0;
    double total = 0.0;
};

/// Gradients with the same shapes as the layer parameters.
struct LayerGradients {
    Matrix weight_mu;
    Matrix weight_rho;
    std::vector<double> bias_mu;
    std::vector<double> bias_rho;

    /// Same flat order as VBLinearLayer::flat_parameters.
    std::vector<double> flat() const;
};

/// Gradient of kl_to_prior(layer) / n_train alone.
LayerGradients kl_gradients(const VBLinearLayer& layer, std::size_t n_train);

struct ElboEvaluation {
    LossBreakdown loss;
    LayerGradients grads;
};

/// The stream is taken by value: calls made with copies of the same stream
/// consume identical Flipout noise, so loss and gradient evaluations replay.
LossBreakdown elbo_loss(const VBLinearLayer& layer, const Matrix& batch, std::span<const int> labels,
                        std::size_t n_train, Rng rng, std::size_t mc_samples = 1);

ElboEvaluation elbo_gradients(const VBLinearLayer& layer, const Matrix& batch, std::span<const int> labels,
                              std::size_t n_train, Rng rng, std::size_t mc_samples = 1);

struct AdamConfig {
    double learning_rate = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;

    explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
    bool operator==(const AdamState&) const = default;
};

/// One bias-corrected Adam update; step_index counts from 1.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, std::size_t step_index,
               const AdamConfig& config);

struct EpochRecord {
    std::size_t epoch = 0;
    double total = 0.0;
    double nll = 0.0;
    double kl = 0.0;
    double val_nll = 0.0;
    double val_acc = 0.0;
};

using TrainingTrace = std::vector<EpochRecord>;

struct TrainResult {
    VBLinearLayer layer;
    TrainingTrace trace;
};

/// Layer initialisation uses derive_seed(config.seed, "init"); minibatch order
/// and Flipout noise are keyed by (seed, epoch, batch).
TrainResult train(const FeatureDataset& train_ds, const FeatureDataset& val_ds, const LayerInitConfig& init,
                  const TrainConfig& config);

/// Mean cross-entropy and accuracy of the posterior-mean classifier.
struct MeanEvaluation {
    double nll = 0.0;
    double accuracy = 0.0;
};
MeanEvaluation evaluate_mean(const VBLinearLayer& layer, const FeatureDataset& ds);

std::string trace_to_csv(const TrainingTrace& trace);
void write_trace_csv(const TrainingTrace& trace, const std::filesystem::path& path);

/// Max over all parameters of |analytic - central difference| /
/// max(1e-8, |analytic| + |difference|), with noise replayed from `seed`.
double gradcheck(const VBLinearLayer& layer, const Matrix& batch, std::span<const int> labels, std::size_t n_train,
                 double h, std::uint64_t seed);

}  // namespace vbsel
