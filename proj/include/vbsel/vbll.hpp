#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vbsel/matrix.hpp"
#include "vbsel/rng.hpp"

namespace vbsel {

/// sigma = ln(1 + e^rho), evaluated without overflow for large rho.
inline double softplus(double rho)
{
    return rho > 0.0 ? rho + std::log1p(std::exp(-rho)) : std::log1p(std::exp(rho));
}

/// d softplus / d rho.
inline double logistic(double rho)
{
    if (rho >= 0.0) return 1.0 / (1.0 + std::exp(-rho));
    const double e = std::exp(rho);
    return e / (1.0 + e);
}

/// Variational Bayesian linear classifier head.
///
/// Every weight and bias has an independent Gaussian posterior N(mu, sigma^2)
/// with sigma = softplus(rho); the prior is N(0, prior_scale^2) on every
/// parameter. Weights are stored K x D (one row per class).
struct VBLinearLayer {
    Matrix weight_mu;
    Matrix weight_rho;
    std::vector<double> bias_mu;
    std::vector<double> bias_rho;
    double prior_scale = 1.0;

    VBLinearLayer() = default;
    VBLinearLayer(std::size_t feature_dim, std::size_t num_classes, double prior_scale);

    std::size_t feature_dim() const { return weight_mu.cols(); }
    std::size_t num_classes() const { return weight_mu.rows(); }

    /// Number of scalars in the flat parameter vector.
    std::size_t parameter_count() const { return 2 * (weight_mu.size() + bias_mu.size()); }

    /// Flat order: weight_mu, weight_rho, bias_mu, bias_rho.
    std::vector<double> flat_parameters() const;
    void assign_parameters(std::span<const double> flat);

    /// Throws ValidationError on inconsistent shapes, NumericalError on non-finite values.
    void validate() const;

    bool operator==(const VBLinearLayer&) const = default;
};

struct LayerInitConfig {
    double mu_init_scale = 0.1;
    double rho_init = -5.0;
    double prior_scale = 1.0;
};

/// One draw of every weight and bias.
struct WeightSample {
    Matrix weights;
    std::vector<double> biases;
};

/// Per-call Flipout randomness: one shared perturbation plus per-row signs.
struct FlipoutNoise {
    Matrix weight_eps;              // K x D, standard normal
    std::vector<double> bias_eps;   // K
    Matrix out_signs;               // B x K, entries +-1
    Matrix in_signs;                // B x D, entries +-1

    static FlipoutNoise draw(std::size_t batch, std::size_t feature_dim, std::size_t num_classes, Rng& rng);
};

VBLinearLayer init_layer(std::size_t feature_dim, std::size_t num_classes, const LayerInitConfig& cfg,
                         std::uint64_t seed);

/// Closed-form KL(q || prior) summed over all weights and biases.
double kl_to_prior(const VBLinearLayer& layer);

/// Reparameterized draw mu + softplus(rho) * eps.
WeightSample sample_weights(const VBLinearLayer& layer, Rng& rng);

/// batch * W^T + b for an explicit weight sample.
Matrix forward_sample(const WeightSample& sample, const Matrix& batch);

/// Logits through the posterior means.
Matrix forward_mean(const VBLinearLayer& layer, const Matrix& batch);

/// Flipout forward: draws FlipoutNoise from rng, then applies it.
Matrix forward_flipout(const VBLinearLayer& layer, const Matrix& batch, Rng& rng);
Matrix forward_flipout(const VBLinearLayer& layer, const Matrix& batch, const FlipoutNoise& noise);

/// Max-shifted softmax; writes into out (may alias logits).
void softmax(std::span<const double> logits, std::span<double> out);
std::vector<double> softmax(std::span<const double> logits);

/// JSON persistence (format_version 1).
std::string layer_to_json(const VBLinearLayer& layer);
VBLinearLayer layer_from_json(const std::string& text);
void save_layer(const VBLinearLayer& layer, const std::filesystem::path& path);
VBLinearLayer load_layer(const std::filesystem::path& path);

}  // namespace vbsel
