#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vbsel/dataset.hpp"
#include "vbsel/matrix.hpp"
#include "vbsel/vbll.hpp"

namespace vbsel {

inline constexpr std::size_t kDefaultMcSamples = 20;

/// Monte Carlo predictive posterior for N inputs.
class PredictionSet {
public:
    /// prob_samples is N x S x K, sample-major within each input. Builds the
    /// mean probabilities and argmax predictions (lowest index wins ties).
    PredictionSet(std::size_t num_inputs, std::size_t mc_samples, std::size_t num_classes,
                  std::vector<double> prob_samples);

    std::size_t size() const { return num_inputs_; }
    std::size_t mc_samples() const { return mc_samples_; }
    std::size_t num_classes() const { return num_classes_; }

    std::span<const double> sample(std::size_t n, std::size_t s) const
    {
        return {prob_samples_.data() + (n * mc_samples_ + s) * num_classes_, num_classes_};
    }
    const std::vector<double>& prob_samples() const { return prob_samples_; }
    const Matrix& mean_probs() const { return mean_probs_; }
    const std::vector<int>& predicted() const { return predicted_; }

private:
    std::size_t num_inputs_;
    std::size_t mc_samples_;
    std::size_t num_classes_;
    std::vector<double> prob_samples_;
    Matrix mean_probs_;
    std::vector<int> predicted_;
};

struct UncertaintyScores {
    std::vector<double> confidence;        // max_k mean_probs
    std::vector<double> entropy;           // H[mean_probs], nats
    std::vector<double> expected_entropy;  // mean over samples of H[p_s]
    std::vector<double> mutual_info;       // max(0, entropy - expected_entropy)
};

/// Draws S weight samples; sample s uses Rng(derive_seed(seed, s)), so a run
/// with S samples is a prefix of any run with more samples and the same seed.
PredictionSet predictive_posterior(const VBLinearLayer& layer, const Matrix& features, std::size_t mc_samples,
                                   std::uint64_t seed);
PredictionSet predictive_posterior(const VBLinearLayer& layer, const FeatureDataset& ds, std::size_t mc_samples,
                                   std::uint64_t seed);

/// Entropy in nats with 0 ln 0 = 0.
double entropy(std::span<const double> p);

UncertaintyScores uncertainty_scores(const PredictionSet& pred);

/// `index,label,predicted,confidence,entropy,mutual_info`
std::string predictions_to_csv(const PredictionSet& pred, const UncertaintyScores& scores,
                               std::span<const int> labels);
/// `index,sample,p0..p{K-1}`
std::string posterior_to_csv(const PredictionSet& pred);

}  // namespace vbsel
