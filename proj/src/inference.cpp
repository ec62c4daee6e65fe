#include "vbsel/inference.hpp"

#include <algorithm>
#include <cmath>

#include "vbsel/errors.hpp"
#include "vbsel/numfmt.hpp"
#include "vbsel/rng.hpp"

namespace vbsel {

PredictionSet::PredictionSet(std::size_t num_inputs, std::size_t mc_samples, std::size_t num_classes,
                             std::vector<double> prob_samples)
    : num_inputs_(num_inputs),
      mc_samples_(mc_samples),
      num_classes_(num_classes),
      prob_samples_(std::move(prob_samples)),
      mean_probs_(num_inputs, num_classes),
      predicted_(num_inputs, 0)
{
    if (mc_samples_ < 1) throw ValidationError("mc_samples must be at least 1");
    if (num_classes_ < 1) throw ValidationError("num_classes must be at least 1");
    if (prob_samples_.size() != num_inputs_ * mc_samples_ * num_classes_)
        throw ValidationError("prob_samples size does not match N x S x K");
    const double inv_s = 1.0 / static_cast<double>(mc_samples_);
    for (std::size_t n = 0; n < num_inputs_; ++n) {
        auto mean = mean_probs_.row(n);
        for (std::size_t s = 0; s < mc_samples_; ++s) {
            const auto p = sample(n, s);
            for (std::size_t k = 0; k < num_classes_; ++k) mean[k] += p[k];
        }
        for (double& v : mean) v *= inv_s;
        // max_element returns the first maximum, i.e. the lowest class index.
        predicted_[n] = static_cast<int>(std::max_element(mean.begin(), mean.end()) - mean.begin());
    }
}

PredictionSet predictive_posterior(const VBLinearLayer& layer, const Matrix& features, std::size_t mc_samples,
                                   std::uint64_t seed)
{
    if (mc_samples < 1) throw ValidationError("mc_samples must be at least 1");
    if (features.cols() != layer.feature_dim())
        throw ValidationError("data has " + std::to_string(features.cols()) + " features, model expects " +
                              std::to_string(layer.feature_dim()));
    const std::size_t n_inputs = features.rows();
    const std::size_t k = layer.num_classes();
    std::vector<double> probs(n_inputs * mc_samples * k);
    for (std::size_t s = 0; s < mc_samples; ++s) {
        Rng rng(derive_seed(seed, s));
        const auto w = sample_weights(layer, rng);
        const Matrix logits = forward_sample(w, features);
        for (std::size_t n = 0; n < n_inputs; ++n)
            softmax(logits.row(n), std::span<double>(probs.data() + (n * mc_samples + s) * k, k));
    }
    return PredictionSet(n_inputs, mc_samples, k, std::move(probs));
}

PredictionSet predictive_posterior(const VBLinearLayer& layer, const FeatureDataset& ds, std::size_t mc_samples,
                                   std::uint64_t seed)
{
    if (ds.num_classes() != layer.num_classes())
        throw ValidationError("data has " + std::to_string(ds.num_classes()) + " classes, model has " +
                              std::to_string(layer.num_classes()));
    return predictive_posterior(layer, ds.features(), mc_samples, seed);
}

double entropy(std::span<const double> p)
{
    double h = 0.0;
    for (double v : p)
        if (v > 0.0) h -= v * std::log(v);
    return std::max(0.0, h);
}

UncertaintyScores uncertainty_scores(const PredictionSet& pred)
{
    const std::size_t n_inputs = pred.size();
    UncertaintyScores out;
    out.confidence.resize(n_inputs);
    out.entropy.resize(n_inputs);
    out.expected_entropy.resize(n_inputs);
    out.mutual_info.resize(n_inputs);
    const double inv_s = 1.0 / static_cast<double>(pred.mc_samples());
    const double k = static_cast<double>(pred.num_classes());
    const double max_entropy = std::log(k);
    for (std::size_t n = 0; n < n_inputs; ++n) {
        const auto mean = pred.mean_probs().row(n);
        // Exact bounds; round-off in the mean can leave the raw values a few ulps outside.
        out.confidence[n] = std::clamp(*std::max_element(mean.begin(), mean.end()), 1.0 / k, 1.0);
        out.entropy[n] = std::min(entropy(mean), max_entropy);
        double expected = 0.0;
        for (std::size_t s = 0; s < pred.mc_samples(); ++s) expected += entropy(pred.sample(n, s));
        out.expected_entropy[n] = std::min(expected * inv_s, max_entropy);
        out.mutual_info[n] = std::max(0.0, out.entropy[n] - out.expected_entropy[n]);
    }
    return out;
}

std::string predictions_to_csv(const PredictionSet& pred, const UncertaintyScores& scores,
                               std::span<const int> labels)
{
    if (labels.size() != pred.size()) throw ValidationError("label count does not match predictions");
    std::string out = "index,label,predicted,confidence,entropy,mutual_info\n";
    for (std::size_t n = 0; n < pred.size(); ++n) {
        out += std::to_string(n) + "," + std::to_string(labels[n]) + "," + std::to_string(pred.predicted()[n]) + "," +
               format_double(scores.confidence[n]) + "," + format_double(scores.entropy[n]) + "," +
               format_double(scores.mutual_info[n]) + "\n";
    }
    return out;
}

std::string posterior_to_csv(const PredictionSet& pred)
{
    std::string out = "index,sample";
    for (std::size_t k = 0; k < pred.num_classes(); ++k) out += ",p" + std::to_string(k);
    out += "\n";
    for (std::size_t n = 0; n < pred.size(); ++n) {
        for (std::size_t s = 0; s < pred.mc_samples(); ++s) {
            out += std::to_string(n) + "," + std::to_string(s);
            for (double p : pred.sample(n, s)) out += "," + format_double(p);
            out += "\n";
        }
    }
    return out;
}

}  // namespace vbsel
