#include "vbsel/vbll.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "vbsel/errors.hpp"

namespace vbsel {

VBLinearLayer::VBLinearLayer(std::size_t feature_dim, std::size_t num_classes, double prior)
    : weight_mu(num_classes, feature_dim),
      weight_rho(num_classes, feature_dim),
      bias_mu(num_classes, 0.0),
      bias_rho(num_classes, 0.0),
      prior_scale(prior)
{
}

std::vector<double> VBLinearLayer::flat_parameters() const
{
    std::vector<double> flat;
    flat.reserve(parameter_count());
    flat.insert(flat.end(), weight_mu.data().begin(), weight_mu.data().end());
    flat.insert(flat.end(), weight_rho.data().begin(), weight_rho.data().end());
    flat.insert(flat.end(), bias_mu.begin(), bias_mu.end());
    flat.insert(flat.end(), bias_rho.begin(), bias_rho.end());
    return flat;
}

void VBLinearLayer::assign_parameters(std::span<const double> flat)
{
    if (flat.size() != parameter_count()) throw ValidationError("parameter vector has the wrong length");
    auto it = flat.begin();
    const auto take = [&](auto& dst) {
        std::copy(it, it + static_cast<std::ptrdiff_t>(dst.size()), dst.begin());
        it += static_cast<std::ptrdiff_t>(dst.size());
    };
    take(weight_mu.data());
    take(weight_rho.data());
    take(bias_mu);
    take(bias_rho);
}

void VBLinearLayer::validate() const
{
    const std::size_t k = weight_mu.rows();
    const std::size_t d = weight_mu.cols();
    if (k < 1 || d < 1) throw ValidationError("layer must have at least one class and one feature");
    if (weight_rho.rows() != k || weight_rho.cols() != d || bias_mu.size() != k || bias_rho.size() != k)
        throw ValidationError("layer parameter shapes are inconsistent");
    if (!(prior_scale > 0.0) || !std::isfinite(prior_scale)) throw ValidationError("prior_scale must be positive");
    for (double v : flat_parameters())
        if (!std::isfinite(v)) throw NumericalError("layer contains a non-finite parameter");
}

FlipoutNoise FlipoutNoise::draw(std::size_t batch, std::size_t feature_dim, std::size_t num_classes, Rng& rng)
{
    FlipoutNoise n{Matrix(num_classes, feature_dim), std::vector<double>(num_classes), Matrix(batch, num_classes),
                   Matrix(batch, feature_dim)};
    for (double& v : n.weight_eps.data()) v = rng.normal();
    for (double& v : n.bias_eps) v = rng.normal();
    for (std::size_t b = 0; b < batch; ++b) {
        for (double& v : n.out_signs.row(b)) v = rng.sign();
        for (double& v : n.in_signs.row(b)) v = rng.sign();
    }
    return n;
}

VBLinearLayer init_layer(std::size_t feature_dim, std::size_t num_classes, const LayerInitConfig& cfg,
                         std::uint64_t seed)
{
    if (feature_dim < 1 || num_classes < 1) throw ValidationError("layer dimensions must be at least 1");
    if (!(cfg.prior_scale > 0.0)) throw ValidationError("prior_scale must be positive");
    VBLinearLayer layer(feature_dim, num_classes, cfg.prior_scale);
    Rng rng(seed);
    for (double& v : layer.weight_mu.data()) v = rng.uniform(-cfg.mu_init_scale, cfg.mu_init_scale);
    for (double& v : layer.bias_mu) v = rng.uniform(-cfg.mu_init_scale, cfg.mu_init_scale);
    std::fill(layer.weight_rho.data().begin(), layer.weight_rho.data().end(), cfg.rho_init);
    std::fill(layer.bias_rho.begin(), layer.bias_rho.end(), cfg.rho_init);
    return layer;
}

namespace {

double kl_term(double mu, double rho, double s)
{
    const double sigma = softplus(rho);
    return std::log(s / sigma) + (sigma * sigma + mu * mu) / (2.0 * s * s) - 0.5;
}

void check_batch(const VBLinearLayer& layer, const Matrix& batch)
{
    if (batch.cols() != layer.feature_dim())
        throw ValidationError("batch has " + std::to_string(batch.cols()) + " columns, layer expects " +
                              std::to_string(layer.feature_dim()));
}

}  // namespace

double kl_to_prior(const VBLinearLayer& layer)
{
    const double s = layer.prior_scale;
    double kl = 0.0;
    for (std::size_t i = 0; i < layer.weight_mu.size(); ++i)
        kl += kl_term(layer.weight_mu.data()[i], layer.weight_rho.data()[i], s);
    for (std::size_t i = 0; i < layer.bias_mu.size(); ++i) kl += kl_term(layer.bias_mu[i], layer.bias_rho[i], s);
    return kl;
}

WeightSample sample_weights(const VBLinearLayer& layer, Rng& rng)
{
    WeightSample out{Matrix(layer.num_classes(), layer.feature_dim()), std::vector<double>(layer.num_classes())};
    for (std::size_t i = 0; i < layer.weight_mu.size(); ++i)
        out.weights.data()[i] = layer.weight_mu.data()[i] + softplus(layer.weight_rho.data()[i]) * rng.normal();
    for (std::size_t k = 0; k < layer.bias_mu.size(); ++k)
        out.biases[k] = layer.bias_mu[k] + softplus(layer.bias_rho[k]) * rng.normal();
    return out;
}

namespace {

Matrix linear(const Matrix& weights, std::span<const double> biases, const Matrix& batch)
{
    const std::size_t k = weights.rows();
    Matrix logits(batch.rows(), k);
    for (std::size_t n = 0; n < batch.rows(); ++n) {
        const auto x = batch.row(n);
        for (std::size_t c = 0; c < k; ++c) {
            const auto w = weights.row(c);
            double z = biases[c];
            for (std::size_t j = 0; j < x.size(); ++j) z += w[j] * x[j];
            logits(n, c) = z;
        }
    }
    return logits;
}

}  // namespace

Matrix forward_sample(const WeightSample& sample, const Matrix& batch)
{
    if (batch.cols() != sample.weights.cols()) throw ValidationError("batch width does not match weight sample");
    return linear(sample.weights, sample.biases, batch);
}

Matrix forward_mean(const VBLinearLayer& layer, const Matrix& batch)
{
    check_batch(layer, batch);
    return linear(layer.weight_mu, layer.bias_mu, batch);
}

Matrix forward_flipout(const VBLinearLayer& layer, const Matrix& batch, Rng& rng)
{
    check_batch(layer, batch);
    const auto noise = FlipoutNoise::draw(batch.rows(), layer.feature_dim(), layer.num_classes(), rng);
    return forward_flipout(layer, batch, noise);
}

Matrix forward_flipout(const VBLinearLayer& layer, const Matrix& batch, const FlipoutNoise& noise)
{
    check_batch(layer, batch);
    const std::size_t k = layer.num_classes();
    const std::size_t d = layer.feature_dim();

    Matrix delta_w(k, d);
    for (std::size_t i = 0; i < delta_w.size(); ++i)
        delta_w.data()[i] = softplus(layer.weight_rho.data()[i]) * noise.weight_eps.data()[i];
    std::vector<double> delta_b(k);
    for (std::size_t c = 0; c < k; ++c) delta_b[c] = softplus(layer.bias_rho[c]) * noise.bias_eps[c];

    Matrix logits = linear(layer.weight_mu, layer.bias_mu, batch);
    std::vector<double> flipped(d);
    for (std::size_t n = 0; n < batch.rows(); ++n) {
        const auto x = batch.row(n);
        const auto s = noise.in_signs.row(n);
        const auto r = noise.out_signs.row(n);
        for (std::size_t j = 0; j < d; ++j) flipped[j] = s[j] * x[j];
        for (std::size_t c = 0; c < k; ++c) {
            const auto dw = delta_w.row(c);
            double z = delta_b[c];
            for (std::size_t j = 0; j < d; ++j) z += dw[j] * flipped[j];
            logits(n, c) += r[c] * z;
        }
    }
    return logits;
}

void softmax(std::span<const double> logits, std::span<double> out)
{
    const double m = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (std::size_t k = 0; k < logits.size(); ++k) {
        out[k] = std::exp(logits[k] - m);
        sum += out[k];
    }
    for (double& p : out) p /= sum;
}

std::vector<double> softmax(std::span<const double> logits)
{
    std::vector<double> out(logits.size());
    softmax(logits, out);
    return out;
}

// ---------------------------------------------------------------------------
// Persistence

std::string layer_to_json(const VBLinearLayer& layer)
{
    nlohmann::ordered_json j;
    j["format_version"] = 1;
    j["feature_dim"] = layer.feature_dim();
    j["num_classes"] = layer.num_classes();
    j["prior_scale"] = layer.prior_scale;
    j["weight_mu"] = layer.weight_mu.data();
    j["weight_rho"] = layer.weight_rho.data();
    j["bias_mu"] = layer.bias_mu;
    j["bias_rho"] = layer.bias_rho;
    return j.dump(2) + "\n";
}

VBLinearLayer layer_from_json(const std::string& text)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("model JSON: ") + e.what());
    }
    try {
        if (j.at("format_version").get<int>() != 1) throw ValidationError("model JSON: unsupported format_version");
        const auto d = j.at("feature_dim").get<std::size_t>();
        const auto k = j.at("num_classes").get<std::size_t>();
        VBLinearLayer layer(d, k, j.at("prior_scale").get<double>());
        const auto read = [&](const char* key, std::vector<double>& dst) {
            auto v = j.at(key).get<std::vector<double>>();
            if (v.size() != dst.size())
                throw ValidationError(std::string("model JSON: field ") + key + " has " + std::to_string(v.size()) +
                                      " entries, expected " + std::to_string(dst.size()));
            dst = std::move(v);
        };
        read("weight_mu", layer.weight_mu.data());
        read("weight_rho", layer.weight_rho.data());
        read("bias_mu", layer.bias_mu);
        read("bias_rho", layer.bias_rho);
        layer.validate();
        return layer;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("model JSON: ") + e.what());
    }
}

void save_layer(const VBLinearLayer& layer, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << layer_to_json(layer);
    if (!out) throw IoError("write failed for " + path.string());
}

VBLinearLayer load_layer(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return layer_from_json(buf.str());
}

}  // namespace vbsel
