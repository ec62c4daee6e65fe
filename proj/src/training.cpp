#include "vbsel/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

#include <json.hpp>

#include "vbsel/errors.hpp"
#include "vbsel/numfmt.hpp"

namespace vbsel {

void TrainConfig::validate() const
{
    if (epochs < 1) throw ValidationError("epochs must be at least 1");
    if (batch_size < 1) throw ValidationError("batch_size must be at least 1");
    if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw ValidationError("adam_beta1 must lie in [0, 1)");
    if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw ValidationError("adam_beta2 must lie in [0, 1)");
    if (!(adam_epsilon > 0.0)) throw ValidationError("adam_epsilon must be positive");
    if (kl_scale_mode != "per_dataset") throw ValidationError("kl_scale_mode must be 'per_dataset'");
    if (train_mc_samples < 1) throw ValidationError("train_mc_samples must be at least 1");
    if (early_stop_patience && *early_stop_patience < 1)
        throw ValidationError("early_stop_patience must be at least 1 when set");
}

TrainConfig train_config_from_json(const std::string& text, const TrainConfig& base)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("train config: ") + e.what());
    }
    if (!j.is_object()) throw ValidationError("train config must be a JSON object");
    TrainConfig cfg = base;
    static const std::set<std::string> known{"epochs",       "batch_size",       "learning_rate",
                                             "adam_beta1",   "adam_beta2",       "adam_epsilon",
                                             "kl_scale_mode", "train_mc_samples", "seed",
                                             "early_stop_patience"};
    try {
        for (const auto& [key, value] : j.items()) {
            if (!known.count(key)) throw ValidationError("train config: unknown key '" + key + "'");
            if (key == "epochs") {
                const auto v = value.get<long long>();
                if (v < 1) throw ValidationError("epochs must be at least 1");
                cfg.epochs = static_cast<std::size_t>(v);
            } else if (key == "batch_size") {
                const auto v = value.get<long long>();
                if (v < 1) throw ValidationError("batch_size must be at least 1");
                cfg.batch_size = static_cast<std::size_t>(v);
            } else if (key == "learning_rate") {
                cfg.learning_rate = value.get<double>();
            } else if (key == "adam_beta1") {
                cfg.adam_beta1 = value.get<double>();
            } else if (key == "adam_beta2") {
                cfg.adam_beta2 = value.get<double>();
            } else if (key == "adam_epsilon") {
                cfg.adam_epsilon = value.get<double>();
            } else if (key == "kl_scale_mode") {
                cfg.kl_scale_mode = value.get<std::string>();
            } else if (key == "train_mc_samples") {
                const auto v = value.get<long long>();
                if (v < 1) throw ValidationError("train_mc_samples must be at least 1");
                cfg.train_mc_samples = static_cast<std::size_t>(v);
            } else if (key == "seed") {
                cfg.seed = value.get<std::uint64_t>();
            } else if (key == "early_stop_patience") {
                if (value.is_null()) {
                    cfg.early_stop_patience.reset();
                } else {
                    const auto v = value.get<long long>();
                    if (v < 1) throw ValidationError("early_stop_patience must be at least 1 when set");
                    cfg.early_stop_patience = static_cast<std::size_t>(v);
                }
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("train config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

std::vector<double> LayerGradients::flat() const
{
    std::vector<double> out;
    out.reserve(2 * (weight_mu.size() + bias_mu.size()));
    out.insert(out.end(), weight_mu.data().begin(), weight_mu.data().end());
    out.insert(out.end(), weight_rho.data().begin(), weight_rho.data().end());
    out.insert(out.end(), bias_mu.begin(), bias_mu.end());
    out.insert(out.end(), bias_rho.begin(), bias_rho.end());
    return out;
}

// ---------------------------------------------------------------------------
// ELBO

LayerGradients kl_gradients(const VBLinearLayer& layer, std::size_t n_train)
{
    if (n_train < 1) throw ValidationError("n_train must be at least 1");
    const std::size_t k = layer.num_classes();
    const std::size_t d = layer.feature_dim();
    LayerGradients g{Matrix(k, d), Matrix(k, d), std::vector<double>(k), std::vector<double>(k)};
    const double s2 = layer.prior_scale * layer.prior_scale;
    const double inv_n = 1.0 / static_cast<double>(n_train);
    // d/d mu = mu / s^2, d/d sigma = sigma / s^2 - 1 / sigma, d sigma / d rho = logistic(rho).
    const auto fill = [&](double mu, double rho, double& g_mu, double& g_rho) {
        const double sigma = softplus(rho);
        g_mu = mu / s2 * inv_n;
        g_rho = (sigma / s2 - 1.0 / sigma) * inv_n * logistic(rho);
    };
    for (std::size_t i = 0; i < layer.weight_mu.size(); ++i)
        fill(layer.weight_mu.data()[i], layer.weight_rho.data()[i], g.weight_mu.data()[i], g.weight_rho.data()[i]);
    for (std::size_t c = 0; c < k; ++c) fill(layer.bias_mu[c], layer.bias_rho[c], g.bias_mu[c], g.bias_rho[c]);
    return g;
}

namespace {

void check_elbo_inputs(const VBLinearLayer& layer, const Matrix& batch, std::span<const int> labels,
                       std::size_t n_train, std::size_t mc_samples)
{
    if (batch.cols() != layer.feature_dim()) throw ValidationError("batch width does not match layer");
    if (batch.rows() != labels.size()) throw ValidationError("batch rows and label count differ");
    if (batch.rows() == 0) throw ValidationError("empty batch");
    if (n_train < batch.rows()) throw ValidationError("n_train must be at least the batch size");
    if (mc_samples < 1) throw ValidationError("mc_samples must be at least 1");
    const auto k = static_cast<int>(layer.num_classes());
    for (int y : labels)
        if (y < 0 || y >= k) throw ValidationError("label " + std::to_string(y) + " out of range");
}

// -log softmax(z)_y via log-sum-exp.
double cross_entropy(std::span<const double> z, int y)
{
    const double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - m);
    return m + std::log(sum) - z[static_cast<std::size_t>(y)];
}

// Evaluates the loss and, when grads is non-null, accumulates its gradient.
LossBreakdown elbo_core(const VBLinearLayer& layer, const Matrix& batch, std::span<const int> labels,
                        std::size_t n_train, Rng& rng, std::size_t mc_samples, LayerGradients* grads)
{
    check_elbo_inputs(layer, batch, labels, n_train, mc_samples);
    const std::size_t k = layer.num_classes();
    const std::size_t d = layer.feature_dim();
    const std::size_t b = batch.rows();
    const double scale = 1.0 / (static_cast<double>(b) * static_cast<double>(mc_samples));

    // Accumulated d total / d delta_w and d total / d delta_b, before chaining to rho.
    Matrix g_delta_w(k, d);
    std::vector<double> g_delta_b(k, 0.0);

    double nll = 0.0;
    std::vector<double> p(k);
    for (std::size_t pass = 0; pass < mc_samples; ++pass) {
        const auto noise = FlipoutNoise::draw(b, d, k, rng);
        const Matrix logits = forward_flipout(layer, batch, noise);
        for (std::size_t n = 0; n < b; ++n) {
            const auto z = logits.row(n);
            const int y = labels[n];
            nll += cross_entropy(z, y) * scale;
            if (!grads) continue;
            softmax(z, p);
            p[static_cast<std::size_t>(y)] -= 1.0;
            const auto x = batch.row(n);
            const auto r = noise.out_signs.row(n);
            const auto s = noise.in_signs.row(n);
            for (std::size_t c = 0; c < k; ++c) {
                const double g = p[c] * scale;
                auto gw = grads->weight_mu.row(c);
                auto gdw = g_delta_w.row(c);
                const double gr = g * r[c];
                for (std::size_t j = 0; j < d; ++j) {
                    gw[j] += g * x[j];
                    gdw[j] += gr * s[j] * x[j];
                }
                grads->bias_mu[c] += g;
                g_delta_b[c] += gr;
            }
        }
        if (grads) {
            // delta = softplus(rho) * eps, so d/d rho = g_delta * eps * logistic(rho).
            for (std::size_t i = 0; i < g_delta_w.size(); ++i) {
                grads->weight_rho.data()[i] +=
                    g_delta_w.data()[i] * noise.weight_eps.data()[i] * logistic(layer.weight_rho.data()[i]);
                g_delta_w.data()[i] = 0.0;
            }
            for (std::size_t c = 0; c < k; ++c) {
                grads->bias_rho[c] += g_delta_b[c] * noise.bias_eps[c] * logistic(layer.bias_rho[c]);
                g_delta_b[c] = 0.0;
            }
        }
    }

    LossBreakdown loss;
    loss.nll = nll;
    loss.kl = kl_to_prior(layer);
    loss.total = loss.nll + loss.kl / static_cast<double>(n_train);

    if (grads) {
        const auto kl_grads = kl_gradients(layer, n_train);
        const auto add = [](auto& dst, const auto& src) {
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
        };
        add(grads->weight_mu.data(), kl_grads.weight_mu.data());
        add(grads->weight_rho.data(), kl_grads.weight_rho.data());
        add(grads->bias_mu, kl_grads.bias_mu);
        add(grads->bias_rho, kl_grads.bias_rho);
    }
    return loss;
}

}  // namespace

LossBreakdown elbo_loss(const VBLinearLayer& layer, const Matrix& batch, std::span<const int> labels,
                        std::size_t n_train, Rng rng, std::size_t mc_samples)
{
    return elbo_core(layer, batch, labels, n_train, rng, mc_samples, nullptr);
}

ElboEvaluation elbo_gradients(const VBLinearLayer& layer, const Matrix& batch, std::span<const int> labels,
                              std::size_t n_train, Rng rng, std::size_t mc_samples)
{
    const std::size_t k = layer.num_classes();
    const std::size_t d = layer.feature_dim();
    ElboEvaluation out{{}, {Matrix(k, d), Matrix(k, d), std::vector<double>(k, 0.0), std::vector<double>(k, 0.0)}};
    out.loss = elbo_core(layer, batch, labels, n_train, rng, mc_samples, &out.grads);
    return out;
}

// ---------------------------------------------------------------------------
// Adam

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, std::size_t step_index,
               const AdamConfig& config)
{
    if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size())
        throw ValidationError("adam_step: parameter, gradient and state sizes differ");
    if (step_index < 1) throw ValidationError("adam_step: step_index counts from 1");
    const double t = static_cast<double>(step_index);
    const double c1 = 1.0 - std::pow(config.beta1, t);
    const double c2 = 1.0 - std::pow(config.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
        state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
        const double m_hat = state.m[i] / c1;
        const double v_hat = state.v[i] / c2;
        params[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
}

// ---------------------------------------------------------------------------
// Training loop

MeanEvaluation evaluate_mean(const VBLinearLayer& layer, const FeatureDataset& ds)
{
    const Matrix logits = forward_mean(layer, ds.features());
    double nll = 0.0;
    std::size_t correct = 0;
    for (std::size_t n = 0; n < ds.size(); ++n) {
        const auto z = logits.row(n);
        const int y = ds.labels()[n];
        nll += cross_entropy(z, y);
        const auto pred = std::max_element(z.begin(), z.end()) - z.begin();
        if (pred == y) ++correct;
    }
    const double count = static_cast<double>(ds.size());
    return {nll / count, static_cast<double>(correct) / count};
}

TrainResult train(const FeatureDataset& train_ds, const FeatureDataset& val_ds, const LayerInitConfig& init,
                  const TrainConfig& config)
{
    config.validate();
    if (train_ds.feature_dim() != val_ds.feature_dim())
        throw ValidationError("train has " + std::to_string(train_ds.feature_dim()) + " features, validation has " +
                              std::to_string(val_ds.feature_dim()));
    if (train_ds.num_classes() != val_ds.num_classes())
        throw ValidationError("train has " + std::to_string(train_ds.num_classes()) + " classes, validation has " +
                              std::to_string(val_ds.num_classes()));

    const std::size_t n = train_ds.size();
    const std::size_t d = train_ds.feature_dim();
    VBLinearLayer layer = init_layer(d, train_ds.num_classes(), init, derive_seed(config.seed, "init"));
    const AdamConfig adam{config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_epsilon};
    AdamState state(layer.parameter_count());
    std::vector<double> params = layer.flat_parameters();

    TrainResult result{layer, {}};
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;

    std::vector<std::size_t> order(n);
    std::size_t step = 0;
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle_rng(derive_seed(derive_seed(config.seed, "shuffle"), epoch));
        for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[shuffle_rng.index(i + 1)]);

        double sum_total = 0.0;
        double sum_nll = 0.0;
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < n; start += config.batch_size, ++batch_index) {
            const std::size_t stop = std::min(n, start + config.batch_size);
            const std::size_t rows = stop - start;
            Matrix x(rows, d);
            std::vector<int> y(rows);
            for (std::size_t r = 0; r < rows; ++r) {
                const auto src = train_ds.features().row(order[start + r]);
                std::copy(src.begin(), src.end(), x.row(r).begin());
                y[r] = train_ds.labels()[order[start + r]];
            }
            const Rng noise(derive_seed(config.seed, epoch, batch_index));
            const auto eval = elbo_gradients(layer, x, y, n, noise, config.train_mc_samples);
            sum_total += eval.loss.total * static_cast<double>(rows);
            sum_nll += eval.loss.nll * static_cast<double>(rows);
            const auto g = eval.grads.flat();
            adam_step(params, g, state, ++step, adam);
            layer.assign_parameters(params);
        }
        for (double v : params)
            if (!std::isfinite(v))
                throw NumericalError("non-finite parameter after epoch " + std::to_string(epoch));

        const auto val = evaluate_mean(layer, val_ds);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.total = sum_total / static_cast<double>(n);
        rec.nll = sum_nll / static_cast<double>(n);
        rec.kl = kl_to_prior(layer);
        rec.val_nll = val.nll;
        rec.val_acc = val.accuracy;
        if (!std::isfinite(rec.total) || !std::isfinite(rec.val_nll))
            throw NumericalError("non-finite loss at epoch " + std::to_string(epoch));
        result.trace.push_back(rec);

        if (config.early_stop_patience) {
            if (val.nll < best_val) {
                best_val = val.nll;
                result.layer = layer;
                since_best = 0;
            } else if (++since_best >= *config.early_stop_patience) {
                break;
            }
        }
    }
    if (!config.early_stop_patience) result.layer = layer;
    return result;
}

std::string trace_to_csv(const TrainingTrace& trace)
{
    std::string out = "epoch,total,nll,kl,val_nll,val_acc\n";
    for (const auto& r : trace) {
        out += std::to_string(r.epoch) + "," + format_double(r.total) + "," + format_double(r.nll) + "," +
               format_double(r.kl) + "," + format_double(r.val_nll) + "," + format_double(r.val_acc) + "\n";
    }
    return out;
}

void write_trace_csv(const TrainingTrace& trace, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << trace_to_csv(trace);
    if (!out) throw IoError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Gradient check

double gradcheck(const VBLinearLayer& layer, const Matrix& batch, std::span<const int> labels, std::size_t n_train,
                 double h, std::uint64_t seed)
{
    const Rng noise(seed);
    const auto analytic = elbo_gradients(layer, batch, labels, n_train, noise).grads.flat();
    std::vector<double> params = layer.flat_parameters();
    VBLinearLayer probe = layer;
    double worst = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double saved = params[i];
        params[i] = saved + h;
        probe.assign_parameters(params);
        const double up = elbo_loss(probe, batch, labels, n_train, noise).total;
        params[i] = saved - h;
        probe.assign_parameters(params);
        const double down = elbo_loss(probe, batch, labels, n_train, noise).total;
        params[i] = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double err = std::abs(analytic[i] - numeric) / std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace vbsel
