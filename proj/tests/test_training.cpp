#include <doctest.h>

#include <chrono>
#include <cmath>

#include "oracles.hpp"
#include "vbsel/errors.hpp"
#include "vbsel/training.hpp"

using namespace vbsel;

namespace {

VBLinearLayer random_layer(std::size_t d, std::size_t k, std::uint64_t seed, double prior = 1.0)
{
    Rng rng(seed);
    VBLinearLayer layer(d, k, prior);
    for (double& v : layer.weight_mu.data()) v = rng.uniform(-1.0, 1.0);
    for (double& v : layer.weight_rho.data()) v = rng.uniform(-4.0, 1.0);
    for (double& v : layer.bias_mu) v = rng.uniform(-1.0, 1.0);
    for (double& v : layer.bias_rho) v = rng.uniform(-4.0, 1.0);
    return layer;
}

struct Batch {
    Matrix x;
    std::vector<int> y;
};

Batch random_batch(std::size_t b, std::size_t d, std::size_t k, std::uint64_t seed)
{
    Rng rng(seed);
    Batch out{Matrix(b, d), std::vector<int>(b)};
    for (double& v : out.x.data()) v = rng.normal();
    for (int& y : out.y) y = static_cast<int>(rng.index(k));
    return out;
}

FeatureDataset synthetic(std::size_t per_class, std::uint64_t seed)
{
    SyntheticConfig cfg;
    cfg.samples_per_class = std::vector<std::size_t>(5, per_class);
    return generate_synthetic(cfg, seed);
}

}  // namespace

TEST_CASE("elbo_loss on a uniform deterministic layer")
{
    VBLinearLayer layer(3, 5, 1.0);
    for (double& v : layer.weight_rho.data()) v = -40.0;
    for (double& v : layer.bias_rho) v = -40.0;
    const auto batch = random_batch(6, 3, 5, 1);
    const auto loss = elbo_loss(layer, batch.x, batch.y, 100, Rng(3));
    CHECK(std::abs(loss.nll - std::log(5.0)) <= 1e-12);
    CHECK(loss.kl > 0.0);
    CHECK(loss.total == loss.nll + loss.kl / 100.0);
}

TEST_CASE("elbo_loss KL term vanishes when the posterior equals the prior")
{
    VBLinearLayer layer(3, 2, 1.0);
    const double rho = std::log(std::expm1(1.0));
    for (double& v : layer.weight_rho.data()) v = rho;
    for (double& v : layer.bias_rho) v = rho;
    const auto batch = random_batch(4, 3, 2, 2);
    const auto loss = elbo_loss(layer, batch.x, batch.y, 10, Rng(1));
    CHECK(std::abs(loss.kl) <= 1e-12);
    CHECK(std::abs(loss.total - loss.nll) <= 1e-12);
}

TEST_CASE("elbo_loss validates inputs")
{
    const auto layer = random_layer(3, 2, 1);
    const auto batch = random_batch(4, 3, 2, 2);
    std::vector<int> bad = batch.y;
    bad[0] = 2;
    CHECK_THROWS_AS(elbo_loss(layer, batch.x, bad, 10, Rng(1)), ValidationError);
    bad[0] = -1;
    CHECK_THROWS_AS(elbo_gradients(layer, batch.x, bad, 10, Rng(1)), ValidationError);
    CHECK_THROWS_AS(elbo_loss(layer, batch.x, batch.y, 3, Rng(1)), ValidationError);
    CHECK_THROWS_AS(elbo_loss(layer, Matrix(4, 2), batch.y, 10, Rng(1)), ValidationError);
}

TEST_CASE("loss and gradient calls replay identical noise")
{
    const auto layer = random_layer(4, 3, 5);
    const auto batch = random_batch(8, 4, 3, 6);
    const Rng noise(99);
    const auto a = elbo_loss(layer, batch.x, batch.y, 8, noise);
    const auto b = elbo_gradients(layer, batch.x, batch.y, 8, noise);
    CHECK(a.total == b.loss.total);
    CHECK(a.nll == b.loss.nll);
}

TEST_CASE("bias gradient of a zero layer is p minus the one-hot label")
{
    VBLinearLayer layer(3, 4, 1.0);
    for (double& v : layer.weight_rho.data()) v = -40.0;
    for (double& v : layer.bias_rho) v = -40.0;
    Matrix x(1, 3);
    x(0, 0) = 0.3, x(0, 1) = -2.0, x(0, 2) = 1.0;
    const std::vector<int> y{2};
    const auto eval = elbo_gradients(layer, x, y, 1, Rng(0));
    for (std::size_t k = 0; k < 4; ++k) CHECK(std::abs(eval.grads.bias_mu[k] - (0.25 - (k == 2 ? 1.0 : 0.0))) <= 1e-12);
}

TEST_CASE("KL gradients match their closed form and finite differences")
{
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const double prior = 0.5 + 0.25 * static_cast<double>(seed % 5);
        const auto layer = random_layer(3, 2, 100 + seed, prior);
        const std::size_t n_train = 17;
        const auto g = kl_gradients(layer, n_train).flat();
        const auto params = layer.flat_parameters();
        const std::size_t half = params.size() / 2;
        const std::size_t n_w = layer.weight_mu.size();
        for (std::size_t i = 0; i < params.size(); ++i) {
            // flat order: weight_mu, weight_rho, bias_mu, bias_rho
            const bool is_rho = (i >= n_w && i < 2 * n_w) || i >= 2 * n_w + layer.bias_mu.size();
            const std::size_t mu_index = !is_rho ? i : (i < 2 * n_w ? i - n_w : i - layer.bias_mu.size());
            const std::size_t rho_index = is_rho ? i : (i < n_w ? i + n_w : i + layer.bias_mu.size());
            const double mu = params[mu_index];
            const double rho = params[rho_index];
            const double sigma = std::log1p(std::exp(rho));
            const double s2 = prior * prior;
            const double expected = is_rho ? (sigma / s2 - 1.0 / sigma) / (1.0 + std::exp(-rho)) / n_train
                                           : mu / s2 / n_train;
            CHECK(std::abs(g[i] - expected) <= 1e-10);

            auto plus = params, minus = params;
            plus[i] += 1e-6;
            minus[i] -= 1e-6;
            VBLinearLayer a = layer, b = layer;
            a.assign_parameters(plus);
            b.assign_parameters(minus);
            const double fd = (kl_to_prior(a) - kl_to_prior(b)) / 2e-6 / n_train;
            CHECK(std::abs(fd - g[i]) <= 1e-6 * std::max(1.0, std::abs(g[i])));
        }
        (void)half;
    }
}

TEST_CASE("gradcheck on the standard small instance")
{
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto layer = random_layer(4, 3, seed);
        const auto batch = random_batch(8, 4, 3, seed + 1000);
        const double err = gradcheck(layer, batch.x, batch.y, 8, 1e-5, seed);
        CHECK(err <= 1e-4);
        CHECK(err == gradcheck(layer, batch.x, batch.y, 8, 1e-5, seed));
    }
}

TEST_CASE("gradcheck with several Flipout passes and a larger n_train")
{
    const auto layer = random_layer(5, 4, 8);
    const auto batch = random_batch(6, 5, 4, 9);
    const Rng noise(4);
    const auto analytic = elbo_gradients(layer, batch.x, batch.y, 50, noise, 3).grads.flat();
    auto params = layer.flat_parameters();
    double worst = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        VBLinearLayer a = layer, b = layer;
        auto p = params, m = params;
        p[i] += 1e-5;
        m[i] -= 1e-5;
        a.assign_parameters(p);
        b.assign_parameters(m);
        const double fd = (elbo_loss(a, batch.x, batch.y, 50, noise, 3).total -
                           elbo_loss(b, batch.x, batch.y, 50, noise, 3).total) / 2e-5;
        worst = std::max(worst, std::abs(fd - analytic[i]) / std::max(1e-8, std::abs(fd) + std::abs(analytic[i])));
    }
    CHECK(worst <= 1e-4);
}

TEST_CASE("gradcheck with a near-deterministic posterior")
{
    auto layer = random_layer(4, 3, 3);
    for (double& v : layer.weight_rho.data()) v = -40.0;
    for (double& v : layer.bias_rho) v = -40.0;
    const auto batch = random_batch(8, 4, 3, 4);
    CHECK(gradcheck(layer, batch.x, batch.y, 8, 1e-5, 2) <= 1e-4);
}

TEST_CASE("adam_step")
{
    const AdamConfig cfg;
    SUBCASE("zero gradient leaves parameters unchanged")
    {
        std::vector<double> p{1.0, -2.0, 3.0};
        const std::vector<double> g(3, 0.0);
        AdamState st(3);
        for (std::size_t t = 1; t <= 5; ++t) adam_step(p, g, st, t, cfg);
        CHECK(p == std::vector<double>{1.0, -2.0, 3.0});
    }
    SUBCASE("constant gradient settles at a learning-rate sized step")
    {
        std::vector<double> p{0.0, 0.0};
        const std::vector<double> g{0.37, -12.0};
        AdamState st(2);
        std::vector<double> before;
        for (std::size_t t = 1; t <= 10'000; ++t) {
            before = p;
            adam_step(p, g, st, t, cfg);
        }
        CHECK(std::abs((before[0] - p[0]) / cfg.learning_rate - 1.0) <= 0.01);
        CHECK(std::abs((p[1] - before[1]) / cfg.learning_rate - 1.0) <= 0.01);
    }
    SUBCASE("bit-identical across runs")
    {
        const auto run = [&] {
            std::vector<double> p{0.5, -0.5, 1.5};
            AdamState st(3);
            Rng rng(7);
            for (std::size_t t = 1; t <= 100; ++t) {
                std::vector<double> g{rng.normal(), rng.normal(), rng.normal()};
                adam_step(p, g, st, t, cfg);
            }
            return std::make_pair(p, st);
        };
        CHECK(run() == run());
    }
    SUBCASE("shape mismatch")
    {
        std::vector<double> p(3);
        const std::vector<double> g(2);
        AdamState st(3);
        CHECK_THROWS_AS(adam_step(p, g, st, 1, cfg), ValidationError);
        const std::vector<double> g3(3);
        CHECK_THROWS_AS(adam_step(p, g3, st, 0, cfg), ValidationError);
    }
}

TEST_CASE("train reaches high validation accuracy on separable synthetic data")
{
    const auto ds = synthetic(1000, 1);
    const auto parts = stratified_split(ds, SplitRatios{}, 2);
    TrainConfig cfg;
    cfg.seed = 3;
    const auto start = std::chrono::steady_clock::now();
    const auto result = train(parts.train, parts.val, LayerInitConfig{}, cfg);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    REQUIRE(result.trace.size() == 30);
    CHECK(result.trace.back().val_acc >= 0.90);
    CHECK(evaluate_mean(result.layer, parts.val).accuracy == result.trace.back().val_acc);
    CHECK(secs < 60.0);
    // A mean-weight classifier on a held-out split.
    CHECK(evaluate_mean(result.layer, parts.test).accuracy > 0.90);
}

TEST_CASE("training loss decreases for every seed")
{
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto parts = stratified_split(synthetic(200, seed), SplitRatios{}, seed);
        TrainConfig cfg;
        cfg.epochs = 10;
        cfg.seed = seed;
        const auto result = train(parts.train, parts.val, LayerInitConfig{}, cfg);
        CHECK(result.trace.at(9).total < result.trace.at(0).total);
        for (const auto& r : result.trace) CHECK(std::isfinite(r.total));
    }
}

TEST_CASE("train is deterministic per seed")
{
    const auto parts = stratified_split(synthetic(100, 4), SplitRatios{}, 4);
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.seed = 17;
    const auto a = train(parts.train, parts.val, LayerInitConfig{}, cfg);
    const auto b = train(parts.train, parts.val, LayerInitConfig{}, cfg);
    CHECK(layer_to_json(a.layer) == layer_to_json(b.layer));
    CHECK(trace_to_csv(a.trace) == trace_to_csv(b.trace));
    cfg.seed = 18;
    CHECK(layer_to_json(train(parts.train, parts.val, LayerInitConfig{}, cfg).layer) != layer_to_json(a.layer));
}

TEST_CASE("train validates config and dataset shapes")
{
    const auto parts = stratified_split(synthetic(30, 5), SplitRatios{}, 5);
    TrainConfig cfg;
    cfg.epochs = 0;
    CHECK_THROWS_AS(train(parts.train, parts.val, LayerInitConfig{}, cfg), ValidationError);
    cfg.epochs = 1;
    SyntheticConfig other;
    other.feature_dim = 3;
    other.samples_per_class = std::vector<std::size_t>(5, 10);
    CHECK_THROWS_AS(train(parts.train, generate_synthetic(other, 1), LayerInitConfig{}, cfg), ValidationError);
}

TEST_CASE("train raises a numerical error when parameters blow up")
{
    const auto parts = stratified_split(synthetic(30, 6), SplitRatios{}, 6);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.learning_rate = 1e300;
    CHECK_THROWS_AS(train(parts.train, parts.val, LayerInitConfig{}, cfg), NumericalError);
}

TEST_CASE("early stopping returns the best validation parameters")
{
    const auto parts = stratified_split(synthetic(60, 7), SplitRatios{}, 7);
    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.learning_rate = 0.2;
    cfg.early_stop_patience = 2;
    cfg.seed = 1;
    const auto result = train(parts.train, parts.val, LayerInitConfig{}, cfg);
    REQUIRE(result.trace.size() < 200);
    double best = 1e300;
    for (const auto& r : result.trace) best = std::min(best, r.val_nll);
    CHECK(evaluate_mean(result.layer, parts.val).nll == best);
}

TEST_CASE("with a very wide prior the head behaves like logistic regression")
{
    const auto parts = stratified_split(synthetic(300, 8), SplitRatios{}, 8);
    TrainConfig cfg;
    cfg.seed = 2;
    LayerInitConfig init;
    init.prior_scale = 1e6;
    const auto result = train(parts.train, parts.val, init, cfg);
    const double vb_nll = evaluate_mean(result.layer, parts.train).nll;
    const double lr_nll = oracle::logistic_regression_train_nll(parts.train, cfg.epochs, cfg.batch_size,
                                                                cfg.learning_rate, 2);
    CHECK(std::abs(vb_nll - lr_nll) <= 0.05);
}

TEST_CASE("train config JSON")
{
    const auto cfg = train_config_from_json(
        R"({"epochs": 12, "batch_size": 64, "learning_rate": 0.005, "train_mc_samples": 2,
            "early_stop_patience": 3, "kl_scale_mode": "per_dataset"})");
    CHECK(cfg.epochs == 12);
    CHECK(cfg.batch_size == 64);
    CHECK(cfg.learning_rate == 0.005);
    CHECK(cfg.train_mc_samples == 2);
    CHECK(cfg.early_stop_patience == std::optional<std::size_t>(3));
    CHECK_FALSE(train_config_from_json(R"({"early_stop_patience": null})").early_stop_patience);
    CHECK_THROWS_AS(train_config_from_json(R"({"epochs": 0})"), ValidationError);
    CHECK_THROWS_AS(train_config_from_json(R"({"epoch": 3})"), ValidationError);
    CHECK_THROWS_AS(train_config_from_json(R"({"kl_scale_mode": "annealed"})"), ValidationError);
    CHECK_THROWS_AS(train_config_from_json(R"([1,2])"), ValidationError);
}

TEST_CASE("trace CSV layout")
{
    TrainingTrace t{{1, 1.5, 1.25, 20.0, 0.75, 0.5}};
    CHECK(trace_to_csv(t) == "epoch,total,nll,kl,val_nll,val_acc\n1,1.5,1.25,20,0.75,0.5\n");
}
