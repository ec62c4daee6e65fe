#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "vbsel/errors.hpp"
#include "vbsel/vbll.hpp"

using namespace vbsel;

namespace {

VBLinearLayer random_layer(std::size_t d, std::size_t k, std::uint64_t seed, double rho_lo = -2.0,
                           double rho_hi = 0.5, double prior = 1.0)
{
    Rng rng(seed);
    VBLinearLayer layer(d, k, prior);
    for (double& v : layer.weight_mu.data()) v = rng.uniform(-1.0, 1.0);
    for (double& v : layer.weight_rho.data()) v = rng.uniform(rho_lo, rho_hi);
    for (double& v : layer.bias_mu) v = rng.uniform(-1.0, 1.0);
    for (double& v : layer.bias_rho) v = rng.uniform(rho_lo, rho_hi);
    return layer;
}

// rho with softplus(rho) == sigma
double rho_for(double sigma) { return std::log(std::expm1(sigma)); }

}  // namespace

TEST_CASE("init_layer degenerate settings")
{
    LayerInitConfig cfg;
    cfg.mu_init_scale = 0.0;
    cfg.rho_init = 0.0;
    const auto layer = init_layer(4, 3, cfg, 1);
    for (double v : layer.weight_mu.data()) CHECK(v == 0.0);
    for (double v : layer.bias_mu) CHECK(v == 0.0);
    for (double v : layer.weight_rho.data()) CHECK(softplus(v) == doctest::Approx(0.693147).epsilon(1e-6));
    CHECK(softplus(0.0) == std::log(2.0));

    LayerInitConfig def;
    CHECK(init_layer(5, 2, def, 9) == init_layer(5, 2, def, 9));
    CHECK_FALSE(init_layer(5, 2, def, 9) == init_layer(5, 2, def, 10));
    const auto drawn = init_layer(5, 2, def, 9);
    for (double v : drawn.weight_mu.data()) CHECK(std::abs(v) <= 0.1);

    def.prior_scale = 0.0;
    CHECK_THROWS_AS(init_layer(5, 2, def, 9), ValidationError);
}

TEST_CASE("softplus is positive and monotone")
{
    double prev = 0.0;
    for (double rho = -60.0; rho <= 60.0; rho += 0.25) {
        const double s = softplus(rho);
        CHECK(s > 0.0);
        CHECK(s > prev);
        CHECK(logistic(rho) > 0.0);
        prev = s;
    }
    CHECK(softplus(800.0) == 800.0);
}

TEST_CASE("kl_to_prior closed-form cases")
{
    VBLinearLayer prior_like(3, 2, 1.7);
    for (double& v : prior_like.weight_rho.data()) v = rho_for(1.7);
    for (double& v : prior_like.bias_rho) v = rho_for(1.7);
    CHECK(std::abs(kl_to_prior(prior_like)) <= 1e-12);

    // One weight with mu = 1, sigma = 1, s = 1 and a bias fixed at the prior.
    VBLinearLayer one(1, 1, 1.0);
    one.weight_mu(0, 0) = 1.0;
    one.weight_rho(0, 0) = rho_for(1.0);
    one.bias_rho[0] = rho_for(1.0);
    CHECK(std::abs(kl_to_prior(one) - 0.5) <= 1e-12);
}

TEST_CASE("kl_to_prior is nonnegative")
{
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const auto layer = random_layer(3, 4, seed, -6.0, 3.0, 0.2 + static_cast<double>(seed % 7));
        CHECK(kl_to_prior(layer) >= 0.0);
    }
}

TEST_CASE("kl_to_prior matches a Monte Carlo estimate")
{
    const auto layer = random_layer(3, 2, 77, -1.5, 0.5, 1.3);
    const auto mu = layer.flat_parameters();
    const std::size_t half = mu.size() / 2;
    const std::size_t n_w = layer.weight_mu.size();
    const std::size_t n_b = layer.bias_mu.size();
    std::vector<double> means, sigmas;
    for (std::size_t i = 0; i < n_w; ++i) {
        means.push_back(layer.weight_mu.data()[i]);
        sigmas.push_back(softplus(layer.weight_rho.data()[i]));
    }
    for (std::size_t i = 0; i < n_b; ++i) {
        means.push_back(layer.bias_mu[i]);
        sigmas.push_back(softplus(layer.bias_rho[i]));
    }
    REQUIRE(means.size() == half);
    const double s = layer.prior_scale;
    std::mt19937_64 gen(5);
    std::normal_distribution<double> normal;
    oracle::Moments mom;
    for (int draw = 0; draw < 1'000'000; ++draw) {
        double log_ratio = 0.0;
        for (std::size_t i = 0; i < half; ++i) {
            const double eps = normal(gen);
            const double w = means[i] + sigmas[i] * eps;
            // ln q(w) - ln p(w); the 2 pi terms cancel
            log_ratio += -std::log(sigmas[i]) - 0.5 * eps * eps + std::log(s) + 0.5 * (w / s) * (w / s);
        }
        mom.count += 1;
        const double delta = log_ratio - mom.mean;
        mom.mean += delta / mom.count;
        mom.m2 += delta * (log_ratio - mom.mean);
    }
    CHECK(std::abs(kl_to_prior(layer) - mom.mean) <= 3.0 * mom.stderr_mean());
}

TEST_CASE("sample_weights")
{
    SUBCASE("vanishing variance returns the means")
    {
        auto layer = random_layer(4, 3, 1);
        for (double& v : layer.weight_rho.data()) v = -40.0;
        for (double& v : layer.bias_rho) v = -40.0;
        Rng rng(3);
        const auto w = sample_weights(layer, rng);
        for (std::size_t i = 0; i < w.weights.size(); ++i)
            CHECK(std::abs(w.weights.data()[i] - layer.weight_mu.data()[i]) <= 1e-12);
        for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(w.biases[k] - layer.bias_mu[k]) <= 1e-12);
    }
    SUBCASE("first and second moments")
    {
        const auto layer = random_layer(2, 2, 4);
        Rng rng(8);
        const int draws = 100'000;
        std::vector<oracle::Moments> mom(6);
        for (int t = 0; t < draws; ++t) {
            const auto w = sample_weights(layer, rng);
            for (std::size_t i = 0; i < 4; ++i) {
                mom[i].count += 1;
                const double x = w.weights.data()[i], delta = x - mom[i].mean;
                mom[i].mean += delta / mom[i].count;
                mom[i].m2 += delta * (x - mom[i].mean);
            }
            for (std::size_t i = 0; i < 2; ++i) {
                auto& m = mom[4 + i];
                m.count += 1;
                const double x = w.biases[i], delta = x - m.mean;
                m.mean += delta / m.count;
                m.m2 += delta * (x - m.mean);
            }
        }
        for (std::size_t i = 0; i < 6; ++i) {
            const double mu = i < 4 ? layer.weight_mu.data()[i] : layer.bias_mu[i - 4];
            const double sigma = softplus(i < 4 ? layer.weight_rho.data()[i] : layer.bias_rho[i - 4]);
            CHECK(std::abs(mom[i].mean - mu) <= 3.0 * sigma / std::sqrt(static_cast<double>(draws)));
            CHECK(std::abs(mom[i].variance() / (sigma * sigma) - 1.0) <= 0.05);
        }
    }
}

TEST_CASE("forward_mean")
{
    auto layer = random_layer(3, 3, 2);
    Matrix zero(1, 3);
    const auto z = forward_mean(layer, zero);
    for (std::size_t k = 0; k < 3; ++k) CHECK(z(0, k) == layer.bias_mu[k]);

    VBLinearLayer eye(3, 3, 1.0);
    for (std::size_t k = 0; k < 3; ++k) eye.weight_mu(k, k) = 1.0;
    for (std::size_t j = 0; j < 3; ++j) {
        Matrix e(1, 3);
        e(0, j) = 1.0;
        const auto out = forward_mean(eye, e);
        for (std::size_t k = 0; k < 3; ++k) CHECK(out(0, k) == (k == j ? 1.0 : 0.0));
    }
    CHECK_THROWS_AS(forward_mean(layer, Matrix(2, 4)), ValidationError);
}

TEST_CASE("forward_mean equals the average of sampled forwards")
{
    const auto layer = random_layer(3, 2, 6);
    Matrix x(2, 3);
    x(0, 0) = 0.5, x(0, 1) = -1.0, x(0, 2) = 2.0;
    x(1, 0) = -0.3, x(1, 1) = 0.8, x(1, 2) = 0.1;
    const auto expected = forward_mean(layer, x);
    Rng rng(31);
    std::vector<oracle::Moments> mom(4);
    for (int t = 0; t < 100'000; ++t) {
        const auto z = forward_sample(sample_weights(layer, rng), x);
        for (std::size_t i = 0; i < 4; ++i) {
            auto& m = mom[i];
            m.count += 1;
            const double v = z.data()[i], delta = v - m.mean;
            m.mean += delta / m.count;
            m.m2 += delta * (v - m.mean);
        }
    }
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(std::abs(mom[i].mean - expected.data()[i]) <= 3.0 * mom[i].stderr_mean());
}

TEST_CASE("forward_flipout with vanishing variance equals forward_mean")
{
    auto layer = random_layer(5, 4, 12);
    for (double& v : layer.weight_rho.data()) v = -40.0;
    for (double& v : layer.bias_rho) v = -40.0;
    Matrix x(6, 5);
    Rng data(2);
    for (double& v : x.data()) v = data.normal();
    Rng rng(5);
    const auto a = forward_flipout(layer, x, rng);
    const auto b = forward_mean(layer, x);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a.data()[i] - b.data()[i]) <= 1e-12);
    CHECK_THROWS_AS(forward_flipout(layer, Matrix(2, 4), rng), ValidationError);
}

TEST_CASE("forward_flipout sign vectors vary per row")
{
    const auto layer = random_layer(3, 2, 13);
    Matrix x(2, 3);
    for (std::size_t j = 0; j < 3; ++j) x(0, j) = x(1, j) = 1.0;
    // Identical rows get different perturbations in some draw.
    Rng rng(4);
    bool differ = false;
    for (int t = 0; t < 20 && !differ; ++t) {
        const auto z = forward_flipout(layer, x, rng);
        differ = z(0, 0) != z(1, 0) || z(0, 1) != z(1, 1);
    }
    CHECK(differ);
}

TEST_CASE("softmax")
{
    const auto p = softmax(std::vector<double>(5, 3.25));
    for (double v : p) CHECK(v == 0.2);
    const auto q = softmax(std::vector<double>{1000.0, 0.0});
    CHECK(q[0] == 1.0);
    CHECK(q[1] == doctest::Approx(0.0));
    CHECK(std::isfinite(q[1]));

    // Shift invariance, bit-for-bit, for shifts that are exact in binary.
    std::mt19937_64 gen(3);
    std::uniform_int_distribution<int> ticks(-4096, 4096), shift(-1000, 1000);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<double> z(1 + trial % 7);
        for (double& v : z) v = ticks(gen) / 256.0;
        const double c = shift(gen) / 16.0;
        std::vector<double> shifted(z);
        for (double& v : shifted) v += c;
        CHECK(softmax(z) == softmax(shifted));
        double sum = 0.0;
        for (double v : softmax(z)) {
            CHECK(v > 0.0);
            CHECK(v < 1.0 + 1e-15);
            sum += v;
        }
        CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
}

TEST_CASE("layer JSON round-trip preserves every bit")
{
    const auto layer = random_layer(7, 4, 21, -8.0, 2.0, 0.37);
    const auto text = layer_to_json(layer);
    CHECK(text.find("\"format_version\": 1") != std::string::npos);
    CHECK(layer_from_json(text) == layer);

    auto j = text;
    j.replace(j.find("\"format_version\": 1"), 19, "\"format_version\": 2");
    CHECK_THROWS_AS(layer_from_json(j), ValidationError);
    CHECK_THROWS_AS(layer_from_json("{}"), ValidationError);
    CHECK_THROWS_AS(layer_from_json("not json"), ValidationError);
    const std::string bad = R"({"format_version":1,"feature_dim":2,"num_classes":2,"prior_scale":1,
        "weight_mu":[0,0,0],"weight_rho":[0,0,0,0],"bias_mu":[0,0],"bias_rho":[0,0]})";
    CHECK_THROWS_AS(layer_from_json(bad), ValidationError);
}

TEST_CASE("forward_flipout marginals match plain reparameterized sampling")
{
    const auto layer = random_layer(4, 3, 40, -1.5, 0.0);
    Matrix x(1, 4);
    x(0, 0) = 0.7, x(0, 1) = -1.2, x(0, 2) = 0.4, x(0, 3) = 1.9;
    Rng flip_rng(1), plain_rng(2);
    std::vector<oracle::Moments> flip(3), plain(3);
    for (int t = 0; t < 100'000; ++t) {
        const auto a = forward_flipout(layer, x, flip_rng);
        const auto b = forward_sample(sample_weights(layer, plain_rng), x);
        for (std::size_t k = 0; k < 3; ++k) {
            flip[k].add(a(0, k));
            plain[k].add(b(0, k));
        }
    }
    for (std::size_t k = 0; k < 3; ++k) {
        const double se_mean = std::hypot(flip[k].stderr_mean(), plain[k].stderr_mean());
        const double se_var = std::hypot(flip[k].stderr_variance(), plain[k].stderr_variance());
        CHECK(std::abs(flip[k].mean - plain[k].mean) <= 3.0 * se_mean);
        CHECK(std::abs(flip[k].variance() - plain[k].variance()) <= 3.0 * se_var);
    }
}
