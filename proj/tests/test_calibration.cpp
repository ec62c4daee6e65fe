#include <doctest.h>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "vbsel/calibration.hpp"
#include "vbsel/errors.hpp"
#include "vbsel/rng.hpp"

using namespace vbsel;

namespace {

struct Instance {
    std::vector<double> conf;
    std::vector<bool> correct;
};

Instance random_instance(Rng& rng, std::size_t n, std::size_t bins)
{
    Instance inst;
    for (std::size_t i = 0; i < n; ++i) {
        double c = rng.uniform();
        const double pick = rng.uniform();
        if (pick < 0.1) c = static_cast<double>(rng.index(bins + 1)) / static_cast<double>(bins);  // on an edge
        else if (pick < 0.12) c = 0.0;
        else if (pick < 0.14) c = 1.0;
        inst.conf.push_back(c);
        inst.correct.push_back(rng.uniform() < c);
    }
    return inst;
}

}  // namespace

TEST_CASE("ECE matches the brute-force oracle")
{
    Rng rng(4);
    for (std::size_t m : {1, 5, 10, 15, 20}) {
        for (int rep = 0; rep < 50; ++rep) {
            const auto inst = random_instance(rng, 1 + rng.index(300), m);
            const auto report = expected_calibration_error(inst.conf, inst.correct, m);
            CHECK(std::abs(report.ece - oracle::brute_force_ece(inst.conf, inst.correct, m)) <= 1e-12);
            CHECK(report.ece >= 0.0);
            CHECK(report.ece <= 1.0);
        }
    }
}

TEST_CASE("ECE closed forms")
{
    const std::vector<double> conf(4, 0.8);
    const std::vector<bool> correct{true, true, true, false};
    CHECK(std::abs(expected_calibration_error(conf, correct, 1).ece - 0.05) <= 1e-12);
    CHECK(expected_calibration_error(std::vector<double>(7, 1.0), std::vector<bool>(7, true)).ece == 0.0);
    // Each bin calibrated exactly.
    const std::vector<double> c2{0.5, 0.5, 0.25, 0.25, 0.25, 0.25};
    const std::vector<bool> k2{true, false, true, false, false, false};
    CHECK(expected_calibration_error(c2, k2, 10).ece == 0.0);
}

TEST_CASE("ECE input validation")
{
    CHECK_THROWS_AS(expected_calibration_error(std::vector<double>{1.1}, std::vector<bool>{true}), ValidationError);
    CHECK_THROWS_AS(expected_calibration_error(std::vector<double>{-0.01}, std::vector<bool>{true}), ValidationError);
    CHECK_THROWS_AS(expected_calibration_error(std::vector<double>{NAN}, std::vector<bool>{true}), ValidationError);
    CHECK_THROWS_AS(expected_calibration_error(std::vector<double>{}, std::vector<bool>{}), ValidationError);
    CHECK_THROWS_AS(expected_calibration_error(std::vector<double>{0.5}, std::vector<bool>{true}, 0), ValidationError);
    CHECK_THROWS_AS(expected_calibration_error(std::vector<double>{0.5}, std::vector<bool>{true, false}),
                    ValidationError);
}

TEST_CASE("ECE is permutation invariant and counts merge")
{
    Rng rng(8);
    for (int rep = 0; rep < 50; ++rep) {
        auto a = random_instance(rng, 80, 15);
        const auto b = random_instance(rng, 40, 15);
        const auto ra = expected_calibration_error(a.conf, a.correct);
        const auto rb = expected_calibration_error(b.conf, b.correct);

        std::vector<std::size_t> order(a.conf.size());
        std::iota(order.begin(), order.end(), 0);
        std::reverse(order.begin(), order.end());
        std::swap(order[3], order[40]);
        Instance p;
        for (std::size_t i : order) {
            p.conf.push_back(a.conf[i]);
            p.correct.push_back(a.correct[i]);
        }
        CHECK(std::abs(expected_calibration_error(p.conf, p.correct).ece - ra.ece) <= 1e-12);

        Instance merged = a;
        merged.conf.insert(merged.conf.end(), b.conf.begin(), b.conf.end());
        merged.correct.insert(merged.correct.end(), b.correct.begin(), b.correct.end());
        const auto rm = expected_calibration_error(merged.conf, merged.correct);
        CHECK(rm.total_count == ra.total_count + rb.total_count);
        for (std::size_t bin = 0; bin < rm.bins.size(); ++bin)
            CHECK(rm.bins[bin].count == ra.bins[bin].count + rb.bins[bin].count);
    }
}

TEST_CASE("bin_index edges")
{
    CHECK(bin_index(0.0, 15) == 0);
    CHECK(bin_index(1.0, 15) == 14);
    CHECK(bin_index(1.0 / 15.0, 15) == 0);
    CHECK(bin_index(std::nextafter(1.0 / 15.0, 1.0), 15) == 1);
    CHECK(bin_index(0.5, 10) == 4);
    CHECK(bin_index(std::nextafter(0.5, 1.0), 10) == 5);
    CHECK(bin_index(0.7, 1) == 0);
    for (std::size_t m = 1; m <= 40; ++m)
        for (std::size_t b = 0; b <= m; ++b) {
            const double edge = static_cast<double>(b) / static_cast<double>(m);
            CHECK(bin_index(edge, m) == (b == 0 ? 0 : b - 1));
        }
}

TEST_CASE("empty bins report absent statistics")
{
    const auto r = expected_calibration_error(std::vector<double>{0.95}, std::vector<bool>{true}, 4);
    REQUIRE(r.bins.size() == 4);
    CHECK_FALSE(r.bins[0].mean_confidence);
    CHECK_FALSE(r.bins[0].accuracy);
    CHECK(r.bins[3].mean_confidence == std::optional<double>(0.95));
    const auto j = nlohmann::json::parse(calibration_to_json(r));
    CHECK(j["bins"][0]["accuracy"].is_null());
    CHECK(j["bins"][3]["count"] == 1);
    CHECK(j["num_bins"] == 4);
}

TEST_CASE("confidence histogram")
{
    const auto same = confidence_histogram(std::vector<double>(9, 0.42), 20, 0.7);
    CHECK(std::count_if(same.counts.begin(), same.counts.end(), [](std::size_t c) { return c > 0; }) == 1);
    CHECK(same.edges.size() == 21);
    CHECK(same.threshold_marker == 0.7);

    const auto one = confidence_histogram(std::vector<double>{0.1, 0.9, 1.0}, 1, 0.5);
    CHECK(one.counts == std::vector<std::size_t>{3});

    Rng rng(2);
    for (int rep = 0; rep < 100; ++rep) {
        const auto inst = random_instance(rng, 1 + rng.index(100), 20);
        const auto h = confidence_histogram(inst.conf, 20, 0.7);
        std::size_t total = 0;
        for (auto c : h.counts) total += c;
        CHECK(total == inst.conf.size());
    }
    CHECK(histogram_to_csv(one) == "bin_lower,bin_upper,count\n0,1,3\n# threshold=0.5\n");
    CHECK_THROWS_AS(confidence_histogram(std::vector<double>{0.5}, 0, 0.7), ValidationError);
    CHECK_THROWS_AS(confidence_histogram(std::vector<double>{1.5}, 5, 0.7), ValidationError);
}
