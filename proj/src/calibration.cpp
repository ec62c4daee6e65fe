#include "vbsel/calibration.hpp"

#include <cmath>

#include <json.hpp>

#include "vbsel/errors.hpp"
#include "vbsel/numfmt.hpp"

namespace vbsel {

namespace {

double edge(std::size_t b, std::size_t num_bins)
{
    return static_cast<double>(b) / static_cast<double>(num_bins);
}

void check_unit_interval(std::span<const double> xs)
{
    for (std::size_t i = 0; i < xs.size(); ++i)
        if (!(xs[i] >= 0.0 && xs[i] <= 1.0))
            throw ValidationError("confidence at index " + std::to_string(i) + " is outside [0, 1]: " +
                                  format_double(xs[i]));
}

}  // namespace

std::size_t bin_index(double x, std::size_t num_bins)
{
    const double scaled = std::ceil(x * static_cast<double>(num_bins));
    std::size_t b = scaled <= 1.0 ? 0 : static_cast<std::size_t>(scaled) - 1;
    if (b >= num_bins) b = num_bins - 1;
    // x * M can round across an edge; settle against the stored edges.
    while (b > 0 && x <= edge(b, num_bins)) --b;
    while (b + 1 < num_bins && x > edge(b + 1, num_bins)) ++b;
    return b;
}

CalibrationReport expected_calibration_error(std::span<const double> confidences, const std::vector<bool>& correct,
                                             std::size_t num_bins)
{
    if (num_bins < 1) throw ValidationError("num_bins must be at least 1");
    if (confidences.size() != correct.size()) throw ValidationError("confidence and correctness lengths differ");
    if (confidences.empty()) throw ValidationError("calibration needs at least one sample");
    check_unit_interval(confidences);

    std::vector<double> conf_sum(num_bins, 0.0);
    std::vector<std::size_t> hits(num_bins, 0);
    CalibrationReport report;
    report.num_bins = num_bins;
    report.total_count = confidences.size();
    report.bins.resize(num_bins);
    for (std::size_t b = 0; b < num_bins; ++b) {
        report.bins[b].lower = edge(b, num_bins);
        report.bins[b].upper = edge(b + 1, num_bins);
    }
    for (std::size_t i = 0; i < confidences.size(); ++i) {
        const std::size_t b = bin_index(confidences[i], num_bins);
        ++report.bins[b].count;
        conf_sum[b] += confidences[i];
        hits[b] += correct[i];
    }
    const double n = static_cast<double>(confidences.size());
    double ece = 0.0;
    for (std::size_t b = 0; b < num_bins; ++b) {
        auto& bin = report.bins[b];
        if (bin.count == 0) continue;
        const double cnt = static_cast<double>(bin.count);
        bin.mean_confidence = conf_sum[b] / cnt;
        bin.accuracy = static_cast<double>(hits[b]) / cnt;
        ece += cnt / n * std::abs(*bin.accuracy - *bin.mean_confidence);
    }
    report.ece = ece;
    return report;
}

ConfidenceHistogram confidence_histogram(std::span<const double> confidences, std::size_t num_bins, double threshold)
{
    if (num_bins < 1) throw ValidationError("num_bins must be at least 1");
    check_unit_interval(confidences);
    ConfidenceHistogram h;
    h.threshold_marker = threshold;
    h.counts.assign(num_bins, 0);
    for (std::size_t b = 0; b <= num_bins; ++b) h.edges.push_back(edge(b, num_bins));
    for (double c : confidences) ++h.counts[bin_index(c, num_bins)];
    return h;
}

std::string calibration_to_json(const CalibrationReport& report)
{
    nlohmann::ordered_json j;
    j["ece"] = report.ece;
    j["num_bins"] = report.num_bins;
    j["total_count"] = report.total_count;
    auto bins = nlohmann::ordered_json::array();
    for (const auto& b : report.bins) {
        nlohmann::ordered_json e;
        e["lower"] = b.lower;
        e["upper"] = b.upper;
        e["count"] = b.count;
        e["mean_confidence"] = b.mean_confidence ? nlohmann::ordered_json(*b.mean_confidence) : nullptr;
        e["accuracy"] = b.accuracy ? nlohmann::ordered_json(*b.accuracy) : nullptr;
        bins.push_back(std::move(e));
    }
    j["bins"] = std::move(bins);
    return j.dump(2) + "\n";
}

std::string histogram_to_csv(const ConfidenceHistogram& hist)
{
    std::string out = "bin_lower,bin_upper,count\n";
    for (std::size_t b = 0; b < hist.counts.size(); ++b)
        out += format_double(hist.edges[b]) + "," + format_double(hist.edges[b + 1]) + "," +
               std::to_string(hist.counts[b]) + "\n";
    out += "# threshold=" + format_double(hist.threshold_marker) + "\n";
    return out;
}

}  // namespace vbsel
