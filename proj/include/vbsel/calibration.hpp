#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace vbsel {

inline constexpr std::size_t kDefaultEceBins = 15;
inline constexpr std::size_t kDefaultHistogramBins = 20;

struct CalibrationBin {
    double lower = 0.0;
    double upper = 0.0;
    std::size_t count = 0;
    std::optional<double> mean_confidence;  // absent for empty bins
    std::optional<double> accuracy;
};

struct CalibrationReport {
    double ece = 0.0;
    std::size_t num_bins = 0;
    std::vector<CalibrationBin> bins;
    std::size_t total_count = 0;
};

struct ConfidenceHistogram {
    std::vector<double> edges;  // num_bins + 1 entries
    std::vector<std::size_t> counts;
    double threshold_marker = 0.0;
};

/// Index of the equal-width bin containing x in [0, 1]: bin b covers
/// (b/M, (b+1)/M], and 0 falls in bin 0. Edges are the doubles b/M.
std::size_t bin_index(double x, std::size_t num_bins);

/// Expected calibration error over equal-width bins.
/// Requires at least one sample and every confidence in [0, 1].
CalibrationReport expected_calibration_error(std::span<const double> confidences, const std::vector<bool>& correct,
                                             std::size_t num_bins = kDefaultEceBins);

ConfidenceHistogram confidence_histogram(std::span<const double> confidences,
                                         std::size_t num_bins = kDefaultHistogramBins, double threshold = 0.7);

std::string calibration_to_json(const CalibrationReport& report);
/// `bin_lower,bin_upper,count` rows plus a trailing `# threshold=<t>` line.
std::string histogram_to_csv(const ConfidenceHistogram& hist);

}  // namespace vbsel
