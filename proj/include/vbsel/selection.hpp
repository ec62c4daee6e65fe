#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vbsel/inference.hpp"

namespace vbsel {

enum class Measure { confidence, entropy, mutual_info };

std::string_view to_string(Measure m);
Measure parse_measure(std::string_view text);

/// K x K counts indexed (true label, predicted label).
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t num_classes = 0)
        : num_classes_(num_classes), counts_(num_classes * num_classes, 0)
    {
    }

    std::size_t num_classes() const { return num_classes_; }
    std::size_t& operator()(std::size_t truth, std::size_t pred) { return counts_[truth * num_classes_ + pred]; }
    std::size_t operator()(std::size_t truth, std::size_t pred) const { return counts_[truth * num_classes_ + pred]; }
    std::size_t total() const;
    std::size_t trace() const;

    bool operator==(const ConfusionMatrix&) const = default;

private:
    std::size_t num_classes_;
    std::vector<std::size_t> counts_;
};

struct RejectionReport {
    double threshold = 0.0;
    Measure measure = Measure::confidence;
    std::size_t accepted_count = 0;
    std::size_t rejected_count = 0;
    double coverage = 0.0;
    double rejection_rate = 0.0;
    std::optional<double> selective_accuracy;  // absent when nothing is accepted
    double overall_accuracy = 0.0;
    ConfusionMatrix confusion_accepted;
    ConfusionMatrix confusion_all;
};

struct RejectionCurveRow {
    double threshold = 0.0;
    double coverage = 0.0;
    double rejection_rate = 0.0;
    std::optional<double> selective_accuracy;

    bool operator==(const RejectionCurveRow&) const = default;
};

using RejectionCurve = std::vector<RejectionCurveRow>;

/// Confidence accepts score >= threshold; entropy and mutual information
/// accept score <= threshold, so the low-uncertainty side is always kept.
bool accepts(Measure m, double score, double threshold);

std::span<const double> score_column(const UncertaintyScores& scores, Measure m);

/// Counts (labels[i], predicted[i]) for every i with mask[i] set.
ConfusionMatrix confusion_matrix(std::span<const int> predicted, std::span<const int> labels,
                                 const std::vector<bool>& mask, std::size_t num_classes);

RejectionReport apply_rejection(const UncertaintyScores& scores, std::span<const int> predicted,
                                std::span<const int> labels, std::size_t num_classes, double threshold, Measure measure);

/// 0.50, 0.55, ..., 0.90
std::vector<double> default_threshold_grid();

RejectionCurve threshold_sweep(const UncertaintyScores& scores, std::span<const int> predicted,
                               std::span<const int> labels, std::size_t num_classes, std::span<const double> grid,
                               Measure measure);

RejectionCurveRow curve_row(const RejectionReport& report);

/// `threshold,coverage,rejection_rate,selective_accuracy` with an empty cell when absent.
std::string curve_to_csv(const RejectionCurve& curve);
/// Grid with a `true\pred` corner cell and class-index headers.
std::string confusion_to_csv(const ConfusionMatrix& cm);

}  // namespace vbsel
