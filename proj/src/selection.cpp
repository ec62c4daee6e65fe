#include "vbsel/selection.hpp"

#include <cmath>

#include "vbsel/errors.hpp"
#include "vbsel/numfmt.hpp"

namespace vbsel {

std::string_view to_string(Measure m)
{
    switch (m) {
    case Measure::confidence: return "confidence";
    case Measure::entropy: return "entropy";
    case Measure::mutual_info: return "mutual_info";
    }
    return "confidence";
}

Measure parse_measure(std::string_view text)
{
    if (text == "confidence") return Measure::confidence;
    if (text == "entropy") return Measure::entropy;
    if (text == "mutual_info") return Measure::mutual_info;
    throw ValidationError("unknown measure '" + std::string(text) + "' (expected confidence, entropy or mutual_info)");
}

std::size_t ConfusionMatrix::total() const
{
    std::size_t t = 0;
    for (std::size_t c : counts_) t += c;
    return t;
}

std::size_t ConfusionMatrix::trace() const
{
    std::size_t t = 0;
    for (std::size_t k = 0; k < num_classes_; ++k) t += (*this)(k, k);
    return t;
}

bool accepts(Measure m, double score, double threshold)
{
    return m == Measure::confidence ? score >= threshold : score <= threshold;
}

std::span<const double> score_column(const UncertaintyScores& scores, Measure m)
{
    switch (m) {
    case Measure::confidence: return scores.confidence;
    case Measure::entropy: return scores.entropy;
    case Measure::mutual_info: return scores.mutual_info;
    }
    return scores.confidence;
}

ConfusionMatrix confusion_matrix(std::span<const int> predicted, std::span<const int> labels,
                                 const std::vector<bool>& mask, std::size_t num_classes)
{
    if (predicted.size() != labels.size() || mask.size() != labels.size())
        throw ValidationError("confusion_matrix: predicted, labels and mask lengths differ");
    ConfusionMatrix cm(num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (!mask[i]) continue;
        const int t = labels[i];
        const int p = predicted[i];
        if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= num_classes || static_cast<std::size_t>(p) >= num_classes)
            throw ValidationError("confusion_matrix: class index out of range");
        ++cm(static_cast<std::size_t>(t), static_cast<std::size_t>(p));
    }
    return cm;
}

RejectionReport apply_rejection(const UncertaintyScores& scores, std::span<const int> predicted,
                                std::span<const int> labels, std::size_t num_classes, double threshold, Measure measure)
{
    const auto column = score_column(scores, measure);
    const std::size_t n = labels.size();
    if (predicted.size() != n || column.size() != n)
        throw ValidationError("apply_rejection: scores, predictions and labels have different lengths");
    if (n == 0) throw ValidationError("apply_rejection: no samples");
    if (measure == Measure::confidence) {
        if (!(threshold >= 0.0 && threshold <= 1.0))
            throw ValidationError("confidence threshold must lie in [0, 1], got " + format_double(threshold));
    } else if (!(threshold >= 0.0) || !std::isfinite(threshold)) {
        throw ValidationError(std::string(to_string(measure)) + " threshold must be >= 0, got " +
                              format_double(threshold));
    }

    std::vector<bool> mask(n);
    std::size_t accepted = 0;
    std::size_t correct = 0;
    std::size_t correct_accepted = 0;
    for (std::size_t i = 0; i < n; ++i) {
        mask[i] = accepts(measure, column[i], threshold);
        const bool ok = predicted[i] == labels[i];
        correct += ok;
        if (mask[i]) {
            ++accepted;
            correct_accepted += ok;
        }
    }

    RejectionReport r;
    r.threshold = threshold;
    r.measure = measure;
    r.accepted_count = accepted;
    r.rejected_count = n - accepted;
    r.coverage = static_cast<double>(accepted) / static_cast<double>(n);
    r.rejection_rate = static_cast<double>(n - accepted) / static_cast<double>(n);
    if (accepted > 0) r.selective_accuracy = static_cast<double>(correct_accepted) / static_cast<double>(accepted);
    r.overall_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    r.confusion_accepted = confusion_matrix(predicted, labels, mask, num_classes);
    r.confusion_all = confusion_matrix(predicted, labels, std::vector<bool>(n, true), num_classes);
    return r;
}

std::vector<double> default_threshold_grid()
{
    std::vector<double> grid;
    for (int step = 50; step <= 90; step += 5) grid.push_back(static_cast<double>(step) / 100.0);
    return grid;
}

RejectionCurveRow curve_row(const RejectionReport& report)
{
    return {report.threshold, report.coverage, report.rejection_rate, report.selective_accuracy};
}

RejectionCurve threshold_sweep(const UncertaintyScores& scores, std::span<const int> predicted,
                               std::span<const int> labels, std::size_t num_classes, std::span<const double> grid,
                               Measure measure)
{
    if (grid.empty()) throw ValidationError("threshold grid is empty");
    for (std::size_t i = 1; i < grid.size(); ++i)
        if (!(grid[i] > grid[i - 1])) throw ValidationError("threshold grid must be strictly increasing");
    RejectionCurve curve;
    curve.reserve(grid.size());
    for (double t : grid) curve.push_back(curve_row(apply_rejection(scores, predicted, labels, num_classes, t, measure)));
    return curve;
}

std::string curve_to_csv(const RejectionCurve& curve)
{
    std::string out = "threshold,coverage,rejection_rate,selective_accuracy\n";
    for (const auto& row : curve) {
        out += format_double(row.threshold) + "," + format_double(row.coverage) + "," +
               format_double(row.rejection_rate) + ",";
        if (row.selective_accuracy) out += format_double(*row.selective_accuracy);
        out += "\n";
    }
    return out;
}

std::string confusion_to_csv(const ConfusionMatrix& cm)
{
    std::string out = "true\\pred";
    for (std::size_t k = 0; k < cm.num_classes(); ++k) out += "," + std::to_string(k);
    out += "\n";
    for (std::size_t t = 0; t < cm.num_classes(); ++t) {
        out += std::to_string(t);
        for (std::size_t p = 0; p < cm.num_classes(); ++p) out += "," + std::to_string(cm(t, p));
        out += "\n";
    }
    return out;
}

}  // namespace vbsel
