#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vbsel/matrix.hpp"

namespace vbsel {

/// Feature vectors with integer class labels.
///
/// Immutable once constructed; the constructor enforces that labels are in
/// [0, num_classes), features are finite and there is at least one row.
class FeatureDataset {
public:
    FeatureDataset(Matrix features, std::vector<int> labels, std::size_t num_classes);

    const Matrix& features() const { return features_; }
    const std::vector<int>& labels() const { return labels_; }
    std::size_t size() const { return labels_.size(); }
    std::size_t feature_dim() const { return features_.cols(); }
    std::size_t num_classes() const { return num_classes_; }

    std::vector<std::size_t> class_counts() const;

    /// Rows at the given indices, in that order.
    FeatureDataset subset(std::span<const std::size_t> indices) const;

    bool operator==(const FeatureDataset&) const = default;

private:
    Matrix features_;
    std::vector<int> labels_;
    std::size_t num_classes_;
};

struct SplitRatios {
    double train = 0.70;
    double val = 0.15;
    double test = 0.15;

    void validate() const;
};

struct SyntheticConfig {
    std::size_t num_classes = 5;
    std::size_t feature_dim = 16;
    std::vector<std::size_t> samples_per_class = std::vector<std::size_t>(5, 1000);
    double class_separation = 4.0;
    double noise_scale = 1.0;

    void validate() const;
};

struct DatasetSplits {
    FeatureDataset train;
    FeatureDataset val;
    FeatureDataset test;
};

inline constexpr std::size_t kDefaultSmoteNeighbors = 5;

/// Reads `f0,...,f{D-1},label` CSV with an optional leading `# classes=K` line.
/// Errors name the 1-based line number of the offending row.
FeatureDataset load_csv(const std::filesystem::path& path);
FeatureDataset parse_csv(const std::string& text, const std::string& source = "<memory>");

/// Writes the `# classes=K` directive, the header, then one row per sample
/// using shortest round-trip number formatting.
void write_csv(const FeatureDataset& ds, const std::filesystem::path& path);
std::string to_csv(const FeatureDataset& ds);

/// Per-class seeded shuffle then largest-remainder partition. Each split keeps
/// the original relative row order.
DatasetSplits stratified_split(const FeatureDataset& ds, const SplitRatios& ratios, std::uint64_t seed);

/// Per-class split sizes for a class of n samples (largest remainder, ties to
/// the earlier split, every split nonempty when n >= 3).
std::array<std::size_t, 3> split_counts(std::size_t n, const SplitRatios& ratios);

/// SMOTE in feature space. Originals come first in their original order,
/// followed by synthetic rows grouped by class.
FeatureDataset smote_oversample(const FeatureDataset& ds, std::span<const std::size_t> target_counts,
                                std::size_t k_neighbors, std::uint64_t seed);

FeatureDataset generate_synthetic(const SyntheticConfig& cfg, std::uint64_t seed);

}  // namespace vbsel
