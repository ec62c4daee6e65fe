#include "vbsel/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string_view>

#include "vbsel/errors.hpp"
#include "vbsel/numfmt.hpp"
#include "vbsel/rng.hpp"

namespace vbsel {

FeatureDataset::FeatureDataset(Matrix features, std::vector<int> labels, std::size_t num_classes)
    : features_(std::move(features)), labels_(std::move(labels)), num_classes_(num_classes)
{
    if (num_classes_ < 2) throw ValidationError("dataset needs at least 2 classes");
    if (labels_.empty()) throw ValidationError("dataset has no rows");
    if (features_.cols() < 1) throw ValidationError("dataset needs at least 1 feature");
    if (features_.rows() != labels_.size())
        throw ValidationError("feature rows and label count differ");
    for (std::size_t i = 0; i < labels_.size(); ++i) {
        if (labels_[i] < 0 || static_cast<std::size_t>(labels_[i]) >= num_classes_)
            throw ValidationError("label " + std::to_string(labels_[i]) + " at row " + std::to_string(i) +
                                  " outside [0, " + std::to_string(num_classes_) + ")");
    }
    for (double v : features_.data())
        if (!std::isfinite(v)) throw ValidationError("non-finite feature value");
}

std::vector<std::size_t> FeatureDataset::class_counts() const
{
    std::vector<std::size_t> counts(num_classes_, 0);
    for (int l : labels_) ++counts[static_cast<std::size_t>(l)];
    return counts;
}

FeatureDataset FeatureDataset::subset(std::span<const std::size_t> indices) const
{
    Matrix x(indices.size(), feature_dim());
    std::vector<int> y(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const auto src = features_.row(indices[i]);
        std::copy(src.begin(), src.end(), x.row(i).begin());
        y[i] = labels_[indices[i]];
    }
    return FeatureDataset(std::move(x), std::move(y), num_classes_);
}

void SplitRatios::validate() const
{
    for (double r : {train, val, test})
        if (!(r > 0.0 && r < 1.0)) throw ValidationError("split ratios must each lie in (0, 1)");
    if (std::abs(train + val + test - 1.0) > 1e-9) throw ValidationError("split ratios must sum to 1");
}

void SyntheticConfig::validate() const
{
    if (num_classes < 2) throw ValidationError("num_classes must be at least 2");
    if (feature_dim < 1) throw ValidationError("feature_dim must be at least 1");
    if (samples_per_class.size() != num_classes)
        throw ValidationError("samples_per_class has " + std::to_string(samples_per_class.size()) +
                              " entries, expected " + std::to_string(num_classes));
    for (std::size_t c = 0; c < num_classes; ++c)
        if (samples_per_class[c] < 1)
            throw ValidationError("samples_per_class for class " + std::to_string(c) + " must be at least 1");
    if (!(class_separation > 0.0)) throw ValidationError("class_separation must be positive");
    if (!(noise_scale > 0.0)) throw ValidationError("noise_scale must be positive");
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string_view> split_fields(std::string_view line)
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

[[noreturn]] void fail_line(const std::string& source, std::size_t line, const std::string& what)
{
    throw ValidationError(source + ": line " + std::to_string(line) + ": " + what);
}

}  // namespace

FeatureDataset parse_csv(const std::string& text, const std::string& source)
{
    std::istringstream in(text);
    std::string raw;
    std::size_t line_no = 0;
    long long declared_classes = -1;
    std::size_t dim = 0;
    bool have_header = false;
    std::vector<double> values;
    std::vector<int> labels;

    while (std::getline(in, raw)) {
        ++line_no;
        const std::string_view line = trim(raw);
        if (line.empty()) continue;
        if (line.front() == '#') {
            if (have_header || line_no != 1) fail_line(source, line_no, "comment lines are only allowed on line 1");
            std::string_view body = trim(line.substr(1));
            constexpr std::string_view key = "classes=";
            if (body.substr(0, key.size()) != key) fail_line(source, line_no, "unrecognized directive");
            if (!parse_int(trim(body.substr(key.size())), declared_classes) || declared_classes < 2)
                fail_line(source, line_no, "classes directive needs an integer >= 2");
            continue;
        }
        const auto fields = split_fields(line);
        if (!have_header) {
            if (fields.size() < 2 || trim(fields.back()) != "label")
                fail_line(source, line_no, "header must list feature columns followed by 'label'");
            dim = fields.size() - 1;
            have_header = true;
            continue;
        }
        if (fields.size() != dim + 1)
            fail_line(source, line_no,
                      "expected " + std::to_string(dim + 1) + " fields, found " + std::to_string(fields.size()));
        for (std::size_t j = 0; j < dim; ++j) {
            double v = 0.0;
            const auto field = trim(fields[j]);
            if (!parse_double(field, v) || !std::isfinite(v))
                fail_line(source, line_no, "feature column " + std::to_string(j) + " is not a finite number: '" +
                                               std::string(field) + "'");
            values.push_back(v);
        }
        long long label = 0;
        const auto field = trim(fields[dim]);
        if (!parse_int(field, label)) fail_line(source, line_no, "label is not an integer: '" + std::string(field) + "'");
        if (label < 0) fail_line(source, line_no, "negative label " + std::to_string(label));
        if (declared_classes > 0 && label >= declared_classes)
            fail_line(source, line_no,
                      "label " + std::to_string(label) + " exceeds declared classes=" + std::to_string(declared_classes));
        if (label > 1'000'000) fail_line(source, line_no, "label " + std::to_string(label) + " is implausibly large");
        labels.push_back(static_cast<int>(label));
    }
    if (!have_header) throw ValidationError(source + ": missing header row");
    if (labels.empty()) throw ValidationError(source + ": no data rows");

    const std::size_t k = declared_classes > 0
                              ? static_cast<std::size_t>(declared_classes)
                              : static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end())) + 1;
    if (k < 2) throw ValidationError(source + ": need at least 2 classes (add '# classes=K')");
    Matrix x(labels.size(), dim);
    x.data() = std::move(values);
    return FeatureDataset(std::move(x), std::move(labels), k);
}

FeatureDataset load_csv(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_csv(buf.str(), path.string());
}

std::string to_csv(const FeatureDataset& ds)
{
    std::string out = "# classes=" + std::to_string(ds.num_classes()) + "\n";
    for (std::size_t j = 0; j < ds.feature_dim(); ++j) out += "f" + std::to_string(j) + ",";
    out += "label\n";
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (double v : ds.features().row(i)) {
            out += format_double(v);
            out += ',';
        }
        out += std::to_string(ds.labels()[i]);
        out += '\n';
    }
    return out;
}

void write_csv(const FeatureDataset& ds, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << to_csv(ds);
    if (!out) throw IoError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Splitting

std::array<std::size_t, 3> split_counts(std::size_t n, const SplitRatios& ratios)
{
    const std::array<double, 3> r{ratios.train, ratios.val, ratios.test};
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> rem{};
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        const double exact = static_cast<double>(n) * r[i];
        counts[i] = static_cast<std::size_t>(std::floor(exact));
        rem[i] = exact - std::floor(exact);
        assigned += counts[i];
    }
    // Floating sums can leave assigned a hair above n when ratios sum to 1+1e-9.
    while (assigned > n) {
        const auto it = std::max_element(counts.begin(), counts.end());
        --*it;
        --assigned;
    }
    std::array<std::size_t, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
    for (std::size_t i = 0; assigned < n; i = (i + 1) % 3) {
        ++counts[order[i]];
        ++assigned;
    }
    if (n >= 3) {
        for (std::size_t i = 0; i < 3; ++i) {
            if (counts[i] > 0) continue;
            const auto donor = std::max_element(counts.begin(), counts.end());
            --*donor;
            ++counts[i];
        }
    }
    return counts;
}

DatasetSplits stratified_split(const FeatureDataset& ds, const SplitRatios& ratios, std::uint64_t seed)
{
    ratios.validate();
    const std::size_t k = ds.num_classes();
    std::vector<std::vector<std::size_t>> members(k);
    for (std::size_t i = 0; i < ds.size(); ++i) members[static_cast<std::size_t>(ds.labels()[i])].push_back(i);
    for (std::size_t c = 0; c < k; ++c)
        if (members[c].size() < 3)
            throw ValidationError("class " + std::to_string(c) + " has " + std::to_string(members[c].size()) +
                                  " samples; stratified split needs at least 3");

    Rng rng(seed);
    std::array<std::vector<std::size_t>, 3> parts;
    for (std::size_t c = 0; c < k; ++c) {
        auto& idx = members[c];
        for (std::size_t i = idx.size() - 1; i > 0; --i) std::swap(idx[i], idx[rng.index(i + 1)]);
        const auto counts = split_counts(idx.size(), ratios);
        std::size_t pos = 0;
        for (std::size_t s = 0; s < 3; ++s) {
            parts[s].insert(parts[s].end(), idx.begin() + static_cast<std::ptrdiff_t>(pos),
                            idx.begin() + static_cast<std::ptrdiff_t>(pos + counts[s]));
            pos += counts[s];
        }
    }
    for (auto& p : parts) std::sort(p.begin(), p.end());
    return DatasetSplits{ds.subset(parts[0]), ds.subset(parts[1]), ds.subset(parts[2])};
}

// ---------------------------------------------------------------------------
// SMOTE

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b)
{
    double d = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        const double t = a[j] - b[j];
        d += t * t;
    }
    return d;
}

}  // namespace

FeatureDataset smote_oversample(const FeatureDataset& ds, std::span<const std::size_t> target_counts,
                                std::size_t k_neighbors, std::uint64_t seed)
{
    const std::size_t k = ds.num_classes();
    const std::size_t dim = ds.feature_dim();
    if (target_counts.size() != k)
        throw ValidationError("target_counts has " + std::to_string(target_counts.size()) + " entries, expected " +
                              std::to_string(k));
    if (k_neighbors < 1) throw ValidationError("k_neighbors must be at least 1");

    std::vector<std::vector<std::size_t>> members(k);
    for (std::size_t i = 0; i < ds.size(); ++i) members[static_cast<std::size_t>(ds.labels()[i])].push_back(i);
    for (std::size_t c = 0; c < k; ++c) {
        if (target_counts[c] < members[c].size())
            throw ValidationError("target count " + std::to_string(target_counts[c]) + " for class " +
                                  std::to_string(c) + " is below its current count " +
                                  std::to_string(members[c].size()));
        if (target_counts[c] > members[c].size() && members[c].size() < 2)
            throw ValidationError("class " + std::to_string(c) + " has " + std::to_string(members[c].size()) +
                                  " sample(s); SMOTE needs at least 2 to synthesize");
    }

    std::size_t total = 0;
    for (std::size_t t : target_counts) total += t;
    Matrix x(total, dim);
    std::vector<int> y;
    y.reserve(total);
    std::copy(ds.features().data().begin(), ds.features().data().end(), x.data().begin());
    y = ds.labels();

    const Matrix& src = ds.features();
    Rng rng(seed);
    std::size_t out_row = ds.size();
    for (std::size_t c = 0; c < k; ++c) {
        const auto& idx = members[c];
        const std::size_t needed = target_counts[c] - idx.size();
        if (needed == 0) continue;
        const std::size_t kk = std::min(k_neighbors, idx.size() - 1);
        // Neighbor lists are computed on first use; positions index into idx.
        std::vector<std::vector<std::size_t>> neighbors(idx.size());
        for (std::size_t m = 0; m < needed; ++m) {
            const std::size_t a = rng.index(idx.size());
            auto& nn = neighbors[a];
            if (nn.empty()) {
                std::vector<std::pair<double, std::size_t>> dist;
                dist.reserve(idx.size() - 1);
                for (std::size_t b = 0; b < idx.size(); ++b)
                    if (b != a) dist.emplace_back(squared_distance(src.row(idx[a]), src.row(idx[b])), b);
                std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(kk), dist.end());
                for (std::size_t t = 0; t < kk; ++t) nn.push_back(dist[t].second);
            }
            const std::size_t b = nn[rng.index(nn.size())];
            const double u = rng.uniform();
            const auto xa = src.row(idx[a]);
            const auto xb = src.row(idx[b]);
            auto out = x.row(out_row++);
            for (std::size_t j = 0; j < dim; ++j) out[j] = xa[j] + u * (xb[j] - xa[j]);
            y.push_back(static_cast<int>(c));
        }
    }
    return FeatureDataset(std::move(x), std::move(y), k);
}

// ---------------------------------------------------------------------------
// Synthetic data

FeatureDataset generate_synthetic(const SyntheticConfig& cfg, std::uint64_t seed)
{
    cfg.validate();
    Rng rng(seed);
    const std::size_t dim = cfg.feature_dim;
    Matrix means(cfg.num_classes, dim);
    for (std::size_t c = 0; c < cfg.num_classes; ++c) {
        auto m = means.row(c);
        double norm = 0.0;
        // A zero-length draw has probability zero but would divide by zero.
        while (norm == 0.0) {
            norm = 0.0;
            for (double& v : m) {
                v = rng.normal();
                norm += v * v;
            }
            norm = std::sqrt(norm);
        }
        for (double& v : m) v *= cfg.class_separation / norm;
    }

    const std::size_t total = std::accumulate(cfg.samples_per_class.begin(), cfg.samples_per_class.end(), std::size_t{0});
    Matrix x(total, dim);
    std::vector<int> y;
    y.reserve(total);
    std::size_t row = 0;
    for (std::size_t c = 0; c < cfg.num_classes; ++c) {
        const auto m = means.row(c);
        for (std::size_t i = 0; i < cfg.samples_per_class[c]; ++i) {
            auto out = x.row(row++);
            for (std::size_t j = 0; j < dim; ++j) out[j] = m[j] + cfg.noise_scale * rng.normal();
            y.push_back(static_cast<int>(c));
        }
    }
    return FeatureDataset(std::move(x), std::move(y), cfg.num_classes);
}

}  // namespace vbsel
