#include "vbsel/commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "vbsel/errors.hpp"
#include "vbsel/numfmt.hpp"
#include "vbsel/rng.hpp"
#include "vbsel/version.hpp"

namespace vbsel {

using nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& known, const std::string& section)
{
    if (!obj.is_object()) throw ValidationError("config section '" + section + "' must be an object");
    for (const auto& [key, value] : obj.items())
        if (!known.count(key)) throw ValidationError("config: unknown key '" + section + "." + key + "'");
}

std::size_t get_count(const json& v, const std::string& name, std::size_t min_value)
{
    const auto x = v.get<long long>();
    if (x < static_cast<long long>(min_value))
        throw ValidationError("config: " + name + " must be at least " + std::to_string(min_value));
    return static_cast<std::size_t>(x);
}

std::vector<std::size_t> get_counts(const json& v, const std::string& name)
{
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const auto x = v.at(i).get<long long>();
        if (x < 0) throw ValidationError("config: " + name + " entry for class " + std::to_string(i) + " is negative");
        out.push_back(static_cast<std::size_t>(x));
    }
    return out;
}

}  // namespace

RunConfig run_config_from_json(const std::string& text)
{
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("config: ") + e.what());
    }
    reject_unknown(j, {"seed", "synthetic", "split", "balance", "layer", "train", "eval"}, "<root>");
    RunConfig cfg;
    try {
        if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("synthetic")) {
            const auto& s = j["synthetic"];
            reject_unknown(s, {"num_classes", "feature_dim", "samples_per_class", "class_separation", "noise_scale"},
                           "synthetic");
            if (s.contains("num_classes")) cfg.synthetic.num_classes = get_count(s["num_classes"], "num_classes", 2);
            if (s.contains("feature_dim")) cfg.synthetic.feature_dim = get_count(s["feature_dim"], "feature_dim", 1);
            if (s.contains("samples_per_class")) {
                const auto& v = s["samples_per_class"];
                if (v.is_array())
                    cfg.synthetic.samples_per_class = get_counts(v, "samples_per_class");
                else
                    cfg.synthetic.samples_per_class.assign(cfg.synthetic.num_classes,
                                                           get_count(v, "samples_per_class", 0));
            } else {
                cfg.synthetic.samples_per_class.resize(cfg.synthetic.num_classes, 1000);
            }
            if (s.contains("class_separation")) cfg.synthetic.class_separation = s["class_separation"].get<double>();
            if (s.contains("noise_scale")) cfg.synthetic.noise_scale = s["noise_scale"].get<double>();
        }
        if (j.contains("split")) {
            const auto& s = j["split"];
            reject_unknown(s, {"train", "val", "test"}, "split");
            if (s.contains("train")) cfg.split.train = s["train"].get<double>();
            if (s.contains("val")) cfg.split.val = s["val"].get<double>();
            if (s.contains("test")) cfg.split.test = s["test"].get<double>();
            cfg.split.validate();
        }
        if (j.contains("balance")) {
            const auto& s = j["balance"];
            reject_unknown(s, {"target_counts", "k_neighbors"}, "balance");
            if (s.contains("target_counts")) cfg.balance.target_counts = get_counts(s["target_counts"], "target_counts");
            if (s.contains("k_neighbors")) cfg.balance.k_neighbors = get_count(s["k_neighbors"], "k_neighbors", 1);
        }
        if (j.contains("layer")) {
            const auto& s = j["layer"];
            reject_unknown(s, {"mu_init_scale", "rho_init", "prior_scale"}, "layer");
            if (s.contains("mu_init_scale")) cfg.layer.mu_init_scale = s["mu_init_scale"].get<double>();
            if (s.contains("rho_init")) cfg.layer.rho_init = s["rho_init"].get<double>();
            if (s.contains("prior_scale")) cfg.layer.prior_scale = s["prior_scale"].get<double>();
            if (!(cfg.layer.prior_scale > 0.0)) throw ValidationError("config: layer.prior_scale must be positive");
        }
        if (j.contains("train")) {
            const auto& s = j["train"];
            if (s.is_object() && s.contains("seed"))
                throw ValidationError("config: train.seed is derived from the top-level seed; set 'seed' instead");
            cfg.train = train_config_from_json(s.dump(), cfg.train);
        }
        if (j.contains("eval")) {
            const auto& s = j["eval"];
            reject_unknown(s,
                           {"mc_samples", "threshold", "measure", "ece_bins", "hist_bins", "ece_accepted_only",
                            "write_posterior", "grid"},
                           "eval");
            if (s.contains("mc_samples")) cfg.eval.mc_samples = get_count(s["mc_samples"], "mc_samples", 1);
            if (s.contains("threshold")) cfg.eval.threshold = s["threshold"].get<double>();
            if (s.contains("measure")) cfg.eval.measure = parse_measure(s["measure"].get<std::string>());
            if (s.contains("ece_bins")) cfg.eval.ece_bins = get_count(s["ece_bins"], "ece_bins", 1);
            if (s.contains("hist_bins")) cfg.eval.hist_bins = get_count(s["hist_bins"], "hist_bins", 1);
            if (s.contains("ece_accepted_only")) cfg.eval.ece_accepted_only = s["ece_accepted_only"].get<bool>();
            if (s.contains("write_posterior")) cfg.eval.write_posterior = s["write_posterior"].get<bool>();
            if (s.contains("grid")) {
                cfg.eval.grid.clear();
                for (const auto& v : s["grid"]) cfg.eval.grid.push_back(snap_decimal(v.get<double>()));
            }
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("config: ") + e.what());
    }
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return run_config_from_json(buf.str());
}

void write_text(const std::filesystem::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    out.flush();
    if (!out) throw IoError("write failed for " + path.string());
}

namespace {

void ensure_dir(const std::filesystem::path& dir)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

json optional_number(const std::optional<double>& v)
{
    return v ? json(*v) : json(nullptr);
}

}  // namespace

std::string summary_to_json(const SummaryReport& s)
{
    nlohmann::ordered_json j;
    j["accuracy_accepted"] = optional_number(s.accuracy_accepted);
    j["coverage"] = s.coverage;
    j["rejection_rate"] = s.rejection_rate;
    j["ece"] = optional_number(s.ece);
    j["overall_accuracy"] = s.overall_accuracy;
    j["n_samples"] = s.n_samples;
    j["threshold"] = s.threshold;
    j["measure"] = std::string(to_string(s.measure));
    j["mc_samples"] = s.mc_samples;
    j["seed"] = s.seed;
    j["ece_scope"] = s.ece_scope;
    j["toolkit_version"] = s.toolkit_version;
    return j.dump(2) + "\n";
}

Evaluation evaluate(const VBLinearLayer& layer, const FeatureDataset& data, const RunConfig& cfg)
{
    if (data.feature_dim() != layer.feature_dim())
        throw ValidationError("data has " + std::to_string(data.feature_dim()) + " features, model expects " +
                              std::to_string(layer.feature_dim()));
    if (data.num_classes() != layer.num_classes())
        throw ValidationError("data has " + std::to_string(data.num_classes()) + " classes, model has " +
                              std::to_string(layer.num_classes()));
    const auto& ev = cfg.eval;
    auto pred = predictive_posterior(layer, data, ev.mc_samples, derive_seed(cfg.seed, "inference"));
    auto scores = uncertainty_scores(pred);
    for (double c : scores.confidence)
        if (!std::isfinite(c)) throw NumericalError("non-finite confidence in predictive posterior");
    auto rejection = apply_rejection(scores, pred.predicted(), data.labels(), data.num_classes(), ev.threshold,
                                     ev.measure);

    const auto& labels = data.labels();
    std::vector<bool> correct(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) correct[i] = pred.predicted()[i] == labels[i];

    std::optional<CalibrationReport> calib;
    if (!ev.ece_accepted_only) {
        calib = expected_calibration_error(scores.confidence, correct, ev.ece_bins);
    } else if (rejection.accepted_count > 0) {
        const auto column = score_column(scores, ev.measure);
        std::vector<double> conf;
        std::vector<bool> ok;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (!accepts(ev.measure, column[i], ev.threshold)) continue;
            conf.push_back(scores.confidence[i]);
            ok.push_back(correct[i]);
        }
        calib = expected_calibration_error(conf, ok, ev.ece_bins);
    }

    auto hist = confidence_histogram(scores.confidence, ev.hist_bins, ev.threshold);

    SummaryReport s;
    s.accuracy_accepted = rejection.selective_accuracy;
    s.coverage = rejection.coverage;
    s.rejection_rate = rejection.rejection_rate;
    if (calib) s.ece = calib->ece;
    s.overall_accuracy = rejection.overall_accuracy;
    s.n_samples = data.size();
    s.threshold = ev.threshold;
    s.measure = ev.measure;
    s.mc_samples = ev.mc_samples;
    s.seed = cfg.seed;
    s.ece_scope = ev.ece_accepted_only ? "accepted" : "all";
    s.toolkit_version = kToolkitVersion;

    return Evaluation{std::move(pred), std::move(scores), std::move(rejection), std::move(calib), std::move(hist),
                      std::move(s)};
}

// ---------------------------------------------------------------------------
// Commands

void cmd_gen(const RunConfig& cfg, const std::filesystem::path& out_csv)
{
    const auto ds = generate_synthetic(cfg.synthetic, derive_seed(cfg.seed, "gen"));
    write_csv(ds, out_csv);
}

void cmd_split(const RunConfig& cfg, const std::filesystem::path& in_csv, const std::filesystem::path& out_dir)
{
    const auto ds = load_csv(in_csv);
    const auto parts = stratified_split(ds, cfg.split, derive_seed(cfg.seed, "split"));
    ensure_dir(out_dir);
    write_csv(parts.train, out_dir / "train.csv");
    write_csv(parts.val, out_dir / "val.csv");
    write_csv(parts.test, out_dir / "test.csv");
}

void cmd_balance(const RunConfig& cfg, const std::filesystem::path& in_csv, const std::filesystem::path& out_csv)
{
    const auto ds = load_csv(in_csv);
    auto targets = cfg.balance.target_counts;
    if (targets.empty()) {
        const auto counts = ds.class_counts();
        targets.assign(counts.size(), *std::max_element(counts.begin(), counts.end()));
    }
    const auto out = smote_oversample(ds, targets, cfg.balance.k_neighbors, derive_seed(cfg.seed, "balance"));
    write_csv(out, out_csv);
}

void cmd_train(const RunConfig& cfg, const std::filesystem::path& train_csv, const std::filesystem::path& val_csv,
               const std::filesystem::path& out_dir)
{
    const auto train_ds = load_csv(train_csv);
    const auto val_ds = load_csv(val_csv);
    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.seed, "train");
    const auto result = train(train_ds, val_ds, cfg.layer, tc);
    ensure_dir(out_dir);
    save_layer(result.layer, out_dir / "model.json");
    write_trace_csv(result.trace, out_dir / "trace.csv");
}

SummaryReport cmd_eval(const RunConfig& cfg, const std::filesystem::path& model_json,
                       const std::filesystem::path& data_csv, const std::filesystem::path& out_dir)
{
    const auto layer = load_layer(model_json);
    const auto data = load_csv(data_csv);
    const auto ev = evaluate(layer, data, cfg);
    ensure_dir(out_dir);
    write_text(out_dir / "summary.json", summary_to_json(ev.summary));
    if (ev.calibration) write_text(out_dir / "calibration.json", calibration_to_json(*ev.calibration));
    write_text(out_dir / "predictions.csv", predictions_to_csv(ev.predictions, ev.scores, data.labels()));
    write_text(out_dir / "histogram.csv", histogram_to_csv(ev.histogram));
    write_text(out_dir / "confusion_all.csv", confusion_to_csv(ev.rejection.confusion_all));
    write_text(out_dir / "confusion_accepted.csv", confusion_to_csv(ev.rejection.confusion_accepted));
    if (cfg.eval.write_posterior) write_text(out_dir / "posterior.csv", posterior_to_csv(ev.predictions));
    return ev.summary;
}

RejectionCurve cmd_sweep(const RunConfig& cfg, const std::filesystem::path& model_json,
                         const std::filesystem::path& data_csv, const std::filesystem::path& out_csv)
{
    const auto layer = load_layer(model_json);
    const auto data = load_csv(data_csv);
    if (data.feature_dim() != layer.feature_dim() || data.num_classes() != layer.num_classes())
        throw ValidationError("data shape (D=" + std::to_string(data.feature_dim()) + ", K=" +
                              std::to_string(data.num_classes()) + ") does not match model (D=" +
                              std::to_string(layer.feature_dim()) + ", K=" + std::to_string(layer.num_classes()) + ")");
    const auto pred =
        predictive_posterior(layer, data, cfg.eval.mc_samples, derive_seed(cfg.seed, "inference"));
    const auto scores = uncertainty_scores(pred);
    auto curve = threshold_sweep(scores, pred.predicted(), data.labels(), data.num_classes(), cfg.eval.grid,
                                 cfg.eval.measure);
    write_text(out_csv, curve_to_csv(curve));
    return curve;
}

GradcheckInstance random_gradcheck_instance(std::size_t num_classes, std::size_t feature_dim, std::size_t batch,
                                            std::uint64_t seed)
{
    if (num_classes < 2 || feature_dim < 1 || batch < 1)
        throw ValidationError("gradcheck needs K >= 2, D >= 1 and B >= 1");
    Rng rng(derive_seed(seed, "gradcheck-instance"));
    GradcheckInstance inst{VBLinearLayer(feature_dim, num_classes, 1.0), Matrix(batch, feature_dim),
                           std::vector<int>(batch), batch};
    for (double& v : inst.layer.weight_mu.data()) v = rng.uniform(-0.5, 0.5);
    for (double& v : inst.layer.weight_rho.data()) v = rng.uniform(-3.0, 0.0);
    for (double& v : inst.layer.bias_mu) v = rng.uniform(-0.5, 0.5);
    for (double& v : inst.layer.bias_rho) v = rng.uniform(-3.0, 0.0);
    for (double& v : inst.batch.data()) v = rng.normal();
    for (int& y : inst.labels) y = static_cast<int>(rng.index(num_classes));
    return inst;
}

double cmd_gradcheck(std::size_t num_classes, std::size_t feature_dim, std::size_t batch, double h,
                     std::uint64_t seed)
{
    if (!(h > 0.0)) throw ValidationError("finite-difference step must be positive");
    const auto inst = random_gradcheck_instance(num_classes, feature_dim, batch, seed);
    return gradcheck(inst.layer, inst.batch, inst.labels, inst.n_train, h, derive_seed(seed, "gradcheck-noise"));
}

std::vector<double> parse_grid(const std::string& text)
{
    std::vector<double> grid;
    const auto bad = [&]() { return ValidationError("cannot parse threshold grid '" + text + "'"); };
    if (text.find(':') != std::string::npos) {
        std::vector<double> parts;
        std::stringstream ss(text);
        std::string tok;
        while (std::getline(ss, tok, ':')) {
            double v = 0.0;
            if (!parse_double(tok, v)) throw bad();
            parts.push_back(v);
        }
        if (parts.size() != 3 || !(parts[1] > 0.0) || parts[2] < parts[0]) throw bad();
        const auto steps = static_cast<long long>(std::floor((parts[2] - parts[0]) / parts[1] + 1e-9));
        for (long long i = 0; i <= steps; ++i)
            grid.push_back(snap_decimal(parts[0] + static_cast<double>(i) * parts[1]));
    } else {
        std::stringstream ss(text);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            double v = 0.0;
            if (!parse_double(tok, v)) throw bad();
            grid.push_back(snap_decimal(v));
        }
    }
    if (grid.empty()) throw bad();
    return grid;
}

}  // namespace vbsel
