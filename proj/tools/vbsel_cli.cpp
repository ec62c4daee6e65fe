// vbsel: command-line front end for the selective-prediction toolkit.
//
//   vbsel gen       --out data.csv [--classes K --dim D --per-class N ...]
//   vbsel split     --in data.csv --out splits/ [--ratios 0.7,0.15,0.15]
//   vbsel balance   --in train.csv --out balanced.csv [--targets ... --k 5]
//   vbsel train     --train train.csv --val val.csv --out run/
//   vbsel eval      --model run/model.json --data val.csv --out eval/
//   vbsel sweep     --model run/model.json --data val.csv --out sweep.csv
//   vbsel gradcheck [--classes 3 --dim 4 --batch 8 --step 1e-5]
//
// Exit codes: 0 success, 1 validation error, 2 I/O error, 3 numerical failure.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vbsel/commands.hpp"
#include "vbsel/errors.hpp"
#include "vbsel/version.hpp"

namespace {

using namespace vbsel;

struct CommonFlags {
    std::optional<std::uint64_t> seed;
    std::string config;
    std::string out;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool out_required = true)
{
    cmd->add_option("--seed", f.seed, "Global seed (overrides the config file)");
    cmd->add_option("--config", f.config, "Run configuration JSON");
    auto* out = cmd->add_option("--out", f.out, "Output path (file or directory, depending on the command)");
    if (out_required) out->required();
}

RunConfig resolve(const CommonFlags& f)
{
    RunConfig cfg = f.config.empty() ? RunConfig{} : load_run_config(f.config);
    if (f.seed) cfg.seed = *f.seed;
    return cfg;
}

template <typename T>
void override(std::optional<T>& flag, T& target)
{
    if (flag) target = *flag;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Variational Bayesian selective-prediction toolkit"};
    app.set_version_flag("--version", std::string(kToolkitVersion));
    app.require_subcommand(1);

    CommonFlags common;

    // gen
    auto* gen = app.add_subcommand("gen", "Generate a synthetic Gaussian-cluster dataset");
    add_common(gen, common);
    std::optional<std::size_t> gen_classes, gen_dim;
    std::vector<long long> gen_per_class;
    std::optional<double> gen_sep, gen_noise;
    gen->add_option("--classes", gen_classes, "Number of classes K");
    gen->add_option("--dim", gen_dim, "Feature dimension D");
    gen->add_option("--per-class", gen_per_class, "Samples per class (one value, or K values)")->delimiter(',');
    gen->add_option("--separation", gen_sep, "Radius of the class-mean sphere");
    gen->add_option("--noise", gen_noise, "Within-class standard deviation");

    // split
    auto* split = app.add_subcommand("split", "Stratified train/val/test split");
    add_common(split, common);
    std::string split_in;
    std::vector<double> split_ratios;
    split->add_option("--in", split_in, "Input dataset CSV")->required();
    split->add_option("--ratios", split_ratios, "train,val,test fractions")->delimiter(',')->expected(3);

    // balance
    auto* balance = app.add_subcommand("balance", "SMOTE oversampling in feature space");
    add_common(balance, common);
    std::string balance_in;
    std::vector<long long> balance_targets;
    std::optional<std::size_t> balance_k;
    balance->add_option("--in", balance_in, "Input dataset CSV")->required();
    balance->add_option("--targets", balance_targets, "Target count per class (default: largest class)")
        ->delimiter(',');
    balance->add_option("--k", balance_k, "Nearest neighbours per class member");

    // train
    auto* trn = app.add_subcommand("train", "Train the variational head with the minibatch ELBO");
    add_common(trn, common);
    std::string train_csv, val_csv;
    std::optional<std::size_t> epochs, batch_size, train_mc, patience;
    std::optional<double> lr, prior_scale, rho_init, mu_init;
    trn->add_option("--train", train_csv, "Training CSV")->required();
    trn->add_option("--val", val_csv, "Validation CSV")->required();
    trn->add_option("--epochs", epochs);
    trn->add_option("--batch-size", batch_size);
    trn->add_option("--lr", lr, "Adam learning rate");
    trn->add_option("--train-mc", train_mc, "Flipout passes per batch");
    trn->add_option("--patience", patience, "Early-stopping patience on validation NLL");
    trn->add_option("--prior-scale", prior_scale);
    trn->add_option("--rho-init", rho_init);
    trn->add_option("--mu-init-scale", mu_init);

    // eval / sweep share inference flags
    std::string model_json, data_csv;
    std::optional<std::size_t> mc_samples, ece_bins, hist_bins;
    std::optional<double> threshold;
    std::optional<std::string> measure;
    bool ece_accepted_only = false;
    bool posterior = false;
    std::optional<std::string> grid;

    auto* eval = app.add_subcommand("eval", "Monte Carlo evaluation with rejection and calibration reports");
    add_common(eval, common);
    eval->add_option("--model", model_json, "Model JSON")->required();
    eval->add_option("--data", data_csv, "Dataset CSV")->required();
    eval->add_option("--threshold", threshold, "Rejection threshold");
    eval->add_option("--measure", measure, "confidence | entropy | mutual_info");
    eval->add_option("--mc-samples", mc_samples, "Monte Carlo weight samples S");
    eval->add_option("--ece-bins", ece_bins, "ECE bins M");
    eval->add_option("--hist-bins", hist_bins, "Confidence histogram bins");
    eval->add_flag("--ece-accepted-only", ece_accepted_only, "Compute ECE on accepted samples only");
    eval->add_flag("--posterior", posterior, "Also write the full posterior samples CSV");

    auto* sweep = app.add_subcommand("sweep", "Threshold sweep (rejection curve)");
    add_common(sweep, common);
    sweep->add_option("--model", model_json, "Model JSON")->required();
    sweep->add_option("--data", data_csv, "Dataset CSV")->required();
    sweep->add_option("--grid", grid, "lo:step:hi or comma list (default 0.5:0.05:0.9)");
    sweep->add_option("--measure", measure, "confidence | entropy | mutual_info");
    sweep->add_option("--mc-samples", mc_samples, "Monte Carlo weight samples S");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "Compare analytic ELBO gradients with finite differences");
    std::size_t gc_classes = 3, gc_dim = 4, gc_batch = 8;
    double gc_h = 1e-5;
    std::uint64_t gc_seed = 0;
    gc->add_option("--classes", gc_classes);
    gc->add_option("--dim", gc_dim);
    gc->add_option("--batch", gc_batch);
    gc->add_option("--step", gc_h, "Central-difference step h");
    gc->add_option("--seed", gc_seed);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }

    try {
        const auto to_sizes = [](const std::vector<long long>& v, const char* what) {
            std::vector<std::size_t> out;
            for (std::size_t i = 0; i < v.size(); ++i) {
                if (v[i] < 0)
                    throw ValidationError(std::string(what) + " for class " + std::to_string(i) + " is negative");
                out.push_back(static_cast<std::size_t>(v[i]));
            }
            return out;
        };

        if (*gen) {
            RunConfig cfg = resolve(common);
            auto& s = cfg.synthetic;
            override(gen_classes, s.num_classes);
            override(gen_dim, s.feature_dim);
            override(gen_sep, s.class_separation);
            override(gen_noise, s.noise_scale);
            if (gen_per_class.size() == 1)
                s.samples_per_class.assign(s.num_classes, to_sizes(gen_per_class, "samples_per_class")[0]);
            else if (!gen_per_class.empty())
                s.samples_per_class = to_sizes(gen_per_class, "samples_per_class");
            else
                s.samples_per_class.resize(s.num_classes, 1000);
            cmd_gen(cfg, common.out);
        } else if (*split) {
            RunConfig cfg = resolve(common);
            if (!split_ratios.empty()) cfg.split = {split_ratios[0], split_ratios[1], split_ratios[2]};
            cmd_split(cfg, split_in, common.out);
        } else if (*balance) {
            RunConfig cfg = resolve(common);
            if (!balance_targets.empty()) cfg.balance.target_counts = to_sizes(balance_targets, "target count");
            override(balance_k, cfg.balance.k_neighbors);
            cmd_balance(cfg, balance_in, common.out);
        } else if (*trn) {
            RunConfig cfg = resolve(common);
            override(epochs, cfg.train.epochs);
            override(batch_size, cfg.train.batch_size);
            override(lr, cfg.train.learning_rate);
            override(train_mc, cfg.train.train_mc_samples);
            if (patience) cfg.train.early_stop_patience = *patience;
            override(prior_scale, cfg.layer.prior_scale);
            override(rho_init, cfg.layer.rho_init);
            override(mu_init, cfg.layer.mu_init_scale);
            cmd_train(cfg, train_csv, val_csv, common.out);
        } else if (*eval || *sweep) {
            RunConfig cfg = resolve(common);
            override(mc_samples, cfg.eval.mc_samples);
            override(threshold, cfg.eval.threshold);
            if (measure) cfg.eval.measure = parse_measure(*measure);
            if (*eval) {
                override(ece_bins, cfg.eval.ece_bins);
                override(hist_bins, cfg.eval.hist_bins);
                if (ece_accepted_only) cfg.eval.ece_accepted_only = true;
                if (posterior) cfg.eval.write_posterior = true;
                cmd_eval(cfg, model_json, data_csv, common.out);
            } else {
                if (grid) cfg.eval.grid = parse_grid(*grid);
                cmd_sweep(cfg, model_json, data_csv, common.out);
            }
        } else if (*gc) {
            const double err = cmd_gradcheck(gc_classes, gc_dim, gc_batch, gc_h, gc_seed);
            std::printf("max relative error: %.3g\n", err);
            return err <= 1e-4 ? 0 : 3;
        }
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
