// spectradiff command-line interface.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "spectradiff/augmenters.hpp"
#include "spectradiff/checkpoint.hpp"
#include "spectradiff/config.hpp"
#include "spectradiff/dataset.hpp"
#include "spectradiff/errors.hpp"
#include "spectradiff/evaluate.hpp"
#include "spectradiff/format.hpp"
#include "spectradiff/gradcheck.hpp"
#include "spectradiff/sampler.hpp"
#include "spectradiff/schedule.hpp"

namespace sd = spectradiff;
namespace fs = std::filesystem;

namespace {

/// Flags that map onto RunConfig keys; applied after --config and --set.
struct Overrides {
    std::vector<std::pair<std::string, std::string>> values;

    void bind(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
        app->add_option_function<std::string>(
            flag, [this, key](const std::string& v) { values.emplace_back(key, v); },
            help + " [" + key + "]");
    }
};

/// Output stream that is stdout when the path is empty or "-".
class Output {
public:
    explicit Output(const std::string& path) {
        if (!path.empty() && path != "-") {
            file_.open(path, std::ios::binary);
            if (!file_) {
                throw sd::ConfigError("cannot write '" + path + "'");
            }
        }
    }
    std::ostream& stream() { return file_.is_open() ? file_ : std::cout; }

private:
    std::ofstream file_;
};

void write_model_range_csv(const sd::Dataset& ds, std::ostream& out) {
    std::vector<std::string> names;
    for (int label : ds.labels) {
        names.push_back(ds.class_names[static_cast<std::size_t>(label)]);
    }
    sd::write_rows_csv(ds.samples, names, ds.band_names, out);
}

int resolve_class(const sd::Checkpoint& ck, const std::string& text) {
    for (std::size_t i = 0; i < ck.class_names.size(); ++i) {
        if (ck.class_names[i] == text) {
            return static_cast<int>(i);
        }
    }
    try {
        std::size_t used = 0;
        const int index = std::stoi(text, &used);
        if (used == text.size() && index >= 0 && index < static_cast<int>(ck.class_names.size())) {
            return index;
        }
    } catch (const std::logic_error&) {
    }
    throw sd::ConfigError("unknown class '" + text + "'");
}

void print_report(const sd::F1Report& rep, const std::vector<std::string>& classes, std::ostream& out) {
    out << "class,f1,support\n";
    for (std::size_t c = 0; c < classes.size(); ++c) {
        out << classes[c] << ',' << sd::format_fixed(rep.per_class[c], 6) << ',' << rep.support[c] << '\n';
    }
    out << "Average," << sd::format_fixed(rep.macro, 6) << ",\n";
    out << "Weighted Average," << sd::format_fixed(rep.weighted, 6) << ",\n";
}

sd::ClassifierConfig classifier_for(const sd::RunConfig& cfg, const sd::Dataset& ds) {
    sd::ClassifierConfig cc = cfg.classifier;
    cc.bands = static_cast<int>(ds.bands());
    cc.num_classes = static_cast<int>(ds.num_classes());
    return cc;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"spectradiff: class-guided diffusion augmentation for spectral signatures"};
    app.name("spectradiff");
    app.require_subcommand(0, 1);
    app.fallthrough();

    Overrides ov;
    std::string config_path;
    std::vector<std::string> sets;
    app.add_option("--config", config_path, "flat key = value config file (flags override it)");
    app.add_option("--set", sets, "override any config key, KEY=VALUE (repeatable)");
    ov.bind(&app, "--seed", "seed", "base random seed");
    ov.bind(&app, "--threads", "threads", "worker threads for sampling");

    // ingest
    auto* ingest = app.add_subcommand("ingest", "validate a CSV and report its contents");
    std::string ingest_in, ingest_out;
    ingest->add_option("--in", ingest_in, "input CSV (label,b1,...,bB)")->required();
    ingest->add_option("--out", ingest_out, "write model-range (normalized) CSV here");
    ov.bind(ingest, "--norm", "data.norm", "minmax or standard");

    // make-benchmark
    auto* bench = app.add_subcommand("make-benchmark", "write the synthetic benchmark dataset");
    int bench_classes = 3, bench_per_class = 200, bench_bands = 32;
    std::string bench_out;
    bench->add_option("--classes", bench_classes, "number of classes")->capture_default_str();
    bench->add_option("--per-class", bench_per_class, "samples per class")->capture_default_str();
    bench->add_option("--bands", bench_bands, "bands per spectrum")->capture_default_str();
    bench->add_option("--out", bench_out, "output CSV (default stdout)");

    // schedule-dump
    auto* dump = app.add_subcommand("schedule-dump", "print the noise schedule as CSV");
    std::string dump_out;
    ov.bind(dump, "--T", "schedule.T", "timesteps");
    ov.bind(dump, "--s", "schedule.s", "cosine offset");
    ov.bind(dump, "--delta", "schedule.delta", "cosine exponent");
    ov.bind(dump, "--gamma", "schedule.gamma", "SNR weight constant");
    ov.bind(dump, "--clip-max", "schedule.clip_max", "beta clip");
    ov.bind(dump, "--weight-norm", "schedule.weight_norm", "mean, max or none");
    dump->add_option("--out", dump_out, "output CSV (default stdout)");

    // train-dm
    auto* train = app.add_subcommand("train-dm", "train the diffusion denoiser");
    std::string train_in, train_out, train_log;
    train->add_option("--in", train_in, "training CSV")->required();
    train->add_option("--out", train_out, "checkpoint file")->required();
    train->add_option("--log", train_log, "CSV log of every step");
    ov.bind(train, "--steps", "train.steps", "optimizer steps");
    ov.bind(train, "--batch-size", "train.batch_size", "batch size");
    ov.bind(train, "--lr", "train.lr", "learning rate");
    ov.bind(train, "--weight-decay", "train.weight_decay", "AdamW weight decay");
    ov.bind(train, "--lambda-vlb", "train.lambda_vlb", "VLB weight");
    ov.bind(train, "--log-every", "train.log_every", "stdout record interval");
    ov.bind(train, "--T", "schedule.T", "timesteps");
    ov.bind(train, "--delta", "schedule.delta", "cosine exponent");
    ov.bind(train, "--gamma", "schedule.gamma", "SNR weight constant");
    ov.bind(train, "--hidden", "denoiser.hidden", "hidden size");
    ov.bind(train, "--depth", "denoiser.depth", "transformer blocks");
    ov.bind(train, "--heads", "denoiser.heads", "attention heads");
    ov.bind(train, "--patch-size", "denoiser.patch_size", "bands per token");
    ov.bind(train, "--norm", "data.norm", "minmax or standard");

    // generate
    auto* gen = app.add_subcommand("generate", "sample synthetic spectra from a checkpoint");
    std::string gen_ckpt, gen_class, gen_out;
    int gen_count = 1;
    bool gen_model_range = false;
    gen->add_option("--checkpoint", gen_ckpt, "checkpoint file")->required();
    gen->add_option("--class", gen_class, "class name or index")->required();
    gen->add_option("--count", gen_count, "number of spectra")->capture_default_str();
    gen->add_option("--out", gen_out, "output CSV (default stdout)");
    gen->add_flag("--model-range", gen_model_range, "write [-1, 1] values instead of reflectance");

    // augment
    auto* aug = app.add_subcommand("augment", "append synthetic spectra to a dataset");
    std::string aug_in, aug_out, aug_ckpt;
    aug->add_option("--in", aug_in, "input CSV")->required();
    aug->add_option("--out", aug_out, "output CSV (default stdout)");
    aug->add_option("--checkpoint", aug_ckpt, "checkpoint (method diffusion)");
    ov.bind(aug, "--method", "augment.method", "none, jitter, scale, magnitude_warp, smote, diffusion");
    ov.bind(aug, "--noise-power", "augment.noise_power", "sigma of jitter, scale or warp");
    ov.bind(aug, "--anchors", "augment.anchors", "warp anchor count");
    ov.bind(aug, "--k", "augment.k", "SMOTE neighbors");
    ov.bind(aug, "--per-class", "augment.per_class", "synthetic samples per class");

    // train-classifier
    auto* cls = app.add_subcommand("train-classifier", "train and score the 1-D CNN classifier");
    std::string cls_train, cls_val, cls_test, cls_trial_log;
    double cls_lr = 1e-3, cls_wd = 1e-4;
    bool cls_search = false;
    cls->add_option("--train", cls_train, "training CSV")->required();
    cls->add_option("--val", cls_val, "validation CSV")->required();
    cls->add_option("--test", cls_test, "test CSV");
    cls->add_option("--lr", cls_lr, "learning rate")->capture_default_str();
    cls->add_option("--weight-decay", cls_wd, "weight decay")->capture_default_str();
    cls->add_flag("--search", cls_search, "random search over lr and weight decay instead");
    cls->add_option("--trial-log", cls_trial_log, "CSV trial log for --search");
    ov.bind(cls, "--trials", "eval.trials", "random-search trials");
    ov.bind(cls, "--epochs", "eval.epochs", "maximum epochs");
    ov.bind(cls, "--patience", "eval.patience", "early-stopping patience");

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "compare augmenters with the classifier protocol");
    std::string eval_in, eval_ckpt, eval_csv, eval_text;
    eval->add_option("--in", eval_in, "dataset CSV")->required();
    eval->add_option("--checkpoint", eval_ckpt,
                     "use this denoiser for every seed instead of training one per seed");
    eval->add_option("--csv", eval_csv, "write the table as CSV");
    eval->add_option("--text", eval_text, "write the aligned text table to a file");
    ov.bind(eval, "--methods", "eval.methods", "comma-separated methods");
    ov.bind(eval, "--seeds", "eval.seeds", "comma-separated seeds");
    ov.bind(eval, "--per-class", "augment.per_class", "synthetic samples per class");
    ov.bind(eval, "--noise-power", "augment.noise_power", "sigma of jitter, scale or warp");
    ov.bind(eval, "--anchors", "augment.anchors", "warp anchor count");
    ov.bind(eval, "--k", "augment.k", "SMOTE neighbors");
    ov.bind(eval, "--trials", "eval.trials", "random-search trials");
    ov.bind(eval, "--epochs", "eval.epochs", "maximum classifier epochs");
    ov.bind(eval, "--subsample", "eval.subsample", "training subsample fraction");
    ov.bind(eval, "--dm-steps", "train.steps", "denoiser steps per seed");
    ov.bind(eval, "--T", "schedule.T", "timesteps");

    // gradcheck
    auto* grad = app.add_subcommand("gradcheck", "finite-difference check of the hybrid loss");
    double grad_tol = 1e-4;
    grad->add_option("--tol", grad_tol, "maximum relative error")->capture_default_str();

    // config
    auto* show = app.add_subcommand("config", "print every config key with its effective value");

    if (argc <= 1) {
        std::cerr << app.help();
        return 2;
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }
    if (app.get_subcommands().empty()) {
        std::cerr << app.help();
        return 2;
    }

    try {
        sd::RunConfig cfg;
        if (!config_path.empty()) {
            cfg.merge_file(config_path);
        }
        for (const auto& kv : sets) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) {
                throw sd::ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
            }
            cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
        }
        for (const auto& [key, value] : ov.values) {
            cfg.set(key, value);
        }

        if (show->parsed()) {
            std::cout << cfg.dump();
        } else if (ingest->parsed()) {
            const auto ds = sd::ingest_csv(ingest_in, cfg.norm_mode);
            std::cout << "rows=" << ds.size() << " bands=" << ds.bands()
                      << " classes=" << ds.num_classes() << '\n';
            const auto counts = ds.class_counts();
            for (std::size_t c = 0; c < counts.size(); ++c) {
                std::cout << ds.class_names[c] << ',' << counts[c] << '\n';
            }
            if (!ingest_out.empty()) {
                Output out(ingest_out);
                write_model_range_csv(ds, out.stream());
            }
        } else if (bench->parsed()) {
            const auto ds = sd::make_benchmark(bench_classes, bench_per_class, bench_bands, cfg.seed);
            Output out(bench_out);
            sd::write_csv(ds, out.stream());
        } else if (dump->parsed()) {
            cfg.schedule.validate();
            Output out(dump_out);
            out.stream() << sd::schedule_csv(sd::build_schedule(cfg.schedule));
        } else if (train->parsed()) {
            const auto ds = sd::ingest_csv(train_in, cfg.norm_mode);
            std::optional<Output> log;
            if (!train_log.empty()) {
                log.emplace(train_log);
                log->stream() << "step,loss,mse_term,vlb_term\n";
            }
            std::cout << "step,loss,mse_term,vlb_term\n";
            const int every = std::max(1, cfg.log_every);
            auto on_step = [&](const sd::StepRecord& r) {
                std::ostringstream line;
                line << r.step << ',' << sd::format_double(r.loss) << ',' << sd::format_double(r.mse)
                     << ',' << sd::format_double(r.vlb) << '\n';
                if (log) log->stream() << line.str();
                if (r.step % every == 0 || r.step == cfg.train.steps) std::cout << line.str();
            };
            const auto ck = sd::train_checkpoint(ds, cfg.denoiser, cfg.schedule, cfg.train, cfg.seed,
                                                 nullptr, on_step);
            sd::save_checkpoint(ck, fs::path(train_out));
        } else if (gen->parsed()) {
            const auto ck = sd::load_checkpoint(fs::path(gen_ckpt));
            sd::SampleRequest req;
            req.class_id = resolve_class(ck, gen_class);
            req.count = gen_count;
            req.seed = cfg.seed;
            if (gen_count < 1) throw sd::ConfigError("--count must be positive");
            sd::Matrix rows = sd::sample(req, ck.model, sd::build_schedule(ck.schedule), cfg.threads);
            if (!gen_model_range) {
                rows = sd::denormalize(rows, ck.norm);
            }
            std::vector<std::string> labels(rows.rows(), ck.class_names[static_cast<std::size_t>(req.class_id)]);
            std::vector<std::string> bands;
            Output out(gen_out);
            sd::write_rows_csv(rows, labels, bands, out.stream());
        } else if (aug->parsed()) {
            const auto ds = sd::ingest_csv(aug_in, cfg.norm_mode);
            sd::AugmentConfig ac = cfg.augment;
            ac.seed = cfg.seed;
            std::optional<sd::Checkpoint> ck;
            if (!aug_ckpt.empty()) ck.emplace(sd::load_checkpoint(fs::path(aug_ckpt)));
            std::vector<std::string> warnings;
            const auto merged = sd::augment_dataset(ds, ac, ck ? &*ck : nullptr, cfg.threads, &warnings);
            for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
            Output out(aug_out);
            sd::write_csv(merged, out.stream());
            std::cerr << "synthetic rows: " << merged.synthetic_count() << '\n';
        } else if (cls->parsed()) {
            const auto train_ds = sd::ingest_csv(cls_train, cfg.norm_mode);
            const auto val_ds = sd::ingest_csv_like(cls_val, train_ds);
            const auto cc = classifier_for(cfg, train_ds);
            std::shared_ptr<const sd::TrainedClassifier> model;
            if (cls_search) {
                const auto result = sd::random_search(train_ds, val_ds, cc, cfg.search, cfg.seed);
                if (!cls_trial_log.empty()) {
                    Output out(cls_trial_log);
                    sd::write_trial_log(result.trials, out.stream());
                }
                std::cout << "best lr=" << sd::format_double(result.lr)
                          << " weight_decay=" << sd::format_double(result.weight_decay) << '\n';
                model = result.best;
            } else {
                sd::ClassifierTrainConfig tc = cfg.search.train;
                tc.lr = cls_lr;
                tc.weight_decay = cls_wd;
                model = std::make_shared<sd::TrainedClassifier>(
                    sd::train_classifier(train_ds, val_ds, cc, tc, cfg.seed));
            }
            std::cout << "best_epoch=" << model->best_epoch
                      << " val_macro_f1=" << sd::format_fixed(model->best_val_macro_f1, 6) << '\n';
            if (!cls_test.empty()) {
                const auto test_ds = sd::ingest_csv_like(cls_test, train_ds);
                const auto pred = model->model.predict(test_ds.samples);
                print_report(sd::f1_scores(pred, test_ds.labels, test_ds.num_classes()),
                             test_ds.class_names, std::cout);
            }
        } else if (eval->parsed()) {
            const auto ds = sd::ingest_csv(eval_in, cfg.norm_mode);
            sd::CompareConfig cc;
            for (const auto& name : cfg.eval_methods) {
                sd::AugmentConfig ac = cfg.augment;
                ac.method = sd::parse_augment_method(name);
                if (ac.method == sd::AugmentMethod::none) ac.per_class_count = 0;
                cc.methods.push_back({name, ac});
            }
            cc.seeds = cfg.eval_seeds;
            cc.split = cfg.split;
            cc.search = cfg.search;
            cc.classifier = cfg.classifier;
            cc.threads = cfg.threads;
            sd::CheckpointProvider provider;
            if (!eval_ckpt.empty()) {
                auto shared = std::make_shared<const sd::Checkpoint>(sd::load_checkpoint(fs::path(eval_ckpt)));
                provider = [shared](std::uint64_t, const sd::Dataset&) { return shared; };
            } else {
                provider = [&cfg](std::uint64_t seed, const sd::Dataset& train_split) {
                    return std::make_shared<const sd::Checkpoint>(sd::train_checkpoint(
                        train_split, cfg.denoiser, cfg.schedule, cfg.train, sd::derive_seed(seed, 3)));
                };
            }
            std::vector<std::string> warnings;
            const auto table = sd::compare_augmenters(ds, cc, provider, &warnings);
            for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
            sd::write_table_text(table, std::cout);
            if (!eval_text.empty()) {
                Output out(eval_text);
                sd::write_table_text(table, out.stream());
            }
            if (!eval_csv.empty()) {
                Output out(eval_csv);
                sd::write_table_csv(table, out.stream());
            }
        } else if (grad->parsed()) {
            sd::DenoiserConfig dc;
            dc.bands = 4;
            dc.patch_size = 2;
            dc.hidden = 8;
            dc.depth = 2;
            dc.heads = 2;
            dc.num_classes = 2;
            sd::ScheduleConfig sc = cfg.schedule;
            sc.timesteps = 10;
            const auto rep = sd::gradcheck_denoiser(dc, sc, cfg.seed);
            std::cout << "checked=" << rep.checked << " max_rel_error=" << rep.max_rel_error
                      << " worst=" << rep.worst_param << '\n';
            if (!(rep.max_rel_error < grad_tol)) {
                std::cerr << "error: gradient check failed (tolerance " << grad_tol << ")\n";
                return 1;
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
