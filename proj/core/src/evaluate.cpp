#include "spectradiff/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>

#include "spectradiff/errors.hpp"
#include "spectradiff/format.hpp"
#include "spectradiff/gradcore/ops.hpp"
#include "spectradiff/rng.hpp"

namespace spectradiff {

namespace {

constexpr std::size_t kMinPerClass = 5;

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace

void SplitSpec::validate() const {
    for (double f : {train_frac, val_frac, test_frac}) {
        if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("split: fractions must lie in [0, 1]");
    }
    if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-12) {
        throw ConfigError("split: fractions must sum to 1");
    }
    if (!(train_subsample_frac > 0.0 && train_subsample_frac <= 1.0)) {
        throw ConfigError("split: train_subsample_frac must lie in (0, 1]");
    }
}

std::array<std::size_t, 3> split_counts(std::size_t n, const SplitSpec& spec) {
    const std::array<double, 3> fracs{spec.train_frac, spec.val_frac, spec.test_frac};
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> rem{};
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        const double quota = static_cast<double>(n) * fracs[i];
        const double whole = std::floor(quota + 1e-9);
        counts[i] = static_cast<std::size_t>(whole);
        rem[i] = quota - whole;
        assigned += counts[i];
    }
    std::array<std::size_t, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
    for (std::size_t i = 0; assigned < n; i = (i + 1) % 3) {
        ++counts[order[i]];
        ++assigned;
    }
    return counts;
}

Split stratified_split(const Dataset& ds, const SplitSpec& spec) {
    spec.validate();
    const auto by_class = ds.indices_by_class();
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        if (by_class[c].size() < kMinPerClass) {
            throw ConfigError("split: class '" + ds.class_names[c] + "' has " +
                              std::to_string(by_class[c].size()) + " samples, at least " +
                              std::to_string(kMinPerClass) + " required");
        }
    }
    Rng rng(spec.seed);
    std::vector<std::size_t> train, val, test;
    for (const auto& rows : by_class) {
        std::vector<std::size_t> idx = rows;
        shuffle(idx, rng);
        const auto counts = split_counts(idx.size(), spec);
        const auto a = idx.begin();
        const auto b = a + static_cast<std::ptrdiff_t>(counts[0]);
        const auto c = b + static_cast<std::ptrdiff_t>(counts[1]);
        std::vector<std::size_t> cls_train(a, b);
        val.insert(val.end(), b, c);
        test.insert(test.end(), c, idx.end());
        if (!cls_train.empty()) {
            auto keep = static_cast<std::size_t>(
                std::llround(spec.train_subsample_frac * static_cast<double>(cls_train.size())));
            keep = std::clamp<std::size_t>(keep, 1, cls_train.size());
            shuffle(cls_train, rng);
            train.insert(train.end(), cls_train.begin(),
                         cls_train.begin() + static_cast<std::ptrdiff_t>(keep));
        }
    }
    for (auto* v : {&train, &val, &test}) {
        std::sort(v->begin(), v->end());
    }
    return {ds.subset(train), ds.subset(val), ds.subset(test)};
}

void ClassifierConfig::validate() const {
    if (bands < 1) throw ConfigError("classifier: bands must be positive");
    if (num_classes < 1) throw ConfigError("classifier: num_classes must be positive");
    for (int c : channels) {
        if (c < 1) throw ConfigError("classifier: channels must be positive");
    }
    for (int k : kernels) {
        if (k < 1) throw ConfigError("classifier: kernel sizes must be positive");
    }
}

std::vector<std::pair<std::string, Shape>> Classifier::layout(const ClassifierConfig& cfg) {
    std::vector<std::pair<std::string, Shape>> out;
    std::size_t in = 1;
    for (std::size_t i = 0; i < 5; ++i) {
        const auto o = static_cast<std::size_t>(cfg.channels[i]);
        const auto k = static_cast<std::size_t>(cfg.kernels[i]);
        out.emplace_back("conv" + std::to_string(i + 1) + ".weight", Shape{o, in, k});
        out.emplace_back("conv" + std::to_string(i + 1) + ".bias", Shape{o});
        in = o;
    }
    const auto c = [&](std::size_t i) { return static_cast<std::size_t>(cfg.channels[i]); };
    out.emplace_back("skip13.weight", Shape{c(2), c(0), 1});
    out.emplace_back("skip13.bias", Shape{c(2)});
    out.emplace_back("skip35.weight", Shape{c(4), c(2), 1});
    out.emplace_back("skip35.bias", Shape{c(4)});
    out.emplace_back("head.weight", Shape{c(4), static_cast<std::size_t>(cfg.num_classes)});
    out.emplace_back("head.bias", Shape{static_cast<std::size_t>(cfg.num_classes)});
    return out;
}

Classifier::Classifier(ClassifierConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    for (auto& [name, shape] : layout(cfg_)) {
        Tensor t = Tensor::zeros(shape, true);
        if (!name.ends_with(".bias")) {
            // He-uniform for convolutions, Xavier-uniform for the head.
            const double bound =
                shape.size() == 3
                    ? std::sqrt(6.0 / static_cast<double>(shape[1] * shape[2]))
                    : std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
            for (auto& v : t.data()) {
                v = rng.uniform(-bound, bound);
            }
        }
        params_.emplace_back(name, std::move(t));
    }
}

Classifier::Classifier(ClassifierConfig cfg, ParamList params)
    : cfg_(cfg), params_(std::move(params)) {
    cfg_.validate();
    const auto expected = layout(cfg_);
    if (expected.size() != params_.size()) {
        throw ConfigError("classifier: parameter count does not match the configuration");
    }
    for (std::size_t i = 0; i < expected.size(); ++i) {
        if (expected[i].first != params_[i].first || expected[i].second != params_[i].second.shape()) {
            throw ConfigError("classifier: parameter '" + params_[i].first + "' does not match");
        }
        params_[i].second.set_requires_grad(true);
    }
}

Classifier Classifier::clone() const {
    ParamList copy;
    for (const auto& [name, t] : params_) {
        copy.emplace_back(name, t.clone());
    }
    return Classifier(cfg_, std::move(copy));
}

Tensor Classifier::forward(Graph& g, const Matrix& x) const {
    if (x.cols() != static_cast<std::size_t>(cfg_.bands)) {
        throw DimensionError("classifier: expected " + std::to_string(cfg_.bands) + " bands, got " +
                             std::to_string(x.cols()));
    }
    const Tensor in = Tensor::from({x.rows(), 1, x.cols()}, x.data());
    auto conv = [&](const Tensor& h, std::size_t layer) {
        return ops::conv1d(g, h, param(2 * layer), param(2 * layer + 1));
    };
    const Tensor h1 = ops::relu(g, conv(in, 0));
    const Tensor h2 = ops::relu(g, conv(h1, 1));
    const Tensor h3 = ops::relu(g, ops::add(g, conv(h2, 2), ops::conv1d(g, h1, param(10), param(11))));
    const Tensor h4 = ops::relu(g, conv(h3, 3));
    const Tensor h5 = ops::relu(g, ops::add(g, conv(h4, 4), ops::conv1d(g, h3, param(12), param(13))));
    const Tensor pooled = ops::mean_last(g, h5);
    return ops::linear(g, pooled, param(14), param(15));
}

std::vector<int> Classifier::predict(const Matrix& x) const {
    constexpr std::size_t kChunk = 256;
    std::vector<int> out;
    out.reserve(x.rows());
    for (std::size_t start = 0; start < x.rows(); start += kChunk) {
        const std::size_t n = std::min(kChunk, x.rows() - start);
        std::vector<std::size_t> rows(n);
        std::iota(rows.begin(), rows.end(), start);
        Graph g(Graph::Mode::inference);
        const Tensor logits = forward(g, x.select_rows(rows));
        const auto data = logits.data();
        const auto c = static_cast<std::size_t>(cfg_.num_classes);
        for (std::size_t r = 0; r < n; ++r) {
            const auto row = data.subspan(r * c, c);
            out.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
        }
    }
    return out;
}

void ClassifierTrainConfig::validate() const {
    if (!(lr >= 0.0)) throw ConfigError("classifier: lr must be >= 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("classifier: weight_decay must be >= 0");
    if (epochs < 1) throw ConfigError("classifier: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("classifier: batch_size must be >= 1");
    if (patience < 1) throw ConfigError("classifier: patience must be >= 1");
}

F1Report f1_scores(std::span<const int> pred, std::span<const int> truth, std::size_t num_classes) {
    if (pred.size() != truth.size()) {
        throw DimensionError("f1_scores: prediction and truth lengths differ");
    }
    std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        for (int v : {pred[i], truth[i]}) {
            if (v < 0 || static_cast<std::size_t>(v) >= num_classes) {
                throw ContractError("f1_scores: label " + std::to_string(v) + " out of range");
            }
        }
        const auto p = static_cast<std::size_t>(pred[i]);
        const auto t = static_cast<std::size_t>(truth[i]);
        if (p == t) {
            ++tp[p];
        } else {
            ++fp[p];
            ++fn[t];
        }
    }
    F1Report rep;
    rep.per_class.resize(num_classes);
    rep.support.resize(num_classes);
    double total = 0.0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        rep.support[c] = tp[c] + fn[c];
        const double denom = static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
        rep.per_class[c] = denom > 0.0 ? 2.0 * static_cast<double>(tp[c]) / denom : 0.0;
        rep.macro += rep.per_class[c];
        rep.weighted += rep.per_class[c] * static_cast<double>(rep.support[c]);
        total += static_cast<double>(rep.support[c]);
    }
    rep.macro = num_classes > 0 ? rep.macro / static_cast<double>(num_classes) : 0.0;
    rep.weighted = total > 0.0 ? rep.weighted / total : 0.0;
    return rep;
}

TrainedClassifier train_classifier(const Dataset& train, const Dataset& val,
                                   const ClassifierConfig& cfg, const ClassifierTrainConfig& tc,
                                   std::uint64_t seed) {
    if (train.size() == 0 || val.size() == 0) {
        throw ContractError("train_classifier: empty training or validation split");
    }
    tc.validate();
    Rng rng(seed);
    Classifier model(cfg, rng.engine()());
    Adam optimizer(model.params());
    const AdamConfig adam{tc.lr, 0.9, 0.999, 1e-8, tc.weight_decay};

    TrainedClassifier best{model.clone(), 0, -1.0, {}};
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    const auto batch = static_cast<std::size_t>(tc.batch_size);
    const auto num_classes = static_cast<std::size_t>(cfg.num_classes);
    for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
        shuffle(order, rng);
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t n = std::min(batch, order.size() - start);
            const std::span<const std::size_t> rows(order.data() + start, n);
            std::vector<std::size_t> labels(n);
            for (std::size_t i = 0; i < n; ++i) {
                labels[i] = static_cast<std::size_t>(train.labels[rows[i]]);
            }
            Graph g;
            optimizer.zero_grad();
            const Tensor loss =
                ops::cross_entropy(g, model.forward(g, train.samples.select_rows(rows)), labels);
            g.backward(loss);
            if (tc.lr > 0.0) {
                optimizer.step(adam);
            }
        }
        const double f1 = f1_scores(model.predict(val.samples), val.labels, num_classes).macro;
        best.val_history.push_back(f1);
        if (f1 > best.best_val_macro_f1) {
            best.best_val_macro_f1 = f1;
            best.best_epoch = epoch;
            best.model = model.clone();
        }
        if (epoch - best.best_epoch >= tc.patience) {
            break;
        }
    }
    return best;
}

void SearchConfig::validate() const {
    if (trials < 1) throw ConfigError("search: trials must be >= 1");
    if (!(lr_lo > 0.0 && lr_hi >= lr_lo)) {
        throw ConfigError("search: learning-rate range must satisfy 0 < lo <= hi");
    }
    if (!(wd_lo > 0.0 && wd_hi >= wd_lo)) {
        throw ConfigError("search: weight-decay range must satisfy 0 < lo <= hi");
    }
    train.validate();
}

SearchResult random_search(const Dataset& train, const Dataset& val, const ClassifierConfig& cfg,
                           const SearchConfig& search, std::uint64_t seed) {
    search.validate();
    Rng draws(seed);
    auto log_uniform = [&](double lo, double hi) {
        return std::exp(draws.uniform(std::log(lo), std::log(hi)));
    };
    SearchResult result;
    result.val_macro_f1 = -1.0;
    for (int i = 0; i < search.trials; ++i) {
        ClassifierTrainConfig tc = search.train;
        tc.lr = log_uniform(search.lr_lo, search.lr_hi);
        tc.weight_decay = log_uniform(search.wd_lo, search.wd_hi);
        auto trained = std::make_shared<TrainedClassifier>(
            train_classifier(train, val, cfg, tc, derive_seed(seed, static_cast<std::uint64_t>(i))));
        result.trials.push_back({i, tc.lr, tc.weight_decay, trained->best_val_macro_f1, trained->best_epoch});
        if (trained->best_val_macro_f1 > result.val_macro_f1) {
            result.val_macro_f1 = trained->best_val_macro_f1;
            result.lr = tc.lr;
            result.weight_decay = tc.weight_decay;
            result.best = std::move(trained);
        }
    }
    return result;
}

void write_trial_log(std::span<const Trial> trials, std::ostream& out) {
    out << "trial,lr,weight_decay,val_macro_f1,best_epoch\n";
    for (const auto& t : trials) {
        out << t.index << ',' << format_double(t.lr) << ',' << format_double(t.weight_decay) << ','
            << format_double(t.val_macro_f1) << ',' << t.best_epoch << '\n';
    }
}

void assert_all_real(const Dataset& ds, const std::string& role) {
    if (ds.synthetic_count() != 0) {
        throw ContractError("provenance: " + std::to_string(ds.synthetic_count()) +
                            " synthetic rows reached the " + role + " split");
    }
}

ComparisonTable compare_augmenters(const Dataset& ds, const CompareConfig& cfg,
                                   const CheckpointProvider& provider,
                                   std::vector<std::string>* warnings) {
    if (cfg.seeds.empty()) throw ConfigError("compare: at least one seed required");
    if (cfg.methods.empty()) throw ConfigError("compare: at least one method required");
    ClassifierConfig cc = cfg.classifier;
    cc.bands = static_cast<int>(ds.bands());
    cc.num_classes = static_cast<int>(ds.num_classes());
    const Split split = stratified_split(ds, cfg.split);

    ComparisonTable table;
    table.class_names = ds.class_names;
    for (const auto& m : cfg.methods) {
        table.methods.push_back(m.name);
        table.reports.emplace_back();
    }
    for (const auto seed : cfg.seeds) {
        std::shared_ptr<const Checkpoint> checkpoint;
        for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
            AugmentConfig aug = cfg.methods[mi].augment;
            aug.seed = derive_seed(seed, 1);
            const bool needs_model =
                aug.method == AugmentMethod::diffusion && aug.per_class_count > 0;
            if (needs_model && !checkpoint) {
                if (!provider) throw ConfigError("compare: diffusion method without a model provider");
                checkpoint = provider(seed, split.train);
            }
            const Dataset train = augment_dataset(split.train, aug, checkpoint.get(), cfg.threads, warnings);
            assert_all_real(split.val, "validation");
            const SearchResult search = random_search(train, split.val, cc, cfg.search, derive_seed(seed, 2));
            assert_all_real(split.test, "test");
            table.provenance_checks += 2;
            const auto pred = search.best->model.predict(split.test.samples);
            auto& report = table.reports[mi];
            report.per_seed.push_back(f1_scores(pred, split.test.labels, ds.num_classes()));
            report.seeds.push_back(seed);
        }
    }
    for (auto& report : table.reports) {
        const auto n = static_cast<double>(report.per_seed.size());
        report.per_class_f1.assign(ds.num_classes(), 0.0);
        for (const auto& r : report.per_seed) {
            for (std::size_t c = 0; c < r.per_class.size(); ++c) {
                report.per_class_f1[c] += r.per_class[c] / n;
            }
            report.macro_f1 += r.macro / n;
            report.weighted_f1 += r.weighted / n;
        }
    }
    return table;
}

namespace {

std::vector<std::vector<double>> table_values(const ComparisonTable& table) {
    // rows x methods, in percent
    std::vector<std::vector<double>> rows(table.class_names.size() + 2,
                                          std::vector<double>(table.methods.size()));
    for (std::size_t m = 0; m < table.methods.size(); ++m) {
        const auto& r = table.reports[m];
        for (std::size_t c = 0; c < table.class_names.size(); ++c) {
            rows[c][m] = 100.0 * r.per_class_f1[c];
        }
        rows[table.class_names.size()][m] = 100.0 * r.macro_f1;
        rows[table.class_names.size() + 1][m] = 100.0 * r.weighted_f1;
    }
    return rows;
}

std::vector<std::string> row_labels(const ComparisonTable& table) {
    std::vector<std::string> labels = table.class_names;
    labels.emplace_back("Average");
    labels.emplace_back("Weighted Average");
    return labels;
}

}  // namespace

void write_table_csv(const ComparisonTable& table, std::ostream& out) {
    out << "class";
    for (const auto& m : table.methods) out << ',' << m;
    out << '\n';
    const auto values = table_values(table);
    const auto labels = row_labels(table);
    for (std::size_t r = 0; r < labels.size(); ++r) {
        out << labels[r];
        for (double v : values[r]) out << ',' << format_fixed(v, 4);
        out << '\n';
    }
}

void write_table_text(const ComparisonTable& table, std::ostream& out) {
    const auto values = table_values(table);
    const auto labels = row_labels(table);
    std::size_t first = std::string("Class").size();
    for (const auto& l : labels) first = std::max(first, l.size());
    std::vector<std::size_t> width(table.methods.size());
    for (std::size_t m = 0; m < table.methods.size(); ++m) {
        width[m] = std::max<std::size_t>(table.methods[m].size(), 6);
    }
    out << std::left << std::setw(static_cast<int>(first)) << "Class";
    for (std::size_t m = 0; m < table.methods.size(); ++m) {
        out << "  " << std::right << std::setw(static_cast<int>(width[m])) << table.methods[m];
    }
    out << '\n';
    for (std::size_t r = 0; r < labels.size(); ++r) {
        out << std::left << std::setw(static_cast<int>(first)) << labels[r];
        for (std::size_t m = 0; m < table.methods.size(); ++m) {
            out << "  " << std::right << std::setw(static_cast<int>(width[m]))
                << format_fixed(values[r][m], 2);
        }
        out << '\n';
    }
}

}  // namespace spectradiff
