#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "spectradiff/augmenters.hpp"
#include "spectradiff/checkpoint.hpp"
#include "spectradiff/dataset.hpp"
#include "spectradiff/gradcore/adam.hpp"
#include "spectradiff/gradcore/graph.hpp"

namespace spectradiff {

struct SplitSpec {
    double train_frac = 0.6;
    double val_frac = 0.2;
    double test_frac = 0.2;
    double train_subsample_frac = 0.1;
    std::uint64_t seed = 0;

    void validate() const;
};

struct Split {
    Dataset train;
    Dataset val;
    Dataset test;
};

/// Per class: shuffle, cut at the fractions with largest-remainder rounding,
/// then keep round(train_subsample_frac * train) (at least 1) training rows.
/// Throws ConfigError naming any class with fewer than 5 samples.
Split stratified_split(const Dataset& ds, const SplitSpec& spec);

/// Per-class counts (train, val, test) before subsampling.
std::array<std::size_t, 3> split_counts(std::size_t n, const SplitSpec& spec);

/// 1-D CNN with five convolutional layers:
///   conv(1 -> c0, k0), conv(c0 -> c1, k1), conv(c1 -> c2, k2) + proj(h1),
///   conv(c2 -> c3, k3), conv(c3 -> c4, k4) + proj(h3),
/// ReLU after each, 1x1 projections on the two skips, global average pool
/// and a linear head.
struct ClassifierConfig {
    int bands = 0;
    int num_classes = 0;
    std::array<int, 5> channels{32, 32, 64, 64, 128};
    std::array<int, 5> kernels{7, 5, 3, 3, 3};

    void validate() const;
};

class Classifier {
public:
    Classifier(ClassifierConfig cfg, std::uint64_t seed);
    Classifier(ClassifierConfig cfg, ParamList params);

    const ClassifierConfig& config() const noexcept { return cfg_; }
    ParamList& params() noexcept { return params_; }
    const ParamList& params() const noexcept { return params_; }
    Classifier clone() const;

    /// Logits [batch, num_classes].
    Tensor forward(Graph& g, const Matrix& x) const;
    std::vector<int> predict(const Matrix& x) const;

    static std::vector<std::pair<std::string, Shape>> layout(const ClassifierConfig& cfg);

private:
    Tensor param(std::size_t index) const { return params_[index].second; }

    ClassifierConfig cfg_;
    ParamList params_;
};

struct ClassifierTrainConfig {
    double lr = 1e-3;
    double weight_decay = 1e-4;
    int epochs = 100;
    int batch_size = 32;
    int patience = 20;  ///< epochs without a better validation macro-F1 before stopping

    void validate() const;
};

struct F1Report {
    std::vector<double> per_class;
    std::vector<std::size_t> support;
    double macro = 0.0;
    double weighted = 0.0;
};

/// Per-class F1 = 2PR/(P+R) (0 when P+R = 0); macro and support-weighted means.
F1Report f1_scores(std::span<const int> pred, std::span<const int> truth, std::size_t num_classes);

struct TrainedClassifier {
    Classifier model;
    int best_epoch = 0;  ///< 1-based; 0 when no epoch ran
    double best_val_macro_f1 = 0.0;
    std::vector<double> val_history;
};

/// Cross-entropy with AdamW on shuffled minibatches. Keeps the parameters of
/// the epoch with the best validation macro-F1. A learning rate of exactly 0
/// leaves the parameters untouched.
TrainedClassifier train_classifier(const Dataset& train, const Dataset& val,
                                   const ClassifierConfig& cfg, const ClassifierTrainConfig& tc,
                                   std::uint64_t seed);

struct SearchConfig {
    int trials = 4;
    double lr_lo = 1e-4;
    double lr_hi = 1e-2;
    double wd_lo = 1e-6;
    double wd_hi = 1e-2;
    ClassifierTrainConfig train{};

    void validate() const;
};

struct Trial {
    int index = 0;
    double lr = 0.0;
    double weight_decay = 0.0;
    double val_macro_f1 = 0.0;
    int best_epoch = 0;
};

struct SearchResult {
    double lr = 0.0;
    double weight_decay = 0.0;
    double val_macro_f1 = 0.0;
    std::vector<Trial> trials;
    /// The classifier trained in the winning trial.
    std::shared_ptr<const TrainedClassifier> best;
};

/// Log-uniform draws of (lr, weight_decay) from one seeded stream, so the
/// first k trials of a longer search repeat a k-trial search. Trial i trains
/// with seed derive_seed(seed, i). Ties keep the earlier trial.
SearchResult random_search(const Dataset& train, const Dataset& val, const ClassifierConfig& cfg,
                           const SearchConfig& search, std::uint64_t seed);

/// CSV with header trial,lr,weight_decay,val_macro_f1,best_epoch.
void write_trial_log(std::span<const Trial> trials, std::ostream& out);

struct EvaluationReport {
    std::vector<double> per_class_f1;  ///< mean over seeds
    double macro_f1 = 0.0;
    double weighted_f1 = 0.0;
    std::vector<F1Report> per_seed;
    std::vector<std::uint64_t> seeds;
};

/// Returns a checkpoint trained on `train` for one seed.
using CheckpointProvider =
    std::function<std::shared_ptr<const Checkpoint>(std::uint64_t seed, const Dataset& train)>;

struct MethodSpec {
    std::string name;
    AugmentConfig augment;
};

struct CompareConfig {
    std::vector<MethodSpec> methods;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    SplitSpec split{};
    SearchConfig search{};
    ClassifierConfig classifier{};  ///< bands and classes filled from the data
    int threads = 1;
};

struct ComparisonTable {
    std::vector<std::string> class_names;
    std::vector<std::string> methods;
    std::vector<EvaluationReport> reports;  ///< one per method
    std::size_t provenance_checks = 0;      ///< evaluation batches checked for synthetic rows
};

/// For every seed and method: augment the training split (seeded by the run
/// seed, not the method, so methods are paired), tune with random search on
/// the validation split, and score the winning classifier on the test split.
/// The split is fixed by cfg.split.seed. Throws ContractError if a synthetic
/// row ever reaches validation or test data.
ComparisonTable compare_augmenters(const Dataset& ds, const CompareConfig& cfg,
                                   const CheckpointProvider& provider = {},
                                   std::vector<std::string>* warnings = nullptr);

/// Throws ContractError when `ds` holds synthetic rows.
void assert_all_real(const Dataset& ds, const std::string& role);

/// Rows: classes, "Average", "Weighted Average". Columns: methods. Values in percent.
void write_table_csv(const ComparisonTable& table, std::ostream& out);
void write_table_text(const ComparisonTable& table, std::ostream& out);

}  // namespace spectradiff
