#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "spectradiff/augmenters.hpp"
#include "spectradiff/dataset.hpp"
#include "spectradiff/denoiser.hpp"
#include "spectradiff/evaluate.hpp"
#include "spectradiff/schedule.hpp"
#include "spectradiff/training.hpp"

namespace spectradiff {

/// Every tunable knob as one flat record. Keys are "section.name"; see
/// RunConfig::keys() for the full list with defaults.
struct RunConfig {
    ScheduleConfig schedule{};
    DenoiserConfig denoiser{};
    DiffusionTrainConfig train{};
    int log_every = 100;
    AugmentConfig augment{};
    SplitSpec split{};
    SearchConfig search{};
    ClassifierConfig classifier{};
    std::vector<std::uint64_t> eval_seeds{0, 1, 2, 3, 4};
    std::vector<std::string> eval_methods{"none", "jitter", "scale", "magnitude_warp", "smote",
                                          "diffusion"};
    NormRecord::Mode norm_mode = NormRecord::Mode::minmax;
    std::uint64_t seed = 0;
    int threads = 1;

    /// Set one key from its text form. Throws ConfigError for an unknown key
    /// or a malformed value.
    void set(const std::string& key, const std::string& value);
    /// Current value of a key in its text form.
    std::string get(const std::string& key) const;

    /// Recognized keys in documentation order.
    static const std::vector<std::string>& keys();

    /// Apply a `key = value` file. Blank lines and `#` comments are ignored.
    /// Errors carry the line number.
    void merge_file(const std::filesystem::path& path);
    void merge_stream(std::istream& in);

    /// Every key with its current value, one "key = value" per line.
    std::string dump() const;
};

}  // namespace spectradiff
