#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "spectradiff/dataset.hpp"
#include "spectradiff/denoiser.hpp"
#include "spectradiff/schedule.hpp"
#include "spectradiff/training.hpp"

namespace spectradiff {

/// A trained denoiser with everything needed to sample from it.
struct Checkpoint {
    Denoiser model;
    ScheduleConfig schedule;
    std::vector<std::string> class_names;
    std::optional<NormRecord> norm;
};

inline constexpr char kCheckpointMagic[8] = {'S', 'P', 'D', 'I', 'F', 'F', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout (all integers and reals little-endian):
///   8 bytes   magic "SPDIFFCK"
///   u32       format version
///   u64       header length H
///   H bytes   UTF-8 text, one "key = value" per line (configs, class names, norm mode)
///   u64       array count
///   per array: u32 name length, name bytes, u32 rank, u64 extents[rank], f64 values
void save_checkpoint(const Checkpoint& ck, std::ostream& out);
void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);

/// Throws ParseError on a malformed or truncated file.
Checkpoint load_checkpoint(std::istream& in);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace spectradiff

namespace spectradiff {

/// Train a fresh denoiser on every row of `ds` (bands and class count taken
/// from the data) and package it with the dataset's class names and
/// normalization record.
Checkpoint train_checkpoint(const Dataset& ds, DenoiserConfig dc, const ScheduleConfig& sc,
                            const DiffusionTrainConfig& tc, std::uint64_t seed,
                            std::vector<StepRecord>* log = nullptr,
                            const std::function<void(const StepRecord&)>& on_step = {});

}  // namespace spectradiff
