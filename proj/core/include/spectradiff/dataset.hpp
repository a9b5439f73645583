#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spectradiff/matrix.hpp"

namespace spectradiff {

enum class Provenance : std::uint8_t { real, synthetic };

/// Per-band normalization to the model range.
///
/// minmax: x' = 2 (x - lo) / (hi - lo) - 1, lo/hi = band min/max.
/// standard: x' = (x - lo) / hi, lo/hi = band mean/stddev.
/// Constant bands (hi == lo for minmax, hi == 0 for standard) map to 0 and
/// back to lo.
struct NormRecord {
    enum class Mode { minmax, standard };

    Mode mode = Mode::minmax;
    std::vector<double> lo;
    std::vector<double> hi;

    static NormRecord fit(const Matrix& raw, Mode mode = Mode::minmax);

    std::size_t bands() const noexcept { return lo.size(); }
    bool constant(std::size_t band) const;
    Matrix normalize(const Matrix& raw) const;
    Matrix denormalize(const Matrix& model) const;
};

std::string to_string(NormRecord::Mode mode);
NormRecord::Mode parse_norm_mode(const std::string& name);

/// Labeled spectra in the model range.
struct Dataset {
    Matrix samples;  ///< [n, bands], normalized
    std::vector<int> labels;
    std::vector<std::string> class_names;
    std::vector<std::string> band_names;
    std::vector<Provenance> provenance;
    std::optional<NormRecord> norm;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t bands() const noexcept { return samples.cols(); }
    std::size_t num_classes() const noexcept { return class_names.size(); }

    /// Throws ContractError when an invariant is broken.
    void validate() const;

    void add_row(std::span<const double> values, int label, Provenance origin);
    Dataset subset(std::span<const std::size_t> rows) const;
    /// Row indices of each class, ascending.
    std::vector<std::vector<std::size_t>> indices_by_class() const;
    std::vector<std::size_t> class_counts() const;
    std::size_t synthetic_count() const;
    /// Same classes, bands and normalization, no rows.
    Dataset empty_like() const;
};

/// Reflectance-scale values. Throws ContractError when the record is missing.
Matrix denormalize(const Matrix& model, const std::optional<NormRecord>& norm);

/// Parse "label,b1,...,bB" CSV. Labels are indexed by first appearance and
/// bands are min-max normalized with a stored NormRecord.
Dataset parse_csv(std::istream& in, NormRecord::Mode mode = NormRecord::Mode::minmax);
Dataset ingest_csv(const std::filesystem::path& path,
                   NormRecord::Mode mode = NormRecord::Mode::minmax);

/// Parse with the classes and normalization of `reference` (e.g. validation
/// data for a training set). Unknown class names are a ParseError.
Dataset parse_csv_like(std::istream& in, const Dataset& reference);
Dataset ingest_csv_like(const std::filesystem::path& path, const Dataset& reference);

/// Write rows in reflectance scale with class names in the label column.
void write_csv(const Dataset& ds, std::ostream& out);
void write_csv(const Dataset& ds, const std::filesystem::path& path);

/// Write raw (already reflectance-scale) rows with the given labels.
void write_rows_csv(const Matrix& rows, std::span<const std::string> labels,
                    std::span<const std::string> band_names, std::ostream& out);

/// Synthetic desk-scale benchmark: class c's mean spectrum is a sloped
/// baseline plus two Gaussian bumps at class-specific centers and widths;
/// each sample is scaled by N(1, 0.1^2) and multiplied by a smooth random
/// warp curve. Returned normalized, with a NormRecord.
Dataset make_benchmark(int classes, int per_class, int bands, std::uint64_t seed);

}  // namespace spectradiff
