#include "spectradiff/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "spectradiff/errors.hpp"
#include "spectradiff/format.hpp"
#include "spectradiff/rng.hpp"
#include "spectradiff/spline.hpp"

namespace spectradiff {

std::string to_string(NormRecord::Mode mode) {
    return mode == NormRecord::Mode::minmax ? "minmax" : "standard";
}

NormRecord::Mode parse_norm_mode(const std::string& name) {
    if (name == "minmax") {
        return NormRecord::Mode::minmax;
    }
    if (name == "standard") {
        return NormRecord::Mode::standard;
    }
    throw ConfigError("unknown normalization mode '" + name + "' (expected minmax or standard)");
}

NormRecord NormRecord::fit(const Matrix& raw, Mode mode) {
    if (raw.rows() == 0) {
        throw ContractError("NormRecord::fit: no rows");
    }
    NormRecord rec;
    rec.mode = mode;
    rec.lo.assign(raw.cols(), 0.0);
    rec.hi.assign(raw.cols(), 0.0);
    for (std::size_t c = 0; c < raw.cols(); ++c) {
        if (mode == Mode::minmax) {
            double lo = raw(0, c), hi = raw(0, c);
            for (std::size_t r = 1; r < raw.rows(); ++r) {
                lo = std::min(lo, raw(r, c));
                hi = std::max(hi, raw(r, c));
            }
            rec.lo[c] = lo;
            rec.hi[c] = hi;
        } else {
            double mean = 0.0;
            for (std::size_t r = 0; r < raw.rows(); ++r) {
                mean += raw(r, c);
            }
            mean /= static_cast<double>(raw.rows());
            double var = 0.0;
            for (std::size_t r = 0; r < raw.rows(); ++r) {
                var += (raw(r, c) - mean) * (raw(r, c) - mean);
            }
            rec.lo[c] = mean;
            rec.hi[c] = std::sqrt(var / static_cast<double>(raw.rows()));
        }
    }
    return rec;
}

bool NormRecord::constant(std::size_t band) const {
    return mode == Mode::minmax ? !(hi[band] > lo[band]) : !(hi[band] > 0.0);
}

Matrix NormRecord::normalize(const Matrix& raw) const {
    if (raw.cols() != bands()) {
        throw DimensionError("normalize: " + std::to_string(raw.cols()) + " bands, record has " +
                             std::to_string(bands()));
    }
    Matrix out(raw.rows(), raw.cols());
    for (std::size_t c = 0; c < raw.cols(); ++c) {
        const bool flat = constant(c);
        for (std::size_t r = 0; r < raw.rows(); ++r) {
            if (flat) {
                out(r, c) = 0.0;
            } else if (mode == Mode::minmax) {
                out(r, c) = 2.0 * (raw(r, c) - lo[c]) / (hi[c] - lo[c]) - 1.0;
            } else {
                out(r, c) = (raw(r, c) - lo[c]) / hi[c];
            }
        }
    }
    return out;
}

Matrix NormRecord::denormalize(const Matrix& model) const {
    if (model.cols() != bands()) {
        throw DimensionError("denormalize: " + std::to_string(model.cols()) +
                             " bands, record has " + std::to_string(bands()));
    }
    Matrix out(model.rows(), model.cols());
    for (std::size_t c = 0; c < model.cols(); ++c) {
        const bool flat = constant(c);
        for (std::size_t r = 0; r < model.rows(); ++r) {
            if (flat) {
                out(r, c) = lo[c];
            } else if (mode == Mode::minmax) {
                out(r, c) = lo[c] + (model(r, c) + 1.0) * 0.5 * (hi[c] - lo[c]);
            } else {
                out(r, c) = lo[c] + model(r, c) * hi[c];
            }
        }
    }
    return out;
}

Matrix denormalize(const Matrix& model, const std::optional<NormRecord>& norm) {
    if (!norm) {
        throw ContractError("denormalize: dataset has no normalization record");
    }
    return norm->denormalize(model);
}

void Dataset::validate() const {
    if (samples.rows() != labels.size() || provenance.size() != labels.size()) {
        throw ContractError("dataset: samples, labels and provenance lengths differ");
    }
    for (int label : labels) {
        if (label < 0 || static_cast<std::size_t>(label) >= class_names.size()) {
            throw ContractError("dataset: label " + std::to_string(label) + " outside class list");
        }
    }
    for (double v : samples.data()) {
        if (!std::isfinite(v)) {
            throw ContractError("dataset: non-finite sample value");
        }
    }
    if (!band_names.empty() && band_names.size() != samples.cols()) {
        throw ContractError("dataset: band name count differs from band count");
    }
    if (norm && norm->bands() != samples.cols() && samples.rows() > 0) {
        throw ContractError("dataset: normalization record band count differs");
    }
}

void Dataset::add_row(std::span<const double> values, int label, Provenance origin) {
    if (label < 0 || static_cast<std::size_t>(label) >= class_names.size()) {
        throw ContractError("dataset: label " + std::to_string(label) + " outside class list");
    }
    samples.append_row(values);
    labels.push_back(label);
    provenance.push_back(origin);
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
    Dataset out = empty_like();
    out.samples = samples.select_rows(rows);
    for (auto r : rows) {
        out.labels.push_back(labels[r]);
        out.provenance.push_back(provenance[r]);
    }
    return out;
}

std::vector<std::vector<std::size_t>> Dataset::indices_by_class() const {
    std::vector<std::vector<std::size_t>> out(num_classes());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        out[static_cast<std::size_t>(labels[i])].push_back(i);
    }
    return out;
}

std::vector<std::size_t> Dataset::class_counts() const {
    std::vector<std::size_t> out(num_classes(), 0);
    for (int label : labels) {
        ++out[static_cast<std::size_t>(label)];
    }
    return out;
}

std::size_t Dataset::synthetic_count() const {
    return static_cast<std::size_t>(
        std::count(provenance.begin(), provenance.end(), Provenance::synthetic));
}

Dataset Dataset::empty_like() const {
    Dataset out;
    out.samples = Matrix(0, samples.cols());
    out.class_names = class_names;
    out.band_names = band_names;
    out.norm = norm;
    return out;
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        out.push_back(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start));
        if (comma == std::string_view::npos) {
            break;
        }
        start = comma + 1;
    }
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    return s;
}

double parse_value(std::string_view field, std::size_t line, std::size_t column) {
    field = trim(field);
    if (!field.empty() && field.front() == '+') {
        field.remove_prefix(1);
    }
    double value = 0.0;
    auto [end, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (field.empty() || ec != std::errc() || end != field.data() + field.size() ||
        !std::isfinite(value)) {
        throw ParseError("column " + std::to_string(column) + ": '" + std::string(field) +
                             "' is not a finite number",
                         line);
    }
    return value;
}

struct RawCsv {
    std::vector<std::string> band_names;
    std::vector<std::string> label_names;  // per row
    std::vector<std::size_t> label_lines;  // per row
    Matrix values;
};

RawCsv parse_raw(std::istream& in) {
    std::string line;
    std::size_t lineno = 0;
    bool have_header = false;
    RawCsv raw;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string_view body = trim(line);
        if (body.empty()) {
            continue;
        }
        const auto fields = split_fields(body);
        if (!have_header) {
            if (trim(fields[0]) != "label") {
                throw ParseError("header must start with 'label'", lineno);
            }
            if (fields.size() < 2) {
                throw ParseError("header names no band columns", lineno);
            }
            for (std::size_t i = 1; i < fields.size(); ++i) {
                raw.band_names.emplace_back(trim(fields[i]));
            }
            raw.values = Matrix(0, raw.band_names.size());
            have_header = true;
            continue;
        }
        if (fields.size() != raw.band_names.size() + 1) {
            throw ParseError("expected " + std::to_string(raw.band_names.size() + 1) +
                                 " fields, found " + std::to_string(fields.size()),
                             lineno);
        }
        std::string name(trim(fields[0]));
        if (name.empty()) {
            throw ParseError("empty label", lineno);
        }
        std::vector<double> row(raw.band_names.size());
        for (std::size_t i = 0; i < row.size(); ++i) {
            row[i] = parse_value(fields[i + 1], lineno, i + 2);
        }
        raw.values.append_row(row);
        raw.label_names.push_back(std::move(name));
        raw.label_lines.push_back(lineno);
    }
    if (!have_header) {
        throw ParseError("empty file", std::max<std::size_t>(lineno, 1));
    }
    if (raw.label_names.empty()) {
        throw ParseError("no data rows after the header", lineno);
    }
    return raw;
}

}  // namespace

Dataset parse_csv(std::istream& in, NormRecord::Mode mode) {
    RawCsv raw = parse_raw(in);
    Dataset ds;
    ds.band_names = std::move(raw.band_names);
    std::unordered_map<std::string, int> class_index;
    for (const auto& name : raw.label_names) {
        auto [it, inserted] = class_index.try_emplace(name, static_cast<int>(ds.class_names.size()));
        if (inserted) {
            ds.class_names.push_back(name);
        }
        ds.labels.push_back(it->second);
        ds.provenance.push_back(Provenance::real);
    }
    ds.norm = NormRecord::fit(raw.values, mode);
    ds.samples = ds.norm->normalize(raw.values);
    return ds;
}

Dataset parse_csv_like(std::istream& in, const Dataset& reference) {
    if (!reference.norm) {
        throw ContractError("parse_csv_like: reference dataset has no normalization record");
    }
    RawCsv raw = parse_raw(in);
    if (raw.values.cols() != reference.bands()) {
        throw ParseError("expected " + std::to_string(reference.bands()) + " bands, found " +
                             std::to_string(raw.values.cols()),
                         1);
    }
    Dataset ds = reference.empty_like();
    for (std::size_t r = 0; r < raw.label_names.size(); ++r) {
        const auto it = std::find(ds.class_names.begin(), ds.class_names.end(), raw.label_names[r]);
        if (it == ds.class_names.end()) {
            throw ParseError("unknown class '" + raw.label_names[r] + "'", raw.label_lines[r]);
        }
        ds.labels.push_back(static_cast<int>(it - ds.class_names.begin()));
        ds.provenance.push_back(Provenance::real);
    }
    ds.samples = ds.norm->normalize(raw.values);
    return ds;
}

Dataset ingest_csv_like(const std::filesystem::path& path, const Dataset& reference) {
    std::ifstream in(path);
    if (!in) {
        throw ParseError("cannot open '" + path.string() + "'", 0);
    }
    return parse_csv_like(in, reference);
}

Dataset ingest_csv(const std::filesystem::path& path, NormRecord::Mode mode) {
    std::ifstream in(path);
    if (!in) {
        throw ParseError("cannot open '" + path.string() + "'", 0);
    }
    return parse_csv(in, mode);
}

void write_rows_csv(const Matrix& rows, std::span<const std::string> labels,
                    std::span<const std::string> band_names, std::ostream& out) {
    if (labels.size() != rows.rows()) {
        throw DimensionError("write_rows_csv: one label per row required");
    }
    out << "label";
    for (std::size_t c = 0; c < rows.cols(); ++c) {
        out << ',' << (band_names.size() == rows.cols() ? band_names[c] : "b" + std::to_string(c + 1));
    }
    out << '\n';
    for (std::size_t r = 0; r < rows.rows(); ++r) {
        out << labels[r];
        for (double v : rows.row(r)) {
            out << ',' << format_double(v);
        }
        out << '\n';
    }
}

void write_csv(const Dataset& ds, std::ostream& out) {
    const Matrix raw = denormalize(ds.samples, ds.norm);
    std::vector<std::string> names(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        names[i] = ds.class_names[static_cast<std::size_t>(ds.labels[i])];
    }
    write_rows_csv(raw, names, ds.band_names, out);
}

void write_csv(const Dataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw ConfigError("cannot write '" + path.string() + "'");
    }
    write_csv(ds, out);
}

Dataset make_benchmark(int classes, int per_class, int bands, std::uint64_t seed) {
    if (classes < 1 || per_class < 1 || bands < 1) {
        throw ConfigError("make_benchmark: classes, per_class and bands must be positive");
    }
    Rng rng(seed);
    const auto n_bands = static_cast<std::size_t>(bands);
    auto position = [&](std::size_t b) {
        return n_bands == 1 ? 0.5 : static_cast<double>(b) / static_cast<double>(n_bands - 1);
    };

    // Class templates: bump centers spread over the band axis, second bump
    // offset by a class-dependent amount.
    std::vector<std::vector<double>> templates(static_cast<std::size_t>(classes),
                                               std::vector<double>(n_bands));
    for (int c = 0; c < classes; ++c) {
        const double frac = (static_cast<double>(c) + 0.5) / static_cast<double>(classes);
        const double center1 = 0.1 + 0.8 * frac;
        const double center2 = 0.1 + std::fmod(0.8 * frac + 0.37, 0.8);
        const double width1 = 0.06 + 0.04 * static_cast<double>((c * 7) % classes) / classes;
        const double width2 = 0.10 + 0.05 * static_cast<double>((c * 3) % classes) / classes;
        for (std::size_t b = 0; b < n_bands; ++b) {
            const double u = position(b);
            const double bump1 = std::exp(-0.5 * std::pow((u - center1) / width1, 2));
            const double bump2 = std::exp(-0.5 * std::pow((u - center2) / width2, 2));
            templates[static_cast<std::size_t>(c)][b] = 0.15 + 0.1 * u + 0.3 * bump1 + 0.2 * bump2;
        }
    }

    constexpr int kWarpAnchors = 4;
    Dataset ds;
    Matrix raw(0, n_bands);
    for (int c = 0; c < classes; ++c) {
        ds.class_names.push_back("class_" + std::to_string(c));
    }
    std::vector<double> row(n_bands);
    for (int c = 0; c < classes; ++c) {
        for (int i = 0; i < per_class; ++i) {
            const double scale = rng.normal(1.0, 0.1);
            std::vector<double> knots(kWarpAnchors), values(kWarpAnchors);
            for (int a = 0; a < kWarpAnchors; ++a) {
                knots[static_cast<std::size_t>(a)] = static_cast<double>(a) / (kWarpAnchors - 1);
                values[static_cast<std::size_t>(a)] = rng.normal(1.0, 0.03);
            }
            const NaturalCubicSpline warp(knots, values);
            for (std::size_t b = 0; b < n_bands; ++b) {
                row[b] = templates[static_cast<std::size_t>(c)][b] * scale * warp(position(b));
            }
            raw.append_row(row);
            ds.labels.push_back(c);
            ds.provenance.push_back(Provenance::real);
        }
    }
    for (std::size_t b = 0; b < n_bands; ++b) {
        ds.band_names.push_back("b" + std::to_string(b + 1));
    }
    ds.norm = NormRecord::fit(raw);
    ds.samples = ds.norm->normalize(raw);
    return ds;
}

}  // namespace spectradiff
