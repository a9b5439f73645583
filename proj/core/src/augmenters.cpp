#include "spectradiff/augmenters.hpp"

#include <algorithm>
#include <numeric>

#include "spectradiff/errors.hpp"
#include "spectradiff/sampler.hpp"
#include "spectradiff/spline.hpp"

namespace spectradiff {

AugmentMethod parse_augment_method(const std::string& name) {
    if (name == "none") return AugmentMethod::none;
    if (name == "jitter") return AugmentMethod::jitter;
    if (name == "scale") return AugmentMethod::scale;
    if (name == "magnitude_warp" || name == "warp") return AugmentMethod::magnitude_warp;
    if (name == "smote") return AugmentMethod::smote;
    if (name == "diffusion") return AugmentMethod::diffusion;
    throw ConfigError("unknown augmentation method '" + name + "'");
}

std::string to_string(AugmentMethod method) {
    switch (method) {
        case AugmentMethod::none: return "none";
        case AugmentMethod::jitter: return "jitter";
        case AugmentMethod::scale: return "scale";
        case AugmentMethod::magnitude_warp: return "magnitude_warp";
        case AugmentMethod::smote: return "smote";
        case AugmentMethod::diffusion: return "diffusion";
    }
    return "none";
}

void AugmentConfig::validate() const {
    if (per_class_count < 0) {
        throw ConfigError("augment: per_class_count must be >= 0");
    }
    switch (method) {
        case AugmentMethod::jitter:
        case AugmentMethod::scale:
            if (!(noise_power >= 0.0)) throw ConfigError("augment: noise_power must be >= 0");
            break;
        case AugmentMethod::magnitude_warp:
            if (!(noise_power >= 0.0)) throw ConfigError("augment: noise_power must be >= 0");
            if (anchors < 2) throw ConfigError("augment: anchors must be >= 2");
            break;
        case AugmentMethod::smote:
            if (k_neighbors < 1) throw ConfigError("augment: k_neighbors must be >= 1");
            break;
        case AugmentMethod::none:
        case AugmentMethod::diffusion:
            break;
    }
}

std::vector<double> jitter(std::span<const double> x, double sigma, Rng& rng) {
    if (!(sigma >= 0.0)) throw ConfigError("jitter: sigma must be >= 0");
    std::vector<double> out(x.begin(), x.end());
    for (double& v : out) {
        v += sigma * rng.normal();
    }
    return out;
}

std::vector<double> scale(std::span<const double> x, double sigma, Rng& rng) {
    if (!(sigma >= 0.0)) throw ConfigError("scale: sigma must be >= 0");
    const double s = 1.0 + sigma * rng.normal();
    std::vector<double> out(x.begin(), x.end());
    for (double& v : out) {
        v *= s;
    }
    return out;
}

std::vector<double> anchor_positions(int anchors, std::size_t bands) {
    if (anchors < 2) throw ConfigError("magnitude_warp: anchors must be >= 2");
    if (static_cast<std::size_t>(anchors) > bands) {
        throw ConfigError("magnitude_warp: " + std::to_string(anchors) + " anchors exceed " +
                          std::to_string(bands) + " bands");
    }
    std::vector<double> pos(static_cast<std::size_t>(anchors));
    const double span = static_cast<double>(bands - 1);
    for (int i = 0; i < anchors; ++i) {
        pos[static_cast<std::size_t>(i)] = span * i / (anchors - 1);
    }
    pos.back() = span;
    return pos;
}

std::vector<double> warp_curve(std::span<const double> anchor_values, std::size_t bands) {
    const auto pos = anchor_positions(static_cast<int>(anchor_values.size()), bands);
    const NaturalCubicSpline spline(pos, {anchor_values.begin(), anchor_values.end()});
    std::vector<double> curve(bands);
    for (std::size_t b = 0; b < bands; ++b) {
        curve[b] = spline(static_cast<double>(b));
    }
    return curve;
}

std::vector<double> magnitude_warp(std::span<const double> x, double sigma, int anchors, Rng& rng) {
    if (!(sigma >= 0.0)) throw ConfigError("magnitude_warp: sigma must be >= 0");
    anchor_positions(anchors, x.size());
    std::vector<double> values(static_cast<std::size_t>(anchors));
    for (double& v : values) {
        v = 1.0 + sigma * rng.normal();
    }
    const auto curve = warp_curve(values, x.size());
    std::vector<double> out(x.size());
    for (std::size_t b = 0; b < x.size(); ++b) {
        out[b] = x[b] * curve[b];
    }
    return out;
}

std::vector<std::size_t> nearest_neighbors(const Matrix& pool, std::size_t self, std::size_t k) {
    if (self >= pool.rows()) throw ContractError("nearest_neighbors: row out of range");
    std::vector<std::pair<double, std::size_t>> dist;
    dist.reserve(pool.rows());
    const auto x = pool.row(self);
    for (std::size_t r = 0; r < pool.rows(); ++r) {
        if (r == self) continue;
        double d = 0.0;
        const auto y = pool.row(r);
        for (std::size_t b = 0; b < x.size(); ++b) {
            d += (x[b] - y[b]) * (x[b] - y[b]);
        }
        dist.emplace_back(d, r);
    }
    k = std::min(k, dist.size());
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
    std::vector<std::size_t> out(k);
    for (std::size_t i = 0; i < k; ++i) {
        out[i] = dist[i].second;
    }
    return out;
}

std::vector<double> interpolate(std::span<const double> x, std::span<const double> n,
                                double lambda) {
    if (x.size() != n.size()) throw DimensionError("interpolate: length mismatch");
    std::vector<double> out(x.size());
    for (std::size_t b = 0; b < x.size(); ++b) {
        out[b] = x[b] + lambda * (n[b] - x[b]);
    }
    return out;
}

std::vector<double> smote(const Matrix& pool, std::size_t self, int k, Rng& rng,
                          std::vector<std::string>* warnings) {
    if (k < 1) throw ConfigError("smote: k_neighbors must be >= 1");
    auto use_k = static_cast<std::size_t>(k);
    if (pool.rows() < use_k + 1) {
        use_k = pool.rows() - 1;
        if (warnings) {
            warnings->push_back("smote: pool of " + std::to_string(pool.rows()) +
                                " rows, k reduced from " + std::to_string(k) + " to " +
                                std::to_string(use_k));
        }
    }
    const auto x = pool.row(self);
    if (use_k == 0) {
        return {x.begin(), x.end()};
    }
    const auto nn = nearest_neighbors(pool, self, use_k);
    const auto pick = nn[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(use_k) - 1))];
    return interpolate(x, pool.row(pick), rng.uniform());
}

namespace {

Matrix diffusion_rows(const Dataset& ds, int class_index, const AugmentConfig& cfg,
                      const Checkpoint& ck, int threads) {
    const auto& name = ds.class_names[static_cast<std::size_t>(class_index)];
    const auto it = std::find(ck.class_names.begin(), ck.class_names.end(), name);
    if (it == ck.class_names.end()) {
        throw ConfigError("augment: checkpoint has no class '" + name + "'");
    }
    if (static_cast<std::size_t>(ck.model.config().bands) != ds.bands()) {
        throw ConfigError("augment: checkpoint has " + std::to_string(ck.model.config().bands) +
                          " bands, dataset has " + std::to_string(ds.bands()));
    }
    SampleRequest req;
    req.class_id = static_cast<int>(it - ck.class_names.begin());
    req.count = cfg.per_class_count;
    req.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(class_index));
    const auto sched = build_schedule(ck.schedule);
    Matrix rows = sample(req, ck.model, sched, threads);
    const bool same_norm = ck.norm && ds.norm && ck.norm->mode == ds.norm->mode &&
                           ck.norm->lo == ds.norm->lo && ck.norm->hi == ds.norm->hi;
    if (!same_norm) {
        if (!ck.norm || !ds.norm) {
            throw ConfigError("augment: diffusion needs normalization records on both sides");
        }
        rows = ds.norm->normalize(ck.norm->denormalize(rows));
    }
    return rows;
}

}  // namespace

Dataset augment_dataset(const Dataset& ds, const AugmentConfig& cfg, const Checkpoint* checkpoint,
                        int threads, std::vector<std::string>* warnings) {
    cfg.validate();
    Dataset out = ds;
    if (cfg.per_class_count == 0 || cfg.method == AugmentMethod::none) {
        return out;
    }
    if (cfg.method == AugmentMethod::diffusion && checkpoint == nullptr) {
        throw ConfigError("augment: method diffusion requires a checkpoint");
    }
    const auto count = static_cast<std::size_t>(cfg.per_class_count);
    const auto by_class = ds.indices_by_class();
    for (std::size_t c = 0; c < ds.num_classes(); ++c) {
        std::vector<std::size_t> real_rows;
        for (auto r : by_class[c]) {
            if (ds.provenance[r] == Provenance::real) real_rows.push_back(r);
        }
        const int label = static_cast<int>(c);
        if (cfg.method == AugmentMethod::diffusion) {
            const Matrix rows = diffusion_rows(ds, label, cfg, *checkpoint, threads);
            for (std::size_t i = 0; i < rows.rows(); ++i) {
                out.add_row(rows.row(i), label, Provenance::synthetic);
            }
            continue;
        }
        if (real_rows.empty()) {
            throw ConfigError("augment: class '" + ds.class_names[c] + "' has no real samples");
        }
        Rng rng(derive_seed(cfg.seed, c));
        const Matrix pool = ds.samples.select_rows(real_rows);
        for (std::size_t i = 0; i < count; ++i) {
            const auto src = static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<std::int64_t>(pool.rows()) - 1));
            std::vector<double> row;
            switch (cfg.method) {
                case AugmentMethod::jitter: row = jitter(pool.row(src), cfg.noise_power, rng); break;
                case AugmentMethod::scale: row = scale(pool.row(src), cfg.noise_power, rng); break;
                case AugmentMethod::magnitude_warp:
                    row = magnitude_warp(pool.row(src), cfg.noise_power, cfg.anchors, rng);
                    break;
                case AugmentMethod::smote:
                    row = smote(pool, src, cfg.k_neighbors, rng, i == 0 ? warnings : nullptr);
                    break;
                default: break;
            }
            out.add_row(row, label, Provenance::synthetic);
        }
    }
    return out;
}

}  // namespace spectradiff
