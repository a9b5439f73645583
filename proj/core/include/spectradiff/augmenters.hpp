#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spectradiff/checkpoint.hpp"
#include "spectradiff/dataset.hpp"
#include "spectradiff/matrix.hpp"
#include "spectradiff/rng.hpp"

namespace spectradiff {

enum class AugmentMethod { none, jitter, scale, magnitude_warp, smote, diffusion };

AugmentMethod parse_augment_method(const std::string& name);
std::string to_string(AugmentMethod method);

struct AugmentConfig {
    AugmentMethod method = AugmentMethod::none;
    double noise_power = 0.05;  ///< sigma of jitter, scale or warp
    int anchors = 4;
    int k_neighbors = 5;
    int per_class_count = 0;
    std::uint64_t seed = 0;

    /// Throws ConfigError for an invalid field of the selected method.
    void validate() const;
};

/// x + N(0, sigma^2) per band.
std::vector<double> jitter(std::span<const double> x, double sigma, Rng& rng);

/// s * x with one s ~ N(1, sigma^2).
std::vector<double> scale(std::span<const double> x, double sigma, Rng& rng);

/// Multiplies x by a natural cubic spline through `anchors` equally spaced
/// knots (first and last band included) with values ~ N(1, sigma^2).
std::vector<double> magnitude_warp(std::span<const double> x, double sigma, int anchors, Rng& rng);

/// The warp curve alone, given the anchor values, evaluated at every band.
std::vector<double> warp_curve(std::span<const double> anchor_values, std::size_t bands);

/// Band positions of `anchors` equally spaced knots over `bands` bands.
std::vector<double> anchor_positions(int anchors, std::size_t bands);

/// Indices of the k rows of `pool` closest to row `self` (Euclidean),
/// excluding `self`, nearest first; ties go to the lower index.
std::vector<std::size_t> nearest_neighbors(const Matrix& pool, std::size_t self, std::size_t k);

/// x + lambda (n - x)
std::vector<double> interpolate(std::span<const double> x, std::span<const double> n,
                                double lambda);

/// SMOTE draw for row `self` of a same-class pool: uniform pick among the k
/// nearest neighbors, then interpolate with lambda ~ U(0, 1). When the pool
/// has fewer than k + 1 rows, k becomes pool - 1 and a message is appended to
/// `warnings`.
std::vector<double> smote(const Matrix& pool, std::size_t self, int k, Rng& rng,
                          std::vector<std::string>* warnings = nullptr);

/// Adds cfg.per_class_count synthetic rows per class, tagged synthetic.
/// Sources are the real rows of each class. For the diffusion method the
/// checkpoint is required; its samples are mapped back to reflectance with
/// the checkpoint's record and then into this dataset's normalization.
Dataset augment_dataset(const Dataset& ds, const AugmentConfig& cfg,
                        const Checkpoint* checkpoint = nullptr, int threads = 1,
                        std::vector<std::string>* warnings = nullptr);

}  // namespace spectradiff
