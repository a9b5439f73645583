#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "spectradiff/diffusion.hpp"
#include "spectradiff/gradcore/adam.hpp"
#include "spectradiff/gradcore/graph.hpp"
#include "spectradiff/matrix.hpp"
#include "spectradiff/schedule.hpp"

namespace spectradiff {

struct DenoiserConfig {
    int bands = 0;
    int patch_size = 8;
    int hidden = 64;
    int depth = 2;
    int heads = 2;
    int num_classes = 0;
    int mlp_ratio = 4;

    void validate() const;
    /// ceil(bands / patch_size)
    int patches() const { return (bands + patch_size - 1) / patch_size; }
    int head_dim() const { return hidden / heads; }
};

/// Sinusoidal timestep features, `dim` columns per timestep:
/// half = dim / 2, freq_i = exp(-ln(10000) * i / half),
/// row = [cos(t * freq_0..half-1), sin(t * freq_0..half-1)], zero-padded when dim is odd.
Matrix timestep_frequencies(std::span<const int> t, std::size_t dim);

/// Class-conditioned transformer noise predictor.
///
/// The spectrum is cut into non-overlapping patches (zero-padded to a whole
/// number), each patch is linearly embedded and a learned positional
/// embedding is added. The conditioning vector is the timestep embedding
/// (sinusoidal features through a two-layer GELU MLP) plus a learned class
/// embedding. Blocks are AdaLN-Zero: the conditioning vector produces
/// shift/scale/gate triples for the attention and MLP sub-layers through a
/// zero-initialized projection, so a fresh block is an exact identity. The
/// final layer is a modulated layer norm and a zero-initialized linear head
/// emitting, per patch, patch_size noise values followed by patch_size
/// variance logits; padded bands are cropped away.
class Denoiser {
public:
    Denoiser(DenoiserConfig cfg, std::uint64_t seed);
    /// Wrap existing parameters (e.g. from a checkpoint). Names and shapes are checked.
    Denoiser(DenoiserConfig cfg, ParamList params);

    const DenoiserConfig& config() const noexcept { return cfg_; }
    ParamList& params() noexcept { return params_; }
    const ParamList& params() const noexcept { return params_; }
    Tensor param(const std::string& name) const;

    /// Deep copy with independent parameter storage.
    Denoiser clone() const;

    struct Outputs {
        Tensor eps_hat;  ///< [batch, bands]
        Tensor v;        ///< [batch, bands], in [0, 1]
    };

    Outputs forward(Graph& g, const Matrix& xt, std::span<const int> t, std::span<const int> y) const;

    /// [batch, hidden]
    Tensor embed_timestep(Graph& g, std::span<const int> t) const;
    /// embed_timestep(t) + class_embed[y]
    Tensor condition(Graph& g, std::span<const int> t, std::span<const int> y) const;
    /// One AdaLN-Zero block on tokens [batch, patches, hidden] with raw conditioning [batch, hidden].
    Tensor block(Graph& g, std::size_t index, const Tensor& tokens, const Tensor& cond) const;

    /// Parameter shapes for a config, in canonical order.
    static std::vector<std::pair<std::string, Shape>> layout(const DenoiserConfig& cfg);

private:
    Tensor attention(Graph& g, const std::string& prefix, const Tensor& x) const;

    DenoiserConfig cfg_;
    ParamList params_;
};

/// Network outputs and reverse-process moments for a batch, no gradients.
struct Prediction {
    Matrix eps_hat;
    Matrix v;
    GaussianMoments moments;
};

Prediction predict(const Denoiser& model, const Matrix& xt, std::span<const int> t,
                   std::span<const int> y, const NoiseSchedule& sched);

}  // namespace spectradiff
