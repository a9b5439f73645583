#include "spectradiff/denoiser.hpp"

#include <algorithm>
#include <cmath>

#include "spectradiff/errors.hpp"
#include "spectradiff/gradcore/ops.hpp"
#include "spectradiff/rng.hpp"

namespace spectradiff {

namespace {

bool is_zero_init(const std::string& name) {
    return name.find(".ada.") != std::string::npos || name.rfind("final.head.", 0) == 0 ||
           name.ends_with(".bias");
}

/// x * (1 + scale) + shift with per-sample scale/shift broadcast over patches.
Tensor modulate(Graph& g, const Tensor& x, const Tensor& shift, const Tensor& scale) {
    const std::size_t patches = x.dim(1);
    Tensor s = ops::add_scalar(g, ops::expand_middle(g, scale, patches), 1.0);
    return ops::add(g, ops::mul(g, x, s), ops::expand_middle(g, shift, patches));
}

std::vector<std::size_t> to_indices(std::span<const int> values) {
    std::vector<std::size_t> out(values.size());
    std::transform(values.begin(), values.end(), out.begin(),
                   [](int v) { return static_cast<std::size_t>(v); });
    return out;
}

}  // namespace

void DenoiserConfig::validate() const {
    if (bands < 1 || patch_size < 1 || hidden < 1 || depth < 0 || heads < 1 || num_classes < 1 ||
        mlp_ratio < 1) {
        throw ConfigError("denoiser: bands, patch_size, hidden, heads, num_classes and mlp_ratio "
                          "must be positive and depth non-negative");
    }
    if (hidden % heads != 0) {
        throw ConfigError("denoiser: hidden (" + std::to_string(hidden) +
                          ") must be divisible by heads (" + std::to_string(heads) + ")");
    }
}

Matrix timestep_frequencies(std::span<const int> t, std::size_t dim) {
    Matrix out(t.size(), dim);
    const std::size_t half = dim / 2;
    for (std::size_t r = 0; r < t.size(); ++r) {
        for (std::size_t i = 0; i < half; ++i) {
            const double freq =
                std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
            const double arg = static_cast<double>(t[r]) * freq;
            out(r, i) = std::cos(arg);
            out(r, half + i) = std::sin(arg);
        }
    }
    return out;
}

std::vector<std::pair<std::string, Shape>> Denoiser::layout(const DenoiserConfig& cfg) {
    cfg.validate();
    const auto h = static_cast<std::size_t>(cfg.hidden);
    const auto ps = static_cast<std::size_t>(cfg.patch_size);
    const auto mlp = h * static_cast<std::size_t>(cfg.mlp_ratio);
    std::vector<std::pair<std::string, Shape>> out{
        {"patch.weight", {ps, h}},
        {"patch.bias", {h}},
        {"pos_embed", {static_cast<std::size_t>(cfg.patches()), h}},
        {"class_embed", {static_cast<std::size_t>(cfg.num_classes), h}},
        {"time.fc1.weight", {h, h}},
        {"time.fc1.bias", {h}},
        {"time.fc2.weight", {h, h}},
        {"time.fc2.bias", {h}},
    };
    for (int b = 0; b < cfg.depth; ++b) {
        const std::string p = "blocks." + std::to_string(b) + ".";
        out.push_back({p + "ada.weight", {h, 6 * h}});
        out.push_back({p + "ada.bias", {6 * h}});
        for (const char* proj : {"q", "k", "v", "out"}) {
            out.push_back({p + "attn." + proj + ".weight", {h, h}});
            out.push_back({p + "attn." + proj + ".bias", {h}});
        }
        out.push_back({p + "mlp.fc1.weight", {h, mlp}});
        out.push_back({p + "mlp.fc1.bias", {mlp}});
        out.push_back({p + "mlp.fc2.weight", {mlp, h}});
        out.push_back({p + "mlp.fc2.bias", {h}});
    }
    out.push_back({"final.ada.weight", {h, 2 * h}});
    out.push_back({"final.ada.bias", {2 * h}});
    out.push_back({"final.head.weight", {h, 2 * ps}});
    out.push_back({"final.head.bias", {2 * ps}});
    return out;
}

Denoiser::Denoiser(DenoiserConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    Rng rng(seed);
    for (auto& [name, shape] : layout(cfg_)) {
        Tensor t = Tensor::zeros(shape, true);
        auto d = t.data();
        if (name == "pos_embed" || name == "class_embed" || name.rfind("time.", 0) == 0) {
            if (!name.ends_with(".bias")) {
                for (auto& v : d) {
                    v = rng.normal(0.0, 0.02);
                }
            }
        } else if (!is_zero_init(name)) {
            // Xavier-uniform for the remaining linear weights.
            const double bound = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
            for (auto& v : d) {
                v = rng.uniform(-bound, bound);
            }
        }
        params_.emplace_back(name, std::move(t));
    }
}

Denoiser::Denoiser(DenoiserConfig cfg, ParamList params) : cfg_(cfg), params_(std::move(params)) {
    const auto expected = layout(cfg_);
    if (expected.size() != params_.size()) {
        throw ConfigError("denoiser: parameter count does not match the configuration");
    }
    for (std::size_t i = 0; i < expected.size(); ++i) {
        if (expected[i].first != params_[i].first || expected[i].second != params_[i].second.shape()) {
            throw ConfigError("denoiser: parameter '" + params_[i].first + "' " +
                              shape_string(params_[i].second.shape()) + " does not match expected '" +
                              expected[i].first + "' " + shape_string(expected[i].second));
        }
        params_[i].second.set_requires_grad(true);
    }
}

Tensor Denoiser::param(const std::string& name) const {
    for (const auto& [n, t] : params_) {
        if (n == name) {
            return t;
        }
    }
    throw ContractError("denoiser: no parameter named '" + name + "'");
}

Denoiser Denoiser::clone() const {
    ParamList copy;
    copy.reserve(params_.size());
    for (const auto& [name, t] : params_) {
        copy.emplace_back(name, t.clone());
    }
    return Denoiser(cfg_, std::move(copy));
}

Tensor Denoiser::embed_timestep(Graph& g, std::span<const int> t) const {
    for (int step : t) {
        if (step < 1) {
            throw ContractError("embed_timestep: timesteps start at 1");
        }
    }
    Tensor freq = Tensor::from(timestep_frequencies(t, static_cast<std::size_t>(cfg_.hidden)));
    Tensor h = ops::gelu(g, ops::linear(g, freq, param("time.fc1.weight"), param("time.fc1.bias")));
    return ops::linear(g, h, param("time.fc2.weight"), param("time.fc2.bias"));
}

Tensor Denoiser::condition(Graph& g, std::span<const int> t, std::span<const int> y) const {
    if (t.size() != y.size()) {
        throw DimensionError("condition: timestep and label counts differ");
    }
    for (int label : y) {
        if (label < 0 || label >= cfg_.num_classes) {
            throw ContractError("condition: class id " + std::to_string(label) + " outside 0.." +
                                std::to_string(cfg_.num_classes - 1));
        }
    }
    const auto labels = to_indices(y);
    return ops::add(g, embed_timestep(g, t), ops::embedding(g, param("class_embed"), labels));
}

Tensor Denoiser::attention(Graph& g, const std::string& prefix, const Tensor& x) const {
    const std::size_t batch = x.dim(0), patches = x.dim(1);
    const auto heads = static_cast<std::size_t>(cfg_.heads);
    const auto dh = static_cast<std::size_t>(cfg_.head_dim());
    auto split = [&](const char* proj) {
        Tensor p = ops::linear(g, x, param(prefix + proj + ".weight"), param(prefix + proj + ".bias"));
        p = ops::reshape(g, p, {batch, patches, heads, dh});
        p = ops::permute(g, p, {0, 2, 1, 3});
        return ops::reshape(g, p, {batch * heads, patches, dh});
    };
    Tensor q = split("q");
    Tensor k = split("k");
    Tensor v = split("v");
    Tensor scores = ops::scale(g, ops::bmm_nt(g, q, k), 1.0 / std::sqrt(static_cast<double>(dh)));
    Tensor mixed = ops::bmm(g, ops::softmax(g, scores), v);
    mixed = ops::reshape(g, mixed, {batch, heads, patches, dh});
    mixed = ops::permute(g, mixed, {0, 2, 1, 3});
    mixed = ops::reshape(g, mixed, {batch, patches, heads * dh});
    return ops::linear(g, mixed, param(prefix + "out.weight"), param(prefix + "out.bias"));
}

Tensor Denoiser::block(Graph& g, std::size_t index, const Tensor& tokens, const Tensor& cond) const {
    const std::string p = "blocks." + std::to_string(index) + ".";
    const auto h = static_cast<std::size_t>(cfg_.hidden);
    const std::size_t patches = tokens.dim(1);
    Tensor mod = ops::linear(g, ops::gelu(g, cond), param(p + "ada.weight"), param(p + "ada.bias"));
    Tensor shift_attn = ops::slice_last(g, mod, 0, h);
    Tensor scale_attn = ops::slice_last(g, mod, h, h);
    Tensor gate_attn = ops::slice_last(g, mod, 2 * h, h);
    Tensor shift_mlp = ops::slice_last(g, mod, 3 * h, h);
    Tensor scale_mlp = ops::slice_last(g, mod, 4 * h, h);
    Tensor gate_mlp = ops::slice_last(g, mod, 5 * h, h);

    const Tensor none;
    Tensor a = modulate(g, ops::layernorm(g, tokens, none, none), shift_attn, scale_attn);
    a = attention(g, p + "attn.", a);
    Tensor x = ops::add(g, tokens, ops::mul(g, ops::expand_middle(g, gate_attn, patches), a));

    Tensor m = modulate(g, ops::layernorm(g, x, none, none), shift_mlp, scale_mlp);
    m = ops::gelu(g, ops::linear(g, m, param(p + "mlp.fc1.weight"), param(p + "mlp.fc1.bias")));
    m = ops::linear(g, m, param(p + "mlp.fc2.weight"), param(p + "mlp.fc2.bias"));
    return ops::add(g, x, ops::mul(g, ops::expand_middle(g, gate_mlp, patches), m));
}

Denoiser::Outputs Denoiser::forward(Graph& g, const Matrix& xt, std::span<const int> t,
                                    std::span<const int> y) const {
    if (xt.cols() != static_cast<std::size_t>(cfg_.bands)) {
        throw ConfigError("denoiser: input has " + std::to_string(xt.cols()) +
                          " bands, model expects " + std::to_string(cfg_.bands));
    }
    if (t.size() != xt.rows() || y.size() != xt.rows()) {
        throw DimensionError("denoiser: one timestep and label per row required");
    }
    const std::size_t batch = xt.rows();
    const auto ps = static_cast<std::size_t>(cfg_.patch_size);
    const auto patches = static_cast<std::size_t>(cfg_.patches());
    const auto h = static_cast<std::size_t>(cfg_.hidden);
    const auto bands = static_cast<std::size_t>(cfg_.bands);

    Matrix patched(batch * patches, ps);
    for (std::size_t r = 0; r < batch; ++r) {
        std::copy(xt.row(r).begin(), xt.row(r).end(), patched.data().begin() +
                                                           static_cast<std::ptrdiff_t>(r * patches * ps));
    }
    Tensor tokens = ops::linear(g, Tensor::from(patched), param("patch.weight"), param("patch.bias"));
    tokens = ops::reshape(g, tokens, {batch, patches, h});
    tokens = ops::add(g, tokens, ops::expand_batch(g, param("pos_embed"), batch));

    Tensor cond = condition(g, t, y);
    for (std::size_t b = 0; b < static_cast<std::size_t>(cfg_.depth); ++b) {
        tokens = block(g, b, tokens, cond);
    }

    Tensor mod = ops::linear(g, ops::gelu(g, cond), param("final.ada.weight"), param("final.ada.bias"));
    const Tensor none;
    Tensor x = modulate(g, ops::layernorm(g, tokens, none, none), ops::slice_last(g, mod, 0, h),
                        ops::slice_last(g, mod, h, h));
    Tensor out = ops::linear(g, x, param("final.head.weight"), param("final.head.bias"));

    auto unpatch = [&](std::size_t start) {
        Tensor part = ops::slice_last(g, out, start, ps);
        part = ops::reshape(g, part, {batch, patches * ps});
        return patches * ps == bands ? part : ops::slice_last(g, part, 0, bands);
    };
    return Outputs{unpatch(0), ops::sigmoid(g, unpatch(ps))};
}

Prediction predict(const Denoiser& model, const Matrix& xt, std::span<const int> t,
                   std::span<const int> y, const NoiseSchedule& sched) {
    Graph g(Graph::Mode::inference);
    auto outputs = model.forward(g, xt, t, y);
    Prediction pred{outputs.eps_hat.to_matrix(), outputs.v.to_matrix(), {}};
    pred.moments = p_moments(xt, pred.eps_hat, pred.v, t, sched);
    return pred;
}

}  // namespace spectradiff
