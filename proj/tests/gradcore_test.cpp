#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numeric>

#include "spectradiff/errors.hpp"
#include "spectradiff/gradcore/adam.hpp"
#include "spectradiff/gradcore/graph.hpp"
#include "spectradiff/gradcore/ops.hpp"
#include "spectradiff/rng.hpp"
#include "support/op_cases.hpp"
#include "support/oracles.hpp"

namespace sd = spectradiff;
namespace ops = spectradiff::ops;
using sd::Graph;
using sd::Shape;
using sd::Tensor;

namespace {

using oracle::Builder;
using oracle::op_gradient_error;
using oracle::random_tensor;

void expect_gradients(const char* name, const std::function<std::vector<Tensor>(sd::Rng&)>& make,
                      const Builder& build) {
    for (std::uint64_t draw = 0; draw < 20; ++draw) {
        sd::Rng rng(1000 + draw);
        const double err = op_gradient_error(build, make(rng), rng);
        EXPECT_LT(err, 1e-6) << name << " draw " << draw;
    }
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
    Graph g;
    const Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    const Tensor m = Tensor::from({2, 2}, {3, -1, 2.5, 7});
    const Tensor out = ops::matmul(g, eye, m);
    EXPECT_EQ(std::vector<double>(out.data().begin(), out.data().end()),
              std::vector<double>(m.data().begin(), m.data().end()));
}

TEST(Matmul, HandArithmetic) {
    Graph g;
    const Tensor out = ops::matmul(g, Tensor::from({2, 2}, {1, 2, 3, 4}), Tensor::from({2, 1}, {0, 1}));
    ASSERT_EQ(out.shape(), (Shape{2, 1}));
    EXPECT_DOUBLE_EQ(out.data()[0], 2.0);
    EXPECT_DOUBLE_EQ(out.data()[1], 4.0);
}

TEST(Matmul, InnerMismatchThrows) {
    Graph g;
    EXPECT_THROW(ops::matmul(g, Tensor::zeros({2, 3}), Tensor::zeros({2, 2})), sd::DimensionError);
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
    expect_gradients(
        "matmul", [](sd::Rng& rng) { return std::vector{random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)}; },
        [](Graph& g, const std::vector<Tensor>& in) { return ops::matmul(g, in[0], in[1]); });
}

TEST(Matmul, BatchedLeadingDimsGradient) {
    expect_gradients(
        "matmul3", [](sd::Rng& rng) { return std::vector{random_tensor({2, 3, 4}, rng), random_tensor({4, 5}, rng)}; },
        [](Graph& g, const std::vector<Tensor>& in) { return ops::matmul(g, in[0], in[1]); });
}

TEST(Bmm, GradientsMatchFiniteDifferences) {
    expect_gradients(
        "bmm", [](sd::Rng& rng) { return std::vector{random_tensor({2, 3, 4}, rng), random_tensor({2, 4, 5}, rng)}; },
        [](Graph& g, const std::vector<Tensor>& in) { return ops::bmm(g, in[0], in[1]); });
    expect_gradients(
        "bmm_nt", [](sd::Rng& rng) { return std::vector{random_tensor({2, 3, 4}, rng), random_tensor({2, 5, 4}, rng)}; },
        [](Graph& g, const std::vector<Tensor>& in) { return ops::bmm_nt(g, in[0], in[1]); });
}

TEST(Linear, GradientMatchesFiniteDifferences) {
    expect_gradients(
        "linear",
        [](sd::Rng& rng) {
            return std::vector{random_tensor({2, 3, 4}, rng), random_tensor({4, 3}, rng), random_tensor({3}, rng)};
        },
        [](Graph& g, const std::vector<Tensor>& in) { return ops::linear(g, in[0], in[1], in[2]); });
}

TEST(Elementwise, GradientsMatchFiniteDifferences) {
    auto two = [](sd::Rng& rng) { return std::vector{random_tensor({3, 5}, rng), random_tensor({3, 5}, rng)}; };
    auto one = [](sd::Rng& rng) { return std::vector{random_tensor({3, 5}, rng, -3.0, 3.0)}; };
    expect_gradients("add", two, [](Graph& g, const std::vector<Tensor>& in) { return ops::add(g, in[0], in[1]); });
    expect_gradients("sub", two, [](Graph& g, const std::vector<Tensor>& in) { return ops::sub(g, in[0], in[1]); });
    expect_gradients("mul", two, [](Graph& g, const std::vector<Tensor>& in) { return ops::mul(g, in[0], in[1]); });
    expect_gradients("scale", one, [](Graph& g, const std::vector<Tensor>& in) { return ops::scale(g, in[0], -1.7); });
    expect_gradients("add_scalar", one,
                     [](Graph& g, const std::vector<Tensor>& in) { return ops::add_scalar(g, in[0], 0.3); });
    expect_gradients("exp", one, [](Graph& g, const std::vector<Tensor>& in) { return ops::exp(g, in[0]); });
    expect_gradients("sigmoid", one, [](Graph& g, const std::vector<Tensor>& in) { return ops::sigmoid(g, in[0]); });
    expect_gradients("gelu", one, [](Graph& g, const std::vector<Tensor>& in) { return ops::gelu(g, in[0]); });
    expect_gradients("add_bias", [](sd::Rng& rng) { return std::vector{random_tensor({2, 3, 4}, rng), random_tensor({4}, rng)}; },
                     [](Graph& g, const std::vector<Tensor>& in) { return ops::add_bias(g, in[0], in[1]); });
}

TEST(Relu, GradientAwayFromKink) {
    // Keep inputs at least 0.1 from zero so the differences never straddle the kink.
    expect_gradients(
        "relu",
        [](sd::Rng& rng) {
            Tensor t = random_tensor({4, 4}, rng);
            for (auto& v : t.data()) v += v >= 0 ? 0.1 : -0.1;
            return std::vector{t};
        },
        [](Graph& g, const std::vector<Tensor>& in) { return ops::relu(g, in[0]); });
}

TEST(Softmax, UniformRow) {
    Graph g;
    const Tensor out = ops::softmax(g, Tensor::from({3}, {0, 0, 0}));
    for (double v : out.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LargeLogitDoesNotOverflow) {
    Graph g;
    const Tensor out = ops::softmax(g, Tensor::from({3}, {1000, 0, 0}));
    EXPECT_NEAR(out.data()[0], 1.0, 1e-15);
    EXPECT_NEAR(out.data()[1], 0.0, 1e-15);
    for (double v : out.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Softmax, RowsLieInSimplex) {
    sd::Rng rng(5);
    Graph g;
    const Tensor out = ops::softmax(g, random_tensor({50, 7}, rng, -30.0, 30.0));
    for (std::size_t r = 0; r < 50; ++r) {
        double total = 0.0;
        for (std::size_t c = 0; c < 7; ++c) {
            const double v = out.data()[r * 7 + c];
            EXPECT_GE(v, 0.0);
            total += v;
        }
        EXPECT_GE(total, 1.0 - 1e-12);
        EXPECT_LE(total, 1.0 + 1e-12);
    }
}

TEST(Softmax, GradientMatchesFiniteDifferences) {
    expect_gradients("softmax", [](sd::Rng& rng) { return std::vector{random_tensor({4}, rng, -2.0, 2.0)}; },
                     [](Graph& g, const std::vector<Tensor>& in) { return ops::softmax(g, in[0]); });
    expect_gradients("softmax rows", [](sd::Rng& rng) { return std::vector{random_tensor({2, 3, 4}, rng, -2.0, 2.0)}; },
                     [](Graph& g, const std::vector<Tensor>& in) { return ops::softmax(g, in[0]); });
}

TEST(Layernorm, ConstantRowNormalizesToZero) {
    Graph g;
    const Tensor out = ops::layernorm(g, Tensor::full({2, 5}, 3.25), Tensor(), Tensor());
    for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(Layernorm, StandardizedRowIsFixedPoint) {
    std::vector<double> x{-1.5, -0.5, 0.5, 1.5};
    const double sd_x = std::sqrt((2.25 + 0.25 + 0.25 + 2.25) / 4.0);
    for (auto& v : x) v /= sd_x;
    Graph g;
    const Tensor out = ops::layernorm(g, Tensor::from({4}, x), Tensor::full({4}, 1.0), Tensor::zeros({4}));
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(out.data()[i], x[i], 1e-6);
}

TEST(Layernorm, ZeroWidthThrows) {
    Graph g;
    EXPECT_ANY_THROW(ops::layernorm(g, Tensor(), Tensor(), Tensor()));
}

TEST(Layernorm, GradientMatchesFiniteDifferences) {
    for (std::uint64_t draw = 0; draw < 20; ++draw) {
        sd::Rng rng(77 + draw);
        const double err = op_gradient_error(
            [](Graph& g, const std::vector<Tensor>& in) { return ops::layernorm(g, in[0], in[1], in[2]); },
            {random_tensor({2, 8}, rng), random_tensor({8}, rng), random_tensor({8}, rng)}, rng);
        EXPECT_LT(err, 1e-5) << "draw " << draw;
    }
}

TEST(Gelu, ZeroAndAsymptotes) {
    Graph g;
    const Tensor out = ops::gelu(g, Tensor::from({3}, {0.0, 30.0, -30.0}));
    EXPECT_EQ(out.data()[0], 0.0);
    EXPECT_NEAR(out.data()[1], 30.0, 1e-12);
    EXPECT_NEAR(out.data()[2], 0.0, 1e-12);
}

TEST(Gelu, MatchesHighPrecisionTanhForm) {
    using oracle::HighPrecision;
    const HighPrecision x(1);
    const HighPrecision pi = boost::math::constants::pi<HighPrecision>();
    const HighPrecision inner = boost::multiprecision::sqrt(2 / pi) * (x + HighPrecision("0.044715") * x * x * x);
    const HighPrecision expected = HighPrecision("0.5") * x * (1 + boost::multiprecision::tanh(inner));
    Graph g;
    const Tensor out = ops::gelu(g, Tensor::from({1}, {1.0}));
    EXPECT_NEAR(out.data()[0], expected.convert_to<double>(), 1e-15);
}

TEST(Reductions, GradientsMatchFiniteDifferences) {
    auto one = [](sd::Rng& rng) { return std::vector{random_tensor({2, 3, 4}, rng)}; };
    expect_gradients("sum_last", one, [](Graph& g, const std::vector<Tensor>& in) { return ops::sum_last(g, in[0]); });
    expect_gradients("mean_last", one, [](Graph& g, const std::vector<Tensor>& in) { return ops::mean_last(g, in[0]); });
    expect_gradients("mean", one, [](Graph& g, const std::vector<Tensor>& in) { return ops::mean(g, in[0]); });
    expect_gradients("mse", [](sd::Rng& rng) { return std::vector{random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)}; },
                     [](Graph& g, const std::vector<Tensor>& in) { return ops::mse(g, in[0], in[1]); });
}

TEST(ShapeOps, GradientsMatchFiniteDifferences) {
    auto one = [](sd::Rng& rng) { return std::vector{random_tensor({2, 3, 4}, rng)}; };
    expect_gradients("reshape", one,
                     [](Graph& g, const std::vector<Tensor>& in) { return ops::reshape(g, in[0], {6, 4}); });
    expect_gradients("permute", one,
                     [](Graph& g, const std::vector<Tensor>& in) { return ops::permute(g, in[0], {2, 0, 1}); });
    expect_gradients("slice_last", one,
                     [](Graph& g, const std::vector<Tensor>& in) { return ops::slice_last(g, in[0], 1, 2); });
    expect_gradients("expand_batch", one,
                     [](Graph& g, const std::vector<Tensor>& in) { return ops::expand_batch(g, in[0], 3); });
    expect_gradients("expand_middle", [](sd::Rng& rng) { return std::vector{random_tensor({2, 5}, rng)}; },
                     [](Graph& g, const std::vector<Tensor>& in) { return ops::expand_middle(g, in[0], 3); });
}

TEST(Permute, MovesElements) {
    Graph g;
    std::vector<double> data(24);
    std::iota(data.begin(), data.end(), 0.0);
    const Tensor out = ops::permute(g, Tensor::from({2, 3, 4}, data), {2, 0, 1});
    ASSERT_EQ(out.shape(), (Shape{4, 2, 3}));
    // out[k][i][j] = in[i][j][k]
    EXPECT_EQ(out.data()[(3 * 2 + 1) * 3 + 2], data[(1 * 3 + 2) * 4 + 3]);
}

TEST(Embedding, GradientFlowsOnlyToIndexedRows) {
    sd::Rng rng(3);
    Tensor table = random_tensor({5, 3}, rng);
    const std::vector<std::size_t> idx{1, 3, 1};
    Graph g;
    g.backward(ops::sum(g, ops::embedding(g, table, idx)));
    const auto grad = table.grad();
    for (std::size_t r = 0; r < 5; ++r) {
        const double expected = r == 1 ? 2.0 : (r == 3 ? 1.0 : 0.0);
        for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(grad[r * 3 + c], expected);
    }
    expect_gradients("embedding", [](sd::Rng& r) { return std::vector{random_tensor({5, 3}, r)}; },
                     [idx](Graph& gg, const std::vector<Tensor>& in) { return ops::embedding(gg, in[0], idx); });
}

TEST(Conv1d, GradientMatchesFiniteDifferences) {
    for (std::size_t k : {1u, 2u, 3u, 5u}) {
        expect_gradients(
            "conv1d",
            [k](sd::Rng& rng) {
                return std::vector{random_tensor({2, 3, 7}, rng), random_tensor({4, 3, k}, rng), random_tensor({4}, rng)};
            },
            [](Graph& g, const std::vector<Tensor>& in) { return ops::conv1d(g, in[0], in[1], in[2]); });
    }
}

TEST(Conv1d, MatchesDirectSum) {
    sd::Rng rng(8);
    const Tensor x = random_tensor({1, 2, 6}, rng), w = random_tensor({3, 2, 3}, rng), b = random_tensor({3}, rng);
    Graph g(Graph::Mode::inference);
    const Tensor out = ops::conv1d(g, x, w, b);
    for (std::size_t o = 0; o < 3; ++o) {
        for (std::size_t l = 0; l < 6; ++l) {
            double acc = b.data()[o];
            for (std::size_t c = 0; c < 2; ++c) {
                for (std::size_t j = 0; j < 3; ++j) {
                    const auto pos = static_cast<long>(l) + static_cast<long>(j) - 1;
                    if (pos >= 0 && pos < 6) acc += w.data()[(o * 2 + c) * 3 + j] * x.data()[c * 6 + static_cast<std::size_t>(pos)];
                }
            }
            EXPECT_NEAR(out.data()[o * 6 + l], acc, 1e-14);
        }
    }
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
    const std::vector<std::size_t> labels{0, 2, 1, 2};
    expect_gradients("cross_entropy", [](sd::Rng& rng) { return std::vector{random_tensor({4, 3}, rng, -3, 3)}; },
                     [labels](Graph& g, const std::vector<Tensor>& in) { return ops::cross_entropy(g, in[0], labels); });
}

TEST(Backward, SumGivesOnes) {
    Tensor x = Tensor::zeros({2, 3, 2}, true);
    Graph g;
    g.backward(ops::sum(g, x));
    for (double v : x.grad()) EXPECT_EQ(v, 1.0);
}

TEST(Backward, HalfSquaredNormGivesInput) {
    sd::Rng rng(2);
    Tensor x = random_tensor({7}, rng);
    Graph g;
    g.backward(ops::scale(g, ops::sum(g, ops::mul(g, x, x)), 0.5));
    for (std::size_t i = 0; i < 7; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], x.data()[i]);
}

TEST(Backward, NonScalarLossThrows) {
    Tensor x = Tensor::zeros({3}, true);
    Graph g;
    const Tensor y = ops::scale(g, x, 2.0);
    EXPECT_THROW(g.backward(y), sd::ContractError);
}

TEST(Backward, RepeatedCallsAccumulate) {
    Tensor x = Tensor::from({2}, {1.0, -2.0}, true);
    Graph g;
    const Tensor loss = ops::sum(g, ops::mul(g, x, x));
    g.backward(loss);
    g.backward(loss);
    EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
    EXPECT_DOUBLE_EQ(x.grad()[1], -8.0);
}

TEST(Backward, ResetGraphReproducesGradients) {
    sd::Rng rng(4);
    Tensor w = random_tensor({4, 3}, rng);
    const Tensor x = Tensor::from({2, 4}, {0.1, -0.2, 0.3, 0.4, 1.0, 0.5, -0.5, 0.2});
    Graph g;
    auto run = [&] {
        w.zero_grad();
        g.reset();
        g.backward(ops::sum(g, ops::gelu(g, ops::matmul(g, x, w))));
        return std::vector<double>(w.grad().begin(), w.grad().end());
    };
    const auto first = run();
    const auto second = run();
    EXPECT_EQ(first, second);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
    Tensor w = Tensor::from({3}, {1.0, -2.0, 0.5}, true);
    sd::ParamList params{{"w", w}};
    sd::Adam opt(params);
    opt.zero_grad();
    opt.step({});
    EXPECT_EQ(w.data()[0], 1.0);
    EXPECT_EQ(w.data()[1], -2.0);
    EXPECT_EQ(w.data()[2], 0.5);
    EXPECT_EQ(opt.steps(), 1);
}

TEST(Adam, UnitGradientMovesAgainstIt) {
    Tensor w = Tensor::from({1}, {0.0}, true);
    sd::Adam opt({{"w", w}});
    w.grad()[0] = 1.0;
    sd::AdamConfig cfg;
    cfg.lr = 0.01;
    opt.step(cfg);
    EXPECT_LT(w.data()[0], 0.0);
    EXPECT_NEAR(w.data()[0], -0.01, 1e-8);
}

TEST(Adam, NonPositiveLearningRateThrows) {
    Tensor w = Tensor::from({1}, {0.0}, true);
    sd::Adam opt({{"w", w}});
    sd::AdamConfig cfg;
    cfg.lr = 0.0;
    EXPECT_THROW(opt.step(cfg), sd::ConfigError);
    cfg.lr = -1.0;
    EXPECT_THROW(opt.step(cfg), sd::ConfigError);
}

TEST(Adam, MinimizesQuadratic) {
    Tensor w = Tensor::from({1}, {0.0}, true);
    sd::Adam opt({{"w", w}});
    sd::AdamConfig cfg;
    cfg.lr = 0.1;
    for (int i = 0; i < 100; ++i) {
        opt.zero_grad();
        Graph g;
        const Tensor d = ops::add_scalar(g, w, -3.0);
        g.backward(ops::sum(g, ops::mul(g, d, d)));
        opt.step(cfg);
    }
    EXPECT_LT(std::abs(w.data()[0] - 3.0), 0.1);
}

TEST(Adam, DecoupledWeightDecayShrinksWithoutGradient) {
    Tensor w = Tensor::from({1}, {2.0}, true);
    sd::Adam opt({{"w", w}});
    opt.zero_grad();
    sd::AdamConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.5;
    opt.step(cfg);
    EXPECT_DOUBLE_EQ(w.data()[0], 2.0 - 0.1 * 0.5 * 2.0);
}
