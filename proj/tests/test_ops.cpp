#include <gtest/gtest.h>

#include <bit>
#include <functional>
#include <limits>

#include "fixtures.hpp"
#include "oracles.hpp"

using namespace allnet;
using fixture::central;
using fixture::random_tensor;
using fixture::rel_error;

namespace {

constexpr double kOpTolerance = 1e-4;
constexpr double kStep = 1e-3;
constexpr int kSeeds = 5;

/// Weighted-sum loss sum(w .* y) in double.
double weighted(const BasicTensor<double>& y, const Tensor& w) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * static_cast<double>(w[i]);
  return s;
}

/// Every element of `analytic` against a central difference taken on the
/// matching element of the double-precision twin.
void expect_fd(std::span<const float> analytic, std::span<double> twin, const std::function<double()>& loss,
               const std::string& what, double tol = kOpTolerance) {
  ASSERT_EQ(analytic.size(), twin.size()) << what;
  for (std::size_t i = 0; i < twin.size(); ++i) {
    const double numeric = central(loss, twin[i], kStep);
    EXPECT_LE(rel_error(analytic[i], numeric), tol) << what << "[" << i << "] analytic " << analytic[i]
                                                    << " numeric " << numeric;
  }
}

ConvParams<float> random_conv(Rng& rng, std::size_t out, std::size_t in, std::size_t k, std::size_t stride,
                              std::size_t pad) {
  ConvParams<float> p{random_tensor(Shape{out, in, k, k}, rng), std::vector<float>(out), stride, pad};
  for (float& b : p.bias) b = static_cast<float>(rng.uniform(-1, 1));
  return p;
}

ConvParams<double> twin(const ConvParams<float>& p) {
  return {p.kernel.cast<double>(), std::vector<double>(p.bias.begin(), p.bias.end()), p.stride, p.padding};
}

} // namespace

// ---------------------------------------------------------------------------
// conv2d

TEST(Conv2d, OneByOneUnitKernelIsIdentityBitwise) {
  Rng rng(1);
  const Tensor x = random_tensor(Shape{2, 1, 5, 7}, rng);
  const ConvParams<float> p{Tensor(Shape{1, 1, 1, 1}, 1.0f), {0.0f}, 1, 0};
  EXPECT_EQ(conv2d(x, p), x);
}

TEST(Conv2d, ZeroKernelAndBiasGiveZeros) {
  Rng rng(2);
  const Tensor x = random_tensor(Shape{2, 3, 6, 6}, rng);
  const ConvParams<float> p{Tensor(Shape{4, 3, 3, 3}), std::vector<float>(4, 0.0f), 2, 1};
  const Tensor y = conv2d(x, p);
  EXPECT_EQ(y.shape(), (Shape{2, 4, 3, 3}));
  for (float v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Conv2d, MatchesNaiveSummationOracle) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(100 + seed);
    const Tensor x = random_tensor(Shape{2, 3, 8, 8}, rng);
    const ConvParams<float> p = random_conv(rng, 4, 3, 3, 2, 1);
    const Tensor y = conv2d(x, p);
    Shape expected;
    const std::vector<double> ref = oracle::conv(x, p.kernel, p.bias, 2, 1, expected);
    ASSERT_EQ(y.shape(), expected);
    ASSERT_EQ(y.shape(), (Shape{2, 4, 4, 4}));
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-5) << i;
  }
}

TEST(Conv2d, MatchesOracleOnAssortedGeometries) {
  struct Case {
    std::size_t h, w, k, stride, pad;
  };
  Rng rng(7);
  for (const Case c : {Case{5, 9, 1, 1, 0}, Case{7, 7, 5, 1, 2}, Case{9, 6, 3, 3, 0}, Case{4, 4, 4, 1, 3}}) {
    const Tensor x = random_tensor(Shape{1, 2, c.h, c.w}, rng);
    const ConvParams<float> p = random_conv(rng, 3, 2, c.k, c.stride, c.pad);
    Shape expected;
    const auto ref = oracle::conv(x, p.kernel, p.bias, c.stride, c.pad, expected);
    const Tensor y = conv2d(x, p);
    ASSERT_EQ(y.shape(), expected);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-5);
  }
}

TEST(Conv2d, ShapeErrorsNameBothShapes) {
  const Tensor x(Shape{1, 3, 8, 8});
  const ConvParams<float> p{Tensor(Shape{4, 2, 3, 3}), std::vector<float>(4), 1, 1};
  try {
    conv2d(x, p);
    FAIL() << "expected ShapeError";
  } catch (const DegenerateOutputError&) {
    FAIL() << "wrong error kind";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(1, 3, 8, 8)"), std::string::npos) << msg;
    EXPECT_NE(msg.find("(4, 2, 3, 3)"), std::string::npos) << msg;
  }
}

TEST(Conv2d, DegenerateOutputIsRejected) {
  const Tensor x(Shape{1, 1, 2, 2});
  const ConvParams<float> p{Tensor(Shape{1, 1, 5, 5}), {0.0f}, 1, 0};
  EXPECT_THROW(conv2d(x, p), DegenerateOutputError);
}

TEST(Conv2d, ForwardIsPure) {
  Rng rng(3);
  const Tensor x = random_tensor(Shape{2, 3, 9, 9}, rng);
  const auto p = random_conv(rng, 5, 3, 3, 1, 1);
  EXPECT_EQ(conv2d(x, p), conv2d(x, p));
}

TEST(Conv2dBackward, ZeroGradOutGivesZeroGradients) {
  Rng rng(4);
  const Tensor x = random_tensor(Shape{1, 2, 5, 5}, rng);
  const auto p = random_conv(rng, 3, 2, 3, 1, 1);
  const auto g = conv2d_backward(x, p, Tensor(conv2d_output_shape(x.shape(), p)));
  for (float v : g.input.data()) EXPECT_EQ(v, 0.0f);
  for (float v : g.kernel.data()) EXPECT_EQ(v, 0.0f);
  for (float v : g.bias) EXPECT_EQ(v, 0.0f);
  EXPECT_EQ(g.input.shape(), x.shape());
  EXPECT_EQ(g.kernel.shape(), p.kernel.shape());
}

TEST(Conv2dBackward, IdentityKernelPassesGradientThrough) {
  Rng rng(5);
  const Tensor x = random_tensor(Shape{2, 1, 4, 6}, rng);
  const Tensor g = random_tensor(x.shape(), rng);
  const ConvParams<float> p{Tensor(Shape{1, 1, 1, 1}, 1.0f), {0.0f}, 1, 0};
  EXPECT_EQ(conv2d_backward(x, p, g).input, g);
}

TEST(Conv2dBackward, GradOutShapeIsChecked) {
  const Tensor x(Shape{1, 2, 5, 5});
  const ConvParams<float> p{Tensor(Shape{3, 2, 3, 3}), std::vector<float>(3), 1, 1};
  EXPECT_THROW(conv2d_backward(x, p, Tensor(Shape{1, 3, 4, 5})), ShapeError);
}

TEST(Conv2dBackward, MatchesFiniteDifferences) {
  struct Geometry {
    std::size_t k, stride, pad;
  };
  for (int seed = 0; seed < kSeeds; ++seed) {
    for (const Geometry geo : {Geometry{3, 1, 1}, Geometry{3, 2, 1}, Geometry{2, 1, 0}}) {
      Rng rng(200 + seed);
      const Tensor x = random_tensor(Shape{2, 2, 5, 5}, rng);
      const ConvParams<float> p = random_conv(rng, 3, 2, geo.k, geo.stride, geo.pad);
      const Tensor w = random_tensor(conv2d_output_shape(x.shape(), p), rng);
      const ConvGrads<float> g = conv2d_backward(x, p, w);

      BasicTensor<double> xd = x.cast<double>();
      ConvParams<double> pd = twin(p);
      const auto loss = [&] { return weighted(conv2d(xd, pd), w); };
      const std::string tag = "seed " + std::to_string(seed) + " k" + std::to_string(geo.k) + "/s" +
                              std::to_string(geo.stride) + " ";
      expect_fd(g.input.data(), xd.data(), loss, tag + "input");
      expect_fd(g.kernel.data(), pd.kernel.data(), loss, tag + "kernel");
      expect_fd(g.bias, pd.bias, loss, tag + "bias");
    }
  }
}

TEST(Conv2dBackward, PlainSumLossMatchesFiniteDifferences) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(300 + seed);
    const Tensor x = random_tensor(Shape{1, 3, 6, 6}, rng);
    const ConvParams<float> p = random_conv(rng, 2, 3, 3, 1, 1);
    const ConvGrads<float> g = conv2d_backward(x, p, Tensor(conv2d_output_shape(x.shape(), p), 1.0f));
    BasicTensor<double> xd = x.cast<double>();
    ConvParams<double> pd = twin(p);
    const auto loss = [&] { return fixture::sum(conv2d(xd, pd)); };
    expect_fd(g.input.data(), xd.data(), loss, "input");
    expect_fd(g.kernel.data(), pd.kernel.data(), loss, "kernel");
    expect_fd(g.bias, pd.bias, loss, "bias");
  }
}

// ---------------------------------------------------------------------------
// max pooling

TEST(MaxPool, TwoByTwoExample) {
  const Tensor x(Shape{1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4});
  const auto r = maxpool2d(x, 2, 2);
  ASSERT_EQ(r.output.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(r.output[0], 4.0f);
  ASSERT_EQ(r.argmax.size(), 1u);
  EXPECT_EQ(r.argmax[0], 3u);
}

TEST(MaxPool, ConstantInputGivesConstantOutput) {
  const Tensor x(Shape{1, 2, 6, 6}, 0.75f);
  const auto r = maxpool2d(x, 3, 2);
  for (float v : r.output.data()) EXPECT_EQ(v, 0.75f);
}

TEST(MaxPool, TiesGoToFirstInRowMajorOrder) {
  const Tensor x(Shape{1, 1, 3, 3}, 1.0f);
  const auto r = maxpool2d(x, 2, 1);
  ASSERT_EQ(r.argmax.size(), 4u);
  EXPECT_EQ(r.argmax[0], 0u);
  EXPECT_EQ(r.argmax[1], 1u);
  EXPECT_EQ(r.argmax[2], 3u);
  EXPECT_EQ(r.argmax[3], 4u);
}

TEST(MaxPool, MatchesNaiveMaxOracleBitwise) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(400 + seed);
    const Tensor x = random_tensor(Shape{1, 2, 7, 7}, rng);
    const auto r = maxpool2d(x, 3, 2);
    const auto ref = oracle::maxpool(x, 3, 2);
    ASSERT_EQ(r.output.shape(), (Shape{1, 2, 3, 3}));
    ASSERT_EQ(r.output.size(), ref.values.size());
    for (std::size_t i = 0; i < ref.values.size(); ++i) {
      EXPECT_EQ(std::bit_cast<std::uint32_t>(r.output[i]), std::bit_cast<std::uint32_t>(ref.values[i]));
      EXPECT_EQ(r.argmax[i], ref.argmax[i]);
    }
  }
}

TEST(MaxPool, ShiftByConstantShiftsOutput) {
  Rng rng(8);
  const Tensor x = random_tensor(Shape{2, 3, 8, 8}, rng);
  Tensor shifted = x;
  for (float& v : shifted.data()) v += 2.5f;
  const auto a = maxpool2d(x, 3, 2);
  const auto b = maxpool2d(shifted, 3, 2);
  for (std::size_t i = 0; i < a.output.size(); ++i) EXPECT_NEAR(b.output[i], a.output[i] + 2.5f, 1e-6);
}

TEST(MaxPool, PaddedPositionsNeverWin) {
  const Tensor x(Shape{1, 1, 2, 2}, -5.0f);
  const auto r = maxpool2d(x, 3, 1, 1);
  ASSERT_EQ(r.output.shape(), (Shape{1, 1, 2, 2}));
  for (float v : r.output.data()) EXPECT_EQ(v, -5.0f);
  for (std::size_t idx : r.argmax) EXPECT_LT(idx, 4u);
}

TEST(MaxPool, WindowLargerThanInputIsDegenerate) {
  EXPECT_THROW(maxpool2d(Tensor(Shape{1, 1, 2, 2}), 3, 1), DegenerateOutputError);
}

TEST(MaxPoolBackward, NonOverlappingOnesLandOnTheMaxima) {
  Rng rng(9);
  const Tensor x = fixture::separated_tensor(Shape{1, 1, 4, 4}, rng);
  const auto r = maxpool2d(x, 2, 2);
  const Tensor g = maxpool2d_backward<float>(r.argmax, Tensor(r.output.shape(), 1.0f), x.shape());
  for (std::size_t bi = 0; bi < 2; ++bi)
    for (std::size_t bj = 0; bj < 2; ++bj) {
      float total = 0;
      std::size_t best = x.index(0, 0, 2 * bi, 2 * bj);
      for (std::size_t u = 0; u < 2; ++u)
        for (std::size_t v = 0; v < 2; ++v) {
          const std::size_t idx = x.index(0, 0, 2 * bi + u, 2 * bj + v);
          total += g[idx];
          if (x[idx] > x[best]) best = idx;
        }
      EXPECT_EQ(total, 1.0f);
      EXPECT_EQ(g[best], 1.0f);
    }
}

TEST(MaxPoolBackward, ZeroGradOutGivesZeros) {
  Rng rng(10);
  const Tensor x = random_tensor(Shape{1, 2, 5, 5}, rng);
  const auto r = maxpool2d(x, 3, 1);
  const Tensor g = maxpool2d_backward<float>(r.argmax, Tensor(r.output.shape()), x.shape());
  for (float v : g.data()) EXPECT_EQ(v, 0.0f);
}

TEST(MaxPoolBackward, OverlappingWindowsMatchFiniteDifferences) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(500 + seed);
    // Values at least 1e-2 apart: no window changes its winner under +-h.
    const Tensor x = fixture::separated_tensor(Shape{1, 2, 6, 6}, rng, 1e-2);
    const auto r = maxpool2d(x, 3, 1);
    const Tensor w = random_tensor(r.output.shape(), rng);
    const Tensor g = maxpool2d_backward<float>(r.argmax, w, x.shape());
    BasicTensor<double> xd = x.cast<double>();
    expect_fd(g.data(), xd.data(), [&] { return weighted(maxpool2d(xd, 3, 1).output, w); }, "input");
  }
}

TEST(MaxPoolBackward, PaddedAndStridedMatchFiniteDifferences) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(550 + seed);
    const Tensor x = fixture::separated_tensor(Shape{2, 1, 7, 5}, rng, 1e-2);
    const auto r = maxpool2d(x, 3, 2, 1);
    const Tensor w = random_tensor(r.output.shape(), rng);
    const Tensor g = maxpool2d_backward<float>(r.argmax, w, x.shape());
    BasicTensor<double> xd = x.cast<double>();
    expect_fd(g.data(), xd.data(), [&] { return weighted(maxpool2d(xd, 3, 2, 1).output, w); }, "input");
  }
}

TEST(MaxPoolBackward, ArgmaxSizeMismatchIsRejected) {
  const std::vector<std::size_t> argmax{0, 1};
  EXPECT_THROW(maxpool2d_backward<float>(argmax, Tensor(Shape{1, 1, 1, 3}), Shape{1, 1, 4, 4}), ShapeError);
}

TEST(AdaptiveMaxPool, CellsCoverTheWholeInput) {
  // 5 -> 2: rows [0,3) and [2,5); every input row lands in some cell.
  Tensor x(Shape{1, 1, 5, 5});
  for (std::size_t i = 0; i < 25; ++i) x[i] = static_cast<float>(i);
  const auto r = adaptive_maxpool2d(x, 2, 2);
  ASSERT_EQ(r.output.shape(), (Shape{1, 1, 2, 2}));
  EXPECT_EQ(r.output.at(0, 0, 0, 0), 12.0f);
  EXPECT_EQ(r.output.at(0, 0, 0, 1), 14.0f);
  EXPECT_EQ(r.output.at(0, 0, 1, 0), 22.0f);
  EXPECT_EQ(r.output.at(0, 0, 1, 1), 24.0f);
}

TEST(AdaptiveMaxPool, DivisibleSizeEqualsPlainPool) {
  Rng rng(11);
  const Tensor x = random_tensor(Shape{2, 3, 8, 8}, rng);
  EXPECT_EQ(adaptive_maxpool2d(x, 4, 4).output, maxpool2d(x, 2, 2).output);
}

TEST(AdaptiveMaxPool, UpsamplingRepeatsValuesAndGradientsMatchFd) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(600 + seed);
    const Tensor x = fixture::separated_tensor(Shape{1, 2, 3, 7}, rng, 1e-2);
    const auto r = adaptive_maxpool2d(x, 4, 4);
    ASSERT_EQ(r.output.shape(), (Shape{1, 2, 4, 4}));
    const Tensor w = random_tensor(r.output.shape(), rng);
    const Tensor g = maxpool2d_backward<float>(r.argmax, w, x.shape());
    BasicTensor<double> xd = x.cast<double>();
    expect_fd(g.data(), xd.data(), [&] { return weighted(adaptive_maxpool2d(xd, 4, 4).output, w); }, "input");
  }
}

// ---------------------------------------------------------------------------
// concat, add, activations, dense

TEST(Concat, SingleInputIsIdentity) {
  Rng rng(12);
  const std::vector<Tensor> xs{random_tensor(Shape{2, 3, 4, 4}, rng)};
  EXPECT_EQ(concat_channels<float>(xs), xs[0]);
}

TEST(Concat, SlicingRecoversEachInput) {
  Rng rng(13);
  const std::vector<Tensor> xs{random_tensor(Shape{2, 2, 3, 3}, rng), random_tensor(Shape{2, 3, 3, 3}, rng)};
  const Tensor y = concat_channels<float>(xs);
  ASSERT_EQ(y.shape(), (Shape{2, 5, 3, 3}));
  EXPECT_EQ(slice_channels(y, 0, 2), xs[0]);
  EXPECT_EQ(slice_channels(y, 2, 5), xs[1]);
}

TEST(Concat, MismatchNamesTheOffendingInput) {
  const std::vector<Tensor> xs{Tensor(Shape{1, 2, 4, 4}), Tensor(Shape{1, 1, 4, 4}), Tensor(Shape{1, 1, 3, 4})};
  try {
    concat_channels<float>(xs);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("input 2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(concat_channels<float>(std::vector<Tensor>{}), ShapeError);
}

TEST(Concat, BackwardSplitMatchesFiniteDifferences) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(700 + seed);
    const std::vector<Tensor> xs{random_tensor(Shape{2, 2, 3, 3}, rng), random_tensor(Shape{2, 1, 3, 3}, rng),
                                 random_tensor(Shape{2, 3, 3, 3}, rng)};
    const Tensor w = random_tensor(Shape{2, 6, 3, 3}, rng);
    const std::vector<std::size_t> channels{2, 1, 3};
    const auto pieces = split_channels<float>(w, channels);
    ASSERT_EQ(pieces.size(), 3u);
    std::vector<BasicTensor<double>> xd;
    for (const auto& x : xs) xd.push_back(x.cast<double>());
    for (std::size_t k = 0; k < xs.size(); ++k) {
      EXPECT_EQ(pieces[k].shape(), xs[k].shape());
      expect_fd(pieces[k].data(), xd[k].data(), [&] { return weighted(concat_channels<double>(xd), w); },
                "piece " + std::to_string(k));
    }
  }
}

TEST(Add, IdentityAndDoubling) {
  Rng rng(14);
  const Tensor a = random_tensor(Shape{1, 2, 3, 3}, rng);
  EXPECT_EQ(elementwise_add(a, Tensor(a.shape())), a);
  const Tensor d = elementwise_add(a, a);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(d[i], 2 * a[i]);
  EXPECT_THROW(elementwise_add(a, Tensor(Shape{1, 2, 3, 4})), ShapeError);
}

TEST(Add, MatchesScalarLoop) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(800 + seed);
    const Tensor a = random_tensor(Shape{2, 3, 4, 5}, rng);
    const Tensor b = random_tensor(Shape{2, 3, 4, 5}, rng);
    const Tensor c = elementwise_add(a, b);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(c[i], static_cast<double>(a[i]) + b[i], 1e-6);
  }
}

TEST(Activations, SigmoidOfZeroIsHalfAndReluOfNegativesIsZero) {
  const Tensor s = sigmoid(Tensor(Shape{1, 2, 3, 3}));
  for (float v : s.data()) EXPECT_EQ(v, 0.5f);
  const Tensor r = relu(Tensor(Shape{1, 2, 3, 3}, -0.3f));
  for (float v : r.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Activations, BackwardsMatchFiniteDifferences) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(900 + seed);
    Tensor x = random_tensor(Shape{2, 2, 4, 4}, rng, -4, 4);
    // Keep relu away from its kink.
    for (float& v : x.data())
      if (std::abs(v) <= 1e-2f) v = v < 0 ? -0.5f : 0.5f;
    const Tensor w = random_tensor(x.shape(), rng);
    BasicTensor<double> xd = x.cast<double>();

    const Tensor gr = relu_backward(x, w);
    expect_fd(gr.data(), xd.data(), [&] { return weighted(relu(xd), w); }, "relu");
    const Tensor gs = sigmoid_backward(sigmoid(x), w);
    expect_fd(gs.data(), xd.data(), [&] { return weighted(sigmoid(xd), w); }, "sigmoid");
  }
}

TEST(Activations, ReluGateIsOneOnlyForPositiveInputs) {
  const Tensor x(Shape{1, 1, 1, 4}, std::vector<float>{-1.0f, 0.0f, 1e-3f, 2.0f});
  const Tensor g = relu_backward(x, Tensor(x.shape(), 1.0f));
  EXPECT_EQ(g[0], 0.0f);
  EXPECT_EQ(g[1], 0.0f);
  EXPECT_EQ(g[2], 1.0f);
  EXPECT_EQ(g[3], 1.0f);
}

TEST(Dense, IdentityWeightsAndBiasOnly) {
  Rng rng(15);
  const Tensor x = random_tensor(Shape{2, 2, 2, 1}, rng);
  Tensor eye(Shape{4, 4, 1, 1});
  for (std::size_t i = 0; i < 4; ++i) eye.at(i, i, 0, 0) = 1.0f;
  const Tensor y = dense(x, DenseParams<float>{eye, std::vector<float>(4, 0.0f)});
  ASSERT_EQ(y.shape(), (Shape{2, 4, 1, 1}));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], x[i]);

  const Tensor z = dense(x, DenseParams<float>{Tensor(Shape{3, 4, 1, 1}), {0.5f, -1.0f, 2.0f}});
  for (std::size_t n = 0; n < 2; ++n) {
    EXPECT_EQ(z.at(n, 0, 0, 0), 0.5f);
    EXPECT_EQ(z.at(n, 1, 0, 0), -1.0f);
    EXPECT_EQ(z.at(n, 2, 0, 0), 2.0f);
  }
}

TEST(Dense, InputLengthIsChecked) {
  EXPECT_THROW(dense(Tensor(Shape{1, 3, 1, 1}), DenseParams<float>{Tensor(Shape{2, 4, 1, 1}), {0, 0}}), ShapeError);
}

TEST(Dense, BackwardMatchesFiniteDifferences) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(1000 + seed);
    const Tensor x = random_tensor(Shape{3, 2, 2, 2}, rng);
    DenseParams<float> p{random_tensor(Shape{5, 8, 1, 1}, rng), std::vector<float>(5)};
    for (float& b : p.bias) b = static_cast<float>(rng.uniform(-1, 1));
    const Tensor w = random_tensor(Shape{3, 5, 1, 1}, rng);
    const DenseGrads<float> g = dense_backward(x, p, w);
    EXPECT_EQ(g.input.shape(), x.shape());
    EXPECT_EQ(g.weights.shape(), p.weights.shape());

    BasicTensor<double> xd = x.cast<double>();
    DenseParams<double> pd{p.weights.cast<double>(), std::vector<double>(p.bias.begin(), p.bias.end())};
    const auto loss = [&] { return weighted(dense(xd, pd), w); };
    expect_fd(g.input.data(), xd.data(), loss, "input");
    expect_fd(g.weights.data(), pd.weights.data(), loss, "weights");
    expect_fd(g.bias, pd.bias, loss, "bias");
  }
}

TEST(Ops, FiniteInputsGiveFiniteOutputs) {
  Rng rng(16);
  const Tensor x = random_tensor(Shape{1, 3, 8, 8}, rng, -50, 50);
  const auto p = random_conv(rng, 4, 3, 3, 1, 1);
  EXPECT_TRUE(conv2d(x, p).all_finite());
  EXPECT_TRUE(sigmoid(x).all_finite());
  EXPECT_TRUE(relu(x).all_finite());
  EXPECT_TRUE(maxpool2d(x, 2, 2).output.all_finite());
  const Tensor extreme = sigmoid(Tensor(Shape{1, 1, 1, 2}, std::vector<float>{-200.0f, 200.0f}));
  EXPECT_TRUE(extreme.all_finite());
}

TEST(Ops, NanPropagatesThroughReluAndPooling) {
  const float nan = std::numeric_limits<float>::quiet_NaN();
  const Tensor x(Shape{1, 1, 2, 2}, std::vector<float>{1.0f, nan, -1.0f, 3.0f});
  const Tensor r = relu(x);
  EXPECT_TRUE(std::isnan(r[1]));
  EXPECT_EQ(r[2], 0.0f);
  EXPECT_TRUE(std::isnan(maxpool2d(x, 2, 2, 0).output[0]));
  EXPECT_TRUE(std::isnan(adaptive_maxpool2d(x, 1, 1).output[0]));
}
