#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "hyperseg/ops.hpp"
#include "hyperseg/rng.hpp"
#include "hyperseg/tensor.hpp"

using namespace hyperseg;

namespace {

using DT = Tensor<double>;

DT random_tensor(Shape shape, Rng& rng, bool requires_grad = true, double lo = -1.0,
                 double hi = 1.0) {
  return DT::random_uniform(std::move(shape), rng, lo, hi, requires_grad);
}

// values bounded away from 0 so relu kinks and pool ties cannot bite
DT random_kink_free(Shape shape, Rng& rng, bool requires_grad = true) {
  DT t = DT::zeros(std::move(shape), requires_grad);
  for (auto& v : t.values()) {
    double m = rng.uniform(0.1, 1.0);
    v = rng.uniform() < 0.5 ? -m : m;
  }
  return t;
}

// scalar loss <weights, op_output> with fixed random weights, so gradient
// errors cannot cancel the way they would under a plain sum
DT weighted(const DT& t, Rng& rng) {
  DT w = random_tensor(t.shape(), rng, false, 0.2, 1.0);
  return sum(mul(t, w));
}

// central finite differences on every element of `leaf`
void check_gradient(DT& leaf, const std::function<DT()>& loss_fn, double tol = 1e-4,
                    double h = 1e-5) {
  leaf.zero_grad();
  DT loss = loss_fn();
  backward(loss);
  const std::vector<double> analytic = leaf.grad();
  for (long i = 0; i < leaf.size(); ++i) {
    const double orig = leaf.data()[i];
    leaf.data()[i] = orig + h;
    const double lp = loss_fn().item();
    leaf.data()[i] = orig - h;
    const double lm = loss_fn().item();
    leaf.data()[i] = orig;
    const double numeric = (lp - lm) / (2.0 * h);
    const double denom = std::max({1.0, std::fabs(analytic[static_cast<std::size_t>(i)]),
                                   std::fabs(numeric)});
    ASSERT_LT(std::fabs(analytic[static_cast<std::size_t>(i)] - numeric) / denom, tol)
        << "element " << i << " analytic " << analytic[static_cast<std::size_t>(i)] << " numeric "
        << numeric;
  }
}

// independent direct-summation oracle, gather form per output element
std::vector<double> conv2d_oracle(const DT& x, const DT& w, const DT& b, int stride,
                                  Padding padding) {
  const int N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Co = w.dim(0), KH = w.dim(2), KW = w.dim(3);
  const int pt = padding == Padding::same ? (KH - 1) / 2 : 0;
  const int pl = padding == Padding::same ? (KW - 1) / 2 : 0;
  const int pb = padding == Padding::same ? (KH - 1) - pt : 0;
  const int pr = padding == Padding::same ? (KW - 1) - pl : 0;
  const int Ho = (H + pt + pb - KH) / stride + 1;
  const int Wo = (W + pl + pr - KW) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(N) * Co * Ho * Wo);
  for (int n = 0; n < N; ++n)
    for (int co = 0; co < Co; ++co)
      for (int oh = 0; oh < Ho; ++oh)
        for (int ow = 0; ow < Wo; ++ow) {
          double acc = b.defined() ? b.data()[co] : 0.0;
          for (int ci = 0; ci < Ci; ++ci)
            for (int kh = 0; kh < KH; ++kh)
              for (int kw = 0; kw < KW; ++kw) {
                const int ih = oh * stride + kh - pt;
                const int iw = ow * stride + kw - pl;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                acc += x.data()[((static_cast<long>(n) * Ci + ci) * H + ih) * W + iw] *
                       w.data()[((static_cast<long>(co) * Ci + ci) * KH + kh) * KW + kw];
              }
          out[static_cast<std::size_t>(((static_cast<long>(n) * Co + co) * Ho + oh) * Wo + ow)] =
              acc;
        }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// tensor basics and backward contract
// ---------------------------------------------------------------------------

TEST(Tensor, ShapeAndDataValidation) {
  EXPECT_THROW(DT::zeros({0, 2}), std::invalid_argument);
  EXPECT_THROW(DT::from({2, 2}, {1.0, 2.0}), std::invalid_argument);
  DT t = DT::from({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.size(), 6);
  EXPECT_EQ(t.dim(1), 3);
}

TEST(Backward, SumGivesOnes) {
  Rng rng(1);
  DT x = random_tensor({2, 3}, rng);
  DT loss = sum(x);
  backward(loss);
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 1.0);
}

TEST(Backward, SumOfSquaresGivesTwoX) {
  Rng rng(2);
  DT x = random_tensor({4}, rng);
  DT loss = sum(mul(x, x));
  backward(loss);
  for (long i = 0; i < x.size(); ++i) EXPECT_NEAR(x.grad()[static_cast<std::size_t>(i)], 2.0 * x.data()[i], 1e-15);
}

TEST(Backward, GradientsAccumulateAcrossUses) {
  Rng rng(3);
  DT x = random_tensor({3}, rng);
  DT loss = sum(add(x, x));
  backward(loss);
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 2.0);
}

TEST(Backward, NonScalarRejected) {
  Rng rng(4);
  DT x = random_tensor({2, 2}, rng);
  DT y = relu(x);
  EXPECT_THROW(backward(y), std::logic_error);
}

TEST(Backward, NoGraphWithoutRequiresGrad) {
  Rng rng(5);
  DT x = random_tensor({2, 2}, rng, /*requires_grad=*/false);
  DT y = relu(x);
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.node()->parents.empty());
}

// ---------------------------------------------------------------------------
// elementwise / structural ops
// ---------------------------------------------------------------------------

TEST(Relu, ClampsAndRoutesGradient) {
  DT x = DT::from({1, 1, 1, 4}, {-2.0, -0.5, 0.5, 2.0}, true);
  DT y = relu(x);
  EXPECT_EQ(y.values(), (std::vector<double>{0.0, 0.0, 0.5, 2.0}));
  DT loss = sum(y);
  backward(loss);
  EXPECT_EQ(x.grad(), (std::vector<double>{0.0, 0.0, 1.0, 1.0}));
}

TEST(Relu, FiniteDifferenceGradient) {
  Rng rng(6);
  DT x = random_kink_free({1, 2, 3, 3}, rng);
  check_gradient(x, [&] { return weighted(relu(x), rng = Rng(6)); });
}

TEST(AddMul, IdentitiesAndGradients) {
  Rng rng(7);
  DT x = random_tensor({2, 3}, rng);
  DT zero = DT::zeros({2, 3});
  EXPECT_EQ(add(x, zero).values(), x.values());

  DT y = random_tensor({2, 3}, rng);
  check_gradient(x, [&] { return weighted(add(x, y), rng = Rng(8)); });
  check_gradient(y, [&] { return weighted(mul(x, y), rng = Rng(9)); });
}

TEST(ConcatChannels, LayoutAndGradient) {
  DT x = DT::from({1, 1, 1, 2}, {1.0, 2.0}, true);
  DT y = DT::from({1, 2, 1, 2}, {3.0, 4.0, 5.0, 6.0}, true);
  DT z = concat_channels(x, y);
  EXPECT_EQ(z.shape(), (Shape{1, 3, 1, 2}));
  EXPECT_EQ(z.values(), (std::vector<double>{1, 2, 3, 4, 5, 6}));

  Rng rng(10);
  check_gradient(x, [&] { return weighted(concat_channels(x, y), rng = Rng(10)); });
  check_gradient(y, [&] { return weighted(concat_channels(x, y), rng = Rng(11)); });
  EXPECT_THROW(concat_channels(x, DT::zeros({1, 1, 2, 2})), std::invalid_argument);
}

TEST(UpsampleNearest, ValuesAndGradient) {
  DT x = DT::from({1, 1, 2, 2}, {1, 2, 3, 4}, true);
  DT y = upsample_nearest(x, 2);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 4, 4}));
  EXPECT_DOUBLE_EQ(y.data()[0], 1.0);
  EXPECT_DOUBLE_EQ(y.data()[3], 2.0);
  EXPECT_DOUBLE_EQ(y.data()[15], 4.0);
  DT loss = sum(y);
  backward(loss);
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 4.0);  // each input feeds a 2x2 block

  Rng rng(12);
  DT x2 = random_tensor({1, 2, 3, 2}, rng);
  check_gradient(x2, [&] { return weighted(upsample_nearest(x2, 3), rng = Rng(12)); });
}

// ---------------------------------------------------------------------------
// maxpool2d
// ---------------------------------------------------------------------------

TEST(MaxPool, ConstantAndTinyExamples) {
  DT c = DT::filled({1, 1, 4, 4}, 2.5, false);
  DT pc = maxpool2d(c);
  EXPECT_EQ(pc.shape(), (Shape{1, 1, 2, 2}));
  for (double v : pc.values()) EXPECT_DOUBLE_EQ(v, 2.5);

  DT x = DT::from({1, 1, 2, 2}, {1, 2, 3, 4});
  EXPECT_DOUBLE_EQ(maxpool2d(x).item(), 4.0);
}

TEST(MaxPool, TieRoutesToFirstRowMajor) {
  DT x = DT::from({1, 1, 2, 2}, {7.0, 7.0, 7.0, 7.0}, true);
  DT loss = sum(maxpool2d(x));
  backward(loss);
  EXPECT_EQ(x.grad(), (std::vector<double>{1.0, 0.0, 0.0, 0.0}));
}

TEST(MaxPool, GradientIsWindowArgmaxIndicator) {
  Rng rng(13);
  DT x = random_kink_free({1, 2, 4, 6}, rng);
  check_gradient(x, [&] { return weighted(maxpool2d(x), rng = Rng(13)); });

  x.zero_grad();
  DT loss = sum(maxpool2d(x));
  backward(loss);
  // exactly one unit of gradient per window
  double total = 0;
  for (double g : x.grad()) {
    EXPECT_TRUE(g == 0.0 || g == 1.0);
    total += g;
  }
  EXPECT_DOUBLE_EQ(total, 2 * 2 * 3);
}

TEST(MaxPool, RejectsTooSmallInput) {
  EXPECT_THROW(maxpool2d(DT::zeros({1, 1, 1, 4})), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

TEST(Conv2d, OneByOneIdentityKernel) {
  Rng rng(14);
  DT x = random_tensor({1, 3, 4, 5}, rng, false);
  DT w = DT::zeros({3, 3, 1, 1});
  for (int c = 0; c < 3; ++c) w.data()[c * 3 + c] = 1.0;
  DT b = DT::zeros({3});
  DT y = conv2d(x, w, b);
  EXPECT_EQ(y.shape(), x.shape());
  for (long i = 0; i < x.size(); ++i) ASSERT_DOUBLE_EQ(y.data()[i], x.data()[i]);
}

TEST(Conv2d, SumKernelExample) {
  DT x = DT::from({1, 1, 2, 2}, {1, 2, 3, 4});
  DT w = DT::from({1, 1, 2, 2}, {1, 1, 1, 1});
  DT b = DT::zeros({1});
  DT y = conv2d(x, w, b, 1, Padding::valid);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(y.item(), 10.0);
}

TEST(Conv2d, MatchesNaiveOracle) {
  Rng rng(15);
  for (int trial = 0; trial < 6; ++trial) {
    const int stride = trial % 2 + 1;
    const Padding pad = trial % 3 == 0 ? Padding::same : Padding::valid;
    DT x = random_tensor({1, 3, 5, 5}, rng, false);
    DT w = random_tensor({2, 3, 3, 3}, rng, false);
    DT b = random_tensor({2}, rng, false);
    DT y = conv2d(x, w, b, stride, pad);
    const auto expect = conv2d_oracle(x, w, b, stride, pad);
    ASSERT_EQ(static_cast<std::size_t>(y.size()), expect.size());
    for (long i = 0; i < y.size(); ++i)
      ASSERT_NEAR(y.data()[i], expect[static_cast<std::size_t>(i)], 1e-12);
  }
}

TEST(Conv2d, SamePaddingKeepsDims) {
  Rng rng(16);
  DT x = random_tensor({2, 2, 5, 7}, rng, false);
  DT w = random_tensor({4, 2, 3, 3}, rng, false);
  DT b = DT::zeros({4});
  DT y = conv2d(x, w, b, 1, Padding::same);
  EXPECT_EQ(y.shape(), (Shape{2, 4, 5, 7}));
  // even kernel: extra padding goes on the high side
  DT w2 = random_tensor({1, 2, 2, 2}, rng, false);
  DT y2 = conv2d(x, w2, DT::zeros({1}), 1, Padding::same);
  EXPECT_EQ(y2.shape(), (Shape{2, 1, 5, 7}));
  const auto expect = conv2d_oracle(x, w2, DT::zeros({1}), 1, Padding::same);
  for (long i = 0; i < y2.size(); ++i)
    ASSERT_NEAR(y2.data()[i], expect[static_cast<std::size_t>(i)], 1e-12);
}

TEST(Conv2d, LinearityInInput) {
  Rng rng(17);
  DT x = random_tensor({1, 2, 4, 4}, rng, false);
  DT y = random_tensor({1, 2, 4, 4}, rng, false);
  DT w = random_tensor({3, 2, 3, 3}, rng, false);
  DT zero_b = DT::zeros({3});
  const double a = 1.7, b = -0.4;
  DT combo = DT::zeros({1, 2, 4, 4});
  for (long i = 0; i < combo.size(); ++i) combo.data()[i] = a * x.data()[i] + b * y.data()[i];
  DT lhs = conv2d(combo, w, zero_b, 1, Padding::same);
  DT rx = conv2d(x, w, zero_b, 1, Padding::same);
  DT ry = conv2d(y, w, zero_b, 1, Padding::same);
  for (long i = 0; i < lhs.size(); ++i)
    ASSERT_NEAR(lhs.data()[i], a * rx.data()[i] + b * ry.data()[i], 1e-12);
}

TEST(Conv2d, ChannelMismatchAndBadDims) {
  DT x = DT::zeros({1, 3, 4, 4});
  EXPECT_THROW(conv2d(x, DT::zeros({2, 4, 3, 3}), DT::zeros({2})), std::invalid_argument);
  EXPECT_THROW(conv2d(x, DT::zeros({2, 3, 5, 5}), DT::zeros({2})), std::invalid_argument);
  EXPECT_THROW(conv2d(x, DT::zeros({2, 3, 3, 3}), DT::zeros({3})), std::invalid_argument);
}

TEST(Conv2d, FiniteDifferenceGradients) {
  Rng rng(18);
  for (int trial = 0; trial < 2; ++trial) {
    const int stride = trial + 1;
    DT x = random_tensor({1, 2, 5, 4}, rng);
    DT w = random_tensor({3, 2, 3, 3}, rng);
    DT b = random_tensor({3}, rng);
    auto loss = [&] { return weighted(conv2d(x, w, b, stride, Padding::same), rng = Rng(18)); };
    check_gradient(x, loss);
    check_gradient(w, loss);
    check_gradient(b, loss);
  }
}

// ---------------------------------------------------------------------------
// conv1x1
// ---------------------------------------------------------------------------

TEST(Conv1x1, IdentityAndTinyExample) {
  Rng rng(19);
  DT x = random_tensor({1, 2, 3, 3}, rng, false);
  DT eye = DT::from({2, 2}, {1, 0, 0, 1});
  DT y = conv1x1(x, eye, DT::zeros({2}));
  for (long i = 0; i < x.size(); ++i) ASSERT_DOUBLE_EQ(y.data()[i], x.data()[i]);

  DT px = DT::from({1, 2, 1, 1}, {1.0, 2.0});
  DT w = DT::from({2, 2}, {1, 1, 1, -1});
  DT py = conv1x1(px, w, DT::zeros({2}));
  EXPECT_DOUBLE_EQ(py.data()[0], 3.0);
  EXPECT_DOUBLE_EQ(py.data()[1], -1.0);
}

TEST(Conv1x1, ExactlyEqualsConv2dWithUnitKernel) {
  Rng rng(20);
  DT x = random_tensor({2, 4, 5, 6}, rng, false);
  DT w = random_tensor({3, 4}, rng, false);
  DT b = random_tensor({3}, rng, false);
  DT w4 = DT::from({3, 4, 1, 1}, w.values());
  DT y1 = conv1x1(x, w, b);
  DT y2 = conv2d(x, w4, b, 1, Padding::valid);
  ASSERT_EQ(y1.shape(), y2.shape());
  for (long i = 0; i < y1.size(); ++i) ASSERT_EQ(y1.data()[i], y2.data()[i]);
}

TEST(Conv1x1, ChannelMismatchRejected) {
  EXPECT_THROW(conv1x1(DT::zeros({1, 3, 2, 2}), DT::zeros({2, 4}), DT::zeros({2})),
               std::invalid_argument);
}

TEST(Conv1x1, FiniteDifferenceGradients) {
  Rng rng(21);
  DT x = random_tensor({1, 3, 4, 4}, rng);
  DT w = random_tensor({2, 3}, rng);
  DT b = random_tensor({2}, rng);
  auto loss = [&] { return weighted(conv1x1(x, w, b), rng = Rng(21)); };
  check_gradient(x, loss);
  check_gradient(w, loss);
  check_gradient(b, loss);
}

// ---------------------------------------------------------------------------
// conv_transpose2d
// ---------------------------------------------------------------------------

TEST(ConvTranspose, SingleTapBroadcast) {
  DT x = DT::from({1, 1, 1, 1}, {3.0});
  DT w = DT::from({1, 1, 2, 2}, {1, 1, 1, 1});
  DT y = conv_transpose2d(x, w, 2);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 3.0);
}

TEST(ConvTranspose, OutputDims) {
  DT x = DT::zeros({1, 2, 4, 5});
  DT w = DT::zeros({2, 3, 2, 2});
  EXPECT_EQ(conv_transpose2d(x, w, 2).shape(), (Shape{1, 3, 8, 10}));
  EXPECT_EQ(conv_transpose2d(x, w, 1).shape(), (Shape{1, 3, 5, 6}));
  EXPECT_THROW(conv_transpose2d(x, DT::zeros({3, 2, 2, 2}), 1), std::invalid_argument);
}

// stride-1 transpose equals full correlation with the flipped kernel
TEST(ConvTranspose, Stride1EqualsFlippedFullCorrelation) {
  Rng rng(22);
  DT x = random_tensor({1, 2, 4, 5}, rng, false);
  DT w = random_tensor({2, 3, 3, 2}, rng, false);
  DT y = conv_transpose2d(x, w, 1);

  const int KH = 3, KW = 2;
  // oracle: zero-pad x by (k-1), correlate with the spatially flipped kernel
  // (with in/out channel roles swapped)
  DT xpad = DT::zeros({1, 2, 4 + 2 * (KH - 1), 5 + 2 * (KW - 1)}, false);
  for (int c = 0; c < 2; ++c)
    for (int h = 0; h < 4; ++h)
      for (int ww = 0; ww < 5; ++ww)
        xpad.data()[(static_cast<long>(c) * (4 + 2 * (KH - 1)) + h + KH - 1) * (5 + 2 * (KW - 1)) +
                    ww + KW - 1] = x.data()[(static_cast<long>(c) * 4 + h) * 5 + ww];
  DT wflip = DT::zeros({3, 2, KH, KW}, false);
  for (int ci = 0; ci < 2; ++ci)
    for (int co = 0; co < 3; ++co)
      for (int kh = 0; kh < KH; ++kh)
        for (int kw = 0; kw < KW; ++kw)
          wflip.data()[((static_cast<long>(co) * 2 + ci) * KH + (KH - 1 - kh)) * KW +
                       (KW - 1 - kw)] =
              w.data()[((static_cast<long>(ci) * 3 + co) * KH + kh) * KW + kw];
  const auto expect = conv2d_oracle(xpad, wflip, DT(), 1, Padding::valid);
  ASSERT_EQ(static_cast<std::size_t>(y.size()), expect.size());
  for (long i = 0; i < y.size(); ++i)
    ASSERT_NEAR(y.data()[i], expect[static_cast<std::size_t>(i)], 1e-12);
}

// forward(conv_transpose) equals the input-gradient of conv2d
TEST(ConvTranspose, EqualsConvBackwardInput) {
  Rng rng(23);
  for (int stride : {1, 2}) {
    const int H = stride == 1 ? 5 : 7, KH = 3;  // (H-KH) divisible by stride
    DT x = random_tensor({1, 2, H, H}, rng);
    DT w = random_tensor({3, 2, KH, KH}, rng, false);
    DT y = conv2d(x, w, DT(), stride, Padding::valid);

    DT gy = random_tensor(y.shape(), rng, false);
    x.zero_grad();
    DT loss = sum(mul(y, gy));
    backward(loss);

    DT via_tconv = conv_transpose2d(gy, w, stride);
    ASSERT_EQ(via_tconv.shape(), x.shape());
    for (long i = 0; i < x.size(); ++i)
      ASSERT_NEAR(x.grad()[static_cast<std::size_t>(i)], via_tconv.data()[i], 1e-12);
  }
}

// <conv2d(x;w), y> == <x, conv_transpose2d(y;w)>
TEST(ConvTranspose, AdjointInnerProductIdentity) {
  Rng rng(24);
  for (int stride : {1, 2}) {
    const int H = stride == 1 ? 6 : 7, KH = 3;
    DT x = random_tensor({1, 3, H, H}, rng, false);
    DT w = random_tensor({2, 3, KH, KH}, rng, false);
    DT cx = conv2d(x, w, DT(), stride, Padding::valid);
    DT y = random_tensor(cx.shape(), rng, false);
    DT ty = conv_transpose2d(y, w, stride);
    ASSERT_EQ(ty.shape(), x.shape());
    double lhs = 0, rhs = 0;
    for (long i = 0; i < cx.size(); ++i) lhs += cx.data()[i] * y.data()[i];
    for (long i = 0; i < x.size(); ++i) rhs += x.data()[i] * ty.data()[i];
    ASSERT_NEAR(lhs, rhs, 1e-10);
  }
}

TEST(ConvTranspose, FiniteDifferenceGradients) {
  Rng rng(25);
  for (int stride : {1, 2}) {
    DT x = random_tensor({1, 2, 3, 4}, rng);
    DT w = random_tensor({2, 3, 2, 2}, rng);
    auto loss = [&] { return weighted(conv_transpose2d(x, w, stride), rng = Rng(25)); };
    check_gradient(x, loss);
    check_gradient(w, loss);
  }
}

// ---------------------------------------------------------------------------
// softmax cross-entropy
// ---------------------------------------------------------------------------

TEST(SoftmaxCe, UniformLogitsGiveLogC) {
  for (int C : {2, 4, 6}) {
    DT logits = DT::filled({1, C, 2, 2}, 0.37);
    LabelMask target(2, 2, std::vector<std::string>(static_cast<std::size_t>(C), "c"));
    target.at(0, 1) = static_cast<std::uint8_t>(C - 1);
    DT loss = softmax_ce_loss(logits, target);
    EXPECT_NEAR(loss.item(), std::log(static_cast<double>(C)), 1e-12);
  }
}

TEST(SoftmaxCe, ConfidentCorrectLogitVanishes) {
  DT logits = DT::zeros({1, 3, 1, 1});
  logits.data()[1] = 80.0;  // class 1 dominates
  LabelMask target(1, 1, {"a", "b", "c"});
  target.at(0, 0) = 1;
  EXPECT_LT(softmax_ce_loss(logits, target).item(), 1e-12);
}

TEST(SoftmaxCe, MatchesScalarRecomputation) {
  Rng rng(26);
  DT logits = random_tensor({1, 2, 2, 2}, rng, false, -2.0, 2.0);
  LabelMask target(2, 2, {"a", "b"});
  for (auto& v : target.labels) v = static_cast<std::uint8_t>(rng.uniform_int(0, 1));
  DT loss = softmax_ce_loss(logits, target);

  double expect = 0;
  for (int p = 0; p < 4; ++p) {
    const double l0 = logits.data()[p], l1 = logits.data()[4 + p];
    const int t = target.labels[static_cast<std::size_t>(p)];
    const double lt = t == 0 ? l0 : l1;
    expect += std::log(std::exp(l0) + std::exp(l1)) - lt;
  }
  EXPECT_NEAR(loss.item(), expect / 4.0, 1e-12);
}

TEST(SoftmaxCe, IgnoreIndexSkipsPixels) {
  DT logits = DT::zeros({1, 2, 1, 2});
  logits.data()[0] = 5.0;   // pixel 0 favors class 0
  logits.data()[3] = 5.0;   // pixel 1 favors class 1
  LabelMask target(1, 2, {"bg", "fg"});
  target.at(0, 0) = 0;
  target.at(0, 1) = 1;
  const double both = softmax_ce_loss(logits, target).item();
  const double fg_only = softmax_ce_loss(logits, target, /*ignore_index=*/0).item();
  const double l1 = std::log(std::exp(0.0) + std::exp(5.0)) - 5.0;
  EXPECT_NEAR(fg_only, l1, 1e-12);
  EXPECT_NEAR(both, l1, 1e-12);  // symmetric construction

  LabelMask all_bg(1, 2, {"bg", "fg"});
  EXPECT_THROW(softmax_ce_loss(logits, all_bg, 0), std::invalid_argument);
}

TEST(SoftmaxCe, FiniteDifferenceGradient) {
  Rng rng(27);
  DT logits = random_tensor({1, 3, 3, 2}, rng, true, -1.5, 1.5);
  LabelMask target(3, 2, {"a", "b", "c"});
  for (auto& v : target.labels) v = static_cast<std::uint8_t>(rng.uniform_int(0, 2));
  target.at(0, 0) = 2;
  check_gradient(logits, [&] { return softmax_ce_loss(logits, target, 2); });
  check_gradient(logits, [&] { return softmax_ce_loss(logits, target); });
}

TEST(SoftmaxCe, ShapeContracts) {
  DT logits = DT::zeros({2, 2, 2, 2});
  LabelMask target(2, 2, {"a", "b"});
  EXPECT_THROW(softmax_ce_loss(logits, target), std::invalid_argument);  // batch 2
  DT ok = DT::zeros({1, 2, 2, 2});
  LabelMask wrong(3, 2, {"a", "b"});
  EXPECT_THROW(softmax_ce_loss(ok, wrong), std::invalid_argument);
  LabelMask big(2, 2, {"a", "b", "c"});
  big.at(0, 0) = 2;
  EXPECT_THROW(softmax_ce_loss(ok, big), std::invalid_argument);  // class 2 >= C
}

// ---------------------------------------------------------------------------
// determinism
// ---------------------------------------------------------------------------

TEST(Determinism, RepeatedForwardBackwardBitIdentical) {
  auto run = [] {
    Rng rng(31);
    DT x = random_tensor({1, 3, 8, 8}, rng);
    DT w1 = random_tensor({4, 3, 3, 3}, rng);
    DT b1 = random_tensor({4}, rng);
    DT w2 = random_tensor({2, 4}, rng);
    DT b2 = random_tensor({2}, rng);
    DT h = relu(conv2d(x, w1, b1, 1, Padding::same));
    h = maxpool2d(h);
    h = conv1x1(h, w2, b2);
    LabelMask target(4, 4, {"a", "b"});
    for (int i = 0; i < 16; ++i) target.labels[static_cast<std::size_t>(i)] = i % 2;
    DT loss = softmax_ce_loss(h, target);
    backward(loss);
    std::vector<double> out = {loss.item()};
    for (double g : w1.grad()) out.push_back(g);
    for (double g : x.grad()) out.push_back(g);
    return out;
  };
  EXPECT_EQ(run(), run());
}
