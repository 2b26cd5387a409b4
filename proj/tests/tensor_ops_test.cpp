#include "distill/ops.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "distill/gradcheck.hpp"
#include "distill/rng.hpp"

using namespace distill;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0,
                     double hi = 1.0) {
  SplitMix64 rng(seed);
  std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& v : data) v = rng.next_uniform(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(data));
}

// Independent brute-force cross-correlation, indexing straight from the
// definition.
std::vector<double> conv_oracle(const Tensor& in, const Tensor& w,
                                const Tensor& b, int stride, int pad) {
  const auto& is = in.shape();
  const auto& ws = w.shape();
  const int N = is[0], I = is[1], H = is[2], W = is[3];
  const int O = ws[0], K = ws[2];
  const int Ho = (H + 2 * pad - K) / stride + 1;
  const int Wo = (W + 2 * pad - K) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(N) * O * Ho * Wo, 0.0);
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < O; ++o)
      for (int ho = 0; ho < Ho; ++ho)
        for (int wo = 0; wo < Wo; ++wo) {
          double acc = b.data()[o];
          for (int i = 0; i < I; ++i)
            for (int kh = 0; kh < K; ++kh)
              for (int kw = 0; kw < K; ++kw) {
                const int ih = ho * stride - pad + kh;
                const int iw = wo * stride - pad + kw;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                acc += in.data()[((n * I + i) * H + ih) * W + iw] *
                       w.data()[((o * I + i) * K + kh) * K + kw];
              }
          out[((n * O + o) * Ho + ho) * Wo + wo] = acc;
        }
  return out;
}

std::vector<double> pool_oracle(const Tensor& in, int k, int stride) {
  const auto& is = in.shape();
  const int N = is[0], C = is[1], H = is[2], W = is[3];
  const int Ho = (H - k) / stride + 1;
  const int Wo = (W - k) / stride + 1;
  std::vector<double> out;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int ho = 0; ho < Ho; ++ho)
        for (int wo = 0; wo < Wo; ++wo) {
          double best = -1e300;
          for (int kh = 0; kh < k; ++kh)
            for (int kw = 0; kw < k; ++kw) {
              best = std::max(best, in.data()[((n * C + c) * H + ho * stride +
                                               kh) * W + wo * stride + kw]);
            }
          out.push_back(best);
        }
  return out;
}

}  // namespace

TEST(Conv2d, ScalarCase) {
  const Tensor in = Tensor::from_data({1, 1, 1, 1}, {3});
  const Tensor w = Tensor::from_data({1, 1, 1, 1}, {2});
  const Tensor b = Tensor::from_data({1}, {1});
  EXPECT_EQ(conv2d(in, w, b).item(), 7.0);
}

TEST(Conv2d, IdentityKernel) {
  const Tensor in = random_tensor({2, 1, 4, 4}, 11);
  const Tensor w = Tensor::from_data({1, 1, 1, 1}, {1});
  const Tensor b = Tensor::zeros({1});
  EXPECT_EQ(conv2d(in, w, b).data(), in.data());
}

TEST(Conv2d, AllOnes3x3) {
  const Tensor in = Tensor::filled({1, 1, 3, 3}, 1.0);
  const Tensor w = Tensor::filled({1, 1, 3, 3}, 1.0);
  const Tensor b = Tensor::zeros({1});
  const Tensor out = conv2d(in, w, b, 1, 0);
  EXPECT_EQ(out.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(out.item(), 9.0);
  EXPECT_EQ(out.data(), conv_oracle(in, w, b, 1, 0));
}

TEST(Conv2d, MatchesOracleOnRandomCases) {
  struct Case {
    Shape in, w;
    int stride, pad;
  };
  const std::vector<Case> cases = {
      {{2, 3, 7, 6}, {4, 3, 3, 3}, 1, 1},
      {{1, 2, 8, 8}, {3, 2, 3, 3}, 2, 0},
      {{2, 1, 5, 5}, {2, 1, 5, 5}, 1, 2},
      {{1, 4, 6, 6}, {4, 4, 1, 1}, 1, 0},
  };
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& c = cases[i];
    const Tensor in = random_tensor(c.in, 100 + i);
    const Tensor w = random_tensor(c.w, 200 + i);
    const Tensor b = random_tensor({c.w[0]}, 300 + i);
    const Tensor out = conv2d(in, w, b, c.stride, c.pad);
    const auto expect = conv_oracle(in, w, b, c.stride, c.pad);
    ASSERT_EQ(out.data().size(), expect.size());
    for (std::size_t t = 0; t < expect.size(); ++t) {
      EXPECT_NEAR(out.data()[t], expect[t], 1e-12);
    }
  }
}

TEST(Conv2d, ShapeErrors) {
  const Tensor in = Tensor::zeros({1, 2, 4, 4});
  const Tensor w = Tensor::zeros({1, 3, 3, 3});
  const Tensor b = Tensor::zeros({1});
  EXPECT_THROW(conv2d(in, w, b), std::invalid_argument);
  const Tensor w2 = Tensor::zeros({1, 2, 6, 6});
  EXPECT_THROW(conv2d(in, w2, b), std::invalid_argument);
}

TEST(Maxpool2d, Basic2x2) {
  const Tensor in = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(maxpool2d(in, 2, 2).item(), 4.0);
}

TEST(Maxpool2d, TieRoutesToFirstInRowMajor) {
  Tensor in = Tensor::filled({1, 1, 2, 2}, 5.0);
  in.set_requires_grad(true);
  Tensor out = maxpool2d(in, 2, 2);
  EXPECT_EQ(out.item(), 5.0);
  out.backward();
  EXPECT_EQ(in.grad(), (std::vector<double>{1, 0, 0, 0}));
}

TEST(Maxpool2d, RampMatchesOracle) {
  std::vector<double> ramp(16);
  for (int i = 0; i < 16; ++i) ramp[i] = i;
  const Tensor in = Tensor::from_data({1, 1, 4, 4}, std::move(ramp));
  const Tensor out = maxpool2d(in, 2, 2);
  EXPECT_EQ(out.data(), (std::vector<double>{5, 7, 13, 15}));
  EXPECT_EQ(out.data(), pool_oracle(in, 2, 2));

  const Tensor rnd = random_tensor({2, 3, 7, 7}, 17);
  EXPECT_EQ(maxpool2d(rnd, 3, 2).data(), pool_oracle(rnd, 3, 2));
}

TEST(Maxpool2d, WindowTooLarge) {
  const Tensor in = Tensor::zeros({1, 1, 2, 2});
  EXPECT_THROW(maxpool2d(in, 3, 1), std::invalid_argument);
}

TEST(Relu, Examples) {
  const Tensor in = Tensor::from_data({3}, {-1, 0, 2});
  EXPECT_EQ(relu(in).data(), (std::vector<double>{0, 0, 2}));

  const Tensor pos = Tensor::from_data({4}, {0.5, 1, 2, 0});
  EXPECT_EQ(relu(pos).data(), pos.data());

  // relu'(-1) = 0, relu'(2) = 1: chain through a loss with unit slope there.
  Tensor x = Tensor::from_data({2}, {-1, 2});
  x.set_requires_grad(true);
  l2_match_loss(relu(x), Tensor::from_data({2}, {-0.5, 1.5})).backward();
  // grad = 2*(relu(x) - target) * relu'(x) = [0, 2*(2-1.5)*1]
  EXPECT_EQ(x.grad(), (std::vector<double>{0, 1}));
}

TEST(Linear, Examples) {
  const Tensor in = Tensor::from_data({1, 2}, {1, 2});
  const Tensor w = Tensor::from_data({2, 1}, {1, 1});
  const Tensor b = Tensor::zeros({1});
  EXPECT_EQ(linear(in, w, b).item(), 3.0);

  const Tensor zw = Tensor::zeros({2, 3});
  const Tensor bb = Tensor::from_data({3}, {1, 2, 3});
  const Tensor out = linear(random_tensor({4, 2}, 5), zw, bb);
  for (int n = 0; n < 4; ++n) {
    for (int m = 0; m < 3; ++m) {
      EXPECT_EQ(out.data()[n * 3 + m], bb.data()[m]);
    }
  }
}

TEST(Linear, MatchesTripleLoopOracle) {
  const Tensor x = random_tensor({2, 3}, 21);
  const Tensor w = random_tensor({3, 2}, 22);
  const Tensor b = random_tensor({2}, 23);
  const Tensor out = linear(x, w, b);
  for (int n = 0; n < 2; ++n) {
    for (int m = 0; m < 2; ++m) {
      double acc = b.data()[m];
      for (int d = 0; d < 3; ++d) acc += x.data()[n * 3 + d] * w.data()[d * 2 + m];
      EXPECT_NEAR(out.data()[n * 2 + m], acc, 1e-14);
    }
  }
  EXPECT_THROW(linear(x, random_tensor({4, 2}, 1), b), std::invalid_argument);
}

TEST(Softmax, Examples) {
  const Tensor z = Tensor::from_data({1, 2}, {0, 0});
  EXPECT_EQ(softmax(z).data(), (std::vector<double>{0.5, 0.5}));

  const Tensor l = Tensor::from_data({1, 2}, {std::log(1.0), std::log(3.0)});
  const Tensor p = softmax(l);
  EXPECT_NEAR(p.data()[0], 0.25, 1e-12);
  EXPECT_NEAR(p.data()[1], 0.75, 1e-12);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  const Tensor x = random_tensor({8, 5}, 31, -20.0, 20.0);
  const Tensor p = softmax(x);
  for (int n = 0; n < 8; ++n) {
    double s = 0;
    for (int c = 0; c < 5; ++c) s += p.data()[n * 5 + c];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  Tensor shifted = x.detach();
  for (int n = 0; n < 8; ++n) {
    for (int c = 0; c < 5; ++c) shifted.data()[n * 5 + c] += 7.5;
  }
  const Tensor q = softmax(shifted);
  for (std::size_t i = 0; i < q.data().size(); ++i) {
    EXPECT_NEAR(p.data()[i], q.data()[i], 1e-12);
  }
}

TEST(L2MatchLoss, Examples) {
  const Tensor x = random_tensor({3, 4}, 41);
  EXPECT_EQ(l2_match_loss(x, x).item(), 0.0);

  Tensor a = Tensor::from_data({2}, {1, 2});
  a.set_requires_grad(true);
  const Tensor y = Tensor::zeros({2});
  Tensor loss = l2_match_loss(a, y);
  EXPECT_EQ(loss.item(), 5.0);  // rank-1: single sample
  loss.backward();
  EXPECT_EQ(a.grad(), (std::vector<double>{2, 4}));
}

TEST(L2MatchLoss, BatchMeanAndNonNegativity) {
  // Two samples, per-sample sums 5 and 25 -> mean 15.
  Tensor x = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  const Tensor y = Tensor::zeros({2, 2});
  EXPECT_EQ(l2_match_loss(x, y).item(), 15.0);

  for (int i = 0; i < 5; ++i) {
    const Tensor a = random_tensor({4, 3}, 50 + i);
    const Tensor b = random_tensor({4, 3}, 60 + i);
    const double v = l2_match_loss(a, b).item();
    EXPECT_GE(v, 0.0);
    EXPECT_GT(v, 0.0);  // random tensors differ
  }
  EXPECT_THROW(l2_match_loss(Tensor::zeros({2}), Tensor::zeros({3})),
               std::invalid_argument);
}

TEST(L2MatchLoss, NoGradientIntoTarget) {
  Tensor x = random_tensor({2, 2}, 71);
  Tensor y = random_tensor({2, 2}, 72);
  x.set_requires_grad(true);
  y.set_requires_grad(true);
  Tensor loss = l2_match_loss(x, y);
  loss.backward();
  EXPECT_TRUE(x.has_grad());
  EXPECT_FALSE(y.has_grad());
}

TEST(SigmoidMatchLoss, Examples) {
  // alpha=1, x=0, y above tau: -log p(0) = -log 0.5
  Tensor x = Tensor::from_data({1}, {0});
  const Tensor y_pos = Tensor::from_data({1}, {1.0});
  EXPECT_NEAR(sigmoid_match_loss(x, y_pos, 1.0, 0.0).item(), 0.693147, 1e-6);

  const Tensor x_big = Tensor::from_data({1}, {50.0});
  EXPECT_NEAR(sigmoid_match_loss(x_big, y_pos, 1.0, 0.0).item(), 0.0, 1e-12);

  // alpha=2, x=0.5, y below tau: -log(1 - e/(1+e)) with e = exp(1)
  const Tensor x_half = Tensor::from_data({1}, {0.5});
  const Tensor y_neg = Tensor::from_data({1}, {-1.0});
  EXPECT_NEAR(sigmoid_match_loss(x_half, y_neg, 2.0, 0.0).item(), 1.313262, 1e-6);
}

TEST(CrossEntropy, Examples) {
  const Tensor z = Tensor::from_data({1, 2}, {0, 0});
  EXPECT_NEAR(cross_entropy_loss(z, {0}).item(), std::log(2.0), 1e-12);

  const Tensor hot = Tensor::from_data({1, 2}, {200.0, 0.0});
  EXPECT_NEAR(cross_entropy_loss(hot, {0}).item(), 0.0, 1e-12);

  const Tensor l3 = Tensor::from_data({1, 3}, {1, 2, 3});
  EXPECT_NEAR(cross_entropy_loss(l3, {2}).item(), 0.407606, 1e-6);

  EXPECT_THROW(cross_entropy_loss(l3, {3}), std::invalid_argument);
  EXPECT_THROW(cross_entropy_loss(l3, {2, 0}), std::invalid_argument);
}

TEST(Gradients, EveryKernelMatchesFiniteDifferences) {
  const double eps = 1e-5, tol = 1e-5;
  for (int probe = 0; probe < 3; ++probe) {
    const std::uint64_t s = 1000 + probe * 17;

    // conv2d wrt input, weight, bias
    {
      const Tensor in = random_tensor({2, 2, 5, 5}, s);
      const Tensor w = random_tensor({3, 2, 3, 3}, s + 1);
      const Tensor b = random_tensor({3}, s + 2);
      const Tensor tgt = random_tensor({2, 3, 5, 5}, s + 3);
      auto wrt_in = [&](const Tensor& t) {
        return l2_match_loss(conv2d(t, w, b, 1, 1), tgt);
      };
      auto wrt_w = [&](const Tensor& t) {
        return l2_match_loss(conv2d(in, t, b, 1, 1), tgt);
      };
      auto wrt_b = [&](const Tensor& t) {
        return l2_match_loss(conv2d(in, w, t, 1, 1), tgt);
      };
      EXPECT_LE(finite_diff_check(wrt_in, in, eps), tol);
      EXPECT_LE(finite_diff_check(wrt_w, w, eps), tol);
      EXPECT_LE(finite_diff_check(wrt_b, b, eps), tol);
    }
    // maxpool (probe away from ties: distinct random values)
    {
      const Tensor in = random_tensor({1, 2, 6, 6}, s + 4);
      const Tensor tgt = random_tensor({1, 2, 3, 3}, s + 5);
      auto f = [&](const Tensor& t) {
        return l2_match_loss(maxpool2d(t, 2, 2), tgt);
      };
      EXPECT_LE(finite_diff_check(f, in, eps), tol);
    }
    // relu away from the kink
    {
      Tensor in = random_tensor({12}, s + 6);
      for (auto& v : in.data()) {
        if (std::abs(v) < 0.2) v = v < 0 ? v - 0.2 : v + 0.2;
      }
      const Tensor tgt = random_tensor({12}, s + 7);
      auto f = [&](const Tensor& t) { return l2_match_loss(relu(t), tgt); };
      EXPECT_LE(finite_diff_check(f, in, eps), tol);
    }
    // linear wrt all three
    {
      const Tensor x = random_tensor({3, 4}, s + 8);
      const Tensor w = random_tensor({4, 2}, s + 9);
      const Tensor b = random_tensor({2}, s + 10);
      const Tensor tgt = random_tensor({3, 2}, s + 11);
      auto wrt_x = [&](const Tensor& t) { return l2_match_loss(linear(t, w, b), tgt); };
      auto wrt_w = [&](const Tensor& t) { return l2_match_loss(linear(x, t, b), tgt); };
      auto wrt_b = [&](const Tensor& t) { return l2_match_loss(linear(x, w, t), tgt); };
      EXPECT_LE(finite_diff_check(wrt_x, x, eps), tol);
      EXPECT_LE(finite_diff_check(wrt_w, w, eps), tol);
      EXPECT_LE(finite_diff_check(wrt_b, b, eps), tol);
    }
    // softmax through a fixed linear functional, and softmax + CE
    {
      const Tensor x = random_tensor({2, 5}, s + 12);
      const Tensor coeff = random_tensor({2, 5}, s + 13);
      auto f = [&](const Tensor& t) {
        return l2_match_loss(softmax(t), coeff);
      };
      EXPECT_LE(finite_diff_check(f, x, eps), tol);
      auto ce = [&](const Tensor& t) { return cross_entropy_loss(t, {1, 4}); };
      EXPECT_LE(finite_diff_check(ce, x, eps), tol);
    }
    // the match losses themselves
    {
      const Tensor x = random_tensor({3, 6}, s + 14);
      const Tensor y = random_tensor({3, 6}, s + 15);
      auto l2 = [&](const Tensor& t) { return l2_match_loss(t, y); };
      EXPECT_LE(finite_diff_check(l2, x, eps), 1e-6);
      auto sig = [&](const Tensor& t) {
        return sigmoid_match_loss(t, y, 1.3, 0.1);
      };
      EXPECT_LE(finite_diff_check(sig, x, eps), tol);
    }
    // composite ops: scale, spatial_mean, add, reshape
    {
      const Tensor x = random_tensor({2, 3, 4, 4}, s + 16);
      const Tensor sc = random_tensor({1}, s + 17, 0.5, 2.0);
      const Tensor tgt = random_tensor({2, 3}, s + 18);
      auto f = [&](const Tensor& t) {
        return l2_match_loss(spatial_mean(scale_mul(t, sc)), tgt);
      };
      EXPECT_LE(finite_diff_check(f, x, eps), tol);
      auto g = [&](const Tensor& t) {
        return l2_match_loss(add(flatten2d(t), flatten2d(x)),
                             Tensor::zeros({2, 48}));
      };
      EXPECT_LE(finite_diff_check(g, x, eps), tol);
      auto h = [&](const Tensor& t) { return l2_match_loss(scale_mul(x, t), Tensor::zeros({2,3,4,4})); };
      EXPECT_LE(finite_diff_check(h, sc, eps), tol);
    }
  }
}

TEST(Gradients, LinearFunctionIsExact) {
  const Tensor w = random_tensor({6, 1}, 900);
  const Tensor b = random_tensor({1}, 901);
  auto f = [&](const Tensor& t) { return reshape(linear(t, w, b), {1}); };
  const Tensor x = random_tensor({1, 6}, 902);
  EXPECT_LE(finite_diff_check(f, x, 1e-5), 1e-9);
}

TEST(Forward, Deterministic) {
  const Tensor in = random_tensor({2, 3, 8, 8}, 77);
  const Tensor w = random_tensor({4, 3, 3, 3}, 78);
  const Tensor b = random_tensor({4}, 79);
  const Tensor a = conv2d(in, w, b, 1, 1);
  const Tensor c = conv2d(in, w, b, 1, 1);
  EXPECT_EQ(a.data(), c.data());
}

TEST(Autograd, GradAccumulatesAndZeroGradClears) {
  Tensor x = Tensor::from_data({1}, {2.0});
  x.set_requires_grad(true);
  const Tensor y = Tensor::zeros({1});
  l2_match_loss(x, y).backward();
  EXPECT_EQ(x.grad()[0], 4.0);
  l2_match_loss(x, y).backward();
  EXPECT_EQ(x.grad()[0], 8.0);  // accumulation
  x.zero_grad();
  EXPECT_EQ(x.grad()[0], 0.0);
}
