#pragma once

// Layer kernels and loss functions over Tensor, forward + reverse mode.
//
// Conventions: activations are N x C x H x W or N x D, weights follow the
// layer (conv: O x I x K x K, linear: D x M). All kernels are plain fp64
// loops with deterministic iteration order; identical inputs give
// bit-identical outputs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "distill/tensor.hpp"

namespace distill {

namespace detail {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline int div_floor(int a, int b) {
  int q = a / b, r = a % b;
  return (r != 0 && ((r < 0) != (b < 0))) ? q - 1 : q;
}

inline int div_ceil(int a, int b) { return -div_floor(-a, b); }

// Softplus log(1 + e^z) without overflow.
inline double softplus(double z) {
  return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

inline double sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

// Batch dimension for per-sample losses: leading dim of rank >= 2 tensors,
// rank-1 tensors count as a single sample.
inline std::int64_t batch_dim(const Shape& s) {
  return s.size() >= 2 ? s[0] : 1;
}

}  // namespace detail

/// 2-D cross-correlation plus bias. input N x I x H x W, weight O x I x K x K,
/// bias O. Output H' = floor((H + 2 pad - K) / stride) + 1.
inline Tensor conv2d(const Tensor& input, const Tensor& weight,
                     const Tensor& bias, int stride = 1, int pad = 0) {
  using detail::require;
  const auto& is = input.shape();
  const auto& ws = weight.shape();
  require(is.size() == 4, "conv2d: input must be NxCxHxW, got " + shape_str(is));
  require(ws.size() == 4 && ws[2] == ws[3],
          "conv2d: weight must be OxIxKxK, got " + shape_str(ws));
  require(bias.shape() == Shape{ws[0]},
          "conv2d: bias must have shape [" + std::to_string(ws[0]) + "], got " +
              shape_str(bias.shape()));
  require(is[1] == ws[1], "conv2d: input channels " + std::to_string(is[1]) +
                              " do not match weight channels " +
                              std::to_string(ws[1]));
  require(stride >= 1, "conv2d: stride must be >= 1");
  require(pad >= 0, "conv2d: pad must be >= 0");
  const int N = is[0], I = is[1], H = is[2], W = is[3];
  const int O = ws[0], K = ws[2];
  require(H + 2 * pad >= K && W + 2 * pad >= K,
          "conv2d: kernel " + std::to_string(K) + " exceeds padded input " +
              shape_str(is) + " with pad " + std::to_string(pad));
  const int Ho = (H + 2 * pad - K) / stride + 1;
  const int Wo = (W + 2 * pad - K) / stride + 1;

  std::vector<double> out(static_cast<std::size_t>(N) * O * Ho * Wo);
  const double* in = input.data().data();
  const double* w = weight.data().data();
  const double* b = bias.data().data();

  for (int n = 0; n < N; ++n) {
    for (int o = 0; o < O; ++o) {
      double* plane = out.data() + (static_cast<std::size_t>(n) * O + o) * Ho * Wo;
      std::fill(plane, plane + static_cast<std::size_t>(Ho) * Wo, b[o]);
      for (int i = 0; i < I; ++i) {
        const double* in_ch = in + (static_cast<std::size_t>(n) * I + i) * H * W;
        const double* w_ch = w + (static_cast<std::size_t>(o) * I + i) * K * K;
        for (int kh = 0; kh < K; ++kh) {
          for (int kw = 0; kw < K; ++kw) {
            const double wv = w_ch[kh * K + kw];
            if (wv == 0.0) continue;
            const int ho_lo = std::max(0, detail::div_ceil(pad - kh, stride));
            const int ho_hi =
                std::min(Ho - 1, detail::div_floor(H - 1 + pad - kh, stride));
            const int wo_lo = std::max(0, detail::div_ceil(pad - kw, stride));
            const int wo_hi =
                std::min(Wo - 1, detail::div_floor(W - 1 + pad - kw, stride));
            for (int ho = ho_lo; ho <= ho_hi; ++ho) {
              const int ih = ho * stride - pad + kh;
              const double* in_row = in_ch + static_cast<std::size_t>(ih) * W;
              double* out_row = plane + static_cast<std::size_t>(ho) * Wo;
              int iw = wo_lo * stride - pad + kw;
              for (int wo = wo_lo; wo <= wo_hi; ++wo, iw += stride) {
                out_row[wo] += wv * in_row[iw];
              }
            }
          }
        }
      }
    }
  }

  auto* in_node = input.node();
  auto* w_node = weight.node();
  auto* b_node = bias.node();
  auto backward = [=](detail::TensorNode& self) {
    const double* go = self.grad.data();
    double* gi = in_node->requires_grad ? in_node->grad_ptr() : nullptr;
    double* gw = w_node->requires_grad ? w_node->grad_ptr() : nullptr;
    double* gb = b_node->requires_grad ? b_node->grad_ptr() : nullptr;
    const double* in_d = in_node->data.data();
    const double* w_d = w_node->data.data();
    for (int n = 0; n < N; ++n) {
      for (int o = 0; o < O; ++o) {
        const double* gplane =
            go + (static_cast<std::size_t>(n) * O + o) * Ho * Wo;
        if (gb) {
          double s = 0.0;
          for (std::int64_t t = 0; t < static_cast<std::int64_t>(Ho) * Wo; ++t)
            s += gplane[t];
          gb[o] += s;
        }
        if (!gi && !gw) continue;
        for (int i = 0; i < I; ++i) {
          const std::size_t in_off = (static_cast<std::size_t>(n) * I + i) * H * W;
          const std::size_t w_off = (static_cast<std::size_t>(o) * I + i) * K * K;
          for (int kh = 0; kh < K; ++kh) {
            for (int kw = 0; kw < K; ++kw) {
              const double wv = w_d[w_off + kh * K + kw];
              double wg = 0.0;
              const int ho_lo = std::max(0, detail::div_ceil(pad - kh, stride));
              const int ho_hi = std::min(
                  Ho - 1, detail::div_floor(H - 1 + pad - kh, stride));
              const int wo_lo = std::max(0, detail::div_ceil(pad - kw, stride));
              const int wo_hi = std::min(
                  Wo - 1, detail::div_floor(W - 1 + pad - kw, stride));
              for (int ho = ho_lo; ho <= ho_hi; ++ho) {
                const int ih = ho * stride - pad + kh;
                const double* grow = gplane + static_cast<std::size_t>(ho) * Wo;
                const std::size_t row = in_off + static_cast<std::size_t>(ih) * W;
                int iw = wo_lo * stride - pad + kw;
                for (int wo = wo_lo; wo <= wo_hi; ++wo, iw += stride) {
                  const double g = grow[wo];
                  if (gi) gi[row + iw] += g * wv;
                  if (gw) wg += g * in_d[row + iw];
                }
              }
              if (gw) gw[w_off + kh * K + kw] += wg;
            }
          }
        }
      }
    }
  };
  return detail::make_op_result({N, O, Ho, Wo}, std::move(out),
                                {input, weight, bias}, std::move(backward));
}

/// Max pooling, window k, no padding. Gradient routes to the first maximal
/// element of each window in row-major order.
inline Tensor maxpool2d(const Tensor& input, int k, int stride) {
  using detail::require;
  const auto& is = input.shape();
  require(is.size() == 4, "maxpool2d: input must be NxCxHxW, got " + shape_str(is));
  require(k >= 1 && stride >= 1, "maxpool2d: k and stride must be >= 1");
  const int N = is[0], C = is[1], H = is[2], W = is[3];
  require(k <= H && k <= W, "maxpool2d: window " + std::to_string(k) +
                                " exceeds input " + shape_str(is));
  const int Ho = (H - k) / stride + 1;
  const int Wo = (W - k) / stride + 1;

  std::vector<double> out(static_cast<std::size_t>(N) * C * Ho * Wo);
  auto argmax = std::make_shared<std::vector<std::int64_t>>(out.size());
  const double* in = input.data().data();
  std::size_t oidx = 0;
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * C + c) * H * W;
      for (int ho = 0; ho < Ho; ++ho) {
        for (int wo = 0; wo < Wo; ++wo, ++oidx) {
          const int h0 = ho * stride, w0 = wo * stride;
          double best = in[base + static_cast<std::size_t>(h0) * W + w0];
          std::int64_t best_at = static_cast<std::int64_t>(base) + h0 * W + w0;
          for (int kh = 0; kh < k; ++kh) {
            const std::size_t row = base + static_cast<std::size_t>(h0 + kh) * W;
            for (int kw = 0; kw < k; ++kw) {
              const double v = in[row + w0 + kw];
              if (v > best) {
                best = v;
                best_at = static_cast<std::int64_t>(row) + w0 + kw;
              }
            }
          }
          out[oidx] = best;
          (*argmax)[oidx] = best_at;
        }
      }
    }
  }

  auto* in_node = input.node();
  auto backward = [in_node, argmax](detail::TensorNode& self) {
    if (!in_node->requires_grad) return;
    double* gi = in_node->grad_ptr();
    const double* go = self.grad.data();
    for (std::size_t i = 0; i < argmax->size(); ++i) gi[(*argmax)[i]] += go[i];
  };
  return detail::make_op_result({N, C, Ho, Wo}, std::move(out), {input},
                                std::move(backward));
}

/// Elementwise max(0, x); subgradient at 0 is 0.
inline Tensor relu(const Tensor& input) {
  const auto& x = input.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0 ? x[i] : 0.0;
  auto* in_node = input.node();
  auto backward = [in_node](detail::TensorNode& self) {
    if (!in_node->requires_grad) return;
    double* gi = in_node->grad_ptr();
    const double* go = self.grad.data();
    const double* xd = in_node->data.data();
    for (std::size_t i = 0; i < self.data.size(); ++i) {
      if (xd[i] > 0) gi[i] += go[i];
    }
  };
  return detail::make_op_result(input.shape(), std::move(out), {input},
                                std::move(backward));
}

/// Affine map: input N x D, weight D x M, bias M -> N x M.
inline Tensor linear(const Tensor& input, const Tensor& weight,
                     const Tensor& bias) {
  using detail::require;
  const auto& is = input.shape();
  const auto& ws = weight.shape();
  require(is.size() == 2, "linear: input must be NxD, got " + shape_str(is));
  require(ws.size() == 2, "linear: weight must be DxM, got " + shape_str(ws));
  require(is[1] == ws[0], "linear: inner dimensions disagree, input " +
                              shape_str(is) + " vs weight " + shape_str(ws));
  require(bias.shape() == Shape{ws[1]},
          "linear: bias must have shape [" + std::to_string(ws[1]) + "], got " +
              shape_str(bias.shape()));
  const int N = is[0], D = is[1], M = ws[1];

  std::vector<double> out(static_cast<std::size_t>(N) * M);
  const double* x = input.data().data();
  const double* w = weight.data().data();
  const double* b = bias.data().data();
  for (int n = 0; n < N; ++n) {
    double* row = out.data() + static_cast<std::size_t>(n) * M;
    for (int m = 0; m < M; ++m) row[m] = b[m];
    const double* xrow = x + static_cast<std::size_t>(n) * D;
    for (int d = 0; d < D; ++d) {
      const double xv = xrow[d];
      if (xv == 0.0) continue;
      const double* wrow = w + static_cast<std::size_t>(d) * M;
      for (int m = 0; m < M; ++m) row[m] += xv * wrow[m];
    }
  }

  auto* in_node = input.node();
  auto* w_node = weight.node();
  auto* b_node = bias.node();
  auto backward = [=](detail::TensorNode& self) {
    const double* go = self.grad.data();
    double* gi = in_node->requires_grad ? in_node->grad_ptr() : nullptr;
    double* gw = w_node->requires_grad ? w_node->grad_ptr() : nullptr;
    double* gb = b_node->requires_grad ? b_node->grad_ptr() : nullptr;
    const double* xd = in_node->data.data();
    const double* wd = w_node->data.data();
    for (int n = 0; n < N; ++n) {
      const double* grow = go + static_cast<std::size_t>(n) * M;
      const double* xrow = xd + static_cast<std::size_t>(n) * D;
      if (gb) {
        for (int m = 0; m < M; ++m) gb[m] += grow[m];
      }
      for (int d = 0; d < D; ++d) {
        const double* wrow = wd + static_cast<std::size_t>(d) * M;
        if (gi) {
          double s = 0.0;
          for (int m = 0; m < M; ++m) s += grow[m] * wrow[m];
          gi[static_cast<std::size_t>(n) * D + d] += s;
        }
        if (gw) {
          const double xv = xrow[d];
          if (xv != 0.0) {
            double* gwrow = gw + static_cast<std::size_t>(d) * M;
            for (int m = 0; m < M; ++m) gwrow[m] += xv * grow[m];
          }
        }
      }
    }
  };
  return detail::make_op_result({N, M}, std::move(out), {input, weight, bias},
                                std::move(backward));
}

/// Row softmax with max subtraction, input N x C.
inline Tensor softmax(const Tensor& input) {
  const auto& is = input.shape();
  detail::require(is.size() == 2,
                  "softmax: input must be NxC, got " + shape_str(is));
  const int N = is[0], C = is[1];
  std::vector<double> out(input.data().size());
  const double* x = input.data().data();
  for (int n = 0; n < N; ++n) {
    const double* row = x + static_cast<std::size_t>(n) * C;
    double* orow = out.data() + static_cast<std::size_t>(n) * C;
    const double mx = *std::max_element(row, row + C);
    double z = 0.0;
    for (int c = 0; c < C; ++c) {
      orow[c] = std::exp(row[c] - mx);
      z += orow[c];
    }
    for (int c = 0; c < C; ++c) orow[c] /= z;
  }

  auto* in_node = input.node();
  auto backward = [in_node, N, C](detail::TensorNode& self) {
    if (!in_node->requires_grad) return;
    double* gi = in_node->grad_ptr();
    const double* go = self.grad.data();
    const double* y = self.data.data();
    for (int n = 0; n < N; ++n) {
      const std::size_t off = static_cast<std::size_t>(n) * C;
      double dot = 0.0;
      for (int c = 0; c < C; ++c) dot += go[off + c] * y[off + c];
      for (int c = 0; c < C; ++c) {
        gi[off + c] += y[off + c] * (go[off + c] - dot);
      }
    }
  };
  return detail::make_op_result(is, std::move(out), {input},
                                std::move(backward));
}

/// View with a new shape (same element count, row-major order preserved).
inline Tensor reshape(const Tensor& input, Shape shape) {
  detail::require(shape_numel(shape) == input.numel(),
                  "reshape: cannot view " + shape_str(input.shape()) + " as " +
                      shape_str(shape));
  std::vector<double> out = input.data();
  auto* in_node = input.node();
  auto backward = [in_node](detail::TensorNode& self) {
    if (!in_node->requires_grad) return;
    double* gi = in_node->grad_ptr();
    const double* go = self.grad.data();
    for (std::size_t i = 0; i < self.data.size(); ++i) gi[i] += go[i];
  };
  return detail::make_op_result(std::move(shape), std::move(out), {input},
                                std::move(backward));
}

/// N x ... -> N x (product of the rest).
inline Tensor flatten2d(const Tensor& input) {
  const auto& is = input.shape();
  detail::require(is.size() >= 2, "flatten: input must have rank >= 2");
  int rest = 1;
  for (std::size_t i = 1; i < is.size(); ++i) rest *= is[i];
  return reshape(input, {is[0], rest});
}

/// Multiply by a single stored scalar (the norm-matching scale layer).
inline Tensor scale_mul(const Tensor& input, const Tensor& s) {
  detail::require(s.numel() == 1, "scale: parameter must be a single scalar");
  const double sv = s.data()[0];
  std::vector<double> out(input.data().size());
  const double* x = input.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sv * x[i];
  auto* in_node = input.node();
  auto* s_node = s.node();
  auto backward = [in_node, s_node, sv](detail::TensorNode& self) {
    const double* go = self.grad.data();
    if (in_node->requires_grad) {
      double* gi = in_node->grad_ptr();
      for (std::size_t i = 0; i < self.data.size(); ++i) gi[i] += sv * go[i];
    }
    if (s_node->requires_grad) {
      double acc = 0.0;
      const double* xd = in_node->data.data();
      for (std::size_t i = 0; i < self.data.size(); ++i) acc += go[i] * xd[i];
      s_node->grad_ptr()[0] += acc;
    }
  };
  return detail::make_op_result(input.shape(), std::move(out), {input, s},
                                std::move(backward));
}

/// Mean over spatial dims: N x C x H x W -> N x C. Identity on N x D.
inline Tensor spatial_mean(const Tensor& input) {
  const auto& is = input.shape();
  if (is.size() == 2) return reshape(input, is);
  detail::require(is.size() == 4,
                  "spatial_mean: input must be NxCxHxW or NxD, got " +
                      shape_str(is));
  const int N = is[0], C = is[1], H = is[2], W = is[3];
  const double inv = 1.0 / (static_cast<double>(H) * W);
  std::vector<double> out(static_cast<std::size_t>(N) * C);
  const double* x = input.data().data();
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const double* plane = x + (static_cast<std::size_t>(n) * C + c) * H * W;
      double s = 0.0;
      for (int t = 0; t < H * W; ++t) s += plane[t];
      out[static_cast<std::size_t>(n) * C + c] = s * inv;
    }
  }
  auto* in_node = input.node();
  auto backward = [in_node, N, C, H, W, inv](detail::TensorNode& self) {
    if (!in_node->requires_grad) return;
    double* gi = in_node->grad_ptr();
    const double* go = self.grad.data();
    for (int n = 0; n < N; ++n) {
      for (int c = 0; c < C; ++c) {
        const double g = go[static_cast<std::size_t>(n) * C + c] * inv;
        double* plane = gi + (static_cast<std::size_t>(n) * C + c) * H * W;
        for (int t = 0; t < H * W; ++t) plane[t] += g;
      }
    }
  };
  return detail::make_op_result({N, C}, std::move(out), {input},
                                std::move(backward));
}

/// Elementwise sum of two same-shape tensors.
inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require(a.shape() == b.shape(),
                  "add: shape mismatch " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
  std::vector<double> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  auto* a_node = a.node();
  auto* b_node = b.node();
  auto backward = [a_node, b_node](detail::TensorNode& self) {
    const double* go = self.grad.data();
    for (detail::TensorNode* p : {a_node, b_node}) {
      if (!p->requires_grad) continue;
      double* g = p->grad_ptr();
      for (std::size_t i = 0; i < self.data.size(); ++i) g[i] += go[i];
    }
  };
  return detail::make_op_result(a.shape(), std::move(out), {a, b},
                                std::move(backward));
}

inline Tensor mul_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * a.data()[i];
  auto* a_node = a.node();
  auto backward = [a_node, c](detail::TensorNode& self) {
    if (!a_node->requires_grad) return;
    double* g = a_node->grad_ptr();
    const double* go = self.grad.data();
    for (std::size_t i = 0; i < self.data.size(); ++i) g[i] += c * go[i];
  };
  return detail::make_op_result(a.shape(), std::move(out), {a},
                                std::move(backward));
}

/// Feature-matching L2 loss: per-sample sum of squared differences, averaged
/// over the batch dimension. The target y is treated as a constant; no
/// gradient flows into it.
inline Tensor l2_match_loss(const Tensor& x, const Tensor& y) {
  detail::require(x.shape() == y.shape(),
                  "l2_match_loss: shape mismatch " + shape_str(x.shape()) +
                      " vs " + shape_str(y.shape()));
  const double invB = 1.0 / static_cast<double>(detail::batch_dim(x.shape()));
  const double* xd = x.data().data();
  const double* yd = y.data().data();
  double acc = 0.0;
  for (std::size_t i = 0; i < x.data().size(); ++i) {
    const double d = xd[i] - yd[i];
    acc += d * d;
  }
  auto* x_node = x.node();
  // Keep the target alive for the backward pass without recording it as a
  // differentiable parent.
  auto target = y.handle();
  auto backward = [x_node, target, invB](detail::TensorNode& self) {
    if (!x_node->requires_grad) return;
    double* gx = x_node->grad_ptr();
    const double g = self.grad[0] * 2.0 * invB;
    const double* xd2 = x_node->data.data();
    const double* yd2 = target->data.data();
    for (std::size_t i = 0; i < x_node->data.size(); ++i) {
      gx[i] += g * (xd2[i] - yd2[i]);
    }
  };
  return detail::make_op_result({1}, {acc * invB}, {x}, std::move(backward));
}

/// Alternative matching loss: negative batch-mean log-likelihood of the
/// thresholded target under p(x) = e^{alpha x} / (1 + e^{alpha x}).
/// Elements with y > tau contribute -log p(x), others -log(1 - p(x)).
inline Tensor sigmoid_match_loss(const Tensor& x, const Tensor& y, double alpha,
                                 double tau) {
  detail::require(x.shape() == y.shape(),
                  "sigmoid_match_loss: shape mismatch " + shape_str(x.shape()) +
                      " vs " + shape_str(y.shape()));
  detail::require(alpha > 0, "sigmoid_match_loss: alpha must be > 0");
  const double invB = 1.0 / static_cast<double>(detail::batch_dim(x.shape()));
  const double* xd = x.data().data();
  const double* yd = y.data().data();
  double acc = 0.0;
  for (std::size_t i = 0; i < x.data().size(); ++i) {
    const double z = alpha * xd[i];
    // -log p = softplus(-z), -log(1-p) = softplus(z)
    acc += yd[i] > tau ? detail::softplus(-z) : detail::softplus(z);
  }
  auto* x_node = x.node();
  auto target = y.handle();
  auto backward = [x_node, target, alpha, tau, invB](detail::TensorNode& self) {
    if (!x_node->requires_grad) return;
    double* gx = x_node->grad_ptr();
    const double g = self.grad[0] * invB;
    const double* xd2 = x_node->data.data();
    const double* yd2 = target->data.data();
    for (std::size_t i = 0; i < x_node->data.size(); ++i) {
      const double p = detail::sigmoid(alpha * xd2[i]);
      gx[i] += g * (yd2[i] > tau ? -alpha * (1.0 - p) : alpha * p);
    }
  };
  return detail::make_op_result({1}, {acc * invB}, {x}, std::move(backward));
}

/// Batch-mean negative log softmax probability of the true class.
inline Tensor cross_entropy_loss(const Tensor& logits,
                                 const std::vector<int>& labels) {
  const auto& is = logits.shape();
  detail::require(is.size() == 2,
                  "cross_entropy_loss: logits must be NxC, got " + shape_str(is));
  const int N = is[0], C = is[1];
  detail::require(static_cast<int>(labels.size()) == N,
                  "cross_entropy_loss: " + std::to_string(labels.size()) +
                      " labels for " + std::to_string(N) + " rows");
  for (int n = 0; n < N; ++n) {
    if (labels[n] < 0 || labels[n] >= C) {
      throw std::invalid_argument("cross_entropy_loss: label " +
                                  std::to_string(labels[n]) + " at index " +
                                  std::to_string(n) + " outside [0, " +
                                  std::to_string(C) + ")");
    }
  }
  const double* x = logits.data().data();
  auto probs = std::make_shared<std::vector<double>>(logits.data().size());
  double acc = 0.0;
  for (int n = 0; n < N; ++n) {
    const double* row = x + static_cast<std::size_t>(n) * C;
    double* prow = probs->data() + static_cast<std::size_t>(n) * C;
    const double mx = *std::max_element(row, row + C);
    double z = 0.0;
    for (int c = 0; c < C; ++c) {
      prow[c] = std::exp(row[c] - mx);
      z += prow[c];
    }
    for (int c = 0; c < C; ++c) prow[c] /= z;
    acc += std::log(z) + mx - row[labels[n]];
  }
  const double invN = 1.0 / N;
  auto labels_copy = std::make_shared<std::vector<int>>(labels);
  auto* x_node = logits.node();
  auto backward = [x_node, probs, labels_copy, N, C,
                   invN](detail::TensorNode& self) {
    if (!x_node->requires_grad) return;
    double* gx = x_node->grad_ptr();
    const double g = self.grad[0] * invN;
    for (int n = 0; n < N; ++n) {
      const std::size_t off = static_cast<std::size_t>(n) * C;
      for (int c = 0; c < C; ++c) {
        const double delta = c == (*labels_copy)[n] ? 1.0 : 0.0;
        gx[off + c] += g * ((*probs)[off + c] - delta);
      }
    }
  };
  return detail::make_op_result({1}, {acc * invN}, {logits},
                                std::move(backward));
}

}  // namespace distill
