#pragma once

// Procedural toy datasets: labeled shape images and synthetic paired
// modalities derived from them.
//
// Base images are 3 x 32 x 32 scenes with two glyph slots. The left half
// holds either one large filled square or four small ones, the right half
// one large disc or four small ones; the (left, right) combination is the
// class, so the two halves carry disjoint label bits and the one-vs-four
// distinction needs more than local texture. A scene fixes layout, colors
// and class; its frames re-render with position jitter, brightness jitter
// and fresh pixel noise.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "distill/data.hpp"
#include "distill/rng.hpp"
#include "distill/tensor.hpp"

namespace distill {

struct ToyShapesConfig {
  int num_scenes = 40;
  int frames_per_scene = 5;
  int image_size = 32;
  int channels = 3;
  double noise_sigma = 0.10;
  std::string scene_prefix = "s";
  std::uint64_t seed = 0;
};

namespace detail {

struct GlyphLayout {
  double cy = 0, cx = 0;   // center
  double offset = 0;       // grid offset for the four-glyph variants
  std::vector<double> color;  // per channel
};

inline void draw_square(std::vector<double>& img, int C, int S, double cy,
                        double cx, double half, const std::vector<double>& color,
                        double gain) {
  const int h0 = std::max(0, static_cast<int>(std::ceil(cy - half)));
  const int h1 = std::min(S - 1, static_cast<int>(std::floor(cy + half)));
  const int w0 = std::max(0, static_cast<int>(std::ceil(cx - half)));
  const int w1 = std::min(S - 1, static_cast<int>(std::floor(cx + half)));
  for (int c = 0; c < C; ++c) {
    const double v = color[c] * gain;
    for (int h = h0; h <= h1; ++h) {
      for (int w = w0; w <= w1; ++w) {
        img[(static_cast<std::size_t>(c) * S + h) * S + w] += v;
      }
    }
  }
}

inline void draw_disc(std::vector<double>& img, int C, int S, double cy,
                      double cx, double r, const std::vector<double>& color,
                      double gain) {
  const int h0 = std::max(0, static_cast<int>(std::floor(cy - r)));
  const int h1 = std::min(S - 1, static_cast<int>(std::ceil(cy + r)));
  const int w0 = std::max(0, static_cast<int>(std::floor(cx - r)));
  const int w1 = std::min(S - 1, static_cast<int>(std::ceil(cx + r)));
  for (int c = 0; c < C; ++c) {
    const double v = color[c] * gain;
    for (int h = h0; h <= h1; ++h) {
      for (int w = w0; w <= w1; ++w) {
        const double dy = h - cy, dx = w - cx;
        if (dy * dy + dx * dx <= r * r) {
          img[(static_cast<std::size_t>(c) * S + h) * S + w] += v;
        }
      }
    }
  }
}

}  // namespace detail

/// Class names: the left bit selects one vs four squares, the right bit one
/// vs four discs. Labels are balanced round-robin over scenes.
inline LabeledDataset make_toy_shapes(const ToyShapesConfig& cfg) {
  if (cfg.image_size < 24 || cfg.channels < 1) {
    throw std::invalid_argument("make_toy_shapes: image too small");
  }
  const int S = cfg.image_size, C = cfg.channels;
  const double qx = S / 4.0;  // quarter width

  LabeledDataset ds;
  ds.class_names = {"sq1-disc1", "sq1-disc4", "sq4-disc1", "sq4-disc4"};

  for (int scene = 0; scene < cfg.num_scenes; ++scene) {
    const int label = scene % 4;
    const bool four_squares = (label / 2) != 0;
    const bool four_discs = (label % 2) != 0;
    SplitMix64 srng(derive_seed(cfg.seed, static_cast<std::uint64_t>(scene)));

    detail::GlyphLayout left, right;
    left.cy = srng.next_uniform(0.28 * S, 0.72 * S);
    left.cx = qx + srng.next_uniform(-0.06 * S, 0.06 * S);
    left.offset = srng.next_uniform(0.09 * S, 0.12 * S);
    right.cy = srng.next_uniform(0.28 * S, 0.72 * S);
    right.cx = 3 * qx + srng.next_uniform(-0.06 * S, 0.06 * S);
    right.offset = srng.next_uniform(0.09 * S, 0.12 * S);
    for (int c = 0; c < C; ++c) {
      left.color.push_back(srng.next_uniform(0.5, 1.0));
      right.color.push_back(srng.next_uniform(0.5, 1.0));
    }
    std::vector<double> bg;
    for (int c = 0; c < C; ++c) bg.push_back(srng.next_uniform(0.05, 0.15));

    const std::string scene_id =
        cfg.scene_prefix + std::to_string(100000 + scene).substr(1);

    for (int frame = 0; frame < cfg.frames_per_scene; ++frame) {
      SplitMix64 frng(
          derive_seed(derive_seed(cfg.seed, static_cast<std::uint64_t>(scene)),
                      static_cast<std::uint64_t>(frame) + 1));
      std::vector<double> img(static_cast<std::size_t>(C) * S * S);
      for (int c = 0; c < C; ++c) {
        for (int t = 0; t < S * S; ++t) {
          img[static_cast<std::size_t>(c) * S * S + t] =
              bg[c] + cfg.noise_sigma * frng.next_gaussian();
        }
      }
      const double gain = frng.next_uniform(0.9, 1.1);
      const double jy_l = frng.next_uniform(-1.0, 1.0);
      const double jx_l = frng.next_uniform(-1.0, 1.0);
      const double jy_r = frng.next_uniform(-1.0, 1.0);
      const double jx_r = frng.next_uniform(-1.0, 1.0);

      // Equal ink: one 8x8 square == four 4x4; disc radii match areas.
      const double sq_half = 0.125 * S, sq_small_half = 0.0625 * S;
      const double disc_r = 0.141 * S, disc_small_r = 0.0705 * S;
      const double lcy = left.cy + jy_l, lcx = left.cx + jx_l;
      const double rcy = right.cy + jy_r, rcx = right.cx + jx_r;
      if (four_squares) {
        for (int sy : {-1, 1}) {
          for (int sx : {-1, 1}) {
            detail::draw_square(img, C, S, lcy + sy * left.offset,
                                lcx + sx * left.offset, sq_small_half,
                                left.color, gain);
          }
        }
      } else {
        detail::draw_square(img, C, S, lcy, lcx, sq_half, left.color, gain);
      }
      if (four_discs) {
        for (int sy : {-1, 1}) {
          for (int sx : {-1, 1}) {
            detail::draw_disc(img, C, S, rcy + sy * right.offset,
                              rcx + sx * right.offset, disc_small_r,
                              right.color, gain);
          }
        }
      } else {
        detail::draw_disc(img, C, S, rcy, rcx, disc_r, right.color, gain);
      }

      LabeledSample sample;
      sample.scene_id = scene_id;
      sample.frame_id = frame;
      sample.label = label;
      sample.x = Tensor::from_data({C, S, S}, std::move(img));
      ds.samples.push_back(std::move(sample));
    }
  }
  return ds;
}

// --- paired-modality transforms ---

/// Per-pixel channel-space affine map d(c) = sum_c' M[c][c'] s(c') + b[c].
struct ChannelAffine {
  int channels = 0;
  std::vector<double> matrix;  // channels x channels, row-major
  std::vector<double> bias;    // channels
};

/// Well-conditioned random map: a seeded orthonormal basis (Gram-Schmidt on
/// gaussian columns) times per-column scales in [0.8, 1.25]. bias_range 0
/// gives a pure linear map.
inline ChannelAffine random_channel_affine(int channels, std::uint64_t seed,
                                           double bias_range = 0.0) {
  SplitMix64 rng(derive_seed(seed, "channel-affine"));
  const int C = channels;
  std::vector<double> a(static_cast<std::size_t>(C) * C);
  for (auto& v : a) v = rng.next_gaussian();
  // Modified Gram-Schmidt over columns.
  for (int c = 0; c < C; ++c) {
    for (int prev = 0; prev < c; ++prev) {
      double dot = 0;
      for (int r = 0; r < C; ++r) dot += a[r * C + c] * a[r * C + prev];
      for (int r = 0; r < C; ++r) a[r * C + c] -= dot * a[r * C + prev];
    }
    double norm = 0;
    for (int r = 0; r < C; ++r) norm += a[r * C + c] * a[r * C + c];
    norm = std::sqrt(norm);
    if (norm < 1e-9) throw std::runtime_error("degenerate random basis");
    for (int r = 0; r < C; ++r) a[r * C + c] /= norm;
  }
  ChannelAffine t;
  t.channels = C;
  t.matrix.resize(a.size());
  for (int c = 0; c < C; ++c) {
    const double scale = rng.next_uniform(0.8, 1.25);
    for (int r = 0; r < C; ++r) t.matrix[r * C + c] = a[r * C + c] * scale;
  }
  for (int c = 0; c < C; ++c) {
    t.bias.push_back(bias_range == 0.0 ? 0.0
                                       : rng.next_uniform(-bias_range, bias_range));
  }
  return t;
}

/// Exact inverse via Gauss-Jordan elimination with partial pivoting.
inline ChannelAffine invert(const ChannelAffine& t) {
  const int C = t.channels;
  std::vector<double> aug(static_cast<std::size_t>(C) * 2 * C, 0.0);
  for (int r = 0; r < C; ++r) {
    for (int c = 0; c < C; ++c) aug[r * 2 * C + c] = t.matrix[r * C + c];
    aug[r * 2 * C + C + r] = 1.0;
  }
  for (int col = 0; col < C; ++col) {
    int pivot = col;
    for (int r = col + 1; r < C; ++r) {
      if (std::abs(aug[r * 2 * C + col]) > std::abs(aug[pivot * 2 * C + col])) {
        pivot = r;
      }
    }
    if (std::abs(aug[pivot * 2 * C + col]) < 1e-12) {
      throw std::runtime_error("channel affine is singular");
    }
    if (pivot != col) {
      for (int c = 0; c < 2 * C; ++c) std::swap(aug[col * 2 * C + c], aug[pivot * 2 * C + c]);
    }
    const double d = aug[col * 2 * C + col];
    for (int c = 0; c < 2 * C; ++c) aug[col * 2 * C + c] /= d;
    for (int r = 0; r < C; ++r) {
      if (r == col) continue;
      const double f = aug[r * 2 * C + col];
      if (f == 0.0) continue;
      for (int c = 0; c < 2 * C; ++c) aug[r * 2 * C + c] -= f * aug[col * 2 * C + c];
    }
  }
  ChannelAffine inv;
  inv.channels = C;
  inv.matrix.resize(static_cast<std::size_t>(C) * C);
  for (int r = 0; r < C; ++r) {
    for (int c = 0; c < C; ++c) inv.matrix[r * C + c] = aug[r * 2 * C + C + c];
  }
  // x = Minv (y - b)
  inv.bias.assign(C, 0.0);
  for (int r = 0; r < C; ++r) {
    for (int c = 0; c < C; ++c) inv.bias[r] -= inv.matrix[r * C + c] * t.bias[c];
  }
  return inv;
}

inline Tensor apply_channel_affine(const Tensor& chw, const ChannelAffine& t) {
  const auto& s = chw.shape();
  if (s.size() != 3 || s[0] != t.channels) {
    throw std::invalid_argument("apply_channel_affine: expected " +
                                std::to_string(t.channels) + "xHxW, got " +
                                shape_str(s));
  }
  const int C = s[0], HW = s[1] * s[2];
  std::vector<double> out(chw.data().size());
  const double* in = chw.data().data();
  for (int r = 0; r < C; ++r) {
    double* orow = out.data() + static_cast<std::size_t>(r) * HW;
    for (int t2 = 0; t2 < HW; ++t2) orow[t2] = t.bias[r];
    for (int c = 0; c < C; ++c) {
      const double m = t.matrix[r * C + c];
      const double* irow = in + static_cast<std::size_t>(c) * HW;
      for (int t2 = 0; t2 < HW; ++t2) orow[t2] += m * irow[t2];
    }
  }
  return Tensor::from_data(s, std::move(out));
}

inline Tensor apply_channel_permute(const Tensor& chw,
                                    const std::vector<int>& perm) {
  const auto& s = chw.shape();
  if (s.size() != 3 || s[0] != static_cast<int>(perm.size())) {
    throw std::invalid_argument("apply_channel_permute: bad permutation size");
  }
  const int HW = s[1] * s[2];
  std::vector<double> out(chw.data().size());
  for (int c = 0; c < s[0]; ++c) {
    // output channel c comes from input channel perm[c]
    const double* src = chw.data().data() + static_cast<std::size_t>(perm[c]) * HW;
    std::copy(src, src + HW, out.data() + static_cast<std::size_t>(c) * HW);
  }
  return Tensor::from_data(s, std::move(out));
}

/// Keeps columns [0, W/2) when `left` is true, zeroes the rest (and vice
/// versa).
inline Tensor keep_half(const Tensor& chw, bool left) {
  const auto& s = chw.shape();
  if (s.size() != 3) throw std::invalid_argument("keep_half: expected CxHxW");
  const int C = s[0], H = s[1], W = s[2], mid = W / 2;
  std::vector<double> out(chw.data().size(), 0.0);
  const double* in = chw.data().data();
  for (int c = 0; c < C; ++c) {
    for (int h = 0; h < H; ++h) {
      const std::size_t row = (static_cast<std::size_t>(c) * H + h) * W;
      const int w0 = left ? 0 : mid;
      const int w1 = left ? mid : W;
      for (int w = w0; w < w1; ++w) out[row + w] = in[row + w];
    }
  }
  return Tensor::from_data(s, std::move(out));
}

enum class PairKind { invertible_affine, channel_permute, complementary_halves };

inline PairKind pair_kind_from_name(const std::string& s) {
  if (s == "invertible_affine") return PairKind::invertible_affine;
  if (s == "channel_permute") return PairKind::channel_permute;
  if (s == "complementary_halves") return PairKind::complementary_halves;
  throw std::invalid_argument("unknown paired-data kind '" + s + "'");
}

inline const char* pair_kind_name(PairKind k) {
  switch (k) {
    case PairKind::invertible_affine: return "invertible_affine";
    case PairKind::channel_permute: return "channel_permute";
    case PairKind::complementary_halves: return "complementary_halves";
  }
  return "?";
}

struct PairedBundle {
  PairedDataset pairs;
  LabeledDataset labeled_s;
  LabeledDataset labeled_d;
  nlohmann::json transform;  // provenance of the modality map
};

/// Derives a paired dataset (and per-modality labeled views) from a labeled
/// base set. A pure function of (kind, base, seed).
inline PairedBundle generate_paired_synthetic(PairKind kind,
                                              const LabeledDataset& base,
                                              std::uint64_t seed) {
  if (base.samples.empty()) {
    throw std::invalid_argument("generate_paired_synthetic: empty base dataset");
  }
  const int C = base.samples[0].x.shape()[0];
  PairedBundle out;
  out.labeled_s.class_names = base.class_names;
  out.labeled_d.class_names = base.class_names;

  ChannelAffine affine;
  std::vector<int> perm;
  switch (kind) {
    case PairKind::invertible_affine: {
      affine = random_channel_affine(C, seed);
      out.pairs.modality_names = {"base", "affine"};
      out.transform = {{"kind", "invertible_affine"},
                       {"matrix", affine.matrix},
                       {"bias", affine.bias}};
      break;
    }
    case PairKind::channel_permute: {
      for (int c = 0; c < C; ++c) perm.push_back(c);
      SplitMix64 rng(derive_seed(seed, "channel-permute"));
      seeded_shuffle(perm, rng);
      out.pairs.modality_names = {"base", "permuted"};
      out.transform = {{"kind", "channel_permute"}, {"perm", perm}};
      break;
    }
    case PairKind::complementary_halves: {
      out.pairs.modality_names = {"left", "right"};
      out.transform = {{"kind", "complementary_halves"}};
      break;
    }
  }

  for (const auto& sample : base.samples) {
    Tensor s, d;
    switch (kind) {
      case PairKind::invertible_affine:
        s = sample.x;
        d = apply_channel_affine(sample.x, affine);
        break;
      case PairKind::channel_permute:
        s = sample.x;
        d = apply_channel_permute(sample.x, perm);
        break;
      case PairKind::complementary_halves:
        s = keep_half(sample.x, true);
        d = keep_half(sample.x, false);
        break;
    }
    out.pairs.samples.push_back({sample.scene_id, sample.frame_id, s, d});
    out.labeled_s.samples.push_back({sample.scene_id, sample.frame_id, s, sample.label});
    out.labeled_d.samples.push_back({sample.scene_id, sample.frame_id, d, sample.label});
  }
  return out;
}

}  // namespace distill
