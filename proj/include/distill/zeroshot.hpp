#pragma once

// Zero-shot franken networks and cross-modal score fusion.

#include <stdexcept>
#include <string>
#include <vector>

#include "distill/data.hpp"
#include "distill/inference.hpp"
#include "distill/net.hpp"

namespace distill {

/// Student lower stack composed with the teacher's upper stack at a shared
/// seam layer; runs teacher-grade semantics on the student's modality.
struct FrankenNetwork {
  Network lower;
  Network upper;
  std::string seam;
};

/// Builds the composition. The student supplies layers up to and including
/// `seam` (it may end exactly there); the teacher supplies everything above.
inline FrankenNetwork assemble_franken(const Network& student,
                                       const Network& teacher,
                                       const std::string& seam) {
  const int s_idx = student.spec.index_of(seam);
  const int t_idx = teacher.spec.index_of(seam);
  if (s_idx < 0) {
    throw std::invalid_argument("assemble_franken: student has no layer '" +
                                seam + "'");
  }
  if (t_idx < 0) {
    throw std::invalid_argument("assemble_franken: teacher has no layer '" +
                                seam + "'");
  }
  if (t_idx + 1 == static_cast<int>(teacher.spec.layers.size())) {
    throw std::invalid_argument(
        "assemble_franken: seam '" + seam + "' is the teacher's last layer");
  }

  FrankenNetwork fr;
  fr.seam = seam;
  fr.lower.spec.input_shape = student.spec.input_shape;
  fr.lower.modality_tag = student.modality_tag;
  for (int i = 0; i <= s_idx; ++i) {
    const auto& l = student.spec.layers[i];
    fr.lower.spec.layers.push_back(l);
    auto it = student.params.find(l.name);
    if (it != student.params.end()) fr.lower.params[l.name] = it->second;
  }
  const Shape lower_out = propagate_shapes(fr.lower.spec).back();
  const Shape seam_shape = propagate_shapes(teacher.spec)[t_idx];
  if (lower_out != seam_shape) {
    throw std::invalid_argument("assemble_franken: student produces " +
                                shape_str(lower_out) + " at '" + seam +
                                "' but the teacher expects " +
                                shape_str(seam_shape));
  }
  fr.upper.spec.input_shape = seam_shape;
  fr.upper.modality_tag = teacher.modality_tag;
  for (int i = t_idx + 1; i < static_cast<int>(teacher.spec.layers.size()); ++i) {
    const auto& l = teacher.spec.layers[i];
    fr.upper.spec.layers.push_back(l);
    auto it = teacher.params.find(l.name);
    if (it != teacher.params.end()) fr.upper.params[l.name] = it->second;
  }
  return fr;
}

inline Tensor franken_forward(const FrankenNetwork& fr, const Tensor& input) {
  return forward(fr.upper, forward(fr.lower, input).output).output;
}

inline Tensor franken_logits(const FrankenNetwork& fr, const LabeledDataset& ds,
                             std::size_t batch_size = 64) {
  std::vector<double> rows;
  int width = 0;
  for (std::size_t at = 0; at < ds.size(); at += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = at; i < std::min(ds.size(), at + batch_size); ++i) {
      idx.push_back(i);
    }
    const Tensor out = franken_forward(fr, gather(ds, idx).x);
    width = out.shape()[1];
    rows.insert(rows.end(), out.data().begin(), out.data().end());
  }
  return Tensor::from_data({static_cast<int>(ds.size()), width}, std::move(rows));
}

/// Weighted mean of pre-softmax score sets (uniform by default). Apply
/// softmax afterwards if probabilities are needed.
inline Tensor fuse_scores(const std::vector<Tensor>& score_sets,
                          const std::vector<double>& weights = {}) {
  if (score_sets.empty()) {
    throw std::invalid_argument("fuse_scores: no score sets");
  }
  if (!weights.empty() && weights.size() != score_sets.size()) {
    throw std::invalid_argument("fuse_scores: weight count mismatch");
  }
  const Shape& shape = score_sets[0].shape();
  double wsum = 0.0;
  for (std::size_t i = 0; i < score_sets.size(); ++i) {
    if (score_sets[i].shape() != shape) {
      throw std::invalid_argument("fuse_scores: shape mismatch " +
                                  shape_str(shape) + " vs " +
                                  shape_str(score_sets[i].shape()));
    }
    wsum += weights.empty() ? 1.0 : weights[i];
  }
  if (wsum <= 0) throw std::invalid_argument("fuse_scores: weights sum to zero");

  std::vector<double> out(score_sets[0].data().size(), 0.0);
  for (std::size_t i = 0; i < score_sets.size(); ++i) {
    const double w = (weights.empty() ? 1.0 : weights[i]) / wsum;
    const auto& d = score_sets[i].data();
    for (std::size_t t = 0; t < out.size(); ++t) out[t] += w * d[t];
  }
  return Tensor::from_data(shape, std::move(out));
}

}  // namespace distill
