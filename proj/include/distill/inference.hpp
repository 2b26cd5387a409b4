#pragma once

// Batched inference helpers shared by training loops, probes and metrics.

#include <map>
#include <string>
#include <vector>

#include "distill/data.hpp"
#include "distill/metrics.hpp"
#include "distill/net.hpp"

namespace distill {

/// Final-layer outputs for every sample, rows in dataset order.
inline Tensor batched_logits(const Network& net, const LabeledDataset& ds,
                             std::size_t batch_size = 64) {
  std::vector<double> rows;
  int width = 0;
  for (std::size_t at = 0; at < ds.size(); at += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = at; i < std::min(ds.size(), at + batch_size); ++i) {
      idx.push_back(i);
    }
    const auto batch = gather(ds, idx);
    const Tensor out = forward(net, batch.x).output;
    width = out.shape()[1];
    rows.insert(rows.end(), out.data().begin(), out.data().end());
  }
  return Tensor::from_data({static_cast<int>(ds.size()), width}, std::move(rows));
}

inline std::vector<int> argmax_rows(const Tensor& logits) {
  const int N = logits.shape()[0], C = logits.shape()[1];
  std::vector<int> out(N);
  for (int n = 0; n < N; ++n) {
    const double* row = logits.data().data() + static_cast<std::size_t>(n) * C;
    int best = 0;
    for (int c = 1; c < C; ++c) {
      if (row[c] > row[best]) best = c;
    }
    out[n] = best;
  }
  return out;
}

inline std::vector<int> labels_of(const LabeledDataset& ds) {
  std::vector<int> out;
  for (const auto& s : ds.samples) out.push_back(s.label);
  return out;
}

inline double evaluate_accuracy(const Network& net, const LabeledDataset& ds) {
  return accuracy(argmax_rows(batched_logits(net, ds)), labels_of(ds));
}

/// Ranked-retrieval report from class scores: per-class AP over the dataset
/// plus argmax accuracy. Scores are softmax probabilities of the logits.
inline MetricReport score_report(const Tensor& logits, const LabeledDataset& ds) {
  const Tensor probs = softmax(logits.detach());
  const int N = probs.shape()[0], C = probs.shape()[1];
  std::map<std::string, std::vector<double>> scores;
  std::map<std::string, std::vector<bool>> positives;
  for (int c = 0; c < C; ++c) {
    const std::string& cls = ds.class_names[c];
    auto& sc = scores[cls];
    auto& po = positives[cls];
    for (int n = 0; n < N; ++n) {
      sc.push_back(probs.data()[static_cast<std::size_t>(n) * C + c]);
      po.push_back(ds.samples[n].label == c);
    }
  }
  return mean_ap(scores, positives);
}

}  // namespace distill
