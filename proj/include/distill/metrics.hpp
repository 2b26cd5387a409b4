#pragma once

// Classification accuracy and ranked-retrieval average precision.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace distill {

inline double accuracy(const std::vector<int>& predictions,
                       const std::vector<int>& labels) {
  if (predictions.size() != labels.size() || predictions.empty()) {
    throw std::invalid_argument("accuracy: prediction/label length mismatch");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i] == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

/// Uninterpolated AP: rank by descending score (ties broken by original
/// index, ascending), then average precision-at-rank over the positives.
inline double average_precision(const std::vector<double>& scores,
                                const std::vector<bool>& positives) {
  if (scores.size() != positives.size() || scores.empty()) {
    throw std::invalid_argument("average_precision: score/positive length mismatch");
  }
  const std::size_t n_pos =
      static_cast<std::size_t>(std::count(positives.begin(), positives.end(), true));
  if (n_pos == 0) {
    throw std::invalid_argument("average_precision: no positive samples");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  double sum = 0.0;
  std::size_t seen_pos = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (positives[order[rank]]) {
      ++seen_pos;
      sum += static_cast<double>(seen_pos) / static_cast<double>(rank + 1);
    }
  }
  return sum / static_cast<double>(n_pos);
}

struct MetricReport {
  double accuracy = 0.0;
  std::map<std::string, double> per_class_ap;
  double mean_ap = 0.0;
  std::map<std::string, int> counts;               // per-class positive support
  std::vector<std::string> zero_support_classes;   // excluded from the mean
};

/// Per-class AP over shared rankings. Classes without positives are excluded
/// from the mean and flagged. Accuracy is the argmax-over-classes hit rate
/// (requires every sample to be positive in exactly one class).
inline MetricReport mean_ap(
    const std::map<std::string, std::vector<double>>& per_class_scores,
    const std::map<std::string, std::vector<bool>>& per_class_positives) {
  if (per_class_scores.empty() ||
      per_class_scores.size() != per_class_positives.size()) {
    throw std::invalid_argument("mean_ap: class maps are empty or mismatched");
  }
  std::size_t n = 0;
  for (const auto& [cls, scores] : per_class_scores) {
    auto it = per_class_positives.find(cls);
    if (it == per_class_positives.end() || it->second.size() != scores.size()) {
      throw std::invalid_argument("mean_ap: class '" + cls +
                                  "' has inconsistent scores/positives");
    }
    if (n == 0) n = scores.size();
    if (scores.size() != n) {
      throw std::invalid_argument("mean_ap: classes rank different sample counts");
    }
  }

  MetricReport report;
  double sum = 0.0;
  int used = 0;
  for (const auto& [cls, scores] : per_class_scores) {
    const auto& pos = per_class_positives.at(cls);
    const int support = static_cast<int>(std::count(pos.begin(), pos.end(), true));
    report.counts[cls] = support;
    if (support == 0) {
      report.zero_support_classes.push_back(cls);
      continue;
    }
    const double ap = average_precision(scores, pos);
    report.per_class_ap[cls] = ap;
    sum += ap;
    ++used;
  }
  if (used == 0) {
    throw std::invalid_argument("mean_ap: every class has zero positives");
  }
  report.mean_ap = sum / used;

  // Argmax accuracy over samples with a unique positive class.
  std::size_t hits = 0, labeled = 0;
  for (std::size_t i = 0; i < n; ++i) {
    int npos = 0;
    std::string truth;
    for (const auto& [cls, pos] : per_class_positives) {
      if (pos[i]) {
        ++npos;
        truth = cls;
      }
    }
    if (npos != 1) continue;
    ++labeled;
    const std::string* best = nullptr;
    double best_score = 0.0;
    for (const auto& [cls, scores] : per_class_scores) {
      if (!best || scores[i] > best_score) {
        best = &cls;
        best_score = scores[i];
      }
    }
    if (best && *best == truth) ++hits;
  }
  report.accuracy = labeled ? static_cast<double>(hits) / labeled : 0.0;
  return report;
}

namespace detail {

inline std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace detail

inline nlohmann::json metrics_to_json(const MetricReport& r) {
  nlohmann::json j;
  j["accuracy"] = detail::fmt6(r.accuracy);
  j["mean_ap"] = detail::fmt6(r.mean_ap);
  j["per_class_ap"] = nlohmann::json::object();
  j["counts"] = nlohmann::json::object();
  for (const auto& [cls, ap] : r.per_class_ap) j["per_class_ap"][cls] = detail::fmt6(ap);
  for (const auto& [cls, cnt] : r.counts) j["counts"][cls] = cnt;
  j["zero_support_classes"] = r.zero_support_classes;
  return j;
}

/// Writes the report as JSON or CSV; floats carry 6 decimals and ordering is
/// alphabetical by class. CSV header is "name,ap,support": one row per class,
/// then mean_ap and accuracy rows; an empty report is header-only.
inline void export_metrics(const MetricReport& r, const std::string& path,
                           const std::string& format) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("export_metrics: cannot write '" + path + "'");
  if (format == "json") {
    os << metrics_to_json(r).dump(2) << "\n";
  } else if (format == "csv") {
    os << "name,ap,support\n";
    if (!r.per_class_ap.empty() || !r.counts.empty()) {
      int total_support = 0;
      for (const auto& [cls, cnt] : r.counts) {
        os << cls << ","
           << (r.per_class_ap.count(cls) ? detail::fmt6(r.per_class_ap.at(cls)) : "")
           << "," << cnt << "\n";
        total_support += cnt;
      }
      os << "mean_ap," << detail::fmt6(r.mean_ap) << "," << total_support << "\n";
      os << "accuracy," << detail::fmt6(r.accuracy) << "," << total_support << "\n";
    }
  } else {
    throw std::invalid_argument("export_metrics: unknown format '" + format + "'");
  }
}

}  // namespace distill
