#pragma once

// Supervision transfer: trains a student plus adaptation heads to reproduce
// a frozen teacher's mid-level features over paired two-modality data, and
// the downstream tooling that measures what the student learned (fine-tuning,
// frozen-feature probes, transfer-point sweeps).

#include <chrono>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "distill/checkpoint.hpp"
#include "distill/data.hpp"
#include "distill/inference.hpp"
#include "distill/net.hpp"
#include "distill/optim.hpp"

namespace distill {

struct TransferError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CalibrationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class LossKind { l2, sigmoid };

struct AdapterSpec {
  enum class Kind { conv1x1_relu, identity };
  Kind kind = Kind::conv1x1_relu;
  int out_channels = 0;  // 0 = inferred from the teacher tap
  bool use_scale = false;
};

/// One (teacher layer, student layer) matching pair with its adaptation head
/// and loss weight.
struct TransferPoint {
  std::string teacher_layer;
  std::string student_layer;
  AdapterSpec adapter;
  double weight = 1.0;
};

struct TransferOptions {
  std::vector<TransferPoint> points;
  LossKind loss = LossKind::l2;
  double sigmoid_alpha = 1.0;
  double sigmoid_tau = 0.0;
  int iterations = 0;
  int batch_size = 8;
  OptimState optim;  // lr/momentum/schedule template
  std::uint64_t seed = 0;
};

struct StepLoss {
  std::int64_t step = 0;  // 1-based
  std::vector<double> point_losses;
  double total = 0.0;
};

struct TransferResult {
  Network student;                  // trunk, truncated at the deepest transfer layer
  std::vector<Network> adapters;    // one per point
  std::vector<double> calibration;  // scale set per point (1.0 when unused)
  std::vector<StepLoss> history;
  double wall_seconds = 0.0;
};

/// Norm-matching factor: mean per-sample L2 norm of the teacher features over
/// the mean per-sample L2 norm of the (adapted) student features.
inline double calibrate_scale(const Tensor& teacher_feats,
                              const Tensor& student_feats) {
  if (teacher_feats.shape() != student_feats.shape()) {
    throw std::invalid_argument("calibrate_scale: shape mismatch " +
                                shape_str(teacher_feats.shape()) + " vs " +
                                shape_str(student_feats.shape()));
  }
  const int B = teacher_feats.shape()[0];
  const std::int64_t per = teacher_feats.numel() / B;
  auto mean_norm = [&](const Tensor& t) {
    double acc = 0.0;
    for (int b = 0; b < B; ++b) {
      const double* p = t.data().data() + static_cast<std::size_t>(b) * per;
      double sq = 0.0;
      for (std::int64_t i = 0; i < per; ++i) sq += p[i] * p[i];
      acc += std::sqrt(sq);
    }
    return acc / B;
  };
  const double t_norm = mean_norm(teacher_feats);
  const double s_norm = mean_norm(student_feats);
  if (s_norm < 1e-12) {
    throw CalibrationError(
        "calibrate_scale: student features have zero norm on the calibration batch");
  }
  return t_norm / s_norm;
}

namespace detail {

inline Shape tap_shape(const NetworkSpec& spec, const std::string& layer) {
  const int idx = spec.index_of(layer);
  if (idx < 0) throw std::invalid_argument("unknown tap layer '" + layer + "'");
  return propagate_shapes(spec)[idx];
}

/// The adaptation head as an ordinary network over the student tap shape.
inline NetworkSpec adapter_spec_for(const AdapterSpec& a, const Shape& student_tap,
                                    const Shape& teacher_tap,
                                    const std::string& point_name) {
  NetworkSpec spec;
  spec.input_shape = student_tap;
  if (a.kind == AdapterSpec::Kind::identity) {
    if (student_tap != teacher_tap) {
      throw std::invalid_argument(
          "transfer point " + point_name + ": identity adapter needs matching "
          "shapes, student " + shape_str(student_tap) + " vs teacher " +
          shape_str(teacher_tap));
    }
  } else {
    if (student_tap.size() != 3 || teacher_tap.size() != 3) {
      throw std::invalid_argument("transfer point " + point_name +
                                  ": conv1x1 adapter needs CxHxW taps");
    }
    if (student_tap[1] != teacher_tap[1] || student_tap[2] != teacher_tap[2]) {
      throw std::invalid_argument(
          "transfer point " + point_name + ": spatial sizes differ, student " +
          shape_str(student_tap) + " vs teacher " + shape_str(teacher_tap) +
          " (adjust conv padding in the specs)");
    }
    const int out_ch = a.out_channels > 0 ? a.out_channels : teacher_tap[0];
    if (out_ch != teacher_tap[0]) {
      throw std::invalid_argument("transfer point " + point_name +
                                  ": adapter out_channels " +
                                  std::to_string(out_ch) +
                                  " does not match teacher channels " +
                                  std::to_string(teacher_tap[0]));
    }
    spec.layers.push_back(LayerSpec::conv("adapt", out_ch, 1, 1, 0));
    spec.layers.push_back(LayerSpec::relu("adapt_relu"));
  }
  if (a.use_scale) spec.layers.push_back(LayerSpec::scale("adapt_scale"));
  return spec;
}

inline Tensor adapter_forward(const Network& adapter, const Tensor& x) {
  if (adapter.spec.layers.empty()) return x;
  return forward(adapter, x).output;
}

inline Network clone_network(const Network& src, bool requires_grad) {
  Network out;
  out.spec = src.spec;
  out.modality_tag = src.modality_tag;
  for (const auto& [lname, group] : src.params) {
    for (const auto& [pname, t] : group) {
      Tensor copy = t.detach();
      copy.set_requires_grad(requires_grad);
      out.params[lname][pname] = copy;
    }
  }
  return out;
}

inline NetworkSpec truncate_after(const NetworkSpec& spec, const std::string& layer) {
  const int idx = spec.index_of(layer);
  if (idx < 0) throw std::invalid_argument("unknown layer '" + layer + "'");
  NetworkSpec out;
  out.input_shape = spec.input_shape;
  out.layers.assign(spec.layers.begin(), spec.layers.begin() + idx + 1);
  return out;
}

}  // namespace detail

/// One optimization step of Eq.-style feature matching: teacher taps are
/// computed without gradient tracking, student and adapter gradients are
/// populated from the weighted per-point losses, and one sgd_step is applied.
inline StepLoss transfer_step(const PairedBatch& batch, const Network& teacher,
                              const Network& student,
                              const std::vector<Network>& adapters,
                              const std::vector<TransferPoint>& points,
                              LossKind loss, double alpha, double tau,
                              const NamedParams& trainable, OptimState& optim) {
  std::set<std::string> teacher_taps, student_taps;
  for (const auto& p : points) {
    teacher_taps.insert(p.teacher_layer);
    student_taps.insert(p.student_layer);
  }
  const auto t_feats = forward(teacher, batch.s, teacher_taps).features;
  const auto s_feats = forward(student, batch.d, student_taps).features;

  StepLoss out;
  Tensor total;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    const Tensor adapted =
        detail::adapter_forward(adapters[i], s_feats.at(p.student_layer));
    const Tensor target = t_feats.at(p.teacher_layer);
    if (adapted.shape() != target.shape()) {
      throw TransferError("transfer point " + p.teacher_layer + "->" +
                          p.student_layer + ": adapted shape " +
                          shape_str(adapted.shape()) + " != teacher shape " +
                          shape_str(target.shape()));
    }
    const Tensor point_loss =
        loss == LossKind::l2 ? l2_match_loss(adapted, target)
                             : sigmoid_match_loss(adapted, target, alpha, tau);
    out.point_losses.push_back(point_loss.item());
    const Tensor weighted = mul_scalar(point_loss, p.weight);
    total = total.defined() ? add(total, weighted) : weighted;
  }
  out.total = total.item();

  zero_grads(trainable);
  total.backward();
  sgd_step(trainable, optim);
  return out;
}

/// Runs the full transfer procedure: builds the (truncated) student and its
/// adapters, calibrates scale layers on the first batch, then applies
/// `iterations` transfer steps over seeded epoch shuffles.
inline TransferResult train_transfer(const Network& teacher,
                                     const PairedDataset& pairs,
                                     const NetworkSpec& student_spec,
                                     const TransferOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  if (opt.iterations <= 0) {
    throw std::invalid_argument("transfer: iterations must be > 0");
  }
  if (opt.batch_size < 1) {
    throw std::invalid_argument("transfer: batch_size must be >= 1");
  }
  if (opt.points.empty()) {
    throw std::invalid_argument("transfer: at least one transfer point required");
  }
  if (pairs.samples.empty()) {
    throw std::invalid_argument("transfer: paired dataset is empty");
  }
  opt.optim.validate();

  // Deepest student layer wins; everything above it has no training signal.
  int deepest = -1;
  for (const auto& p : opt.points) {
    const int idx = student_spec.index_of(p.student_layer);
    if (idx < 0) {
      throw std::invalid_argument("transfer: student has no layer '" +
                                  p.student_layer + "'");
    }
    deepest = std::max(deepest, idx);
  }
  NetworkSpec trunk_spec = detail::truncate_after(
      student_spec, student_spec.layers[deepest].name);

  const Network frozen_teacher = detail::clone_network(teacher, false);
  Network student = build_network(trunk_spec, InitKind::gaussian_fan_in,
                                  derive_seed(opt.seed, "student"),
                                  pairs.modality_names[1]);

  TransferResult res;
  for (std::size_t i = 0; i < opt.points.size(); ++i) {
    const auto& p = opt.points[i];
    const std::string point_name = p.teacher_layer + "->" + p.student_layer;
    if (!(p.weight > 0)) {
      throw std::invalid_argument("transfer point " + point_name +
                                  ": weight must be > 0");
    }
    const Shape t_shape = detail::tap_shape(frozen_teacher.spec, p.teacher_layer);
    const Shape s_shape = detail::tap_shape(trunk_spec, p.student_layer);
    const NetworkSpec aspec =
        detail::adapter_spec_for(p.adapter, s_shape, t_shape, point_name);
    res.adapters.push_back(build_network(
        aspec, InitKind::gaussian_fan_in,
        derive_seed(opt.seed, "adapter-" + std::to_string(i))));
  }
  res.calibration.assign(opt.points.size(), 1.0);

  NamedParams trainable = student.parameters();
  for (std::size_t i = 0; i < res.adapters.size(); ++i) {
    for (auto& [name, t] : res.adapters[i].parameters()) {
      trainable.emplace_back("adapter" + std::to_string(i) + "." + name, t);
    }
  }

  const std::uint64_t shuffle_seed = derive_seed(opt.seed, "shuffle");
  auto epoch_batches = batches(pairs.size(), opt.batch_size, shuffle_seed, 0);

  // Scale calibration on the first batch: with scale still at 1, measure the
  // norm ratio after the rest of the adapter and store it.
  bool any_scale = false;
  for (const auto& p : opt.points) any_scale = any_scale || p.adapter.use_scale;
  if (any_scale) {
    const PairedBatch first = gather(pairs, epoch_batches[0]);
    std::set<std::string> t_taps, s_taps;
    for (const auto& p : opt.points) {
      t_taps.insert(p.teacher_layer);
      s_taps.insert(p.student_layer);
    }
    const auto t_feats = forward(frozen_teacher, first.s, t_taps).features;
    const auto s_feats = forward(student, first.d, s_taps).features;
    for (std::size_t i = 0; i < opt.points.size(); ++i) {
      const auto& p = opt.points[i];
      if (!p.adapter.use_scale) continue;
      const Tensor adapted = detail::adapter_forward(
          res.adapters[i], s_feats.at(p.student_layer)).detach();
      const double ratio =
          calibrate_scale(t_feats.at(p.teacher_layer).detach(), adapted);
      res.adapters[i].params.at("adapt_scale").at("scale").data()[0] = ratio;
      res.calibration[i] = ratio;
    }
  }

  OptimState optim = opt.optim;
  std::size_t cursor = 0;
  std::uint64_t epoch = 0;
  for (int step = 1; step <= opt.iterations; ++step) {
    if (cursor >= epoch_batches.size()) {
      cursor = 0;
      ++epoch;
      epoch_batches = batches(pairs.size(), opt.batch_size, shuffle_seed, epoch);
    }
    const PairedBatch batch = gather(pairs, epoch_batches[cursor++]);
    StepLoss loss = transfer_step(batch, frozen_teacher, student, res.adapters,
                                  opt.points, opt.loss, opt.sigmoid_alpha,
                                  opt.sigmoid_tau, trainable, optim);
    loss.step = step;
    if (!std::isfinite(loss.total)) {
      throw TransferError("transfer: loss became non-finite at step " +
                          std::to_string(step));
    }
    res.history.push_back(std::move(loss));
  }

  res.student = std::move(student);
  res.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

// --- downstream evaluation of a transferred trunk ---

enum class FinetuneMode { all, fc_only, from_scratch };

inline FinetuneMode finetune_mode_from_name(const std::string& s) {
  if (s == "all") return FinetuneMode::all;
  if (s == "fc_only") return FinetuneMode::fc_only;
  if (s == "from_scratch") return FinetuneMode::from_scratch;
  throw std::invalid_argument("unknown finetune mode '" + s + "'");
}

struct TrainOptions {
  int epochs = 10;
  int batch_size = 8;
  OptimState optim;
  std::uint64_t seed = 0;
};

struct FitResult {
  std::vector<double> train_loss;     // per epoch, mean over batches
  std::vector<double> test_accuracy;  // per epoch
};

/// Supervised classifier training (cross entropy). Evaluates held-out
/// accuracy after every epoch.
inline FitResult fit_classifier(Network& net, const LabeledDataset& train,
                                const LabeledDataset& test,
                                const TrainOptions& opt) {
  if (train.samples.empty()) {
    throw std::invalid_argument("fit_classifier: empty training set");
  }
  opt.optim.validate();
  OptimState optim = opt.optim;
  const NamedParams params = net.parameters();
  const std::uint64_t shuffle_seed = derive_seed(opt.seed, "shuffle");
  FitResult res;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t nb = 0;
    for (const auto& idx :
         batches(train.size(), opt.batch_size, shuffle_seed, epoch)) {
      const LabeledBatch b = gather(train, idx);
      const Tensor loss =
          cross_entropy_loss(forward(net, b.x).output, b.labels);
      zero_grads(params);
      loss.backward();
      sgd_step(params, optim);
      loss_sum += loss.item();
      ++nb;
    }
    res.train_loss.push_back(loss_sum / static_cast<double>(nb));
    res.test_accuracy.push_back(test.samples.empty()
                                    ? 0.0
                                    : evaluate_accuracy(net, test));
  }
  return res;
}

struct FinetuneResult {
  Network classifier;
  FitResult fit;
  std::string trunk_top;  // transfer layer the head was attached at
};

/// Attaches a fresh head after the trunk's last layer and trains. `all`
/// fine-tunes everything, `fc_only` freezes the trunk, `from_scratch`
/// ignores the trunk parameters. The classifier is always built from
/// (seed)-derived random parameters first so that from_scratch is exactly
/// build + train-all of the same spec.
inline FinetuneResult finetune(const Network& trunk, const NetworkSpec& head_spec,
                               const LabeledDataset& train,
                               const LabeledDataset& test, FinetuneMode mode,
                               const TrainOptions& opt) {
  if (trunk.spec.layers.empty()) {
    throw std::invalid_argument("finetune: trunk has no layers");
  }
  const Shape trunk_out = propagate_shapes(trunk.spec).back();
  if (head_spec.input_shape != trunk_out) {
    throw std::invalid_argument("finetune: head expects input " +
                                shape_str(head_spec.input_shape) +
                                " but trunk produces " + shape_str(trunk_out));
  }
  NetworkSpec full;
  full.input_shape = trunk.spec.input_shape;
  full.layers = trunk.spec.layers;
  for (const auto& l : head_spec.layers) {
    if (full.has_layer(l.name)) {
      throw std::invalid_argument("finetune: head layer '" + l.name +
                                  "' collides with a trunk layer");
    }
    full.layers.push_back(l);
  }

  FinetuneResult res;
  res.trunk_top = trunk.spec.layers.back().name;
  res.classifier = build_network(full, InitKind::gaussian_fan_in,
                                 derive_seed(opt.seed, "classifier"),
                                 trunk.modality_tag);
  if (mode != FinetuneMode::from_scratch) {
    for (const auto& [lname, group] : trunk.params) {
      for (const auto& [pname, t] : group) {
        res.classifier.params.at(lname).at(pname).data() = t.data();
      }
    }
  }
  if (mode == FinetuneMode::fc_only) freeze(res.classifier, res.trunk_top);
  res.fit = fit_classifier(res.classifier, train, test, opt);
  return res;
}

struct ProbeOptions {
  int steps = 400;
  double learning_rate = 0.5;
  double momentum = 0.9;
  std::size_t batch_size = 64;  // feature extraction only
};

struct ProbeResult {
  double accuracy = 0.0;
  bool degenerate_features = false;
};

namespace detail {

inline Tensor tapped_features(const Network& net, const LabeledDataset& ds,
                              const std::string& layer, std::size_t batch_size) {
  std::vector<double> rows;
  int width = 0;
  for (std::size_t at = 0; at < ds.size(); at += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = at; i < std::min(ds.size(), at + batch_size); ++i) {
      idx.push_back(i);
    }
    const auto batch = gather(ds, idx);
    Tensor f = forward(net, batch.x, {layer}).features.at(layer);
    if (f.shape().size() == 4) f = spatial_mean(f);
    if (f.shape().size() != 2) f = flatten2d(f);
    width = f.shape()[1];
    rows.insert(rows.end(), f.data().begin(), f.data().end());
  }
  return Tensor::from_data({static_cast<int>(ds.size()), width}, std::move(rows));
}

}  // namespace detail

/// Frozen-feature probe: extracts spatially averaged features at `layer`,
/// standardizes them with train statistics, and trains a zero-initialized
/// linear + softmax classifier by full-batch gradient descent.
inline ProbeResult linear_probe(const Network& net, const std::string& layer,
                                const LabeledDataset& train,
                                const LabeledDataset& test,
                                const ProbeOptions& opt = {}) {
  if (!net.spec.has_layer(layer)) {
    throw std::invalid_argument("linear_probe: unknown layer '" + layer + "'");
  }
  Tensor f_train = detail::tapped_features(net, train, layer, opt.batch_size);
  Tensor f_test = detail::tapped_features(net, test, layer, opt.batch_size);
  const int D = f_train.shape()[1];
  const int N = f_train.shape()[0];
  const int C = train.num_classes();

  ProbeResult res;
  double max_abs = 0.0;
  for (double v : f_train.data()) max_abs = std::max(max_abs, std::abs(v));
  if (max_abs == 0.0) {
    res.degenerate_features = true;
    std::cerr << "linear_probe: warning: all-zero features at layer '" << layer
              << "', probing anyway\n";
  }

  // Per-dimension standardization (an affine reparameterization; the probe
  // stays linear in the raw features).
  std::vector<double> mean(D, 0.0), inv_std(D, 0.0);
  for (int n = 0; n < N; ++n) {
    for (int d = 0; d < D; ++d) mean[d] += f_train.data()[static_cast<std::size_t>(n) * D + d];
  }
  for (int d = 0; d < D; ++d) mean[d] /= N;
  for (int n = 0; n < N; ++n) {
    for (int d = 0; d < D; ++d) {
      const double v = f_train.data()[static_cast<std::size_t>(n) * D + d] - mean[d];
      inv_std[d] += v * v;
    }
  }
  for (int d = 0; d < D; ++d) {
    inv_std[d] = 1.0 / std::max(std::sqrt(inv_std[d] / N), 1e-8);
  }
  auto standardize = [&](Tensor& t) {
    const int rows = t.shape()[0];
    for (int n = 0; n < rows; ++n) {
      for (int d = 0; d < D; ++d) {
        auto& v = t.data()[static_cast<std::size_t>(n) * D + d];
        v = (v - mean[d]) * inv_std[d];
      }
    }
  };
  standardize(f_train);
  standardize(f_test);

  Tensor w = Tensor::zeros({D, C});
  Tensor b = Tensor::zeros({C});
  w.set_requires_grad(true);
  b.set_requires_grad(true);
  const NamedParams params{{"probe.weight", w}, {"probe.bias", b}};
  OptimState optim;
  optim.learning_rate = opt.learning_rate;
  optim.momentum = opt.momentum;
  const auto train_labels = labels_of(train);
  for (int step = 0; step < opt.steps; ++step) {
    const Tensor loss =
        cross_entropy_loss(linear(f_train, w, b), train_labels);
    zero_grads(params);
    loss.backward();
    sgd_step(params, optim);
  }
  res.accuracy = accuracy(argmax_rows(linear(f_test, w, b).detach()),
                          labels_of(test));
  return res;
}

// --- transfer-point sweep ---

struct SweepCandidate {
  std::string teacher_layer;
  std::string student_layer;
};

struct SweepRow {
  SweepCandidate point;
  bool skipped = false;
  std::string reason;
  double accuracy = 0.0;
  double final_transfer_loss = 0.0;
};

/// Runs transfer + frozen-trunk fine-tuning for every candidate point under
/// identical seeds and budgets. Candidates whose shapes cannot compose are
/// reported as skipped rows rather than failing the sweep.
inline std::vector<SweepRow> sweep_layers(
    const Network& teacher, const PairedDataset& pairs,
    const NetworkSpec& classifier_spec, const std::vector<SweepCandidate>& candidates,
    const TransferOptions& transfer_template, const TrainOptions& finetune_opt,
    const AdapterSpec& adapter, const LabeledDataset& train_d,
    const LabeledDataset& test_d) {
  std::vector<SweepRow> rows;
  for (const auto& cand : candidates) {
    SweepRow row;
    row.point = cand;
    try {
      TransferOptions opt = transfer_template;
      opt.points = {{cand.teacher_layer, cand.student_layer, adapter, 1.0}};
      TransferResult tr = train_transfer(teacher, pairs, classifier_spec, opt);

      const int idx = classifier_spec.index_of(cand.student_layer);
      if (idx < 0) {
        throw std::invalid_argument("sweep: classifier spec has no layer '" +
                                    cand.student_layer + "'");
      }
      NetworkSpec head;
      head.input_shape = propagate_shapes(classifier_spec)[idx];
      head.layers.assign(classifier_spec.layers.begin() + idx + 1,
                         classifier_spec.layers.end());
      const FinetuneResult ft =
          finetune(tr.student, head, train_d, test_d, FinetuneMode::fc_only,
                   finetune_opt);
      row.accuracy = ft.fit.test_accuracy.back();
      row.final_transfer_loss = tr.history.back().total;
    } catch (const std::exception& e) {
      row.skipped = true;
      row.reason = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace distill
