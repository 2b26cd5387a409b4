#pragma once

// Dataset containers, scene-respecting splits, seeded batch iteration, and
// manifest + PTEN dataset files.

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "distill/pten.hpp"
#include "distill/rng.hpp"
#include "distill/tensor.hpp"

namespace distill {

struct PairedSample {
  std::string scene_id;
  int frame_id = 0;
  Tensor s;  // source modality
  Tensor d;  // target modality
};

/// Aligned unlabeled samples: index i holds the same scene/frame in both
/// modalities.
struct PairedDataset {
  std::vector<PairedSample> samples;
  std::array<std::string, 2> modality_names{"s", "d"};

  std::size_t size() const { return samples.size(); }
};

struct LabeledSample {
  std::string scene_id;
  int frame_id = 0;
  Tensor x;
  int label = 0;
};

struct LabeledDataset {
  std::vector<LabeledSample> samples;
  std::vector<std::string> class_names;

  std::size_t size() const { return samples.size(); }
  int num_classes() const { return static_cast<int>(class_names.size()); }

  void validate() const {
    for (const auto& s : samples) {
      if (s.label < 0 || s.label >= num_classes()) {
        throw std::invalid_argument("labeled dataset: label " +
                                    std::to_string(s.label) + " outside [0, " +
                                    std::to_string(num_classes()) + ")");
      }
    }
  }
};

/// Scene assignment for train/val/test. Sets must be pairwise disjoint and
/// together cover every scene of the dataset they are applied to.
struct SplitSpec {
  std::set<std::string> train, val, test;

  void validate() const {
    auto overlap = [](const std::set<std::string>& a,
                      const std::set<std::string>& b) {
      for (const auto& s : a) {
        if (b.count(s)) return true;
      }
      return false;
    };
    if (overlap(train, val) || overlap(train, test) || overlap(val, test)) {
      throw std::invalid_argument("split spec: scene sets are not disjoint");
    }
  }

  /// Deterministic assignment of `scenes` by seeded shuffle and fractions.
  static SplitSpec random(std::vector<std::string> scenes, double train_frac,
                          double val_frac, std::uint64_t seed) {
    SplitMix64 rng(derive_seed(seed, "scene-split"));
    seeded_shuffle(scenes, rng);
    SplitSpec spec;
    const std::size_t n = scenes.size();
    const auto n_train = static_cast<std::size_t>(train_frac * n);
    const auto n_val = static_cast<std::size_t>(val_frac * n);
    for (std::size_t i = 0; i < n; ++i) {
      if (i < n_train) {
        spec.train.insert(scenes[i]);
      } else if (i < n_train + n_val) {
        spec.val.insert(scenes[i]);
      } else {
        spec.test.insert(scenes[i]);
      }
    }
    return spec;
  }
};

namespace detail {

template <typename Dataset>
std::array<Dataset, 3> split_impl(const Dataset& ds, const SplitSpec& spec) {
  spec.validate();
  std::array<Dataset, 3> out{ds, ds, ds};
  for (auto& o : out) o.samples.clear();
  for (const auto& s : ds.samples) {
    if (spec.train.count(s.scene_id)) {
      out[0].samples.push_back(s);
    } else if (spec.val.count(s.scene_id)) {
      out[1].samples.push_back(s);
    } else if (spec.test.count(s.scene_id)) {
      out[2].samples.push_back(s);
    } else {
      throw std::invalid_argument("split: scene '" + s.scene_id +
                                  "' is not assigned to any split");
    }
  }
  return out;
}

}  // namespace detail

/// Partitions by scene id; every scene must be assigned to exactly one split.
inline std::array<PairedDataset, 3> split_by_scene(const PairedDataset& ds,
                                                   const SplitSpec& spec) {
  return detail::split_impl(ds, spec);
}

inline std::array<LabeledDataset, 3> split_by_scene(const LabeledDataset& ds,
                                                    const SplitSpec& spec) {
  return detail::split_impl(ds, spec);
}

/// Index batches for one epoch: seeded shuffle of 0..n-1, chunked; the final
/// short batch is emitted. Pairing alignment is positional, so shuffling
/// indices keeps pairs aligned.
inline std::vector<std::vector<std::size_t>> batches(std::size_t n,
                                                     std::size_t batch_size,
                                                     std::uint64_t seed,
                                                     std::uint64_t epoch) {
  if (batch_size < 1) throw std::invalid_argument("batches: batch_size must be >= 1");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  SplitMix64 rng(derive_seed(seed, epoch));
  seeded_shuffle(idx, rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t at = 0; at < n; at += batch_size) {
    const std::size_t end = std::min(n, at + batch_size);
    out.emplace_back(idx.begin() + at, idx.begin() + end);
  }
  return out;
}

/// Stacks per-sample CHW tensors into one N x C x H x W batch.
inline Tensor stack(const std::vector<Tensor>& items) {
  if (items.empty()) throw std::invalid_argument("stack: no tensors");
  const Shape& per = items[0].shape();
  Shape out_shape;
  out_shape.push_back(static_cast<int>(items.size()));
  out_shape.insert(out_shape.end(), per.begin(), per.end());
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(shape_numel(out_shape)));
  for (const auto& t : items) {
    if (t.shape() != per) {
      throw std::invalid_argument("stack: mismatched sample shapes " +
                                  shape_str(per) + " vs " + shape_str(t.shape()));
    }
    data.insert(data.end(), t.data().begin(), t.data().end());
  }
  return Tensor::from_data(std::move(out_shape), std::move(data));
}

struct LabeledBatch {
  Tensor x;
  std::vector<int> labels;
};

inline LabeledBatch gather(const LabeledDataset& ds,
                           const std::vector<std::size_t>& idx) {
  std::vector<Tensor> xs;
  LabeledBatch b;
  for (std::size_t i : idx) {
    xs.push_back(ds.samples[i].x);
    b.labels.push_back(ds.samples[i].label);
  }
  b.x = stack(xs);
  return b;
}

struct PairedBatch {
  Tensor s;
  Tensor d;
};

inline PairedBatch gather(const PairedDataset& ds,
                          const std::vector<std::size_t>& idx) {
  std::vector<Tensor> ss, dd;
  for (std::size_t i : idx) {
    ss.push_back(ds.samples[i].s);
    dd.push_back(ds.samples[i].d);
  }
  return {stack(ss), stack(dd)};
}

/// Scene-respecting subset with `per_class` samples of every class (whole
/// scenes, seeded scene order). Throws if a class cannot be filled.
inline LabeledDataset take_per_class(const LabeledDataset& ds, int per_class,
                                     std::uint64_t seed) {
  std::map<std::string, std::vector<std::size_t>> by_scene;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    by_scene[ds.samples[i].scene_id].push_back(i);
  }
  std::vector<std::string> scenes;
  for (const auto& [k, v] : by_scene) scenes.push_back(k);
  SplitMix64 rng(derive_seed(seed, "take-per-class"));
  seeded_shuffle(scenes, rng);

  std::vector<int> have(ds.class_names.size(), 0);
  LabeledDataset out;
  out.class_names = ds.class_names;
  for (const auto& scene : scenes) {
    const auto& idxs = by_scene[scene];
    const int label = ds.samples[idxs[0]].label;
    if (have[label] >= per_class) continue;
    for (std::size_t i : idxs) out.samples.push_back(ds.samples[i]);
    have[label] += static_cast<int>(idxs.size());
  }
  for (std::size_t c = 0; c < have.size(); ++c) {
    if (have[c] < per_class) {
      throw std::invalid_argument("take_per_class: class '" +
                                  ds.class_names[c] + "' has only " +
                                  std::to_string(have[c]) + " of " +
                                  std::to_string(per_class) + " samples");
    }
  }
  return out;
}

// --- dataset files ---
//
// A dataset on disk is a JSON manifest plus one PTEN tensor container. Every
// sample entry references its tensors as {file, tensor name}; file paths are
// relative to the manifest.

inline void save_labeled_dataset(const LabeledDataset& ds,
                                 const std::string& manifest_path,
                                 const std::string& tensor_file) {
  namespace fs = std::filesystem;
  NamedTensors tensors;
  nlohmann::json samples = nlohmann::json::array();
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    const std::string tname =
        s.scene_id + "_f" + std::to_string(s.frame_id) + "_x";
    tensors.emplace_back(tname, s.x);
    samples.push_back({{"scene", s.scene_id},
                       {"frame", s.frame_id},
                       {"label", s.label},
                       {"x", {{"file", tensor_file}, {"tensor", tname}}}});
  }
  const fs::path dir = fs::path(manifest_path).parent_path();
  save_pten((dir / tensor_file).string(), tensors);

  nlohmann::json manifest;
  manifest["format"] = "modal-distill-dataset";
  manifest["version"] = 1;
  manifest["kind"] = "labeled";
  manifest["class_names"] = ds.class_names;
  manifest["samples"] = std::move(samples);
  std::ofstream os(manifest_path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write '" + manifest_path + "'");
  os << manifest.dump(2) << "\n";
}

inline void save_paired_dataset(const PairedDataset& ds,
                                const std::string& manifest_path,
                                const std::string& tensor_file) {
  namespace fs = std::filesystem;
  NamedTensors tensors;
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& s : ds.samples) {
    const std::string base = s.scene_id + "_f" + std::to_string(s.frame_id);
    tensors.emplace_back(base + "_s", s.s);
    tensors.emplace_back(base + "_d", s.d);
    samples.push_back(
        {{"scene", s.scene_id},
         {"frame", s.frame_id},
         {"s", {{"file", tensor_file}, {"tensor", base + "_s"}}},
         {"d", {{"file", tensor_file}, {"tensor", base + "_d"}}}});
  }
  const fs::path dir = fs::path(manifest_path).parent_path();
  save_pten((dir / tensor_file).string(), tensors);

  nlohmann::json manifest;
  manifest["format"] = "modal-distill-dataset";
  manifest["version"] = 1;
  manifest["kind"] = "paired";
  manifest["modalities"] = {ds.modality_names[0], ds.modality_names[1]};
  manifest["samples"] = std::move(samples);
  std::ofstream os(manifest_path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write '" + manifest_path + "'");
  os << manifest.dump(2) << "\n";
}

namespace detail {

struct TensorResolver {
  std::filesystem::path dir;
  std::map<std::string, PtenFile> loaded;

  const Tensor& get(const nlohmann::json& ref) {
    const auto file = ref.at("file").get<std::string>();
    if (!loaded.count(file)) loaded[file] = load_pten((dir / file).string());
    return loaded[file].tensor(ref.at("tensor").get<std::string>());
  }
};

inline nlohmann::json read_manifest(const std::string& path,
                                    const std::string& expect_kind) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open dataset manifest '" + path + "'");
  nlohmann::json manifest;
  try {
    is >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("dataset manifest '" + path +
                             "' is not valid JSON: " + e.what());
  }
  if (manifest.value("format", "") != "modal-distill-dataset" ||
      manifest.value("version", 0) != 1) {
    throw std::runtime_error("'" + path + "' is not a v1 dataset manifest");
  }
  if (manifest.value("kind", "") != expect_kind) {
    throw std::runtime_error("dataset '" + path + "' has kind '" +
                             manifest.value("kind", "") + "', expected '" +
                             expect_kind + "'");
  }
  return manifest;
}

}  // namespace detail

inline LabeledDataset load_labeled_dataset(const std::string& manifest_path) {
  const auto manifest = detail::read_manifest(manifest_path, "labeled");
  detail::TensorResolver resolver{
      std::filesystem::path(manifest_path).parent_path(), {}};
  LabeledDataset ds;
  ds.class_names = manifest.at("class_names").get<std::vector<std::string>>();
  for (const auto& e : manifest.at("samples")) {
    LabeledSample s;
    s.scene_id = e.at("scene").get<std::string>();
    s.frame_id = e.at("frame").get<int>();
    s.label = e.at("label").get<int>();
    s.x = resolver.get(e.at("x"));
    ds.samples.push_back(std::move(s));
  }
  ds.validate();
  return ds;
}

inline PairedDataset load_paired_dataset(const std::string& manifest_path) {
  const auto manifest = detail::read_manifest(manifest_path, "paired");
  detail::TensorResolver resolver{
      std::filesystem::path(manifest_path).parent_path(), {}};
  PairedDataset ds;
  const auto mods = manifest.at("modalities").get<std::vector<std::string>>();
  if (mods.size() == 2) ds.modality_names = {mods[0], mods[1]};
  for (const auto& e : manifest.at("samples")) {
    PairedSample s;
    s.scene_id = e.at("scene").get<std::string>();
    s.frame_id = e.at("frame").get<int>();
    s.s = resolver.get(e.at("s"));
    s.d = resolver.get(e.at("d"));
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace distill
