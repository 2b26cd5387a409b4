#include "distill/data.hpp"

#include <gtest/gtest.h>
#include <unistd.h>

#include <filesystem>
#include <set>

#include "distill/inference.hpp"
#include "distill/synthetic.hpp"

using namespace distill;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("data_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

ToyShapesConfig small_cfg(std::uint64_t seed) {
  ToyShapesConfig cfg;
  cfg.num_scenes = 12;
  cfg.frames_per_scene = 5;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST(ToyShapes, DeterministicAndBalanced) {
  const LabeledDataset a = make_toy_shapes(small_cfg(5));
  const LabeledDataset b = make_toy_shapes(small_cfg(5));
  ASSERT_EQ(a.size(), 60u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.samples[i].scene_id, b.samples[i].scene_id);
    EXPECT_EQ(a.samples[i].label, b.samples[i].label);
    EXPECT_EQ(a.samples[i].x.data(), b.samples[i].x.data());
  }
  std::map<int, int> counts;
  std::map<std::string, std::set<int>> scene_labels;
  for (const auto& s : a.samples) {
    counts[s.label]++;
    scene_labels[s.scene_id].insert(s.label);
    EXPECT_EQ(s.x.shape(), (Shape{3, 32, 32}));
  }
  for (const auto& [label, n] : counts) EXPECT_EQ(n, 15);
  for (const auto& [scene, labels] : scene_labels) EXPECT_EQ(labels.size(), 1u);

  const LabeledDataset c = make_toy_shapes(small_cfg(6));
  EXPECT_NE(c.samples[0].x.data(), a.samples[0].x.data());
}

TEST(PairedSynthetic, ChannelPermuteInverseRestores) {
  const LabeledDataset base = make_toy_shapes(small_cfg(2));
  const PairedBundle bundle =
      generate_paired_synthetic(PairKind::channel_permute, base, 3);
  const auto perm = bundle.transform["perm"].get<std::vector<int>>();
  std::vector<int> inverse(perm.size());
  for (std::size_t c = 0; c < perm.size(); ++c) inverse[perm[c]] = static_cast<int>(c);
  for (int i = 0; i < 5; ++i) {
    const Tensor round =
        apply_channel_permute(bundle.pairs.samples[i].d, inverse);
    EXPECT_EQ(round.data(), bundle.pairs.samples[i].s.data());
  }
}

TEST(PairedSynthetic, AffineIsBijective) {
  const ChannelAffine t = random_channel_affine(3, 17);
  const ChannelAffine inv = invert(t);
  const LabeledDataset base = make_toy_shapes(small_cfg(4));
  for (int i = 0; i < 5; ++i) {
    const Tensor fwd = apply_channel_affine(base.samples[i].x, t);
    const Tensor back = apply_channel_affine(fwd, inv);
    double max_err = 0;
    for (std::size_t k = 0; k < back.data().size(); ++k) {
      max_err = std::max(max_err,
                         std::abs(back.data()[k] - base.samples[i].x.data()[k]));
    }
    EXPECT_LT(max_err, 1e-9);
  }
}

TEST(PairedSynthetic, GeneratorsArePureFunctionsOfSeed) {
  const LabeledDataset base = make_toy_shapes(small_cfg(2));
  const PairedBundle a =
      generate_paired_synthetic(PairKind::invertible_affine, base, 9);
  const PairedBundle b =
      generate_paired_synthetic(PairKind::invertible_affine, base, 9);
  const PairedBundle c =
      generate_paired_synthetic(PairKind::invertible_affine, base, 10);
  for (std::size_t i = 0; i < a.pairs.size(); ++i) {
    EXPECT_EQ(a.pairs.samples[i].d.data(), b.pairs.samples[i].d.data());
  }
  EXPECT_NE(a.pairs.samples[0].d.data(), c.pairs.samples[0].d.data());
}

TEST(PairedSynthetic, ComplementaryHalvesZeroOppositeSides) {
  const LabeledDataset base = make_toy_shapes(small_cfg(8));
  const PairedBundle bundle =
      generate_paired_synthetic(PairKind::complementary_halves, base, 1);
  const auto& s = bundle.pairs.samples[0].s;
  const auto& d = bundle.pairs.samples[0].d;
  const int W = 32;
  for (int c = 0; c < 3; ++c) {
    for (int h = 0; h < 32; ++h) {
      for (int w = 0; w < W; ++w) {
        const double sv = s.data()[(c * 32 + h) * W + w];
        const double dv = d.data()[(c * 32 + h) * W + w];
        if (w < W / 2) {
          EXPECT_EQ(dv, 0.0);
        } else {
          EXPECT_EQ(sv, 0.0);
        }
      }
    }
  }
  // s + d reconstructs the base image
  for (std::size_t k = 0; k < s.data().size(); ++k) {
    EXPECT_EQ(s.data()[k] + d.data()[k], base.samples[0].x.data()[k]);
  }
}

TEST(SplitByScene, CountsConserveAndScenesAreDisjoint) {
  ToyShapesConfig cfg = small_cfg(3);
  cfg.num_scenes = 100;
  const LabeledDataset ds = make_toy_shapes(cfg);
  std::vector<std::string> scenes;
  for (const auto& s : ds.samples) {
    if (scenes.empty() || scenes.back() != s.scene_id) scenes.push_back(s.scene_id);
  }
  const SplitSpec spec = SplitSpec::random(scenes, 0.6, 0.2, 42);
  const auto [train, val, test] = split_by_scene(ds, spec);
  EXPECT_EQ(train.size() + val.size() + test.size(), ds.size());

  // brute-force pairwise intersection of the scene sets
  auto scene_set = [](const LabeledDataset& d) {
    std::set<std::string> out;
    for (const auto& s : d.samples) out.insert(s.scene_id);
    return out;
  };
  const auto a = scene_set(train), b = scene_set(val), c = scene_set(test);
  for (const auto& s : a) {
    EXPECT_FALSE(b.count(s));
    EXPECT_FALSE(c.count(s));
  }
  for (const auto& s : b) EXPECT_FALSE(c.count(s));
}

TEST(SplitByScene, SingletonPartitionsAndUnassignedError) {
  ToyShapesConfig cfg = small_cfg(1);
  cfg.num_scenes = 3;
  const LabeledDataset ds = make_toy_shapes(cfg);
  std::set<std::string> scenes;
  for (const auto& s : ds.samples) scenes.insert(s.scene_id);
  auto it = scenes.begin();
  SplitSpec spec;
  spec.train = {*it++};
  spec.val = {*it++};
  spec.test = {*it++};
  const auto [train, val, test] = split_by_scene(ds, spec);
  EXPECT_EQ(train.size(), 5u);
  EXPECT_EQ(val.size(), 5u);
  EXPECT_EQ(test.size(), 5u);

  spec.test.clear();
  EXPECT_THROW(split_by_scene(ds, spec), std::invalid_argument);

  SplitSpec overlapping;
  overlapping.train = {"a"};
  overlapping.val = {"a"};
  EXPECT_THROW(overlapping.validate(), std::invalid_argument);
}

TEST(Batches, FullBatchIsPermutation) {
  const auto b = batches(10, 10, 3, 0);
  ASSERT_EQ(b.size(), 1u);
  std::set<std::size_t> seen(b[0].begin(), b[0].end());
  EXPECT_EQ(seen.size(), 10u);
}

TEST(Batches, SeedEpochDeterminism) {
  EXPECT_EQ(batches(20, 7, 5, 2), batches(20, 7, 5, 2));
  EXPECT_NE(batches(20, 7, 5, 2), batches(20, 7, 5, 3));
  EXPECT_NE(batches(20, 7, 5, 2), batches(20, 7, 6, 2));
  // short final batch emitted
  const auto b = batches(20, 7, 5, 2);
  ASSERT_EQ(b.size(), 3u);
  EXPECT_EQ(b.back().size(), 6u);
}

TEST(Batches, PairAlignmentSurvivesShuffling) {
  const LabeledDataset base = make_toy_shapes(small_cfg(7));
  const PairedBundle bundle =
      generate_paired_synthetic(PairKind::invertible_affine, base, 6);
  for (const auto& idx : batches(bundle.pairs.size(), 8, 11, 4)) {
    const PairedBatch batch = gather(bundle.pairs, idx);
    // positional alignment: rebuild ids from indices and compare both sides
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto& sample = bundle.pairs.samples[idx[k]];
      for (int t = 0; t < 10; ++t) {
        EXPECT_EQ(batch.s.data()[k * 3 * 32 * 32 + t], sample.s.data()[t]);
        EXPECT_EQ(batch.d.data()[k * 3 * 32 * 32 + t], sample.d.data()[t]);
      }
    }
  }
}

TEST(TakePerClass, SceneRespectingSubset) {
  ToyShapesConfig cfg = small_cfg(12);
  cfg.num_scenes = 40;
  const LabeledDataset ds = make_toy_shapes(cfg);
  const LabeledDataset sub = take_per_class(ds, 10, 3);
  std::map<int, int> counts;
  std::map<std::string, int> frames_per_scene;
  for (const auto& s : sub.samples) {
    counts[s.label]++;
    frames_per_scene[s.scene_id]++;
  }
  for (const auto& [label, n] : counts) EXPECT_EQ(n, 10);
  for (const auto& [scene, n] : frames_per_scene) EXPECT_EQ(n, 5);
  EXPECT_THROW(take_per_class(ds, 1000, 3), std::invalid_argument);
}

TEST(DatasetFiles, LabeledRoundTrip) {
  TempDir dir;
  const LabeledDataset ds = make_toy_shapes(small_cfg(9));
  save_labeled_dataset(ds, dir.file("labeled.json"), "tensors.pten");
  const LabeledDataset back = load_labeled_dataset(dir.file("labeled.json"));
  ASSERT_EQ(back.size(), ds.size());
  EXPECT_EQ(back.class_names, ds.class_names);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(back.samples[i].scene_id, ds.samples[i].scene_id);
    EXPECT_EQ(back.samples[i].frame_id, ds.samples[i].frame_id);
    EXPECT_EQ(back.samples[i].label, ds.samples[i].label);
    for (std::size_t k = 0; k < 20; ++k) {
      EXPECT_EQ(back.samples[i].x.data()[k],
                static_cast<double>(
                    static_cast<float>(ds.samples[i].x.data()[k])));
    }
  }
}

TEST(DatasetFiles, PairedRoundTripKeepsAlignment) {
  TempDir dir;
  const LabeledDataset base = make_toy_shapes(small_cfg(10));
  const PairedBundle bundle =
      generate_paired_synthetic(PairKind::channel_permute, base, 2);
  save_paired_dataset(bundle.pairs, dir.file("pairs.json"), "tensors.pten");
  const PairedDataset back = load_paired_dataset(dir.file("pairs.json"));
  ASSERT_EQ(back.size(), bundle.pairs.size());
  EXPECT_EQ(back.modality_names, bundle.pairs.modality_names);
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back.samples[i].scene_id, bundle.pairs.samples[i].scene_id);
    EXPECT_EQ(back.samples[i].frame_id, bundle.pairs.samples[i].frame_id);
  }
  EXPECT_THROW(load_paired_dataset(dir.file("missing.json")), std::runtime_error);
  EXPECT_THROW(load_labeled_dataset(dir.file("pairs.json")), std::runtime_error);
}
