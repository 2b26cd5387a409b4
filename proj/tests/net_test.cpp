#include "distill/net.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "distill/optim.hpp"
#include "distill/rng.hpp"

using namespace distill;

namespace {

NetworkSpec three_conv_spec() {
  NetworkSpec spec;
  spec.input_shape = {3, 16, 16};
  spec.layers = {
      LayerSpec::conv("conv1", 4, 3, 1, 1), LayerSpec::relu("relu1"),
      LayerSpec::maxpool("pool1", 2, 2),    LayerSpec::conv("conv2", 8, 3, 1, 1),
      LayerSpec::relu("relu2"),             LayerSpec::maxpool("pool2", 2, 2),
      LayerSpec::conv("conv3", 8, 3, 1, 1), LayerSpec::relu("relu3"),
      LayerSpec::flatten("flat"),           LayerSpec::linear("fc", 5),
  };
  return spec;
}

Tensor random_input(Shape shape, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& v : data) v = rng.next_uniform(-1, 1);
  return Tensor::from_data(std::move(shape), std::move(data));
}

}  // namespace

TEST(ShapePropagation, ThreeConvToy) {
  const auto shapes = propagate_shapes(three_conv_spec());
  EXPECT_EQ(shapes[0], (Shape{4, 16, 16}));  // conv1
  EXPECT_EQ(shapes[2], (Shape{4, 8, 8}));    // pool1
  EXPECT_EQ(shapes[5], (Shape{8, 4, 4}));    // pool2
  EXPECT_EQ(shapes[7], (Shape{8, 4, 4}));    // relu3
  EXPECT_EQ(shapes[8], (Shape{128}));        // flatten
  EXPECT_EQ(shapes[9], (Shape{5}));          // fc
}

TEST(ShapePropagation, ErrorsNameTheLayer) {
  NetworkSpec spec;
  spec.input_shape = {3, 4, 4};
  spec.layers = {LayerSpec::conv("tiny", 2, 7, 1, 0)};
  try {
    propagate_shapes(spec);
    FAIL() << "expected failure";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("tiny"), std::string::npos);
  }

  NetworkSpec dup;
  dup.input_shape = {3, 4, 4};
  dup.layers = {LayerSpec::relu("a"), LayerSpec::relu("a")};
  EXPECT_THROW(propagate_shapes(dup), std::invalid_argument);
}

TEST(BuildNetwork, SameSeedBitIdentical) {
  const auto spec = three_conv_spec();
  const Network a = build_network(spec, InitKind::gaussian_fan_in, 7);
  const Network b = build_network(spec, InitKind::gaussian_fan_in, 7);
  const auto pa = a.parameters(), pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].first, pb[i].first);
    EXPECT_EQ(pa[i].second.data(), pb[i].second.data());
  }
  const Network c = build_network(spec, InitKind::gaussian_fan_in, 8);
  EXPECT_NE(c.parameters()[0].second.data(), pa[0].second.data());
}

TEST(BuildNetwork, ZeroInitGivesZeroOutputs) {
  NetworkSpec spec;
  spec.input_shape = {2, 8, 8};
  spec.layers = {LayerSpec::conv("c1", 4, 3, 1, 1), LayerSpec::relu("r1"),
                 LayerSpec::conv("c2", 4, 3, 1, 1), LayerSpec::relu("r2")};
  const Network net = build_network(spec, InitKind::zeros, 1);
  const Tensor out = forward(net, random_input({2, 2, 8, 8}, 3)).output;
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(BuildNetwork, FanInStdWithinTenPercent) {
  NetworkSpec spec;
  spec.input_shape = {8, 8, 8};
  spec.layers = {LayerSpec::conv("c", 32, 4, 1, 0)};  // 32*8*16 = 4096 weights
  const Network net = build_network(spec, InitKind::gaussian_fan_in, 123);
  const auto& w = net.params.at("c").at("weight").data();
  ASSERT_EQ(w.size(), 4096u);
  double sumsq = 0;
  for (double v : w) sumsq += v * v;
  const double std_emp = std::sqrt(sumsq / static_cast<double>(w.size()));
  const double std_want = std::sqrt(2.0 / (8 * 4 * 4));
  EXPECT_NEAR(std_emp, std_want, 0.1 * std_want);
  for (double v : net.params.at("c").at("bias").data()) EXPECT_EQ(v, 0.0);
}

TEST(Forward, TapsDoNotPerturbOutput) {
  const Network net =
      build_network(three_conv_spec(), InitKind::gaussian_fan_in, 5);
  const Tensor x = random_input({3, 3, 16, 16}, 4);
  const auto plain = forward(net, x);
  const auto tapped = forward(net, x, {"pool1", "conv3", "fc"});
  EXPECT_EQ(plain.output.data(), tapped.output.data());
  EXPECT_EQ(tapped.features.at("fc").data(), tapped.output.data());

  const auto shapes = propagate_shapes(net.spec);
  EXPECT_EQ(tapped.features.at("pool1").shape(), (Shape{3, 4, 8, 8}));
  EXPECT_EQ(shapes[2], (Shape{4, 8, 8}));
  EXPECT_EQ(tapped.features.at("conv3").shape(), (Shape{3, 8, 4, 4}));
}

TEST(Forward, UnknownTapOrBadInput) {
  const Network net =
      build_network(three_conv_spec(), InitKind::gaussian_fan_in, 5);
  EXPECT_THROW(forward(net, random_input({1, 3, 16, 16}, 1), {"nope"}),
               std::invalid_argument);
  EXPECT_THROW(forward(net, random_input({3, 16, 16}, 1)),
               std::invalid_argument);
  EXPECT_THROW(forward(net, random_input({1, 3, 8, 8}, 1)),
               std::invalid_argument);
}

TEST(SplitNetwork, RecompositionIsIdentity) {
  const Network net =
      build_network(three_conv_spec(), InitKind::gaussian_fan_in, 9);
  const auto [lower, upper] = split_network(net, "pool2");
  for (int i = 0; i < 10; ++i) {
    const Tensor x = random_input({2, 3, 16, 16}, 40 + i);
    const Tensor direct = forward(net, x).output;
    const Tensor composed = forward(upper, forward(lower, x).output).output;
    EXPECT_EQ(direct.data(), composed.data());
  }
  const auto shapes = propagate_shapes(net.spec);
  EXPECT_EQ(propagate_shapes(lower.spec).back(), shapes[5]);
  EXPECT_EQ(lower.parameter_count() + upper.parameter_count(),
            net.parameter_count());
}

TEST(SplitNetwork, SharesParameterViews) {
  Network net = build_network(three_conv_spec(), InitKind::gaussian_fan_in, 9);
  auto [lower, upper] = split_network(net, "pool1");
  net.params.at("conv1").at("weight").data()[0] = 123.0;
  EXPECT_EQ(lower.params.at("conv1").at("weight").data()[0], 123.0);
}

TEST(SplitNetwork, BoundaryLayersRejected) {
  const Network net =
      build_network(three_conv_spec(), InitKind::gaussian_fan_in, 9);
  EXPECT_THROW(split_network(net, "conv1"), std::invalid_argument);
  EXPECT_THROW(split_network(net, "fc"), std::invalid_argument);
  EXPECT_THROW(split_network(net, "missing"), std::invalid_argument);
}

TEST(Freeze, FreezeAllStopsTraining) {
  Network net = build_network(three_conv_spec(), InitKind::gaussian_fan_in, 2);
  freeze(net, "fc");
  const auto before = net.parameters();
  std::vector<std::vector<double>> snapshot;
  for (const auto& [n, t] : before) snapshot.push_back(t.data());

  OptimState optim;
  optim.learning_rate = 0.1;
  for (int step = 0; step < 5; ++step) {
    const Tensor x = random_input({2, 3, 16, 16}, 60 + step);
    const Tensor loss =
        l2_match_loss(forward(net, x).output, Tensor::zeros({2, 5}));
    zero_grads(net.parameters());
    loss.backward();
    sgd_step(net.parameters(), optim);
  }
  const auto after = net.parameters();
  for (std::size_t i = 0; i < after.size(); ++i) {
    EXPECT_EQ(after[i].second.data(), snapshot[i]);
  }
}

TEST(Freeze, PrefixFrozenRestTrains) {
  Network net = build_network(three_conv_spec(), InitKind::gaussian_fan_in, 2);
  freeze(net, "pool1");  // conv1 frozen, conv2/conv3/fc trainable
  const auto conv1_before = net.params.at("conv1").at("weight").data();
  const auto conv2_before = net.params.at("conv2").at("weight").data();

  OptimState optim;
  optim.learning_rate = 0.05;
  for (int step = 0; step < 100; ++step) {
    const Tensor x = random_input({2, 3, 16, 16}, 80 + step);
    const Tensor loss =
        l2_match_loss(forward(net, x).output, Tensor::filled({2, 5}, 1.0));
    zero_grads(net.parameters());
    loss.backward();
    sgd_step(net.parameters(), optim);
  }
  EXPECT_EQ(net.params.at("conv1").at("weight").data(), conv1_before);
  EXPECT_NE(net.params.at("conv2").at("weight").data(), conv2_before);
  EXPECT_THROW(freeze(net, "nope"), std::invalid_argument);
}

TEST(SpecJson, RoundTrip) {
  const auto spec = three_conv_spec();
  const NetworkSpec back = spec_from_json(spec_to_json(spec));
  EXPECT_EQ(back.input_shape, spec.input_shape);
  ASSERT_EQ(back.layers.size(), spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    EXPECT_EQ(back.layers[i].name, spec.layers[i].name);
    EXPECT_EQ(back.layers[i].kind, spec.layers[i].kind);
    EXPECT_EQ(back.layers[i].kernel, spec.layers[i].kernel);
    EXPECT_EQ(back.layers[i].out_channels, spec.layers[i].out_channels);
  }
  EXPECT_EQ(spec_to_json(back), spec_to_json(spec));
}
