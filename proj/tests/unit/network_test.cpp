#include <gtest/gtest.h>

#include <sstream>

#include "handocc/error.hpp"
#include "handocc/grad_check.hpp"
#include "handocc/model.hpp"
#include "handocc/ops.hpp"
#include "test_util.hpp"

namespace handocc {
namespace {

using testing::random_tensor;

net::NetworkConfig tiny() {
  net::NetworkConfig c;
  c.image_size = 32;
  c.channels = 8;
  c.stage_channels = {4, 4, 8, 8};
  c.necessity_hidden = 4;
  c.heatmap_hidden = 8;
  c.head_channels = 4;
  c.head_blocks = 1;
  return c;
}

void zero_all(nn::ParameterSet& p) {
  for (std::size_t i = 0; i < p.size(); ++i) p.value(i) = Tensor(p.value(i).shape());
}

TEST(NetworkConfig, Validation) {
  net::NetworkConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.tokens(), 64u);
  c.feature_stride = 4;
  EXPECT_THROW(c.validate(), ConfigError);
  c.feature_stride = 16;
  c.image_size = 40;
  EXPECT_THROW(c.validate(), ConfigError);
  c.image_size = 64;
  c.channels = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Backbone, OutputResolutionFollowsStride) {
  for (std::size_t stride : {8u, 16u}) {
    net::NetworkConfig c = tiny();
    c.feature_stride = stride;
    nn::ParameterSet p;
    const net::Backbone bb = net::Backbone::create(p, nn::Initializer(1), c);
    ad::Tape t;
    nn::Binding b(t, p, false);
    const ad::Var f = bb(b, t.constant(random_tensor({32, 32, 3}, 2, 0, 1)));
    EXPECT_EQ(f.shape(), (Shape{32 / stride, 32 / stride, 8}));
  }
}

TEST(Necessity, StrictlyInsideUnitInterval) {
  nn::ParameterSet p;
  const net::NecessityHead head = net::NecessityHead::create(p, nn::Initializer(3), tiny());
  ad::Tape t;
  nn::Binding b(t, p, false);
  const Tensor m = head(b, t.constant(random_tensor({4, 4, 8}, 4, -3, 3))).value();
  EXPECT_EQ(m.shape(), (Shape{4, 4, 1}));
  for (double x : m.data()) {
    EXPECT_GT(x, 0.0);
    EXPECT_LT(x, 1.0);
  }
}

TEST(FeatureSplit, Examples) {
  ad::Tape t;
  const Tensor f = random_tensor({3, 3, 5}, 5);
  const net::FeatureSplit ones = net::split_features(t.constant(f), t.constant(Tensor(Shape{3, 3, 1}, 1.0)));
  EXPECT_EQ(ones.primary.value(), f);
  EXPECT_EQ(ones.secondary.value(), Tensor(Shape{3, 3, 5}));
  const net::FeatureSplit half = net::split_features(t.constant(f), t.constant(Tensor(Shape{3, 3, 1}, 0.5)));
  EXPECT_EQ(half.primary.value(), ops::scale(f, 0.5));
  EXPECT_EQ(half.secondary.value(), ops::scale(f, 0.5));
}

TEST(FeatureSplit, PartsSumToFeatures) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    ad::Tape t;
    const Tensor f = random_tensor({4, 4, 6}, s, -10, 10), m = random_tensor({4, 4, 1}, s + 100, 0, 1);
    const net::FeatureSplit sp = net::split_features(t.constant(f), t.constant(m));
    const Tensor sum = ops::add(sp.primary.value(), sp.secondary.value());
    for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(sum[i], f[i], 1e-9);
  }
}

TEST(FeatureSplit, ShapeMismatchIsRejected) {
  ad::Tape t;
  EXPECT_THROW(net::split_features(t.constant(Tensor(Shape{4, 4, 6})), t.constant(Tensor(Shape{2, 2, 1}))), DimensionError);
}

TEST(HeatmapHead, ShapeAndZeroWeightsGiveConstantMaps) {
  nn::ParameterSet p;
  const net::HeatmapHead head = net::HeatmapHead::create(p, nn::Initializer(6), tiny());
  ad::Tape t;
  const ad::Var f = t.constant(random_tensor({4, 4, 8}, 7));
  {
    nn::Binding b(t, p, false);
    EXPECT_EQ(net::heatmaps_from_map(head(b, f)).shape(), (Shape{11, 4, 4}));
  }
  zero_all(p);
  p.value(head.project.bias) = Tensor::vector({1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11});
  nn::Binding b(t, p, false);
  const Tensor h = net::heatmaps_from_map(head(b, f)).value();
  for (std::size_t j = 0; j < 11; ++j) {
    for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(h[j * 16 + i], static_cast<double>(j + 1));
  }
}

TEST(ParamHead, ShapesAndZeroWeights) {
  nn::ParameterSet p;
  const net::ParamHead head = net::ParamHead::create(p, nn::Initializer(8), tiny());
  ad::Tape t;
  const ad::Var f = t.constant(random_tensor({4, 4, 8}, 9)), h = t.constant(random_tensor({4, 4, 11}, 10));
  {
    nn::Binding b(t, p, false);
    const net::PoseShape out = head(b, f, h);
    EXPECT_EQ(out.theta.shape(), (Shape{18}));
    EXPECT_EQ(out.beta.shape(), (Shape{4}));
  }
  zero_all(p);
  nn::Binding b(t, p, false);
  const net::PoseShape out = head(b, f, h);
  EXPECT_EQ(out.theta.value(), Tensor(Shape{18}));
  EXPECT_EQ(out.beta.value(), Tensor(Shape{4}));
}

TEST(ParamHead, GradientCheck) {
  nn::ParameterSet p;
  const net::ParamHead head = net::ParamHead::create(p, nn::Initializer(11), tiny());
  std::vector<Tensor> in{random_tensor({4, 4, 8}, 12), random_tensor({4, 4, 11}, 13)};
  for (std::size_t i = 0; i < p.size(); ++i) {
    in.push_back(ops::add(p.value(i), random_tensor(p.value(i).shape(), 200 + i, -0.1, 0.1)));
  }
  const Tensor rt = random_tensor({18}, 14), rb = random_tensor({4}, 15);
  const double steps[] = {1e-5, 1e-4, 1e-6};
  const GradCheckReport rep = grad_check_report(
      [&](ad::Tape& t, std::span<const ad::Var> v) {
        nn::Binding b(t, p, v.subspan(2));
        const net::PoseShape out = head(b, v[0], v[1]);
        return ad::add(ad::sum(ad::mul(out.theta, t.constant(rt))), ad::sum(ad::mul(out.beta, t.constant(rb))));
      },
      in, steps, 1e-6);
  EXPECT_LT(rep.max_rel_error, 1e-4);
}

TEST(Model, ForwardShapesAndDeterminism) {
  ModelConfig mc;
  mc.net = tiny();
  const HandOccNet model(mc, hand::make_default_template());
  const Tensor image = random_tensor({32, 32, 3}, 16, 0, 1);
  auto run = [&] {
    ad::Tape t;
    nn::Binding b(t, model.params(), false);
    const Prediction p = model.forward(b, t.constant(image));
    EXPECT_EQ(p.heatmaps.shape(), (Shape{11, 4, 4}));
    EXPECT_EQ(p.vertices.shape(), (Shape{125, 3}));
    EXPECT_EQ(p.joints.shape(), (Shape{11, 3}));
    EXPECT_EQ(p.necessity.shape(), (Shape{4, 4, 1}));
    return p.vertices.value();
  };
  EXPECT_EQ(run(), run());
  ad::Tape t;
  nn::Binding b(t, model.params(), false);
  EXPECT_THROW(model.forward(b, t.constant(Tensor(Shape{64, 64, 3}))), DimensionError);
}

TEST(Model, SharedNamesGiveIdenticalInitAcrossVariants) {
  ModelConfig a, b;
  a.net = b.net = tiny();
  a.variant = inj::Variant::identity;
  b.variant = inj::Variant::fit_set;
  const HandOccNet ma(a, hand::make_default_template()), mb(b, hand::make_default_template());
  EXPECT_LT(ma.params().scalar_count(), mb.params().scalar_count());
  for (std::size_t i = 0; i < ma.params().size(); ++i) {
    const auto j = mb.params().find(ma.params().name(i));
    ASSERT_TRUE(j.has_value());
    EXPECT_EQ(ma.params().value(i), mb.params().value(*j));
  }
}

TEST(ModelSettings, RoundTripThroughText) {
  ModelConfig mc;
  mc.net = tiny();
  mc.variant = inj::Variant::double_softmax;
  mc.gate_pooling = false;
  mc.seed = 99;
  std::ostringstream os;
  write_model_settings(os, mc);
  ModelConfig back;
  std::istringstream is(os.str());
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    ASSERT_NE(eq, std::string::npos);
    EXPECT_TRUE(apply_model_setting(back, line.substr(0, eq), line.substr(eq + 1))) << line;
  }
  EXPECT_EQ(back.variant, mc.variant);
  EXPECT_EQ(back.gate_pooling, false);
  EXPECT_EQ(back.seed, 99u);
  EXPECT_EQ(back.net.stage_channels, mc.net.stage_channels);
  EXPECT_FALSE(apply_model_setting(back, "epochs", "3"));
  EXPECT_THROW(apply_model_setting(back, "channels", "many"), ConfigError);
}

}  // namespace
}  // namespace handocc
