#include "handocc/gradient_suite.hpp"

#include <functional>
#include <random>

#include "handocc/injection.hpp"
#include "handocc/model.hpp"
#include "handocc/ops.hpp"
#include "handocc/synth.hpp"
#include "handocc/training.hpp"

namespace handocc {

namespace {

Tensor uniform(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(std::move(shape));
  for (double& x : t.data()) x = dist(rng);
  return t;
}

// Magnitudes in [lo, hi] with random sign; keeps ReLU inputs away from the kink.
Tensor away_from_zero(Shape shape, std::uint64_t seed, double lo = 0.1, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> mag(lo, hi);
  std::bernoulli_distribution sign(0.5);
  Tensor t(std::move(shape));
  for (double& x : t.data()) x = sign(rng) ? mag(rng) : -mag(rng);
  return t;
}

using Fn = std::function<ad::Var(ad::Tape&, std::span<const ad::Var>)>;

// Reduces a tensor-valued function to a scalar with fixed random weights so
// every output element contributes a distinct direction.
Objective weighted(Fn f, Shape out_shape, std::uint64_t seed) {
  const Tensor r = uniform(std::move(out_shape), seed ^ 0x5eedf00dULL);
  return [f = std::move(f), r](ad::Tape& t, std::span<const ad::Var> in) {
    return ad::sum(ad::mul(f(t, in), t.constant(r)));
  };
}

std::vector<Tensor> with_params(std::vector<Tensor> inputs, const nn::ParameterSet& params) {
  for (std::size_t i = 0; i < params.size(); ++i) inputs.push_back(params.value(i));
  return inputs;
}

}  // namespace

std::vector<GradientCase> run_gradient_suite(std::uint64_t s, double accept) {
  static constexpr double kSteps[] = {1e-5, 1e-4, 1e-6, 1e-3, 1e-7};
  std::vector<GradientCase> out;
  auto check = [&](std::string name, const Objective& f, std::vector<Tensor> in) {
    out.push_back({std::move(name), s, grad_check_report(f, std::move(in), kSteps, accept)});
  };

  // ---- primitives ----
  check("matmul", weighted([](ad::Tape&, auto in) { return ad::matmul(in[0], in[1]); }, {3, 5}, s),
        {uniform({3, 4}, s), uniform({4, 5}, s + 1)});
  check("matmul_nt", weighted([](ad::Tape&, auto in) { return ad::matmul_nt(in[0], in[1]); }, {3, 5}, s),
        {uniform({3, 4}, s), uniform({5, 4}, s + 1)});
  check("transpose", weighted([](ad::Tape&, auto in) { return ad::transpose(in[0]); }, {4, 3}, s),
        {uniform({3, 4}, s)});
  check("softmax_rows", weighted([](ad::Tape&, auto in) { return ad::softmax_rows(in[0]); }, {3, 6}, s),
        {uniform({3, 6}, s, -3, 3)});
  check("sigmoid", weighted([](ad::Tape&, auto in) { return ad::sigmoid(in[0]); }, {4, 3}, s),
        {uniform({4, 3}, s, -4, 4)});
  check("relu", weighted([](ad::Tape&, auto in) { return ad::relu(in[0]); }, {4, 3}, s), {away_from_zero({4, 3}, s)});
  check("layer_norm", weighted([](ad::Tape&, auto in) { return ad::layer_norm(in[0], in[1], in[2], 1e-5); }, {4, 6}, s),
        {uniform({4, 6}, s, -2, 2), uniform({6}, s + 1), uniform({6}, s + 2)});
  check("conv2d_3x3_s1", weighted([](ad::Tape&, auto in) { return ad::conv2d(in[0], in[1], in[2], 1); }, {5, 4, 3}, s),
        {uniform({5, 4, 2}, s), uniform({3, 3, 2, 3}, s + 1), uniform({3}, s + 2)});
  check("conv2d_3x3_s2", weighted([](ad::Tape&, auto in) { return ad::conv2d(in[0], in[1], in[2], 2); }, {3, 2, 3}, s),
        {uniform({5, 4, 2}, s), uniform({3, 3, 2, 3}, s + 1), uniform({3}, s + 2)});
  check("conv2d_1x1", weighted([](ad::Tape&, auto in) { return ad::conv2d(in[0], in[1], in[2], 1); }, {3, 3, 4}, s),
        {uniform({3, 3, 2}, s), uniform({1, 1, 2, 4}, s + 1), uniform({4}, s + 2)});
  check("avg_pool2", weighted([](ad::Tape&, auto in) { return ad::avg_pool2(in[0]); }, {2, 3, 2}, s),
        {uniform({4, 6, 2}, s)});
  check("upsample2", weighted([](ad::Tape&, auto in) { return ad::upsample2(in[0]); }, {4, 6, 2}, s),
        {uniform({2, 3, 2}, s)});
  check("concat_last", weighted([](ad::Tape&, auto in) { return ad::concat_last(in[0], in[1]); }, {2, 2, 5}, s),
        {uniform({2, 2, 3}, s), uniform({2, 2, 2}, s + 1)});
  check("mul_add_sub",
        weighted([](ad::Tape&, auto in) { return ad::sub(ad::mul(in[0], in[1]), ad::add(in[0], in[1])); }, {3, 3}, s),
        {uniform({3, 3}, s), uniform({3, 3}, s + 1)});
  check("add_bias", weighted([](ad::Tape&, auto in) { return ad::add_bias(in[0], in[1]); }, {4, 3}, s),
        {uniform({4, 3}, s), uniform({3}, s + 1)});
  check("scale_rows", weighted([](ad::Tape&, auto in) { return ad::scale_rows(in[0], in[1]); }, {4, 3}, s),
        {uniform({4, 3}, s), uniform({4, 1}, s + 1)});
  check("row_means", weighted([](ad::Tape&, auto in) { return ad::row_means(in[0]); }, {4, 1}, s), {uniform({4, 5}, s)});
  check("affine_scale", weighted([](ad::Tape&, auto in) { return ad::scale(ad::affine(in[0], -2.0, 1.0), 3.0); }, {4}, s),
        {uniform({4}, s)});
  check("rows_concat_rows",
        weighted(
            [](ad::Tape&, auto in) {
              const std::vector<ad::Var> parts{ad::rows(in[0], 2, 2), ad::rows(in[0], 0, 1)};
              return ad::concat_rows(parts);
            },
            {3, 3}, s),
        {uniform({4, 3}, s)});
  check("mean_squared_error", [](ad::Tape&, auto in) { return ad::mean_squared_error(in[0], Tensor({3, 2}, 0.25)); },
        {uniform({3, 2}, s)});
  check("rodrigues", weighted([](ad::Tape&, auto in) { return ad::rodrigues(in[0]); }, {3, 3}, s),
        {uniform({3}, s, -2, 2)});
  check("transform_points", weighted([](ad::Tape&, auto in) { return ad::transform_points(in[0], in[1]); }, {5, 3}, s),
        {uniform({5, 12}, s), uniform({5, 3}, s + 1)});

  // ---- attention blocks on a 4x4 grid of 8-channel tokens ----
  constexpr std::size_t kSide = 4, kDim = 8;
  {
    nn::ParameterSet params;
    const inj::Fit fit = inj::Fit::create(params, nn::Initializer(s), "fit", kDim);
    check("fit_forward",
          weighted(
              [&](ad::Tape& t, auto in) {
                nn::Binding b(t, params, in.subspan(2));
                return fit(b, in[0], in[1]).f_fit;
              },
              {kSide, kSide, kDim}, s),
          with_params({uniform({kSide, kSide, kDim}, s + 3), uniform({kSide, kSide, kDim}, s + 4)}, params));
  }
  {
    nn::ParameterSet params;
    const inj::Set set = inj::Set::create(params, nn::Initializer(s), "set0", kDim);
    check("set_forward",
          weighted(
              [&](ad::Tape& t, auto in) {
                nn::Binding b(t, params, in.subspan(1));
                return set(b, in[0]).f_set;
              },
              {kSide, kSide, kDim}, s),
          with_params({uniform({kSide, kSide, kDim}, s + 5)}, params));
  }

  // ---- hand model ----
  const hand::HandTemplate tmpl = hand::make_default_template();
  {
    const Shape vshape{tmpl.vertex_count(), 3}, jshape{tmpl.joint_count(), 3};
    const Tensor rv = uniform(vshape, s + 6), rj = uniform(jshape, s + 7);
    check("forward_kinematics",
          [&](ad::Tape& t, std::span<const ad::Var> in) {
            const hand::PosedHandVars p = hand::forward_kinematics(tmpl, in[0], in[1]);
            return ad::scale(ad::add(ad::sum(ad::mul(p.vertices, t.constant(rv))), ad::sum(ad::mul(p.joints, t.constant(rj)))),
                             1e-2);
          },
          {uniform({tmpl.pose_size()}, s + 8), uniform({tmpl.shape_count()}, s + 9)});
  }

  // ---- full loss of a tiny network: 32x32 input at stride 8 gives N = 16 tokens with d = 8 ----
  {
    ModelConfig mc;
    mc.seed = s;
    mc.net.image_size = 32;
    mc.net.feature_stride = 8;
    mc.net.channels = kDim;
    mc.net.stage_channels = {4, 4, 8, 8};
    mc.net.necessity_hidden = 4;
    mc.net.heatmap_hidden = 8;
    mc.net.head_channels = 4;
    mc.net.head_blocks = 1;
    HandOccNet model(mc, tmpl);
    // Zero-initialized biases put whole channels exactly on a ReLU kink where
    // the input is flat; check at a generic point of parameter space instead.
    for (std::size_t i = 0; i < model.params().size(); ++i) {
      Tensor& p = model.params().value(i);
      p = ops::add(p, uniform(p.shape(), nn::mix_seed(s, i), -0.05, 0.05));
    }
    synth::DatasetConfig dc;
    dc.seed = s;
    dc.count = 1;
    dc.image_size = 32;
    dc.heatmap_stride = 8;
    const synth::Sample sample = synth::Generator(dc, tmpl).sample(0);
    check("end_to_end_loss",
          [&](ad::Tape& t, std::span<const ad::Var> in) {
            nn::Binding b(t, model.params(), in.subspan(1));
            return train::total_loss(model.forward(b, in[0]), sample, train::LossWeights{});
          },
          with_params({sample.image}, model.params()));
  }
  return out;
}

}  // namespace handocc
