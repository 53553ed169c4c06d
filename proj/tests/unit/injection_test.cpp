#include <gtest/gtest.h>

#include <cmath>

#include "handocc/error.hpp"
#include "handocc/grad_check.hpp"
#include "handocc/injection.hpp"
#include "handocc/ops.hpp"
#include "test_util.hpp"

namespace handocc {
namespace {

using testing::random_tensor;

void zero_param(nn::ParameterSet& params, const std::string& name) {
  const auto id = params.find(name);
  ASSERT_TRUE(id.has_value()) << name;
  Tensor& t = params.value(*id);
  t = Tensor(t.shape());
}

// ---- building blocks ----

TEST(SoftmaxAttention, IdentityQueriesAndKeys) {
  ad::Tape t;
  const Tensor eye = Tensor::identity(2);
  const Tensor c = inj::softmax_attention(t.constant(eye), t.constant(eye)).value();
  const double e = std::exp(1.0 / std::sqrt(2.0));
  EXPECT_NEAR(c.at(0, 0), e / (e + 1.0), 1e-12);
  EXPECT_NEAR(c.at(0, 0), 0.66976, 5e-6);
  EXPECT_NEAR(c.at(0, 1), 0.33024, 5e-6);
}

TEST(SoftmaxAttention, RowsSumToOne) {
  ad::Tape t;
  const Tensor c = inj::softmax_attention(t.constant(random_tensor({9, 4}, 1, -3, 3)),
                                          t.constant(random_tensor({9, 4}, 2, -3, 3)))
                       .value();
  for (std::size_t i = 0; i < 9; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 9; ++j) s += c.at(i, j);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

// Keys chosen so that every scaled logit of a row equals `value`.
Tensor gate_for_constant_logit(double value) {
  ad::Tape t;
  const double d = 4.0;
  Tensor q({3, 4}, 1.0), k({3, 4}, value * std::sqrt(d) / d);
  return inj::sigmoid_gate(t.constant(q), t.constant(k)).value();
}

TEST(SigmoidGate, ScalarValues) {
  const Tensor zero = gate_for_constant_logit(0.0);
  const Tensor neg = gate_for_constant_logit(-5.0);
  const Tensor pos = gate_for_constant_logit(5.0);
  ASSERT_EQ(zero.shape(), (Shape{3, 1}));
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_DOUBLE_EQ(zero[i], 0.5);
    EXPECT_NEAR(neg[i], 0.006693, 5e-7);
    EXPECT_NEAR(pos[i], 0.993307, 5e-7);
  }
}

TEST(SigmoidGate, PoolsAlongKeys) {
  ad::Tape t;
  const Tensor q = random_tensor({5, 3}, 3), k = random_tensor({7, 3}, 4);
  const Tensor gate = inj::sigmoid_gate(t.constant(q), t.constant(k)).value();
  const Tensor logits = ops::scale(ops::matmul_nt(q, k), 1.0 / std::sqrt(3.0));
  ASSERT_EQ(gate.shape(), (Shape{5, 1}));
  for (std::size_t i = 0; i < 5; ++i) {
    double m = 0.0;
    for (std::size_t j = 0; j < 7; ++j) m += logits.at(i, j);
    EXPECT_NEAR(gate[i], 1.0 / (1.0 + std::exp(-m / 7.0)), 1e-14);
  }
  const Tensor full = inj::sigmoid_gate(t.constant(q), t.constant(k), false).value();
  EXPECT_EQ(full.shape(), (Shape{5, 7}));
  EXPECT_NEAR(full.at(2, 3), 1.0 / (1.0 + std::exp(-logits.at(2, 3))), 1e-14);
}

TEST(Fuse, LimitsAndRowSums) {
  ad::Tape t;
  const ad::Var c_soft =
      t.constant(ops::softmax_rows(random_tensor({6, 6}, 5, -2, 2)));
  EXPECT_EQ(inj::fuse(c_soft, t.constant(Tensor(Shape{6, 1}, 1.0))).value(), c_soft.value());
  EXPECT_EQ(inj::fuse(c_soft, t.constant(Tensor(Shape{6, 1}, 0.0))).value(), Tensor(Shape{6, 6}));
  const Tensor gate = random_tensor({6, 1}, 6, 0.0, 1.0);
  const Tensor c = inj::fuse(c_soft, t.constant(gate)).value();
  for (std::size_t i = 0; i < 6; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 6; ++j) s += c.at(i, j);
    EXPECT_NEAR(s, gate[i], 1e-12);
  }
}

TEST(Inject, IdentityZeroAndUniform) {
  ad::Tape t;
  const Tensor v = Tensor::matrix({{1, 2}, {3, 5}, {8, 13}});
  const ad::Var vv = t.constant(v);
  EXPECT_EQ(inj::inject(t.constant(Tensor::identity(3)), vv).value(), v);
  EXPECT_EQ(inj::inject(t.constant(Tensor(Shape{3, 3})), vv).value(), Tensor(Shape{3, 2}));
  // Column means of v: (1 + 3 + 8) / 3 = 4, (2 + 5 + 13) / 3 = 20 / 3.
  const Tensor r = inj::inject(t.constant(Tensor(Shape{3, 3}, 1.0 / 3.0)), vv).value();
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(r.at(i, 0), 4.0, 1e-14);
    EXPECT_NEAR(r.at(i, 1), 20.0 / 3.0, 1e-14);
  }
}

TEST(Correlation, SoftmaxIgnoresRowShiftButGateDoesNot) {
  ad::Tape t;
  const Tensor q = random_tensor({4, 3}, 7), k = random_tensor({4, 3}, 8);
  // Appending a constant column to q and a matching column to k adds the same
  // amount to every logit of a row.
  Tensor q2({4, 4}), k2({4, 4});
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      q2.at(i, j) = q.at(i, j) * std::sqrt(4.0 / 3.0);
      k2.at(i, j) = k.at(i, j);
    }
    q2.at(i, 3) = 1.5;
    k2.at(i, 3) = 1.0;
  }
  const Tensor a = inj::softmax_attention(t.constant(q), t.constant(k)).value();
  const Tensor b = inj::softmax_attention(t.constant(q2), t.constant(k2)).value();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  const Tensor ga = inj::sigmoid_gate(t.constant(q), t.constant(k)).value();
  const Tensor gb = inj::sigmoid_gate(t.constant(q2), t.constant(k2)).value();
  for (std::size_t i = 0; i < 4; ++i) EXPECT_GT(gb[i], ga[i] + 0.1);
}

// ---- FIT and SET blocks ----

struct FitFixture {
  nn::ParameterSet params;
  inj::Fit fit;
  Tensor primary, secondary;

  explicit FitFixture(std::uint64_t seed, inj::FitOptions opt = {})
      : fit(inj::Fit::create(params, nn::Initializer(seed), "fit", 8, opt)),
        primary(random_tensor({4, 4, 8}, seed + 1)),
        secondary(random_tensor({4, 4, 8}, seed + 2)) {}

  inj::FitOutput run(ad::Tape& t, const Tensor& p, const Tensor& s) {
    nn::Binding b(t, params, false);
    return fit(b, t.constant(p), t.constant(s));
  }
};

TEST(Fit, ShapesAndRowStochasticity) {
  FitFixture f(11);
  ad::Tape t;
  const inj::FitOutput out = f.run(t, f.primary, f.secondary);
  EXPECT_EQ(out.f_fit.shape(), (Shape{4, 4, 8}));
  EXPECT_EQ(out.r_fit.shape(), (Shape{16, 8}));
  EXPECT_EQ(out.c_soft.shape(), (Shape{16, 16}));
  EXPECT_EQ(out.c_gate.shape(), (Shape{16, 1}));
  const Tensor sums = ops::row_sums(out.c.value());
  for (std::size_t i = 0; i < 16; ++i) {
    EXPECT_GT(out.c_gate.value()[i], 0.0);
    EXPECT_LT(out.c_gate.value()[i], 1.0);
    EXPECT_NEAR(sums[i], out.c_gate.value()[i], 1e-12);
  }
}

TEST(Fit, ZeroValueAndMlpCollapseToPrimary) {
  FitFixture f(12);
  for (const char* name : {"fit.v.weight", "fit.v.bias", "fit.mlp.fc1.weight", "fit.mlp.fc1.bias",
                           "fit.mlp.fc2.weight", "fit.mlp.fc2.bias"}) {
    zero_param(f.params, name);
  }
  ad::Tape t;
  const inj::FitOutput out = f.run(t, f.primary, f.secondary);
  EXPECT_EQ(out.r_fit.value(), Tensor(Shape{16, 8}));
  EXPECT_EQ(out.f_fit.value(), f.primary);
}

TEST(Fit, InjectionIgnoresQueriesOnceCorrelationIsFixed) {
  FitFixture f(13);
  ad::Tape t;
  const inj::FitOutput a = f.run(t, f.primary, f.secondary);
  const inj::FitOutput b = f.run(t, f.primary, ops::add(f.secondary, random_tensor({4, 4, 8}, 99, -5, 5)));
  // Different queries give a different correlation map ...
  EXPECT_NE(a.c.value(), b.c.value());
  // ... but the value projection depends on the primary features only, so the
  // frozen map injects exactly the same rows.
  nn::Binding bind(t, f.params, false);
  const ad::Var v = f.fit.v(bind, ad::reshape(t.constant(f.primary), {16, 8}));
  EXPECT_EQ(inj::inject(a.c, v).value(), a.r_fit.value());
  EXPECT_EQ(ops::matmul(a.c.value(), v.value()), a.r_fit.value());
}

TEST(Fit, QueryResidualVariantDependsOnQueries) {
  inj::FitOptions opt;
  opt.residual = inj::QueryResidual::q_soft;
  FitFixture f(14, opt);
  ad::Tape t;
  const inj::FitOutput a = f.run(t, f.primary, f.secondary);
  nn::Binding bind(t, f.params, false);
  const ad::Var v = f.fit.v(bind, ad::reshape(t.constant(f.primary), {16, 8}));
  EXPECT_NE(inj::inject(a.c, v).value(), a.r_fit.value());
}

TEST(Fit, GateSuppressesUnrelatedQueries) {
  FitFixture f(15);
  // Gate projections that make every scaled logit -6: q_gate outputs a constant
  // row, k_gate a constant of opposite sign.
  const double d = 8.0;
  Tensor& qw = f.params.value(*f.params.find("fit.q_gate.weight"));
  Tensor& qb = f.params.value(*f.params.find("fit.q_gate.bias"));
  Tensor& kw = f.params.value(*f.params.find("fit.k_gate.weight"));
  Tensor& kb = f.params.value(*f.params.find("fit.k_gate.bias"));
  qw = Tensor(qw.shape());
  kw = Tensor(kw.shape());
  qb = Tensor(qb.shape(), 1.0);
  kb = Tensor(kb.shape(), -6.0 * std::sqrt(d) / d);
  ad::Tape t;
  const inj::FitOutput out = f.run(t, f.primary, f.secondary);
  const double bound = 1.0 / (1.0 + std::exp(6.0));
  for (double x : out.c.value().data()) EXPECT_LE(x, bound);
}

TEST(Fit, GradientAtTinyConfig) {
  nn::ParameterSet params;
  const inj::Fit fit = inj::Fit::create(params, nn::Initializer(3), "fit", 8);
  std::vector<Tensor> in{random_tensor({4, 4, 8}, 4), random_tensor({4, 4, 8}, 5)};
  for (std::size_t i = 0; i < params.size(); ++i) in.push_back(ops::add(params.value(i), random_tensor(params.value(i).shape(), 50 + i, -0.1, 0.1)));
  const Tensor r = random_tensor({4, 4, 8}, 6);
  const double steps[] = {1e-5, 1e-4, 1e-6};
  const GradCheckReport rep = grad_check_report(
      [&](ad::Tape& t, std::span<const ad::Var> v) {
        nn::Binding b(t, params, v.subspan(2));
        return ad::sum(ad::mul(fit(b, v[0], v[1]).f_fit, t.constant(r)));
      },
      in, steps, 1e-6);
  EXPECT_LT(rep.max_rel_error, 1e-4);
}

TEST(Fit, UnpooledGateIsElementwise) {
  inj::FitOptions opt;
  opt.gate_pooling = false;
  FitFixture f(16, opt);
  ad::Tape t;
  const inj::FitOutput out = f.run(t, f.primary, f.secondary);
  ASSERT_EQ(out.c_gate.shape(), (Shape{16, 16}));
  EXPECT_EQ(out.c.value(), ops::mul(out.c_soft.value(), out.c_gate.value()));
}

TEST(Set, ZeroWeightsPassInputThrough) {
  nn::ParameterSet params;
  const inj::Set set = inj::Set::create(params, nn::Initializer(21), "set0", 8);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string& name = params.name(i);
    if (name.find(".norm.") == std::string::npos) params.value(i) = Tensor(params.value(i).shape());
  }
  const Tensor x = random_tensor({4, 4, 8}, 22);
  ad::Tape t;
  nn::Binding b(t, params, false);
  const inj::SetOutput out = set(b, t.constant(x));
  EXPECT_EQ(out.f_set.value(), x);
  EXPECT_EQ(out.f_set.shape(), (Shape{4, 4, 8}));
}

TEST(Set, ResidualCarriesQueryProjection) {
  nn::ParameterSet params;
  const inj::Set set = inj::Set::create(params, nn::Initializer(23), "set0", 8);
  const Tensor x = random_tensor({4, 4, 8}, 24);
  ad::Tape t;
  nn::Binding b(t, params, false);
  const inj::SetOutput out = set(b, t.constant(x));
  const ad::Var tokens = ad::reshape(t.constant(x), {16, 8});
  const Tensor q = set.q(b, tokens).value(), v = set.v(b, tokens).value();
  const Tensor expected = ops::add(q, ops::matmul(out.c.value(), v));
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(out.r_set.value()[i], expected[i], 1e-12);
}

// ---- variants ----

TEST(Variants, NamesRoundTripAndUnknownTagIsRejected) {
  EXPECT_EQ(inj::all_variants().size(), 12u);
  for (inj::Variant v : inj::all_variants()) EXPECT_EQ(inj::parse_variant(inj::variant_name(v)), v);
  EXPECT_THROW(inj::parse_variant("fit_plus_set"), ConfigError);
}

TEST(Variants, SharedLayersStartFromIdenticalWeights) {
  nn::ParameterSet a, b;
  inj::Enhancer::create(a, nn::Initializer(5), inj::Variant::fit_only, 8);
  inj::Enhancer::create(b, nn::Initializer(5), inj::Variant::fit_set, 8);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto j = b.find(a.name(i));
    ASSERT_TRUE(j.has_value()) << a.name(i);
    EXPECT_EQ(a.value(i), b.value(*j)) << a.name(i);
  }
}

TEST(Variants, BlockCounts) {
  auto count_prefix = [](inj::Variant v, const std::string& prefix) {
    nn::ParameterSet p;
    inj::Enhancer::create(p, nn::Initializer(1), v, 8);
    std::size_t n = 0;
    for (std::size_t i = 0; i < p.size(); ++i) n += p.name(i).rfind(prefix, 0) == 0;
    return n;
  };
  EXPECT_EQ(count_prefix(inj::Variant::identity, ""), 0u);
  EXPECT_EQ(count_prefix(inj::Variant::residual_blocks, "enhance.block"), 6u * 4u);
  EXPECT_EQ(count_prefix(inj::Variant::set_resblocks, "enhance.block"), 3u * 4u);
  EXPECT_EQ(count_prefix(inj::Variant::fit_only, "set"), 0u);
  EXPECT_GT(count_prefix(inj::Variant::set_only, "set0."), 0u);
  EXPECT_EQ(count_prefix(inj::Variant::set_only, "fit."), 0u);
  EXPECT_GT(count_prefix(inj::Variant::set_two_transformers, "set1."), 0u);
  EXPECT_EQ(count_prefix(inj::Variant::softmax_only, "fit.q_gate"), 0u);
}

TEST(Enhancer, IdentityPassesPrimaryThrough) {
  nn::ParameterSet params;
  const inj::Enhancer e = inj::Enhancer::create(params, nn::Initializer(1), inj::Variant::identity, 8);
  const Tensor p = random_tensor({4, 4, 8}, 30), s = random_tensor({4, 4, 8}, 31);
  ad::Tape t;
  nn::Binding b(t, params, false);
  const inj::EnhancerOutput out = e(b, t.constant(p), t.constant(s));
  EXPECT_EQ(out.features.value(), p);
  EXPECT_FALSE(out.fit.has_value());
}

TEST(Enhancer, DeterministicForward) {
  nn::ParameterSet params;
  const inj::Enhancer e = inj::Enhancer::create(params, nn::Initializer(2), inj::Variant::fit_set, 8);
  const Tensor p = random_tensor({4, 4, 8}, 32), s = random_tensor({4, 4, 8}, 33);
  auto run = [&] {
    ad::Tape t;
    nn::Binding b(t, params, false);
    return e(b, t.constant(p), t.constant(s)).features.value();
  };
  EXPECT_EQ(run(), run());
}

}  // namespace
}  // namespace handocc
