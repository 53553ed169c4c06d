#include <gtest/gtest.h>

#include <Eigen/Geometry>
#include <cmath>
#include <numbers>
#include <sstream>

#include "handocc/error.hpp"
#include "handocc/grad_check.hpp"
#include "handocc/hand_model.hpp"
#include "handocc/ops.hpp"
#include "test_util.hpp"

namespace handocc::hand {
namespace {

using handocc::testing::random_tensor;

// Root at the origin, one rotating child bone of 10mm and a 10mm end effector.
HandTemplate two_bone_chain() {
  HandTemplate t;
  t.rest_vertices = Tensor::matrix({{0, 0, 0}, {10, 0, 0}, {20, 0, 0}});
  t.parents = {-1, 0, 1};
  t.rotation_slot = {0, 1, -1};
  t.joint_names = {"root", "elbow", "tip"};
  t.skin_weights = Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 1, 0}});
  t.joint_regressor = Tensor::identity(3);
  t.rest_joints = t.rest_vertices;
  t.shape_basis = Tensor(Shape{1, 3, 3});
  for (std::size_t v = 0; v < 3; ++v) t.shape_basis[v * 3] = 1.0;
  t.validate();
  return t;
}

Eigen::Matrix3d rotation_of(const Tensor& axis_angle) {
  const Eigen::Vector3d w(axis_angle[0], axis_angle[1], axis_angle[2]);
  if (w.norm() == 0.0) return Eigen::Matrix3d::Identity();
  return Eigen::AngleAxisd(w.norm(), w.normalized()).toRotationMatrix();
}

Tensor rotate_rows(const Tensor& pts, const Eigen::Matrix3d& r, const Eigen::Vector3d& t) {
  Tensor out(pts.shape());
  for (std::size_t i = 0; i < pts.dim(0); ++i) {
    const Eigen::Vector3d p = r * Eigen::Vector3d(pts.at(i, 0), pts.at(i, 1), pts.at(i, 2)) + t;
    for (int k = 0; k < 3; ++k) out.at(i, k) = p[k];
  }
  return out;
}

TEST(HandTemplate, DefaultIsValidDeskScale) {
  const HandTemplate t = make_default_template();
  EXPECT_NO_THROW(t.validate());
  EXPECT_EQ(t.vertex_count(), 125u);
  EXPECT_EQ(t.joint_count(), 11u);
  EXPECT_EQ(t.rotation_count(), 6u);
  EXPECT_EQ(t.pose_size(), 18u);
  EXPECT_EQ(t.shape_count(), 4u);
  EXPECT_LT(max_abs_diff(t.rest_joints, regress_joints(t.rest_vertices, t.joint_regressor)), 1e-12);
  // The wrist sits at the origin so a global rotation is a rotation about the origin.
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(t.rest_joints.at(0, k), 0.0, 1e-12);
}

TEST(HandTemplate, RejectsBrokenWeights) {
  HandTemplate t = two_bone_chain();
  t.skin_weights.at(1, 1) = 0.9;
  EXPECT_THROW(t.validate(), ConfigError);
}

TEST(HandTemplate, TextRoundTripIsExact) {
  const HandTemplate t = make_default_template();
  std::stringstream buf;
  write_template(buf, t);
  const HandTemplate back = read_template(buf);
  EXPECT_EQ(back.rest_vertices, t.rest_vertices);
  EXPECT_EQ(back.rest_joints, t.rest_joints);
  EXPECT_EQ(back.parents, t.parents);
  EXPECT_EQ(back.rotation_slot, t.rotation_slot);
  EXPECT_EQ(back.joint_names, t.joint_names);
  EXPECT_EQ(back.skin_weights, t.skin_weights);
  EXPECT_EQ(back.shape_basis, t.shape_basis);
  EXPECT_EQ(back.joint_regressor, t.joint_regressor);
  const Tensor ws = ops::row_sums(back.skin_weights), rs = ops::row_sums(back.joint_regressor);
  for (double s : ws.data()) EXPECT_NEAR(s, 1.0, 1e-9);
  for (double s : rs.data()) EXPECT_NEAR(s, 1.0, 1e-9);
}

TEST(HandTemplate, CommittedDataFileMatchesGenerator) {
  const HandTemplate file = load_template(HANDOCC_SOURCE_DIR "/core/data/hand_template.txt");
  const HandTemplate gen = make_default_template();
  EXPECT_EQ(file.rest_vertices, gen.rest_vertices);
  EXPECT_EQ(file.skin_weights, gen.skin_weights);
  EXPECT_EQ(file.shape_basis, gen.shape_basis);
  EXPECT_EQ(file.joint_regressor, gen.joint_regressor);
}

TEST(HandTemplate, MalformedTextIsConfigError) {
  std::stringstream buf("HANDTEMPLATE 1\ncounts 2 x 1\n");
  EXPECT_THROW(read_template(buf), Error);
}

TEST(ShapeBlend, ZeroBetaIsRest) {
  const HandTemplate t = make_default_template();
  EXPECT_EQ(shape_blend(t, Tensor(Shape{4})), t.rest_vertices);
}

TEST(ShapeBlend, UnitBasisShiftsX) {
  const HandTemplate t = two_bone_chain();
  const Tensor v = shape_blend(t, Tensor::vector({1.0}));
  EXPECT_EQ(v, Tensor::matrix({{1, 0, 0}, {11, 0, 0}, {21, 0, 0}}));
}

TEST(ShapeBlend, Linear) {
  const HandTemplate t = make_default_template();
  const Tensor b1 = random_tensor({4}, 1), b2 = random_tensor({4}, 2);
  const Tensor lhs = shape_blend(t, ops::add(b1, b2));
  const Tensor rhs = ops::sub(ops::add(shape_blend(t, b1), shape_blend(t, b2)), t.rest_vertices);
  EXPECT_LT(max_abs_diff(lhs, rhs), 1e-12);
}

TEST(ShapeBlend, WrongLengthThrows) {
  EXPECT_THROW(shape_blend(make_default_template(), Tensor(Shape{3})), DimensionError);
}

TEST(Kinematics, ZeroPoseIsRest) {
  const HandTemplate t = make_default_template();
  const PosedHand out = forward_kinematics(t, Tensor(Shape{18}), Tensor(Shape{4}));
  EXPECT_EQ(out.vertices, t.rest_vertices);
  EXPECT_EQ(out.joints, t.rest_joints);
}

TEST(Kinematics, GlobalQuarterTurnAboutZ) {
  const HandTemplate t = make_default_template();
  Tensor theta({18});
  theta[2] = std::numbers::pi / 2;
  const PosedHand out = forward_kinematics(t, theta, Tensor(Shape{4}));
  for (std::size_t j = 0; j < t.joint_count(); ++j) {
    EXPECT_NEAR(out.joints.at(j, 0), -t.rest_joints.at(j, 1), 1e-12);
    EXPECT_NEAR(out.joints.at(j, 1), t.rest_joints.at(j, 0), 1e-12);
    EXPECT_NEAR(out.joints.at(j, 2), t.rest_joints.at(j, 2), 1e-12);
  }
}

TEST(Kinematics, TwoBoneChainByTrigonometry) {
  const HandTemplate t = two_bone_chain();
  for (double angle : {std::numbers::pi / 2, 0.3, -1.1}) {
    Tensor theta({6});
    theta[5] = angle;  // child joint about z
    const PosedHand out = forward_kinematics(t, theta, Tensor(Shape{1}));
    EXPECT_NEAR(out.joints.at(2, 0), 10.0 + 10.0 * std::cos(angle), 1e-12);
    EXPECT_NEAR(out.joints.at(2, 1), 10.0 * std::sin(angle), 1e-12);
    EXPECT_NEAR(out.vertices.at(2, 0), 10.0 + 10.0 * std::cos(angle), 1e-12);
    EXPECT_NEAR(out.vertices.at(2, 1), 10.0 * std::sin(angle), 1e-12);
  }
}

TEST(Kinematics, RigidEquivariance) {
  const HandTemplate t = make_default_template();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Tensor theta = random_tensor({18}, seed, -0.8, 0.8);
    const Tensor beta = random_tensor({4}, seed + 100);
    const Tensor extra = random_tensor({3}, seed + 200, -2, 2);
    const Tensor shift = random_tensor({3}, seed + 300, -50, 50);
    const PosedHand base = forward_kinematics(t, theta, beta);

    const Eigen::Matrix3d r = rotation_of(extra);
    const Eigen::AngleAxisd composed(r * rotation_of(theta));
    const Eigen::Vector3d root = composed.angle() * composed.axis();
    for (int k = 0; k < 3; ++k) theta[k] = root[k];
    const PosedHand moved = forward_kinematics(t, theta, beta, Tensor::vector({shift[0], shift[1], shift[2]}));

    const Eigen::Vector3d tv(shift[0], shift[1], shift[2]);
    EXPECT_LT(max_abs_diff(moved.joints, rotate_rows(base.joints, r, tv)), 1e-9);
    EXPECT_LT(max_abs_diff(moved.vertices, rotate_rows(base.vertices, r, tv)), 1e-9);
  }
}

TEST(Kinematics, RegressionTranslationEquivariant) {
  const HandTemplate t = make_default_template();
  const Tensor mesh = random_tensor({125, 3}, 5, -80, 80);
  const Eigen::Vector3d shift(3.5, -7.25, 12.0);
  const Tensor lhs = regress_joints(rotate_rows(mesh, Eigen::Matrix3d::Identity(), shift), t.joint_regressor);
  const Tensor rhs = rotate_rows(regress_joints(mesh, t.joint_regressor), Eigen::Matrix3d::Identity(), shift);
  EXPECT_LT(max_abs_diff(lhs, rhs), 1e-9);
}

TEST(Kinematics, RegressOneHotAndCentroid) {
  const Tensor mesh = random_tensor({4, 3}, 9);
  Tensor selector({2, 4});
  selector.at(0, 2) = 1.0;
  selector.at(1, 0) = 1.0;
  const Tensor j = regress_joints(mesh, selector);
  for (int k = 0; k < 3; ++k) {
    EXPECT_EQ(j.at(0, k), mesh.at(2, k));
    EXPECT_EQ(j.at(1, k), mesh.at(0, k));
  }
  const Tensor centroid = regress_joints(mesh, Tensor(Shape{1, 4}, 0.25));
  const Tensor cols = ops::column_sums(mesh);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(centroid[k], cols[k] / 4, 1e-15);
}

class KinematicsGradient : public ::testing::TestWithParam<std::uint64_t> {};

// A plain squared norm is invariant to the global rotation (the wrist is at the
// origin), which would leave the root gradient at zero; shifting the mesh by a
// fixed offset first keeps every pose entry informative.
TEST_P(KinematicsGradient, OffsetMeshNormSquared) {
  static const HandTemplate t = make_default_template();
  const std::uint64_t s = GetParam();
  const Tensor offset = ops::add_bias(Tensor(Shape{125, 3}), Tensor::vector({30.0, -20.0, 45.0}));
  const Objective f = [offset](ad::Tape& tape, std::span<const ad::Var> in) {
    const PosedHandVars out = forward_kinematics(t, in[0], in[1]);
    return ad::scale(ad::sum_squares(ad::add(out.vertices, tape.constant(offset))), 1e-4);
  };
  Tensor theta = random_tensor({18}, s, -1, 1);
  if (s % 2 == 1) {
    // Exercise the small-angle branch on the global rotation.
    theta[0] = 1e-10;
    theta[1] = -3e-11;
    theta[2] = 0.0;
  }
  const GradCheckReport rep = grad_check_report(f, {theta, random_tensor({4}, s + 50)}, 1e-6);
  EXPECT_LT(rep.max_rel_error, 1e-4) << "input " << rep.worst_input << "[" << rep.worst_index << "] analytic " << rep.analytic
                                   << " numeric " << rep.numeric;
}

INSTANTIATE_TEST_SUITE_P(TenSeeds, KinematicsGradient, ::testing::Range<std::uint64_t>(0, 10));

}  // namespace
}  // namespace handocc::hand
