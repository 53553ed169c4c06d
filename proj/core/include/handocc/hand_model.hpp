#pragma once

// Low-poly differentiable parametric hand: linear shape blend, axis-angle
// forward kinematics over a joint tree, linear-blend skinning, and joint
// regression. All lengths are millimetres.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "handocc/autodiff.hpp"

namespace handocc::hand {

struct HandTemplate {
  Tensor rest_vertices;           // [V x 3]
  Tensor rest_joints;             // [J x 3], equals joint_regressor * rest_vertices
  std::vector<int> parents;       // [J], -1 for the root; parents precede children
  std::vector<int> rotation_slot; // [J], index into the pose vector or -1 for leaf joints
  std::vector<std::string> joint_names;
  Tensor skin_weights;            // [V x J], rows sum to 1
  Tensor shape_basis;             // [S x V x 3]
  Tensor joint_regressor;         // [J x V], rows sum to 1

  std::size_t vertex_count() const { return rest_vertices.dim(0); }
  std::size_t joint_count() const { return parents.size(); }
  std::size_t shape_count() const { return shape_basis.dim(0); }
  /// Number of joints carrying a rotation (root included).
  std::size_t rotation_count() const;
  /// Pose vector length, 3 * rotation_count().
  std::size_t pose_size() const { return 3 * rotation_count(); }

  /// Throws ConfigError when a structural invariant is violated.
  void validate() const;
};

/// Palm box plus five digits: 125 vertices, 11 joints (wrist, five knuckles,
/// five fingertips), six rotating joints, four shape components.
HandTemplate make_default_template();

// Text format; see docs/hand_template_format.md.
void write_template(std::ostream& out, const HandTemplate& t);
HandTemplate read_template(std::istream& in);
void save_template(const std::filesystem::path& path, const HandTemplate& t);
HandTemplate load_template(const std::filesystem::path& path);

/// Shaped rest vertices: rest + sum_s beta_s * basis[s].
Tensor shape_blend(const HandTemplate& t, const Tensor& beta);
ad::Var shape_blend(const HandTemplate& t, ad::Var beta);

struct PosedHand {
  Tensor vertices;  // [V x 3]
  Tensor joints;    // [J x 3], kinematic joint positions
};

struct PosedHandVars {
  ad::Var vertices;
  ad::Var joints;
};

/// Poses the shaped template. theta: [pose_size()] axis-angle radians with the
/// root (global) rotation first; beta: [shape_count()]; translation: optional
/// [3] offset applied after the root rotation.
PosedHandVars forward_kinematics(const HandTemplate& t, ad::Var theta, ad::Var beta,
                                 std::optional<ad::Var> translation = std::nullopt);
PosedHand forward_kinematics(const HandTemplate& t, const Tensor& theta, const Tensor& beta,
                             const std::optional<Tensor>& translation = std::nullopt);

/// joints = regressor [J x V] * mesh [V x 3].
Tensor regress_joints(const Tensor& mesh, const Tensor& regressor);
ad::Var regress_joints(ad::Var mesh, const Tensor& regressor);

}  // namespace handocc::hand
