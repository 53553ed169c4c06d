#pragma once

// Derivative-free reference for similarity alignment: random rotations, then a
// shrinking random-perturbation search around the best one. For each rotation
// the optimal translation and (nonnegative) scale have closed forms, so only
// the rotation is searched.

#include <Eigen/Geometry>
#include <cstdint>
#include <random>

#include "handocc/tensor.hpp"

namespace handocc::testing {

inline Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  return Eigen::Quaterniond(n(rng), n(rng), n(rng), n(rng)).normalized().toRotationMatrix();
}

/// Smallest sum of squared residuals of s R pred + t against gt over proper rotations.
inline double rotation_search_error(const Tensor& pred, const Tensor& gt, std::uint64_t seed = 1,
                                    std::size_t coarse = 20000, std::size_t refine = 60000) {
  const auto k = static_cast<Eigen::Index>(pred.dim(0));
  Eigen::MatrixXd p(k, 3), g(k, 3);
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = 0; j < 3; ++j) {
      p(i, j) = pred.at(i, j);
      g(i, j) = gt.at(i, j);
    }
  }
  p.rowwise() -= p.colwise().mean();
  g.rowwise() -= g.colwise().mean();
  auto cost = [&](const Eigen::Matrix3d& r) {
    const Eigen::MatrixXd rp = p * r.transpose();
    const double s = std::max(0.0, (rp.array() * g.array()).sum() / rp.squaredNorm());
    return (s * rp - g).squaredNorm();
  };

  std::mt19937_64 rng(seed);
  Eigen::Matrix3d best = Eigen::Matrix3d::Identity();
  double best_cost = cost(best);
  for (std::size_t i = 0; i < coarse; ++i) {
    const Eigen::Matrix3d r = random_rotation(rng);
    if (const double c = cost(r); c < best_cost) {
      best_cost = c;
      best = r;
    }
  }
  std::normal_distribution<double> n;
  double step = 0.2;
  for (std::size_t i = 0; i < refine; ++i) {
    const Eigen::Vector3d axis(n(rng), n(rng), n(rng));
    const Eigen::Matrix3d r = Eigen::AngleAxisd(step * axis.norm(), axis.normalized()).toRotationMatrix() * best;
    if (const double c = cost(r); c < best_cost) {
      best_cost = c;
      best = r;
    } else if (i % 200 == 199) {
      step = std::max(step * 0.5, 1e-9);
    }
  }
  return best_cost;
}

}  // namespace handocc::testing
