#include "handocc/metrics.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <limits>
#include <ostream>

#include "handocc/error.hpp"

namespace handocc::metrics {

namespace {

using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

Points to_eigen(const Tensor& t, const char* what) {
  if (t.rank() != 2 || t.dim(1) != 3) throw DimensionError(std::string(what) + " must be [K x 3], got " + shape_to_string(t.shape()));
  Points p(static_cast<Eigen::Index>(t.dim(0)), 3);
  for (std::size_t i = 0; i < t.size(); ++i) p.data()[i] = t[i];
  return p;
}

void require_pair(const Tensor& a, const Tensor& b, const char* where) {
  if (a.shape() != b.shape() || a.rank() != 2 || a.dim(1) != 3) {
    throw DimensionError(std::string(where) + ": point sets " + shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()) + " do not correspond");
  }
}

// Formats a double so that identical values always print identically.
std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string threshold_label(double tau) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "f@%g", tau);
  return buf;
}

}  // namespace

Tensor Similarity::apply(const Tensor& points) const {
  const Points p = to_eigen(points, "points");
  Eigen::Matrix3d r;
  for (int i = 0; i < 9; ++i) r(i / 3, i % 3) = rotation[static_cast<std::size_t>(i)];
  const Eigen::RowVector3d t(translation[0], translation[1], translation[2]);
  const Points out = (scale * (p * r.transpose())).rowwise() + t;
  Tensor result(points.shape());
  for (std::size_t i = 0; i < result.size(); ++i) result[i] = out.data()[i];
  return result;
}

Alignment procrustes_align(const Tensor& pred, const Tensor& gt, bool with_scale) {
  require_pair(pred, gt, "procrustes_align");
  const Points x = to_eigen(pred, "pred"), y = to_eigen(gt, "gt");
  const auto k = x.rows();
  if (k < 3) throw AlignmentError("procrustes_align needs at least 3 points, got " + std::to_string(k));

  const Eigen::RowVector3d mx = x.colwise().mean(), my = y.colwise().mean();
  const Points xc = x.rowwise() - mx, yc = y.rowwise() - my;
  const double var_x = xc.squaredNorm() / static_cast<double>(k);
  const Eigen::Matrix3d sigma = (yc.transpose() * xc) / static_cast<double>(k);

  // A target whose spread is (numerically) one-dimensional has no unique rotation.
  const Eigen::JacobiSVD<Eigen::Matrix3d> gt_svd(yc.transpose() * yc);
  const Eigen::Vector3d gs = gt_svd.singularValues();
  if (!(gs(0) > 0.0) || gs(1) <= 1e-12 * gs(0)) {
    throw AlignmentError("procrustes_align: target points are degenerate (coincident or collinear)");
  }
  if (!(var_x > 0.0)) throw AlignmentError("procrustes_align: predicted points are coincident");

  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(sigma, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  const Eigen::Matrix3d r = svd.matrixU() * d * svd.matrixV().transpose();
  const double s = with_scale ? (svd.singularValues().asDiagonal() * d).trace() / var_x : 1.0;
  const Eigen::RowVector3d t = my - s * (mx * r.transpose());

  Alignment out;
  out.transform.scale = s;
  for (int i = 0; i < 9; ++i) out.transform.rotation[static_cast<std::size_t>(i)] = r(i / 3, i % 3);
  for (int i = 0; i < 3; ++i) out.transform.translation[static_cast<std::size_t>(i)] = t(i);
  out.aligned = out.transform.apply(pred);
  return out;
}

double mean_distance(const Tensor& a, const Tensor& b) {
  require_pair(a, b, "mean_distance");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.dim(0); ++i) {
    const double dx = a.at(i, 0) - b.at(i, 0), dy = a.at(i, 1) - b.at(i, 1), dz = a.at(i, 2) - b.at(i, 2);
    sum += std::sqrt(dx * dx + dy * dy + dz * dz);
  }
  return sum / static_cast<double>(a.dim(0));
}

double mpjpe(const Tensor& pred, const Tensor& gt, bool aligned, bool with_scale) {
  require_pair(pred, gt, "mpjpe");
  if (!aligned) return mean_distance(pred, gt);
  return mean_distance(procrustes_align(pred, gt, with_scale).aligned, gt);
}

double aligned_mesh_error(const Tensor& pred_mesh, const Tensor& gt_mesh, const Tensor& pred_joints,
                          const Tensor& gt_joints, bool with_scale) {
  require_pair(pred_mesh, gt_mesh, "aligned_mesh_error");
  const Alignment a = procrustes_align(pred_joints, gt_joints, with_scale);
  return mean_distance(a.transform.apply(pred_mesh), gt_mesh);
}

PrecisionRecall precision_recall(const Tensor& pred, const Tensor& gt, double tau) {
  const Points p = to_eigen(pred, "pred"), g = to_eigen(gt, "gt");
  if (p.rows() == 0 || g.rows() == 0) throw DimensionError("f_score: empty point set");
  auto within = [tau](const Points& from, const Points& to) {
    const double tau2 = tau * tau;
    std::size_t hits = 0;
    for (Eigen::Index i = 0; i < from.rows(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < to.rows(); ++j) best = std::min(best, (from.row(i) - to.row(j)).squaredNorm());
      if (best <= tau2) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(from.rows());
  };
  PrecisionRecall pr;
  pr.precision = within(p, g);
  pr.recall = within(g, p);
  const double denom = pr.precision + pr.recall;
  pr.f = denom > 0.0 ? 2.0 * pr.precision * pr.recall / denom : 0.0;
  return pr;
}

double f_score(const Tensor& pred, const Tensor& gt, double tau) { return precision_recall(pred, gt, tau).f; }

Evaluator::Evaluator(std::vector<double> thresholds, bool with_scale)
    : thresholds_(std::move(thresholds)), with_scale_(with_scale), f_sums_(thresholds_.size(), 0.0) {}

void Evaluator::add(const Tensor& pred_mesh, const Tensor& pred_joints, const Tensor& gt_mesh, const Tensor& gt_joints) {
  const Alignment a = procrustes_align(pred_joints, gt_joints, with_scale_);
  pa_sum_ += mean_distance(a.aligned, gt_joints);
  raw_sum_ += mean_distance(pred_joints, gt_joints);
  const Tensor mesh = a.transform.apply(pred_mesh);
  mesh_sum_ += mean_distance(mesh, gt_mesh);
  for (std::size_t i = 0; i < thresholds_.size(); ++i) f_sums_[i] += f_score(mesh, gt_mesh, thresholds_[i]);
  ++n_;
}

EvalReport Evaluator::report() const {
  EvalReport r;
  r.samples = n_;
  if (n_ == 0) return r;
  const double n = static_cast<double>(n_);
  r.pa_mpjpe = pa_sum_ / n;
  r.mpjpe = raw_sum_ / n;
  r.pa_mesh = mesh_sum_ / n;
  for (std::size_t i = 0; i < thresholds_.size(); ++i) r.f_at[thresholds_[i]] = f_sums_[i] / n;
  return r;
}

void write_csv(std::ostream& out, const std::vector<ReportRow>& rows) {
  out << "variant,pa_mpjpe,mpjpe,pa_mesh";
  std::vector<double> taus;
  if (!rows.empty()) {
    for (const auto& [tau, f] : rows.front().report.f_at) taus.push_back(tau);
  }
  for (double tau : taus) out << ',' << threshold_label(tau);
  out << '\n';
  for (const auto& row : rows) {
    out << row.variant << ',' << num(row.report.pa_mpjpe) << ',' << num(row.report.mpjpe) << ','
        << num(row.report.pa_mesh);
    for (double tau : taus) {
      const auto it = row.report.f_at.find(tau);
      out << ',' << (it == row.report.f_at.end() ? std::string("nan") : num(it->second));
    }
    out << '\n';
  }
}

void write_table(std::ostream& out, const std::vector<ReportRow>& rows) {
  std::vector<double> taus;
  if (!rows.empty()) {
    for (const auto& [tau, f] : rows.front().report.f_at) taus.push_back(tau);
  }
  out << std::left << std::setw(22) << "variant" << std::right << std::setw(11) << "PA-MPJPE" << std::setw(11)
      << "MPJPE" << std::setw(11) << "PA-mesh";
  for (double tau : taus) out << std::setw(9) << threshold_label(tau);
  out << '\n';
  for (const auto& row : rows) {
    out << std::left << std::setw(22) << row.variant << std::right << std::fixed << std::setprecision(2)
        << std::setw(11) << row.report.pa_mpjpe << std::setw(11) << row.report.mpjpe << std::setw(11)
        << row.report.pa_mesh << std::setprecision(3);
    for (double tau : taus) {
      const auto it = row.report.f_at.find(tau);
      out << std::setw(9) << (it == row.report.f_at.end() ? 0.0 : it->second);
    }
    out << '\n';
  }
  out << std::defaultfloat;
}

}  // namespace handocc::metrics
