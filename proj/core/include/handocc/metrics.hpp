#pragma once

// Similarity alignment and the pose/mesh error metrics. Point sets are
// [K x 3] tensors in millimetres.

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "handocc/tensor.hpp"

namespace handocc::metrics {

struct Similarity {
  double scale = 1.0;
  Tensor rotation = Tensor::identity(3);  // [3 x 3], det +1
  Tensor translation = Tensor({3});       // [3]

  /// Applies s R p + t to every row.
  Tensor apply(const Tensor& points) const;
};

struct Alignment {
  Similarity transform;
  Tensor aligned;  // transform.apply(pred)
};

/// Least-squares similarity (Umeyama) mapping pred onto gt, with a reflection
/// guard. With `with_scale` false the scale is fixed at 1. Throws
/// AlignmentError for fewer than 3 points or a degenerate (collinear) target.
Alignment procrustes_align(const Tensor& pred, const Tensor& gt, bool with_scale = true);

/// Mean Euclidean distance between corresponding rows.
double mean_distance(const Tensor& a, const Tensor& b);

double mpjpe(const Tensor& pred, const Tensor& gt, bool aligned, bool with_scale = true);

/// Vertex error after the similarity estimated on the joints is applied to the mesh.
double aligned_mesh_error(const Tensor& pred_mesh, const Tensor& gt_mesh, const Tensor& pred_joints,
                          const Tensor& gt_joints, bool with_scale = true);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  double f = 0.0;
};

/// Brute-force nearest-neighbour precision/recall at threshold tau (points
/// already aligned). F is their harmonic mean, 0 when both are 0.
PrecisionRecall precision_recall(const Tensor& pred, const Tensor& gt, double tau);
double f_score(const Tensor& pred, const Tensor& gt, double tau);

struct EvalReport {
  double pa_mpjpe = 0.0;
  double mpjpe = 0.0;
  double pa_mesh = 0.0;
  std::map<double, double> f_at;  // threshold mm -> score
  std::size_t samples = 0;
};

/// Accumulates per-sample metrics in a fixed order.
class Evaluator {
 public:
  explicit Evaluator(std::vector<double> thresholds = {5.0, 15.0}, bool with_scale = true);
  void add(const Tensor& pred_mesh, const Tensor& pred_joints, const Tensor& gt_mesh, const Tensor& gt_joints);
  EvalReport report() const;

 private:
  std::vector<double> thresholds_;
  bool with_scale_;
  double pa_sum_ = 0.0, raw_sum_ = 0.0, mesh_sum_ = 0.0;
  std::vector<double> f_sums_;
  std::size_t n_ = 0;
};

struct ReportRow {
  std::string variant;
  EvalReport report;
};

/// CSV with header variant,pa_mpjpe,mpjpe,pa_mesh,f@5,f@15 (one f column per threshold of the first row).
void write_csv(std::ostream& out, const std::vector<ReportRow>& rows);
/// Fixed-width plain-text table of the same columns.
void write_table(std::ostream& out, const std::vector<ReportRow>& rows);

}  // namespace handocc::metrics
