#pragma once

// Loss, Adam, the training loop, evaluation and checkpoints.

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "handocc/error.hpp"
#include "handocc/metrics.hpp"
#include "handocc/model.hpp"
#include "handocc/synth.hpp"

namespace handocc::train {

/// Per-term weights. Units: heatmaps unitless, theta radians, beta unitless,
/// vertices and joints millimetres (so their terms are in mm^2).
struct LossWeights {
  double heatmaps = 1.0;
  double theta = 1.0;
  double beta = 1.0;
  double vertices = 1.0;
  double joints = 1.0;

  void validate() const;
};

struct LossTerms {
  double heatmaps = 0.0, theta = 0.0, beta = 0.0, vertices = 0.0, joints = 0.0;
  double total = 0.0;
};

/// sum_x w_x * mean((pred_x - gt_x)^2) over heatmaps, theta, beta, vertices, joints.
ad::Var total_loss(const Prediction& pred, const synth::Sample& gt, const LossWeights& w, LossTerms* terms = nullptr);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(const nn::ParameterSet& params, AdamConfig cfg = {});
  /// One bias-corrected update with the given gradients (parameter order).
  void step(nn::ParameterSet& params, const std::vector<Tensor>& grads, double lr);
  std::size_t steps() const noexcept { return t_; }

 private:
  AdamConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::size_t t_ = 0;
};

struct TrainConfig {
  std::size_t batch_size = 16;
  double lr = 1e-3;
  std::size_t lr_anneal_every = 10;
  double lr_anneal_factor = 0.1;
  std::size_t lr_warmup_steps = 100;  // linear ramp from lr/warmup to lr over the first optimizer steps
  std::size_t epochs = 30;
  std::uint64_t seed = 1;
  AdamConfig adam;
  LossWeights weights;
  std::size_t threads = 1;
  bool f32_gemm = false;
  std::optional<std::filesystem::path> checkpoint_dir;  // writes epoch_<n> after every epoch

  void validate() const;
  /// Learning rate in effect during (zero-based) `epoch`, warmup aside.
  double lr_at(std::size_t epoch) const;
  /// Rate for the (zero-based) optimizer `step` taken during `epoch`.
  double lr_at(std::size_t epoch, std::size_t step) const;
};

struct EpochLog {
  std::size_t epoch = 0;  // one-based
  double lr = 0.0;
  double loss = 0.0;      // mean per-sample total loss over the epoch
  LossTerms terms;        // per-term means
  double grad_norm = 0.0; // global norm of the last batch gradient
};

/// Raised when the loss or a gradient becomes non-finite during training.
class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(const std::string& what, std::size_t epoch, std::size_t step)
      : NumericError(what), epoch_(epoch), step_(step) {}
  std::size_t epoch() const noexcept { return epoch_; }
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t epoch_;
  std::size_t step_;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Deterministic for a given (config, data, initial weights): the shuffle is
/// seeded per epoch and per-sample gradients are summed in batch order no
/// matter how many threads compute them.
std::vector<EpochLog> train(HandOccNet& model, const std::vector<synth::Sample>& data, const TrainConfig& cfg,
                            const EpochCallback& on_epoch = {});

metrics::EvalReport evaluate(const HandOccNet& model, const std::vector<synth::Sample>& data,
                             std::vector<double> thresholds = {5.0, 15.0}, bool with_scale = true,
                             std::size_t threads = 1);

/// Inference-only forward pass returning plain tensors.
struct Inference {
  Tensor features, necessity, primary, secondary, enhanced, heatmaps, theta, beta, vertices, joints;
  std::optional<Tensor> c_soft, c_gate, c, f_fit, f_set;
};
Inference infer(const HandOccNet& model, const Tensor& image);

// ---- checkpoints ------------------------------------------------------------
// <stem>.otns holds the parameter table; <stem>.manifest is text: the model
// settings as key=value lines, then one "param <name> <shape>" line per tensor.

void save_checkpoint(const std::filesystem::path& stem, const HandOccNet& model);
/// Rebuilds the model described by the manifest and loads its weights.
HandOccNet load_checkpoint(const std::filesystem::path& stem, const hand::HandTemplate& tmpl);

}  // namespace handocc::train
