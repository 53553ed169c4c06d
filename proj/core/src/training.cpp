#include "handocc/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "handocc/ops.hpp"
#include "handocc/serialize.hpp"

namespace handocc::train {

void LossWeights::validate() const {
  const double w[] = {heatmaps, theta, beta, vertices, joints};
  bool any = false;
  for (double x : w) {
    if (!(x >= 0.0) || !std::isfinite(x)) throw ConfigError("loss weights must be finite and nonnegative");
    any = any || x > 0.0;
  }
  if (!any) throw ConfigError("at least one loss weight must be positive");
}

ad::Var total_loss(const Prediction& pred, const synth::Sample& gt, const LossWeights& w, LossTerms* terms) {
  struct Term {
    double weight;
    ad::Var pred;
    const Tensor* target;
    double LossTerms::*slot;
  };
  const Term list[] = {
      {w.heatmaps, pred.heatmaps, &gt.heatmaps, &LossTerms::heatmaps},
      {w.theta, pred.theta, &gt.theta, &LossTerms::theta},
      {w.beta, pred.beta, &gt.beta, &LossTerms::beta},
      {w.vertices, pred.vertices, &gt.mesh, &LossTerms::vertices},
      {w.joints, pred.joints, &gt.joints3d, &LossTerms::joints},
  };
  std::optional<ad::Var> total;
  LossTerms local;
  for (const Term& t : list) {
    if (t.pred.shape() != t.target->shape()) {
      throw DimensionError("loss: prediction " + shape_to_string(t.pred.shape()) + " vs target " +
                           shape_to_string(t.target->shape()));
    }
    const ad::Var mse = ad::mean_squared_error(t.pred, *t.target);
    local.*t.slot = mse.value()[0];
    if (t.weight == 0.0) continue;
    const ad::Var term = ad::scale(mse, t.weight);
    total = total ? ad::add(*total, term) : term;
  }
  if (!total) throw ConfigError("at least one loss weight must be positive");
  local.total = total->value()[0];
  if (terms) *terms = local;
  return *total;
}

Adam::Adam(const nn::ParameterSet& params, AdamConfig cfg) : cfg_(cfg) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_.emplace_back(params.value(i).shape());
    v_.emplace_back(params.value(i).shape());
  }
}

void Adam::step(nn::ParameterSet& params, const std::vector<Tensor>& grads, double lr) {
  if (grads.size() != params.size()) throw UsageError("Adam: one gradient per parameter expected");
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params.value(i);
    const Tensor& g = grads[i];
    if (g.shape() != p.shape()) throw DimensionError("Adam: gradient shape mismatch for " + params.name(i));
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
      p[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.eps);
    }
  }
}

void TrainConfig::validate() const {
  if (batch_size == 0 || epochs == 0 || lr_anneal_every == 0 || threads == 0) {
    throw ConfigError("batch_size, epochs, lr_anneal_every and threads must be positive");
  }
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be finite and nonnegative");
  if (!(lr_anneal_factor > 0.0 && lr_anneal_factor <= 1.0)) throw ConfigError("lr_anneal_factor must lie in (0, 1]");
  weights.validate();
}

double TrainConfig::lr_at(std::size_t epoch) const {
  return lr * std::pow(lr_anneal_factor, static_cast<double>(epoch / lr_anneal_every));
}

double TrainConfig::lr_at(std::size_t epoch, std::size_t step) const {
  const double base = lr_at(epoch);
  if (step >= lr_warmup_steps) return base;
  return base * static_cast<double>(step + 1) / static_cast<double>(lr_warmup_steps);
}

namespace {

struct SampleGrad {
  std::vector<Tensor> grads;
  LossTerms terms;
  std::string error;  // non-empty when the pass hit a numeric failure
};

SampleGrad sample_gradient(const HandOccNet& model, const synth::Sample& s, const LossWeights& w, bool f32) {
  ops::PrecisionScope precision(f32 ? ops::Precision::f32 : ops::Precision::f64);
  SampleGrad out;
  try {
    ad::Tape tape;
    nn::Binding b(tape, model.params());
    const Prediction pred = model.forward(b, tape.constant(s.image));
    const ad::Var loss = total_loss(pred, s, w, &out.terms);
    if (!std::isfinite(out.terms.total)) throw NumericError("non-finite loss");
    tape.backward(loss);
    out.grads = b.gradients();
  } catch (const NumericError& e) {
    out.error = e.what();
  }
  return out;
}

// Runs fn(i) for i in [0, n) on up to `threads` threads; results are indexed, so
// the caller's reduction order does not depend on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn fn) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < n; i += threads) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

double global_norm(const std::vector<Tensor>& grads) {
  double s = 0.0;
  for (const auto& g : grads) {
    for (double x : g.data()) s += x * x;
  }
  return std::sqrt(s);
}

std::string largest_gradients(const nn::ParameterSet& params, const std::vector<Tensor>& grads) {
  std::vector<std::pair<double, std::size_t>> norms;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    double s = 0.0;
    for (double x : grads[i].data()) s += x * x;
    norms.emplace_back(std::sqrt(s), i);
  }
  std::sort(norms.begin(), norms.end(), std::greater<>());
  std::ostringstream os;
  for (std::size_t k = 0; k < std::min<std::size_t>(3, norms.size()); ++k) {
    os << (k ? ", " : "") << params.name(norms[k].second) << "=" << norms[k].first;
  }
  return os.str();
}

}  // namespace

std::vector<EpochLog> train(HandOccNet& model, const std::vector<synth::Sample>& data, const TrainConfig& cfg,
                            const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.empty()) throw ConfigError("training set is empty");
  Adam adam(model.params(), cfg.adam);
  std::vector<EpochLog> logs;
  std::vector<std::size_t> order(data.size());
  std::vector<Tensor> last_grads;
  double last_norm = 0.0;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr_at(epoch);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(nn::mix_seed(cfg.seed, epoch));
    std::shuffle(order.begin(), order.end(), rng);

    EpochLog log;
    log.epoch = epoch + 1;
    log.lr = lr;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, order.size() - start);
      std::vector<SampleGrad> results(count);
      parallel_for(count, cfg.threads, [&](std::size_t i) {
        results[i] = sample_gradient(model, data[order[start + i]], cfg.weights, cfg.f32_gemm);
      });

      auto diverged = [&](const std::string& why) {
        std::ostringstream os;
        os << "training diverged at epoch " << epoch + 1 << ", step " << step + 1 << ": " << why << " (lr " << lr
           << ", last finite gradient norm " << last_norm;
        if (!last_grads.empty()) os << ", largest: " << largest_gradients(model.params(), last_grads);
        os << ")";
        return TrainingDiverged(os.str(), epoch + 1, step + 1);
      };

      std::vector<Tensor> batch = std::move(results[0].grads);
      for (std::size_t i = 0; i < count; ++i) {
        if (!results[i].error.empty()) throw diverged(results[i].error);
        if (i > 0) {
          for (std::size_t p = 0; p < batch.size(); ++p) ops::add_inplace(batch[p], results[i].grads[p]);
        }
        const LossTerms& t = results[i].terms;
        log.loss += t.total;
        log.terms.heatmaps += t.heatmaps;
        log.terms.theta += t.theta;
        log.terms.beta += t.beta;
        log.terms.vertices += t.vertices;
        log.terms.joints += t.joints;
      }
      const double inv = 1.0 / static_cast<double>(count);
      for (Tensor& g : batch) {
        for (double& x : g.data()) x *= inv;
      }
      const double norm = global_norm(batch);
      if (!std::isfinite(norm)) throw diverged("non-finite gradient");
      adam.step(model.params(), batch, cfg.lr_at(epoch, step));
      for (std::size_t p = 0; p < model.params().size(); ++p) {
        if (!model.params().value(p).all_finite()) throw diverged("non-finite weights in " + model.params().name(p));
      }
      last_norm = norm;
      last_grads = std::move(batch);
      ++step;
    }
    const double n = static_cast<double>(data.size());
    log.loss /= n;
    log.terms.heatmaps /= n;
    log.terms.theta /= n;
    log.terms.beta /= n;
    log.terms.vertices /= n;
    log.terms.joints /= n;
    log.terms.total = log.loss;
    log.grad_norm = last_norm;
    logs.push_back(log);
    if (cfg.checkpoint_dir) {
      std::filesystem::create_directories(*cfg.checkpoint_dir);
      save_checkpoint(*cfg.checkpoint_dir / ("epoch_" + std::to_string(epoch + 1)), model);
    }
    if (on_epoch) on_epoch(log);
  }
  return logs;
}

Inference infer(const HandOccNet& model, const Tensor& image) {
  ad::Tape tape;
  nn::Binding b(tape, model.params(), false);
  const Prediction p = model.forward(b, tape.constant(image));
  Inference out;
  out.features = p.features.value();
  out.necessity = p.necessity.value();
  out.primary = p.split.primary.value();
  out.secondary = p.split.secondary.value();
  out.enhanced = p.enhanced.features.value();
  out.heatmaps = p.heatmaps.value();
  out.theta = p.theta.value();
  out.beta = p.beta.value();
  out.vertices = p.vertices.value();
  out.joints = p.joints.value();
  if (p.enhanced.fit) {
    out.c_soft = p.enhanced.fit->c_soft.value();
    if (p.enhanced.fit->c_gate.valid()) out.c_gate = p.enhanced.fit->c_gate.value();
    out.c = p.enhanced.fit->c.value();
    out.f_fit = p.enhanced.fit->f_fit.value();
  }
  if (!p.enhanced.sets.empty()) out.f_set = p.enhanced.sets.front().f_set.value();
  return out;
}

metrics::EvalReport evaluate(const HandOccNet& model, const std::vector<synth::Sample>& data,
                             std::vector<double> thresholds, bool with_scale, std::size_t threads) {
  std::vector<Inference> preds(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i) { preds[i] = infer(model, data[i].image); });
  metrics::Evaluator ev(std::move(thresholds), with_scale);
  for (std::size_t i = 0; i < data.size(); ++i) ev.add(preds[i].vertices, preds[i].joints, data[i].mesh, data[i].joints3d);
  return ev.report();
}

// ---- checkpoints ------------------------------------------------------------

namespace {

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
  return std::filesystem::path(stem.string() + suffix);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& stem, const HandOccNet& model) {
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  const auto table_path = with_suffix(stem, ".otns");
  std::ofstream out(table_path, std::ios::binary);
  if (!out) throw IoError("cannot write " + table_path.string());
  write_tensor_table(out, model.params().to_table());
  if (!out) throw IoError("write failed for " + table_path.string());

  const auto manifest_path = with_suffix(stem, ".manifest");
  std::ofstream man(manifest_path);
  if (!man) throw IoError("cannot write " + manifest_path.string());
  man << "# handocc checkpoint\n";
  write_model_settings(man, model.config());
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    man << "param " << model.params().name(i) << ' ' << shape_to_string(model.params().value(i).shape()) << '\n';
  }
}

HandOccNet load_checkpoint(const std::filesystem::path& stem, const hand::HandTemplate& tmpl) {
  const auto manifest_path = with_suffix(stem, ".manifest");
  std::ifstream man(manifest_path);
  if (!man) throw IoError("cannot open " + manifest_path.string());
  ModelConfig cfg;
  std::vector<std::string> names;
  std::string line;
  while (std::getline(man, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (line.starts_with("param ")) {
      const auto space = line.find(' ', 6);
      names.push_back(line.substr(6, space - 6));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos || !apply_model_setting(cfg, line.substr(0, eq), line.substr(eq + 1))) {
      throw IoError("unrecognised manifest line in " + manifest_path.string() + ": " + line);
    }
  }
  HandOccNet model(cfg, tmpl);
  const auto table_path = with_suffix(stem, ".otns");
  std::ifstream in(table_path, std::ios::binary);
  if (!in) throw IoError("cannot open " + table_path.string());
  const auto table = read_tensor_table(in);
  if (table.size() != names.size()) throw IoError("manifest and tensor table disagree in " + stem.string());
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (table[i].name != names[i]) throw IoError("manifest and tensor table disagree on " + names[i]);
  }
  model.params().load_table(table);
  return model;
}

}  // namespace handocc::train
