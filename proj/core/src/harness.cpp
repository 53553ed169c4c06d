#include "handocc/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>

#include "handocc/image_io.hpp"

namespace handocc::harness {

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("setting " + key + " expects a number, got '" + v + "'");
  return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("setting " + key + " expects a nonnegative integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw ConfigError("setting " + key + " expects a boolean, got '" + v + "'");
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

RunConfig::RunConfig() { data.count = 2000; }

synth::DatasetConfig RunConfig::train_data() const {
  synth::DatasetConfig d = data;
  d.split = synth::Split::train;
  d.image_size = model.net.image_size;
  d.heatmap_stride = model.net.feature_stride;
  return d;
}

synth::DatasetConfig RunConfig::test_data() const {
  synth::DatasetConfig d = train_data();
  d.split = synth::Split::test;
  d.count = test_count;
  return d;
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (apply_model_setting(cfg.model, key, value)) return;
  auto& t = cfg.train;
  auto& d = cfg.data;
  if (key == "batch_size") t.batch_size = to_uint(key, value);
  else if (key == "lr") t.lr = to_double(key, value);
  else if (key == "lr_anneal_every") t.lr_anneal_every = to_uint(key, value);
  else if (key == "lr_anneal_factor") t.lr_anneal_factor = to_double(key, value);
  else if (key == "lr_warmup_steps") t.lr_warmup_steps = to_uint(key, value);
  else if (key == "epochs") t.epochs = to_uint(key, value);
  else if (key == "seed") t.seed = to_uint(key, value);
  else if (key == "adam_beta1") t.adam.beta1 = to_double(key, value);
  else if (key == "adam_beta2") t.adam.beta2 = to_double(key, value);
  else if (key == "adam_eps") t.adam.eps = to_double(key, value);
  else if (key == "w_heatmaps") t.weights.heatmaps = to_double(key, value);
  else if (key == "w_theta") t.weights.theta = to_double(key, value);
  else if (key == "w_beta") t.weights.beta = to_double(key, value);
  else if (key == "w_vertices") t.weights.vertices = to_double(key, value);
  else if (key == "w_joints") t.weights.joints = to_double(key, value);
  else if (key == "threads") t.threads = to_uint(key, value);
  else if (key == "f32") t.f32_gemm = to_bool(key, value);
  else if (key == "data_seed") d.seed = to_uint(key, value);
  else if (key == "train_count") d.count = to_uint(key, value);
  else if (key == "test_count") cfg.test_count = to_uint(key, value);
  else if (key == "occlusion_lo") d.occlusion_lo = to_double(key, value);
  else if (key == "occlusion_hi") d.occlusion_hi = to_double(key, value);
  else if (key == "pose_range") d.pose_range = to_double(key, value);
  else if (key == "global_range") d.global_range = to_double(key, value);
  else if (key == "shape_range") d.shape_range = to_double(key, value);
  else if (key == "heatmap_sigma") d.heatmap_sigma = to_double(key, value);
  else if (key == "align_scale") cfg.align_scale = to_bool(key, value);
  else if (key == "thresholds") {
    std::vector<double> taus;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) taus.push_back(to_double(key, trim(item)));
    if (taus.empty()) throw ConfigError("thresholds must list at least one value");
    cfg.thresholds = taus;
  } else {
    throw ConfigError("unknown setting '" + key + "'");
  }
}

void load_config(RunConfig& cfg, std::istream& in, const std::string& origin) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value");
    try {
      apply_setting(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void load_config(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  load_config(cfg, in, path.string());
}

void write_config(std::ostream& out, const RunConfig& cfg) {
  write_model_settings(out, cfg.model);
  const auto& t = cfg.train;
  const auto& d = cfg.data;
  out << "batch_size=" << t.batch_size << '\n'
      << "lr=" << fmt(t.lr) << '\n'
      << "lr_anneal_every=" << t.lr_anneal_every << '\n'
      << "lr_anneal_factor=" << fmt(t.lr_anneal_factor) << '\n'
      << "lr_warmup_steps=" << t.lr_warmup_steps << '\n'
      << "epochs=" << t.epochs << '\n'
      << "seed=" << t.seed << '\n'
      << "adam_beta1=" << fmt(t.adam.beta1) << '\n'
      << "adam_beta2=" << fmt(t.adam.beta2) << '\n'
      << "adam_eps=" << fmt(t.adam.eps) << '\n'
      << "w_heatmaps=" << fmt(t.weights.heatmaps) << '\n'
      << "w_theta=" << fmt(t.weights.theta) << '\n'
      << "w_beta=" << fmt(t.weights.beta) << '\n'
      << "w_vertices=" << fmt(t.weights.vertices) << '\n'
      << "w_joints=" << fmt(t.weights.joints) << '\n'
      << "threads=" << t.threads << '\n'
      << "f32=" << (t.f32_gemm ? "true" : "false") << '\n'
      << "data_seed=" << d.seed << '\n'
      << "train_count=" << d.count << '\n'
      << "test_count=" << cfg.test_count << '\n'
      << "occlusion_lo=" << fmt(d.occlusion_lo) << '\n'
      << "occlusion_hi=" << fmt(d.occlusion_hi) << '\n'
      << "pose_range=" << fmt(d.pose_range) << '\n'
      << "global_range=" << fmt(d.global_range) << '\n'
      << "shape_range=" << fmt(d.shape_range) << '\n'
      << "heatmap_sigma=" << fmt(d.heatmap_sigma) << '\n'
      << "align_scale=" << (cfg.align_scale ? "true" : "false") << '\n'
      << "thresholds=";
  for (std::size_t i = 0; i < cfg.thresholds.size(); ++i) out << (i ? "," : "") << fmt(cfg.thresholds[i]);
  out << '\n';
}

std::filesystem::path output_dir() {
  if (const char* env = std::getenv("HANDOCC_OUTPUT_DIR"); env && *env) return env;
  return "handocc_output";
}

std::vector<VariantResult> run_ablation(const std::vector<inj::Variant>& variants, const RunConfig& cfg,
                                        const hand::HandTemplate& tmpl, const std::vector<synth::Sample>& train_set,
                                        const std::vector<synth::Sample>& test_set, const Logger& log) {
  if (variants.empty()) throw ConfigError("no variants requested");
  std::vector<VariantResult> results;
  for (inj::Variant v : variants) {
    ModelConfig mc = cfg.model;
    mc.variant = v;
    HandOccNet model(mc, tmpl);
    VariantResult r;
    r.variant = v;
    r.parameters = model.params().scalar_count();
    const std::string name(inj::variant_name(v));
    if (log) log(name + ": " + std::to_string(r.parameters) + " parameters");
    try {
      r.log = train::train(model, train_set, cfg.train, [&](const train::EpochLog& e) {
        if (!log) return;
        std::ostringstream os;
        os << name << " epoch " << e.epoch << " lr " << e.lr << " loss " << e.loss << " (H " << e.terms.heatmaps
           << ", theta " << e.terms.theta << ", beta " << e.terms.beta << ", V " << e.terms.vertices << ", J "
           << e.terms.joints << ") grad_norm " << e.grad_norm;
        log(os.str());
      });
      r.report = train::evaluate(model, test_set, cfg.thresholds, cfg.align_scale, cfg.train.threads);
      if (log) {
        std::ostringstream os;
        os << name << " test PA-MPJPE " << r.report.pa_mpjpe << " mm";
        log(os.str());
      }
    } catch (const train::TrainingDiverged& e) {
      r.failure = e.what();
      if (log) log(name + ": " + r.failure);
    }
    results.push_back(std::move(r));
  }
  return results;
}

std::vector<metrics::ReportRow> report_rows(const std::vector<VariantResult>& results) {
  std::vector<metrics::ReportRow> rows;
  for (const auto& r : results) {
    metrics::EvalReport rep = r.report;
    if (!r.failure.empty()) {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      rep.pa_mpjpe = rep.mpjpe = rep.pa_mesh = nan;
    }
    rows.push_back({std::string(inj::variant_name(r.variant)), rep});
  }
  return rows;
}

OrderingCheck check_ordering(const std::vector<VariantResult>& results, double margin, double tolerance) {
  auto error_of = [&](inj::Variant v) {
    for (const auto& r : results) {
      if (r.variant != v) continue;
      return r.failure.empty() ? r.report.pa_mpjpe : std::numeric_limits<double>::infinity();
    }
    throw UsageError("ordering check needs a result for " + std::string(inj::variant_name(v)));
  };
  const double full = error_of(inj::Variant::fit_set), identity = error_of(inj::Variant::identity);
  const double best_single = std::min(error_of(inj::Variant::fit_only), error_of(inj::Variant::set_only));
  OrderingCheck c;
  c.beats_identity = full <= (1.0 - margin) * identity;
  c.matches_single_blocks = full <= (1.0 + tolerance) * best_single;
  std::ostringstream os;
  os.precision(4);
  os << std::fixed << "fit_set " << full << " vs identity " << identity << " (relative gain "
     << (identity - full) / identity * 100.0 << "%, need >= " << margin * 100.0 << "%); vs best single block "
     << best_single << " (excess " << (full - best_single) / best_single * 100.0 << "%, allowed " << tolerance * 100.0
     << "%)";
  c.summary = os.str();
  return c;
}

std::vector<std::filesystem::path> visualize(const HandOccNet& model, const synth::Sample& sample,
                                             const std::filesystem::path& dir, std::size_t query_rows) {
  std::filesystem::create_directories(dir);
  const train::Inference out = train::infer(model, sample.image);
  std::vector<std::filesystem::path> written;
  auto gray = [&](const std::string& name, const Tensor& map) {
    const auto path = dir / (name + ".pgm");
    image::write_pgm(path, map);
    written.push_back(path);
  };

  const std::size_t h = out.features.dim(0), w = out.features.dim(1);
  const synth::Camera camera = synth::Camera::for_image(model.config().net.image_size);
  const auto input_path = dir / "input.ppm";
  image::write_ppm(input_path, sample.image);
  written.push_back(input_path);
  const Tensor with_gt = image::draw_points(sample.image, sample.joints2d, {0.0, 1.0, 0.0});
  const auto overlay_path = dir / "overlay.ppm";
  image::write_ppm(overlay_path, image::draw_points(with_gt, camera.project(out.joints), {1.0, 0.0, 0.0}));
  written.push_back(overlay_path);

  gray("necessity", out.necessity.reshaped({h, w}));
  gray("f_primary", image::channel_mean(out.primary));
  gray("f_secondary", image::channel_mean(out.secondary));
  if (out.f_fit) gray("f_fit", image::channel_mean(*out.f_fit));
  if (out.f_set) gray("f_set", image::channel_mean(*out.f_set));
  if (out.c_soft) {
    gray("c_soft", *out.c_soft);
    gray("c", *out.c);
    if (out.c_gate) gray("c_gate", out.c_gate->dim(1) == 1 ? out.c_gate->reshaped({h, w}) : *out.c_gate);
    // Queries the necessity map marks as least useful are the ones FIT writes into.
    std::vector<std::size_t> tokens(h * w);
    std::iota(tokens.begin(), tokens.end(), 0);
    std::stable_sort(tokens.begin(), tokens.end(),
                     [&](std::size_t a, std::size_t b) { return out.necessity[a] < out.necessity[b]; });
    const std::size_t n = h * w;
    for (std::size_t k = 0; k < std::min(query_rows, n); ++k) {
      const std::size_t q = tokens[k];
      Tensor soft({h, w}), fused({h, w});
      for (std::size_t j = 0; j < n; ++j) {
        soft[j] = (*out.c_soft)[q * n + j];
        fused[j] = (*out.c)[q * n + j];
      }
      gray("c_soft_row" + std::to_string(q), soft);
      gray("c_row" + std::to_string(q), fused);
    }
  }
  return written;
}

}  // namespace handocc::harness
