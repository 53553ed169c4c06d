// handocc: data generation, training, evaluation, ablations and diagnostics.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "handocc/gradient_suite.hpp"
#include "handocc/harness.hpp"

namespace fs = std::filesystem;
using namespace handocc;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string template_path;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config_path, "key=value settings file")->check(CLI::ExistingFile);
  cmd->add_option("-s,--set", c.overrides, "override one setting, KEY=VALUE (repeatable)");
  cmd->add_option("--template", c.template_path, "hand template file (default: built-in)")->check(CLI::ExistingFile);
}

harness::RunConfig resolve(const Common& c) {
  harness::RunConfig cfg;
  if (!c.config_path.empty()) harness::load_config(cfg, c.config_path);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
    harness::apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

hand::HandTemplate resolve_template(const Common& c) {
  return c.template_path.empty() ? hand::make_default_template() : hand::load_template(c.template_path);
}

std::vector<synth::Sample> dataset(const std::string& dir, const synth::DatasetConfig& fallback,
                                   const hand::HandTemplate& tmpl) {
  if (!dir.empty()) return synth::load_dataset(dir);
  std::cerr << "generating " << fallback.count << " " << synth::split_name(fallback.split) << " samples\n";
  return synth::Generator(fallback, tmpl).generate();
}

void log_line(const std::string& s) { std::cerr << s << std::endl; }

void print_epoch(const train::EpochLog& e) {
  std::ostringstream os;
  os << "epoch " << e.epoch << " lr " << e.lr << " loss " << e.loss << " grad_norm " << e.grad_norm;
  log_line(os.str());
}

void write_csv_file(const fs::path& path, const std::vector<metrics::ReportRow>& rows) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  metrics::write_csv(out, rows);
  std::cerr << "wrote " << path.string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Occlusion-robust hand mesh estimation on synthetic data"};
  app.require_subcommand(1);

  Common gen_c, train_c, eval_c, ablate_c, viz_c;

  auto* gen = app.add_subcommand("gen-data", "render a synthetic split to disk");
  add_common(gen, gen_c);
  std::string gen_split = "train", gen_out;
  gen->add_option("--split", gen_split, "train or test")->check(CLI::IsMember({"train", "test"}));
  gen->add_option("-o,--out", gen_out, "output directory (default: <output>/data/<split>)");

  auto* trn = app.add_subcommand("train", "train one model");
  add_common(trn, train_c);
  std::string train_data, train_out;
  bool train_keep_epochs = false;
  trn->add_option("--data", train_data, "dataset directory (default: generate from config)");
  trn->add_option("-o,--out", train_out, "checkpoint stem (default: <output>/model)");
  trn->add_flag("--keep-epochs", train_keep_epochs, "also write a checkpoint after every epoch");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a test split");
  add_common(ev, eval_c);
  std::string eval_ckpt, eval_data, eval_csv;
  ev->add_option("--checkpoint", eval_ckpt, "checkpoint stem")->required();
  ev->add_option("--data", eval_data, "dataset directory (default: generate the test split)");
  ev->add_option("--csv", eval_csv, "also write the report as CSV");

  auto* abl = app.add_subcommand("ablate", "train and compare several variants");
  add_common(abl, ablate_c);
  std::vector<std::string> variants{"identity", "residual_blocks", "fit_only", "set_only", "fit_set"};
  std::string abl_csv;
  bool abl_check = false;
  abl->add_option("--variants", variants, "variant tags")->delimiter(',');
  abl->add_option("--csv", abl_csv, "CSV path (default: <output>/ablation.csv)");
  abl->add_flag("--check-ordering", abl_check, "exit with status 2 when the expected ranking does not hold");

  auto* viz = app.add_subcommand("viz", "export attention and feature maps for one sample");
  add_common(viz, viz_c);
  std::string viz_ckpt, viz_data, viz_out;
  std::size_t viz_index = 0, viz_rows = 4;
  viz->add_option("--checkpoint", viz_ckpt, "checkpoint stem")->required();
  viz->add_option("--data", viz_data, "dataset directory (default: generate the test split)");
  viz->add_option("--index", viz_index, "sample index");
  viz->add_option("--rows", viz_rows, "number of correlation rows to export");
  viz->add_option("-o,--out", viz_out, "output directory (default: <output>/viz)");

  auto* gc = app.add_subcommand("grad-check", "finite-difference gradient checks");
  std::size_t gc_seeds = 10;
  double gc_tol = 1e-4;
  gc->add_option("--seeds", gc_seeds, "number of seeds")->check(CLI::PositiveNumber);
  gc->add_option("--tolerance", gc_tol, "maximum relative error");

  auto* et = app.add_subcommand("export-template", "write the built-in hand template");
  std::string et_out = "hand_template.txt";
  et->add_option("-o,--out", et_out, "output path");

  CLI11_PARSE(app, argc, argv);

  try {
    const fs::path out_root = harness::output_dir();

    if (gen->parsed()) {
      const auto cfg = resolve(gen_c);
      const auto tmpl = resolve_template(gen_c);
      const auto dc = gen_split == "train" ? cfg.train_data() : cfg.test_data();
      const fs::path dir = gen_out.empty() ? out_root / "data" / gen_split : fs::path(gen_out);
      synth::save_dataset(dir, dc, synth::Generator(dc, tmpl).generate());
      std::cerr << "wrote " << dc.count << " samples to " << dir.string() << '\n';
    } else if (trn->parsed()) {
      auto cfg = resolve(train_c);
      const auto tmpl = resolve_template(train_c);
      const auto data = dataset(train_data, cfg.train_data(), tmpl);
      const fs::path stem = train_out.empty() ? out_root / "model" : fs::path(train_out);
      if (train_keep_epochs) cfg.train.checkpoint_dir = stem.parent_path() / (stem.filename().string() + "_epochs");
      HandOccNet model(cfg.model, tmpl);
      std::cerr << inj::variant_name(cfg.model.variant) << ": " << model.params().scalar_count() << " parameters\n";
      train::train(model, data, cfg.train, print_epoch);
      if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
      train::save_checkpoint(stem, model);
      std::cerr << "wrote " << stem.string() << ".otns\n";
    } else if (ev->parsed()) {
      const auto cfg = resolve(eval_c);
      const auto tmpl = resolve_template(eval_c);
      const HandOccNet model = train::load_checkpoint(eval_ckpt, tmpl);
      const auto data = dataset(eval_data, cfg.test_data(), tmpl);
      const auto report = train::evaluate(model, data, cfg.thresholds, cfg.align_scale, cfg.train.threads);
      const std::vector<metrics::ReportRow> rows{{std::string(inj::variant_name(model.config().variant)), report}};
      metrics::write_table(std::cout, rows);
      if (!eval_csv.empty()) write_csv_file(eval_csv, rows);
    } else if (abl->parsed()) {
      const auto cfg = resolve(ablate_c);
      const auto tmpl = resolve_template(ablate_c);
      std::vector<inj::Variant> vs;
      for (const auto& v : variants) vs.push_back(inj::parse_variant(v));
      const auto started = std::chrono::steady_clock::now();
      const auto train_set = synth::Generator(cfg.train_data(), tmpl).generate();
      const auto test_set = synth::Generator(cfg.test_data(), tmpl).generate();
      const auto results = harness::run_ablation(vs, cfg, tmpl, train_set, test_set, log_line);
      const auto rows = harness::report_rows(results);
      metrics::write_table(std::cout, rows);
      write_csv_file(abl_csv.empty() ? out_root / "ablation.csv" : fs::path(abl_csv), rows);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      std::cerr << "ablation took " << std::fixed << std::setprecision(1) << secs << " s\n";
      if (abl_check) {
        const auto check = harness::check_ordering(results);
        std::cout << (check.passed() ? "ordering holds: " : "ordering violated: ") << check.summary << '\n';
        if (!check.passed()) return 2;
      }
    } else if (viz->parsed()) {
      const auto cfg = resolve(viz_c);
      const auto tmpl = resolve_template(viz_c);
      const HandOccNet model = train::load_checkpoint(viz_ckpt, tmpl);
      synth::Sample sample;
      if (!viz_data.empty()) {
        const auto data = synth::load_dataset(viz_data);
        if (viz_index >= data.size()) throw UsageError("--index beyond dataset size " + std::to_string(data.size()));
        sample = data[viz_index];
      } else {
        sample = synth::Generator(cfg.test_data(), tmpl).sample(viz_index);
      }
      const fs::path dir = viz_out.empty() ? out_root / "viz" : fs::path(viz_out);
      for (const auto& p : harness::visualize(model, sample, dir, viz_rows)) std::cout << p.string() << '\n';
    } else if (gc->parsed()) {
      double worst = 0.0;
      for (std::uint64_t s = 0; s < gc_seeds; ++s) {
        for (const auto& c : run_gradient_suite(s)) {
          worst = std::max(worst, c.report.max_rel_error);
          if (c.report.max_rel_error >= gc_tol) {
            std::cout << "FAIL " << c.name << " seed " << s << " rel error " << c.report.max_rel_error << " at input "
                      << c.report.worst_input << "[" << c.report.worst_index << "] analytic " << c.report.analytic
                      << " numeric " << c.report.numeric << '\n';
          }
        }
      }
      std::cout << "max relative error " << worst << " over " << gc_seeds << " seeds\n";
      return worst < gc_tol ? 0 : 1;
    } else if (et->parsed()) {
      hand::save_template(et_out, hand::make_default_template());
      std::cerr << "wrote " << et_out << '\n';
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
