#pragma once

// Experiment plumbing shared by the command-line tool and the acceptance
// checks: run configuration, the ablation runner and attention-map export.

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "handocc/training.hpp"

namespace handocc::harness {

struct RunConfig {
  ModelConfig model;
  train::TrainConfig train;
  synth::DatasetConfig data;     // training split; the test split reuses it with another count
  std::size_t test_count = 500;
  std::vector<double> thresholds{5.0, 15.0};
  bool align_scale = true;

  RunConfig();
  synth::DatasetConfig train_data() const;
  synth::DatasetConfig test_data() const;
};

/// Applies one key=value setting; throws ConfigError for unknown keys or bad values.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);
/// Reads "key = value" lines ('#' starts a comment) on top of `cfg`.
void load_config(RunConfig& cfg, const std::filesystem::path& path);
void load_config(RunConfig& cfg, std::istream& in, const std::string& origin = "<stream>");
/// Every setting, one key=value per line, in a form load_config accepts.
void write_config(std::ostream& out, const RunConfig& cfg);

/// Directory for outputs: $HANDOCC_OUTPUT_DIR, else ./handocc_output.
std::filesystem::path output_dir();

struct VariantResult {
  inj::Variant variant;
  std::size_t parameters = 0;
  std::vector<train::EpochLog> log;
  metrics::EvalReport report;
  std::string failure;  // set when training aborted
};

using Logger = std::function<void(const std::string&)>;

/// Trains every variant from the same seed on the same data and evaluates it
/// on the test split. A diverged run is reported with its failure instead of
/// aborting the whole comparison.
std::vector<VariantResult> run_ablation(const std::vector<inj::Variant>& variants, const RunConfig& cfg,
                                        const hand::HandTemplate& tmpl, const std::vector<synth::Sample>& train_set,
                                        const std::vector<synth::Sample>& test_set, const Logger& log = {});

std::vector<metrics::ReportRow> report_rows(const std::vector<VariantResult>& results);

/// Expected ranking on held-out PA-MPJPE: fit_set beats identity by at least
/// `margin` (relative) and is within `tolerance` (relative) of the better of
/// fit_only and set_only.
struct OrderingCheck {
  bool beats_identity = false;
  bool matches_single_blocks = false;
  bool passed() const { return beats_identity && matches_single_blocks; }
  std::string summary;
};

/// Throws UsageError when one of the four required variants is missing.
OrderingCheck check_ordering(const std::vector<VariantResult>& results, double margin = 0.05, double tolerance = 0.02);

/// Writes input/overlay PPMs plus PGMs of the necessity map, channel means of
/// F_P, F_S, F_FIT, F_SET (when present), the correlation maps and per-query
/// correlation rows reshaped onto the feature grid. Returns the written paths.
std::vector<std::filesystem::path> visualize(const HandOccNet& model, const synth::Sample& sample,
                                             const std::filesystem::path& dir, std::size_t query_rows = 4);

}  // namespace handocc::harness
