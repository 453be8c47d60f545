#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "jpfa/eval.hpp"
#include "jpfa/losses.hpp"
#include "jpfa/synth.hpp"
#include "jpfa/trainer.hpp"

namespace jpfa::experiment {

inline constexpr const char* kToolVersion = "0.1.0";

struct PhaseSettings {
  int epochs = 1;
  int batch_size = 1;
  double learning_rate = 0.0;
};

// Complete experiment description. Loading is strict in both directions:
// every field below must appear in the file and unknown fields are rejected,
// so a config file is a full, unambiguous record of a run.
struct Config {
  std::uint64_t seed = 42;
  std::vector<std::uint64_t> ablation_seeds = {41, 42, 43};

  int n_identities = 20;
  int n_per_identity = 10;
  std::string source_style = "flashlike";
  std::string target_style = "naturalike";

  int code_length = 64;

  losses::LossWeights weights;
  std::vector<double> kernel_scales = {0.25, 0.5, 1.0, 2.0, 4.0};
  double mmd_ts_weight = 1.0;
  double mmd_tf_weight = 1.0;
  bool use_consistency = true;
  bool mmd_on_pre_activation = false;

  PhaseSettings pretrain{30, 16, 1e-3};
  PhaseSettings pixel{40, 4, 2e-4};
  PhaseSettings feature{30, 16, 1e-3};

  // Path the config was loaded from; informational, not serialized.
  std::filesystem::path origin;

  static Config load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  std::string canonical_json() const;
  // Checksum of the canonical serialization, so a seed override on the
  // command line changes the checksum even though the file did not.
  std::string checksum_hex() const;

  void validate() const;
  trainer::TrainConfig phase_config(trainer::Phase phase) const;
};

// Resolves "flashlike", "naturalike" or "identity"; rejects anything else.
synth::DomainStyle style_by_name(const std::string& name);

// Fixed layout of one experiment directory.
struct Layout {
  std::filesystem::path root;

  std::filesystem::path data_dir() const { return root / "data"; }
  std::filesystem::path style_dir(const std::string& style) const { return data_dir() / style; }
  std::filesystem::path data_manifest() const { return data_dir() / "manifest.json"; }

  std::filesystem::path weights_dir() const { return root / "weights"; }
  std::filesystem::path pretrain_weights() const { return weights_dir() / "pretrain.weights"; }
  std::filesystem::path generator_weights() const { return weights_dir() / "generators.weights"; }
  std::filesystem::path feature_weights() const { return weights_dir() / "feature_heads.weights"; }

  std::filesystem::path fake_dir() const { return root / "fake"; }
  std::filesystem::path fake_manifest() const { return fake_dir() / "manifest.json"; }

  std::filesystem::path logs_dir() const { return root / "logs"; }
  std::filesystem::path log_csv(const std::string& phase) const {
    return logs_dir() / (phase + "_log.csv");
  }

  std::filesystem::path reports_dir() const { return root / "reports"; }
  std::filesystem::path source_only_report() const { return reports_dir() / "source_only.json"; }
  std::filesystem::path jpfa_report() const { return reports_dir() / "jpfa.json"; }
  std::filesystem::path source_only_roc() const { return reports_dir() / "source_only_roc.csv"; }
  std::filesystem::path jpfa_roc() const { return reports_dir() / "jpfa_roc.csv"; }

  std::filesystem::path ablation_csv(const std::string& grid) const {
    return root / ("ablation_" + grid + ".csv");
  }
  std::filesystem::path cell_dir(const std::string& cell) const { return root / "ablate" / cell; }

  std::filesystem::path manifest() const { return root / "manifest.json"; }
  std::filesystem::path failed_marker() const { return root / ".failed"; }

  Layout for_seed(std::uint64_t seed) const {
    return Layout{root / "seeds" / ("seed_" + std::to_string(seed))};
  }
};

// Maps names to phases, deduplicated and reordered into pipeline order
// pretrain < pixel < feature. Unknown names are rejected.
std::vector<trainer::Phase> parse_phases(const std::vector<std::string>& names);

// Materializes the benchmark as PGM files plus a manifest listing every
// record with its file checksum. A second call is a no-op unless force is
// set, in which case the data directory is rebuilt from scratch.
void generate_data(const Config& cfg, const Layout& lay, bool force);

// Runs the selected phases in pipeline order. Every phase reads its inputs
// from disk, so a staged sequence of invocations produces byte-identical
// artifacts to a single full invocation. With substitute_source_for_fake the
// feature phase uses the source images as the fake split instead of
// requiring pixel-phase outputs.
void run_phases(const Config& cfg, const Layout& lay,
                const std::vector<trainer::Phase>& phases,
                bool substitute_source_for_fake = false);

// Baseline: pretrained head codes, source gallery vs target probes.
eval::EvalReport evaluate_source_only(const Config& cfg, const Layout& lay);
// Trained pair of heads from the given snapshot, best of the four
// (probe head, gallery) pairings.
eval::EvalReport evaluate_adapted(const Config& cfg, const Layout& lay,
                                  const std::filesystem::path& head_snapshot);

// Writes the baseline and adapted reports; mode "identify" skips the ROC
// CSV export, "verify" and "both" write it.
void evaluate(const Config& cfg, const Layout& lay, const std::string& mode);

struct AblationRow {
  std::string grid;
  std::string cell;
  std::string seed;  // decimal seed, or "mean" for the per-cell summary row
  double rank1 = 0.0;
  double eer = 0.0;
};

// Runs the requested grid ("losses": t-s, t-f, t-s+t-f, t-s+t-f+consistency;
// "beta": 0.5, 1, 1.5, 2, 2.5) once per ablation seed, reusing per-seed
// data / pretrain / pixel artifacts when they already exist, and writes one
// CSV row per cell per seed plus a per-cell mean.
std::vector<AblationRow> run_ablation(const Config& cfg, const Layout& lay,
                                      const std::string& grid);

// Rewrites the experiment manifest: tool version, seed, config checksum and
// a checksum for every artifact currently present in the layout.
void write_manifest(const Config& cfg, const Layout& lay);

// Runs body with the failed-marker protocol: the marker exists while the
// command is in flight and afterwards exactly when it failed; the exit code
// is 0 on success and 1 on error.
int run_command(const Layout& lay, const std::function<void()>& body);

}  // namespace jpfa::experiment
