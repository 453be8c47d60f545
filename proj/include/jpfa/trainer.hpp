#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "jpfa/losses.hpp"
#include "jpfa/models.hpp"
#include "jpfa/synth.hpp"

namespace jpfa::trainer {

// Adaptive-moment gradient descent over a fixed parameter list. step() reads
// the gradient accumulated on each parameter, applies the update, and clears
// the gradients; apply() takes explicit gradients instead.
class Optimizer {
 public:
  Optimizer(std::vector<Tensor> params, double learning_rate, double beta1 = 0.9,
            double beta2 = 0.999, double epsilon = 1e-8);

  void step();
  void apply(const std::vector<std::vector<double>>& grads);
  int step_count() const { return t_; }
  double learning_rate() const { return lr_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, b1_, b2_, eps_;
  int t_ = 0;
};

enum class Phase { pretrain, pixel, feature };
std::string phase_name(Phase phase);

// One phase's knobs. Ablation switches: mmd_ts_weight / mmd_tf_weight scale
// the two distribution-alignment terms, use_consistency gates the
// head-agreement term (its strength stays weights.beta).
struct TrainConfig {
  Phase phase = Phase::pretrain;
  int epochs = 30;
  int batch_size = 16;
  double learning_rate = 1e-3;
  std::uint64_t seed = 42;
  losses::LossWeights weights;
  std::vector<double> kernel_scales = {0.25, 0.5, 1.0, 2.0, 4.0};
  int code_length = 64;
  double mmd_ts_weight = 1.0;
  double mmd_tf_weight = 1.0;
  bool use_consistency = true;
  bool mmd_on_pre_activation = false;  // compare codes before the final tanh

  void validate() const;
};

// Flat record of every logged scalar, one term per row.
struct LogRow {
  std::string phase;
  int epoch;
  int batch;
  std::string term;
  double value;
};

class TrainLog {
 public:
  void record(const std::string& phase, int epoch, int batch, const std::string& term,
              double value);
  const std::vector<LogRow>& rows() const { return rows_; }
  // Mean of a term's values within one epoch of one phase; throws if absent.
  double epoch_mean(const std::string& phase, const std::string& term, int epoch) const;
  void write_csv(const std::filesystem::path& path) const;

 private:
  std::vector<LogRow> rows_;
};

struct PretrainedDhn {
  models::TrunkF trunk;
  models::SpecificHead head;
};

struct PixelResult {
  models::Generator to_target;  // source style -> target style
  models::Generator to_source;
  models::Discriminator disc_source;
  models::Discriminator disc_target;
  synth::DatasetSplit fake;
};

struct FeatureResult {
  models::SpecificHead source_head;
  models::SpecificHead fake_head;
};

// Supervised hashing pretraining on the labeled source split; the returned
// trunk is frozen. Rejects splits whose labels are hidden.
PretrainedDhn pretrain_dhn(const synth::DatasetSplit& source, const TrainConfig& cfg,
                           TrainLog* log = nullptr);

// Adversarial style transfer with cycle reconstruction and code-preservation
// through the frozen pretrained coder. The target split must hide its
// labels. Returns the trained maps plus the fake split: every source image
// translated to the target style, labels copied from the source.
PixelResult train_pixel_alignment(const synth::DatasetSplit& source,
                                  const synth::DatasetSplit& target, const PretrainedDhn& dhn,
                                  const TrainConfig& cfg, TrainLog* log = nullptr);

// Trains the two domain-specific heads over the frozen trunk: supervised
// hashing on source and fake, distribution alignment of target codes toward
// each, and the head-agreement penalty. Target labels stay hidden.
FeatureResult train_feature_alignment(const synth::DatasetSplit& source,
                                      const synth::DatasetSplit& fake,
                                      const synth::DatasetSplit& target,
                                      const models::TrunkF& trunk,
                                      const models::SpecificHead& pretrained_head,
                                      const TrainConfig& cfg, TrainLog* log = nullptr);

// Forward a whole split through trunk + head in inference batches.
std::vector<std::vector<double>> compute_codes(const models::TrunkF& trunk,
                                               const models::SpecificHead& head,
                                               const synth::DatasetSplit& split,
                                               int batch_size = 32);

}  // namespace jpfa::trainer
