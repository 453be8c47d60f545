#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "jpfa/eval.hpp"
#include "jpfa/losses.hpp"
#include "jpfa/models.hpp"
#include "jpfa/rng.hpp"
#include "jpfa/synth.hpp"
#include "jpfa/trainer.hpp"

using namespace jpfa;
using namespace jpfa::trainer;

namespace {

synth::DatasetSplit tiny_source(int ids, int per, std::uint64_t seed) {
  auto bench = synth::generate_benchmark(
      ids, per, {synth::DomainStyle::flashlike(), synth::DomainStyle::naturalike()}, seed);
  return bench.at("flashlike");
}

synth::DatasetSplit tiny_target(int ids, int per, std::uint64_t seed) {
  auto bench = synth::generate_benchmark(
      ids, per, {synth::DomainStyle::flashlike(), synth::DomainStyle::naturalike()}, seed);
  return bench.at("naturalike").with_role(synth::DatasetSplit::Role::target);
}

TrainConfig small_cfg(Phase phase, int epochs, int batch, double lr, int k) {
  TrainConfig cfg;
  cfg.phase = phase;
  cfg.epochs = epochs;
  cfg.batch_size = batch;
  cfg.learning_rate = lr;
  cfg.seed = 7;
  cfg.code_length = k;
  cfg.weights.margin = 2.0 * k;
  return cfg;
}

}  // namespace

TEST_CASE("optimizer first step matches the closed form") {
  Tensor p = Tensor::from_data({1}, {1.0}, true);
  Optimizer opt({p}, 0.1);
  opt.apply({{0.5}});
  const double expected = 1.0 - 0.1 * 0.5 / (std::fabs(0.5) + 1e-8);
  CHECK(std::fabs(p.data()[0] - expected) < 1e-12);
  CHECK(opt.step_count() == 1);
}

TEST_CASE("optimizer with zero gradient or zero learning rate leaves parameters alone") {
  Tensor p = Tensor::from_data({3}, {1.0, -2.0, 0.5}, true);
  Optimizer opt({p}, 0.1);
  opt.apply({{0.0, 0.0, 0.0}});
  CHECK(p.data() == std::vector<double>{1.0, -2.0, 0.5});
  CHECK(opt.step_count() == 1);

  Optimizer frozen({p}, 0.0);
  frozen.apply({{5.0, -3.0, 1.0}});
  CHECK(p.data() == std::vector<double>{1.0, -2.0, 0.5});
}

TEST_CASE("optimizer statefulness and validation") {
  Tensor p = Tensor::from_data({1}, {0.0}, true);
  Optimizer opt({p}, 0.01);
  opt.apply({{1.0}});
  opt.apply({{1.0}});
  CHECK(opt.step_count() == 2);

  CHECK_THROWS_AS(opt.apply({}), std::invalid_argument);
  CHECK_THROWS_AS(opt.apply({{1.0, 2.0}}), std::invalid_argument);
  CHECK_THROWS_AS(Optimizer({p}, -1.0), std::invalid_argument);
}

TEST_CASE("optimizer step consumes and clears accumulated gradients") {
  Tensor p = Tensor::from_data({2}, {3.0, -1.0}, true);
  Optimizer opt({p}, 0.05);
  Tensor loss = p.square().sum();
  backward(loss);
  const std::vector<double> before = p.data();
  opt.step();
  CHECK(p.data() != before);
  for (double g : p.grad()) CHECK(g == 0.0);
  CHECK(opt.step_count() == 1);
}

TEST_CASE("train config validation rejects bad values") {
  TrainConfig cfg;
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.learning_rate = -0.1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.code_length = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.kernel_scales.clear();
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.mmd_ts_weight = -1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.weights.alpha = -1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  TrainConfig{}.validate();  // defaults are legal
}

TEST_CASE("training log records, averages and serializes") {
  TrainLog log;
  log.record("pretrain", 0, 0, "dhn", 2.0);
  log.record("pretrain", 0, 1, "dhn", 4.0);
  log.record("pretrain", 1, 0, "dhn", 1.0);
  CHECK(log.epoch_mean("pretrain", "dhn", 0) == 3.0);
  CHECK(log.epoch_mean("pretrain", "dhn", 1) == 1.0);
  CHECK_THROWS_AS(log.epoch_mean("pixel", "dhn", 0), std::invalid_argument);
  CHECK_THROWS_AS(log.epoch_mean("pretrain", "dhn", 5), std::invalid_argument);

  const auto path = std::filesystem::temp_directory_path() / "jpfa_trainer_log.csv";
  log.write_csv(path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "phase,epoch,batch,term,value");
  std::getline(in, line);
  CHECK(line == "pretrain,0,0,dhn,2");
}

TEST_CASE("pretraining learns, freezes the trunk, and reproduces bit-for-bit") {
  const synth::DatasetSplit source = tiny_source(4, 4, 5);
  const TrainConfig cfg = small_cfg(Phase::pretrain, 6, 8, 1e-3, 16);

  TrainLog log;
  PretrainedDhn dhn = pretrain_dhn(source, cfg, &log);
  CHECK(dhn.trunk.frozen());
  CHECK(dhn.head.code_length() == 16);
  CHECK(log.epoch_mean("pretrain", "dhn", cfg.epochs - 1) <
        log.epoch_mean("pretrain", "dhn", 0));

  PretrainedDhn again = pretrain_dhn(source, cfg, nullptr);
  CHECK(again.trunk.params().checksum() == dhn.trunk.params().checksum());
  CHECK(again.head.params().checksum() == dhn.head.params().checksum());

  CHECK_THROWS_AS(
      pretrain_dhn(source.with_role(synth::DatasetSplit::Role::target), cfg, nullptr),
      std::logic_error);
  CHECK_THROWS_AS(pretrain_dhn(source, small_cfg(Phase::pixel, 1, 8, 1e-3, 16), nullptr),
                  std::invalid_argument);
}

TEST_CASE("zero learning rate leaves the pretraining weights at their seed values") {
  const synth::DatasetSplit source = tiny_source(3, 2, 9);
  const TrainConfig cfg = small_cfg(Phase::pretrain, 2, 4, 0.0, 8);
  const PretrainedDhn dhn = pretrain_dhn(source, cfg, nullptr);

  const models::TrunkF fresh_trunk(mix_seed(cfg.seed, "trunk-init"));
  const models::SpecificHead fresh_head(mix_seed(cfg.seed, "head-init"), cfg.code_length);
  CHECK(dhn.trunk.params().checksum() == fresh_trunk.params().checksum());
  CHECK(dhn.head.params().checksum() == fresh_head.params().checksum());
}

TEST_CASE("whole-split code computation matches single-image forwards") {
  const synth::DatasetSplit source = tiny_source(3, 2, 11);
  models::TrunkF trunk(3);
  models::SpecificHead head(4, 8);
  const auto codes = compute_codes(trunk, head, source, 4);
  REQUIRE(static_cast<int>(codes.size()) == source.size());
  for (int i : {0, 3, 5}) {
    std::vector<double> px = source.pixels(i);
    const Tensor one = Tensor::from_data({1, 1, 32, 32}, std::move(px));
    CHECK(codes[i] == head.forward(trunk.forward(one)).data());
  }
}

TEST_CASE("pixel alignment produces a faithful fake split deterministically") {
  const synth::DatasetSplit source = tiny_source(3, 2, 21);
  const synth::DatasetSplit target = tiny_target(3, 2, 21);
  const PretrainedDhn dhn = pretrain_dhn(source, small_cfg(Phase::pretrain, 2, 6, 1e-3, 8));

  const std::uint64_t trunk_before = dhn.trunk.params().checksum();
  TrainLog log;
  const TrainConfig cfg = small_cfg(Phase::pixel, 2, 2, 2e-4, 8);
  PixelResult pix = train_pixel_alignment(source, target, dhn, cfg, &log);
  CHECK(dhn.trunk.params().checksum() == trunk_before);

  REQUIRE(pix.fake.size() == source.size());
  CHECK(pix.fake.role() == synth::DatasetSplit::Role::fake);
  CHECK(pix.fake.domain() == "fake-naturalike");
  for (int i = 0; i < pix.fake.size(); ++i) {
    CHECK(pix.fake.label_of(i) == source.label_of(i));
    CHECK(pix.fake.record(i).sample_index == source.record(i).sample_index);
    for (double v : pix.fake.pixels(i)) {
      CHECK(v > -1.0);
      CHECK(v < 1.0);
    }
  }
  // Logged terms exist for every batch of every epoch.
  CHECK(log.epoch_mean("pixel", "pixel_total", 0) > 0.0);
  CHECK(log.epoch_mean("pixel", "discriminator", cfg.epochs - 1) > 0.0);

  PixelResult again = train_pixel_alignment(source, target, dhn, cfg, nullptr);
  CHECK(again.to_target.params().checksum() == pix.to_target.params().checksum());
  CHECK(again.to_source.params().checksum() == pix.to_source.params().checksum());
  for (int i = 0; i < pix.fake.size(); ++i) {
    CHECK(again.fake.pixels(i) == pix.fake.pixels(i));
  }
}

TEST_CASE("pixel alignment enforces its protocol guards") {
  const synth::DatasetSplit source = tiny_source(2, 2, 23);
  const synth::DatasetSplit target = tiny_target(2, 2, 23);
  const TrainConfig cfg = small_cfg(Phase::pixel, 1, 2, 2e-4, 8);

  const PretrainedDhn dhn = pretrain_dhn(source, small_cfg(Phase::pretrain, 1, 4, 1e-3, 8));
  // Visible target labels break the firewall.
  CHECK_THROWS_AS(
      train_pixel_alignment(source, target.with_role(synth::DatasetSplit::Role::source), dhn, cfg,
                            nullptr),
      std::logic_error);
  // An unfrozen coder must be rejected.
  PretrainedDhn loose{models::TrunkF(1), models::SpecificHead(2, 8)};
  CHECK_THROWS_AS(train_pixel_alignment(source, target, loose, cfg, nullptr), std::logic_error);
  CHECK_THROWS_AS(
      train_pixel_alignment(source, target, dhn, small_cfg(Phase::feature, 1, 2, 2e-4, 8), nullptr),
      std::invalid_argument);
}

TEST_CASE("a heavier code-preservation weight tightens fake codes onto source codes") {
  const synth::DatasetSplit source = tiny_source(6, 3, 31);
  const synth::DatasetSplit target = tiny_target(6, 3, 31);
  const PretrainedDhn dhn = pretrain_dhn(source, small_cfg(Phase::pretrain, 4, 9, 1e-3, 8));

  auto mean_identity_gap = [&](double identity_weight) {
    TrainConfig cfg = small_cfg(Phase::pixel, 4, 3, 2e-4, 8);
    cfg.weights.identity_weight = identity_weight;
    const PixelResult pix = train_pixel_alignment(source, target, dhn, cfg, nullptr);
    const auto src = compute_codes(dhn.trunk, dhn.head, source, 9);
    const auto fak = compute_codes(dhn.trunk, dhn.head, pix.fake, 9);
    double total = 0.0;
    for (std::size_t i = 0; i < src.size(); ++i) {
      double d2 = 0.0;
      for (std::size_t j = 0; j < src[i].size(); ++j) {
        d2 += (src[i][j] - fak[i][j]) * (src[i][j] - fak[i][j]);
      }
      total += std::sqrt(d2);
    }
    return total / src.size();
  };
  CHECK(mean_identity_gap(100.0) < mean_identity_gap(1.0));
}

TEST_CASE("feature alignment trains heads deterministically over an untouched trunk") {
  const synth::DatasetSplit source = tiny_source(4, 3, 41);
  const synth::DatasetSplit target = tiny_target(4, 3, 41);
  const synth::DatasetSplit fake =
      tiny_source(4, 3, 41).with_role(synth::DatasetSplit::Role::fake);
  const PretrainedDhn dhn = pretrain_dhn(source, small_cfg(Phase::pretrain, 3, 6, 1e-3, 8));

  const std::uint64_t trunk_before = dhn.trunk.params().checksum();
  TrainLog log;
  const TrainConfig cfg = small_cfg(Phase::feature, 3, 6, 1e-3, 8);
  FeatureResult heads = train_feature_alignment(source, fake, target, dhn.trunk, dhn.head, cfg, &log);
  CHECK(dhn.trunk.params().checksum() == trunk_before);

  FeatureResult again =
      train_feature_alignment(source, fake, target, dhn.trunk, dhn.head, cfg, nullptr);
  CHECK(again.source_head.params().checksum() == heads.source_head.params().checksum());
  CHECK(again.fake_head.params().checksum() == heads.fake_head.params().checksum());

  // Per-batch bookkeeping: the joint scalar must equal the recombination of
  // its logged components.
  std::map<std::pair<int, int>, std::map<std::string, double>> by_batch;
  for (const LogRow& r : log.rows()) {
    if (r.phase == "feature") by_batch[{r.epoch, r.batch}][r.term] = r.value;
  }
  REQUIRE(!by_batch.empty());
  for (const auto& [key, terms] : by_batch) {
    const Tensor joint = losses::joint_objective(
        Tensor::scalar(terms.at("dhn")), Tensor::scalar(terms.at("pixel")),
        Tensor::scalar(terms.at("mmd_ts")), Tensor::scalar(terms.at("mmd_tf")),
        Tensor::scalar(terms.at("consistency")), cfg.weights);
    CHECK(std::fabs(joint.value() - terms.at("joint")) <= 1e-12);
  }
}

TEST_CASE("feature alignment guards its protocol") {
  const synth::DatasetSplit source = tiny_source(2, 2, 43);
  const synth::DatasetSplit target = tiny_target(2, 2, 43);
  const synth::DatasetSplit fake =
      tiny_source(2, 2, 43).with_role(synth::DatasetSplit::Role::fake);
  const PretrainedDhn dhn = pretrain_dhn(source, small_cfg(Phase::pretrain, 1, 4, 1e-3, 8));
  const TrainConfig cfg = small_cfg(Phase::feature, 1, 4, 1e-3, 8);

  CHECK_THROWS_AS(train_feature_alignment(
                      source, fake, target.with_role(synth::DatasetSplit::Role::source),
                      dhn.trunk, dhn.head, cfg, nullptr),
                  std::logic_error);
  CHECK_THROWS_AS(
      train_feature_alignment(source, fake, target, models::TrunkF(1), dhn.head, cfg, nullptr),
      std::logic_error);
  CHECK_THROWS_AS(train_feature_alignment(source, fake, target, dhn.trunk,
                                          models::SpecificHead(1, 32), cfg, nullptr),
                  std::invalid_argument);
  CHECK_THROWS_AS(train_feature_alignment(source, fake, target, dhn.trunk, dhn.head,
                                          small_cfg(Phase::pixel, 1, 4, 1e-3, 8), nullptr),
                  std::invalid_argument);
}

TEST_CASE("with alignment and consistency off, each head trains independently") {
  const synth::DatasetSplit source = tiny_source(3, 2, 47);
  const synth::DatasetSplit target = tiny_target(3, 2, 47);
  const synth::DatasetSplit fake_a =
      tiny_source(3, 2, 47).with_role(synth::DatasetSplit::Role::fake);
  const synth::DatasetSplit fake_b =
      tiny_source(3, 2, 48).with_role(synth::DatasetSplit::Role::fake);
  const PretrainedDhn dhn = pretrain_dhn(source, small_cfg(Phase::pretrain, 1, 6, 1e-3, 8));

  TrainConfig cfg = small_cfg(Phase::feature, 2, 3, 1e-3, 8);
  cfg.mmd_ts_weight = 0.0;
  cfg.mmd_tf_weight = 0.0;
  cfg.use_consistency = false;
  const FeatureResult with_a =
      train_feature_alignment(source, fake_a, target, dhn.trunk, dhn.head, cfg, nullptr);
  const FeatureResult with_b =
      train_feature_alignment(source, fake_b, target, dhn.trunk, dhn.head, cfg, nullptr);
  // The source head never sees the fake split, so swapping it changes nothing.
  CHECK(with_a.source_head.params().checksum() == with_b.source_head.params().checksum());
  // The fake head does see it, so it must differ.
  CHECK(with_a.fake_head.params().checksum() != with_b.fake_head.params().checksum());
}

TEST_CASE("zero-step feature alignment returns the documented initial heads") {
  const synth::DatasetSplit source = tiny_source(2, 2, 53);
  const synth::DatasetSplit target = tiny_target(2, 2, 53);
  const synth::DatasetSplit fake =
      tiny_source(2, 2, 53).with_role(synth::DatasetSplit::Role::fake);
  const PretrainedDhn dhn = pretrain_dhn(source, small_cfg(Phase::pretrain, 1, 4, 1e-3, 8));

  const TrainConfig cfg = small_cfg(Phase::feature, 1, 4, 0.0, 8);
  const FeatureResult heads =
      train_feature_alignment(source, fake, target, dhn.trunk, dhn.head, cfg, nullptr);
  // Registries share tensor names, so equal checksums mean equal weights.
  // The source head warm-starts from the pretrained head; the fake head is a
  // fresh seeded draw, so it matches an independently constructed head.
  CHECK(heads.source_head.params().checksum() == dhn.head.params().checksum());
  const models::SpecificHead fresh(mix_seed(cfg.seed, "fake-head"), cfg.code_length);
  CHECK(heads.fake_head.params().checksum() == fresh.params().checksum());
  CHECK(heads.fake_head.params().checksum() != dhn.head.params().checksum());
}

TEST_CASE("garbage target labels cannot influence either alignment phase") {
  const synth::DatasetSplit source = tiny_source(3, 2, 61);
  const synth::DatasetSplit clean_target = tiny_target(3, 2, 61);
  // Same pixels, nonsense labels: if any training path reads them, weights
  // will diverge.
  synth::DatasetSplit poisoned(synth::DatasetSplit::Role::source, clean_target.domain());
  for (int i = 0; i < clean_target.size(); ++i) {
    synth::SampleRecord rec = clean_target.record(i);
    rec.label = 7000 + 13 * i;
    poisoned.add(std::move(rec));
  }
  const synth::DatasetSplit poisoned_target =
      poisoned.with_role(synth::DatasetSplit::Role::target);

  const PretrainedDhn dhn = pretrain_dhn(source, small_cfg(Phase::pretrain, 2, 6, 1e-3, 8));
  const TrainConfig pixel_cfg = small_cfg(Phase::pixel, 2, 2, 2e-4, 8);
  const PixelResult pix_clean = train_pixel_alignment(source, clean_target, dhn, pixel_cfg, nullptr);
  const PixelResult pix_poisoned =
      train_pixel_alignment(source, poisoned_target, dhn, pixel_cfg, nullptr);
  CHECK(pix_clean.to_target.params().checksum() == pix_poisoned.to_target.params().checksum());

  const TrainConfig feat_cfg = small_cfg(Phase::feature, 2, 3, 1e-3, 8);
  const FeatureResult ft_clean = train_feature_alignment(source, pix_clean.fake, clean_target,
                                                         dhn.trunk, dhn.head, feat_cfg, nullptr);
  const FeatureResult ft_poisoned = train_feature_alignment(
      source, pix_poisoned.fake, poisoned_target, dhn.trunk, dhn.head, feat_cfg, nullptr);
  CHECK(ft_clean.source_head.params().checksum() == ft_poisoned.source_head.params().checksum());
  CHECK(ft_clean.fake_head.params().checksum() == ft_poisoned.fake_head.params().checksum());
}

TEST_CASE("the logged feature-phase total recomposes exactly from its logged terms") {
  const synth::DatasetSplit source = tiny_source(4, 3, 71);
  const synth::DatasetSplit target = tiny_target(4, 3, 71);
  const TrainConfig pre_cfg = small_cfg(Phase::pretrain, 2, 4, 1e-3, 8);
  const PretrainedDhn dhn = pretrain_dhn(source, pre_cfg);
  const PixelResult pix =
      train_pixel_alignment(source, target, dhn, small_cfg(Phase::pixel, 1, 2, 2e-4, 8));

  TrainLog log;
  const TrainConfig feat_cfg = small_cfg(Phase::feature, 2, 4, 1e-3, 8);
  train_feature_alignment(source, pix.fake, target, dhn.trunk, dhn.head, feat_cfg, &log);

  // Group the flat rows back into batches and recompose each batch's total
  // from its term values through the same bookkeeping sum.
  std::map<std::pair<int, int>, std::map<std::string, double>> batches;
  for (const LogRow& row : log.rows()) {
    REQUIRE(row.phase == "feature");
    batches[{row.epoch, row.batch}][row.term] = row.value;
  }
  REQUIRE(batches.size() >= 4);
  for (const auto& [key, terms] : batches) {
    const Tensor recomposed = losses::joint_objective(
        Tensor::scalar(terms.at("dhn")), Tensor::scalar(terms.at("pixel")),
        Tensor::scalar(terms.at("mmd_ts")), Tensor::scalar(terms.at("mmd_tf")),
        Tensor::scalar(terms.at("consistency")), feat_cfg.weights);
    CHECK(std::fabs(terms.at("joint") - recomposed.value()) < 1e-12);
  }
}

TEST_CASE("stock-benchmark pretraining descends smoothly to the within-source floor") {
  const auto bench = synth::generate_benchmark(
      20, 10, {synth::DomainStyle::flashlike(), synth::DomainStyle::naturalike()}, 42);
  const synth::DatasetSplit& source = bench.at("flashlike");

  TrainConfig cfg;  // stock pretraining settings
  cfg.phase = Phase::pretrain;
  TrainLog log;
  const PretrainedDhn dhn = pretrain_dhn(source, cfg, &log);

  // The final epoch's mean loss ends at a quarter of the first epoch's, and
  // the curve is non-increasing once averaged over five-epoch windows.
  std::vector<double> per_epoch;
  for (int e = 0; e < cfg.epochs; ++e) per_epoch.push_back(log.epoch_mean("pretrain", "dhn", e));
  CHECK(per_epoch.back() <= 0.25 * per_epoch.front());
  std::vector<double> windows;
  for (int w = 0; w + 5 <= cfg.epochs; w += 5) {
    windows.push_back((per_epoch[w] + per_epoch[w + 1] + per_epoch[w + 2] + per_epoch[w + 3] +
                       per_epoch[w + 4]) /
                      5.0);
  }
  for (std::size_t i = 1; i < windows.size(); ++i) CHECK(windows[i] <= windows[i - 1]);

  // Identities must be learnable inside the source style itself: match each
  // identity's later samples against a gallery of its earlier ones.
  const auto codes = compute_codes(dhn.trunk, dhn.head, source);
  eval::BinaryCodeSet gallery, probes;
  for (int i = 0; i < source.size(); ++i) {
    const synth::SampleRecord& rec = source.record(i);
    auto& side = rec.sample_index < 5 ? gallery : probes;
    side.codes.push_back(eval::binarize(codes[i]));
    side.labels.push_back(rec.label);
  }
  CHECK(eval::identify(probes, gallery) >= 0.95);
}
