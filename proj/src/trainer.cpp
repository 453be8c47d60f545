#include "jpfa/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "jpfa/rng.hpp"

namespace jpfa::trainer {

namespace {

using synth::DatasetSplit;

std::vector<int> shuffled_indices(int n, std::uint64_t seed) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(idx);
  return idx;
}

std::vector<int> slice(const std::vector<int>& idx, int start, int count) {
  return std::vector<int>(idx.begin() + start, idx.begin() + start + count);
}

Tensor batch_images(const DatasetSplit& split, const std::vector<int>& idx) {
  const int b = static_cast<int>(idx.size());
  const int px = synth::kImageSize * synth::kImageSize;
  std::vector<double> data(static_cast<std::size_t>(b) * px);
  for (int i = 0; i < b; ++i) {
    const std::vector<double>& p = split.pixels(idx[i]);
    std::copy(p.begin(), p.end(), data.begin() + static_cast<std::size_t>(i) * px);
  }
  return Tensor::from_data({b, 1, synth::kImageSize, synth::kImageSize}, std::move(data));
}

// Stacks precomputed per-item rows into one leaf tensor of the given
// per-item shape.
Tensor gather_rows(const std::vector<std::vector<double>>& rows, const std::vector<int>& idx,
                   Shape per_item) {
  const int b = static_cast<int>(idx.size());
  const std::size_t len = rows.empty() ? 0 : rows.front().size();
  std::vector<double> data(static_cast<std::size_t>(b) * len);
  for (int i = 0; i < b; ++i) {
    const std::vector<double>& r = rows[idx[i]];
    std::copy(r.begin(), r.end(), data.begin() + static_cast<std::size_t>(i) * len);
  }
  Shape shape{b};
  shape.insert(shape.end(), per_item.begin(), per_item.end());
  return Tensor::from_data(std::move(shape), std::move(data));
}

void zero_grads(const models::ParamRegistry& reg) {
  for (const auto& [name, t] : reg.items) {
    Tensor handle = t;
    handle.zero_grad();
  }
}

void copy_params(const models::ParamRegistry& from, const models::ParamRegistry& to) {
  if (from.items.size() != to.items.size()) {
    throw std::invalid_argument("copy_params: registries hold different parameter counts");
  }
  for (std::size_t i = 0; i < from.items.size(); ++i) {
    const Tensor& src = from.items[i].second;
    Tensor dst = to.items[i].second;
    if (src.shape() != dst.shape()) {
      throw std::invalid_argument("copy_params: shape mismatch at " + from.items[i].first);
    }
    dst.mutable_data() = src.data();
  }
}

// Per-item trunk outputs, flattened; the trunk must not be training.
std::vector<std::vector<double>> trunk_feature_rows(const models::TrunkF& trunk,
                                                    const DatasetSplit& split, int batch_size) {
  std::vector<std::vector<double>> rows;
  rows.reserve(split.size());
  std::vector<int> order(split.size());
  std::iota(order.begin(), order.end(), 0);
  for (int start = 0; start < split.size(); start += batch_size) {
    const int take = std::min(batch_size, split.size() - start);
    const Tensor feats = trunk.forward(batch_images(split, slice(order, start, take)));
    const std::vector<double>& d = feats.data();
    const std::size_t per = d.size() / take;
    for (int i = 0; i < take; ++i) {
      rows.emplace_back(d.begin() + i * per, d.begin() + (i + 1) * per);
    }
  }
  return rows;
}

std::vector<int> labels_for(const DatasetSplit& split, const std::vector<int>& idx) {
  std::vector<int> labels;
  labels.reserve(idx.size());
  for (int i : idx) labels.push_back(split.label_of(i));
  return labels;
}

}  // namespace

Optimizer::Optimizer(std::vector<Tensor> params, double learning_rate, double beta1, double beta2,
                     double epsilon)
    : params_(std::move(params)), lr_(learning_rate), b1_(beta1), b2_(beta2), eps_(epsilon) {
  if (lr_ < 0.0 || !(b1_ >= 0.0 && b1_ < 1.0) || !(b2_ >= 0.0 && b2_ < 1.0) || eps_ <= 0.0) {
    throw std::invalid_argument("optimizer: bad hyperparameters");
  }
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Optimizer::apply(const std::vector<std::vector<double>>& grads) {
  if (grads.size() != params_.size()) {
    throw std::invalid_argument("optimizer: expected " + std::to_string(params_.size()) +
                                " gradients, got " + std::to_string(grads.size()));
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (grads[i].size() != params_[i].size()) {
      throw std::invalid_argument("optimizer: gradient " + std::to_string(i) + " has " +
                                  std::to_string(grads[i].size()) + " entries, parameter has " +
                                  std::to_string(params_[i].size()));
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(b1_, t_);
  const double bc2 = 1.0 - std::pow(b2_, t_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    std::vector<double>& data = params_[i].mutable_data();
    std::vector<double>& m = m_[i];
    std::vector<double>& v = v_[i];
    const std::vector<double>& g = grads[i];
    for (std::size_t j = 0; j < data.size(); ++j) {
      m[j] = b1_ * m[j] + (1.0 - b1_) * g[j];
      v[j] = b2_ * v[j] + (1.0 - b2_) * g[j] * g[j];
      data[j] -= lr_ * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
    }
  }
}

void Optimizer::step() {
  std::vector<std::vector<double>> grads;
  grads.reserve(params_.size());
  for (const Tensor& p : params_) grads.push_back(p.grad());
  apply(grads);
  for (Tensor& p : params_) p.zero_grad();
}

std::string phase_name(Phase phase) {
  switch (phase) {
    case Phase::pretrain: return "pretrain";
    case Phase::pixel: return "pixel";
    case Phase::feature: return "feature";
  }
  throw std::logic_error("phase_name: unknown phase");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("config: epochs must be positive");
  if (batch_size < 1) throw std::invalid_argument("config: batch_size must be positive");
  if (learning_rate < 0.0 || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("config: learning_rate must be finite and non-negative");
  }
  if (code_length < 1) throw std::invalid_argument("config: code_length must be positive");
  if (mmd_ts_weight < 0.0 || mmd_tf_weight < 0.0) {
    throw std::invalid_argument("config: distribution-alignment weights must be non-negative");
  }
  if (kernel_scales.empty()) throw std::invalid_argument("config: kernel_scales must be non-empty");
  for (double s : kernel_scales) {
    if (!(s > 0.0) || !std::isfinite(s)) {
      throw std::invalid_argument("config: kernel scales must be positive and finite");
    }
  }
  weights.validate();
}

void TrainLog::record(const std::string& phase, int epoch, int batch, const std::string& term,
                      double value) {
  rows_.push_back({phase, epoch, batch, term, value});
}

double TrainLog::epoch_mean(const std::string& phase, const std::string& term, int epoch) const {
  double sum = 0.0;
  int count = 0;
  for (const LogRow& r : rows_) {
    if (r.phase == phase && r.term == term && r.epoch == epoch) {
      sum += r.value;
      ++count;
    }
  }
  if (count == 0) {
    throw std::invalid_argument("train log: no rows for " + phase + "/" + term + " epoch " +
                                std::to_string(epoch));
  }
  return sum / count;
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("train log: cannot open " + path.string());
  out << "phase,epoch,batch,term,value\n";
  out.precision(17);
  for (const LogRow& r : rows_) {
    out << r.phase << ',' << r.epoch << ',' << r.batch << ',' << r.term << ',' << r.value << '\n';
  }
  if (!out) throw std::runtime_error("train log: write failed for " + path.string());
}

PretrainedDhn pretrain_dhn(const DatasetSplit& source, const TrainConfig& cfg, TrainLog* log) {
  cfg.validate();
  if (cfg.phase != Phase::pretrain) throw std::invalid_argument("pretrain: wrong config phase");
  if (!source.labels_visible()) {
    throw std::logic_error("pretrain: source labels must be visible");
  }
  if (source.size() < 2) throw std::invalid_argument("pretrain: need at least 2 samples");

  models::TrunkF trunk(mix_seed(cfg.seed, "trunk-init"));
  models::SpecificHead head(mix_seed(cfg.seed, "head-init"), cfg.code_length);
  std::vector<Tensor> params = trunk.params().tensors();
  for (const Tensor& t : head.params().tensors()) params.push_back(t);
  Optimizer opt(std::move(params), cfg.learning_rate);

  const std::uint64_t order_seed = mix_seed(cfg.seed, "pretrain-order");
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::vector<int> order = shuffled_indices(source.size(), mix_seed(order_seed, epoch));
    int batch_no = 0;
    for (int start = 0; start + 2 <= source.size(); start += cfg.batch_size) {
      const int take = std::min(cfg.batch_size, source.size() - start);
      if (take < 2) break;  // pairwise loss needs at least one pair
      const std::vector<int> idx = slice(order, start, take);
      const Tensor codes = head.forward(trunk.forward(batch_images(source, idx)));
      const losses::RelationMatrix rel = losses::RelationMatrix::from_labels(labels_for(source, idx));
      const Tensor loss = losses::dhn_batch_loss(codes, rel, cfg.weights);
      backward(loss);
      opt.step();
      if (log) log->record("pretrain", epoch, batch_no, "dhn", loss.value());
      ++batch_no;
    }
  }
  trunk.freeze();
  return {std::move(trunk), std::move(head)};
}

PixelResult train_pixel_alignment(const DatasetSplit& source, const DatasetSplit& target,
                                  const PretrainedDhn& dhn, const TrainConfig& cfg,
                                  TrainLog* log) {
  cfg.validate();
  if (cfg.phase != Phase::pixel) throw std::invalid_argument("pixel alignment: wrong config phase");
  if (target.labels_visible()) {
    throw std::logic_error("pixel alignment: target labels must be hidden");
  }
  if (!dhn.trunk.frozen()) {
    throw std::logic_error("pixel alignment: the pretrained trunk must be frozen");
  }
  if (source.size() < 1 || target.size() < 1) {
    throw std::invalid_argument("pixel alignment: empty split");
  }

  models::Generator to_target(mix_seed(cfg.seed, "gen-to-target"));
  models::Generator to_source(mix_seed(cfg.seed, "gen-to-source"));
  models::Discriminator disc_source(mix_seed(cfg.seed, "disc-source"));
  models::Discriminator disc_target(mix_seed(cfg.seed, "disc-target"));

  std::vector<Tensor> gen_params = to_target.params().tensors();
  for (const Tensor& t : to_source.params().tensors()) gen_params.push_back(t);
  std::vector<Tensor> disc_params = disc_source.params().tensors();
  for (const Tensor& t : disc_target.params().tensors()) disc_params.push_back(t);
  // beta1 = 0.5 for both adversarial optimizers, the usual image-translation
  // setting; the momentum window must stay short when the objective moves.
  Optimizer opt_gen(std::move(gen_params), cfg.learning_rate, 0.5);
  Optimizer opt_disc(std::move(disc_params), cfg.learning_rate, 0.5);

  // The coder is frozen all phase, so every source image's reference code is
  // a constant; compute them once.
  const std::vector<std::vector<double>> source_codes =
      compute_codes(dhn.trunk, dhn.head, source, 32);
  const Shape code_shape{dhn.head.code_length()};

  const int n = std::min(source.size(), target.size());
  const std::uint64_t source_order = mix_seed(cfg.seed, "pixel-source-order");
  const std::uint64_t target_order = mix_seed(cfg.seed, "pixel-target-order");
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::vector<int> src_idx = shuffled_indices(source.size(), mix_seed(source_order, epoch));
    const std::vector<int> tgt_idx = shuffled_indices(target.size(), mix_seed(target_order, epoch));
    int batch_no = 0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int take = std::min(cfg.batch_size, n - start);
      const std::vector<int> sb = slice(src_idx, start, take);
      const std::vector<int> tb = slice(tgt_idx, start, take);
      const Tensor real_s = batch_images(source, sb);
      const Tensor real_t = batch_images(target, tb);

      const Tensor fake_t = to_target.forward(real_s);
      const Tensor fake_s = to_source.forward(real_t);

      // Critic update on detached fakes, so only critic weights move.
      const losses::AdversarialTerms crit_t =
          losses::adversarial_losses(disc_target.forward(real_t), disc_target.forward(fake_t.detach()));
      const losses::AdversarialTerms crit_s =
          losses::adversarial_losses(disc_source.forward(real_s), disc_source.forward(fake_s.detach()));
      const Tensor disc_loss = crit_t.discriminator + crit_s.discriminator;
      backward(disc_loss);
      opt_disc.step();

      // Generator update against the refreshed critics.
      const Tensor adv = disc_target.forward(fake_t).add_scalar(-1.0).square().mean() +
                         disc_source.forward(fake_s).add_scalar(-1.0).square().mean();
      const Tensor cycle = losses::cycle_loss(real_s, to_source.forward(fake_t)) +
                           losses::cycle_loss(real_t, to_target.forward(fake_s));
      const Tensor ref_codes = gather_rows(source_codes, sb, code_shape);
      const Tensor fake_codes = dhn.head.forward(dhn.trunk.forward(fake_t));
      const Tensor identity = losses::identity_loss(ref_codes, fake_codes);
      const Tensor total = losses::pixel_objective({adv, cycle, identity}, cfg.weights);
      backward(total);
      opt_gen.step();
      // The generator graph also reaches critic and coder weights; drop
      // those gradients so the next critic step starts clean.
      zero_grads(disc_source.params());
      zero_grads(disc_target.params());
      zero_grads(dhn.head.params());

      if (log) {
        log->record("pixel", epoch, batch_no, "discriminator", disc_loss.value());
        log->record("pixel", epoch, batch_no, "adversarial", adv.value());
        log->record("pixel", epoch, batch_no, "cycle", cycle.value());
        log->record("pixel", epoch, batch_no, "identity", identity.value());
        log->record("pixel", epoch, batch_no, "pixel_total", total.value());
      }
      ++batch_no;
    }
  }

  // Materialize the fake split: every source image in the target's style,
  // labels inherited from the source.
  DatasetSplit fake(DatasetSplit::Role::fake, "fake-" + target.domain());
  std::vector<int> order(source.size());
  std::iota(order.begin(), order.end(), 0);
  const int px = synth::kImageSize * synth::kImageSize;
  for (int start = 0; start < source.size(); start += 16) {
    const int take = std::min(16, source.size() - start);
    const std::vector<int> idx = slice(order, start, take);
    const Tensor out = to_target.forward(batch_images(source, idx));
    const std::vector<double>& d = out.data();
    for (int i = 0; i < take; ++i) {
      const synth::SampleRecord& src = source.record(idx[i]);
      synth::SampleRecord rec;
      rec.pixels.assign(d.begin() + static_cast<std::size_t>(i) * px,
                        d.begin() + static_cast<std::size_t>(i + 1) * px);
      rec.label = src.label;
      rec.domain = fake.domain();
      rec.sample_index = src.sample_index;
      rec.spec_seed = src.spec_seed;
      fake.add(std::move(rec));
    }
  }

  return {std::move(to_target), std::move(to_source), std::move(disc_source),
          std::move(disc_target), std::move(fake)};
}

FeatureResult train_feature_alignment(const DatasetSplit& source, const DatasetSplit& fake,
                                      const DatasetSplit& target, const models::TrunkF& trunk,
                                      const models::SpecificHead& pretrained_head,
                                      const TrainConfig& cfg, TrainLog* log) {
  cfg.validate();
  if (cfg.phase != Phase::feature) {
    throw std::invalid_argument("feature alignment: wrong config phase");
  }
  if (target.labels_visible()) {
    throw std::logic_error("feature alignment: target labels must be hidden");
  }
  if (!trunk.frozen()) throw std::logic_error("feature alignment: trunk must be frozen");
  if (pretrained_head.code_length() != cfg.code_length) {
    throw std::invalid_argument("feature alignment: pretrained head code length " +
                                std::to_string(pretrained_head.code_length()) +
                                " does not match configured " + std::to_string(cfg.code_length));
  }
  if (source.size() < 2 || fake.size() < 2 || target.size() < 1) {
    throw std::invalid_argument("feature alignment: splits too small");
  }

  // F_S continues from the pretrained head (same domain, same data); F_F
  // starts fresh because its training set is the translated images, not the
  // source, and a bit-identical twin would give the head-agreement term an
  // exactly-zero gradient at the start.
  models::SpecificHead source_head(mix_seed(cfg.seed, "source-head"), cfg.code_length);
  models::SpecificHead fake_head(mix_seed(cfg.seed, "fake-head"), cfg.code_length);
  copy_params(pretrained_head.params(), source_head.params());

  std::vector<Tensor> params = source_head.params().tensors();
  for (const Tensor& t : fake_head.params().tensors()) params.push_back(t);
  Optimizer opt(std::move(params), cfg.learning_rate);

  // The trunk is frozen, so per-image features are constants; compute them
  // once per split.
  const Shape feat_shape{32, 4, 4};
  const auto feats_source = trunk_feature_rows(trunk, source, 32);
  const auto feats_fake = trunk_feature_rows(trunk, fake, 32);
  const auto feats_target = trunk_feature_rows(trunk, target, 32);

  const Tensor zero = Tensor::scalar(0.0);
  const int n = std::min(source.size(), std::min(fake.size(), target.size()));
  const std::uint64_t so = mix_seed(cfg.seed, "feature-source-order");
  const std::uint64_t fo = mix_seed(cfg.seed, "feature-fake-order");
  const std::uint64_t to = mix_seed(cfg.seed, "feature-target-order");
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::vector<int> src_idx = shuffled_indices(source.size(), mix_seed(so, epoch));
    const std::vector<int> fak_idx = shuffled_indices(fake.size(), mix_seed(fo, epoch));
    const std::vector<int> tgt_idx = shuffled_indices(target.size(), mix_seed(to, epoch));
    int batch_no = 0;
    for (int start = 0; start + 2 <= n; start += cfg.batch_size) {
      const int take = std::min(cfg.batch_size, n - start);
      if (take < 2) break;
      const std::vector<int> sb = slice(src_idx, start, take);
      const std::vector<int> fb = slice(fak_idx, start, take);
      const std::vector<int> tb = slice(tgt_idx, start, take);

      const Tensor raw_s = source_head.forward_raw(gather_rows(feats_source, sb, feat_shape));
      const Tensor raw_f = fake_head.forward_raw(gather_rows(feats_fake, fb, feat_shape));
      const Tensor codes_s = raw_s.tanh();
      const Tensor codes_f = raw_f.tanh();
      const Tensor target_feats = gather_rows(feats_target, tb, feat_shape);
      const Tensor raw_ts = source_head.forward_raw(target_feats);
      const Tensor raw_tf = fake_head.forward_raw(target_feats);
      const Tensor codes_ts = raw_ts.tanh();
      const Tensor codes_tf = raw_tf.tanh();

      const losses::RelationMatrix rel_s =
          losses::RelationMatrix::from_labels(labels_for(source, sb));
      const losses::RelationMatrix rel_f =
          losses::RelationMatrix::from_labels(labels_for(fake, fb));
      const Tensor dhn = losses::dhn_batch_loss(codes_s, rel_s, cfg.weights) +
                         losses::dhn_batch_loss(codes_f, rel_f, cfg.weights);

      auto alignment = [&](const Tensor& t_codes, const Tensor& d_codes, double weight) {
        if (weight == 0.0) return zero;
        const double med = losses::median_pairwise_distance(t_codes, d_codes);
        Tensor term = losses::mk_mmd(t_codes, d_codes, losses::KernelFamily::ladder(med));
        return weight == 1.0 ? term : term.scale(weight);
      };
      const Tensor mmd_ts = cfg.mmd_on_pre_activation
                                ? alignment(raw_ts, raw_s, cfg.mmd_ts_weight)
                                : alignment(codes_ts, codes_s, cfg.mmd_ts_weight);
      const Tensor mmd_tf = cfg.mmd_on_pre_activation
                                ? alignment(raw_tf, raw_f, cfg.mmd_tf_weight)
                                : alignment(codes_tf, codes_f, cfg.mmd_tf_weight);
      const Tensor consis =
          cfg.use_consistency ? losses::consistency_loss(codes_ts, codes_tf) : zero;

      const Tensor total = losses::joint_objective(dhn, zero, mmd_ts, mmd_tf, consis, cfg.weights);
      backward(total);
      opt.step();

      if (log) {
        log->record("feature", epoch, batch_no, "dhn", dhn.value());
        log->record("feature", epoch, batch_no, "pixel", 0.0);
        log->record("feature", epoch, batch_no, "mmd_ts", mmd_ts.value());
        log->record("feature", epoch, batch_no, "mmd_tf", mmd_tf.value());
        log->record("feature", epoch, batch_no, "consistency", consis.value());
        log->record("feature", epoch, batch_no, "joint", total.value());
      }
      ++batch_no;
    }
  }

  return {std::move(source_head), std::move(fake_head)};
}

std::vector<std::vector<double>> compute_codes(const models::TrunkF& trunk,
                                               const models::SpecificHead& head,
                                               const DatasetSplit& split, int batch_size) {
  if (batch_size < 1) throw std::invalid_argument("compute_codes: batch_size must be positive");
  std::vector<std::vector<double>> out;
  out.reserve(split.size());
  std::vector<int> order(split.size());
  std::iota(order.begin(), order.end(), 0);
  const int k = head.code_length();
  for (int start = 0; start < split.size(); start += batch_size) {
    const int take = std::min(batch_size, split.size() - start);
    const Tensor codes = head.forward(trunk.forward(batch_images(split, slice(order, start, take))));
    const std::vector<double>& d = codes.data();
    for (int i = 0; i < take; ++i) {
      out.emplace_back(d.begin() + static_cast<std::size_t>(i) * k,
                       d.begin() + static_cast<std::size_t>(i + 1) * k);
    }
  }
  return out;
}

}  // namespace jpfa::trainer
