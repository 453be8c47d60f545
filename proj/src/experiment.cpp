#include "jpfa/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <system_error>

#include "json.hpp"

#include "jpfa/checksum.hpp"
#include "jpfa/models.hpp"
#include "jpfa/rng.hpp"

namespace jpfa::experiment {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

void check_keys(const nlohmann::json& obj, const std::vector<std::string>& keys,
                const std::string& where) {
  if (!obj.is_object()) throw std::runtime_error("config: " + where + " must be an object");
  for (const std::string& k : keys) {
    if (!obj.contains(k)) {
      throw std::runtime_error("config: missing field '" + k + "' in " + where);
    }
  }
  for (const auto& item : obj.items()) {
    if (std::find(keys.begin(), keys.end(), item.key()) == keys.end()) {
      throw std::runtime_error("config: unknown field '" + item.key() + "' in " + where);
    }
  }
}

void require_artifact(const fs::path& path, const std::string& what, const std::string& hint) {
  if (!fs::exists(path)) {
    throw std::runtime_error("missing " + what + ": " + path.string() + " (" + hint + ")");
  }
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string image_name(const synth::SampleRecord& rec) {
  return std::to_string(rec.label) + "_" + std::to_string(rec.sample_index) + ".pgm";
}

// Writes a split as PGM files plus a manifest listing every record in split
// order with a checksum of its file.
void write_split(const synth::DatasetSplit& split, const fs::path& dir, ordered_json& records) {
  fs::create_directories(dir);
  for (int i = 0; i < split.size(); ++i) {
    const synth::SampleRecord& rec = split.record(i);
    const fs::path file = dir / image_name(rec);
    synth::write_pgm(file, rec.pixels, synth::kImageSize, synth::kImageSize);
    ordered_json r;
    r["file"] = dir.filename().string() + "/" + image_name(rec);
    r["label"] = rec.label;
    r["domain"] = rec.domain;
    r["sample_index"] = rec.sample_index;
    r["spec_seed"] = rec.spec_seed;
    r["checksum"] = checksum_hex(checksum_file(file));
    records.push_back(std::move(r));
  }
}

synth::DatasetSplit load_source(const Config& cfg, const Layout& lay) {
  require_artifact(lay.style_dir(cfg.source_style), "source images",
                   "run `jpfa gen-data` first");
  return synth::load_image_folder(lay.style_dir(cfg.source_style), cfg.source_style);
}

synth::DatasetSplit load_target(const Config& cfg, const Layout& lay) {
  require_artifact(lay.style_dir(cfg.target_style), "target images",
                   "run `jpfa gen-data` first");
  return synth::load_image_folder(lay.style_dir(cfg.target_style), cfg.target_style)
      .with_role(synth::DatasetSplit::Role::target);
}

synth::DatasetSplit load_fake(const Config& cfg, const Layout& lay) {
  require_artifact(lay.fake_dir(), "fake images", "run the pixel phase first");
  return synth::load_image_folder(lay.fake_dir(), "fake-" + cfg.target_style)
      .with_role(synth::DatasetSplit::Role::fake);
}

trainer::PretrainedDhn load_pretrained(const Config& cfg, const Layout& lay) {
  require_artifact(lay.pretrain_weights(), "pretrained coder snapshot",
                   "run the pretrain phase first");
  trainer::PretrainedDhn dhn{models::TrunkF(mix_seed(cfg.seed, "trunk-init")),
                             models::SpecificHead(mix_seed(cfg.seed, "head-init"),
                                                  cfg.code_length)};
  models::ParamRegistry reg;
  reg.merge(dhn.trunk.params(), "trunk.");
  reg.merge(dhn.head.params(), "head.");
  models::load_weights(lay.pretrain_weights(), reg);
  dhn.trunk.freeze();
  return dhn;
}

trainer::FeatureResult load_feature_heads(const Config& cfg, const fs::path& snapshot) {
  require_artifact(snapshot, "trained head snapshot", "run the feature phase first");
  trainer::FeatureResult heads{
      models::SpecificHead(mix_seed(cfg.seed, "source-head"), cfg.code_length),
      models::SpecificHead(mix_seed(cfg.seed, "fake-head"), cfg.code_length)};
  models::ParamRegistry reg;
  reg.merge(heads.source_head.params(), "source_head.");
  reg.merge(heads.fake_head.params(), "fake_head.");
  models::load_weights(snapshot, reg);
  return heads;
}

eval::BinaryCodeSet code_set(const models::TrunkF& trunk, const models::SpecificHead& head,
                             const synth::DatasetSplit& split) {
  eval::BinaryCodeSet set;
  const auto codes = trainer::compute_codes(trunk, head, split);
  set.codes.reserve(codes.size());
  set.labels.reserve(codes.size());
  for (std::size_t i = 0; i < codes.size(); ++i) {
    set.codes.push_back(eval::binarize(codes[i]));
    set.labels.push_back(split.label_for_evaluation(static_cast<int>(i)));
  }
  return set;
}

void run_pretrain(const Config& cfg, const Layout& lay) {
  const synth::DatasetSplit source = load_source(cfg, lay);
  trainer::TrainLog log;
  trainer::PretrainedDhn dhn =
      trainer::pretrain_dhn(source, cfg.phase_config(trainer::Phase::pretrain), &log);
  models::ParamRegistry reg;
  reg.merge(dhn.trunk.params(), "trunk.");
  reg.merge(dhn.head.params(), "head.");
  fs::create_directories(lay.weights_dir());
  models::save_weights(lay.pretrain_weights(), reg);
  fs::create_directories(lay.logs_dir());
  log.write_csv(lay.log_csv("pretrain"));
  std::cout << "pretrain: wrote " << lay.pretrain_weights().string() << "\n";
}

void run_pixel(const Config& cfg, const Layout& lay) {
  const synth::DatasetSplit source = load_source(cfg, lay);
  const synth::DatasetSplit target = load_target(cfg, lay);
  const trainer::PretrainedDhn dhn = load_pretrained(cfg, lay);
  trainer::TrainLog log;
  trainer::PixelResult result =
      trainer::train_pixel_alignment(source, target, dhn, cfg.phase_config(trainer::Phase::pixel),
                                     &log);
  models::ParamRegistry reg;
  reg.merge(result.to_target.params(), "to_target.");
  reg.merge(result.to_source.params(), "to_source.");
  reg.merge(result.disc_source.params(), "disc_source.");
  reg.merge(result.disc_target.params(), "disc_target.");
  fs::create_directories(lay.weights_dir());
  models::save_weights(lay.generator_weights(), reg);

  if (fs::exists(lay.fake_dir())) fs::remove_all(lay.fake_dir());
  ordered_json records = ordered_json::array();
  write_split(result.fake, lay.fake_dir(), records);
  ordered_json manifest;
  manifest["seed"] = cfg.seed;
  manifest["domain"] = result.fake.domain();
  manifest["records"] = std::move(records);
  write_text(lay.fake_manifest(), manifest.dump(2) + "\n");

  fs::create_directories(lay.logs_dir());
  log.write_csv(lay.log_csv("pixel"));
  std::cout << "pixel: wrote " << lay.generator_weights().string() << " and "
            << lay.fake_manifest().string() << "\n";
}

void run_feature(const Config& cfg, const Layout& lay, bool substitute_source_for_fake,
                 const fs::path& weights_out, const fs::path& log_out) {
  const synth::DatasetSplit source = load_source(cfg, lay);
  const synth::DatasetSplit target = load_target(cfg, lay);
  const synth::DatasetSplit fake = substitute_source_for_fake
                                       ? source.with_role(synth::DatasetSplit::Role::fake)
                                       : load_fake(cfg, lay);
  const trainer::PretrainedDhn dhn = load_pretrained(cfg, lay);
  trainer::TrainLog log;
  trainer::FeatureResult result = trainer::train_feature_alignment(
      source, fake, target, dhn.trunk, dhn.head, cfg.phase_config(trainer::Phase::feature), &log);
  models::ParamRegistry reg;
  reg.merge(result.source_head.params(), "source_head.");
  reg.merge(result.fake_head.params(), "fake_head.");
  fs::create_directories(weights_out.parent_path());
  models::save_weights(weights_out, reg);
  fs::create_directories(log_out.parent_path());
  log.write_csv(log_out);
  std::cout << "feature: wrote " << weights_out.string() << "\n";
}

// Artifact paths covered by the experiment manifest, relative to the root.
std::vector<std::string> manifest_candidates(const Layout& lay) {
  std::vector<std::string> rel = {
      "data/manifest.json",        "weights/pretrain.weights", "weights/generators.weights",
      "weights/feature_heads.weights", "fake/manifest.json",   "logs/pretrain_log.csv",
      "logs/pixel_log.csv",        "logs/feature_log.csv",     "ablation_losses.csv",
      "ablation_beta.csv",
  };
  const fs::path ablate = lay.root / "ablate";
  if (fs::is_directory(ablate)) {
    std::vector<fs::path> cells;
    for (const auto& entry : fs::directory_iterator(ablate)) {
      if (entry.is_directory()) cells.push_back(entry.path());
    }
    std::sort(cells.begin(), cells.end());
    for (const fs::path& cell : cells) {
      rel.push_back("ablate/" + cell.filename().string() + "/feature_heads.weights");
      rel.push_back("ablate/" + cell.filename().string() + "/feature_log.csv");
    }
  }
  return rel;
}

double mean_of(const std::vector<double>& values) {
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

}  // namespace

synth::DomainStyle style_by_name(const std::string& name) {
  if (name == "flashlike") return synth::DomainStyle::flashlike();
  if (name == "naturalike") return synth::DomainStyle::naturalike();
  if (name == "identity") return synth::DomainStyle{};
  throw std::invalid_argument("unknown style '" + name +
                              "' (known: flashlike, naturalike, identity)");
}

std::string Config::canonical_json() const {
  ordered_json j;
  j["seed"] = seed;
  j["ablation_seeds"] = ablation_seeds;

  ordered_json bench;
  bench["n_identities"] = n_identities;
  bench["n_per_identity"] = n_per_identity;
  bench["source_style"] = source_style;
  bench["target_style"] = target_style;
  j["benchmark"] = std::move(bench);

  ordered_json model;
  model["code_length"] = code_length;
  j["model"] = std::move(model);

  ordered_json loss;
  loss["alpha"] = weights.alpha;
  loss["beta"] = weights.beta;
  loss["margin"] = weights.margin;
  loss["cycle_weight"] = weights.cycle_weight;
  loss["identity_weight"] = weights.identity_weight;
  loss["squared_distance"] = weights.squared_distance;
  loss["kernel_scales"] = kernel_scales;
  loss["mmd_ts_weight"] = mmd_ts_weight;
  loss["mmd_tf_weight"] = mmd_tf_weight;
  loss["use_consistency"] = use_consistency;
  loss["mmd_on_pre_activation"] = mmd_on_pre_activation;
  j["loss"] = std::move(loss);

  ordered_json phases;
  const auto phase_obj = [](const PhaseSettings& p) {
    ordered_json o;
    o["epochs"] = p.epochs;
    o["batch_size"] = p.batch_size;
    o["learning_rate"] = p.learning_rate;
    return o;
  };
  phases["pretrain"] = phase_obj(pretrain);
  phases["pixel"] = phase_obj(pixel);
  phases["feature"] = phase_obj(feature);
  j["phases"] = std::move(phases);

  return j.dump(2) + "\n";
}

void Config::save(const fs::path& path) const {
  write_text(path, canonical_json());
}

std::string Config::checksum_hex() const {
  return jpfa::checksum_hex(fnv1a64(canonical_json()));
}

Config Config::load(const fs::path& path) {
  if (!fs::exists(path)) throw std::runtime_error("config file not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("config file " + path.string() + ": " + e.what());
  }

  Config cfg;
  cfg.origin = path;
  try {
    check_keys(j, {"seed", "ablation_seeds", "benchmark", "model", "loss", "phases"},
               "the top-level object");
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.ablation_seeds = j.at("ablation_seeds").get<std::vector<std::uint64_t>>();

    const nlohmann::json& bench = j.at("benchmark");
    check_keys(bench, {"n_identities", "n_per_identity", "source_style", "target_style"},
               "'benchmark'");
    cfg.n_identities = bench.at("n_identities").get<int>();
    cfg.n_per_identity = bench.at("n_per_identity").get<int>();
    cfg.source_style = bench.at("source_style").get<std::string>();
    cfg.target_style = bench.at("target_style").get<std::string>();

    const nlohmann::json& model = j.at("model");
    check_keys(model, {"code_length"}, "'model'");
    cfg.code_length = model.at("code_length").get<int>();

    const nlohmann::json& loss = j.at("loss");
    check_keys(loss,
               {"alpha", "beta", "margin", "cycle_weight", "identity_weight", "squared_distance",
                "kernel_scales", "mmd_ts_weight", "mmd_tf_weight", "use_consistency",
                "mmd_on_pre_activation"},
               "'loss'");
    cfg.weights.alpha = loss.at("alpha").get<double>();
    cfg.weights.beta = loss.at("beta").get<double>();
    cfg.weights.margin = loss.at("margin").get<double>();
    cfg.weights.cycle_weight = loss.at("cycle_weight").get<double>();
    cfg.weights.identity_weight = loss.at("identity_weight").get<double>();
    cfg.weights.squared_distance = loss.at("squared_distance").get<bool>();
    cfg.kernel_scales = loss.at("kernel_scales").get<std::vector<double>>();
    cfg.mmd_ts_weight = loss.at("mmd_ts_weight").get<double>();
    cfg.mmd_tf_weight = loss.at("mmd_tf_weight").get<double>();
    cfg.use_consistency = loss.at("use_consistency").get<bool>();
    cfg.mmd_on_pre_activation = loss.at("mmd_on_pre_activation").get<bool>();

    const nlohmann::json& phases = j.at("phases");
    check_keys(phases, {"pretrain", "pixel", "feature"}, "'phases'");
    const auto read_phase = [](const nlohmann::json& p, const std::string& name) {
      check_keys(p, {"epochs", "batch_size", "learning_rate"}, "'phases." + name + "'");
      PhaseSettings s;
      s.epochs = p.at("epochs").get<int>();
      s.batch_size = p.at("batch_size").get<int>();
      s.learning_rate = p.at("learning_rate").get<double>();
      return s;
    };
    cfg.pretrain = read_phase(phases.at("pretrain"), "pretrain");
    cfg.pixel = read_phase(phases.at("pixel"), "pixel");
    cfg.feature = read_phase(phases.at("feature"), "feature");
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("config file " + path.string() + ": " + e.what());
  }
  return cfg;
}

void Config::validate() const {
  if (n_identities < 2) throw std::invalid_argument("config: n_identities must be at least 2");
  if (n_per_identity < 2) {
    throw std::invalid_argument("config: n_per_identity must be at least 2");
  }
  if (source_style == target_style) {
    throw std::invalid_argument("config: source and target styles must differ");
  }
  style_by_name(source_style);
  style_by_name(target_style);
  if (code_length < 1) throw std::invalid_argument("config: code_length must be positive");
  if (ablation_seeds.empty()) throw std::invalid_argument("config: ablation_seeds is empty");
  phase_config(trainer::Phase::pretrain).validate();
  phase_config(trainer::Phase::pixel).validate();
  phase_config(trainer::Phase::feature).validate();
}

trainer::TrainConfig Config::phase_config(trainer::Phase phase) const {
  const PhaseSettings& s = phase == trainer::Phase::pretrain ? pretrain
                           : phase == trainer::Phase::pixel  ? pixel
                                                             : feature;
  trainer::TrainConfig tc;
  tc.phase = phase;
  tc.epochs = s.epochs;
  tc.batch_size = s.batch_size;
  tc.learning_rate = s.learning_rate;
  tc.seed = seed;
  tc.weights = weights;
  tc.kernel_scales = kernel_scales;
  tc.code_length = code_length;
  tc.mmd_ts_weight = mmd_ts_weight;
  tc.mmd_tf_weight = mmd_tf_weight;
  tc.use_consistency = use_consistency;
  tc.mmd_on_pre_activation = mmd_on_pre_activation;
  return tc;
}

std::vector<trainer::Phase> parse_phases(const std::vector<std::string>& names) {
  for (const std::string& n : names) {
    if (n != "pretrain" && n != "pixel" && n != "feature") {
      throw std::invalid_argument("unknown phase '" + n +
                                  "' (known: pretrain, pixel, feature)");
    }
  }
  const auto has = [&](const char* n) {
    return std::find(names.begin(), names.end(), n) != names.end();
  };
  std::vector<trainer::Phase> phases;
  if (has("pretrain")) phases.push_back(trainer::Phase::pretrain);
  if (has("pixel")) phases.push_back(trainer::Phase::pixel);
  if (has("feature")) phases.push_back(trainer::Phase::feature);
  if (phases.empty()) throw std::invalid_argument("no phases selected");
  return phases;
}

void generate_data(const Config& cfg, const Layout& lay, bool force) {
  if (fs::exists(lay.data_manifest()) && !force) {
    std::cout << "data already present at " << lay.data_dir().string()
              << " (use --force to regenerate)\n";
    return;
  }
  if (fs::exists(lay.data_dir())) fs::remove_all(lay.data_dir());

  const std::vector<synth::DomainStyle> styles = {style_by_name(cfg.source_style),
                                                  style_by_name(cfg.target_style)};
  const auto splits =
      synth::generate_benchmark(cfg.n_identities, cfg.n_per_identity, styles, cfg.seed);

  ordered_json manifest;
  manifest["seed"] = cfg.seed;
  manifest["n_identities"] = cfg.n_identities;
  manifest["n_per_identity"] = cfg.n_per_identity;
  manifest["styles"] = {cfg.source_style, cfg.target_style};
  ordered_json records = ordered_json::array();
  for (const std::string& style : {cfg.source_style, cfg.target_style}) {
    write_split(splits.at(style), lay.style_dir(style), records);
  }
  const std::size_t count = records.size();
  manifest["records"] = std::move(records);
  write_text(lay.data_manifest(), manifest.dump(2) + "\n");
  std::cout << "gen-data: wrote " << count << " images under " << lay.data_dir().string()
            << "\n";

  write_manifest(cfg, lay);
}

void run_phases(const Config& cfg, const Layout& lay,
                const std::vector<trainer::Phase>& phases, bool substitute_source_for_fake) {
  for (trainer::Phase phase : phases) {
    switch (phase) {
      case trainer::Phase::pretrain:
        run_pretrain(cfg, lay);
        break;
      case trainer::Phase::pixel:
        run_pixel(cfg, lay);
        break;
      case trainer::Phase::feature:
        run_feature(cfg, lay, substitute_source_for_fake, lay.feature_weights(),
                    lay.log_csv("feature"));
        break;
    }
  }
  write_manifest(cfg, lay);
}

eval::EvalReport evaluate_source_only(const Config& cfg, const Layout& lay) {
  const synth::DatasetSplit source = load_source(cfg, lay);
  const synth::DatasetSplit target = load_target(cfg, lay);
  const trainer::PretrainedDhn dhn = load_pretrained(cfg, lay);

  const eval::BinaryCodeSet gallery = code_set(dhn.trunk, dhn.head, source);
  const eval::BinaryCodeSet probes = code_set(dhn.trunk, dhn.head, target);

  eval::EvalReport report;
  report.rank1 = eval::identify(probes, gallery);
  const eval::EerResult eer = eval::compute_eer(eval::verification_scores(probes, gallery));
  report.eer = eer.eer;
  report.roc = eer.roc;
  report.variant_rank1 = "source_only";
  report.variant_eer = "source_only";
  report.rank1_by_variant = {{"source_only", report.rank1}};
  report.eer_by_variant = {{"source_only", report.eer}};
  return report;
}

eval::EvalReport evaluate_adapted(const Config& cfg, const Layout& lay,
                                  const fs::path& head_snapshot) {
  const synth::DatasetSplit source = load_source(cfg, lay);
  const synth::DatasetSplit target = load_target(cfg, lay);
  const synth::DatasetSplit fake = load_fake(cfg, lay);
  const trainer::PretrainedDhn dhn = load_pretrained(cfg, lay);
  const trainer::FeatureResult heads = load_feature_heads(cfg, head_snapshot);

  const eval::BinaryCodeSet gallery_source = code_set(dhn.trunk, heads.source_head, source);
  const eval::BinaryCodeSet gallery_fake = code_set(dhn.trunk, heads.fake_head, fake);
  const eval::BinaryCodeSet probes_source = code_set(dhn.trunk, heads.source_head, target);
  const eval::BinaryCodeSet probes_fake = code_set(dhn.trunk, heads.fake_head, target);

  return eval::best_of_variants(probes_source, probes_fake, gallery_source, gallery_fake);
}

void evaluate(const Config& cfg, const Layout& lay, const std::string& mode) {
  if (mode != "identify" && mode != "verify" && mode != "both") {
    throw std::invalid_argument("unknown mode '" + mode + "' (known: identify, verify, both)");
  }

  const eval::EvalReport baseline = evaluate_source_only(cfg, lay);
  const eval::EvalReport adapted = evaluate_adapted(cfg, lay, lay.feature_weights());

  fs::create_directories(lay.reports_dir());
  write_text(lay.source_only_report(), eval::report_to_json(baseline, cfg.checksum_hex()));
  write_text(lay.jpfa_report(), eval::report_to_json(adapted, cfg.checksum_hex()));
  if (mode != "identify") {
    write_text(lay.source_only_roc(), eval::roc_to_csv(baseline.roc));
    write_text(lay.jpfa_roc(), eval::roc_to_csv(adapted.roc));
  }

  std::cout.precision(6);
  if (mode != "verify") {
    std::cout << "rank-1 accuracy: source_only " << baseline.rank1 << ", adapted "
              << adapted.rank1 << " (" << adapted.variant_rank1 << ")\n";
  }
  if (mode != "identify") {
    std::cout << "equal error rate: source_only " << baseline.eer << ", adapted " << adapted.eer
              << " (" << adapted.variant_eer << ")\n";
  }

  write_manifest(cfg, lay);
}

std::vector<AblationRow> run_ablation(const Config& cfg, const Layout& lay,
                                      const std::string& grid) {
  struct Cell {
    std::string name;
    std::function<void(Config&)> apply;
  };
  std::vector<Cell> cells;
  if (grid == "losses") {
    const double ts = cfg.mmd_ts_weight;
    const double tf = cfg.mmd_tf_weight;
    cells = {
        {"t-s", [=](Config& c) { c.mmd_ts_weight = ts; c.mmd_tf_weight = 0.0;
                                 c.use_consistency = false; }},
        {"t-f", [=](Config& c) { c.mmd_ts_weight = 0.0; c.mmd_tf_weight = tf;
                                 c.use_consistency = false; }},
        {"t-s+t-f", [=](Config& c) { c.mmd_ts_weight = ts; c.mmd_tf_weight = tf;
                                     c.use_consistency = false; }},
        {"t-s+t-f+consistency", [=](Config& c) { c.mmd_ts_weight = ts; c.mmd_tf_weight = tf;
                                                 c.use_consistency = true; }},
    };
  } else if (grid == "beta") {
    for (double beta : {0.5, 1.0, 1.5, 2.0, 2.5}) {
      std::ostringstream name;
      name << "beta=" << beta;
      cells.push_back({name.str(), [beta](Config& c) {
                         c.use_consistency = true;
                         c.weights.beta = beta;
                       }});
    }
  } else {
    throw std::invalid_argument("unknown grid '" + grid + "' (known: losses, beta)");
  }

  std::vector<AblationRow> rows;
  for (const Cell& cell : cells) {
    std::vector<double> rank1s, eers;
    for (std::uint64_t seed : cfg.ablation_seeds) {
      const Layout seed_lay = lay.for_seed(seed);
      Config seed_cfg = cfg;
      seed_cfg.seed = seed;

      generate_data(seed_cfg, seed_lay, false);
      if (!fs::exists(seed_lay.pretrain_weights())) run_pretrain(seed_cfg, seed_lay);
      if (!fs::exists(seed_lay.fake_manifest())) run_pixel(seed_cfg, seed_lay);

      Config cell_cfg = seed_cfg;
      cell.apply(cell_cfg);
      const fs::path cell_dir = seed_lay.cell_dir(cell.name);
      const fs::path snapshot = cell_dir / "feature_heads.weights";
      if (!fs::exists(snapshot)) {
        run_feature(cell_cfg, seed_lay, false, snapshot, cell_dir / "feature_log.csv");
      }
      const eval::EvalReport report = evaluate_adapted(cell_cfg, seed_lay, snapshot);
      rows.push_back({grid, cell.name, std::to_string(seed), report.rank1, report.eer});
      rank1s.push_back(report.rank1);
      eers.push_back(report.eer);
      write_manifest(seed_cfg, seed_lay);
    }
    rows.push_back({grid, cell.name, "mean", mean_of(rank1s), mean_of(eers)});
  }

  std::ostringstream csv;
  csv << "grid,cell,seed,rank1,eer\n";
  csv.precision(17);
  for (const AblationRow& r : rows) {
    csv << r.grid << ',' << r.cell << ',' << r.seed << ',' << r.rank1 << ',' << r.eer << '\n';
  }
  write_text(lay.ablation_csv(grid), csv.str());
  std::cout << "ablate: wrote " << lay.ablation_csv(grid).string() << "\n";

  write_manifest(cfg, lay);
  return rows;
}

void write_manifest(const Config& cfg, const Layout& lay) {
  ordered_json m;
  m["tool_version"] = kToolVersion;
  m["seed"] = cfg.seed;
  m["config_path"] = cfg.origin.string();
  m["config_checksum"] = cfg.checksum_hex();
  ordered_json artifacts = ordered_json::object();
  for (const std::string& rel : manifest_candidates(lay)) {
    const fs::path path = lay.root / rel;
    if (fs::exists(path)) artifacts[rel] = checksum_hex(checksum_file(path));
  }
  m["artifacts"] = std::move(artifacts);
  ordered_json reports = ordered_json::object();
  for (const std::string& rel : {std::string("reports/source_only.json"),
                                 std::string("reports/jpfa.json"),
                                 std::string("reports/source_only_roc.csv"),
                                 std::string("reports/jpfa_roc.csv")}) {
    const fs::path path = lay.root / rel;
    if (fs::exists(path)) reports[rel] = checksum_hex(checksum_file(path));
  }
  m["reports"] = std::move(reports);
  write_text(lay.manifest(), m.dump(2) + "\n");
}

int run_command(const Layout& lay, const std::function<void()>& body) {
  fs::create_directories(lay.root);
  write_text(lay.failed_marker(), "in progress\n");
  try {
    body();
  } catch (const std::exception& e) {
    write_text(lay.failed_marker(), std::string(e.what()) + "\n");
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::error_code ec;
  fs::remove(lay.failed_marker(), ec);
  return 0;
}

}  // namespace jpfa::experiment
