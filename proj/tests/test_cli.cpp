#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "jpfa/checksum.hpp"
#include "jpfa/experiment.hpp"

namespace fs = std::filesystem;
using jpfa::checksum_file;
using jpfa::experiment::Config;
using jpfa::experiment::Layout;
using jpfa::experiment::parse_phases;
using jpfa::trainer::Phase;

namespace {

// Deterministic generation golden for the default benchmark's data manifest.
// Re-record when the image synthesis or manifest format changes on purpose.
constexpr std::uint64_t kDefaultDataManifestChecksum = 0x5fe5187df532f5cdull;

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Small enough that a full pipeline runs in seconds.
Config tiny_config() {
  Config cfg;
  cfg.seed = 7;
  cfg.ablation_seeds = {7, 8};
  cfg.n_identities = 4;
  cfg.n_per_identity = 3;
  cfg.code_length = 8;
  cfg.weights.margin = 16.0;
  cfg.pretrain = {2, 4, 1e-3};
  cfg.pixel = {1, 2, 2e-4};
  cfg.feature = {2, 4, 1e-3};
  return cfg;
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void write_bytes(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  out << bytes;
}

template <typename Fn>
std::string thrown_message(Fn&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

bool mentions(const std::string& message, const std::string& needle) {
  return message.find(needle) != std::string::npos;
}

// Runs the installed tool binary and returns its exit code.
int run_tool(const std::string& args) {
  const std::string cmd = std::string(JPFA_BIN) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("the committed default config file equals the canonical default serialization") {
  CHECK(read_bytes(JPFA_DEFAULT_CONFIG) == Config{}.canonical_json());
}

TEST_CASE("config round-trips through save and load") {
  const fs::path dir = fresh_dir("jpfa_cli_roundtrip");
  Config cfg = tiny_config();
  cfg.save(dir / "cfg.json");
  const Config back = Config::load(dir / "cfg.json");
  CHECK(back.canonical_json() == cfg.canonical_json());
  CHECK(back.checksum_hex() == cfg.checksum_hex());
  CHECK(back.origin == dir / "cfg.json");
  // The checksum covers the effective settings, not the file identity.
  Config overridden = back;
  overridden.seed = 8;
  CHECK(overridden.checksum_hex() != back.checksum_hex());
}

TEST_CASE("config loading is strict in both directions") {
  const fs::path dir = fresh_dir("jpfa_cli_strict");
  Config cfg = tiny_config();
  cfg.save(dir / "good.json");

  auto mutate = [&](const std::function<void(nlohmann::json&)>& edit) {
    nlohmann::json j = nlohmann::json::parse(read_bytes(dir / "good.json"));
    edit(j);
    write_bytes(dir / "bad.json", j.dump(2) + "\n");
    return thrown_message([&] { Config::load(dir / "bad.json"); });
  };

  CHECK(mentions(mutate([](nlohmann::json& j) { j.erase("seed"); }), "missing field 'seed'"));
  CHECK(mentions(mutate([](nlohmann::json& j) { j["model"].erase("code_length"); }),
                 "missing field 'code_length'"));
  CHECK(mentions(mutate([](nlohmann::json& j) { j["surprise"] = 1; }), "unknown field"));
  CHECK(mentions(mutate([](nlohmann::json& j) { j["loss"]["surprise"] = 1; }),
                 "unknown field"));
  CHECK(mentions(mutate([](nlohmann::json& j) { j["seed"] = "forty-two"; }), "config file"));
  CHECK(thrown_message([&] { Config::load(dir / "absent.json"); }) != "");
}

TEST_CASE("config validation rejects inconsistent settings") {
  auto broken = [](const std::function<void(Config&)>& edit) {
    Config cfg = tiny_config();
    edit(cfg);
    return thrown_message([&] { cfg.validate(); });
  };
  CHECK(mentions(broken([](Config& c) { c.target_style = c.source_style; }), "differ"));
  CHECK(mentions(broken([](Config& c) { c.source_style = "vaporwave"; }), "vaporwave"));
  CHECK(mentions(broken([](Config& c) { c.n_identities = 1; }), "n_identities"));
  CHECK(mentions(broken([](Config& c) { c.code_length = 0; }), "code_length"));
  CHECK(mentions(broken([](Config& c) { c.ablation_seeds.clear(); }), "ablation_seeds"));
  CHECK(broken([](Config& c) { c.pretrain.epochs = 0; }) != "");
  CHECK_NOTHROW(tiny_config().validate());
}

TEST_CASE("parse_phases deduplicates, reorders and rejects unknown names") {
  const auto phases = parse_phases({"feature", "pretrain", "feature"});
  REQUIRE(phases.size() == 2);
  CHECK(phases[0] == Phase::pretrain);
  CHECK(phases[1] == Phase::feature);
  CHECK(parse_phases({"pixel"}).size() == 1);
  CHECK(mentions(thrown_message([] { parse_phases({"warmup"}); }), "warmup"));
}

TEST_CASE("gen-data is idempotent until forced") {
  const fs::path dir = fresh_dir("jpfa_cli_gendata");
  const Config cfg = tiny_config();
  const Layout lay{dir};
  jpfa::experiment::generate_data(cfg, lay, false);
  REQUIRE(fs::exists(lay.data_manifest()));
  const std::string manifest = read_bytes(lay.data_manifest());

  // A sentinel in the data tree survives a repeated call but not a forced one.
  write_bytes(lay.data_dir() / "sentinel", "still here");
  jpfa::experiment::generate_data(cfg, lay, false);
  CHECK(fs::exists(lay.data_dir() / "sentinel"));
  CHECK(read_bytes(lay.data_manifest()) == manifest);

  jpfa::experiment::generate_data(cfg, lay, true);
  CHECK_FALSE(fs::exists(lay.data_dir() / "sentinel"));
  CHECK(read_bytes(lay.data_manifest()) == manifest);
}

TEST_CASE("gen-data output responds to the seed") {
  const fs::path a = fresh_dir("jpfa_cli_seed7");
  const fs::path b = fresh_dir("jpfa_cli_seed8");
  Config cfg = tiny_config();
  jpfa::experiment::generate_data(cfg, Layout{a}, false);
  cfg.seed = 8;
  jpfa::experiment::generate_data(cfg, Layout{b}, false);
  CHECK(read_bytes(Layout{a}.data_manifest()) != read_bytes(Layout{b}.data_manifest()));
}

TEST_CASE("default-config data manifest matches its golden checksum") {
  const fs::path dir = fresh_dir("jpfa_cli_default_data");
  const Layout lay{dir};
  jpfa::experiment::generate_data(Config{}, lay, false);
  int images = 0;
  for (const auto& style : {"flashlike", "naturalike"}) {
    for (const auto& entry : fs::directory_iterator(lay.style_dir(style))) {
      images += entry.path().extension() == ".pgm" ? 1 : 0;
    }
  }
  CHECK(images == 400);
  CHECK(checksum_file(lay.data_manifest()) == kDefaultDataManifestChecksum);
}

TEST_CASE("run trains only the requested phases and names missing prerequisites") {
  const fs::path dir = fresh_dir("jpfa_cli_phases");
  const Config cfg = tiny_config();
  const Layout lay{dir};

  // Nothing works before gen-data.
  const std::string no_data =
      thrown_message([&] { jpfa::experiment::run_phases(cfg, lay, {Phase::pretrain}); });
  CHECK(mentions(no_data, "missing source images"));
  CHECK(mentions(no_data, "gen-data"));

  jpfa::experiment::generate_data(cfg, lay, false);
  jpfa::experiment::run_phases(cfg, lay, {Phase::pretrain});
  CHECK(fs::exists(lay.pretrain_weights()));
  CHECK(fs::exists(lay.log_csv("pretrain")));
  CHECK_FALSE(fs::exists(lay.generator_weights()));
  CHECK_FALSE(fs::exists(lay.feature_weights()));

  // The feature phase needs the pixel phase's fake images.
  const std::string no_fake =
      thrown_message([&] { jpfa::experiment::run_phases(cfg, lay, {Phase::feature}); });
  CHECK(mentions(no_fake, "missing fake images"));
  CHECK(mentions(no_fake, "pixel phase"));

  jpfa::experiment::run_phases(cfg, lay, {Phase::pixel, Phase::feature});
  CHECK(fs::exists(lay.generator_weights()));
  CHECK(fs::exists(lay.fake_manifest()));
  CHECK(fs::exists(lay.feature_weights()));
}

TEST_CASE("staged phase invocations match one full run byte for byte") {
  const fs::path full = fresh_dir("jpfa_cli_full");
  const fs::path staged = fresh_dir("jpfa_cli_staged");
  const Config cfg = tiny_config();

  jpfa::experiment::generate_data(cfg, Layout{full}, false);
  jpfa::experiment::run_phases(cfg, Layout{full},
                               {Phase::pretrain, Phase::pixel, Phase::feature});

  jpfa::experiment::generate_data(cfg, Layout{staged}, false);
  jpfa::experiment::run_phases(cfg, Layout{staged}, {Phase::pretrain});
  jpfa::experiment::run_phases(cfg, Layout{staged}, {Phase::pixel});
  jpfa::experiment::run_phases(cfg, Layout{staged}, {Phase::feature});

  for (const auto& rel : {"weights/pretrain.weights", "weights/generators.weights",
                          "weights/feature_heads.weights", "fake/manifest.json"}) {
    CHECK(read_bytes(full / rel) == read_bytes(staged / rel));
  }
}

TEST_CASE("the source-as-fake substitute runs the feature phase without generators") {
  const fs::path dir = fresh_dir("jpfa_cli_nopixel");
  const Config cfg = tiny_config();
  const Layout lay{dir};
  jpfa::experiment::generate_data(cfg, lay, false);
  jpfa::experiment::run_phases(cfg, lay, {Phase::pretrain});
  jpfa::experiment::run_phases(cfg, lay, {Phase::feature}, true);
  CHECK(fs::exists(lay.feature_weights()));
  CHECK_FALSE(fs::exists(lay.generator_weights()));
  CHECK_FALSE(fs::exists(lay.fake_dir()));
}

TEST_CASE("evaluate writes reports embedding the config checksum and gates the ROC export") {
  const fs::path dir = fresh_dir("jpfa_cli_eval");
  const Config cfg = tiny_config();
  const Layout lay{dir};

  // The adapted report needs the full chain: fake images first, then the
  // trained heads.
  jpfa::experiment::generate_data(cfg, lay, false);
  jpfa::experiment::run_phases(cfg, lay, {Phase::pretrain});
  const std::string no_fake =
      thrown_message([&] { jpfa::experiment::evaluate(cfg, lay, "both"); });
  CHECK(mentions(no_fake, "missing fake images"));

  jpfa::experiment::run_phases(cfg, lay, {Phase::pixel});
  const std::string no_head =
      thrown_message([&] { jpfa::experiment::evaluate(cfg, lay, "both"); });
  CHECK(mentions(no_head, "missing trained head snapshot"));
  CHECK(mentions(no_head, "feature phase"));

  jpfa::experiment::run_phases(cfg, lay, {Phase::feature});
  jpfa::experiment::evaluate(cfg, lay, "identify");
  REQUIRE(fs::exists(lay.source_only_report()));
  REQUIRE(fs::exists(lay.jpfa_report()));
  CHECK_FALSE(fs::exists(lay.source_only_roc()));
  CHECK_FALSE(fs::exists(lay.jpfa_roc()));

  const nlohmann::json report = nlohmann::json::parse(read_bytes(lay.jpfa_report()));
  CHECK(report.at("config_checksum").get<std::string>() == cfg.checksum_hex());
  const double rank1 = report.at("rank1_accuracy").get<double>();
  const double eer = report.at("eer").get<double>();
  CHECK(rank1 >= 0.0);
  CHECK(rank1 <= 1.0);
  CHECK(eer >= 0.0);
  CHECK(eer <= 0.5);
  CHECK(mentions(thrown_message([&] { jpfa::experiment::evaluate(cfg, lay, "sideways"); }),
                 "sideways"));

  const std::string first = read_bytes(lay.jpfa_report());
  jpfa::experiment::evaluate(cfg, lay, "both");
  CHECK(read_bytes(lay.jpfa_report()) == first);
  CHECK(fs::exists(lay.source_only_roc()));
  const std::string roc = read_bytes(lay.jpfa_roc());
  CHECK(roc.rfind("threshold,far,frr", 0) == 0);
}

TEST_CASE("the experiment manifest records every artifact with its file checksum") {
  const fs::path dir = fresh_dir("jpfa_cli_manifest");
  const Config cfg = tiny_config();
  const Layout lay{dir};
  jpfa::experiment::generate_data(cfg, lay, false);
  jpfa::experiment::run_phases(cfg, lay, {Phase::pretrain, Phase::pixel, Phase::feature});
  jpfa::experiment::evaluate(cfg, lay, "both");

  const nlohmann::json manifest = nlohmann::json::parse(read_bytes(lay.manifest()));
  CHECK(manifest.at("tool_version").get<std::string>() == jpfa::experiment::kToolVersion);
  CHECK(manifest.at("seed").get<std::uint64_t>() == cfg.seed);
  CHECK(manifest.at("config_checksum").get<std::string>() == cfg.checksum_hex());
  int verified = 0;
  for (const auto& section : {"artifacts", "reports"}) {
    for (const auto& [rel, checksum] : manifest.at(section).items()) {
      const fs::path path = dir / rel;
      REQUIRE_MESSAGE(fs::exists(path), rel);
      CHECK(checksum.get<std::string>() == jpfa::checksum_hex(checksum_file(path)));
      ++verified;
    }
  }
  CHECK(verified >= 6);  // data, three snapshots, fake set, reports
}

TEST_CASE("ablation grids write one row per cell per seed plus means, reproducibly") {
  const fs::path a = fresh_dir("jpfa_cli_ablate_a");
  const fs::path b = fresh_dir("jpfa_cli_ablate_b");
  const Config cfg = tiny_config();

  const auto rows = jpfa::experiment::run_ablation(cfg, Layout{a}, "losses");
  // 4 cells x (2 seeds + 1 mean row).
  CHECK(rows.size() == 12);
  int means = 0;
  for (const auto& row : rows) {
    CHECK(row.grid == "losses");
    means += row.seed == "mean" ? 1 : 0;
    CHECK(row.rank1 >= 0.0);
    CHECK(row.rank1 <= 1.0);
  }
  CHECK(means == 4);

  const std::string csv = read_bytes(Layout{a}.ablation_csv("losses"));
  CHECK(csv.rfind("grid,cell,seed,rank1,eer", 0) == 0);
  for (const auto& cell : {"t-s", "t-f", "t-s+t-f", "t-s+t-f+consistency"}) {
    CHECK(mentions(csv, cell));
  }

  // Same config in a fresh directory: identical bytes. Rerun in the same
  // directory (every artifact already present): still identical.
  jpfa::experiment::run_ablation(cfg, Layout{b}, "losses");
  CHECK(read_bytes(Layout{b}.ablation_csv("losses")) == csv);
  jpfa::experiment::run_ablation(cfg, Layout{a}, "losses");
  CHECK(read_bytes(Layout{a}.ablation_csv("losses")) == csv);

  const auto beta_rows = jpfa::experiment::run_ablation(cfg, Layout{a}, "beta");
  CHECK(beta_rows.size() == 15);  // 5 beta cells x (2 seeds + 1 mean)
  CHECK(mentions(read_bytes(Layout{a}.ablation_csv("beta")), "beta=1.5"));

  CHECK(mentions(thrown_message(
                     [&] { jpfa::experiment::run_ablation(cfg, Layout{a}, "spice"); }),
                 "spice"));
}

TEST_CASE("run_command maintains the failed-marker protocol") {
  const fs::path dir = fresh_dir("jpfa_cli_marker");
  const Layout lay{dir};

  CHECK(jpfa::experiment::run_command(lay, [] {}) == 0);
  CHECK_FALSE(fs::exists(lay.failed_marker()));

  CHECK(jpfa::experiment::run_command(
            lay, [] { throw std::runtime_error("deliberate failure"); }) == 1);
  REQUIRE(fs::exists(lay.failed_marker()));
  CHECK(mentions(read_bytes(lay.failed_marker()), "deliberate failure"));

  // A later success clears the stale marker.
  CHECK(jpfa::experiment::run_command(lay, [] {}) == 0);
  CHECK_FALSE(fs::exists(lay.failed_marker()));
}

TEST_CASE("tool binary: exit codes and the seed override") {
  const fs::path dir = fresh_dir("jpfa_cli_binary");
  const fs::path cfg_path = dir / "cfg.json";
  tiny_config().save(cfg_path);

  CHECK(run_tool("--version") == 0);
  CHECK(run_tool("gen-data") != 0);                    // --config is required
  CHECK(run_tool("gen-data --config " + cfg_path.string() + " --bogus") != 0);
  CHECK(run_tool("frobnicate --config " + cfg_path.string()) != 0);

  write_bytes(dir / "broken.json", "{\"seed\": 7}\n");
  CHECK(run_tool("gen-data --config " + (dir / "broken.json").string() + " --out " +
                 (dir / "broken_out").string()) != 0);
  CHECK_FALSE(fs::exists(dir / "broken_out" / "data"));

  // The override must reach the pipeline: seed 8 via flag equals seed 8 via file.
  const fs::path by_flag = dir / "by_flag";
  const fs::path by_file = dir / "by_file";
  Config eight = tiny_config();
  eight.seed = 8;
  eight.save(dir / "eight.json");
  CHECK(run_tool("gen-data --config " + cfg_path.string() + " --seed 8 --out " +
                 by_flag.string()) == 0);
  CHECK(run_tool("gen-data --config " + (dir / "eight.json").string() + " --out " +
                 by_file.string()) == 0);
  CHECK(read_bytes(Layout{by_flag}.data_manifest()) ==
        read_bytes(Layout{by_file}.data_manifest()));
  const nlohmann::json manifest =
      nlohmann::json::parse(read_bytes(Layout{by_flag}.manifest()));
  CHECK(manifest.at("seed").get<std::uint64_t>() == 8);

  // A failing library call surfaces as a nonzero exit and a failure marker.
  const fs::path no_data = dir / "no_data";
  CHECK(run_tool("run --config " + cfg_path.string() + " --out " + no_data.string()) != 0);
  CHECK(fs::exists(Layout{no_data}.failed_marker()));
}

TEST_CASE("head agreement improves over the feature phase on the stock benchmark") {
  const fs::path dir = fresh_dir("jpfa_cli_consis");
  Config cfg;  // stock scale; one of the standard ablation seeds
  cfg.seed = 41;
  const Layout lay{dir};
  jpfa::experiment::generate_data(cfg, lay, false);
  jpfa::experiment::run_phases(cfg, lay,
                               {Phase::pretrain, Phase::pixel, Phase::feature});

  // Mean per-epoch head-agreement penalty, last epoch vs first.
  std::ifstream log(lay.log_csv("feature"));
  REQUIRE(log.good());
  std::string line;
  std::getline(log, line);
  REQUIRE(line == "phase,epoch,batch,term,value");
  std::map<int, std::pair<double, int>> by_epoch;  // epoch -> (sum, count)
  while (std::getline(log, line)) {
    std::istringstream row(line);
    std::string phase, epoch, batch, term, value;
    std::getline(row, phase, ',');
    std::getline(row, epoch, ',');
    std::getline(row, batch, ',');
    std::getline(row, term, ',');
    std::getline(row, value, ',');
    if (term != "consistency") continue;
    auto& [sum, count] = by_epoch[std::stoi(epoch)];
    sum += std::stod(value);
    ++count;
  }
  REQUIRE(by_epoch.size() == static_cast<std::size_t>(cfg.feature.epochs));
  const auto& [first_sum, first_n] = by_epoch.at(0);
  const auto& [last_sum, last_n] = by_epoch.at(cfg.feature.epochs - 1);
  CHECK(last_sum / last_n < first_sum / first_n);
}
