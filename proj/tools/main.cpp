#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "jpfa/experiment.hpp"

namespace {

using jpfa::experiment::Config;
using jpfa::experiment::Layout;

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  // One --seed option per subcommand; only the parsed one will have a count.
  std::vector<CLI::Option*> seed_opts;
};

void add_common(CLI::App* sub, CommonArgs& args) {
  sub->add_option("--config", args.config_path, "experiment config file (JSON)")->required();
  sub->add_option("--out", args.out_dir, "experiment output directory")
      ->capture_default_str();
  args.seed_opts.push_back(sub->add_option("--seed", args.seed, "override the config's seed"));
}

Config load_config(const CommonArgs& args) {
  Config cfg = Config::load(args.config_path);
  for (const CLI::Option* opt : args.seed_opts) {
    if (opt->count() > 0) cfg.seed = args.seed;
  }
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cross-dataset palmprint hashing laboratory"};
  app.set_version_flag("--version", jpfa::experiment::kToolVersion);
  app.require_subcommand(1);

  CommonArgs args;
  bool force = false;
  bool no_pixel = false;
  std::vector<std::string> phase_names = {"pretrain", "pixel", "feature"};
  std::string mode = "both";
  std::string grid = "losses";

  CLI::App* gen = app.add_subcommand("gen-data", "write the benchmark images and data manifest");
  add_common(gen, args);
  gen->add_flag("--force", force, "regenerate even if data already exists");

  CLI::App* run = app.add_subcommand("run", "train the selected phases");
  add_common(run, args);
  run->add_option("--phases", phase_names, "comma-separated subset of pretrain,pixel,feature")
      ->delimiter(',')
      ->capture_default_str();
  run->add_flag("--no-pixel", no_pixel,
                "use source images as the fake split instead of pixel-phase outputs");

  CLI::App* ev = app.add_subcommand("eval", "evaluate trained snapshots");
  add_common(ev, args);
  ev->add_option("--mode", mode, "identify, verify or both")
      ->check(CLI::IsMember({"identify", "verify", "both"}))
      ->capture_default_str();

  CLI::App* ab = app.add_subcommand("ablate", "sweep a loss-term or weight grid");
  add_common(ab, args);
  ab->add_option("--grid", grid, "losses or beta")
      ->check(CLI::IsMember({"losses", "beta"}))
      ->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  Config cfg;
  try {
    cfg = load_config(args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  const Layout lay{args.out_dir};

  if (gen->parsed()) {
    return jpfa::experiment::run_command(
        lay, [&] { jpfa::experiment::generate_data(cfg, lay, force); });
  }
  if (run->parsed()) {
    return jpfa::experiment::run_command(lay, [&] {
      jpfa::experiment::run_phases(cfg, lay, jpfa::experiment::parse_phases(phase_names),
                                   no_pixel);
    });
  }
  if (ev->parsed()) {
    return jpfa::experiment::run_command(lay,
                                         [&] { jpfa::experiment::evaluate(cfg, lay, mode); });
  }
  return jpfa::experiment::run_command(lay,
                                       [&] { jpfa::experiment::run_ablation(cfg, lay, grid); });
}
