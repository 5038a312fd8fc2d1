#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "commands.hpp"
#include "jamlab/errors.hpp"

namespace {

using namespace jamlab;
namespace fs = std::filesystem;

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  std::string out;
  std::string scale;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "JSON run config")->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "master seed");
  cmd->add_option("--jobs", f.jobs, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--scale", f.scale, "paper or desk")->check(CLI::IsMember({"paper", "desk"}));
  cmd->add_option("--set", f.sets, "dotted.key=value override (repeatable)");
}

RunConfig resolve(const CommonFlags& f) {
  ConfigOverrides o;
  if (!f.scale.empty()) o.scale = parse_scale(f.scale);
  o.seed = f.seed;
  o.jobs = f.jobs;
  o.sets = f.sets;
  std::optional<fs::path> file;
  if (!f.config.empty()) file = f.config;
  return resolve_config(file, o);
}

fs::path out_dir(const CommonFlags& f, const std::string& sub) {
  if (!f.out.empty()) return f.out;
  if (const char* root = std::getenv("JAMLAB_OUT"); root != nullptr && *root != '\0') return fs::path(root) / sub;
  return fs::path("jamlab_out") / sub;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"jamlab: compound GNSS jamming synthesis, SKANet training and evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "jamlab 0.1.0");

  CommonFlags f;
  std::string dataset;
  std::string checkpoint;
  std::string subset = "test";
  std::string fuse_dataset;
  std::size_t probes = 64;
  bool train_form = false;

  auto* synth = app.add_subcommand("synth", "generate signals and feature images");
  add_common(synth, f);

  auto* featurize = app.add_subcommand("featurize", "compute feature images for an existing dataset");
  featurize->add_option("dataset", dataset, "dataset directory")->required();
  add_common(featurize, f);

  auto* train = app.add_subcommand("train", "train SKANet on a featurized dataset");
  train->add_option("dataset", dataset, "dataset directory")->required();
  add_common(train, f);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("dataset", dataset, "dataset directory")->required();
  eval->add_option("--subset", subset, "test or all")->check(CLI::IsMember({"test", "all"}));
  add_common(eval, f);

  auto* fuse = app.add_subcommand("fuse", "fold ACB branches into single 3x3 kernels");
  fuse->add_option("checkpoint", checkpoint, "checkpoint file")->required();
  fuse->add_option("--dataset", fuse_dataset, "probe with dataset samples instead of random images");
  fuse->add_option("--probes", probes, "number of probe inputs")->check(CLI::PositiveNumber);
  add_common(fuse, f);

  auto* flops = app.add_subcommand("flops", "FLOPs report for the configured model or layer list");
  flops->add_flag("--train-form", train_form, "count ACB branches separately");
  add_common(flops, f);

  auto* ablate = app.add_subcommand("ablate", "train the four ablation variants");
  ablate->add_option("dataset", dataset, "dataset directory")->required();
  add_common(ablate, f);

  CLI11_PARSE(app, argc, argv);

  cli::Context ctx{&std::cout, &std::cerr};
  try {
    if (synth->parsed()) {
      cli::cmd_synth(resolve(f), out_dir(f, "dataset"), ctx);
    } else if (featurize->parsed()) {
      cli::cmd_featurize(resolve(f), dataset, ctx);
    } else if (train->parsed()) {
      cli::cmd_train(resolve(f), dataset, out_dir(f, "train"), ctx);
    } else if (eval->parsed()) {
      const auto cfg = resolve(f);
      const auto out = out_dir(f, "eval");
      cli::cmd_eval(checkpoint, dataset, out, subset, ctx);
      echo_config(cfg, out);
    } else if (fuse->parsed()) {
      const auto cfg = resolve(f);
      const auto out = out_dir(f, "fuse");
      std::optional<fs::path> ds;
      if (!fuse_dataset.empty()) ds = fuse_dataset;
      cli::cmd_fuse(checkpoint, out, ds, probes, ctx);
      echo_config(cfg, out);
    } else if (flops->parsed()) {
      std::optional<fs::path> out;
      if (!f.out.empty()) out = f.out;
      cli::cmd_flops(resolve(f), train_form, out, ctx);
    } else if (ablate->parsed()) {
      cli::cmd_ablate(resolve(f), dataset, out_dir(f, "ablate"), ctx);
    }
  } catch (const std::exception& e) {
    std::cerr << "jamlab: error: " << e.what() << '\n';
    return cli::exit_code_for(e);
  }
  return 0;
}
