#include <CLI11.hpp>
#include <iostream>
#include <string>
#include <vector>

#include "lstrl/commands.hpp"

namespace {

// exit codes: 0 success, 2 config/data error, 3 numerical failure
constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kNumericError = 3;

lstrl::RunConfig assemble_config(const std::string& config_path,
                                 const std::vector<std::string>& sets, long long seed,
                                 bool seed_given) {
  lstrl::RunConfig rc;
  if (!config_path.empty()) rc = lstrl::RunConfig::from_file(config_path);
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw lstrl::ConfigError("--set expects key=value, got '" + kv + "'");
    rc.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (seed_given) rc.set("seed", std::to_string(seed));
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale long short-term video re-identification pipeline"};
  app.require_subcommand(1);
  app.fallthrough(true);

  std::string config_path;
  std::vector<std::string> sets;
  long long seed = 1;
  bool force = false;
  app.add_option("--config", config_path, "flat key=value configuration file");
  app.add_option("--set", sets, "override a config key (repeatable)");
  auto* seed_opt = app.add_option("--seed", seed, "master RNG seed");
  app.add_flag("--force", force, "overwrite a non-empty dataset directory");

  auto* generate = app.add_subcommand("generate", "write the synthetic dataset");

  auto* train = app.add_subcommand("train", "train a model on the train split");
  std::string variant, ablate, motion, direction;
  train->add_option("--variant", variant, "baseline | +mae | +mae+bme");
  train->add_option("--ablate-granularity", ablate, "drop one appearance branch (A1..A4)");
  train->add_option("--motion", motion, "global | local");
  train->add_option("--direction", direction, "bi | single");

  auto* eval = app.add_subcommand("eval", "retrieval evaluation of a checkpoint");
  std::string checkpoint, report_dir;
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--out", report_dir, "report directory (default: checkpoint's dir)");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  std::string corrupt;
  long long gc_seeds = 20;
  gradcheck->add_option("--corrupt", corrupt, "test hook: corrupt one op's gradients");
  gradcheck->add_option("--seeds", gc_seeds, "random seeds per op");

  auto* inspect = app.add_subcommand("inspect", "dump dependency/motion tensors of a clip");
  std::string ins_checkpoint, clip_dir, ins_out;
  inspect->add_option("--checkpoint", ins_checkpoint, "checkpoint file")->required();
  inspect->add_option("--clip", clip_dir, "tracklet directory of frame tensors")->required();
  inspect->add_option("--out", ins_out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    lstrl::RunConfig rc = assemble_config(config_path, sets, seed, seed_opt->count() > 0);
    if (app.got_subcommand(train)) {
      lstrl::apply_variant(rc, variant);
      lstrl::apply_granularity_ablation(rc, ablate);
      if (!motion.empty()) rc.set("model.motion", motion);
      if (!direction.empty()) rc.set("model.direction", direction);
    }
    lstrl::AppConfig cfg = lstrl::AppConfig::load(rc);

    if (app.got_subcommand(generate)) {
      lstrl::cmd_generate(cfg, force, std::cout);
    } else if (app.got_subcommand(train)) {
      lstrl::cmd_train(cfg, std::cout);
    } else if (app.got_subcommand(eval)) {
      const std::filesystem::path ckpt = checkpoint;
      const std::filesystem::path out =
          report_dir.empty() ? ckpt.parent_path() : std::filesystem::path(report_dir);
      lstrl::cmd_eval(cfg, ckpt, out, std::cout);
    } else if (app.got_subcommand(gradcheck)) {
      if (!lstrl::cmd_gradcheck(std::cout, corrupt, static_cast<std::size_t>(gc_seeds)))
        return kNumericError;
    } else if (app.got_subcommand(inspect)) {
      lstrl::cmd_inspect(cfg, ins_checkpoint, clip_dir, ins_out, std::cout);
    }
    return kOk;
  } catch (const lstrl::NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumericError;
  } catch (const lstrl::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
}
