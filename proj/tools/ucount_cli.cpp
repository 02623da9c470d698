// ucount: command-line driver for the source -> target counting experiment.

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "ucount/experiment/config.hpp"
#include "ucount/experiment/pipeline.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitPrerequisite = 3;
constexpr int kExitNumerical = 4;

}  // namespace

int main(int argc, char** argv) {
  using namespace ucount;

  CLI::App app{"Uncertainty-aware crowd counting: train, score, select, finetune, evaluate"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, workspace_flag, level_name_flag = "image";
  std::vector<std::uint64_t> seeds_flag;
  app.add_option("-c,--config", config_path, "key=value experiment configuration (defaults if omitted)")
      ->check(CLI::ExistingFile);
  app.add_option("-w,--workspace", workspace_flag, "workspace directory (overrides UCOUNT_WORKSPACE and the config)");
  app.add_option("--seeds", seeds_flag, "run seeds, overriding experiment.seeds")->delimiter(',');

  auto* config_cmd = app.add_subcommand("config", "print the effective configuration");
  auto* gen = app.add_subcommand("gen", "generate source and target splits");
  auto* train_cmd = app.add_subcommand("train", "train the source CTN, the committee and the MC-dropout model");
  auto* score = app.add_subcommand("score", "score the target pool");
  auto* select = app.add_subcommand("select", "select images or crops for annotation");
  auto* finetune_cmd = app.add_subcommand("finetune", "finetune the source CTN on each selection");
  auto* eval = app.add_subcommand("eval", "evaluate source and finetuned models");
  auto* sparsify = app.add_subcommand("sparsify", "sparsification curves of aleatoric and epistemic uncertainty");
  auto* report = app.add_subcommand("report", "aggregate evaluation reports across seeds");
  auto* run = app.add_subcommand("run", "every step in order, image and crop level");
  for (auto* sub : {score, select, finetune_cmd}) {
    sub->add_option("--level", level_name_flag, "selection level")->check(CLI::IsMember({"image", "crop"}));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : ExperimentConfig::load(config_path);
    if (!seeds_flag.empty()) cfg.seeds = seeds_flag;
    cfg.validate();
    const fs::path ws = resolve_workspace(cfg, workspace_flag);
    const Level level = parse_level(level_name_flag);
    std::ostream& log = std::cout;

    if (*config_cmd) {
      std::cout << "workspace=" << ws.string() << "\n" << cfg.to_text();
    } else if (*gen) {
      cmd_gen(cfg, ws, log);
    } else if (*train_cmd) {
      cmd_train(cfg, ws, log);
    } else if (*score) {
      cmd_score(cfg, ws, level, log);
    } else if (*select) {
      cmd_select(cfg, ws, level, log);
    } else if (*finetune_cmd) {
      cmd_finetune(cfg, ws, level, log);
    } else if (*eval) {
      cmd_eval(cfg, ws, log);
    } else if (*sparsify) {
      cmd_sparsify(cfg, ws, log);
    } else if (*report) {
      cmd_report(cfg, ws, log);
    } else if (*run) {
      cmd_run(cfg, ws, log);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const PrerequisiteError& e) {
    std::cerr << "missing prerequisite: " << e.what() << "\n";
    return kExitPrerequisite;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
