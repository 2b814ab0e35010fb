#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "msmgn/cli.hpp"

namespace {

struct Common {
  std::string config_file;
  std::string out;
  std::string seed;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config_file, "key=value config file (see docs/formats.md)");
  cmd->add_option("-o,--out", c.out, "output directory (output_dir)");
  cmd->add_option("--seed", c.seed, "master seed (seed)");
  cmd->add_option("--set", c.overrides, "override any config key, e.g. --set train.steps=500")->take_all();
}

void set_if(msmgn::RunConfig& config, const std::string& key, const std::string& value) {
  if (!value.empty()) config.set(key, value);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multiscale mesh graph network toolkit"};
  app.require_subcommand(0, 1);
  app.set_help_all_flag("--help-all", "help for every subcommand");
  bool list_keys = false;
  app.add_flag("--list-keys", list_keys, "print every config key with its default and exit");

  Common common;
  std::string scenarios, labels, refine, processor, dataset, steps, resume, checkpoint, train_labels;
  CLI::App* gen = app.add_subcommand("gen", "generate scenarios, meshes, trajectories and labels");
  add_common(gen, common);
  gen->add_option("--scenarios", scenarios, "number of scenarios (dataset.scenarios)");
  gen->add_option("--labels", labels, "native or high-accuracy (dataset.labels)");
  gen->add_option("--refine", refine, "label refinement factor (dataset.refine)");

  CLI::App* train = app.add_subcommand("train", "train a model on a generated dataset");
  add_common(train, common);
  train->add_option("--processor", processor, "processor schedule, e.g. \"p=1H 5L 1H (U=1,D=1)\" (model.schedule)");
  train->add_option("--dataset", dataset, "dataset directory (dataset.dir)");
  train->add_option("--steps", steps, "optimization steps (train.steps)");
  train->add_option("--labels", train_labels, "native or high-accuracy (train.labels)");
  train->add_option("--resume", resume, "training checkpoint to continue from (train.resume)");

  CLI::App* eval = app.add_subcommand("eval", "evaluate the solver and a checkpoint on the fixed-obstacle test set");
  add_common(eval, common);
  eval->add_option("--checkpoint", checkpoint, "model checkpoint (train.checkpoint)");

  CLI::App* analyze = app.add_subcommand("analyze", "error spectra and convergence curve");
  add_common(analyze, common);
  analyze->add_option("--dataset", dataset, "dataset directory (dataset.dir)");
  analyze->add_option("--checkpoint", checkpoint, "model checkpoint (train.checkpoint)");

  CLI::App* bench = app.add_subcommand("bench", "time H, L, D and U steps across resolutions");
  add_common(bench, common);
  bench->add_option("--processor", processor, "processor schedule (model.schedule)");
  bench->add_option("--checkpoint", checkpoint, "model checkpoint (train.checkpoint)");

  app.footer("Config precedence: defaults < --config file < flags < --set overrides.");
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  if (list_keys) {
    for (const auto& k : msmgn::RunConfig::keys()) {
      std::cout << k.name << " = " << k.default_value << (k.doc.empty() ? "" : "  # " + k.doc) << '\n';
    }
    return 0;
  }
  if (app.get_subcommands().empty()) {
    std::cerr << app.help();
    return msmgn::kExitError;
  }

  try {
    msmgn::RunConfig config;
    if (!common.config_file.empty()) config.load_file(common.config_file);
    set_if(config, "output_dir", common.out);
    set_if(config, "seed", common.seed);
    set_if(config, "dataset.scenarios", scenarios);
    set_if(config, "dataset.labels", labels);
    set_if(config, "dataset.refine", refine);
    set_if(config, "model.schedule", processor);
    set_if(config, "dataset.dir", dataset);
    set_if(config, "train.steps", steps);
    set_if(config, "train.labels", train_labels);
    set_if(config, "train.resume", resume);
    set_if(config, "train.checkpoint", checkpoint);
    for (const std::string& o : common.overrides) config.assign(o);

    if (gen->parsed()) return msmgn::cmd_gen(config, std::cout);
    if (train->parsed()) return msmgn::cmd_train(config, std::cout);
    if (eval->parsed()) return msmgn::cmd_eval(config, std::cout);
    if (analyze->parsed()) return msmgn::cmd_analyze(config, std::cout);
    return msmgn::cmd_bench(config, std::cout);
  } catch (const msmgn::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return msmgn::kExitError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return msmgn::kExitError;
  }
}
