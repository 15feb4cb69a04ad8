#include <CLI11.hpp>
#include <iostream>

#include "bkf/cli/commands.hpp"

using namespace bkf::cli;

int main(int argc, char** argv) {
  CLI::App app{"Train and evaluate backprop Kalman filters on synthetic image sequences", "bkf"};
  app.require_subcommand(1);

  GenDataOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a dataset from an experiment config");
  gen_cmd->add_option("config", gen.config, "Experiment config")->required();
  gen_cmd->add_option("--out", gen.out, "Dataset file")->required();
  gen_cmd->add_option("--count", gen.count, "Number of sequences (default: config count)");
  gen_cmd->add_option("--seed", gen.seed, "Base seed (default: config seed)");

  TrainOptions tr;
  auto* train_cmd = app.add_subcommand("train", "Run one training stage");
  train_cmd->add_option("config", tr.config, "Experiment config")->required();
  train_cmd->add_option("--stage", tr.stage,
                        "pretrain_ff, fit_piecewise_R, pretrain_ml_cov, finetune_e2e or lstm_pretrain_recurrent")
      ->required();
  train_cmd->add_option("--model", tr.model, "feedforward, piecewise, bkf or lstm (default: config model)");
  train_cmd->add_option("--data", tr.data, "Training dataset (default: config data)");
  train_cmd->add_option("--init", tr.init, "Starting checkpoint (default: config checkpoint)");
  train_cmd->add_option("--out-checkpoint", tr.out, "Checkpoint to write")->required();
  train_cmd->add_option("--loss-csv", tr.loss_csv, "Loss curve CSV (default: <checkpoint>.loss.csv)");
  train_cmd->add_option("--epochs", tr.epochs, "Override the stage's epoch count");
  train_cmd->add_option("--lr", tr.lr, "Override the stage's learning rate");

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint and append a metrics row");
  eval_cmd->add_option("checkpoint", ev.checkpoint, "Checkpoint")->required();
  eval_cmd->add_option("--data", ev.data, "Test dataset")->required();
  eval_cmd->add_option("--out-csv", ev.out_csv, "Metrics CSV")->required();
  eval_cmd->add_option("--name", ev.name, "Model name in the CSV (default: checkpoint stem)");

  SweepOptions sw;
  auto* sweep_cmd = app.add_subcommand("sweep", "Evaluate models across distractor counts");
  sweep_cmd->add_option("config", sw.config, "Experiment config")->required();
  sweep_cmd->add_option("--model", sw.models, "NAME=CHECKPOINT, repeatable")->required();
  sweep_cmd->add_option("--levels", sw.levels, "Comma-separated distractor counts")->capture_default_str();
  sweep_cmd->add_option("--out-csv", sw.out_csv, "Metrics CSV (overwritten)")->required();
  sweep_cmd->add_option("--count", sw.count, "Sequences per level (default: config count)");

  GradcheckOptions gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of gradients and the filter");
  gc_cmd->add_option("--scale", gc.scale, "tiny or small")->capture_default_str();
  gc_cmd->add_option("--inject-fault", gc.inject_fault)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  return run_guarded(
      [&] {
        if (*gen_cmd) return cmd_gen_data(gen, std::cout);
        if (*train_cmd) return cmd_train(tr, std::cout);
        if (*eval_cmd) return cmd_eval(ev, std::cout);
        if (*sweep_cmd) return cmd_sweep(sw, std::cout);
        return cmd_gradcheck(gc, std::cout, std::cerr);
      },
      std::cerr);
}
