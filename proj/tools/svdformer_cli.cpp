// svdformer: dataset synthesis, projection, training, completion,
// evaluation and gradient verification.

#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "svdformer/cli.hpp"

namespace cli = svdf::cli;

int main(int argc, char** argv) {
  CLI::App app{"SVDFormer point-cloud completion"};
  app.require_subcommand(1);

  cli::SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic partial/complete dataset");
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();
  synth_cmd->add_option("--count", synth.count, "Number of pairs")->required();
  synth_cmd->add_option("--seed", synth.seed, "Random seed (default 0)");
  synth_cmd->add_option("--profile", synth.profile, "pcn | shapenet55 | desk (default desk)");
  synth_cmd->add_option("--config", synth.config, "Run config JSON (overrides --profile)");

  cli::ProjectArgs project;
  auto* project_cmd = app.add_subcommand("project", "Render self-view depth maps of a cloud");
  project_cmd->add_option("--in", project.input, "Input .xyz cloud")->required();
  project_cmd->add_option("--out", project.out, "Output directory")->required();
  project_cmd->add_option("--profile", project.profile, "Profile providing defaults (default desk)");
  project_cmd->add_option("--views", project.views, "Number of orthogonal views (1-3)");
  project_cmd->add_option("--res", project.resolution, "Raster resolution in pixels");
  project_cmd->add_option("--dist", project.distance, "Camera distance from the origin");
  project_cmd->add_option("--jitter-seed", project.jitter_seed, "Enable random-projection jitter with this seed");

  cli::TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a model on a dataset directory");
  train_cmd->add_option("--config", train.config, "Run config JSON")->required();
  train_cmd->add_option("--data", train.data, "Dataset directory")->required();
  train_cmd->add_option("--out", train.out, "Checkpoint directory")->required();
  train_cmd->add_option("--resume", train.resume, "Checkpoint to resume from");
  train_cmd->add_option("--steps", train.steps, "Total optimizer steps (overrides the config)");
  train_cmd->add_option("--trace", train.trace, "Loss trace CSV (default <out>/trace.csv)");
  train_cmd->add_flag("--verbose", train.verbose, "Print every step");

  cli::InitArgs init;
  auto* init_cmd = app.add_subcommand("init", "Write a checkpoint with freshly initialised weights");
  init_cmd->add_option("--out", init.out, "Checkpoint directory")->required();
  init_cmd->add_option("--profile", init.profile, "pcn | shapenet55 | desk (default desk)");
  init_cmd->add_option("--config", init.config, "Run config JSON (overrides --profile)");
  init_cmd->add_option("--seed", init.seed, "Weight initialisation seed");

  cli::CompleteArgs complete;
  auto* complete_cmd = app.add_subcommand("complete", "Complete a partial cloud");
  complete_cmd->add_option("--ckpt", complete.checkpoint, "Checkpoint directory")->required();
  complete_cmd->add_option("--in", complete.input, "Partial .xyz cloud")->required();
  complete_cmd->add_option("--out", complete.output, "Completed .xyz cloud")->required();
  complete_cmd->add_flag("--dump-stages", complete.dump_stages, "Also write P_c, P_0 and P_1 next to --out");
  complete_cmd->add_option("--dump-attn", complete.dump_attn, "Write refinement attention maps with this path stem");
  complete_cmd->add_option("--seed", complete.seed, "Seed for resizing the input (default 0)");

  cli::EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Score predicted clouds against ground truth");
  eval_cmd->add_option("--pred", eval.pred, "Directory of predicted .xyz clouds")->required();
  eval_cmd->add_option("--gt", eval.gt, "Directory of ground-truth .xyz clouds (matched by file name)");
  eval_cmd->add_option("--metrics", eval.metrics, "cd_l1,cd_l2,dcd,f1 or mmd")->delimiter(',');
  eval_cmd->add_option("--refs", eval.refs, "Reference clouds for mmd");
  eval_cmd->add_option("--alpha", eval.alpha, "DCD temperature (default 1000)");
  eval_cmd->add_option("--tau", eval.tau, "F-score threshold (default 0.01)");

  cli::GradcheckArgs grad;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Verify gradients of every op and block");
  grad_cmd->add_option("--tol", grad.tolerance, "Relative error tolerance (default 1e-4)");
  grad_cmd->add_option("--instances", grad.instances, "Random instantiations per op (default 5)");
  grad_cmd->add_option("--inject-fault", grad.inject_fault, "Corrupt the gradient of this op");
  grad_cmd->add_option("--seed", grad.seed, "Random seed (default 0)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? cli::kOk : cli::kUsage;
  }

  return cli::run_guarded(
      [&]() -> int {
        if (*synth_cmd) return cli::cmd_synth(synth, std::cout);
        if (*project_cmd) return cli::cmd_project(project, std::cout);
        if (*train_cmd) return cli::cmd_train(train, std::cout);
        if (*init_cmd) return cli::cmd_init(init, std::cout);
        if (*complete_cmd) return cli::cmd_complete(complete, std::cout);
        if (*eval_cmd) {
          if (eval.gt.empty() && !eval.refs) throw cli::UsageError("eval: --gt is required unless --metrics mmd");
          return cli::cmd_eval(eval, std::cout);
        }
        return cli::cmd_gradcheck(grad, std::cout);
      },
      std::cerr);
}
