// Command-line entry point: dataset generation, tiling, training, evaluation,
// open-vocabulary inference, and the finite-difference gradient suite.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>

#include "ovd/error.hpp"
#include "ovd/gradcheck.hpp"
#include "ovd/runner.hpp"

namespace {

void add_model_flags(CLI::App* cmd, ovd::RunConfig& cfg) {
  cmd->add_option("--channels", cfg.model.channels, "visual feature width C");
  cmd->add_option("--text-dim", cfg.model.text_dim, "class embedding width d");
  cmd->add_option("--head-dim", cfg.model.head_dim, "attention projection width");
  cmd->add_option("--layers", cfg.model.layers, "decoder depth");
  cmd->add_option("--queries", cfg.model.queries, "object query count");
  cmd->add_option("--head-alpha", cfg.model.head_alpha, "contrastive head scale init");
  cmd->add_option("--head-beta", cfg.model.head_beta, "contrastive head offset init");
  cmd->add_option("--init-seed", cfg.model.init_seed, "parameter init seed");
  cmd->add_flag("--disable-tg-fe{false}", cfg.model.enable_tg_fe, "ablate text-guided feature enhancement");
  cmd->add_flag("--disable-vg-tr{false}", cfg.model.enable_vg_tr, "ablate visual-guided text refinement");
  cmd->add_flag("--disable-tg-qe{false}", cfg.model.enable_tg_qe, "ablate text-guided query enhancement");
  cmd->add_flag("--disable-gate{false}", cfg.model.enable_gate, "ablate the background suppression gate");
}

void add_common(CLI::App* cmd, ovd::RunConfig& cfg) {
  cmd->set_config("--config", "", "key=value config file; CLI flags override it");
  cmd->add_option("--seed", cfg.seed, "run seed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"open-vocabulary detection pipeline on synthetic compositional scenes"};
  app.require_subcommand(1);
  ovd::RunConfig cfg;

  auto* gen = app.add_subcommand("generate", "synthesize a train/eval dataset");
  add_common(gen, cfg);
  gen->add_option("--out", cfg.out_dir, "output dataset directory")->required();
  gen->add_option("--scenes", cfg.scenes, "training scene count");
  gen->add_option("--eval-scenes", cfg.eval_scenes, "evaluation scene count");
  gen->add_option("--canvas", cfg.canvas, "canvas side length in pixels");
  gen->add_option("--min-objects", cfg.min_objects, "minimum objects per scene");
  gen->add_option("--max-objects", cfg.max_objects, "maximum objects per scene");
  gen->add_option("--min-size", cfg.min_size_px, "minimum object size in pixels");
  gen->add_option("--max-size", cfg.max_size_px, "maximum object size in pixels");
  gen->add_option("--clutter", cfg.clutter_level, "background clutter level");
  gen->add_option("--novel", cfg.novel_classes, "novel class names withheld from training");

  auto* tile = app.add_subcommand("tile", "re-tile a partition into fixed-size crops");
  add_common(tile, cfg);
  tile->add_option("--data", cfg.data_dir, "partition directory with annotations.json")->required();
  tile->add_option("--out", cfg.out_dir, "output partition directory")->required();
  tile->add_option("--tile-size", cfg.tile_size, "tile side length");
  tile->add_option("--tile-stride", cfg.tile_stride, "tile stride");
  tile->add_option("--min-visible", cfg.min_visible_fraction,
                   "minimum visible box fraction to keep a clipped annotation");

  auto* train = app.add_subcommand("train", "train a detector on a generated dataset");
  add_common(train, cfg);
  add_model_flags(train, cfg);
  train->add_option("--data", cfg.data_dir, "dataset root directory")->required();
  train->add_option("--out", cfg.out_dir, "run output directory")->required();
  train->add_option("--steps", cfg.steps, "optimizer steps");
  train->add_option("--batch-size", cfg.batch_size, "images per step");
  train->add_option("--lr", cfg.learning_rate, "step size");
  train->add_option("--optimizer", cfg.optimizer, "adam or sgd");
  train->add_option("--clip-norm", cfg.clip_norm, "global gradient norm ceiling (0 disables)");
  train->add_option("--class-slots", cfg.train_class_slots, "sampled class slots per image");
  train->add_option("--log-every", cfg.log_every, "stdout logging period");
  train->add_flag("--no-hflip{false}", cfg.hflip, "disable horizontal flip augmentation");
  train->add_flag("--deterministic", cfg.deterministic, "force fully serial execution");
  train->add_option("--split", cfg.split_path, "novel-class split file override");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint under a protocol");
  add_common(eval, cfg);
  eval->add_option("--checkpoint", cfg.checkpoint, "checkpoint path")->required();
  eval->add_option("--data", cfg.data_dir, "dataset root directory")->required();
  eval->add_option("--out", cfg.out_dir, "report output directory")->required();
  eval->add_option("--protocol", cfg.protocol, "closed | zsd | gzsd");
  eval->add_option("--restrict", cfg.restrict_classes,
                   "restrict closed-protocol vocabulary: none | base | novel");
  eval->add_option("--score-floor", cfg.score_floor, "minimum detection score kept");
  eval->add_option("--split", cfg.split_path, "novel-class split file override");
  eval->add_flag("--deterministic", cfg.deterministic, "force fully serial execution");

  auto* infer = app.add_subcommand("infer", "detect on one image with an open vocabulary");
  add_common(infer, cfg);
  infer->add_option("--checkpoint", cfg.checkpoint, "checkpoint path")->required();
  infer->add_option("--image", cfg.image_path, "input PNG")->required();
  infer->add_option("--vocab", cfg.vocab_path, "class-name file, one per line")->required();
  infer->add_option("--floor", cfg.infer_floor, "minimum printed score");

  auto* gradcheck = app.add_subcommand("gradcheck", "run the finite-difference gradient suite");
  int gc_instances = 100;
  double gc_tol = 1e-4;
  gradcheck->add_option("--instances", gc_instances, "instances per operation");
  gradcheck->add_option("--tolerance", gc_tol, "maximum relative error");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      ovd::run_generate(cfg);
      std::cout << "dataset written to " << cfg.out_dir << "\n";
    } else if (tile->parsed()) {
      ovd::run_tile(cfg);
      std::cout << "tiles written to " << cfg.out_dir << "\n";
    } else if (train->parsed()) {
      const auto res = ovd::run_train(cfg);
      std::cout << "checkpoint " << res.checkpoint_path << " (final loss " << res.final_loss
                << ")\n";
    } else if (eval->parsed()) {
      ovd::run_eval(cfg);
      std::ifstream report(cfg.out_dir + "/report.txt");
      std::cout << report.rdbuf();
    } else if (infer->parsed()) {
      std::cout << ovd::run_infer(cfg);
    } else if (gradcheck->parsed()) {
      const bool ok = ovd::run_gradient_suite(std::cout, gc_instances, gc_tol);
      return ok ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
