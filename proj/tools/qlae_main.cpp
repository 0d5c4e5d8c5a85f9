// Command-line driver: dataset generation, training, evaluation, sweeps, and
// latent traversals. All commands are deterministic given their inputs and
// seeds; failures exit nonzero with a JSON error record on stderr.

#include "qlae/commands.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

namespace {

using nlohmann::json;

json load_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("cannot open config file: " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument("malformed JSON in " + path + ": " + e.what());
  }
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"quantized-latent autoencoders and information-theoretic disentanglement metrics"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint_dir, data_dir, sample_dir;
  std::optional<std::uint64_t> seed;
  long n_eval = 10000;
  int k = 3;
  int workers = 0;
  std::size_t image_index = 0;
  int dim = 0;
  int n_steps = 8;

  auto* gen = app.add_subcommand("generate-data", "render the exhaustive synthetic dataset");
  gen->add_option("--config", config_path, "space descriptor JSON (defaults to the built-in space)");
  gen->add_option("--out", out_dir, "output dataset directory")->required();
  gen->add_option("--seed", seed, "unused; generation is deterministic");

  auto* tr = app.add_subcommand("train", "train one model per seed");
  tr->add_option("--config", config_path, "run config JSON")->required();
  tr->add_option("--out", out_dir, "override the config's output directory");
  tr->add_option("--seed", seed, "train this single seed instead of the config's list");

  auto* ev = app.add_subcommand("evaluate", "compute InfoM/InfoE/InfoC and reconstruction quality");
  ev->add_option("--checkpoint", checkpoint_dir, "checkpoint directory");
  ev->add_option("--data", data_dir, "dataset directory");
  ev->add_option("--sample", sample_dir, "stored evaluation sample (instead of checkpoint+data)");
  ev->add_option("--n-eval", n_eval, "evaluation draws (i.i.d. with replacement)");
  ev->add_option("--k", k, "nearest-neighbor count for continuous latents");
  ev->add_option("--out", out_dir, "output directory")->required();
  ev->add_option("--config", config_path, "unused; retained for interface symmetry");
  ev->add_option("--seed", seed, "unused; evaluation derives its stream from the checkpoint");

  auto* sw = app.add_subcommand("sweep", "train and evaluate a hyperparameter grid");
  sw->add_option("--config", config_path, "sweep spec JSON")->required();
  sw->add_option("--out", out_dir, "override the base config's output directory");
  sw->add_option("--workers", workers, "parallel workers (default: hardware concurrency)");
  sw->add_option("--seed", seed, "replace the base config's seed list with one seed");

  auto* tv = app.add_subcommand("traverse", "decode a latent traversal into image frames");
  tv->add_option("--checkpoint", checkpoint_dir, "checkpoint directory")->required();
  tv->add_option("--data", data_dir, "dataset directory")->required();
  tv->add_option("--image", image_index, "dataset row to traverse from");
  tv->add_option("--dim", dim, "latent dimension to interpolate")->required();
  tv->add_option("--steps", n_steps, "number of interpolation steps");
  tv->add_option("--out", out_dir, "output directory")->required();
  tv->add_option("--config", config_path, "unused; retained for interface symmetry");
  tv->add_option("--seed", seed, "unused; traversal is deterministic");

  CLI11_PARSE(app, argc, argv);

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (gen->parsed()) {
      qlae::SpaceDescriptor desc;
      if (!config_path.empty()) {
        desc = qlae::space_descriptor_from_json(load_json_file(config_path));
      } else {
        desc.cardinalities = {8, 8, 4, 4};
        desc.names = {"object_x", "object_y", "object_hue", "background_hue"};
      }
      qlae::cmd_generate_data(desc, out_dir);
    } else if (tr->parsed()) {
      qlae::RunConfig run = qlae::load_run_config(config_path);
      if (!out_dir.empty()) run.out_dir = out_dir;
      if (seed) run.seeds = {*seed};
      const auto checkpoints = qlae::cmd_train(run);
      for (const auto& c : checkpoints) std::cout << "checkpoint: " << c.string() << "\n";
    } else if (ev->parsed()) {
      if (sample_dir.empty() == (checkpoint_dir.empty() || data_dir.empty())) {
        throw std::invalid_argument(
            "evaluate: pass either --sample or both --checkpoint and --data");
      }
      const qlae::EvalOutput out =
          sample_dir.empty() ? qlae::cmd_evaluate(checkpoint_dir, data_dir, n_eval, out_dir, k)
                             : qlae::cmd_evaluate_sample(sample_dir, out_dir, k);
      std::cout << "infom=" << out.infom << " infoe=" << out.infoe << " infoc=" << out.infoc
                << " psnr=" << out.psnr_mean << " n_active=" << out.n_active << "\n";
    } else if (sw->parsed()) {
      qlae::SweepSpec spec = qlae::load_sweep_spec(config_path);
      if (!out_dir.empty()) spec.base.out_dir = out_dir;
      if (seed) spec.base.seeds = {*seed};
      const qlae::SweepOutputs out = qlae::cmd_sweep(spec, workers);
      std::cout << "best " << spec.axis << "=" << out.best_axis_value
                << " (median infom=" << out.best_median_infom << "), table: " << out.csv.string()
                << "\n";
      for (const auto& row : out.rows) {
        if (!row.ok) std::cerr << "cell failed (" << spec.axis << "=" << row.axis_value
                               << ", seed=" << row.seed << "): " << row.error << "\n";
      }
    } else if (tv->parsed()) {
      const qlae::TraversalMeta meta =
          qlae::cmd_traverse(checkpoint_dir, data_dir, image_index, dim, n_steps, out_dir);
      std::cout << "dim=" << meta.dim << " min=" << meta.z_min << " max=" << meta.z_max
                << " steps=" << meta.n_steps << (meta.inactive ? " (inactive)" : "") << "\n";
    }
  } catch (const std::exception& e) {
    json err;
    err["command"] = command;
    err["error"] = e.what();
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 0;
}
