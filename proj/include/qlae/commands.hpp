#pragma once

#include "qlae/config.hpp"
#include "qlae/metrics.hpp"
#include "qlae/model.hpp"
#include "qlae/world.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace qlae {

/// Builds and saves the exhaustive dataset for a source space.
/// Returns the row count.
std::size_t cmd_generate_data(const SpaceDescriptor& descriptor,
                              const std::filesystem::path& out_dir);

/// Trains one model per seed. Each seed writes
///   <out>/seed_<s>/metrics.jsonl  (line-delimited step records)
///   <out>/seed_<s>/checkpoint/    (bit-exact model state)
/// On divergence a diagnostics snapshot is written before the error
/// propagates.
std::vector<std::filesystem::path> cmd_train(const RunConfig& run);

struct EvalOutput {
  double infom = 0;
  double infoe = 0;
  double infoc = 0;
  double psnr_mean = 0;
  int n_active = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::filesystem::path metrics_json;
  std::filesystem::path nmi_csv;
};

/// Draws n_eval i.i.d. rows (with replacement), encodes them, and computes
/// the metric suite. Quantized models are evaluated on discrete code indices,
/// others on the raw continuous latents. Writes metrics.json and nmi.csv
/// (active-mask row, then the n_s x n_z matrix).
EvalOutput cmd_evaluate(const std::filesystem::path& checkpoint_dir,
                        const std::filesystem::path& data_dir, long n_eval,
                        const std::filesystem::path& out_dir, int k = 3);

/// Evaluates a stored source/latent sample (produced by this artifact or
/// elsewhere) without a checkpoint. No reconstruction metric is available, so
/// psnr_mean is null in the JSON.
EvalOutput cmd_evaluate_sample(const std::filesystem::path& sample_dir,
                               const std::filesystem::path& out_dir, int k = 3);

struct SweepRow {
  double axis_value = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  double infom = 0;
  double infoe = 0;
  double infoc = 0;
  double psnr = 0;
  std::string error;
};

struct SweepOutputs {
  std::vector<SweepRow> rows;
  double best_axis_value = 0;
  double best_median_infom = 0;
  std::filesystem::path csv;
};

/// Trains and evaluates every (axis value x seed) cell in parallel workers.
/// Failed cells are recorded and the sweep continues. The CSV is sorted by
/// InfoM descending; the best axis value is chosen by median InfoM.
SweepOutputs cmd_sweep(const SweepSpec& spec, int workers = 0);

/// Decodes a latent traversal and writes frame_<k>.rgb (raw 8-bit RGB) plus
/// traversal.json metadata.
TraversalMeta cmd_traverse(const std::filesystem::path& checkpoint_dir,
                           const std::filesystem::path& data_dir, std::size_t image_index,
                           int dim, int n_steps, const std::filesystem::path& out_dir);

/// Shared helper: load the dataset a run refers to (from disk or synthetic).
Dataset resolve_dataset(const RunConfig& run);

/// Encode a model over drawn dataset rows into an evaluation sample;
/// `psnr_mean` receives the reconstruction quality over the same rows.
EvalSample encode_eval_sample(const QlaeModel<float>& model, const Dataset& data,
                              const std::vector<std::size_t>& rows, double* psnr_mean);

}  // namespace qlae
