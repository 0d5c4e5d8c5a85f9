#pragma once

#include "qlae/autodiff.hpp"
#include "qlae/codebook.hpp"
#include "qlae/network.hpp"
#include "qlae/optimizer.hpp"
#include "qlae/rng.hpp"
#include "qlae/world.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace qlae {

/// Hyperparameters for one training run.
struct TrainConfig {
  double lambda_reconstruct = 1.0;
  double lambda_quantize = 1e-2;
  double lambda_commit = 1e-2;
  int batch_size = 128;
  long max_updates = 20000;
  int n_z = 0;  // 0 means "derive as twice the source count" at setup time
  int n_v = 10;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
  bool quantization = true;
  bool global_codebook = false;
  std::uint64_t seed = 0;
  long log_every = 500;

  void validate() const {
    if (lambda_reconstruct < 0 || lambda_quantize < 0 || lambda_commit < 0) {
      throw std::invalid_argument("TrainConfig: loss weights must be nonnegative");
    }
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (max_updates < 0) throw std::invalid_argument("TrainConfig: max_updates must be >= 0");
    if (n_v < 2) throw std::invalid_argument("TrainConfig: n_v must be >= 2");
  }
};

inline constexpr int kDefaultHidden[2] = {256, 256};
inline constexpr double kLeakySlope = 0.3;

// Substream ids carved out of the run seed.
inline constexpr std::uint64_t kInitStream = 1;
inline constexpr std::uint64_t kBatchStream = 2;
inline constexpr std::uint64_t kEvalStream = 3;

/// Full training state: encoder, decoder, codebooks, optimizer moments, and
/// the batch-sampling stream. Checkpoints round-trip this bit-exactly.
template <class T>
struct QlaeModel {
  TrainConfig cfg;
  int input_dim = 0;
  std::vector<int> hidden;
  DenseNet<T> encoder;
  DenseNet<T> decoder;
  CodebookArray<T> codebook;
  GroupedAdamW<T> opt;
  RngStream batch_rng;
  long step = 0;
};

/// Builds networks, codebooks, and the optimizer groups: encoder/decoder
/// weights carry the configured weight decay (AdamW), biases and codebook
/// entries carry none (Adam).
template <class T>
QlaeModel<T> init_model(const TrainConfig& cfg, int input_dim,
                        std::vector<int> hidden = {kDefaultHidden[0], kDefaultHidden[1]}) {
  cfg.validate();
  if (cfg.n_z < 1) throw std::invalid_argument("init_model: n_z must be resolved before setup");
  QlaeModel<T> m;
  m.cfg = cfg;
  m.input_dim = input_dim;
  m.hidden = hidden;

  RngStream init_rng(cfg.seed, kInitStream);
  std::vector<int> enc_dims{input_dim};
  enc_dims.insert(enc_dims.end(), hidden.begin(), hidden.end());
  enc_dims.push_back(cfg.n_z);
  std::vector<int> dec_dims{cfg.n_z};
  dec_dims.insert(dec_dims.end(), hidden.rbegin(), hidden.rend());
  dec_dims.push_back(input_dim);
  m.encoder = init_dense<T>(enc_dims, static_cast<T>(kLeakySlope), init_rng);
  m.decoder = init_dense<T>(dec_dims, static_cast<T>(kLeakySlope), init_rng);
  m.codebook = init_codebooks<T>(cfg.n_z, cfg.n_v,
                                 cfg.global_codebook ? CodebookMode::kGlobal
                                                     : CodebookMode::kPerDimension);
  m.batch_rng = RngStream(cfg.seed, kBatchStream);

  m.opt = GroupedAdamW<T>(static_cast<T>(cfg.learning_rate), static_cast<T>(cfg.beta1),
                          static_cast<T>(cfg.beta2), static_cast<T>(cfg.epsilon));
  const T wd = static_cast<T>(cfg.weight_decay);
  for (std::size_t l = 0; l < m.encoder.layer_count(); ++l) {
    m.opt.add_parameter(m.encoder.weights[l], wd);
    m.opt.add_parameter(m.encoder.biases[l], T(0));
  }
  for (std::size_t l = 0; l < m.decoder.layer_count(); ++l) {
    m.opt.add_parameter(m.decoder.weights[l], wd);
    m.opt.add_parameter(m.decoder.biases[l], T(0));
  }
  m.opt.add_parameter(m.codebook.values, T(0));
  return m;
}

template <class T>
struct LossGraph {
  Var<T> total;
  Var<T> bce;
  Var<T> quantize_loss;  // null when quantization is disabled
  Var<T> commit_loss;
  Var<T> logits;
  Var<T> z_c;
  std::vector<int> indices;
};

/// One forward pass: encode, quantize (when enabled), straight-through,
/// decode, weighted loss. Codebook losses are per-example sums averaged over
/// the batch; reconstruction is the mean binary cross-entropy per
/// pixel-channel.
template <class T>
LossGraph<T> build_loss(const QlaeModel<T>& m, const Tensor<T>& images) {
  LossGraph<T> g;
  auto x = constant(Tensor<T>(images));
  g.z_c = dense_forward(m.encoder, x);
  Var<T> latent;
  const T inv_b = T(1) / static_cast<T>(images.rows());
  if (m.cfg.quantization) {
    auto q = quantize(g.z_c->value, m.codebook);
    g.indices = std::move(q.indices);
    auto zq = gather_codes(m.codebook, g.indices, g.z_c->value.shape());
    auto losses = codebook_losses(g.z_c, zq);
    g.quantize_loss = scale(losses.quantize_loss, inv_b);
    g.commit_loss = scale(losses.commit_loss, inv_b);
    latent = straight_through(g.z_c, zq);
  } else {
    latent = g.z_c;
  }
  g.logits = dense_forward(m.decoder, latent);
  g.bce = bce_with_logits(g.logits, images);
  g.total = scale(g.bce, static_cast<T>(m.cfg.lambda_reconstruct));
  if (m.cfg.quantization) {
    g.total = add(g.total, add(scale(g.quantize_loss, static_cast<T>(m.cfg.lambda_quantize)),
                               scale(g.commit_loss, static_cast<T>(m.cfg.lambda_commit))));
  }
  return g;
}

struct StepStats {
  long step = 0;
  double loss_total = 0;
  double loss_bce = 0;
  double loss_quantize = 0;
  double loss_commit = 0;
  double psnr = std::numeric_limits<double>::quiet_NaN();
};

class DivergenceError : public std::runtime_error {
public:
  DivergenceError(const StepStats& stats, const std::string& what)
      : std::runtime_error(what), stats_(stats) {}
  const StepStats& stats() const { return stats_; }

private:
  StepStats stats_;
};

template <class T>
Tensor<T> sigmoid_values(const Tensor<T>& logits) {
  Tensor<T> out(logits.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = T(1) / (T(1) + std::exp(-logits[i]));
  return out;
}

/// Peak signal-to-noise ratio in dB; +infinity stands in for a zero-error
/// reconstruction.
template <class T>
double psnr(const Tensor<T>& reconstruction, const Tensor<T>& x) {
  if (!reconstruction.same_shape(x)) throw std::invalid_argument("psnr: shape mismatch");
  double mse = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double d = static_cast<double>(reconstruction[i]) - static_cast<double>(x[i]);
    mse += d * d;
  }
  mse /= static_cast<double>(x.numel());
  if (mse == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

/// One optimizer update on a batch of flattened images.
template <class T>
StepStats qlae_step(QlaeModel<T>& m, const Tensor<T>& images, bool with_psnr = false) {
  LossGraph<T> g;
  try {
    g = build_loss(m, images);
  } catch (const std::invalid_argument& e) {
    // a non-finite activation reached the quantizer: surface as divergence
    StepStats st;
    st.step = m.step + 1;
    st.loss_total = std::numeric_limits<double>::quiet_NaN();
    throw DivergenceError(st, "non-finite values at step " + std::to_string(st.step) + ": " +
                                  e.what());
  }
  StepStats st;
  st.step = m.step + 1;
  st.loss_total = static_cast<double>(g.total->value[0]);
  st.loss_bce = static_cast<double>(g.bce->value[0]);
  st.loss_quantize = g.quantize_loss ? static_cast<double>(g.quantize_loss->value[0]) : 0.0;
  st.loss_commit = g.commit_loss ? static_cast<double>(g.commit_loss->value[0]) : 0.0;
  if (!std::isfinite(st.loss_total)) {
    throw DivergenceError(st, "non-finite loss at step " + std::to_string(st.step) +
                                  " (bce=" + std::to_string(st.loss_bce) +
                                  ", quantize=" + std::to_string(st.loss_quantize) +
                                  ", commit=" + std::to_string(st.loss_commit) + ")");
  }
  if (with_psnr) st.psnr = psnr(sigmoid_values(g.logits->value), images);
  auto grads = forward_backward(g.total);
  m.opt.step(grads);
  ++m.step;
  return st;
}

/// Runs the remaining update budget, logging every cfg.log_every steps and at
/// the final step.
template <class T>
std::vector<StepStats> train(QlaeModel<T>& m, const Dataset& data,
                             const std::function<void(const StepStats&)>& on_log = {}) {
  std::vector<StepStats> log;
  while (m.step < m.cfg.max_updates) {
    auto batch = sample_batch<T>(data, m.batch_rng, static_cast<std::size_t>(m.cfg.batch_size));
    const long next = m.step + 1;
    const bool want_log =
        (m.cfg.log_every > 0 && next % m.cfg.log_every == 0) || next == m.cfg.max_updates;
    const StepStats st = qlae_step(m, batch.images, want_log);
    if (want_log) {
      log.push_back(st);
      if (on_log) on_log(st);
    }
  }
  return log;
}

/// Model forward for evaluation: pre-quantized latents for a batch.
template <class T>
Tensor<T> encode_values(const QlaeModel<T>& m, const Tensor<T>& images) {
  auto z = dense_forward(m.encoder, constant(Tensor<T>(images)));
  return std::move(z->value);
}

template <class T>
struct ReconstructResult {
  Tensor<T> probabilities;   // sigmoid of the decoder logits
  Tensor<T> z_c;             // pre-quantized latents
  std::vector<int> indices;  // empty when quantization is disabled
};

template <class T>
ReconstructResult<T> reconstruct_values(const QlaeModel<T>& m, const Tensor<T>& images) {
  ReconstructResult<T> out;
  out.z_c = encode_values(m, images);
  Tensor<T> latent = out.z_c;
  if (m.cfg.quantization) {
    auto q = quantize(out.z_c, m.codebook);
    latent = std::move(q.z);
    out.indices = std::move(q.indices);
  }
  auto logits = dense_forward(m.decoder, constant(std::move(latent)));
  out.probabilities = sigmoid_values(logits->value);
  return out;
}

struct TraversalMeta {
  int dim = 0;
  int n_steps = 0;
  double z_min = 0;
  double z_max = 0;
  bool inactive = false;
};

template <class T>
struct TraversalResult {
  std::vector<Tensor<T>> frames;  // decoded reconstructions in [0, 1]
  TraversalMeta meta;
};

/// Encodes the whole evaluation set to find the traversed dimension's range,
/// then decodes n_steps codes with that dimension linearly interpolated from
/// min to max (re-quantized when quantization is on) and all others held at
/// the probe image's encoding. A dimension whose range is below 1/8 of the
/// widest is flagged inactive in the metadata.
template <class T>
TraversalResult<T> latent_traversal(const QlaeModel<T>& m, const Dataset& data,
                                    std::size_t row_index, int dim, int n_steps) {
  const int n_z = m.cfg.n_z;
  if (dim < 0 || dim >= n_z) throw std::invalid_argument("latent_traversal: dim out of range");
  if (n_steps < 1) throw std::invalid_argument("latent_traversal: need n_steps >= 1");
  if (row_index >= data.count()) throw std::invalid_argument("latent_traversal: row out of range");

  const std::size_t px = data.pixels_per_image();
  std::vector<double> z_min(n_z, std::numeric_limits<double>::infinity());
  std::vector<double> z_max(n_z, -std::numeric_limits<double>::infinity());
  const std::size_t chunk = 512;
  for (std::size_t start = 0; start < data.count(); start += chunk) {
    const std::size_t rows = std::min(chunk, data.count() - start);
    Tensor<T> imgs({rows, px});
    for (std::size_t i = 0; i < rows; ++i) data.image_into(start + i, imgs.data() + i * px);
    Tensor<T> z = encode_values(m, imgs);
    for (std::size_t i = 0; i < rows; ++i) {
      for (int j = 0; j < n_z; ++j) {
        const double v = static_cast<double>(z.at(i, j));
        z_min[j] = std::min(z_min[j], v);
        z_max[j] = std::max(z_max[j], v);
      }
    }
  }
  double max_range = 0;
  for (int j = 0; j < n_z; ++j) max_range = std::max(max_range, z_max[j] - z_min[j]);

  TraversalResult<T> out;
  out.meta.dim = dim;
  out.meta.n_steps = n_steps;
  out.meta.z_min = z_min[dim];
  out.meta.z_max = z_max[dim];
  out.meta.inactive = (z_max[dim] - z_min[dim]) < max_range / 8.0;

  Tensor<T> probe({1, px});
  data.image_into(row_index, probe.data());
  const Tensor<T> base = encode_values(m, probe);
  for (int t = 0; t < n_steps; ++t) {
    Tensor<T> z = base;
    const double frac = n_steps == 1 ? 0.0 : static_cast<double>(t) / (n_steps - 1);
    z.at(0, dim) = static_cast<T>(z_min[dim] + frac * (z_max[dim] - z_min[dim]));
    Tensor<T> latent = z;
    if (m.cfg.quantization) latent = quantize(z, m.codebook).z;
    auto logits = dense_forward(m.decoder, constant(std::move(latent)));
    out.frames.push_back(sigmoid_values(logits->value));
  }
  return out;
}

}  // namespace qlae
