#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace qlae {

/// Digamma (psi) for positive arguments: upward recurrence into the
/// asymptotic regime, then the Bernoulli-number series. Absolute error is
/// below 1e-12 over the integer arguments the estimators use.
double digamma(double x);

enum class LatentKind { kDiscrete, kContinuous };

/// Paired source/latent observations to evaluate. Discrete latents hold code
/// indices (or any exactly repeating values); continuous latents hold raw
/// encoder outputs.
struct EvalSample {
  int n_s = 0;
  int n_z = 0;
  std::size_t count = 0;
  LatentKind kind = LatentKind::kContinuous;
  std::vector<std::uint8_t> sources;  // count x n_s
  std::vector<float> latents;         // count x n_z

  void validate() const;
  std::vector<int> source_column(int i) const;
  std::vector<double> latent_column(int j) const;
};

/// Directory layout: meta.json {n_s, n_z, count, latent_kind} + sources.u8 +
/// latents.f32, raw row-major little-endian.
void save_eval_sample(const EvalSample& s, const std::filesystem::path& dir);
EvalSample load_eval_sample(const std::filesystem::path& dir);

/// Plug-in entropy of a discrete column, in nats.
double entropy_discrete(const std::vector<int>& col);

/// Plug-in mutual information from the empirical joint distribution, in
/// nats: the KL sum over the contingency table, exactly symmetric and
/// exactly zero for empirically independent columns.
double discrete_mi(const std::vector<int>& a, const std::vector<int>& b);

struct KsgResult {
  double mi = 0;            // clamped below at 0
  std::size_t skipped = 0;  // samples without k usable same-class neighbors
  bool degenerate = false;  // no sample contributed (e.g. constant latents)
};

/**
 * Nearest-neighbor mutual information between a discrete variable and a
 * scalar continuous one: the mean over samples of
 *     psi(N) - psi(N_class) + psi(k) - psi(m)
 * where N_class counts samples sharing the discrete value, d is the distance
 * to the k-th nearest same-class neighbor, and m counts all samples (the
 * query included) strictly within d. Samples whose class has fewer than k+1
 * members, or whose k-th neighbor distance is zero (exact ties), are skipped
 * and reported in `skipped`.
 */
KsgResult ksg_mi_dc(const std::vector<int>& s, const std::vector<double>& z, int k);

/// Active-latent mask: a column is active when its value range is at least
/// 1/8 of the widest column's range. All-constant input yields all-inactive.
std::vector<bool> prune_inactive(const std::vector<double>& latents, std::size_t count, int n_z);

struct NmiReport {
  int n_s = 0;
  int n_z = 0;
  std::vector<double> nmi;   // n_s x n_z, clamped to [0, 1]
  std::vector<bool> active;  // length n_z
  int n_active = 0;
  std::size_t ksg_skipped = 0;
  bool ksg_degenerate = false;

  double at(int i, int j) const { return nmi[static_cast<std::size_t>(i) * n_z + j]; }
};

/// Pairwise normalized mutual information I(s_i; z_j) / H(s_i) for every
/// source/latent pair, with the inactive-latent mask. Discrete latents use
/// the plug-in estimator, continuous ones the nearest-neighbor estimator.
NmiReport nmi_matrix(const EvalSample& sample, int k = 3);

struct RatioAggregate {
  double value = 0;
  std::vector<double> per_element;
  bool degenerate = false;  // single active latent in infoc
};

/// Modularity: mean over active columns of max/sum, mapped from [1/n_s, 1]
/// onto [0, 1]. A zero column contributes the fully ambiguous ratio 1/n_s.
RatioAggregate infom(const NmiReport& report);

/// Compactness: the row-wise analogue over active columns, normalized with
/// the active-latent count. A single active latent returns 1 with a warning.
RatioAggregate infoc(const NmiReport& report);

struct ProbeFit {
  double nll = 0;  // mean in-sample negative log likelihood, nats
  long iterations = 0;
  bool converged = false;
};

/// Unregularized multinomial logistic regression of a discrete source on the
/// given latent columns, optimized by full-batch gradient descent with
/// Armijo backtracking (tolerance 1e-6 on the gradient norm, 1e4 iteration
/// cap). Inputs are standardized internally; that is an affine change the
/// linear function class absorbs.
ProbeFit fit_probe(const std::vector<double>& latents, std::size_t count, int dims,
                   const std::vector<int>& source);

/// Marginal V-entropy of a discrete source under the linear class: the
/// optimal constant-input model predicts the empirical marginal, so this is
/// exactly the plug-in entropy.
double v_entropy_marginal(const std::vector<int>& col);

/// Coefficient of determination of an ordinary-least-squares fit (the
/// continuous-source branch of the explicitness metric).
double linear_probe_r2(const std::vector<double>& latents, std::size_t count, int dims,
                       const std::vector<double>& target);

struct ExplicitnessResult {
  double value = 0;
  std::vector<double> per_source;
};

/// Explicitness: per source, the relative reduction in V-entropy achieved by
/// a linear probe on all active latents jointly, averaged over sources.
ExplicitnessResult infoe(const EvalSample& sample, const std::vector<bool>& active);

/// The aggregate values are the means of their per-element vectors mapped
/// from [1/n, 1] onto [0, 1] (infom, infoc) or the plain mean (infoe).
struct InfoMecResult {
  double infom = 0;
  double infoe = 0;
  double infoc = 0;
  std::vector<double> per_latent_ratios;
  std::vector<double> per_source_ratios;
  std::vector<double> per_source_explicitness;
  int n_active = 0;
  bool infoc_degenerate = false;
  NmiReport report;
};

InfoMecResult infomec(const EvalSample& sample, int k = 3);

}  // namespace qlae
