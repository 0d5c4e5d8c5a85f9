#include "qlae/metrics.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>

namespace qlae {

using nlohmann::json;

double digamma(double x) {
  if (!(x > 0)) throw std::invalid_argument("digamma: argument must be positive");
  double acc = 0;
  while (x < 10.0) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  // psi(x) ~ ln x - 1/(2x) - sum B_2n / (2n x^2n)
  double series = std::log(x) - 0.5 * inv;
  series -= inv2 * (1.0 / 12 - inv2 * (1.0 / 120 - inv2 * (1.0 / 252 - inv2 * (1.0 / 240 - inv2 * (1.0 / 132)))));
  return acc + series;
}

// ---------------------------------------------------------------------------
// EvalSample
// ---------------------------------------------------------------------------

void EvalSample::validate() const {
  if (n_s < 2) throw std::invalid_argument("EvalSample: need at least 2 sources");
  if (n_z < 1) throw std::invalid_argument("EvalSample: need at least 1 latent");
  if (count < 2) throw std::invalid_argument("EvalSample: need at least 2 rows");
  if (sources.size() != count * static_cast<std::size_t>(n_s)) {
    throw std::invalid_argument("EvalSample: sources size mismatch");
  }
  if (latents.size() != count * static_cast<std::size_t>(n_z)) {
    throw std::invalid_argument("EvalSample: latents size mismatch");
  }
}

std::vector<int> EvalSample::source_column(int i) const {
  std::vector<int> col(count);
  for (std::size_t r = 0; r < count; ++r) col[r] = sources[r * n_s + i];
  return col;
}

std::vector<double> EvalSample::latent_column(int j) const {
  std::vector<double> col(count);
  for (std::size_t r = 0; r < count; ++r) col[r] = latents[r * n_z + j];
  return col;
}

void save_eval_sample(const EvalSample& s, const std::filesystem::path& dir) {
  static_assert(std::endian::native == std::endian::little);
  s.validate();
  std::filesystem::create_directories(dir);
  json meta;
  meta["n_s"] = s.n_s;
  meta["n_z"] = s.n_z;
  meta["count"] = s.count;
  meta["latent_kind"] = s.kind == LatentKind::kDiscrete ? "discrete" : "continuous";
  std::ofstream mf(dir / "meta.json");
  if (!mf) throw std::runtime_error("cannot write meta.json in " + dir.string());
  mf << meta.dump(2) << "\n";
  std::ofstream sf(dir / "sources.u8", std::ios::binary);
  sf.write(reinterpret_cast<const char*>(s.sources.data()),
           static_cast<std::streamsize>(s.sources.size()));
  std::ofstream lf(dir / "latents.f32", std::ios::binary);
  lf.write(reinterpret_cast<const char*>(s.latents.data()),
           static_cast<std::streamsize>(s.latents.size() * sizeof(float)));
  if (!sf || !lf) throw std::runtime_error("failed writing eval sample payloads in " + dir.string());
}

EvalSample load_eval_sample(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "meta.json");
  if (!mf) throw std::runtime_error("missing meta.json in " + dir.string());
  json meta;
  try {
    mf >> meta;
    EvalSample s;
    s.n_s = meta.at("n_s").get<int>();
    s.n_z = meta.at("n_z").get<int>();
    s.count = meta.at("count").get<std::size_t>();
    const std::string kind = meta.at("latent_kind").get<std::string>();
    if (kind == "discrete") s.kind = LatentKind::kDiscrete;
    else if (kind == "continuous") s.kind = LatentKind::kContinuous;
    else throw std::runtime_error("unknown latent_kind: " + kind);

    std::ifstream sf(dir / "sources.u8", std::ios::binary | std::ios::ate);
    if (!sf) throw std::runtime_error("missing sources.u8");
    const std::size_t s_bytes = static_cast<std::size_t>(sf.tellg());
    if (s_bytes != s.count * static_cast<std::size_t>(s.n_s)) {
      throw std::runtime_error("sources.u8 size mismatch");
    }
    s.sources.resize(s_bytes);
    sf.seekg(0);
    sf.read(reinterpret_cast<char*>(s.sources.data()), static_cast<std::streamsize>(s_bytes));

    std::ifstream lf(dir / "latents.f32", std::ios::binary | std::ios::ate);
    if (!lf) throw std::runtime_error("missing latents.f32");
    const std::size_t l_bytes = static_cast<std::size_t>(lf.tellg());
    if (l_bytes != s.count * static_cast<std::size_t>(s.n_z) * sizeof(float)) {
      throw std::runtime_error("latents.f32 size mismatch");
    }
    s.latents.resize(l_bytes / sizeof(float));
    lf.seekg(0);
    lf.read(reinterpret_cast<char*>(s.latents.data()), static_cast<std::streamsize>(l_bytes));
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed eval sample meta.json: " + std::string(e.what()));
  }
}

// ---------------------------------------------------------------------------
// Plug-in estimators
// ---------------------------------------------------------------------------

namespace {

// Distinct values -> dense ids in sorted-value order (deterministic).
std::vector<int> to_ids(const std::vector<int>& col, int* n_values) {
  std::vector<int> sorted(col);
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<int> ids(col.size());
  for (std::size_t i = 0; i < col.size(); ++i) {
    ids[i] = static_cast<int>(
        std::lower_bound(sorted.begin(), sorted.end(), col[i]) - sorted.begin());
  }
  *n_values = static_cast<int>(sorted.size());
  return ids;
}

double entropy_of_counts(const std::vector<std::size_t>& counts, std::size_t n) {
  double h = 0;
  for (std::size_t c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / static_cast<double>(n);
    h -= p * std::log(p);
  }
  return std::max(0.0, h);
}

}  // namespace

double entropy_discrete(const std::vector<int>& col) {
  if (col.empty()) throw std::invalid_argument("entropy_discrete: empty column");
  int k = 0;
  const std::vector<int> ids = to_ids(col, &k);
  std::vector<std::size_t> counts(k, 0);
  for (int id : ids) ++counts[id];
  return entropy_of_counts(counts, col.size());
}

double discrete_mi(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("discrete_mi: length mismatch");
  if (a.size() < 2) throw std::invalid_argument("discrete_mi: need at least 2 rows");
  int ka = 0, kb = 0;
  std::vector<int> ia = to_ids(a, &ka);
  std::vector<int> ib = to_ids(b, &kb);
  // Canonical argument order makes the summation order, and therefore the
  // result, exactly symmetric.
  if (ib < ia) {
    std::swap(ia, ib);
    std::swap(ka, kb);
  }
  const std::size_t n = a.size();
  std::vector<std::size_t> ca(ka, 0), cb(kb, 0), cab(static_cast<std::size_t>(ka) * kb, 0);
  for (std::size_t r = 0; r < n; ++r) {
    ++ca[ia[r]];
    ++cb[ib[r]];
    ++cab[static_cast<std::size_t>(ia[r]) * kb + ib[r]];
  }
  // KL sum over the table in the integer-ratio form: cells of an exactly
  // product table contribute log(1) = 0, so empirical independence yields 0
  // with no floating-point residue.
  double mi = 0;
  for (int i = 0; i < ka; ++i) {
    for (int j = 0; j < kb; ++j) {
      const std::size_t c = cab[static_cast<std::size_t>(i) * kb + j];
      if (c == 0) continue;
      const double num = static_cast<double>(c) * static_cast<double>(n);
      const double den = static_cast<double>(ca[i]) * static_cast<double>(cb[j]);
      mi += (static_cast<double>(c) / static_cast<double>(n)) * std::log(num / den);
    }
  }
  return std::max(0.0, mi);
}

KsgResult ksg_mi_dc(const std::vector<int>& s, const std::vector<double>& z, int k) {
  const std::size_t n = s.size();
  if (z.size() != n) throw std::invalid_argument("ksg_mi_dc: length mismatch");
  if (k < 1) throw std::invalid_argument("ksg_mi_dc: k must be >= 1");
  if (static_cast<std::size_t>(k) >= n) throw std::invalid_argument("ksg_mi_dc: k must be < N");

  KsgResult out;
  int n_classes = 0;
  const std::vector<int> cls = to_ids(s, &n_classes);
  std::vector<std::size_t> class_count(n_classes, 0);
  for (int c : cls) ++class_count[c];

  std::vector<double> all(z);
  std::sort(all.begin(), all.end());
  if (all.front() == all.back()) {
    // Constant latent column carries no information.
    out.skipped = n;
    out.degenerate = true;
    return out;
  }
  std::vector<std::vector<double>> by_class(n_classes);
  for (int c = 0; c < n_classes; ++c) by_class[c].reserve(class_count[c]);
  for (std::size_t i = 0; i < n; ++i) by_class[cls[i]].push_back(z[i]);
  for (auto& v : by_class) std::sort(v.begin(), v.end());

  const double psi_n = digamma(static_cast<double>(n));
  const double psi_k = digamma(static_cast<double>(k));
  double acc = 0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t nc = class_count[cls[i]];
    if (nc < static_cast<std::size_t>(k) + 1) {
      ++out.skipped;
      continue;
    }
    const std::vector<double>& arr = by_class[cls[i]];
    // k-th nearest same-class distance, self excluded: the (k+1)-smallest of
    // the distances to all class members (the smallest is the self 0).
    auto pos = std::lower_bound(arr.begin(), arr.end(), z[i]);
    std::size_t lo = static_cast<std::size_t>(pos - arr.begin());
    std::size_t hi = lo;  // [lo, hi) consumed window
    double d = 0;
    for (int taken = 0; taken <= k; ++taken) {
      const double dl = lo > 0 ? z[i] - arr[lo - 1] : std::numeric_limits<double>::infinity();
      const double dr = hi < arr.size() ? arr[hi] - z[i] : std::numeric_limits<double>::infinity();
      if (dl <= dr) {
        d = dl;
        --lo;
      } else {
        d = dr;
        ++hi;
      }
    }
    if (d == 0) {
      // Exact ties out to the k-th neighbor; no usable scale for this sample.
      ++out.skipped;
      continue;
    }
    // Strictly inside (z_i - d, z_i + d), query point included.
    const auto lo_it = std::upper_bound(all.begin(), all.end(), z[i] - d);
    const auto hi_it = std::lower_bound(all.begin(), all.end(), z[i] + d);
    const std::size_t m = static_cast<std::size_t>(hi_it - lo_it);
    acc += psi_n - digamma(static_cast<double>(nc)) + psi_k - digamma(static_cast<double>(m));
    ++used;
  }
  if (used == 0) {
    out.degenerate = true;
    return out;
  }
  out.mi = std::max(0.0, acc / static_cast<double>(used));
  return out;
}

std::vector<bool> prune_inactive(const std::vector<double>& latents, std::size_t count, int n_z) {
  if (count < 2) throw std::invalid_argument("prune_inactive: need at least 2 rows");
  if (latents.size() != count * static_cast<std::size_t>(n_z)) {
    throw std::invalid_argument("prune_inactive: size mismatch");
  }
  std::vector<double> range(n_z, 0);
  for (int j = 0; j < n_z; ++j) {
    double lo = latents[j], hi = latents[j];
    for (std::size_t r = 1; r < count; ++r) {
      const double v = latents[r * n_z + j];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    range[j] = hi - lo;
  }
  const double max_range = *std::max_element(range.begin(), range.end());
  std::vector<bool> mask(n_z, false);
  if (max_range == 0) return mask;
  for (int j = 0; j < n_z; ++j) mask[j] = range[j] >= max_range / 8.0;
  return mask;
}

// ---------------------------------------------------------------------------
// NMI matrix and the ratio metrics
// ---------------------------------------------------------------------------

NmiReport nmi_matrix(const EvalSample& sample, int k) {
  sample.validate();
  NmiReport rep;
  rep.n_s = sample.n_s;
  rep.n_z = sample.n_z;
  rep.nmi.assign(static_cast<std::size_t>(sample.n_s) * sample.n_z, 0.0);

  std::vector<double> all_latents(sample.latents.begin(), sample.latents.end());
  rep.active = prune_inactive(all_latents, sample.count, sample.n_z);
  rep.n_active = static_cast<int>(std::count(rep.active.begin(), rep.active.end(), true));

  std::vector<std::vector<int>> sources(sample.n_s);
  std::vector<double> source_entropy(sample.n_s);
  for (int i = 0; i < sample.n_s; ++i) {
    sources[i] = sample.source_column(i);
    source_entropy[i] = entropy_discrete(sources[i]);
    if (source_entropy[i] == 0) {
      throw std::invalid_argument("nmi_matrix: source " + std::to_string(i) +
                                  " is constant in the sample; a constant source cannot be "
                                  "disentangled");
    }
  }

  for (int j = 0; j < sample.n_z; ++j) {
    if (sample.kind == LatentKind::kDiscrete) {
      // Exactly repeating latent values become categorical codes.
      const std::vector<double> col = sample.latent_column(j);
      std::vector<double> sorted(col);
      std::sort(sorted.begin(), sorted.end());
      sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
      std::vector<int> codes(sample.count);
      for (std::size_t r = 0; r < sample.count; ++r) {
        codes[r] = static_cast<int>(
            std::lower_bound(sorted.begin(), sorted.end(), col[r]) - sorted.begin());
      }
      for (int i = 0; i < sample.n_s; ++i) {
        const double v = discrete_mi(sources[i], codes) / source_entropy[i];
        rep.nmi[static_cast<std::size_t>(i) * sample.n_z + j] = std::clamp(v, 0.0, 1.0);
      }
    } else {
      const std::vector<double> col = sample.latent_column(j);
      for (int i = 0; i < sample.n_s; ++i) {
        const KsgResult r = ksg_mi_dc(sources[i], col, k);
        rep.ksg_skipped += r.skipped;
        rep.ksg_degenerate = rep.ksg_degenerate || r.degenerate;
        const double v = r.mi / source_entropy[i];
        rep.nmi[static_cast<std::size_t>(i) * sample.n_z + j] = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return rep;
}

RatioAggregate infom(const NmiReport& report) {
  if (report.n_s < 2) throw std::invalid_argument("infom: need at least 2 sources");
  if (report.n_active < 1) throw std::invalid_argument("infom: no active latents");
  RatioAggregate out;
  const double ambiguous = 1.0 / report.n_s;
  for (int j = 0; j < report.n_z; ++j) {
    if (!report.active[j]) continue;
    double best = 0, total = 0;
    for (int i = 0; i < report.n_s; ++i) {
      const double v = report.at(i, j);
      best = std::max(best, v);
      total += v;
    }
    out.per_element.push_back(total > 0 ? best / total : ambiguous);
  }
  double mean = 0;
  for (double r : out.per_element) mean += r;
  mean /= static_cast<double>(out.per_element.size());
  out.value = std::clamp((mean - ambiguous) / (1.0 - ambiguous), 0.0, 1.0);
  return out;
}

RatioAggregate infoc(const NmiReport& report) {
  if (report.n_s < 2) throw std::invalid_argument("infoc: need at least 2 sources");
  if (report.n_active < 1) throw std::invalid_argument("infoc: no active latents");
  RatioAggregate out;
  if (report.n_active == 1) {
    // Normalization degenerates; a single latent is trivially compact.
    out.value = 1.0;
    out.per_element.assign(report.n_s, 1.0);
    out.degenerate = true;
    return out;
  }
  const double ambiguous = 1.0 / report.n_active;
  for (int i = 0; i < report.n_s; ++i) {
    double best = 0, total = 0;
    for (int j = 0; j < report.n_z; ++j) {
      if (!report.active[j]) continue;
      const double v = report.at(i, j);
      best = std::max(best, v);
      total += v;
    }
    out.per_element.push_back(total > 0 ? best / total : ambiguous);
  }
  double mean = 0;
  for (double r : out.per_element) mean += r;
  mean /= static_cast<double>(report.n_s);
  out.value = std::clamp((mean - ambiguous) / (1.0 - ambiguous), 0.0, 1.0);
  return out;
}

// ---------------------------------------------------------------------------
// Linear probes
// ---------------------------------------------------------------------------

namespace {

using Matrix = Eigen::MatrixXd;
using EVector = Eigen::VectorXd;

double probe_nll(const Matrix& x, const std::vector<int>& y, const Matrix& w, const EVector& b) {
  // logits: n x k
  Matrix logits = x * w.transpose();
  logits.rowwise() += b.transpose();
  double nll = 0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    double lse = 0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) lse += std::exp(logits(r, c) - mx);
    nll += std::log(lse) + mx - logits(r, y[static_cast<std::size_t>(r)]);
  }
  return nll / static_cast<double>(logits.rows());
}

}  // namespace

ProbeFit fit_probe(const std::vector<double>& latents, std::size_t count, int dims,
                   const std::vector<int>& source) {
  if (count < 2 || dims < 1) throw std::invalid_argument("fit_probe: bad shape");
  if (latents.size() != count * static_cast<std::size_t>(dims) || source.size() != count) {
    throw std::invalid_argument("fit_probe: size mismatch");
  }
  int n_classes = 0;
  const std::vector<int> y = to_ids(source, &n_classes);
  ProbeFit fit;
  if (n_classes == 1) {
    fit.converged = true;
    return fit;  // single class: zero NLL with the trivial predictor
  }

  Matrix x(count, dims);
  for (std::size_t r = 0; r < count; ++r) {
    for (int c = 0; c < dims; ++c) x(static_cast<Eigen::Index>(r), c) = latents[r * dims + c];
  }
  // Standardize columns; constant columns zero out. Affine reparameterization
  // leaves the achievable NLL unchanged but conditions the descent.
  for (int c = 0; c < dims; ++c) {
    const double mean = x.col(c).mean();
    x.col(c).array() -= mean;
    const double sd = std::sqrt(x.col(c).squaredNorm() / static_cast<double>(count));
    if (sd > 0) x.col(c) /= sd;
    else x.col(c).setZero();
  }

  Matrix w = Matrix::Zero(n_classes, dims);
  EVector b = EVector::Zero(n_classes);
  double f = probe_nll(x, y, w, b);
  constexpr double kGradTol = 1e-6;
  constexpr long kMaxIters = 10000;
  constexpr double kArmijo = 1e-4;
  double eta = 1.0;

  Matrix probs(count, n_classes);
  for (fit.iterations = 0; fit.iterations < kMaxIters; ++fit.iterations) {
    // Gradient of the mean NLL.
    Matrix logits = x * w.transpose();
    logits.rowwise() += b.transpose();
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      const double mx = logits.row(r).maxCoeff();
      double lse = 0;
      for (Eigen::Index c = 0; c < logits.cols(); ++c) {
        probs(r, c) = std::exp(logits(r, c) - mx);
        lse += probs(r, c);
      }
      probs.row(r) /= lse;
      probs(r, y[static_cast<std::size_t>(r)]) -= 1.0;
    }
    probs /= static_cast<double>(count);
    Matrix gw = probs.transpose() * x;
    EVector gb = probs.colwise().sum().transpose();
    const double gnorm2 = gw.squaredNorm() + gb.squaredNorm();
    if (std::sqrt(gnorm2) <= kGradTol) {
      fit.converged = true;
      break;
    }
    // Backtracking with re-growth so separable problems keep accelerating.
    eta = std::min(eta * 2.0, 1e12);
    bool accepted = false;
    for (int halvings = 0; halvings < 80; ++halvings) {
      const Matrix w_try = w - eta * gw;
      const EVector b_try = b - eta * gb;
      const double f_try = probe_nll(x, y, w_try, b_try);
      if (f_try <= f - kArmijo * eta * gnorm2) {
        w = w_try;
        b = b_try;
        f = f_try;
        accepted = true;
        break;
      }
      eta *= 0.5;
    }
    if (!accepted) break;  // no acceptable step at machine precision
  }
  fit.nll = f;
  return fit;
}

double v_entropy_marginal(const std::vector<int>& col) { return entropy_discrete(col); }

double linear_probe_r2(const std::vector<double>& latents, std::size_t count, int dims,
                       const std::vector<double>& target) {
  if (latents.size() != count * static_cast<std::size_t>(dims) || target.size() != count) {
    throw std::invalid_argument("linear_probe_r2: size mismatch");
  }
  Matrix x(count, dims + 1);
  EVector y(count);
  for (std::size_t r = 0; r < count; ++r) {
    for (int c = 0; c < dims; ++c) x(static_cast<Eigen::Index>(r), c) = latents[r * dims + c];
    x(static_cast<Eigen::Index>(r), dims) = 1.0;
    y(static_cast<Eigen::Index>(r)) = target[r];
  }
  const double mean = y.mean();
  const double ss_tot = (y.array() - mean).square().sum();
  if (ss_tot == 0) throw std::invalid_argument("linear_probe_r2: constant target");
  const EVector beta = x.colPivHouseholderQr().solve(y);
  const double ss_res = (y - x * beta).squaredNorm();
  return std::clamp(1.0 - ss_res / ss_tot, 0.0, 1.0);
}

ExplicitnessResult infoe(const EvalSample& sample, const std::vector<bool>& active) {
  sample.validate();
  const int n_active = static_cast<int>(std::count(active.begin(), active.end(), true));
  if (n_active < 1) throw std::invalid_argument("infoe: no active latents");

  std::vector<double> x(sample.count * static_cast<std::size_t>(n_active));
  for (std::size_t r = 0; r < sample.count; ++r) {
    int c = 0;
    for (int j = 0; j < sample.n_z; ++j) {
      if (!active[j]) continue;
      x[r * n_active + c] = sample.latents[r * sample.n_z + j];
      ++c;
    }
  }
  ExplicitnessResult out;
  for (int i = 0; i < sample.n_s; ++i) {
    const std::vector<int> s = sample.source_column(i);
    const double h = v_entropy_marginal(s);
    if (h == 0) {
      throw std::invalid_argument("infoe: source " + std::to_string(i) +
                                  " is constant in the sample");
    }
    const ProbeFit fit = fit_probe(x, sample.count, n_active, s);
    out.per_source.push_back(std::clamp((h - fit.nll) / h, 0.0, 1.0));
  }
  double mean = 0;
  for (double v : out.per_source) mean += v;
  out.value = mean / static_cast<double>(sample.n_s);
  return out;
}

InfoMecResult infomec(const EvalSample& sample, int k) {
  InfoMecResult out;
  out.report = nmi_matrix(sample, k);
  const RatioAggregate m = infom(out.report);
  const RatioAggregate c = infoc(out.report);
  const ExplicitnessResult e = infoe(sample, out.report.active);
  out.infom = m.value;
  out.infoc = c.value;
  out.infoe = e.value;
  out.per_latent_ratios = m.per_element;
  out.per_source_ratios = c.per_element;
  out.per_source_explicitness = e.per_source;
  out.n_active = out.report.n_active;
  out.infoc_degenerate = c.degenerate;
  return out;
}

}  // namespace qlae
