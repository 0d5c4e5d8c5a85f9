#include "qlae/metrics.hpp"
#include "qlae/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <vector>

using namespace qlae;
namespace fs = std::filesystem;

namespace {

// All joint assignments of the given cardinalities, odometer order.
std::vector<std::vector<int>> factorial_sources(const std::vector<int>& cards) {
  std::size_t n = 1;
  for (int c : cards) n *= static_cast<std::size_t>(c);
  std::vector<std::vector<int>> rows(n, std::vector<int>(cards.size()));
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t rem = r;
    for (int j = static_cast<int>(cards.size()) - 1; j >= 0; --j) {
      rows[r][j] = static_cast<int>(rem % cards[j]);
      rem /= cards[j];
    }
  }
  return rows;
}

EvalSample sample_from(const std::vector<std::vector<int>>& sources,
                       const std::vector<std::vector<double>>& latents, LatentKind kind) {
  EvalSample s;
  s.count = sources.size();
  s.n_s = static_cast<int>(sources.front().size());
  s.n_z = static_cast<int>(latents.front().size());
  s.kind = kind;
  s.sources.resize(s.count * s.n_s);
  s.latents.resize(s.count * s.n_z);
  for (std::size_t r = 0; r < s.count; ++r) {
    for (int j = 0; j < s.n_s; ++j) s.sources[r * s.n_s + j] = static_cast<std::uint8_t>(sources[r][j]);
    for (int j = 0; j < s.n_z; ++j) s.latents[r * s.n_z + j] = static_cast<float>(latents[r][j]);
  }
  return s;
}

// Brute-force mutual information: the KL sum over every cell of the empirical
// contingency table. Independent of the entropy-identity implementation.
double mi_kl_oracle(const std::vector<int>& a, const std::vector<int>& b) {
  const double n = static_cast<double>(a.size());
  std::map<int, double> pa, pb;
  std::map<std::pair<int, int>, double> pab;
  for (std::size_t i = 0; i < a.size(); ++i) {
    pa[a[i]] += 1.0 / n;
    pb[b[i]] += 1.0 / n;
    pab[{a[i], b[i]}] += 1.0 / n;
  }
  double mi = 0;
  for (const auto& [key, pj] : pab) mi += pj * std::log(pj / (pa[key.first] * pb[key.second]));
  return mi;
}

}  // namespace

TEST_CASE("digamma reference values") {
  constexpr double kGamma = 0.57721566490153286;
  CHECK(digamma(1.0) == doctest::Approx(-kGamma).epsilon(1e-13));
  CHECK(digamma(2.0) == doctest::Approx(1.0 - kGamma).epsilon(1e-13));
  CHECK(digamma(0.5) == doctest::Approx(-kGamma - 2.0 * std::log(2.0)).epsilon(1e-13));
  CHECK(digamma(10.0) == doctest::Approx(2.2517525890667211).epsilon(1e-13));
  CHECK(digamma(1000.0) == doctest::Approx(6.9072551956488117).epsilon(1e-13));
  CHECK_THROWS_AS(digamma(0.0), std::invalid_argument);
}

TEST_CASE("plug-in entropy") {
  CHECK(entropy_discrete({0, 1, 2, 3}) == doctest::Approx(std::log(4.0)).epsilon(1e-14));
  CHECK(entropy_discrete({5, 5, 5, 5}) == 0.0);
  // frequencies (1/2, 1/4, 1/4)
  const double expect = -(0.5 * std::log(0.5) + 0.5 * std::log(0.25));
  CHECK(entropy_discrete({0, 0, 1, 2}) == doctest::Approx(expect).epsilon(1e-14));
  CHECK(entropy_discrete({0, 0, 1, 2}) == doctest::Approx(1.0397).epsilon(1e-4));
}

TEST_CASE("discrete mutual information basics") {
  // identical uniform columns: I = H = ln 4
  std::vector<int> a{0, 1, 2, 3, 0, 1, 2, 3};
  CHECK(discrete_mi(a, a) == doctest::Approx(std::log(4.0)).epsilon(1e-14));

  // independent by construction: full factorial
  std::vector<int> u, v;
  for (int i = 0; i < 4; ++i) {
    u.push_back(i % 2);
    v.push_back(i / 2);
  }
  CHECK(discrete_mi(u, v) == 0.0);

  // joint frequencies ((1/4, 1/4), (0, 1/2))
  const std::vector<int> x{0, 0, 1, 1}, y{0, 1, 1, 1};
  const double expect = 0.25 * std::log(2.0) + 0.25 * std::log(2.0 / 3.0) + 0.5 * std::log(4.0 / 3.0);
  CHECK(discrete_mi(x, y) == doctest::Approx(expect).epsilon(1e-14));
  CHECK(discrete_mi(x, y) == doctest::Approx(0.2157).epsilon(1e-3));
}

TEST_CASE("discrete_mi agrees with the brute-force KL oracle") {
  RngStream rng(41, 0);
  for (int trial = 0; trial < 60; ++trial) {
    const int ka = 2 + static_cast<int>(rng.uniform_int(6));
    const int kb = 2 + static_cast<int>(rng.uniform_int(6));
    std::vector<int> a(500), b(500);
    for (int i = 0; i < 500; ++i) {
      a[i] = static_cast<int>(rng.uniform_int(ka));
      // correlate b with a half the time so the table is not near-product
      b[i] = rng.uniform<double>() < 0.5 ? a[i] % kb : static_cast<int>(rng.uniform_int(kb));
    }
    CHECK(std::abs(discrete_mi(a, b) - mi_kl_oracle(a, b)) <= 1e-12);
  }
}

TEST_CASE("discrete_mi is symmetric and relabel-invariant") {
  RngStream rng(43, 0);
  std::vector<int> a(300), b(300);
  for (int i = 0; i < 300; ++i) {
    a[i] = static_cast<int>(rng.uniform_int(5));
    b[i] = (a[i] + static_cast<int>(rng.uniform_int(3))) % 5;
  }
  CHECK(discrete_mi(a, b) == discrete_mi(b, a));

  std::vector<int> relabeled(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) relabeled[i] = 137 - 13 * b[i];  // injective
  CHECK(std::abs(discrete_mi(a, b) - discrete_mi(a, relabeled)) <= 1e-12);
}

TEST_CASE("ksg estimator: separable classes recover the source entropy") {
  RngStream rng(47, 0);
  for (int draw = 0; draw < 3; ++draw) {
    const std::size_t n = 2000;
    std::vector<int> s(n);
    std::vector<double> z(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<int>(rng.uniform_int(4));
      z[i] = s[i] + 0.01 * rng.uniform<double>();
    }
    const KsgResult res = ksg_mi_dc(s, z, 3);
    CHECK(std::abs(res.mi - std::log(4.0)) <= 0.1);
    CHECK(res.skipped == 0);

    // fine-binning oracle: the noise never leaves [s, s+0.01], so flooring
    // reproduces the class exactly and plug-in MI equals H(s)
    std::vector<int> binned(n);
    for (std::size_t i = 0; i < n; ++i) binned[i] = static_cast<int>(std::floor(z[i]));
    CHECK(std::abs(res.mi - discrete_mi(s, binned)) <= 0.1);
  }
}

TEST_CASE("ksg estimator: independence sits inside the null band") {
  RngStream rng(53, 0);
  for (int draw = 0; draw < 3; ++draw) {
    const std::size_t n = 2000;
    std::vector<int> s(n);
    std::vector<double> z(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<int>(rng.uniform_int(2));
      z[i] = rng.uniform<double>();
    }
    CHECK(ksg_mi_dc(s, z, 3).mi <= 0.05);

    // permutation null: shuffling the discrete column must land in the band too
    std::vector<int> shuffled(s);
    const auto perm = rng.draw_choice(n, n, false);
    for (std::size_t i = 0; i < n; ++i) shuffled[i] = s[perm[i]];
    CHECK(ksg_mi_dc(shuffled, z, 3).mi <= 0.05);
  }
}

TEST_CASE("ksg estimator: degenerate and error cases") {
  std::vector<int> s{0, 1, 0, 1, 0, 1, 0, 1, 0, 1};
  std::vector<double> z(10, 0.25);
  const KsgResult res = ksg_mi_dc(s, z, 3);
  CHECK(res.mi == 0.0);
  CHECK(res.degenerate);

  CHECK_THROWS_AS((void)ksg_mi_dc({0, 1, 0}, {0.1, 0.2, 0.3}, 3), std::invalid_argument);

  // classes with fewer than k+1 members are skipped and counted
  std::vector<int> s2{0, 0, 0, 0, 0, 0, 1, 1};
  std::vector<double> z2{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8};
  const KsgResult res2 = ksg_mi_dc(s2, z2, 3);
  CHECK(res2.skipped == 2);
}

TEST_CASE("ksg estimator is exactly invariant to positive rescaling") {
  RngStream rng(59, 0);
  const std::size_t n = 800;
  std::vector<int> s(n);
  std::vector<double> z(n), scaled(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = static_cast<int>(rng.uniform_int(3));
    z[i] = rng.normal<double>() + 0.3 * s[i];
    scaled[i] = 2.0 * z[i];
  }
  CHECK(ksg_mi_dc(s, z, 3).mi == ksg_mi_dc(s, scaled, 3).mi);
}

TEST_CASE("inactive-latent pruning follows the 1/8 range rule") {
  // three columns with ranges 1.0, 0.2, 0.05
  std::vector<double> latents;
  for (int r = 0; r < 2; ++r) {
    latents.push_back(r * 1.0);
    latents.push_back(r * 0.2);
    latents.push_back(r * 0.05);
  }
  const auto mask = prune_inactive(latents, 2, 3);
  CHECK(mask == std::vector<bool>{true, true, false});

  std::vector<double> scaled(latents);
  for (double& v : scaled) v *= 10.0;
  CHECK(prune_inactive(scaled, 2, 3) == mask);

  const std::vector<double> constants(12, 3.0);
  CHECK(prune_inactive(constants, 4, 3) == std::vector<bool>{false, false, false});
}

TEST_CASE("nmi matrix on a permuted identity encoding") {
  const auto rows = factorial_sources({3, 4});
  std::vector<std::vector<double>> latents(rows.size(), std::vector<double>(2));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    latents[r][0] = rows[r][1];  // z_0 = s_1
    latents[r][1] = rows[r][0];  // z_1 = s_0
  }
  const auto rep = nmi_matrix(sample_from(rows, latents, LatentKind::kDiscrete));
  CHECK(rep.n_active == 2);
  CHECK(rep.at(0, 0) == 0.0);
  CHECK(rep.at(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rep.at(1, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rep.at(1, 1) == 0.0);
}

TEST_CASE("nmi matrix flags a mixing latent with two informative entries") {
  const auto rows = factorial_sources({3, 4, 2});
  std::vector<std::vector<double>> latents(rows.size(), std::vector<double>(2));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    latents[r][0] = rows[r][0] * 4 + rows[r][1];  // pair-encodes sources 0 and 1
    latents[r][1] = rows[r][2];
  }
  const auto rep = nmi_matrix(sample_from(rows, latents, LatentKind::kDiscrete));
  CHECK(rep.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rep.at(1, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rep.at(2, 0) == 0.0);
  CHECK(rep.at(2, 1) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("a constant source is an error that names the column") {
  std::vector<std::vector<int>> rows(8, std::vector<int>{0, 0});
  for (int r = 0; r < 8; ++r) rows[r][0] = r % 2;
  std::vector<std::vector<double>> latents(8, std::vector<double>(1));
  for (int r = 0; r < 8; ++r) latents[r][0] = r % 3;
  CHECK_THROWS_WITH_AS((void)nmi_matrix(sample_from(rows, latents, LatentKind::kDiscrete)),
                       doctest::Contains("source 1"), std::invalid_argument);
}

TEST_CASE("modularity ratios") {
  NmiReport rep;
  rep.n_s = 2;
  rep.n_z = 2;
  rep.active = {true, true};
  rep.n_active = 2;

  rep.nmi = {1.0, 0.0, 0.0, 1.0};
  CHECK(infom(rep).value == doctest::Approx(1.0));

  rep.nmi = {0.4, 0.4, 0.4, 0.4};
  CHECK(infom(rep).value == doctest::Approx(0.0));

  rep.nmi = {0.8, 0.1, 0.2, 0.6};
  const auto m = infom(rep);
  CHECK(m.per_element[0] == doctest::Approx(0.8));
  CHECK(m.per_element[1] == doctest::Approx(6.0 / 7.0));
  CHECK(m.value == doctest::Approx((0.5 * (0.8 + 6.0 / 7.0) - 0.5) / 0.5).epsilon(1e-12));
  CHECK(m.value == doctest::Approx(0.657).epsilon(1e-3));

  rep.active = {false, false};
  rep.n_active = 0;
  CHECK_THROWS_AS((void)infom(rep), std::invalid_argument);
}

TEST_CASE("compactness ratios") {
  NmiReport rep;
  rep.n_s = 2;
  rep.n_z = 2;
  rep.active = {true, true};
  rep.n_active = 2;

  rep.nmi = {1.0, 0.0, 0.0, 1.0};
  CHECK(infoc(rep).value == doctest::Approx(1.0));

  rep.nmi = {0.4, 0.4, 0.4, 0.4};
  CHECK(infoc(rep).value == doctest::Approx(0.0));

  rep.nmi = {0.8, 0.1, 0.2, 0.6};
  const auto c = infoc(rep);
  CHECK(c.per_element[0] == doctest::Approx(8.0 / 9.0));
  CHECK(c.per_element[1] == doctest::Approx(0.75));
  CHECK(c.value == doctest::Approx((0.5 * (8.0 / 9.0 + 0.75) - 0.5) / 0.5).epsilon(1e-12));
  CHECK(c.value == doctest::Approx(0.639).epsilon(1e-3));
  CHECK(!c.degenerate);

  // a single active latent is trivially compact
  rep.active = {true, false};
  rep.n_active = 1;
  const auto single = infoc(rep);
  CHECK(single.value == 1.0);
  CHECK(single.degenerate);
}

TEST_CASE("a zero column contributes the fully ambiguous ratio") {
  NmiReport rep;
  rep.n_s = 2;
  rep.n_z = 2;
  rep.active = {true, true};
  rep.n_active = 2;
  rep.nmi = {1.0, 0.0, 0.0, 0.0};  // second column carries nothing
  const auto m = infom(rep);
  CHECK(m.per_element[1] == doctest::Approx(0.5));  // 1/n_s
  CHECK(m.value == doctest::Approx((0.5 * (1.0 + 0.5) - 0.5) / 0.5).epsilon(1e-12));
}

TEST_CASE("linear probes on discrete sources") {
  const auto rows = factorial_sources({4, 4});
  const std::size_t n = rows.size() * 8;

  SUBCASE("one-hot latents separate perfectly") {
    std::vector<double> x(n * 4, 0.0);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = static_cast<int>(i % 4);
      x[i * 4 + y[i]] = 1.0;
    }
    const auto fit = fit_probe(x, n, 4, y);
    CHECK(fit.nll <= 0.01);
  }

  SUBCASE("independent latents approach the marginal entropy") {
    // the in-sample overfit gap scales like (K-1)(d+1)/2N, so N must be
    // large for the 0.01 band
    RngStream rng(61, 0);
    const std::size_t big = 4000;
    std::vector<double> x(big * 3);
    std::vector<int> y(big);
    for (std::size_t i = 0; i < big; ++i) {
      y[i] = static_cast<int>(rng.uniform_int(4));
      for (int j = 0; j < 3; ++j) x[i * 3 + j] = rng.normal<double>();
    }
    const auto fit = fit_probe(x, big, 3, y);
    CHECK(std::abs(fit.nll - entropy_discrete(y)) <= 0.01);
  }

  SUBCASE("a single scalar latent separates a binary source") {
    std::vector<double> x(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = static_cast<int>(i % 2);
      x[i] = 2.0 * y[i] - 1.0;
    }
    const auto fit = fit_probe(x, n, 1, y);
    CHECK(fit.nll <= 0.01);
  }
}

TEST_CASE("marginal V-entropy is the plug-in entropy") {
  CHECK(v_entropy_marginal({0, 1, 2, 3}) == doctest::Approx(std::log(4.0)).epsilon(1e-14));
  CHECK(v_entropy_marginal({2, 2, 2}) == 0.0);
  CHECK(v_entropy_marginal({0, 0, 1, 2}) == doctest::Approx(1.0397).epsilon(1e-4));
}

TEST_CASE("continuous-source branch: R^2 of an exact linear map is one") {
  RngStream rng(67, 0);
  const std::size_t n = 200;
  std::vector<double> x(n * 2), y_exact(n), y_noise(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i * 2] = rng.normal<double>();
    x[i * 2 + 1] = rng.normal<double>();
    y_exact[i] = 2.0 * x[i * 2] - 3.0 * x[i * 2 + 1] + 1.0;
    y_noise[i] = rng.normal<double>();
  }
  CHECK(linear_probe_r2(x, n, 2, y_exact) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(linear_probe_r2(x, n, 2, y_noise) <= 0.1);
  CHECK_THROWS_AS((void)linear_probe_r2(x, n, 2, std::vector<double>(n, 1.0)),
                  std::invalid_argument);
}

TEST_CASE("explicitness across encodings") {
  const auto rows = factorial_sources({4, 4, 3});
  const int n_s = 3;

  SUBCASE("identity encoding is linearly decodable") {
    std::vector<std::vector<double>> latents(rows.size(), std::vector<double>(n_s));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (int j = 0; j < n_s; ++j) latents[r][j] = rows[r][j];
    }
    const auto s = sample_from(rows, latents, LatentKind::kDiscrete);
    const auto e = infoe(s, std::vector<bool>(n_s, true));
    CHECK(e.value >= 0.99);
  }

  SUBCASE("independent latents explain nothing") {
    RngStream rng(71, 0);
    // replicate the factorial so the in-sample overfit term is negligible
    std::vector<std::vector<int>> many;
    for (int rep = 0; rep < 50; ++rep) many.insert(many.end(), rows.begin(), rows.end());
    std::vector<std::vector<double>> latents(many.size(), std::vector<double>(4));
    for (auto& row : latents) {
      for (double& v : row) v = rng.normal<double>();
    }
    const auto s = sample_from(many, latents, LatentKind::kContinuous);
    const auto e = infoe(s, std::vector<bool>(4, true));
    CHECK(e.value <= 0.02);
  }

  SUBCASE("an invertible mix of one-hot sources stays decodable") {
    // one-hot encode all three sources (11 columns), then mix invertibly
    const int d = 4 + 4 + 3;
    RngStream rng(73, 0);
    Tensor<double> mix({static_cast<std::size_t>(d), static_cast<std::size_t>(d)});
    for (std::size_t i = 0; i < mix.numel(); ++i) mix[i] = rng.normal<double>();
    for (int i = 0; i < d; ++i) mix.at(i, i) += 3.0;  // keep it comfortably invertible

    std::vector<std::vector<double>> latents(rows.size(), std::vector<double>(d, 0.0));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      std::vector<double> onehot(d, 0.0);
      onehot[rows[r][0]] = 1.0;
      onehot[4 + rows[r][1]] = 1.0;
      onehot[8 + rows[r][2]] = 1.0;
      for (int c = 0; c < d; ++c) {
        double acc = 0;
        for (int k = 0; k < d; ++k) acc += onehot[k] * mix.at(k, c);
        latents[r][c] = acc;
      }
    }
    const auto s = sample_from(rows, latents, LatentKind::kContinuous);
    const auto e1 = infoe(s, std::vector<bool>(d, true));
    CHECK(e1.value >= 0.99);

    // a second invertible mix changes the numbers by at most 0.01
    auto latents2 = latents;
    for (auto& row : latents2) {
      std::vector<double> mixed(d, 0.0);
      for (int c = 0; c < d; ++c) {
        for (int k = 0; k < d; ++k) mixed[c] += row[k] * ((k == c) ? 2.0 : 0.1);
      }
      row = mixed;
    }
    const auto e2 = infoe(sample_from(rows, latents2, LatentKind::kContinuous),
                          std::vector<bool>(d, true));
    CHECK(std::abs(e1.value - e2.value) <= 0.01);
  }
}

TEST_CASE("infomec corner cases") {
  const auto rows = factorial_sources({4, 4, 3, 3});
  const int n_s = 4;

  SUBCASE("perfect disentanglement") {
    std::vector<std::vector<double>> latents(rows.size(), std::vector<double>(n_s));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (int j = 0; j < n_s; ++j) latents[r][j] = rows[r][j];
    }
    const auto res = infomec(sample_from(rows, latents, LatentKind::kDiscrete));
    CHECK(res.infom == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(res.infoc == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(res.infoe >= 0.99);
    CHECK(res.n_active == n_s);
  }

  SUBCASE("duplicated latents keep modularity but halve compactness") {
    std::vector<std::vector<double>> latents(rows.size(), std::vector<double>(2 * n_s));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (int j = 0; j < n_s; ++j) {
        latents[r][2 * j] = rows[r][j];
        latents[r][2 * j + 1] = rows[r][j];
      }
    }
    const auto res = infomec(sample_from(rows, latents, LatentKind::kDiscrete));
    CHECK(res.infom == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(res.infoc < 1.0);
    CHECK(res.infoc == doctest::Approx((0.5 - 1.0 / 8) / (1.0 - 1.0 / 8)).epsilon(1e-9));
  }

  SUBCASE("fully mixed latents have no modularity") {
    std::vector<std::vector<double>> latents(rows.size(), std::vector<double>(n_s));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const int total = rows[r][0] + rows[r][1] + rows[r][2] + rows[r][3];
      for (int j = 0; j < n_s; ++j) latents[r][j] = total % (j < 2 ? 4 : 3);
    }
    const auto res = infomec(sample_from(rows, latents, LatentKind::kDiscrete));
    CHECK(res.infom <= 0.1);
  }
}

TEST_CASE("eval sample files round trip and validate") {
  const auto dir = fs::temp_directory_path() / "qlae_eval_sample";
  fs::remove_all(dir);
  EvalSample s;
  s.n_s = 2;
  s.n_z = 3;
  s.count = 5;
  s.kind = LatentKind::kContinuous;
  RngStream rng(79, 0);
  for (std::size_t i = 0; i < 10; ++i) s.sources.push_back(static_cast<std::uint8_t>(i % 2));
  for (std::size_t i = 0; i < 15; ++i) s.latents.push_back(rng.uniform<float>());
  save_eval_sample(s, dir);
  const EvalSample t = load_eval_sample(dir);
  CHECK(t.n_s == s.n_s);
  CHECK(t.n_z == s.n_z);
  CHECK(t.kind == s.kind);
  CHECK(t.sources == s.sources);
  CHECK(t.latents == s.latents);

  fs::resize_file(dir / "latents.f32", 11);
  CHECK_THROWS_WITH_AS(load_eval_sample(dir), doctest::Contains("size mismatch"),
                       std::runtime_error);
  fs::remove_all(dir);
}
