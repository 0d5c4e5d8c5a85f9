#include "qlae/codebook.hpp"
#include "qlae/rng.hpp"
#include "qlae/optimizer.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <vector>

using namespace qlae;
using qlae::testing::fd_gradient;
using qlae::testing::max_rel_error;

namespace {

// Exhaustive search over the full Cartesian code set under the joint L1
// objective. Independent of the elementwise implementation; the two coincide
// because the objective separates over dimensions.
std::vector<int> joint_argmin_l1(const Tensor<double>& z_c, const CodebookArray<double>& cb) {
  const int n_z = cb.n_z, n_v = cb.n_v;
  std::vector<int> combo(n_z, 0), best(n_z, 0);
  double best_cost = std::numeric_limits<double>::infinity();
  for (;;) {
    double cost = 0;
    for (int j = 0; j < n_z; ++j) cost += std::abs(z_c[j] - cb.entry(j, combo[j]));
    if (cost < best_cost) {
      best_cost = cost;
      best = combo;
    }
    int j = n_z - 1;
    while (j >= 0 && ++combo[j] == n_v) combo[j--] = 0;
    if (j < 0) break;
  }
  return best;
}

}  // namespace

TEST_CASE("codebooks initialize to the inclusive linspace") {
  const auto cb10 = init_codebooks<double>(3, 10, CodebookMode::kPerDimension);
  for (int j = 0; j < 3; ++j) {
    CHECK(cb10.entry(j, 0) == doctest::Approx(-0.5));
    CHECK(cb10.entry(j, 9) == doctest::Approx(0.5));
    for (int k = 0; k + 1 < 10; ++k) {
      CHECK(cb10.entry(j, k + 1) - cb10.entry(j, k) == doctest::Approx(1.0 / 9));
    }
  }
  CHECK(cb10.entry(0, 1) == doctest::Approx(-0.5 + 1.0 / 9));

  const auto cb2 = init_codebooks<double>(2, 2, CodebookMode::kPerDimension);
  CHECK(cb2.entry(0, 0) == -0.5);
  CHECK(cb2.entry(0, 1) == 0.5);
  const auto cb3 = init_codebooks<double>(2, 3, CodebookMode::kPerDimension);
  CHECK(cb3.entry(1, 1) == doctest::Approx(0.0));

  const auto global = init_codebooks<double>(5, 4, CodebookMode::kGlobal);
  CHECK(global.values->value.rows() == 1);
  CHECK(global.entry(4, 3) == doctest::Approx(0.5));
}

TEST_CASE("quantize picks the nearest value with ties toward the smaller index") {
  CodebookArray<double> cb;
  cb.values = parameter(Tensor<double>({1, 3}, {-0.5, 0.0, 0.5}));
  cb.n_z = 1;
  cb.n_v = 3;

  auto q = quantize(Tensor<double>({1}, {0.3}), cb);
  CHECK(q.indices[0] == 2);
  CHECK(q.z[0] == 0.5);

  // exactly equidistant between 0.0 and 0.5
  q = quantize(Tensor<double>({1}, {0.25}), cb);
  CHECK(q.indices[0] == 1);
  CHECK(q.z[0] == 0.0);

  CHECK_THROWS_AS((void)quantize(Tensor<double>({1}, {std::nan("")}), cb),
                  std::invalid_argument);
}

TEST_CASE("elementwise quantization equals the brute-force joint argmin") {
  RngStream rng(17, 0);
  for (int trial = 0; trial < 25; ++trial) {
    auto cb = init_codebooks<double>(4, 10, CodebookMode::kPerDimension);
    // perturb the codebooks so rows differ
    for (std::size_t i = 0; i < cb.values->value.numel(); ++i) {
      cb.values->value[i] += 0.05 * rng.normal<double>();
    }
    const Tensor<double> z_c = rng.draw_normal<double>({4});
    const auto fast = quantize(z_c, cb);
    const auto brute = joint_argmin_l1(z_c, cb);
    for (int j = 0; j < 4; ++j) CHECK(fast.indices[j] == brute[j]);
  }
}

TEST_CASE("quantization is idempotent and in-codebook") {
  RngStream rng(18, 0);
  const auto cb = init_codebooks<double>(6, 7, CodebookMode::kPerDimension);
  const Tensor<double> z_c = rng.draw_normal<double>({6});
  const auto q1 = quantize(z_c, cb);
  const auto q2 = quantize(q1.z, cb);
  for (int j = 0; j < 6; ++j) {
    CHECK(q2.indices[j] == q1.indices[j]);
    CHECK(q2.z[j] == q1.z[j]);
    bool member = false;
    for (int k = 0; k < 7; ++k) member = member || cb.entry(j, k) == q1.z[j];
    CHECK(member);
  }
}

TEST_CASE("small perturbations below the decision boundary keep the code") {
  const auto cb = init_codebooks<double>(1, 10, CodebookMode::kPerDimension);
  Tensor<double> z({1}, {0.13});
  const auto base = quantize(z, cb);
  // gap to the nearest decision boundary
  const double code = base.z[0];
  const double spacing = 1.0 / 9;
  const double boundary_gap = spacing / 2 - std::abs(z[0] - code);
  for (double f : {-0.9, -0.5, 0.5, 0.9}) {
    Tensor<double> p({1}, {z[0] + f * boundary_gap});
    CHECK(quantize(p, cb).indices[0] == base.indices[0]);
  }
}

TEST_CASE("codebook loss values match the arithmetic") {
  auto z_c = parameter(Tensor<double>({1}, {0.3}));
  auto z = constant(Tensor<double>({1}, {0.5}));
  auto losses = codebook_losses(z_c, z);
  CHECK(losses.quantize_loss->value[0] == doctest::Approx(0.04));
  CHECK(losses.commit_loss->value[0] == doctest::Approx(0.04));

  auto same = codebook_losses(z_c, stop_gradient(z_c));
  CHECK(same.quantize_loss->value[0] == 0.0);
  CHECK(same.commit_loss->value[0] == 0.0);
}

TEST_CASE("gradient routing: quantize loss trains codes, commit loss trains the encoder") {
  // d(loss_quantize)/dv at v = 0.5, z_c = 0.3 is 2(0.5 - 0.3) = 0.4 and the
  // same branch sends nothing to z_c; checked against finite differences with
  // the opposing stop-gradient active.
  Tensor<double> v_val({1, 1}, {0.5});
  Tensor<double> zc_val({1}, {0.3});

  auto build = [&](const Tensor<double>& vv, const Tensor<double>& zz) {
    CodebookArray<double> cb;
    cb.values = parameter(Tensor<double>(vv));
    cb.n_z = 1;
    cb.n_v = 1;
    auto z_c = parameter(Tensor<double>(zz));
    auto zq = gather_codes(cb, {0}, {1});
    auto losses = codebook_losses(z_c, zq);
    return std::tuple{cb.values, z_c, losses};
  };

  {
    auto [v, z_c, losses] = build(v_val, zc_val);
    auto grads = forward_backward(losses.quantize_loss);
    CHECK(grads.at(v.get())[0] == doctest::Approx(0.4));
    CHECK(grads.at(z_c.get())[0] == 0.0);  // the stop-gradient blocks this branch
    auto fd = fd_gradient(
        [&] { return std::get<2>(build(v_val, zc_val)).quantize_loss->value[0]; }, v_val);
    CHECK(fd[0] == doctest::Approx(0.4).epsilon(1e-6));
  }
  {
    auto [v, z_c, losses] = build(v_val, zc_val);
    auto grads = forward_backward(losses.commit_loss);
    CHECK(grads.at(z_c.get())[0] == doctest::Approx(-0.4));
    CHECK(grads.at(v.get())[0] == 0.0);
    auto fd = fd_gradient(
        [&] { return std::get<2>(build(v_val, zc_val)).commit_loss->value[0]; }, zc_val);
    CHECK(fd[0] == doctest::Approx(-0.4).epsilon(1e-6));
  }
}

TEST_CASE("summed losses keep the branches independent") {
  // Zeroing one branch leaves the other branch's gradient unchanged.
  auto run = [](double lambda_q, double lambda_c) {
    CodebookArray<double> cb;
    cb.values = parameter(Tensor<double>({2, 2}, {-0.1, 0.45, -0.3, 0.2}));
    cb.n_z = 2;
    cb.n_v = 2;
    auto z_c = parameter(Tensor<double>({2}, {0.3, -0.2}));
    auto q = quantize(z_c->value, cb);
    auto zq = gather_codes(cb, q.indices, {2});
    auto losses = codebook_losses(z_c, zq);
    auto total = add(scale(losses.quantize_loss, lambda_q), scale(losses.commit_loss, lambda_c));
    auto grads = forward_backward(total);
    return std::pair{grads.at(cb.values.get()), grads.at(z_c.get())};
  };
  const auto both = run(1.0, 1.0);
  const auto only_q = run(1.0, 0.0);
  const auto only_c = run(0.0, 1.0);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(both.first[i] == only_q.first[i]);    // codebook grad comes from L_quantize alone
    CHECK(both.second[i] == only_c.second[i]);  // encoder grad comes from L_commit alone
    CHECK(only_c.first[i] == 0.0);
    CHECK(only_q.second[i] == 0.0);
  }
}

TEST_CASE("gather_codes scatters gradients into the selected entries") {
  auto cb = init_codebooks<double>(2, 3, CodebookMode::kPerDimension);
  Tensor<double> v_val = cb.values->value;
  auto build = [&](const Tensor<double>& vv) {
    CodebookArray<double> c2 = cb;
    c2.values = parameter(Tensor<double>(vv));
    auto g = gather_codes(c2, {0, 2, 0, 1}, {2, 2});
    return std::pair{c2.values, sum(mul(g, g))};
  };
  auto [v, root] = build(v_val);
  auto grads = forward_backward(root);
  auto fd = fd_gradient([&] { return build(v_val).second->value[0]; }, v_val);
  CHECK(max_rel_error(grads.at(v.get()), fd) <= 1e-6);
}

TEST_CASE("global mode rows stay identical under optimizer updates") {
  auto cb = init_codebooks<float>(4, 5, CodebookMode::kGlobal);
  GroupedAdamW<float> opt(0.05f, 0.9f, 0.99f, 1e-8f);
  opt.add_parameter(cb.values, 0.0f);
  RngStream rng(23, 0);
  for (int step = 0; step < 50; ++step) {
    std::vector<int> idx(8);
    for (auto& i : idx) i = static_cast<int>(rng.uniform_int(5));
    auto g = gather_codes(cb, idx, {2, 4});
    auto grads = forward_backward(sum(mul(g, g)));
    opt.step(grads);
  }
  // one stored row, so every dimension reads the same values
  for (int j = 0; j < 4; ++j) {
    for (int k = 0; k < 5; ++k) CHECK(cb.entry(j, k) == cb.entry(0, k));
  }
  // and the row did move
  bool moved = false;
  for (int k = 0; k < 5; ++k) moved = moved || cb.entry(0, k) != init_codebooks<float>(4, 5, CodebookMode::kGlobal).entry(0, k);
  CHECK(moved);
}

TEST_CASE("straight-through output is bit-identical to the quantized code") {
  RngStream rng(29, 0);
  auto cb = init_codebooks<float>(3, 10, CodebookMode::kPerDimension);
  auto z_c = parameter(rng.draw_normal<float>({5, 3}));
  auto q = quantize(z_c->value, cb);
  auto zq = gather_codes(cb, q.indices, {5, 3});
  auto st = straight_through(z_c, zq);
  for (std::size_t i = 0; i < st->value.numel(); ++i) CHECK(st->value[i] == q.z[i]);
}
