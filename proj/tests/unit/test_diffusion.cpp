// Copyright (C) 2026 The causalvid authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "causalvid/diffusion.hpp"
#include "causalvid/error.hpp"
#include "doctest.h"
#include "gradcheck.hpp"

using namespace cvs;
using namespace cvs::diffusion;
using ag::Tensor;
using cvs::testing::gradcheck;
using cvs::testing::random_const;
using cvs::testing::random_param;

namespace {
template <class F>
void expect_kind(ErrorKind kind, F&& f) {
  try {
    f();
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == kind);
  }
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.at(i) - b.at(i)));
  return m;
}
}  // namespace

TEST_CASE("linear schedule products match a long-double oracle") {
  NoiseSchedule s;
  CHECK(s.steps() == 1000);
  CHECK(s.beta(1) == doctest::Approx(1e-4));
  CHECK(s.beta(1000) == doctest::Approx(0.02));
  CHECK(s.alpha_bar(0) == 1.0);
  long double prod = 1.0L;
  for (int k = 1; k <= 1000; ++k) {
    const long double beta = 1e-4L + (0.02L - 1e-4L) * (k - 1) / 999.0L;
    prod *= 1.0L - beta;
    CHECK(std::abs(s.alpha_bar(k) - static_cast<double>(prod)) / static_cast<double>(prod) < 1e-12);
    CHECK(s.alpha(k) == doctest::Approx(1.0 - s.beta(k)));
    CHECK(s.alpha_bar(k) < s.alpha_bar(k - 1));
    CHECK(s.alpha_bar(k) > 0.0);
  }
  expect_kind(ErrorKind::Range, [&] { s.beta(0); });
  expect_kind(ErrorKind::Range, [&] { s.alpha_bar(1001); });
}

TEST_CASE("other schedule kinds stay valid") {
  for (const char* name : {"linear", "scaled_linear", "cosine"}) {
    ScheduleConfig c;
    c.kind = parse_schedule_kind(name);
    CHECK(to_string(c.kind) == name);
    NoiseSchedule s(c);
    for (int k = 1; k <= s.steps(); ++k) {
      CHECK(s.alpha_bar(k) < s.alpha_bar(k - 1));
      CHECK(s.alpha_bar(k) > 0.0);
    }
  }
  expect_kind(ErrorKind::Config, [] { parse_schedule_kind("sigmoid"); });
}

TEST_CASE("forward noise closed forms") {
  NoiseSchedule s;
  auto z0 = random_const({2, 3, 4, 4}, 1);
  auto e = random_const({2, 3, 4, 4}, 2);
  auto zeros = Tensor::zeros(z0.shape());
  for (int k : {1, 17, 500, 1000}) {
    auto a = forward_noise(z0, zeros, k, s);
    auto b = forward_noise(zeros, e, k, s);
    for (std::int64_t i = 0; i < z0.numel(); ++i) {
      CHECK(a.at(i) == std::sqrt(s.alpha_bar(k)) * z0.at(i));
      CHECK(b.at(i) == std::sqrt(1.0 - s.alpha_bar(k)) * e.at(i));
    }
  }
  long double prod = 1.0L;
  for (int k = 1; k <= 1000; ++k) prod *= 1.0L - (1e-4L + (0.02L - 1e-4L) * (k - 1) / 999.0L);
  auto ones = forward_noise(Tensor::full({2, 2}, 1.0), Tensor::zeros({2, 2}), 1000, s);
  CHECK(ones.at(0) == doctest::Approx(std::sqrt(static_cast<double>(prod))).epsilon(1e-12));
  expect_kind(ErrorKind::Range, [&] { forward_noise(z0, e, 0, s); });
  expect_kind(ErrorKind::Contract, [&] { forward_noise(z0, Tensor::zeros({2}), 3, s); });
}

TEST_CASE("forward noise variance") {
  NoiseSchedule s;
  Rng rng(3);
  const int k = 300;
  auto e = sample_noise({10000}, rng);
  auto z = forward_noise(Tensor::zeros({10000}), e, k, s);
  double m = 0.0, v = 0.0;
  for (double x : z.values()) m += x / 1e4;
  for (double x : z.values()) v += (x - m) * (x - m) / (1e4 - 1);
  CHECK(std::abs(v / (1.0 - s.alpha_bar(k)) - 1.0) < 0.05);
}

TEST_CASE("deterministic chain with the true noise recovers z0") {
  NoiseSchedule s;
  Rng rng(4);
  auto z0 = random_const({2, 3, 4, 4}, 5);
  auto e = random_const({2, 3, 4, 4}, 6);
  auto ts = ddim_timesteps(1000, 50);
  CHECK(ts.front() == 1000);
  CHECK(ts.back() == 0);
  CHECK(ts.size() == 51);
  auto z = forward_noise(z0, e, 1000, s);
  for (std::size_t i = 0; i + 1 < ts.size(); ++i) z = ddim_step(z, ts[i], ts[i + 1], e, s, 0.0, rng);
  CHECK(max_abs_diff(z, z0) < 1e-4);

  // Single-step schedule: exact algebraic inversion.
  ScheduleConfig one;
  one.steps = 1;
  one.beta_start = one.beta_end = 0.3;
  NoiseSchedule s1(one);
  auto z1 = forward_noise(z0, e, 1, s1);
  CHECK(max_abs_diff(reverse_step(z1, 1, e, s1, 0.0, rng), z0) < 1e-6);
}

TEST_CASE("sampler determinism and variance family") {
  NoiseSchedule s;
  auto z = random_const({3, 4}, 7);
  auto eh = random_const({3, 4}, 8);
  Rng a(9), b(9);
  CHECK(ddim_step(z, 40, 20, eh, s, 0.0, a).values() == ddim_step(z, 40, 20, eh, s, 0.0, b).values());
  CHECK(ddim_sigma(s, 40, 20, 0.0) == 0.0);
  // eta = 1 on adjacent steps gives the DDPM posterior variance.
  for (int k : {2, 10, 700}) {
    const double post = (1.0 - s.alpha_bar(k - 1)) / (1.0 - s.alpha_bar(k)) * s.beta(k);
    CHECK(ddim_sigma(s, k, k - 1, 1.0) * ddim_sigma(s, k, k - 1, 1.0) ==
          doctest::Approx(post).epsilon(1e-12));
  }
  // Stochastic step: sample spread around the mean equals sigma.
  Rng r(10);
  auto zz = Tensor::zeros({20000});
  auto e0 = Tensor::zeros({20000});
  auto mean = ddim_step(zz, 500, 499, e0, s, 0.0, r);
  auto out = ddim_step(zz, 500, 499, e0, s, 1.0, r);
  double v = 0.0;
  for (std::int64_t i = 0; i < out.numel(); ++i) v += std::pow(out.at(i) - mean.at(i), 2) / 20000;
  const double sig = ddim_sigma(s, 500, 499, 1.0);
  CHECK(std::abs(v / (sig * sig) - 1.0) < 0.05);
  Rng q(1);
  expect_kind(ErrorKind::Range, [&] { reverse_step(z, 0, eh, s, 0.0, q); });
  expect_kind(ErrorKind::Config, [&] { ddim_step(z, 4, 2, eh, s, 1.5, q); });
  expect_kind(ErrorKind::Range, [&] { ddim_step(z, 4, 4, eh, s, 0.0, q); });
}

TEST_CASE("timestep sequences") {
  CHECK(ddim_timesteps(10, 5) == std::vector<int>{10, 8, 6, 4, 2, 0});
  CHECK(ddim_timesteps_from(0, 1000, 20) == std::vector<int>{0});
  auto part = ddim_timesteps_from(600, 1000, 50);
  CHECK(part.front() == 600);
  CHECK(part.back() == 0);
  for (std::size_t i = 1; i < part.size(); ++i) CHECK(part[i] < part[i - 1]);
  CHECK(ddim_timesteps(3, 10) == std::vector<int>{3, 2, 1, 0});
}

TEST_CASE("mse loss") {
  auto x = random_const({4, 5}, 11);
  CHECK(loss_mse(x, x).item() == 0.0);
  CHECK(loss_mse(Tensor::full({3, 3}, 1.0), Tensor::zeros({3, 3})).item() == 1.0);
  auto y = random_const({4, 5}, 12);
  double acc = 0.0;
  for (std::int64_t i = 0; i < x.numel(); ++i) acc += (x.at(i) - y.at(i)) * (x.at(i) - y.at(i));
  CHECK(loss_mse(x, y).item() == doctest::Approx(acc / x.numel()).epsilon(1e-10));
  expect_kind(ErrorKind::Contract, [&] { loss_mse(x, Tensor::zeros({5, 4})); });
}

TEST_CASE("negative similarity loss") {
  auto x = random_const({2, 3, 4}, 13);
  auto y = random_const({2, 3, 4}, 14);
  CHECK(std::abs(loss_ns(x, x).item()) < 1e-10);
  CHECK(std::abs(loss_ns(x, ag::scale(x, -1.0)).item() - 2.0) < 1e-10);
  auto e1 = Tensor::constant({4}, {1, 0, 0, 0}), e2 = Tensor::constant({4}, {0, 0, 3, 0});
  CHECK(loss_ns(e1, e2).item() == doctest::Approx(1.0));
  CHECK(loss_ns(x, y).item() == doctest::Approx(loss_ns(y, x).item()).epsilon(1e-12));
  CHECK(std::abs(loss_ns(ag::scale(x, 2.5), ag::scale(y, 0.1)).item() - loss_ns(x, y).item()) < 1e-10);
  const double v = loss_ns(x, y).item();
  CHECK(v >= 0.0);
  CHECK(v <= 2.0);
  // Batched: mean of per-item values.
  auto row = [](const Tensor& t, std::int64_t i) {
    const std::vector<std::int64_t> idx{i};
    return ag::gather_rows(ag::reshape(t, {2, 12}), idx);
  };
  auto x0 = row(x, 0), x1 = row(x, 1), y0 = row(y, 0), y1 = row(y, 1);
  CHECK(loss_ns(x, y, true).item() ==
        doctest::Approx(0.5 * (loss_ns(x0, y0).item() + loss_ns(x1, y1).item())).epsilon(1e-12));
  expect_kind(ErrorKind::Degenerate, [&] { loss_ns(Tensor::zeros({4}), e1); });
}

TEST_CASE("stage-1 loss composition") {
  auto ef = random_const({2, 3, 2, 2}, 15), er = random_const({2, 3, 2, 2}, 16);
  auto efh = random_const({2, 3, 2, 2}, 17), erh = random_const({2, 3, 2, 2}, 18);
  const double want = loss_mse(ef, efh).item() + loss_mse(er, erh).item() + 0.2 * loss_ns(efh, erh).item();
  CHECK(loss_st1(ef, efh, er, erh).item() == doctest::Approx(want).epsilon(1e-12));
  CHECK(std::abs(loss_st1(ef, ef, ag::scale(ef, -1.0), ag::scale(ef, -1.0), 0.2).item() - 0.4) < 1e-10);
  CHECK(loss_st1(ef, efh, er, erh, 0.0).item() ==
        doctest::Approx(loss_mse(ef, efh).item() + loss_mse(er, erh).item()).epsilon(1e-12));
  auto parts = loss_st1_parts(ef, efh, er, erh, 0.2);
  CHECK(parts.total.item() ==
        doctest::Approx(parts.mse_f.item() + parts.mse_r.item() + 0.2 * parts.ns.item()).epsilon(1e-12));
}

TEST_CASE("loss gradients") {
  auto a = random_param({3, 4}, 19), b = random_param({3, 4}, 20);
  auto e = random_const({3, 4}, 21);
  for (auto f : std::vector<std::function<Tensor()>>{
           [&] { return loss_mse(e, a); }, [&] { return loss_ns(a, b); },
           [&] { return loss_ns(a, b, true); }, [&] { return loss_st1(e, a, e, b, 0.2); }}) {
    auto r = gradcheck(f, {a, b});
    INFO(r.worst);
    CHECK(r.max_rel_error < 1e-6);
  }
}
