// Copyright (C) 2026 The causalvid authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "causalvid/backbone.hpp"
#include "causalvid/causal.hpp"
#include "causalvid/error.hpp"
#include "doctest.h"
#include "gradcheck.hpp"

using namespace cvs;
using namespace cvs::causal;
using ag::Tensor;
using cvs::testing::gradcheck;
using cvs::testing::random_const;
using cvs::testing::random_param;

namespace {

Tensor probe(const Tensor& t, std::uint64_t seed = 77) {
  return ag::dot(t, random_const(t.shape(), seed));
}

template <class F>
void expect_kind(ErrorKind kind, F&& f) {
  try {
    f();
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == kind);
  }
}

void set_identity(nn::Linear& l) {
  auto w = l.weight.mutable_data();
  const auto in = l.in_features(), out = l.out_features();
  for (std::int64_t i = 0; i < in; ++i)
    for (std::int64_t o = 0; o < out; ++o) w[i * out + o] = i == o ? 1.0 : 0.0;
  auto b = l.bias.mutable_data();
  std::fill(b.begin(), b.end(), 0.0);
}

// Half-pixel bilinear sample of a single [H, W] plane at output (oy, ox).
double bilinear_oracle(const std::vector<double>& img, int H, int W, int oh, int ow, int oy,
                       int ox) {
  auto src = [](int o, int in, int out) {
    double s = (o + 0.5) * in / static_cast<double>(out) - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(in - 1));
  };
  const double sy = src(oy, H, oh), sx = src(ox, W, ow);
  const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
  const int y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
  const double ty = sy - y0, tx = sx - x0;
  auto at = [&](int y, int x) { return img[static_cast<std::size_t>(y * W + x)]; };
  return (1 - ty) * ((1 - tx) * at(y0, x0) + tx * at(y0, x1)) +
         ty * ((1 - tx) * at(y1, x0) + tx * at(y1, x1));
}

EncodedAra toy_ara(int D, std::uint64_t seed, int correct = 0) {
  EncodedAra a;
  a.question = random_const({3, D}, seed);
  for (int i = 0; i < kAnswerCount; ++i)
    a.answers[i] = random_const({2 + i % 2, D}, seed + 1 + i);
  a.correct = correct;
  return a;
}

}  // namespace

TEST_CASE("causal config validation") {
  CausalConfig c;
  c.validate();
  CHECK(c.grid() == 4);
  CHECK(c.d() == 4);
  auto bad = c;
  bad.n_v = 12;
  expect_kind(ErrorKind::Config, [&] { bad.validate(); });
  bad = c;
  bad.intervention_fraction = 1.0;
  expect_kind(ErrorKind::Config, [&] { bad.validate(); });
  bad = c;
  bad.temperature = 0.0;
  expect_kind(ErrorKind::Config, [&] { bad.validate(); });
  auto j = c.to_json();
  j["n_v"] = 9;
  auto back = CausalConfig::from_json(j);
  CHECK(back.n_v == 9);
  CHECK(back.d() == 2);
}

TEST_CASE("sampling adaptor matches a bilinear oracle") {
  nn::ParameterStore store;
  Rng rng(3);
  const int C = 3, F = 2, h = 2, w = 2, n_v = 16;
  nn::Linear proj(store, "p", C, C, rng);
  set_identity(proj);
  LayerGeometry g{1, F, h, w, C};
  auto z = random_const({h * w, F, C}, 11);
  auto out = sampling_adaptor(z, g, n_v, proj);
  REQUIRE(out.shape() == ag::Shape{n_v, F, C});
  for (int f = 0; f < F; ++f)
    for (int c = 0; c < C; ++c) {
      std::vector<double> plane(h * w);
      for (int p = 0; p < h * w; ++p) plane[p] = z.at((p * F + f) * C + c);
      for (int oy = 0; oy < 4; ++oy)
        for (int ox = 0; ox < 4; ++ox) {
          const double want = bilinear_oracle(plane, h, w, 4, 4, oy, ox);
          CHECK(out.at(((oy * 4 + ox) * F + f) * C + c) == doctest::Approx(want).epsilon(1e-12));
        }
    }
}

TEST_CASE("adaptor at matching resolution with identity projection is exact") {
  nn::ParameterStore store;
  Rng rng(3);
  nn::Linear proj(store, "p", 5, 5, rng);
  set_identity(proj);
  LayerGeometry g{2, 3, 4, 4, 5};
  auto z = random_const({16, 3, 5}, 4);
  auto out = sampling_adaptor(z, g, 16, proj);
  CHECK(out.values() == z.values());
  auto back = inverse_adaptor(out, g, proj);
  CHECK(back.values() == z.values());
}

TEST_CASE("adaptor contract errors") {
  nn::ParameterStore store;
  Rng rng(3);
  nn::Linear proj(store, "p", 4, 6, rng);
  LayerGeometry g{1, 2, 4, 4, 4};
  expect_kind(ErrorKind::Contract, [&] { sampling_adaptor(random_const({15, 2, 4}, 1), g, 16, proj); });
  expect_kind(ErrorKind::Config, [&] { sampling_adaptor(random_const({16, 2, 4}, 1), g, 15, proj); });
}

TEST_CASE("adaptor and inverse gradients") {
  nn::ParameterStore store;
  Rng rng(5);
  nn::Linear a(store, "a", 3, 4, rng), b(store, "b", 4, 3, rng);
  LayerGeometry g{1, 2, 4, 4, 3};
  auto z = random_param({16, 2, 3}, 6);
  auto r = gradcheck([&] { return probe(inverse_adaptor(sampling_adaptor(z, g, 4, a), g, b)); },
                     {z, a.weight, a.bias, b.weight});
  INFO(r.worst);
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("gumbel softmax without noise is a token-axis softmax") {
  auto logits = random_const({5, 2, 3}, 21);
  auto s = gumbel_softmax_tokens(logits, 0.5, nullptr);
  for (int f = 0; f < 2; ++f)
    for (int c = 0; c < 3; ++c) {
      double mx = -1e300, den = 0.0, total = 0.0;
      for (int i = 0; i < 5; ++i) mx = std::max(mx, logits.at((i * 2 + f) * 3 + c) / 0.5);
      for (int i = 0; i < 5; ++i) den += std::exp(logits.at((i * 2 + f) * 3 + c) / 0.5 - mx);
      for (int i = 0; i < 5; ++i) {
        const double want = std::exp(logits.at((i * 2 + f) * 3 + c) / 0.5 - mx) / den;
        CHECK(s.at((i * 2 + f) * 3 + c) == doctest::Approx(want).epsilon(1e-12));
        total += s.at((i * 2 + f) * 3 + c);
      }
      CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
  auto flat = gumbel_softmax_tokens(Tensor::full({8, 2, 3}, 0.7), 1.0, nullptr);
  for (double v : flat.values()) CHECK(v == doctest::Approx(1.0 / 8).epsilon(1e-12));
}

TEST_CASE("gumbel softmax with noise stays normalized") {
  Rng rng(9);
  auto logits = random_const({6, 3, 2}, 8);
  auto s = gumbel_softmax_tokens(logits, 1.0, &rng);
  auto plain = gumbel_softmax_tokens(logits, 1.0, nullptr);
  CHECK(s.values() != plain.values());
  for (int f = 0; f < 3; ++f)
    for (int c = 0; c < 2; ++c) {
      double total = 0.0;
      for (int i = 0; i < 6; ++i) {
        const double v = s.at((i * 3 + f) * 2 + c);
        CHECK(v > 0.0);
        total += v;
      }
      CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("gated fusion shapes and gradients") {
  nn::ParameterStore store;
  Rng rng(12);
  GatedFusion fuse(store, "fuse", 4, 4, rng);
  auto zv = random_param({4, 2, 4}, 13);
  auto zg = random_const({4, 2, 4}, 14);
  auto res = fuse(zv, zg, 1.0, nullptr);
  CHECK(res.gated.shape() == zv.shape());
  CHECK(res.gate.axis == 0);
  for (std::size_t i = 0; i < zv.values().size(); ++i)
    CHECK(res.gated.at(static_cast<std::int64_t>(i)) ==
          doctest::Approx(zv.at(static_cast<std::int64_t>(i)) *
                          res.gate.weights.at(static_cast<std::int64_t>(i))));
  auto r = gradcheck([&] { return probe(fuse(zv, zg, 0.7, nullptr).gated); },
                     {zv, fuse.conv1.weight, fuse.conv2.weight, fuse.conv2.bias});
  INFO(r.worst);
  CHECK(r.max_rel_error < 1e-6);
  expect_kind(ErrorKind::Contract, [&] { fuse.logits(zv, random_const({5, 2, 4}, 1)); });
}

TEST_CASE("scorer rows are distributions and gradients check") {
  nn::ParameterStore store;
  Rng rng(15);
  TokenScorer sc(store, "s", 4, 6, rng);
  auto x = random_param({8, 3, 4}, 16);
  auto s = sc(x);
  REQUIRE(s.shape() == ag::Shape{3, 8});
  for (int f = 0; f < 3; ++f) {
    double t = 0.0;
    for (int i = 0; i < 8; ++i) t += s.at(f * 8 + i);
    CHECK(t == doctest::Approx(1.0).epsilon(1e-12));
  }
  auto r = gradcheck([&] { return probe(sc(x)); }, {x, sc.fc1.weight, sc.fc2.weight});
  INFO(r.worst);
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("top-d indices agree with a full-sort oracle") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const int n = 4 + static_cast<int>(seed % 13);
    const int d = n / 4;
    auto s = random_const({3, n}, 100 + seed);
    auto idx = top_d_indices(s, d);
    REQUIRE(idx.size() == 3);
    for (int f = 0; f < 3; ++f) {
      std::vector<std::pair<double, int>> all;
      for (int i = 0; i < n; ++i) all.emplace_back(-s.at(f * n + i), i);
      std::sort(all.begin(), all.end());
      std::vector<std::int64_t> want;
      for (int i = 0; i < d; ++i) want.push_back(all[i].second);
      std::sort(want.begin(), want.end());
      CHECK(idx[f] == want);
      CHECK(static_cast<int>(idx[f].size()) == d);
    }
  }
}

TEST_CASE("top-d ties resolve to the lower index") {
  auto s = Tensor::constant({1, 8}, {0.1, 0.3, 0.3, 0.1, 0.3, 0.2, 0.0, 0.3});
  CHECK(top_d_indices(s, 2)[0] == std::vector<std::int64_t>{1, 2});
  auto inc = Tensor::constant({1, 8}, {1, 2, 3, 4, 5, 6, 7, 8});
  CHECK(top_d_indices(inc, 2)[0] == std::vector<std::int64_t>{6, 7});
}

TEST_CASE("selection partitions tokens and recombination is exact") {
  const int n = 16, F = 3, C = 5;
  auto fused = random_param({n, F, C}, 31);
  auto scores = ag::softmax_last(random_param({F, n}, 32));
  const auto before = TokenBundle::instances();
  auto b = select_causal_tokens(fused, fused, scores);
  CHECK(TokenBundle::instances() > before);
  CHECK(b.d == 4);
  CHECK(b.causal.shape() == ag::Shape{4, F, C});
  CHECK(b.background.shape() == ag::Shape{12, F, C});
  for (int f = 0; f < F; ++f) {
    std::set<std::int64_t> all(b.causal_indices[f].begin(), b.causal_indices[f].end());
    all.insert(b.background_indices[f].begin(), b.background_indices[f].end());
    CHECK(all.size() == static_cast<std::size_t>(n));
    for (int j = 0; j < b.d; ++j) {
      const auto i = b.causal_indices[f][j];
      for (int c = 0; c < C; ++c)
        CHECK(b.causal.at((j * F + f) * C + c) == fused.at((i * F + f) * C + c));
    }
  }
  auto back = recombine(b);
  CHECK(back.values() == fused.values());
}

TEST_CASE("scores receive a straight-through gradient") {
  const int n = 8, F = 2, C = 3;
  auto fused = random_param({n, F, C}, 41);
  auto logits = random_param({F, n}, 42);
  auto b = select_causal_tokens(fused, fused, ag::softmax_last(logits));
  auto loss = ag::add(probe(b.causal, 1), probe(b.background, 2));
  loss.backward();
  double g = 0.0;
  for (double v : logits.grad()) g += std::abs(v);
  CHECK(g > 0.0);
  double gf = 0.0;
  for (double v : fused.grad()) gf += std::abs(v);
  CHECK(gf > 0.0);
}

TEST_CASE("intervention replaces floor(fraction * m) tokens per frame") {
  Rng rng(51);
  auto bg = random_param({12, 4, 3}, 52);
  auto iv = token_intervention(bg, 0.25, rng);
  REQUIRE(iv.tokens.shape() == bg.shape());
  for (int f = 0; f < 4; ++f) {
    CHECK(iv.replaced[f].size() == 3);
    CHECK(std::is_sorted(iv.replaced[f].begin(), iv.replaced[f].end()));
    std::set<std::int64_t> rep(iv.replaced[f].begin(), iv.replaced[f].end());
    CHECK(rep.size() == 3);
    for (int i = 0; i < 12; ++i)
      for (int c = 0; c < 3; ++c) {
        const auto k = (i * 4 + f) * 3 + c;
        if (rep.count(i))
          CHECK(iv.tokens.at(k) != bg.at(k));
        else
          CHECK(iv.tokens.at(k) == bg.at(k));
      }
  }
  probe(iv.tokens).backward();
  for (int f = 0; f < 4; ++f)
    for (auto i : iv.replaced[f]) CHECK(bg.grad()[(i * 4 + f) * 3] == 0.0);

  Rng r2(1);
  auto small = random_const({3, 2, 2}, 1);
  auto none = token_intervention(small, 0.25, r2);
  CHECK(none.tokens.values() == small.values());
  expect_kind(ErrorKind::Config, [&] { token_intervention(small, 0.0, r2); });
  expect_kind(ErrorKind::Contract, [&] { token_intervention(Tensor::zeros({0, 2, 2}), 0.5, r2); });
}

TEST_CASE("intervention draws are standard normal and positions uniform") {
  Rng rng(61);
  const int m = 8, F = 1, C = 4, trials = 4000;
  auto bg = Tensor::zeros({m, F, C});
  std::vector<int> hits(m, 0);
  double s1 = 0.0, s2 = 0.0;
  std::int64_t count = 0;
  for (int t = 0; t < trials; ++t) {
    auto iv = token_intervention(bg, 0.5, rng);
    for (auto i : iv.replaced[0]) {
      ++hits[i];
      for (int c = 0; c < C; ++c) {
        const double v = iv.tokens.at(i * C + c);
        s1 += v;
        s2 += v * v;
        ++count;
      }
    }
  }
  const double mean = s1 / count, var = s2 / count - mean * mean;
  CHECK(std::abs(mean) < 0.03);
  CHECK(std::abs(var - 1.0) < 0.05);
  for (int i = 0; i < m; ++i)
    CHECK(std::abs(hits[i] / double(trials) - 0.5) < 0.04);
}

TEST_CASE("answer scoring matches a loop oracle") {
  const int D = 4;
  auto ara = toy_ara(D, 70);
  auto pooled = random_const({D}, 71);
  auto logits = score_answers(pooled, ara);
  for (int x = 0; x < kAnswerCount; ++x) {
    const auto& t = ara.answers[x];
    double acc = 0.0;
    for (int c = 0; c < D; ++c) {
      double m = 0.0;
      for (int i = 0; i < t.dim(0); ++i) m += t.at(i * D + c);
      acc += pooled.at(c) * m / t.dim(0);
    }
    CHECK(logits.at(x) == doctest::Approx(acc / std::sqrt(D)).epsilon(1e-12));
  }
}

TEST_CASE("answer logits on three tokens match a loop oracle") {
  const int D = 4, Cv = 3;
  nn::ParameterStore store;
  Rng rng(72);
  nn::Attention ca(store, "ca", D, Cv, 1, rng);
  auto ara = toy_ara(D, 73);
  auto tokens = random_const({3, 1, Cv}, 74);
  auto logits = answer_logits(tokens, ara, ca);

  auto lin = [](const nn::Linear& l, const std::vector<double>& x) {
    const auto in = l.in_features(), out = l.out_features();
    std::vector<double> y(out);
    for (int o = 0; o < out; ++o) {
      y[o] = l.bias.at(o);
      for (int i = 0; i < in; ++i) y[o] += x[i] * l.weight.at(i * out + o);
    }
    return y;
  };
  const int Lq = static_cast<int>(ara.question.dim(0));
  std::vector<std::vector<double>> keys, vals;
  for (int t = 0; t < 3; ++t) {
    std::vector<double> c(tokens.values().begin() + t * Cv, tokens.values().begin() + (t + 1) * Cv);
    keys.push_back(lin(ca.k, c));
    vals.push_back(lin(ca.v, c));
  }
  std::vector<double> pooled(D, 0.0);
  for (int qi = 0; qi < Lq; ++qi) {
    std::vector<double> x(ara.question.values().begin() + qi * D,
                          ara.question.values().begin() + (qi + 1) * D);
    double mu = 0.0, var = 0.0;
    for (double v : x) mu += v / D;
    for (double v : x) var += (v - mu) * (v - mu) / D;
    for (int c = 0; c < D; ++c)
      x[c] = (x[c] - mu) / std::sqrt(var + 1e-5) * ca.norm.gamma.at(c) + ca.norm.beta.at(c);
    auto q = lin(ca.q, x);
    std::vector<double> w(3);
    double mx = -1e300, den = 0.0;
    for (int t = 0; t < 3; ++t) {
      double s = 0.0;
      for (int c = 0; c < D; ++c) s += q[c] * keys[t][c];
      w[t] = s / std::sqrt(D);
      mx = std::max(mx, w[t]);
    }
    for (auto& v : w) den += (v = std::exp(v - mx));
    std::vector<double> o(D, 0.0);
    for (int t = 0; t < 3; ++t)
      for (int c = 0; c < D; ++c) o[c] += w[t] / den * vals[t][c];
    auto y = lin(ca.out, o);
    for (int c = 0; c < D; ++c) pooled[c] += y[c] / Lq;
  }
  auto want = score_answers(Tensor::constant({D}, pooled), ara);
  for (int x = 0; x < kAnswerCount; ++x)
    CHECK(logits.at(x) == doctest::Approx(want.at(x)).epsilon(1e-10));

  // Context order does not matter.
  auto perm = Tensor::constant({3, 1, Cv}, [&] {
    std::vector<double> v;
    for (int t : {2, 0, 1})
      v.insert(v.end(), tokens.values().begin() + t * Cv, tokens.values().begin() + (t + 1) * Cv);
    return v;
  }());
  auto lp = answer_logits(perm, ara, ca);
  for (int x = 0; x < kAnswerCount; ++x) CHECK(lp.at(x) == doctest::Approx(logits.at(x)).epsilon(1e-12));
}

TEST_CASE("answer logits gradients") {
  const int D = 4, Cv = 3;
  nn::ParameterStore store;
  Rng rng(80);
  nn::Attention ca(store, "ca", D, Cv, 1, rng);
  auto ara = toy_ara(D, 81);
  auto tokens = random_param({4, 2, Cv}, 82);
  auto r = gradcheck([&] { return probe(answer_logits(tokens, ara, ca)); },
                     {tokens, ca.q.weight, ca.k.weight, ca.v.weight, ca.out.weight});
  INFO(r.worst);
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("ArA loss components match closed forms") {
  auto c = Tensor::constant({5}, {1.0, 0.2, -0.3, 0.0, 0.5});
  auto b = Tensor::constant({5}, {0.1, 0.4, -1.0, 2.0, 0.3});
  auto bd = Tensor::constant({5}, {-0.5, 0.0, 0.7, 1.0, 0.2});
  auto lse = [](const Tensor& t) {
    double m = -1e300, s = 0.0;
    for (double v : t.values()) m = std::max(m, v);
    for (double v : t.values()) s += std::exp(v - m);
    return m + std::log(s);
  };
  const int correct = 2;
  auto parts = loss_ara_parts(c, b, bd, correct);
  CHECK(parts.xe_causal.item() == doctest::Approx(lse(c) - c.at(correct)).epsilon(1e-12));
  double xb = 0.0, kl = 0.0;
  for (int i = 0; i < 5; ++i) {
    if (i != correct) xb += 0.25 * (lse(b) - b.at(i));
    const double lb = b.at(i) - lse(b), ld = bd.at(i) - lse(bd);
    kl += std::exp(lb) * (lb - ld);
  }
  CHECK(parts.xe_background.item() == doctest::Approx(xb).epsilon(1e-12));
  CHECK(parts.kld.item() == doctest::Approx(kl).epsilon(1e-12));
  CHECK(parts.total.item() ==
        doctest::Approx(parts.xe_causal.item() + xb + kl).epsilon(1e-12));
  CHECK(loss_ara(c, b, bd, correct).item() == doctest::Approx(parts.total.item()));
}

TEST_CASE("ArA loss properties") {
  // Equal logits: both cross-entropies are ln 5 and the divergence vanishes.
  auto z = Tensor::zeros({5});
  auto parts = loss_ara_parts(z, z, z, 0);
  CHECK(parts.xe_causal.item() == doctest::Approx(std::log(5.0)));
  CHECK(parts.xe_background.item() == doctest::Approx(std::log(5.0)));
  CHECK(parts.kld.item() == doctest::Approx(0.0));
  for (std::uint64_t s = 0; s < 50; ++s) {
    auto c = random_const({5}, 200 + s, 2.0);
    auto b = random_const({5}, 300 + s, 2.0);
    auto bd = random_const({5}, 400 + s, 2.0);
    auto p = loss_ara_parts(c, b, bd, static_cast<int>(s % 5));
    CHECK(p.xe_background.item() >= std::log(4.0) - 1e-12);
    CHECK(p.kld.item() >= -1e-12);
    CHECK(loss_ara_parts(c, b, b, 0).kld.item() == doctest::Approx(0.0).epsilon(1e-15));
  }
  // The background floor ln 4 is reached by a uniform distribution off the correct answer.
  auto floor = Tensor::constant({5}, {-60.0, 0.0, 0.0, 0.0, 0.0});
  CHECK(loss_ara_parts(z, floor, floor, 0).xe_background.item() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-9));
  expect_kind(ErrorKind::Contract, [&] { loss_ara(z, z, Tensor::zeros({4}), 0); });
  expect_kind(ErrorKind::Contract, [&] { loss_ara(z, z, z, 5); });
}

TEST_CASE("ArA and ST2 loss gradients") {
  auto c = random_param({5}, 90), b = random_param({5}, 91), bd = random_param({5}, 92);
  auto r = gradcheck([&] { return loss_ara(c, b, bd, 3); }, {c, b, bd});
  INFO(r.worst);
  CHECK(r.max_rel_error < 1e-6);
  auto e = random_const({2, 3, 4, 4}, 93);
  auto eh = random_param({2, 3, 4, 4}, 94);
  auto r2 = gradcheck([&] { return loss_st2(e, eh, loss_ara(c, b, bd, 0), 0.3); }, {eh, c});
  INFO(r2.worst);
  CHECK(r2.max_rel_error < 1e-6);
  auto a = loss_ara(c, b, bd, 0).item();
  double mse = 0.0;
  for (std::int64_t i = 0; i < e.numel(); ++i) mse += std::pow(e.at(i) - eh.at(i), 2) / e.numel();
  CHECK(loss_st2(e, eh, loss_ara(c, b, bd, 0), 0.3).item() ==
        doctest::Approx(mse + 0.3 * a).epsilon(1e-12));
}

TEST_CASE("presets lay out blocks by scale") {
  auto layers = [](const Preset& p, BlockKind k) {
    std::vector<int> v;
    for (auto [l, kind] : p.blocks)
      if (kind == k) v.push_back(l);
    return v;
  };
  auto full = make_preset("full", 4);
  CHECK(layers(full, BlockKind::Cts) == std::vector<int>{1, 2, 3});
  CHECK(layers(full, BlockKind::Ctg) == std::vector<int>{4});
  CHECK_FALSE(full.zero_gaze);
  CHECK(make_preset("no_gaze", 4).zero_gaze);
  CHECK(make_preset("no_cts_ctg", 4).blocks.empty());
  CHECK(layers(make_preset("downscale_off", 4), BlockKind::Cts) == std::vector<int>{3});
  CHECK(layers(make_preset("upscale_off", 4), BlockKind::Cts) == std::vector<int>{1, 2});
  CHECK(layers(make_preset("ctg_only", 4), BlockKind::Cts).empty());
  CHECK(layers(make_preset("ctg_only", 4), BlockKind::Ctg) == std::vector<int>{4});
  CHECK(layers(make_preset("upscale_off", 6), BlockKind::Cts) == std::vector<int>{1, 2, 3});
  CHECK(layers(make_preset("downscale_off", 6), BlockKind::Cts) == std::vector<int>{4, 5});
  expect_kind(ErrorKind::Config, [] { make_preset("everything", 4); });
  CHECK(parse_block_kind("ctg") == BlockKind::Ctg);
  expect_kind(ErrorKind::Config, [] { parse_block_kind("xyz"); });
}

namespace {
backbone::BackboneConfig tiny_backbone() {
  backbone::BackboneConfig b;
  b.frames = 2;
  b.height = 8;
  b.width = 8;
  b.layers = 4;
  b.channels = {4, 6};
  b.text_dim = 8;
  b.step_embed_dim = 8;
  b.max_prompt_len = 6;
  return b;
}
}  // namespace

TEST_CASE("fresh blocks leave the backbone output unchanged") {
  backbone::UNet3D model(tiny_backbone());
  CausalConfig cfg;
  cfg.n_v = 4;
  cfg.c_v = 6;
  cfg.scorer_hidden = 5;
  CausalBlocks blocks(model, make_preset("full", 4).blocks, cfg, 8);
  CHECK(blocks.has_ctg());
  CHECK(blocks.cts(1) != nullptr);
  CHECK(blocks.cts(4) == nullptr);
  for (const auto& [name, t] : blocks.parameters().items()) {
    (void)t;
    bool ok = false;
    for (const auto& p : block_prefixes()) ok |= name.rfind(p, 0) == 0;
    CHECK_MESSAGE(ok, name);
  }

  auto z = random_const({2, 3, 8, 8}, 5);
  backbone::ConditioningBundle cond{random_const({3, 8}, 6)};
  auto ara = toy_ara(8, 7);
  Rng rng(8);
  StepContext ctx;
  ctx.gaze_tokens = random_const({4, 2, 6}, 9);
  ctx.ara = &ara;
  ctx.rng = &rng;
  auto hooks = blocks.hooks(ctx);
  auto with = model.predict_noise(z, 10, cond, &hooks);
  auto without = model.predict_noise(z, 10, cond);
  CHECK(with.values() == without.values());
  REQUIRE(ctx.ctg.has_value());
  CHECK(ctx.bundles.size() == 4);
  CHECK(std::isfinite(ctx.ctg->ara.total.item()));

  // The ArA loss reaches the scorer and the adaptor of the CTG block.
  ctx.ctg->ara.total.backward();
  auto& ps = blocks.parameters();
  double g = 0.0;
  for (double v : ps.get("ctg.cts.score.fc1.weight").grad()) g += std::abs(v);
  CHECK(g > 0.0);
  g = 0.0;
  for (double v : ps.get("ctg.ca.q.weight").grad()) g += std::abs(v);
  CHECK(g > 0.0);
}

TEST_CASE("block attachment errors") {
  backbone::UNet3D model(tiny_backbone());
  CausalConfig cfg;
  cfg.n_v = 4;
  cfg.c_v = 6;
  expect_kind(ErrorKind::Config, [&] { CausalBlocks(model, {{5, BlockKind::Cts}}, cfg, 8); });
  expect_kind(ErrorKind::Config,
              [&] { CausalBlocks(model, {{1, BlockKind::Cts}, {1, BlockKind::Cts}}, cfg, 8); });
  expect_kind(ErrorKind::Config,
              [&] { CausalBlocks(model, {{1, BlockKind::Ctg}, {2, BlockKind::Ctg}}, cfg, 8); });

  CausalBlocks blocks(model, make_preset("full", 4).blocks, cfg, 8);
  auto z = random_const({2, 3, 8, 8}, 5);
  backbone::ConditioningBundle cond{random_const({3, 8}, 6)};
  Rng rng(8);
  StepContext ctx;
  ctx.rng = &rng;
  auto hooks = blocks.hooks(ctx);
  expect_kind(ErrorKind::Config, [&] { model.predict_noise(z, 3, cond, &hooks); });
  ctx.gaze_tokens = random_const({4, 2, 6}, 9);
  expect_kind(ErrorKind::Config, [&] { model.predict_noise(z, 3, cond, &hooks); });
}

TEST_CASE("uniform gate divides tokens by the token count and gates contract") {
  auto zv = random_const({8, 2, 3}, 140);
  auto w = gumbel_softmax_tokens(Tensor::zeros({8, 2, 3}), 1.0, nullptr);
  auto gated = ag::mul(zv, w);
  for (std::int64_t i = 0; i < zv.numel(); ++i)
    CHECK(gated.at(i) == doctest::Approx(zv.at(i) / 8).epsilon(1e-12));

  nn::ParameterStore store;
  Rng rng(141);
  GatedFusion fuse(store, "f", 3, 3, rng);
  Rng noise(142);
  auto res = fuse(zv, random_const({8, 2, 3}, 143), 0.3, &noise);
  for (std::int64_t i = 0; i < zv.numel(); ++i) {
    CHECK(std::abs(res.gated.at(i)) <= std::abs(zv.at(i)));
    CHECK(res.gate.weights.at(i) >= 0.0);
    CHECK(res.gate.weights.at(i) <= 1.0);
  }
}

TEST_CASE("answer logits symmetry and alignment") {
  const int D = 4;
  nn::ParameterStore store;
  Rng rng(150);
  nn::Attention ca(store, "ca", D, 3, 1, rng);
  auto ara = toy_ara(D, 151);
  for (int i = 1; i < kAnswerCount; ++i) ara.answers[i] = ara.answers[0];
  auto l = answer_logits(random_const({3, 1, 3}, 152), ara, ca);
  for (int i = 1; i < kAnswerCount; ++i) CHECK(l.at(i) == l.at(0));

  // Pooled vector equal to answer 2's pooled embedding, others orthogonal.
  EncodedAra basis;
  for (int i = 0; i < kAnswerCount; ++i) {
    std::vector<double> v(5, 0.0);
    v[i] = 1.0;
    basis.answers[i] = Tensor::constant({1, 5}, v);
  }
  auto s = score_answers(Tensor::constant({5}, {0, 0, 1, 0, 0}), basis);
  for (int i = 0; i < kAnswerCount; ++i)
    if (i != 2) CHECK(s.at(2) > s.at(i));
}
