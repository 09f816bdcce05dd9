// Copyright (C) 2026 The causalvid authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <fstream>

#include "causalvid/backbone.hpp"
#include "causalvid/checkpoint.hpp"
#include "causalvid/error.hpp"
#include "doctest.h"
#include "gradcheck.hpp"

using namespace cvs;
using namespace cvs::backbone;
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

BackboneConfig small(int layers = 4) {
  BackboneConfig b;
  b.frames = 3;
  b.height = 8;
  b.width = 8;
  b.layers = layers;
  b.channels = {4, 6};
  b.text_dim = 6;
  b.step_embed_dim = 6;
  b.max_prompt_len = 5;
  return b;
}

struct Identity : LayerHook {
  int calls = 0;
  Tensor apply(const Tensor& t, const LayerGeometry&) override {
    ++calls;
    return t;
  }
};

struct Recorder : LayerHook {
  Tensor seen;
  LayerGeometry geom;
  Tensor apply(const Tensor& t, const LayerGeometry& g) override {
    seen = t;
    geom = g;
    return t;
  }
};

struct Shrink : LayerHook {
  Tensor apply(const Tensor& t, const LayerGeometry&) override {
    return ag::reshape(t, {t.dim(0) * t.dim(1), t.dim(2)});
  }
};

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("cvs_test_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("backbone config scales and validation") {
  auto c = small(4);
  c.validate();
  CHECK(c.scale_count() == 2);
  CHECK(c.scale_of(0) == 0);
  CHECK(c.scale_of(1) == 1);
  CHECK(c.scale_of(2) == 1);
  CHECK(c.scale_of(3) == 0);
  auto c5 = small(5);
  c5.channels = {4, 6, 8};
  CHECK(c5.scale_count() == 3);
  CHECK(c5.scale_of(2) == 2);
  auto flat = small(4);
  flat.symmetric = false;
  for (int i = 0; i < 4; ++i) CHECK(flat.scale_of(i) == 0);

  auto bad = small(5);  // three scales, two widths
  expect_kind(ErrorKind::Config, [&] { bad.validate(); });
  bad = small(4);
  bad.height = 7;
  expect_kind(ErrorKind::Config, [&] { bad.validate(); });
  bad = small(4);
  bad.step_embed_dim = 5;
  expect_kind(ErrorKind::Config, [&] { bad.validate(); });
}

TEST_CASE("backbone config json round-trip and hash") {
  auto c = small(4);
  auto back = BackboneConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.hash() == c.hash());
  CHECK(c.hash().size() == 16);
  auto d = c;
  d.init_seed = 2;
  CHECK(d.hash() != c.hash());
  nlohmann::json j = c.to_json();
  j["layers"] = "four";
  expect_kind(ErrorKind::Config, [&] { BackboneConfig::from_json(j); });
}

TEST_CASE("layout conversion round-trips") {
  auto x = random_const({2, 3, 4, 5}, 1);
  auto cl = to_channels_last(x);
  CHECK(cl.shape() == ag::Shape{2, 4, 5, 3});
  CHECK(cl.at(((1 * 4 + 2) * 5 + 3) * 3 + 1) == x.at(((1 * 3 + 1) * 4 + 2) * 5 + 3));
  CHECK(to_channels_first(cl).values() == x.values());
  expect_kind(ErrorKind::Contract, [&] { to_channels_last(random_const({2, 3}, 1)); });
}

TEST_CASE("output shape and parameter naming") {
  UNet3D m(small(4));
  auto z = random_const({3, 3, 8, 8}, 2);
  auto out = m.predict_noise(z, 500, {random_const({2, 6}, 3)});
  CHECK(out.shape() == z.shape());
  auto& ps = m.parameters();
  for (const char* name : {"conv_in.weight", "temb.fc1.weight", "layer1.res.conv1.weight",
                           "layer2.res.skip.weight", "layer4.ta.q.weight", "layer3.ca.out.weight",
                           "norm_out.gamma", "conv_out.bias"})
    CHECK_MESSAGE(ps.get(name).defined(), name);
  // Layer 4 takes layer 3 (6) plus the skip from layer 1 (4).
  CHECK(ps.get("layer4.res.norm1.gamma").numel() == 10);
  CHECK(ps.get("layer3.res.norm1.gamma").numel() == 12);

  expect_kind(ErrorKind::Contract, [&] { m.predict_noise(random_const({2, 3, 8, 8}, 1), 1, {}); });
  expect_kind(ErrorKind::Contract,
              [&] { m.predict_noise(z, 1, {random_const({6, 6}, 1)}); });  // prompt too long
  expect_kind(ErrorKind::Range, [&] { m.geometry(5); });
}

TEST_CASE("geometry per layer") {
  UNet3D m(small(4));
  auto g2 = m.geometry(2);
  CHECK(g2.height == 4);
  CHECK(g2.channels == 6);
  CHECK(g2.tokens() == 16);
  CHECK(m.geometry(4).height == 8);
  auto f = small(4);
  f.symmetric = false;
  UNet3D flat(f);
  for (int l = 1; l <= 4; ++l) {
    CHECK(flat.geometry(l).height == 8);
    CHECK(flat.geometry(l).channels == 4);
  }
  auto out = flat.predict_noise(random_const({3, 3, 8, 8}, 2), 3, {});
  CHECK(out.shape() == ag::Shape{3, 3, 8, 8});
}

TEST_CASE("identity hooks are bitwise transparent") {
  UNet3D m(small(4));
  auto z = random_const({3, 3, 8, 8}, 4);
  ConditioningBundle cond{random_const({3, 6}, 5)};
  Identity id;
  HookSet hooks{{1, &id}, {2, &id}, {3, &id}, {4, &id}};
  auto a = m.predict_noise(z, 10, cond, &hooks);
  auto b = m.predict_noise(z, 10, cond);
  CHECK(id.calls == 4);
  CHECK(a.values() == b.values());
}

TEST_CASE("hooks see the layer representation and its geometry") {
  UNet3D m(small(4));
  auto z = random_const({3, 3, 8, 8}, 6);
  ConditioningBundle cond{random_const({2, 6}, 7)};
  for (int l = 1; l <= 4; ++l) {
    Recorder rec;
    HookSet hooks{{l, &rec}};
    m.predict_noise(z, 20, cond, &hooks);
    auto rep = m.layer_representation(z, 20, cond, l);
    const auto g = m.geometry(l);
    CHECK(rec.geom.layer == l);
    CHECK(rep.shape() == ag::Shape{g.tokens(), g.frames, g.channels});
    CHECK(rep.values() == rec.seen.values());
  }
}

TEST_CASE("hooks that change the token shape are rejected") {
  UNet3D m(small(4));
  Shrink bad;
  HookSet hooks{{2, &bad}};
  expect_kind(ErrorKind::Contract,
              [&] { m.predict_noise(random_const({3, 3, 8, 8}, 1), 1, {}, &hooks); });
}

TEST_CASE("zero-initialized cross attention ignores the prompt at init") {
  UNet3D m(small(4));
  auto z = random_const({3, 3, 8, 8}, 8);
  auto with = m.predict_noise(z, 7, {random_const({4, 6}, 9)});
  auto without = m.predict_noise(z, 7, {});
  CHECK(with.values() == without.values());
}

TEST_CASE("prompt changes the output once cross attention is trained") {
  UNet3D m(small(4));
  Rng rng(3);
  auto w = m.parameters().get("layer2.ca.out.weight");
  for (auto& v : w.mutable_data()) v = 0.3 * rng.normal();
  auto z = random_const({3, 3, 8, 8}, 8);
  auto a = m.predict_noise(z, 7, {random_const({4, 6}, 9)});
  auto b = m.predict_noise(z, 7, {random_const({4, 6}, 10)});
  CHECK(a.values() != b.values());
}

TEST_CASE("single-layer backbone matches an unrolled reference") {
  auto cfg = small(1);
  cfg.channels = {4};
  UNet3D m(cfg);
  const auto& ps = m.parameters();
  auto lin = [&](const std::string& n) {
    nn::Linear l;
    l.weight = ps.get(n + ".weight");
    l.bias = ps.get(n + ".bias");
    return l;
  };
  auto conv = [&](const std::string& n) {
    nn::Conv3x3 c;
    c.proj = lin(n);
    return c;
  };
  auto norm = [&](const std::string& n) {
    nn::LayerNorm l;
    l.gamma = ps.get(n + ".gamma");
    l.beta = ps.get(n + ".beta");
    return l;
  };
  auto attn = [&](const std::string& n) {
    nn::Attention a;
    a.norm = norm(n + ".norm");
    a.q = lin(n + ".q");
    a.k = lin(n + ".k");
    a.v = lin(n + ".v");
    a.out = lin(n + ".out");
    return a;
  };
  auto z = random_const({3, 3, 8, 8}, 11);
  auto text = random_const({2, 6}, 12);
  const int k = 321;

  auto e = Tensor::constant({6}, sinusoidal(k, 6));
  auto temb = lin("temb.fc2")(ag::silu(lin("temb.fc1")(e)));
  auto x = conv("conv_in")(ag::permute(z, {0, 2, 3, 1}));
  auto r = conv("layer1.res.conv1")(ag::silu(norm("layer1.res.norm1")(x)));
  r = ag::add_trailing(r, lin("layer1.res.temb")(ag::silu(temb)));
  r = conv("layer1.res.conv2")(ag::silu(norm("layer1.res.norm2")(r)));
  auto y = ag::add(x, r);
  auto t = ag::reshape(y, {3, 64, 4});
  t = ag::add(t, attn("layer1.sa").self_attend(t));
  t = ag::add(t, attn("layer1.ca").cross_attend(t, text));
  auto s = ag::permute(t, {1, 0, 2});
  std::vector<double> pe;
  for (int f = 0; f < 3; ++f) {
    auto p = sinusoidal(f, 4);
    pe.insert(pe.end(), p.begin(), p.end());
  }
  s = ag::add(s, attn("layer1.ta").self_attend(ag::add_trailing(s, Tensor::constant({3, 4}, pe))));
  auto h = ag::reshape(ag::permute(s, {1, 0, 2}), {3, 8, 8, 4});
  auto ref = ag::permute(conv("conv_out")(ag::silu(norm("norm_out")(h))), {0, 3, 1, 2});

  auto out = m.predict_noise(z, k, {text});
  REQUIRE(out.shape() == ref.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i)
    CHECK(out.at(i) == doctest::Approx(ref.at(i)).epsilon(1e-12));
}

TEST_CASE("backbone gradients match finite differences") {
  BackboneConfig c;
  c.frames = 2;
  c.height = 4;
  c.width = 4;
  c.layers = 3;
  c.channels = {2, 4};
  c.text_dim = 4;
  c.step_embed_dim = 4;
  c.max_prompt_len = 3;
  UNet3D m(c);
  auto& ps = m.parameters();
  Rng rng(5);
  for (auto& v : ps.get("layer2.ca.out.weight").mutable_data()) v = 0.5 * rng.normal();
  auto z = random_param({2, 3, 4, 4}, 13, 0.5);
  ConditioningBundle cond{random_const({2, 4}, 14)};
  auto w = random_const({2, 3, 4, 4}, 15);
  auto r = gradcheck([&] { return ag::dot(m.predict_noise(z, 40, cond), w); },
                     {z, ps.get("conv_in.weight"), ps.get("layer2.ta.v.weight"),
                      ps.get("layer2.ca.q.weight"), ps.get("layer3.res.skip.weight"),
                      ps.get("layer1.sa.k.weight"), ps.get("temb.fc1.weight")},
                     1e-6, 24);
  INFO(r.worst);
  // Two-channel layer norms make the map stiff; the residual error scales as h^2.
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("checkpoint round-trip restores identical predictions") {
  TempDir dir;
  UNet3D a(small(4));
  auto cb = small(4);
  cb.init_seed = 99;
  UNet3D b(cb);
  auto z = random_const({3, 3, 8, 8}, 16);
  ConditioningBundle cond{random_const({2, 6}, 17)};
  CHECK(a.predict_noise(z, 5, cond).values() != b.predict_noise(z, 5, cond).values());

  Checkpoint ck;
  ck.meta["config"] = a.config().to_json();
  export_parameters(a.parameters(), ck, "model.");
  const auto path = dir.path / "m.ckpt";
  save_checkpoint(ck, path);
  auto back = load_checkpoint(path);
  CHECK(back.meta == ck.meta);
  CHECK(back.arrays.size() == ck.arrays.size());
  CHECK(import_parameters(b.parameters(), back, "model.") == b.parameters().items().size());
  CHECK(a.predict_noise(z, 5, cond).values() == b.predict_noise(z, 5, cond).values());

  CHECK(back.erase_prefixes({"model.layer1."}) > 0);
  CHECK(back.find("model.layer1.sa.q.weight") == nullptr);
  expect_kind(ErrorKind::Malformed, [&] { import_parameters(b.parameters(), back, "model."); });
  CHECK(import_parameters(b.parameters(), back, "model.", false) > 0);
}

TEST_CASE("checkpoint error kinds") {
  TempDir dir;
  expect_kind(ErrorKind::MissingFile, [&] { load_checkpoint(dir.path / "absent.ckpt"); });
  {
    std::ofstream(dir.path / "junk.ckpt") << "not a checkpoint at all";
  }
  expect_kind(ErrorKind::Malformed, [&] { load_checkpoint(dir.path / "junk.ckpt"); });

  Checkpoint ck;
  ck.put({"w", {2, 3}, std::vector<double>(6, 1.5)});
  save_checkpoint(ck, dir.path / "ok.ckpt");
  const auto size = std::filesystem::file_size(dir.path / "ok.ckpt");
  std::filesystem::copy_file(dir.path / "ok.ckpt", dir.path / "cut.ckpt");
  std::filesystem::resize_file(dir.path / "cut.ckpt", size - 8);
  expect_kind(ErrorKind::Malformed, [&] { load_checkpoint(dir.path / "cut.ckpt"); });

  nn::ParameterStore store;
  store.add("w", Tensor::parameter({3, 2}, std::vector<double>(6, 0.0)));
  expect_kind(ErrorKind::Contract, [&] { import_parameters(store, load_checkpoint(dir.path / "ok.ckpt")); });
}
