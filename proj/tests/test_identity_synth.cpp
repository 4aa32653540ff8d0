#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "g2/identity.hpp"
#include "g2/io.hpp"
#include "g2/synth.hpp"
#include "grad_check.hpp"

using namespace g2;
using namespace g2::identity;
using namespace g2::synth;

TEST_CASE("cosine_similarity: self, antipodal, orthogonal, scale invariance") {
  IdentityEmbedding v{{0.6f, -0.8f, 0.0f}};
  IdentityEmbedding nv{{-0.6f, 0.8f, 0.0f}};
  CHECK(cosine_similarity(v, v) == doctest::Approx(1.0));
  CHECK(cosine_similarity(v, nv) == doctest::Approx(-1.0));
  IdentityEmbedding e1{{1, 0, 0}}, e2{{0, 1, 0}};
  CHECK(cosine_similarity(e1, e2) == doctest::Approx(0.0));

  IdentityEmbedding scaled{{1.2f, -1.6f, 0.0f}};  // 2*v
  CHECK(std::fabs(cosine_similarity(v, scaled) - 1.0) < 1e-7);
  CHECK(std::fabs(cosine_similarity(scaled, nv) + 1.0) < 1e-7);

  IdentityEmbedding zero{{0, 0, 0}};
  CHECK_THROWS_AS(cosine_similarity(v, zero), std::invalid_argument);
}

TEST_CASE("embedder: determinism and unit norm") {
  Rng rng(2);
  EmbedderState emb;
  emb.init(rng, 32, 16);
  emb.freeze();
  ImageTensor img(32);
  for (auto& p : img.pixels) p = float(rng.uniform(-1.0, 1.0));
  auto a = embed_identity(img, emb);
  auto b = embed_identity(img, emb);
  CHECK(a.values == b.values);
  double n = 0;
  for (float v : a.values) n += double(v) * v;
  CHECK(std::fabs(std::sqrt(n) - 1.0) < 1e-5);

  ImageTensor wrong(16);
  CHECK_THROWS_AS(embed_identity(wrong, emb), std::invalid_argument);
}

TEST_CASE("dummy generator: norm, distinctness, determinism") {
  Rng rng(5);
  DummyGenState gen;
  gen.init(rng, 16, 24);
  int close = 0;
  for (int t = 0; t < 100; ++t) {
    auto z1 = NoiseVector::sample(rng, 16);
    auto z2 = NoiseVector::sample(rng, 16);
    auto a = generate_dummy_id(z1, gen);
    auto b = generate_dummy_id(z2, gen);
    double na = 0;
    for (float v : a.values) na += double(v) * v;
    CHECK(std::fabs(std::sqrt(na) - 1.0) < 1e-5);
    if (cosine_similarity(a, b) >= 1.0 - 1e-4) ++close;
    auto a2 = generate_dummy_id(z1, gen);
    REQUIRE(a.values == a2.values);
  }
  CHECK(close == 0);
}

TEST_CASE("dummy generator gradient flows to weights") {
  Rng rng(6);
  DummyGenState gen;
  gen.init(rng, 4, 4, 4);  // 4-unit toy instance
  auto z = nn::constant({2, 4}, nn::randn_vec(rng, 8, 1.0f));
  auto build = [&] {
    auto out = gen.fc2.forward(nn::silu(gen.fc1.forward(z)));
    return nn::mean_all(nn::square(out));  // d||out||^2 / d(weights)
  };
  auto r = g2::testing::grad_check({gen.fc1.w, gen.fc1.b, gen.fc2.w, gen.fc2.b}, build);
  CHECK(r.ok());
}

TEST_CASE("png round-trip is exact on quantized values") {
  Rng rng(9);
  ImageTensor img(24);
  for (auto& p : img.pixels)
    p = io::byte_to_float(std::uint8_t(rng.uniform_int(256)));
  auto path = std::filesystem::temp_directory_path() / "g2_png_test.png";
  io::save_png(path.string(), img);
  auto back = io::load_png(path.string());
  REQUIRE(back.res == img.res);
  CHECK(back.pixels == img.pixels);
  std::filesystem::remove(path);
}

TEST_CASE("sample_spec: determinism and bounds") {
  SynthConfig cfg;
  Rng r1(42), r2(42);
  auto a = sample_spec(r1, 50, cfg);
  auto b = sample_spec(r2, 50, cfg);
  CHECK(a.identity_id == b.identity_id);
  CHECK(a.geom.c_s == b.geom.c_s);
  CHECK(a.gamma.gamma == b.gamma.gamma);
  CHECK(a.nuisance.background_color == b.nuisance.background_color);

  Rng rng(7);
  std::set<int> ids;
  for (int i = 0; i < 1000; ++i) {
    auto s = sample_spec(rng, 50, cfg);
    ids.insert(s.identity_id);
    for (float v : s.geom.c_s)
      CHECK(std::fabs(v) <= cfg.clamp_sigmas * cfg.sigma_shape + 1e-6f);
    for (float v : s.geom.c_exp)
      CHECK(std::fabs(v) <= cfg.clamp_sigmas * cfg.sigma_expr + 1e-6f);
    CHECK(std::fabs(s.geom.c_pose[0]) <= cfg.clamp_sigmas * cfg.sigma_rot_xy + 1e-6f);
    CHECK(std::fabs(s.geom.c_pose[5]) <= cfg.clamp_sigmas * cfg.sigma_logscale + 1e-6f);
  }
  CHECK(int(ids.size()) >= 45);  // >= 90% of a pool of 50 after 1000 draws
}

TEST_CASE("render: determinism, background isolation, landmark independence") {
  auto model = geometry::build_toy_3dmm(7, 642, 16, 8);
  Rng rng(3);
  auto spec = sample_spec(rng, 50);

  auto img1 = render(spec, model, 64);
  auto img2 = render(spec, model, 64);
  CHECK(img1.pixels == img2.pixels);

  // changing only the background color leaves face pixels untouched
  std::vector<std::uint8_t> mask;
  auto base = render_with_mask(spec, model, 64, &mask);
  auto spec2 = spec;
  spec2.nuisance.background_color = {0.9f, 0.1f, 0.2f};
  auto img3 = render(spec2, model, 64);
  int changed_outside = 0;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      bool diff = false;
      for (int c = 0; c < 3; ++c)
        if (base.at(c, y, x) != img3.at(c, y, x)) diff = true;
      if (mask[y * 64 + x]) {
        CHECK(!diff);
      } else if (diff) {
        ++changed_outside;
      }
    }
  CHECK(changed_outside > 0);

  // changing only the identity latent leaves projected landmarks unchanged
  auto spec3 = spec;
  spec3.identity_latent = identity_latent(spec.identity_id + 1);
  auto shape = geometry::compute_shape(model, spec.geom);
  auto lm1 = geometry::project_landmarks(model, shape, spec.geom.c_pose);
  auto shape3 = geometry::compute_shape(model, spec3.geom);
  auto lm2 = geometry::project_landmarks(model, shape3, spec3.geom.c_pose);
  CHECK(lm1 == lm2);
}

TEST_CASE("make_dataset: pairs and manifest round-trip") {
  auto model = geometry::build_toy_3dmm(7, 162, 16, 8);
  auto ds = make_dataset(60, 123, 8, 32, model, 40);
  REQUIRE(int(ds.samples.size()) == 60);
  CHECK(int(ds.positive_pairs.size()) == 40);
  CHECK(int(ds.negative_pairs.size()) == 40);
  for (auto [a, b] : ds.positive_pairs) {
    CHECK(a != b);
    CHECK(ds.samples[a].identity_id == ds.samples[b].identity_id);
  }
  for (auto [a, b] : ds.negative_pairs)
    CHECK(ds.samples[a].identity_id != ds.samples[b].identity_id);

  auto dir = std::filesystem::temp_directory_path() / "g2_ds_test";
  std::filesystem::remove_all(dir);
  write_dataset(ds, model, dir.string());
  auto d1 = manifest_digest(dir.string());

  auto loaded = load_dataset(dir.string());
  REQUIRE(loaded.samples.size() == ds.samples.size());
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    CHECK(loaded.samples[i].identity_id == ds.samples[i].identity_id);
    REQUIRE(loaded.samples[i].image.pixels == ds.samples[i].image.pixels);
    CHECK(loaded.samples[i].spec.geom.c_s == ds.samples[i].spec.geom.c_s);
  }

  // regenerating with the same seed produces the identical manifest
  auto ds2 = make_dataset(60, 123, 8, 32, model, 40);
  auto dir2 = std::filesystem::temp_directory_path() / "g2_ds_test2";
  std::filesystem::remove_all(dir2);
  write_dataset(ds2, model, dir2.string());
  CHECK(manifest_digest(dir2.string()) == d1);
  std::filesystem::remove_all(dir);
  std::filesystem::remove_all(dir2);
}

TEST_CASE("identities are visually distinct to a pixel metric") {
  auto model = geometry::build_toy_3dmm(7, 642, 16, 8);
  Rng rng(11);
  auto spec = sample_spec(rng, 50);
  auto a = render(spec, model, 64);
  auto spec_b = spec;
  spec_b.identity_id += 1;
  spec_b.identity_latent = identity_latent(spec_b.identity_id);
  auto b = render(spec_b, model, 64);
  double diff = 0;
  for (size_t i = 0; i < a.pixels.size(); ++i)
    diff += std::fabs(double(a.pixels[i]) - b.pixels[i]);
  diff /= double(a.pixels.size());
  CHECK(diff > 0.02);
}
