#include "g2/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>

#include "g2/io.hpp"

namespace g2::synth {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<float> identity_latent(int identity_id, int dim) {
  require(identity_id >= 0, "identity_latent: negative id");
  Rng rng(0x1DC0DEB0ull ^ (std::uint64_t(identity_id) * 0x9e3779b97f4a7c15ull));
  std::vector<float> l(dim);
  for (auto& v : l) v = float(rng.gaussian());
  return l;
}

std::vector<float> albedo_from_latent(const std::vector<float>& latent,
                                      const geometry::ToyMorphableModel& model) {
  const int dim = int(latent.size());
  require(dim >= 8, "albedo_from_latent: latent too short");
  std::vector<float> out(std::size_t(model.num_vertices) * 3);
  for (int c = 0; c < 3; ++c) {
    const int b = (4 * c) % dim;
    float dx = latent[b], dy = latent[(b + 1) % dim], dz = latent[(b + 2) % dim];
    float dn = std::sqrt(dx * dx + dy * dy + dz * dz) + 1e-6f;
    dx /= dn;
    dy /= dn;
    dz /= dn;
    float phase = float(M_PI) * latent[(b + 3) % dim];
    float freq = 4.0f + 1.8f * std::tanh(latent[(b + 5) % dim]);
    float tint = 0.72f + 0.22f * std::tanh(latent[(b + 7) % dim]);
    for (int v = 0; v < model.num_vertices; ++v) {
      // pattern keyed to the template surface so identity is geometry-free
      const float* p = model.mean_shape.data() + 3 * v;
      float t = freq * (dx * p[0] + dy * p[1] + dz * p[2]) + phase;
      float a = tint * (0.55f + 0.35f * std::sin(t));
      out[std::size_t(v) * 3 + c] = std::clamp(a, 0.05f, 0.98f);
    }
  }
  return out;
}

SyntheticSpec sample_spec(Rng& rng, int identity_pool_size, const SynthConfig& cfg) {
  require(identity_pool_size >= 1, "sample_spec: pool must be >= 1");
  SyntheticSpec s;
  s.identity_id = rng.uniform_int(identity_pool_size);
  s.identity_latent = identity_latent(s.identity_id, cfg.identity_latent_dim);

  auto draw = [&](float sigma) {
    return float(rng.clamped_gaussian(sigma, cfg.clamp_sigmas * sigma));
  };
  s.geom.c_s.resize(16);
  s.geom.c_exp.resize(8);
  for (auto& v : s.geom.c_s) v = draw(cfg.sigma_shape);
  for (auto& v : s.geom.c_exp) v = draw(cfg.sigma_expr);
  s.geom.c_pose[0] = draw(cfg.sigma_rot_xy);
  s.geom.c_pose[1] = draw(cfg.sigma_rot_xy);
  s.geom.c_pose[2] = draw(cfg.sigma_rot_z);
  s.geom.c_pose[3] = draw(cfg.sigma_trans);
  s.geom.c_pose[4] = draw(cfg.sigma_trans);
  s.geom.c_pose[5] = draw(cfg.sigma_logscale);

  for (int c = 0; c < 3; ++c) {
    s.gamma.gamma[c * 9] = float(rng.gaussian(cfg.gamma_dc_mean, cfg.gamma_dc_sigma));
    for (int b = 1; b <= 3; ++b)
      s.gamma.gamma[c * 9 + b] = float(rng.gaussian(0.0, cfg.gamma_lin_sigma));
    for (int b = 4; b <= 8; ++b)
      s.gamma.gamma[c * 9 + b] = float(rng.gaussian(0.0, cfg.gamma_quad_sigma));
  }

  for (auto& v : s.nuisance.background_color) v = float(rng.uniform(0.05, 0.95));
  s.nuisance.hair_band_params[0] = float(rng.uniform(0.35, 0.70));   // center y
  s.nuisance.hair_band_params[1] = float(rng.uniform(0.50, 0.72));   // inner radius
  s.nuisance.hair_band_params[2] = float(rng.uniform(0.06, 0.22));   // thickness
  s.nuisance.hair_band_params[3] = float(rng.uniform(0.10, 0.55));   // gray level
  return s;
}

namespace {

struct PosedMesh {
  std::vector<float> verts;   // view-space [V*3]
  std::vector<float> colors;  // [V*3]
};

PosedMesh pose_and_shade(const SyntheticSpec& spec,
                         const geometry::ToyMorphableModel& model) {
  auto shaped = geometry::compute_shape(model, spec.geom);
  const auto& pose = spec.geom.c_pose;
  float sa = std::sin(pose[0]), ca = std::cos(pose[0]);
  float sb = std::sin(pose[1]), cb = std::cos(pose[1]);
  float sc = std::sin(pose[2]), cc = std::cos(pose[2]);
  float r[3][3] = {{cc * cb, cc * sb * sa - sc * ca, cc * sb * ca + sc * sa},
                   {sc * cb, sc * sb * sa + cc * ca, sc * sb * ca - cc * sa},
                   {-sb, cb * sa, cb * ca}};
  float s = std::exp(pose[5]);

  PosedMesh out;
  out.verts.resize(shaped.size());
  for (int v = 0; v < model.num_vertices; ++v) {
    const float* p = shaped.data() + 3 * v;
    for (int k = 0; k < 3; ++k)
      out.verts[3 * v + k] = s * (r[k][0] * p[0] + r[k][1] * p[1] + r[k][2] * p[2]);
    out.verts[3 * v] += pose[3];
    out.verts[3 * v + 1] += pose[4];
  }
  auto normals = geometry::compute_vertex_normals(model, out.verts);
  auto albedo = albedo_from_latent(spec.identity_latent, model);
  out.colors = geometry::compute_color(model, normals, spec.gamma, albedo);
  return out;
}

}  // namespace

ImageTensor render_with_mask(const SyntheticSpec& spec,
                             const geometry::ToyMorphableModel& model, int resolution,
                             std::vector<std::uint8_t>* face_mask) {
  require(resolution >= 8, "render: resolution too small");
  const int R = resolution;
  ImageTensor img(R);
  if (face_mask) face_mask->assign(std::size_t(R) * R, 0);

  // background, then the hair band ring behind the face
  const auto& bg = spec.nuisance.background_color;
  const auto& hb = spec.nuisance.hair_band_params;
  for (int y = 0; y < R; ++y)
    for (int x = 0; x < R; ++x) {
      float nx = (x + 0.5f) / R * 2.0f - 1.0f;
      float ny = 1.0f - (y + 0.5f) / R * 2.0f;
      float col[3] = {bg[0], bg[1], bg[2]};
      float dx = nx, dy = ny - hb[0];
      float dist = std::sqrt(dx * dx + dy * dy);
      if (dist >= hb[1] && dist <= hb[1] + hb[2] && ny > -0.1f) {
        col[0] = hb[3] * 0.85f;
        col[1] = hb[3] * 0.92f;
        col[2] = hb[3];
      }
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = 2.0f * col[c] - 1.0f;
    }

  PosedMesh mesh = pose_and_shade(spec, model);
  std::vector<float> zbuf(std::size_t(R) * R, -1e30f);

  const int T = model.num_triangles();
  for (int t = 0; t < T; ++t) {
    int i0 = model.triangles[3 * t], i1 = model.triangles[3 * t + 1],
        i2 = model.triangles[3 * t + 2];
    const float* p0 = mesh.verts.data() + 3 * i0;
    const float* p1 = mesh.verts.data() + 3 * i1;
    const float* p2 = mesh.verts.data() + 3 * i2;
    // pixel coordinates; +y up in world maps to row 0 at the top
    auto px = [&](const float* p) { return (p[0] + 1.0f) * 0.5f * R - 0.5f; };
    auto py = [&](const float* p) { return (1.0f - p[1]) * 0.5f * R - 0.5f; };
    double x0 = px(p0), y0 = py(p0), x1 = px(p1), y1 = py(p1), x2 = px(p2), y2 = py(p2);
    double area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0);
    if (area == 0.0) continue;

    int xmin = std::max(0, int(std::floor(std::min({x0, x1, x2}))));
    int xmax = std::min(R - 1, int(std::ceil(std::max({x0, x1, x2}))));
    int ymin = std::max(0, int(std::floor(std::min({y0, y1, y2}))));
    int ymax = std::min(R - 1, int(std::ceil(std::max({y0, y1, y2}))));
    for (int y = ymin; y <= ymax; ++y)
      for (int x = xmin; x <= xmax; ++x) {
        double w0 = ((x1 - double(x)) * (y2 - y) - (x2 - double(x)) * (y1 - y)) / area;
        double w1 = ((x2 - double(x)) * (y0 - y) - (x0 - double(x)) * (y2 - y)) / area;
        double w2 = 1.0 - w0 - w1;
        if (w0 < 0 || w1 < 0 || w2 < 0) continue;
        float z = float(w0 * p0[2] + w1 * p1[2] + w2 * p2[2]);
        float& zb = zbuf[std::size_t(y) * R + x];
        if (z <= zb) continue;
        zb = z;
        if (face_mask) (*face_mask)[std::size_t(y) * R + x] = 1;
        for (int c = 0; c < 3; ++c) {
          double col = w0 * mesh.colors[3 * i0 + c] + w1 * mesh.colors[3 * i1 + c] +
                       w2 * mesh.colors[3 * i2 + c];
          img.at(c, y, x) = 2.0f * float(col) - 1.0f;
        }
      }
  }
  return img;
}

ImageTensor render(const SyntheticSpec& spec, const geometry::ToyMorphableModel& model,
                   int resolution) {
  return render_with_mask(spec, model, resolution, nullptr);
}

namespace {

ImageTensor quantized(const ImageTensor& img) {
  ImageTensor out(img.res);
  for (size_t i = 0; i < img.pixels.size(); ++i)
    out.pixels[i] = io::byte_to_float(io::float_to_byte(img.pixels[i]));
  return out;
}

}  // namespace

Dataset make_dataset(int n, std::uint64_t seed, int pool, int resolution,
                     const geometry::ToyMorphableModel& model, int n_pairs,
                     const SynthConfig& cfg) {
  require(n >= 1, "make_dataset: n must be >= 1");
  require(pool >= 2, "make_dataset: pool must be >= 2");
  Dataset ds;
  ds.pool = pool;
  ds.resolution = resolution;
  ds.seed = seed;
  ds.model_seed = model.rng_seed;
  ds.d_s = model.d_s;
  ds.d_e = model.d_e;
  ds.num_vertices = model.num_vertices;

  Rng rng(seed);
  ds.samples.reserve(n);
  for (int i = 0; i < n; ++i) {
    SyntheticSample smp;
    smp.spec = sample_spec(rng, pool, cfg);
    smp.identity_id = smp.spec.identity_id;
    // images pass through the 8-bit mapping so in-memory training sees
    // exactly what the PNG files decode to
    smp.image = quantized(render(smp.spec, model, resolution));
    ds.samples.push_back(std::move(smp));
  }

  std::map<int, std::vector<int>> by_id;
  for (int i = 0; i < n; ++i) by_id[ds.samples[i].identity_id].push_back(i);
  std::vector<int> multi;
  for (auto& [id, idxs] : by_id)
    if (idxs.size() >= 2) multi.push_back(id);

  if (!multi.empty()) {
    for (int k = 0; k < n_pairs; ++k) {
      const auto& idxs = by_id[multi[rng.uniform_int(int(multi.size()))]];
      int a = rng.uniform_int(int(idxs.size()));
      int b = rng.uniform_int(int(idxs.size()) - 1);
      if (b >= a) ++b;
      ds.positive_pairs.emplace_back(idxs[a], idxs[b]);
    }
  }
  int guard = 0;
  while (int(ds.negative_pairs.size()) < n_pairs && guard < 100 * n_pairs) {
    ++guard;
    int a = rng.uniform_int(n), b = rng.uniform_int(n);
    if (ds.samples[a].identity_id == ds.samples[b].identity_id) continue;
    ds.negative_pairs.emplace_back(a, b);
  }
  return ds;
}

void write_dataset(const Dataset& ds, const geometry::ToyMorphableModel& model,
                   const std::string& dir) {
  fs::create_directories(fs::path(dir) / "images");
  geometry::save_model(model, (fs::path(dir) / "model.g2mm").string());

  json j;
  j["version"] = 1;
  j["seed"] = ds.seed;
  j["pool"] = ds.pool;
  j["resolution"] = ds.resolution;
  j["model"] = {{"seed", ds.model_seed},
                {"num_vertices", ds.num_vertices},
                {"d_s", ds.d_s},
                {"d_e", ds.d_e}};
  json samples = json::array();
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    char name[32];
    std::snprintf(name, sizeof name, "images/%05zu.png", i);
    io::save_png((fs::path(dir) / name).string(), s.image);
    json e;
    e["file"] = name;
    e["identity_id"] = s.identity_id;
    e["identity_latent"] = s.spec.identity_latent;
    e["c_s"] = s.spec.geom.c_s;
    e["c_exp"] = s.spec.geom.c_exp;
    e["c_pose"] = s.spec.geom.c_pose;
    e["gamma"] = s.spec.gamma.gamma;
    e["background"] = s.spec.nuisance.background_color;
    e["hair_band"] = s.spec.nuisance.hair_band_params;
    samples.push_back(std::move(e));
  }
  j["samples"] = std::move(samples);
  j["positive_pairs"] = ds.positive_pairs;
  j["negative_pairs"] = ds.negative_pairs;

  std::ofstream os(fs::path(dir) / "manifest.json");
  if (!os) throw std::runtime_error("write_dataset: cannot write manifest in " + dir);
  os << j.dump(1) << "\n";
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream is(fs::path(dir) / "manifest.json");
  if (!is) throw std::runtime_error("load_dataset: no manifest in " + dir);
  json j = json::parse(is);

  Dataset ds;
  ds.seed = j.at("seed").get<std::uint64_t>();
  ds.pool = j.at("pool").get<int>();
  ds.resolution = j.at("resolution").get<int>();
  ds.model_seed = j.at("model").at("seed").get<std::uint64_t>();
  ds.num_vertices = j.at("model").at("num_vertices").get<int>();
  ds.d_s = j.at("model").at("d_s").get<int>();
  ds.d_e = j.at("model").at("d_e").get<int>();

  for (const auto& e : j.at("samples")) {
    SyntheticSample s;
    s.identity_id = e.at("identity_id").get<int>();
    s.spec.identity_id = s.identity_id;
    s.spec.identity_latent = e.at("identity_latent").get<std::vector<float>>();
    s.spec.geom.c_s = e.at("c_s").get<std::vector<float>>();
    s.spec.geom.c_exp = e.at("c_exp").get<std::vector<float>>();
    auto pose = e.at("c_pose").get<std::vector<float>>();
    std::copy_n(pose.begin(), 6, s.spec.geom.c_pose.begin());
    auto gam = e.at("gamma").get<std::vector<float>>();
    std::copy_n(gam.begin(), 27, s.spec.gamma.gamma.begin());
    auto bgv = e.at("background").get<std::vector<float>>();
    std::copy_n(bgv.begin(), 3, s.spec.nuisance.background_color.begin());
    auto hbv = e.at("hair_band").get<std::vector<float>>();
    std::copy_n(hbv.begin(), 4, s.spec.nuisance.hair_band_params.begin());
    s.image = io::load_png((fs::path(dir) / e.at("file").get<std::string>()).string());
    ds.samples.push_back(std::move(s));
  }
  for (const auto& p : j.at("positive_pairs"))
    ds.positive_pairs.emplace_back(p[0].get<int>(), p[1].get<int>());
  for (const auto& p : j.at("negative_pairs"))
    ds.negative_pairs.emplace_back(p[0].get<int>(), p[1].get<int>());
  return ds;
}

std::uint64_t manifest_digest(const std::string& dir) {
  std::ifstream is(fs::path(dir) / "manifest.json", std::ios::binary);
  if (!is) throw std::runtime_error("manifest_digest: no manifest in " + dir);
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return fnv1a(bytes);
}

}  // namespace g2::synth
