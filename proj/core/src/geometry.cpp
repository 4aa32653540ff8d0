#include "g2/geometry.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

namespace g2::geometry {

namespace {

struct MeshTopo {
  std::vector<float> verts;  // [V*3]
  std::vector<int> tris;     // [T*3]
};

// Icosahedron subdivided until the vertex count reaches the request.
// Levels: 12, 42, 162, 642, 2562 vertices.
MeshTopo icosphere(int min_vertices) {
  const float t = (1.0f + std::sqrt(5.0f)) / 2.0f;
  std::vector<std::array<float, 3>> v = {
      {-1, t, 0}, {1, t, 0},  {-1, -t, 0}, {1, -t, 0},
      {0, -1, t}, {0, 1, t},  {0, -1, -t}, {0, 1, -t},
      {t, 0, -1}, {t, 0, 1},  {-t, 0, -1}, {-t, 0, 1}};
  std::vector<std::array<int, 3>> f = {
      {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
      {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
      {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
      {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  auto normalize = [](std::array<float, 3>& p) {
    float n = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
    p = {p[0] / n, p[1] / n, p[2] / n};
  };
  for (auto& p : v) normalize(p);

  while (int(v.size()) < min_vertices) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      std::array<float, 3> m = {(v[a][0] + v[b][0]) / 2, (v[a][1] + v[b][1]) / 2,
                                (v[a][2] + v[b][2]) / 2};
      normalize(m);
      v.push_back(m);
      int idx = int(v.size()) - 1;
      midpoint.emplace(key, idx);
      return idx;
    };
    std::vector<std::array<int, 3>> nf;
    nf.reserve(f.size() * 4);
    for (auto& tri : f) {
      int a = mid(tri[0], tri[1]), b = mid(tri[1], tri[2]), c = mid(tri[2], tri[0]);
      nf.push_back({tri[0], a, c});
      nf.push_back({tri[1], b, a});
      nf.push_back({tri[2], c, b});
      nf.push_back({a, b, c});
    }
    f = std::move(nf);
  }

  MeshTopo out;
  out.verts.reserve(v.size() * 3);
  for (auto& p : v) {
    out.verts.push_back(p[0]);
    out.verts.push_back(p[1]);
    out.verts.push_back(p[2]);
  }
  out.tris.reserve(f.size() * 3);
  for (auto& tri : f) {
    out.tris.push_back(tri[0]);
    out.tris.push_back(tri[1]);
    out.tris.push_back(tri[2]);
  }
  return out;
}

// Deform the unit sphere into a rough head: narrowed width, elongated jaw,
// flattened depth, nose and brow bumps on the front.
void face_deform(std::vector<float>& verts) {
  int n = int(verts.size() / 3);
  for (int i = 0; i < n; ++i) {
    float x = verts[3 * i], y = verts[3 * i + 1], z = verts[3 * i + 2];
    x *= 0.80f;
    y *= (y < 0 ? 1.15f : 1.0f);
    z *= 0.75f;
    if (z > 0) {
      float nose = std::exp(-(x * x / 0.02f + (y + 0.12f) * (y + 0.12f) / 0.045f));
      z += 0.28f * nose * z;
      float brow = std::exp(-((y - 0.35f) * (y - 0.35f)) / 0.02f);
      z += 0.05f * brow * z;
    }
    verts[3 * i] = x;
    verts[3 * i + 1] = y;
    verts[3 * i + 2] = z;
  }
}

// Deterministic farthest-point sampling over front-facing vertices.
std::vector<int> pick_landmarks(const std::vector<float>& verts, int count) {
  int n = int(verts.size() / 3);
  std::vector<int> front;
  float zmax = -1e9f;
  for (int i = 0; i < n; ++i) zmax = std::max(zmax, verts[3 * i + 2]);
  for (int i = 0; i < n; ++i)
    if (verts[3 * i + 2] > 0.25f * zmax) front.push_back(i);
  if (int(front.size()) < count) {
    // coarse meshes: fall back to the most front-facing vertices
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return verts[3 * a + 2] > verts[3 * b + 2];
    });
    front.assign(order.begin(), order.begin() + count);
    std::sort(front.begin(), front.end());
  }

  auto dist2 = [&](int a, int b) {
    float dx = verts[3 * a] - verts[3 * b];
    float dy = verts[3 * a + 1] - verts[3 * b + 1];
    float dz = verts[3 * a + 2] - verts[3 * b + 2];
    return dx * dx + dy * dy + dz * dz;
  };

  int seed = front[0];
  for (int i : front)
    if (verts[3 * i + 2] > verts[3 * seed + 2]) seed = i;

  std::vector<int> picked = {seed};
  std::vector<float> best(front.size());
  for (size_t k = 0; k < front.size(); ++k) best[k] = dist2(front[k], seed);
  while (int(picked.size()) < count) {
    int arg = 0;
    for (size_t k = 1; k < front.size(); ++k)
      if (best[k] > best[arg]) arg = int(k);
    picked.push_back(front[arg]);
    for (size_t k = 0; k < front.size(); ++k)
      best[k] = std::min(best[k], dist2(front[k], front[arg]));
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

using MatX = Eigen::MatrixXf;

// Candidate columns are smooth low-frequency deformation fields over the
// template (sums of directional waves per axis), so each basis direction
// moves the surface coherently instead of as per-vertex noise. Joint QR
// then enforces exact orthonormality.
MatX orthonormal_basis(Rng& rng, const std::vector<float>& template_verts, int cols) {
  const int nv = int(template_verts.size() / 3);
  const int rows = nv * 3;
  MatX a(rows, cols);
  for (int c = 0; c < cols; ++c) {
    for (int axis = 0; axis < 3; ++axis) {
      struct Wave {
        float dx, dy, dz, freq, phase, amp;
      };
      Wave waves[3];
      for (auto& w : waves) {
        float dx = float(rng.gaussian()), dy = float(rng.gaussian()),
              dz = float(rng.gaussian());
        float dn = std::sqrt(dx * dx + dy * dy + dz * dz) + 1e-9f;
        w = {dx / dn, dy / dn, dz / dn, float(rng.uniform(0.6, 2.8)),
             float(rng.uniform(0.0, 2.0 * M_PI)), float(rng.gaussian())};
      }
      for (int v = 0; v < nv; ++v) {
        const float* p = template_verts.data() + 3 * v;
        float s = 0;
        for (const auto& w : waves)
          s += w.amp * std::sin(w.freq * (w.dx * p[0] + w.dy * p[1] + w.dz * p[2]) +
                                w.phase);
        a(3 * v + axis, c) = s;
      }
    }
  }
  Eigen::HouseholderQR<MatX> qr(a);
  MatX q = qr.householderQ() * MatX::Identity(rows, cols);
  // fix column signs for reproducibility
  for (int c = 0; c < cols; ++c)
    if (q(0, c) < 0) q.col(c) = -q.col(c);
  return q;
}

void rotation_zyx(const std::array<float, 6>& pose, float r[3][3]) {
  float ca = std::cos(pose[0]), sa = std::sin(pose[0]);
  float cb = std::cos(pose[1]), sb = std::sin(pose[1]);
  float cc = std::cos(pose[2]), sc = std::sin(pose[2]);
  // Rz(az) * Ry(ay) * Rx(ax)
  r[0][0] = cc * cb;
  r[0][1] = cc * sb * sa - sc * ca;
  r[0][2] = cc * sb * ca + sc * sa;
  r[1][0] = sc * cb;
  r[1][1] = sc * sb * sa + cc * ca;
  r[1][2] = sc * sb * ca - cc * sa;
  r[2][0] = -sb;
  r[2][1] = cb * sa;
  r[2][2] = cb * ca;
}

}  // namespace

std::vector<float> GeometryCoefficients::flat() const {
  std::vector<float> v;
  v.reserve(dim());
  v.insert(v.end(), c_s.begin(), c_s.end());
  v.insert(v.end(), c_exp.begin(), c_exp.end());
  v.insert(v.end(), c_pose.begin(), c_pose.end());
  return v;
}

GeometryCoefficients GeometryCoefficients::from_flat(const std::vector<float>& v,
                                                     int d_s, int d_e) {
  require(int(v.size()) == d_s + d_e + 6, "GeometryCoefficients: flat size");
  GeometryCoefficients c;
  c.c_s.assign(v.begin(), v.begin() + d_s);
  c.c_exp.assign(v.begin() + d_s, v.begin() + d_s + d_e);
  std::copy_n(v.begin() + d_s + d_e, 6, c.c_pose.begin());
  return c;
}

ToyMorphableModel build_toy_3dmm(std::uint64_t seed, int num_vertices, int d_s,
                                 int d_e) {
  require(num_vertices >= 100, "build_toy_3dmm: num_vertices must be >= 100");
  require(d_s >= 1 && d_e >= 1, "build_toy_3dmm: basis dims must be >= 1");

  MeshTopo topo = icosphere(num_vertices);
  face_deform(topo.verts);

  ToyMorphableModel m;
  m.num_vertices = int(topo.verts.size() / 3);
  m.d_s = d_s;
  m.d_e = d_e;
  m.rng_seed = seed;
  m.mean_shape = std::move(topo.verts);
  m.triangles = std::move(topo.tris);
  m.landmark_indices = pick_landmarks(m.mean_shape, 68);

  // joint QR makes the shape and expression subspaces mutually orthogonal
  Rng rng(seed ^ 0x3d3d3d3dull);
  MatX q = orthonormal_basis(rng, m.mean_shape, d_s + d_e);
  m.shape_basis.resize(std::size_t(m.num_vertices) * 3 * d_s);
  m.expr_basis.resize(std::size_t(m.num_vertices) * 3 * d_e);
  for (int r = 0; r < m.num_vertices * 3; ++r) {
    for (int c = 0; c < d_s; ++c) m.shape_basis[std::size_t(r) * d_s + c] = q(r, c);
    for (int c = 0; c < d_e; ++c)
      m.expr_basis[std::size_t(r) * d_e + c] = q(r, d_s + c);
  }
  return m;
}

std::vector<float> compute_shape(const ToyMorphableModel& model,
                                 const GeometryCoefficients& coeffs) {
  require(int(coeffs.c_s.size()) == model.d_s && int(coeffs.c_exp.size()) == model.d_e,
          "compute_shape: coefficient dims do not match model");
  const int rows = model.num_vertices * 3;
  std::vector<float> out(model.mean_shape);
  for (int r = 0; r < rows; ++r) {
    double acc = 0;
    const float* bs = model.shape_basis.data() + std::size_t(r) * model.d_s;
    for (int c = 0; c < model.d_s; ++c) acc += double(bs[c]) * coeffs.c_s[c];
    const float* be = model.expr_basis.data() + std::size_t(r) * model.d_e;
    for (int c = 0; c < model.d_e; ++c) acc += double(be[c]) * coeffs.c_exp[c];
    out[r] += float(acc);
  }
  return out;
}

std::vector<float> compute_vertex_normals(const ToyMorphableModel& model,
                                          const std::vector<float>& vertices) {
  require(int(vertices.size()) == model.num_vertices * 3,
          "compute_vertex_normals: vertex count");
  std::vector<float> acc(vertices.size(), 0.0f);
  const int T = model.num_triangles();
  for (int t = 0; t < T; ++t) {
    int i0 = model.triangles[3 * t], i1 = model.triangles[3 * t + 1],
        i2 = model.triangles[3 * t + 2];
    const float* p0 = vertices.data() + 3 * i0;
    const float* p1 = vertices.data() + 3 * i1;
    const float* p2 = vertices.data() + 3 * i2;
    float e1[3] = {p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]};
    float e2[3] = {p2[0] - p0[0], p2[1] - p0[1], p2[2] - p0[2]};
    // cross product length is twice the face area: area weighting for free
    float cx = e1[1] * e2[2] - e1[2] * e2[1];
    float cy = e1[2] * e2[0] - e1[0] * e2[2];
    float cz = e1[0] * e2[1] - e1[1] * e2[0];
    for (int v : {i0, i1, i2}) {
      acc[3 * v] += cx;
      acc[3 * v + 1] += cy;
      acc[3 * v + 2] += cz;
    }
  }
  for (int v = 0; v < model.num_vertices; ++v) {
    float nx = acc[3 * v], ny = acc[3 * v + 1], nz = acc[3 * v + 2];
    float n = std::sqrt(nx * nx + ny * ny + nz * nz);
    if (n < 1e-12f) {
      acc[3 * v] = 0.0f;
      acc[3 * v + 1] = 0.0f;
      acc[3 * v + 2] = 1.0f;
    } else {
      acc[3 * v] = nx / n;
      acc[3 * v + 1] = ny / n;
      acc[3 * v + 2] = nz / n;
    }
  }
  return acc;
}

std::array<float, 9> sh_basis(float x, float y, float z) {
  return {0.282095f,
          0.488603f * y,
          0.488603f * z,
          0.488603f * x,
          1.092548f * x * y,
          1.092548f * y * z,
          0.315392f * (3.0f * z * z - 1.0f),
          1.092548f * x * z,
          0.546274f * (x * x - y * y)};
}

std::vector<float> compute_color(const ToyMorphableModel& model,
                                 const std::vector<float>& normals,
                                 const IlluminationCoefficients& gamma,
                                 const std::vector<float>& albedo) {
  require(int(normals.size()) == model.num_vertices * 3, "compute_color: normals size");
  require(albedo.size() == normals.size(), "compute_color: albedo size");
  std::vector<float> out(normals.size());
  for (int v = 0; v < model.num_vertices; ++v) {
    auto sh = sh_basis(normals[3 * v], normals[3 * v + 1], normals[3 * v + 2]);
    for (int c = 0; c < 3; ++c) {
      double shade = 0;
      for (int b = 0; b < 9; ++b) shade += double(gamma.gamma[c * 9 + b]) * sh[b];
      float col = albedo[3 * v + c] * float(shade);
      out[3 * v + c] = std::clamp(col, 0.0f, 1.0f);
    }
  }
  return out;
}

std::vector<float> project_landmarks(const ToyMorphableModel& model,
                                     const std::vector<float>& vertices,
                                     const std::array<float, 6>& c_pose) {
  require(int(vertices.size()) == model.num_vertices * 3,
          "project_landmarks: vertex count");
  float r[3][3];
  rotation_zyx(c_pose, r);
  float s = std::exp(c_pose[5]);
  std::vector<float> out;
  out.reserve(model.landmark_indices.size() * 2);
  for (int idx : model.landmark_indices) {
    const float* p = vertices.data() + 3 * idx;
    float x = r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2];
    float y = r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2];
    out.push_back(s * x + c_pose[3]);
    out.push_back(s * y + c_pose[4]);
  }
  return out;
}

GeometryAwareEmbedding assemble_geometry_embedding(const std::vector<float>& e_id,
                                                   const GeometryCoefficients& coeffs) {
  require(!e_id.empty(), "assemble_geometry_embedding: empty identity embedding");
  GeometryAwareEmbedding out;
  out.e_g.reserve(e_id.size() + coeffs.dim());
  out.e_g.insert(out.e_g.end(), e_id.begin(), e_id.end());
  auto c = coeffs.flat();
  out.e_g.insert(out.e_g.end(), c.begin(), c.end());
  return out;
}

// ---- estimator ----

void GeometryEstimatorState::init(Rng& rng, int resolution_, int d_s_, int d_e_) {
  resolution = resolution_;
  d_s = d_s_;
  d_e = d_e_;
  frozen = false;
  convs.clear();
  convs.emplace_back(rng, 3, 24, 3, 2, 1);
  convs.emplace_back(rng, 24, 32, 3, 2, 1);
  convs.emplace_back(rng, 32, 48, 3, 2, 1);
  convs.emplace_back(rng, 48, 64, 3, 2, 1);
  fc1 = nn::LinearLayer::he(rng, 64, 96);
  fc2 = nn::LinearLayer(rng, 96, out_dim(), 0.05f);
}

nn::Ten GeometryEstimatorState::forward(const nn::Ten& images) const {
  require(images->shape.size() == 4 && images->shape[1] == 3 &&
              images->shape[2] == resolution && images->shape[3] == resolution,
          "estimator: image shape mismatch");
  nn::Ten h = images;
  for (const auto& c : convs) h = nn::silu(c.forward(h));
  h = nn::global_avg_pool(h);
  h = nn::silu(fc1.forward(h));
  return fc2.forward(h);
}

void GeometryEstimatorState::collect(nn::ParamMap& out, const std::string& prefix) const {
  for (size_t i = 0; i < convs.size(); ++i)
    convs[i].collect(out, prefix + ".conv" + std::to_string(i));
  fc1.collect(out, prefix + ".fc1");
  fc2.collect(out, prefix + ".fc2");
}

void GeometryEstimatorState::freeze() {
  frozen = true;
  nn::ParamMap params;
  collect(params, "e3d");
  for (auto& [name, p] : params) nn::set_trainable(p, false);
}

EstimatedGeometry estimate_geometry(const ImageTensor& image,
                                    const GeometryEstimatorState& estimator) {
  require(estimator.frozen, "estimate_geometry: estimator must be frozen");
  auto out = estimator.forward(nn::batch_images({image}));
  EstimatedGeometry eg;
  std::vector<float> head(out->val.begin(),
                          out->val.begin() + estimator.d_s + estimator.d_e + 6);
  eg.coeffs = GeometryCoefficients::from_flat(head, estimator.d_s, estimator.d_e);
  std::copy_n(out->val.begin() + estimator.d_s + estimator.d_e + 6, 27,
              eg.gamma.gamma.begin());
  return eg;
}

GeometryCoefficients estimate_coefficients(const ImageTensor& image,
                                           const GeometryEstimatorState& estimator) {
  return estimate_geometry(image, estimator).coeffs;
}

// ---- G2MM container ----

namespace {

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}
std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), 8);
}
std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}
void write_f32s(std::ostream& os, const std::vector<float>& v) {
  write_u64(os, v.size());
  os.write(reinterpret_cast<const char*>(v.data()), std::streamsize(v.size() * 4));
}
std::vector<float> read_f32s(std::istream& is) {
  std::vector<float> v(read_u64(is));
  is.read(reinterpret_cast<char*>(v.data()), std::streamsize(v.size() * 4));
  return v;
}
void write_i32s(std::ostream& os, const std::vector<int>& v) {
  write_u64(os, v.size());
  for (int x : v) write_u32(os, std::uint32_t(x));
}
std::vector<int> read_i32s(std::istream& is) {
  std::vector<int> v(read_u64(is));
  for (auto& x : v) x = int(read_u32(is));
  return v;
}

constexpr std::uint32_t kModelVersion = 1;

}  // namespace

void save_model(const ToyMorphableModel& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_model: cannot open " + path);
  os.write("G2MM", 4);
  write_u32(os, kModelVersion);
  write_u32(os, std::uint32_t(model.num_vertices));
  write_u32(os, std::uint32_t(model.d_s));
  write_u32(os, std::uint32_t(model.d_e));
  write_u64(os, model.rng_seed);
  write_f32s(os, model.mean_shape);
  write_f32s(os, model.shape_basis);
  write_f32s(os, model.expr_basis);
  write_i32s(os, model.triangles);
  write_i32s(os, model.landmark_indices);
  if (!os) throw std::runtime_error("save_model: write failed for " + path);
}

ToyMorphableModel load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_model: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (std::memcmp(magic, "G2MM", 4) != 0)
    throw std::runtime_error("load_model: bad magic in " + path);
  if (read_u32(is) != kModelVersion)
    throw std::runtime_error("load_model: unsupported version in " + path);
  ToyMorphableModel m;
  m.num_vertices = int(read_u32(is));
  m.d_s = int(read_u32(is));
  m.d_e = int(read_u32(is));
  m.rng_seed = read_u64(is);
  m.mean_shape = read_f32s(is);
  m.shape_basis = read_f32s(is);
  m.expr_basis = read_f32s(is);
  m.triangles = read_i32s(is);
  m.landmark_indices = read_i32s(is);
  if (!is) throw std::runtime_error("load_model: truncated file " + path);
  return m;
}

}  // namespace g2::geometry
