#include <cmath>

#include "g2/geometry.hpp"

// Differentiable geometry primitives. Shape evaluation is expressed with
// matmul against the constant bases; normals, SH shading and landmark
// projection are fused ops with hand-derived backward passes (checked by
// finite differences in the test suite).

namespace g2::geometry::ops {

using nn::Ten;

Ten shape_from_coeffs(const ToyMorphableModel& model, const Ten& c_s,
                      const Ten& c_exp) {
  const int rows = model.num_vertices * 3;
  require(c_s->shape.size() == 2 && c_s->shape[1] == model.d_s,
          "shape_from_coeffs: c_s dims");
  require(c_exp->shape.size() == 2 && c_exp->shape[1] == model.d_e,
          "shape_from_coeffs: c_exp dims");
  auto a_s = nn::constant({rows, model.d_s}, model.shape_basis);
  auto a_e = nn::constant({rows, model.d_e}, model.expr_basis);
  auto mean = nn::constant({rows}, model.mean_shape);
  auto s = nn::add(nn::matmul(c_s, a_s, /*transpose_b=*/true),
                   nn::matmul(c_exp, a_e, /*transpose_b=*/true));
  return nn::add_bias_cols(s, mean);
}

Ten vertex_normals(const ToyMorphableModel& model, const Ten& verts) {
  const int V = model.num_vertices;
  require(verts->shape.size() == 2 && verts->shape[1] == V * 3,
          "vertex_normals: vertex tensor dims");
  const int N = verts->shape[0];
  const int T = model.num_triangles();
  const float eps = 1e-12f;

  // raw area-weighted accumulations, kept for the backward pass
  auto raw = std::make_shared<std::vector<float>>(std::size_t(N) * V * 3, 0.0f);
  std::vector<float> out(std::size_t(N) * V * 3);
  for (int n = 0; n < N; ++n) {
    const float* vtx = verts->val.data() + std::size_t(n) * V * 3;
    float* u = raw->data() + std::size_t(n) * V * 3;
    for (int t = 0; t < T; ++t) {
      int i0 = model.triangles[3 * t], i1 = model.triangles[3 * t + 1],
          i2 = model.triangles[3 * t + 2];
      const float* p0 = vtx + 3 * i0;
      const float* p1 = vtx + 3 * i1;
      const float* p2 = vtx + 3 * i2;
      float e1[3] = {p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]};
      float e2[3] = {p2[0] - p0[0], p2[1] - p0[1], p2[2] - p0[2]};
      float c[3] = {e1[1] * e2[2] - e1[2] * e2[1], e1[2] * e2[0] - e1[0] * e2[2],
                    e1[0] * e2[1] - e1[1] * e2[0]};
      for (int vi : {i0, i1, i2})
        for (int k = 0; k < 3; ++k) u[3 * vi + k] += c[k];
    }
    float* o = out.data() + std::size_t(n) * V * 3;
    for (int v = 0; v < V; ++v) {
      float nx = u[3 * v], ny = u[3 * v + 1], nz = u[3 * v + 2];
      float len = std::sqrt(nx * nx + ny * ny + nz * nz);
      if (len < eps) {
        o[3 * v] = 0.0f;
        o[3 * v + 1] = 0.0f;
        o[3 * v + 2] = 1.0f;
      } else {
        o[3 * v] = nx / len;
        o[3 * v + 1] = ny / len;
        o[3 * v + 2] = nz / len;
      }
    }
  }

  Ten pv = verts;
  const auto* mdl = &model;  // models outlive training graphs
  return nn::op_node({N, V * 3}, std::move(out), {verts}, [pv, raw, mdl, N, V, T,
                                                           eps](nn::Node& nd) {
    if (!pv->needs_grad) return;
    pv->ensure_grad();
    for (int n = 0; n < N; ++n) {
      const float* u = raw->data() + std::size_t(n) * V * 3;
      const float* g = nd.grad.data() + std::size_t(n) * V * 3;
      // dL/du through the normalization
      std::vector<float> du(std::size_t(V) * 3, 0.0f);
      for (int v = 0; v < V; ++v) {
        float ux = u[3 * v], uy = u[3 * v + 1], uz = u[3 * v + 2];
        float len2 = ux * ux + uy * uy + uz * uz;
        float len = std::sqrt(len2);
        if (len < eps) continue;  // fallback normal: no gradient
        float gx = g[3 * v], gy = g[3 * v + 1], gz = g[3 * v + 2];
        float dot = ux * gx + uy * gy + uz * gz;
        float inv = 1.0f / len, inv3 = inv / len2;
        du[3 * v] = gx * inv - ux * dot * inv3;
        du[3 * v + 1] = gy * inv - uy * dot * inv3;
        du[3 * v + 2] = gz * inv - uz * dot * inv3;
      }
      // distribute through the cross products
      const float* vtx = pv->val.data() + std::size_t(n) * V * 3;
      float* gv = pv->grad.data() + std::size_t(n) * V * 3;
      for (int t = 0; t < T; ++t) {
        int i0 = mdl->triangles[3 * t], i1 = mdl->triangles[3 * t + 1],
            i2 = mdl->triangles[3 * t + 2];
        const float* p0 = vtx + 3 * i0;
        const float* p1 = vtx + 3 * i1;
        const float* p2 = vtx + 3 * i2;
        float e1[3] = {p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]};
        float e2[3] = {p2[0] - p0[0], p2[1] - p0[1], p2[2] - p0[2]};
        // the face term reaches all three vertex normals
        float gc[3] = {du[3 * i0] + du[3 * i1] + du[3 * i2],
                       du[3 * i0 + 1] + du[3 * i1 + 1] + du[3 * i2 + 1],
                       du[3 * i0 + 2] + du[3 * i1 + 2] + du[3 * i2 + 2]};
        // c = e1 x e2:  dL/de1 = e2 x gc,  dL/de2 = gc x e1
        float de1[3] = {e2[1] * gc[2] - e2[2] * gc[1], e2[2] * gc[0] - e2[0] * gc[2],
                        e2[0] * gc[1] - e2[1] * gc[0]};
        float de2[3] = {gc[1] * e1[2] - gc[2] * e1[1], gc[2] * e1[0] - gc[0] * e1[2],
                        gc[0] * e1[1] - gc[1] * e1[0]};
        for (int k = 0; k < 3; ++k) {
          gv[3 * i0 + k] -= de1[k] + de2[k];
          gv[3 * i1 + k] += de1[k];
          gv[3 * i2 + k] += de2[k];
        }
      }
    }
  });
}

Ten sh_colors(const Ten& normals, const Ten& gamma) {
  require(normals->shape.size() == 2 && normals->shape[1] % 3 == 0,
          "sh_colors: normals must be [N,3V]");
  require(gamma->shape.size() == 2 && gamma->shape[1] == 27,
          "sh_colors: gamma must be [N,27]");
  require(normals->shape[0] == gamma->shape[0], "sh_colors: batch mismatch");
  const int N = normals->shape[0];
  const int V = normals->shape[1] / 3;

  std::vector<float> out(std::size_t(N) * V * 3);
  for (int n = 0; n < N; ++n) {
    const float* nr = normals->val.data() + std::size_t(n) * V * 3;
    const float* gm = gamma->val.data() + std::size_t(n) * 27;
    float* o = out.data() + std::size_t(n) * V * 3;
    for (int v = 0; v < V; ++v) {
      auto sh = sh_basis(nr[3 * v], nr[3 * v + 1], nr[3 * v + 2]);
      for (int c = 0; c < 3; ++c) {
        double acc = 0;
        for (int b = 0; b < 9; ++b) acc += double(gm[c * 9 + b]) * sh[b];
        o[3 * v + c] = float(acc);
      }
    }
  }

  Ten pn = normals, pg = gamma;
  return nn::op_node({N, V * 3}, std::move(out), {normals, gamma},
                     [pn, pg, N, V](nn::Node& nd) {
    const bool need_dn = pn->needs_grad, need_dg = pg->needs_grad;
    if (need_dn) pn->ensure_grad();
    if (need_dg) pg->ensure_grad();
    for (int n = 0; n < N; ++n) {
      const float* nr = pn->val.data() + std::size_t(n) * V * 3;
      const float* gm = pg->val.data() + std::size_t(n) * 27;
      const float* g = nd.grad.data() + std::size_t(n) * V * 3;
      float* dn = need_dn ? pn->grad.data() + std::size_t(n) * V * 3 : nullptr;
      float* dg = need_dg ? pg->grad.data() + std::size_t(n) * 27 : nullptr;
      for (int v = 0; v < V; ++v) {
        float x = nr[3 * v], y = nr[3 * v + 1], z = nr[3 * v + 2];
        auto sh = sh_basis(x, y, z);
        // dPhi_b/d(x,y,z)
        const float dsh[9][3] = {
            {0, 0, 0},
            {0, 0.488603f, 0},
            {0, 0, 0.488603f},
            {0.488603f, 0, 0},
            {1.092548f * y, 1.092548f * x, 0},
            {0, 1.092548f * z, 1.092548f * y},
            {0, 0, 0.315392f * 6.0f * z},
            {1.092548f * z, 0, 1.092548f * x},
            {0.546274f * 2.0f * x, -0.546274f * 2.0f * y, 0}};
        for (int c = 0; c < 3; ++c) {
          float gv = g[3 * v + c];
          if (gv == 0.0f) continue;
          for (int b = 0; b < 9; ++b) {
            if (need_dg) dg[c * 9 + b] += gv * sh[b];
            if (need_dn) {
              float w = gv * gm[c * 9 + b];
              dn[3 * v] += w * dsh[b][0];
              dn[3 * v + 1] += w * dsh[b][1];
              dn[3 * v + 2] += w * dsh[b][2];
            }
          }
        }
      }
    }
  });
}

namespace {

struct RotRows {
  // first two rows of Rz*Ry*Rx and their angle derivatives
  float r[2][3];
  float da[2][3], db[2][3], dc[2][3];
};

RotRows rot_rows(float a, float b, float c) {
  float sa = std::sin(a), ca = std::cos(a);
  float sb = std::sin(b), cb = std::cos(b);
  float sc = std::sin(c), cc = std::cos(c);
  RotRows o;
  o.r[0][0] = cc * cb;
  o.r[0][1] = cc * sb * sa - sc * ca;
  o.r[0][2] = cc * sb * ca + sc * sa;
  o.r[1][0] = sc * cb;
  o.r[1][1] = sc * sb * sa + cc * ca;
  o.r[1][2] = sc * sb * ca - cc * sa;

  o.da[0][0] = 0;
  o.da[0][1] = cc * sb * ca + sc * sa;
  o.da[0][2] = -cc * sb * sa + sc * ca;
  o.da[1][0] = 0;
  o.da[1][1] = sc * sb * ca - cc * sa;
  o.da[1][2] = -sc * sb * sa - cc * ca;

  o.db[0][0] = -cc * sb;
  o.db[0][1] = cc * cb * sa;
  o.db[0][2] = cc * cb * ca;
  o.db[1][0] = -sc * sb;
  o.db[1][1] = sc * cb * sa;
  o.db[1][2] = sc * cb * ca;

  o.dc[0][0] = -sc * cb;
  o.dc[0][1] = -sc * sb * sa - cc * ca;
  o.dc[0][2] = -sc * sb * ca + cc * sa;
  o.dc[1][0] = cc * cb;
  o.dc[1][1] = cc * sb * sa - sc * ca;
  o.dc[1][2] = cc * sb * ca + sc * sa;
  return o;
}

}  // namespace

Ten project_landmarks(const ToyMorphableModel& model, const Ten& verts,
                      const Ten& pose) {
  const int V = model.num_vertices;
  require(verts->shape.size() == 2 && verts->shape[1] == V * 3,
          "project_landmarks(op): vertex dims");
  require(pose->shape.size() == 2 && pose->shape[1] == 6,
          "project_landmarks(op): pose dims");
  require(verts->shape[0] == pose->shape[0], "project_landmarks(op): batch");
  const int N = verts->shape[0];
  const int L = int(model.landmark_indices.size());

  std::vector<float> out(std::size_t(N) * L * 2);
  for (int n = 0; n < N; ++n) {
    const float* vtx = verts->val.data() + std::size_t(n) * V * 3;
    const float* ps = pose->val.data() + std::size_t(n) * 6;
    RotRows rr = rot_rows(ps[0], ps[1], ps[2]);
    float s = std::exp(ps[5]);
    float* o = out.data() + std::size_t(n) * L * 2;
    for (int l = 0; l < L; ++l) {
      const float* p = vtx + 3 * model.landmark_indices[l];
      float ux = rr.r[0][0] * p[0] + rr.r[0][1] * p[1] + rr.r[0][2] * p[2];
      float uy = rr.r[1][0] * p[0] + rr.r[1][1] * p[1] + rr.r[1][2] * p[2];
      o[2 * l] = s * ux + ps[3];
      o[2 * l + 1] = s * uy + ps[4];
    }
  }

  Ten pv = verts, pp = pose;
  const auto* mdl = &model;
  return nn::op_node({N, L * 2}, std::move(out), {verts, pose},
                     [pv, pp, mdl, N, V, L](nn::Node& nd) {
    const bool need_dv = pv->needs_grad, need_dp = pp->needs_grad;
    if (need_dv) pv->ensure_grad();
    if (need_dp) pp->ensure_grad();
    for (int n = 0; n < N; ++n) {
      const float* vtx = pv->val.data() + std::size_t(n) * V * 3;
      const float* ps = pp->val.data() + std::size_t(n) * 6;
      const float* g = nd.grad.data() + std::size_t(n) * L * 2;
      RotRows rr = rot_rows(ps[0], ps[1], ps[2]);
      float s = std::exp(ps[5]);
      float* gv = need_dv ? pv->grad.data() + std::size_t(n) * V * 3 : nullptr;
      float* gp = need_dp ? pp->grad.data() + std::size_t(n) * 6 : nullptr;
      for (int l = 0; l < L; ++l) {
        int vi = mdl->landmark_indices[l];
        const float* p = vtx + 3 * vi;
        float gx = g[2 * l], gy = g[2 * l + 1];
        if (gx == 0.0f && gy == 0.0f) continue;
        float ux = rr.r[0][0] * p[0] + rr.r[0][1] * p[1] + rr.r[0][2] * p[2];
        float uy = rr.r[1][0] * p[0] + rr.r[1][1] * p[1] + rr.r[1][2] * p[2];
        if (need_dv)
          for (int k = 0; k < 3; ++k)
            gv[3 * vi + k] += s * (gx * rr.r[0][k] + gy * rr.r[1][k]);
        if (need_dp) {
          auto ddir = [&](const float d[2][3]) {
            float dx = d[0][0] * p[0] + d[0][1] * p[1] + d[0][2] * p[2];
            float dy = d[1][0] * p[0] + d[1][1] * p[1] + d[1][2] * p[2];
            return s * (gx * dx + gy * dy);
          };
          gp[0] += ddir(rr.da);
          gp[1] += ddir(rr.db);
          gp[2] += ddir(rr.dc);
          gp[3] += gx;
          gp[4] += gy;
          gp[5] += s * (gx * ux + gy * uy);
        }
      }
    }
  });
}

}  // namespace g2::geometry::ops
