#pragma once

#include <array>
#include <string>
#include <vector>

#include "g2/image.hpp"
#include "g2/layers.hpp"
#include "g2/rng.hpp"

namespace g2::geometry {

/// Linear face model: shape = mean + shape_basis*c_s + expr_basis*c_exp.
/// Bases are jointly orthonormal columns over the flattened [3*V] space.
struct ToyMorphableModel {
  int num_vertices = 0;
  int d_s = 0, d_e = 0;
  std::uint64_t rng_seed = 0;
  std::vector<float> mean_shape;     // [V*3]
  std::vector<float> shape_basis;    // [V*3 x d_s], row-major
  std::vector<float> expr_basis;     // [V*3 x d_e], row-major
  std::vector<int> triangles;        // [T*3]
  std::vector<int> landmark_indices; // 68

  int num_triangles() const { return int(triangles.size() / 3); }
};

struct GeometryCoefficients {
  std::vector<float> c_s;
  std::vector<float> c_exp;
  // [ax, ay, az, tx, ty, log_scale]; rotation applied as Rz*Ry*Rx
  std::array<float, 6> c_pose{};

  int dim() const { return int(c_s.size() + c_exp.size()) + 6; }
  std::vector<float> flat() const;
  static GeometryCoefficients from_flat(const std::vector<float>& v, int d_s, int d_e);
};

struct IlluminationCoefficients {
  std::array<float, 27> gamma{};  // 9 SH bands x 3 channels, channel-major
};

struct FaceMesh {
  std::vector<float> vertices;  // [V*3]
  std::vector<float> normals;   // [V*3], unit
  std::vector<float> colors;    // [V*3], in [0,1]
};

struct GeometryAwareEmbedding {
  std::vector<float> e_g;
};

/// Convolutional regressor standing in for a pretrained 3D reconstruction
/// model; emits (c_s, c_exp, c_pose, gamma) from a face image.
struct GeometryEstimatorState {
  int resolution = 0;
  int d_s = 0, d_e = 0;
  bool frozen = false;
  std::vector<nn::Conv2dLayer> convs;
  nn::LinearLayer fc1, fc2;

  int out_dim() const { return d_s + d_e + 6 + 27; }
  void init(Rng& rng, int resolution, int d_s, int d_e);
  /// [N,3,R,R] -> [N, d_s+d_e+6+27]
  nn::Ten forward(const nn::Ten& images) const;
  void collect(nn::ParamMap& out, const std::string& prefix) const;
  void freeze();
};

// ---- model construction and evaluation ----

ToyMorphableModel build_toy_3dmm(std::uint64_t seed, int num_vertices, int d_s, int d_e);

/// mean + A_s c_s + A_exp c_exp  -> [V*3]
std::vector<float> compute_shape(const ToyMorphableModel& model,
                                 const GeometryCoefficients& coeffs);

/// Area-weighted vertex normals, unit length; zero-area fallback (0,0,1).
std::vector<float> compute_vertex_normals(const ToyMorphableModel& model,
                                          const std::vector<float>& vertices);

/// First-3-band real SH basis at a unit direction.
std::array<float, 9> sh_basis(float x, float y, float z);

/// Per-vertex color: albedo * sum_b gamma_b Phi_b(n), clamped to [0,1].
std::vector<float> compute_color(const ToyMorphableModel& model,
                                 const std::vector<float>& normals,
                                 const IlluminationCoefficients& gamma,
                                 const std::vector<float>& albedo);

/// Pose transform (Rz*Ry*Rx rotation, exp(log_scale), xy translation),
/// orthographic projection, 68 landmark rows of (x,y) in [-1,1] units.
std::vector<float> project_landmarks(const ToyMorphableModel& model,
                                     const std::vector<float>& vertices,
                                     const std::array<float, 6>& c_pose);

GeometryAwareEmbedding assemble_geometry_embedding(const std::vector<float>& e_id,
                                                   const GeometryCoefficients& coeffs);

struct EstimatedGeometry {
  GeometryCoefficients coeffs;
  IlluminationCoefficients gamma;
};

GeometryCoefficients estimate_coefficients(const ImageTensor& image,
                                           const GeometryEstimatorState& estimator);
EstimatedGeometry estimate_geometry(const ImageTensor& image,
                                    const GeometryEstimatorState& estimator);

// ---- G2MM container ----

void save_model(const ToyMorphableModel& model, const std::string& path);
ToyMorphableModel load_model(const std::string& path);

// ---- differentiable counterparts (used by the loss suite) ----
namespace ops {

/// coeffs [N, d_s+d_e] -> flattened shapes [N, 3V]
nn::Ten shape_from_coeffs(const ToyMorphableModel& model, const nn::Ten& c_s,
                          const nn::Ten& c_exp);
/// verts [N, 3V] -> unit normals [N, 3V]
nn::Ten vertex_normals(const ToyMorphableModel& model, const nn::Ten& verts);
/// normals [N, 3V], gamma [N, 27] -> per-vertex SH colors [N, 3V]
nn::Ten sh_colors(const nn::Ten& normals, const nn::Ten& gamma);
/// verts [N, 3V], pose [N, 6] -> landmarks [N, 136]
nn::Ten project_landmarks(const ToyMorphableModel& model, const nn::Ten& verts,
                          const nn::Ten& pose);

}  // namespace ops

}  // namespace g2::geometry
