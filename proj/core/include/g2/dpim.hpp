#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "g2/geometry.hpp"
#include "g2/identity.hpp"
#include "g2/image.hpp"
#include "g2/password.hpp"

namespace g2::dpim {

/// Architecture hyperparameters. Desk defaults target a 2-core CPU; the
/// channel schedule caps at 64 and thins toward high resolution.
struct NetConfig {
  int resolution = 64;
  int d_id = 64;
  int d_s = 16, d_e = 8;
  int d_w = 512;
  int d_z = 64;
  bool mask_per_channel = false;
  bool noise_injection = false;  // off: anonymize/recover stay deterministic

  // ablation switches
  bool genp = true;  // initialize the generator trunk from the prior run
  bool geop = true;  // geometry slots of e_g (zero-filled when off)
  bool iff = true;   // adaptive fusion (off: F_blend = F_inter + F_hide)

  int e_g_dim() const { return d_id + d_s + d_e + 6; }
  int n_bits() const { return 32 * d_id; }

  std::vector<int> level_resolutions() const {  // 4, 8, ..., resolution
    std::vector<int> out;
    for (int r = 4; r <= resolution; r *= 2) out.push_back(r);
    return out;
  }
  int channels(int res) const {
    switch (res) {
      case 4:
      case 8: return 64;
      case 16: return 48;
      case 32: return 32;
      case 64: return 16;
      case 128: return 12;
      default: return 8;
    }
  }
  int num_style_layers() const { return 2 * int(level_resolutions().size()); }
  /// Latent band of a style layer: 0 = low, 1 = middle, 2 = high.
  int latent_band(int layer) const { return 3 * layer / num_style_layers(); }
};

/// One modulated 3x3 style convolution with weight demodulation.
struct StyleConv {
  nn::Ten w;               // [Co,Ci,3,3]
  nn::Ten bias;            // [Co]
  nn::LinearLayer affine;  // d_w -> Ci, bias initialized to 1
  nn::Ten noise_strength;  // [1], used only when noise injection is on
  bool upsample = false;

  void init(Rng& rng, int ci, int co, int d_w, bool upsample);
  void collect(nn::ParamMap& out, const std::string& prefix) const;
};

struct StyleConvOut {
  nn::Ten out;     // post-activation
  nn::Ten preact;  // pre-activation (test hook)
};

/// Eq.-style forward: modulate by affine(w), convolve, demodulate,
/// bias, smooth nonlinearity. Upsampling (nearest 2x) happens before the
/// convolution when the block's schedule requires it.
StyleConvOut style_block_forward(const nn::Ten& f_gen, const nn::Ten& w_latent,
                                 const StyleConv& block,
                                 const nn::Ten* noise = nullptr);

/// Identity-aware feature fusion.
struct IFFState {
  nn::Conv2dLayer mask_conv;  // 1x1 over concat(F_face, F_inter, F_hide)
  bool per_channel = false;

  void init(Rng& rng, int feat_channels, bool per_channel);
  void collect(nn::ParamMap& out, const std::string& prefix) const;
};

enum class MaskOverride { None, ForceZero, ForceOne };

struct IFFResult {
  nn::Ten mask;     // [N,1,H,W] (or [N,C,H,W] per-channel)
  nn::Ten f_blend;  // [N,C,H,W]
};

/// M = sigmoid(conv1x1(concat)); F_blend = M*F_face + (1-M)*F_inter + F_hide.
/// The override hook pins M to exactly 0 or 1 (no sigmoid) for tests.
IFFResult iff_fuse(const nn::Ten& f_face, const nn::Ten& f_inter,
                   const nn::Ten& f_hide, const IFFState& iff,
                   MaskOverride override_mask = MaskOverride::None);

struct MapperState {
  // three independent four-layer MLPs: low / middle / high
  std::vector<nn::LinearLayer> low, middle, high;
  int d_in = 0, d_w = 0;

  void init(Rng& rng, int e_g_dim, int d_w);
  void collect(nn::ParamMap& out, const std::string& prefix) const;
};

struct StyleLatentsT {
  nn::Ten low, middle, high;  // each [N, d_w]
};

/// e_g [N, e_g_dim] -> three W+ vectors.
StyleLatentsT map_latents(const MapperState& mappers, const nn::Ten& e_g);

struct EncoderState {
  std::vector<nn::Conv2dLayer> trunk;    // stride-2 tower
  std::vector<nn::Conv2dLayer> lateral;  // per-level 3x3 refinements
  std::vector<int> level_res;            // resolutions served (8..R)
  int resolution = 0;

  void init(Rng& rng, const NetConfig& cfg);
  /// [N,3,R,R] -> level resolution -> [N,C_r,r,r]
  std::map<int, nn::Ten> forward(const nn::Ten& images) const;
  void collect(nn::ParamMap& out, const std::string& prefix) const;
};

struct GeneratorState {
  NetConfig cfg;
  nn::Ten const_input;  // [C4*4*4], tiled across the batch
  std::vector<StyleConv> convs;  // 2 per level
  std::vector<IFFState> iff_blocks;                    // per level >= 8
  std::vector<password::ProjectionState> hide_projs;   // per level >= 8
  nn::Conv2dLayer to_rgb;

  void init(Rng& rng, const NetConfig& cfg);
  void collect(nn::ParamMap& out, const std::string& prefix) const;
  /// Trunk-only parameters (style convs, const input, to_rgb): the group
  /// trained at the backbone learning rate and seeded by the prior.
  void collect_trunk(nn::ParamMap& out, const std::string& prefix) const;
  void collect_rest(nn::ParamMap& out, const std::string& prefix) const;
};

struct DiscriminatorState {
  std::vector<nn::Conv2dLayer> convs;
  nn::LinearLayer fc1, fc2;
  int resolution = 0;

  void init(Rng& rng, int resolution);
  nn::Ten forward(const nn::Ten& images) const;  // [N,1] logits
  /// d D(x) / d x built as tape ops, so a penalty on it can itself be
  /// differentiated w.r.t. the discriminator parameters (R1).
  nn::Ten input_gradient(const nn::Ten& images) const;
  void collect(nn::ParamMap& out, const std::string& prefix) const;
};

struct GenerateOptions {
  MaskOverride mask_override = MaskOverride::None;
  Rng* noise_rng = nullptr;  // required when noise injection is enabled
};

/// Full synthesis pass: style trunk with per-level password injection and
/// IFF fusion against the encoder pyramid. `pyramid` may be empty when IFF
/// is disabled. Output in [-1,1].
nn::Ten generate(const GeneratorState& g, const std::map<int, nn::Ten>& pyramid,
                 const StyleLatentsT& latents,
                 const std::vector<password::PasswordBits>& bits,
                 const GenerateOptions& opts = {});

// ---- assembled system ----

struct SystemState {
  NetConfig cfg;
  geometry::ToyMorphableModel model;
  identity::EmbedderState embedder;          // frozen before main training
  geometry::GeometryEstimatorState estimator;  // frozen before main training
  identity::DummyGenState dummy;
  EncoderState encoder;
  MapperState mappers;
  GeneratorState generator;
  password::ExtractorState extractor;
  DiscriminatorState discriminator;

  void init(Rng& rng, const NetConfig& cfg, std::uint64_t model_seed = 7,
            int model_vertices = 642);
  /// All trainable (non-frozen) parameters.
  void collect_trainable(nn::ParamMap& out) const;
  /// Every parameter including frozen auxiliaries (checkpointing).
  void collect_all(nn::ParamMap& out) const;

  /// e_g with the geometry slots zeroed when GEOP is off.
  std::vector<float> make_e_g(const std::vector<float>& e_id,
                              const geometry::GeometryCoefficients& coeffs) const;
};

struct FeaturePyramid {
  std::map<int, std::vector<float>> levels;  // res -> [C*r*r]
  std::map<int, Shape> shapes;
};

struct StyleLatents {
  std::vector<float> low, middle, high;
};

FeaturePyramid encode_face(const ImageTensor& x, const EncoderState& enc);
StyleLatents map_latents(const geometry::GeometryAwareEmbedding& e_g,
                         const MapperState& mappers);

struct AnonymizeResult {
  ImageTensor y;
  password::PasswordBits bits_embedded;
  identity::IdentityEmbedding e_dummy;
};

struct RecoverResult {
  ImageTensor x_hat;
  bool corruption_warning = false;
  int corrupted_floats = 0;
};

AnonymizeResult anonymize(const ImageTensor& x, const identity::NoiseVector& z,
                          const SystemState& system);
RecoverResult recover(const ImageTensor& y, const SystemState& system);

}  // namespace g2::dpim
