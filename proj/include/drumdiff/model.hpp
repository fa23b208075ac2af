#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "drumdiff/align.hpp"
#include "drumdiff/grid.hpp"
#include "drumdiff/nn.hpp"

namespace drumdiff {

struct DiTConfig {
  int layers = 24;
  int d_model = 256;
  int heads = 8;
  double mlp_ratio = 4.0;
  int content_self_layers = 2;   // content encoder: self-attention depth
  int content_cross_layers = 2;  // content encoder: cross-attention depth
  int conv_width = 3;            // pre-process conv kernel
  int max_steps = 512;           // learned positional table length

  static DiTConfig toy() {
    DiTConfig c;
    c.layers = 4;
    c.d_model = 64;
    c.heads = 4;
    c.mlp_ratio = 4.0;
    c.content_self_layers = 2;
    c.content_cross_layers = 2;
    c.max_steps = 256;
    return c;
  }
};

// The condition set for one denoising call. x_ref empty (nullopt) marks the
// classifier-free-guidance blanked case; the grids are never blanked.
struct ConditionBundle {
  BinarizedGrid c_tgt;               // projected target grid (T x 10)
  BinarizedGrid c_ref;               // projected reference grid
  std::optional<LatentSeq> x_ref;    // reference latents, or blank marker
  double duration_seconds = 0.0;     // target duration
  int total_steps = 0;               // T of the target grid
  double t = 0.0;                    // diffusion time in [0, 1]
};

// alpha = cos(pi t / 2), sigma = sin(pi t / 2); alpha^2 + sigma^2 = 1.
struct ScheduleValue {
  double alpha, sigma;
};
ScheduleValue noise_schedule(double t);

// z_t = alpha z0 + sigma z1 ; v = alpha z1 - sigma z0 (elementwise).
struct DiffusionPoint {
  Tensor z_t, v_target;
};
DiffusionPoint forward_diffusion(const Tensor& z0, const Tensor& z1, double t);

Tensor v_loss(const Tensor& v_hat, const Tensor& v_target);
Tensor cfg_combine(const Tensor& v_cond, const Tensor& v_uncond, double scale);

Tensor latent_to_tensor(const LatentSeq& l);
LatentSeq tensor_to_latent(const Tensor& t);

// Content encoder + DiT with the three-way conditioning: reference latents
// concatenated along time, aligned content features added after the input
// conv, and three global tokens prepended.
class DrumDit {
 public:
  DrumDit(const DiTConfig& cfg, std::uint64_t seed);

  const DiTConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // Both branches share weights: embed -> learned positions -> self layers ->
  // cross layers against the embedded x_ref. Output is [target; reference]
  // concatenated along the sequence axis ((T_tgt + T_ref) x d_model).
  Tensor content_encode(const BinarizedGrid& c_tgt, const BinarizedGrid& c_ref,
                        const Tensor& x_ref) const;

  // 3 x d_model: diffusion-time token, duration token, total-steps token.
  Tensor build_global_tokens(double t, double duration_seconds, int total_steps) const;

  // v prediction with exactly the shape of z_t (n_frames x 64).
  Tensor forward(const Tensor& z_t, const ConditionBundle& bundle) const;

  // Content rows mapped onto the z_t / x_ref frame timelines, exposed for
  // the aligner-consistency checks.
  struct AlignedContent {
    Tensor target;     // n_frames x d_model
    Tensor reference;  // n_ref_frames x d_model
  };
  AlignedContent aligned_content(const Tensor& content, const ConditionBundle& bundle,
                                 std::size_t n_frames, std::size_t n_ref_frames) const;

  void save(const std::string& path, const nlohmann::json& extra_meta) const;
  nlohmann::json load(const std::string& path);

 private:
  Tensor embed_reference(const Tensor& x_ref) const;
  Tensor encode_branch(const BinarizedGrid& grid, const Tensor& kv) const;

  DiTConfig cfg_;
  ParamStore params_;

  Tensor grid_embed_w_, grid_embed_b_;  // 10 -> d
  Tensor pos_table_;                    // max_steps x d
  Tensor ref_embed_w_, ref_embed_b_;    // 64 -> d (cross-attention K/V path)
  std::vector<TransformerBlock> content_self_;
  std::vector<TransformerBlock> content_cross_;
  Tensor null_ref_;                     // 1 x 64 learned null reference frame
  Tensor conv_w_, conv_b_;              // pre-process conv, 64 -> d
  Linear time_mlp_in_, time_mlp_out_;   // t token MLP
  Linear dur_proj_, steps_proj_;        // duration / total-steps tokens
  std::vector<TransformerBlock> blocks_;
  LayerNormLayer final_ln_;
  Linear out_proj_;                     // d -> 64
};

enum class SamplerKind { Ddim, DpmPp2M };

SamplerKind sampler_from_name(const std::string& name);
const char* sampler_name(SamplerKind k);

// Denoising field: v prediction for (z, t). Wraps the model + conditions or
// a test oracle.
using VField = std::function<Tensor(const Tensor& z, double t)>;

// Start from z ~ N(0, I) at t=1, walk a uniform decreasing t grid, convert
// v to (x0, eps) at each step; the final output is x0 at the last step.
// DPM++(2M) falls back to the DDIM update on the first step.
LatentSeq sample_field(const VField& v, std::size_t n_frames, int steps,
                       SamplerKind sampler, std::uint64_t seed);

// Classifier-free-guided sampling; scale == 1 evaluates only the
// conditional branch, so it is bit-identical to pure conditional sampling.
LatentSeq sample(const DrumDit& model, const ConditionBundle& bundle,
                 std::size_t n_frames, int steps, double guidance_scale,
                 SamplerKind sampler, std::uint64_t seed);

}  // namespace drumdiff
