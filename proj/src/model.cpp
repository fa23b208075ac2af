#include "drumdiff/model.hpp"

#include <cmath>

#include "drumdiff/rng.hpp"

namespace drumdiff {

ScheduleValue noise_schedule(double t) {
  const double half_pi = 1.5707963267948966;
  return {std::cos(half_pi * t), std::sin(half_pi * t)};
}

DiffusionPoint forward_diffusion(const Tensor& z0, const Tensor& z1, double t) {
  if (z0.shape() != z1.shape()) throw DrumdiffError("forward_diffusion: shape mismatch");
  if (t < 0.0 || t > 1.0) throw DrumdiffError("forward_diffusion: t outside [0,1]");
  const auto [alpha, sigma] = noise_schedule(t);
  DiffusionPoint p;
  p.z_t = add(scale(z0, alpha), scale(z1, sigma));
  p.v_target = sub(scale(z1, alpha), scale(z0, sigma));
  return p;
}

Tensor v_loss(const Tensor& v_hat, const Tensor& v_target) {
  if (v_hat.shape() != v_target.shape()) throw DrumdiffError("v_loss: shape mismatch");
  Tensor d = sub(v_hat, v_target);
  return mean_all(mul(d, d));
}

Tensor cfg_combine(const Tensor& v_cond, const Tensor& v_uncond, double scale_factor) {
  if (v_cond.shape() != v_uncond.shape()) throw DrumdiffError("cfg_combine: shape mismatch");
  return add(v_uncond, scale(sub(v_cond, v_uncond), scale_factor));
}

Tensor latent_to_tensor(const LatentSeq& l) {
  return Tensor::from({l.frames, static_cast<std::size_t>(kLatentDim)}, l.data);
}

LatentSeq tensor_to_latent(const Tensor& t) {
  LatentSeq l(t.rows());
  l.data = t.values();
  return l;
}

namespace {

Tensor grid_to_tensor(const BinarizedGrid& g) {
  std::vector<double> v(g.cells.begin(), g.cells.end());
  return Tensor::from({g.rows(), static_cast<std::size_t>(kGridCols)}, std::move(v));
}

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return idx;
}

}  // namespace

DrumDit::DrumDit(const DiTConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  Rng rng(Rng::derive(seed, {0x696e6974ULL}));
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto hidden = static_cast<std::size_t>(cfg.d_model * cfg.mlp_ratio);

  grid_embed_w_ = params_.add("content.embed.w",
                              Tensor::randn({static_cast<std::size_t>(kGridCols), d}, rng,
                                            1.0 / std::sqrt(10.0)));
  grid_embed_b_ = params_.add("content.embed.b", Tensor::zeros({d}));
  pos_table_ = params_.add(
      "content.pos",
      Tensor::randn({static_cast<std::size_t>(cfg.max_steps), d}, rng, 0.02));
  ref_embed_w_ = params_.add("content.ref_embed.w",
                             Tensor::randn({static_cast<std::size_t>(kLatentDim), d}, rng,
                                           1.0 / std::sqrt(64.0)));
  ref_embed_b_ = params_.add("content.ref_embed.b", Tensor::zeros({d}));
  for (int i = 0; i < cfg.content_self_layers; ++i)
    content_self_.push_back(TransformerBlock::create(
        params_, "content.self" + std::to_string(i), d, cfg.heads, hidden, false, rng));
  for (int i = 0; i < cfg.content_cross_layers; ++i)
    content_cross_.push_back(TransformerBlock::create(
        params_, "content.cross" + std::to_string(i), d, cfg.heads, hidden, false, rng));
  null_ref_ = params_.add(
      "dit.null_ref",
      Tensor::randn({1, static_cast<std::size_t>(kLatentDim)}, rng, 0.02));
  conv_w_ = params_.add(
      "dit.conv.w",
      Tensor::randn({d, static_cast<std::size_t>(kLatentDim),
                     static_cast<std::size_t>(cfg.conv_width)},
                    rng, 1.0 / std::sqrt(64.0 * cfg.conv_width)));
  conv_b_ = params_.add("dit.conv.b", Tensor::zeros({d}));
  time_mlp_in_ = Linear::create(params_, "dit.time.fc1", d, d, rng);
  time_mlp_out_ = Linear::create(params_, "dit.time.fc2", d, d, rng);
  dur_proj_ = Linear::create(params_, "dit.duration", d, d, rng);
  steps_proj_ = Linear::create(params_, "dit.steps", d, d, rng);
  for (int i = 0; i < cfg.layers; ++i)
    blocks_.push_back(TransformerBlock::create(
        params_, "dit.block" + std::to_string(i), d, cfg.heads, hidden, true, rng));
  final_ln_ = LayerNormLayer::create(params_, "dit.final_ln", d);
  out_proj_ = Linear::create(params_, "dit.out", d, static_cast<std::size_t>(kLatentDim), rng);
}

Tensor DrumDit::embed_reference(const Tensor& x_ref) const {
  return add_rowvec(matmul(x_ref, ref_embed_w_), ref_embed_b_);
}

Tensor DrumDit::encode_branch(const BinarizedGrid& grid, const Tensor& kv) const {
  if (grid.rows() == 0) throw DrumdiffError("content_encode: empty grid");
  if (grid.rows() > static_cast<std::size_t>(cfg_.max_steps))
    throw DrumdiffError("content_encode: grid longer than positional table");
  Tensor h = add_rowvec(matmul(grid_to_tensor(grid), grid_embed_w_), grid_embed_b_);
  h = add(h, gather_rows(pos_table_, iota_indices(grid.rows())));
  for (const auto& blk : content_self_) h = blk.self(h);
  for (const auto& blk : content_cross_) h = blk.cross(h, kv);
  return h;
}

Tensor DrumDit::content_encode(const BinarizedGrid& c_tgt, const BinarizedGrid& c_ref,
                               const Tensor& x_ref) const {
  if (x_ref.rows() == 0) throw DrumdiffError("content_encode: empty reference latents");
  Tensor kv = embed_reference(x_ref);
  Tensor tgt = encode_branch(c_tgt, kv);
  Tensor ref = encode_branch(c_ref, kv);
  return concat_rows(tgt, ref);
}

Tensor DrumDit::build_global_tokens(double t, double duration_seconds,
                                    int total_steps) const {
  if (t < 0.0 || t > 1.0) throw DrumdiffError("build_global_tokens: t outside [0,1]");
  const auto d = static_cast<std::size_t>(cfg_.d_model);
  Tensor t_tok = time_mlp_out_(gelu(time_mlp_in_(sinusoidal_features(1000.0 * t, d))));
  Tensor dur_tok = dur_proj_(sinusoidal_features(duration_seconds, d));
  Tensor steps_tok = steps_proj_(sinusoidal_features(static_cast<double>(total_steps), d));
  return concat_rows(concat_rows(t_tok, dur_tok), steps_tok);
}

DrumDit::AlignedContent DrumDit::aligned_content(const Tensor& content,
                                                 const ConditionBundle& bundle,
                                                 std::size_t n_frames,
                                                 std::size_t n_ref_frames) const {
  const std::size_t t_tgt = bundle.c_tgt.rows();
  const std::size_t t_ref = bundle.c_ref.rows();
  AlignedContent a;
  AlignmentSpec tgt_spec{bundle.c_tgt.step_seconds(), kLatentFrameSeconds, n_frames, t_tgt};
  a.target = align_content(slice_rows(content, 0, t_tgt), tgt_spec);
  AlignmentSpec ref_spec{bundle.c_ref.step_seconds(), kLatentFrameSeconds, n_ref_frames,
                         t_ref};
  a.reference = align_content(slice_rows(content, t_tgt, t_ref), ref_spec);
  return a;
}

Tensor DrumDit::forward(const Tensor& z_t, const ConditionBundle& bundle) const {
  if (z_t.shape().size() != 2 || z_t.cols() != static_cast<std::size_t>(kLatentDim))
    throw DrumdiffError("dit_forward: z_t must be n_frames x 64");
  if (bundle.total_steps != static_cast<int>(bundle.c_tgt.rows()))
    throw DrumdiffError("dit_forward: total_steps does not match target grid");
  const std::size_t n = z_t.rows();
  // The target grid timeline and the z_t frame timeline must describe the
  // same duration, within a frame plus a step of slack.
  const double grid_len =
      bundle.c_tgt.step_seconds() * static_cast<double>(bundle.c_tgt.rows());
  const double frame_len = kLatentFrameSeconds * static_cast<double>(n);
  if (std::abs(grid_len - frame_len) >
      bundle.c_tgt.step_seconds() + 2.0 * kLatentFrameSeconds)
    throw DrumdiffError("dit_forward: grid timeline inconsistent with frame count");

  Tensor x_ref = bundle.x_ref ? latent_to_tensor(*bundle.x_ref) : null_ref_;
  const std::size_t n_ref = x_ref.rows();

  // (a) concatenation along the time axis
  Tensor seq = concat_rows(z_t, x_ref);
  // (b) pre-process conv, 64 -> d
  Tensor h = conv1d(seq, conv_w_, conv_b_);
  // (c) input addition of aligned content features
  Tensor content = content_encode(bundle.c_tgt, bundle.c_ref, x_ref);
  AlignedContent ac = aligned_content(content, bundle, n, n_ref);
  h = add_rows_at(h, ac.target, 0);
  h = add_rows_at(h, ac.reference, n);
  // (d) prepend the global tokens
  Tensor g = build_global_tokens(bundle.t, bundle.duration_seconds, bundle.total_steps);
  h = concat_rows(g, h);
  // (e) transformer stack
  for (const auto& blk : blocks_) h = blk.self(h);
  // (f) post-process projection, (g) restrict to the z_t positions
  Tensor out = out_proj_(final_ln_(h));
  return slice_rows(out, 3, n);
}

void DrumDit::save(const std::string& path, const nlohmann::json& extra_meta) const {
  nlohmann::json meta = extra_meta;
  meta["model"] = {{"layers", cfg_.layers},
                   {"d_model", cfg_.d_model},
                   {"heads", cfg_.heads},
                   {"mlp_ratio", cfg_.mlp_ratio},
                   {"content_self_layers", cfg_.content_self_layers},
                   {"content_cross_layers", cfg_.content_cross_layers},
                   {"conv_width", cfg_.conv_width},
                   {"max_steps", cfg_.max_steps}};
  save_checkpoint(path, params_, meta);
}

nlohmann::json DrumDit::load(const std::string& path) {
  return load_checkpoint(path, params_);
}

SamplerKind sampler_from_name(const std::string& name) {
  if (name == "ddim") return SamplerKind::Ddim;
  if (name == "dpmpp2m") return SamplerKind::DpmPp2M;
  throw DrumdiffError("unknown sampler: " + name);
}

const char* sampler_name(SamplerKind k) {
  return k == SamplerKind::Ddim ? "ddim" : "dpmpp2m";
}

LatentSeq sample_field(const VField& v_field, std::size_t n_frames, int steps,
                       SamplerKind sampler, std::uint64_t seed) {
  if (steps < 1) throw DrumdiffError("sample: steps must be >= 1");
  NoGradGuard no_grad;
  Rng rng(Rng::derive(seed, {0x73616d70ULL}));
  Tensor z = Tensor::randn({n_frames, static_cast<std::size_t>(kLatentDim)}, rng);

  auto lambda_of = [](double t) {
    const auto [a, s] = noise_schedule(t);
    return std::log(a / s);
  };

  bool have_prev = false;
  std::vector<double> prev_x0;
  double t_prev = 1.0;
  for (int i = 0; i < steps; ++i) {
    const double t = 1.0 - static_cast<double>(i) / steps;
    const double t_next = 1.0 - static_cast<double>(i + 1) / steps;
    const auto [a, s] = noise_schedule(t);
    const auto [an, sn] = noise_schedule(t_next);
    Tensor v = v_field(z, t);
    if (v.shape() != z.shape()) throw DrumdiffError("sample: v shape mismatch");
    for (double x : v.values())
      if (!std::isfinite(x))
        throw DrumdiffError("sample: non-finite prediction at step " + std::to_string(i));
    const std::size_t n = z.size();
    std::vector<double> x0(n), eps(n);
    for (std::size_t j = 0; j < n; ++j) {
      x0[j] = a * z.data()[j] - s * v.data()[j];
      eps[j] = s * z.data()[j] + a * v.data()[j];
    }
    std::vector<double> next(n);
    if (sampler == SamplerKind::Ddim || !have_prev) {
      // Deterministic re-noising of x0 to the next t. The multistep sampler
      // also takes this branch on its first step (first-order update).
      for (std::size_t j = 0; j < n; ++j) next[j] = an * x0[j] + sn * eps[j];
    } else if (sn == 0.0) {
      // Final transition: the exponential update collapses to x0.
      next = x0;
    } else {
      // DPM-Solver++(2M): second-order multistep on the data prediction.
      const double h = lambda_of(t_next) - lambda_of(t);
      const double h_last = lambda_of(t) - lambda_of(t_prev);
      const double r = h_last / h;
      const double c0 = 1.0 / (2.0 * r);
      const double c1 = 1.0 + c0;
      const double em = std::expm1(-h);
      const double zscale = sn / s;
      for (std::size_t j = 0; j < n; ++j) {
        const double d = c1 * x0[j] - c0 * prev_x0[j];
        next[j] = zscale * z.data()[j] - an * em * d;
      }
    }
    prev_x0 = std::move(x0);
    have_prev = true;
    t_prev = t;
    z = Tensor::from(z.shape(), std::move(next));
  }
  for (double x : z.values())
    if (!std::isfinite(x)) throw DrumdiffError("sample: non-finite final output");
  return tensor_to_latent(z);
}

LatentSeq sample(const DrumDit& model, const ConditionBundle& bundle,
                 std::size_t n_frames, int steps, double guidance_scale,
                 SamplerKind sampler, std::uint64_t seed) {
  ConditionBundle cond = bundle;
  ConditionBundle uncond = bundle;
  uncond.x_ref.reset();
  VField field = [&](const Tensor& z, double t) {
    cond.t = t;
    Tensor v_c = model.forward(z, cond);
    if (guidance_scale == 1.0) return v_c;
    uncond.t = t;
    Tensor v_u = model.forward(z, uncond);
    return cfg_combine(v_c, v_u, guidance_scale);
  };
  return sample_field(field, n_frames, steps, sampler, seed);
}

}  // namespace drumdiff
