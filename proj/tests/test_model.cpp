#include <doctest.h>

#include <cmath>

#include "drumdiff/model.hpp"
#include "drumdiff/trainer.hpp"

using namespace drumdiff;

namespace {

DiTConfig tiny_config() {
  DiTConfig c = DiTConfig::toy();
  c.layers = 1;
  c.d_model = 16;
  c.heads = 2;
  c.mlp_ratio = 2.0;
  c.content_self_layers = 1;
  c.content_cross_layers = 1;
  c.max_steps = 128;
  return c;
}

// A bundle whose grid timeline matches n_frames at 120 BPM / 64th / 2 bars.
ConditionBundle demo_bundle(int resolution = 64, bool with_ref = true) {
  TempoMap tempo;
  BinarizedGrid tgt = binarize({{0.0, DrumGroup::Kick, 100},
                                {0.5, DrumGroup::Snare, 100},
                                {1.0, DrumGroup::HiHatClosed, 100}},
                               tempo, resolution, 2);
  BinarizedGrid ref = binarize({{0.25, DrumGroup::Kick, 100}, {1.5, DrumGroup::Ride, 100}},
                               tempo, resolution, 2);
  ConditionBundle b;
  b.c_tgt = project(tgt, GridView::Arrangement);
  b.c_ref = project(ref, GridView::Tap);
  if (with_ref) {
    LatentSeq x(86);
    Rng rng(55);
    for (double& v : x.data) v = rng.normal();
    b.x_ref = x;
  }
  b.duration_seconds = 4.0;
  b.total_steps = static_cast<int>(b.c_tgt.rows());
  b.t = 0.4;
  return b;
}

std::size_t demo_frames() { return 86; }  // floor(4.0 * 44100 / 2048)

}  // namespace

TEST_CASE("noise schedule endpoints and midpoint") {
  auto s0 = noise_schedule(0.0);
  CHECK(s0.alpha == doctest::Approx(1.0));
  CHECK(s0.sigma == doctest::Approx(0.0));
  auto s1 = noise_schedule(1.0);
  CHECK(s1.alpha == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(s1.sigma == doctest::Approx(1.0));
  auto sm = noise_schedule(0.5);
  CHECK(sm.alpha == doctest::Approx(std::sqrt(0.5)));
  CHECK(sm.sigma == doctest::Approx(std::sqrt(0.5)));
}

TEST_CASE("schedule satisfies alpha^2 + sigma^2 = 1 on a 1001-point grid") {
  for (int i = 0; i <= 1000; ++i) {
    const double t = static_cast<double>(i) / 1000.0;
    const auto [a, s] = noise_schedule(t);
    CHECK(std::abs(a * a + s * s - 1.0) < 1e-12);
  }
}

TEST_CASE("forward diffusion endpoints and scalar case") {
  Tensor z0 = Tensor::from({1, 1}, {2.0});
  Tensor z1 = Tensor::from({1, 1}, {-2.0});
  auto p0 = forward_diffusion(z0, z1, 0.0);
  CHECK(p0.z_t.item() == doctest::Approx(2.0));
  CHECK(p0.v_target.item() == doctest::Approx(-2.0));
  auto p1 = forward_diffusion(z0, z1, 1.0);
  CHECK(p1.z_t.item() == doctest::Approx(-2.0));
  CHECK(p1.v_target.item() == doctest::Approx(-2.0).epsilon(1e-9));
  auto pm = forward_diffusion(z0, z1, 0.5);
  CHECK(pm.z_t.item() == doctest::Approx(0.0));
  CHECK(pm.v_target.item() == doctest::Approx(-2.0 * std::sqrt(2.0)));
}

TEST_CASE("reconstruction identity recovers z0 for random triples") {
  Rng rng(8);
  for (int trial = 0; trial < 1000; ++trial) {
    const double t = rng.uniform();
    const double z0 = rng.normal(), z1 = rng.normal();
    const auto [a, s] = noise_schedule(t);
    const double zt = a * z0 + s * z1;
    const double v = a * z1 - s * z0;
    CHECK(std::abs(a * zt - s * v - z0) < 1e-6);
  }
}

TEST_CASE("v_loss is the elementwise mean squared error") {
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from({2, 2}, {1, 2, 3, 4});
  CHECK(v_loss(a, b).item() == doctest::Approx(0.0));
  Tensor c = Tensor::from({2, 2}, {2, 3, 4, 5});
  CHECK(v_loss(c, b).item() == doctest::Approx(1.0));
  CHECK(v_loss(Tensor::scalar(3.0), Tensor::scalar(1.0)).item() == doctest::Approx(4.0));
}

TEST_CASE("cfg_combine") {
  Tensor c = Tensor::scalar(2.0);
  Tensor u = Tensor::scalar(0.0);
  CHECK(cfg_combine(c, u, 1.0).item() == doctest::Approx(2.0));
  CHECK(cfg_combine(c, u, 0.0).item() == doctest::Approx(0.0));
  CHECK(cfg_combine(c, u, 1.5).item() == doctest::Approx(3.0));
}

TEST_CASE("content encoder output shape and weight sharing") {
  DrumDit model(tiny_config(), 1);
  ConditionBundle b = demo_bundle(16);
  Tensor x_ref = latent_to_tensor(*b.x_ref);
  Tensor out = model.content_encode(b.c_tgt, b.c_ref, x_ref);
  CHECK(out.rows() == b.c_tgt.rows() + b.c_ref.rows());
  CHECK(out.cols() == 16);

  // swapping the two grids swaps the two halves exactly
  Tensor swapped = model.content_encode(b.c_ref, b.c_tgt, x_ref);
  const std::size_t t1 = b.c_tgt.rows(), t2 = b.c_ref.rows();
  for (std::size_t i = 0; i < t1; ++i)
    for (std::size_t j = 0; j < 16; ++j)
      CHECK(out.at(i, j) == swapped.at(t2 + i, j));
  for (std::size_t i = 0; i < t2; ++i)
    for (std::size_t j = 0; j < 16; ++j)
      CHECK(out.at(t1 + i, j) == swapped.at(i, j));

  // determinism
  Tensor again = model.content_encode(b.c_tgt, b.c_ref, x_ref);
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out.data()[i] == again.data()[i]);
}

TEST_CASE("content encoder rejects empty inputs") {
  DrumDit model(tiny_config(), 1);
  ConditionBundle b = demo_bundle(16);
  BinarizedGrid empty = b.c_tgt;
  empty.cells.clear();
  Tensor x_ref = latent_to_tensor(*b.x_ref);
  CHECK_THROWS_AS(model.content_encode(empty, b.c_ref, x_ref), DrumdiffError);
  CHECK_THROWS_AS(model.content_encode(b.c_tgt, b.c_ref, Tensor::zeros({0, 64})),
                  DrumdiffError);
}

TEST_CASE("global tokens: shape, t distinctness, determinism, domain check") {
  DrumDit model(tiny_config(), 3);
  Tensor g = model.build_global_tokens(0.3, 4.0, 128);
  CHECK(g.rows() == 3);
  CHECK(g.cols() == 16);

  Tensor g0 = model.build_global_tokens(0.0, 4.0, 128);
  Tensor g1 = model.build_global_tokens(1.0, 4.0, 128);
  double diff = 0.0;
  for (std::size_t j = 0; j < 16; ++j) diff += std::abs(g0.at(0, j) - g1.at(0, j));
  CHECK(diff > 1e-6);

  Tensor again = model.build_global_tokens(0.3, 4.0, 128);
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(g.data()[i] == again.data()[i]);

  CHECK_THROWS_AS(model.build_global_tokens(-0.1, 4.0, 128), DrumdiffError);
  CHECK_THROWS_AS(model.build_global_tokens(1.1, 4.0, 128), DrumdiffError);
}

TEST_CASE("dit_forward: shape contract, CFG path, determinism") {
  DrumDit model(tiny_config(), 5);
  ConditionBundle b = demo_bundle();
  Rng rng(77);
  Tensor z_t = Tensor::randn({demo_frames(), 64}, rng);
  Tensor v = model.forward(z_t, b);
  CHECK(v.rows() == demo_frames());
  CHECK(v.cols() == 64);

  ConditionBundle blanked = b;
  blanked.x_ref.reset();
  Tensor v_u = model.forward(z_t, blanked);
  CHECK(v_u.rows() == demo_frames());
  for (double x : v_u.values()) CHECK(std::isfinite(x));

  Tensor v2 = model.forward(z_t, b);
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(v.data()[i] == v2.data()[i]);
}

TEST_CASE("dit_forward rejects an inconsistent grid/frame timeline") {
  DrumDit model(tiny_config(), 5);
  ConditionBundle b = demo_bundle();
  Rng rng(78);
  Tensor z_bad = Tensor::randn({20, 64}, rng);  // far from 4 s worth of frames
  CHECK_THROWS_AS(model.forward(z_bad, b), DrumdiffError);

  ConditionBundle wrong_steps = b;
  wrong_steps.total_steps = 3;
  Tensor z = Tensor::randn({demo_frames(), 64}, rng);
  CHECK_THROWS_AS(model.forward(z, wrong_steps), DrumdiffError);
}

TEST_CASE("input addition uses identity alignment when timelines coincide") {
  DiTConfig cfg = tiny_config();
  DrumDit model(cfg, 6);
  // 86 frames at the latent frame rate; craft a grid whose step duration
  // equals the frame duration so row s must land on frame s.
  ConditionBundle b = demo_bundle();
  const std::size_t n = demo_frames();
  BinarizedGrid g = b.c_tgt;
  g.resolution = 64;
  g.bpm = 60.0 * (4.0 / 64.0) / kLatentFrameSeconds;  // step_seconds == frame_seconds
  g.cells.assign(n * kGridCols, 0);
  b.c_tgt = g;
  b.c_ref = g;
  b.total_steps = static_cast<int>(n);
  b.duration_seconds = kLatentFrameSeconds * static_cast<double>(n);
  Tensor content = model.content_encode(b.c_tgt, b.c_ref, latent_to_tensor(*b.x_ref));
  auto aligned = model.aligned_content(content, b, n, b.x_ref->frames);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t j = 0; j < aligned.target.cols(); ++j)
      CHECK(aligned.target.at(s, j) == content.at(s, j));
}

TEST_CASE("oracle-v sampler recovers z0 at 1, 10 and 50 steps (both samplers)") {
  Rng rng(91);
  const std::size_t frames = 7;
  Tensor z0 = Tensor::randn({frames, 64}, rng);
  VField oracle = [&](const Tensor& z, double t) {
    const auto [a, s] = noise_schedule(t);
    std::vector<double> v(z.size());
    for (std::size_t i = 0; i < z.size(); ++i)
      v[i] = (a * z.data()[i] - z0.data()[i]) / s;
    return Tensor::from(z.shape(), std::move(v));
  };
  for (SamplerKind kind : {SamplerKind::Ddim, SamplerKind::DpmPp2M}) {
    for (int steps : {1, 10, 50}) {
      LatentSeq out = sample_field(oracle, frames, steps, kind, 1234);
      double worst = 0.0;
      for (std::size_t i = 0; i < out.data.size(); ++i)
        worst = std::max(worst, std::abs(out.data[i] - z0.data()[i]));
      INFO("sampler ", sampler_name(kind), " steps ", steps);
      CHECK(worst < 1e-5);
    }
  }
}

TEST_CASE("sampling is seed-reproducible and seed-sensitive") {
  DrumDit model(tiny_config(), 5);
  ConditionBundle b = demo_bundle();
  LatentSeq a1 = sample(model, b, demo_frames(), 4, 1.0, SamplerKind::DpmPp2M, 42);
  LatentSeq a2 = sample(model, b, demo_frames(), 4, 1.0, SamplerKind::DpmPp2M, 42);
  REQUIRE(a1.data.size() == a2.data.size());
  for (std::size_t i = 0; i < a1.data.size(); ++i) CHECK(a1.data[i] == a2.data[i]);
  LatentSeq other = sample(model, b, demo_frames(), 4, 1.0, SamplerKind::DpmPp2M, 43);
  double diff = 0.0;
  for (std::size_t i = 0; i < a1.data.size(); ++i)
    diff += std::abs(a1.data[i] - other.data[i]);
  CHECK(diff > 1e-6);
}

TEST_CASE("guidance scale 1 equals the pure conditional trajectory bit for bit") {
  DrumDit model(tiny_config(), 5);
  ConditionBundle b = demo_bundle();
  LatentSeq guided = sample(model, b, demo_frames(), 3, 1.0, SamplerKind::Ddim, 7);
  VField cond_only = [&](const Tensor& z, double t) {
    ConditionBundle bb = b;
    bb.t = t;
    return model.forward(z, bb);
  };
  LatentSeq plain = sample_field(cond_only, demo_frames(), 3, SamplerKind::Ddim, 7);
  REQUIRE(guided.data.size() == plain.data.size());
  for (std::size_t i = 0; i < guided.data.size(); ++i)
    CHECK(guided.data[i] == plain.data[i]);
}

TEST_CASE("model checkpoint save/load reproduces the forward pass exactly") {
  DiTConfig cfg = tiny_config();
  DrumDit model(cfg, 5);
  ConditionBundle b = demo_bundle();
  Rng rng(5150);
  Tensor z_t = Tensor::randn({demo_frames(), 64}, rng);
  Tensor v1 = model.forward(z_t, b);
  const std::string path = "model_test.ddt";
  model.save(path, {{"note", "test"}});
  DrumDit fresh(cfg, 999);
  nlohmann::json meta = fresh.load(path);
  CHECK(meta.at("note") == "test");
  Tensor v2 = fresh.forward(z_t, b);
  for (std::size_t i = 0; i < v1.size(); ++i) CHECK(v1.data()[i] == v2.data()[i]);
  std::remove(path.c_str());
}

TEST_CASE("full tiny model gradient check stays under 1e-4") {
  DiTConfig cfg = tiny_config();
  cfg.max_steps = 8;
  DrumDit model(cfg, 11);
  // 4-frame toy batch on a matching micro-timeline
  const std::size_t frames = 4;
  TempoMap tempo;
  tempo.bpm = 60.0 * (4.0 / 64.0) / kLatentFrameSeconds;
  BinarizedGrid g = binarize({}, tempo, 64, 2);
  g.cells.assign(frames * kGridCols, 0);
  g.set(0, 0);
  g.set(2, 1);
  ConditionBundle b;
  b.c_tgt = g;
  b.c_ref = project(g, GridView::Tap);
  LatentSeq xr(3);
  Rng rng(31);
  for (double& v : xr.data) v = rng.normal() * 0.5;
  b.x_ref = xr;
  b.duration_seconds = kLatentFrameSeconds * frames;
  b.total_steps = static_cast<int>(frames);
  b.t = 0.37;

  Tensor z0 = Tensor::randn({frames, 64}, rng, 0.7);
  Tensor z1 = Tensor::randn({frames, 64}, rng);
  DiffusionPoint p = forward_diffusion(z0, z1, b.t);

  auto loss_fn = [&](const Tensor&) {
    Tensor v_hat = model.forward(p.z_t, b);
    return v_loss(v_hat, p.v_target);
  };
  double worst = 0.0;
  std::string worst_name;
  for (const std::string& name : model.params().names()) {
    Tensor& param = model.params().get(name);
    const double err = grad_check(loss_fn, param);
    if (err > worst) {
      worst = err;
      worst_name = name;
    }
  }
  INFO("worst parameter: ", worst_name, " rel err ", worst);
  CHECK(worst <= 1e-4);
}
