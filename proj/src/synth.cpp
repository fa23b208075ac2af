#include "drumdiff/synth.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "drumdiff/dsp.hpp"
#include "drumdiff/rng.hpp"

namespace drumdiff {

namespace {

struct GroupRange {
  double f_lo, f_hi;      // center frequency range
  double d_lo, d_hi;      // decay range
  double n_lo, n_hi;      // noise mix range
};

// Per-group synthesis ranges. Hats and cymbals are noise-dominated and high,
// kick is low and tonal, toms sit in between.
const GroupRange kRanges[kNumGroups] = {
    {48, 70, 0.12, 0.25, 0.02, 0.12},    // Kick
    {160, 240, 0.10, 0.20, 0.35, 0.60},  // Snare
    {6000, 9000, 0.03, 0.08, 0.85, 0.98},// HiHatClosed
    {6000, 9000, 0.15, 0.30, 0.85, 0.98},// HiHatOpen
    {80, 120, 0.15, 0.30, 0.05, 0.20},   // TomLow
    {130, 180, 0.12, 0.25, 0.05, 0.20},  // TomMid
    {190, 260, 0.10, 0.22, 0.05, 0.20},  // TomHigh
    {3500, 6000, 0.40, 0.80, 0.80, 0.95},// Crash
    {2500, 4500, 0.30, 0.60, 0.55, 0.80},// Ride
};

// Two-pole resonator used to colour the noise component around the
// group's center frequency.
struct Resonator {
  double a1, a2, g;
  double y1 = 0.0, y2 = 0.0;
  Resonator(double freq, double q, double sr) {
    const double w = 2.0 * M_PI * freq / sr;
    const double r = std::exp(-w / (2.0 * q));
    a1 = -2.0 * r * std::cos(w);
    a2 = r * r;
    g = 1.0 - r;
  }
  double operator()(double x) {
    const double y = g * x - a1 * y1 - a2 * y2;
    y2 = y1;
    y1 = y;
    return y;
  }
};

}  // namespace

KitTimbre random_kit(const std::string& kit_id, std::uint64_t seed) {
  KitTimbre kit;
  kit.kit_id = kit_id;
  kit.seed = seed;
  Rng rng(Rng::derive(seed, {0x6b69747326ULL}));
  for (int g = 0; g < kNumGroups; ++g) {
    const GroupRange& r = kRanges[g];
    GroupTimbre t;
    t.center_freq = rng.uniform(r.f_lo, r.f_hi);
    t.decay = rng.uniform(r.d_lo, r.d_hi);
    t.noise_mix = rng.uniform(r.n_lo, r.n_hi);
    t.gain = rng.uniform(0.55, 0.9);
    kit.groups[g] = t;
  }
  return kit;
}

std::string kits_to_json(const std::vector<KitTimbre>& kits) {
  nlohmann::json j;
  j["schema"] = "kits.v1";
  j["kits"] = nlohmann::json::array();
  for (const KitTimbre& k : kits) {
    nlohmann::json e;
    e["kit_id"] = k.kit_id;
    e["seed"] = k.seed;
    for (int g = 0; g < kNumGroups; ++g) {
      const GroupTimbre& t = k.groups[g];
      e["groups"][group_name(static_cast<DrumGroup>(g))] = {
          {"center_freq", t.center_freq},
          {"decay", t.decay},
          {"noise_mix", t.noise_mix},
          {"gain", t.gain}};
    }
    j["kits"].push_back(e);
  }
  return j.dump(2);
}

std::vector<KitTimbre> kits_from_json(const std::string& json_text) {
  nlohmann::json j = nlohmann::json::parse(json_text);
  if (j.value("schema", "") != "kits.v1") throw DrumdiffError("kits json: unknown schema");
  std::vector<KitTimbre> kits;
  for (auto& e : j.at("kits")) {
    KitTimbre k;
    k.kit_id = e.at("kit_id").get<std::string>();
    k.seed = e.at("seed").get<std::uint64_t>();
    for (int g = 0; g < kNumGroups; ++g) {
      auto& t = e.at("groups").at(group_name(static_cast<DrumGroup>(g)));
      k.groups[g].center_freq = t.at("center_freq").get<double>();
      k.groups[g].decay = t.at("decay").get<double>();
      k.groups[g].noise_mix = t.at("noise_mix").get<double>();
      k.groups[g].gain = t.at("gain").get<double>();
    }
    kits.push_back(std::move(k));
  }
  return kits;
}

Waveform render_hit(DrumGroup group, const KitTimbre& kit) {
  const GroupTimbre& t = kit.groups[static_cast<int>(group)];
  if (t.decay <= 0.0) throw DrumdiffError("render_hit: decay must be positive");
  const std::size_t n =
      static_cast<std::size_t>(std::ceil(t.decay * 3.0 * kSampleRate));
  Waveform w;
  w.samples.assign(n, 0.0);
  if (t.gain == 0.0) return w;
  Rng rng(Rng::derive(kit.seed, {0x686974ULL, static_cast<std::uint64_t>(group)}));
  Resonator reso(t.center_freq, 2.0, kSampleRate);
  const double omega = 2.0 * M_PI * t.center_freq / kSampleRate;
  for (std::size_t i = 0; i < n; ++i) {
    const double time = static_cast<double>(i) / kSampleRate;
    const double env = std::exp(-time / t.decay);
    const double tone = std::sin(omega * static_cast<double>(i));
    const double noise = reso(rng.uniform(-1.0, 1.0)) * 4.0;
    w.samples[i] = t.gain * env * ((1.0 - t.noise_mix) * tone + t.noise_mix * noise);
  }
  return w;
}

Waveform render_grid(const BinarizedGrid& grid, const KitTimbre& kit) {
  const double segment = grid.step_seconds() * static_cast<double>(grid.rows());
  const double tail = 1.0;  // fixed release tail, seconds
  const std::size_t total =
      static_cast<std::size_t>(std::ceil((segment + tail) * kSampleRate));
  Waveform out;
  out.samples.assign(total, 0.0);
  for (const DrumEvent& e : dequantize(grid)) {
    const Waveform hit = render_hit(e.group, kit);
    const std::size_t start =
        static_cast<std::size_t>(std::llround(e.onset_time * kSampleRate));
    if (start >= total) continue;
    const std::size_t m = std::min(hit.samples.size(), total - start);
    for (std::size_t i = 0; i < m; ++i) out.samples[start + i] += hit.samples[i];
  }
  for (double& s : out.samples) s = std::tanh(s);
  return out;
}

LatentSeq pseudo_latent(const Waveform& wave) {
  if (wave.samples.empty()) throw DrumdiffError("pseudo_latent: empty waveform");
  static const std::vector<double> fb =
      mel_filterbank(kLatentDim, kLatentHop, kSampleRate, 20.0, 16000.0);
  const std::size_t nbins = kLatentHop / 2 + 1;
  const std::size_t frames = wave.samples.size() / kLatentHop;
  LatentSeq lat(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    const std::vector<double> ps =
        power_spectrum(wave.samples.data() + f * kLatentHop, kLatentHop);
    for (int b = 0; b < kLatentDim; ++b) {
      double e = 0.0;
      const double* fbb = fb.data() + static_cast<std::size_t>(b) * nbins;
      for (std::size_t k = 0; k < nbins; ++k) e += fbb[k] * ps[k];
      const double db = e > 0.0 ? 10.0 * std::log10(e) : kLogFloorDb;
      lat.at(f, b) = std::max(db, kLogFloorDb);
    }
  }
  return lat;
}

}  // namespace drumdiff
