#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "drumdiff/common.hpp"
#include "drumdiff/grid.hpp"

namespace drumdiff {

struct Waveform {
  std::vector<double> samples;
  int sample_rate = kSampleRate;

  double duration_seconds() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

struct GroupTimbre {
  double center_freq = 100.0;  // Hz
  double decay = 0.2;          // seconds, > 0
  double noise_mix = 0.3;      // [0,1], 0 = pure tone
  double gain = 0.8;           // [0,1]
};

struct KitTimbre {
  std::string kit_id;
  std::uint64_t seed = 0;
  std::array<GroupTimbre, kNumGroups> groups;
};

// Deterministic kit with per-group parameter ranges that keep the nine
// groups spectrally separated (kick low, hats noisy and high, ...).
KitTimbre random_kit(const std::string& kit_id, std::uint64_t seed);

std::string kits_to_json(const std::vector<KitTimbre>& kits);
std::vector<KitTimbre> kits_from_json(const std::string& json_text);

// One drum hit: exponentially enveloped sine burst mixed with band-filtered
// noise, length ceil(decay * 3 * sample_rate). Deterministic per (kit, group).
Waveform render_hit(DrumGroup group, const KitTimbre& kit);

// Sum of hits at dequantized onset times, soft-clipped with tanh.
// Length = segment duration + a fixed release tail.
Waveform render_grid(const BinarizedGrid& grid, const KitTimbre& kit);

// Non-overlapping frames of kLatentHop samples; per frame 64 log-compressed
// triangular band energies over 20 Hz..16 kHz, floored at kLogFloorDb.
LatentSeq pseudo_latent(const Waveform& wave);

}  // namespace drumdiff
