#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace drumdiff {

// Audio/latent geometry shared by the synthesizer, the model and the metrics.
inline constexpr int kSampleRate = 44100;
inline constexpr int kLatentHop = 2048;      // samples per latent frame
inline constexpr int kLatentDim = 64;        // channels per latent frame
inline constexpr double kLatentFrameSeconds =
    static_cast<double>(kLatentHop) / static_cast<double>(kSampleRate);
inline constexpr double kLogFloorDb = -80.0;

// A sequence of latent frames, row-major frames x kLatentDim.
struct LatentSeq {
  std::size_t frames = 0;
  std::vector<double> data;  // frames * kLatentDim

  LatentSeq() = default;
  explicit LatentSeq(std::size_t n) : frames(n), data(n * kLatentDim, 0.0) {}

  double* row(std::size_t i) { return data.data() + i * kLatentDim; }
  const double* row(std::size_t i) const { return data.data() + i * kLatentDim; }
  double& at(std::size_t i, std::size_t c) { return data[i * kLatentDim + c]; }
  double at(std::size_t i, std::size_t c) const { return data[i * kLatentDim + c]; }
  bool empty() const { return frames == 0; }
};

struct DrumdiffError : std::runtime_error {
  explicit DrumdiffError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace drumdiff
