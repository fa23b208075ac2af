#include "drumdiff/align.hpp"

#include <cmath>

#include "drumdiff/common.hpp"

namespace drumdiff {

std::vector<std::size_t> align_indices(const AlignmentSpec& spec) {
  if (spec.step_seconds <= 0.0 || spec.frame_seconds <= 0.0)
    throw DrumdiffError("align: durations must be positive");
  if (spec.n_steps == 0) throw DrumdiffError("align: empty content");
  if (spec.n_frames == 0) throw DrumdiffError("align: empty frame timeline");
  std::vector<std::size_t> idx(spec.n_frames);
  for (std::size_t k = 0; k < spec.n_frames; ++k) {
    const double t = static_cast<double>(k) * spec.frame_seconds;
    // Nearest step; floor(x + 0.5) picks the smaller index on exact ties
    // only when the fractional part is below one half, so compare both
    // neighbours explicitly with <= favouring the smaller step.
    double ratio = t / spec.step_seconds;
    std::size_t lo = static_cast<std::size_t>(std::floor(ratio));
    if (lo >= spec.n_steps) lo = spec.n_steps - 1;
    std::size_t hi = lo + 1 < spec.n_steps ? lo + 1 : lo;
    const double d_lo = std::abs(t - static_cast<double>(lo) * spec.step_seconds);
    const double d_hi = std::abs(t - static_cast<double>(hi) * spec.step_seconds);
    idx[k] = d_lo <= d_hi ? lo : hi;
  }
  return idx;
}

Tensor align_content(const Tensor& features, const AlignmentSpec& spec) {
  if (features.shape().size() != 2 || features.rows() != spec.n_steps)
    throw DrumdiffError("align: features rows must equal n_steps");
  return gather_rows(features, align_indices(spec));
}

}  // namespace drumdiff
