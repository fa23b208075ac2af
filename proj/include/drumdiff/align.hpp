#pragma once

#include <cstddef>
#include <vector>

#include "drumdiff/tensor.hpp"

namespace drumdiff {

// Timeline bridge between grid steps and latent frames. Frame k sits at
// k*frame_seconds, step s at s*step_seconds (both interval starts).
struct AlignmentSpec {
  double step_seconds = 0.0;
  double frame_seconds = 0.0;
  std::size_t n_frames = 0;
  std::size_t n_steps = 0;
};

// For each frame k, the source step argmin_s |k*frame - s*step|, clamped to
// [0, n_steps-1]; ties go to the smaller step. Non-decreasing in k.
std::vector<std::size_t> align_indices(const AlignmentSpec& spec);

// Copy grid-step feature rows onto the frame timeline (no interpolation).
Tensor align_content(const Tensor& features, const AlignmentSpec& spec);

}  // namespace drumdiff
