#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "drumdiff/synth.hpp"

namespace drumdiff {

using OnsetList = std::vector<double>;  // strictly increasing seconds

// Half-wave-rectified spectral flux on a log-mel spectrogram (window 2048,
// hop 512), peak-picked with a local-max + moving-mean threshold.
OnsetList detect_onsets(const Waveform& wave);

// Same peak picking on the rectified L2 frame novelty of a latent sequence.
OnsetList detect_onsets(const LatentSeq& latent);

struct OnsetScore {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  int matches = 0;
};

// Maximum bipartite matching within +-tolerance; each onset matched at most
// once. Both lists empty scores 1.
OnsetScore onset_f1(const OnsetList& est, const OnsetList& ref, double tolerance = 0.100);

// Mean absolute difference of the two frame-wise RMS envelopes in dBFS
// (window 2048, hop 512, -80 dB floor); lengths equalized by zero padding.
double rms_error_db(const Waveform& est, const Waveform& ref);

// Latent-domain analogue: per-frame total band energy in dB.
double rms_error_db(const LatentSeq& est, const LatentSeq& ref);

// Dynamic-programming beat tracker: global tempo from the novelty
// autocorrelation peak in 60-200 BPM, then DP with a log-spacing penalty.
OnsetList track_beats(const Waveform& wave);
OnsetList track_beats(const LatentSeq& latent);

struct Continuity {
  double cmlt = 0.0, amlt = 0.0;
};

// Continuity-based beat scores. A beat is correct when it is within 17.5%
// of the local reference interval of its (unused) nearest reference beat,
// its inter-beat interval matches within 17.5%, and the previous estimated
// beat was also correct. CMLt scores the reference as-is; AMLt takes the
// maximum over double/half-tempo and offbeat variations.
Continuity continuity_metrics(const OnsetList& est_beats, const OnsetList& ref_beats);

struct MetricsReport {
  double f1 = 0.0, precision = 0.0, recall = 0.0;
  double rms_error_db = 0.0;
  double cmlt = 0.0, amlt = 0.0;
  int est_onsets = 0, ref_onsets = 0;
  double tolerance = 0.100;

  nlohmann::json to_json() const;
};

}  // namespace drumdiff
