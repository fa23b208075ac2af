#include "drumdiff/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "drumdiff/dsp.hpp"

namespace drumdiff {

namespace {

constexpr std::size_t kWindow = 2048;
constexpr std::size_t kHop = 512;
constexpr int kNoveltyMels = 64;

// Log-mel frames (dB, floored) of a waveform; frame k covers samples
// starting at k*kHop.
std::vector<std::vector<double>> log_mel_frames(const Waveform& wave) {
  static const std::vector<double> fb =
      mel_filterbank(kNoveltyMels, kWindow, kSampleRate, 20.0, 16000.0);
  const std::size_t nbins = kWindow / 2 + 1;
  std::vector<std::vector<double>> frames;
  if (wave.samples.size() < kWindow) return frames;
  const std::size_t n_frames = (wave.samples.size() - kWindow) / kHop + 1;
  frames.reserve(n_frames);
  for (std::size_t f = 0; f < n_frames; ++f) {
    const std::vector<double> ps = power_spectrum(wave.samples.data() + f * kHop, kWindow);
    std::vector<double> mel(kNoveltyMels);
    for (int b = 0; b < kNoveltyMels; ++b) {
      double e = 0.0;
      const double* fbb = fb.data() + static_cast<std::size_t>(b) * nbins;
      for (std::size_t k = 0; k < nbins; ++k) e += fbb[k] * ps[k];
      mel[b] = std::max(e > 0.0 ? 10.0 * std::log10(e) : kLogFloorDb, kLogFloorDb);
    }
    frames.push_back(std::move(mel));
  }
  return frames;
}

// Rectified flux novelty over feature frames; the virtual previous frame of
// frame 0 is the per-channel minimum, so leading silence gives 0 novelty
// while a hit in frame 0 still registers.
std::vector<double> flux_novelty(const std::vector<std::vector<double>>& frames) {
  std::vector<double> novelty(frames.size(), 0.0);
  if (frames.empty()) return novelty;
  const std::size_t dim = frames[0].size();
  std::vector<double> floor_frame(dim, 1e300);
  for (const auto& f : frames)
    for (std::size_t c = 0; c < dim; ++c) floor_frame[c] = std::min(floor_frame[c], f[c]);
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const std::vector<double>& prev = k == 0 ? floor_frame : frames[k - 1];
    double s = 0.0;
    for (std::size_t c = 0; c < dim; ++c) {
      const double d = frames[k][c] - prev[c];
      if (d > 0.0) s += d * d;
    }
    novelty[k] = std::sqrt(s);
  }
  return novelty;
}

// Local max within +-w and above both the moving mean and a fixed fraction
// of the global peak.
std::vector<std::size_t> pick_peaks(const std::vector<double>& novelty, int w, int mean_w,
                                    double rel_threshold) {
  std::vector<std::size_t> peaks;
  if (novelty.empty()) return peaks;
  const double gmax = *std::max_element(novelty.begin(), novelty.end());
  if (gmax <= 0.0) return peaks;
  const double abs_threshold = rel_threshold * gmax;
  const int n = static_cast<int>(novelty.size());
  for (int k = 0; k < n; ++k) {
    const double v = novelty[k];
    if (v < abs_threshold) continue;
    bool is_max = true;
    for (int j = std::max(0, k - w); j <= std::min(n - 1, k + w); ++j) {
      if (j == k) continue;
      if (novelty[j] > v || (novelty[j] == v && j < k)) {
        is_max = false;
        break;
      }
    }
    if (!is_max) continue;
    double mean = 0.0;
    int cnt = 0;
    for (int j = std::max(0, k - mean_w); j <= std::min(n - 1, k + mean_w); ++j) {
      mean += novelty[j];
      ++cnt;
    }
    mean /= cnt;
    if (v >= mean + 1e-12) peaks.push_back(static_cast<std::size_t>(k));
  }
  return peaks;
}

std::vector<std::vector<double>> latent_frames(const LatentSeq& latent) {
  std::vector<std::vector<double>> frames(latent.frames);
  for (std::size_t f = 0; f < latent.frames; ++f)
    frames[f].assign(latent.row(f), latent.row(f) + kLatentDim);
  return frames;
}

// ---- beat tracking core (Ellis-style DP) ----

OnsetList dp_beats(const std::vector<double>& novelty_in, double frame_seconds) {
  OnsetList beats;
  const std::size_t n = novelty_in.size();
  if (n < 8) return beats;
  // normalize novelty to unit std
  double mean = 0.0;
  for (double v : novelty_in) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : novelty_in) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  if (var <= 0.0) return beats;
  std::vector<double> novelty(n);
  const double inv_std = 1.0 / std::sqrt(var);
  for (std::size_t i = 0; i < n; ++i) novelty[i] = (novelty_in[i] - mean) * inv_std;

  // global tempo via autocorrelation peak in 60..200 BPM
  const int lag_min = std::max(1, static_cast<int>(std::floor(60.0 / 200.0 / frame_seconds)));
  const int lag_max = static_cast<int>(std::ceil(60.0 / 60.0 / frame_seconds));
  if (lag_max <= lag_min || static_cast<std::size_t>(lag_max) >= n) return beats;
  double best_acf = -1e300;
  int period = lag_min;
  for (int lag = lag_min; lag <= lag_max; ++lag) {
    double acf = 0.0;
    for (std::size_t i = lag; i < n; ++i) acf += novelty[i] * novelty[i - lag];
    acf /= static_cast<double>(n - lag);
    if (acf > best_acf) {
      best_acf = acf;
      period = lag;
    }
  }

  // DP over frames: score(i) = novelty(i) + max_j score(j) - tightness*log^2((i-j)/period)
  const double tightness = 100.0;
  std::vector<double> score(novelty);
  std::vector<int> backlink(n, -1);
  const int lo = std::max(1, period / 2);
  const int hi = period * 2;
  for (int i = 0; i < static_cast<int>(n); ++i) {
    double best = 0.0;
    int arg = -1;
    for (int j = i - hi; j <= i - lo; ++j) {
      if (j < 0) continue;
      const double logratio = std::log(static_cast<double>(i - j) / period);
      const double cand = score[j] - tightness * logratio * logratio;
      if (cand > best) {
        best = cand;
        arg = j;
      }
    }
    score[i] = novelty[i] + best;
    backlink[i] = arg;
  }
  // pick the best end among the last period of frames
  int end = static_cast<int>(n) - 1;
  for (int i = std::max(0, static_cast<int>(n) - period); i < static_cast<int>(n); ++i)
    if (score[i] > score[end]) end = i;
  std::vector<int> frames;
  for (int i = end; i >= 0; i = backlink[i]) {
    frames.push_back(i);
    if (backlink[i] < 0) break;
  }
  std::reverse(frames.begin(), frames.end());
  for (int f : frames) beats.push_back(f * frame_seconds);
  return beats;
}

std::vector<double> rms_envelope_db(const Waveform& w, std::size_t total_len) {
  std::vector<double> padded = w.samples;
  padded.resize(std::max(total_len, kWindow), 0.0);
  const std::size_t n_frames = (padded.size() - kWindow) / kHop + 1;
  std::vector<double> env(n_frames);
  for (std::size_t f = 0; f < n_frames; ++f) {
    double acc = 0.0;
    for (std::size_t i = 0; i < kWindow; ++i) {
      const double s = padded[f * kHop + i];
      acc += s * s;
    }
    const double rms = std::sqrt(acc / static_cast<double>(kWindow));
    env[f] = std::max(rms > 0.0 ? 20.0 * std::log10(rms) : kLogFloorDb, kLogFloorDb);
  }
  return env;
}

}  // namespace

OnsetList detect_onsets(const Waveform& wave) {
  if (wave.samples.empty()) throw DrumdiffError("detect_onsets: empty waveform");
  const auto frames = log_mel_frames(wave);
  const auto novelty = flux_novelty(frames);
  const auto peaks = pick_peaks(novelty, 3, 10, 0.05);
  OnsetList onsets;
  const double frame_seconds = static_cast<double>(kHop) / kSampleRate;
  for (std::size_t k : peaks)
    onsets.push_back(static_cast<double>(k) * frame_seconds +
                     0.5 * static_cast<double>(kWindow) / kSampleRate);
  return onsets;
}

OnsetList detect_onsets(const LatentSeq& latent) {
  if (latent.empty()) throw DrumdiffError("detect_onsets: empty latent sequence");
  const auto novelty = flux_novelty(latent_frames(latent));
  const auto peaks = pick_peaks(novelty, 2, 6, 0.10);
  OnsetList onsets;
  for (std::size_t k : peaks)
    onsets.push_back(static_cast<double>(k) * kLatentFrameSeconds);
  return onsets;
}

OnsetScore onset_f1(const OnsetList& est, const OnsetList& ref, double tolerance) {
  OnsetScore s;
  if (est.empty() && ref.empty()) {
    s.precision = s.recall = s.f1 = 1.0;
    return s;
  }
  if (est.empty() || ref.empty()) return s;
  // Kuhn's augmenting paths over the tolerance adjacency = maximum matching.
  const std::size_t ne = est.size(), nr = ref.size();
  std::vector<std::vector<int>> adj(ne);
  for (std::size_t i = 0; i < ne; ++i)
    for (std::size_t j = 0; j < nr; ++j)
      if (std::abs(est[i] - ref[j]) <= tolerance) adj[i].push_back(static_cast<int>(j));
  std::vector<int> match_ref(nr, -1);
  std::vector<char> used(nr, 0);
  std::function<bool(std::size_t)> try_match = [&](std::size_t i) -> bool {
    for (int j : adj[i]) {
      if (used[j]) continue;
      used[j] = 1;
      if (match_ref[j] < 0 || try_match(static_cast<std::size_t>(match_ref[j]))) {
        match_ref[j] = static_cast<int>(i);
        return true;
      }
    }
    return false;
  };
  int matches = 0;
  for (std::size_t i = 0; i < ne; ++i) {
    std::fill(used.begin(), used.end(), 0);
    if (try_match(i)) ++matches;
  }
  s.matches = matches;
  s.precision = static_cast<double>(matches) / static_cast<double>(ne);
  s.recall = static_cast<double>(matches) / static_cast<double>(nr);
  s.f1 = (s.precision + s.recall) > 0.0
             ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
             : 0.0;
  return s;
}

double rms_error_db(const Waveform& est, const Waveform& ref) {
  if (est.sample_rate != ref.sample_rate)
    throw DrumdiffError("rms_error_db: sample rates differ");
  const std::size_t len = std::max(est.samples.size(), ref.samples.size());
  const auto env_e = rms_envelope_db(est, len);
  const auto env_r = rms_envelope_db(ref, len);
  double acc = 0.0;
  for (std::size_t i = 0; i < env_e.size(); ++i) acc += std::abs(env_e[i] - env_r[i]);
  return env_e.empty() ? 0.0 : acc / static_cast<double>(env_e.size());
}

double rms_error_db(const LatentSeq& est, const LatentSeq& ref) {
  const std::size_t frames = std::max(est.frames, ref.frames);
  auto frame_db = [](const LatentSeq& l, std::size_t f) {
    if (f >= l.frames) return kLogFloorDb;
    double p = 0.0;
    for (int c = 0; c < kLatentDim; ++c) p += std::pow(10.0, l.at(f, c) / 10.0);
    return std::max(10.0 * std::log10(p / kLatentDim), kLogFloorDb);
  };
  if (frames == 0) return 0.0;
  double acc = 0.0;
  for (std::size_t f = 0; f < frames; ++f)
    acc += std::abs(frame_db(est, f) - frame_db(ref, f));
  return acc / static_cast<double>(frames);
}

OnsetList track_beats(const Waveform& wave) {
  if (wave.samples.empty()) throw DrumdiffError("track_beats: empty waveform");
  const auto novelty = flux_novelty(log_mel_frames(wave));
  const double frame_seconds = static_cast<double>(kHop) / kSampleRate;
  OnsetList beats = dp_beats(novelty, frame_seconds);
  for (double& b : beats) b += 0.5 * static_cast<double>(kWindow) / kSampleRate;
  return beats;
}

OnsetList track_beats(const LatentSeq& latent) {
  if (latent.empty()) throw DrumdiffError("track_beats: empty latent sequence");
  return dp_beats(flux_novelty(latent_frames(latent)), kLatentFrameSeconds);
}

namespace {

// Reference variations for AMLt: original, offbeat, double, half (both
// phases).
std::vector<OnsetList> beat_variations(const OnsetList& ref) {
  std::vector<OnsetList> vars;
  vars.push_back(ref);
  OnsetList offbeat, dbl, half_even, half_odd;
  for (std::size_t i = 0; i + 1 < ref.size(); ++i)
    offbeat.push_back(0.5 * (ref[i] + ref[i + 1]));
  for (std::size_t i = 0; i < ref.size(); ++i) {
    dbl.push_back(ref[i]);
    if (i + 1 < ref.size()) dbl.push_back(0.5 * (ref[i] + ref[i + 1]));
    if (i % 2 == 0) half_even.push_back(ref[i]);
    if (i % 2 == 1) half_odd.push_back(ref[i]);
  }
  vars.push_back(std::move(offbeat));
  vars.push_back(std::move(dbl));
  vars.push_back(std::move(half_even));
  vars.push_back(std::move(half_odd));
  return vars;
}

double continuity_score(const OnsetList& est, const OnsetList& ref) {
  if (ref.size() < 2 || est.empty()) return 0.0;
  const double tol = 0.175;
  std::vector<char> used(ref.size(), 0);
  std::vector<char> good(est.size(), 0);
  for (std::size_t m = 0; m < est.size(); ++m) {
    // nearest reference beat
    std::size_t nearest = 0;
    double best = std::abs(est[m] - ref[0]);
    for (std::size_t j = 1; j < ref.size(); ++j) {
      const double d = std::abs(est[m] - ref[j]);
      if (d < best) {
        best = d;
        nearest = j;
      }
    }
    bool ok = false;
    if (!used[nearest]) {
      const double local_interval = nearest + 1 < ref.size()
                                        ? ref[nearest + 1] - ref[nearest]
                                        : ref[nearest] - ref[nearest - 1];
      if (best < tol * local_interval) {
        if (m == 0) {
          ok = true;
        } else {
          const double est_interval = est[m] - est[m - 1];
          const double ref_interval =
              nearest > 0 ? ref[nearest] - ref[nearest - 1] : ref[1] - ref[0];
          if (std::abs(1.0 - est_interval / ref_interval) < tol) ok = true;
        }
      }
    }
    used[nearest] = 1;
    good[m] = ok ? 1 : 0;
  }
  // continuity: a beat counts only when its predecessor was also correct;
  // the first estimated beat needs only itself.
  std::size_t total = 0;
  for (std::size_t m = 0; m < est.size(); ++m) {
    const bool continuous = good[m] && (m == 0 || good[m - 1]);
    if (continuous) ++total;
  }
  const std::size_t denom = std::max(est.size(), ref.size());
  return static_cast<double>(total) / static_cast<double>(denom);
}

}  // namespace

Continuity continuity_metrics(const OnsetList& est_beats, const OnsetList& ref_beats) {
  Continuity c;
  if (ref_beats.size() < 2) return c;
  c.cmlt = continuity_score(est_beats, ref_beats);
  c.amlt = 0.0;
  for (const OnsetList& v : beat_variations(ref_beats))
    c.amlt = std::max(c.amlt, continuity_score(est_beats, v));
  return c;
}

nlohmann::json MetricsReport::to_json() const {
  return nlohmann::json{{"f1", f1},
                        {"precision", precision},
                        {"recall", recall},
                        {"rms_error_db", rms_error_db},
                        {"cmlt", cmlt},
                        {"amlt", amlt},
                        {"est_onsets", est_onsets},
                        {"ref_onsets", ref_onsets},
                        {"tolerance", tolerance}};
}

}  // namespace drumdiff
