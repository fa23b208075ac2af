#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "drumdiff/grid.hpp"
#include "drumdiff/midi.hpp"
#include "drumdiff/rng.hpp"

namespace drumdiff {

enum class Split { Train, Validation, Test };
const char* split_name(Split s);
std::optional<Split> split_from_name(const std::string& name);

enum class Style { Beat, Fill };

// One 2-bar segment rendered (or renderable) with one kit.
struct TrackRecord {
  std::string midi_id;
  std::string kit_id;
  Style style = Style::Beat;
  double bpm = 120.0;
  int bars = 2;
  std::map<int, BinarizedGrid> grids;  // by resolution
  std::string split;                    // "train"|"validation"|"test"|"unused"
  std::string audio_path;               // optional externally supplied audio

  std::string id() const { return midi_id + "/" + kit_id; }
};

struct PairRecord {
  std::string target_id;     // midi/kit
  std::string reference_id;  // midi/kit
  std::string target_midi, reference_midi;
  std::string kit_id;
  std::string split;
};

// A 2-bar event window with events re-based to window-local time.
struct EventWindow {
  double start_seconds = 0.0;
  std::vector<DrumEvent> events;
};

struct SegmentationResult {
  std::vector<EventWindow> windows;
  std::vector<std::string> rejected;  // reasons, e.g. tempo change inside a window
};

// Non-overlapping 8-quarter-note windows; a final partial window is dropped.
// Windows containing a tempo change are rejected with a reason.
SegmentationResult segment_two_bars(const ParsedSmf& parsed);

struct SplitPolicy {
  std::map<std::string, Split> kit_split;   // must partition kit ids
  std::map<std::string, Split> midi_split;  // must partition midi ids
  enum class PairMode { SampleOne, EnumerateAll } pair_mode = PairMode::EnumerateAll;
};

struct PairingResult {
  std::vector<PairRecord> pairs;
  std::vector<std::string> unpaired;  // record ids with no usable reference
};

// Pair each target with same-kit, different-midi references inside its
// split. SampleOne picks one reference per target with the given rng.
PairingResult build_pairs(const std::vector<TrackRecord>& records,
                          const SplitPolicy& policy, Rng* rng = nullptr);

struct SplitReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

// Kit-id sets and midi-id sets of the three splits must be pairwise
// disjoint; every pair must share kit and split and differ in midi.
SplitReport verify_splits(const std::vector<PairRecord>& pairs);

// JSONL manifests, one record per line, sorted by id for stable diffs.
std::string tracks_to_jsonl(const std::vector<TrackRecord>& records);
std::vector<TrackRecord> tracks_from_jsonl(const std::string& text);
std::string pairs_to_jsonl(const std::vector<PairRecord>& pairs);
std::vector<PairRecord> pairs_from_jsonl(const std::string& text);

// ---- synthetic corpus ----

struct CorpusConfig {
  int n_kits = 4;
  int n_patterns = 64;
  double bpm = 120.0;
  std::uint64_t seed = 7;
  std::vector<int> resolutions{16, 32, 64};
  int val_kits = 1, test_kits = 1;
  int val_midis = 8, test_midis = 8;
  double fill_fraction = 0.125;
};

// Sparse 2-bar drum patterns on the 64th grid: onsets anchored to 16th
// positions with occasional 64th-step jitter, minimum spacing between global
// onsets. Fills concentrate extra hits in the second bar.
std::vector<DrumEvent> gen_pattern(Rng& rng, Style style, double bpm);

struct SyntheticCorpus {
  std::vector<TrackRecord> records;
  SplitPolicy policy;
};

SyntheticCorpus build_synthetic_corpus(const CorpusConfig& cfg);

}  // namespace drumdiff
