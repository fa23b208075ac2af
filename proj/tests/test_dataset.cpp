#include <doctest.h>

#include <set>

#include "drumdiff/dataset.hpp"

using namespace drumdiff;

namespace {

TrackRecord make_record(const std::string& midi, const std::string& kit) {
  TrackRecord r;
  r.midi_id = midi;
  r.kit_id = kit;
  TempoMap tempo;
  r.grids[64] = binarize({{0.0, DrumGroup::Kick, 100}}, tempo, 64, 2);
  return r;
}

ParsedSmf make_track(double bpm, double last_event_seconds, double event_step = 0.25) {
  ParsedSmf p;
  p.tempo.bpm = bpm;
  p.tempo_changes.push_back({0.0, bpm});
  for (double t = 0.0; t <= last_event_seconds + 1e-9; t += event_step)
    p.events.push_back({t, DrumGroup::Kick, 100});
  return p;
}

}  // namespace

TEST_CASE("segment windows span exactly 8 quarter notes") {
  ParsedSmf p = make_track(120.0, 7.9);  // 4 bars
  SegmentationResult r = segment_two_bars(p);
  REQUIRE(r.windows.size() == 2);
  CHECK(r.windows[0].start_seconds == doctest::Approx(0.0));
  CHECK(r.windows[1].start_seconds == doctest::Approx(4.0));
  for (const DrumEvent& e : r.windows[1].events) {
    CHECK(e.onset_time >= 0.0);
    CHECK(e.onset_time < 4.0);
  }
}

TEST_CASE("a track shorter than two bars yields no windows") {
  ParsedSmf p = make_track(120.0, 1.5);
  CHECK(segment_two_bars(p).windows.empty());
}

TEST_CASE("five bars yield two windows with one bar dropped") {
  // 5 bars at 120 = 10 s; events up to 9.9 s
  ParsedSmf p = make_track(120.0, 9.75);
  SegmentationResult r = segment_two_bars(p);
  CHECK(r.windows.size() == 2);
}

TEST_CASE("a tempo change inside a window rejects that window") {
  ParsedSmf p = make_track(120.0, 7.9);
  p.tempo_changes.push_back({5.0, 140.0});
  SegmentationResult r = segment_two_bars(p);
  CHECK(r.windows.size() == 1);
  REQUIRE(r.rejected.size() == 1);
  CHECK(r.rejected[0].find("tempo change") != std::string::npos);
}

TEST_CASE("window events reassemble the original in-range events") {
  ParsedSmf p = make_track(100.0, 9.0, 0.4);
  SegmentationResult r = segment_two_bars(p);
  std::vector<double> reassembled;
  for (const EventWindow& w : r.windows)
    for (const DrumEvent& e : w.events) reassembled.push_back(w.start_seconds + e.onset_time);
  const double horizon = static_cast<double>(r.windows.size()) * 8.0 * 60.0 / 100.0;
  std::size_t idx = 0;
  for (const DrumEvent& e : p.events) {
    if (e.onset_time >= horizon) break;
    REQUIRE(idx < reassembled.size());
    CHECK(reassembled[idx] == doctest::Approx(e.onset_time));
    ++idx;
  }
  CHECK(idx == reassembled.size());
}

TEST_CASE("1 kit x 2 midis with enumerate-all gives both ordered pairs") {
  std::vector<TrackRecord> records{make_record("a", "k"), make_record("b", "k")};
  SplitPolicy policy;
  policy.kit_split["k"] = Split::Train;
  policy.midi_split["a"] = Split::Train;
  policy.midi_split["b"] = Split::Train;
  PairingResult r = build_pairs(records, policy);
  REQUIRE(r.pairs.size() == 2);
  std::set<std::pair<std::string, std::string>> got;
  for (const PairRecord& p : r.pairs) got.insert({p.target_id, p.reference_id});
  CHECK(got.count({"a/k", "b/k"}) == 1);
  CHECK(got.count({"b/k", "a/k"}) == 1);
}

TEST_CASE("3 kits x 4 midis enumerate-all gives 36 pairs") {
  std::vector<TrackRecord> records;
  SplitPolicy policy;
  for (int k = 0; k < 3; ++k) {
    const std::string kit = "k" + std::to_string(k);
    policy.kit_split[kit] = Split::Train;
    for (int m = 0; m < 4; ++m) {
      const std::string midi = "m" + std::to_string(m);
      policy.midi_split[midi] = Split::Train;
      records.push_back(make_record(midi, kit));
    }
  }
  PairingResult r = build_pairs(records, policy);
  CHECK(r.pairs.size() == 36);
  CHECK(r.unpaired.empty());
  CHECK(verify_splits(r.pairs).ok());
}

TEST_CASE("a kit with a single midi in a split is reported unpaired") {
  std::vector<TrackRecord> records{make_record("a", "k"), make_record("b", "k2")};
  SplitPolicy policy;
  policy.kit_split["k"] = Split::Train;
  policy.kit_split["k2"] = Split::Train;
  policy.midi_split["a"] = Split::Train;
  policy.midi_split["b"] = Split::Train;
  PairingResult r = build_pairs(records, policy);
  CHECK(r.pairs.empty());
  CHECK(r.unpaired.size() == 2);
}

TEST_CASE("verify_splits flags kit leakage and mismatched pairs") {
  PairRecord good{"a/k", "b/k", "a", "b", "k", "train"};
  CHECK(verify_splits({good}).ok());

  PairRecord leak_a{"a/k", "b/k", "a", "b", "k", "train"};
  PairRecord leak_b{"c/k", "d/k", "c", "d", "k", "test"};
  SplitReport rep = verify_splits({leak_a, leak_b});
  REQUIRE_FALSE(rep.ok());
  bool mentions_kit = false;
  for (const std::string& v : rep.violations)
    if (v.find("kit k") != std::string::npos) mentions_kit = true;
  CHECK(mentions_kit);

  PairRecord cross_kit{"a/k", "b/j", "a", "b", "k", "train"};
  SplitReport rep2 = verify_splits({cross_kit});
  REQUIRE_FALSE(rep2.ok());
  CHECK(rep2.violations[0].find("share kit") != std::string::npos);

  PairRecord same_midi{"a/k", "a/k", "a", "a", "k", "train"};
  CHECK_FALSE(verify_splits({same_midi}).ok());
}

TEST_CASE("random split policies keep emitted pairs consistent (property)") {
  Rng rng(606);
  for (int trial = 0; trial < 100; ++trial) {
    const int n_kits = 2 + static_cast<int>(rng.below(4));
    const int n_midis = 2 + static_cast<int>(rng.below(6));
    std::vector<TrackRecord> records;
    SplitPolicy policy;
    policy.pair_mode = rng.uniform() < 0.5 ? SplitPolicy::PairMode::EnumerateAll
                                           : SplitPolicy::PairMode::SampleOne;
    for (int k = 0; k < n_kits; ++k) {
      const std::string kit = "k" + std::to_string(k);
      policy.kit_split[kit] = static_cast<Split>(rng.below(3));
      for (int m = 0; m < n_midis; ++m) {
        const std::string midi = "m" + std::to_string(m);
        policy.midi_split[midi] = static_cast<Split>(rng.below(3));
        records.push_back(make_record(midi, kit));
      }
    }
    Rng pair_rng(trial);
    PairingResult r = build_pairs(records, policy, &pair_rng);
    CHECK(verify_splits(r.pairs).ok());
    for (const PairRecord& p : r.pairs) {
      CHECK(p.target_midi != p.reference_midi);
      CHECK(p.target_id.substr(p.target_id.find('/') + 1) == p.kit_id);
      CHECK(policy.kit_split.at(p.kit_id) == *split_from_name(p.split));
    }
  }
}

TEST_CASE("manifest round trips preserve records and pairs") {
  CorpusConfig cfg;
  cfg.n_kits = 3;
  cfg.n_patterns = 8;
  cfg.val_midis = 2;
  cfg.test_midis = 2;
  SyntheticCorpus corpus = build_synthetic_corpus(cfg);
  const std::string text = tracks_to_jsonl(corpus.records);
  std::vector<TrackRecord> back = tracks_from_jsonl(text);
  REQUIRE(back.size() == corpus.records.size());
  CHECK(tracks_to_jsonl(back) == text);  // stable, diffable ordering

  PairingResult pairing = build_pairs(corpus.records, corpus.policy);
  const std::string ptext = pairs_to_jsonl(pairing.pairs);
  std::vector<PairRecord> pback = pairs_from_jsonl(ptext);
  CHECK(pairs_to_jsonl(pback) == ptext);
  CHECK(verify_splits(pback).ok());
}

TEST_CASE("synthetic corpus has the requested shape and clean splits") {
  CorpusConfig cfg;  // 4 kits x 64 patterns
  SyntheticCorpus corpus = build_synthetic_corpus(cfg);
  CHECK(corpus.records.size() == 256);
  std::set<std::string> kits, midis;
  int train_records = 0;
  for (const TrackRecord& r : corpus.records) {
    kits.insert(r.kit_id);
    midis.insert(r.midi_id);
    if (r.split == "train") ++train_records;
    REQUIRE(r.grids.count(16) == 1);
    REQUIRE(r.grids.count(32) == 1);
    REQUIRE(r.grids.count(64) == 1);
    CHECK(r.grids.at(16).rows() == 32);
    CHECK(r.grids.at(64).rows() == 128);
    // 16th and 64th grids describe the same pattern at different detail
    CHECK(r.grids.at(64).bpm == r.grids.at(16).bpm);
  }
  CHECK(kits.size() == 4);
  CHECK(midis.size() == 64);
  CHECK(train_records == 2 * 48);
  PairingResult pairing = build_pairs(corpus.records, corpus.policy);
  CHECK(verify_splits(pairing.pairs).ok());
}

TEST_CASE("generated patterns are sparse with a minimum onset gap") {
  Rng rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<DrumEvent> events = gen_pattern(rng, Style::Beat, 120.0);
    CHECK(!events.empty());
    std::set<double> distinct;
    for (const DrumEvent& e : events) distinct.insert(e.onset_time);
    CHECK(distinct.size() <= 9);
    double prev = -1.0;
    for (double t : distinct) {
      if (prev >= 0.0) CHECK(t - prev >= 14.0 * (60.0 / 120.0) / 16.0 - 1e-9);
      prev = t;
    }
  }
}
