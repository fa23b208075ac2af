#include "drumdiff/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include <json.hpp>

namespace drumdiff {

const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Validation: return "validation";
    case Split::Test: return "test";
  }
  return "?";
}

std::optional<Split> split_from_name(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "validation") return Split::Validation;
  if (name == "test") return Split::Test;
  return std::nullopt;
}

SegmentationResult segment_two_bars(const ParsedSmf& parsed) {
  SegmentationResult out;
  if (parsed.tempo.bpm <= 0.0) throw DrumdiffError("segment: bpm must be positive");
  const double window = 8.0 * parsed.tempo.quarter_seconds();  // 2 bars in 4/4
  const double bar = parsed.tempo.bar_seconds();
  if (parsed.events.empty()) return out;
  const double last = parsed.events.back().onset_time;
  const long n_bars = static_cast<long>(std::floor(last / bar)) + 1;
  const long n_windows = n_bars / 2;
  for (long w = 0; w < n_windows; ++w) {
    const double t0 = static_cast<double>(w) * window;
    const double t1 = t0 + window;
    bool rejected = false;
    for (const TempoChange& tc : parsed.tempo_changes) {
      if (tc.time_seconds > t0 && tc.time_seconds < t1 && tc.bpm != parsed.tempo.bpm) {
        out.rejected.push_back("window " + std::to_string(w) +
                               ": tempo change inside segment");
        rejected = true;
        break;
      }
    }
    if (rejected) continue;
    EventWindow ew;
    ew.start_seconds = t0;
    for (const DrumEvent& e : parsed.events)
      if (e.onset_time >= t0 && e.onset_time < t1)
        ew.events.push_back({e.onset_time - t0, e.group, e.velocity});
    out.windows.push_back(std::move(ew));
  }
  return out;
}

PairingResult build_pairs(const std::vector<TrackRecord>& records,
                          const SplitPolicy& policy, Rng* rng) {
  PairingResult out;
  // Records usable for pairing: kit split and midi split must agree.
  std::map<std::string, std::vector<const TrackRecord*>> by_kit;
  std::map<std::string, Split> record_split;
  std::vector<const TrackRecord*> usable;
  for (const TrackRecord& r : records) {
    auto kit_it = policy.kit_split.find(r.kit_id);
    auto midi_it = policy.midi_split.find(r.midi_id);
    if (kit_it == policy.kit_split.end() || midi_it == policy.midi_split.end()) continue;
    if (kit_it->second != midi_it->second) continue;
    record_split[r.id()] = kit_it->second;
    by_kit[r.kit_id].push_back(&r);
    usable.push_back(&r);
  }
  std::sort(usable.begin(), usable.end(),
            [](const TrackRecord* a, const TrackRecord* b) { return a->id() < b->id(); });
  for (auto& [kit, v] : by_kit)
    std::sort(v.begin(), v.end(),
              [](const TrackRecord* a, const TrackRecord* b) { return a->id() < b->id(); });

  for (const TrackRecord* target : usable) {
    std::vector<const TrackRecord*> candidates;
    for (const TrackRecord* ref : by_kit[target->kit_id])
      if (ref->midi_id != target->midi_id) candidates.push_back(ref);
    if (candidates.empty()) {
      out.unpaired.push_back(target->id());
      continue;
    }
    auto emit = [&](const TrackRecord* ref) {
      PairRecord p;
      p.target_id = target->id();
      p.reference_id = ref->id();
      p.target_midi = target->midi_id;
      p.reference_midi = ref->midi_id;
      p.kit_id = target->kit_id;
      p.split = split_name(record_split[target->id()]);
      out.pairs.push_back(std::move(p));
    };
    if (policy.pair_mode == SplitPolicy::PairMode::EnumerateAll) {
      for (const TrackRecord* ref : candidates) emit(ref);
    } else {
      if (!rng) throw DrumdiffError("build_pairs: SampleOne mode needs an rng");
      emit(candidates[rng->below(candidates.size())]);
    }
  }
  return out;
}

SplitReport verify_splits(const std::vector<PairRecord>& pairs) {
  SplitReport report;
  std::map<std::string, std::set<std::string>> kits_by_split, midis_by_split;
  for (const PairRecord& p : pairs) {
    if (!split_from_name(p.split)) {
      report.violations.push_back("pair " + p.target_id + "->" + p.reference_id +
                                  ": unknown split '" + p.split + "'");
      continue;
    }
    kits_by_split[p.split].insert(p.kit_id);
    midis_by_split[p.split].insert(p.target_midi);
    midis_by_split[p.split].insert(p.reference_midi);
    const auto slash_t = p.target_id.find('/');
    const auto slash_r = p.reference_id.find('/');
    const std::string target_kit =
        slash_t == std::string::npos ? "" : p.target_id.substr(slash_t + 1);
    const std::string ref_kit =
        slash_r == std::string::npos ? "" : p.reference_id.substr(slash_r + 1);
    if (target_kit != p.kit_id || ref_kit != p.kit_id)
      report.violations.push_back("pair " + p.target_id + "->" + p.reference_id +
                                  ": members do not share kit " + p.kit_id);
    if (p.target_midi == p.reference_midi)
      report.violations.push_back("pair " + p.target_id + "->" + p.reference_id +
                                  ": target and reference share midi id");
  }
  const char* names[3] = {"train", "validation", "test"};
  for (int a = 0; a < 3; ++a)
    for (int b = a + 1; b < 3; ++b) {
      for (const std::string& kit : kits_by_split[names[a]])
        if (kits_by_split[names[b]].count(kit))
          report.violations.push_back("kit " + kit + " appears in both " + names[a] +
                                      " and " + names[b]);
      for (const std::string& midi : midis_by_split[names[a]])
        if (midis_by_split[names[b]].count(midi))
          report.violations.push_back("midi " + midi + " appears in both " + names[a] +
                                      " and " + names[b]);
    }
  return report;
}

// ---- manifests ----

namespace {

nlohmann::json track_to_json(const TrackRecord& r) {
  nlohmann::json j;
  j["schema"] = "track.v1";
  j["midi_id"] = r.midi_id;
  j["kit_id"] = r.kit_id;
  j["style"] = r.style == Style::Beat ? "beat" : "fill";
  j["bpm"] = r.bpm;
  j["bars"] = r.bars;
  j["split"] = r.split;
  if (!r.audio_path.empty()) j["audio_path"] = r.audio_path;
  nlohmann::json grids = nlohmann::json::object();
  for (auto& [res, g] : r.grids)
    grids[std::to_string(res)] = nlohmann::json::parse(grid_to_json(g));
  j["grids"] = grids;
  return j;
}

TrackRecord track_from_json(const nlohmann::json& j) {
  if (j.value("schema", "") != "track.v1")
    throw DrumdiffError("track manifest: unknown schema");
  TrackRecord r;
  r.midi_id = j.at("midi_id").get<std::string>();
  r.kit_id = j.at("kit_id").get<std::string>();
  r.style = j.value("style", "beat") == "fill" ? Style::Fill : Style::Beat;
  r.bpm = j.at("bpm").get<double>();
  r.bars = j.at("bars").get<int>();
  r.split = j.value("split", "unused");
  r.audio_path = j.value("audio_path", "");
  for (auto& [key, gj] : j.at("grids").items())
    r.grids[std::stoi(key)] = grid_from_json(gj.dump());
  return r;
}

}  // namespace

std::string tracks_to_jsonl(const std::vector<TrackRecord>& records) {
  std::vector<const TrackRecord*> sorted;
  for (const auto& r : records) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(),
            [](const TrackRecord* a, const TrackRecord* b) { return a->id() < b->id(); });
  std::ostringstream out;
  for (const TrackRecord* r : sorted) out << track_to_json(*r).dump() << "\n";
  return out.str();
}

std::vector<TrackRecord> tracks_from_jsonl(const std::string& text) {
  std::vector<TrackRecord> records;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    records.push_back(track_from_json(nlohmann::json::parse(line)));
  }
  return records;
}

std::string pairs_to_jsonl(const std::vector<PairRecord>& pairs) {
  std::vector<const PairRecord*> sorted;
  for (const auto& p : pairs) sorted.push_back(&p);
  std::sort(sorted.begin(), sorted.end(), [](const PairRecord* a, const PairRecord* b) {
    return std::tie(a->target_id, a->reference_id) < std::tie(b->target_id, b->reference_id);
  });
  std::ostringstream out;
  for (const PairRecord* p : sorted) {
    nlohmann::json j;
    j["schema"] = "pair.v1";
    j["target"] = p->target_id;
    j["reference"] = p->reference_id;
    j["target_midi"] = p->target_midi;
    j["reference_midi"] = p->reference_midi;
    j["kit_id"] = p->kit_id;
    j["split"] = p->split;
    out << j.dump() << "\n";
  }
  return out.str();
}

std::vector<PairRecord> pairs_from_jsonl(const std::string& text) {
  std::vector<PairRecord> pairs;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    if (j.value("schema", "") != "pair.v1")
      throw DrumdiffError("pair manifest: unknown schema");
    PairRecord p;
    p.target_id = j.at("target").get<std::string>();
    p.reference_id = j.at("reference").get<std::string>();
    p.target_midi = j.at("target_midi").get<std::string>();
    p.reference_midi = j.at("reference_midi").get<std::string>();
    p.kit_id = j.at("kit_id").get<std::string>();
    p.split = j.at("split").get<std::string>();
    pairs.push_back(std::move(p));
  }
  return pairs;
}

// ---- synthetic corpus ----

std::vector<DrumEvent> gen_pattern(Rng& rng, Style style, double bpm) {
  // 2 bars at 64th resolution -> 128 steps; onsets anchored to 16th
  // positions (multiples of 4) with occasional off-16th jitter so higher
  // binarization resolutions genuinely carry more timing detail.
  const double step64 = (60.0 / bpm) / 16.0;
  const int total_steps = 128;
  const int min_gap = 14;  // in 64th steps; keeps patterns sparse
  std::vector<int> onsets;
  auto try_place = [&](int step) {
    if (step < 0 || step >= total_steps) return;
    for (int o : onsets)
      if (std::abs(o - step) < min_gap) return;
    onsets.push_back(step);
  };
  const int want = style == Style::Beat ? 4 + static_cast<int>(rng.below(4))
                                        : 6 + static_cast<int>(rng.below(3));
  try_place(0);  // anchor a downbeat hit
  int guard = 0;
  while (static_cast<int>(onsets.size()) < want && guard++ < 200) {
    int anchor = static_cast<int>(rng.below(32)) * 4;  // a 16th position
    if (style == Style::Fill && rng.uniform() < 0.7)
      anchor = 64 + static_cast<int>(rng.below(16)) * 4;  // densify bar two
    const double u = rng.uniform();
    int jitter = 0;
    if (u < 0.40) jitter = 0;
    else if (u < 0.65) jitter = 1;
    else if (u < 0.85) jitter = 2;
    else jitter = 3;
    try_place(anchor + jitter);
  }
  std::sort(onsets.begin(), onsets.end());

  static const DrumGroup choices[] = {
      DrumGroup::Kick, DrumGroup::Kick, DrumGroup::Snare, DrumGroup::Snare,
      DrumGroup::HiHatClosed, DrumGroup::HiHatClosed, DrumGroup::HiHatOpen,
      DrumGroup::TomLow, DrumGroup::TomMid, DrumGroup::TomHigh,
      DrumGroup::Crash, DrumGroup::Ride, DrumGroup::Ride};
  std::vector<DrumEvent> events;
  for (std::size_t i = 0; i < onsets.size(); ++i) {
    const double t = onsets[i] * step64;
    DrumGroup g = i == 0 ? DrumGroup::Kick
                         : choices[rng.below(sizeof(choices) / sizeof(choices[0]))];
    events.push_back({t, g, 96});
    if (rng.uniform() < 0.25) {  // occasional layered hit
      DrumGroup g2 = choices[rng.below(sizeof(choices) / sizeof(choices[0]))];
      if (g2 != g) events.push_back({t, g2, 96});
    }
  }
  return events;
}

SyntheticCorpus build_synthetic_corpus(const CorpusConfig& cfg) {
  if (cfg.val_kits + cfg.test_kits >= cfg.n_kits)
    throw DrumdiffError("corpus: no kits left for training");
  if (cfg.val_midis + cfg.test_midis >= cfg.n_patterns)
    throw DrumdiffError("corpus: no patterns left for training");
  SyntheticCorpus corpus;
  auto kit_name = [](int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "k%02d", i);
    return std::string(buf);
  };
  auto midi_name = [](int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "m%03d", i);
    return std::string(buf);
  };
  const int train_kits = cfg.n_kits - cfg.val_kits - cfg.test_kits;
  for (int k = 0; k < cfg.n_kits; ++k) {
    Split s = k < train_kits ? Split::Train
              : k < train_kits + cfg.val_kits ? Split::Validation
                                              : Split::Test;
    corpus.policy.kit_split[kit_name(k)] = s;
  }
  const int train_midis = cfg.n_patterns - cfg.val_midis - cfg.test_midis;
  for (int m = 0; m < cfg.n_patterns; ++m) {
    Split s = m < train_midis ? Split::Train
              : m < train_midis + cfg.val_midis ? Split::Validation
                                                : Split::Test;
    corpus.policy.midi_split[midi_name(m)] = s;
  }

  TempoMap tempo;
  tempo.bpm = cfg.bpm;
  for (int m = 0; m < cfg.n_patterns; ++m) {
    Rng rng(Rng::derive(cfg.seed, {0x706174ULL, static_cast<std::uint64_t>(m)}));
    const Style style = rng.uniform() < cfg.fill_fraction ? Style::Fill : Style::Beat;
    const std::vector<DrumEvent> events = gen_pattern(rng, style, cfg.bpm);
    for (int k = 0; k < cfg.n_kits; ++k) {
      TrackRecord r;
      r.midi_id = midi_name(m);
      r.kit_id = kit_name(k);
      r.style = style;
      r.bpm = cfg.bpm;
      r.bars = 2;
      for (int res : cfg.resolutions) r.grids[res] = binarize(events, tempo, res, 2);
      const Split ks = corpus.policy.kit_split[r.kit_id];
      const Split ms = corpus.policy.midi_split[r.midi_id];
      r.split = ks == ms ? split_name(ks) : "unused";
      corpus.records.push_back(std::move(r));
    }
  }
  return corpus;
}

}  // namespace drumdiff
