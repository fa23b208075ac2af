#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "drumdiff/grid.hpp"

namespace drumdiff {

struct SmfParseError : DrumdiffError {
  std::size_t offset;
  SmfParseError(const std::string& msg, std::size_t off)
      : DrumdiffError(msg + " (byte offset " + std::to_string(off) + ")"), offset(off) {}
};

struct TempoChange {
  double time_seconds;
  double bpm;
};

struct ParsedSmf {
  std::vector<DrumEvent> events;  // sorted by onset_time
  TempoMap tempo;                 // first set-tempo event, default 120 BPM
  std::vector<TempoChange> tempo_changes;  // every set-tempo event, in time order
  int unmapped_notes = 0;         // note-ons whose pitch is outside the drum table
};

// Parse an SMF type 0/1 file. Ticks are converted to seconds with the first
// tempo (the dataset uses constant-tempo segments; later tempo changes are
// surfaced in tempo_changes so segmentation can reject affected windows).
// Note-ons with velocity 0 are treated as note-offs and ignored.
ParsedSmf parse_smf(const std::vector<std::uint8_t>& bytes);

ParsedSmf parse_smf_file(const std::string& path);

// Minimal type-0 writer used by tests and the synthetic corpus tools.
std::vector<std::uint8_t> write_smf(const std::vector<DrumEvent>& events, double bpm,
                                    int ppq = 480);

}  // namespace drumdiff
