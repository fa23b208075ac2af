#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "drumdiff/common.hpp"

namespace drumdiff {

// Nine percussion groups; the enum value is the grid column index.
enum class DrumGroup : int {
  Kick = 0,
  Snare = 1,
  HiHatClosed = 2,
  HiHatOpen = 3,
  TomLow = 4,
  TomMid = 5,
  TomHigh = 6,
  Crash = 7,
  Ride = 8,
};

inline constexpr int kNumGroups = 9;
inline constexpr int kGridCols = 10;  // 9 groups + global onset column

const char* group_name(DrumGroup g);
std::optional<DrumGroup> group_from_name(const std::string& name);

// General-MIDI percussion pitches -> drum group; pitches outside the table
// map to nullopt.
std::optional<DrumGroup> map_pitch_to_group(int pitch);

struct DrumEvent {
  double onset_time = 0.0;  // seconds, >= 0
  DrumGroup group = DrumGroup::Kick;
  int velocity = 100;  // 1..127; parsed but dropped at binarization
};

struct TempoMap {
  double bpm = 120.0;
  std::pair<int, int> time_signature{4, 4};

  double quarter_seconds() const { return 60.0 / bpm; }
  double bar_seconds() const {
    return quarter_seconds() * 4.0 * time_signature.first / time_signature.second;
  }
};

// T x 10 binary rhythm grid. Column 9 is the OR of columns 0..8.
struct BinarizedGrid {
  int resolution = 16;  // n-th-note subdivision: 16, 32 or 64
  int bars = 2;
  double bpm = 120.0;
  std::pair<int, int> time_signature{4, 4};
  std::vector<std::uint8_t> cells;  // rows() * kGridCols, row-major

  std::size_t rows() const { return cells.size() / kGridCols; }
  double step_seconds() const { return (60.0 / bpm) * (4.0 / resolution); }
  std::uint8_t at(std::size_t step, int col) const { return cells[step * kGridCols + col]; }
  void set(std::size_t step, int col) {
    cells[step * kGridCols + col] = 1;
    cells[step * kGridCols + 9] = 1;
  }

  // T = bars * numerator * resolution / denominator (bars * resolution in 4/4).
  static std::size_t expected_rows(int resolution, int bars,
                                   std::pair<int, int> time_signature) {
    return static_cast<std::size_t>(bars) * time_signature.first * resolution /
           time_signature.second;
  }
};

enum class GridView { Arrangement, Tap };

struct BinarizeStats {
  int dropped_out_of_range = 0;
};

// Quantize events to the grid: step = round(t / step_seconds), half rounds
// away from zero; out-of-range events are dropped and counted.
BinarizedGrid binarize(const std::vector<DrumEvent>& events, const TempoMap& tempo,
                       int resolution, int bars, BinarizeStats* stats = nullptr);

// Arrangement keeps all ten columns; Tap zeroes columns 0..8.
BinarizedGrid project(const BinarizedGrid& grid, GridView view);

// One event per set cell in columns 0..8; onset = step * step_seconds.
std::vector<DrumEvent> dequantize(const BinarizedGrid& grid);

// JSON object {schema, bpm, resolution, bars, time_signature, steps}.
std::string grid_to_json(const BinarizedGrid& grid);
BinarizedGrid grid_from_json(const std::string& json_text);

// Compact binary form, one uint16 row bitmask per step (bit c = column c).
// Layout: "BGR1", u8 resolution, u8 bars, u16 numerator, u16 denominator,
// f64 bpm LE, u32 row count LE, rows as u16 LE.
std::vector<std::uint8_t> grid_to_binary(const BinarizedGrid& grid);
BinarizedGrid grid_from_binary(const std::vector<std::uint8_t>& bytes);

}  // namespace drumdiff
