#include "drumdiff/grid.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <json.hpp>

namespace drumdiff {

const char* group_name(DrumGroup g) {
  switch (g) {
    case DrumGroup::Kick: return "Kick";
    case DrumGroup::Snare: return "Snare";
    case DrumGroup::HiHatClosed: return "HiHatClosed";
    case DrumGroup::HiHatOpen: return "HiHatOpen";
    case DrumGroup::TomLow: return "TomLow";
    case DrumGroup::TomMid: return "TomMid";
    case DrumGroup::TomHigh: return "TomHigh";
    case DrumGroup::Crash: return "Crash";
    case DrumGroup::Ride: return "Ride";
  }
  return "?";
}

std::optional<DrumGroup> group_from_name(const std::string& name) {
  for (int i = 0; i < kNumGroups; ++i)
    if (name == group_name(static_cast<DrumGroup>(i))) return static_cast<DrumGroup>(i);
  return std::nullopt;
}

std::optional<DrumGroup> map_pitch_to_group(int pitch) {
  switch (pitch) {
    case 35: case 36: return DrumGroup::Kick;
    case 37: case 38: case 40: return DrumGroup::Snare;
    case 22: case 42: case 44: return DrumGroup::HiHatClosed;
    case 26: case 46: return DrumGroup::HiHatOpen;
    case 41: case 43: case 58: return DrumGroup::TomLow;
    case 45: case 47: return DrumGroup::TomMid;
    case 48: case 50: return DrumGroup::TomHigh;
    case 49: case 52: case 55: case 57: return DrumGroup::Crash;
    case 51: case 53: case 59: return DrumGroup::Ride;
    default: return std::nullopt;
  }
}

namespace {
// Round half away from zero; quantization ties are frozen this way.
long round_half_away(double x) {
  return static_cast<long>(x >= 0.0 ? std::floor(x + 0.5) : std::ceil(x - 0.5));
}
}  // namespace

BinarizedGrid binarize(const std::vector<DrumEvent>& events, const TempoMap& tempo,
                       int resolution, int bars, BinarizeStats* stats) {
  if (resolution != 16 && resolution != 32 && resolution != 64)
    throw DrumdiffError("binarize: resolution must be 16, 32 or 64");
  if (bars < 1) throw DrumdiffError("binarize: bars must be >= 1");
  BinarizedGrid g;
  g.resolution = resolution;
  g.bars = bars;
  g.bpm = tempo.bpm;
  g.time_signature = tempo.time_signature;
  const std::size_t rows = BinarizedGrid::expected_rows(resolution, bars, tempo.time_signature);
  g.cells.assign(rows * kGridCols, 0);
  const double step_seconds = g.step_seconds();
  int dropped = 0;
  for (const DrumEvent& e : events) {
    const long s = round_half_away(e.onset_time / step_seconds);
    if (s < 0 || s >= static_cast<long>(rows)) {
      ++dropped;
      continue;
    }
    g.set(static_cast<std::size_t>(s), static_cast<int>(e.group));
  }
  if (stats) stats->dropped_out_of_range = dropped;
  return g;
}

BinarizedGrid project(const BinarizedGrid& grid, GridView view) {
  BinarizedGrid out = grid;
  if (view == GridView::Tap) {
    for (std::size_t s = 0; s < out.rows(); ++s)
      for (int c = 0; c < kNumGroups; ++c) out.cells[s * kGridCols + c] = 0;
  }
  return out;
}

std::vector<DrumEvent> dequantize(const BinarizedGrid& grid) {
  std::vector<DrumEvent> events;
  const double step_seconds = grid.step_seconds();
  for (std::size_t s = 0; s < grid.rows(); ++s)
    for (int c = 0; c < kNumGroups; ++c)
      if (grid.at(s, c))
        events.push_back({static_cast<double>(s) * step_seconds,
                          static_cast<DrumGroup>(c), 100});
  return events;
}

std::string grid_to_json(const BinarizedGrid& grid) {
  nlohmann::json j;
  j["schema"] = "grid.v1";
  j["bpm"] = grid.bpm;
  j["resolution"] = grid.resolution;
  j["bars"] = grid.bars;
  j["time_signature"] = {grid.time_signature.first, grid.time_signature.second};
  j["steps"] = grid.cells;
  return j.dump();
}

BinarizedGrid grid_from_json(const std::string& json_text) {
  nlohmann::json j = nlohmann::json::parse(json_text);
  if (j.value("schema", "") != "grid.v1")
    throw DrumdiffError("grid json: unknown schema");
  BinarizedGrid g;
  g.bpm = j.at("bpm").get<double>();
  g.resolution = j.at("resolution").get<int>();
  g.bars = j.at("bars").get<int>();
  auto ts = j.at("time_signature");
  g.time_signature = {ts.at(0).get<int>(), ts.at(1).get<int>()};
  g.cells = j.at("steps").get<std::vector<std::uint8_t>>();
  const std::size_t rows =
      BinarizedGrid::expected_rows(g.resolution, g.bars, g.time_signature);
  if (g.cells.size() != rows * kGridCols)
    throw DrumdiffError("grid json: steps length inconsistent with header");
  for (std::uint8_t c : g.cells)
    if (c > 1) throw DrumdiffError("grid json: non-binary cell");
  return g;
}

std::vector<std::uint8_t> grid_to_binary(const BinarizedGrid& grid) {
  std::vector<std::uint8_t> out;
  out.reserve(16 + grid.rows() * 2);
  out.insert(out.end(), {'B', 'G', 'R', '1'});
  out.push_back(static_cast<std::uint8_t>(grid.resolution));
  out.push_back(static_cast<std::uint8_t>(grid.bars));
  auto push_u16 = [&out](std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
  };
  push_u16(static_cast<std::uint16_t>(grid.time_signature.first));
  push_u16(static_cast<std::uint16_t>(grid.time_signature.second));
  std::uint8_t bpm_bytes[8];
  std::memcpy(bpm_bytes, &grid.bpm, 8);
  out.insert(out.end(), bpm_bytes, bpm_bytes + 8);
  const std::uint32_t rows = static_cast<std::uint32_t>(grid.rows());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(rows >> (8 * i)));
  for (std::size_t s = 0; s < grid.rows(); ++s) {
    std::uint16_t mask = 0;
    for (int c = 0; c < kGridCols; ++c)
      if (grid.at(s, c)) mask |= static_cast<std::uint16_t>(1u << c);
    push_u16(mask);
  }
  return out;
}

BinarizedGrid grid_from_binary(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 22 || std::memcmp(bytes.data(), "BGR1", 4) != 0)
    throw DrumdiffError("grid binary: bad magic");
  BinarizedGrid g;
  g.resolution = bytes[4];
  g.bars = bytes[5];
  auto read_u16 = [&bytes](std::size_t off) {
    return static_cast<std::uint16_t>(bytes[off] | (bytes[off + 1] << 8));
  };
  g.time_signature = {read_u16(6), read_u16(8)};
  std::memcpy(&g.bpm, bytes.data() + 10, 8);
  std::uint32_t rows = 0;
  for (int i = 0; i < 4; ++i) rows |= static_cast<std::uint32_t>(bytes[18 + i]) << (8 * i);
  if (bytes.size() != 22 + static_cast<std::size_t>(rows) * 2)
    throw DrumdiffError("grid binary: truncated");
  g.cells.assign(static_cast<std::size_t>(rows) * kGridCols, 0);
  for (std::uint32_t s = 0; s < rows; ++s) {
    const std::uint16_t mask = read_u16(22 + s * 2);
    for (int c = 0; c < kGridCols; ++c)
      if (mask & (1u << c)) g.cells[s * kGridCols + c] = 1;
  }
  return g;
}

}  // namespace drumdiff
