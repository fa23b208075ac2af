#include <doctest.h>

#include "drumdiff/midi.hpp"

using namespace drumdiff;

namespace {

// Minimal hand-assembled type-0 file: header + one track.
std::vector<std::uint8_t> tiny_smf(std::vector<std::uint8_t> track_events, int ppq = 480) {
  std::vector<std::uint8_t> track = std::move(track_events);
  track.push_back(0x00);
  track.insert(track.end(), {0xff, 0x2f, 0x00});
  std::vector<std::uint8_t> out{'M', 'T', 'h', 'd', 0, 0, 0, 6, 0, 0, 0, 1};
  out.push_back(static_cast<std::uint8_t>(ppq >> 8));
  out.push_back(static_cast<std::uint8_t>(ppq & 0xff));
  out.insert(out.end(), {'M', 'T', 'r', 'k'});
  const std::uint32_t len = static_cast<std::uint32_t>(track.size());
  for (int i = 3; i >= 0; --i) out.push_back(static_cast<std::uint8_t>(len >> (8 * i)));
  out.insert(out.end(), track.begin(), track.end());
  return out;
}

}  // namespace

TEST_CASE("zero note-ons give an empty event list") {
  auto bytes = tiny_smf({});
  ParsedSmf parsed = parse_smf(bytes);
  CHECK(parsed.events.empty());
  CHECK(parsed.tempo.bpm == doctest::Approx(120.0));  // default when no set-tempo
}

TEST_CASE("set-tempo 500000 us per quarter is 120 BPM") {
  auto bytes = tiny_smf({0x00, 0xff, 0x51, 0x03, 0x07, 0xa1, 0x20});
  ParsedSmf parsed = parse_smf(bytes);
  CHECK(parsed.tempo.bpm == doctest::Approx(60e6 / 500000.0));
  REQUIRE(parsed.tempo_changes.size() == 1);
}

TEST_CASE("single kick note converts ticks to seconds correctly") {
  // pitch 36 at tick 0, then one at tick 480 (one quarter = 0.5 s at 120)
  auto bytes = tiny_smf({0x00, 0x99, 36, 100, 0x83, 0x60, 0x99, 36, 90});
  ParsedSmf parsed = parse_smf(bytes);
  REQUIRE(parsed.events.size() == 2);
  CHECK(parsed.events[0].onset_time == doctest::Approx(0.0));
  CHECK(parsed.events[0].group == DrumGroup::Kick);
  CHECK(parsed.events[1].onset_time == doctest::Approx(0.5));
  CHECK(parsed.events[1].velocity == 90);
}

TEST_CASE("velocity-zero note-ons are treated as note-offs") {
  auto bytes = tiny_smf({0x00, 0x99, 36, 100, 0x10, 0x99, 36, 0});
  ParsedSmf parsed = parse_smf(bytes);
  CHECK(parsed.events.size() == 1);
}

TEST_CASE("running status is honoured") {
  auto bytes = tiny_smf({0x00, 0x99, 36, 100, 0x10, 38, 100});  // second event reuses 0x99
  ParsedSmf parsed = parse_smf(bytes);
  REQUIRE(parsed.events.size() == 2);
  CHECK(parsed.events[1].group == DrumGroup::Snare);
}

TEST_CASE("unmapped pitches are skipped and counted") {
  auto bytes = tiny_smf({0x00, 0x99, 36, 100, 0x00, 0x99, 60, 100});
  ParsedSmf parsed = parse_smf(bytes);
  CHECK(parsed.events.size() == 1);
  CHECK(parsed.unmapped_notes == 1);
}

TEST_CASE("malformed input reports a byte offset") {
  std::vector<std::uint8_t> garbage{'X', 'Y', 'Z', 'W', 0, 0};
  CHECK_THROWS_AS(parse_smf(garbage), SmfParseError);
  // truncated track chunk
  auto bytes = tiny_smf({0x00, 0x99, 36, 100});
  bytes.resize(bytes.size() - 3);
  try {
    parse_smf(bytes);
    FAIL("expected a parse error");
  } catch (const SmfParseError& e) {
    CHECK(e.offset > 0);
  }
}

TEST_CASE("writer/parser round trip preserves drum events") {
  std::vector<DrumEvent> events{{0.0, DrumGroup::Kick, 100},
                                {0.25, DrumGroup::HiHatClosed, 80},
                                {0.5, DrumGroup::Snare, 110},
                                {1.75, DrumGroup::Crash, 127}};
  auto bytes = write_smf(events, 120.0);
  ParsedSmf parsed = parse_smf(bytes);
  CHECK(parsed.tempo.bpm == doctest::Approx(120.0).epsilon(1e-4));
  REQUIRE(parsed.events.size() == events.size());
  for (std::size_t i = 0; i < events.size(); ++i) {
    CHECK(parsed.events[i].onset_time == doctest::Approx(events[i].onset_time).epsilon(1e-4));
    CHECK(parsed.events[i].group == events[i].group);
  }
}

TEST_CASE("SMPTE division and type-2 files are rejected") {
  auto bytes = tiny_smf({});
  bytes[12] = 0xe7;  // negative SMPTE fps
  CHECK_THROWS_AS(parse_smf(bytes), SmfParseError);
  auto bytes2 = tiny_smf({});
  bytes2[9] = 2;  // format 2
  CHECK_THROWS_AS(parse_smf(bytes2), SmfParseError);
}
