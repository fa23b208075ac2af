#include <doctest.h>

#include <cmath>

#include "drumdiff/grid.hpp"
#include "drumdiff/rng.hpp"

using namespace drumdiff;

TEST_CASE("pitch table maps the canonical groove drum groups") {
  CHECK(map_pitch_to_group(36) == DrumGroup::Kick);
  CHECK(map_pitch_to_group(35) == DrumGroup::Kick);
  CHECK(map_pitch_to_group(38) == DrumGroup::Snare);
  CHECK(map_pitch_to_group(42) == DrumGroup::HiHatClosed);
  CHECK(map_pitch_to_group(46) == DrumGroup::HiHatOpen);
  CHECK(map_pitch_to_group(43) == DrumGroup::TomLow);
  CHECK(map_pitch_to_group(47) == DrumGroup::TomMid);
  CHECK(map_pitch_to_group(50) == DrumGroup::TomHigh);
  CHECK(map_pitch_to_group(49) == DrumGroup::Crash);
  CHECK(map_pitch_to_group(51) == DrumGroup::Ride);
  CHECK_FALSE(map_pitch_to_group(0).has_value());
  CHECK_FALSE(map_pitch_to_group(60).has_value());
  CHECK_FALSE(map_pitch_to_group(127).has_value());
}

TEST_CASE("nine groups are a bijection onto columns 0..8") {
  bool seen[kNumGroups] = {};
  for (int g = 0; g < kNumGroups; ++g) {
    const int col = static_cast<int>(static_cast<DrumGroup>(g));
    REQUIRE(col >= 0);
    REQUIRE(col < kNumGroups);
    CHECK_FALSE(seen[col]);
    seen[col] = true;
    CHECK(group_from_name(group_name(static_cast<DrumGroup>(g))) ==
          static_cast<DrumGroup>(g));
  }
}

TEST_CASE("T formula: 2 bars at 16/32/64 gives 32/64/128 steps") {
  TempoMap tempo;
  std::vector<DrumEvent> none;
  CHECK(binarize(none, tempo, 16, 2).rows() == 32);
  CHECK(binarize(none, tempo, 32, 2).rows() == 64);
  CHECK(binarize(none, tempo, 64, 2).rows() == 128);
}

TEST_CASE("binarize places exact grid multiples and zeros elsewhere") {
  TempoMap tempo;  // 120 BPM, 4/4; 16th step = 0.125 s
  std::vector<DrumEvent> events{{0.0, DrumGroup::Kick, 100},
                                {0.5, DrumGroup::Snare, 100}};
  BinarizedGrid g = binarize(events, tempo, 16, 2);
  CHECK(g.step_seconds() == doctest::Approx(0.125));
  CHECK(g.at(0, 0) == 1);
  CHECK(g.at(0, 9) == 1);
  CHECK(g.at(4, 1) == 1);
  CHECK(g.at(4, 9) == 1);
  int ones = 0;
  for (auto c : g.cells) ones += c;
  CHECK(ones == 4);
}

TEST_CASE("binarize nearest-step rounding matches a brute-force oracle") {
  TempoMap tempo;
  // 0.0619/0.125 = 0.4952 -> step 0 ; 0.0632/0.125 = 0.5056 -> step 1
  BinarizedGrid a = binarize({{0.0619, DrumGroup::Kick, 100}}, tempo, 16, 2);
  CHECK(a.at(0, 0) == 1);
  BinarizedGrid b = binarize({{0.0632, DrumGroup::Kick, 100}}, tempo, 16, 2);
  CHECK(b.at(1, 0) == 1);

  // brute force: nearest step over the whole grid
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const double t = rng.uniform() * 3.99;
    BinarizedGrid g = binarize({{t, DrumGroup::Crash, 100}}, tempo, 16, 2);
    std::size_t best = 0;
    double best_d = 1e18;
    for (std::size_t s = 0; s < g.rows(); ++s) {
      const double d = std::abs(t - static_cast<double>(s) * g.step_seconds());
      if (d < best_d) {
        best_d = d;
        best = s;
      }
    }
    CHECK(g.at(best, 7) == 1);
  }
}

TEST_CASE("events rounding outside the grid are dropped and counted") {
  TempoMap tempo;
  BinarizeStats stats;
  BinarizedGrid g = binarize({{100.0, DrumGroup::Kick, 100}, {0.0, DrumGroup::Kick, 100}},
                             tempo, 16, 2, &stats);
  CHECK(stats.dropped_out_of_range == 1);
  CHECK(g.at(0, 0) == 1);
}

TEST_CASE("empty event list gives the all-zeros grid") {
  TempoMap tempo;
  BinarizedGrid g = binarize({}, tempo, 64, 2);
  for (auto c : g.cells) CHECK(c == 0);
}

TEST_CASE("projection: Tap zeroes instruments, Arrangement is identity") {
  TempoMap tempo;
  BinarizedGrid g = binarize({{0.0, DrumGroup::Kick, 100}}, tempo, 16, 2);
  BinarizedGrid tap = project(g, GridView::Tap);
  int ones = 0;
  for (std::size_t s = 0; s < tap.rows(); ++s)
    for (int c = 0; c < kNumGroups; ++c) ones += tap.at(s, c);
  CHECK(ones == 0);
  CHECK(tap.at(0, 9) == 1);

  BinarizedGrid arr = project(g, GridView::Arrangement);
  CHECK(arr.cells == g.cells);

  // column 9 agrees between the two views
  for (std::size_t s = 0; s < g.rows(); ++s) CHECK(tap.at(s, 9) == arr.at(s, 9));
}

TEST_CASE("dequantize: zeros give nothing; kick at step 4 lands at 0.5 s") {
  TempoMap tempo;
  CHECK(dequantize(binarize({}, tempo, 16, 2)).empty());
  BinarizedGrid g = binarize({{0.5, DrumGroup::Kick, 100}}, tempo, 16, 2);
  auto events = dequantize(g);
  REQUIRE(events.size() == 1);
  CHECK(events[0].onset_time == doctest::Approx(0.5));
  CHECK(events[0].group == DrumGroup::Kick);
  CHECK(events[0].velocity == 100);
}

TEST_CASE("binarize(dequantize(g)) is the identity on valid grids") {
  Rng rng(5);
  TempoMap tempo;
  for (int trial = 0; trial < 50; ++trial) {
    tempo.bpm = rng.uniform(60.0, 200.0);
    const int res = trial % 3 == 0 ? 16 : trial % 3 == 1 ? 32 : 64;
    BinarizedGrid g = binarize({}, tempo, res, 2);
    for (int k = 0; k < 12; ++k)
      g.set(rng.below(g.rows()), static_cast<int>(rng.below(kNumGroups)));
    BinarizedGrid g2 = binarize(dequantize(g), tempo, res, 2);
    CHECK(g2.cells == g.cells);
  }
}

TEST_CASE("round-trip timing error is bounded by half a step") {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    TempoMap tempo;
    tempo.bpm = rng.uniform(60.0, 200.0);
    const int res = trial % 3 == 0 ? 16 : trial % 3 == 1 ? 32 : 64;
    BinarizedGrid probe = binarize({}, tempo, res, 2);
    const double horizon =
        probe.step_seconds() * (static_cast<double>(probe.rows()) - 0.51);
    const double t = rng.uniform() * horizon;
    BinarizedGrid g = binarize({{t, DrumGroup::Snare, 100}}, tempo, res, 2);
    auto events = dequantize(g);
    REQUIRE(events.size() == 1);
    CHECK(std::abs(events[0].onset_time - t) <= g.step_seconds() / 2.0 + 1e-12);
  }
}

TEST_CASE("duplicate hits in one cell collapse to a single one") {
  TempoMap tempo;
  BinarizedGrid g = binarize({{0.0, DrumGroup::Kick, 100}, {0.001, DrumGroup::Kick, 90}},
                             tempo, 16, 2);
  CHECK(g.at(0, 0) == 1);
  int ones = 0;
  for (auto c : g.cells) ones += c;
  CHECK(ones == 2);  // kick + onset column
}

TEST_CASE("grid json round trip") {
  TempoMap tempo;
  tempo.bpm = 133.5;
  BinarizedGrid g = binarize({{0.0, DrumGroup::Ride, 100}, {1.0, DrumGroup::Kick, 100}},
                             tempo, 32, 2);
  BinarizedGrid back = grid_from_json(grid_to_json(g));
  CHECK(back.cells == g.cells);
  CHECK(back.bpm == g.bpm);
  CHECK(back.resolution == g.resolution);
  CHECK(back.bars == g.bars);
  CHECK_THROWS_AS(grid_from_json("{\"schema\":\"bogus\"}"), DrumdiffError);
}

TEST_CASE("grid binary round trip") {
  Rng rng(31);
  TempoMap tempo;
  tempo.bpm = 97.25;
  BinarizedGrid g = binarize({}, tempo, 64, 2);
  for (int k = 0; k < 25; ++k)
    g.set(rng.below(g.rows()), static_cast<int>(rng.below(kNumGroups)));
  BinarizedGrid back = grid_from_binary(grid_to_binary(g));
  CHECK(back.cells == g.cells);
  CHECK(back.bpm == g.bpm);
  CHECK(back.resolution == g.resolution);
  CHECK(back.time_signature == g.time_signature);
}
