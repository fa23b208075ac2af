#include "drumdiff/midi.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

namespace drumdiff {

namespace {

struct Reader {
  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;

  bool eof() const { return pos >= bytes.size(); }
  std::size_t remaining() const { return bytes.size() - pos; }

  std::uint8_t u8() {
    if (eof()) throw SmfParseError("unexpected end of file", pos);
    return bytes[pos++];
  }
  std::uint16_t u16() { return static_cast<std::uint16_t>((u8() << 8) | u8()); }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | u8();
    return v;
  }
  std::uint32_t vlq() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      const std::uint8_t b = u8();
      v = (v << 7) | (b & 0x7f);
      if (!(b & 0x80)) return v;
    }
    throw SmfParseError("variable-length quantity too long", pos);
  }
  void skip(std::size_t n) {
    if (remaining() < n) throw SmfParseError("truncated chunk", pos);
    pos += n;
  }
  bool match(const char* tag) {
    if (remaining() < 4) return false;
    for (int i = 0; i < 4; ++i)
      if (bytes[pos + i] != static_cast<std::uint8_t>(tag[i])) return false;
    pos += 4;
    return true;
  }
};

struct RawNote {
  std::uint64_t tick;
  int pitch;
  int velocity;
};

struct RawTempo {
  std::uint64_t tick;
  std::uint32_t us_per_quarter;
};

}  // namespace

ParsedSmf parse_smf(const std::vector<std::uint8_t>& bytes) {
  Reader r{bytes};
  if (!r.match("MThd")) throw SmfParseError("missing MThd header", r.pos);
  const std::uint32_t hlen = r.u32();
  if (hlen < 6) throw SmfParseError("malformed header length", r.pos);
  const std::uint16_t format = r.u16();
  const std::uint16_t ntrks = r.u16();
  const std::uint16_t division = r.u16();
  r.skip(hlen - 6);
  if (format > 1) throw SmfParseError("only SMF type 0/1 supported", r.pos);
  if (division & 0x8000) throw SmfParseError("SMPTE time division not supported", r.pos);
  if (division == 0) throw SmfParseError("zero ticks per quarter", r.pos);

  std::vector<RawNote> notes;
  std::vector<RawTempo> tempos;
  std::pair<int, int> time_signature{4, 4};
  bool saw_time_signature = false;
  int unmapped = 0;

  for (std::uint16_t trk = 0; trk < ntrks; ++trk) {
    if (!r.match("MTrk")) throw SmfParseError("missing MTrk chunk", r.pos);
    const std::uint32_t tlen = r.u32();
    if (r.remaining() < tlen) throw SmfParseError("truncated track chunk", r.pos);
    const std::size_t track_end = r.pos + tlen;
    std::uint64_t tick = 0;
    std::uint8_t running = 0;
    while (r.pos < track_end) {
      tick += r.vlq();
      std::uint8_t status = bytes[r.pos];
      if (status & 0x80) {
        r.pos++;
      } else {
        if (!(running & 0x80)) throw SmfParseError("data byte without running status", r.pos);
        status = running;
      }
      if (status == 0xff) {  // meta
        const std::uint8_t type = r.u8();
        const std::uint32_t len = r.vlq();
        if (r.remaining() < len) throw SmfParseError("truncated meta event", r.pos);
        if (type == 0x51 && len == 3) {
          std::uint32_t us = (static_cast<std::uint32_t>(bytes[r.pos]) << 16) |
                             (static_cast<std::uint32_t>(bytes[r.pos + 1]) << 8) |
                             bytes[r.pos + 2];
          tempos.push_back({tick, us});
        } else if (type == 0x58 && len >= 2 && !saw_time_signature) {
          time_signature = {bytes[r.pos], 1 << bytes[r.pos + 1]};
          saw_time_signature = true;
        }
        r.skip(len);
        running = 0;
      } else if (status == 0xf0 || status == 0xf7) {  // sysex
        const std::uint32_t len = r.vlq();
        r.skip(len);
        running = 0;
      } else {
        running = status;
        const std::uint8_t kind = status & 0xf0;
        switch (kind) {
          case 0x90: {  // note on
            const int pitch = r.u8();
            const int vel = r.u8();
            if (vel > 0) notes.push_back({tick, pitch, vel});
            break;
          }
          case 0x80:  // note off
          case 0xa0:  // poly aftertouch
          case 0xb0:  // controller
          case 0xe0:  // pitch bend
            r.skip(2);
            break;
          case 0xc0:  // program change
          case 0xd0:  // channel aftertouch
            r.skip(1);
            break;
          default:
            throw SmfParseError("unknown status byte", r.pos);
        }
      }
    }
    if (r.pos != track_end) throw SmfParseError("track length mismatch", r.pos);
  }

  ParsedSmf out;
  out.tempo.time_signature = time_signature;
  std::sort(tempos.begin(), tempos.end(),
            [](const RawTempo& a, const RawTempo& b) { return a.tick < b.tick; });
  const double us_per_quarter = tempos.empty() ? 500000.0 : tempos.front().us_per_quarter;
  out.tempo.bpm = 60e6 / us_per_quarter;
  const double seconds_per_tick = us_per_quarter / 1e6 / division;
  for (const RawTempo& t : tempos)
    out.tempo_changes.push_back({t.tick * seconds_per_tick, 60e6 / t.us_per_quarter});

  std::sort(notes.begin(), notes.end(),
            [](const RawNote& a, const RawNote& b) { return a.tick < b.tick; });
  for (const RawNote& n : notes) {
    auto group = map_pitch_to_group(n.pitch);
    if (!group) {
      ++unmapped;
      continue;
    }
    out.events.push_back({n.tick * seconds_per_tick, *group, n.velocity});
  }
  out.unmapped_notes = unmapped;
  return out;
}

ParsedSmf parse_smf_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DrumdiffError("cannot open midi file: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return parse_smf(bytes);
}

std::vector<std::uint8_t> write_smf(const std::vector<DrumEvent>& events, double bpm,
                                    int ppq) {
  // Standard GM pitch per group, first entry of the mapping table.
  static const int pitch_for_group[kNumGroups] = {36, 38, 42, 46, 43, 45, 50, 49, 51};
  std::vector<std::uint8_t> track;
  auto push_vlq = [&track](std::uint32_t v) {
    std::uint8_t buf[4];
    int n = 0;
    buf[n++] = v & 0x7f;
    while (v >>= 7) buf[n++] = 0x80 | (v & 0x7f);
    while (n--) track.push_back(buf[n]);
  };
  // tempo meta at tick 0
  const std::uint32_t us = static_cast<std::uint32_t>(std::llround(60e6 / bpm));
  push_vlq(0);
  track.insert(track.end(), {0xff, 0x51, 0x03, static_cast<std::uint8_t>(us >> 16),
                             static_cast<std::uint8_t>(us >> 8),
                             static_cast<std::uint8_t>(us)});
  std::vector<DrumEvent> sorted = events;
  std::sort(sorted.begin(), sorted.end(),
            [](const DrumEvent& a, const DrumEvent& b) { return a.onset_time < b.onset_time; });
  const double ticks_per_second = ppq * bpm / 60.0;
  std::uint64_t last_tick = 0;
  for (const DrumEvent& e : sorted) {
    const std::uint64_t tick =
        static_cast<std::uint64_t>(std::llround(e.onset_time * ticks_per_second));
    push_vlq(static_cast<std::uint32_t>(tick - last_tick));
    track.push_back(0x99);  // note on, channel 10
    track.push_back(static_cast<std::uint8_t>(pitch_for_group[static_cast<int>(e.group)]));
    track.push_back(static_cast<std::uint8_t>(std::clamp(e.velocity, 1, 127)));
    // matching note off shortly after
    push_vlq(1);
    track.push_back(0x89);
    track.push_back(static_cast<std::uint8_t>(pitch_for_group[static_cast<int>(e.group)]));
    track.push_back(0);
    last_tick = tick + 1;
  }
  push_vlq(0);
  track.insert(track.end(), {0xff, 0x2f, 0x00});  // end of track

  std::vector<std::uint8_t> out;
  auto push_u32 = [&out](std::uint32_t v) {
    for (int i = 3; i >= 0; --i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  auto push_u16 = [&out](std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
  };
  out.insert(out.end(), {'M', 'T', 'h', 'd'});
  push_u32(6);
  push_u16(0);  // type 0
  push_u16(1);
  push_u16(static_cast<std::uint16_t>(ppq));
  out.insert(out.end(), {'M', 'T', 'r', 'k'});
  push_u32(static_cast<std::uint32_t>(track.size()));
  out.insert(out.end(), track.begin(), track.end());
  return out;
}

}  // namespace drumdiff
