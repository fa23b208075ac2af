#include "drumdiff/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace drumdiff {

namespace {

void put_u32(std::ofstream& o, std::uint32_t v) {
  char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8),
               static_cast<char>(v >> 16), static_cast<char>(v >> 24)};
  o.write(b, 4);
}
void put_u16(std::ofstream& o, std::uint16_t v) {
  char b[2] = {static_cast<char>(v), static_cast<char>(v >> 8)};
  o.write(b, 2);
}

}  // namespace

void write_wav(const std::string& path, const Waveform& wave, WavFormat format) {
  const int channels = 2;
  const int bits = format == WavFormat::Pcm16 ? 16 : 32;
  const std::uint32_t byte_rate = wave.sample_rate * channels * bits / 8;
  const std::uint32_t data_size =
      static_cast<std::uint32_t>(wave.samples.size()) * channels * bits / 8;
  std::ofstream o(path, std::ios::binary | std::ios::trunc);
  if (!o) throw DrumdiffError("cannot open wav for writing: " + path);
  o.write("RIFF", 4);
  put_u32(o, 36 + data_size);
  o.write("WAVE", 4);
  o.write("fmt ", 4);
  put_u32(o, 16);
  put_u16(o, format == WavFormat::Pcm16 ? 1 : 3);
  put_u16(o, static_cast<std::uint16_t>(channels));
  put_u32(o, static_cast<std::uint32_t>(wave.sample_rate));
  put_u32(o, byte_rate);
  put_u16(o, static_cast<std::uint16_t>(channels * bits / 8));
  put_u16(o, static_cast<std::uint16_t>(bits));
  o.write("data", 4);
  put_u32(o, data_size);
  for (double s : wave.samples) {
    const double clamped = std::clamp(s, -1.0, 1.0);
    if (format == WavFormat::Pcm16) {
      const std::int16_t v = static_cast<std::int16_t>(std::lround(clamped * 32767.0));
      for (int c = 0; c < channels; ++c)
        o.write(reinterpret_cast<const char*>(&v), 2);
    } else {
      const float v = static_cast<float>(clamped);
      for (int c = 0; c < channels; ++c)
        o.write(reinterpret_cast<const char*>(&v), 4);
    }
  }
  if (!o) throw DrumdiffError("wav write failed: " + path);
}

Waveform read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DrumdiffError("cannot open wav: " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw DrumdiffError("not a wav file: " + path);
  std::size_t pos = 12;
  int channels = 0, bits = 0, rate = 0, audio_format = 0;
  Waveform w;
  auto u16 = [&bytes](std::size_t p) {
    return static_cast<std::uint16_t>(static_cast<unsigned char>(bytes[p]) |
                                      (static_cast<unsigned char>(bytes[p + 1]) << 8));
  };
  auto u32 = [&bytes](std::size_t p) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(bytes[p + i]);
    return v;
  };
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t chunk_size = u32(pos + 4);
    if (std::memcmp(bytes.data() + pos, "fmt ", 4) == 0) {
      audio_format = u16(pos + 8);
      channels = u16(pos + 10);
      rate = static_cast<int>(u32(pos + 12));
      bits = u16(pos + 22);
    } else if (std::memcmp(bytes.data() + pos, "data", 4) == 0) {
      if (channels == 0) throw DrumdiffError("wav: data before fmt chunk");
      const std::size_t start = pos + 8;
      const std::size_t bytes_per = static_cast<std::size_t>(bits / 8);
      const std::size_t n_frames = chunk_size / (bytes_per * channels);
      w.sample_rate = rate;
      w.samples.resize(n_frames);
      for (std::size_t f = 0; f < n_frames; ++f) {
        double acc = 0.0;
        for (int c = 0; c < channels; ++c) {
          const std::size_t p = start + (f * channels + c) * bytes_per;
          if (audio_format == 1 && bits == 16) {
            std::int16_t v;
            std::memcpy(&v, bytes.data() + p, 2);
            acc += v / 32768.0;
          } else if (audio_format == 3 && bits == 32) {
            float v;
            std::memcpy(&v, bytes.data() + p, 4);
            acc += v;
          } else {
            throw DrumdiffError("wav: unsupported sample format");
          }
        }
        w.samples[f] = acc / channels;
      }
      return w;
    }
    pos += 8 + chunk_size + (chunk_size & 1);
  }
  throw DrumdiffError("wav: no data chunk found");
}

}  // namespace drumdiff
