#pragma once

#include <string>

#include "drumdiff/synth.hpp"

namespace drumdiff {

enum class WavFormat { Pcm16, Float32 };

// Mono input is duplicated to stereo on export.
void write_wav(const std::string& path, const Waveform& wave,
               WavFormat format = WavFormat::Pcm16);

// Reads PCM16/float32 WAV; multi-channel input is downmixed to mono.
Waveform read_wav(const std::string& path);

}  // namespace drumdiff
