// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "nasinv/signal.hpp"

namespace nasinv {

// Reads a RIFF/WAVE file (PCM 16/24-bit or IEEE float32, any rate) and
// splits it into one Signal per channel. Integer samples are scaled to
// [-1, 1) by the full-scale value of their depth.
std::vector<Signal> read_wav(const std::string& path);

// As read_wav, but insists on a channel count.
std::vector<Signal> ingest_wav(const std::string& path, int expected_channels);

enum class WavEncoding { kPcm16, kFloat32 };

// Writes interleaved channels; all channels must share length and rate.
void write_wav(const std::string& path, const std::vector<Signal>& channels,
               WavEncoding encoding = WavEncoding::kFloat32);

}  // namespace nasinv
