// SPDX-License-Identifier: Apache-2.0
#include "nasinv/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace nasinv {
namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint32_t read_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void push_u32(std::vector<std::uint8_t>& v, std::uint32_t x) {
  v.push_back(x & 0xFF);
  v.push_back((x >> 8) & 0xFF);
  v.push_back((x >> 16) & 0xFF);
  v.push_back((x >> 24) & 0xFF);
}

void push_u16(std::vector<std::uint8_t>& v, std::uint16_t x) {
  v.push_back(x & 0xFF);
  v.push_back((x >> 8) & 0xFF);
}

}  // namespace

std::vector<Signal> read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_wav: cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw FormatError("read_wav: not a RIFF/WAVE file: " + path);
  }

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const std::uint8_t* data = nullptr;
  std::size_t data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const char* id = reinterpret_cast<const char*>(bytes.data() + pos);
    const std::uint32_t len = read_u32(bytes.data() + pos + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size()) {
      throw FormatError("read_wav: truncated chunk in " + path);
    }
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (len < 16) throw FormatError("read_wav: fmt chunk too short");
      format = read_u16(bytes.data() + body);
      channels = read_u16(bytes.data() + body + 2);
      rate = read_u32(bytes.data() + body + 4);
      bits = read_u16(bytes.data() + body + 14);
      if (format == kFormatExtensible && len >= 40) {
        format = read_u16(bytes.data() + body + 24);  // subformat GUID head
      }
    } else if (std::memcmp(id, "data", 4) == 0) {
      data = bytes.data() + body;
      data_len = len;
    }
    pos = body + len + (len % 2);  // chunks are word-aligned
  }

  if (channels == 0 || rate == 0) throw FormatError("read_wav: missing fmt chunk");
  if (data == nullptr) throw FormatError("read_wav: missing data chunk");

  const bool is_float = format == kFormatFloat;
  if (!is_float && format != kFormatPcm) {
    throw FormatError("read_wav: unsupported codec (format tag " +
                      std::to_string(format) + ")");
  }
  if (is_float && bits != 32) {
    throw FormatError("read_wav: only 32-bit float supported");
  }
  if (!is_float && bits != 16 && bits != 24) {
    throw FormatError("read_wav: only 16/24-bit PCM supported");
  }

  const std::size_t bytes_per_sample = bits / 8;
  const std::size_t frame_size = bytes_per_sample * channels;
  const std::size_t n_frames = data_len / frame_size;

  std::vector<Signal> out(channels);
  for (auto& s : out) {
    s.sample_rate_hz = static_cast<double>(rate);
    s.samples.resize(n_frames);
  }
  for (std::size_t i = 0; i < n_frames; ++i) {
    for (std::uint16_t c = 0; c < channels; ++c) {
      const std::uint8_t* p = data + i * frame_size + c * bytes_per_sample;
      double v = 0.0;
      if (is_float) {
        float fv;
        std::memcpy(&fv, p, 4);
        v = fv;
      } else if (bits == 16) {
        const auto raw = static_cast<std::int16_t>(p[0] | (p[1] << 8));
        v = static_cast<double>(raw) / 32768.0;
      } else {
        std::int32_t raw = p[0] | (p[1] << 8) | (p[2] << 16);
        if (raw & 0x800000) raw |= ~0xFFFFFF;  // sign-extend
        v = static_cast<double>(raw) / 8388608.0;
      }
      out[c].samples[i] = v;
    }
  }
  return out;
}

std::vector<Signal> ingest_wav(const std::string& path, int expected_channels) {
  auto channels = read_wav(path);
  if (static_cast<int>(channels.size()) != expected_channels) {
    throw ChannelMismatch("ingest_wav: " + path + " has " +
                          std::to_string(channels.size()) + " channels, expected " +
                          std::to_string(expected_channels));
  }
  return channels;
}

void write_wav(const std::string& path, const std::vector<Signal>& channels,
               WavEncoding encoding) {
  if (channels.empty() || channels[0].samples.empty()) {
    throw EmptyInput("write_wav: nothing to write");
  }
  const std::size_t n_frames = channels[0].samples.size();
  const double rate = channels[0].sample_rate_hz;
  for (const auto& c : channels) {
    if (c.samples.size() != n_frames || c.sample_rate_hz != rate) {
      throw ChannelMismatch("write_wav: channels disagree in length or rate");
    }
  }

  const auto n_ch = static_cast<std::uint16_t>(channels.size());
  const std::uint16_t bits = encoding == WavEncoding::kPcm16 ? 16 : 32;
  const std::uint16_t fmt =
      encoding == WavEncoding::kPcm16 ? kFormatPcm : kFormatFloat;
  const std::uint32_t data_len =
      static_cast<std::uint32_t>(n_frames * n_ch * (bits / 8));

  std::vector<std::uint8_t> out;
  out.reserve(44 + data_len);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  push_u32(out, 36 + data_len);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  push_u32(out, 16);
  push_u16(out, fmt);
  push_u16(out, n_ch);
  push_u32(out, static_cast<std::uint32_t>(rate));
  push_u32(out, static_cast<std::uint32_t>(rate) * n_ch * (bits / 8));
  push_u16(out, static_cast<std::uint16_t>(n_ch * (bits / 8)));
  push_u16(out, bits);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  push_u32(out, data_len);

  for (std::size_t i = 0; i < n_frames; ++i) {
    for (std::uint16_t c = 0; c < n_ch; ++c) {
      const double v = channels[c].samples[i];
      if (encoding == WavEncoding::kPcm16) {
        const double scaled = std::clamp(v, -1.0, 1.0 - 1.0 / 32768.0) * 32768.0;
        const auto q = static_cast<std::int16_t>(std::lround(scaled));
        push_u16(out, static_cast<std::uint16_t>(q));
      } else {
        const auto fv = static_cast<float>(v);
        std::uint32_t raw;
        std::memcpy(&raw, &fv, 4);
        push_u32(out, raw);
      }
    }
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("write_wav: cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(out.data()),
          static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write_wav: short write to " + path);
}

}  // namespace nasinv
