#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "bandlift/error.hpp"

namespace bandlift {

static_assert(std::endian::native == std::endian::little,
              "binary formats are written in host order and assume little-endian");

/// Mono waveform. Samples are nominally in [-1, 1].
struct AudioBuffer {
  std::vector<float> samples;
  int sample_rate = 48000;

  std::size_t size() const noexcept { return samples.size(); }
  double duration() const noexcept {
    return static_cast<double>(samples.size()) / static_cast<double>(sample_rate);
  }
};

inline void validate(const AudioBuffer& buf) {
  require(buf.sample_rate > 0, ErrorCode::InvalidArgument, "sample rate must be positive");
  for (float s : buf.samples)
    require(std::isfinite(s), ErrorCode::InvalidArgument, "non-finite sample");
}

enum class WavEncoding { Pcm16, Float32 };

namespace detail {

inline std::uint32_t read_u32(const unsigned char* p) {
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  return v;
}

inline std::uint16_t read_u16(const unsigned char* p) {
  std::uint16_t v;
  std::memcpy(&v, p, 2);
  return v;
}

template <class T>
void append_le(std::vector<unsigned char>& out, T value) {
  unsigned char raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  out.insert(out.end(), raw, raw + sizeof(T));
}

inline std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::IoFailure, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void spit(const std::filesystem::path& path, std::span<const unsigned char> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::IoFailure, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::IoFailure, "short write to " + path.string());
}

}  // namespace detail

/// Parses a RIFF/WAVE byte image. PCM16 and IEEE float32 are accepted
/// (including WAVE_FORMAT_EXTENSIBLE wrappers); channels are averaged.
inline AudioBuffer decode_wav(std::span<const unsigned char> bytes) {
  using detail::read_u16;
  using detail::read_u32;
  require(bytes.size() >= 12 && std::memcmp(bytes.data(), "RIFF", 4) == 0 &&
              std::memcmp(bytes.data() + 8, "WAVE", 4) == 0,
          ErrorCode::MalformedContainer, "not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  bool have_fmt = false;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    std::size_t size = read_u32(chunk + 4);
    std::size_t body = pos + 8;
    require(body + size <= bytes.size() || std::memcmp(chunk, "data", 4) == 0,
            ErrorCode::MalformedContainer, "chunk overruns file");
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      require(size >= 16, ErrorCode::MalformedContainer, "fmt chunk too short");
      format = read_u16(chunk + 8);
      channels = read_u16(chunk + 10);
      rate = read_u32(chunk + 12);
      bits = read_u16(chunk + 22);
      if (format == 0xFFFE) {
        require(size >= 26, ErrorCode::MalformedContainer, "extensible fmt chunk too short");
        format = read_u16(chunk + 32);  // first two bytes of the subformat GUID
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      // Tolerate writers that leave the size field at a placeholder.
      data_size = std::min(size, bytes.size() - body);
    }
    pos = body + size + (size & 1);
  }
  require(have_fmt && data != nullptr, ErrorCode::MalformedContainer, "missing fmt or data chunk");
  require(channels > 0 && rate > 0, ErrorCode::MalformedContainer, "bad channel count or rate");

  const bool pcm16 = format == 1 && bits == 16;
  const bool f32 = format == 3 && bits == 32;
  require(pcm16 || f32, ErrorCode::UnsupportedEncoding,
          "format " + std::to_string(format) + " with " + std::to_string(bits) + " bits");

  const std::size_t frame_bytes = static_cast<std::size_t>(channels) * (bits / 8);
  const std::size_t frames = data_size / frame_bytes;
  require(frames > 0, ErrorCode::EmptyAudio, "no sample frames");

  AudioBuffer buf;
  buf.sample_rate = static_cast<int>(rate);
  buf.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (std::size_t ch = 0; ch < channels; ++ch) {
      const unsigned char* p = data + i * frame_bytes + ch * (bits / 8);
      if (pcm16) {
        std::int16_t v;
        std::memcpy(&v, p, 2);
        acc += static_cast<double>(v) / 32768.0;
      } else {
        float v;
        std::memcpy(&v, p, 4);
        acc += static_cast<double>(v);
      }
    }
    buf.samples[i] = channels == 1 ? static_cast<float>(acc) : static_cast<float>(acc / channels);
  }
  return buf;
}

inline AudioBuffer read_wav(const std::filesystem::path& path) {
  auto bytes = detail::slurp(path);
  return decode_wav(bytes);
}

inline std::int16_t to_pcm16(float x) {
  double scaled = std::nearbyint(static_cast<double>(x) * 32768.0);
  return static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
}

inline std::vector<unsigned char> encode_wav(const AudioBuffer& buf, WavEncoding encoding) {
  const std::uint16_t bits = encoding == WavEncoding::Pcm16 ? 16 : 32;
  const std::uint16_t format = encoding == WavEncoding::Pcm16 ? 1 : 3;
  const auto data_bytes = static_cast<std::uint32_t>(buf.samples.size() * (bits / 8));
  const auto rate = static_cast<std::uint32_t>(buf.sample_rate);

  std::vector<unsigned char> out;
  out.reserve(44 + data_bytes);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  detail::append_le<std::uint32_t>(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  detail::append_le<std::uint32_t>(out, 16);
  detail::append_le<std::uint16_t>(out, format);
  detail::append_le<std::uint16_t>(out, 1);
  detail::append_le<std::uint32_t>(out, rate);
  detail::append_le<std::uint32_t>(out, rate * (bits / 8));
  detail::append_le<std::uint16_t>(out, bits / 8);
  detail::append_le<std::uint16_t>(out, bits);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  detail::append_le<std::uint32_t>(out, data_bytes);
  for (float s : buf.samples) {
    if (encoding == WavEncoding::Pcm16)
      detail::append_le<std::int16_t>(out, to_pcm16(s));
    else
      detail::append_le<float>(out, s);
  }
  return out;
}

inline void write_wav(const AudioBuffer& buf, const std::filesystem::path& path,
                      WavEncoding encoding = WavEncoding::Float32) {
  for (float s : buf.samples)
    require(std::isfinite(s), ErrorCode::IoFailure, "refusing to write non-finite samples");
  auto bytes = encode_wav(buf, encoding);
  detail::spit(path, bytes);
}

/// Catmull-Rom interpolation; indices outside the buffer replicate the edge sample.
inline AudioBuffer resample_cubic(const AudioBuffer& buf, int target_rate) {
  require(target_rate > 0, ErrorCode::InvalidArgument, "target rate must be positive");
  require(buf.sample_rate > 0, ErrorCode::InvalidArgument, "source rate must be positive");
  if (target_rate == buf.sample_rate) return buf;

  const auto n = static_cast<std::int64_t>(buf.samples.size());
  const std::int64_t src = buf.sample_rate;
  const std::int64_t dst = target_rate;
  const auto out_len = static_cast<std::int64_t>(
      std::llround(static_cast<double>(n) * static_cast<double>(dst) / static_cast<double>(src)));

  AudioBuffer out;
  out.sample_rate = target_rate;
  out.samples.resize(static_cast<std::size_t>(std::max<std::int64_t>(out_len, 0)));
  if (n == 0) return out;

  auto at = [&](std::int64_t i) -> double {
    return buf.samples[static_cast<std::size_t>(std::clamp<std::int64_t>(i, 0, n - 1))];
  };
  for (std::int64_t j = 0; j < out_len; ++j) {
    // Exact rational position j * src / dst split into integer and fractional parts.
    const std::int64_t num = j * src;
    const std::int64_t i = num / dst;
    const double u = static_cast<double>(num % dst) / static_cast<double>(dst);
    const double p0 = at(i - 1), p1 = at(i), p2 = at(i + 1), p3 = at(i + 2);
    const double a = -0.5 * p0 + 1.5 * p1 - 1.5 * p2 + 0.5 * p3;
    const double b = p0 - 2.5 * p1 + 2.0 * p2 - 0.5 * p3;
    const double c = -0.5 * p0 + 0.5 * p2;
    out.samples[static_cast<std::size_t>(j)] = static_cast<float>(((a * u + b) * u + c) * u + p1);
  }
  return out;
}

}  // namespace bandlift
