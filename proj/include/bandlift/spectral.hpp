#pragma once

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <random>
#include <span>
#include <tuple>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "bandlift/error.hpp"
#include "bandlift/signal_io.hpp"

namespace bandlift {

struct SpectralConfig {
  int n_fft = 2048;
  int hop = 480;
  int sample_rate = 48000;
  int n_mels = 256;
  double mel_fmin = 0.0;
  double mel_fmax = 24000.0;
  double log_floor = 1e-5;  // amplitude floor applied before log10

  int bins() const noexcept { return n_fft / 2 + 1; }
  double bin_hz() const noexcept { return static_cast<double>(sample_rate) / n_fft; }
  double log_floor_value() const noexcept { return std::log10(log_floor); }

  auto key() const { return std::make_tuple(n_fft, hop, sample_rate, n_mels, mel_fmin, mel_fmax, log_floor); }
  friend bool operator==(const SpectralConfig& a, const SpectralConfig& b) { return a.key() == b.key(); }
};

inline void validate(const SpectralConfig& cfg) {
  require(cfg.n_fft > 0 && cfg.n_fft % 2 == 0, ErrorCode::InvalidArgument, "n_fft must be even and positive");
  require(cfg.hop > 0 && cfg.hop <= cfg.n_fft, ErrorCode::InvalidArgument, "hop must be in (0, n_fft]");
  require(cfg.sample_rate > 0, ErrorCode::InvalidArgument, "sample rate must be positive");
  require(cfg.n_mels > 0 && cfg.n_mels < cfg.bins(), ErrorCode::InvalidArgument, "n_mels must be below n_fft/2+1");
  require(cfg.mel_fmin >= 0.0 && cfg.mel_fmin < cfg.mel_fmax && cfg.mel_fmax <= cfg.sample_rate / 2.0,
          ErrorCode::InvalidArgument, "mel range must lie within [0, Nyquist]");
  require(cfg.log_floor > 0.0, ErrorCode::InvalidArgument, "log floor must be positive");
}

/// Analysis settings for a signal at an arbitrary rate (mel range follows the Nyquist limit).
inline SpectralConfig config_for_rate(int sample_rate, SpectralConfig base = {}) {
  base.sample_rate = sample_rate;
  base.mel_fmax = sample_rate / 2.0;
  base.mel_fmin = 0.0;
  return base;
}

struct ComplexSpectrogram {
  int frames = 0;
  int bins = 0;
  std::vector<std::complex<double>> values;  // frame-major
  SpectralConfig config;

  std::complex<double>& at(int t, int b) { return values[static_cast<std::size_t>(t) * bins + b]; }
  const std::complex<double>& at(int t, int b) const { return values[static_cast<std::size_t>(t) * bins + b]; }
  double bin_frequency(int b) const { return b * config.bin_hz(); }
};

/// log10 of floored mel magnitudes, frames x n_mels, frame-major.
struct LogMelSpectrogram {
  int frames = 0;
  int n_mels = 0;
  std::vector<double> values;
  SpectralConfig config;

  double& at(int t, int i) { return values[static_cast<std::size_t>(t) * n_mels + i]; }
  double at(int t, int i) const { return values[static_cast<std::size_t>(t) * n_mels + i]; }
};

inline std::vector<double> hann_window(int n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  return w;
}

namespace detail {

struct RealFft {
  Eigen::FFT<double> engine;
  RealFft() { engine.SetFlag(Eigen::FFT<double>::HalfSpectrum); }
};

inline RealFft& fft_engine() {
  thread_local RealFft fft;
  return fft;
}

// Mirror index into [0, len) as numpy's "reflect" mode, repeated as needed.
inline std::int64_t reflect_index(std::int64_t i, std::int64_t len) {
  if (len == 1) return 0;
  const std::int64_t period = 2 * (len - 1);
  i %= period;
  if (i < 0) i += period;
  return i < len ? i : period - i;
}

inline double window_sum(const std::vector<double>& w) {
  double s = 0.0;
  for (double v : w) s += v;
  return s;
}

}  // namespace detail

inline int stft_frames(std::size_t length, int hop) { return static_cast<int>(length / hop) + 1; }

/// Centered STFT: reflect padding of n_fft/2 on both sides, periodic Hann window.
inline ComplexSpectrogram stft(const AudioBuffer& buf, const SpectralConfig& cfg) {
  validate(cfg);
  require(buf.sample_rate == cfg.sample_rate, ErrorCode::RateMismatch,
          "buffer at " + std::to_string(buf.sample_rate) + " Hz, config at " + std::to_string(cfg.sample_rate));
  require(!buf.samples.empty(), ErrorCode::EmptyAudio, "stft of empty buffer");

  const auto len = static_cast<std::int64_t>(buf.size());
  const int n = cfg.n_fft;
  const auto window = hann_window(n);

  ComplexSpectrogram spec;
  spec.config = cfg;
  spec.frames = stft_frames(buf.size(), cfg.hop);
  spec.bins = cfg.bins();
  spec.values.resize(static_cast<std::size_t>(spec.frames) * spec.bins);

  auto& fft = detail::fft_engine().engine;
  std::vector<double> frame(static_cast<std::size_t>(n));
  std::vector<std::complex<double>> out;
  for (int t = 0; t < spec.frames; ++t) {
    const std::int64_t start = static_cast<std::int64_t>(t) * cfg.hop - n / 2;
    for (int j = 0; j < n; ++j)
      frame[j] = buf.samples[static_cast<std::size_t>(detail::reflect_index(start + j, len))] * window[j];
    fft.fwd(out, frame);
    std::copy(out.begin(), out.begin() + spec.bins, spec.values.begin() + static_cast<std::ptrdiff_t>(t) * spec.bins);
  }
  return spec;
}

/// Weighted overlap-add inverse (least-squares for inconsistent spectrograms).
/// `length` defaults to (frames - 1) * hop.
inline AudioBuffer istft(const ComplexSpectrogram& spec, std::size_t length = 0) {
  const auto& cfg = spec.config;
  validate(cfg);
  require(spec.bins == cfg.bins(), ErrorCode::ShapeMismatch, "bin count does not match n_fft");
  const int n = cfg.n_fft;
  const int hop = cfg.hop;
  if (length == 0) length = static_cast<std::size_t>(std::max(spec.frames - 1, 0)) * hop;

  const auto window = hann_window(n);
  const std::size_t padded = static_cast<std::size_t>(std::max(spec.frames - 1, 0)) * hop + n;
  std::vector<double> acc(padded, 0.0), env(padded, 0.0);

  auto& fft = detail::fft_engine().engine;
  std::vector<std::complex<double>> half(static_cast<std::size_t>(spec.bins));
  std::vector<double> frame;
  for (int t = 0; t < spec.frames; ++t) {
    std::copy(spec.values.begin() + static_cast<std::ptrdiff_t>(t) * spec.bins,
              spec.values.begin() + static_cast<std::ptrdiff_t>(t + 1) * spec.bins, half.begin());
    fft.inv(frame, half, n);
    const std::size_t off = static_cast<std::size_t>(t) * hop;
    for (int j = 0; j < n; ++j) {
      acc[off + j] += frame[j] * window[j];
      env[off + j] += window[j] * window[j];
    }
  }

  AudioBuffer out;
  out.sample_rate = cfg.sample_rate;
  out.samples.resize(length);
  for (std::size_t i = 0; i < length; ++i) {
    const std::size_t p = i + static_cast<std::size_t>(n / 2);
    require(p < padded && env[p] > 1e-10, ErrorCode::NonInvertibleConfig,
            "window overlap does not cover output sample " + std::to_string(i));
    out.samples[i] = static_cast<float>(acc[p] / env[p]);
  }
  return out;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Triangular HTK-scale filters. A triangle side narrower than one STFT bin is
/// widened to one bin so that every filter touches at least one bin; weights
/// of each filter are normalized to sum to one.
class MelFilterbank {
 public:
  struct Filter {
    int first_bin = 0;
    std::vector<double> weights;
    double lower_hz = 0.0;
    double center_hz = 0.0;
    double upper_hz = 0.0;
    double bandwidth_bins = 0.0;  // un-normalized weight sum, ~ number of bins covered
  };

  explicit MelFilterbank(const SpectralConfig& cfg) : config_(cfg) {
    validate(cfg);
    const int n_mels = cfg.n_mels;
    const double bin_hz = cfg.bin_hz();
    const double mel_lo = hz_to_mel(cfg.mel_fmin);
    const double mel_hi = hz_to_mel(cfg.mel_fmax);
    std::vector<double> edges(static_cast<std::size_t>(n_mels) + 2);
    for (std::size_t i = 0; i < edges.size(); ++i)
      edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / (n_mels + 1));

    filters_.resize(static_cast<std::size_t>(n_mels));
    for (int m = 0; m < n_mels; ++m) {
      Filter& f = filters_[m];
      f.center_hz = edges[m + 1];
      const double down = std::max(edges[m + 1] - edges[m], bin_hz);
      const double up = std::max(edges[m + 2] - edges[m + 1], bin_hz);
      f.lower_hz = f.center_hz - down;
      f.upper_hz = f.center_hz + up;
      const int first = std::max(0, static_cast<int>(std::ceil(f.lower_hz / bin_hz)));
      const int last = std::min(cfg.bins() - 1, static_cast<int>(std::floor(f.upper_hz / bin_hz)));
      f.first_bin = first;
      double sum = 0.0;
      for (int b = first; b <= last; ++b) {
        const double hz = b * bin_hz;
        const double w = hz < f.center_hz ? 1.0 - (f.center_hz - hz) / down : 1.0 - (hz - f.center_hz) / up;
        f.weights.push_back(std::max(w, 0.0));
        sum += f.weights.back();
      }
      require(sum > 0.0, ErrorCode::InvalidArgument, "empty mel filter");
      f.bandwidth_bins = sum;
      for (double& w : f.weights) w /= sum;
    }
  }

  const SpectralConfig& config() const noexcept { return config_; }
  int n_mels() const noexcept { return static_cast<int>(filters_.size()); }
  int n_bins() const noexcept { return config_.bins(); }
  const Filter& filter(int m) const { return filters_[m]; }

  void apply(std::span<const double> spectrum, std::span<double> mel) const {
    for (int m = 0; m < n_mels(); ++m) {
      const Filter& f = filters_[m];
      double acc = 0.0;
      for (std::size_t k = 0; k < f.weights.size(); ++k) acc += f.weights[k] * spectrum[f.first_bin + k];
      mel[m] = acc;
    }
  }

  void apply_transpose(std::span<const double> mel, std::span<double> spectrum) const {
    std::fill(spectrum.begin(), spectrum.end(), 0.0);
    for (int m = 0; m < n_mels(); ++m) {
      const Filter& f = filters_[m];
      for (std::size_t k = 0; k < f.weights.size(); ++k) spectrum[f.first_bin + k] += f.weights[k] * mel[m];
    }
  }

 private:
  SpectralConfig config_;
  std::vector<Filter> filters_;
};

/// Process-wide cache: one immutable filterbank per configuration.
inline const MelFilterbank& mel_filterbank(const SpectralConfig& cfg) {
  static std::mutex mutex;
  static std::map<decltype(cfg.key()), std::unique_ptr<MelFilterbank>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[cfg.key()];
  if (!slot) slot = std::make_unique<MelFilterbank>(cfg);
  return *slot;
}

/// Amplitude scaling that maps a full-scale sinusoid onto its amplitude.
inline double spectrum_scale(const SpectralConfig& cfg) {
  return 2.0 / detail::window_sum(hann_window(cfg.n_fft));
}

inline LogMelSpectrogram logmel_from_stft(const ComplexSpectrogram& spec) {
  const auto& cfg = spec.config;
  const auto& bank = mel_filterbank(cfg);
  const double scale = spectrum_scale(cfg);

  LogMelSpectrogram mel;
  mel.config = cfg;
  mel.frames = spec.frames;
  mel.n_mels = cfg.n_mels;
  mel.values.resize(static_cast<std::size_t>(mel.frames) * mel.n_mels);
  std::vector<double> mag(static_cast<std::size_t>(spec.bins));
  for (int t = 0; t < spec.frames; ++t) {
    for (int b = 0; b < spec.bins; ++b) mag[b] = std::abs(spec.at(t, b)) * scale;
    std::span<double> row(mel.values.data() + static_cast<std::size_t>(t) * mel.n_mels, mel.n_mels);
    bank.apply(mag, row);
    for (double& v : row) v = std::log10(std::max(v, cfg.log_floor));
  }
  return mel;
}

inline LogMelSpectrogram wav_to_logmel(const AudioBuffer& buf, const SpectralConfig& cfg = {}) {
  return logmel_from_stft(stft(buf, cfg));
}

/// Linear mel magnitudes -> STFT-bin magnitudes by non-negative least squares
/// (multiplicative updates started from the normalized transpose).
inline std::vector<double> mel_pseudo_inverse(const MelFilterbank& bank, std::span<const double> mel_linear,
                                              int iterations = 40) {
  const int n_bins = bank.n_bins();
  std::vector<double> x(static_cast<std::size_t>(n_bins)), numer(x.size()), denom(x.size()), col_sum(x.size());
  std::vector<double> ones(static_cast<std::size_t>(bank.n_mels()), 1.0), fx(ones.size());
  bank.apply_transpose(ones, col_sum);
  bank.apply_transpose(mel_linear, numer);
  for (int b = 0; b < n_bins; ++b) x[b] = col_sum[b] > 0.0 ? numer[b] / col_sum[b] : 0.0;
  for (int it = 0; it < iterations; ++it) {
    bank.apply(x, fx);
    bank.apply_transpose(fx, denom);
    for (int b = 0; b < n_bins; ++b) x[b] *= numer[b] / (denom[b] + 1e-12);
  }
  return x;
}

/// Reference mel-to-waveform inverter: NNLS magnitude lift followed by fast
/// Griffin-Lim (momentum 0.99). `length` defaults to (frames - 1) * hop.
inline AudioBuffer mel_to_wav_reference(const LogMelSpectrogram& mel, int iters, std::size_t length = 0,
                                        std::uint64_t seed = 0) {
  require(iters >= 1, ErrorCode::InvalidArgument, "iters must be >= 1");
  const auto& cfg = mel.config;
  const auto& bank = mel_filterbank(cfg);
  const int hop = cfg.hop;
  if (length == 0) length = static_cast<std::size_t>(std::max(mel.frames - 1, 0)) * hop;
  require(stft_frames(length, hop) == mel.frames, ErrorCode::ShapeMismatch,
          "requested length does not span the mel frames");

  const double floor_value = cfg.log_floor_value();
  const double inv_scale = 1.0 / spectrum_scale(cfg);
  const int bins = cfg.bins();
  std::vector<double> target(static_cast<std::size_t>(mel.frames) * bins);
  std::vector<double> lin(static_cast<std::size_t>(mel.n_mels));
  for (int t = 0; t < mel.frames; ++t) {
    for (int m = 0; m < mel.n_mels; ++m) {
      const double v = mel.at(t, m);
      lin[m] = v <= floor_value ? 0.0 : std::pow(10.0, v);
    }
    auto mag = mel_pseudo_inverse(bank, lin);
    for (int b = 0; b < bins; ++b) target[static_cast<std::size_t>(t) * bins + b] = mag[b] * inv_scale;
  }

  ComplexSpectrogram est;
  est.config = cfg;
  est.frames = mel.frames;
  est.bins = bins;
  est.values.resize(target.size());
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  for (std::size_t i = 0; i < target.size(); ++i) est.values[i] = std::polar(target[i], phase(rng));

  auto project_magnitude = [&](ComplexSpectrogram& s) {
    for (std::size_t i = 0; i < target.size(); ++i) {
      const double a = std::abs(s.values[i]);
      s.values[i] = a > 1e-12 ? s.values[i] * (target[i] / a) : std::complex<double>(target[i], 0.0);
    }
  };

  constexpr double momentum = 0.99;
  ComplexSpectrogram previous;
  for (int it = 0; it < iters; ++it) {
    project_magnitude(est);
    ComplexSpectrogram consistent = stft(istft(est, length), cfg);
    if (it == 0) previous = consistent;
    est = consistent;
    for (std::size_t i = 0; i < est.values.size(); ++i)
      est.values[i] += momentum * (consistent.values[i] - previous.values[i]);
    previous = std::move(consistent);
  }
  project_magnitude(est);
  return istft(est, length);
}

// BMEL: 32-byte header then frames x n_mels float32, row-major.
//   0  char[4] "BMEL"      16 u32 sample_rate
//   4  u32 version (1)     20 u32 hop
//   8  u32 frames          24 u32 n_fft
//  12  u32 n_mels          28 f32 log_floor
// The mel range is implied: [0, sample_rate / 2].
inline constexpr std::uint32_t kBmelVersion = 1;

inline void write_logmel(const LogMelSpectrogram& mel, const std::filesystem::path& path) {
  std::vector<unsigned char> out;
  out.reserve(32 + mel.values.size() * 4);
  out.insert(out.end(), {'B', 'M', 'E', 'L'});
  detail::append_le<std::uint32_t>(out, kBmelVersion);
  detail::append_le<std::uint32_t>(out, static_cast<std::uint32_t>(mel.frames));
  detail::append_le<std::uint32_t>(out, static_cast<std::uint32_t>(mel.n_mels));
  detail::append_le<std::uint32_t>(out, static_cast<std::uint32_t>(mel.config.sample_rate));
  detail::append_le<std::uint32_t>(out, static_cast<std::uint32_t>(mel.config.hop));
  detail::append_le<std::uint32_t>(out, static_cast<std::uint32_t>(mel.config.n_fft));
  detail::append_le<float>(out, static_cast<float>(mel.config.log_floor));
  for (double v : mel.values) detail::append_le<float>(out, static_cast<float>(v));
  detail::spit(path, out);
}

inline LogMelSpectrogram read_logmel(const std::filesystem::path& path) {
  auto bytes = detail::slurp(path);
  require(bytes.size() >= 32 && std::memcmp(bytes.data(), "BMEL", 4) == 0, ErrorCode::MalformedContainer,
          path.string() + " is not a BMEL file");
  const unsigned char* p = bytes.data();
  require(detail::read_u32(p + 4) == kBmelVersion, ErrorCode::MalformedContainer, "unsupported BMEL version");
  LogMelSpectrogram mel;
  mel.frames = static_cast<int>(detail::read_u32(p + 8));
  mel.n_mels = static_cast<int>(detail::read_u32(p + 12));
  mel.config.sample_rate = static_cast<int>(detail::read_u32(p + 16));
  mel.config.hop = static_cast<int>(detail::read_u32(p + 20));
  mel.config.n_fft = static_cast<int>(detail::read_u32(p + 24));
  float floor_f;
  std::memcpy(&floor_f, p + 28, 4);
  // Recover the double the writer started from via the shortest float spelling.
  char digits[32];
  auto res = std::to_chars(digits, digits + sizeof(digits), floor_f);
  *res.ptr = '\0';
  mel.config.log_floor = std::strtod(digits, nullptr);
  mel.config.n_mels = mel.n_mels;
  mel.config.mel_fmin = 0.0;
  mel.config.mel_fmax = mel.config.sample_rate / 2.0;
  const std::size_t count = static_cast<std::size_t>(mel.frames) * mel.n_mels;
  require(bytes.size() == 32 + count * 4, ErrorCode::MalformedContainer, "BMEL payload size mismatch");
  mel.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    float v;
    std::memcpy(&v, p + 32 + i * 4, 4);
    mel.values[i] = v;
  }
  return mel;
}

}  // namespace bandlift
