#pragma once

#include <chrono>
#include <functional>
#include <optional>

#include "bandlift/bandwidth.hpp"
#include "bandlift/diffusion.hpp"
#include "bandlift/error.hpp"
#include "bandlift/latent_codec.hpp"
#include "bandlift/signal_io.hpp"
#include "bandlift/spectral.hpp"

namespace bandlift {

inline constexpr int kOutputRate = 48000;
inline constexpr int kPreprocessOrder = 8;
inline constexpr double kMinInputSeconds = 0.3;
/// A roll-off at or above this fraction of the output Nyquist counts as full band.
inline constexpr double kFullBandFraction = 0.98;
/// Lower bound on the preprocessing filter edge; the reported roll-off is not clamped.
inline constexpr double kMinFilterCutoffHz = 50.0;

struct StageTimings {
  double preprocess_ms = 0.0;
  double encode_ms = 0.0;
  double sample_ms = 0.0;
  double decode_ms = 0.0;
  double vocoder_ms = 0.0;
  double replace_ms = 0.0;
  double total_ms = 0.0;
};

struct SRResult {
  AudioBuffer audio;
  double detected_rolloff = 0.0;
  LogMelSpectrogram mel_estimate;  // after low-band replacement, as handed to the vocoder
  StageTimings timing;
};

struct Preprocessed {
  AudioBuffer x_h;  // 48 kHz
  double cutoff_hz = 0.0;
};

inline bool is_silent(const AudioBuffer& buf) {
  return std::all_of(buf.samples.begin(), buf.samples.end(), [](float s) { return s == 0.0f; });
}

/// Detects the effective bandwidth at the native rate, resamples to 48 kHz and
/// removes everything above the detected edge with an order-8 Chebyshev I
/// lowpass. Inputs whose roll-off is essentially at the 48 kHz Nyquist limit
/// are treated as full band and pass through unfiltered.
inline Preprocessed preprocess(const AudioBuffer& input) {
  validate(input);
  require(!is_silent(input), ErrorCode::SilentInput, "input is silent");
  const double rolloff = estimate_rolloff(stft(input, config_for_rate(input.sample_rate)));
  Preprocessed out;
  out.x_h = resample_cubic(input, kOutputRate);
  const double nyquist = kOutputRate / 2.0;
  if (rolloff >= kFullBandFraction * nyquist) {
    out.cutoff_hz = nyquist;
    return out;
  }
  out.cutoff_hz = std::max(rolloff, 1e-3);
  const FilterSpec spec{FilterFamily::Chebyshev1, kPreprocessOrder, std::max(rolloff, kMinFilterCutoffHz)};
  out.x_h = apply_filter(out.x_h, design_lowpass(spec, kOutputRate));
  return out;
}

/// Bins whose filter lies entirely at or below `cutoff_hz` come from `obs`,
/// the rest from `est`.
inline LogMelSpectrogram replace_low_mel(const LogMelSpectrogram& est, const LogMelSpectrogram& obs, double cutoff_hz) {
  require(est.frames == obs.frames && est.n_mels == obs.n_mels && est.config == obs.config, ErrorCode::ShapeMismatch,
          "mel spectrograms differ in shape");
  const auto& bank = mel_filterbank(obs.config);
  LogMelSpectrogram out = est;
  for (int m = 0; m < out.n_mels; ++m) {
    if (bank.filter(m).upper_hz > cutoff_hz) continue;
    for (int t = 0; t < out.frames; ++t) out.at(t, m) = obs.at(t, m);
  }
  return out;
}

/// STFT splice: bins below `cutoff_hz` from `obs`, the rest from `est`. A
/// cutoff at or above Nyquist returns the observed spectrum everywhere.
inline AudioBuffer replace_low_wave(const AudioBuffer& est, const AudioBuffer& obs, double cutoff_hz) {
  require(est.sample_rate == obs.sample_rate && est.size() == obs.size(), ErrorCode::ShapeMismatch,
          "waveforms differ in rate or length");
  const auto cfg = config_for_rate(obs.sample_rate);
  auto spec = stft(obs, cfg);
  const auto other = stft(est, cfg);
  const bool full = cutoff_hz >= obs.sample_rate / 2.0;
  for (int b = 0; b < spec.bins; ++b) {
    if (full || spec.bin_frequency(b) < cutoff_hz) continue;
    for (int t = 0; t < spec.frames; ++t) spec.at(t, b) = other.at(t, b);
  }
  return istft(spec, obs.size());
}

/// Mel to waveform of exactly `length` samples.
using Vocoder = std::function<AudioBuffer(const LogMelSpectrogram&, std::size_t length)>;

inline constexpr int kDefaultVocoderIterations = 32;

inline Vocoder reference_vocoder(int iterations = kDefaultVocoderIterations, std::uint64_t seed = 0) {
  return [iterations, seed](const LogMelSpectrogram& mel, std::size_t length) {
    return mel_to_wav_reference(mel, iterations, length, seed);
  };
}

inline void check_compatible(const Codec& codec, const LdmModel& ldm, const SpectralConfig& cfg = {}) {
  const auto& d = ldm.denoiser.config();
  require(latent_channels(codec) == d.latent_channels, ErrorCode::ShapeMismatch,
          "codec and diffusion model disagree on latent channels");
  require(d.latent_bins * kFreqDownsample == cfg.n_mels && ldm.n_mels == cfg.n_mels, ErrorCode::ShapeMismatch,
          "diffusion model does not match the mel resolution");
  if (const auto* vae = std::get_if<VariationalCodec<float>>(&codec))
    require(vae->config().n_mels == cfg.n_mels, ErrorCode::ShapeMismatch, "codec does not match the mel resolution");
}

/// Full inference chain. The vocoder defaults to the reference inverter seeded from `cfg.seed`.
inline SRResult upsample(const AudioBuffer& input, const Codec& codec, const LdmModel& ldm, const SamplerConfig& cfg,
                         const Vocoder& vocoder = {}) {
  using clock = std::chrono::steady_clock;
  auto ms_since = [](clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(clock::now() - t0).count();
  };
  const auto start = clock::now();
  validate(input);
  require(input.duration() >= kMinInputSeconds, ErrorCode::InvalidArgument, "input shorter than 0.3 s");
  const SpectralConfig mel_cfg;
  check_compatible(codec, ldm, mel_cfg);

  SRResult res;
  auto t0 = clock::now();
  const auto pre = preprocess(input);
  const auto obs_mel = wav_to_logmel(pre.x_h, mel_cfg);
  res.detected_rolloff = pre.cutoff_hz;
  res.timing.preprocess_ms = ms_since(t0);

  t0 = clock::now();
  const auto cond = encode(obs_mel, codec);
  res.timing.encode_ms = ms_since(t0);

  t0 = clock::now();
  const auto z = generate_latent(ldm, cond, cfg);
  res.timing.sample_ms = ms_since(t0);

  t0 = clock::now();
  const auto est_mel = decode(z, codec, obs_mel.frames, mel_cfg);
  res.mel_estimate = replace_low_mel(est_mel, obs_mel, pre.cutoff_hz);
  res.timing.decode_ms = ms_since(t0);

  t0 = clock::now();
  auto wav = vocoder ? vocoder(res.mel_estimate, pre.x_h.size())
                     : reference_vocoder(kDefaultVocoderIterations, cfg.seed)(res.mel_estimate, pre.x_h.size());
  require(wav.sample_rate == kOutputRate, ErrorCode::ShapeMismatch, "vocoder must produce 48 kHz audio");
  wav.samples.resize(pre.x_h.size(), 0.0f);
  res.timing.vocoder_ms = ms_since(t0);

  t0 = clock::now();
  res.audio = replace_low_wave(wav, pre.x_h, pre.cutoff_hz);
  res.timing.replace_ms = ms_since(t0);
  res.timing.total_ms = ms_since(start);
  return res;
}

}  // namespace bandlift
