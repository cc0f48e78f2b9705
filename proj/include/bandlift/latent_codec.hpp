#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <variant>
#include <vector>

#include "bandlift/detail/binary.hpp"
#include "bandlift/error.hpp"
#include "bandlift/nn/layers.hpp"
#include "bandlift/nn/tensor.hpp"
#include "bandlift/spectral.hpp"

namespace bandlift {

/// channels x time x frequency latent grid.
using LatentTensor = nn::Tensor<float>;

inline constexpr int kTimeDownsample = 4;
inline constexpr int kFreqDownsample = 4;

inline int latent_frames(int mel_frames) { return (mel_frames + kTimeDownsample - 1) / kTimeDownsample; }

/// Mel as a (1, frames padded to a multiple of 4, n_mels) tensor, padding
/// by repeating the last frame, with (v - offset) / scale applied.
template <class T>
nn::Tensor<T> mel_to_tensor(const LogMelSpectrogram& mel, double offset = 0.0, double scale = 1.0) {
  require(mel.frames > 0, ErrorCode::ShapeMismatch, "empty mel");
  const int padded = latent_frames(mel.frames) * kTimeDownsample;
  nn::Tensor<T> x(1, padded, mel.n_mels);
  for (int t = 0; t < padded; ++t) {
    const int src = std::min(t, mel.frames - 1);
    for (int m = 0; m < mel.n_mels; ++m) x.at(0, t, m) = static_cast<T>((mel.at(src, m) - offset) / scale);
  }
  return x;
}

/// Inverse of mel_to_tensor: first `frames` rows, rescaled and clamped to the log floor.
template <class T>
LogMelSpectrogram tensor_to_mel(const nn::Tensor<T>& x, int frames, const SpectralConfig& cfg, double offset = 0.0,
                                double scale = 1.0) {
  require(x.channels == 1 && x.width == cfg.n_mels && frames <= x.height, ErrorCode::ShapeMismatch,
          "decoded tensor does not match the mel grid");
  LogMelSpectrogram mel;
  mel.config = cfg;
  mel.frames = frames;
  mel.n_mels = cfg.n_mels;
  mel.values.resize(static_cast<std::size_t>(frames) * mel.n_mels);
  const double floor_value = cfg.log_floor_value();
  for (int t = 0; t < frames; ++t)
    for (int m = 0; m < mel.n_mels; ++m)
      mel.at(t, m) = std::max(static_cast<double>(x.at(0, t, m)) * scale + offset, floor_value);
  return mel;
}

/// Fixed, exactly invertible codec: each 4x4 mel patch becomes 16 channels.
struct ReferenceCodec {
  static constexpr int kChannels = kTimeDownsample * kFreqDownsample;
};

inline LatentTensor encode(const LogMelSpectrogram& mel, const ReferenceCodec&) {
  require(mel.n_mels % kFreqDownsample == 0, ErrorCode::ShapeMismatch, "n_mels must be a multiple of 4");
  return nn::space_to_depth(mel_to_tensor<float>(mel), kTimeDownsample);
}

inline LogMelSpectrogram decode(const LatentTensor& z, const ReferenceCodec&, int frames,
                                const SpectralConfig& cfg = {}) {
  require(z.channels == ReferenceCodec::kChannels && z.width * kFreqDownsample == cfg.n_mels,
          ErrorCode::ShapeMismatch, "latent does not match the reference codec");
  return tensor_to_mel(nn::depth_to_space(z, kTimeDownsample), frames, cfg);
}

struct CodecConfig {
  int latent_channels = 8;
  int hidden = 32;
  int n_mels = 256;
};

struct CodecLoss {
  double total = 0.0;
  double recon = 0.0;
  double kl = 0.0;
};

/// KL(N(mu, exp(logvar)) || N(0, 1)) for one element.
inline double kl_standard_normal(double mu, double logvar) {
  return 0.5 * (mu * mu + std::exp(logvar) - 1.0 - logvar);
}

/// Small strided convolutional VAE over normalized log-mels.
///   encoder: conv 4x4/4 -> SiLU -> conv 3x3 -> SiLU -> conv 1x1 (mean | log-variance)
///   decoder: conv 3x3 -> SiLU -> conv 3x3 -> SiLU -> conv 1x1 -> depth-to-space 4
template <class T>
class VariationalCodec {
 public:
  static constexpr double kLogvarMin = -20.0;
  static constexpr double kLogvarMax = 10.0;

  VariationalCodec() : VariationalCodec(CodecConfig{}, 0) {}

  VariationalCodec(CodecConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    require(cfg.n_mels % kFreqDownsample == 0, ErrorCode::ShapeMismatch, "n_mels must be a multiple of 4");
    const int c = cfg.latent_channels, h = cfg.hidden;
    enc1_ = nn::Conv2d<T>({.in = 1, .out = h, .kh = 4, .kw = 4, .sh = 4, .sw = 4});
    enc2_ = nn::Conv2d<T>({.in = h, .out = h, .kh = 3, .kw = 3, .ph = 1, .pw = 1});
    enc3_ = nn::Conv2d<T>({.in = h, .out = 2 * c, .kh = 1, .kw = 1});
    dec1_ = nn::Conv2d<T>({.in = c, .out = h, .kh = 3, .kw = 3, .ph = 1, .pw = 1});
    dec2_ = nn::Conv2d<T>({.in = h, .out = h, .kh = 3, .kw = 3, .ph = 1, .pw = 1});
    dec3_ = nn::Conv2d<T>({.in = h, .out = kTimeDownsample * kFreqDownsample, .kh = 1, .kw = 1});
    std::mt19937_64 rng(seed);
    enc1_.init(rng);
    enc2_.init(rng);
    enc3_.init(rng, 0.5);
    dec1_.init(rng);
    dec2_.init(rng);
    dec3_.init(rng, 0.5);
  }

  const CodecConfig& config() const noexcept { return cfg_; }
  int latent_channels() const noexcept { return cfg_.latent_channels; }

  /// Normalization applied to log-mel values before encoding.
  double mel_offset = -2.5;
  double mel_scale = 1.0;

  nn::ParamList<T> params() {
    nn::ParamList<T> out;
    for (auto* layer : {&enc1_, &enc2_, &enc3_, &dec1_, &dec2_, &dec3_})
      for (auto* p : layer->params()) out.push_back(p);
    return out;
  }

  nn::Tensor<T> normalize(const LogMelSpectrogram& mel) const {
    require(mel.n_mels == cfg_.n_mels, ErrorCode::ShapeMismatch, "mel bins do not match the codec");
    return mel_to_tensor<T>(mel, mel_offset, mel_scale);
  }

  /// (2c, t, f): posterior means then log-variances.
  nn::Tensor<T> encode_moments(const nn::Tensor<T>& x) const {
    auto a1 = nn::silu(enc1_.forward(x));
    auto a2 = nn::silu(enc2_.forward(a1));
    auto m = enc3_.forward(a2);
    clamp_logvar(m);
    return m;
  }

  nn::Tensor<T> decode_normalized(const nn::Tensor<T>& z) const {
    require(z.channels == cfg_.latent_channels && z.width * kFreqDownsample == cfg_.n_mels, ErrorCode::ShapeMismatch,
            "latent does not match the codec");
    auto b1 = nn::silu(dec1_.forward(z));
    auto b2 = nn::silu(dec2_.forward(b1));
    return nn::depth_to_space(dec3_.forward(b2), kTimeDownsample);
  }

  /// Forward pass on a normalized mel tensor with fixed reparameterization
  /// noise. With grad_scale != 0, gradients of grad_scale * loss are added to
  /// the parameter gradients.
  CodecLoss accumulate(const nn::Tensor<T>& x, const nn::Tensor<T>& noise, double kl_weight, double grad_scale) {
    nn::RowMatrix<T> cols1, cols2, cols3, cols4, cols5, cols6;
    const auto c1 = enc1_.forward(x, &cols1);
    const auto a1 = nn::silu(c1);
    const auto c2 = enc2_.forward(a1, &cols2);
    const auto a2 = nn::silu(c2);
    auto moments = enc3_.forward(a2, &cols3);

    const int c = cfg_.latent_channels;
    const int plane = moments.plane();
    const std::size_t nz = static_cast<std::size_t>(c) * plane;
    require(noise.size() == nz, ErrorCode::ShapeMismatch, "noise does not match the latent");
    nn::Tensor<T> z(c, moments.height, moments.width);
    double kl = 0.0;
    for (std::size_t i = 0; i < nz; ++i) {
      const T mu = moments.data[i];
      const T lv = std::clamp(moments.data[nz + i], T(kLogvarMin), T(kLogvarMax));
      z.data[i] = mu + std::exp(T(0.5) * lv) * noise.data[i];
      kl += kl_standard_normal(mu, lv);
    }
    kl /= static_cast<double>(nz);

    const auto d1 = dec1_.forward(z, &cols4);
    const auto b1 = nn::silu(d1);
    const auto d2 = dec2_.forward(b1, &cols5);
    const auto b2 = nn::silu(d2);
    const auto out = dec3_.forward(b2, &cols6);
    const auto xhat = nn::depth_to_space(out, kTimeDownsample);
    require(xhat.same_shape(x), ErrorCode::ShapeMismatch, "input frames must be a multiple of 4");

    double recon = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = static_cast<double>(xhat.data[i]) - x.data[i];
      recon += d * d;
    }
    recon /= static_cast<double>(x.size());
    CodecLoss loss{recon + kl_weight * kl, recon, kl};
    if (grad_scale == 0.0) return loss;

    nn::Tensor<T> dxhat(1, x.height, x.width);
    const T rs = static_cast<T>(2.0 * grad_scale / static_cast<double>(x.size()));
    for (std::size_t i = 0; i < x.size(); ++i) dxhat.data[i] = rs * (xhat.data[i] - x.data[i]);
    auto db2 = dec3_.backward(nn::space_to_depth(dxhat, kTimeDownsample), cols6, b2.height, b2.width);
    nn::silu_backward_inplace<T>(db2.data, d2.data);
    auto db1 = dec2_.backward(db2, cols5, b1.height, b1.width);
    nn::silu_backward_inplace<T>(db1.data, d1.data);
    auto dz = dec1_.backward(db1, cols4, z.height, z.width);

    nn::Tensor<T> dmoments(2 * c, moments.height, moments.width);
    const T ks = static_cast<T>(kl_weight * grad_scale / static_cast<double>(nz));
    for (std::size_t i = 0; i < nz; ++i) {
      const T mu = moments.data[i];
      const T raw_lv = moments.data[nz + i];
      const T lv = std::clamp(raw_lv, T(kLogvarMin), T(kLogvarMax));
      const T sd = std::exp(T(0.5) * lv);
      dmoments.data[i] = dz.data[i] + ks * mu;
      const bool clamped = raw_lv < T(kLogvarMin) || raw_lv > T(kLogvarMax);
      dmoments.data[nz + i] = clamped ? T(0) : dz.data[i] * noise.data[i] * T(0.5) * sd + ks * T(0.5) * (sd * sd - T(1));
    }
    auto da2 = enc3_.backward(dmoments, cols3, a2.height, a2.width);
    nn::silu_backward_inplace<T>(da2.data, c2.data);
    auto da1 = enc2_.backward(da2, cols2, a1.height, a1.width);
    nn::silu_backward_inplace<T>(da1.data, c1.data);
    enc1_.backward(da1, cols1, x.height, x.width);
    return loss;
  }

 private:
  void clamp_logvar(nn::Tensor<T>& moments) const {
    const std::size_t nz = moments.size() / 2;
    for (std::size_t i = nz; i < moments.size(); ++i)
      moments.data[i] = std::clamp(moments.data[i], T(kLogvarMin), T(kLogvarMax));
  }

  CodecConfig cfg_;
  nn::Conv2d<T> enc1_, enc2_, enc3_, dec1_, dec2_, dec3_;
};

/// Mean path (sample = false) or reparameterized draw (sample = true).
template <class T, class Rng>
LatentTensor encode(const LogMelSpectrogram& mel, const VariationalCodec<T>& codec, bool sample, Rng& rng) {
  const auto moments = codec.encode_moments(codec.normalize(mel));
  const int c = codec.latent_channels();
  const std::size_t nz = static_cast<std::size_t>(c) * moments.plane();
  LatentTensor z(c, moments.height, moments.width);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (std::size_t i = 0; i < nz; ++i) {
    double v = moments.data[i];
    if (sample) v += std::exp(0.5 * static_cast<double>(moments.data[nz + i])) * nd(rng);
    z.data[i] = static_cast<float>(v);
  }
  return z;
}

template <class T>
LatentTensor encode(const LogMelSpectrogram& mel, const VariationalCodec<T>& codec) {
  std::mt19937_64 unused(0);
  return encode(mel, codec, false, unused);
}

template <class T>
LogMelSpectrogram decode(const LatentTensor& z, const VariationalCodec<T>& codec, int frames,
                         const SpectralConfig& cfg = {}) {
  require(cfg.n_mels == codec.config().n_mels, ErrorCode::ShapeMismatch, "mel config does not match the codec");
  const auto x = codec.decode_normalized(z.template cast<T>());
  return tensor_to_mel(x, frames, cfg, codec.mel_offset, codec.mel_scale);
}

using Codec = std::variant<ReferenceCodec, VariationalCodec<float>>;

inline int latent_channels(const Codec& codec) {
  return std::visit(
      [](const auto& c) {
        if constexpr (std::is_same_v<std::decay_t<decltype(c)>, ReferenceCodec>)
          return ReferenceCodec::kChannels;
        else
          return c.latent_channels();
      },
      codec);
}

inline LatentTensor encode(const LogMelSpectrogram& mel, const Codec& codec) {
  return std::visit([&](const auto& c) { return encode(mel, c); }, codec);
}

inline LogMelSpectrogram decode(const LatentTensor& z, const Codec& codec, int frames, const SpectralConfig& cfg = {}) {
  return std::visit([&](const auto& c) { return decode(z, c, frames, cfg); }, codec);
}

// ---------------------------------------------------------------------------
// Training

struct CodecTrainConfig {
  int steps = 2000;
  int batch = 8;
  double lr = 1e-3;
  double kl_weight = 1e-3;
  std::uint64_t seed = 0;
  int crop_frames = 32;  // multiple of 4; whole clips are used when shorter
  int latent_channels = 8;
  int hidden = 32;
  double clip_norm = 1.0;
};

class CodecTrainer {
 public:
  CodecTrainer(const std::vector<LogMelSpectrogram>& dataset, CodecTrainConfig cfg)
      : cfg_(cfg), codec_(CodecConfig{cfg.latent_channels, cfg.hidden, first_bins(dataset)}, cfg.seed) {
    // Normalization from dataset statistics, rounded to float so a saved
    // checkpoint reproduces it exactly.
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (const auto& mel : dataset)
      for (double v : mel.values) {
        sum += v;
        sq += v * v;
        ++n;
      }
    const double mean = sum / static_cast<double>(n);
    const double sd = std::sqrt(std::max(sq / static_cast<double>(n) - mean * mean, 1e-12));
    codec_.mel_offset = static_cast<float>(mean);
    codec_.mel_scale = static_cast<float>(sd);
    prepare(dataset);
  }

  /// Continue from a checkpointed codec and optimizer state.
  CodecTrainer(const std::vector<LogMelSpectrogram>& dataset, CodecTrainConfig cfg, VariationalCodec<float> codec,
               int completed_steps, std::optional<std::pair<std::uint64_t, std::vector<float>>> optimizer_state)
      : cfg_(cfg), codec_(std::move(codec)), step_(completed_steps) {
    prepare(dataset);
    if (optimizer_state) adam_.restore(optimizer_state->first, optimizer_state->second);
  }

  /// One optimizer update on a random batch of random crops; returns the batch loss.
  CodecLoss step() {
    std::mt19937_64 rng(nn::mix_seed(cfg_.seed, static_cast<std::uint64_t>(step_)));
    std::uniform_int_distribution<std::size_t> pick(0, data_.size() - 1);
    auto params = codec_.params();
    nn::zero_grad(params);
    CodecLoss mean;
    const double scale = 1.0 / cfg_.batch;
    for (int b = 0; b < cfg_.batch; ++b) {
      const auto& full = data_[pick(rng)];
      nn::Tensor<float> x = full;
      if (full.height > cfg_.crop_frames) {
        std::uniform_int_distribution<int> start(0, (full.height - cfg_.crop_frames) / kTimeDownsample);
        x = nn::crop_height(full, start(rng) * kTimeDownsample, cfg_.crop_frames);
      }
      nn::Tensor<float> noise(codec_.latent_channels(), x.height / kTimeDownsample, x.width / kFreqDownsample);
      nn::fill_normal(noise, rng);
      const auto loss = codec_.accumulate(x, noise, cfg_.kl_weight, scale);
      mean.total += loss.total * scale;
      mean.recon += loss.recon * scale;
      mean.kl += loss.kl * scale;
    }
    require(std::isfinite(mean.total), ErrorCode::DivergedTraining, "codec loss is not finite");
    nn::clip_grad_norm(params, cfg_.clip_norm);
    adam_.step(params);
    ++step_;
    last_loss_ = mean.total;
    return mean;
  }

  /// Mean-path reconstruction MSE (normalized units) over the whole dataset.
  double reconstruction_error() {
    double acc = 0.0;
    for (const auto& x : data_) {
      nn::Tensor<float> zero(codec_.latent_channels(), x.height / kTimeDownsample, x.width / kFreqDownsample);
      acc += codec_.accumulate(x, zero, 0.0, 0.0).recon;
    }
    return acc / static_cast<double>(data_.size());
  }

  int completed_steps() const noexcept { return step_; }
  double last_loss() const noexcept { return last_loss_; }
  const VariationalCodec<float>& codec() const noexcept { return codec_; }
  const nn::Adam<float>& optimizer() const noexcept { return adam_; }

 private:
  static int first_bins(const std::vector<LogMelSpectrogram>& dataset) {
    require(!dataset.empty(), ErrorCode::InvalidArgument, "codec training needs at least one mel");
    return dataset.front().n_mels;
  }

  void prepare(const std::vector<LogMelSpectrogram>& dataset) {
    require(!dataset.empty(), ErrorCode::InvalidArgument, "codec training needs at least one mel");
    require(cfg_.crop_frames % kTimeDownsample == 0, ErrorCode::InvalidArgument, "crop must be a multiple of 4");
    data_.clear();
    for (const auto& mel : dataset) data_.push_back(codec_.normalize(mel));
    adam_ = nn::Adam<float>(codec_.params(), {.lr = cfg_.lr});
  }

  CodecTrainConfig cfg_;
  VariationalCodec<float> codec_;
  nn::Adam<float> adam_;
  std::vector<nn::Tensor<float>> data_;
  int step_ = 0;
  double last_loss_ = 0.0;
};

struct CodecTrainResult {
  VariationalCodec<float> codec;
  std::vector<double> losses;
};

inline CodecTrainResult train_codec(const std::vector<LogMelSpectrogram>& dataset, const CodecTrainConfig& cfg) {
  CodecTrainer trainer(dataset, cfg);
  std::vector<double> losses;
  losses.reserve(static_cast<std::size_t>(cfg.steps));
  for (int s = 0; s < cfg.steps; ++s) losses.push_back(trainer.step().total);
  return {trainer.codec(), std::move(losses)};
}

// BVAE checkpoint (little-endian):
//    0 char[4] "BVAE"            32 f32 mel_scale
//    4 u32 version (1)           36 u32 param_count
//    8 u32 latent_channels       40 u32 steps_trained
//   12 u32 hidden                44 f32 final_loss
//   16 u32 time_ds (4)           48 u32 has_optimizer_state
//   20 u32 freq_ds (4)           52 reserved (zero) to 64
//   24 u32 n_mels
//   28 f32 mel_offset
//   64 f32[param_count] weights (encoder then decoder, weight before bias per layer)
//   then, if has_optimizer_state: u64 adam_step, f32[param_count] m, f32[param_count] v
inline constexpr std::uint32_t kBvaeVersion = 1;

struct CodecCheckpoint {
  VariationalCodec<float> codec;
  int steps_trained = 0;
  float final_loss = 0.0f;
  std::optional<std::pair<std::uint64_t, std::vector<float>>> optimizer;
};

inline void save_codec(const std::filesystem::path& path, VariationalCodec<float> codec, int steps_trained = 0,
                       float final_loss = 0.0f, const nn::Adam<float>* optimizer = nullptr) {
  const auto flat = nn::flatten_values(codec.params());
  detail::ByteWriter w;
  w.put_tag("BVAE");
  w.put<std::uint32_t>(kBvaeVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(codec.config().latent_channels));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(codec.config().hidden));
  w.put<std::uint32_t>(kTimeDownsample);
  w.put<std::uint32_t>(kFreqDownsample);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(codec.config().n_mels));
  w.put<float>(static_cast<float>(codec.mel_offset));
  w.put<float>(static_cast<float>(codec.mel_scale));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(flat.size()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(steps_trained));
  w.put<float>(final_loss);
  w.put<std::uint32_t>(optimizer ? 1u : 0u);
  w.pad_to(64);
  w.put_all<float>(flat);
  if (optimizer) {
    w.put<std::uint64_t>(optimizer->steps());
    w.put_all<float>(optimizer->flat_state());
  }
  detail::spit(path, w.bytes());
}

inline CodecCheckpoint load_codec(const std::filesystem::path& path) {
  const auto bytes = detail::slurp(path);
  detail::ByteReader r(bytes);
  require(r.tag_is("BVAE"), ErrorCode::CheckpointMismatch, path.string() + " is not a BVAE checkpoint");
  require(r.get<std::uint32_t>() == kBvaeVersion, ErrorCode::CheckpointMismatch, "unsupported BVAE version");
  CodecConfig cfg;
  cfg.latent_channels = static_cast<int>(r.get<std::uint32_t>());
  cfg.hidden = static_cast<int>(r.get<std::uint32_t>());
  require(r.get<std::uint32_t>() == kTimeDownsample && r.get<std::uint32_t>() == kFreqDownsample,
          ErrorCode::CheckpointMismatch, "unsupported downsampling factors");
  cfg.n_mels = static_cast<int>(r.get<std::uint32_t>());
  require(cfg.latent_channels > 0 && cfg.hidden > 0 && cfg.n_mels > 0, ErrorCode::CheckpointMismatch,
          "corrupt BVAE header");
  CodecCheckpoint ck{VariationalCodec<float>(cfg, 0), 0, 0.0f, std::nullopt};
  ck.codec.mel_offset = r.get<float>();
  ck.codec.mel_scale = r.get<float>();
  const auto count = r.get<std::uint32_t>();
  ck.steps_trained = static_cast<int>(r.get<std::uint32_t>());
  ck.final_loss = r.get<float>();
  const bool has_opt = r.get<std::uint32_t>() != 0;
  r.seek(64);
  nn::assign_values(ck.codec.params(), r.get_all<float>(count));
  if (has_opt) {
    const auto t = r.get<std::uint64_t>();
    ck.optimizer = std::make_pair(t, r.get_all<float>(2 * static_cast<std::size_t>(count)));
  }
  return ck;
}

}  // namespace bandlift
