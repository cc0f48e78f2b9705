#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <optional>
#include <random>
#include <vector>

#include "bandlift/detail/binary.hpp"
#include "bandlift/error.hpp"
#include "bandlift/latent_codec.hpp"
#include "bandlift/nn/layers.hpp"
#include "bandlift/nn/tensor.hpp"

namespace bandlift {

// ---------------------------------------------------------------------------
// Schedule and v-parameterization

struct NoiseSchedule {
  int K = 0;
  std::vector<double> alpha_bar;  // K + 1 entries

  void check(int k) const {
    require(k >= 0 && k <= K, ErrorCode::StepOutOfRange, "diffusion step " + std::to_string(k) + " out of range");
  }
  double signal(int k) const { return std::sqrt(alpha_bar[static_cast<std::size_t>(k)]); }
  double noise(int k) const { return std::sqrt(1.0 - alpha_bar[static_cast<std::size_t>(k)]); }
};

inline constexpr double kCosineOffset = 0.008;

inline double cosine_alpha_bar(int k, int K) {
  const double x = (static_cast<double>(k) / K + kCosineOffset) / (1.0 + kCosineOffset);
  const double c = std::cos(x * std::numbers::pi / 2.0);
  return c * c;
}

/// Cosine schedule with sqrt(alpha_bar) shifted and stretched so the last
/// step has zero signal while the first keeps its value.
inline NoiseSchedule build_schedule(int K = 1000) {
  require(K >= 2, ErrorCode::InvalidArgument, "schedule needs at least two steps");
  NoiseSchedule s;
  s.K = K;
  s.alpha_bar.resize(static_cast<std::size_t>(K) + 1);
  const double first = std::sqrt(cosine_alpha_bar(0, K));
  const double last = std::sqrt(cosine_alpha_bar(K, K));
  for (int k = 0; k <= K; ++k) {
    const double r = (std::sqrt(cosine_alpha_bar(k, K)) - last) * first / (first - last);
    s.alpha_bar[static_cast<std::size_t>(k)] = r * r;
  }
  s.alpha_bar[static_cast<std::size_t>(K)] = 0.0;
  return s;
}

namespace detail {
/// out = a * x + b * y elementwise, evaluated in double.
inline LatentTensor axpby(double a, const LatentTensor& x, double b, const LatentTensor& y) {
  require(x.same_shape(y), ErrorCode::ShapeMismatch, "latent shapes differ");
  LatentTensor out(x.channels, x.height, x.width);
  for (std::size_t i = 0; i < x.size(); ++i)
    out.data[i] = static_cast<float>(a * static_cast<double>(x.data[i]) + b * static_cast<double>(y.data[i]));
  return out;
}
}  // namespace detail

inline LatentTensor forward_diffuse(const LatentTensor& z0, int k, const LatentTensor& eps, const NoiseSchedule& s) {
  s.check(k);
  return detail::axpby(s.signal(k), z0, s.noise(k), eps);
}

inline LatentTensor v_target(const LatentTensor& z0, const LatentTensor& eps, int k, const NoiseSchedule& s) {
  s.check(k);
  return detail::axpby(s.signal(k), eps, -s.noise(k), z0);
}

inline LatentTensor predict_z0(const LatentTensor& zk, const LatentTensor& v, int k, const NoiseSchedule& s) {
  s.check(k);
  return detail::axpby(s.signal(k), zk, -s.noise(k), v);
}

inline LatentTensor predict_eps(const LatentTensor& zk, const LatentTensor& v, int k, const NoiseSchedule& s) {
  s.check(k);
  return detail::axpby(s.noise(k), zk, s.signal(k), v);
}

inline LatentTensor cfg_combine(const LatentTensor& v_cond, const LatentTensor& v_uncond, double w) {
  return detail::axpby(w, v_cond, 1.0 - w, v_uncond);
}

/// The unconditional token: zeros shaped like the conditioning latent.
inline LatentTensor empty_condition(const LatentTensor& cond) {
  return LatentTensor(cond.channels, cond.height, cond.width);
}

// ---------------------------------------------------------------------------
// Sampling

struct SamplerConfig {
  int ddim_steps = 50;
  double guidance_scale = 3.5;
  double eta = 0.0;
  std::uint64_t seed = 0;
};

/// Strictly decreasing visit order from K down to 1, spaced quadratically so
/// steps crowd toward the clean end: k_j = 1 + round((K-1) (1 - j/(S-1))^2),
/// nudged apart where rounding collides.
inline std::vector<int> ddim_timesteps(int K, int steps) {
  require(steps >= 1 && steps <= K, ErrorCode::InvalidArgument, "ddim_steps must lie in [1, K]");
  if (steps == 1) return {K};
  std::vector<int> out(static_cast<std::size_t>(steps));
  for (int j = 0; j < steps; ++j) {
    const double r = 1.0 - static_cast<double>(j) / (steps - 1);
    out[static_cast<std::size_t>(j)] = 1 + static_cast<int>(std::lround((K - 1) * r * r));
  }
  for (int j = steps - 2; j >= 0; --j) {
    auto& k = out[static_cast<std::size_t>(j)];
    k = std::max(k, out[static_cast<std::size_t>(j) + 1] + 1);
  }
  return out;
}

/// Guided velocity; skips the pass whose weight is zero.
template <class Model>
LatentTensor guided_velocity(const Model& model, const LatentTensor& zk, int k, const LatentTensor& cond, double w) {
  if (w == 1.0) return model(zk, k, cond);
  const auto v_uncond = model(zk, k, empty_condition(cond));
  if (w == 0.0) return v_uncond;
  return cfg_combine(model(zk, k, cond), v_uncond, w);
}

/// Deterministic DDIM in the v-parameterization. `model(z_k, k, cond)`
/// returns the velocity estimate.
template <class Model, class Rng>
LatentTensor ddim_sample(const Model& model, const LatentTensor& cond, const NoiseSchedule& s,
                         const SamplerConfig& cfg, Rng& rng) {
  require(cfg.guidance_scale >= 0.0, ErrorCode::InvalidArgument, "guidance scale must be non-negative");
  require(cfg.eta == 0.0, ErrorCode::InvalidArgument, "only the deterministic sampler (eta = 0) is supported");
  const auto steps = ddim_timesteps(s.K, cfg.ddim_steps);
  LatentTensor z(cond.channels, cond.height, cond.width);
  nn::fill_normal(z, rng);
  for (std::size_t j = 0; j < steps.size(); ++j) {
    const int k = steps[j];
    const auto v = guided_velocity(model, z, k, cond, cfg.guidance_scale);
    auto z0 = predict_z0(z, v, k, s);
    if (j + 1 == steps.size()) return z0;
    const auto eps = predict_eps(z, v, k, s);
    const int next = steps[j + 1];
    z = detail::axpby(s.signal(next), z0, s.noise(next), eps);
  }
  return z;
}

template <class Model>
LatentTensor ddim_sample(const Model& model, const LatentTensor& cond, const NoiseSchedule& s,
                         const SamplerConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  return ddim_sample(model, cond, s, cfg, rng);
}

// ---------------------------------------------------------------------------
// Denoiser

struct DenoiserConfig {
  int latent_channels = 8;
  int latent_bins = 64;
  int hidden = 32;
  int blocks = 4;
  int emb_dim = 32;
};

/// Sinusoidal embedding of the step index: sin half then cos half.
template <class T>
std::vector<T> step_embedding(int k, int dim) {
  std::vector<T> e(static_cast<std::size_t>(dim));
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    e[static_cast<std::size_t>(i)] = static_cast<T>(std::sin(k * freq));
    e[static_cast<std::size_t>(i + half)] = static_cast<T>(std::cos(k * freq));
  }
  return e;
}

/// Residual convolutional velocity predictor. Input channels are the noisy
/// latent, the conditioning latent and a frequency-position ramp. Block b
/// dilates its first convolution by 2^b along frequency; the step embedding
/// enters as per-channel biases.
template <class T>
class Denoiser {
 public:
  Denoiser() : Denoiser(DenoiserConfig{}, 0) {}

  Denoiser(DenoiserConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    require(cfg.emb_dim % 2 == 0 && cfg.blocks >= 1, ErrorCode::InvalidArgument, "bad denoiser configuration");
    const int h = cfg.hidden;
    std::mt19937_64 rng(seed);
    emb_ = nn::Linear<T>(cfg.emb_dim, cfg.emb_dim);
    emb_.init(rng);
    in_bias_ = nn::Linear<T>(cfg.emb_dim, h);
    in_bias_.init(rng);
    conv_in_ = nn::Conv2d<T>({.in = 2 * cfg.latent_channels + 1, .out = h, .kh = 3, .kw = 3, .ph = 1, .pw = 1});
    conv_in_.init(rng);
    for (int b = 0; b < cfg.blocks; ++b) {
      const int d = 1 << b;
      Block blk;
      blk.conv1 = nn::Conv2d<T>({.in = h, .out = h, .kh = 3, .kw = 3, .ph = 1, .pw = d, .dh = 1, .dw = d});
      blk.conv2 = nn::Conv2d<T>({.in = h, .out = h, .kh = 3, .kw = 3, .ph = 1, .pw = 1});
      blk.bias = nn::Linear<T>(cfg.emb_dim, h);
      blk.conv1.init(rng);
      blk.conv2.init(rng, 0.5);
      blk.bias.init(rng);
      blocks_.push_back(std::move(blk));
    }
    conv_out_ = nn::Conv2d<T>({.in = h, .out = cfg.latent_channels, .kh = 3, .kw = 3, .ph = 1, .pw = 1});
    conv_out_.init(rng, 0.1);
  }

  const DenoiserConfig& config() const noexcept { return cfg_; }

  nn::ParamList<T> params() {
    nn::ParamList<T> out;
    auto add = [&](auto& layer) {
      for (auto* p : layer.params()) out.push_back(p);
    };
    add(emb_);
    add(in_bias_);
    add(conv_in_);
    for (auto& b : blocks_) {
      add(b.conv1);
      add(b.conv2);
      add(b.bias);
    }
    add(conv_out_);
    return out;
  }

  nn::Tensor<T> predict(const nn::Tensor<T>& zk, int k, const nn::Tensor<T>& cond) const {
    Trace tr;
    return run(zk, k, cond, tr, false);
  }

  LatentTensor operator()(const LatentTensor& zk, int k, const LatentTensor& cond) const {
    if constexpr (std::is_same_v<T, float>)
      return predict(zk, k, cond);
    else
      return predict(zk.template cast<T>(), k, cond.template cast<T>()).template cast<float>();
  }

  /// Mean squared error against `target`; adds grad_scale * dLoss/dtheta to the gradients.
  double accumulate(const nn::Tensor<T>& zk, int k, const nn::Tensor<T>& cond, const nn::Tensor<T>& target,
                    double grad_scale) {
    Trace tr;
    const auto y = run(zk, k, cond, tr, true);
    require(y.same_shape(target), ErrorCode::ShapeMismatch, "target shape");
    double loss = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double d = static_cast<double>(y.data[i]) - target.data[i];
      loss += d * d;
    }
    loss /= static_cast<double>(y.size());
    if (grad_scale == 0.0) return loss;

    const int H = y.height, W = y.width;
    nn::Tensor<T> dy(y.channels, H, W);
    const T s = static_cast<T>(2.0 * grad_scale / static_cast<double>(y.size()));
    for (std::size_t i = 0; i < y.size(); ++i) dy.data[i] = s * (y.data[i] - target.data[i]);

    auto dh = conv_out_.backward(dy, tr.cols_out, H, W);
    nn::silu_backward_inplace<T>(dh.data, tr.h.back().data);
    std::vector<T> de(static_cast<std::size_t>(cfg_.emb_dim), T(0));
    auto add_emb_grad = [&](nn::Linear<T>& lin, const nn::Tensor<T>& dpre) {
      std::vector<T> db(static_cast<std::size_t>(dpre.channels), T(0));
      for (int c = 0; c < dpre.channels; ++c) db[static_cast<std::size_t>(c)] = dpre.matrix().row(c).sum();
      const auto g = lin.backward(db, tr.emb);
      for (std::size_t i = 0; i < de.size(); ++i) de[i] += g[i];
    };
    for (int b = cfg_.blocks - 1; b >= 0; --b) {
      auto& blk = blocks_[static_cast<std::size_t>(b)];
      auto du = blk.conv2.backward(dh, tr.cols2[static_cast<std::size_t>(b)], H, W);
      nn::silu_backward_inplace<T>(du.data, tr.u[static_cast<std::size_t>(b)].data);
      add_emb_grad(blk.bias, du);
      auto da = blk.conv1.backward(du, tr.cols1[static_cast<std::size_t>(b)], H, W);
      nn::silu_backward_inplace<T>(da.data, tr.h[static_cast<std::size_t>(b)].data);
      for (std::size_t i = 0; i < dh.size(); ++i) dh.data[i] += da.data[i];
    }
    add_emb_grad(in_bias_, dh);
    conv_in_.backward(dh, tr.cols_in, H, W);
    nn::silu_backward_inplace<T>(de, tr.emb_pre);
    emb_.backward(de, tr.raw_emb);
    return loss;
  }

 private:
  struct Block {
    nn::Conv2d<T> conv1, conv2;
    nn::Linear<T> bias;
  };

  struct Trace {
    std::vector<T> raw_emb, emb_pre, emb;
    nn::RowMatrix<T> cols_in, cols_out;
    std::vector<nn::RowMatrix<T>> cols1, cols2;
    std::vector<nn::Tensor<T>> h, u;  // block inputs (plus final) and first-conv outputs
  };

  static void add_channel_bias(nn::Tensor<T>& x, const std::vector<T>& bias) {
    auto m = x.matrix();
    for (int c = 0; c < x.channels; ++c) m.row(c).array() += bias[static_cast<std::size_t>(c)];
  }

  nn::Tensor<T> run(const nn::Tensor<T>& zk, int k, const nn::Tensor<T>& cond, Trace& tr, bool keep) const {
    require(zk.same_shape(cond) && zk.channels == cfg_.latent_channels && zk.width == cfg_.latent_bins,
            ErrorCode::ShapeMismatch, "denoiser input does not match its configuration");
    nn::Tensor<T> ramp(1, zk.height, zk.width);
    for (int y = 0; y < zk.height; ++y)
      for (int x = 0; x < zk.width; ++x)
        ramp.at(0, y, x) = static_cast<T>(zk.width > 1 ? 2.0 * x / (zk.width - 1) - 1.0 : 0.0);
    const auto input = nn::concat_channels<T>({&zk, &cond, &ramp});

    tr.raw_emb = step_embedding<T>(k, cfg_.emb_dim);
    tr.emb_pre = emb_.forward(tr.raw_emb);
    tr.emb = tr.emb_pre;
    nn::silu_inplace<T>(tr.emb);

    auto h = conv_in_.forward(input, keep ? &tr.cols_in : nullptr);
    add_channel_bias(h, in_bias_.forward(tr.emb));
    if (keep) {
      tr.cols1.resize(blocks_.size());
      tr.cols2.resize(blocks_.size());
    }
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const auto& blk = blocks_[b];
      auto u = blk.conv1.forward(nn::silu(h), keep ? &tr.cols1[b] : nullptr);
      add_channel_bias(u, blk.bias.forward(tr.emb));
      const auto r = blk.conv2.forward(nn::silu(u), keep ? &tr.cols2[b] : nullptr);
      if (keep) {
        tr.h.push_back(h);
        tr.u.push_back(std::move(u));
      }
      for (std::size_t i = 0; i < h.size(); ++i) h.data[i] += r.data[i];
    }
    const auto out = conv_out_.forward(nn::silu(h), keep ? &tr.cols_out : nullptr);
    if (keep) tr.h.push_back(std::move(h));
    return out;
  }

  DenoiserConfig cfg_;
  nn::Linear<T> emb_, in_bias_;
  nn::Conv2d<T> conv_in_, conv_out_;
  std::vector<Block> blocks_;
};

// ---------------------------------------------------------------------------
// Training

struct TrainBatch {
  std::vector<LatentTensor> z0;
  std::vector<LatentTensor> cond;
};

inline constexpr double kDefaultCfgDrop = 0.10;

/// One optimizer update. The model needs `double accumulate(z_k, k, cond,
/// target, grad_scale)` and `params()`. Per item, in order: k ~ U{1..K},
/// u ~ U[0,1) (condition dropped when u < cfg_drop), eps ~ N(0, I).
template <class Model, class Rng>
double train_step(const TrainBatch& batch, Model& model, nn::Adam<float>& opt, const NoiseSchedule& s, Rng& rng,
                  double cfg_drop = kDefaultCfgDrop, double clip_norm = 1.0) {
  require(!batch.z0.empty() && batch.z0.size() == batch.cond.size(), ErrorCode::ShapeMismatch,
          "batch needs matching latents and conditions");
  require(cfg_drop >= 0.0 && cfg_drop <= 1.0, ErrorCode::InvalidArgument, "cfg_drop must lie in [0, 1]");
  auto params = model.params();
  nn::zero_grad(params);
  std::uniform_int_distribution<int> pick_k(1, s.K);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double scale = 1.0 / static_cast<double>(batch.z0.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.z0.size(); ++i) {
    const auto& z0 = batch.z0[i];
    require(z0.same_shape(batch.cond[i]), ErrorCode::ShapeMismatch, "condition shape differs from latent");
    const int k = pick_k(rng);
    const bool drop = unit(rng) < cfg_drop;
    LatentTensor eps(z0.channels, z0.height, z0.width);
    nn::fill_normal(eps, rng);
    const auto zk = forward_diffuse(z0, k, eps, s);
    const auto target = v_target(z0, eps, k, s);
    loss += scale * model.accumulate(zk, k, drop ? empty_condition(batch.cond[i]) : batch.cond[i], target, scale);
  }
  require(std::isfinite(loss), ErrorCode::DivergedTraining, "diffusion loss is not finite");
  nn::clip_grad_norm(params, clip_norm);
  opt.step(params);
  return loss;
}

/// Latent normalization: z_norm = (z - shift[c]) / scale[c].
struct LatentStats {
  std::vector<float> shift;
  std::vector<float> scale;

  LatentTensor normalize(const LatentTensor& z) const { return apply(z, false); }
  LatentTensor denormalize(const LatentTensor& z) const { return apply(z, true); }

  static LatentStats identity(int channels) {
    return {std::vector<float>(static_cast<std::size_t>(channels), 0.0f),
            std::vector<float>(static_cast<std::size_t>(channels), 1.0f)};
  }

  static LatentStats estimate(const std::vector<LatentTensor>& latents) {
    require(!latents.empty(), ErrorCode::InvalidArgument, "no latents to estimate statistics from");
    const int c = latents.front().channels;
    std::vector<double> sum(static_cast<std::size_t>(c)), sq(static_cast<std::size_t>(c));
    double n = 0.0;
    for (const auto& z : latents) {
      for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < z.plane(); ++i) {
          const double v = z.data[static_cast<std::size_t>(ch) * z.plane() + i];
          sum[static_cast<std::size_t>(ch)] += v;
          sq[static_cast<std::size_t>(ch)] += v * v;
        }
      n += z.plane();
    }
    LatentStats st;
    for (int ch = 0; ch < c; ++ch) {
      const double mean = sum[static_cast<std::size_t>(ch)] / n;
      const double var = std::max(sq[static_cast<std::size_t>(ch)] / n - mean * mean, 1e-8);
      st.shift.push_back(static_cast<float>(mean));
      st.scale.push_back(static_cast<float>(std::sqrt(var)));
    }
    return st;
  }

 private:
  LatentTensor apply(const LatentTensor& z, bool inverse) const {
    require(static_cast<std::size_t>(z.channels) == shift.size(), ErrorCode::ShapeMismatch,
            "latent channels do not match the statistics");
    LatentTensor out = z;
    for (int ch = 0; ch < z.channels; ++ch) {
      const double a = shift[static_cast<std::size_t>(ch)], b = scale[static_cast<std::size_t>(ch)];
      for (int i = 0; i < z.plane(); ++i) {
        float& v = out.data[static_cast<std::size_t>(ch) * z.plane() + i];
        v = static_cast<float>(inverse ? v * b + a : (v - a) / b);
      }
    }
    return out;
  }
};

struct LdmModel {
  NoiseSchedule schedule;
  Denoiser<float> denoiser;
  LatentStats stats;
  int n_mels = 256;
};

struct LdmTrainConfig {
  int steps = 4000;
  int batch = 16;
  double lr = 1e-4;
  double cfg_drop = kDefaultCfgDrop;
  std::uint64_t seed = 0;
  int crop_frames = 8;  // latent frames per training crop
  int K = 1000;
  int hidden = 32;
  int blocks = 4;
  int emb_dim = 32;
  double clip_norm = 1.0;
};

/// Trains the denoiser on (target latent, conditioning latent) pairs of raw
/// codec latents; both are normalized with statistics of the targets.
class LdmTrainer {
 public:
  LdmTrainer(const std::vector<LatentTensor>& targets, const std::vector<LatentTensor>& conds, LdmTrainConfig cfg,
             int n_mels)
      : cfg_(cfg) {
    require(!targets.empty(), ErrorCode::InvalidArgument, "diffusion training needs data");
    const auto& z = targets.front();
    model_.schedule = build_schedule(cfg.K);
    model_.denoiser = Denoiser<float>({z.channels, z.width, cfg.hidden, cfg.blocks, cfg.emb_dim}, cfg.seed);
    model_.stats = LatentStats::estimate(targets);
    model_.n_mels = n_mels;
    prepare(targets, conds);
  }

  LdmTrainer(const std::vector<LatentTensor>& targets, const std::vector<LatentTensor>& conds, LdmTrainConfig cfg,
             LdmModel model, int completed_steps,
             std::optional<std::pair<std::uint64_t, std::vector<float>>> optimizer_state)
      : cfg_(cfg), model_(std::move(model)), step_(completed_steps) {
    prepare(targets, conds);
    if (optimizer_state) adam_.restore(optimizer_state->first, optimizer_state->second);
  }

  double step() {
    std::mt19937_64 rng(nn::mix_seed(cfg_.seed, static_cast<std::uint64_t>(step_)));
    std::uniform_int_distribution<std::size_t> pick(0, targets_.size() - 1);
    TrainBatch batch;
    for (int b = 0; b < cfg_.batch; ++b) {
      const std::size_t i = pick(rng);
      const auto& z = targets_[i];
      const auto& c = conds_[i];
      if (z.height > cfg_.crop_frames) {
        std::uniform_int_distribution<int> start(0, z.height - cfg_.crop_frames);
        const int y0 = start(rng);
        batch.z0.push_back(nn::crop_height(z, y0, cfg_.crop_frames));
        batch.cond.push_back(nn::crop_height(c, y0, cfg_.crop_frames));
      } else {
        batch.z0.push_back(z);
        batch.cond.push_back(c);
      }
    }
    last_loss_ = train_step(batch, model_.denoiser, adam_, model_.schedule, rng, cfg_.cfg_drop, cfg_.clip_norm);
    ++step_;
    return last_loss_;
  }

  int completed_steps() const noexcept { return step_; }
  double last_loss() const noexcept { return last_loss_; }
  const LdmModel& model() const noexcept { return model_; }
  const nn::Adam<float>& optimizer() const noexcept { return adam_; }

 private:
  void prepare(const std::vector<LatentTensor>& targets, const std::vector<LatentTensor>& conds) {
    require(targets.size() == conds.size() && !targets.empty(), ErrorCode::InvalidArgument,
            "targets and conditions must pair up");
    for (std::size_t i = 0; i < targets.size(); ++i) {
      require(targets[i].same_shape(conds[i]), ErrorCode::ShapeMismatch, "target/condition shapes differ");
      targets_.push_back(model_.stats.normalize(targets[i]));
      conds_.push_back(model_.stats.normalize(conds[i]));
    }
    adam_ = nn::Adam<float>(model_.denoiser.params(), {.lr = cfg_.lr});
  }

  LdmTrainConfig cfg_;
  LdmModel model_;
  nn::Adam<float> adam_;
  std::vector<LatentTensor> targets_, conds_;
  int step_ = 0;
  double last_loss_ = 0.0;
};

/// Generates a raw (denormalized) latent conditioned on a raw latent.
inline LatentTensor generate_latent(const LdmModel& model, const LatentTensor& cond, const SamplerConfig& cfg) {
  const auto z = ddim_sample(model.denoiser, model.stats.normalize(cond), model.schedule, cfg);
  return model.stats.denormalize(z);
}

// BLDM checkpoint (little-endian):
//    0 char[4] "BLDM"            32 u32 param_count
//    4 u32 version (1)           36 u32 steps_trained
//    8 u32 K                     40 f32 final_loss
//   12 u32 latent_channels       44 u32 has_optimizer_state
//   16 u32 latent_bins           48 u32 n_mels
//   20 u32 hidden                52 reserved (zero) to 64
//   24 u32 blocks
//   28 u32 emb_dim
//   64 f32[latent_channels] shift, f32[latent_channels] scale
//      f32[param_count] weights
//      f64[K + 1] alpha_bar
//      then, if has_optimizer_state: u64 adam_step, f32[param_count] m, f32[param_count] v
inline constexpr std::uint32_t kBldmVersion = 1;

struct LdmCheckpoint {
  LdmModel model;
  int steps_trained = 0;
  float final_loss = 0.0f;
  std::optional<std::pair<std::uint64_t, std::vector<float>>> optimizer;
};

inline void save_ldm(const std::filesystem::path& path, LdmModel model, int steps_trained = 0, float final_loss = 0.0f,
                     const nn::Adam<float>* optimizer = nullptr) {
  const auto& c = model.denoiser.config();
  const auto flat = nn::flatten_values(model.denoiser.params());
  detail::ByteWriter w;
  w.put_tag("BLDM");
  w.put<std::uint32_t>(kBldmVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.schedule.K));
  for (int v : {c.latent_channels, c.latent_bins, c.hidden, c.blocks, c.emb_dim})
    w.put<std::uint32_t>(static_cast<std::uint32_t>(v));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(flat.size()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(steps_trained));
  w.put<float>(final_loss);
  w.put<std::uint32_t>(optimizer ? 1u : 0u);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.n_mels));
  w.pad_to(64);
  w.put_all<float>(model.stats.shift);
  w.put_all<float>(model.stats.scale);
  w.put_all<float>(flat);
  w.put_all<double>(model.schedule.alpha_bar);
  if (optimizer) {
    w.put<std::uint64_t>(optimizer->steps());
    w.put_all<float>(optimizer->flat_state());
  }
  detail::spit(path, w.bytes());
}

inline LdmCheckpoint load_ldm(const std::filesystem::path& path) {
  const auto bytes = detail::slurp(path);
  detail::ByteReader r(bytes);
  require(r.tag_is("BLDM"), ErrorCode::CheckpointMismatch, path.string() + " is not a BLDM checkpoint");
  require(r.get<std::uint32_t>() == kBldmVersion, ErrorCode::CheckpointMismatch, "unsupported BLDM version");
  const int K = static_cast<int>(r.get<std::uint32_t>());
  DenoiserConfig c;
  c.latent_channels = static_cast<int>(r.get<std::uint32_t>());
  c.latent_bins = static_cast<int>(r.get<std::uint32_t>());
  c.hidden = static_cast<int>(r.get<std::uint32_t>());
  c.blocks = static_cast<int>(r.get<std::uint32_t>());
  c.emb_dim = static_cast<int>(r.get<std::uint32_t>());
  require(K >= 2 && c.latent_channels > 0 && c.latent_bins > 0 && c.hidden > 0 && c.blocks > 0 && c.blocks < 16 &&
              c.emb_dim > 0 && c.emb_dim % 2 == 0,
          ErrorCode::CheckpointMismatch, "corrupt BLDM header");
  LdmCheckpoint ck;
  const auto count = r.get<std::uint32_t>();
  ck.steps_trained = static_cast<int>(r.get<std::uint32_t>());
  ck.final_loss = r.get<float>();
  const bool has_opt = r.get<std::uint32_t>() != 0;
  ck.model.n_mels = static_cast<int>(r.get<std::uint32_t>());
  r.seek(64);
  const auto ch = static_cast<std::size_t>(c.latent_channels);
  ck.model.stats.shift = r.get_all<float>(ch);
  ck.model.stats.scale = r.get_all<float>(ch);
  ck.model.denoiser = Denoiser<float>(c, 0);
  nn::assign_values(ck.model.denoiser.params(), r.get_all<float>(count));
  ck.model.schedule.K = K;
  ck.model.schedule.alpha_bar = r.get_all<double>(static_cast<std::size_t>(K) + 1);
  if (has_opt) {
    const auto t = r.get<std::uint64_t>();
    ck.optimizer = std::make_pair(t, r.get_all<float>(2 * static_cast<std::size_t>(count)));
  }
  return ck;
}

}  // namespace bandlift
