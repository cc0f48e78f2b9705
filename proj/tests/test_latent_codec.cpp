#include <catch_amalgamated.hpp>

#include <filesystem>

#include "bandlift/evalkit.hpp"
#include "bandlift/latent_codec.hpp"
#include "support/oracles.hpp"

using namespace bandlift;

namespace {

// Random log-mel whose entries are exactly representable in float.
LogMelSpectrogram random_mel(int frames, std::uint64_t seed, int n_mels = 256) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-5.0, 0.0);
  LogMelSpectrogram mel;
  mel.config.n_mels = n_mels;
  mel.frames = frames;
  mel.n_mels = n_mels;
  for (int i = 0; i < frames * n_mels; ++i) mel.values.push_back(static_cast<float>(u(rng)));
  return mel;
}

double mel_lsd(const LogMelSpectrogram& a, const LogMelSpectrogram& b) {
  double total = 0;
  for (int t = 0; t < a.frames; ++t) {
    double acc = 0;
    for (int m = 0; m < a.n_mels; ++m) acc += (a.at(t, m) - b.at(t, m)) * (a.at(t, m) - b.at(t, m));
    total += std::sqrt(acc / a.n_mels);
  }
  return total / a.frames;
}

std::vector<LogMelSpectrogram> synthetic_mels(int count, std::uint64_t seed, double seconds) {
  std::mt19937_64 rng(seed);
  std::vector<LogMelSpectrogram> out;
  for (int i = 0; i < count; ++i) out.push_back(wav_to_logmel(synth_clip(rng, seconds)));
  return out;
}

}  // namespace

TEST_CASE("reference codec shapes and exact round trip") {
  const ReferenceCodec codec;
  for (int frames : {1, 2, 3, 4, 5, 101, 128, 511, 512}) {
    const auto mel = random_mel(frames, static_cast<std::uint64_t>(frames));
    const auto z = encode(mel, codec);
    CHECK(z.channels == 16);
    CHECK(z.height == (frames + 3) / 4);
    CHECK(z.width == 64);
    const auto back = decode(z, codec, frames);
    REQUIRE(back.frames == frames);
    CHECK(back.values == mel.values);
  }
  const auto z101 = encode(random_mel(101, 1), codec);
  CHECK(z101.height == 26);
  CHECK(z101.width == 64);
}

TEST_CASE("reference codec preserves the norm") {
  for (int frames : {4, 64, 100}) {
    const auto mel = random_mel(frames, 40 + frames);
    double mel_sq = 0;
    for (double v : mel.values) mel_sq += v * v;
    CHECK(std::abs(std::sqrt(nn::squared_norm(encode(mel, ReferenceCodec{}))) - std::sqrt(mel_sq)) < 1e-9);
  }
}

TEST_CASE("zero latent through the reference codec") {
  const LatentTensor z(16, 3, 64);
  const auto mel = decode(z, ReferenceCodec{}, 12);
  CHECK(std::all_of(mel.values.begin(), mel.values.end(), [](double v) { return v == 0.0; }));
  const LatentTensor wrong(8, 3, 64);
  CHECK_THROWS_AS(decode(wrong, ReferenceCodec{}, 12), Error);
}

TEST_CASE("KL closed forms") {
  CHECK(kl_standard_normal(0.0, 0.0) == 0.0);
  for (double mu : {-2.0, 0.3, 1.7}) CHECK(kl_standard_normal(mu, 0.0) == Catch::Approx(mu * mu / 2).epsilon(1e-15));
  CHECK(kl_standard_normal(0.0, 1.0) > 0.0);
}

TEST_CASE("variational codec shape contract and determinism") {
  VariationalCodec<float> codec(CodecConfig{}, 3);
  for (int frames : {1, 7, 101, 512}) {
    const auto mel = random_mel(frames, 9);
    const auto z = encode(mel, codec);
    CHECK(z.channels == 8);
    CHECK(z.height == (frames + 3) / 4);
    CHECK(z.width == 64);
    const auto back = decode(z, codec, frames);
    CHECK(back.frames == frames);
    CHECK(back.n_mels == 256);
    CHECK(std::all_of(back.values.begin(), back.values.end(), [](double v) { return v >= -5.0; }));
  }
  const auto mel = random_mel(40, 10);
  CHECK(encode(mel, codec).data == encode(mel, codec).data);
  std::mt19937_64 r1(1), r2(2);
  CHECK(encode(mel, codec, true, r1).data != encode(mel, codec, true, r2).data);

  const Codec wrapped = codec;
  CHECK(latent_channels(wrapped) == 8);
  CHECK(encode(mel, wrapped).data == encode(mel, codec).data);
}

TEST_CASE("codec loss gradients match central differences") {
  VariationalCodec<double> codec(CodecConfig{2, 4, 16}, 11);
  std::mt19937_64 rng(12);
  nn::Tensor<double> x(1, 8, 16), noise(2, 2, 4);
  nn::fill_normal(x, rng);
  nn::fill_normal(noise, rng);
  auto params = codec.params();
  auto loss = [&] { return codec.accumulate(x, noise, 0.3, 0.0).total; };
  nn::zero_grad(params);
  codec.accumulate(x, noise, 0.3, 1.0);
  const auto check = oracle::check_gradients(params, loss, 1e-4, 40);
  CHECK(check.checked > 100);
  CHECK(check.max_rel_error < 1e-3);
}

TEST_CASE("codec training reduces reconstruction error") {
  const auto train = synthetic_mels(100, 1, 0.5);
  const auto held_out = synthetic_mels(10, 2, 0.5);
  CodecTrainConfig cfg;
  cfg.steps = 2000;
  cfg.seed = 5;
  CodecTrainer trainer(train, cfg);
  const double initial = trainer.reconstruction_error();
  const VariationalCodec<float> untrained = trainer.codec();
  for (int s = 0; s < cfg.steps; ++s) trainer.step();
  const double final_recon = trainer.reconstruction_error();
  CHECK(final_recon < 0.5 * initial);

  double lsd_before = 0, lsd_after = 0;
  for (const auto& mel : held_out) {
    lsd_before += mel_lsd(decode(encode(mel, untrained), untrained, mel.frames), mel);
    lsd_after += mel_lsd(decode(encode(mel, trainer.codec()), trainer.codec(), mel.frames), mel);
  }
  CHECK(lsd_after < lsd_before);
}

TEST_CASE("codec checkpoints restore weights and resume bit-identically") {
  const auto data = synthetic_mels(6, 3, 0.4);
  CodecTrainConfig cfg;
  cfg.seed = 77;
  cfg.batch = 4;

  CodecTrainer straight(data, cfg);
  std::vector<double> expected;
  for (int s = 0; s < 12; ++s) expected.push_back(straight.step().total);

  CodecTrainer first(data, cfg);
  for (int s = 0; s < 6; ++s) CHECK(first.step().total == expected[static_cast<std::size_t>(s)]);
  const auto path = std::filesystem::temp_directory_path() / "bandlift_test_codec.bvae";
  save_codec(path, first.codec(), first.completed_steps(), static_cast<float>(first.last_loss()), &first.optimizer());

  auto ck = load_codec(path);
  CHECK(ck.steps_trained == 6);
  CHECK(ck.codec.mel_offset == first.codec().mel_offset);
  CHECK(ck.codec.mel_scale == first.codec().mel_scale);
  REQUIRE(ck.optimizer.has_value());
  const auto mel = data.front();
  CHECK(encode(mel, ck.codec).data == encode(mel, first.codec()).data);

  CodecTrainer resumed(data, cfg, ck.codec, ck.steps_trained, ck.optimizer);
  for (int s = 6; s < 12; ++s) CHECK(resumed.step().total == expected[static_cast<std::size_t>(s)]);

  const auto bogus = std::filesystem::temp_directory_path() / "bandlift_test_bogus.bvae";
  write_logmel(mel, bogus);
  try {
    load_codec(bogus);
    FAIL("foreign file accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::CheckpointMismatch);
  }
}

TEST_CASE("diverging codec training is reported") {
  auto data = synthetic_mels(2, 4, 0.3);
  CodecTrainConfig cfg;
  cfg.lr = 1e30;
  cfg.batch = 2;
  CodecTrainer trainer(data, cfg);
  bool diverged = false;
  try {
    for (int s = 0; s < 50; ++s) trainer.step();
  } catch (const Error& e) {
    diverged = e.code() == ErrorCode::DivergedTraining;
  }
  CHECK(diverged);
}
