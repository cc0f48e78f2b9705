#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "bandlift/diffusion.hpp"
#include "support/oracles.hpp"

using namespace bandlift;

namespace {

LatentTensor gaussian(int c, int h, int w, std::uint64_t seed, double mean = 0.0, double sd = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(mean, sd);
  LatentTensor t(c, h, w);
  for (auto& v : t.data) v = static_cast<float>(nd(rng));
  return t;
}

double max_abs_diff(const LatentTensor& a, const LatentTensor& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(static_cast<double>(a.data[i]) - b.data[i]));
  return worst;
}

std::pair<double, double> mean_var(const LatentTensor& t) {
  double s = 0, sq = 0;
  for (double v : t.data) {
    s += v;
    sq += v * v;
  }
  const double n = static_cast<double>(t.size());
  return {s / n, sq / n - (s / n) * (s / n)};
}

// Posterior-mean velocity for data drawn from N(mu, sigma^2) per element.
struct GaussianOracle {
  const NoiseSchedule* s;
  double mu, sigma;
  LatentTensor operator()(const LatentTensor& zk, int k, const LatentTensor&) const {
    const double a = s->signal(k), b = s->noise(k);
    const double gain = a * sigma * sigma / (a * a * sigma * sigma + b * b);
    LatentTensor v(zk.channels, zk.height, zk.width);
    for (std::size_t i = 0; i < zk.size(); ++i) {
      const double z = zk.data[i];
      const double z0 = mu + gain * (z - a * mu);
      const double eps = (z - a * z0) / b;
      v.data[i] = static_cast<float>(a * eps - b * z0);
    }
    return v;
  }
};

// Always claims the clean latent is `target`.
struct FixedZ0 {
  const NoiseSchedule* s;
  LatentTensor target;
  LatentTensor operator()(const LatentTensor& zk, int k, const LatentTensor&) const {
    const double a = s->signal(k), b = s->noise(k);
    LatentTensor v(zk.channels, zk.height, zk.width);
    for (std::size_t i = 0; i < zk.size(); ++i)
      v.data[i] = static_cast<float>((a * zk.data[i] - static_cast<double>(target.data[i])) / b);
    return v;
  }
};

// Trains nothing; predicts v from z_k given the clean latent as the condition
// (exact) or predicts zeros.
struct MockModel {
  const NoiseSchedule* s;
  bool perfect = true;
  nn::Param<float> dummy{1};
  nn::ParamList<float> params() { return {&dummy}; }
  double accumulate(const LatentTensor& zk, int k, const LatentTensor& cond, const LatentTensor& target, double) {
    double loss = 0;
    for (std::size_t i = 0; i < zk.size(); ++i) {
      double v = 0;
      if (perfect) {
        const double a = s->signal(k), b = s->noise(k);
        v = (a * zk.data[i] - static_cast<double>(cond.data[i])) / b;
      }
      loss += (v - target.data[i]) * (v - target.data[i]);
    }
    return loss / static_cast<double>(zk.size());
  }
};

}  // namespace

TEST_CASE("cosine schedule with zero terminal SNR") {
  for (int K : {2, 10, 1000}) {
    const auto s = build_schedule(K);
    REQUIRE(s.alpha_bar.size() == static_cast<std::size_t>(K) + 1);
    CHECK(s.alpha_bar[static_cast<std::size_t>(K)] == 0.0);
    CHECK(s.signal(K) == 0.0);
    CHECK(s.noise(K) == 1.0);
    CHECK(s.alpha_bar[0] >= 0.999);
    for (int k = 1; k <= K; ++k) CHECK(s.alpha_bar[static_cast<std::size_t>(k)] < s.alpha_bar[static_cast<std::size_t>(k) - 1]);
  }
  const auto s = build_schedule(1000);
  // first value is preserved by the rescale
  CHECK(s.alpha_bar[0] == Catch::Approx(cosine_alpha_bar(0, 1000)).epsilon(1e-12));
  CHECK(cosine_alpha_bar(500, 1000) == Catch::Approx(0.4937668427).margin(1e-10));
  CHECK(s.alpha_bar[500] == Catch::Approx(0.4937668427).margin(1e-10));
  CHECK(s.alpha_bar[0] == Catch::Approx(0.9998445910).margin(1e-10));
  CHECK_THROWS_AS(build_schedule(1), Error);
}

TEST_CASE("forward diffusion endpoints") {
  const auto s = build_schedule(1000);
  const auto z0 = gaussian(4, 3, 16, 1), eps = gaussian(4, 3, 16, 2);
  CHECK(forward_diffuse(z0, s.K, eps, s).data == eps.data);
  CHECK(v_target(z0, eps, s.K, s).data == [&] {
    auto n = z0;
    for (auto& v : n.data) v = -v;
    return n.data;
  }());

  // A schedule whose first entry is exactly one.
  NoiseSchedule unit = s;
  unit.alpha_bar[0] = 1.0;
  CHECK(forward_diffuse(z0, 0, eps, unit).data == z0.data);
  CHECK(v_target(z0, eps, 0, unit).data == eps.data);

  for (int bad : {-1, 1001}) {
    try {
      forward_diffuse(z0, bad, eps, s);
      FAIL("step accepted");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::StepOutOfRange);
    }
    CHECK_THROWS_AS(v_target(z0, eps, bad, s), Error);
  }
  CHECK_THROWS_AS(forward_diffuse(z0, 5, gaussian(4, 3, 15, 3), s), Error);
}

TEST_CASE("v-parameterization identities") {
  const auto s = build_schedule(1000);
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> pick(0, 1000);
  double worst_z0 = 0, worst_zk = 0;
  for (int trial = 0; trial < 40; ++trial) {
    const int k = pick(rng);
    const auto z0 = gaussian(8, 1, 250, 100 + trial), eps = gaussian(8, 1, 250, 200 + trial);
    const auto zk = forward_diffuse(z0, k, eps, s);
    const auto v = v_target(z0, eps, k, s);
    worst_z0 = std::max(worst_z0, max_abs_diff(predict_z0(zk, v, k, s), z0));
    const auto recomposed = detail::axpby(s.signal(k), predict_z0(zk, v, k, s), s.noise(k), predict_eps(zk, v, k, s));
    worst_zk = std::max(worst_zk, max_abs_diff(recomposed, zk));
  }
  CHECK(worst_z0 < 1e-6);
  CHECK(worst_zk < 1e-6);
}

TEST_CASE("forward marginals of unit-Gaussian data") {
  const auto s = build_schedule(1000);
  const auto z0 = gaussian(1, 1, 100000, 7), eps = gaussian(1, 1, 100000, 8);
  for (int k : {0, 1, 100, 250, 500, 750, 999, 1000}) {
    const auto [m, var] = mean_var(forward_diffuse(z0, k, eps, s));
    CHECK(std::abs(m) < 0.02);
    CHECK(std::abs(var - 1.0) < 0.02);
  }
}

TEST_CASE("train_step losses for oracle models") {
  const auto s = build_schedule(1000);
  TrainBatch batch;
  for (int i = 0; i < 16; ++i) {
    batch.z0.push_back(gaussian(8, 4, 64, 300 + i));
    batch.cond.push_back(batch.z0.back());
  }
  MockModel perfect{&s, true}, zero{&s, false};
  nn::Adam<float> opt_p(perfect.params(), {}), opt_z(zero.params(), {});
  std::mt19937_64 r1(1), r2(1);
  CHECK(train_step(batch, perfect, opt_p, s, r1, 0.0) < 1e-8);
  CHECK(std::abs(train_step(batch, zero, opt_z, s, r2, 0.0) - 1.0) < 0.02);

  TrainBatch wrong = batch;
  wrong.cond.pop_back();
  CHECK_THROWS_AS(train_step(wrong, perfect, opt_p, s, r1), Error);
  CHECK_THROWS_AS(train_step(batch, perfect, opt_p, s, r1, 1.5), Error);
}

TEST_CASE("full condition dropout hides the condition") {
  const auto s = build_schedule(1000);
  DenoiserConfig dc{4, 16, 8, 2, 8};
  TrainBatch a, b;
  for (int i = 0; i < 4; ++i) {
    a.z0.push_back(gaussian(4, 4, 16, 40 + i));
    b.z0.push_back(a.z0.back());
    a.cond.push_back(gaussian(4, 4, 16, 50 + i));
    b.cond.push_back(gaussian(4, 4, 16, 60 + i));
  }
  Denoiser<float> ma(dc, 9), mb(dc, 9);
  nn::Adam<float> oa(ma.params(), {}), ob(mb.params(), {});
  std::mt19937_64 ra(5), rb(5);
  CHECK(train_step(a, ma, oa, s, ra, 1.0) == train_step(b, mb, ob, s, rb, 1.0));
  CHECK(nn::flatten_values(ma.params()) == nn::flatten_values(mb.params()));

  Denoiser<float> mc(dc, 9), md(dc, 9);
  nn::Adam<float> oc(mc.params(), {}), od(md.params(), {});
  std::mt19937_64 rc(5), rd(5);
  CHECK(train_step(a, mc, oc, s, rc, 0.0) != train_step(b, md, od, s, rd, 0.0));
}

TEST_CASE("classifier-free guidance combination") {
  const auto vc = gaussian(2, 3, 8, 1), vu = gaussian(2, 3, 8, 2);
  CHECK(cfg_combine(vc, vu, 1.0).data == vc.data);
  CHECK(cfg_combine(vc, vu, 0.0).data == vu.data);
  const auto vc2 = gaussian(2, 3, 8, 3), vu2 = gaussian(2, 3, 8, 4);
  for (double w : {0.5, 3.5}) {
    const auto sum = cfg_combine(detail::axpby(1, vc, 1, vc2), detail::axpby(1, vu, 1, vu2), w);
    const auto parts = detail::axpby(1, cfg_combine(vc, vu, w), 1, cfg_combine(vc2, vu2, w));
    CHECK(max_abs_diff(sum, parts) < 1e-5);
  }
  CHECK_THROWS_AS(cfg_combine(vc, gaussian(2, 3, 7, 5), 2.0), Error);
  CHECK(std::all_of(empty_condition(vc).data.begin(), empty_condition(vc).data.end(), [](float v) { return v == 0.0f; }));
}

TEST_CASE("guided velocity skips passes with zero weight") {
  int calls = 0;
  auto model = [&](const LatentTensor& z, int, const LatentTensor& c) {
    ++calls;
    return detail::axpby(1, z, 1, c);
  };
  const auto z = gaussian(1, 2, 4, 1), c = gaussian(1, 2, 4, 2);
  CHECK(guided_velocity(model, z, 3, c, 1.0).data == detail::axpby(1, z, 1, c).data);
  CHECK(calls == 1);
  CHECK(guided_velocity(model, z, 3, c, 0.0).data == z.data);
  CHECK(calls == 2);
  guided_velocity(model, z, 3, c, 3.5);
  CHECK(calls == 4);
}

TEST_CASE("DDIM visit order") {
  for (int steps : {1, 2, 7, 50, 1000}) {
    const auto t = ddim_timesteps(1000, steps);
    REQUIRE(t.size() == static_cast<std::size_t>(steps));
    CHECK(t.front() == 1000);
    if (steps > 1) CHECK(t.back() == 1);
    for (std::size_t j = 1; j < t.size(); ++j) CHECK(t[j] < t[j - 1]);
  }
  CHECK_THROWS_AS(ddim_timesteps(1000, 0), Error);
  CHECK_THROWS_AS(ddim_timesteps(1000, 1001), Error);
}

TEST_CASE("DDIM with the analytic Gaussian denoiser recovers the data law") {
  const auto s = build_schedule(1000);
  const GaussianOracle oracle{&s, 0.7, 0.4};
  const LatentTensor cond(8, 10000, 1);
  SamplerConfig cfg;
  cfg.guidance_scale = 1.0;
  cfg.seed = 2024;
  const auto z = ddim_sample(oracle, cond, s, cfg);
  const auto [m, var] = mean_var(z);
  CHECK(std::abs(m - 0.7) < 0.014);
  CHECK(std::abs(std::sqrt(var) - 0.4) < 0.03 * 0.4);
}

TEST_CASE("DDIM returns the fixed clean latent of a perfect-z0 denoiser") {
  const auto s = build_schedule(1000);
  const FixedZ0 model{&s, gaussian(2, 3, 8, 11)};
  SamplerConfig cfg;
  cfg.ddim_steps = 1000;
  cfg.guidance_scale = 1.0;
  const auto z = ddim_sample(model, LatentTensor(2, 3, 8), s, cfg);
  CHECK(max_abs_diff(z, model.target) < 1e-5);
}

TEST_CASE("DDIM sampling is deterministic given the seed") {
  const auto s = build_schedule(1000);
  Denoiser<float> model(DenoiserConfig{4, 16, 8, 2, 8}, 3);
  const auto cond = gaussian(4, 5, 16, 4);
  SamplerConfig cfg;
  cfg.ddim_steps = 10;
  cfg.seed = 9;
  const auto a = ddim_sample(model, cond, s, cfg);
  const auto b = ddim_sample(model, cond, s, cfg);
  CHECK(a.data == b.data);
  cfg.seed = 10;
  CHECK(ddim_sample(model, cond, s, cfg).data != a.data);
  CHECK(a.same_shape(cond));

  cfg.guidance_scale = -1.0;
  CHECK_THROWS_AS(ddim_sample(model, cond, s, cfg), Error);
  cfg.guidance_scale = 1.0;
  cfg.eta = 0.5;
  CHECK_THROWS_AS(ddim_sample(model, cond, s, cfg), Error);
}

TEST_CASE("denoiser contract") {
  Denoiser<float> model(DenoiserConfig{4, 16, 8, 2, 8}, 3);
  const auto z = gaussian(4, 6, 16, 1), c = gaussian(4, 6, 16, 2);
  const auto v = model(z, 500, c);
  CHECK(v.same_shape(z));
  CHECK(model(z, 500, c).data == v.data);
  CHECK(model(z, 500, empty_condition(c)).data != v.data);
  CHECK(model(z, 20, c).data != v.data);
  CHECK_THROWS_AS(model(z, 500, gaussian(4, 5, 16, 3)), Error);
}

TEST_CASE("denoiser loss gradients match central differences") {
  Denoiser<double> model(DenoiserConfig{2, 8, 4, 2, 4}, 5);
  std::mt19937_64 rng(6);
  nn::Tensor<double> zk(2, 3, 8), cond(2, 3, 8), target(2, 3, 8);
  nn::fill_normal(zk, rng);
  nn::fill_normal(cond, rng);
  nn::fill_normal(target, rng);
  auto params = model.params();
  for (auto* p : params)
    for (auto& v : p->value) v += 0.05;  // keep zero-initialized layers off symmetric points
  auto loss = [&] { return model.accumulate(zk, 321, cond, target, 0.0); };
  nn::zero_grad(params);
  model.accumulate(zk, 321, cond, target, 1.0);
  const auto check = oracle::check_gradients(params, loss, 1e-4, 30);
  CHECK(check.checked > 100);
  CHECK(check.max_rel_error < 1e-3);
}

TEST_CASE("latent statistics round trip") {
  std::vector<LatentTensor> zs{gaussian(3, 5, 8, 1, 2.0, 3.0), gaussian(3, 7, 8, 2, 2.0, 3.0)};
  const auto st = LatentStats::estimate(zs);
  for (int c = 0; c < 3; ++c) {
    CHECK(std::abs(st.shift[static_cast<std::size_t>(c)] - 2.0) < 1.0);
    CHECK(std::abs(st.scale[static_cast<std::size_t>(c)] - 3.0) < 1.0);
  }
  CHECK(max_abs_diff(st.denormalize(st.normalize(zs[0])), zs[0]) < 1e-5);
  CHECK_THROWS_AS(st.normalize(gaussian(2, 5, 8, 3)), Error);
}

TEST_CASE("LDM checkpoints restore the model and resume bit-identically") {
  std::vector<LatentTensor> targets, conds;
  for (int i = 0; i < 5; ++i) {
    targets.push_back(gaussian(4, 10, 16, 70 + i));
    conds.push_back(gaussian(4, 10, 16, 80 + i));
  }
  LdmTrainConfig cfg;
  cfg.batch = 4;
  cfg.seed = 12;
  cfg.hidden = 8;
  cfg.blocks = 2;
  cfg.emb_dim = 8;
  cfg.lr = 1e-3;

  LdmTrainer straight(targets, conds, cfg, 64);
  std::vector<double> expected;
  for (int s = 0; s < 8; ++s) expected.push_back(straight.step());

  LdmTrainer first(targets, conds, cfg, 64);
  for (int s = 0; s < 4; ++s) CHECK(first.step() == expected[static_cast<std::size_t>(s)]);
  const auto path = std::filesystem::temp_directory_path() / "bandlift_test.bldm";
  save_ldm(path, first.model(), first.completed_steps(), static_cast<float>(first.last_loss()), &first.optimizer());

  auto ck = load_ldm(path);
  CHECK(ck.steps_trained == 4);
  CHECK(ck.model.n_mels == 64);
  CHECK(ck.model.schedule.alpha_bar == first.model().schedule.alpha_bar);
  CHECK(ck.model.stats.shift == first.model().stats.shift);
  CHECK(ck.model.stats.scale == first.model().stats.scale);
  CHECK(nn::flatten_values(ck.model.denoiser.params()) == nn::flatten_values(LdmModel(first.model()).denoiser.params()));
  REQUIRE(ck.optimizer.has_value());

  SamplerConfig sc;
  sc.ddim_steps = 5;
  CHECK(generate_latent(ck.model, conds[0], sc).data == generate_latent(first.model(), conds[0], sc).data);

  LdmTrainer resumed(targets, conds, cfg, ck.model, ck.steps_trained, ck.optimizer);
  for (int s = 4; s < 8; ++s) CHECK(resumed.step() == expected[static_cast<std::size_t>(s)]);

  const auto bogus = std::filesystem::temp_directory_path() / "bandlift_test_bogus.bldm";
  {
    std::ofstream out(bogus, std::ios::binary);
    out << "BVAE and some other bytes";
  }
  try {
    load_ldm(bogus);
    FAIL("foreign file accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::CheckpointMismatch);
  }
}
