#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "bandlift/evalkit.hpp"
#include "support/oracles.hpp"

using namespace bandlift;

namespace {

std::filesystem::path scratch_dir() {
  auto dir = std::filesystem::temp_directory_path() / "bandlift_test_evalkit";
  std::filesystem::create_directories(dir);
  return dir;
}

// Writes `count` synthetic 48 kHz clips and returns a manifest that degrades
// each at every listed cutoff with an order-8 Chebyshev lowpass.
std::vector<DegradationRecord> synthetic_manifest(int count, std::initializer_list<double> cutoffs) {
  std::mt19937_64 rng(99);
  std::vector<DegradationRecord> out;
  for (int i = 0; i < count; ++i) {
    const auto path = scratch_dir() / ("clip" + std::to_string(i) + ".wav");
    write_wav(synth_clip(rng, 0.5), path, WavEncoding::Float32);
    for (double c : cutoffs) {
      DegradationRecord r;
      r.input_path = path.string();
      r.seed = static_cast<std::uint64_t>(i);
      r.cutoff_hz = c;
      out.push_back(r);
    }
  }
  return out;
}

std::vector<std::string> lines_of(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

}  // namespace

TEST_CASE("lsd of a signal with itself is zero") {
  const auto x = oracle::white_noise(20000, 48000, 1);
  CHECK(lsd(x, x) == 0.0);
}

TEST_CASE("a sqrt(10) gain costs exactly one LSD unit") {
  const auto x = oracle::white_noise(20000, 48000, 2, 0.1);
  AudioBuffer y = x;
  for (auto& s : y.samples) s = static_cast<float>(s * std::sqrt(10.0));
  CHECK(std::abs(lsd(x, y) - 1.0) < 1e-6);
  AudioBuffer half = x;
  for (auto& s : half.samples) s *= 0.5f;
  CHECK(std::abs(lsd(x, half) - 2.0 * std::log10(2.0)) < 1e-9);
}

TEST_CASE("lsd agrees with direct DFT summation") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> len(2048, 4000);
  double worst = 0;
  for (int pair = 0; pair < 100; ++pair) {
    auto a = oracle::white_noise(static_cast<std::size_t>(len(rng)), 48000, 1000 + pair, 0.3);
    auto b = oracle::white_noise(static_cast<std::size_t>(len(rng)), 48000, 2000 + pair, 0.1);
    if (pair % 10 == 0)  // some silence so the floor is exercised
      std::fill(a.samples.begin(), a.samples.begin() + 1500, 0.0f);
    worst = std::max(worst, std::abs(lsd(a, b) - oracle::naive_lsd(a, b)));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("lsd is symmetric and truncates to the shorter input") {
  const auto a = oracle::white_noise(9000, 48000, 4), b = oracle::white_noise(12000, 48000, 5);
  CHECK(std::abs(lsd(a, b) - lsd(b, a)) < 1e-12);
  AudioBuffer b_cut = b;
  b_cut.samples.resize(9000);
  CHECK(lsd(a, b) == lsd(a, b_cut));
  CHECK(lsd(a, b) > 0.0);
}

TEST_CASE("lsd refuses mismatched rates") {
  const auto a = oracle::white_noise(4000, 48000, 6), b = oracle::white_noise(4000, 16000, 7);
  try {
    lsd(a, b);
    FAIL("rates mixed");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::RateMismatch);
  }
}

TEST_CASE("synthetic clips are deterministic and well-formed") {
  std::mt19937_64 r1(5), r2(5), r3(6);
  const auto a = synth_clip(r1), b = synth_clip(r2), c = synth_clip(r3);
  CHECK(a.samples == b.samples);
  CHECK(a.samples != c.samples);
  CHECK(a.sample_rate == 48000);
  CHECK(a.size() == 48000);
  float peak = 0;
  for (float s : a.samples) peak = std::max(peak, std::abs(s));
  CHECK(peak == Catch::Approx(0.5).margin(1e-6));
}

TEST_CASE("identity system on clean clips scores zero") {
  const auto manifest = synthetic_manifest(4, {4000.0});
  BenchmarkOptions opts;
  opts.degrade = false;
  const auto report = run_benchmark(manifest, identity_system, opts);
  REQUIRE(report.rows.size() == manifest.size());
  CHECK(report.failures() == 0);
  CHECK(report.summary().mean_system < 1e-6);
}

TEST_CASE("unprocessed baseline improves with the cutoff") {
  const auto manifest = synthetic_manifest(6, {4000.0, 8000.0, 16000.0});
  const auto report = run_benchmark(manifest, identity_system);
  REQUIRE(report.rows.size() == manifest.size());
  CHECK(report.failures() == 0);
  const auto groups = report.by_cutoff();
  REQUIRE(groups.size() == 3);
  CHECK(groups.at(4000.0).count == 6);
  CHECK(groups.at(4000.0).mean_unprocessed > groups.at(8000.0).mean_unprocessed);
  CHECK(groups.at(8000.0).mean_unprocessed > groups.at(16000.0).mean_unprocessed);
  // the identity system is the unprocessed baseline
  for (const auto& r : report.rows) CHECK(r.lsd_system == r.lsd_unprocessed);
}

TEST_CASE("per-file failures are recorded and the run continues") {
  auto manifest = synthetic_manifest(2, {8000.0});
  DegradationRecord missing;
  missing.input_path = (scratch_dir() / "nope.wav").string();
  manifest.insert(manifest.begin() + 1, missing);
  const auto report = run_benchmark(manifest, identity_system);
  REQUIRE(report.rows.size() == 3);
  CHECK(report.failures() == 1);
  CHECK(!report.rows[1].ok());
  CHECK(report.rows[2].ok());
  CHECK(report.failure_fraction() == Catch::Approx(1.0 / 3.0));
  CHECK(report.summary().count == 2);

  const auto csv = scratch_dir() / "report.csv", jsonl = scratch_dir() / "report.jsonl";
  write_report(report, csv, jsonl);
  const auto rows = lines_of(csv);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0] == "file,cutoff_hz,family,order,lsd_unprocessed,lsd_system");
  CHECK(rows[2].ends_with(",,"));
  const auto json_rows = lines_of(jsonl);
  REQUIRE(json_rows.size() == 3);
  const auto j0 = nlohmann::json::parse(json_rows[0]);
  CHECK(j0.at("lsd_system").get<double>() == report.rows[0].lsd_system);
  CHECK(j0.at("family") == "chebyshev1");
  CHECK(nlohmann::json::parse(json_rows[1]).contains("error"));
}

TEST_CASE("benchmark is deterministic") {
  const auto manifest = synthetic_manifest(3, {4000.0, 12000.0});
  const auto a = run_benchmark(manifest, identity_system), b = run_benchmark(manifest, identity_system);
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].lsd_unprocessed == b.rows[i].lsd_unprocessed);
    CHECK(a.rows[i].lsd_system == b.rows[i].lsd_system);
  }
}
