#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bandlift/bandwidth.hpp"
#include "bandlift/error.hpp"
#include "bandlift/signal_io.hpp"
#include "bandlift/spectral.hpp"

namespace bandlift {

inline constexpr int kLsdFft = 2048;
inline constexpr int kLsdHop = 512;
inline constexpr double kLsdMagnitudeFloor = 1e-8;

/// Log-spectral distance: frame mean of the RMS (over bins) difference of
/// log10 power spectra. Both signals are truncated to the shorter length.
inline double lsd(const AudioBuffer& ref, const AudioBuffer& est) {
  require(ref.sample_rate == est.sample_rate, ErrorCode::RateMismatch, "lsd needs equal sample rates");
  const std::size_t n = std::min(ref.size(), est.size());
  require(n > 0, ErrorCode::EmptyAudio, "lsd of empty audio");
  SpectralConfig cfg;
  cfg.n_fft = kLsdFft;
  cfg.hop = kLsdHop;
  cfg.sample_rate = ref.sample_rate;
  cfg.mel_fmax = ref.sample_rate / 2.0;
  auto truncated = [n](const AudioBuffer& b) {
    AudioBuffer out;
    out.sample_rate = b.sample_rate;
    out.samples.assign(b.samples.begin(), b.samples.begin() + static_cast<std::ptrdiff_t>(n));
    return out;
  };
  const auto a = stft(truncated(ref), cfg);
  const auto b = stft(truncated(est), cfg);
  const double floor_power = kLsdMagnitudeFloor * kLsdMagnitudeFloor;
  double total = 0.0;
  for (int t = 0; t < a.frames; ++t) {
    double acc = 0.0;
    for (int k = 0; k < a.bins; ++k) {
      const double d = std::log10(std::max(std::norm(a.at(t, k)), floor_power)) -
                       std::log10(std::max(std::norm(b.at(t, k)), floor_power));
      acc += d * d;
    }
    total += std::sqrt(acc / a.bins);
  }
  return total / a.frames;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

/// One clip mixing harmonic notes with a spectral tilt and formant-like
/// envelope, decaying broadband noise bursts and a quiet noise floor. Peak 0.5.
template <class Rng>
AudioBuffer synth_clip(Rng& rng, double seconds = 1.0, int rate = 48000) {
  const auto n = static_cast<std::size_t>(std::lround(seconds * rate));
  std::vector<double> x(n, 0.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> nd(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  const double nyquist_guard = 0.45 * rate;

  const int notes = 1 + static_cast<int>(u(rng) * 3);
  for (int note = 0; note < notes; ++note) {
    const double f0 = uni(90.0, 500.0);
    const double tilt = uni(0.6, 1.6);
    const double formant = uni(500.0, 4000.0);
    const double formant_width = uni(0.5, 1.5);
    const double vib_rate = uni(3.0, 7.0), vib_depth = uni(0.0, 0.01);
    const double amp = uni(0.3, 1.0);
    const auto start = static_cast<std::size_t>(uni(0.0, 0.5) * n);
    const auto len = std::min(n - start, static_cast<std::size_t>(uni(0.3, 1.0) * n));
    const double attack = uni(0.005, 0.05) * rate, decay = uni(1.0, 6.0) / len;
    const int harmonics = static_cast<int>(nyquist_guard / (f0 * (1.0 + vib_depth)));
    std::vector<double> weight(static_cast<std::size_t>(harmonics) + 1, 0.0);
    for (int h = 1; h <= harmonics; ++h) {
      const double octaves = std::log2(h * f0 / formant);
      weight[static_cast<std::size_t>(h)] =
          std::pow(h, -tilt) * (0.3 + std::exp(-0.5 * octaves * octaves / (formant_width * formant_width)));
    }
    double phase = uni(0.0, 2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < len; ++i) {
      const double t = static_cast<double>(i) / rate;
      phase += 2.0 * std::numbers::pi * f0 * (1.0 + vib_depth * std::sin(2.0 * std::numbers::pi * vib_rate * t)) / rate;
      // sin(h*phase) by the Chebyshev recurrence.
      const double s1 = std::sin(phase), c2 = 2.0 * std::cos(phase);
      double prev = 0.0, cur = s1, acc = 0.0;
      for (int h = 1; h <= harmonics; ++h) {
        acc += weight[static_cast<std::size_t>(h)] * cur;
        const double next = c2 * cur - prev;
        prev = cur;
        cur = next;
      }
      const double env = std::min(1.0, static_cast<double>(i) / attack) * std::exp(-decay * static_cast<double>(i));
      x[start + i] += amp * env * acc;
    }
  }

  double peak_tonal = 1e-9;
  for (double v : x) peak_tonal = std::max(peak_tonal, std::abs(v));
  for (double& v : x) v /= peak_tonal;

  const int bursts = static_cast<int>(u(rng) * 4);
  for (int b = 0; b < bursts; ++b) {
    const auto start = static_cast<std::size_t>(uni(0.0, 0.9) * n);
    const double tau = uni(0.01, 0.08) * rate;
    const double amp = uni(0.1, 0.6);
    const double smooth = uni(0.0, 0.8);  // one-pole lowpass coefficient colours the burst
    double state = 0.0;
    for (std::size_t i = start; i < n; ++i) {
      const double env = std::exp(-static_cast<double>(i - start) / tau);
      if (env < 1e-4) break;
      state = smooth * state + (1.0 - smooth) * nd(rng);
      x[i] += amp * env * state;
    }
  }

  const double floor_amp = std::pow(10.0, uni(-50.0, -35.0) / 20.0);
  for (double& v : x) v += floor_amp * nd(rng);

  double peak = 1e-9;
  for (double v : x) peak = std::max(peak, std::abs(v));
  AudioBuffer out;
  out.sample_rate = rate;
  out.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.samples[i] = static_cast<float>(0.5 * x[i] / peak);
  return out;
}

// ---------------------------------------------------------------------------
// Benchmark

/// Lowpass at the record's cutoff, then resample to twice the cutoff.
inline AudioBuffer degrade(const AudioBuffer& hi, const FilterSpec& spec) {
  const auto filtered = apply_filter(hi, design_lowpass(spec, hi.sample_rate));
  const int low_rate = static_cast<int>(std::lround(2.0 * spec.cutoff_hz));
  return resample_cubic(filtered, low_rate);
}

/// Maps a degraded (possibly low-rate) clip to a 48 kHz estimate.
using SystemFn = std::function<AudioBuffer(const AudioBuffer&)>;

inline AudioBuffer identity_system(const AudioBuffer& low) { return resample_cubic(low, 48000); }

struct BenchmarkRow {
  std::string file;
  double cutoff_hz = 0.0;
  std::string family;
  int order = 0;
  double lsd_unprocessed = 0.0;
  double lsd_system = 0.0;
  std::string error;  // empty on success

  bool ok() const noexcept { return error.empty(); }
};

struct LsdSummary {
  std::size_t count = 0;
  double mean_unprocessed = 0.0, std_unprocessed = 0.0;
  double mean_system = 0.0, std_system = 0.0;
};

struct LsdReport {
  std::string system_name = "system";
  std::vector<BenchmarkRow> rows;

  std::size_t failures() const {
    return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [](const auto& r) { return !r.ok(); }));
  }
  double failure_fraction() const {
    return rows.empty() ? 0.0 : static_cast<double>(failures()) / static_cast<double>(rows.size());
  }

  /// Aggregate over successful rows, optionally restricted to one cutoff.
  LsdSummary summary(std::optional<double> cutoff_hz = std::nullopt) const {
    LsdSummary s;
    std::vector<double> un, sy;
    for (const auto& r : rows)
      if (r.ok() && (!cutoff_hz || r.cutoff_hz == *cutoff_hz)) {
        un.push_back(r.lsd_unprocessed);
        sy.push_back(r.lsd_system);
      }
    s.count = un.size();
    auto stats = [](const std::vector<double>& v, double& mean, double& sd) {
      if (v.empty()) return;
      mean = 0.0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      double var = 0.0;
      for (double x : v) var += (x - mean) * (x - mean);
      sd = std::sqrt(var / static_cast<double>(v.size()));
    };
    stats(un, s.mean_unprocessed, s.std_unprocessed);
    stats(sy, s.mean_system, s.std_system);
    return s;
  }

  std::map<double, LsdSummary> by_cutoff() const {
    std::map<double, LsdSummary> out;
    for (const auto& r : rows)
      if (!out.contains(r.cutoff_hz)) out[r.cutoff_hz] = summary(r.cutoff_hz);
    return out;
  }
};

struct BenchmarkOptions {
  bool degrade = true;  // false: the system sees the clean clip
  std::string system_name = "system";
};

inline BenchmarkRow evaluate_record(const DegradationRecord& rec, const SystemFn& system,
                                    const BenchmarkOptions& opts = {}) {
  BenchmarkRow row;
  row.file = rec.input_path;
  row.cutoff_hz = rec.cutoff_hz;
  row.family = std::string(to_string(rec.family));
  row.order = rec.order;
  try {
    const auto hi = read_wav(rec.input_path);
    require(hi.sample_rate == 48000, ErrorCode::RateMismatch, "benchmark references must be 48 kHz");
    const auto low = opts.degrade ? degrade(hi, rec.filter_spec()) : hi;
    row.lsd_unprocessed = lsd(hi, resample_cubic(low, 48000));
    row.lsd_system = lsd(hi, system(low));
    require(std::isfinite(row.lsd_unprocessed) && std::isfinite(row.lsd_system), ErrorCode::InvalidArgument,
            "non-finite LSD");
  } catch (const std::exception& e) {
    row.error = e.what();
  }
  return row;
}

inline LsdReport run_benchmark(const std::vector<DegradationRecord>& manifest, const SystemFn& system,
                               const BenchmarkOptions& opts = {}) {
  LsdReport report;
  report.system_name = opts.system_name;
  for (const auto& rec : manifest) report.rows.push_back(evaluate_record(rec, system, opts));
  return report;
}

/// CSV (file,cutoff_hz,family,order,lsd_unprocessed,lsd_system) at `csv_path`
/// and the same rows as JSON lines at `jsonl_path`. Failed rows keep empty LSD
/// cells in the CSV and carry an "error" field in the JSON.
inline void write_report(const LsdReport& report, const std::filesystem::path& csv_path,
                         const std::filesystem::path& jsonl_path) {
  std::ofstream csv(csv_path), jsonl(jsonl_path);
  require(csv && jsonl, ErrorCode::IoFailure, "cannot write benchmark report");
  csv << "file,cutoff_hz,family,order,lsd_unprocessed,lsd_system\n";
  for (const auto& r : report.rows) {
    nlohmann::ordered_json j;
    j["file"] = r.file;
    j["cutoff_hz"] = r.cutoff_hz;
    j["family"] = r.family;
    j["order"] = r.order;
    std::string file = r.file;
    if (file.find_first_of(",\"") != std::string::npos) {
      std::string quoted = "\"";
      for (char ch : file) quoted += ch == '"' ? std::string("\"\"") : std::string(1, ch);
      file = quoted + "\"";
    }
    csv << file << ',' << nlohmann::json(r.cutoff_hz).dump() << ',' << r.family << ',' << r.order << ',';
    if (r.ok()) {
      j["lsd_unprocessed"] = r.lsd_unprocessed;
      j["lsd_system"] = r.lsd_system;
      csv << nlohmann::json(r.lsd_unprocessed).dump() << ',' << nlohmann::json(r.lsd_system).dump();
    } else {
      j["lsd_unprocessed"] = nullptr;
      j["lsd_system"] = nullptr;
      j["error"] = r.error;
      csv << ',';
    }
    csv << '\n';
    jsonl << j.dump() << '\n';
  }
  require(static_cast<bool>(csv) && static_cast<bool>(jsonl), ErrorCode::IoFailure, "failed writing report");
}

}  // namespace bandlift
