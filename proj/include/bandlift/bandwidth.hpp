#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "bandlift/detail/elliptic.hpp"
#include "bandlift/error.hpp"
#include "bandlift/signal_io.hpp"
#include "bandlift/spectral.hpp"

namespace bandlift {

enum class FilterFamily { Chebyshev1, Elliptic, Butterworth, Boxcar };

inline constexpr std::string_view to_string(FilterFamily f) noexcept {
  switch (f) {
    case FilterFamily::Chebyshev1: return "chebyshev1";
    case FilterFamily::Elliptic: return "elliptic";
    case FilterFamily::Butterworth: return "butterworth";
    case FilterFamily::Boxcar: return "boxcar";
  }
  return "unknown";
}

inline FilterFamily parse_family(std::string_view name) {
  for (auto f : {FilterFamily::Chebyshev1, FilterFamily::Elliptic, FilterFamily::Butterworth, FilterFamily::Boxcar})
    if (to_string(f) == name) return f;
  throw Error(ErrorCode::InvalidArgument, "unknown filter family '" + std::string(name) + "'");
}

struct FilterSpec {
  FilterFamily family = FilterFamily::Chebyshev1;
  int order = 8;
  double cutoff_hz = 4000.0;
  double ripple_db = 0.05;      // passband ripple, Chebyshev1 and Elliptic
  double stop_atten_db = 40.0;  // Elliptic stopband
};

struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0, a1 = 0, a2 = 0;
};

struct IirKernel {
  std::vector<Biquad> sections;
  std::vector<std::complex<double>> poles;  // z-plane
};

/// Linear-phase FIR applied center-aligned.
struct FirKernel {
  std::vector<double> taps;
};

using FilterKernel = std::variant<IirKernel, FirKernel>;

namespace detail {

struct AnalogPrototype {
  std::vector<std::complex<double>> poles;
  std::vector<std::complex<double>> zeros;  // finite zeros only
  double dc_gain = 1.0;                     // desired |H(0)|
};

inline AnalogPrototype butterworth_prototype(int n) {
  AnalogPrototype p;
  for (int k = 1; k <= n; ++k) {
    const double theta = std::numbers::pi * (2.0 * k - 1.0) / (2.0 * n);
    p.poles.emplace_back(-std::sin(theta), std::cos(theta));
  }
  return p;
}

inline AnalogPrototype chebyshev1_prototype(int n, double ripple_db) {
  const double eps = std::sqrt(std::pow(10.0, ripple_db / 10.0) - 1.0);
  const double mu = std::asinh(1.0 / eps) / n;
  AnalogPrototype p;
  for (int k = 1; k <= n; ++k) {
    const double theta = std::numbers::pi * (2.0 * k - 1.0) / (2.0 * n);
    p.poles.emplace_back(-std::sinh(mu) * std::sin(theta), std::cosh(mu) * std::cos(theta));
  }
  p.dc_gain = n % 2 == 1 ? 1.0 : 1.0 / std::sqrt(1.0 + eps * eps);
  return p;
}

inline AnalogPrototype elliptic_prototype(int n, double ripple_db, double stop_db) {
  namespace el = elliptic;
  using namespace std::complex_literals;
  const double ep = std::sqrt(std::pow(10.0, ripple_db / 10.0) - 1.0);
  const double es = std::sqrt(std::pow(10.0, stop_db / 10.0) - 1.0);
  const double k1 = ep / es;
  const double k = el::ellipdeg(n, k1);
  const std::complex<double> v0 = -1i * el::asne(1i / ep, k1) / static_cast<double>(n);

  AnalogPrototype p;
  for (int i = 1; i <= n / 2; ++i) {
    const double ui = (2.0 * i - 1.0) / n;
    const std::complex<double> zeta = el::cde(ui, k);
    const std::complex<double> zero = 1i / (k * zeta);
    p.zeros.push_back(zero);
    p.zeros.push_back(std::conj(zero));
    const std::complex<double> pole = 1i * el::cde(ui - 1i * v0, k);
    p.poles.push_back(pole);
    p.poles.push_back(std::conj(pole));
  }
  if (n % 2 == 1) p.poles.emplace_back((1i * el::sne(1i * v0, k)).real(), 0.0);
  p.dc_gain = n % 2 == 1 ? 1.0 : 1.0 / std::sqrt(1.0 + ep * ep);
  return p;
}

inline std::complex<double> bilinear(std::complex<double> s) { return (1.0 + s) / (1.0 - s); }

inline std::complex<double> eval_biquad(const Biquad& q, std::complex<double> zinv) {
  const auto num = q.b0 + zinv * (q.b1 + zinv * q.b2);
  const auto den = 1.0 + zinv * (q.a1 + zinv * q.a2);
  return num / den;
}

// Prewarped bilinear transform of a prototype, paired into second-order sections.
inline IirKernel digitize(const AnalogPrototype& proto, double cutoff_hz, int sample_rate) {
  const double warped = std::tan(std::numbers::pi * cutoff_hz / sample_rate);
  std::vector<std::complex<double>> poles, zeros;
  for (auto p : proto.poles) poles.push_back(bilinear(p * warped));
  for (auto z : proto.zeros) zeros.push_back(bilinear(z * warped));
  while (zeros.size() < poles.size()) zeros.emplace_back(-1.0, 0.0);

  // Upper-half-plane representatives of conjugate pairs; real roots separately.
  auto split = [](const std::vector<std::complex<double>>& roots) {
    std::vector<std::complex<double>> pairs, reals;
    for (auto r : roots) {
      if (std::abs(r.imag()) < 1e-12 * std::max(1.0, std::abs(r)))
        reals.emplace_back(r.real(), 0.0);
      else if (r.imag() > 0)
        pairs.push_back(r);
    }
    return std::make_pair(pairs, reals);
  };
  auto [pole_pairs, pole_reals] = split(poles);
  auto [zero_pairs, zero_reals] = split(zeros);
  // Poles nearest the unit circle first, each matched with the nearest zero pair.
  std::sort(pole_pairs.begin(), pole_pairs.end(),
            [](auto a, auto b) { return std::abs(a) > std::abs(b); });

  IirKernel kernel;
  kernel.poles = poles;
  for (auto p : pole_pairs) {
    Biquad q;
    q.a1 = -2.0 * p.real();
    q.a2 = std::norm(p);
    if (!zero_pairs.empty()) {
      auto best = std::min_element(zero_pairs.begin(), zero_pairs.end(),
                                   [&](auto a, auto b) { return std::abs(a - p) < std::abs(b - p); });
      q.b0 = 1.0;
      q.b1 = -2.0 * best->real();
      q.b2 = std::norm(*best);
      zero_pairs.erase(best);
    } else {
      const double z1 = zero_reals.back().real();
      zero_reals.pop_back();
      const double z2 = zero_reals.back().real();
      zero_reals.pop_back();
      q.b0 = 1.0;
      q.b1 = -(z1 + z2);
      q.b2 = z1 * z2;
    }
    kernel.sections.push_back(q);
  }
  for (auto p : pole_reals) {
    Biquad q;
    q.a1 = -p.real();
    const double z = zero_reals.back().real();
    zero_reals.pop_back();
    q.b0 = 1.0;
    q.b1 = -z;
    kernel.sections.push_back(q);
  }
  // Unit DC gain per section, overall DC gain on the first.
  for (auto& q : kernel.sections) {
    const double g = (1.0 + q.a1 + q.a2) / (q.b0 + q.b1 + q.b2);
    q.b0 *= g;
    q.b1 *= g;
    q.b2 *= g;
  }
  if (!kernel.sections.empty()) {
    auto& q = kernel.sections.front();
    q.b0 *= proto.dc_gain;
    q.b1 *= proto.dc_gain;
    q.b2 *= proto.dc_gain;
  }
  return kernel;
}

inline FirKernel boxcar_fir(int order, double cutoff_hz, int sample_rate) {
  auto len = static_cast<int>(std::lround(2.0 * order * sample_rate / cutoff_hz));
  if (len % 2 == 0) ++len;
  const int mid = len / 2;
  const double fc = cutoff_hz / sample_rate;
  FirKernel fir;
  fir.taps.resize(static_cast<std::size_t>(len));
  double sum = 0.0;
  for (int n = 0; n < len; ++n) {
    const double x = 2.0 * fc * (n - mid);
    fir.taps[n] = 2.0 * fc * (n == mid ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x));
    sum += fir.taps[n];
  }
  for (double& h : fir.taps) h /= sum;
  return fir;
}

}  // namespace detail

inline constexpr double kPoleMarginTolerance = 1e-9;

/// IIR families: analog prototype + prewarped bilinear transform, second-order
/// sections. Boxcar: rectangular-window sinc FIR of length 2*order*rate/cutoff (odd).
/// For Chebyshev1/Elliptic the cutoff is the passband edge; for Butterworth the -3 dB point.
inline FilterKernel design_lowpass(const FilterSpec& spec, int sample_rate) {
  require(spec.order >= 2 && spec.order <= 10, ErrorCode::InvalidArgument, "filter order must be in [2, 10]");
  require(spec.cutoff_hz > 0.0 && spec.cutoff_hz < sample_rate / 2.0, ErrorCode::CutoffOutOfRange,
          "cutoff " + std::to_string(spec.cutoff_hz) + " Hz outside (0, Nyquist)");

  detail::AnalogPrototype proto;
  switch (spec.family) {
    case FilterFamily::Boxcar: return detail::boxcar_fir(spec.order, spec.cutoff_hz, sample_rate);
    case FilterFamily::Butterworth: proto = detail::butterworth_prototype(spec.order); break;
    case FilterFamily::Chebyshev1: proto = detail::chebyshev1_prototype(spec.order, spec.ripple_db); break;
    case FilterFamily::Elliptic:
      proto = detail::elliptic_prototype(spec.order, spec.ripple_db, spec.stop_atten_db);
      break;
  }
  IirKernel kernel = detail::digitize(proto, spec.cutoff_hz, sample_rate);
  for (auto p : kernel.poles)
    require(std::abs(p) < 1.0 - kPoleMarginTolerance, ErrorCode::UnstableDesign,
            "pole magnitude " + std::to_string(std::abs(p)));
  return kernel;
}

inline std::complex<double> frequency_response(const FilterKernel& kernel, double hz, int sample_rate) {
  const double omega = 2.0 * std::numbers::pi * hz / sample_rate;
  const std::complex<double> zinv = std::polar(1.0, -omega);
  if (const auto* iir = std::get_if<IirKernel>(&kernel)) {
    std::complex<double> h = 1.0;
    for (const auto& q : iir->sections) h *= detail::eval_biquad(q, zinv);
    return h;
  }
  const auto& taps = std::get<FirKernel>(kernel).taps;
  const int mid = static_cast<int>(taps.size()) / 2;
  std::complex<double> h = 0.0;
  for (int n = 0; n < static_cast<int>(taps.size()); ++n) h += taps[n] * std::polar(1.0, -omega * (n - mid));
  return h;
}

/// IIR: causal single pass (transposed direct form II per section).
/// FIR: center-aligned, zero padded. Output length equals input length.
inline AudioBuffer apply_filter(const AudioBuffer& buf, const FilterKernel& kernel) {
  AudioBuffer out;
  out.sample_rate = buf.sample_rate;
  out.samples.resize(buf.size());
  std::vector<double> x(buf.samples.begin(), buf.samples.end());

  if (const auto* iir = std::get_if<IirKernel>(&kernel)) {
    for (const auto& q : iir->sections) {
      double s1 = 0.0, s2 = 0.0;
      for (double& v : x) {
        const double y = q.b0 * v + s1;
        s1 = q.b1 * v - q.a1 * y + s2;
        s2 = q.b2 * v - q.a2 * y;
        v = y;
      }
    }
    std::transform(x.begin(), x.end(), out.samples.begin(), [](double v) { return static_cast<float>(v); });
    return out;
  }

  const auto& taps = std::get<FirKernel>(kernel).taps;
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  const auto len = static_cast<std::ptrdiff_t>(taps.size());
  const std::ptrdiff_t mid = len / 2;
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    double acc = 0.0;
    const std::ptrdiff_t k_lo = std::max<std::ptrdiff_t>(0, i + mid - (n - 1));
    const std::ptrdiff_t k_hi = std::min<std::ptrdiff_t>(len - 1, i + mid);
    for (std::ptrdiff_t k = k_lo; k <= k_hi; ++k) acc += taps[k] * x[i + mid - k];
    out.samples[i] = static_cast<float>(acc);
  }
  return out;
}

inline constexpr double kMinSimCutoffHz = 2000.0;
inline constexpr double kMaxSimCutoffHz = 16000.0;

/// One random draw from the degradation space: uniform cutoff, family and order.
template <class Rng>
FilterSpec draw_filter_spec(Rng& rng) {
  std::uniform_real_distribution<double> cutoff(kMinSimCutoffHz, kMaxSimCutoffHz);
  std::uniform_int_distribution<int> family(0, 3);
  std::uniform_int_distribution<int> order(2, 10);
  FilterSpec spec;
  spec.cutoff_hz = cutoff(rng);
  spec.family = static_cast<FilterFamily>(family(rng));
  spec.order = order(rng);
  return spec;
}

inline constexpr int kMaxDesignRetries = 8;

/// Draws specs until one designs cleanly; gives up after kMaxDesignRetries redraws.
template <class Rng>
std::pair<FilterSpec, FilterKernel> draw_stable_filter(Rng& rng, int sample_rate) {
  for (int attempt = 0;; ++attempt) {
    FilterSpec spec = draw_filter_spec(rng);
    try {
      return {spec, design_lowpass(spec, sample_rate)};
    } catch (const Error& e) {
      if (e.code() != ErrorCode::UnstableDesign || attempt >= kMaxDesignRetries) throw;
    }
  }
}

struct DegradationSample {
  FilterSpec spec;
  LogMelSpectrogram lo_mel;
  LogMelSpectrogram hi_mel;
  double cutoff_hz = 0.0;
};

template <class Rng>
DegradationSample simulate_pair(const AudioBuffer& hi, Rng& rng, const SpectralConfig& cfg = {}) {
  require(hi.sample_rate == cfg.sample_rate, ErrorCode::RateMismatch, "simulation expects audio at the mel rate");
  auto [spec, kernel] = draw_stable_filter(rng, hi.sample_rate);
  DegradationSample out;
  out.spec = spec;
  out.cutoff_hz = spec.cutoff_hz;
  out.hi_mel = wav_to_logmel(hi, cfg);
  out.lo_mel = wav_to_logmel(apply_filter(hi, kernel), cfg);
  return out;
}

inline constexpr double kRolloffFraction = 0.99;

/// Smallest bin frequency at which the clip-wide cumulative power reaches
/// `fraction` of the total.
inline double estimate_rolloff(const ComplexSpectrogram& spec, double fraction = kRolloffFraction) {
  std::vector<double> power(static_cast<std::size_t>(spec.bins), 0.0);
  for (int t = 0; t < spec.frames; ++t)
    for (int b = 0; b < spec.bins; ++b) power[b] += std::norm(spec.at(t, b));
  double total = 0.0;
  for (double p : power) total += p;
  require(total > 0.0, ErrorCode::SilentInput, "roll-off of a silent clip is undefined");
  double acc = 0.0;
  for (int b = 0; b < spec.bins; ++b) {
    acc += power[b];
    if (acc >= fraction * total) return spec.bin_frequency(b);
  }
  return spec.bin_frequency(spec.bins - 1);
}

/// Mel variant: entries are mapped back to linear magnitude, squared, and
/// weighted by each filter's bandwidth so the sum approximates spectral power.
/// Floor-valued entries carry no energy.
inline double estimate_rolloff(const LogMelSpectrogram& mel, double fraction = kRolloffFraction) {
  const auto& bank = mel_filterbank(mel.config);
  const double floor_value = mel.config.log_floor_value();
  std::vector<double> power(static_cast<std::size_t>(mel.n_mels), 0.0);
  for (int t = 0; t < mel.frames; ++t)
    for (int m = 0; m < mel.n_mels; ++m) {
      const double v = mel.at(t, m);
      if (v > floor_value) power[m] += std::pow(10.0, 2.0 * v) * bank.filter(m).bandwidth_bins;
    }
  double total = 0.0;
  for (double p : power) total += p;
  require(total > 0.0, ErrorCode::SilentInput, "roll-off of a silent clip is undefined");
  double acc = 0.0;
  for (int m = 0; m < mel.n_mels; ++m) {
    acc += power[m];
    if (acc >= fraction * total) return bank.filter(m).center_hz;
  }
  return bank.filter(mel.n_mels - 1).center_hz;
}

/// One row of a degradation manifest (JSON lines). Cached mel paths are
/// optional and written by the simulation command.
struct DegradationRecord {
  std::string input_path;
  std::uint64_t seed = 0;
  FilterFamily family = FilterFamily::Chebyshev1;
  int order = 8;
  double cutoff_hz = 4000.0;
  std::optional<std::string> lo_mel;
  std::optional<std::string> hi_mel;

  FilterSpec filter_spec() const {
    FilterSpec spec;
    spec.family = family;
    spec.order = order;
    spec.cutoff_hz = cutoff_hz;
    return spec;
  }
};

inline nlohmann::ordered_json to_json(const DegradationRecord& r) {
  nlohmann::ordered_json j;
  j["input_path"] = r.input_path;
  j["seed"] = r.seed;
  j["family"] = std::string(to_string(r.family));
  j["order"] = r.order;
  j["cutoff_hz"] = r.cutoff_hz;
  if (r.lo_mel) j["lo_mel"] = *r.lo_mel;
  if (r.hi_mel) j["hi_mel"] = *r.hi_mel;
  return j;
}

inline DegradationRecord record_from_json(const nlohmann::json& j) {
  try {
    DegradationRecord r;
    r.input_path = j.at("input_path").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.family = parse_family(j.at("family").get<std::string>());
    r.order = j.at("order").get<int>();
    r.cutoff_hz = j.at("cutoff_hz").get<double>();
    if (j.contains("lo_mel")) r.lo_mel = j["lo_mel"].get<std::string>();
    if (j.contains("hi_mel")) r.hi_mel = j["hi_mel"].get<std::string>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedContainer, std::string("manifest record: ") + e.what());
  }
}

inline void write_manifest(const std::vector<DegradationRecord>& records, const std::filesystem::path& path) {
  std::string text;
  for (const auto& r : records) text += to_json(r).dump() + "\n";
  detail::spit(path, std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

inline std::vector<DegradationRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::IoFailure, "cannot open manifest " + path.string());
  std::vector<DegradationRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::MalformedContainer, std::string("manifest line: ") + e.what());
    }
    records.push_back(record_from_json(j));
  }
  return records;
}

}  // namespace bandlift
