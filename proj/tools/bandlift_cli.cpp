#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bandlift/bandlift.hpp"

namespace fs = std::filesystem;
using namespace bandlift;

namespace {

// Exit codes.
constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kEmptyInput = 2;
constexpr int kDiverged = 3;
constexpr int kSilent = 4;
constexpr int kCheckpointMismatch = 5;
constexpr int kEvalFailures = 6;
constexpr int kUsage = 64;

constexpr double kMaxFailureFraction = 0.10;

void log(const std::string& msg) { std::cerr << msg << '\n'; }

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<fs::path> wav_files(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    if (ext == ".wav") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

AudioBuffer read_at_48k(const fs::path& p) {
  auto x = read_wav(p);
  return x.sample_rate == 48000 ? x : resample_cubic(x, 48000);
}

Codec load_any_codec(const std::string& spec) {
  if (spec == "reference") return ReferenceCodec{};
  return load_codec(spec).codec;
}

// Mel pairs for a manifest: cached BMEL files when present, else computed.
struct MelPair {
  LogMelSpectrogram lo, hi;
};

std::vector<MelPair> load_pairs(const std::vector<DegradationRecord>& manifest) {
  std::vector<MelPair> out;
  for (const auto& r : manifest) {
    MelPair p;
    if (r.lo_mel && r.hi_mel) {
      p.lo = read_logmel(*r.lo_mel);
      p.hi = read_logmel(*r.hi_mel);
    } else {
      const auto hi = read_at_48k(r.input_path);
      p.hi = wav_to_logmel(hi);
      p.lo = wav_to_logmel(apply_filter(hi, design_lowpass(r.filter_spec(), 48000)));
    }
    out.push_back(std::move(p));
  }
  require(!out.empty(), ErrorCode::EmptyAudio, "manifest has no rows");
  return out;
}

class LossLog {
 public:
  LossLog(const fs::path& path, bool append) {
    const bool fresh = !append || !fs::exists(path);
    out_.open(path, fresh ? std::ios::trunc : std::ios::app);
    require(static_cast<bool>(out_), ErrorCode::IoFailure, "cannot open loss log " + path.string());
    if (fresh) out_ << "step,loss\n";
  }
  void row(int step, double loss) { out_ << step << ',' << fmt_double(loss) << '\n' << std::flush; }

 private:
  std::ofstream out_;
};

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out_dir;
  int count = 10;
  std::uint64_t seed = 0;
  double seconds = 1.0;
};

int cmd_synth(const SynthArgs& a) {
  fs::create_directories(a.out_dir);
  for (int i = 0; i < a.count; ++i) {
    std::mt19937_64 rng(nn::mix_seed(a.seed, static_cast<std::uint64_t>(i)));
    char name[32];
    std::snprintf(name, sizeof name, "clip_%04d.wav", i);
    write_wav(synth_clip(rng, a.seconds), fs::path(a.out_dir) / name, WavEncoding::Float32);
  }
  log("wrote " + std::to_string(a.count) + " clips to " + a.out_dir);
  return kOk;
}

struct SimulateArgs {
  std::string in_dir, out_manifest, mel_dir;
  int count = 0;
  std::uint64_t seed = 0;
};

int cmd_simulate(const SimulateArgs& a) {
  const auto files = wav_files(a.in_dir);
  if (files.empty()) {
    log("no WAV files in " + a.in_dir);
    return kEmptyInput;
  }
  const int n = a.count > 0 ? a.count : static_cast<int>(files.size());
  const fs::path mel_dir = a.mel_dir.empty() ? fs::path(a.out_manifest).parent_path() / "mels" : fs::path(a.mel_dir);
  fs::create_directories(mel_dir);
  std::vector<DegradationRecord> rows;
  for (int i = 0; i < n; ++i) {
    const auto& file = files[static_cast<std::size_t>(i) % files.size()];
    const std::uint64_t row_seed = nn::mix_seed(a.seed, static_cast<std::uint64_t>(i));
    try {
      std::mt19937_64 rng(row_seed);
      const auto sample = simulate_pair(read_at_48k(file), rng);
      char stem[32];
      std::snprintf(stem, sizeof stem, "row%05d", i);
      DegradationRecord r;
      r.input_path = file.string();
      r.seed = row_seed;
      r.family = sample.spec.family;
      r.order = sample.spec.order;
      r.cutoff_hz = sample.spec.cutoff_hz;
      r.lo_mel = (mel_dir / (std::string(stem) + "_lo.bmel")).string();
      r.hi_mel = (mel_dir / (std::string(stem) + "_hi.bmel")).string();
      write_logmel(sample.lo_mel, *r.lo_mel);
      write_logmel(sample.hi_mel, *r.hi_mel);
      rows.push_back(std::move(r));
    } catch (const Error& e) {
      log(file.string() + ": " + e.what());
    }
  }
  if (rows.empty()) {
    log("every input failed");
    return kFailure;
  }
  write_manifest(rows, a.out_manifest);
  log("wrote " + std::to_string(rows.size()) + " rows to " + a.out_manifest);
  return kOk;
}

struct TrainCommon {
  std::string manifest, out, resume, loss_log;
  std::uint64_t seed = 0;
  int steps = 0, batch = 0, log_interval = 10, checkpoint_interval = 0;
  double lr = 0.0;
};

std::string loss_log_path(const TrainCommon& t) { return t.loss_log.empty() ? t.out + ".loss.csv" : t.loss_log; }

struct CodecArgs {
  TrainCommon common;
  double kl_weight = 1e-3;
  int crop_frames = 32, latent_channels = 8, hidden = 32;
};

int cmd_train_codec(const CodecArgs& a) {
  const auto& c = a.common;
  std::vector<LogMelSpectrogram> mels;
  for (auto& p : load_pairs(read_manifest(c.manifest))) mels.push_back(std::move(p.hi));

  CodecTrainConfig cfg;
  cfg.steps = c.steps;
  cfg.batch = c.batch;
  cfg.lr = c.lr;
  cfg.seed = c.seed;
  cfg.kl_weight = a.kl_weight;
  cfg.crop_frames = a.crop_frames;
  cfg.latent_channels = a.latent_channels;
  cfg.hidden = a.hidden;

  std::optional<CodecTrainer> trainer;
  if (!c.resume.empty()) {
    auto ck = load_codec(c.resume);
    require(ck.optimizer.has_value(), ErrorCode::CheckpointMismatch, "checkpoint has no optimizer state to resume");
    trainer.emplace(mels, cfg, std::move(ck.codec), ck.steps_trained, std::move(ck.optimizer));
  } else {
    trainer.emplace(mels, cfg);
  }
  LossLog losses(loss_log_path(c), !c.resume.empty());
  auto save = [&] {
    save_codec(c.out, trainer->codec(), trainer->completed_steps(), static_cast<float>(trainer->last_loss()),
               &trainer->optimizer());
  };
  while (trainer->completed_steps() < cfg.steps) {
    const auto loss = trainer->step();
    const int done = trainer->completed_steps();
    if (c.log_interval > 0 && done % c.log_interval == 0) {
      losses.row(done, loss.total);
      log("codec step " + std::to_string(done) + " loss " + fmt_double(loss.total));
    }
    if (c.checkpoint_interval > 0 && done % c.checkpoint_interval == 0) save();
  }
  save();
  return kOk;
}

struct LdmArgs {
  TrainCommon common;
  std::string codec = "reference";
  double cfg_drop = kDefaultCfgDrop;
  int crop_frames = 8, K = 1000, hidden = 32, blocks = 4, emb_dim = 32;
};

int cmd_train_ldm(const LdmArgs& a) {
  const auto& c = a.common;
  const auto codec = load_any_codec(a.codec);
  std::vector<LatentTensor> targets, conds;
  int n_mels = 0;
  for (const auto& p : load_pairs(read_manifest(c.manifest))) {
    targets.push_back(encode(p.hi, codec));
    conds.push_back(encode(p.lo, codec));
    n_mels = p.hi.n_mels;
  }

  LdmTrainConfig cfg;
  cfg.steps = c.steps;
  cfg.batch = c.batch;
  cfg.lr = c.lr;
  cfg.seed = c.seed;
  cfg.cfg_drop = a.cfg_drop;
  cfg.crop_frames = a.crop_frames;
  cfg.K = a.K;
  cfg.hidden = a.hidden;
  cfg.blocks = a.blocks;
  cfg.emb_dim = a.emb_dim;

  std::optional<LdmTrainer> trainer;
  if (!c.resume.empty()) {
    auto ck = load_ldm(c.resume);
    require(ck.optimizer.has_value(), ErrorCode::CheckpointMismatch, "checkpoint has no optimizer state to resume");
    require(ck.model.denoiser.config().latent_channels == latent_channels(codec), ErrorCode::CheckpointMismatch,
            "checkpoint latent channels differ from the codec");
    trainer.emplace(targets, conds, cfg, std::move(ck.model), ck.steps_trained, std::move(ck.optimizer));
  } else {
    trainer.emplace(targets, conds, cfg, n_mels);
  }
  LossLog losses(loss_log_path(c), !c.resume.empty());
  auto save = [&] {
    save_ldm(c.out, trainer->model(), trainer->completed_steps(), static_cast<float>(trainer->last_loss()),
             &trainer->optimizer());
  };
  while (trainer->completed_steps() < cfg.steps) {
    const double loss = trainer->step();
    const int done = trainer->completed_steps();
    if (c.log_interval > 0 && done % c.log_interval == 0) {
      losses.row(done, loss);
      log("ldm step " + std::to_string(done) + " loss " + fmt_double(loss));
    }
    if (c.checkpoint_interval > 0 && done % c.checkpoint_interval == 0) save();
  }
  save();
  return kOk;
}

struct SamplerArgs {
  std::uint64_t seed = 0;
  double guidance = 3.5;
  int steps = 50;
  int vocoder_iterations = kDefaultVocoderIterations;

  SamplerConfig config() const {
    SamplerConfig s;
    s.seed = seed;
    s.guidance_scale = guidance;
    s.ddim_steps = steps;
    return s;
  }
};

struct UpsampleArgs {
  std::string in, out, sidecar, codec = "reference", ldm;
  SamplerArgs sampler;
  bool pcm16 = false;
};

int cmd_upsample(const UpsampleArgs& a) {
  const auto codec = load_any_codec(a.codec);
  const auto ldm = load_ldm(a.ldm).model;
  const auto input = read_wav(a.in);
  const auto cfg = a.sampler.config();
  const auto res = upsample(input, codec, ldm, cfg, reference_vocoder(a.sampler.vocoder_iterations, cfg.seed));
  write_wav(res.audio, a.out, a.pcm16 ? WavEncoding::Pcm16 : WavEncoding::Float32);

  nlohmann::ordered_json side;
  side["input"] = a.in;
  side["output"] = a.out;
  side["input_sample_rate"] = input.sample_rate;
  side["output_sample_rate"] = res.audio.sample_rate;
  side["detected_rolloff"] = res.detected_rolloff;
  side["settings"] = {{"seed", cfg.seed},
                      {"guidance_scale", cfg.guidance_scale},
                      {"ddim_steps", cfg.ddim_steps},
                      {"vocoder_iterations", a.sampler.vocoder_iterations},
                      {"codec", a.codec},
                      {"ldm", a.ldm}};
  const auto& t = res.timing;
  side["timings_ms"] = {{"preprocess", t.preprocess_ms}, {"encode", t.encode_ms},   {"sample", t.sample_ms},
                        {"decode", t.decode_ms},         {"vocoder", t.vocoder_ms}, {"replace", t.replace_ms},
                        {"total", t.total_ms}};
  std::ofstream(a.sidecar.empty() ? a.out + ".json" : a.sidecar) << side.dump(2) << '\n';
  log("detected roll-off " + fmt_double(res.detected_rolloff) + " Hz, " + fmt_double(t.total_ms) + " ms");
  return kOk;
}

struct EvaluateArgs {
  std::string manifest, system = "identity", codec = "reference", ldm, out_csv, out_jsonl;
  SamplerArgs sampler;
  bool no_degrade = false;
};

int cmd_evaluate(const EvaluateArgs& a) {
  const auto manifest = read_manifest(a.manifest);
  SystemFn system = identity_system;
  std::optional<Codec> codec;
  std::optional<LdmModel> ldm;
  if (a.system == "model") {
    require(!a.ldm.empty(), ErrorCode::InvalidArgument, "--ldm is required for the model system");
    codec = load_any_codec(a.codec);
    ldm = load_ldm(a.ldm).model;
    check_compatible(*codec, *ldm);
    const auto cfg = a.sampler.config();
    const auto vocoder = reference_vocoder(a.sampler.vocoder_iterations, cfg.seed);
    system = [&, cfg, vocoder](const AudioBuffer& low) { return upsample(low, *codec, *ldm, cfg, vocoder).audio; };
  }
  BenchmarkOptions opts;
  opts.degrade = !a.no_degrade;
  opts.system_name = a.system;
  const auto report = run_benchmark(manifest, system, opts);
  const std::string csv = a.out_csv.empty() ? a.manifest + ".lsd.csv" : a.out_csv;
  const std::string jsonl = a.out_jsonl.empty() ? a.manifest + ".lsd.jsonl" : a.out_jsonl;
  write_report(report, csv, jsonl);

  std::printf("%-10s %6s %14s %14s\n", "cutoff_hz", "n", "unprocessed", report.system_name.c_str());
  for (const auto& [cut, s] : report.by_cutoff())
    std::printf("%-10.0f %6zu %7.3f+-%-5.3f %7.3f+-%-5.3f\n", cut, s.count, s.mean_unprocessed, s.std_unprocessed,
                s.mean_system, s.std_system);
  const auto all = report.summary();
  std::printf("%-10s %6zu %7.3f+-%-5.3f %7.3f+-%-5.3f\n", "all", all.count, all.mean_unprocessed, all.std_unprocessed,
              all.mean_system, all.std_system);
  for (const auto& r : report.rows)
    if (!r.ok()) log(r.file + ": " + r.error);
  if (report.failure_fraction() > kMaxFailureFraction) {
    log(std::to_string(report.failures()) + " of " + std::to_string(report.rows.size()) + " files failed");
    return kEvalFailures;
  }
  return kOk;
}

int cmd_rolloff(const std::string& path) {
  const auto x = read_wav(path);
  std::printf("%.4f\n", estimate_rolloff(stft(x, config_for_rate(x.sample_rate))));
  return kOk;
}

int cmd_inspect(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::IoFailure, "cannot open " + path);
  char magic[4] = {};
  in.read(magic, 4);
  const std::string tag(magic, 4);
  nlohmann::ordered_json j;
  j["path"] = path;
  if (tag == "BVAE") {
    const auto ck = load_codec(path);
    const auto& c = ck.codec.config();
    j["kind"] = "codec";
    j["latent_channels"] = c.latent_channels;
    j["hidden"] = c.hidden;
    j["n_mels"] = c.n_mels;
    j["steps_trained"] = ck.steps_trained;
    j["final_loss"] = ck.final_loss;
    j["has_optimizer_state"] = ck.optimizer.has_value();
  } else if (tag == "BLDM") {
    const auto ck = load_ldm(path);
    const auto& c = ck.model.denoiser.config();
    j["kind"] = "ldm";
    j["K"] = ck.model.schedule.K;
    j["latent_channels"] = c.latent_channels;
    j["latent_bins"] = c.latent_bins;
    j["hidden"] = c.hidden;
    j["blocks"] = c.blocks;
    j["emb_dim"] = c.emb_dim;
    j["steps_trained"] = ck.steps_trained;
    j["final_loss"] = ck.final_loss;
    j["has_optimizer_state"] = ck.optimizer.has_value();
  } else if (tag == "BMEL") {
    const auto mel = read_logmel(path);
    j["kind"] = "mel";
    j["frames"] = mel.frames;
    j["n_mels"] = mel.n_mels;
    j["sample_rate"] = mel.config.sample_rate;
  } else {
    const auto x = read_wav(path);
    j["kind"] = "wav";
    j["sample_rate"] = x.sample_rate;
    j["samples"] = x.size();
    j["seconds"] = x.duration();
  }
  std::cout << j.dump(2) << '\n';
  return kOk;
}

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::SilentInput: return kSilent;
    case ErrorCode::CheckpointMismatch:
    case ErrorCode::ShapeMismatch: return kCheckpointMismatch;
    case ErrorCode::DivergedTraining: return kDiverged;
    default: return kFailure;
  }
}

void add_train_common(CLI::App* cmd, TrainCommon& t, int steps, int batch, double lr) {
  t.steps = steps;
  t.batch = batch;
  t.lr = lr;
  cmd->add_option("--manifest", t.manifest, "Degradation manifest (JSON lines)")->required();
  cmd->add_option("--out", t.out, "Checkpoint to write")->required();
  cmd->add_option("--seed", t.seed, "Training seed")->required();
  cmd->add_option("--steps", t.steps, "Total optimizer steps");
  cmd->add_option("--batch", t.batch, "Batch size");
  cmd->add_option("--lr", t.lr, "Adam learning rate");
  cmd->add_option("--resume", t.resume, "Continue from this checkpoint");
  cmd->add_option("--loss-log", t.loss_log, "Loss CSV (default: <out>.loss.csv)");
  cmd->add_option("--log-interval", t.log_interval, "Steps between loss rows");
  cmd->add_option("--checkpoint-interval", t.checkpoint_interval, "Steps between checkpoints (0: end only)");
}

void add_sampler(CLI::App* cmd, SamplerArgs& s) {
  cmd->add_option("--seed", s.seed, "Sampling seed");
  cmd->add_option("--guidance", s.guidance, "Classifier-free guidance scale")->check(CLI::NonNegativeNumber);
  cmd->add_option("--steps", s.steps, "DDIM steps")->check(CLI::PositiveNumber);
  cmd->add_option("--vocoder-iterations", s.vocoder_iterations, "Phase-reconstruction iterations")
      ->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bandlift: two-stage audio super-resolution to 48 kHz"};
  app.option_defaults()->always_capture_default();
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.set_config("--config", "", "TOML/INI file with option values; [section] per command");
  app.require_subcommand(1);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Write synthetic harmonic/noise-burst clips at 48 kHz");
  c_synth->add_option("--out-dir", synth.out_dir, "Output directory")->required();
  c_synth->add_option("--n", synth.count, "Number of clips")->check(CLI::PositiveNumber);
  c_synth->add_option("--seed", synth.seed, "Corpus seed")->required();
  c_synth->add_option("--seconds", synth.seconds, "Clip length")->check(CLI::PositiveNumber);

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "Draw degradation filters and cache low/high mel pairs");
  c_sim->add_option("--in-dir", sim.in_dir, "Directory of reference WAV files")->required();
  c_sim->add_option("--out", sim.out_manifest, "Manifest to write")->required();
  c_sim->add_option("--mel-dir", sim.mel_dir, "Where cached mels go (default: <manifest dir>/mels)");
  c_sim->add_option("--n", sim.count, "Rows to draw (0: one per file)")->check(CLI::NonNegativeNumber);
  c_sim->add_option("--seed", sim.seed, "Simulation seed")->required();

  auto* c_train = app.add_subcommand("train", "Train a model stage");
  c_train->require_subcommand(1);
  CodecArgs codec_args;
  auto* c_codec = c_train->add_subcommand("codec", "Train the variational mel codec");
  add_train_common(c_codec, codec_args.common, 2000, 8, 1e-3);
  c_codec->add_option("--kl-weight", codec_args.kl_weight, "KL term weight");
  c_codec->add_option("--crop-frames", codec_args.crop_frames, "Mel frames per crop (multiple of 4)");
  c_codec->add_option("--latent-channels", codec_args.latent_channels, "Latent channels");
  c_codec->add_option("--hidden", codec_args.hidden, "Hidden channels");
  LdmArgs ldm_args;
  auto* c_ldm = c_train->add_subcommand("ldm", "Train the latent diffusion denoiser");
  add_train_common(c_ldm, ldm_args.common, 4000, 16, 1e-4);
  c_ldm->add_option("--codec", ldm_args.codec, "Codec checkpoint or 'reference'");
  c_ldm->add_option("--cfg-drop", ldm_args.cfg_drop, "Probability of training with the empty condition")
      ->check(CLI::Range(0.0, 1.0));
  c_ldm->add_option("--crop-frames", ldm_args.crop_frames, "Latent frames per crop");
  c_ldm->add_option("--diffusion-steps", ldm_args.K, "Schedule length K");
  c_ldm->add_option("--hidden", ldm_args.hidden, "Hidden channels");
  c_ldm->add_option("--blocks", ldm_args.blocks, "Residual blocks");
  c_ldm->add_option("--emb-dim", ldm_args.emb_dim, "Step embedding width");

  UpsampleArgs up;
  auto* c_up = app.add_subcommand("upsample", "Super-resolve one WAV file to 48 kHz");
  c_up->add_option("--in", up.in, "Input WAV")->required();
  c_up->add_option("--out", up.out, "Output WAV")->required();
  c_up->add_option("--sidecar", up.sidecar, "JSON sidecar (default: <out>.json)");
  c_up->add_option("--codec", up.codec, "Codec checkpoint or 'reference'");
  c_up->add_option("--ldm", up.ldm, "Diffusion checkpoint")->required();
  c_up->add_flag("--pcm16", up.pcm16, "Write 16-bit PCM instead of float32");
  add_sampler(c_up, up.sampler);

  EvaluateArgs ev;
  auto* c_ev = app.add_subcommand("evaluate", "LSD benchmark over a manifest");
  c_ev->add_option("--manifest", ev.manifest, "Degradation manifest")->required();
  c_ev->add_option("--system", ev.system, "identity (cubic baseline) or model")
      ->check(CLI::IsMember({"identity", "model"}));
  c_ev->add_option("--codec", ev.codec, "Codec checkpoint or 'reference'");
  c_ev->add_option("--ldm", ev.ldm, "Diffusion checkpoint (model system)");
  c_ev->add_option("--out-csv", ev.out_csv, "CSV report (default: <manifest>.lsd.csv)");
  c_ev->add_option("--out-jsonl", ev.out_jsonl, "JSON-lines report (default: <manifest>.lsd.jsonl)");
  c_ev->add_flag("--no-degrade", ev.no_degrade, "Feed the clean reference to the system");
  add_sampler(c_ev, ev.sampler);

  std::string rolloff_path;
  auto* c_roll = app.add_subcommand("rolloff", "Print the detected bandwidth of a WAV file in Hz");
  c_roll->add_option("file", rolloff_path, "WAV file")->required();

  std::string inspect_path;
  auto* c_insp = app.add_subcommand("inspect", "Describe a WAV, mel or checkpoint file as JSON");
  c_insp->add_option("file", inspect_path, "File to inspect")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return kUsage;
  }

  try {
    if (c_synth->parsed()) return cmd_synth(synth);
    if (c_sim->parsed()) return cmd_simulate(sim);
    if (c_codec->parsed()) return cmd_train_codec(codec_args);
    if (c_ldm->parsed()) return cmd_train_ldm(ldm_args);
    if (c_up->parsed()) return cmd_upsample(up);
    if (c_ev->parsed()) return cmd_evaluate(ev);
    if (c_roll->parsed()) return cmd_rolloff(rolloff_path);
    if (c_insp->parsed()) return cmd_inspect(inspect_path);
  } catch (const Error& e) {
    log(e.what());
    return exit_code_for(e);
  } catch (const std::exception& e) {
    log(e.what());
    return kFailure;
  }
  return kUsage;
}
