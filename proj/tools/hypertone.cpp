// hypertone: corpus building, encoder pretraining, training, evaluation,
// rendering and benchmarking from the command line.
//
// Exit codes: 0 ok, 1 other failure, 2 usage / precondition, 3 I/O, 4 file format,
// 5 numeric fault (also: gradcheck above threshold).

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "hypertone/log.hpp"
#include "hypertone/model_store.hpp"
#include "hypertone/stream.hpp"
#include "hypertone/trainer.hpp"
#include "hypertone/verify.hpp"

namespace fs = std::filesystem;
using namespace hypertone;

namespace {

enum Exit { kOk = 0, kOther = 1, kUsage = 2, kIo = 3, kFormat = 4, kNumeric = 5 };

const std::map<std::string, CondMode> kModes{
    {"none", CondMode::none}, {"film", CondMode::film}, {"hypernet", CondMode::hypernet}};
const std::map<std::string, DeltaGranularity> kGranularities{
    {"per_channel", DeltaGranularity::per_channel}, {"full", DeltaGranularity::full}};
const std::map<std::string, WavDepth> kDepths{{"float32", WavDepth::float32}, {"pcm16", WavDepth::pcm16}};

// Writes through a sibling file so a failure never leaves partial output behind.
template <class Fn>
void write_atomic(const fs::path& path, Fn&& write) {
  const fs::path tmp = path.string() + ".partial";
  try {
    write(tmp);
  } catch (...) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw;
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move output into place at " + path.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  write_atomic(path, [&](const fs::path& tmp) {
    std::ofstream os(tmp);
    if (!os) throw IoError("cannot open " + tmp.string() + " for writing");
    os << text;
    if (!os) throw IoError("write failed: " + tmp.string());
  });
}

CorpusManifest manifest_at(const fs::path& corpus) {
  return read_manifest(fs::is_directory(corpus) ? corpus / "manifest.tsv" : corpus);
}

EncoderWeights encoder_from(const fs::path& path) {
  auto b = load_model(path);
  if (!b.encoder) throw FormatError(path.string() + " contains no tone encoder");
  return *b.encoder;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// --- synth-clean ----------------------------------------------------------

struct SynthOpts {
  fs::path out;
  int count = 6;
  double seconds = 8.0;
  std::uint64_t seed = 0;
};

int run_synth(const SynthOpts& o) {
  fs::create_directories(o.out);
  for (int k = 0; k < o.count; ++k) {
    const auto path = o.out / ("performance_" + std::to_string(k) + ".wav");
    const auto audio = synthesize_performance(o.seed * 1000003ull + static_cast<std::uint64_t>(k), o.seconds);
    write_atomic(path, [&](const fs::path& tmp) { write_wav(tmp, audio, WavDepth::float32); });
    std::cout << path.string() << "\n";
  }
  return kOk;
}

// --- corpus -----------------------------------------------------------------

struct CorpusOpts {
  std::vector<fs::path> clean;
  fs::path out;
  int presets = 72;
  SplitSpec split;
  std::uint64_t seed = 7;
  WavDepth depth = WavDepth::float32;
};

int run_corpus(const CorpusOpts& o) {
  std::vector<fs::path> files;
  for (const auto& c : o.clean) {
    if (fs::is_directory(c)) {
      for (const auto& e : fs::directory_iterator(c))
        if (e.path().extension() == ".wav") files.push_back(e.path());
    } else {
      files.push_back(c);
    }
  }
  std::sort(files.begin(), files.end());
  const auto presets = sample_presets(o.presets, o.seed);
  const auto m = build_corpus(files, presets, o.split, o.out, o.seed, o.depth);
  std::cout << "corpus: " << m.entries.size() << " clips, " << m.preset_ids(Split::train).size() << " training tones, "
            << m.preset_ids(Split::heldout_tone).size() << " held-out tones -> " << (o.out / "manifest.tsv").string()
            << "\n";
  return kOk;
}

// --- train-encoder ------------------------------------------------------------

struct EncoderOpts {
  fs::path corpus;
  fs::path out;
  EncoderTrainConfig cfg;
};

int run_train_encoder(const EncoderOpts& o) {
  const auto m = manifest_at(o.corpus);
  const auto data = CorpusData::load(m, true);
  // Training tones on training content fit the classifier; the same tones on
  // held-out content measure generalisation across performances.
  std::vector<LabeledClip> clips;
  for (const auto& e : m.entries) {
    if (e.split == Split::heldout_tone) continue;
    clips.push_back({data.wet_clip(e.preset_id, e.content_id), e.preset_id, e.split == Split::heldout_content});
  }
  EncoderTrainReport report;
  const auto enc = pretrain_encoder(clips, o.cfg, MelConfig{}, &report);
  // Encoder files are ordinary model files with a one-block placeholder generator.
  GcnConfig placeholder;
  placeholder.num_blocks = 1;
  placeholder.channels = 1;
  placeholder.skip_channels = 1;
  Rng rng(o.cfg.seed);
  auto bundle = ModelBundle::create(placeholder, rng, enc.embedding_dim());
  bundle.encoder = enc;
  save_model(o.out, bundle);
  std::cout << "encoder: " << report.classes << " tones, train accuracy " << report.train_accuracy
            << ", held-out accuracy " << report.heldout_accuracy << " (" << report.heldout_examples
            << " crops) -> " << o.out.string() << "\n";
  return kOk;
}

// --- train --------------------------------------------------------------------

struct TrainOpts {
  fs::path corpus;
  fs::path encoder;
  fs::path out;
  fs::path loss_log;
  std::string mode = "hypernet";
  GcnConfig gcn;
  DeltaGranularity gran = DeltaGranularity::per_channel;
  std::size_t hyper_hidden = kDefaultHyperHidden;
  TrainConfig cfg;
  int checkpoint_every = 0;
};

int run_train(TrainOpts o) {
  o.gcn.cond_mode = kModes.at(o.mode);
  o.gcn.validate();
  o.cfg.validate(o.gcn);
  const auto enc = encoder_from(o.encoder);
  const auto data = CorpusData::load(manifest_at(o.corpus), false);
  Rng rng(o.cfg.seed);
  auto bundle = ModelBundle::create(o.gcn, rng, enc.embedding_dim(), o.gran, o.hyper_hidden);
  bundle.encoder = enc;
  const int log_every = o.cfg.log_every > 0 ? o.cfg.log_every : std::max(1, o.cfg.steps / 20);
  auto on_step = [&](int step, double loss) {
    if ((step + 1) % log_every == 0 || step == 0)
      std::cout << "step " << step + 1 << "/" << o.cfg.steps << " loss " << loss << std::endl;
    if (o.checkpoint_every > 0 && (step + 1) % o.checkpoint_every == 0 && step + 1 < o.cfg.steps)
      save_model(o.out.string() + ".ckpt", bundle);
  };
  const auto result = train(data, bundle.generator, enc, o.cfg, on_step);
  save_model(o.out, bundle);
  if (!o.loss_log.empty()) {
    std::string csv = "step,loss\n";
    for (std::size_t k = 0; k < result.loss_curve.size(); ++k)
      csv += std::to_string(k) + "," + std::to_string(result.loss_curve[k]) + "\n";
    write_text(o.loss_log, csv);
  }
  std::cout << "trained " << o.mode << " model: loss " << result.initial_loss << " -> " << result.final_loss << " in "
            << result.wall_time_s << " s -> " << o.out.string() << "\n";
  return kOk;
}

// --- eval -----------------------------------------------------------------------

struct EvalOpts {
  fs::path corpus;
  std::vector<fs::path> models;
  std::vector<fs::path> compare;
  fs::path json_out;
};

std::string model_label(const ModelBundle& b, const fs::path& p) {
  return to_string(b.generator.mode()) + ":" + p.stem().string();
}

int run_eval(const EvalOpts& o) {
  auto paths = o.models;
  paths.insert(paths.end(), o.compare.begin(), o.compare.end());
  if (paths.empty()) throw ContractError("eval: give --model or --compare");
  const auto data = CorpusData::load(manifest_at(o.corpus), true);
  std::vector<MetricsReport> reports;
  for (const auto& p : paths) {
    const auto b = load_model(p);
    if (!b.encoder) throw FormatError(p.string() + " contains no tone encoder");
    reports.push_back(zero_shot_eval(data, b.generator, *b.encoder, model_label(b, p)));
  }
  for (const auto& r : reports) std::cout << r.to_table() << "\n";
  if (reports.size() > 1) std::cout << comparison_table(reports);
  if (!o.json_out.empty()) {
    std::string text = "[\n";
    for (std::size_t k = 0; k < reports.size(); ++k) text += reports[k].to_json() + (k + 1 < reports.size() ? ",\n" : "\n");
    write_text(o.json_out, text + "]\n");
  }
  return kOk;
}

// --- bench ------------------------------------------------------------------------

struct BenchOpts {
  fs::path model;
  std::string mode = "hypernet";
  GcnConfig gcn;
  double duration = 10.0;
  std::size_t block = 128;
  std::uint64_t seed = 0;
  fs::path json_out;
};

int run_bench(BenchOpts o) {
  std::optional<ModelBundle> bundle;
  if (!o.model.empty()) {
    bundle = load_model(o.model);
  } else {
    o.gcn.cond_mode = kModes.at(o.mode);
    Rng rng(o.seed);
    bundle = ModelBundle::create(o.gcn, rng);
  }
  const auto& g = bundle->generator;
  std::optional<ToneEmbedding> phi;
  if (g.mode() != CondMode::none) {
    Rng rng(o.seed + 1);
    std::vector<float> v(g.embedding_dim);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    phi = ToneEmbedding::from_raw(v, "bench");
  }
  const auto r = bench_rtf(g, phi ? &*phi : nullptr, o.duration, o.block, o.seed);
  std::cout << r.to_json() << "\n";
  if (!o.json_out.empty()) write_text(o.json_out, r.to_json() + "\n");
  return kOk;
}

// --- gradcheck ------------------------------------------------------------------------

struct GradOpts {
  int seeds = 10;
  double threshold = 1e-4;
};

int run_gradcheck(const GradOpts& o) {
  struct Case {
    const char* name;
    CondMode mode;
    DeltaGranularity gran;
  };
  const Case cases[] = {{"none", CondMode::none, DeltaGranularity::per_channel},
                        {"film", CondMode::film, DeltaGranularity::per_channel},
                        {"hypernet/per_channel", CondMode::hypernet, DeltaGranularity::per_channel},
                        {"hypernet/full", CondMode::hypernet, DeltaGranularity::full}};
  double worst = 0.0;
  for (const auto& c : cases) {
    double m = 0.0;
    std::string where;
    for (int s = 0; s < o.seeds; ++s) {
      const auto r = generator_gradcheck(c.mode, static_cast<std::uint64_t>(s), c.gran);
      if (r.max_relative_error >= m) {
        m = r.max_relative_error;
        where = r.worst_param + "[" + std::to_string(r.worst_index) + "]";
      }
    }
    std::printf("%-22s max relative error %.3e  (worst %s)\n", c.name, m, where.c_str());
    worst = std::max(worst, m);
  }
  const bool ok = worst < o.threshold;
  std::printf("gradcheck %s: %.3e %s %.1e\n", ok ? "passed" : "FAILED", worst, ok ? "<" : ">=", o.threshold);
  return ok ? kOk : kNumeric;
}

// --- render -------------------------------------------------------------------------

struct RenderOpts {
  fs::path model;
  fs::path clean;
  fs::path reference;
  fs::path out;
  fs::path target;
  bool streaming = false;
  std::size_t block = 128;
  WavDepth depth = WavDepth::float32;
};

int run_render(const RenderOpts& o) {
  const auto b = load_model(o.model);
  const auto& g = b.generator;
  const auto clean = read_wav(o.clean);
  std::optional<ToneEmbedding> phi;
  if (g.mode() != CondMode::none) {
    if (o.reference.empty()) throw ContractError("render: this model needs --reference");
    if (!b.encoder) throw FormatError(o.model.string() + " contains no tone encoder");
    phi = encode(read_wav(o.reference), *b.encoder);
    phi->source_id = o.reference.string();
  } else if (!o.reference.empty()) {
    read_wav(o.reference);  // still validated, so a missing file is an error
    warn("render: unconditioned model ignores the reference");
  }
  const AudioBuffer target = o.target.empty() ? AudioBuffer{} : read_wav(o.target);
  if (!o.target.empty() && target.size() != clean.size())
    throw ContractError("render: --target length differs from the clean input");

  std::vector<float> y;
  if (o.streaming) {
    y = render_streaming(bake(g, phi ? &*phi : nullptr), clean.samples, o.block);
  } else {
    y = phi ? g.forward(clean.samples, std::span<const float>(phi->vector)) : g.forward(clean.samples);
  }
  const AudioBuffer out(std::move(y), clean.sample_rate);
  write_atomic(o.out, [&](const fs::path& tmp) { write_wav(tmp, out, o.depth); });
  if (phi) std::cout << "embedding fingerprint " << hex(phi->fingerprint()) << "\n";
  if (!o.target.empty()) std::cout << "esr " << esr(target.samples, out.samples) << "\n";
  std::cout << (o.streaming ? "streaming" : "offline") << " render -> " << o.out.string() << "\n";
  return kOk;
}

void add_gcn_flags(CLI::App* cmd, GcnConfig& g) {
  cmd->add_option("--blocks", g.num_blocks, "Residual blocks")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--channels", g.channels, "Residual channels")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--skip-channels", g.skip_channels, "Skip channels")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--kernel", g.kernel_size, "Kernel size")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--dilation-cycle", g.dilation_cycle, "Dilations repeat as 2^(i mod cycle)")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hypertone: zero-shot guitar tone modelling"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML file with option overrides ([subcommand] sections)");

  SynthOpts synth;
  auto* c_synth = app.add_subcommand("synth-clean", "Write seeded synthetic clean guitar performances");
  c_synth->add_option("--out", synth.out, "Output directory")->required();
  c_synth->add_option("--count", synth.count, "Number of performances")->capture_default_str()->check(CLI::Range(2, 10000));
  c_synth->add_option("--seconds", synth.seconds, "Length of each performance")->capture_default_str()->check(CLI::PositiveNumber);
  c_synth->add_option("--seed", synth.seed)->capture_default_str();

  CorpusOpts corpus;
  auto* c_corpus = app.add_subcommand("corpus", "Render a paired clean/wet corpus and its manifest");
  c_corpus->add_option("--clean", corpus.clean, "Clean WAV files or directories")->required()->check(CLI::ExistingPath);
  c_corpus->add_option("--out", corpus.out, "Output directory")->required();
  c_corpus->add_option("--presets", corpus.presets, "Number of tone presets")->capture_default_str()->check(CLI::Range(2, 100000));
  c_corpus->add_option("--heldout-presets", corpus.split.heldout_presets)->capture_default_str()->check(CLI::NonNegativeNumber);
  c_corpus->add_option("--heldout-contents", corpus.split.heldout_contents)->capture_default_str()->check(CLI::NonNegativeNumber);
  c_corpus->add_option("--seed", corpus.seed)->capture_default_str();
  c_corpus->add_option("--depth", corpus.depth, "WAV sample format")->transform(CLI::CheckedTransformer(kDepths))->capture_default_str();

  EncoderOpts enc;
  auto* c_enc = app.add_subcommand("train-encoder", "Pretrain and freeze the tone encoder");
  c_enc->add_option("--corpus", enc.corpus, "Corpus directory or manifest")->required()->check(CLI::ExistingPath);
  c_enc->add_option("--out", enc.out, "Encoder file")->required();
  c_enc->add_option("--epochs", enc.cfg.epochs)->capture_default_str()->check(CLI::PositiveNumber);
  c_enc->add_option("--crops", enc.cfg.crops_per_clip, "Crops per clip")->capture_default_str()->check(CLI::PositiveNumber);
  c_enc->add_option("--crop-seconds", enc.cfg.crop_seconds)->capture_default_str()->check(CLI::Range(kMinReferenceSeconds, 3600.0));
  c_enc->add_option("--hidden", enc.cfg.hidden_dim)->capture_default_str()->check(CLI::PositiveNumber);
  c_enc->add_option("--dim", enc.cfg.embedding_dim, "Embedding dimension")->capture_default_str()->check(CLI::PositiveNumber);
  c_enc->add_option("--lr", enc.cfg.lr)->capture_default_str()->check(CLI::PositiveNumber);
  c_enc->add_option("--seed", enc.cfg.seed)->capture_default_str();

  TrainOpts tr;
  auto* c_train = app.add_subcommand("train", "Train a conditioned generator with a frozen encoder");
  c_train->add_option("--corpus", tr.corpus, "Corpus directory or manifest")->required()->check(CLI::ExistingPath);
  c_train->add_option("--encoder", tr.encoder, "Encoder (or model) file")->required()->check(CLI::ExistingFile);
  c_train->add_option("--out", tr.out, "Model file")->required();
  c_train->add_option("--cond", tr.mode, "Conditioning")->check(CLI::IsMember({"none", "film", "hypernet"}))->capture_default_str();
  add_gcn_flags(c_train, tr.gcn);
  c_train->add_option("--granularity", tr.gran, "Hypernetwork weight deltas")->transform(CLI::CheckedTransformer(kGranularities))->capture_default_str();
  c_train->add_option("--hyper-hidden", tr.hyper_hidden)->capture_default_str()->check(CLI::PositiveNumber);
  c_train->add_option("--steps", tr.cfg.steps)->capture_default_str()->check(CLI::NonNegativeNumber);
  c_train->add_option("--batch", tr.cfg.batch_size)->capture_default_str()->check(CLI::PositiveNumber);
  c_train->add_option("--segment", tr.cfg.segment_length, "Segment length in samples")->capture_default_str();
  c_train->add_option("--lr", tr.cfg.lr)->capture_default_str()->check(CLI::PositiveNumber);
  c_train->add_option("--esr-weight", tr.cfg.esr_weight)->capture_default_str()->check(CLI::NonNegativeNumber);
  c_train->add_option("--mae-weight", tr.cfg.mae_weight)->capture_default_str()->check(CLI::NonNegativeNumber);
  c_train->add_option("--pre-emphasis", tr.cfg.pre_emphasis)->capture_default_str()->check(CLI::Range(0.0, 1.0));
  c_train->add_option("--reference-seconds", tr.cfg.reference_seconds)->capture_default_str();
  c_train->add_option("--seed", tr.cfg.seed)->capture_default_str();
  c_train->add_option("--log-every", tr.cfg.log_every)->capture_default_str();
  c_train->add_option("--checkpoint-every", tr.checkpoint_every, "Write <out>.ckpt every N steps")->capture_default_str();
  c_train->add_option("--loss-log", tr.loss_log, "CSV of the per-step loss");

  EvalOpts ev;
  auto* c_eval = app.add_subcommand("eval", "Zero-shot evaluation on held-out tones");
  c_eval->add_option("--corpus", ev.corpus, "Corpus directory or manifest")->required()->check(CLI::ExistingPath);
  c_eval->add_option("--model", ev.models, "Model file(s)");
  c_eval->add_option("--compare", ev.compare, "Model files to compare in one table")->expected(2, -1);
  c_eval->add_option("--json", ev.json_out, "Write the reports as JSON");

  BenchOpts be;
  auto* c_bench = app.add_subcommand("bench", "Real-time factor of the streaming engine");
  c_bench->add_option("--model", be.model, "Model file (default: fresh desk model)");
  c_bench->add_option("--cond", be.mode, "Conditioning of the fresh model")->check(CLI::IsMember({"none", "film", "hypernet"}))->capture_default_str();
  add_gcn_flags(c_bench, be.gcn);
  c_bench->add_option("--duration", be.duration, "Seconds of audio")->capture_default_str();
  c_bench->add_option("--block", be.block, "Block size")->capture_default_str()->check(CLI::PositiveNumber);
  c_bench->add_option("--seed", be.seed)->capture_default_str();
  c_bench->add_option("--json", be.json_out, "Write the report");

  GradOpts gc;
  auto* c_grad = app.add_subcommand("gradcheck", "Finite-difference check of all gradients (64-bit)");
  c_grad->add_option("--seeds", gc.seeds)->capture_default_str()->check(CLI::PositiveNumber);
  c_grad->add_option("--threshold", gc.threshold)->capture_default_str()->check(CLI::PositiveNumber);

  RenderOpts rd;
  auto* c_render = app.add_subcommand("render", "Render clean audio in the tone of a reference recording");
  c_render->add_option("--model", rd.model, "Model file")->required();
  c_render->add_option("--clean", rd.clean, "Clean input WAV")->required();
  c_render->add_option("--reference", rd.reference, "Reference WAV carrying the tone (>= 0.5 s)");
  c_render->add_option("--out", rd.out, "Output WAV")->required();
  c_render->add_option("--target", rd.target, "Ground-truth WAV; prints the ESR");
  c_render->add_flag("--streaming", rd.streaming, "Use the block-based streaming engine");
  c_render->add_option("--block", rd.block, "Streaming block size")->capture_default_str()->check(CLI::PositiveNumber);
  c_render->add_option("--depth", rd.depth, "Output sample format")->transform(CLI::CheckedTransformer(kDepths))->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (c_synth->parsed()) return run_synth(synth);
    if (c_corpus->parsed()) return run_corpus(corpus);
    if (c_enc->parsed()) return run_train_encoder(enc);
    if (c_train->parsed()) return run_train(tr);
    if (c_eval->parsed()) return run_eval(ev);
    if (c_bench->parsed()) return run_bench(be);
    if (c_grad->parsed()) return run_gradcheck(gc);
    if (c_render->parsed()) return run_render(rd);
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kFormat;
  } catch (const NumericError& e) {
    std::cerr << "numeric fault: " << e.what() << "\n";
    return kNumeric;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
  return kUsage;
}
