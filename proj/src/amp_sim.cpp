#include "hypertone/amp_sim.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <sstream>
#include <thread>

#include "hypertone/error.hpp"

namespace hypertone {
namespace {

double db_to_lin(double db) { return std::pow(10.0, db / 20.0); }

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw FormatError("manifest: bad number '" + s + "'");
  return v;
}

long long parse_int(const std::string& s) {
  char* end = nullptr;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0') throw FormatError("manifest: bad integer '" + s + "'");
  return v;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == '\t') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

void check_range(double v, const double (&r)[2], const char* what) {
  if (!(v >= r[0] && v <= r[1]))
    throw ContractError(std::string("TonePreset: ") + what + " = " + std::to_string(v) + " outside [" +
                        std::to_string(r[0]) + ", " + std::to_string(r[1]) + "]");
}

}  // namespace

std::string to_string(ShaperKind k) {
  switch (k) {
    case ShaperKind::tanh: return "tanh";
    case ShaperKind::hard_clip: return "hard_clip";
    case ShaperKind::asymmetric: return "asymmetric";
  }
  return "tanh";
}

ShaperKind parse_shaper(const std::string& s) {
  if (s == "tanh") return ShaperKind::tanh;
  if (s == "hard_clip") return ShaperKind::hard_clip;
  if (s == "asymmetric") return ShaperKind::asymmetric;
  throw FormatError("unknown shaper '" + s + "'");
}

std::vector<float> waveshape(std::span<const float> x, ShaperKind kind, double drive, double param) {
  require(drive > 0.0, "waveshape: drive must be positive");
  std::vector<float> y(x.size());
  switch (kind) {
    case ShaperKind::tanh: {
      const double norm = std::tanh(drive);
      for (std::size_t t = 0; t < x.size(); ++t) y[t] = static_cast<float>(std::tanh(drive * x[t]) / norm);
      break;
    }
    case ShaperKind::hard_clip:
      for (std::size_t t = 0; t < x.size(); ++t) y[t] = static_cast<float>(std::clamp(drive * x[t], -1.0, 1.0));
      break;
    case ShaperKind::asymmetric:
      require(param > 0.0 && param <= 1.0, "waveshape: asymmetric param must lie in (0, 1]");
      for (std::size_t t = 0; t < x.size(); ++t) {
        const double v = drive * x[t];
        y[t] = static_cast<float>(v >= 0.0 ? std::tanh(v) : std::tanh(v * param) / param);
      }
      break;
  }
  return y;
}

Biquad Biquad::peaking(double center_hz, double q, double gain_db, double sample_rate) {
  require(q > 0.0, "Biquad: Q must be positive");
  require(center_hz > 0.0 && center_hz < sample_rate / 2.0, "Biquad: centre frequency must lie below Nyquist");
  const double A = std::pow(10.0, gain_db / 40.0);
  const double w0 = 2.0 * std::numbers::pi * center_hz / sample_rate;
  const double alpha = std::sin(w0) / (2.0 * q);
  const double cw = std::cos(w0);
  const double a0 = 1.0 + alpha / A;
  Biquad f;
  f.b0_ = (1.0 + alpha * A) / a0;
  f.b1_ = (-2.0 * cw) / a0;
  f.b2_ = (1.0 - alpha * A) / a0;
  f.a1_ = (-2.0 * cw) / a0;
  f.a2_ = (1.0 - alpha / A) / a0;
  return f;
}

bool Biquad::stable() const {
  // Roots of z^2 + a1 z + a2 inside the unit circle.
  return std::abs(a2_) < 1.0 && std::abs(a1_) < 1.0 + a2_;
}

double Biquad::magnitude(double f, double sample_rate) const {
  const std::complex<double> z = std::polar(1.0, -2.0 * std::numbers::pi * f / sample_rate);
  const auto num = b0_ + b1_ * z + b2_ * z * z;
  const auto den = 1.0 + a1_ * z + a2_ * z * z;
  return std::abs(num / den);
}

CabBank synthetic_cab_bank(std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  CabBank bank;
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t taps = kMaxCabTaps;
    const double tau = rng.uniform(25.0, 100.0);
    const double fc = rng.uniform(2500.0, 6000.0);
    // RBJ low-pass, Q = 0.707.
    const double w0 = 2.0 * std::numbers::pi * fc / kSampleRate;
    const double alpha = std::sin(w0) / (2.0 * 0.707);
    const double cw = std::cos(w0), a0 = 1.0 + alpha;
    const double b0 = (1.0 - cw) / 2.0 / a0, b1 = (1.0 - cw) / a0, b2 = b0;
    const double a1 = -2.0 * cw / a0, a2 = (1.0 - alpha) / a0;
    std::vector<double> raw(taps);
    for (std::size_t n = 0; n < taps; ++n) raw[n] = rng.normal() * std::exp(-static_cast<double>(n) / tau);
    std::vector<float> ir(taps);
    double x1 = 0, x2 = 0, y1 = 0, y2 = 0, energy = 0;
    std::vector<double> filt(taps);
    for (std::size_t n = 0; n < taps; ++n) {
      const double y = b0 * raw[n] + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
      x2 = x1;
      x1 = raw[n];
      y2 = y1;
      y1 = y;
      filt[n] = y;
      energy += y * y;
    }
    const double g = 1.0 / std::sqrt(energy);
    for (std::size_t n = 0; n < taps; ++n) ir[n] = static_cast<float>(filt[n] * g);
    bank.irs.push_back(std::move(ir));
  }
  return bank;
}

CabBank default_cab_bank() {
  static const CabBank bank = synthetic_cab_bank(8, 2024);
  return bank;
}

void TonePreset::validate(std::size_t cab_count) const {
  const PresetRanges r;
  check_range(pre_gain_db, r.pre_gain_db, "pre_gain_db");
  if (shaper == ShaperKind::asymmetric && !(shaper_param > 0.0 && shaper_param <= 1.0))
    throw ContractError("TonePreset: asymmetric shaper_param must lie in (0, 1]");
  for (const auto& b : bands) {
    check_range(b.gain_db, r.band_gain_db, "band gain_db");
    if (!(b.q > 0.0)) throw ContractError("TonePreset: band Q must be positive");
    if (!(b.center_hz > 0.0 && b.center_hz < kSampleRate / 2.0))
      throw ContractError("TonePreset: band centre must lie below Nyquist");
    if (!Biquad::peaking(b.center_hz, b.q, b.gain_db, kSampleRate).stable())
      throw ContractError("TonePreset: unstable EQ band");
  }
  if (cab_ir_index < 0 || static_cast<std::size_t>(cab_ir_index) >= cab_count)
    throw ContractError("TonePreset: cab_ir_index out of range");
  if (!std::isfinite(post_gain_db) || post_gain_db > 24.0 || post_gain_db < -60.0)
    throw ContractError("TonePreset: post_gain_db out of range");
}

float safety_clip(float x) {
  constexpr double knee = 0.9, ceiling = 0.99, span = ceiling - knee;
  const double a = std::abs(static_cast<double>(x));
  if (a <= knee) return x;
  return static_cast<float>(std::copysign(knee + span * std::tanh((a - knee) / span), static_cast<double>(x)));
}

std::vector<float> tone_stack(std::span<const float> x, const TonePreset& preset, int sample_rate) {
  std::vector<float> y(x.begin(), x.end());
  for (const auto& b : preset.bands) {
    Biquad f = Biquad::peaking(b.center_hz, b.q, b.gain_db, sample_rate);
    if (!f.stable()) throw ContractError("tone_stack: unstable EQ band");
    for (float& v : y) v = f.process(v);
  }
  return y;
}

std::vector<float> fir_causal(std::span<const float> x, std::span<const float> ir) {
  const std::size_t L = ir.size(), n = x.size();
  if (L == 0) return std::vector<float>(n, 0.0f);
  std::vector<float> padded(L - 1 + n, 0.0f);
  std::copy(x.begin(), x.end(), padded.begin() + static_cast<std::ptrdiff_t>(L - 1));
  std::vector<float> rev(ir.rbegin(), ir.rend());
  std::vector<float> y(n);
  for (std::size_t t = 0; t < n; ++t) {
    const float* w = padded.data() + t;
    float acc = 0.0f;
    for (std::size_t j = 0; j < L; ++j) acc += rev[j] * w[j];
    y[t] = acc;
  }
  return y;
}

AudioBuffer render_preset(const AudioBuffer& clean, const TonePreset& preset, const CabBank& cabs) {
  preset.validate(cabs.irs.size());
  clean.validate();
  auto shaped = waveshape(clean.samples, preset.shaper, db_to_lin(preset.pre_gain_db), preset.shaper_param);
  auto eq = tone_stack(shaped, preset, clean.sample_rate);
  auto cab = fir_causal(eq, cabs.irs.at(static_cast<std::size_t>(preset.cab_ir_index)));
  const double post = db_to_lin(preset.post_gain_db);
  AudioBuffer out;
  out.sample_rate = clean.sample_rate;
  out.samples.resize(cab.size());
  for (std::size_t t = 0; t < cab.size(); ++t) out.samples[t] = safety_clip(static_cast<float>(cab[t] * post));
  return out;
}

AudioBuffer render_preset(const AudioBuffer& clean, const TonePreset& preset) {
  return render_preset(clean, preset, default_cab_bank());
}

std::vector<TonePreset> sample_presets(int n, std::uint64_t seed, const PresetRanges& r, std::size_t cab_count) {
  require(n >= 2, "sample_presets: n must be >= 2");
  Rng rng(seed);
  std::vector<TonePreset> out;
  for (int k = 0; k < n; ++k) {
    TonePreset p;
    p.id = k;
    p.pre_gain_db = rng.uniform(r.pre_gain_db[0], r.pre_gain_db[1]);
    p.shaper = static_cast<ShaperKind>(rng.index(3));
    p.shaper_param = rng.uniform(r.shaper_param[0], r.shaper_param[1]);
    for (int b = 0; b < 3; ++b) {
      p.bands[b].center_hz = rng.uniform(r.centers[b][0], r.centers[b][1]);
      p.bands[b].q = rng.uniform(r.q[0], r.q[1]);
      p.bands[b].gain_db = rng.uniform(r.band_gain_db[0], r.band_gain_db[1]);
    }
    p.cab_ir_index = static_cast<int>(rng.index(cab_count));
    p.post_gain_db = rng.uniform(r.post_gain_db[0], r.post_gain_db[1]);
    out.push_back(p);
  }
  return out;
}

AudioBuffer synthesize_performance(std::uint64_t seed, double seconds) {
  require(seconds > 0.0, "synthesize_performance: duration must be positive");
  Rng rng(seed);
  const auto total = static_cast<std::size_t>(seconds * kSampleRate);
  std::vector<double> mix(total, 0.0);

  auto pluck = [&](double start_s, double midi, double dur_s, double velocity, double brightness) {
    const double f0 = 440.0 * std::pow(2.0, (midi - 69.0) / 12.0);
    const auto period = static_cast<std::size_t>(std::lround(kSampleRate / f0));
    const auto start = static_cast<std::size_t>(start_s * kSampleRate);
    const auto sustain = static_cast<std::size_t>(dur_s * kSampleRate);
    const std::size_t len = sustain + kSampleRate / 4;
    std::vector<double> exc(period);
    double lp = 0.0, mean = 0.0;
    for (auto& e : exc) {
      lp += brightness * (rng.uniform(-1.0, 1.0) - lp);
      e = lp;
      mean += lp;
    }
    mean /= static_cast<double>(period);
    std::vector<double> y(len, 0.0);
    for (std::size_t n = 0; n < len; ++n) {
      const double fb_gain = n < sustain ? 0.996 : 0.94;
      double v = n < period ? velocity * (exc[n] - mean) : 0.0;
      if (n >= period + 1) v += fb_gain * 0.5 * (y[n - period] + y[n - period - 1]);
      else if (n >= period) v += fb_gain * 0.5 * y[n - period];
      y[n] = v;
      if (start + n < total) mix[start + n] += v;
    }
  };

  static constexpr int kChords[3][4] = {{0, 7, 12, -1}, {0, 4, 7, 12}, {0, 3, 7, 12}};
  double t = 0.05;
  while (t < seconds - 0.1) {
    const double dur = rng.uniform(0.12, 0.6);
    const double velocity = rng.uniform(0.4, 1.0);
    const double brightness = rng.uniform(0.2, 0.8);
    if (rng.uniform() < 0.7) {
      pluck(t, 40.0 + static_cast<double>(rng.index(37)), dur, velocity, brightness);
    } else {
      const auto& shape = kChords[rng.index(3)];
      const double root = 40.0 + static_cast<double>(rng.index(16));
      const double strum = rng.uniform(0.008, 0.025);
      for (int s = 0; s < 4 && shape[s] >= 0; ++s) pluck(t + s * strum, root + shape[s], dur, velocity * 0.7, brightness);
    }
    t += dur + rng.uniform(0.0, 0.15);
  }

  AudioBuffer out;
  out.samples.resize(total);
  for (std::size_t n = 0; n < total; ++n) out.samples[n] = static_cast<float>(mix[n]);
  return peak(out.samples) > 0.0f ? peak_normalize(out, 0.5f) : out;
}

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::heldout_tone: return "heldout_tone";
    case Split::heldout_content: return "heldout_content";
  }
  return "train";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "heldout_tone") return Split::heldout_tone;
  if (s == "heldout_content") return Split::heldout_content;
  throw FormatError("unknown split '" + s + "'");
}

const TonePreset& CorpusManifest::preset(int id) const {
  for (const auto& p : presets)
    if (p.id == id) return p;
  throw ContractError("manifest: unknown preset id " + std::to_string(id));
}

std::vector<int> CorpusManifest::preset_ids(Split s) const {
  std::vector<int> ids;
  for (const auto& e : entries)
    if (e.split == s && std::find(ids.begin(), ids.end(), e.preset_id) == ids.end()) ids.push_back(e.preset_id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<ManifestEntry> CorpusManifest::entries_for(Split s) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries)
    if (e.split == s) out.push_back(e);
  return out;
}

void CorpusManifest::validate() const {
  const auto train = preset_ids(Split::train);
  for (int id : preset_ids(Split::heldout_tone))
    if (std::binary_search(train.begin(), train.end(), id))
      throw ContractError("manifest: held-out tone " + std::to_string(id) + " also appears in training");
  for (std::size_t a = 0; a < presets.size(); ++a)
    for (std::size_t b = a + 1; b < presets.size(); ++b)
      if (presets[a].id == presets[b].id) throw ContractError("manifest: duplicate preset id");
}

unsigned worker_threads() {
  if (const char* env = std::getenv("HYPERTONE_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<unsigned>(std::min(v, 256L));
  }
  return 1;
}

CorpusManifest build_corpus(const std::vector<std::filesystem::path>& clean_files,
                            const std::vector<TonePreset>& presets, const SplitSpec& split,
                            const std::filesystem::path& out_dir, std::uint64_t seed, WavDepth depth) {
  namespace fs = std::filesystem;
  require(clean_files.size() >= 2, "build_corpus: need at least two clean files");
  require(presets.size() >= 2, "build_corpus: need at least two presets");
  require(split.heldout_presets >= 0 && static_cast<std::size_t>(split.heldout_presets) < presets.size(),
          "build_corpus: held-out preset count must leave training presets");
  require(split.heldout_contents >= 0 && static_cast<std::size_t>(split.heldout_contents) < clean_files.size(),
          "build_corpus: held-out content count must leave training content");
  const CabBank cabs = default_cab_bank();
  for (const auto& p : presets) p.validate(cabs.irs.size());

  std::error_code ec;
  fs::create_directories(out_dir / "clean", ec);
  fs::create_directories(out_dir / "wet", ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  CorpusManifest m;
  m.seed = seed;
  m.presets = presets;
  m.root = out_dir;
  std::vector<AudioBuffer> clean;
  for (std::size_t c = 0; c < clean_files.size(); ++c) {
    clean.push_back(read_wav(clean_files[c]));
    char name[32];
    std::snprintf(name, sizeof name, "clean/c%02zu.wav", c);
    write_wav(out_dir / name, clean.back(), WavDepth::float32);
    m.clean_files.emplace_back(name);
  }

  const std::size_t n_clean = clean.size();
  const std::size_t first_heldout_content = n_clean - static_cast<std::size_t>(split.heldout_contents);
  const std::size_t first_heldout_preset = presets.size() - static_cast<std::size_t>(split.heldout_presets);
  for (std::size_t p = 0; p < presets.size(); ++p) {
    for (std::size_t c = 0; c < n_clean; ++c) {
      const bool tone_out = p >= first_heldout_preset, content_out = c >= first_heldout_content;
      if (tone_out && !content_out) continue;
      char name[48];
      std::snprintf(name, sizeof name, "wet/p%03d_c%02zu.wav", presets[p].id, c);
      m.entries.push_back({m.clean_files[c], name, presets[p].id, static_cast<int>(c),
                           tone_out ? Split::heldout_tone : (content_out ? Split::heldout_content : Split::train)});
    }
  }
  m.validate();

  const unsigned workers = std::max(1u, std::min<unsigned>(worker_threads(), static_cast<unsigned>(m.entries.size())));
  std::vector<std::exception_ptr> errors(workers);
  auto work = [&](unsigned w) {
    try {
      for (std::size_t k = w; k < m.entries.size(); k += workers) {
        const auto& e = m.entries[k];
        const auto wet = render_preset(clean[static_cast<std::size_t>(e.content_id)], m.preset(e.preset_id), cabs);
        write_wav(out_dir / e.wet_path, wet, depth);
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  write_manifest(m, out_dir / "manifest.tsv");
  return m;
}

void write_manifest(const CorpusManifest& m, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "# hypertone corpus manifest v1\n";
  os << "seed\t" << m.seed << "\n";
  for (std::size_t c = 0; c < m.clean_files.size(); ++c) os << "clean\t" << c << "\t" << m.clean_files[c] << "\n";
  for (const auto& p : m.presets) {
    os << "preset\t" << p.id << "\t" << fmt_double(p.pre_gain_db) << "\t" << to_string(p.shaper) << "\t"
       << fmt_double(p.shaper_param);
    for (const auto& b : p.bands)
      os << "\t" << fmt_double(b.center_hz) << "\t" << fmt_double(b.q) << "\t" << fmt_double(b.gain_db);
    os << "\t" << p.cab_ir_index << "\t" << fmt_double(p.post_gain_db) << "\n";
  }
  for (const auto& e : m.entries)
    os << "entry\t" << e.clean_path << "\t" << e.wet_path << "\t" << e.preset_id << "\t" << e.content_id << "\t"
       << to_string(e.split) << "\n";
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << os.str();
  if (!f) throw IoError("write failed: " + path.string());
}

CorpusManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open manifest " + path.string());
  CorpusManifest m;
  m.root = path.parent_path();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split_tabs(line);
    const auto& kind = fields[0];
    auto need = [&](std::size_t n) {
      if (fields.size() != n)
        throw FormatError(path.string() + ":" + std::to_string(line_no) + ": '" + kind + "' record needs " +
                          std::to_string(n) + " fields");
    };
    if (kind == "seed") {
      need(2);
      m.seed = static_cast<std::uint64_t>(std::stoull(fields[1]));
    } else if (kind == "clean") {
      need(3);
      if (static_cast<std::size_t>(parse_int(fields[1])) != m.clean_files.size())
        throw FormatError(path.string() + ": clean records must be numbered in order");
      m.clean_files.push_back(fields[2]);
    } else if (kind == "preset") {
      need(16);
      TonePreset p;
      p.id = static_cast<int>(parse_int(fields[1]));
      p.pre_gain_db = parse_double(fields[2]);
      p.shaper = parse_shaper(fields[3]);
      p.shaper_param = parse_double(fields[4]);
      for (int b = 0; b < 3; ++b) {
        p.bands[b].center_hz = parse_double(fields[5 + 3 * b]);
        p.bands[b].q = parse_double(fields[6 + 3 * b]);
        p.bands[b].gain_db = parse_double(fields[7 + 3 * b]);
      }
      p.cab_ir_index = static_cast<int>(parse_int(fields[14]));
      p.post_gain_db = parse_double(fields[15]);
      m.presets.push_back(p);
    } else if (kind == "entry") {
      need(6);
      m.entries.push_back({fields[1], fields[2], static_cast<int>(parse_int(fields[3])),
                           static_cast<int>(parse_int(fields[4])), parse_split(fields[5])});
    } else {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": unknown record '" + kind + "'");
    }
  }
  m.validate();
  return m;
}

}  // namespace hypertone
