#pragma once

// Synthetic amplifier tones for paired clean/wet corpora.
//
// chain: drive -> waveshaper -> 3-band peaking EQ -> cabinet FIR -> output gain
//        -> safety clip (transparent below 0.9, asymptotic to 0.99)

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hypertone/audio.hpp"
#include "hypertone/random.hpp"

namespace hypertone {

enum class ShaperKind { tanh, hard_clip, asymmetric };
std::string to_string(ShaperKind k);
ShaperKind parse_shaper(const std::string& s);

/// tanh:       tanh(g x) / tanh(g)
/// hard_clip:  clamp(g x, -1, 1)
/// asymmetric: tanh(g x) for x >= 0, tanh(g x p) / p for x < 0, p in (0, 1]
std::vector<float> waveshape(std::span<const float> x, ShaperKind kind, double drive, double param);

struct PeakingBand {
  double center_hz = 1000.0;
  double q = 0.707;
  double gain_db = 0.0;
  bool operator==(const PeakingBand&) const = default;
};

/// RBJ cookbook biquad, transposed direct form II with double state.
class Biquad {
 public:
  static Biquad peaking(double center_hz, double q, double gain_db, double sample_rate);

  float process(float x) {
    const double y = b0_ * x + s1_;
    s1_ = b1_ * x - a1_ * y + s2_;
    s2_ = b2_ * x - a2_ * y;
    return static_cast<float>(y);
  }
  void reset() { s1_ = s2_ = 0.0; }
  bool stable() const;
  /// |H(e^{jw})| at frequency f.
  double magnitude(double f, double sample_rate) const;

  double b0_ = 1, b1_ = 0, b2_ = 0, a1_ = 0, a2_ = 0;

 private:
  double s1_ = 0, s2_ = 0;
};

inline constexpr std::size_t kMaxCabTaps = 512;

struct CabBank {
  std::vector<std::vector<float>> irs;
};

/// Seeded synthetic cabinet responses: low-passed noise bursts with exponential
/// decay, unit energy, at most kMaxCabTaps taps.
CabBank default_cab_bank();
CabBank synthetic_cab_bank(std::size_t count, std::uint64_t seed);

struct TonePreset {
  int id = 0;
  double pre_gain_db = 0.0;
  ShaperKind shaper = ShaperKind::tanh;
  double shaper_param = 1.0;
  std::array<PeakingBand, 3> bands{PeakingBand{100.0, 0.707, 0.0}, PeakingBand{800.0, 0.707, 0.0},
                                   PeakingBand{4000.0, 0.707, 0.0}};
  int cab_ir_index = 0;
  double post_gain_db = 0.0;

  /// Throws ContractError when a parameter leaves its declared range or an EQ band is unstable.
  void validate(std::size_t cab_count) const;
  bool operator==(const TonePreset&) const = default;
};

struct PresetRanges {
  double pre_gain_db[2] = {0.0, 40.0};
  double shaper_param[2] = {0.5, 1.0};
  double centers[3][2] = {{80.0, 160.0}, {500.0, 1200.0}, {2500.0, 6000.0}};
  double q[2] = {0.5, 2.0};
  double band_gain_db[2] = {-12.0, 12.0};
  double post_gain_db[2] = {-12.0, 0.0};
};

float safety_clip(float x);

std::vector<float> tone_stack(std::span<const float> x, const TonePreset& preset, int sample_rate = kSampleRate);
std::vector<float> fir_causal(std::span<const float> x, std::span<const float> ir);

AudioBuffer render_preset(const AudioBuffer& clean, const TonePreset& preset, const CabBank& cabs);
AudioBuffer render_preset(const AudioBuffer& clean, const TonePreset& preset);

std::vector<TonePreset> sample_presets(int n, std::uint64_t seed, const PresetRanges& ranges = {},
                                       std::size_t cab_count = 8);

/// Seeded plucked-string guitar performance (single notes and strummed chords),
/// peak-normalised to 0.5.
AudioBuffer synthesize_performance(std::uint64_t seed, double seconds);

enum class Split { train, heldout_tone, heldout_content };
std::string to_string(Split s);
Split parse_split(const std::string& s);

struct ManifestEntry {
  std::string clean_path;  // relative to the manifest directory
  std::string wet_path;
  int preset_id = 0;
  int content_id = 0;
  Split split = Split::train;
};

struct CorpusManifest {
  std::uint64_t seed = 0;
  std::vector<TonePreset> presets;
  std::vector<std::string> clean_files;  // content_id indexes this list
  std::vector<ManifestEntry> entries;
  std::filesystem::path root;  // directory the relative paths resolve against

  const TonePreset& preset(int id) const;
  std::filesystem::path resolve(const std::string& rel) const { return root / rel; }
  std::vector<int> preset_ids(Split s) const;
  std::vector<ManifestEntry> entries_for(Split s) const;
  /// Throws ContractError if held-out tones leak into training.
  void validate() const;
};

struct SplitSpec {
  int heldout_presets = 8;
  int heldout_contents = 2;
};

/// Renders every (clean, preset) pair the split assigns: training presets over all
/// contents (held-out contents marked heldout_content) and held-out presets over the
/// held-out contents only. The last `heldout_presets` presets are held out.
CorpusManifest build_corpus(const std::vector<std::filesystem::path>& clean_files,
                            const std::vector<TonePreset>& presets, const SplitSpec& split,
                            const std::filesystem::path& out_dir, std::uint64_t seed = 0,
                            WavDepth depth = WavDepth::float32);

/// Line-delimited records: a header comment, then `seed`, `clean`, `preset` and
/// `entry` records with tab-separated fields (see docs/file_formats.md).
void write_manifest(const CorpusManifest& m, const std::filesystem::path& path);
CorpusManifest read_manifest(const std::filesystem::path& path);

/// Worker count from HYPERTONE_THREADS (default 1).
unsigned worker_threads();

}  // namespace hypertone
