#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace hypertone {

/// Every corpus clip and every model works at this single rate.
inline constexpr int kSampleRate = 44100;

/// Mono audio with its sample rate.
struct AudioBuffer {
  std::vector<float> samples;
  int sample_rate = kSampleRate;

  AudioBuffer() = default;
  explicit AudioBuffer(std::vector<float> s, int rate = kSampleRate)
      : samples(std::move(s)), sample_rate(rate) {}

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  double duration_s() const { return static_cast<double>(samples.size()) / sample_rate; }
  std::span<const float> view() const { return samples; }

  /// Throws ContractError if any sample is non-finite or the rate is not positive.
  void validate() const;
};

enum class WavDepth { pcm16, float32 };

/// Reads RIFF/WAVE PCM16, PCM24 or float32, mono or stereo (averaged to mono).
/// Rejects files whose rate differs from `expected_rate`; there is no resampling.
AudioBuffer read_wav(const std::filesystem::path& path, int expected_rate = kSampleRate);

/// Writes a mono file. PCM16 samples outside [-1, 1) are clipped with a warning.
/// Returns the number of clipped samples.
std::size_t write_wav(const std::filesystem::path& path, const AudioBuffer& buf,
                      WavDepth depth = WavDepth::float32);

/// Scales so that max |x| == target_peak. Silent input is returned unchanged.
AudioBuffer peak_normalize(const AudioBuffer& buf, float target_peak);

float peak(std::span<const float> x);

}  // namespace hypertone
