#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "hypertone/random.hpp"

namespace testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "ht");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

std::vector<float> noise(std::size_t n, std::uint64_t seed, double amp = 0.5);
double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b);

/// Writes a WAV with caller-chosen format fields, independently of the library.
/// `frames` holds interleaved integer codes (PCM) or float bit patterns.
void write_raw_wav(const std::filesystem::path& p, int format_tag, int channels, int rate, int bits,
                   const std::vector<std::uint8_t>& data);
std::vector<std::uint8_t> pcm16_bytes(const std::vector<int16_t>& codes);
std::vector<std::uint8_t> pcm24_bytes(const std::vector<int32_t>& codes);
std::vector<std::uint8_t> float_bytes(const std::vector<float>& v);

std::string read_file(const std::filesystem::path& p);

/// Random block partition of n samples with blocks in [1, max_block].
std::vector<std::size_t> random_partition(std::size_t n, std::size_t max_block, hypertone::Rng& rng);

}  // namespace testing
