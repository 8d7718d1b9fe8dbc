#include "helpers.hpp"

#include <atomic>
#include <cstring>
#include <sstream>
#include <unistd.h>

namespace testing {

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

std::vector<float> noise(std::size_t n, std::uint64_t seed, double amp) {
  hypertone::Rng rng(seed);
  std::vector<float> x(n);
  for (auto& v : x) v = static_cast<float>(rng.uniform(-amp, amp));
  return x;
}

double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(static_cast<double>(a[k]) - b[k]));
  return m;
}

namespace {
void le(std::string& s, std::uint32_t v, int bytes) {
  for (int k = 0; k < bytes; ++k) s.push_back(static_cast<char>((v >> (8 * k)) & 0xFF));
}
}  // namespace

void write_raw_wav(const std::filesystem::path& p, int format_tag, int channels, int rate, int bits,
                   const std::vector<std::uint8_t>& data) {
  std::string s = "RIFF";
  le(s, static_cast<std::uint32_t>(36 + data.size()), 4);
  s += "WAVEfmt ";
  le(s, 16, 4);
  le(s, static_cast<std::uint32_t>(format_tag), 2);
  le(s, static_cast<std::uint32_t>(channels), 2);
  le(s, static_cast<std::uint32_t>(rate), 4);
  le(s, static_cast<std::uint32_t>(rate * channels * bits / 8), 4);
  le(s, static_cast<std::uint32_t>(channels * bits / 8), 2);
  le(s, static_cast<std::uint32_t>(bits), 2);
  s += "data";
  le(s, static_cast<std::uint32_t>(data.size()), 4);
  s.append(reinterpret_cast<const char*>(data.data()), data.size());
  std::ofstream(p, std::ios::binary).write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::vector<std::uint8_t> pcm16_bytes(const std::vector<int16_t>& codes) {
  std::vector<std::uint8_t> b;
  for (int16_t c : codes) {
    const auto u = static_cast<std::uint16_t>(c);
    b.push_back(u & 0xFF);
    b.push_back(u >> 8);
  }
  return b;
}

std::vector<std::uint8_t> pcm24_bytes(const std::vector<int32_t>& codes) {
  std::vector<std::uint8_t> b;
  for (int32_t c : codes) {
    const auto u = static_cast<std::uint32_t>(c);
    b.push_back(u & 0xFF);
    b.push_back((u >> 8) & 0xFF);
    b.push_back((u >> 16) & 0xFF);
  }
  return b;
}

std::vector<std::uint8_t> float_bytes(const std::vector<float>& v) {
  std::vector<std::uint8_t> b(v.size() * 4);
  std::memcpy(b.data(), v.data(), b.size());
  return b;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::vector<std::size_t> random_partition(std::size_t n, std::size_t max_block, hypertone::Rng& rng) {
  std::vector<std::size_t> parts;
  std::size_t left = n;
  while (left > 0) {
    const std::size_t b = std::min<std::size_t>(left, 1 + rng.index(max_block));
    parts.push_back(b);
    left -= b;
  }
  return parts;
}

}  // namespace testing
