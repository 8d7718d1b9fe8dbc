#include "hypertone/audio.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "hypertone/error.hpp"
#include "hypertone/log.hpp"

namespace hypertone {
namespace {

static_assert(std::endian::native == std::endian::little, "WAV I/O assumes a little-endian host");

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

template <class T>
T load_le(const unsigned char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

template <class T>
void put_le(std::string& out, T v) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  out.append(bytes, sizeof(T));
}

struct FmtChunk {
  std::uint16_t format = 0;
  std::uint16_t channels = 0;
  std::uint32_t rate = 0;
  std::uint16_t bits = 0;
};

}  // namespace

void AudioBuffer::validate() const {
  if (sample_rate <= 0) throw ContractError("AudioBuffer: sample rate must be positive");
  for (float s : samples)
    if (!std::isfinite(s)) throw ContractError("AudioBuffer: non-finite sample");
}

AudioBuffer read_wav(const std::filesystem::path& path, int expected_rate) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  const auto fail = [&](const std::string& why) -> FormatError {
    return FormatError(path.string() + ": " + why);
  };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw fail("not a RIFF/WAVE file");

  FmtChunk fmt;
  bool have_fmt = false;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* hdr = bytes.data() + pos;
    const auto chunk_size = load_le<std::uint32_t>(hdr + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = std::min<std::size_t>(chunk_size, bytes.size() - body);
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (avail < 16) throw fail("truncated fmt chunk");
      fmt.format = load_le<std::uint16_t>(bytes.data() + body);
      fmt.channels = load_le<std::uint16_t>(bytes.data() + body + 2);
      fmt.rate = load_le<std::uint32_t>(bytes.data() + body + 4);
      fmt.bits = load_le<std::uint16_t>(bytes.data() + body + 14);
      if (fmt.format == kFormatExtensible) {
        if (avail < 26) throw fail("truncated extensible fmt chunk");
        fmt.format = load_le<std::uint16_t>(bytes.data() + body + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data = bytes.data() + body;
      data_size = avail;
    }
    pos = body + chunk_size + (chunk_size & 1u);
  }
  if (!have_fmt) throw fail("missing fmt chunk");
  if (data == nullptr) throw fail("missing data chunk");
  if (fmt.channels != 1 && fmt.channels != 2) throw fail("only mono or stereo is supported");

  const bool pcm16 = fmt.format == kFormatPcm && fmt.bits == 16;
  const bool pcm24 = fmt.format == kFormatPcm && fmt.bits == 24;
  const bool f32 = fmt.format == kFormatFloat && fmt.bits == 32;
  if (!pcm16 && !pcm24 && !f32)
    throw fail("unsupported codec (format " + std::to_string(fmt.format) + ", " +
               std::to_string(fmt.bits) + " bits)");
  if (static_cast<int>(fmt.rate) != expected_rate)
    throw RateMismatchError(path.string() + ": sample rate " + std::to_string(fmt.rate) +
                            " Hz, expected " + std::to_string(expected_rate) + " Hz");

  const std::size_t bytes_per_sample = fmt.bits / 8;
  const std::size_t frame_bytes = bytes_per_sample * fmt.channels;
  const std::size_t frames = data_size / frame_bytes;

  const auto decode = [&](const unsigned char* p) -> double {
    if (pcm16) return load_le<std::int16_t>(p) / 32768.0;
    if (pcm24) {
      std::int32_t v = static_cast<std::int32_t>(p[0]) | (static_cast<std::int32_t>(p[1]) << 8) |
                       (static_cast<std::int32_t>(p[2]) << 16);
      if (v & 0x800000) v -= 0x1000000;
      return v / 8388608.0;
    }
    return load_le<float>(p);
  };

  AudioBuffer out;
  out.sample_rate = static_cast<int>(fmt.rate);
  out.samples.resize(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    const unsigned char* p = data + f * frame_bytes;
    if (fmt.channels == 1) {
      out.samples[f] = static_cast<float>(decode(p));
    } else {
      out.samples[f] = static_cast<float>(0.5 * (decode(p) + decode(p + bytes_per_sample)));
    }
  }
  for (float s : out.samples)
    if (!std::isfinite(s)) throw fail("non-finite sample");
  return out;
}

std::size_t write_wav(const std::filesystem::path& path, const AudioBuffer& buf, WavDepth depth) {
  buf.validate();
  const std::uint16_t bits = depth == WavDepth::pcm16 ? 16 : 32;
  const std::uint16_t format = depth == WavDepth::pcm16 ? kFormatPcm : kFormatFloat;
  const std::uint32_t block_align = bits / 8;
  const auto data_bytes = static_cast<std::uint32_t>(buf.size() * block_align);

  std::string out;
  out.reserve(44 + data_bytes);
  out.append("RIFF");
  put_le<std::uint32_t>(out, 36 + data_bytes);
  out.append("WAVEfmt ");
  put_le<std::uint32_t>(out, 16);
  put_le<std::uint16_t>(out, format);
  put_le<std::uint16_t>(out, 1);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(buf.sample_rate));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(buf.sample_rate) * block_align);
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(block_align));
  put_le<std::uint16_t>(out, bits);
  out.append("data");
  put_le<std::uint32_t>(out, data_bytes);

  std::size_t clipped = 0;
  if (depth == WavDepth::pcm16) {
    for (float s : buf.samples) {
      long code = std::lround(static_cast<double>(s) * 32768.0);
      if (code > 32767 || code < -32768) {
        ++clipped;
        code = std::clamp(code, -32768L, 32767L);
      }
      put_le<std::int16_t>(out, static_cast<std::int16_t>(code));
    }
  } else {
    for (float s : buf.samples) put_le<float>(out, s);
  }

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("cannot open " + path.string() + " for writing");
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw IoError("write failed: " + path.string());
  if (clipped > 0)
    warn(path.string() + ": " + std::to_string(clipped) + " sample(s) clipped to the PCM16 range");
  return clipped;
}

float peak(std::span<const float> x) {
  float p = 0.0f;
  for (float s : x) p = std::max(p, std::abs(s));
  return p;
}

AudioBuffer peak_normalize(const AudioBuffer& buf, float target_peak) {
  require(target_peak > 0.0f && target_peak <= 1.0f, "peak_normalize: target_peak must lie in (0, 1]");
  const float p = peak(buf.samples);
  if (p == 0.0f || p == target_peak) return buf;
  const double scale = static_cast<double>(target_peak) / p;
  AudioBuffer out = buf;
  for (float& s : out.samples) {
    // Pin the peak sample(s) so the post-condition holds exactly.
    s = std::abs(s) == p ? std::copysign(target_peak, s) : static_cast<float>(s * scale);
  }
  return out;
}

}  // namespace hypertone
