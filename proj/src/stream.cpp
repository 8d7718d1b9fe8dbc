#include "hypertone/stream.hpp"
#include "hypertone/audio.hpp"

#include <algorithm>
#include <chrono>
#include <cstring>
#include <nlohmann/json.hpp>

namespace hypertone {

HistoryRing::HistoryRing(std::size_t channels, std::size_t capacity)
    : channels_(channels), capacity_(capacity), data_(channels * capacity, 0.0f) {}

void HistoryRing::gather(std::size_t channel, std::size_t delay, const float* block, std::size_t n,
                         float* dst) const {
  const std::size_t from_ring = std::min(delay, n);
  if (from_ring > 0) {
    const float* row = data_.data() + channel * capacity_;
    // Sample with age `delay` sits at write_pos - delay (mod capacity).
    std::size_t start = (write_pos_ + capacity_ - delay) % capacity_;
    const std::size_t first = std::min(from_ring, capacity_ - start);
    std::memcpy(dst, row + start, first * sizeof(float));
    if (first < from_ring) std::memcpy(dst + first, row, (from_ring - first) * sizeof(float));
  }
  if (n > from_ring) std::memcpy(dst + from_ring, block, (n - from_ring) * sizeof(float));
}

void HistoryRing::push(const float* rows, std::size_t stride, std::size_t n) {
  if (capacity_ == 0) return;
  const std::size_t keep = std::min(n, capacity_);
  const std::size_t skip = n - keep;
  for (std::size_t c = 0; c < channels_; ++c) {
    float* row = data_.data() + c * capacity_;
    const float* src = rows + c * stride + skip;
    std::size_t pos = write_pos_;
    const std::size_t first = std::min(keep, capacity_ - pos);
    std::memcpy(row + pos, src, first * sizeof(float));
    if (first < keep) std::memcpy(row, src + first, (keep - first) * sizeof(float));
  }
  write_pos_ = (write_pos_ + keep) % capacity_;
}

std::vector<float> HistoryRing::contents(std::size_t channel) const {
  std::vector<float> out(capacity_);
  for (std::size_t a = 0; a < capacity_; ++a)
    out[a] = data_[channel * capacity_ + (write_pos_ + a) % capacity_];
  return out;
}

void HistoryRing::clear() {
  std::fill(data_.begin(), data_.end(), 0.0f);
  write_pos_ = 0;
}

namespace {

bool same_shapes(const ConvLayer<float>& a, const ConvLayer<float>& b) {
  return a.weight.shape == b.weight.shape && a.bias.shape == b.bias.shape && a.dilation == b.dilation;
}

void check_compatible(const BakedWeights& ref, const BakedWeights& other) {
  const auto& a = ref.params;
  const auto& b = other.params;
  bool ok = a.blocks.size() == b.blocks.size() && same_shapes(a.input_proj, b.input_proj) &&
            same_shapes(a.output_head, b.output_head) && ref.film.has_value() == other.film.has_value();
  for (std::size_t k = 0; ok && k < a.blocks.size(); ++k)
    ok = same_shapes(a.blocks[k].dilated, b.blocks[k].dilated) &&
         same_shapes(a.blocks[k].residual, b.blocks[k].residual) && same_shapes(a.blocks[k].skip, b.blocks[k].skip);
  if (ok && ref.film)
    for (std::size_t k = 0; ok && k < ref.film->gamma.size(); ++k)
      ok = ref.film->gamma[k].size() == other.film->gamma[k].size() &&
           ref.film->beta[k].size() == other.film->beta[k].size();
  if (!ok) throw ContractError("set_tone: weights do not match the processor's model shape");
}

inline bool rows_finite(const float* x, std::size_t n) {
  float acc = 0.0f;
  for (std::size_t k = 0; k < n; ++k) acc += x[k] * 0.0f;
  return acc == 0.0f;
}

}  // namespace

StreamProcessor::StreamProcessor(const BakedWeights& baked, std::size_t block_size)
    : config_(baked.config),
      block_size_(block_size),
      channels_(static_cast<std::size_t>(baked.config.channels)),
      skip_channels_(static_cast<std::size_t>(baked.config.skip_channels)),
      kernel_(static_cast<std::size_t>(baked.config.kernel_size)) {
  if (block_size == 0) throw ContractError("init_stream: block_size must be >= 1");
  if (baked.params.blocks.size() != static_cast<std::size_t>(config_.num_blocks))
    throw ContractError("init_stream: weights do not match the configuration");
  for (auto& s : slots_) s = baked;
  for (const auto& b : baked.params.blocks) {
    dilations_.push_back(b.dilated.dilation);
    rings_.emplace_back(channels_, b.dilated.pad());
  }
  const std::size_t B = block_size_, C = channels_, S = skip_channels_;
  r_cur_.assign(C * B, 0.0f);
  r_next_.assign(C * B, 0.0f);
  z_.assign(2 * C * B, 0.0f);
  h_.assign(C * B, 0.0f);
  h_mod_.assign(C * B, 0.0f);
  tmp_.assign(std::max(C, S) * B, 0.0f);
  skip_sum_.assign(S * B, 0.0f);
  relu_.assign(S * B, 0.0f);
  gathered_.assign(C * kernel_ * B, 0.0f);
  taps_.assign(std::max(C * kernel_, S), nullptr);
}

void StreamProcessor::set_tone(const BakedWeights& baked) {
  check_compatible(slots_[back_], baked);
  slots_[back_] = baked;
  const std::uint8_t prev = middle_.exchange(static_cast<std::uint8_t>(back_ | kFresh), std::memory_order_acq_rel);
  back_ = prev & 0x3;
}

void StreamProcessor::acquire_pending() {
  if ((middle_.load(std::memory_order_acquire) & kFresh) == 0) return;
  const std::uint8_t prev = middle_.exchange(front_, std::memory_order_acq_rel);
  front_ = prev & 0x3;
}

void StreamProcessor::reset() {
  for (auto& r : rings_) r.clear();
}

void StreamProcessor::process_block(std::span<const float> input, std::span<float> output) {
  const std::size_t n = input.size();
  if (n > block_size_ || output.size() < n) throw ContractError("process_block: block larger than block_size");
  last_partial_ = n < block_size_;
  if (n == 0) return;
  acquire_pending();
  const BakedWeights& w = slots_[front_];
  const GcnParams<float>& p = w.params;
  const std::size_t B = block_size_, C = channels_, S = skip_channels_, K = kernel_;

  // Rows are laid out with stride B so scratch never needs resizing.
  const float* in_ptr = input.data();
  kernel::conv_rows(p.input_proj.weight.data(), p.input_proj.bias.data(), C, 1, 1, &in_ptr, n, r_cur_.data(), B);
  std::fill(skip_sum_.begin(), skip_sum_.end(), 0.0f);

  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    const GcnBlock<float>& blk = p.blocks[b];
    const std::size_t d = dilations_[b];
    HistoryRing& ring = rings_[b];
    for (std::size_t i = 0; i < C; ++i) {
      const float* row = r_cur_.data() + i * B;
      for (std::size_t j = 0; j < K; ++j) {
        const std::size_t delay = d * (K - 1 - j);
        if (delay == 0) {
          taps_[i * K + j] = row;
        } else {
          float* dst = gathered_.data() + (i * K + j) * B;
          ring.gather(i, delay, row, n, dst);
          taps_[i * K + j] = dst;
        }
      }
    }
    kernel::conv_rows(blk.dilated.weight.data(), blk.dilated.bias.data(), 2 * C, C, K, taps_.data(), n, z_.data(), B);
    for (std::size_t c = 0; c < C; ++c)
      kernel::gated_rows<float>(z_.data() + c * B, z_.data() + (C + c) * B, n, h_.data() + c * B, nullptr, nullptr);

    const float* h_out = h_.data();
    if (w.film) {
      for (std::size_t c = 0; c < C; ++c) {
        const float g = w.film->gamma[b][c], be = w.film->beta[b][c];
        const float* src = h_.data() + c * B;
        float* dst = h_mod_.data() + c * B;
        for (std::size_t t = 0; t < n; ++t) dst[t] = g * src[t] + be;
      }
      h_out = h_mod_.data();
    }

    for (std::size_t i = 0; i < C; ++i) taps_[i] = h_out + i * B;
    kernel::conv_rows(blk.skip.weight.data(), blk.skip.bias.data(), S, C, 1, taps_.data(), n, tmp_.data(), B);
    for (std::size_t s = 0; s < S; ++s) {
      float* acc = skip_sum_.data() + s * B;
      const float* add = tmp_.data() + s * B;
      for (std::size_t t = 0; t < n; ++t) acc[t] += add[t];
    }

    ring.push(r_cur_.data(), B, n);

    if (b + 1 < p.blocks.size()) {
      for (std::size_t i = 0; i < C; ++i) taps_[i] = h_out + i * B;
      kernel::conv_rows(blk.residual.weight.data(), blk.residual.bias.data(), C, C, 1, taps_.data(), n, tmp_.data(),
                        B);
      for (std::size_t c = 0; c < C; ++c) {
        const float* src = r_cur_.data() + c * B;
        const float* add = tmp_.data() + c * B;
        float* dst = r_next_.data() + c * B;
        for (std::size_t t = 0; t < n; ++t) dst[t] = src[t] + add[t];
      }
      bool finite = true;
      for (std::size_t c = 0; c < C && finite; ++c) finite = rows_finite(r_next_.data() + c * B, n);
      if (!finite) throw NumericError("stream engine fault: non-finite activations after block " + std::to_string(b));
      r_cur_.swap(r_next_);
    }
  }

  for (std::size_t s = 0; s < S; ++s) {
    const float* src = skip_sum_.data() + s * B;
    float* dst = relu_.data() + s * B;
    for (std::size_t t = 0; t < n; ++t) dst[t] = src[t] > 0.0f ? src[t] : 0.0f;
    taps_[s] = dst;
  }
  kernel::conv_rows(p.output_head.weight.data(), p.output_head.bias.data(), 1, S, 1, taps_.data(), n, output.data(),
                    B);
  if (!rows_finite(output.data(), n)) throw NumericError("stream engine fault: non-finite output at output_head");
}

BakedWeights bake(const ConditionedGenerator<float>& model, const ToneEmbedding* phi) {
  if (phi == nullptr) return model.bake_unconditioned();
  return model.bake(std::span<const float>(phi->vector), phi->fingerprint());
}

std::unique_ptr<StreamProcessor> init_stream(const ConditionedGenerator<float>& model, const ToneEmbedding* phi,
                                             std::size_t block_size) {
  return std::make_unique<StreamProcessor>(bake(model, phi), block_size);
}

std::vector<float> render_partitioned(const BakedWeights& baked, std::span<const float> x,
                                      std::span<const std::size_t> block_lengths) {
  std::size_t max_len = 1;
  for (std::size_t l : block_lengths) max_len = std::max(max_len, l);
  StreamProcessor proc(baked, max_len);
  std::vector<float> y(x.size());
  std::size_t pos = 0;
  for (std::size_t l : block_lengths) {
    if (pos >= x.size()) break;
    const std::size_t n = std::min(l, x.size() - pos);
    proc.process_block(x.subspan(pos, n), std::span<float>(y).subspan(pos, n));
    pos += n;
  }
  if (pos != x.size()) throw ContractError("render_partitioned: partition shorter than the signal");
  return y;
}

std::vector<float> render_streaming(const BakedWeights& baked, std::span<const float> x, std::size_t block_size) {
  if (block_size == 0) throw ContractError("render_streaming: block_size must be >= 1");
  std::vector<std::size_t> blocks((x.size() + block_size - 1) / block_size, block_size);
  return render_partitioned(baked, x, blocks);
}

std::string config_hash(const GcnConfig& cfg) {
  std::string s = std::to_string(cfg.num_blocks) + "/" + std::to_string(cfg.channels) + "/" +
                  std::to_string(cfg.kernel_size) + "/" + std::to_string(cfg.skip_channels) + "/" +
                  to_string(cfg.cond_mode);
  for (int d : cfg.resolved_dilations()) s += "," + std::to_string(d);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string RtfReport::to_json() const {
  nlohmann::ordered_json j;
  j["config_hash"] = config_hash;
  j["block_size"] = block_size;
  j["samples"] = samples;
  j["audio_duration_s"] = audio_duration_s;
  j["wall_time_s"] = wall_time_s;
  j["rtf"] = rtf;
  j["worst_block_s"] = worst_block_s;
  return j.dump(2);
}

RtfReport bench_rtf(const ConditionedGenerator<float>& model, const ToneEmbedding* phi, double duration_s,
                    std::size_t block_size, std::uint64_t seed) {
  require(duration_s >= 1.0, "bench_rtf: duration must be >= 1 s");
  require(block_size >= 1, "bench_rtf: block_size must be >= 1");
  auto proc = init_stream(model, phi, block_size);
  const auto total = static_cast<std::size_t>(duration_s * kSampleRate);
  const std::size_t warmup = kSampleRate;
  Rng rng(seed);
  std::vector<float> x(total + warmup);
  for (float& v : x) v = static_cast<float>(rng.uniform(-0.5, 0.5));
  std::vector<float> y(block_size);

  using clock = std::chrono::steady_clock;
  for (std::size_t pos = 0; pos < warmup; pos += block_size) {
    const std::size_t m = std::min(block_size, warmup - pos);
    proc->process_block(std::span<const float>(x).subspan(pos, m), y);
  }
  RtfReport r;
  r.config_hash = config_hash(model.gcn.config);
  r.block_size = block_size;
  r.samples = total;
  r.audio_duration_s = static_cast<double>(total) / kSampleRate;
  const auto start = clock::now();
  for (std::size_t pos = 0; pos < total; pos += block_size) {
    const std::size_t m = std::min(block_size, total - pos);
    const auto t0 = clock::now();
    proc->process_block(std::span<const float>(x).subspan(warmup + pos, m), y);
    r.worst_block_s = std::max(r.worst_block_s, std::chrono::duration<double>(clock::now() - t0).count());
  }
  r.wall_time_s = std::chrono::duration<double>(clock::now() - start).count();
  r.rtf = r.wall_time_s / r.audio_duration_s;
  return r;
}

}  // namespace hypertone
