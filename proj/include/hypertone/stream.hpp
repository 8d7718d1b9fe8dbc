#pragma once

// Block-based streaming inference over baked weights.
//
// Each dilated conv keeps a history ring of its last (K-1)*d input samples per
// channel, which stands in for the causal zero padding of the offline pass. The
// per-sample arithmetic is the same as gcn_forward_params, so streaming output over
// any block partition matches the offline render.
//
// Threading: process_block runs in the audio context and neither allocates nor
// locks. set_tone runs in a control context; it copies the new weights into a
// spare slot of a triple buffer and publishes it with one atomic exchange. The
// audio side picks up the newest published slot at the next block boundary.

#include <atomic>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hypertone/conditioning.hpp"

namespace hypertone {

class HistoryRing {
 public:
  HistoryRing() = default;
  HistoryRing(std::size_t channels, std::size_t capacity);

  std::size_t channels() const { return channels_; }
  std::size_t capacity() const { return capacity_; }

  /// dst[t] = x[t - delay] for t in [0, n), where x is the stream whose current
  /// block is `block`; samples before the block come from the ring. delay <= capacity.
  void gather(std::size_t channel, std::size_t delay, const float* block, std::size_t n, float* dst) const;

  /// Appends n samples per channel (rows spaced `stride` apart).
  void push(const float* rows, std::size_t stride, std::size_t n);

  /// Oldest-first copy of a channel's history.
  std::vector<float> contents(std::size_t channel) const;
  void clear();

 private:
  std::size_t channels_ = 0;
  std::size_t capacity_ = 0;
  std::size_t write_pos_ = 0;
  std::vector<float> data_;
};

class StreamProcessor {
 public:
  StreamProcessor(const BakedWeights& baked, std::size_t block_size);

  StreamProcessor(const StreamProcessor&) = delete;
  StreamProcessor& operator=(const StreamProcessor&) = delete;

  std::size_t block_size() const { return block_size_; }
  const GcnConfig& config() const { return config_; }

  /// Processes up to block_size samples (a shorter final block is allowed and
  /// flagged via last_block_partial()). Throws NumericError naming the first block
  /// whose activations became non-finite.
  void process_block(std::span<const float> input, std::span<float> output);

  bool last_block_partial() const { return last_partial_; }

  /// Control context: stage new weights for the next block boundary. The last
  /// call before a boundary wins. Throws ContractError on a shape mismatch.
  void set_tone(const BakedWeights& baked);

  /// Zeros every ring (equivalent to restarting from silence).
  void reset();

  const HistoryRing& ring(std::size_t block) const { return rings_.at(block); }
  /// Weights used by the most recent block (audio context only).
  const BakedWeights& active_weights() const { return slots_[front_]; }
  std::uint64_t active_fingerprint() const { return slots_[front_].embedding_fingerprint; }

 private:
  static constexpr std::uint8_t kFresh = 0x4;

  void acquire_pending();

  GcnConfig config_;
  std::size_t block_size_;
  std::size_t channels_;
  std::size_t skip_channels_;
  std::size_t kernel_;
  std::vector<std::size_t> dilations_;

  BakedWeights slots_[3];
  std::uint8_t front_ = 0;  // audio context
  std::uint8_t back_ = 2;   // control context
  std::atomic<std::uint8_t> middle_{1};

  std::vector<HistoryRing> rings_;

  // Scratch for one block; sized at construction.
  std::vector<float> r_cur_, r_next_, z_, h_, h_mod_, tmp_, skip_sum_, relu_, gathered_;
  std::vector<const float*> taps_;
  bool last_partial_ = false;
};

/// Bakes once and builds a processor with zeroed history.
std::unique_ptr<StreamProcessor> init_stream(const ConditionedGenerator<float>& model, const ToneEmbedding* phi,
                                             std::size_t block_size);
BakedWeights bake(const ConditionedGenerator<float>& model, const ToneEmbedding* phi);

/// Streams `x` through a processor in blocks of `block_size`.
std::vector<float> render_streaming(const BakedWeights& baked, std::span<const float> x, std::size_t block_size);

/// Streams `x` through a processor using an explicit partition into block lengths.
std::vector<float> render_partitioned(const BakedWeights& baked, std::span<const float> x,
                                      std::span<const std::size_t> block_lengths);

struct RtfReport {
  std::string config_hash;
  std::size_t block_size = 0;
  std::size_t samples = 0;
  double wall_time_s = 0.0;
  double audio_duration_s = 0.0;
  double rtf = 0.0;
  double worst_block_s = 0.0;

  std::string to_json() const;
};

/// Times the streaming path on seeded noise, excluding a warm-up second.
RtfReport bench_rtf(const ConditionedGenerator<float>& model, const ToneEmbedding* phi, double duration_s,
                    std::size_t block_size, std::uint64_t seed = 0);

std::string config_hash(const GcnConfig& cfg);

}  // namespace hypertone
