#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hypertone/audio.hpp"
#include "hypertone/conditioning.hpp"
#include "hypertone/dense.hpp"

namespace hypertone {

struct MelConfig {
  int fft_size = 2048;
  int hop = 512;
  int mel_bands = 64;
  double fmin = 30.0;
  double fmax = 16000.0;
  double log_floor = 1e-5;

  void validate(int sample_rate = kSampleRate) const;
  std::size_t feature_dim() const { return 2 * static_cast<std::size_t>(mel_bands); }
  bool operator==(const MelConfig&) const = default;
};

/// References shorter than this are rejected by encode().
inline constexpr double kMinReferenceSeconds = 0.5;

/// Hann-windowed magnitude STFT -> HTK mel filterbank -> log(x + floor), then the
/// per-band mean followed by the per-band standard deviation over frames.
std::vector<float> log_mel_stats(const AudioBuffer& audio, const MelConfig& cfg);

/// Triangular HTK-spaced filters, [bands][fft_size/2 + 1].
std::vector<std::vector<double>> mel_filterbank(const MelConfig& cfg, int sample_rate = kSampleRate);

/// The tone encoder: feature standardisation, then 2*bands -> hidden (tanh) -> d_e.
struct EncoderWeights {
  MelConfig mel;
  std::vector<float> feature_mean;
  std::vector<float> feature_scale;  // 1 / std
  Dense<float> hidden;
  Dense<float> projection;
  bool frozen = false;

  static EncoderWeights create(const MelConfig& mel, std::size_t hidden_dim, std::size_t embedding_dim, Rng& rng);

  std::size_t embedding_dim() const { return projection.out_dim(); }
  void freeze();
  ParamRefs<float> params();
  /// Raw (pre-normalisation) projection output for standardised-feature input.
  std::vector<float> project(std::span<const float> features, std::vector<float>* hidden_out = nullptr) const;
  std::vector<float> standardize(std::span<const float> features) const;
};

/// phi = normalize(E(features(x_ref))). Throws ContractError for references
/// shorter than kMinReferenceSeconds.
ToneEmbedding encode(const AudioBuffer& audio, const EncoderWeights& enc);

struct EncoderTrainConfig {
  std::size_t hidden_dim = 128;
  std::size_t embedding_dim = kDefaultEmbeddingDim;
  int epochs = 150;
  int batch_size = 64;
  double lr = 2e-3;
  int crops_per_clip = 8;
  double crop_seconds = 1.0;
  /// Logit scale applied to the unit embedding before the linear classifier head.
  double logit_scale = 10.0;
  std::uint64_t seed = 0;
};

struct LabeledClip {
  AudioBuffer audio;
  int label = 0;
  bool heldout = false;  // evaluation only
};

struct EncoderTrainReport {
  double train_accuracy = 0.0;
  double heldout_accuracy = 0.0;
  double final_loss = 0.0;
  std::size_t train_examples = 0;
  std::size_t heldout_examples = 0;
  int classes = 0;
};

/// Classification pretraining over tone labels. The classifier head is discarded
/// and the returned weights are frozen. Throws Error for fewer than two labels.
EncoderWeights pretrain_encoder(const std::vector<LabeledClip>& clips, const EncoderTrainConfig& cfg,
                                const MelConfig& mel, EncoderTrainReport* report = nullptr);

/// Deterministic crop start positions for a clip.
std::vector<std::size_t> crop_offsets(std::size_t clip_len, std::size_t crop_len, int count, Rng& rng);

AudioBuffer crop(const AudioBuffer& a, std::size_t offset, std::size_t length);

struct ClusteringReport {
  double intra_mean = 0.0;
  double inter_mean = 0.0;
  double margin() const { return intra_mean - inter_mean; }
  std::size_t intra_pairs = 0;
  std::size_t inter_pairs = 0;
};

/// Mean cosine similarity of embedding pairs sharing a label versus pairs that do
/// not. With `content`, same-label pairs only count when their content ids differ.
ClusteringReport clustering(const std::vector<ToneEmbedding>& embeddings, const std::vector<int>& labels,
                            const std::vector<int>* content = nullptr);

}  // namespace hypertone
