#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "hypertone/amp_sim.hpp"
#include "hypertone/conditioning.hpp"
#include "hypertone/encoder.hpp"

namespace hypertone {

struct TrainConfig {
  int steps = 5000;
  int batch_size = 2;
  std::size_t segment_length = 32768;
  double lr = 3e-3;
  /// Cosine decay from lr down to lr * lr_final_fraction over the run.
  double lr_final_fraction = 0.1;
  double esr_weight = 1.0;
  double mae_weight = 0.5;
  double pre_emphasis = 0.95;
  double reference_seconds = 1.0;
  std::uint64_t seed = 0;
  int log_every = 0;

  void validate(const GcnConfig& model) const;
};

/// sum (target - pred)^2 / (sum target^2 + 1e-9).
double esr(std::span<const float> target, std::span<const float> pred);
double mae(std::span<const float> target, std::span<const float> pred);

/// y[t] = x[t] - alpha * x[t-1] with x[-1] = 0.
std::vector<float> pre_emphasis(std::span<const float> x, double alpha);

/// esr_weight * ESR(pre_emphasised) + mae_weight * mean|target - pred| over samples
/// t >= warmup. Writes dL/dpred into `grad` when non-null.
double training_loss(std::span<const float> target, std::span<const float> pred, const TrainConfig& cfg,
                     std::size_t warmup = 0, std::vector<float>* grad = nullptr);

/// Templated loss used by gradient checking at double precision.
template <class T>
double training_loss_t(std::span<const T> target, std::span<const T> pred, double esr_weight, double mae_weight,
                       double alpha, std::size_t warmup, std::vector<T>* grad);

struct TrainResult {
  std::vector<double> loss_curve;
  double initial_loss = 0.0;
  double final_loss = 0.0;  // mean over the last 5% of steps
  double wall_time_s = 0.0;
};

/// Clean/wet audio of a manifest, loaded once.
struct CorpusData {
  CorpusManifest manifest;
  std::vector<AudioBuffer> clean;                                     // by content id
  std::map<std::pair<int, int>, AudioBuffer> wet;                     // (preset, content)
  const AudioBuffer& wet_clip(int preset, int content) const;
  static CorpusData load(const CorpusManifest& m, bool include_heldout = true);
};

using StepCallback = std::function<void(int step, double loss)>;

/// Each step samples a training preset, two distinct training contents c1 != c2,
/// conditions on a reference crop of wet(c2), and regresses wet(c1) from clean(c1).
/// Only generator and conditioning parameters are updated; the encoder must be frozen.
TrainResult train(const CorpusData& data, ConditionedGenerator<float>& model, const EncoderWeights& encoder,
                  const TrainConfig& cfg, const StepCallback& on_step = {});

/// Loss of one fixed, seeded batch without updating anything.
double evaluate_batch_loss(const CorpusData& data, const ConditionedGenerator<float>& model,
                           const EncoderWeights& encoder, const TrainConfig& cfg);

struct PresetMetrics {
  int preset_id = 0;
  int pairs = 0;
  double esr = 0.0;
  double mae = 0.0;
  double identity_esr = 0.0;
  double identity_mae = 0.0;
  double mean_embedding_esr = 0.0;
  double mean_embedding_mae = 0.0;
};

struct MetricsReport {
  std::string label;
  std::string config_hash;
  std::vector<PresetMetrics> presets;
  PresetMetrics aggregate;  // mean of the per-preset rows
  double wall_time_s = 0.0;

  int presets_beating_identity() const;
  bool beats_mean_embedding() const { return aggregate.esr < aggregate.mean_embedding_esr; }
  std::string to_json() const;
  std::string to_table() const;
};

/// For every held-out tone: condition on that tone's wet clip of one held-out
/// content, render another held-out content, and score against the true wet clip.
/// Baselines: identity passthrough and the normalised mean training embedding.
MetricsReport zero_shot_eval(const CorpusData& data, const ConditionedGenerator<float>& model,
                             const EncoderWeights& encoder, const std::string& label = "model");

/// Per-preset ESR table with one column per report (all reports must cover the
/// same presets).
std::string comparison_table(const std::vector<MetricsReport>& reports);

/// Normalised mean embedding of the training wet clips.
ToneEmbedding mean_training_embedding(const CorpusData& data, const EncoderWeights& encoder);

}  // namespace hypertone
