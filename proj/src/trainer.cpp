#include "hypertone/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <nlohmann/json.hpp>
#include <sstream>

#include "hypertone/adam.hpp"
#include "hypertone/stream.hpp"

namespace hypertone {

void TrainConfig::validate(const GcnConfig& model) const {
  require(steps >= 0, "TrainConfig: steps must be >= 0");
  require(batch_size >= 1, "TrainConfig: batch_size must be >= 1");
  require(lr > 0.0, "TrainConfig: lr must be positive");
  require(esr_weight >= 0.0 && mae_weight >= 0.0, "TrainConfig: loss weights must be non-negative");
  require(reference_seconds >= kMinReferenceSeconds, "TrainConfig: reference must be at least 0.5 s");
  if (segment_length <= static_cast<std::size_t>(receptive_field(model)))
    throw ContractError("TrainConfig: segment_length " + std::to_string(segment_length) +
                        " must exceed the receptive field " + std::to_string(receptive_field(model)));
}

double esr(std::span<const float> target, std::span<const float> pred) {
  if (target.size() != pred.size()) throw ContractError("esr: length mismatch");
  double num = 0, den = 0;
  for (std::size_t t = 0; t < target.size(); ++t) {
    const double d = static_cast<double>(target[t]) - pred[t];
    num += d * d;
    den += static_cast<double>(target[t]) * target[t];
  }
  return num / (den + 1e-9);
}

double mae(std::span<const float> target, std::span<const float> pred) {
  if (target.size() != pred.size()) throw ContractError("mae: length mismatch");
  if (target.empty()) return 0.0;
  double s = 0;
  for (std::size_t t = 0; t < target.size(); ++t) s += std::abs(static_cast<double>(target[t]) - pred[t]);
  return s / static_cast<double>(target.size());
}

std::vector<float> pre_emphasis(std::span<const float> x, double alpha) {
  std::vector<float> y(x.size());
  float prev = 0.0f;
  const auto a = static_cast<float>(alpha);
  for (std::size_t t = 0; t < x.size(); ++t) {
    y[t] = x[t] - a * prev;
    prev = x[t];
  }
  return y;
}

template <class T>
double training_loss_t(std::span<const T> target, std::span<const T> pred, double esr_weight, double mae_weight,
                       double alpha, std::size_t warmup, std::vector<T>* grad) {
  if (target.size() != pred.size()) throw ContractError("training_loss: length mismatch");
  const std::size_t n = target.size();
  if (warmup >= n) throw ContractError("training_loss: warm-up covers the whole segment");
  const auto a = static_cast<T>(alpha);
  std::vector<T> et(n), ep(n);
  for (std::size_t t = 0; t < n; ++t) {
    et[t] = target[t] - (t ? a * target[t - 1] : T(0));
    ep[t] = pred[t] - (t ? a * pred[t - 1] : T(0));
  }
  double num = 0, den = 0, abs_sum = 0;
  for (std::size_t t = warmup; t < n; ++t) {
    const double d = static_cast<double>(et[t]) - ep[t];
    num += d * d;
    den += static_cast<double>(et[t]) * et[t];
    abs_sum += std::abs(static_cast<double>(target[t]) - pred[t]);
  }
  den += 1e-9;
  const double count = static_cast<double>(n - warmup);
  const double loss = esr_weight * num / den + mae_weight * abs_sum / count;
  if (grad != nullptr) {
    std::vector<double> g_e(n + 1, 0.0);
    for (std::size_t t = warmup; t < n; ++t) g_e[t] = -2.0 * esr_weight * (static_cast<double>(et[t]) - ep[t]) / den;
    grad->assign(n, T(0));
    for (std::size_t t = 0; t < n; ++t) {
      double g = g_e[t] - alpha * g_e[t + 1];
      if (t >= warmup) {
        const double d = static_cast<double>(target[t]) - pred[t];
        g += d > 0 ? -mae_weight / count : (d < 0 ? mae_weight / count : 0.0);
      }
      (*grad)[t] = static_cast<T>(g);
    }
  }
  return loss;
}

template double training_loss_t<float>(std::span<const float>, std::span<const float>, double, double, double,
                                       std::size_t, std::vector<float>*);
template double training_loss_t<double>(std::span<const double>, std::span<const double>, double, double, double,
                                        std::size_t, std::vector<double>*);

double training_loss(std::span<const float> target, std::span<const float> pred, const TrainConfig& cfg,
                     std::size_t warmup, std::vector<float>* grad) {
  return training_loss_t<float>(target, pred, cfg.esr_weight, cfg.mae_weight, cfg.pre_emphasis, warmup, grad);
}

const AudioBuffer& CorpusData::wet_clip(int preset, int content) const {
  auto it = wet.find({preset, content});
  if (it == wet.end())
    throw ContractError("corpus: no wet clip for preset " + std::to_string(preset) + ", content " +
                        std::to_string(content));
  return it->second;
}

CorpusData CorpusData::load(const CorpusManifest& m, bool include_heldout) {
  CorpusData d;
  d.manifest = m;
  for (const auto& c : m.clean_files) d.clean.push_back(read_wav(m.resolve(c)));
  for (const auto& e : m.entries) {
    if (!include_heldout && e.split != Split::train) continue;
    d.wet.emplace(std::make_pair(e.preset_id, e.content_id), read_wav(m.resolve(e.wet_path)));
  }
  return d;
}

namespace {

struct Sample {
  int preset = 0;
  int content = 0;
  int ref_content = 0;
  std::size_t offset = 0;
  std::size_t ref_offset = 0;
};

class Sampler {
 public:
  Sampler(const CorpusData& data, const TrainConfig& cfg) : data_(data), cfg_(cfg) {
    for (const auto& e : data.manifest.entries)
      if (e.split == Split::train) contents_[e.preset_id].push_back(e.content_id);
    for (auto& [id, cs] : contents_) {
      std::sort(cs.begin(), cs.end());
      if (cs.size() < 2)
        throw ContractError("train: preset " + std::to_string(id) + " needs at least two training contents");
      presets_.push_back(id);
    }
    if (presets_.empty()) throw ContractError("train: manifest has no training entries");
    ref_len_ = static_cast<std::size_t>(cfg.reference_seconds * kSampleRate);
  }

  Sample draw(Rng& rng) const {
    Sample s;
    s.preset = presets_[rng.index(presets_.size())];
    const auto& cs = contents_.at(s.preset);
    const std::size_t a = rng.index(cs.size());
    std::size_t b = rng.index(cs.size() - 1);
    if (b >= a) ++b;
    s.content = cs[a];
    s.ref_content = cs[b];
    const std::size_t len = data_.clean.at(static_cast<std::size_t>(s.content)).size();
    if (len < cfg_.segment_length) throw ContractError("train: clip shorter than segment_length");
    s.offset = rng.index(len - cfg_.segment_length + 1);
    const std::size_t ref_total = data_.wet_clip(s.preset, s.ref_content).size();
    if (ref_total < ref_len_) throw ContractError("train: clip shorter than the reference crop");
    s.ref_offset = rng.index(ref_total - ref_len_ + 1);
    return s;
  }

  std::size_t ref_len() const { return ref_len_; }

 private:
  const CorpusData& data_;
  const TrainConfig& cfg_;
  std::map<int, std::vector<int>> contents_;
  std::vector<int> presets_;
  std::size_t ref_len_ = 0;
};

struct Item {
  std::vector<float> input;
  std::vector<float> target;
  ToneEmbedding phi;
};

Item materialize(const CorpusData& data, const EncoderWeights& enc, const Sample& s, const TrainConfig& cfg,
                 std::size_t ref_len) {
  Item it;
  const auto& clean = data.clean.at(static_cast<std::size_t>(s.content)).samples;
  const auto& wet = data.wet_clip(s.preset, s.content).samples;
  const auto off = static_cast<std::ptrdiff_t>(s.offset);
  const auto len = static_cast<std::ptrdiff_t>(cfg.segment_length);
  it.input.assign(clean.begin() + off, clean.begin() + off + len);
  it.target.assign(wet.begin() + off, wet.begin() + off + len);
  it.phi = encode(crop(data.wet_clip(s.preset, s.ref_content), s.ref_offset, ref_len), enc);
  return it;
}

}  // namespace

double evaluate_batch_loss(const CorpusData& data, const ConditionedGenerator<float>& model,
                           const EncoderWeights& encoder, const TrainConfig& cfg) {
  cfg.validate(model.gcn.config);
  Sampler sampler(data, cfg);
  Rng rng(cfg.seed ^ 0x5EED5A3D1ull);
  const auto warmup = static_cast<std::size_t>(receptive_field(model.gcn.config));
  double total = 0;
  for (int b = 0; b < cfg.batch_size; ++b) {
    const Item it = materialize(data, encoder, sampler.draw(rng), cfg, sampler.ref_len());
    const std::span<const float> phi(it.phi.vector);
    const auto y = model.mode() == CondMode::none ? model.forward(it.input) : model.forward(it.input, phi);
    total += training_loss(it.target, y, cfg, warmup);
  }
  return total / cfg.batch_size;
}

TrainResult train(const CorpusData& data, ConditionedGenerator<float>& model, const EncoderWeights& encoder,
                  const TrainConfig& cfg, const StepCallback& on_step) {
  if (!encoder.frozen) throw ContractError("train: the tone encoder must be frozen before generator training");
  cfg.validate(model.gcn.config);
  Sampler sampler(data, cfg);
  // The sampling stream is seeded independently of model initialisation.
  Rng rng(cfg.seed ^ 0x5EED5A3D1ull);
  const auto warmup = static_cast<std::size_t>(receptive_field(model.gcn.config));

  AdamOptimizer<float> opt(model.trainable(), AdamConfig{cfg.lr});
  opt.zero_grad();
  TrainResult result;
  result.loss_curve.reserve(static_cast<std::size_t>(cfg.steps));
  const auto start = std::chrono::steady_clock::now();
  TrainPass<float> pass;
  std::vector<float> grad;
  const bool conditioned = model.mode() != CondMode::none;

  for (int step = 0; step < cfg.steps; ++step) {
    const double progress = cfg.steps > 1 ? static_cast<double>(step) / (cfg.steps - 1) : 0.0;
    const double floor = cfg.lr * cfg.lr_final_fraction;
    opt.set_lr(floor + (cfg.lr - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));

    double batch_loss = 0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const Item it = materialize(data, encoder, sampler.draw(rng), cfg, sampler.ref_len());
      const std::span<const float> phi = conditioned ? std::span<const float>(it.phi.vector) : std::span<const float>();
      train_forward<float>(model, it.input, phi, pass);
      const double loss = training_loss(it.target, pass.output, cfg, warmup, &grad);
      if (!std::isfinite(loss))
        throw NumericError("train: non-finite loss at step " + std::to_string(step) + " (batch item " +
                           std::to_string(b) + ")");
      const float scale = 1.0f / static_cast<float>(cfg.batch_size);
      for (float& g : grad) g *= scale;
      train_backward<float>(model, pass, grad);
      batch_loss += loss / cfg.batch_size;
    }
    opt.step();
    result.loss_curve.push_back(batch_loss);
    if (on_step) on_step(step, batch_loss);
  }
  result.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!result.loss_curve.empty()) {
    result.initial_loss = result.loss_curve.front();
    const std::size_t tail = std::max<std::size_t>(1, result.loss_curve.size() / 20);
    double s = 0;
    for (std::size_t k = result.loss_curve.size() - tail; k < result.loss_curve.size(); ++k) s += result.loss_curve[k];
    result.final_loss = s / static_cast<double>(tail);
  }
  return result;
}

ToneEmbedding mean_training_embedding(const CorpusData& data, const EncoderWeights& encoder) {
  std::vector<double> acc(encoder.embedding_dim(), 0.0);
  std::size_t count = 0;
  for (const auto& e : data.manifest.entries) {
    if (e.split != Split::train) continue;
    const auto phi = encode(data.wet_clip(e.preset_id, e.content_id), encoder);
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += phi.vector[k];
    ++count;
  }
  if (count == 0) throw ContractError("mean_training_embedding: no training clips");
  std::vector<float> mean(acc.begin(), acc.end());
  return ToneEmbedding::from_raw(mean, "mean-train");
}

MetricsReport zero_shot_eval(const CorpusData& data, const ConditionedGenerator<float>& model,
                             const EncoderWeights& encoder, const std::string& label) {
  const auto start = std::chrono::steady_clock::now();
  std::map<int, std::vector<int>> contents;
  for (const auto& e : data.manifest.entries)
    if (e.split == Split::heldout_tone) contents[e.preset_id].push_back(e.content_id);
  if (contents.empty()) throw ContractError("zero_shot_eval: manifest has no held-out tones");

  const bool conditioned = model.mode() != CondMode::none;
  ToneEmbedding mean_phi;
  if (conditioned) mean_phi = mean_training_embedding(data, encoder);

  auto render = [&](const AudioBuffer& clean, const ToneEmbedding* phi) {
    if (!conditioned) return model.forward(clean.samples);
    return model.forward(clean.samples, std::span<const float>(phi->vector));
  };

  MetricsReport r;
  r.label = label;
  r.config_hash = config_hash(model.gcn.config);
  for (auto& [preset, cs] : contents) {
    std::sort(cs.begin(), cs.end());
    if (cs.size() < 2) throw ContractError("zero_shot_eval: held-out tone needs two held-out contents");
    PresetMetrics pm;
    pm.preset_id = preset;
    std::vector<float> mean_pred;
    for (int tgt : cs) {
      const auto& clean = data.clean.at(static_cast<std::size_t>(tgt));
      const auto& truth = data.wet_clip(preset, tgt);
      if (conditioned) {
        const auto mp = render(clean, &mean_phi);
        pm.mean_embedding_esr += esr(truth.samples, mp);
        pm.mean_embedding_mae += mae(truth.samples, mp);
      }
      for (int ref : cs) {
        if (ref == tgt) continue;
        const auto phi = encode(data.wet_clip(preset, ref), encoder);
        const auto pred = render(clean, &phi);
        pm.esr += esr(truth.samples, pred);
        pm.mae += mae(truth.samples, pred);
        pm.identity_esr += esr(truth.samples, clean.samples);
        pm.identity_mae += mae(truth.samples, clean.samples);
        if (!conditioned) {
          pm.mean_embedding_esr += esr(truth.samples, pred);
          pm.mean_embedding_mae += mae(truth.samples, pred);
        }
        ++pm.pairs;
      }
    }
    const double pairs = pm.pairs;
    const double targets = static_cast<double>(cs.size());
    pm.esr /= pairs;
    pm.mae /= pairs;
    pm.identity_esr /= pairs;
    pm.identity_mae /= pairs;
    pm.mean_embedding_esr /= conditioned ? targets : pairs;
    pm.mean_embedding_mae /= conditioned ? targets : pairs;
    r.presets.push_back(pm);
  }
  const double n = static_cast<double>(r.presets.size());
  for (const auto& p : r.presets) {
    r.aggregate.pairs += p.pairs;
    r.aggregate.esr += p.esr / n;
    r.aggregate.mae += p.mae / n;
    r.aggregate.identity_esr += p.identity_esr / n;
    r.aggregate.identity_mae += p.identity_mae / n;
    r.aggregate.mean_embedding_esr += p.mean_embedding_esr / n;
    r.aggregate.mean_embedding_mae += p.mean_embedding_mae / n;
  }
  r.aggregate.preset_id = -1;
  r.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

int MetricsReport::presets_beating_identity() const {
  int k = 0;
  for (const auto& p : presets) k += p.esr < p.identity_esr;
  return k;
}

std::string MetricsReport::to_json() const {
  auto row = [](const PresetMetrics& p) {
    nlohmann::ordered_json j;
    j["preset_id"] = p.preset_id;
    j["pairs"] = p.pairs;
    j["esr"] = p.esr;
    j["mae"] = p.mae;
    j["identity_esr"] = p.identity_esr;
    j["identity_mae"] = p.identity_mae;
    j["mean_embedding_esr"] = p.mean_embedding_esr;
    j["mean_embedding_mae"] = p.mean_embedding_mae;
    return j;
  };
  nlohmann::ordered_json j;
  j["label"] = label;
  j["config_hash"] = config_hash;
  j["presets"] = nlohmann::ordered_json::array();
  for (const auto& p : presets) j["presets"].push_back(row(p));
  j["aggregate"] = row(aggregate);
  j["presets_beating_identity"] = presets_beating_identity();
  j["beats_mean_embedding"] = beats_mean_embedding();
  j["wall_time_s"] = wall_time_s;
  return j.dump(2);
}

std::string MetricsReport::to_table() const {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-8s %10s %10s %12s %12s %10s\n", "preset", "esr", "mae", "identity_esr",
                "mean_emb_esr", "beats_id");
  os << "zero-shot evaluation: " << label << "\n" << buf;
  for (const auto& p : presets) {
    std::snprintf(buf, sizeof buf, "%-8d %10.4f %10.4f %12.4f %12.4f %10s\n", p.preset_id, p.esr, p.mae,
                  p.identity_esr, p.mean_embedding_esr, p.esr < p.identity_esr ? "yes" : "no");
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "%-8s %10.4f %10.4f %12.4f %12.4f %7d/%zu\n", "mean", aggregate.esr, aggregate.mae,
                aggregate.identity_esr, aggregate.mean_embedding_esr, presets_beating_identity(), presets.size());
  os << buf;
  return os.str();
}

std::string comparison_table(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw ContractError("comparison_table: no reports");
  for (const auto& r : reports)
    if (r.presets.size() != reports.front().presets.size())
      throw ContractError("comparison_table: reports cover different presets");
  std::ostringstream os;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-8s %12s", "preset", "identity");
  os << "per-preset ESR (held-out tones)\n" << buf;
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, " %14s", r.label.substr(0, 14).c_str());
    os << buf;
  }
  os << "\n";
  for (std::size_t k = 0; k < reports.front().presets.size(); ++k) {
    const auto& ref = reports.front().presets[k];
    std::snprintf(buf, sizeof buf, "%-8d %12.4f", ref.preset_id, ref.identity_esr);
    os << buf;
    for (const auto& r : reports) {
      if (r.presets[k].preset_id != ref.preset_id) throw ContractError("comparison_table: preset order differs");
      std::snprintf(buf, sizeof buf, " %14.4f", r.presets[k].esr);
      os << buf;
    }
    os << "\n";
  }
  std::snprintf(buf, sizeof buf, "%-8s %12.4f", "mean", reports.front().aggregate.identity_esr);
  os << buf;
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, " %14.4f", r.aggregate.esr);
    os << buf;
  }
  os << "\n";
  return os.str();
}

}  // namespace hypertone
