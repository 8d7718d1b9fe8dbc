#include "hypertone/encoder.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <numeric>

#include "hypertone/adam.hpp"

namespace hypertone {
namespace {

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

struct FftPlan {
  int size = 0;
  double* in = nullptr;
  fftw_complex* out = nullptr;
  fftw_plan plan = nullptr;

  explicit FftPlan(int n) : size(n) {
    in = fftw_alloc_real(static_cast<std::size_t>(n));
    out = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
    plan = fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE);
  }
  ~FftPlan() {
    fftw_destroy_plan(plan);
    fftw_free(in);
    fftw_free(out);
  }
  FftPlan(const FftPlan&) = delete;
  FftPlan& operator=(const FftPlan&) = delete;
};

// FFTW planning is not thread-safe; execution with the new-array API is.
const FftPlan& plan_for(int n) {
  static std::mutex mutex;
  static std::map<int, std::unique_ptr<FftPlan>> plans;
  std::lock_guard lock(mutex);
  auto& p = plans[n];
  if (!p) p = std::make_unique<FftPlan>(n);
  return *p;
}

struct FilterbankCache {
  std::mutex mutex;
  std::map<std::tuple<int, int, double, double, int>, std::vector<std::vector<double>>> banks;
};

const std::vector<std::vector<double>>& cached_filterbank(const MelConfig& cfg, int rate) {
  static FilterbankCache cache;
  std::lock_guard lock(cache.mutex);
  auto key = std::make_tuple(cfg.fft_size, cfg.mel_bands, cfg.fmin, cfg.fmax, rate);
  auto it = cache.banks.find(key);
  if (it == cache.banks.end()) it = cache.banks.emplace(key, mel_filterbank(cfg, rate)).first;
  return it->second;
}

}  // namespace

void MelConfig::validate(int sample_rate) const {
  require(fft_size >= 16 && (fft_size & (fft_size - 1)) == 0, "MelConfig: fft_size must be a power of two >= 16");
  require(hop >= 1, "MelConfig: hop must be >= 1");
  require(mel_bands >= 1, "MelConfig: mel_bands must be >= 1");
  require(fmin >= 0.0 && fmin < fmax, "MelConfig: need 0 <= fmin < fmax");
  require(fmax <= sample_rate / 2.0, "MelConfig: fmax must not exceed Nyquist");
  require(log_floor > 0.0, "MelConfig: log_floor must be positive");
}

std::vector<std::vector<double>> mel_filterbank(const MelConfig& cfg, int sample_rate) {
  cfg.validate(sample_rate);
  const int bins = cfg.fft_size / 2 + 1;
  const double lo = hz_to_mel(cfg.fmin), hi = hz_to_mel(cfg.fmax);
  std::vector<double> edges(static_cast<std::size_t>(cfg.mel_bands) + 2);
  for (std::size_t k = 0; k < edges.size(); ++k)
    edges[k] = mel_to_hz(lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(edges.size() - 1));
  std::vector<std::vector<double>> fb(static_cast<std::size_t>(cfg.mel_bands), std::vector<double>(bins, 0.0));
  for (int m = 0; m < cfg.mel_bands; ++m) {
    const double left = edges[m], centre = edges[m + 1], right = edges[m + 2];
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / cfg.fft_size;
      const double up = (f - left) / (centre - left);
      const double down = (right - f) / (right - centre);
      fb[m][k] = std::max(0.0, std::min(up, down));
    }
  }
  return fb;
}

std::vector<float> log_mel_stats(const AudioBuffer& audio, const MelConfig& cfg) {
  cfg.validate(audio.sample_rate);
  const auto N = static_cast<std::size_t>(cfg.fft_size);
  if (audio.size() < N)
    throw ContractError("log_mel_stats: audio has " + std::to_string(audio.size()) + " samples, need at least " +
                        std::to_string(N));
  const auto& fb = cached_filterbank(cfg, audio.sample_rate);
  const FftPlan& plan = plan_for(cfg.fft_size);
  const std::size_t bins = N / 2 + 1;
  const auto bands = static_cast<std::size_t>(cfg.mel_bands);
  const auto hop = static_cast<std::size_t>(cfg.hop);
  const std::size_t frames = (audio.size() - N) / hop + 1;

  // Symmetric window: a time-reversed frame has the same magnitude spectrum.
  std::vector<double> window(N);
  for (std::size_t n = 0; n < N; ++n)
    window[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / static_cast<double>(N - 1));

  double* in = fftw_alloc_real(N);
  fftw_complex* out = fftw_alloc_complex(bins);
  std::vector<double> mag(bins), sum(bands, 0.0), sum_sq(bands, 0.0);
  std::vector<std::vector<double>> values(bands, std::vector<double>(frames));
  for (std::size_t f = 0; f < frames; ++f) {
    const float* src = audio.samples.data() + f * hop;
    for (std::size_t n = 0; n < N; ++n) in[n] = static_cast<double>(src[n]) * window[n];
    fftw_execute_dft_r2c(plan.plan, in, out);
    for (std::size_t k = 0; k < bins; ++k) mag[k] = std::hypot(out[k][0], out[k][1]);
    for (std::size_t m = 0; m < bands; ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < bins; ++k) e += fb[m][k] * mag[k];
      values[m][f] = std::log(e + cfg.log_floor);
    }
  }
  fftw_free(in);
  fftw_free(out);

  std::vector<float> feat(2 * bands);
  for (std::size_t m = 0; m < bands; ++m) {
    const auto& v = values[m];
    // shifted by the first frame so a constant band gives exactly zero spread
    const double shift = v[0];
    double s = 0.0, s2 = 0.0;
    for (double x : v) {
      s += x - shift;
      s2 += (x - shift) * (x - shift);
    }
    const double n = static_cast<double>(frames);
    const double mean = shift + s / n;
    const double var = std::max(0.0, s2 / n - (s / n) * (s / n));
    feat[m] = static_cast<float>(mean);
    feat[bands + m] = static_cast<float>(std::sqrt(var));
  }
  return feat;
}

EncoderWeights EncoderWeights::create(const MelConfig& mel, std::size_t hidden_dim, std::size_t embedding_dim,
                                      Rng& rng) {
  EncoderWeights e;
  e.mel = mel;
  const std::size_t in = mel.feature_dim();
  e.feature_mean.assign(in, 0.0f);
  e.feature_scale.assign(in, 1.0f);
  e.hidden = Dense<float>("encoder.hidden", in, hidden_dim);
  e.projection = Dense<float>("encoder.projection", hidden_dim, embedding_dim);
  e.hidden.weight.kaiming_uniform(rng, in);
  e.projection.weight.kaiming_uniform(rng, hidden_dim);
  return e;
}

void EncoderWeights::freeze() {
  frozen = true;
  for (auto* p : params()) p->frozen = true;
}

ParamRefs<float> EncoderWeights::params() {
  ParamRefs<float> refs;
  hidden.collect(refs);
  projection.collect(refs);
  return refs;
}

std::vector<float> EncoderWeights::standardize(std::span<const float> features) const {
  if (features.size() != feature_mean.size()) throw ContractError("encoder: feature dimension mismatch");
  std::vector<float> z(features.size());
  for (std::size_t k = 0; k < z.size(); ++k) z[k] = (features[k] - feature_mean[k]) * feature_scale[k];
  return z;
}

std::vector<float> EncoderWeights::project(std::span<const float> z, std::vector<float>* hidden_out) const {
  std::vector<float> h(hidden.out_dim());
  hidden.forward(z, h);
  for (float& v : h) v = std::tanh(v);
  std::vector<float> u(projection.out_dim());
  projection.forward(h, u);
  if (hidden_out) *hidden_out = std::move(h);
  return u;
}

ToneEmbedding encode(const AudioBuffer& audio, const EncoderWeights& enc) {
  const auto min_len = static_cast<std::size_t>(std::ceil(kMinReferenceSeconds * audio.sample_rate));
  if (audio.size() < min_len)
    throw ContractError("encode: reference is " + std::to_string(audio.duration_s()) + " s, need at least " +
                        std::to_string(kMinReferenceSeconds) + " s");
  const auto feat = log_mel_stats(audio, enc.mel);
  const auto u = enc.project(enc.standardize(feat));
  return ToneEmbedding::from_raw(u);
}

std::vector<std::size_t> crop_offsets(std::size_t clip_len, std::size_t crop_len, int count, Rng& rng) {
  std::vector<std::size_t> out;
  if (clip_len < crop_len) throw ContractError("crop_offsets: clip shorter than crop");
  for (int k = 0; k < count; ++k) out.push_back(rng.index(clip_len - crop_len + 1));
  return out;
}

AudioBuffer crop(const AudioBuffer& a, std::size_t offset, std::size_t length) {
  if (offset + length > a.size()) throw ContractError("crop: range exceeds clip");
  AudioBuffer out;
  out.sample_rate = a.sample_rate;
  out.samples.assign(a.samples.begin() + static_cast<std::ptrdiff_t>(offset),
                     a.samples.begin() + static_cast<std::ptrdiff_t>(offset + length));
  return out;
}

EncoderWeights pretrain_encoder(const std::vector<LabeledClip>& clips, const EncoderTrainConfig& cfg,
                                const MelConfig& mel, EncoderTrainReport* report) {
  mel.validate();
  Rng rng(cfg.seed);
  std::map<int, int> label_index;
  for (const auto& c : clips)
    if (!c.heldout) label_index.emplace(c.label, 0);
  if (label_index.size() < 2) throw Error("pretrain_encoder: need at least two tone labels in the training clips");
  int next = 0;
  for (auto& [label, idx] : label_index) idx = next++;
  const int classes = next;

  const auto crop_len = static_cast<std::size_t>(cfg.crop_seconds * kSampleRate);
  std::vector<std::vector<float>> train_x, test_x;
  std::vector<int> train_y, test_y;
  for (const auto& c : clips) {
    auto it = label_index.find(c.label);
    if (it == label_index.end()) continue;
    const std::size_t len = std::min(crop_len, c.audio.size());
    for (std::size_t off : crop_offsets(c.audio.size(), len, cfg.crops_per_clip, rng)) {
      auto f = log_mel_stats(crop(c.audio, off, len), mel);
      (c.heldout ? test_x : train_x).push_back(std::move(f));
      (c.heldout ? test_y : train_y).push_back(it->second);
    }
  }

  EncoderWeights enc = EncoderWeights::create(mel, cfg.hidden_dim, cfg.embedding_dim, rng);
  const std::size_t dim = mel.feature_dim();
  for (std::size_t k = 0; k < dim; ++k) {
    double m = 0, v = 0;
    for (const auto& f : train_x) m += f[k];
    m /= static_cast<double>(train_x.size());
    for (const auto& f : train_x) v += (f[k] - m) * (f[k] - m);
    v /= static_cast<double>(train_x.size());
    enc.feature_mean[k] = static_cast<float>(m);
    enc.feature_scale[k] = static_cast<float>(1.0 / std::max(std::sqrt(v), 1e-3));
  }
  std::vector<std::vector<float>> train_z, test_z;
  for (const auto& f : train_x) train_z.push_back(enc.standardize(f));
  for (const auto& f : test_x) test_z.push_back(enc.standardize(f));

  Dense<float> head("encoder.head", cfg.embedding_dim, static_cast<std::size_t>(classes));
  head.weight.kaiming_uniform(rng, cfg.embedding_dim);
  ParamRefs<float> params = enc.params();
  head.collect(params);
  AdamOptimizer<float> opt(params, AdamConfig{cfg.lr});

  const auto scale = static_cast<float>(cfg.logit_scale);
  // Returns the loss and the predicted class; accumulates gradients when train is set.
  auto run = [&](const std::vector<float>& z, int label, bool train, float grad_weight) {
    std::vector<float> h;
    auto u = enc.project(z, &h);
    double norm = 0;
    for (float v : u) norm += static_cast<double>(v) * v;
    norm = std::sqrt(std::max(norm, 1e-24));
    std::vector<float> phi(u.size());
    for (std::size_t k = 0; k < u.size(); ++k) phi[k] = static_cast<float>(u[k] / norm * scale);
    std::vector<float> logits(static_cast<std::size_t>(classes));
    head.forward(phi, logits);
    const float mx = *std::max_element(logits.begin(), logits.end());
    double z_sum = 0;
    for (float l : logits) z_sum += std::exp(static_cast<double>(l - mx));
    const double loss = -(logits[static_cast<std::size_t>(label)] - mx - std::log(z_sum));
    const int pred = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    if (train) {
      std::vector<float> g_logits(logits.size());
      for (std::size_t k = 0; k < logits.size(); ++k)
        g_logits[k] = static_cast<float>(std::exp(static_cast<double>(logits[k] - mx)) / z_sum) * grad_weight;
      g_logits[static_cast<std::size_t>(label)] -= grad_weight;
      std::vector<float> g_phi(phi.size());
      head.backward(phi, g_logits, g_phi);
      // phi = scale * u / |u|
      double dot = 0;
      for (std::size_t k = 0; k < u.size(); ++k) dot += static_cast<double>(g_phi[k]) * phi[k] / scale;
      std::vector<float> g_u(u.size());
      for (std::size_t k = 0; k < u.size(); ++k)
        g_u[k] = static_cast<float>((g_phi[k] - dot * phi[k] / scale) * scale / norm);
      std::vector<float> g_h(h.size());
      enc.projection.backward(h, g_u, g_h);
      for (std::size_t k = 0; k < h.size(); ++k) g_h[k] *= 1.0f - h[k] * h[k];
      enc.hidden.backward(z, g_h, {});
    }
    return std::pair<double, int>{loss, pred};
  };

  std::vector<std::size_t> order(train_z.size());
  std::iota(order.begin(), order.end(), 0);
  double last_loss = 0.0;
  const auto batch = static_cast<std::size_t>(std::max(cfg.batch_size, 1));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[rng.index(k)]);
    double epoch_loss = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      const float w = 1.0f / static_cast<float>(end - start);
      for (std::size_t k = start; k < end; ++k) epoch_loss += run(train_z[order[k]], train_y[order[k]], true, w).first;
      opt.step();
    }
    last_loss = epoch_loss / static_cast<double>(order.size());
  }

  auto accuracy = [&](const std::vector<std::vector<float>>& zs, const std::vector<int>& ys) {
    if (zs.empty()) return 0.0;
    std::size_t ok = 0;
    for (std::size_t k = 0; k < zs.size(); ++k) ok += run(zs[k], ys[k], false, 0.0f).second == ys[k];
    return static_cast<double>(ok) / static_cast<double>(zs.size());
  };
  if (report != nullptr) {
    report->train_accuracy = accuracy(train_z, train_y);
    report->heldout_accuracy = accuracy(test_z, test_y);
    report->final_loss = last_loss;
    report->train_examples = train_z.size();
    report->heldout_examples = test_z.size();
    report->classes = classes;
  }
  enc.freeze();
  return enc;
}

ClusteringReport clustering(const std::vector<ToneEmbedding>& embeddings, const std::vector<int>& labels,
                            const std::vector<int>* content) {
  if (labels.size() != embeddings.size() || (content && content->size() != embeddings.size()))
    throw ContractError("clustering: label count mismatch");
  ClusteringReport r;
  double intra = 0, inter = 0;
  for (std::size_t a = 0; a < embeddings.size(); ++a) {
    for (std::size_t b = a + 1; b < embeddings.size(); ++b) {
      const double c = embeddings[a].cosine(embeddings[b]);
      if (labels[a] == labels[b]) {
        if (content && (*content)[a] == (*content)[b]) continue;
        intra += c;
        ++r.intra_pairs;
      } else {
        inter += c;
        ++r.inter_pairs;
      }
    }
  }
  r.intra_mean = r.intra_pairs ? intra / static_cast<double>(r.intra_pairs) : 0.0;
  r.inter_mean = r.inter_pairs ? inter / static_cast<double>(r.inter_pairs) : 0.0;
  return r;
}

}  // namespace hypertone
