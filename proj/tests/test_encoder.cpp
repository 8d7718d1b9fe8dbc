#include "doctest.h"

#include <cmath>
#include <numbers>

#include "hypertone/adam.hpp"
#include "hypertone/amp_sim.hpp"
#include "hypertone/encoder.hpp"
#include "support/helpers.hpp"

using namespace hypertone;

namespace {

AudioBuffer buffer(std::vector<float> v) { return AudioBuffer(std::move(v), kSampleRate); }

// Direct O(N^2) DFT and an independently written HTK filterbank.
std::vector<double> naive_stats(const std::vector<float>& x, const MelConfig& cfg) {
  const int N = cfg.fft_size, bins = N / 2 + 1;
  auto mel = [](double f) { return 1127.0 * std::log(1.0 + f / 700.0); };
  auto hz = [](double m) { return 700.0 * (std::exp(m / 1127.0) - 1.0); };
  std::vector<double> edge(cfg.mel_bands + 2);
  for (int k = 0; k < cfg.mel_bands + 2; ++k)
    edge[k] = hz(mel(cfg.fmin) + (mel(cfg.fmax) - mel(cfg.fmin)) * k / (cfg.mel_bands + 1));
  const std::size_t frames = (x.size() - N) / cfg.hop + 1;
  std::vector<std::vector<double>> v(cfg.mel_bands);
  for (std::size_t f = 0; f < frames; ++f) {
    std::vector<double> mag(bins);
    for (int k = 0; k < bins; ++k) {
      double re = 0, im = 0;
      for (int n = 0; n < N; ++n) {
        const double w = 0.5 * (1 - std::cos(2 * std::numbers::pi * n / (N - 1)));
        const double s = x[f * cfg.hop + n] * w;
        re += s * std::cos(2 * std::numbers::pi * k * n / N);
        im -= s * std::sin(2 * std::numbers::pi * k * n / N);
      }
      mag[k] = std::sqrt(re * re + im * im);
    }
    for (int m = 0; m < cfg.mel_bands; ++m) {
      double e = 0;
      for (int k = 0; k < bins; ++k) {
        const double fr = static_cast<double>(k) * kSampleRate / N;
        double w = 0;
        if (fr > edge[m] && fr <= edge[m + 1]) w = (fr - edge[m]) / (edge[m + 1] - edge[m]);
        else if (fr > edge[m + 1] && fr < edge[m + 2]) w = (edge[m + 2] - fr) / (edge[m + 2] - edge[m + 1]);
        e += w * mag[k];
      }
      v[m].push_back(std::log(e + cfg.log_floor));
    }
  }
  std::vector<double> out(2 * cfg.mel_bands);
  for (int m = 0; m < cfg.mel_bands; ++m) {
    double mean = 0, var = 0;
    for (double a : v[m]) mean += a;
    mean /= frames;
    for (double a : v[m]) var += (a - mean) * (a - mean);
    out[m] = mean;
    out[cfg.mel_bands + m] = std::sqrt(var / frames);
  }
  return out;
}

// 8 tones that differ mostly in drive, each on 16 distinct performances.
std::vector<LabeledClip> gain_ladder_corpus(int presets, int clips, double seconds, int heldout_per_preset) {
  std::vector<LabeledClip> out;
  for (int p = 0; p < presets; ++p) {
    TonePreset preset;
    preset.id = p;
    preset.pre_gain_db = 5.0 * p;
    preset.bands[1].gain_db = -6.0 + 1.5 * p;
    preset.cab_ir_index = p % 8;
    for (int c = 0; c < clips; ++c) {
      const auto clean = synthesize_performance(1000 + static_cast<std::uint64_t>(c) * 31 + p, seconds);
      out.push_back({render_preset(clean, preset), p, c >= clips - heldout_per_preset});
    }
  }
  return out;
}

}  // namespace

TEST_CASE("log-mel stats of silence") {
  const MelConfig cfg;
  const auto f = log_mel_stats(buffer(std::vector<float>(8192, 0.0f)), cfg);
  REQUIRE(f.size() == 128);
  for (int m = 0; m < 64; ++m) {
    CHECK(f[m] == doctest::Approx(std::log(1e-5)).epsilon(1e-6));
    CHECK(f[64 + m] == 0.0f);
  }
}

TEST_CASE("log-mel stats match a direct DFT oracle") {
  MelConfig cfg;
  cfg.fft_size = 64;
  cfg.hop = 16;
  cfg.mel_bands = 8;
  cfg.fmin = 200;
  cfg.fmax = 18000;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto x = testing::noise(64 + 16 * 9, seed, 0.5);
    const auto got = log_mel_stats(buffer(x), cfg);
    const auto want = naive_stats(x, cfg);
    for (std::size_t k = 0; k < want.size(); ++k) CHECK(got[k] == doctest::Approx(want[k]).epsilon(1e-4));
  }
}

TEST_CASE("scaling amplitude by 2 shifts every mean by log 2") {
  const MelConfig cfg;
  const auto x = testing::noise(2048 + 512 * 20, 3, 0.3);
  std::vector<float> x2(x);
  for (auto& v : x2) v *= 2.0f;
  const auto a = log_mel_stats(buffer(x), cfg), b = log_mel_stats(buffer(x2), cfg);
  double shift0 = b[0] - a[0];
  for (int m = 0; m < 64; ++m) {
    CHECK(b[m] - a[m] == doctest::Approx(std::log(2.0)).epsilon(0.01));
    CHECK(b[m] - a[m] == doctest::Approx(shift0).epsilon(0.01));
    CHECK(b[64 + m] == doctest::Approx(a[64 + m]).epsilon(0.01));
  }
}

TEST_CASE("time reversal leaves the statistics unchanged") {
  const MelConfig cfg;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto x = buffer(testing::noise(2048 + 512 * 30, seed + 10, 0.4));
    std::vector<float> r(x.samples.rbegin(), x.samples.rend());
    const auto a = log_mel_stats(x, cfg), b = log_mel_stats(buffer(r), cfg);
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(b[k] == doctest::Approx(a[k]).epsilon(1e-4));
  }
}

TEST_CASE("short audio is rejected") {
  const MelConfig cfg;
  CHECK_THROWS_AS(log_mel_stats(buffer(std::vector<float>(2047, 0.1f)), cfg), ContractError);
  Rng rng(1);
  const auto enc = EncoderWeights::create(cfg, 16, 8, rng);
  CHECK_THROWS_AS(encode(buffer(std::vector<float>(22049, 0.1f)), enc), ContractError);
  CHECK_NOTHROW(encode(buffer(testing::noise(22050, 1)), enc));
}

TEST_CASE("mel config validation") {
  MelConfig cfg;
  cfg.fmax = 30000;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg = MelConfig{};
  cfg.mel_bands = 0;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
}

TEST_CASE("encode is deterministic and unit norm") {
  Rng rng(2);
  const MelConfig cfg;
  const auto enc = EncoderWeights::create(cfg, 128, 64, rng);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng len_rng(seed);
    const auto x = buffer(testing::noise(22050 + len_rng.index(44100), seed, 0.05 + len_rng.uniform()));
    const auto a = encode(x, enc), b = encode(x, enc);
    CHECK(a.vector == b.vector);
    double n = 0;
    for (float v : a.vector) n += static_cast<double>(v) * v;
    CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("pretraining separates tones, freezes, and is deterministic") {
  const auto clips = gain_ladder_corpus(8, 16, 1.5, 4);
  EncoderTrainConfig cfg;
  cfg.epochs = 40;
  cfg.crops_per_clip = 4;
  cfg.seed = 5;
  EncoderTrainReport report;
  const MelConfig mel;
  auto enc = pretrain_encoder(clips, cfg, mel, &report);
  MESSAGE("held-out accuracy " << report.heldout_accuracy << " train " << report.train_accuracy);
  CHECK(report.classes == 8);
  CHECK(report.heldout_examples == 8 * 4 * 4);
  CHECK(report.heldout_accuracy > 0.9);
  CHECK(enc.frozen);

  SUBCASE("frozen weights refuse optimiser steps") {
    auto params = enc.params();
    for (auto* p : params) std::fill(p->grad.begin(), p->grad.end(), 0.1f);
    AdamOptimizer<float> opt(params, AdamConfig{});
    CHECK_THROWS_AS(opt.step(), FrozenError);
  }
  SUBCASE("same seed gives identical weights") {
    auto again = pretrain_encoder(clips, cfg, mel, nullptr);
    CHECK(again.hidden.weight.values == enc.hidden.weight.values);
    CHECK(again.projection.weight.values == enc.projection.weight.values);
    CHECK(again.feature_mean == enc.feature_mean);
  }
  SUBCASE("same-tone embeddings cluster across performances") {
    std::vector<ToneEmbedding> embs;
    std::vector<int> labels, content;
    for (std::size_t k = 0; k < clips.size(); ++k) {
      if (!clips[k].heldout) continue;
      embs.push_back(encode(clips[k].audio, enc));
      labels.push_back(clips[k].label);
      content.push_back(static_cast<int>(k % 16));
    }
    const auto c = clustering(embs, labels, &content);
    MESSAGE("intra " << c.intra_mean << " inter " << c.inter_mean);
    CHECK(c.intra_pairs > 0);
    CHECK(c.margin() > 0);
  }
}

TEST_CASE("pretraining needs at least two tones") {
  auto clips = gain_ladder_corpus(1, 3, 1.0, 0);
  EncoderTrainConfig cfg;
  cfg.epochs = 1;
  CHECK_THROWS_AS(pretrain_encoder(clips, cfg, MelConfig{}, nullptr), Error);
}

TEST_CASE("clustering report over a hand-built set") {
  std::vector<ToneEmbedding> e{ToneEmbedding::from_raw(std::vector<float>{1, 0}),
                               ToneEmbedding::from_raw(std::vector<float>{1, 0.1f}),
                               ToneEmbedding::from_raw(std::vector<float>{0, 1})};
  const std::vector<int> labels{0, 0, 1};
  const auto c = clustering(e, labels);
  CHECK(c.intra_pairs == 1);
  CHECK(c.inter_pairs == 2);
  CHECK(c.intra_mean == doctest::Approx(1.0 / std::sqrt(1.01)));
  CHECK(c.inter_mean == doctest::Approx((0.0 + 0.1 / std::sqrt(1.01)) / 2));
  const std::vector<int> same_content{0, 0, 1};
  CHECK(clustering(e, labels, &same_content).intra_pairs == 0);
}

TEST_CASE("crop offsets are in range and seeded") {
  Rng a(3), b(3);
  const auto oa = crop_offsets(10000, 3000, 16, a), ob = crop_offsets(10000, 3000, 16, b);
  CHECK(oa == ob);
  for (auto o : oa) CHECK(o + 3000 <= 10000);
  const auto c = crop(buffer(testing::noise(100, 1)), 10, 20);
  CHECK(c.size() == 20);
}
