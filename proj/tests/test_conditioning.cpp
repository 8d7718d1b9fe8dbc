#include "doctest.h"

#include "hypertone/adam.hpp"
#include "hypertone/conditioning.hpp"
#include "support/gradcheck_cases.hpp"
#include "support/helpers.hpp"
#include "support/oracles.hpp"

using namespace hypertone;

namespace {

ToneEmbedding random_phi(Rng& rng, std::size_t d = kDefaultEmbeddingDim) {
  std::vector<float> v(d);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return ToneEmbedding::from_raw(v);
}

GcnConfig desk(CondMode m, int blocks = 3) {
  GcnConfig cfg;
  cfg.num_blocks = blocks;
  cfg.channels = 8;
  cfg.skip_channels = 8;
  cfg.cond_mode = m;
  return cfg;
}

}  // namespace

TEST_CASE("tone embedding normalisation") {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<float> v(1 + rng.index(100));
    for (auto& x : v) x = static_cast<float>(rng.uniform(-100, 100));
    v[0] += 1.0f;
    const auto e = ToneEmbedding::from_raw(v, "t");
    double n = 0;
    for (float x : e.vector) n += static_cast<double>(x) * x;
    CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(e.source_id == "t");
  }
  CHECK_THROWS_AS(ToneEmbedding::from_raw(std::vector<float>(4, 0.0f)), NumericError);
  CHECK_THROWS_AS(ToneEmbedding::from_raw(std::vector<float>{1.0f, NAN}), NumericError);
  const auto a = random_phi(rng), b = random_phi(rng);
  CHECK(a.fingerprint() != b.fingerprint());
  CHECK(a.fingerprint() == ToneEmbedding::from_raw(a.vector).fingerprint());
  CHECK(a.cosine(a) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("modulate_weights hand examples") {
  std::vector<float> W{1.0f, -2.0f}, b{0.5f, 1.0f}, Wo(2), bo(2);
  std::vector<float> dW{0.5f, 0.25f}, db{0.0f, 0.0f};
  modulate_weights<float>(W, b, 2, dW, db, Wo, bo);
  CHECK(Wo == std::vector<float>{1.5f, -2.5f});
  CHECK(bo == b);

  const std::vector<float> zero2(2, 0.0f);
  modulate_weights<float>(W, b, 2, zero2, zero2, Wo, bo);
  CHECK(Wo == W);
  CHECK(bo == b);

  const std::vector<float> minus1(2, -1.0f);
  modulate_weights<float>(W, b, 2, minus1, minus1, Wo, bo);
  for (float v : Wo) CHECK(v == 0.0f);
  for (float v : bo) CHECK(v == 0.0f);

  modulate_weights<float>(W, std::span<const float>(b.data(), 1), 1, std::vector<float>{0.5f},
                          std::vector<float>{1.0f}, Wo, std::span<float>(bo.data(), 1));
  CHECK(Wo == std::vector<float>{1.5f, -3.0f});

  const std::vector<float> bad{NAN, 0.0f};
  CHECK_THROWS_AS(modulate_weights<float>(W, b, 2, bad, zero2, Wo, bo), NumericError);
  CHECK_THROWS_AS(modulate_weights<float>(W, b, 2, zero2, bad, Wo, bo), NumericError);
  CHECK_THROWS_AS(modulate_weights<float>(W, b, 2, std::vector<float>(3, 0.0f), zero2, Wo, bo), ContractError);
}

TEST_CASE("modulate_weights equals the elementwise law exactly") {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t oc = 1 + rng.index(8), per = 1 + rng.index(12);
    const bool full = rng.index(2) == 1;
    std::vector<float> W(oc * per), b(oc), dW(full ? oc * per : oc), db(oc), Wo(W.size()), bo(oc);
    for (auto* v : {&W, &b, &dW, &db})
      for (auto& x : *v) x = static_cast<float>(rng.uniform(-3, 3));
    modulate_weights<float>(W, b, oc, dW, db, Wo, bo);
    for (std::size_t c = 0; c < oc; ++c) {
      for (std::size_t k = 0; k < per; ++k) {
        const std::size_t i = c * per + k;
        const float d = full ? dW[i] : dW[c];
        REQUIRE(Wo[i] == W[i] * (1.0f + d));
      }
      REQUIRE(bo[c] == b[c] * (1.0f + db[c]));
    }
  }
}

TEST_CASE("hypernetwork structure and zero-initialised output") {
  Rng rng(3);
  GcnConfig large;
  large.num_blocks = 20;
  large.cond_mode = CondMode::hypernet;
  auto g = ConditionedGenerator<float>::create(large, rng);
  REQUIRE(g.hyper);
  CHECK(g.hyper->layers.size() == 60);
  const auto phi = random_phi(rng);
  for (std::size_t l = 0; l < g.hyper->layers.size(); ++l) {
    const auto d = g.hyper->deltas(phi.vector, l);
    CHECK(d.weight.size() == g.hyper->layers[l].target.out_channels());
    CHECK(d.bias.size() == g.hyper->layers[l].target.out_channels());
    for (float v : d.weight) REQUIRE(v == 0.0f);
    for (float v : d.bias) REQUIRE(v == 0.0f);
  }
  CHECK_THROWS_AS(g.hyper->deltas(phi.vector, 60), ContractError);
  CHECK_THROWS_AS(g.hyper->deltas(std::vector<float>(10, 0.1f), 0), ContractError);

  auto full = ConditionedGenerator<float>::create(desk(CondMode::hypernet), rng, 64, DeltaGranularity::full);
  const auto d = full.hyper->deltas(phi.vector, 0);
  CHECK(d.weight.size() == full.hyper->layers[0].target.weight_count());
}

TEST_CASE("hyper deltas: determinism and distinct outputs after training") {
  Rng rng(4);
  auto g = ConditionedGenerator<float>::create(desk(CondMode::hypernet), rng);
  const auto a = random_phi(rng), b = random_phi(rng);

  // A few optimisation steps pushing layer 0 deltas towards a phi-dependent target.
  auto& L = g.hyper->layers[0];
  ParamRefs<float> refs;
  L.hidden.collect(refs);
  L.output.collect(refs);
  AdamOptimizer<float> opt(refs, AdamConfig{1e-2});
  for (int step = 0; step < 20; ++step) {
    for (const auto* phi : {&a, &b}) {
      std::vector<float> hid;
      const auto d = L.deltas(phi->vector, &hid);
      Deltas<float> grad{d.weight, d.bias};
      const float sign = phi == &a ? 1.0f : -1.0f;
      for (auto& v : grad.weight) v -= sign;
      for (auto& v : grad.bias) v -= sign;
      L.backward(phi->vector, hid, grad);
    }
    opt.step();
  }
  const auto da = g.hyper->deltas(a.vector, 0), da2 = g.hyper->deltas(a.vector, 0), db = g.hyper->deltas(b.vector, 0);
  CHECK(da.weight == da2.weight);
  CHECK(da.bias == da2.bias);
  double diff = 0;
  for (std::size_t k = 0; k < da.weight.size(); ++k) diff = std::max(diff, std::abs(static_cast<double>(da.weight[k]) - db.weight[k]));
  CHECK(diff > 0);
}

TEST_CASE("FiLM generator and apply_film") {
  Rng rng(5);
  auto g = ConditionedGenerator<float>::create(desk(CondMode::film), rng);
  REQUIRE(g.film);
  const auto phi = random_phi(rng);
  for (std::size_t b = 0; b < 3; ++b) {
    const auto [gamma, beta] = g.film->params(phi.vector, b);
    for (float v : gamma) CHECK(v == 1.0f);
    for (float v : beta) CHECK(v == 0.0f);
  }
  CHECK_THROWS_AS(g.film->params(std::vector<float>(3, 0.0f), 0), ContractError);

  Tensor<float> h({2, 3}, {1, 2, 3, -4, 5, -6});
  const std::vector<float> ones(2, 1.0f), zeros(2, 0.0f), half(2, 0.5f);
  CHECK(apply_film<float>(h, ones, zeros).values == h.values);
  for (float v : apply_film<float>(h, zeros, half).values) CHECK(v == 0.5f);
  const std::vector<float> gm{2.0f, -1.0f}, bt{0.0f, 1.0f};
  CHECK(apply_film<float>(h, gm, bt).values == std::vector<float>{2, 4, 6, 5, -4, 7});
  CHECK_THROWS_AS(apply_film<float>(h, std::vector<float>(3, 1.0f), zeros), ContractError);
}

TEST_CASE("identity at initialisation: conditioned output equals the unconditioned forward") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (CondMode mode : {CondMode::film, CondMode::hypernet}) {
      Rng rng(seed);
      GcnConfig cfg = desk(mode, 4);
      auto g = ConditionedGenerator<float>::create(cfg, rng);
      GcnConfig plain = cfg;
      plain.cond_mode = CondMode::none;
      ConditionedGenerator<float> base{GcnModel<float>{plain, g.gcn.params}, g.embedding_dim, std::nullopt, std::nullopt};
      const auto phi = random_phi(rng);
      const auto x = testing::noise(3000, seed + 100);
      REQUIRE(g.forward(x, std::span<const float>(phi.vector)) == base.forward(x));
    }
  }
}

TEST_CASE("conditioning contract: embedding presence and dimension") {
  Rng rng(6);
  auto none = ConditionedGenerator<float>::create(desk(CondMode::none), rng);
  auto hyp = ConditionedGenerator<float>::create(desk(CondMode::hypernet), rng);
  const auto x = testing::noise(64, 1);
  const auto phi = random_phi(rng);
  CHECK_THROWS_AS(none.forward(x, std::span<const float>(phi.vector)), ContractError);
  CHECK_THROWS_AS(hyp.forward(x), ContractError);
  CHECK_THROWS_AS(hyp.forward(x, std::span<const float>(phi.vector.data(), 10)), ContractError);
}

TEST_CASE("bake applies the deltas once and reproduces the conditioned forward") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto g = ConditionedGenerator<float>::create(desk(CondMode::hypernet), rng);
    // zero-delta network bakes to the base weights
    const auto phi = random_phi(rng);
    const auto b0 = g.bake(phi.vector, phi.fingerprint());
    ParamRefs<float> base_refs, baked_refs;
    g.gcn.params.collect(base_refs);
    const_cast<GcnParams<float>&>(b0.params).collect(baked_refs);
    for (std::size_t k = 0; k < base_refs.size(); ++k) REQUIRE(base_refs[k]->values == baked_refs[k]->values);
    CHECK(b0.embedding_fingerprint == phi.fingerprint());

    // non-trivial deltas: the baked generator is the modulated generator
    for (auto& L : g.hyper->layers)
      for (auto& v : L.output.weight.values) v = static_cast<float>(rng.uniform(-0.3, 0.3));
    for (auto& L : g.gcn.params.blocks) {
      for (auto& v : L.dilated.bias.values) v = static_cast<float>(rng.uniform(-0.1, 0.1));
    }
    const auto baked = g.bake(phi.vector);
    const auto x = testing::noise(2000, 50 + trial);
    const auto direct = g.forward(x, std::span<const float>(phi.vector));
    const auto via_bake = gcn_forward_params<float>(baked.config, baked.params, x, nullptr);
    CHECK(direct == via_bake);

    // the baked weights are exactly W * (1 + dW) for every conditioned layer
    for (std::size_t l = 0; l < g.hyper->layers.size(); ++l) {
      const auto& target = g.hyper->layers[l].target;
      const auto d = g.hyper->deltas(phi.vector, l);
      const auto& W = g.gcn.params.layer(target).weight.values;
      const auto& Wb = baked.params.layer(target).weight.values;
      const std::size_t per = W.size() / target.out_channels();
      for (std::size_t k = 0; k < W.size(); ++k) REQUIRE(Wb[k] == W[k] * (1.0f + d.weight[k / per]));
    }
  }
}

TEST_CASE("FiLM and hypernet forwards match the definition oracle") {
  Rng rng(8);
  for (CondMode mode : {CondMode::film, CondMode::hypernet}) {
    auto g = ConditionedGenerator<float>::create(desk(mode), rng);
    for (auto* p : g.trainable())
      for (auto& v : p->values) v += static_cast<float>(rng.uniform(-0.05, 0.05));
    const auto phi = random_phi(rng);
    const auto x = testing::noise(1200, 9);
    const auto y = g.forward(x, std::span<const float>(phi.vector));
    std::vector<double> ref;
    if (mode == CondMode::film) {
      std::vector<std::vector<double>> gm, bt;
      for (std::size_t b = 0; b < 3; ++b) {
        auto [G, B] = g.film->cast<double>().params(oracle::widen(phi.vector), b);
        gm.push_back(G);
        bt.push_back(B);
      }
      ref = oracle::gcn(g.gcn.config, g.gcn.params, oracle::widen(x), &gm, &bt);
    } else {
      // Modulate in double straight from the law.
      auto p = g.gcn.params.cast<double>();
      const auto H = g.hyper->cast<double>();
      for (std::size_t l = 0; l < H.layers.size(); ++l) {
        const auto d = H.layers[l].deltas(oracle::widen(phi.vector));
        auto& L = p.layer(H.layers[l].target);
        const std::size_t per = L.weight.size() / L.out_channels();
        for (std::size_t k = 0; k < L.weight.size(); ++k) L.weight.values[k] *= 1.0 + d.weight[k / per];
        for (std::size_t c = 0; c < L.bias.size(); ++c) L.bias.values[c] *= 1.0 + d.bias[c];
      }
      ref = oracle::gcn(g.gcn.config, p, oracle::widen(x));
    }
    double err = 0, scale = 1e-3;
    for (std::size_t t = 0; t < y.size(); ++t) {
      err = std::max(err, std::abs(y[t] - ref[t]));
      scale = std::max(scale, std::abs(ref[t]));
    }
    CHECK(err / scale < 1e-4);
  }
}

TEST_CASE("end-to-end gradients through FiLM and the hypernetwork at 64-bit") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (auto [mode, gran] : {std::pair{CondMode::film, DeltaGranularity::per_channel},
                              std::pair{CondMode::hypernet, DeltaGranularity::per_channel},
                              std::pair{CondMode::hypernet, DeltaGranularity::full}}) {
      const auto r = testing::generator_gradcheck(mode, seed, gran);
      INFO(to_string(mode) << "/" << to_string(gran) << " seed " << seed << " worst " << r.worst_param << "["
                           << r.worst_index << "] a=" << r.analytic << " n=" << r.numeric);
      CHECK(r.max_relative_error < 1e-4);
    }
  }
}

TEST_CASE("hypernet with zero deltas equals the unconditioned generator") {
  Rng rng(10);
  auto g = ConditionedGenerator<float>::create(desk(CondMode::hypernet), rng);
  for (auto& b : g.gcn.params.blocks)
    for (auto& v : b.skip.bias.values) v = static_cast<float>(rng.uniform(-0.1, 0.1));
  GcnConfig plain = g.gcn.config;
  plain.cond_mode = CondMode::none;
  const auto x = testing::noise(512, 2);
  const auto phi = random_phi(rng);
  CHECK(g.forward(x, std::span<const float>(phi.vector)) == gcn_forward_params<float>(plain, g.gcn.params, x, nullptr));
}
