#include "doctest.h"

#include <atomic>
#include <thread>

#include "hypertone/stream.hpp"
#include "support/alloc_counter.hpp"
#include "support/helpers.hpp"

using namespace hypertone;

namespace {

ToneEmbedding random_phi(Rng& rng) {
  std::vector<float> v(kDefaultEmbeddingDim);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return ToneEmbedding::from_raw(v);
}

// Trained-looking model: non-zero conditioning and biases.
ConditionedGenerator<float> random_model(CondMode mode, std::uint64_t seed, int blocks = 10, int channels = 16) {
  GcnConfig cfg;
  cfg.num_blocks = blocks;
  cfg.channels = channels;
  cfg.skip_channels = channels;
  cfg.cond_mode = mode;
  Rng rng(seed);
  auto g = ConditionedGenerator<float>::create(cfg, rng);
  for (auto* p : g.trainable())
    for (auto& v : p->values) v += static_cast<float>(rng.uniform(-0.05, 0.05));
  return g;
}

}  // namespace

TEST_CASE("history ring gather and push") {
  HistoryRing ring(2, 5);
  const std::vector<float> rows{1, 2, 3, 10, 20, 30};  // 2 channels, stride 3
  ring.push(rows.data(), 3, 3);
  CHECK(ring.contents(0) == std::vector<float>{0, 0, 1, 2, 3});
  CHECK(ring.contents(1) == std::vector<float>{0, 0, 10, 20, 30});
  const std::vector<float> block{4, 5, 6, 7};
  std::vector<float> dst(4);
  ring.gather(0, 2, block.data(), 4, dst.data());
  CHECK(dst == std::vector<float>{2, 3, 4, 5});
  ring.gather(0, 5, block.data(), 4, dst.data());
  CHECK(dst == std::vector<float>{0, 0, 1, 2});
  const std::vector<float> more{4, 5, 6, 7, 8, 9, 40, 50, 60, 70, 80, 90};
  ring.push(more.data(), 6, 6);
  CHECK(ring.contents(0) == std::vector<float>{5, 6, 7, 8, 9});
  ring.clear();
  CHECK(ring.contents(1) == std::vector<float>(5, 0.0f));
}

TEST_CASE("history ring equals a naive delay line under random pushes") {
  Rng rng(1);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t cap = 1 + rng.index(40);
    HistoryRing ring(1, cap);
    std::vector<float> stream;
    for (int step = 0; step < 30; ++step) {
      const std::size_t n = 1 + rng.index(60);
      std::vector<float> blk(n);
      for (auto& v : blk) v = static_cast<float>(rng.uniform(-1, 1));
      const std::size_t delay = 1 + rng.index(cap);
      std::vector<float> got(n);
      ring.gather(0, delay, blk.data(), n, got.data());
      for (std::size_t t = 0; t < n; ++t) {
        const long src = static_cast<long>(stream.size() + t) - static_cast<long>(delay);
        const float want = src < 0 ? 0.0f : (static_cast<std::size_t>(src) < stream.size() ? stream[src] : blk[src - stream.size()]);
        REQUIRE(got[t] == want);
      }
      ring.push(blk.data(), n, n);
      stream.insert(stream.end(), blk.begin(), blk.end());
    }
  }
}

TEST_CASE("ring capacities are (K-1)*d") {
  auto g = random_model(CondMode::none, 1);
  auto proc = init_stream(g, nullptr, 64);
  const auto d = g.gcn.config.resolved_dilations();
  for (std::size_t b = 0; b < d.size(); ++b) {
    CHECK(proc->ring(b).capacity() == static_cast<std::size_t>(2 * d[b]));
    CHECK(proc->ring(b).channels() == 16);
  }
}

TEST_CASE("fresh processor maps silence to silence for a zero-bias model") {
  GcnConfig cfg;
  Rng rng(2);
  auto g = ConditionedGenerator<float>::create(cfg, rng);
  auto proc = init_stream(g, nullptr, 128);
  std::vector<float> in(128, 0.0f), out(128, 1.0f);
  for (int k = 0; k < 5; ++k) {
    proc->process_block(in, out);
    for (float v : out) REQUIRE(v == 0.0f);
  }
}

TEST_CASE("init from phi equals init from precomputed bake") {
  auto g = random_model(CondMode::hypernet, 3);
  Rng rng(3);
  const auto phi = random_phi(rng);
  auto a = init_stream(g, &phi, 128);
  StreamProcessor b(bake(g, &phi), 128);
  const auto x = testing::noise(128 * 20, 4);
  std::vector<float> ya(128), yb(128);
  for (std::size_t off = 0; off < x.size(); off += 128) {
    a->process_block(std::span<const float>(x).subspan(off, 128), ya);
    b.process_block(std::span<const float>(x).subspan(off, 128), yb);
    REQUIRE(ya == yb);
  }
  CHECK(a->active_fingerprint() == phi.fingerprint());
}

TEST_CASE("streaming equals offline for fixed block sizes") {
  for (CondMode mode : {CondMode::none, CondMode::film, CondMode::hypernet}) {
    auto g = random_model(mode, 5);
    Rng rng(5);
    const auto phi = random_phi(rng);
    const ToneEmbedding* ph = mode == CondMode::none ? nullptr : &phi;
    const auto x = testing::noise(44100, 6);
    const auto offline = mode == CondMode::none ? g.forward(x) : g.forward(x, std::span<const float>(phi.vector));
    const auto baked = bake(g, ph);
    for (std::size_t bs : {16u, 64u, 128u, 441u}) {
      const auto y = render_streaming(baked, x, bs);
      CHECK(testing::max_abs_diff(y, offline) < 1e-5);
    }
  }
}

TEST_CASE("streaming equals offline over random partitions") {
  auto g = random_model(CondMode::hypernet, 7);
  Rng rng(7);
  const auto phi = random_phi(rng);
  const auto x = testing::noise(20000, 8);
  const auto offline = g.forward(x, std::span<const float>(phi.vector));
  const auto baked = bake(g, &phi);
  for (int trial = 0; trial < 10; ++trial) {
    const auto parts = testing::random_partition(x.size(), 1 + rng.index(700), rng);
    CHECK(testing::max_abs_diff(render_partitioned(baked, x, parts), offline) < 1e-5);
  }
}

TEST_CASE("impulse split across a block boundary and silent tail") {
  auto g = random_model(CondMode::none, 9);
  const auto baked = bake(g, nullptr);
  std::vector<float> x(6000, 0.0f);
  x[127] = 0.8f;
  x[128] = -0.5f;
  std::fill(x.begin() + 300, x.begin() + 900, 0.3f);
  const auto offline = g.forward(x);
  const std::vector<std::size_t> parts{128, 100, 28, 1000, 2048, 2048, 648};
  CHECK(testing::max_abs_diff(render_partitioned(baked, x, parts), offline) < 1e-5);
  CHECK(testing::max_abs_diff(render_streaming(baked, x, 128), offline) < 1e-5);
}

TEST_CASE("ring contents equal the tail of each layer's input stream") {
  auto g = random_model(CondMode::none, 10);
  const auto x = testing::noise(3000, 11);
  Rng rng(10);
  const auto parts = testing::random_partition(x.size(), 300, rng);
  StreamProcessor proc(bake(g, nullptr), 300);
  GcnCache<float> cache;
  gcn_forward_params<float>(g.gcn.config, g.gcn.params, x, nullptr, &cache);
  std::vector<float> y(300);
  std::size_t pos = 0;
  for (std::size_t n : parts) {
    proc.process_block(std::span<const float>(x).subspan(pos, n), std::span<float>(y).subspan(0, n));
    pos += n;
  }
  for (std::size_t b = 0; b < g.gcn.params.blocks.size(); ++b) {
    const auto& ring = proc.ring(b);
    for (std::size_t c = 0; c < ring.channels(); ++c) {
      const auto got = ring.contents(c);
      const float* row = cache.block_input[b].row(c);
      for (std::size_t a = 0; a < ring.capacity(); ++a) {
        const long t = static_cast<long>(x.size() - ring.capacity() + a);
        const float want = t < 0 ? 0.0f : row[t];
        REQUIRE(std::abs(got[a] - want) < 1e-5f);
      }
    }
  }
}

TEST_CASE("reset returns to the freshly initialised state") {
  auto g = random_model(CondMode::none, 12);
  auto proc = init_stream(g, nullptr, 64);
  const auto x = testing::noise(64 * 30, 13);
  std::vector<float> first, second, y(64);
  for (std::size_t off = 0; off < x.size(); off += 64) {
    proc->process_block(std::span<const float>(x).subspan(off, 64), y);
    first.insert(first.end(), y.begin(), y.end());
  }
  proc->reset();
  for (std::size_t off = 0; off < x.size(); off += 64) {
    proc->process_block(std::span<const float>(x).subspan(off, 64), y);
    second.insert(second.end(), y.begin(), y.end());
  }
  CHECK(first == second);
}

TEST_CASE("partial final block is allowed and flagged") {
  auto g = random_model(CondMode::none, 14);
  auto proc = init_stream(g, nullptr, 128);
  std::vector<float> in(128, 0.1f), out(128);
  proc->process_block(in, out);
  CHECK_FALSE(proc->last_block_partial());
  proc->process_block(std::span<const float>(in).subspan(0, 50), out);
  CHECK(proc->last_block_partial());
  std::vector<float> big(129, 0.0f), big_out(129);
  CHECK_THROWS_AS(proc->process_block(big, big_out), ContractError);
  CHECK_THROWS_AS(init_stream(g, nullptr, 0), ContractError);
}

TEST_CASE("non-finite input raises an engine fault naming the layer") {
  auto g = random_model(CondMode::none, 15);
  auto proc = init_stream(g, nullptr, 32);
  std::vector<float> in(32, 0.1f), out(32);
  in[5] = NAN;
  try {
    proc->process_block(in, out);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("block") != std::string::npos);
  }
}

TEST_CASE("set_tone: identical weights leave output unchanged") {
  auto g = random_model(CondMode::hypernet, 16);
  Rng rng(16);
  const auto phi = random_phi(rng);
  const auto baked = bake(g, &phi);
  const auto x = testing::noise(128 * 40, 17);
  const auto ref = render_streaming(baked, x, 128);
  StreamProcessor proc(baked, 128);
  std::vector<float> y, blk(128);
  for (std::size_t off = 0; off < x.size(); off += 128) {
    if (off % 512 == 0) proc.set_tone(baked);
    proc.process_block(std::span<const float>(x).subspan(off, 128), blk);
    y.insert(y.end(), blk.begin(), blk.end());
  }
  CHECK(y == ref);
}

TEST_CASE("set_tone mid-stream switches exactly at the block boundary") {
  auto g = random_model(CondMode::hypernet, 18);
  Rng rng(18);
  const auto a = random_phi(rng), b = random_phi(rng);
  const auto wa = bake(g, &a), wb = bake(g, &b);
  const auto x = testing::noise(30000, 19);
  const std::size_t bs = 128, swap_block = 40, boundary = swap_block * bs;
  const auto old_ref = g.forward(x, std::span<const float>(a.vector));
  const auto new_ref = g.forward(x, std::span<const float>(b.vector));
  const std::size_t rf = static_cast<std::size_t>(receptive_field(g.gcn.config));

  StreamProcessor proc(wa, bs);
  std::vector<float> y(x.size()), blk(bs);
  for (std::size_t k = 0; k * bs < x.size(); ++k) {
    if (k == swap_block) proc.set_tone(wb);
    const std::size_t n = std::min(bs, x.size() - k * bs);
    proc.process_block(std::span<const float>(x).subspan(k * bs, n), std::span<float>(y).subspan(k * bs, n));
    CHECK(proc.active_fingerprint() == (k < swap_block ? a.fingerprint() : b.fingerprint()));
  }
  double before = 0, after = 0;
  for (std::size_t t = 0; t < boundary; ++t) before = std::max(before, std::abs(static_cast<double>(y[t]) - old_ref[t]));
  // once the receptive field lies wholly after the swap, only the new weights matter
  for (std::size_t t = boundary + rf; t < x.size(); ++t)
    after = std::max(after, std::abs(static_cast<double>(y[t]) - new_ref[t]));
  CHECK(before < 1e-5);
  CHECK(after < 1e-5);
  // the first post-swap block already differs from the old-weights oracle
  double moved = 0;
  for (std::size_t t = boundary; t < boundary + bs; ++t) moved = std::max(moved, std::abs(static_cast<double>(y[t]) - old_ref[t]));
  CHECK(moved > 1e-6);
}

TEST_CASE("two rapid set_tone calls: the last one wins") {
  auto g = random_model(CondMode::hypernet, 20);
  Rng rng(20);
  const auto a = random_phi(rng), b = random_phi(rng), c = random_phi(rng);
  StreamProcessor proc(bake(g, &a), 64);
  proc.set_tone(bake(g, &b));
  proc.set_tone(bake(g, &c));
  std::vector<float> in(64, 0.1f), out(64);
  proc.process_block(in, out);
  CHECK(proc.active_fingerprint() == c.fingerprint());
  proc.process_block(in, out);
  CHECK(proc.active_fingerprint() == c.fingerprint());
}

TEST_CASE("set_tone rejects weights of another shape") {
  auto g = random_model(CondMode::none, 21);
  auto other = random_model(CondMode::none, 21, 4, 8);
  StreamProcessor proc(bake(g, nullptr), 64);
  CHECK_THROWS_AS(proc.set_tone(bake(other, nullptr)), ContractError);
}

TEST_CASE("process_block performs no allocation") {
  for (CondMode mode : {CondMode::none, CondMode::film, CondMode::hypernet}) {
    auto g = random_model(mode, 22);
    Rng rng(22);
    const auto a = random_phi(rng), b = random_phi(rng);
    const ToneEmbedding* pa = mode == CondMode::none ? nullptr : &a;
    const ToneEmbedding* pb = mode == CondMode::none ? nullptr : &b;
    auto proc = init_stream(g, pa, 128);
    const auto x = testing::noise(128 * 50, 23);
    std::vector<float> out(128);
    const auto wb = bake(g, pb);
    std::size_t allocs = 0;
    for (std::size_t k = 0; k < 50; ++k) {
      if (k == 25) proc->set_tone(wb);  // control context, outside the scope
      testing::AllocScope scope;
      proc->process_block(std::span<const float>(x).subspan(k * 128, k % 7 == 6 ? 100 : 128), out);
      allocs += scope.count();
    }
    CHECK(allocs == 0);
  }
}

TEST_CASE("allocation counter sees allocations") {
  testing::AllocScope scope;
  auto* v = new std::vector<int>(100);
  delete v;
  CHECK(scope.count() >= 2);
}

TEST_CASE("concurrent set_tone: audio side always sees a published tone") {
  auto g = random_model(CondMode::hypernet, 24, 4, 8);
  Rng rng(24);
  std::vector<ToneEmbedding> tones;
  std::vector<BakedWeights> baked;
  for (int k = 0; k < 4; ++k) {
    tones.push_back(random_phi(rng));
    baked.push_back(bake(g, &tones.back()));
  }
  StreamProcessor proc(baked[0], 64);
  std::atomic<bool> stop{false};
  std::thread control([&] {
    std::size_t k = 0;
    while (!stop.load()) proc.set_tone(baked[++k % 4]);
  });
  const auto x = testing::noise(64, 25);
  std::vector<float> out(64);
  std::vector<int> seen(4, 0);
  for (int iter = 0; iter < 3000; ++iter) {
    proc.process_block(x, out);
    const auto fp = proc.active_fingerprint();
    int idx = -1;
    for (int k = 0; k < 4; ++k)
      if (tones[k].fingerprint() == fp) idx = k;
    REQUIRE(idx >= 0);
    ++seen[idx];
    for (float v : out) REQUIRE(std::isfinite(v));
  }
  stop = true;
  control.join();
  // after the control thread stops, the final published tone is picked up
  const std::size_t last = 0;
  proc.set_tone(baked[last]);
  proc.process_block(x, out);
  CHECK(proc.active_fingerprint() == tones[last].fingerprint());
}

TEST_CASE("bench_rtf report") {
  auto g = random_model(CondMode::hypernet, 25);
  Rng rng(25);
  const auto phi = random_phi(rng);
  const auto r = bench_rtf(g, &phi, 1.0, 128, 0);
  CHECK(r.rtf > 0);
  CHECK(r.samples == 44100);
  CHECK(r.block_size == 128);
  CHECK(r.worst_block_s > 0);
  CHECK(r.config_hash == config_hash(g.gcn.config));
  CHECK(r.to_json().find("\"rtf\"") != std::string::npos);
  CHECK_THROWS_AS(bench_rtf(g, &phi, 0.5, 128, 0), ContractError);
}

TEST_CASE("bench_rtf: independent of phi and linear in duration") {
  auto g = random_model(CondMode::hypernet, 26);
  Rng rng(26);
  const auto a = random_phi(rng), b = random_phi(rng);
  // interleaved best-of-N damps scheduler noise on shared machines
  double wa = INFINITY, wb = INFINITY, w4 = INFINITY;
  for (int rep = 0; rep < 9; ++rep) {
    wa = std::min(wa, bench_rtf(g, &a, 2.0, 128, 0).wall_time_s);
    wb = std::min(wb, bench_rtf(g, &b, 2.0, 128, 0).wall_time_s);
    w4 = std::min(w4, bench_rtf(g, &a, 4.0, 128, 0).wall_time_s);
  }
  MESSAGE("wall 2s(a) " << wa << " 2s(b) " << wb << " 4s(a) " << w4);
  CHECK(std::abs(wa - wb) / std::min(wa, wb) < 0.05);
  CHECK(w4 / wa == doctest::Approx(2.0).epsilon(0.10));
}
