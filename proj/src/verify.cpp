#include "hypertone/verify.hpp"

#include <cmath>

#include "hypertone/trainer.hpp"

namespace hypertone {

GcnConfig gradcheck_config(CondMode mode) {
  GcnConfig cfg;
  cfg.num_blocks = 2;
  cfg.channels = 3;
  cfg.skip_channels = 2;
  cfg.kernel_size = 3;
  cfg.dilations = {1, 2};
  cfg.cond_mode = mode;
  return cfg;
}

GradCheckResult generator_gradcheck(CondMode mode, std::uint64_t seed, DeltaGranularity gran, std::size_t n) {
  const GcnConfig cfg = gradcheck_config(mode);
  Rng rng(seed);
  auto gen = ConditionedGenerator<double>::create(cfg, rng, 4, gran, 3);
  for (auto* p : gen.trainable())
    for (auto& v : p->values) v += rng.uniform(-0.3, 0.3);
  std::vector<double> x(n), target(n), phi(4);
  for (auto& v : x) v = rng.uniform(-0.8, 0.8);
  for (auto& v : target) v = rng.uniform(-0.8, 0.8);
  double norm = 0;
  for (auto& v : phi) {
    v = rng.normal();
    norm += v * v;
  }
  for (auto& v : phi) v /= std::sqrt(norm);
  const bool conditioned = mode != CondMode::none;
  const std::span<const double> ph = conditioned ? std::span<const double>(phi) : std::span<const double>();

  auto loss = [&] {
    const auto y = conditioned ? gen.forward(x, ph) : gen.forward(x);
    return training_loss_t<double>(target, y, 1.0, 0.5, 0.95, 2, nullptr);
  };
  TrainPass<double> pass;
  auto backward = [&] {
    train_forward<double>(gen, x, ph, pass);
    std::vector<double> g;
    training_loss_t<double>(target, pass.output, 1.0, 0.5, 0.95, 2, &g);
    train_backward<double>(gen, pass, g);
  };
  return grad_check<double>(gen.trainable(), loss, backward, 1e-6, 1e-5);
}

}  // namespace hypertone
