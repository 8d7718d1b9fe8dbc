#include "hypertone/gcn.hpp"

namespace hypertone {

std::string shape_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

std::string to_string(CondMode m) {
  switch (m) {
    case CondMode::none: return "none";
    case CondMode::film: return "film";
    case CondMode::hypernet: return "hypernet";
  }
  return "none";
}

CondMode parse_cond_mode(const std::string& s) {
  if (s == "none") return CondMode::none;
  if (s == "film") return CondMode::film;
  if (s == "hypernet") return CondMode::hypernet;
  throw ContractError("unknown conditioning mode '" + s + "' (expected none, film or hypernet)");
}

std::string to_string(LayerRole r) {
  switch (r) {
    case LayerRole::dilated: return "dilated";
    case LayerRole::residual: return "residual";
    case LayerRole::skip: return "skip";
  }
  return "dilated";
}

std::vector<int> GcnConfig::resolved_dilations() const {
  if (!dilations.empty()) return dilations;
  std::vector<int> d(static_cast<std::size_t>(std::max(num_blocks, 0)));
  for (int i = 0; i < num_blocks; ++i) d[static_cast<std::size_t>(i)] = 1 << (i % std::max(dilation_cycle, 1));
  return d;
}

void GcnConfig::validate() const {
  require(num_blocks >= 1, "GcnConfig: num_blocks must be >= 1");
  require(channels >= 1, "GcnConfig: channels must be >= 1");
  require(kernel_size >= 2, "GcnConfig: kernel_size must be >= 2");
  require(skip_channels >= 1, "GcnConfig: skip_channels must be >= 1");
  require(dilation_cycle >= 1 && dilation_cycle <= 24, "GcnConfig: dilation_cycle must lie in [1, 24]");
  if (!dilations.empty()) {
    require(dilations.size() == static_cast<std::size_t>(num_blocks),
            "GcnConfig: dilations must list one value per block");
    for (int d : dilations) require(d >= 1, "GcnConfig: dilations must be >= 1");
  }
}

int receptive_field(const GcnConfig& cfg) {
  cfg.validate();
  int rf = 1;
  for (int d : cfg.resolved_dilations()) rf += (cfg.kernel_size - 1) * d;
  return rf;
}

std::vector<LayerDescriptor> enumerate_cond_layers(const GcnConfig& cfg) {
  cfg.validate();
  const auto C = static_cast<std::size_t>(cfg.channels);
  const auto S = static_cast<std::size_t>(cfg.skip_channels);
  const auto K = static_cast<std::size_t>(cfg.kernel_size);
  std::vector<LayerDescriptor> out;
  out.reserve(cfg.num_cond_layers());
  for (int b = 0; b < cfg.num_blocks; ++b) {
    const std::string prefix = "block" + std::to_string(b);
    out.push_back({b, LayerRole::dilated, {2 * C, C, K}, {2 * C}, prefix + ".dilated"});
    out.push_back({b, LayerRole::residual, {C, C, 1}, {C}, prefix + ".residual"});
    out.push_back({b, LayerRole::skip, {S, C, 1}, {S}, prefix + ".skip"});
  }
  return out;
}

}  // namespace hypertone
