#include "hypertone/conditioning.hpp"

#include <cstring>

namespace hypertone {

ToneEmbedding ToneEmbedding::from_raw(std::span<const float> raw, std::string source) {
  double ss = 0.0;
  for (float v : raw) {
    if (!std::isfinite(v)) throw NumericError("ToneEmbedding: non-finite component");
    ss += static_cast<double>(v) * v;
  }
  if (!(ss > 0.0)) throw NumericError("ToneEmbedding: zero vector cannot be normalised");
  const double inv = 1.0 / std::sqrt(ss);
  ToneEmbedding e;
  e.vector.resize(raw.size());
  for (std::size_t k = 0; k < raw.size(); ++k) e.vector[k] = static_cast<float>(raw[k] * inv);
  e.source_id = std::move(source);
  return e;
}

std::uint64_t ToneEmbedding::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (float v : vector) {
    unsigned char bytes[sizeof(float)];
    std::memcpy(bytes, &v, sizeof(float));
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

double ToneEmbedding::cosine(const ToneEmbedding& other) const {
  if (other.dim() != dim()) throw ContractError("cosine: dimension mismatch");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t k = 0; k < dim(); ++k) {
    dot += static_cast<double>(vector[k]) * other.vector[k];
    na += static_cast<double>(vector[k]) * vector[k];
    nb += static_cast<double>(other.vector[k]) * other.vector[k];
  }
  return dot / std::sqrt(na * nb);
}

std::string to_string(DeltaGranularity g) { return g == DeltaGranularity::full ? "full" : "per_channel"; }

DeltaGranularity parse_granularity(const std::string& s) {
  if (s == "per_channel") return DeltaGranularity::per_channel;
  if (s == "full") return DeltaGranularity::full;
  throw ContractError("unknown delta granularity '" + s + "' (expected per_channel or full)");
}

}  // namespace hypertone
