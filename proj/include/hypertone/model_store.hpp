#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "hypertone/conditioning.hpp"
#include "hypertone/encoder.hpp"

namespace hypertone {

inline constexpr int kModelFormatVersion = 1;
inline constexpr const char* kModelMagic = "HYPERTONE-MODEL";

/// Everything `render` needs: the conditioned generator and the tone encoder.
struct ModelBundle {
  ConditionedGenerator<float> generator;
  DeltaGranularity granularity = DeltaGranularity::per_channel;
  std::size_t hyper_hidden = kDefaultHyperHidden;
  std::optional<EncoderWeights> encoder;

  static ModelBundle create(const GcnConfig& cfg, Rng& rng, std::size_t d_e = kDefaultEmbeddingDim,
                            DeltaGranularity gran = DeltaGranularity::per_channel,
                            std::size_t hyper_hidden = kDefaultHyperHidden);
};

/// Writes magic line, JSON header, float32 LE payload, CRC-32 trailer.
void save_model(const std::filesystem::path& path, const ModelBundle& bundle);
std::string serialize_model(const ModelBundle& bundle);

/// Throws IoError, FormatError, IntegrityError (checksum) or VersionError.
ModelBundle load_model(const std::filesystem::path& path);
ModelBundle deserialize_model(const std::string& bytes);

/// Header portion of a serialized model, parsed (for inspection / tests).
std::string model_header_json(const std::string& bytes);

/// True when both bundles have identical structure and bit-identical weights.
bool bitwise_equal(const ModelBundle& a, const ModelBundle& b);

}  // namespace hypertone
