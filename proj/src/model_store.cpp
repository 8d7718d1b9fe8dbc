#include "hypertone/model_store.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

namespace hypertone {

using json = nlohmann::ordered_json;

ModelBundle ModelBundle::create(const GcnConfig& cfg, Rng& rng, std::size_t d_e, DeltaGranularity gran,
                                std::size_t hyper_hidden) {
  ModelBundle b{ConditionedGenerator<float>::create(cfg, rng, d_e, gran, hyper_hidden), gran, hyper_hidden,
                std::nullopt};
  return b;
}

namespace {

struct Entry {
  std::string name;
  Shape shape;
  std::vector<float>* values;
};

// Every array of the bundle in file order. The encoder's feature statistics are
// stored alongside its dense layers.
std::vector<Entry> entries(ModelBundle& b) {
  std::vector<Entry> out;
  for (auto* p : b.generator.trainable()) out.push_back({p->name, p->shape, &p->values});
  if (b.encoder) {
    auto& e = *b.encoder;
    out.push_back({"encoder.feature_mean", {e.feature_mean.size()}, &e.feature_mean});
    out.push_back({"encoder.feature_scale", {e.feature_scale.size()}, &e.feature_scale});
    for (auto* p : e.params()) out.push_back({p->name, p->shape, &p->values});
  }
  return out;
}

std::uint32_t crc(const char* data, std::size_t n) {
  uLong c = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    c = crc32(c, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(c);
}

void put_u32(std::string& s, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) s.push_back(static_cast<char>((v >> (8 * k)) & 0xFFu));
}

std::uint32_t get_u32(const char* p) {
  std::uint32_t v = 0;
  for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[k])) << (8 * k);
  return v;
}

json gcn_json(const GcnConfig& c) {
  json j;
  j["num_blocks"] = c.num_blocks;
  j["channels"] = c.channels;
  j["kernel_size"] = c.kernel_size;
  j["dilations"] = c.resolved_dilations();
  j["dilation_cycle"] = c.dilation_cycle;
  j["skip_channels"] = c.skip_channels;
  j["cond_mode"] = to_string(c.cond_mode);
  return j;
}

GcnConfig gcn_from_json(const json& j) {
  GcnConfig c;
  c.num_blocks = j.at("num_blocks").get<int>();
  c.channels = j.at("channels").get<int>();
  c.kernel_size = j.at("kernel_size").get<int>();
  c.dilations = j.at("dilations").get<std::vector<int>>();
  c.dilation_cycle = j.at("dilation_cycle").get<int>();
  c.skip_channels = j.at("skip_channels").get<int>();
  c.cond_mode = parse_cond_mode(j.at("cond_mode").get<std::string>());
  return c;
}

ModelBundle skeleton(const json& h) {
  const GcnConfig cfg = gcn_from_json(h.at("generator"));
  cfg.validate();
  const auto& cond = h.at("conditioning");
  Rng rng(0);
  ModelBundle b = ModelBundle::create(cfg, rng, cond.at("embedding_dim").get<std::size_t>(),
                                      parse_granularity(cond.at("granularity").get<std::string>()),
                                      cond.at("hyper_hidden").get<std::size_t>());
  if (h.contains("encoder") && !h.at("encoder").is_null()) {
    const auto& e = h.at("encoder");
    MelConfig mel;
    mel.fft_size = e.at("fft_size").get<int>();
    mel.hop = e.at("hop").get<int>();
    mel.mel_bands = e.at("mel_bands").get<int>();
    mel.fmin = e.at("fmin").get<double>();
    mel.fmax = e.at("fmax").get<double>();
    mel.log_floor = e.at("log_floor").get<double>();
    mel.validate();
    b.encoder = EncoderWeights::create(mel, e.at("hidden_dim").get<std::size_t>(),
                                       e.at("embedding_dim").get<std::size_t>(), rng);
    if (e.at("frozen").get<bool>()) b.encoder->freeze();
  }
  return b;
}

}  // namespace

std::string serialize_model(const ModelBundle& bundle) {
  ModelBundle& b = const_cast<ModelBundle&>(bundle);  // entries() only reads through the pointers here
  const auto& g = b.generator;
  json h;
  h["format_version"] = kModelFormatVersion;
  h["generator"] = gcn_json(g.gcn.config);
  h["receptive_field"] = receptive_field(g.gcn.config);
  json cond;
  cond["mode"] = to_string(g.mode());
  cond["embedding_dim"] = g.embedding_dim;
  cond["granularity"] = to_string(b.granularity);
  cond["hyper_hidden"] = b.hyper_hidden;
  h["conditioning"] = cond;
  if (b.encoder) {
    const auto& e = *b.encoder;
    json ej;
    ej["fft_size"] = e.mel.fft_size;
    ej["hop"] = e.mel.hop;
    ej["mel_bands"] = e.mel.mel_bands;
    ej["fmin"] = e.mel.fmin;
    ej["fmax"] = e.mel.fmax;
    ej["log_floor"] = e.mel.log_floor;
    ej["hidden_dim"] = e.hidden.out_dim();
    ej["embedding_dim"] = e.embedding_dim();
    ej["frozen"] = e.frozen;
    h["encoder"] = ej;
  } else {
    h["encoder"] = nullptr;
  }

  std::string payload;
  json tensors = json::array();
  std::size_t offset = 0;
  for (const auto& e : entries(b)) {
    json t;
    t["name"] = e.name;
    t["shape"] = e.shape;
    t["offset"] = offset;
    t["count"] = e.values->size();
    tensors.push_back(t);
    for (float v : *e.values) put_u32(payload, std::bit_cast<std::uint32_t>(v));
    offset += e.values->size();
  }
  h["tensors"] = tensors;
  if (g.hyper) {
    json groups = json::array();
    for (const auto& L : g.hyper->layers) {
      json gr;
      gr["target"] = L.target.name;
      gr["block"] = L.target.block;
      gr["role"] = to_string(L.target.role);
      gr["weight_shape"] = L.target.weight_shape;
      gr["bias_shape"] = L.target.bias_shape;
      gr["tensors"] = {L.hidden.weight.name, L.hidden.bias.name, L.output.weight.name, L.output.bias.name};
      groups.push_back(gr);
    }
    h["conditioned_layers"] = groups;
  }
  h["payload_floats"] = offset;

  const std::string header = h.dump(2) + "\n";
  std::string out = std::string(kModelMagic) + "\n" + "header_bytes " + std::to_string(header.size()) + "\n";
  out += header;
  out += payload;
  put_u32(out, crc(out.data(), out.size()));
  return out;
}

namespace {

struct Parsed {
  json header;
  std::size_t payload_begin = 0;
  std::size_t payload_end = 0;
};

Parsed parse_frame(const std::string& bytes) {
  const std::string magic = std::string(kModelMagic) + "\n";
  if (bytes.compare(0, magic.size(), magic) != 0) throw FormatError("model: missing magic line");
  const std::size_t line_end = bytes.find('\n', magic.size());
  if (line_end == std::string::npos) throw FormatError("model: truncated header");
  const std::string line = bytes.substr(magic.size(), line_end - magic.size());
  std::size_t header_bytes = 0;
  {
    std::istringstream is(line);
    std::string key;
    if (!(is >> key >> header_bytes) || key != "header_bytes") throw FormatError("model: malformed header length line");
  }
  const std::size_t header_begin = line_end + 1;
  if (bytes.size() < header_begin + header_bytes + 4) throw IntegrityError("model: file is truncated");
  const std::size_t body = bytes.size() - 4;
  if (crc(bytes.data(), body) != get_u32(bytes.data() + body))
    throw IntegrityError("model: CRC-32 mismatch (file is corrupt)");
  Parsed p;
  try {
    p.header = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(header_begin),
                           bytes.begin() + static_cast<std::ptrdiff_t>(header_begin + header_bytes));
  } catch (const json::exception& e) {
    throw FormatError(std::string("model: header is not valid JSON: ") + e.what());
  }
  p.payload_begin = header_begin + header_bytes;
  p.payload_end = body;
  return p;
}

}  // namespace

std::string model_header_json(const std::string& bytes) { return parse_frame(bytes).header.dump(2); }

ModelBundle deserialize_model(const std::string& bytes) {
  const Parsed p = parse_frame(bytes);
  const json& h = p.header;
  try {
    const int version = h.at("format_version").get<int>();
    if (version != kModelFormatVersion)
      throw VersionError("model: format_version " + std::to_string(version) + " is not supported (expected " +
                         std::to_string(kModelFormatVersion) + ")");
    ModelBundle b = skeleton(h);
    auto slots = entries(b);
    const auto& tensors = h.at("tensors");
    if (tensors.size() != slots.size())
      throw FormatError("model: header lists " + std::to_string(tensors.size()) + " arrays, expected " +
                        std::to_string(slots.size()));
    const std::size_t payload_floats = h.at("payload_floats").get<std::size_t>();
    if ((p.payload_end - p.payload_begin) != payload_floats * 4)
      throw FormatError("model: payload size does not match the header");
    std::size_t expect_offset = 0;
    for (std::size_t k = 0; k < slots.size(); ++k) {
      const auto& t = tensors[k];
      const auto name = t.at("name").get<std::string>();
      const auto shape = t.at("shape").get<Shape>();
      const auto offset = t.at("offset").get<std::size_t>();
      const auto count = t.at("count").get<std::size_t>();
      if (name != slots[k].name) throw FormatError("model: unexpected array '" + name + "', expected '" + slots[k].name + "'");
      if (shape_size(shape) != count) throw FormatError("model: declared shape of '" + name + "' does not match its length");
      if (shape != slots[k].shape)
        throw FormatError("model: '" + name + "' has shape " + shape_string(shape) + ", architecture needs " +
                          shape_string(slots[k].shape));
      if (offset != expect_offset) throw FormatError("model: '" + name + "' has a non-contiguous offset");
      const char* src = bytes.data() + p.payload_begin + offset * 4;
      auto& dst = *slots[k].values;
      for (std::size_t i = 0; i < count; ++i) dst[i] = std::bit_cast<float>(get_u32(src + 4 * i));
      expect_offset += count;
    }
    if (expect_offset != payload_floats) throw FormatError("model: arrays do not cover the payload");
    if (b.generator.hyper) {
      const auto& groups = h.at("conditioned_layers");
      if (groups.size() != b.generator.hyper->layers.size())
        throw FormatError("model: conditioned layer count does not match the architecture");
    }
    return b;
  } catch (const json::exception& e) {
    throw FormatError(std::string("model: malformed header: ") + e.what());
  } catch (const ContractError& e) {
    throw FormatError(std::string("model: inconsistent configuration: ") + e.what());
  }
}

void save_model(const std::filesystem::path& path, const ModelBundle& bundle) {
  const std::string bytes = serialize_model(bundle);
  // Write to a sibling and rename so a failed save never leaves a partial model.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + tmp.string() + " for writing");
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move model into place at " + path.string() + ": " + ec.message());
}

ModelBundle load_model(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open model " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return deserialize_model(ss.str());
}

bool bitwise_equal(const ModelBundle& a, const ModelBundle& b) {
  if (!(a.generator.gcn.config == b.generator.gcn.config) || a.generator.embedding_dim != b.generator.embedding_dim ||
      a.granularity != b.granularity || a.encoder.has_value() != b.encoder.has_value())
    return false;
  if (a.encoder && !(a.encoder->mel == b.encoder->mel && a.encoder->frozen == b.encoder->frozen)) return false;
  auto ea = entries(const_cast<ModelBundle&>(a));
  auto eb = entries(const_cast<ModelBundle&>(b));
  if (ea.size() != eb.size()) return false;
  for (std::size_t k = 0; k < ea.size(); ++k) {
    if (ea[k].name != eb[k].name || ea[k].shape != eb[k].shape) return false;
    if (std::memcmp(ea[k].values->data(), eb[k].values->data(), ea[k].values->size() * sizeof(float)) != 0)
      return false;
  }
  return true;
}

}  // namespace hypertone
