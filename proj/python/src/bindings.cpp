#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "hypertone/model_store.hpp"
#include "hypertone/stream.hpp"
#include "hypertone/trainer.hpp"
#include "hypertone/verify.hpp"

namespace py = pybind11;
using namespace hypertone;

namespace {

using F32 = py::array_t<float, py::array::c_style | py::array::forcecast>;

std::vector<float> to_vec(const F32& a) {
  if (a.ndim() != 1) throw ContractError("expected a 1-D array of samples");
  return std::vector<float>(a.data(), a.data() + a.size());
}

F32 to_array(const std::vector<float>& v) {
  F32 out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

ToneEmbedding embedding_from(const F32& a) { return ToneEmbedding::from_raw(to_vec(a), "python"); }

py::dict config_dict(const GcnConfig& c) {
  py::dict d;
  d["num_blocks"] = c.num_blocks;
  d["channels"] = c.channels;
  d["kernel_size"] = c.kernel_size;
  d["dilations"] = c.resolved_dilations();
  d["skip_channels"] = c.skip_channels;
  d["cond_mode"] = to_string(c.cond_mode);
  return d;
}

struct Model {
  ModelBundle bundle;

  const ConditionedGenerator<float>& gen() const { return bundle.generator; }

  F32 encode(const F32& reference) const {
    if (!bundle.encoder) throw ContractError("model has no tone encoder");
    return to_array(hypertone::encode(AudioBuffer(to_vec(reference), kSampleRate), *bundle.encoder).vector);
  }

  F32 render(const F32& clean, const py::object& embedding, bool streaming, std::size_t block) const {
    const auto x = to_vec(clean);
    std::optional<ToneEmbedding> phi;
    if (!embedding.is_none()) phi = embedding_from(embedding.cast<F32>());
    std::vector<float> y;
    {
      py::gil_scoped_release release;
      if (streaming) y = render_streaming(bake(gen(), phi ? &*phi : nullptr), x, block);
      else y = phi ? gen().forward(x, std::span<const float>(phi->vector)) : gen().forward(x);
    }
    return to_array(y);
  }
};

class Stream {
 public:
  Stream(const Model& m, const py::object& embedding, std::size_t block) : model_(m) {
    auto phi = tone(embedding);
    proc_ = init_stream(m.gen(), phi ? &*phi : nullptr, block);
  }

  F32 process(const F32& block) {
    const auto x = to_vec(block);
    std::vector<float> y(x.size());
    proc_->process_block(x, y);
    return to_array(y);
  }

  void set_tone(const py::object& embedding) {
    auto phi = tone(embedding);
    proc_->set_tone(bake(model_.gen(), phi ? &*phi : nullptr));
  }

  void reset() { proc_->reset(); }
  std::size_t block_size() const { return proc_->block_size(); }
  bool last_block_partial() const { return proc_->last_block_partial(); }

 private:
  static std::optional<ToneEmbedding> tone(const py::object& e) {
    if (e.is_none()) return std::nullopt;
    return embedding_from(e.cast<F32>());
  }

  const Model& model_;
  std::unique_ptr<StreamProcessor> proc_;
};

}  // namespace

PYBIND11_MODULE(_hypertone, m) {
  m.doc() = "Zero-shot guitar tone modelling engine";
  m.attr("SAMPLE_RATE") = kSampleRate;

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<ContractError>(m, "ContractError", base);
  py::register_exception<IoError>(m, "IoError", base);
  auto format = py::register_exception<FormatError>(m, "FormatError", base);
  py::register_exception<IntegrityError>(m, "IntegrityError", format);
  py::register_exception<VersionError>(m, "VersionError", format);
  py::register_exception<NumericError>(m, "NumericError", base);

  py::class_<Model>(m, "Model")
      .def_static(
          "create",
          [](const std::string& cond, int blocks, int channels, int kernel, int dilation_cycle, std::size_t d_e,
             const std::string& granularity, std::uint64_t seed) {
            GcnConfig cfg;
            cfg.num_blocks = blocks;
            cfg.channels = channels;
            cfg.skip_channels = channels;
            cfg.kernel_size = kernel;
            cfg.dilation_cycle = dilation_cycle;
            cfg.cond_mode = parse_cond_mode(cond);
            cfg.validate();
            Rng rng(seed);
            return Model{ModelBundle::create(cfg, rng, d_e, parse_granularity(granularity))};
          },
          py::arg("cond") = "hypernet", py::arg("blocks") = 10, py::arg("channels") = 16, py::arg("kernel") = 3,
          py::arg("dilation_cycle") = 10, py::arg("embedding_dim") = kDefaultEmbeddingDim,
          py::arg("granularity") = "per_channel", py::arg("seed") = 0)
      .def_static("load", [](const std::filesystem::path& p) { return Model{load_model(p)}; })
      .def("save", [](const Model& self, const std::filesystem::path& p) { save_model(p, self.bundle); })
      .def_property_readonly("mode", [](const Model& self) { return to_string(self.gen().mode()); })
      .def_property_readonly("config", [](const Model& self) { return config_dict(self.gen().gcn.config); })
      .def_property_readonly("receptive_field", [](const Model& self) { return receptive_field(self.gen().gcn.config); })
      .def_property_readonly("embedding_dim", [](const Model& self) { return self.gen().embedding_dim; })
      .def_property_readonly("has_encoder", [](const Model& self) { return self.bundle.encoder.has_value(); })
      .def("encode", &Model::encode, py::arg("reference"), "Unit-norm tone embedding of a reference recording")
      .def("render", &Model::render, py::arg("clean"), py::arg("embedding") = py::none(), py::arg("streaming") = false,
           py::arg("block") = 128)
      .def(
          "bench",
          [](const Model& self, const py::object& embedding, double duration, std::size_t block, std::uint64_t seed) {
            std::optional<ToneEmbedding> phi;
            if (!embedding.is_none()) phi = embedding_from(embedding.cast<F32>());
            RtfReport r;
            {
              py::gil_scoped_release release;
              r = bench_rtf(self.gen(), phi ? &*phi : nullptr, duration, block, seed);
            }
            py::dict d;
            d["rtf"] = r.rtf;
            d["wall_time_s"] = r.wall_time_s;
            d["samples"] = r.samples;
            d["block_size"] = r.block_size;
            d["worst_block_s"] = r.worst_block_s;
            d["config_hash"] = r.config_hash;
            return d;
          },
          py::arg("embedding") = py::none(), py::arg("duration") = 2.0, py::arg("block") = 128, py::arg("seed") = 0)
      .def("bitwise_equal", [](const Model& a, const Model& b) { return bitwise_equal(a.bundle, b.bundle); });

  py::class_<Stream>(m, "Stream")
      .def(py::init<const Model&, const py::object&, std::size_t>(), py::arg("model"), py::arg("embedding") = py::none(),
           py::arg("block") = 128, py::keep_alive<1, 2>())
      .def("process", &Stream::process)
      .def("set_tone", &Stream::set_tone)
      .def("reset", &Stream::reset)
      .def_property_readonly("block_size", &Stream::block_size)
      .def_property_readonly("last_block_partial", &Stream::last_block_partial);

  m.def("read_wav", [](const std::filesystem::path& p) { return to_array(read_wav(p).samples); });
  m.def(
      "write_wav",
      [](const std::filesystem::path& p, const F32& x, bool pcm16) {
        return write_wav(p, AudioBuffer(to_vec(x), kSampleRate), pcm16 ? WavDepth::pcm16 : WavDepth::float32);
      },
      py::arg("path"), py::arg("samples"), py::arg("pcm16") = false);
  m.def("synthesize_performance", [](std::uint64_t seed, double seconds) {
    return to_array(hypertone::synthesize_performance(seed, seconds).samples);
  });
  m.def("log_mel_stats", [](const F32& x) { return to_array(hypertone::log_mel_stats(AudioBuffer(to_vec(x), kSampleRate), MelConfig{})); });
  m.def("esr", [](const F32& t, const F32& p) { return hypertone::esr(to_vec(t), to_vec(p)); });
  m.def("pre_emphasis", [](const F32& x, double a) { return to_array(hypertone::pre_emphasis(to_vec(x), a)); });
  m.def(
      "receptive_field",
      [](int blocks, int kernel, int dilation_cycle) {
        GcnConfig c;
        c.num_blocks = blocks;
        c.kernel_size = kernel;
        c.dilation_cycle = dilation_cycle;
        return hypertone::receptive_field(c);
      },
      py::arg("blocks") = 10, py::arg("kernel") = 3, py::arg("dilation_cycle") = 10);
  m.def(
      "gradcheck",
      [](const std::string& cond, std::uint64_t seed, const std::string& granularity) {
        return generator_gradcheck(parse_cond_mode(cond), seed, parse_granularity(granularity)).max_relative_error;
      },
      py::arg("cond") = "hypernet", py::arg("seed") = 0, py::arg("granularity") = "per_channel",
      "Max relative finite-difference error of the end-to-end gradient (64-bit)");
}
