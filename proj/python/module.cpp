#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "tascforge/bo.hpp"
#include "tascforge/checkpoint.hpp"
#include "tascforge/config.hpp"
#include "tascforge/dataio.hpp"
#include "tascforge/gp.hpp"
#include "tascforge/pipeline.hpp"
#include "tascforge/prune.hpp"
#include "tascforge/searchspace.hpp"

namespace py = pybind11;
using namespace tascforge;

namespace {

py::dict config_to_dict(const HeadConfig& config) {
  py::dict d;
  py::list conv;
  for (const auto& c : config.conv) {
    py::dict layer;
    layer["filter_size"] = c.filter_size;
    layer["num_filters"] = c.num_filters;
    layer["activation"] = activation_name(c.activation);
    conv.append(layer);
  }
  d["conv"] = conv;
  d["pool_size"] = config.pool_size ? py::cast(*config.pool_size) : py::none();
  py::list fc;
  for (const auto& f : config.fc) {
    py::dict layer;
    layer["neurons"] = f.neurons;
    layer["activation"] = activation_name(f.activation);
    layer["dropout"] = f.dropout;
    fc.append(layer);
  }
  d["fc"] = fc;
  return d;
}

GPModel fit_gp(const std::vector<std::vector<double>>& x, const std::vector<double>& y,
               bool optimize) {
  std::vector<EncodedPoint> points;
  points.reserve(x.size());
  for (const auto& row : x) points.push_back(EncodedPoint{row});
  KernelParams params;
  if (optimize && x.size() >= 2) {
    params = optimize_hyperparams(points, y);
  } else {
    params.lengthscales.assign(points.empty() ? 0 : points[0].v.size(), 0.5);
    params.signal_variance = 1.0;
    params.noise_variance = 1e-6;
  }
  return fit(std::move(points), std::vector<double>(y), params);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "tascforge core: GP/EI hyperparameter tuning and similarity-based filter pruning";

  py::register_exception<Error>(m, "TascError");

  py::class_<SearchSpace>(m, "SearchSpace")
      .def(py::init<>())
      .def_readwrite("conv_slots", &SearchSpace::conv_slots)
      .def_readwrite("fc_slots", &SearchSpace::fc_slots)
      .def_readwrite("pool_slot", &SearchSpace::pool_slot)
      .def("encoded_dim", &SearchSpace::encoded_dim)
      .def("config_count", &SearchSpace::config_count, py::arg("cap") = 1000000ull);

  py::class_<HeadConfig>(m, "HeadConfig")
      .def(py::init<>())
      .def("__eq__", [](const HeadConfig& a, const HeadConfig& b) { return a == b; })
      .def("__repr__", [](const HeadConfig& c) { return to_string(c); })
      .def("to_dict", &config_to_dict);

  m.def("space_from_config_text", [](const std::string& text) {
    return parse_config_text(text).space;
  });
  m.def("sample_uniform", [](const SearchSpace& space, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return sample_uniform(space, rng);
  });
  m.def("encode",
        [](const SearchSpace& space, const HeadConfig& config) { return encode(space, config).v; });
  m.def("decode", [](const SearchSpace& space, const std::vector<double>& v) {
    return decode(space, EncodedPoint{v});
  });
  m.def("enumerate_space", [](const SearchSpace& space, unsigned long long cap) {
    return enumerate_space(space, cap);
  });

  py::class_<GPModel>(m, "GaussianProcess")
      .def(py::init(&fit_gp), py::arg("x"), py::arg("y"), py::arg("optimize") = true)
      .def("posterior",
           [](const GPModel& model, const std::vector<double>& x) {
             auto p = posterior(model, EncodedPoint{x});
             return py::make_tuple(p.mean, p.variance);
           })
      .def_property_readonly("prior_mean", [](const GPModel& m_) { return m_.prior_mean; })
      .def_property_readonly("lengthscale",
                             [](const GPModel& m_) { return m_.params.lengthscales; });

  m.def("expected_improvement", &expected_improvement, py::arg("mu"), py::arg("var"),
        py::arg("f_best"));
  m.def("cosine_similarity", [](const std::vector<double>& u, const std::vector<double>& v) {
    return cosine_similarity(u, v);
  });

  m.def(
      "generate_synthetic",
      [](int classes, int samples_per_class, std::size_t h, std::size_t w, std::size_t c,
         std::uint64_t seed, const std::string& style) {
        std::mt19937_64 rng(seed);
        auto d = generate_synthetic(classes, samples_per_class, h, w, c, rng,
                                    style == "target" ? SyntheticStyle::Target
                                                      : SyntheticStyle::Source);
        py::array_t<double> images({d.count(), d.h, d.w, d.c});
        std::copy(d.images.begin(), d.images.end(), images.mutable_data());
        return py::make_tuple(images, d.labels);
      },
      py::arg("classes"), py::arg("samples_per_class"), py::arg("h"), py::arg("w"),
      py::arg("c") = 1, py::arg("seed") = 1, py::arg("style") = "source");

  m.def("checkpoint_params", [](const std::string& path) {
    auto cp = load_checkpoint(path);
    auto counts = count_params(cp.spec);
    return py::make_tuple(counts.total, counts.trainable);
  });
  m.def("checkpoint_flops", [](const std::string& path) {
    auto cp = load_checkpoint(path);
    return count_flops(cp.spec);
  });

  m.def(
      "run_command",
      [](const std::string& command, const std::string& config_path, long long seed,
         const std::string& out_dir) {
        auto config = load_config(config_path);
        if (seed >= 0) config.seed = static_cast<std::uint64_t>(seed);
        if (!out_dir.empty()) config.out_dir = out_dir;
        if (command == "pretrain") return cmd_pretrain(config);
        if (command == "tune") return cmd_tune(config);
        if (command == "prune") return cmd_prune(config);
        if (command == "run") return cmd_run(config);
        if (command == "oracle") return cmd_oracle(config);
        if (command == "report") return cmd_report(config);
        fail(ErrorCode::InvalidArgument, "unknown command '" + command + "'");
      },
      py::arg("command"), py::arg("config_path"), py::arg("seed") = -1,
      py::arg("out_dir") = "");

#ifdef VERSION_INFO
  m.attr("__version__") = VERSION_INFO;
#else
  m.attr("__version__") = "dev";
#endif
}
