#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "dualstyle/denoiser.hpp"
#include "dualstyle/errors.hpp"
#include "dualstyle/guidance.hpp"
#include "dualstyle/image_io.hpp"
#include "dualstyle/pipeline.hpp"
#include "dualstyle/schedule.hpp"
#include "dualstyle/selfcheck.hpp"
#include "dualstyle/solver.hpp"
#include "dualstyle/weights.hpp"

namespace py = pybind11;
using namespace dualstyle;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

ImageTensor to_tensor(const Array& a) {
    if (a.ndim() != 3) throw DimensionError("expected an (H, W, C) array, got " + std::to_string(a.ndim()) + " dims");
    const Shape shape{static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2))};
    return ImageTensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const ImageTensor& x) {
    Array a({x.height(), x.width(), x.channels()});
    std::copy(x.values().begin(), x.values().end(), a.mutable_data());
    return a;
}

Conditioning to_condition(const std::optional<std::vector<double>>& c) {
    return c ? Conditioning::embedding(*c) : Conditioning::null();
}

py::dict terms_dict(const LossTerms& t) {
    py::dict d;
    d["L_inst"] = t.instruction;
    d["L_c"] = t.content;
    d["L_c_patch"] = t.patch;
    d["L_aes"] = t.aesthetic;
    d["L_tv"] = t.tv;
    return d;
}

py::dict bundle_to_dict(const WeightBundle& b) {
    py::dict tensors;
    for (const auto& t : b.tensors()) {
        py::array_t<float> a(std::vector<py::ssize_t>(t.shape.begin(), t.shape.end()));
        std::copy(t.values.begin(), t.values.end(), a.mutable_data());
        tensors[py::str(t.name)] = a;
    }
    py::dict d;
    d["architecture"] = b.architecture;
    d["embed_width"] = b.embed_width;
    d["attributes"] = b.attributes;
    d["tensors"] = tensors;
    return d;
}

WeightBundle dict_to_bundle(const py::dict& d) {
    WeightBundle b;
    b.architecture = d["architecture"].cast<std::string>();
    b.embed_width = d.contains("embed_width") ? d["embed_width"].cast<int>() : 0;
    if (d.contains("attributes")) b.attributes = d["attributes"].cast<std::map<std::string, std::string>>();
    for (auto item : d["tensors"].cast<py::dict>()) {
        const auto a = py::array_t<float, py::array::c_style | py::array::forcecast>::ensure(item.second);
        if (!a) throw FormatError("tensor '" + item.first.cast<std::string>() + "' is not numeric");
        std::vector<int> shape(a.shape(), a.shape() + a.ndim());
        b.add(item.first.cast<std::string>(), shape, std::vector<float>(a.data(), a.data() + a.size()));
    }
    return b;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Dual-denoiser guided diffusion style transfer engine";

    auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ScheduleError>(m, "ScheduleError", error);
    py::register_exception<DimensionError>(m, "DimensionError", error);
    py::register_exception<NoPosteriorError>(m, "NoPosteriorError", error);
    py::register_exception<ParameterError>(m, "ParameterError", error);
    py::register_exception<ConfigurationError>(m, "ConfigurationError", error);
    py::register_exception<VocabularyError>(m, "VocabularyError", error);
    py::register_exception<IoError>(m, "IoError", error);
    py::register_exception<FormatError>(m, "FormatError", error);
    py::register_exception<CorruptWeightsError>(m, "CorruptWeightsError", error);
    py::register_exception<NumericError>(m, "NumericError", error);
    py::register_exception<DivergenceError>(m, "DivergenceError", error);

    m.attr("DEFAULT_WEIGHTS") = DUALSTYLE_DEFAULT_WEIGHTS;

    // --- schedule ----------------------------------------------------------
    py::class_<NoiseSchedule>(m, "NoiseSchedule")
        .def_static("from_betas", &NoiseSchedule::from_betas, py::arg("betas"))
        .def_property_readonly("t_train", &NoiseSchedule::t_train)
        .def_property_readonly("betas", [](const NoiseSchedule& s) { return std::vector<double>(s.betas().begin(), s.betas().end()); })
        .def_property_readonly("alphas", [](const NoiseSchedule& s) { return std::vector<double>(s.alphas().begin(), s.alphas().end()); })
        .def_property_readonly("alpha_bars", [](const NoiseSchedule& s) {
            return std::vector<double>(s.alpha_bars().begin(), s.alpha_bars().end());
        });
    m.def("make_linear_schedule", &make_linear_schedule, py::arg("t_train"), py::arg("beta_start"), py::arg("beta_end"));
    m.def("default_schedule", &default_schedule);
    m.def("forward_noise", [](const Array& x0, int t, const Array& eps, const NoiseSchedule& s) {
        return to_array(forward_noise(to_tensor(x0), t, to_tensor(eps), s));
    }, py::arg("x0"), py::arg("t"), py::arg("eps"), py::arg("schedule"));
    m.def("posterior_mean", [](const Array& x, const Array& eps, int t, const NoiseSchedule& s) {
        return to_array(posterior_mean(to_tensor(x), to_tensor(eps), t, s));
    }, py::arg("x_t"), py::arg("eps_pred"), py::arg("t"), py::arg("schedule"));
    m.def("posterior_variance", &posterior_variance, py::arg("t"), py::arg("schedule"));
    m.def("plan_steps", [](int T, int horizon) { return plan_steps(T, horizon).timesteps; }, py::arg("T"),
          py::arg("horizon"));

    // --- weights and denoiser ---------------------------------------------
    m.def("read_weight_file", [](const std::filesystem::path& p) { return bundle_to_dict(read_weight_file(p)); },
          py::arg("path"), "Reads a DSW1 file into {architecture, embed_width, attributes, tensors}.");
    m.def("write_weight_file", [](const py::dict& d, const std::filesystem::path& p) {
        write_weight_file(dict_to_bundle(d), p);
    }, py::arg("bundle"), py::arg("path"));
    m.def("serialize_weights", [](const py::dict& d) {
        const auto bytes = dict_to_bundle(d).serialize();
        return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
    }, py::arg("bundle"));

    py::class_<Denoiser, std::shared_ptr<Denoiser>>(m, "Denoiser")
        .def_property_readonly("architecture", [](const Denoiser& d) { return d.weights().architecture; })
        .def_property_readonly("embed_width", &Denoiser::embed_width)
        .def_property_readonly("channels", &Denoiser::channels)
        .def("predict_eps", [](const Denoiser& d, const Array& x, int t, const std::optional<std::vector<double>>& c) {
            return to_array(d.predict_eps(to_tensor(x), t, to_condition(c)));
        }, py::arg("x_t"), py::arg("t"), py::arg("condition") = py::none());
    m.def("load_weights", [](const std::filesystem::path& p) { return std::make_shared<Denoiser>(load_weights(p)); },
          py::arg("path"));
    m.def("blend_eps", [](const Array& a, const Array& b, double w) {
        return to_array(blend_eps(to_tensor(a), to_tensor(b), w));
    }, py::arg("eps1"), py::arg("eps2"), py::arg("w"));
    m.def("timestep_embedding", &timestep_embedding, py::arg("t"), py::arg("width") = kTimeEmbedWidth);

    // --- guidance -----------------------------------------------------------
    py::class_<GuidanceConfig>(m, "GuidanceConfig")
        .def(py::init<>())
        .def_readwrite("lambda_d", &GuidanceConfig::lambda_d)
        .def_readwrite("lambda_c1", &GuidanceConfig::lambda_c1)
        .def_readwrite("lambda_c2", &GuidanceConfig::lambda_c2)
        .def_readwrite("lambda_aes", &GuidanceConfig::lambda_aes)
        .def_readwrite("lambda_tv", &GuidanceConfig::lambda_tv)
        .def_readwrite("patch_size", &GuidanceConfig::patch_size)
        .def_readwrite("tau", &GuidanceConfig::tau);
    m.def("instruction_loss", [](const std::vector<double>& a, const std::vector<double>& b) {
        return instruction_loss(a, b);
    }, py::arg("e_img"), py::arg("e_prompt"));
    m.def("tv_loss", [](const Array& x) { return tv_loss(to_tensor(x)); }, py::arg("x"));

    // --- pipeline -----------------------------------------------------------
    py::class_<StylizeConfig>(m, "StylizeConfig")
        .def(py::init<>())
        .def_readwrite("T", &StylizeConfig::T)
        .def_readwrite("T1", &StylizeConfig::T1)
        .def_readwrite("w", &StylizeConfig::w)
        .def_readwrite("seed", &StylizeConfig::seed)
        .def_readwrite("horizon", &StylizeConfig::horizon)
        .def_readwrite("guidance", &StylizeConfig::guidance)
        .def_property("noise_init", [](const StylizeConfig& c) { return std::string(to_string(c.noise_init)); },
                      [](StylizeConfig& c, const std::string& v) { c.noise_init = parse_noise_init(v); })
        .def_property("sampler", [](const StylizeConfig& c) { return std::string(to_string(c.sampler)); },
                      [](StylizeConfig& c, const std::string& v) { c.sampler = parse_sampler(v); });

    py::class_<StylizeModels>(m, "Models")
        .def_property_readonly("natural", [](const StylizeModels& s) { return s.natural; })
        .def_property_readonly("artistic", [](const StylizeModels& s) { return s.artistic; })
        .def_property_readonly("vocabulary", [](const StylizeModels& s) { return s.guidance.embedder->vocabulary(); })
        .def("embed_prompt", [](const StylizeModels& s, const std::string& tag) {
            return s.guidance.embedder->embed_prompt(tag);
        }, py::arg("tag"))
        .def("embed_image", [](const StylizeModels& s, const Array& x) {
            return s.guidance.embedder->embed_image(to_tensor(x));
        }, py::arg("x"))
        .def("content_metric", [](const StylizeModels& s, const Array& out, const Array& in) {
            return content_metric(to_tensor(out), to_tensor(in), *s.guidance.extractor);
        }, py::arg("x_out"), py::arg("x_in"));
    m.def("load_models", &load_models, py::arg("directory") = std::filesystem::path(DUALSTYLE_DEFAULT_WEIGHTS));

    py::class_<RunReport>(m, "RunReport")
        .def_property_readonly("image", [](const RunReport& r) { return to_array(r.image); })
        .def_property_readonly("content_metric", [](const RunReport& r) { return r.content_metric; })
        .def_property_readonly("free_steps", [](const RunReport& r) { return r.free_steps; })
        .def_property_readonly("handoff_step", [](const RunReport& r) { return r.handoff_step; })
        .def_property_readonly("wall_seconds", [](const RunReport& r) { return r.wall_seconds; })
        .def_property_readonly("final_losses", [](const RunReport& r) { return terms_dict(r.final_terms); })
        .def_property_readonly("trace", [](const RunReport& r) {
            py::list rows;
            for (const auto& row : r.trace) {
                py::dict d = terms_dict(row.terms);
                d["step"] = row.step;
                d["L_total"] = row.total;
                rows.append(d);
            }
            return rows;
        })
        .def("to_json", &report_json)
        .def("trace_csv", &trace_csv);

    m.def("stylize", [](const Array& content, const std::string& prompt, const StylizeConfig& cfg,
                        const StylizeModels& models) {
        const ImageTensor x0 = to_tensor(content);
        py::gil_scoped_release release;
        return stylize(x0, prompt, cfg, models);
    }, py::arg("content"), py::arg("prompt"), py::arg("config") = StylizeConfig{}, py::arg("models"));

    m.def("verify", [](const StylizeModels& models, const Array& content, const std::string& prompt) {
        std::vector<std::tuple<std::string, bool, std::string>> out;
        for (const auto& r : run_self_checks(models, to_tensor(content), prompt)) out.emplace_back(r.name, r.passed, r.detail);
        return out;
    }, py::arg("models"), py::arg("content"), py::arg("prompt") = "oil-painting");

    // --- image io -----------------------------------------------------------
    m.def("read_png", [](const std::filesystem::path& p) { return to_array(read_png(p)); }, py::arg("path"));
    m.def("write_png", [](const Array& x, const std::filesystem::path& p) { write_png(to_tensor(x), p); },
          py::arg("x"), py::arg("path"));
}
