#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mixore/clustering.hpp"
#include "mixore/detector.hpp"
#include "mixore/eval.hpp"
#include "mixore/pipeline.hpp"
#include "mixore/sae.hpp"

namespace py = pybind11;
using namespace mixore;

namespace {

PipelineConfig config_from_dict(const py::dict& d) {
    const auto json = py::module_::import("json");
    return config_from_json(nlohmann::json::parse(json.attr("dumps")(d).cast<std::string>()));
}

py::dict prf_dict(const Prf& p) {
    py::dict d;
    d["precision"] = p.precision;
    d["recall"] = p.recall;
    d["f1"] = p.f1;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Open-world relation discovery over embedding vectors";
    m.attr("__version__") = kVersion;

    py::register_exception<Error>(m, "MixoreError", PyExc_RuntimeError);

    py::class_<ProjectionW>(m, "Projection")
        .def_readonly("matrix", &ProjectionW::matrix)
        .def_readonly("lam", &ProjectionW::lambda)
        .def_readonly("class_order", &ProjectionW::class_order)
        .def_readonly("residual", &ProjectionW::residual)
        .def_readonly("jittered", &ProjectionW::jittered);

    m.def(
        "fit_sae",
        [](const Matrix& features, const std::vector<std::size_t>& labels,
           std::vector<std::string> class_order, double lam) {
            return fit_sae(features, labels, std::move(class_order), lam);
        },
        py::arg("features"), py::arg("labels"), py::arg("class_order"), py::arg("lam") = 100.0,
        "Closed-form semantic autoencoder. `features` is d x M (instances as columns).");
    m.def("encode", &encode, py::arg("projection"), py::arg("features"));
    m.def("decode", &decode, py::arg("projection"), py::arg("latent"));

    m.def(
        "mapping_scores",
        [](const Matrix& latent) {
            std::vector<std::string> ids(static_cast<std::size_t>(latent.cols()));
            for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = std::to_string(i);
            std::vector<std::string> warnings;
            const auto s = mapping_scores(latent, ids, &warnings);
            std::vector<std::size_t> best;
            std::vector<double> score;
            for (const auto& r : s) {
                best.push_back(r.best_known);
                score.push_back(r.score);
            }
            return py::make_tuple(score, best);
        },
        py::arg("latent"), "Per-column (scores, best_known) for a K x N latent matrix.");
    m.def(
        "select_outliers",
        [](const std::vector<double>& scores, double fraction) {
            std::vector<MappingScore> s;
            for (std::size_t i = 0; i < scores.size(); ++i) s.push_back({std::to_string(i), 0, scores[i]});
            return select_outliers(s, fraction);
        },
        py::arg("scores"), py::arg("fraction") = 0.05);

    py::class_<KMeansResult>(m, "KMeansResult")
        .def_readonly("centroids", &KMeansResult::centroids)
        .def_readonly("assignments", &KMeansResult::assignments)
        .def_readonly("inertia", &KMeansResult::inertia)
        .def_readonly("iterations", &KMeansResult::iterations);
    m.def("kmeans", &kmeans, py::arg("points"), py::arg("k"), py::arg("seed") = 0,
          py::arg("max_iter") = 300);

    py::class_<GmmModel>(m, "GmmModel")
        .def_readonly("weights", &GmmModel::weights)
        .def_readonly("means", &GmmModel::means)
        .def_readonly("covariances", &GmmModel::covariances)
        .def_readonly("log_likelihood_trace", &GmmModel::log_likelihood_trace)
        .def_readonly("converged", &GmmModel::converged)
        .def_readonly("warnings", &GmmModel::warnings)
        .def("posteriors", [](const GmmModel& g, const Matrix& pts) { return gmm_posteriors(g, pts); });
    m.def(
        "fit_gmm",
        [](const Matrix& points, std::size_t k, std::uint64_t seed, int max_iter, double tol, double reg) {
            return fit_gmm(points, k, seed, GmmOptions{max_iter, tol, reg});
        },
        py::arg("points"), py::arg("k"), py::arg("seed") = 0, py::arg("max_iter") = 100,
        py::arg("tol") = 1e-4, py::arg("reg") = 1e-6);

    m.def(
        "bcubed",
        [](const std::vector<std::size_t>& pred, const std::vector<std::size_t>& truth) {
            return prf_dict(bcubed(pred, truth));
        },
        py::arg("pred"), py::arg("truth"));
    m.def(
        "v_measure",
        [](const std::vector<std::size_t>& pred, const std::vector<std::size_t>& truth) {
            const auto v = v_measure(pred, truth);
            return py::make_tuple(v.homogeneity, v.completeness, v.v);
        },
        py::arg("pred"), py::arg("truth"));
    m.def(
        "ari",
        [](const std::vector<std::size_t>& pred, const std::vector<std::size_t>& truth) { return ari(pred, truth); },
        py::arg("pred"), py::arg("truth"));
    m.def(
        "purity",
        [](const std::vector<std::size_t>& pred, const std::vector<std::size_t>& truth) {
            return purity(pred, truth, {}).purity;
        },
        py::arg("pred"), py::arg("truth"));
    m.def(
        "hungarian_align",
        [](const Matrix& cost) {
            const auto r = hungarian_align(cost);
            return py::make_tuple(r.pairs, r.cost);
        },
        py::arg("cost"));

    m.def(
        "run_pipeline",
        [](const py::dict& config) {
            std::vector<std::string> warnings;
            run_pipeline(config_from_dict(config),
                         [&](const std::string& stage, const std::string& msg) {
                             warnings.push_back(stage + ": " + msg);
                         });
            return warnings;
        },
        py::arg("config"), "Runs every stage; returns the warnings emitted.");
    m.def(
        "synth",
        [](const py::dict& config, const std::filesystem::path& output) {
            run_synth(config_from_dict(config), output);
        },
        py::arg("config"), py::arg("output"));
}
