#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cli.hpp"
#include "hybridcast/action.hpp"
#include "hybridcast/checkpoint.hpp"
#include "hybridcast/evaluate.hpp"
#include "hybridcast/metrics.hpp"
#include "hybridcast/training.hpp"

namespace py = pybind11;
using namespace hybridcast;
using nlohmann::json;

// Configurations and reports cross the boundary as JSON text; the Python
// package turns them into dicts.
namespace {

json parse(const std::string& text) { return text.empty() ? json::object() : json::parse(text); }

std::string epoch_log_json(const std::vector<EpochLog>& log) {
  json out = json::array();
  for (const auto& e : log)
    out.push_back({{"epoch", e.epoch},
                   {"h_p_qpi", e.train.h_p_qpi},
                   {"h_p_qkappa", e.train.h_p_qkappa},
                   {"h_rev_traj", e.train.h_rev_traj},
                   {"h_rev_act", e.train.h_rev_act},
                   {"total", e.train.total},
                   {"val_total", e.val_total}});
  return out.dump();
}

EvalConfig eval_config(int samples, std::uint64_t seed) {
  EvalConfig ec;
  ec.samples = samples;
  ec.seed = seed;
  return ec;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Joint trajectory and action forecasting core";

  py::register_exception<ContractViolation>(m, "ContractViolation", PyExc_ValueError);

  py::class_<Episode>(m, "Episode")
      .def_readonly("episode_id", &Episode::episode_id)
      .def_readonly("video_id", &Episode::video_id)
      .def_readonly("past_positions", &Episode::past_positions)
      .def_readonly("past_features", &Episode::past_features)
      .def_readonly("future_positions", &Episode::future_positions)
      .def_readonly("future_actions", &Episode::future_actions)
      .def("to_json", [](const Episode& e) { return episode_to_json(e).dump(); })
      .def_static("from_json", [](const std::string& s) { return episode_from_json(json::parse(s)); })
      .def("__repr__", [](const Episode& e) { return "<Episode " + e.episode_id + ">"; });

  py::class_<Forecast>(m, "Forecast")
      .def_readonly("trajectories", &Forecast::trajectories)
      .def_readonly("actions", &Forecast::actions)
      .def_readonly("probabilities", &Forecast::probabilities);

  py::class_<Model>(m, "Model")
      .def_static("create", [](const std::string& config, std::uint64_t seed) {
        return Model::create(ModelConfig::from_json(parse(config)), seed);
      })
      .def("config_json", [](const Model& model) { return model.config().to_json().dump(); })
      .def("parameter_hash", [](const Model& model) { return model.store().hash(); })
      .def("parameter_count", [](const Model& model) { return model.store().flat_values().size(); })
      .def("fit_normalization", &Model::fit_normalization)
      .def("sample", [](Model& model, const std::vector<Episode>& eps, int samples, std::uint64_t seed) {
        return sample_forecasts(model, eps, eval_config(samples, seed));
      }, py::arg("episodes"), py::arg("samples") = 12, py::arg("seed") = 0)
      .def("evaluate", [](Model& model, const std::vector<Episode>& eps, const std::string& loss, int samples,
                          std::uint64_t seed) {
        return evaluate_model(model, eps, LossConfig::from_json(parse(loss)), eval_config(samples, seed)).to_json().dump();
      }, py::arg("episodes"), py::arg("loss") = "", py::arg("samples") = 12, py::arg("seed") = 0)
      .def("save", [](const Model& model, const std::string& path, std::uint64_t seed) {
        CheckpointInfo info;
        info.model = model.config();
        info.seed = seed;
        save_checkpoint(path, model, info);
      }, py::arg("path"), py::arg("seed") = 0);

  m.def("generate_dataset", [](const std::string& world, int n) {
    return generate_dataset(WorldConfig::from_json(parse(world)), n);
  }, py::arg("world"), py::arg("episodes"));
  m.def("default_world", [] { return WorldConfig::defaults().to_json().dump(); });

  m.def("load_checkpoint", [](const std::string& path) {
    LoadedCheckpoint ck = load_checkpoint(path);
    json info = {{"seed", ck.info.seed}, {"config_hash", ck.info.config_hash()}, {"train", ck.info.train.to_json()},
                 {"loss", ck.info.loss.to_json()}, {"extra", ck.info.extra}};
    return py::make_tuple(std::move(ck.model), info.dump());
  });

  m.def("train", [](const std::vector<Episode>& train, const std::vector<Episode>& validation, const std::string& model,
                    const std::string& config, const std::string& loss) {
    TrainResult r = [&] {
      py::gil_scoped_release release;
      return batch_train(train, validation, ModelConfig::from_json(parse(model)), TrainConfig::from_json(parse(config)),
                         LossConfig::from_json(parse(loss)));
    }();
    json summary = {{"best_epoch", r.best_epoch}, {"best_val", r.best_val}, {"diverged", r.diverged},
                    {"message", r.message}, {"log", json::parse(epoch_log_json(r.log))}};
    return py::make_tuple(std::move(r.model), summary.dump());
  }, py::arg("train"), py::arg("validation"), py::arg("model"), py::arg("config") = "", py::arg("loss") = "");

  m.def("min_mean_msd", [](const std::vector<Tensor>& samples, const Tensor& truth) {
    const MsdResult r = min_mean_msd(samples, truth);
    return py::make_tuple(r.min_msd, r.mean_msd);
  });
  m.def("example_pr_f1", [](const std::vector<Tensor>& predicted, const std::vector<Tensor>& truth) {
    const PrF1 s = example_pr_f1(predicted, truth);
    return py::make_tuple(s.precision, s.recall, s.f1);
  });
  m.def("topk_recall", &topk_recall);
  m.def("cosine_similarity", &cosine_similarity);
  m.def("gumbel_softmax_log_density", &gumbel_softmax_log_density, py::arg("a1"), py::arg("a2"), py::arg("u1"),
        py::arg("u2"), py::arg("tau"));
  m.def("git_blob_hash", [](const py::bytes& b) { return git_blob_hash(std::string(b)); });

  m.def("run_cli", [](std::vector<std::string> args) {
    args.insert(args.begin(), "hybridcast");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    py::gil_scoped_release release;
    return cli::run(static_cast<int>(argv.size()), argv.data());
  });
}
