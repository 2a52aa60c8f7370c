#include "cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "hybridcast/checkpoint.hpp"
#include "hybridcast/verify.hpp"

namespace hybridcast::cli {

namespace fs = std::filesystem;

namespace {

nlohmann::json eval_to_json(const EvalConfig& e) {
  return {{"samples", e.samples}, {"diversity_noise_scale", e.diversity_noise_scale}, {"batch_size", e.batch_size},
          {"seed", e.seed}};
}

EvalConfig eval_from_json(const nlohmann::json& j, EvalConfig e) {
  e.samples = j.value("samples", e.samples);
  e.diversity_noise_scale = j.value("diversity_noise_scale", e.diversity_noise_scale);
  e.batch_size = j.value("batch_size", e.batch_size);
  e.seed = j.value("seed", e.seed);
  return e;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  require(static_cast<bool>(out), "cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "cannot read '" + path.string() + "'");
  return nlohmann::json::parse(in);
}

struct Dataset {
  std::vector<Episode> episodes;
  nlohmann::json manifest;
  WorldConfig world;
  DatasetSplit split;
  fs::path jsonl;

  std::vector<Episode> part(const std::string& name) const {
    if (name == "train") return select_episodes(episodes, split.train);
    if (name == "validation") return select_episodes(episodes, split.validation);
    if (name == "test") return select_episodes(episodes, split.test);
    throw ContractViolation("unknown split '" + name + "' (expected train, validation or test)");
  }
};

Dataset load_dataset(const std::string& dir) {
  require(!dir.empty(), "--data is required for this command");
  Dataset d;
  d.jsonl = fs::path(dir) / "episodes.jsonl";
  d.manifest = read_json(fs::path(dir) / "dataset.json");
  d.world = WorldConfig::from_json(d.manifest.at("config"));
  d.split = split_from_manifest(d.manifest);
  d.episodes = read_jsonl(d.jsonl.string());
  for (const auto& e : d.episodes) e.validate(d.world.dims);
  return d;
}

/// Tracks inputs and outputs of one command for the manifest.
class Run {
 public:
  explicit Run(const RunConfig& rc) : rc_(rc), out_(rc.out_dir) { fs::create_directories(out_); }

  fs::path path(const std::string& name) const { return out_ / name; }
  void input(const fs::path& p) { inputs_.push_back(p); }
  void artifact(const std::string& name) { artifacts_.push_back(name); }

  void manifest(const std::string& status, const nlohmann::json& summary = nlohmann::json::object()) const {
    nlohmann::json in = nlohmann::json::array(), out = nlohmann::json::array();
    for (const auto& p : inputs_)
      if (fs::exists(p)) in.push_back({{"path", p.string()}, {"blob_hash", file_blob_hash(p.string())}});
    for (const auto& a : artifacts_)
      if (fs::exists(out_ / a)) out.push_back({{"path", a}, {"blob_hash", file_blob_hash((out_ / a).string())}});
    const nlohmann::json config = rc_.to_json();
    write_json(out_ / "manifest.json", {{"command", rc_.command},
                                        {"status", status},
                                        {"seed", rc_.seed},
                                        {"config", config},
                                        {"config_hash", config_hash(config)},
                                        {"inputs", in},
                                        {"artifacts", out},
                                        {"summary", summary}});
  }

 private:
  const RunConfig& rc_;
  fs::path out_;
  std::vector<fs::path> inputs_;
  std::vector<std::string> artifacts_;
};

/// Raised after a command has written its outputs but its result is a failure.
struct CommandFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

LoadedCheckpoint open_checkpoint(const RunConfig& rc, Run& run) {
  require(!rc.checkpoint.empty(), "--checkpoint is required for this command");
  run.input(rc.checkpoint);
  return load_checkpoint(rc.checkpoint);
}

LossConfig effective_loss(const RunConfig& rc, const LoadedCheckpoint& ck, bool temperature_given) {
  LossConfig loss = ck.info.loss;
  if (temperature_given) loss.tau = rc.loss.tau;
  return loss;
}

OnlineConfig effective_online(const RunConfig& rc, const LossConfig& loss) {
  OnlineConfig oc = rc.online;
  oc.tau = loss.tau;
  oc.label_eps = loss.label_eps;
  oc.sigma_prior = loss.sigma_prior;
  if (rc.seed_given) oc.seed = rc.seed;
  return oc;
}

nlohmann::json terms_json(const OnlineTerms& t) {
  return {{"traj_forward", t.traj_forward}, {"traj_reverse", t.traj_reverse}, {"act_forward", t.act_forward},
          {"total", t.total}};
}

nlohmann::json cmd_gen_data(RunConfig& rc, Run& run) {
  if (rc.seed_given) rc.world.seed = rc.seed;
  const auto episodes = generate_dataset(rc.world, rc.episodes);
  const DatasetSplit split = split_dataset(episodes, rc.split, rc.world.dims.action_classes, rc.split_seed);
  write_jsonl(run.path("episodes.jsonl").string(), episodes);
  run.artifact("episodes.jsonl");
  write_json(run.path("dataset.json"), dataset_manifest(rc.world, rc.episodes, split));
  run.artifact("dataset.json");
  return {{"episodes", episodes.size()},
          {"train", split.train.size()},
          {"validation", split.validation.size()},
          {"test", split.test.size()}};
}

nlohmann::json cmd_train(RunConfig& rc, Run& run, bool temperature_given) {
  (void)temperature_given;
  const Dataset data = load_dataset(rc.data_dir);
  run.input(data.jsonl);
  if (rc.seed_given) rc.train.seed = rc.seed;
  ModelConfig base = rc.model;
  base.dims = data.world.dims;
  const ModelConfig mc = model_config_for(rc.train.mode, base);
  TrainResult result = batch_train(data.part(rc.train_split), data.part("validation"), mc, rc.train, rc.loss);

  write_training_log(run.path("train_log.csv").string(), result.log);
  run.artifact("train_log.csv");
  CheckpointInfo info;
  info.model = mc;
  info.train = rc.train;
  info.loss = rc.loss;
  info.seed = rc.train.seed;
  info.extra = {{"train_split", rc.train_split},
                {"dataset_hash", file_blob_hash(data.jsonl.string())},
                {"best_epoch", result.best_epoch},
                {"best_val", result.best_val},
                {"diverged", result.diverged}};
  save_checkpoint(run.path("model.ckpt").string(), *result.model, info);
  run.artifact("model.ckpt");
  const nlohmann::json summary = {{"best_epoch", result.best_epoch},
                                  {"best_val", result.best_val},
                                  {"epochs_run", result.log.size()},
                                  {"diverged", result.diverged}};
  if (result.diverged) throw CommandFailed("training diverged (" + result.message + "); the last good parameters were saved");
  return summary;
}

nlohmann::json cmd_eval(RunConfig& rc, Run& run, bool temperature_given) {
  const LoadedCheckpoint ck = open_checkpoint(rc, run);
  const Dataset data = load_dataset(rc.data_dir);
  run.input(data.jsonl);
  EvalConfig ec = rc.eval;
  if (rc.seed_given) ec.seed = rc.seed;
  MetricsReport report = evaluate_model(*ck.model, data.part(rc.eval_split), effective_loss(rc, ck, temperature_given), ec);
  report.label = to_string(ck.info.train.mode) + ":" + rc.eval_split;
  write_json(run.path("metrics.json"), report.to_json());
  run.artifact("metrics.json");
  std::ofstream csv(run.path("metrics.csv"));
  csv << MetricsReport::csv_header() << '\n' << report.csv_row() << '\n';
  csv.close();
  run.artifact("metrics.csv");
  return report.to_json();
}

std::string stream_split_for(const RunConfig& rc, const LoadedCheckpoint& ck) {
  if (rc.protocol.empty()) return rc.eval_split;
  const std::string trained_on = ck.info.extra.value("train_split", "train");
  if (rc.protocol == "train-test") {
    require(trained_on == "train", "protocol train-test needs a checkpoint trained on the train split");
    return "test";
  }
  if (rc.protocol == "test-train") {
    require(trained_on == "test", "protocol test-train needs a checkpoint trained on the test split");
    return "train";
  }
  throw ContractViolation("unknown protocol '" + rc.protocol + "' (expected train-test or test-train)");
}

nlohmann::json cmd_online(RunConfig& rc, Run& run, bool temperature_given) {
  const LoadedCheckpoint ck = open_checkpoint(rc, run);
  const Dataset data = load_dataset(rc.data_dir);
  run.input(data.jsonl);
  const std::string stream_split = stream_split_for(rc, ck);
  const OnlineConfig oc = effective_online(rc, effective_loss(rc, ck, temperature_given));
  const std::uint64_t frozen_hash = ck.model->store().hash();
  const auto stream = build_online_examples(*ck.model, data.part(stream_split), oc);
  const StreamComparison cmp = compare_on_stream(stream, ck.model->dims().action_classes, oc);
  require(ck.model->store().hash() == frozen_hash, "online: frozen parameters changed");
  const nlohmann::json result = {{"stream_split", stream_split},
                                 {"stream_size", stream.size()},
                                 {"online_config", oc.to_json()},
                                 {"frozen", terms_json(cmp.frozen)},
                                 {"online", terms_json(cmp.online)},
                                 {"traj_forward_improved", cmp.online.traj_forward <= cmp.frozen.traj_forward}};
  write_json(run.path("online.json"), result);
  run.artifact("online.json");
  return result;
}

nlohmann::json cmd_regret(RunConfig& rc, Run& run, bool temperature_given) {
  const LoadedCheckpoint ck = open_checkpoint(rc, run);
  const Dataset data = load_dataset(rc.data_dir);
  run.input(data.jsonl);
  const OnlineConfig oc = effective_online(rc, effective_loss(rc, ck, temperature_given));
  auto episodes = data.part(stream_split_for(rc, ck));
  if (rc.limit > 0 && static_cast<std::size_t>(rc.limit) < episodes.size()) episodes.resize(static_cast<std::size_t>(rc.limit));
  const auto stream = build_online_examples(*ck.model, episodes, oc);
  const RegretRun r = regret_curve(stream, ck.model->dims().action_classes, oc);
  write_regret_csv(run.path("regret.csv").string(), r.records);
  run.artifact("regret.csv");
  bool bound_held = true;
  for (const auto& rec : r.records) bound_held = bound_held && rec.cum_regret <= rec.bound;
  const auto& last = r.records.back();
  const auto& tenth = r.records[std::max<std::size_t>(r.records.size() / 10, 1) - 1];
  nlohmann::json summary = {{"steps", r.records.size()},
                            {"skipped", r.skipped},
                            {"lipschitz", r.lipschitz},
                            {"first_step_size", r.step_size},
                            {"schedule", to_string(oc.schedule)},
                            {"bound_held", bound_held},
                            {"final_avg_regret", last.avg_regret},
                            {"tenth_avg_regret", tenth.avg_regret},
                            {"hindsight_iterations", r.hindsight.iterations},
                            {"hindsight_converged", r.hindsight.converged},
                            {"hindsight_params", r.hindsight.params.flat()},
                            {"final_params", r.final_params.flat()}};
  if (r.records.size() >= 20) summary["decay_exponent"] = regret_decay_exponent(r.records, 10);
  write_json(run.path("regret_summary.json"), summary);
  run.artifact("regret_summary.json");
  return summary;
}

nlohmann::json cmd_verify(RunConfig& rc, Run& run) {
  VerifyConfig vc;
  vc.seed = rc.seed;
  std::vector<Episode> episodes;
  if (!rc.data_dir.empty()) {
    const Dataset data = load_dataset(rc.data_dir);
    run.input(data.jsonl);
    episodes = data.part("test");
  } else {
    WorldConfig world = rc.world;
    world.video_count = std::min(world.video_count, 8);
    episodes = generate_dataset(world, 64);
  }
  std::unique_ptr<Model> model;
  LossConfig loss = rc.loss;
  if (!rc.checkpoint.empty()) {
    LoadedCheckpoint ck = open_checkpoint(rc, run);
    model = std::move(ck.model);
    loss = ck.info.loss;
  } else {
    ModelConfig mc = model_config_for(TrainMode::joint, rc.model);
    mc.dims = rc.world.dims;
    model = Model::create(mc, rc.seed);
    model->fit_normalization(episodes);
  }
  ModelConfig mc = model->config();
  require(mc.kind == ModelKind::flow, "verify: needs a flow checkpoint");

  std::vector<CheckResult> checks;
  auto append = [&checks](std::vector<CheckResult> more) { checks.insert(checks.end(), more.begin(), more.end()); };
  append(verify_flow(mc, episodes, vc));
  append(verify_gradients(mc, episodes, loss, vc));
  append(verify_normalization(vc));
  append(verify_online(*model, episodes, effective_online(rc, loss), vc));

  nlohmann::json list = nlohmann::json::array();
  bool all = true;
  for (const auto& c : checks) {
    list.push_back(c.to_json());
    all = all && c.passed;
  }
  const nlohmann::json report = {{"passed", all}, {"checks", list}};
  write_json(run.path("verify.json"), report);
  run.artifact("verify.json");
  for (const auto& c : checks)
    std::cout << (c.passed ? "PASS " : "FAIL ") << c.suite << '/' << c.name << " value=" << c.value
              << " tol=" << c.tolerance << '\n';
  if (!all) throw CommandFailed("one or more verification checks failed (see verify.json)");
  return {{"passed", all}, {"checks", checks.size()}};
}

nlohmann::json cmd_export(RunConfig& rc, Run& run) {
  const LoadedCheckpoint ck = open_checkpoint(rc, run);
  const Dataset data = load_dataset(rc.data_dir);
  run.input(data.jsonl);
  auto episodes = data.part(rc.eval_split);
  if (rc.limit > 0 && static_cast<std::size_t>(rc.limit) < episodes.size()) episodes.resize(static_cast<std::size_t>(rc.limit));
  EvalConfig ec = rc.eval;
  if (rc.seed_given) ec.seed = rc.seed;
  const auto forecasts = sample_forecasts(*ck.model, episodes, ec);

  std::ofstream traj(run.path("trajectories.csv")), act(run.path("actions.csv")), truth(run.path("truth.csv"));
  traj.precision(10);
  truth.precision(10);
  traj << "episode_id,sample,t,x,y,z\n";
  act << "episode_id,sample,step,class,occurs,probability\n";
  truth << "episode_id,kind,t,x,y,z,class,occurs\n";
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    const Episode& ep = episodes[e];
    const Forecast& f = forecasts[e];
    for (std::size_t s = 0; s < f.trajectories.size(); ++s) {
      for (Eigen::Index t = 0; t < f.trajectories[s].rows(); ++t)
        traj << ep.episode_id << ',' << s << ',' << t + 1 << ',' << f.trajectories[s](t, 0) << ','
             << f.trajectories[s](t, 1) << ',' << f.trajectories[s](t, 2) << '\n';
      for (Eigen::Index t = 0; t < f.actions[s].rows(); ++t)
        for (Eigen::Index c = 0; c < f.actions[s].cols(); ++c)
          act << ep.episode_id << ',' << s << ',' << t + 1 << ',' << c << ',' << f.actions[s](t, c) << ','
              << f.probabilities[s](t, c) << '\n';
    }
    for (Eigen::Index t = 0; t < ep.past_positions.rows(); ++t)
      truth << ep.episode_id << ",past," << t - ep.past_positions.rows() + 1 << ',' << ep.past_positions(t, 0) << ','
            << ep.past_positions(t, 1) << ',' << ep.past_positions(t, 2) << ",,\n";
    for (Eigen::Index t = 0; t < ep.future_positions.rows(); ++t)
      truth << ep.episode_id << ",future," << t + 1 << ',' << ep.future_positions(t, 0) << ','
            << ep.future_positions(t, 1) << ',' << ep.future_positions(t, 2) << ",,\n";
    for (Eigen::Index t = 0; t < ep.future_actions.rows(); ++t)
      for (Eigen::Index c = 0; c < ep.future_actions.cols(); ++c)
        truth << ep.episode_id << ",action," << t + 1 << ",,,," << c << ',' << ep.future_actions(t, c) << '\n';
  }
  for (const char* name : {"trajectories.csv", "actions.csv", "truth.csv"}) run.artifact(name);
  return {{"episodes", episodes.size()}, {"samples", ec.samples}};
}

void write_error(const std::string& out_dir, const std::string& command, const std::string& type,
                 const std::string& message) {
  std::cerr << "error: " << message << '\n';
  if (out_dir.empty()) return;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  std::ofstream out(fs::path(out_dir) / "error.json");
  if (out) out << nlohmann::json{{"status", "error"}, {"command", command}, {"type", type}, {"message", message}}.dump(2) << '\n';
}

}  // namespace

nlohmann::json RunConfig::to_json() const {
  return {{"command", command},
          {"config_path", config_path},
          {"data", data_dir},
          {"checkpoint", checkpoint},
          {"out", out_dir},
          {"seed", seed},
          {"world", world.to_json()},
          {"episodes", episodes},
          {"split", {{"proportions", split}, {"seed", split_seed}}},
          {"model", model.to_json()},
          {"train", train.to_json()},
          {"loss", loss.to_json()},
          {"eval", eval_to_json(eval)},
          {"online", online.to_json()},
          {"train_split", train_split},
          {"eval_split", eval_split},
          {"protocol", protocol},
          {"limit", limit}};
}

void RunConfig::apply(const nlohmann::json& doc) {
  if (doc.contains("world")) world = WorldConfig::from_json(doc["world"]);
  episodes = doc.value("episodes", episodes);
  if (doc.contains("split")) {
    split = doc["split"].value("proportions", split);
    split_seed = doc["split"].value("seed", split_seed);
  }
  if (doc.contains("model")) model = ModelConfig::from_json(doc["model"]);
  if (doc.contains("train")) train = TrainConfig::from_json(doc["train"]);
  if (doc.contains("loss")) loss = LossConfig::from_json(doc["loss"]);
  if (doc.contains("eval")) eval = eval_from_json(doc["eval"], eval);
  if (doc.contains("online")) online = OnlineConfig::from_json(doc["online"]);
}

int run(int argc, const char* const* argv) {
  RunConfig rc;
  CLI::App app{"Joint trajectory and action forecasting with flows, Gumbel-Softmax actions and online fine-tuning"};
  app.require_subcommand(1, 1);

  std::string mode, eq9, schedule;
  double temperature = 0.0, bound = 0.0, step = 0.0;
  int samples = 0, epochs = 0, episodes = 0;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", rc.config_path, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", rc.seed, "Seed for the command's randomness");
    sub->add_option("--out", rc.out_dir, "Output directory")->required();
  };
  auto model_io = [&](CLI::App* sub) {
    sub->add_option("--data", rc.data_dir, "Dataset directory written by gen-data")->check(CLI::ExistingDirectory);
    sub->add_option("--checkpoint", rc.checkpoint, "Checkpoint file")->check(CLI::ExistingFile);
    sub->add_option("--temperature", temperature, "Gumbel-Softmax temperature override");
    sub->add_option("--samples", samples, "Number of samples K");
  };
  auto online_opts = [&](CLI::App* sub) {
    sub->add_option("--eq9", eq9, "Online objective: corrected or as-printed")
        ->check(CLI::IsMember({"corrected", "as-printed"}));
    sub->add_option("--schedule", schedule, "Step size schedule: horizon or anytime")
        ->check(CLI::IsMember({"horizon", "anytime"}));
    sub->add_option("--bound", bound, "Norm ball radius B");
    sub->add_option("--step", step, "Fixed step size (overrides the schedule constant)");
    sub->add_option("--split", rc.eval_split, "Stream split when no protocol is given");
    sub->add_option("--protocol", rc.protocol, "train-test or test-train")
        ->check(CLI::IsMember({"train-test", "test-train"}));
  };

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset with a split manifest");
  common(gen);
  gen->add_option("--episodes", episodes, "Number of episodes");

  auto* train = app.add_subcommand("train", "Train a forecaster or baseline");
  common(train);
  model_io(train);
  train->add_option("--mode", mode, "joint, separate, forward-only, dce or mrmc")
      ->check(CLI::IsMember({"joint", "separate", "forward-only", "dce", "mrmc"}));
  train->add_option("--epochs", epochs, "Main training epochs");
  train->add_option("--train-split", rc.train_split, "Split to fit on: train or test")
      ->check(CLI::IsMember({"train", "test"}));

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  common(eval);
  model_io(eval);
  eval->add_option("--split", rc.eval_split, "train, validation or test");

  auto* online = app.add_subcommand("online", "Online fine-tuning against the frozen model on a stream");
  common(online);
  model_io(online);
  online_opts(online);

  auto* regret = app.add_subcommand("regret", "Regret curve of online fine-tuning");
  common(regret);
  model_io(regret);
  online_opts(regret);
  regret->add_option("--limit", rc.limit, "Stream length (0: whole split)");

  auto* verify = app.add_subcommand("verify", "Run the numerical self-checks");
  common(verify);
  model_io(verify);

  auto* exp = app.add_subcommand("export", "Write sampled forecasts as plot-ready CSV");
  common(exp);
  model_io(exp);
  exp->add_option("--split", rc.eval_split, "train, validation or test");
  exp->add_option("--limit", rc.limit, "Number of episodes (0: all)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  CLI::App* chosen = app.get_subcommands().front();
  rc.command = chosen->get_name();
  rc.seed_given = chosen->count("--seed") > 0;
  try {
    if (!rc.config_path.empty()) rc.apply(read_json(rc.config_path));
    if (!mode.empty()) rc.train.mode = train_mode_from_string(mode);
    if (!eq9.empty()) rc.online.objective = online_objective_from_string(eq9);
    if (!schedule.empty()) rc.online.schedule = step_schedule_from_string(schedule);
    const CLI::Option* temp_opt = chosen->get_option_no_throw("--temperature");
    const bool temperature_given = temp_opt != nullptr && temp_opt->count() > 0;
    if (temperature_given) {
      require(temperature > 0.0, "--temperature must be positive");
      rc.loss.tau = temperature;
    }
    if (samples > 0) rc.train.samples = rc.eval.samples = samples;
    if (epochs > 0) rc.train.epochs = epochs;
    if (episodes > 0) rc.episodes = episodes;
    if (bound > 0.0) rc.online.bound = bound;
    if (step > 0.0) rc.online.step_size = step;
    rc.online.validate();

    Run runner(rc);
    nlohmann::json summary;
    try {
      if (rc.command == "gen-data") summary = cmd_gen_data(rc, runner);
      else if (rc.command == "train") summary = cmd_train(rc, runner, temperature_given);
      else if (rc.command == "eval") summary = cmd_eval(rc, runner, temperature_given);
      else if (rc.command == "online") summary = cmd_online(rc, runner, temperature_given);
      else if (rc.command == "regret") summary = cmd_regret(rc, runner, temperature_given);
      else if (rc.command == "verify") summary = cmd_verify(rc, runner);
      else summary = cmd_export(rc, runner);
    } catch (...) {
      runner.manifest("partial");
      throw;
    }
    runner.manifest("complete", summary);
    return 0;
  } catch (const CommandFailed& e) {
    write_error(rc.out_dir, rc.command, "failed", e.what());
    return 2;
  } catch (const ContractViolation& e) {
    write_error(rc.out_dir, rc.command, "contract_violation", e.what());
  } catch (const NumericError& e) {
    write_error(rc.out_dir, rc.command, "numeric_error", e.what());
  } catch (const std::exception& e) {
    write_error(rc.out_dir, rc.command, "error", e.what());
  }
  return 1;
}

}  // namespace hybridcast::cli
