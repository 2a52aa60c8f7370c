#include "hybridcast/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>

#include "hybridcast/action.hpp"
#include "hybridcast/trajectory.hpp"

namespace hybridcast {

std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::joint:
      return "joint";
    case TrainMode::separate:
      return "separate";
    case TrainMode::forward_only:
      return "forward-only";
    case TrainMode::dce:
      return "dce";
    case TrainMode::mrmc:
      return "mrmc";
  }
  return "joint";
}

TrainMode train_mode_from_string(const std::string& s) {
  if (s == "joint") return TrainMode::joint;
  if (s == "separate") return TrainMode::separate;
  if (s == "forward-only" || s == "forward_only") return TrainMode::forward_only;
  if (s == "dce") return TrainMode::dce;
  if (s == "mrmc") return TrainMode::mrmc;
  throw ContractViolation("unknown training mode '" + s + "' (expected joint, separate, forward-only, dce or mrmc)");
}

ModelConfig model_config_for(TrainMode mode, ModelConfig base) {
  base.kind = mode == TrainMode::dce ? ModelKind::dce : mode == TrainMode::mrmc ? ModelKind::mrmc : ModelKind::flow;
  base.action_uses_trajectory = mode != TrainMode::separate;
  return base;
}

void LossConfig::validate() const {
  require(beta_traj >= 0.0 && beta_act >= 0.0, "LossConfig: betas must be non-negative");
  require(sigma_prior > 0.0 && prior_scale > 0.0 && tau > 0.0, "LossConfig: sigma_prior, prior_scale and tau must be positive");
  require(eta >= 0.0, "LossConfig: eta must be non-negative");
  require(label_eps > 0.0 && label_eps < 0.5, "LossConfig: label_eps must lie in (0, 0.5)");
  require(prior_floor > 0.0 && prior_floor < 1.0, "LossConfig: prior_floor must lie in (0, 1)");
}

nlohmann::json LossConfig::to_json() const {
  return {{"beta_traj", beta_traj}, {"beta_act", beta_act}, {"sigma_prior", sigma_prior},
          {"prior_scale", prior_scale}, {"eta", eta}, {"tau", tau},
          {"label_eps", label_eps}, {"prior_floor", prior_floor}};
}

LossConfig LossConfig::from_json(const nlohmann::json& j) {
  LossConfig c;
  c.beta_traj = j.value("beta_traj", c.beta_traj);
  c.beta_act = j.value("beta_act", c.beta_act);
  c.sigma_prior = j.value("sigma_prior", c.sigma_prior);
  c.prior_scale = j.value("prior_scale", c.prior_scale);
  c.eta = j.value("eta", c.eta);
  c.tau = j.value("tau", c.tau);
  c.label_eps = j.value("label_eps", c.label_eps);
  c.prior_floor = j.value("prior_floor", c.prior_floor);
  return c;
}

void TrainConfig::validate() const {
  require(learning_rate >= 0.0, "TrainConfig: learning_rate must be non-negative");
  require(batch_size >= 1 && samples >= 1 && epochs >= 1 && pretrain_epochs >= 0,
          "TrainConfig: batch_size, samples and epochs must be positive");
  require(parts == "all" || parts == "traj" || parts == "act", "TrainConfig: parts must be all, traj or act");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"mode", to_string(mode)}, {"learning_rate", learning_rate}, {"batch_size", batch_size},
          {"samples", samples}, {"epochs", epochs}, {"pretrain_epochs", pretrain_epochs},
          {"validation_limit", validation_limit}, {"parts", parts}, {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  if (j.contains("mode")) c.mode = train_mode_from_string(j["mode"].get<std::string>());
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.samples = j.value("samples", c.samples);
  c.epochs = j.value("epochs", c.epochs);
  c.pretrain_epochs = j.value("pretrain_epochs", c.pretrain_epochs);
  c.validation_limit = j.value("validation_limit", c.validation_limit);
  c.parts = j.value("parts", c.parts);
  c.seed = j.value("seed", c.seed);
  return c;
}

Episode perturb_trajectories(const Episode& episode, double eta, Rng& rng) {
  require(eta >= 0.0, "perturb_trajectories: eta must be non-negative");
  Episode out = episode;
  if (eta == 0.0) return out;
  out.future_positions += std::sqrt(eta) * rng.normal_tensor(out.future_positions.rows(), 3);
  return out;
}

std::vector<Tensor> perturb_blocks(const std::vector<Tensor>& blocks, double eta, Rng& rng) {
  require(eta >= 0.0, "perturb_blocks: eta must be non-negative");
  if (eta == 0.0) return blocks;
  std::vector<Tensor> out;
  out.reserve(blocks.size());
  for (const auto& b : blocks) out.push_back(b + std::sqrt(eta) * rng.normal_tensor(b.rows(), b.cols()));
  return out;
}

namespace {

// -sum [y log u2 + (1 - y) log u1] / episodes: the Bernoulli head of the baselines.
ad::Var bernoulli_ce(const ad::Var& logits, const Tensor& labels, double episodes) {
  Tensor w(labels.rows(), 2 * labels.cols());
  for (Eigen::Index r = 0; r < labels.rows(); ++r)
    for (Eigen::Index c = 0; c < labels.cols(); ++c) {
      w(r, 2 * c) = 1.0 - labels(r, c);
      w(r, 2 * c + 1) = labels(r, c);
    }
  return ad::scale(ad::sum(ad::log_softmax_pairs(logits) * ad::constant(w)), -1.0 / episodes);
}

// Action priors of every episode repeated for K samples, rows ordered (episode, sample, step).
Tensor repeated_prior(const Batch& batch, const EpisodeDims& d, Eigen::Index k, double scale, double floor) {
  Tensor out(static_cast<Eigen::Index>(batch.size) * k * d.action_steps, d.action_classes);
  for (int e = 0; e < batch.size; ++e) {
    const Tensor prior =
        action_prior(batch.actions.middleRows(static_cast<Eigen::Index>(e) * d.action_steps, d.action_steps), scale, floor);
    for (Eigen::Index s = 0; s < k; ++s)
      out.middleRows((static_cast<Eigen::Index>(e) * k + s) * d.action_steps, d.action_steps) = prior;
  }
  return out;
}

std::vector<Tensor> values_of(const std::vector<ad::Var>& blocks) {
  std::vector<Tensor> out;
  out.reserve(blocks.size());
  for (const auto& b : blocks) out.push_back(b.value());
  return out;
}

}  // namespace

BatchObjective batch_objective(const Model& model, const Batch& batch, TrainMode mode, const LossConfig& loss,
                               int samples, bool perturb, bool phase_traj_only, Rng& rng) {
  loss.validate();
  const EpisodeDims& d = model.dims();
  const double n = static_cast<double>(batch.size);
  const Eigen::Index k = samples;
  const std::vector<Tensor> future = perturb ? perturb_blocks(batch.future, loss.eta, rng) : batch.future;
  const bool uses_traj = model.config().action_uses_trajectory;
  BatchObjective out;

  if (mode == TrainMode::dce || mode == TrainMode::mrmc) {
    ad::Var traj;
    if (mode == TrainMode::dce) {
      traj = forward_ce_traj(model, batch, future);
    } else {
      std::vector<ad::Var> zeros(static_cast<std::size_t>(d.future_steps), ad::constant(Tensor::Zero(batch.size, 3)));
      const Rollout r = simulate(model, warm_up(model, batch), zeros);
      ad::Var total;
      for (std::size_t t = 0; t < r.x.size(); ++t) {
        const ad::Var sq = ad::sum(ad::square(r.x[t] - ad::constant(future[t])));
        total = t == 0 ? sq : total + sq;
      }
      traj = ad::scale(total, 1.0 / n);
    }
    const ad::Var act = bernoulli_ce(action_logits(model, batch.features, action_windows(model, batch, future, 1)),
                                     batch.actions, n);
    out.loss = phase_traj_only ? traj : traj + act;
    out.terms.h_p_qpi = traj.item();
    out.terms.h_p_qkappa = act.item();
    out.terms.total = out.loss.item();
    return out;
  }

  const double beta_traj = mode == TrainMode::forward_only ? 0.0 : loss.beta_traj;
  const double beta_act = mode == TrainMode::forward_only ? 0.0 : loss.beta_act;

  const ad::Var h_p_qpi = forward_ce_traj(model, batch, future);
  Rollout rollout;
  const ad::Var h_rev_traj =
      reverse_ce_traj(model, batch, draw_noise(batch.size * k, d.future_steps, rng), k, loss.sigma_prior, &rollout);
  out.terms.h_p_qpi = h_p_qpi.item();
  out.terms.h_rev_traj = h_rev_traj.item();
  out.loss = h_p_qpi;
  if (beta_traj > 0.0) out.loss = out.loss + ad::scale(h_rev_traj, beta_traj);

  if (!phase_traj_only) {
    const Tensor gt_windows = uses_traj ? action_windows(model, batch, future, 1) : Tensor();
    const ad::Var h_p_qkappa =
        forward_ce_action(action_logits(model, batch.features, gt_windows), batch.actions, loss.tau, loss.label_eps, n);

    // Actions conditioned on the sampled trajectories; the windows are constants,
    // so no gradient reaches the trajectory policy through this path.
    const Tensor sample_windows = uses_traj ? action_windows(model, batch, values_of(rollout.x), k) : Tensor();
    const ad::Var logits = action_logits(model, repeat_rows(batch.features, k), sample_windows);
    const Tensor g = rng.gumbel_tensor(logits.rows(), logits.cols());
    const ad::Var relaxed = relaxed_sample(ad::log_softmax_pairs(logits), g, loss.tau);
    const ad::Var h_rev_act = reverse_ce_action(relaxed, repeated_prior(batch, d, k, loss.prior_scale, loss.prior_floor),
                                                loss.prior_floor, n * static_cast<double>(k));
    out.terms.h_p_qkappa = h_p_qkappa.item();
    out.terms.h_rev_act = h_rev_act.item();
    out.loss = out.loss + h_p_qkappa;
    if (beta_act > 0.0) out.loss = out.loss + ad::scale(h_rev_act, beta_act);
  }
  out.terms.total = out.loss.item();
  return out;
}

namespace {

std::vector<std::vector<const Episode*>> make_batches(const std::vector<const Episode*>& eps, int batch_size) {
  std::vector<std::vector<const Episode*>> out;
  for (std::size_t i = 0; i < eps.size(); i += static_cast<std::size_t>(batch_size))
    out.emplace_back(eps.begin() + static_cast<std::ptrdiff_t>(i),
                     eps.begin() + static_cast<std::ptrdiff_t>(std::min(eps.size(), i + static_cast<std::size_t>(batch_size))));
  return out;
}

void add_terms(LossTerms& acc, const LossTerms& t, double w) {
  acc.h_p_qpi += w * t.h_p_qpi;
  acc.h_p_qkappa += w * t.h_p_qkappa;
  acc.h_rev_traj += w * t.h_rev_traj;
  acc.h_rev_act += w * t.h_rev_act;
  acc.total += w * t.total;
}

}  // namespace

LossTerms evaluate_objective(Model& model, const std::vector<Episode>& episodes, TrainMode mode, const LossConfig& loss,
                             int samples, std::uint64_t seed, int batch_size) {
  require(!episodes.empty(), "evaluate_objective: no episodes");
  std::vector<const Episode*> ptrs;
  for (const auto& e : episodes) ptrs.push_back(&e);
  NoGradScope no_grad(model.store());
  LossTerms acc;
  Rng rng(seed);
  std::uint64_t b = 0;
  for (const auto& chunk : make_batches(ptrs, batch_size)) {
    Rng brng = rng.substream(b++);
    const Batch batch = make_batch(chunk, model.dims());
    const BatchObjective obj = batch_objective(model, batch, mode, loss, samples, false, false, brng);
    add_terms(acc, obj.terms, static_cast<double>(chunk.size()) / static_cast<double>(ptrs.size()));
  }
  return acc;
}

TrainResult batch_train(const std::vector<Episode>& train, const std::vector<Episode>& validation,
                        const ModelConfig& model_config, const TrainConfig& config, const LossConfig& loss) {
  require(!train.empty(), "batch_train: empty training set");
  config.validate();
  loss.validate();
  TrainResult result;
  result.model = Model::create(model_config_for(config.mode, model_config), config.seed);
  Model& model = *result.model;
  model.fit_normalization(train);
  ParamStore& store = model.store();
  if (config.parts == "traj") store.set_frozen_prefix("act.", true);
  if (config.parts == "act") store.set_frozen_prefix("traj.", true);

  std::vector<Episode> val_set = validation;
  if (config.validation_limit > 0 && static_cast<int>(val_set.size()) > config.validation_limit)
    val_set.resize(static_cast<std::size_t>(config.validation_limit));

  AdamConfig adam_config;
  adam_config.learning_rate = config.learning_rate;
  Adam adam(adam_config);
  const Rng master(config.seed);
  std::vector<const Episode*> order;
  for (const auto& e : train) order.push_back(&e);

  auto best = store.snapshot();
  result.best_val = std::numeric_limits<double>::infinity();
  const bool has_pretrain = config.mode == TrainMode::joint && config.parts == "all";

  // Trajectory pretraining runs before, not instead of, the joint epochs.
  const int total_epochs = config.epochs + (has_pretrain ? config.pretrain_epochs : 0);
  for (int epoch = 1; epoch <= total_epochs; ++epoch) {
    Rng erng = master.substream(static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), erng.engine());
    const bool traj_only = has_pretrain && epoch <= config.pretrain_epochs;
    if (has_pretrain) store.set_frozen_prefix("act.", traj_only);

    EpochLog entry;
    entry.epoch = epoch;
    try {
      std::uint64_t b = 0;
      for (const auto& chunk : make_batches(order, config.batch_size)) {
        Rng brng = erng.substream(b++);
        const Batch batch = make_batch(chunk, model.dims());
        store.zero_grad();
        BatchObjective obj = batch_objective(model, batch, config.mode, loss, config.samples, true, traj_only, brng);
        ad::backward(obj.loss);
        adam.step(store);
        add_terms(entry.train, obj.terms, static_cast<double>(chunk.size()) / static_cast<double>(order.size()));
      }
      const std::vector<Episode>& criterion = val_set.empty() ? train : val_set;
      entry.val_total =
          evaluate_objective(model, criterion, config.mode, loss, config.samples, mix_seed(config.seed ^ 0xa11ce)).total;
      for (const auto& [name, value] : store.snapshot())
        if (!value.allFinite()) throw NumericError("non-finite parameter '" + name + "'");
    } catch (const NumericError& ex) {
      result.diverged = true;
      result.message = "diverged at epoch " + std::to_string(epoch) + ": " + ex.what();
      break;
    }
    result.log.push_back(entry);
    if (!traj_only && entry.val_total < result.best_val) {
      result.best_val = entry.val_total;
      result.best_epoch = epoch;
      best = store.snapshot();
    }
  }
  store.restore(best);
  store.set_frozen_prefix("act.", false);
  store.set_frozen_prefix("traj.", false);
  return result;
}

void write_training_log(const std::string& path, const std::vector<EpochLog>& log) {
  std::ofstream out(path);
  require(static_cast<bool>(out), "write_training_log: cannot open '" + path + "'");
  out << "epoch,H_p_qpi,H_p_qkappa,H_rev_traj,H_rev_act,total,val_total\n";
  out << std::setprecision(10);
  for (const auto& e : log)
    out << e.epoch << ',' << e.train.h_p_qpi << ',' << e.train.h_p_qkappa << ',' << e.train.h_rev_traj << ','
        << e.train.h_rev_act << ',' << e.train.total << ',' << e.val_total << '\n';
}

}  // namespace hybridcast
