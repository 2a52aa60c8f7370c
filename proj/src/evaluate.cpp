#include "hybridcast/evaluate.hpp"

#include <cmath>

#include "hybridcast/action.hpp"
#include "hybridcast/trajectory.hpp"

namespace hybridcast {

namespace {

// Hardened pair sample: the "occurs" entry wins when log u2 + s*g2 > log u1 + s*g1.
Tensor harden_logits(const Tensor& logits, const Tensor& gumbel, double noise_scale) {
  Tensor out(logits.rows(), logits.cols() / 2);
  for (Eigen::Index r = 0; r < logits.rows(); ++r)
    for (Eigen::Index c = 0; c < out.cols(); ++c) {
      const double d = logits(r, 2 * c + 1) - logits(r, 2 * c);  // log u2 - log u1
      out(r, c) = d + noise_scale * (gumbel(r, 2 * c + 1) - gumbel(r, 2 * c)) > 0.0 ? 1.0 : 0.0;
    }
  return out;
}

}  // namespace

std::vector<Forecast> sample_forecasts(Model& model, const std::vector<Episode>& episodes, const EvalConfig& config) {
  require(config.samples >= 1, "sample_forecasts: need at least one sample");
  NoGradScope guard(model.store());
  const EpisodeDims& d = model.dims();
  const Eigen::Index k = config.samples;
  const bool deterministic = model.config().kind == ModelKind::mrmc;
  Rng master(config.seed);
  std::vector<Forecast> out;
  out.reserve(episodes.size());

  for (std::size_t start = 0; start < episodes.size(); start += static_cast<std::size_t>(config.batch_size)) {
    Rng rng = master.substream(start);
    std::vector<const Episode*> chunk;
    for (std::size_t i = start; i < std::min(episodes.size(), start + static_cast<std::size_t>(config.batch_size)); ++i)
      chunk.push_back(&episodes[i]);
    const Batch batch = make_batch(chunk, d);
    const Eigen::Index rows = static_cast<Eigen::Index>(batch.size) * k;

    std::vector<ad::Var> z;
    for (int t = 0; t < d.future_steps; ++t)
      z.push_back(ad::constant(deterministic ? Tensor(Tensor::Zero(rows, 3)) : rng.normal_tensor(rows, 3)));
    const Rollout roll = simulate(model, repeat_state(warm_up(model, batch), k), z);
    std::vector<Tensor> xs;
    for (const auto& x : roll.x) xs.push_back(x.value());

    const Tensor windows = model.config().action_uses_trajectory ? action_windows(model, batch, xs, k) : Tensor();
    const Tensor logits = ad::log_softmax_pairs(action_logits(model, repeat_rows(batch.features, k), windows)).value();
    const Tensor g = deterministic ? Tensor(Tensor::Zero(logits.rows(), logits.cols()))
                                   : rng.gumbel_tensor(logits.rows(), logits.cols());
    const Tensor g_div = deterministic ? g : rng.gumbel_tensor(logits.rows(), logits.cols());
    const Tensor hard = harden_logits(logits, g, 1.0);
    const Tensor hard_div = harden_logits(logits, g_div, config.diversity_noise_scale);
    const Tensor probs = pair_probabilities(logits);

    for (int e = 0; e < batch.size; ++e) {
      Forecast f;
      for (Eigen::Index s = 0; s < k; ++s) {
        const Eigen::Index row = e * k + s;
        f.trajectories.push_back(trajectory_of_row(xs, row));
        const Eigen::Index first = row * d.action_steps;
        f.actions.push_back(hard.middleRows(first, d.action_steps));
        f.diverse_actions.push_back(hard_div.middleRows(first, d.action_steps));
        Tensor p(d.action_steps, d.action_classes);
        for (int step = 0; step < d.action_steps; ++step)
          for (int c = 0; c < d.action_classes; ++c) p(step, c) = probs(first + step, 2 * c + 1);
        f.probabilities.push_back(std::move(p));
      }
      out.push_back(std::move(f));
    }
  }
  return out;
}

MetricsReport evaluate_model(Model& model, const std::vector<Episode>& episodes, const LossConfig& loss,
                             const EvalConfig& config) {
  require(!episodes.empty(), "evaluate_model: no episodes");
  const EpisodeDims& d = model.dims();
  MetricsReport rep;
  rep.examples = static_cast<int>(episodes.size());
  rep.samples = config.samples;
  rep.label = to_string(model.config().kind);

  if (model.config().kind == ModelKind::mrmc) {
    rep.h_p_qpi = std::nan("");
    rep.h_p_qkappa = std::nan("");
  } else {
    NoGradScope guard(model.store());
    double hp = 0.0, hk = 0.0;
    for (std::size_t start = 0; start < episodes.size(); start += static_cast<std::size_t>(config.batch_size)) {
      std::vector<const Episode*> chunk;
      for (std::size_t i = start; i < std::min(episodes.size(), start + static_cast<std::size_t>(config.batch_size)); ++i)
        chunk.push_back(&episodes[i]);
      const Batch batch = make_batch(chunk, d);
      const double w = static_cast<double>(batch.size);
      hp += w * forward_ce_traj(model, batch, batch.future).item();
      const Tensor windows =
          model.config().action_uses_trajectory ? action_windows(model, batch, batch.future, 1) : Tensor();
      hk += forward_ce_action(action_logits(model, batch.features, windows), batch.actions, loss.tau, loss.label_eps, 1.0)
                .item();
    }
    rep.h_p_qpi = hp / static_cast<double>(episodes.size());
    rep.h_p_qkappa = hk / static_cast<double>(episodes.size());
  }

  const std::vector<Forecast> forecasts = sample_forecasts(model, episodes, config);
  std::vector<double> mins, means;
  std::vector<Tensor> predicted, truth, mean_probs;
  DiversityBlock div;
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const Forecast& f = forecasts[i];
    const Episode& e = episodes[i];
    const MsdResult m = min_mean_msd(f.trajectories, e.future_positions);
    mins.push_back(m.min_msd);
    means.push_back(m.mean_msd);
    Tensor avg = Tensor::Zero(d.action_steps, d.action_classes);
    for (std::size_t s = 0; s < f.actions.size(); ++s) {
      predicted.push_back(f.actions[s]);
      truth.push_back(e.future_actions);
      avg += f.probabilities[s] / static_cast<double>(f.actions.size());
    }
    mean_probs.push_back(std::move(avg));
    if (config.samples >= 2) {
      const DiversityBlock b = diversity(f.trajectories, e.last_observed(), f.diverse_actions);
      div.n_act_tr += b.n_act_tr;
      div.n_act_tu += b.n_act_tu;
      div.traj_cosim += b.traj_cosim;
      div.traj_distinct += b.traj_distinct;
      div.act_cosim_tr += b.act_cosim_tr;
      div.act_cosim_tu += b.act_cosim_tu;
    }
  }
  // Sum first, divide once: a constant per-example value then averages to itself exactly.
  const double n = static_cast<double>(episodes.size());
  for (double* v : {&div.n_act_tr, &div.n_act_tu, &div.traj_cosim, &div.traj_distinct, &div.act_cosim_tr, &div.act_cosim_tu})
    *v /= n;
  rep.min_msd = mean_std(mins);
  rep.mean_msd = mean_std(means);
  rep.scores = example_pr_f1(predicted, truth);
  std::vector<Tensor> ep_truth;
  for (const auto& e : episodes) ep_truth.push_back(e.future_actions);
  rep.topk = topk_recall(mean_probs, ep_truth, std::min(10, d.action_classes));
  rep.diversity = div;
  return rep;
}

}  // namespace hybridcast
