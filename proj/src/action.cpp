#include "hybridcast/action.hpp"

#include <cmath>

namespace hybridcast {

namespace {

// (2C x C) matrix summing each pair of columns.
Tensor pair_sum_matrix(Eigen::Index classes) {
  Tensor m = Tensor::Zero(2 * classes, classes);
  for (Eigen::Index c = 0; c < classes; ++c) {
    m(2 * c, c) = 1.0;
    m(2 * c + 1, c) = 1.0;
  }
  return m;
}

}  // namespace

Tensor step_one_hot(Eigen::Index rows, int steps) {
  Tensor t = Tensor::Zero(rows * steps, steps);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (int k = 0; k < steps; ++k) t(r * steps + k, k) = 1.0;
  return t;
}

Tensor action_windows(const Model& model, const Batch& batch, const std::vector<Tensor>& future, Eigen::Index k) {
  const EpisodeDims& d = model.dims();
  require(static_cast<int>(future.size()) == d.future_steps, "action_windows: expected T_x future blocks");
  const Eigen::Index rows = static_cast<Eigen::Index>(batch.size) * k;
  const Tensor past = repeat_rows(batch.past, k);
  const Tensor mean = model.pos_mean();
  const Tensor inv = model.pos_inv_scale();
  Tensor out(rows * d.action_steps, 3 * d.past_steps);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (int step = 1; step <= d.action_steps; ++step) {
      const int end = d.aligned_index(step);  // 1-based future index
      for (int w = 0; w < d.past_steps; ++w) {
        // Position index in the concatenated (past, future) sequence, with the present at P - 1.
        const int idx = end + w;
        Eigen::Matrix<double, 1, 3> p;
        if (idx < d.past_steps)
          p = past.block(r, 3 * idx, 1, 3);
        else
          p = future[static_cast<std::size_t>(idx - d.past_steps)].row(r);
        out.block(r * d.action_steps + step - 1, 3 * w, 1, 3) = (p - mean).cwiseProduct(inv);
      }
    }
  }
  return out;
}

ad::Var action_logits(const Model& model, const Tensor& features, const Tensor& windows) {
  const EpisodeDims& d = model.dims();
  const Eigen::Index rows = features.rows();
  const ad::Var feat = repeat_rows(model.act_feat(ad::constant(features)), d.action_steps);
  std::vector<ad::Var> parts{feat};
  if (model.config().action_uses_trajectory) {
    require(windows.rows() == rows * d.action_steps && windows.cols() == 3 * d.past_steps,
            "action_logits: window tensor has shape " + shape_string(windows));
    parts.push_back(model.act_traj(ad::constant(windows)));
  }
  parts.push_back(ad::constant(step_one_hot(rows, d.action_steps)));
  return model.act_joint(ad::concat_cols(parts));
}

Tensor pair_probabilities(const Tensor& logits) {
  require(logits.cols() % 2 == 0, "pair_probabilities: column count must be even");
  Tensor u(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r)
    for (Eigen::Index c = 0; c < logits.cols() / 2; ++c) {
      const double d = logits(r, 2 * c + 1) - logits(r, 2 * c);
      const double p2 = 1.0 / (1.0 + std::exp(-d));
      u(r, 2 * c) = 1.0 - p2;
      u(r, 2 * c + 1) = p2;
    }
  return u;
}

ad::Var relaxed_sample(const ad::Var& log_u, const Tensor& gumbel, double tau) {
  require(tau > 0.0, "relaxed_sample: temperature must be positive");
  require(gumbel.rows() == log_u.rows() && gumbel.cols() == log_u.cols(), "relaxed_sample: noise shape mismatch");
  return ad::exp(ad::log_softmax_pairs(ad::scale(log_u + ad::constant(gumbel), 1.0 / tau)));
}

Tensor relaxed_sample(const Tensor& u, const Tensor& gumbel, double tau) {
  require((u.array() > 0.0).all(), "relaxed_sample: probabilities must be positive");
  return relaxed_sample(ad::constant(u.array().log().matrix()), gumbel, tau).value();
}

Tensor harden(const Tensor& a) {
  Tensor out(a.rows(), a.cols() / 2);
  for (Eigen::Index r = 0; r < a.rows(); ++r)
    for (Eigen::Index c = 0; c < out.cols(); ++c) out(r, c) = a(r, 2 * c + 1) > a(r, 2 * c) ? 1.0 : 0.0;
  return out;
}

double gumbel_softmax_log_density(double a1, double a2, double u1, double u2, double tau) {
  require(tau > 0.0, "gumbel_softmax_log_density: temperature must be positive");
  require(a1 > 0.0 && a2 > 0.0 && a1 < 1.0 && a2 < 1.0,
          "gumbel_softmax_log_density: sample on the simplex boundary; relax labels first");
  require(u1 > 0.0 && u2 > 0.0, "gumbel_softmax_log_density: probabilities must be positive");
  const double l1 = std::log(u1) - tau * std::log(a1);
  const double l2 = std::log(u2) - tau * std::log(a2);
  const double m = std::max(l1, l2);
  const double lse = m + std::log(std::exp(l1 - m) + std::exp(l2 - m));
  return std::log(tau) - 2.0 * lse + std::log(u1) + std::log(u2) - (tau + 1.0) * (std::log(a1) + std::log(a2));
}

ad::Var gumbel_log_density_pairs(const ad::Var& log_u, const Tensor& log_a, double tau) {
  require(tau > 0.0, "gumbel_log_density_pairs: temperature must be positive");
  require(log_a.rows() == log_u.rows() && log_a.cols() == log_u.cols(), "gumbel_log_density_pairs: shape mismatch");
  require((log_a.array() < 0.0).all(), "gumbel_log_density_pairs: sample on the simplex boundary; relax labels first");
  const Eigen::Index classes = log_u.cols() / 2;
  const ad::Var lse = ad::logsumexp_pairs(log_u - ad::constant(tau * log_a));
  const ad::Var pair_terms =
      ad::matmul(log_u - ad::constant((tau + 1.0) * log_a), ad::constant(pair_sum_matrix(classes)));
  return ad::add_scalar(pair_terms - ad::scale(lse, 2.0), std::log(tau));
}

Tensor relaxed_label_logs(const Tensor& labels, double label_eps) {
  require(label_eps > 0.0 && label_eps < 0.5, "relaxed_label_logs: label_eps must lie in (0, 0.5)");
  Tensor out(labels.rows(), 2 * labels.cols());
  for (Eigen::Index r = 0; r < labels.rows(); ++r)
    for (Eigen::Index c = 0; c < labels.cols(); ++c) {
      const double y = labels(r, c) > 0.5 ? 1.0 - label_eps : label_eps;
      out(r, 2 * c) = std::log(1.0 - y);
      out(r, 2 * c + 1) = std::log(y);
    }
  return out;
}

ad::Var forward_ce_action(const ad::Var& logits, const Tensor& labels, double tau, double label_eps, double episodes) {
  require(labels.rows() == logits.rows() && 2 * labels.cols() == logits.cols(), "forward_ce_action: label shape mismatch");
  require(episodes > 0.0, "forward_ce_action: episode count must be positive");
  const ad::Var log_u = ad::log_softmax_pairs(logits);
  const ad::Var dens = gumbel_log_density_pairs(log_u, relaxed_label_logs(labels, label_eps), tau);
  return ad::scale(ad::sum(dens), -1.0 / episodes);
}

Tensor action_prior(const Tensor& actions, double scale, double floor) {
  require(scale > 0.0, "action_prior: scale must be positive");
  require(floor > 0.0 && floor < 1.0, "action_prior: floor must lie in (0, 1)");
  Tensor prior = Tensor::Constant(actions.rows(), actions.cols(), floor);
  for (Eigen::Index c = 0; c < actions.cols(); ++c)
    for (Eigen::Index t0 = 0; t0 < actions.rows(); ++t0) {
      if (actions(t0, c) <= 0.5) continue;
      for (Eigen::Index t = 0; t < actions.rows(); ++t) {
        const double dt = static_cast<double>(t - t0);
        prior(t, c) = std::max(prior(t, c), std::exp(-dt * dt / (2.0 * scale * scale)));
      }
    }
  return prior;
}

ad::Var reverse_ce_action(const ad::Var& relaxed, const Tensor& prior, double floor, double episodes) {
  require(relaxed.rows() == prior.rows() && relaxed.cols() == 2 * prior.cols(), "reverse_ce_action: prior shape mismatch");
  require(episodes > 0.0, "reverse_ce_action: episode count must be positive");
  Tensor weights(prior.rows(), 2 * prior.cols());
  for (Eigen::Index r = 0; r < prior.rows(); ++r)
    for (Eigen::Index c = 0; c < prior.cols(); ++c) {
      weights(r, 2 * c) = std::log(1.0 - prior(r, c) + floor);
      weights(r, 2 * c + 1) = std::log(prior(r, c));
    }
  return ad::scale(ad::sum(relaxed * ad::constant(weights)), -1.0 / episodes);
}

}  // namespace hybridcast
