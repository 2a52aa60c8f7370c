#pragma once

#include <vector>

#include "hybridcast/model.hpp"

namespace hybridcast {

/// Position windows feeding the action policy: for action step k the P most
/// recent positions ending at the aligned future index, normalised and
/// flattened. `future` holds T_x blocks of (N*k) x 3 rows (episode-major);
/// the result has (N*k*T_a) rows ordered (episode, sample, step).
Tensor action_windows(const Model& model, const Batch& batch, const std::vector<Tensor>& future, Eigen::Index k);

/// Logits v for every (row, step): (R * T_a) x 2C. `features` is R x (frames*F).
/// `windows` is ignored (may be empty) when the model has no trajectory encoder.
ad::Var action_logits(const Model& model, const Tensor& features, const Tensor& windows);

/// Pairwise probabilities u from logits (each pair sums to one).
Tensor pair_probabilities(const Tensor& logits);

/// Relaxed Gumbel-Softmax sample a = softmax((log u + g) / tau) per pair.
ad::Var relaxed_sample(const ad::Var& log_u, const Tensor& gumbel, double tau);
Tensor relaxed_sample(const Tensor& u, const Tensor& gumbel, double tau);

/// Hardened sample: 1 where the "occurs" entry wins the pair (R x C).
Tensor harden(const Tensor& a);

/// Log of the two-category Gumbel-Softmax density at a = (a1, a2) for probabilities u.
double gumbel_softmax_log_density(double a1, double a2, double u1, double u2, double tau);

/// Elementwise log density for pair tensors: log_u is R x 2C, log_a is R x 2C (constant).
ad::Var gumbel_log_density_pairs(const ad::Var& log_u, const Tensor& log_a, double tau);

/// Relaxes binary labels (R x C) to pairs (1-y, y) clipped to (eps, 1-eps); returns their logs.
Tensor relaxed_label_logs(const Tensor& labels, double label_eps);

/// -sum log density over (step, class), averaged over `episodes`.
ad::Var forward_ce_action(const ad::Var& logits, const Tensor& labels, double tau, double label_eps, double episodes);

/// Temporal prior: max over occurrences t0 of exp(-(t - t0)^2 / (2 s^2)), floored.
Tensor action_prior(const Tensor& actions, double scale, double floor);

/// Soft Bernoulli cross entropy of relaxed samples against the prior, averaged over `episodes`.
ad::Var reverse_ce_action(const ad::Var& relaxed, const Tensor& prior, double floor, double episodes);

/// Step one-hot block (rows * T_a) x T_a, rows ordered (row, step).
Tensor step_one_hot(Eigen::Index rows, int steps);

}  // namespace hybridcast
