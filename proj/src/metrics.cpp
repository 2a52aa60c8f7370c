#include "hybridcast/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace hybridcast {

MsdResult min_mean_msd(const std::vector<Tensor>& samples, const Tensor& truth) {
  require(!samples.empty(), "min_mean_msd: need at least one sample");
  MsdResult r;
  r.min_msd = std::numeric_limits<double>::infinity();
  for (const auto& s : samples) {
    require(s.rows() == truth.rows() && s.cols() == truth.cols(),
            "min_mean_msd: sample shape " + shape_string(s) + " vs truth " + shape_string(truth));
    const double msd = (s - truth).squaredNorm() / static_cast<double>(truth.size());
    r.min_msd = std::min(r.min_msd, msd);
    r.mean_msd += msd;
  }
  r.mean_msd /= static_cast<double>(samples.size());
  return r;
}

double f1_score(double precision, double recall) {
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

PrF1 step_precision_recall(const Eigen::Ref<const RowVector>& predicted, const Eigen::Ref<const RowVector>& truth) {
  require(predicted.size() == truth.size(), "step_precision_recall: size mismatch");
  double tp = 0, fp = 0, fn = 0;
  for (Eigen::Index c = 0; c < predicted.size(); ++c) {
    const bool p = predicted[c] > 0.5, t = truth[c] > 0.5;
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
  }
  const bool all_zero = tp == 0 && fp == 0 && fn == 0;
  PrF1 out;
  out.precision = tp + fp > 0 ? tp / (tp + fp) : (all_zero ? 1.0 : 0.0);
  out.recall = tp + fn > 0 ? tp / (tp + fn) : (all_zero ? 1.0 : 0.0);
  out.f1 = f1_score(out.precision, out.recall);
  return out;
}

PrF1 example_pr_f1(const std::vector<Tensor>& predicted, const std::vector<Tensor>& truth) {
  require(!predicted.empty() && predicted.size() == truth.size(), "example_pr_f1: need matching non-empty lists");
  double p = 0.0, r = 0.0;
  long steps = 0;
  for (std::size_t n = 0; n < predicted.size(); ++n) {
    require(predicted[n].rows() == truth[n].rows() && predicted[n].cols() == truth[n].cols(),
            "example_pr_f1: shape mismatch in example " + std::to_string(n));
    for (Eigen::Index t = 0; t < truth[n].rows(); ++t) {
      const PrF1 s = step_precision_recall(predicted[n].row(t), truth[n].row(t));
      p += s.precision;
      r += s.recall;
      ++steps;
    }
  }
  PrF1 out;
  out.precision = p / static_cast<double>(steps);
  out.recall = r / static_cast<double>(steps);
  out.f1 = f1_score(out.precision, out.recall);
  return out;
}

std::vector<double> topk_recall(const std::vector<Tensor>& probabilities, const std::vector<Tensor>& truth, int k_max) {
  require(!probabilities.empty() && probabilities.size() == truth.size(), "topk_recall: need matching non-empty lists");
  const Eigen::Index classes = truth.front().cols();
  require(k_max >= 1 && k_max <= classes, "topk_recall: K must lie in [1, C_a]");
  std::vector<double> out(static_cast<std::size_t>(k_max), 0.0);
  long steps = 0;
  std::vector<int> order(static_cast<std::size_t>(classes));
  for (std::size_t n = 0; n < truth.size(); ++n) {
    for (Eigen::Index t = 0; t < truth[n].rows(); ++t) {
      std::iota(order.begin(), order.end(), 0);
      const auto prob = probabilities[n].row(t);
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return prob[a] > prob[b]; });
      RowVector pred = RowVector::Zero(classes);
      for (int k = 1; k <= k_max; ++k) {
        pred[order[static_cast<std::size_t>(k - 1)]] = 1.0;
        out[static_cast<std::size_t>(k - 1)] += step_precision_recall(pred, truth[n].row(t)).recall;
      }
      ++steps;
    }
  }
  for (double& v : out) v /= static_cast<double>(steps);
  return out;
}

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  require(a.size() == b.size(), "cosine_similarity: size mismatch");
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 && nb == 0.0) return 1.0;
  if (na == 0.0 || nb == 0.0) return 0.0;
  if (a == b) return 1.0;
  // Rounding can push parallel vectors slightly past 1.
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

double mean_pairwise_cosine(const std::vector<Eigen::VectorXd>& v) {
  require(v.size() >= 2, "mean_pairwise_cosine: need at least two samples");
  double total = 0.0;
  long pairs = 0;
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t j = i + 1; j < v.size(); ++j) {
      total += cosine_similarity(v[i], v[j]);
      ++pairs;
    }
  return total / static_cast<double>(pairs);
}

int distinct_count(const std::vector<Eigen::VectorXd>& v, double threshold) {
  const std::size_t n = v.size();
  require(n >= 1, "distinct_count: no samples");
  if (n <= 16) {
    std::vector<std::uint32_t> compatible(n, 0);  // bit j set when i and j are dissimilar
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j && cosine_similarity(v[i], v[j]) < threshold) compatible[i] |= 1u << j;
    int best = 1;
    for (std::uint32_t mask = 1; mask < (1u << n); ++mask) {
      const int size = __builtin_popcount(mask);
      if (size <= best) continue;
      bool ok = true;
      for (std::size_t i = 0; i < n && ok; ++i)
        if ((mask >> i) & 1u) ok = (mask & ~(1u << i) & ~compatible[i]) == 0;
      if (ok) best = size;
    }
    return best;
  }
  // Large sample sets: greedy in index order.
  std::vector<std::size_t> chosen;
  for (std::size_t i = 0; i < n; ++i) {
    bool ok = true;
    for (std::size_t j : chosen) ok = ok && cosine_similarity(v[i], v[j]) < threshold;
    if (ok) chosen.push_back(i);
  }
  return static_cast<int>(chosen.size());
}

DiversityBlock diversity(const std::vector<Tensor>& trajectories, const Eigen::Vector3d& origin,
                         const std::vector<Tensor>& actions, double threshold) {
  require(trajectories.size() >= 2 && actions.size() == trajectories.size(), "diversity: need at least two samples");
  std::vector<Eigen::VectorXd> disp, act_tr, act_tu;
  for (const auto& x : trajectories) {
    Tensor d = x.rowwise() - origin.transpose();
    disp.push_back(Eigen::Map<const Eigen::VectorXd>(d.data(), d.size()));
  }
  for (const auto& a : actions) {
    act_tr.push_back(Eigen::Map<const Eigen::VectorXd>(a.data(), a.size()));
    act_tu.push_back((a.colwise().maxCoeff().array() > 0.5).cast<double>().matrix().transpose());
  }
  DiversityBlock b;
  b.traj_cosim = mean_pairwise_cosine(disp);
  b.traj_distinct = distinct_count(disp, threshold);
  b.act_cosim_tr = mean_pairwise_cosine(act_tr);
  b.act_cosim_tu = mean_pairwise_cosine(act_tu);
  double tr = 0.0, tu = 0.0;
  long pairs = 0;
  for (std::size_t i = 0; i < actions.size(); ++i)
    for (std::size_t j = i + 1; j < actions.size(); ++j) {
      tr += (actions[i].array() > 0.5 && actions[j].array() > 0.5).colwise().any().count();
      tu += act_tu[i].dot(act_tu[j]);
      ++pairs;
    }
  b.n_act_tr = tr / static_cast<double>(pairs);
  b.n_act_tu = tu / static_cast<double>(pairs);
  return b;
}

MeanStd mean_std(const std::vector<double>& values) {
  MeanStd m;
  if (values.empty()) return m;
  m.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - m.mean) * (v - m.mean);
  m.std = std::sqrt(sq / static_cast<double>(values.size()));
  return m;
}

nlohmann::json MetricsReport::to_json() const {
  return {{"label", label},
          {"examples", examples},
          {"samples", samples},
          {"H_p_qpi", h_p_qpi},
          {"H_p_qkappa", h_p_qkappa},
          {"minMSD", {{"mean", min_msd.mean}, {"std", min_msd.std}}},
          {"meanMSD", {{"mean", mean_msd.mean}, {"std", mean_msd.std}}},
          {"precision", scores.precision},
          {"recall", scores.recall},
          {"f1", scores.f1},
          {"topk_recall", topk},
          {"diversity",
           {{"n_act_tr", diversity.n_act_tr},
            {"n_act_tu", diversity.n_act_tu},
            {"traj_cosim", diversity.traj_cosim},
            {"traj_distinct", diversity.traj_distinct},
            {"act_cosim_tr", diversity.act_cosim_tr},
            {"act_cosim_tu", diversity.act_cosim_tu}}}};
}

std::string MetricsReport::csv_header() {
  return "label,examples,samples,H_p_qpi,H_p_qkappa,minMSD,minMSD_std,meanMSD,meanMSD_std,precision,recall,f1,"
         "top1_recall,top5_recall,top10_recall,n_act_tr,n_act_tu,traj_cosim,traj_distinct,act_cosim_tr,act_cosim_tu";
}

std::string MetricsReport::csv_row() const {
  auto topk_at = [this](std::size_t k) { return k <= topk.size() ? topk[k - 1] : std::nan(""); };
  std::ostringstream os;
  os.precision(10);
  os << label << ',' << examples << ',' << samples << ',' << h_p_qpi << ',' << h_p_qkappa << ',' << min_msd.mean << ','
     << min_msd.std << ',' << mean_msd.mean << ',' << mean_msd.std << ',' << scores.precision << ',' << scores.recall
     << ',' << scores.f1 << ',' << topk_at(1) << ',' << topk_at(5) << ',' << topk_at(10) << ',' << diversity.n_act_tr
     << ',' << diversity.n_act_tu << ',' << diversity.traj_cosim << ',' << diversity.traj_distinct << ','
     << diversity.act_cosim_tr << ',' << diversity.act_cosim_tu;
  return os.str();
}

}  // namespace hybridcast
