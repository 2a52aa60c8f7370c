#include <doctest.h>

#include <cmath>

#include "hybridcast/metrics.hpp"

using namespace hybridcast;

namespace {

RowVector row(std::initializer_list<double> v) {
  RowVector r(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) r[i++] = x;
  return r;
}

Eigen::VectorXd vec(std::initializer_list<double> v) { return row(v).transpose(); }

}  // namespace

TEST_CASE("zero denominators follow the empty-step convention") {
  const PrF1 empty = step_precision_recall(row({0, 0, 0}), row({0, 0, 0}));
  CHECK(empty.precision == 1.0);
  CHECK(empty.recall == 1.0);
  const PrF1 missed = step_precision_recall(row({0, 0, 0}), row({0, 1, 0}));
  CHECK(missed.precision == 0.0);
  CHECK(missed.recall == 0.0);
  const PrF1 spurious = step_precision_recall(row({1, 0, 0}), row({0, 0, 0}));
  CHECK(spurious.precision == 0.0);
  CHECK(spurious.recall == 0.0);
  const PrF1 partial = step_precision_recall(row({1, 1, 0, 1}), row({1, 0, 1, 1}));
  CHECK(partial.precision == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(partial.recall == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("example-based scores average steps, then F1 combines the averages") {
  Tensor p(2, 3), t(2, 3);
  p << 1, 0, 0,  //
      0, 0, 0;
  t << 1, 1, 0,  //
      0, 0, 0;
  const PrF1 s = example_pr_f1({p}, {t});
  CHECK(s.precision == doctest::Approx((1.0 + 1.0) / 2).epsilon(1e-15));
  CHECK(s.recall == doctest::Approx((0.5 + 1.0) / 2).epsilon(1e-15));
  CHECK(s.f1 == doctest::Approx(2 * 1.0 * 0.75 / 1.75).epsilon(1e-15));
  CHECK(f1_score(0.0, 0.0) == 0.0);
  CHECK(f1_score(1.0, 1.0) == 1.0);
  CHECK_THROWS_AS(example_pr_f1({p}, {Tensor(Tensor::Zero(3, 3))}), ContractViolation);
}

TEST_CASE("minMSD and meanMSD on hand-computed samples") {
  Tensor truth = Tensor::Zero(4, 3);
  Tensor a = truth, b = truth, c = truth;
  a(0, 0) = 2.0;  // one squared error of 4 among 12 entries
  b.array() += 1.0;
  c(3, 2) = -3.0;
  const MsdResult r = min_mean_msd({a, b, c}, truth);
  CHECK(r.min_msd == doctest::Approx(4.0 / 12).epsilon(1e-15));
  CHECK(r.mean_msd == doctest::Approx((4.0 / 12 + 1.0 + 9.0 / 12) / 3).epsilon(1e-15));
  CHECK(min_mean_msd({truth}, truth).min_msd == 0.0);
}

TEST_CASE("top-K recall predicts the K most probable classes and breaks ties by index") {
  Tensor prob(1, 4), truth(1, 4);
  prob << 0.1, 0.5, 0.5, 0.2;
  truth << 0, 0, 1, 1;
  const auto r = topk_recall({prob}, {truth}, 4);
  CHECK(r[0] == 0.0);  // class 1 wins the tie
  CHECK(r[1] == 0.5);
  CHECK(r[2] == 1.0);
  CHECK(r[3] == 1.0);
  CHECK_THROWS_AS(topk_recall({prob}, {truth}, 5), ContractViolation);
}

TEST_CASE("cosine conventions, pairwise mean and distinct count") {
  CHECK(cosine_similarity(vec({0, 0}), vec({0, 0})) == 1.0);
  CHECK(cosine_similarity(vec({0, 0}), vec({1, 0})) == 0.0);
  CHECK(cosine_similarity(vec({1, 2}), vec({2, 4})) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine_similarity(vec({0.1, 0.7, 0.3}), vec({0.1, 0.7, 0.3})) == 1.0);
  CHECK(cosine_similarity(vec({1, 0}), vec({-3, 0})) == -1.0);
  CHECK(mean_pairwise_cosine({vec({1, 0}), vec({0, 1}), vec({1, 0})}) == doctest::Approx(1.0 / 3.0));

  // Two near-parallel pairs plus an orthogonal vector: the best dissimilar subset has 3 members.
  const std::vector<Eigen::VectorXd> v = {vec({1, 0, 0}), vec({1, 0.01, 0}), vec({0, 1, 0}), vec({0, 1, 0.01}),
                                          vec({0, 0, 1})};
  CHECK(distinct_count(v, 0.3) == 3);
  CHECK(distinct_count({vec({1, 0})}, 0.3) == 1);
  std::vector<Eigen::VectorXd> many(40, vec({1, 1}));
  many[7] = vec({1, -1});
  CHECK(distinct_count(many, 0.3) == 2);  // greedy path for large sets
}

TEST_CASE("diversity block of identical and disjoint samples") {
  const Eigen::Vector3d origin(1, 1, 0);
  Tensor x = Tensor::Zero(3, 3);
  x.col(0) << 1.5, 2.0, 2.5;
  x.col(1).setConstant(1.0);
  Tensor act = Tensor::Zero(2, 3);
  act(0, 1) = 1;
  const DiversityBlock same = diversity({x, x, x}, origin, {act, act, act});
  CHECK(same.traj_cosim == 1.0);
  CHECK(same.traj_distinct == 1.0);
  CHECK(same.act_cosim_tr == 1.0);
  CHECK(same.n_act_tr == 1.0);
  CHECK(same.n_act_tu == 1.0);

  Tensor act2 = Tensor::Zero(2, 3);
  act2(1, 1) = 1;  // same class, other step
  Tensor y = x;
  y.col(0).setConstant(1.0);
  y.col(1) << 1.5, 2.0, 2.5;
  const DiversityBlock mixed = diversity({x, y}, origin, {act, act2});
  CHECK(mixed.traj_cosim == 0.0);
  CHECK(mixed.traj_distinct == 2.0);
  CHECK(mixed.act_cosim_tr == 0.0);
  CHECK(mixed.act_cosim_tu == 1.0);
  CHECK(mixed.n_act_tr == 0.0);
  CHECK(mixed.n_act_tu == 1.0);
}

TEST_CASE("mean and population standard deviation") {
  const MeanStd m = mean_std({1.0, 2.0, 3.0, 4.0});
  CHECK(m.mean == 2.5);
  CHECK(m.std == doctest::Approx(std::sqrt(1.25)).epsilon(1e-15));
  CHECK(mean_std({}).mean == 0.0);
}

TEST_CASE("report serialisation carries every table column") {
  MetricsReport r;
  r.label = "x";
  r.topk = {0.1, 0.2};
  const auto j = r.to_json();
  for (const char* key : {"H_p_qpi", "H_p_qkappa", "minMSD", "meanMSD", "precision", "recall", "f1", "topk_recall",
                          "diversity"})
    CHECK(j.contains(key));
  const std::string header = MetricsReport::csv_header();
  const std::string line = r.csv_row();
  CHECK(std::count(header.begin(), header.end(), ',') == std::count(line.begin(), line.end(), ','));
}
