#include "hybridcast/model.hpp"

#include <cmath>

namespace hybridcast {

std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::flow:
      return "flow";
    case ModelKind::dce:
      return "dce";
    case ModelKind::mrmc:
      return "mrmc";
  }
  return "flow";
}

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "flow") return ModelKind::flow;
  if (s == "dce") return ModelKind::dce;
  if (s == "mrmc") return ModelKind::mrmc;
  throw ContractViolation("unknown model kind '" + s + "' (expected flow, dce or mrmc)");
}

void ModelConfig::validate() const {
  require(gru_hidden > 0 && traj_mlp > 0 && feat_hidden > 0 && act_traj_mlp > 0 && joint_mlp > 0,
          "ModelConfig: layer sizes must be positive");
  require(softclip_limit > 0.0, "ModelConfig: softclip_limit must be positive");
  require(min_precision > 0.0, "ModelConfig: min_precision must be positive");
  require(dims.past_steps >= 1 && dims.future_steps >= 1 && dims.action_steps >= 1 && dims.feature_frames >= 1 &&
              dims.feature_dim >= 1 && dims.action_classes >= 1,
          "ModelConfig: invalid dimensions");
  require(dims.future_steps % dims.action_steps == 0, "ModelConfig: future_steps must be a multiple of action_steps");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"kind", to_string(kind)},
          {"gru_hidden", gru_hidden},
          {"traj_mlp", traj_mlp},
          {"feat_hidden", feat_hidden},
          {"act_traj_mlp", act_traj_mlp},
          {"joint_mlp", joint_mlp},
          {"softclip_limit", softclip_limit},
          {"min_precision", min_precision},
          {"action_uses_trajectory", action_uses_trajectory},
          {"dims",
           {{"past_steps", dims.past_steps},
            {"future_steps", dims.future_steps},
            {"action_steps", dims.action_steps},
            {"feature_frames", dims.feature_frames},
            {"feature_dim", dims.feature_dim},
            {"action_classes", dims.action_classes}}}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  if (j.contains("kind")) c.kind = model_kind_from_string(j["kind"].get<std::string>());
  c.gru_hidden = j.value("gru_hidden", c.gru_hidden);
  c.traj_mlp = j.value("traj_mlp", c.traj_mlp);
  c.feat_hidden = j.value("feat_hidden", c.feat_hidden);
  c.act_traj_mlp = j.value("act_traj_mlp", c.act_traj_mlp);
  c.joint_mlp = j.value("joint_mlp", c.joint_mlp);
  c.softclip_limit = j.value("softclip_limit", c.softclip_limit);
  c.min_precision = j.value("min_precision", c.min_precision);
  c.action_uses_trajectory = j.value("action_uses_trajectory", c.action_uses_trajectory);
  if (j.contains("dims")) {
    const auto& d = j["dims"];
    c.dims.past_steps = d.value("past_steps", c.dims.past_steps);
    c.dims.future_steps = d.value("future_steps", c.dims.future_steps);
    c.dims.action_steps = d.value("action_steps", c.dims.action_steps);
    c.dims.feature_frames = d.value("feature_frames", c.dims.feature_frames);
    c.dims.feature_dim = d.value("feature_dim", c.dims.feature_dim);
    c.dims.action_classes = d.value("action_classes", c.dims.action_classes);
  }
  return c;
}

std::unique_ptr<Model> Model::create(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::unique_ptr<Model> m(new Model());
  m->config_ = config;
  const EpisodeDims& d = config.dims;
  Rng rng(seed);
  using nn::Activation;
  const Eigen::Index feat_in = d.feature_frames * d.feature_dim;

  m->traj_feat = nn::Mlp::create(m->store_, "traj.feat", {feat_in, config.feat_hidden}, {Activation::relu}, rng);
  m->gru = nn::GruCell::create(m->store_, "traj.gru", 6, config.gru_hidden, rng);
  const Eigen::Index head_out = config.kind == ModelKind::dce ? 12 * d.future_steps : 12;
  m->traj_head = nn::Mlp::create(m->store_, "traj.head", {config.gru_hidden + config.feat_hidden, config.traj_mlp, head_out},
                                 {Activation::relu, Activation::identity}, rng);

  m->act_feat = nn::Mlp::create(m->store_, "act.feat", {feat_in, config.feat_hidden}, {Activation::relu}, rng);
  Eigen::Index joint_in = config.feat_hidden + d.action_steps;
  if (config.action_uses_trajectory) {
    m->act_traj = nn::Mlp::create(m->store_, "act.traj", {3 * d.past_steps, config.act_traj_mlp, config.act_traj_mlp},
                                  {Activation::relu, Activation::relu}, rng);
    joint_in += config.act_traj_mlp;
  }
  m->act_joint = nn::Mlp::create(m->store_, "act.joint", {joint_in, config.joint_mlp, 2 * d.action_classes},
                                 {Activation::relu, Activation::identity}, rng);

  m->store_.add("norm.pos_mean", Tensor::Zero(1, 3), true);
  m->store_.add("norm.pos_scale", Tensor::Ones(1, 3), true);
  m->store_.add("norm.step_scale", Tensor::Ones(1, 1), true);
  return m;
}

void Model::fit_normalization(const std::vector<Episode>& episodes) {
  require(!episodes.empty(), "fit_normalization: no episodes");
  Eigen::Vector3d sum = Eigen::Vector3d::Zero(), sq = Eigen::Vector3d::Zero();
  double step_sq = 0.0;
  long n = 0, steps = 0;
  for (const auto& e : episodes) {
    Vec3 prev = e.past_positions.row(0).transpose();
    auto visit = [&](const Vec3& p, bool is_step) {
      sum += p;
      sq += p.cwiseProduct(p);
      ++n;
      if (is_step) {
        step_sq += (p - prev).squaredNorm() / 3.0;
        ++steps;
      }
      prev = p;
    };
    for (Eigen::Index i = 0; i < e.past_positions.rows(); ++i) visit(e.past_positions.row(i).transpose(), i > 0);
    for (Eigen::Index i = 0; i < e.future_positions.rows(); ++i) visit(e.future_positions.row(i).transpose(), true);
  }
  const Vec3 mean = sum / static_cast<double>(n);
  const Vec3 var = sq / static_cast<double>(n) - mean.cwiseProduct(mean);
  const double step = std::max(std::sqrt(step_sq / static_cast<double>(std::max(steps, 1L))), 1e-3);

  store_.get("norm.pos_mean").node()->value = mean.transpose();
  store_.get("norm.pos_scale").node()->value = var.cwiseMax(1e-6).cwiseSqrt().transpose();
  store_.get("norm.step_scale").node()->value(0, 0) = step;

  // Start sigma near the per-step spread (sigma diagonal = exp(2 S_ii)).
  Tensor& bias = traj_head.layers.back().bias.node()->value;
  const int blocks = config_.kind == ModelKind::dce ? config_.dims.future_steps : 1;
  for (int t = 0; t < blocks; ++t) {
    const double spread = config_.kind == ModelKind::dce ? step * std::sqrt(t + 1.0) : step;
    for (int i = 0; i < 3; ++i) bias(0, 12 * t + 3 + 4 * i) = 0.5 * std::log(spread);
  }
}

void Model::zero_weights() {
  for (const auto& name : store_.names()) {
    if (name.rfind("norm.", 0) == 0) continue;
    store_.get(name).node()->value.setZero();
  }
}

Batch make_batch(const std::vector<const Episode*>& episodes, const EpisodeDims& d) {
  require(!episodes.empty(), "make_batch: empty batch");
  const int n = static_cast<int>(episodes.size());
  Batch b;
  b.size = n;
  b.episodes = episodes;
  b.past.resize(n, 3 * d.past_steps);
  b.present.resize(n, 3);
  b.features.resize(n, d.feature_frames * d.feature_dim);
  b.future.assign(static_cast<std::size_t>(d.future_steps), Tensor(n, 3));
  b.actions.resize(static_cast<Eigen::Index>(n) * d.action_steps, d.action_classes);
  for (int r = 0; r < n; ++r) {
    const Episode& e = *episodes[static_cast<std::size_t>(r)];
    e.validate(d);
    for (int i = 0; i < d.past_steps; ++i) b.past.block(r, 3 * i, 1, 3) = e.past_positions.row(i);
    b.present.row(r) = e.past_positions.row(d.past_steps - 1);
    for (int f = 0; f < d.feature_frames; ++f)
      b.features.block(r, f * d.feature_dim, 1, d.feature_dim) = e.past_features.row(f);
    for (int t = 0; t < d.future_steps; ++t) b.future[static_cast<std::size_t>(t)].row(r) = e.future_positions.row(t);
    b.actions.middleRows(static_cast<Eigen::Index>(r) * d.action_steps, d.action_steps) = e.future_actions;
  }
  return b;
}

Batch make_batch(const std::vector<Episode>& episodes, const EpisodeDims& dims) {
  std::vector<const Episode*> ptrs;
  ptrs.reserve(episodes.size());
  for (const auto& e : episodes) ptrs.push_back(&e);
  return make_batch(ptrs, dims);
}

Tensor repeat_matrix(Eigen::Index rows, Eigen::Index k) {
  Tensor r = Tensor::Zero(rows * k, rows);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < k; ++j) r(i * k + j, i) = 1.0;
  return r;
}

ad::Var repeat_rows(const ad::Var& v, Eigen::Index k) {
  if (k == 1) return v;
  return ad::matmul(ad::constant(repeat_matrix(v.rows(), k)), v);
}

Tensor repeat_rows(const Tensor& t, Eigen::Index k) {
  if (k == 1) return t;
  return repeat_matrix(t.rows(), k) * t;
}

}  // namespace hybridcast
