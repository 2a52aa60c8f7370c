#include "hybridcast/world.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace hybridcast {

namespace {

// The simulator runs at 10 ticks per second; positions are read every 2 ticks
// (5 fps), context features every 5 ticks (2 fps).
constexpr double kTick = 0.1;
constexpr int kPositionPeriod = 2;
constexpr int kFeaturePeriod = 5;

int action_period(const EpisodeDims& d) { return kPositionPeriod * d.future_steps / d.action_steps; }

Vec3 to_vec(const std::array<double, 3>& a) { return Vec3(a[0], a[1], a[2]); }

struct TickState {
  Vec3 observed;
  bool travelling = false;
  int station_class = -1;  // class fired while dwelling
  int origin = -1;         // station left when travelling
};

class Agent {
 public:
  Agent(const WorldConfig& cfg, Rng& rng) : cfg_(cfg), rng_(rng) {
    station_ = static_cast<int>(rng_.index(cfg_.stations.size()));
    center_ = to_vec(cfg_.stations[static_cast<std::size_t>(station_)]);
    begin_dwell();
  }

  TickState tick() {
    if (travelling_) {
      advance();
    } else if (!stuck() && --dwell_left_ <= 0) {
      depart();
      advance();
    }
    TickState s;
    s.observed = center_ + jitter();
    s.travelling = travelling_;
    s.station_class = travelling_ ? -1 : station_action();
    s.origin = travelling_ ? origin_ : -1;
    return s;
  }

 private:
  const WorldConfig& cfg_;
  Rng& rng_;
  Vec3 center_;
  int station_ = 0, target_ = 0, origin_ = -1;
  bool travelling_ = false;
  double speed_ = 0.0;
  long dwell_left_ = 0;
  long dwell_total_ = 0;
  std::vector<int> tour_;  // remaining stations of the current tour

  bool stuck() const { return cfg_.dwell_forever || cfg_.stations.size() < 2; }

  // A dwell is split into equal consecutive phases, one per station action.
  int station_action() const {
    const auto& acts = cfg_.station_actions[static_cast<std::size_t>(station_)];
    if (acts.empty()) return -1;
    const long elapsed = dwell_total_ - dwell_left_;
    return acts[static_cast<std::size_t>(elapsed * static_cast<long>(acts.size()) / dwell_total_)];
  }

  void begin_dwell() {
    travelling_ = false;
    const double d = rng_.uniform(cfg_.dwell_min, cfg_.dwell_max);
    dwell_left_ = std::max(1L, std::lround(d / kTick));
    dwell_total_ = dwell_left_;
  }

  void depart() {
    // Stations are visited in random tours (every station once per tour), so
    // each one receives the same share of visits over a long run.
    if (tour_.empty()) {
      tour_.resize(cfg_.stations.size());
      std::iota(tour_.begin(), tour_.end(), 0);
      std::shuffle(tour_.begin(), tour_.end(), rng_.engine());
      if (tour_.back() == station_) std::swap(tour_.back(), tour_.front());
    }
    target_ = tour_.back();
    tour_.pop_back();
    origin_ = station_;
    speed_ = rng_.uniform(cfg_.speed_min, cfg_.speed_max);
    travelling_ = true;
  }

  void advance() {
    const Vec3 goal = to_vec(cfg_.stations[static_cast<std::size_t>(target_)]);
    const Vec3 delta = goal - center_;
    const double step = speed_ * kTick;
    if (delta.norm() <= step) {
      center_ = goal;
      station_ = target_;
      begin_dwell();
    } else {
      center_ += delta * (step / delta.norm());
    }
  }

  // Per-coordinate truncated normal; keeps frame-to-frame jitter strictly bounded.
  Vec3 jitter() {
    Vec3 j;
    for (int i = 0; i < 3; ++i) j[i] = cfg_.noise * std::clamp(rng_.normal(), -1.2, 1.2);
    return j;
  }
};

RowVector features_at(const WorldConfig& cfg, const std::vector<TickState>& ticks, std::size_t t, Rng& rng) {
  const int f_dim = cfg.dims.feature_dim;
  RowVector f = RowVector::Zero(f_dim);
  const Vec3 p = ticks[t].observed;
  const double r2 = 2.0 * cfg.proximity_radius * cfg.proximity_radius;
  int col = 0;
  for (const auto& s : cfg.stations) f[col++] = std::exp(-(p - to_vec(s)).squaredNorm() / r2);
  const std::size_t back = t >= static_cast<std::size_t>(kFeaturePeriod) ? t - kFeaturePeriod : 0;
  const Vec3 v = (p - ticks[back].observed) / (kFeaturePeriod * kTick);
  Eigen::Vector2d heading(v[0], v[1]);
  heading /= cfg.speed_max;
  if (heading.norm() > 1.0) heading.normalize();
  f[col++] = heading[0];
  f[col++] = heading[1];
  for (int i = 0; i < f_dim; ++i) f[i] += cfg.feature_noise * rng.normal();
  return f;
}

std::string episode_name(int video, int index) {
  std::ostringstream os;
  os << "v" << video << "_e" << index;
  return os.str();
}

std::vector<Episode> simulate_video(const WorldConfig& cfg, int video, int count) {
  const EpisodeDims& d = cfg.dims;
  Rng rng = Rng(cfg.seed).substream(static_cast<std::uint64_t>(video));
  Agent agent(cfg, rng);

  const int burn = static_cast<int>(std::lround(cfg.burn_in / kTick));
  const int past_span = std::max(kPositionPeriod * (d.past_steps - 1), kFeaturePeriod * d.feature_frames);
  const int future_span = kPositionPeriod * d.future_steps;
  const int stride = past_span + future_span;
  const std::size_t total = static_cast<std::size_t>(burn + stride * count + 1);

  std::vector<TickState> ticks;
  ticks.reserve(total);
  for (std::size_t i = 0; i < total; ++i) ticks.push_back(agent.tick());

  std::vector<Episode> out;
  const int a_period = action_period(d);
  for (int e = 0; e < count; ++e) {
    const std::size_t now = static_cast<std::size_t>(burn + past_span + stride * e);
    Episode ep;
    ep.episode_id = episode_name(video, e);
    ep.video_id = video;
    ep.past_positions.resize(d.past_steps, 3);
    for (int i = 0; i < d.past_steps; ++i)
      ep.past_positions.row(i) = ticks[now - static_cast<std::size_t>(kPositionPeriod * (d.past_steps - 1 - i))].observed.transpose();
    ep.past_features.resize(d.feature_frames, d.feature_dim);
    for (int i = 0; i < d.feature_frames; ++i)
      ep.past_features.row(i) =
          features_at(cfg, ticks, now - static_cast<std::size_t>(kFeaturePeriod * (d.feature_frames - 1 - i)), rng);
    ep.future_positions.resize(d.future_steps, 3);
    for (int j = 1; j <= d.future_steps; ++j)
      ep.future_positions.row(j - 1) = ticks[now + static_cast<std::size_t>(kPositionPeriod * j)].observed.transpose();
    ep.future_actions = Tensor::Zero(d.action_steps, d.action_classes);
    for (int k = 1; k <= d.action_steps; ++k) {
      const TickState& s = ticks[now + static_cast<std::size_t>(a_period * k)];
      if (s.travelling) {
        if (cfg.walk_class >= 0) ep.future_actions(k - 1, cfg.walk_class) = 1.0;
        if (cfg.carry_class >= 0 && s.origin == cfg.carry_origin) ep.future_actions(k - 1, cfg.carry_class) = 1.0;
      } else if (s.station_class >= 0) {
        ep.future_actions(k - 1, s.station_class) = 1.0;
      }
    }
    out.push_back(std::move(ep));
  }
  return out;
}

std::vector<int> missing_classes(const std::vector<const Episode*>& eps, int classes) {
  std::vector<bool> seen(static_cast<std::size_t>(classes), false);
  for (const Episode* e : eps)
    for (Eigen::Index c = 0; c < e->future_actions.cols(); ++c)
      if (e->future_actions.col(c).maxCoeff() > 0.5) seen[static_cast<std::size_t>(c)] = true;
  std::vector<int> out;
  for (int c = 0; c < classes; ++c)
    if (!seen[static_cast<std::size_t>(c)]) out.push_back(c);
  return out;
}

}  // namespace

WorldConfig WorldConfig::defaults() {
  WorldConfig c;
  c.stations = {{0.3, 0.3, 0.3}, {3.15, 0.45, 0.33}, {3.3, 2.55, 0.42}, {0.45, 2.7, 0.24}, {1.8, 1.5, 0.36}};
  c.station_actions = {{0, 1}, {2, 3}, {4, 5}, {6, 7}, {8, 9}};
  c.class_names = {"open_fridge", "take_item",     "wash",  "rinse", "stir", "fry",
                   "cut",         "peel",          "open_cupboard", "take_plate", "walk", "carry"};
  return c;
}

void WorldConfig::validate() const {
  const int ca = dims.action_classes;
  require(ca >= 2, "WorldConfig: need at least 2 action classes");
  require(!stations.empty(), "WorldConfig: need at least one station");
  require(station_actions.size() == stations.size(), "WorldConfig: one action set per station required");
  for (const auto& s : stations)
    for (int i = 0; i < 3; ++i)
      require(s[static_cast<std::size_t>(i)] >= 0.0 && s[static_cast<std::size_t>(i)] <= box[static_cast<std::size_t>(i)],
              "WorldConfig: station outside the box");
  require(speed_min > 0.0 && speed_max >= speed_min, "WorldConfig: invalid speed range");
  require(noise >= 0.0 && feature_noise >= 0.0, "WorldConfig: negative noise scale");
  require(dwell_min > 0.0 && dwell_max >= dwell_min, "WorldConfig: invalid dwell range");
  require(proximity_radius > 0.0, "WorldConfig: proximity radius must be positive");
  require(video_count >= 1, "WorldConfig: video_count must be >= 1");
  require(dims.past_steps >= 2 && dims.future_steps >= 1 && dims.action_steps >= 1 && dims.feature_frames >= 1,
          "WorldConfig: invalid episode dimensions");
  require(dims.future_steps % dims.action_steps == 0, "WorldConfig: future_steps must be a multiple of action_steps");
  require(dims.feature_dim >= static_cast<int>(stations.size()) + 2,
          "WorldConfig: feature_dim must cover station proximity and heading");
  require(class_names.empty() || static_cast<int>(class_names.size()) == ca, "WorldConfig: class_names size mismatch");
  require(carry_origin >= 0 && carry_origin < static_cast<int>(stations.size()), "WorldConfig: carry_origin out of range");

  const bool moves = !dwell_forever && stations.size() >= 2;
  std::vector<bool> reachable(static_cast<std::size_t>(ca), false);
  auto mark = [&](int c) {
    require(c >= 0 && c < ca, "WorldConfig: action class id out of range");
    reachable[static_cast<std::size_t>(c)] = true;
  };
  for (const auto& acts : station_actions)
    for (int c : acts) mark(c);
  if (walk_class >= 0 && moves) mark(walk_class);
  if (carry_class >= 0 && moves) mark(carry_class);
  std::string missing;
  for (int c = 0; c < ca; ++c)
    if (!reachable[static_cast<std::size_t>(c)]) missing += (missing.empty() ? "" : ",") + std::to_string(c);
  require(missing.empty(), "WorldConfig: unreachable action classes: " + missing);
}

std::vector<double> WorldConfig::target_action_rates() const {
  validate();
  const std::size_t n = stations.size();
  std::vector<double> rates(static_cast<std::size_t>(dims.action_classes), 0.0);
  const bool moves = !dwell_forever && n >= 2;

  double dwell_share = 1.0, travel_share = 0.0, carry_share = 0.0;
  if (moves) {
    const double inv_speed = speed_max > speed_min ? std::log(speed_max / speed_min) / (speed_max - speed_min)
                                                   : 1.0 / speed_min;
    // Mean hop time from each origin; the half tick accounts for the arrival snap.
    std::vector<double> hop(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) hop[i] += (to_vec(stations[i]) - to_vec(stations[j])).norm();
      hop[i] = hop[i] / static_cast<double>(n - 1) * inv_speed + 0.5 * kTick;
    }
    const double travel = std::accumulate(hop.begin(), hop.end(), 0.0) / static_cast<double>(n);
    const double dwell = 0.5 * (dwell_min + dwell_max);
    const double cycle = dwell + travel;
    dwell_share = dwell / cycle;
    travel_share = travel / cycle;
    carry_share = hop[static_cast<std::size_t>(carry_origin)] / static_cast<double>(n) / cycle;
  }
  for (std::size_t s = 0; s < n; ++s) {
    const auto& acts = station_actions[s];
    for (int c : acts)
      rates[static_cast<std::size_t>(c)] += dwell_share / static_cast<double>(n) / static_cast<double>(acts.size());
  }
  if (walk_class >= 0) rates[static_cast<std::size_t>(walk_class)] += travel_share;
  if (carry_class >= 0) rates[static_cast<std::size_t>(carry_class)] += carry_share;
  return rates;
}

nlohmann::json WorldConfig::to_json() const {
  nlohmann::json j;
  j["dims"] = {{"past_steps", dims.past_steps},         {"future_steps", dims.future_steps},
               {"action_steps", dims.action_steps},     {"feature_frames", dims.feature_frames},
               {"feature_dim", dims.feature_dim},       {"action_classes", dims.action_classes}};
  j["stations"] = stations;
  j["box"] = box;
  j["station_actions"] = station_actions;
  j["walk_class"] = walk_class;
  j["carry_class"] = carry_class;
  j["carry_origin"] = carry_origin;
  j["class_names"] = class_names;
  j["speed_min"] = speed_min;
  j["speed_max"] = speed_max;
  j["noise"] = noise;
  j["dwell_min"] = dwell_min;
  j["dwell_max"] = dwell_max;
  j["dwell_forever"] = dwell_forever;
  j["feature_noise"] = feature_noise;
  j["proximity_radius"] = proximity_radius;
  j["burn_in"] = burn_in;
  j["video_count"] = video_count;
  j["seed"] = seed;
  return j;
}

WorldConfig WorldConfig::from_json(const nlohmann::json& j) {
  WorldConfig c = defaults();
  if (j.contains("dims")) {
    const auto& d = j["dims"];
    c.dims.past_steps = d.value("past_steps", c.dims.past_steps);
    c.dims.future_steps = d.value("future_steps", c.dims.future_steps);
    c.dims.action_steps = d.value("action_steps", c.dims.action_steps);
    c.dims.feature_frames = d.value("feature_frames", c.dims.feature_frames);
    c.dims.feature_dim = d.value("feature_dim", c.dims.feature_dim);
    c.dims.action_classes = d.value("action_classes", c.dims.action_classes);
  }
  if (j.contains("stations")) c.stations = j["stations"].get<std::vector<std::array<double, 3>>>();
  if (j.contains("box")) c.box = j["box"].get<std::array<double, 3>>();
  if (j.contains("station_actions")) c.station_actions = j["station_actions"].get<std::vector<std::vector<int>>>();
  c.walk_class = j.value("walk_class", c.walk_class);
  c.carry_class = j.value("carry_class", c.carry_class);
  c.carry_origin = j.value("carry_origin", c.carry_origin);
  if (j.contains("class_names")) c.class_names = j["class_names"].get<std::vector<std::string>>();
  c.speed_min = j.value("speed_min", c.speed_min);
  c.speed_max = j.value("speed_max", c.speed_max);
  c.noise = j.value("noise", c.noise);
  c.dwell_min = j.value("dwell_min", c.dwell_min);
  c.dwell_max = j.value("dwell_max", c.dwell_max);
  c.dwell_forever = j.value("dwell_forever", c.dwell_forever);
  c.feature_noise = j.value("feature_noise", c.feature_noise);
  c.proximity_radius = j.value("proximity_radius", c.proximity_radius);
  c.burn_in = j.value("burn_in", c.burn_in);
  c.video_count = j.value("video_count", c.video_count);
  c.seed = j.value("seed", c.seed);
  return c;
}

void Episode::validate(const EpisodeDims& d) const {
  require(past_positions.rows() == d.past_steps && past_positions.cols() == 3,
          "Episode " + episode_id + ": past_positions must be " + std::to_string(d.past_steps) + "x3");
  require(past_features.rows() == d.feature_frames && past_features.cols() == d.feature_dim,
          "Episode " + episode_id + ": past_features has shape " + shape_string(past_features));
  require(future_positions.rows() == d.future_steps && future_positions.cols() == 3,
          "Episode " + episode_id + ": future_positions has shape " + shape_string(future_positions));
  require(future_actions.rows() == d.action_steps && future_actions.cols() == d.action_classes,
          "Episode " + episode_id + ": future_actions has shape " + shape_string(future_actions));
  require(past_positions.allFinite() && future_positions.allFinite() && past_features.allFinite(),
          "Episode " + episode_id + ": non-finite values");
  require((future_actions.array() == 0.0 || future_actions.array() == 1.0).all(),
          "Episode " + episode_id + ": action entries must be 0 or 1");
}

std::vector<Episode> generate_dataset(const WorldConfig& config, int n_episodes) {
  require(n_episodes >= 1, "generate_dataset: n_episodes must be >= 1");
  config.validate();
  const int videos = std::min(config.video_count, n_episodes);
  std::vector<Episode> out;
  out.reserve(static_cast<std::size_t>(n_episodes));
  for (int v = 0; v < videos; ++v) {
    const int count = n_episodes / videos + (v < n_episodes % videos ? 1 : 0);
    auto eps = simulate_video(config, v, count);
    for (auto& e : eps) out.push_back(std::move(e));
  }
  return out;
}

DatasetSplit split_dataset(const std::vector<Episode>& episodes, const std::vector<double>& proportions,
                           int action_classes, std::uint64_t seed) {
  require(proportions.size() == 3, "split_dataset: expected train/validation/test proportions");
  for (double p : proportions) require(p >= 0.0, "split_dataset: negative proportion");
  require(std::abs(proportions[0] + proportions[1] + proportions[2] - 1.0) < 1e-9,
          "split_dataset: proportions must sum to 1");

  std::vector<int> videos;
  {
    std::set<int> seen;
    for (const auto& e : episodes)
      if (seen.insert(e.video_id).second) videos.push_back(e.video_id);
  }
  std::sort(videos.begin(), videos.end());
  const int nv = static_cast<int>(videos.size());
  require(nv >= 2, "split_dataset: need at least two source videos to keep train and test disjoint");

  int n_train = static_cast<int>(std::lround(proportions[0] * nv));
  int n_val = static_cast<int>(std::lround(proportions[1] * nv));
  n_train = std::clamp(n_train, 1, nv - 1);
  n_val = std::clamp(n_val, 0, nv - n_train - 1);

  std::vector<int> last_missing;
  const Rng base(seed);
  for (std::uint64_t attempt = 0; attempt < 200; ++attempt) {
    std::vector<int> order = videos;
    Rng rng = base.substream(attempt);
    std::shuffle(order.begin(), order.end(), rng.engine());
    std::set<int> train_v(order.begin(), order.begin() + n_train);
    std::set<int> val_v(order.begin() + n_train, order.begin() + n_train + n_val);

    DatasetSplit split;
    split.proportions = proportions;
    std::vector<const Episode*> train_eps, test_eps;
    for (const auto& e : episodes) {
      if (train_v.count(e.video_id)) {
        split.train.push_back(e.episode_id);
        train_eps.push_back(&e);
      } else if (val_v.count(e.video_id)) {
        split.validation.push_back(e.episode_id);
      } else {
        split.test.push_back(e.episode_id);
        test_eps.push_back(&e);
      }
    }
    auto miss_train = missing_classes(train_eps, action_classes);
    auto miss_test = missing_classes(test_eps, action_classes);
    if (miss_train.empty() && miss_test.empty()) return split;
    last_missing = miss_train;
    last_missing.insert(last_missing.end(), miss_test.begin(), miss_test.end());
  }
  std::sort(last_missing.begin(), last_missing.end());
  last_missing.erase(std::unique(last_missing.begin(), last_missing.end()), last_missing.end());
  std::string list;
  for (int c : last_missing) list += (list.empty() ? "" : ",") + std::to_string(c);
  throw ContractViolation("split_dataset: classes missing from train or test after regrouping: " + list);
}

std::vector<Episode> select_episodes(const std::vector<Episode>& episodes, const std::vector<std::string>& ids) {
  std::map<std::string, const Episode*> by_id;
  for (const auto& e : episodes) by_id.emplace(e.episode_id, &e);
  std::vector<Episode> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    require(it != by_id.end(), "select_episodes: unknown episode id '" + id + "'");
    out.push_back(*it->second);
  }
  return out;
}

namespace {
nlohmann::json rows_json(const Tensor& t) {
  nlohmann::json out = nlohmann::json::array();
  for (Eigen::Index r = 0; r < t.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < t.cols(); ++c) row.push_back(t(r, c));
    out.push_back(std::move(row));
  }
  return out;
}

Tensor rows_tensor(const nlohmann::json& j, const char* field) {
  require(j.is_array() && !j.empty(), std::string("episode field '") + field + "' must be a non-empty array");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Tensor t(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    require(static_cast<Eigen::Index>(j[static_cast<std::size_t>(r)].size()) == cols,
            std::string("episode field '") + field + "' is ragged");
    for (Eigen::Index c = 0; c < cols; ++c) t(r, c) = j[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)].get<double>();
  }
  return t;
}
}  // namespace

nlohmann::json episode_to_json(const Episode& e) {
  nlohmann::json j;
  j["episode_id"] = e.episode_id;
  j["video_id"] = e.video_id;
  j["past_positions"] = rows_json(e.past_positions);
  j["past_features"] = rows_json(e.past_features);
  j["future_positions"] = rows_json(e.future_positions);
  nlohmann::json acts = nlohmann::json::array();
  for (Eigen::Index k = 0; k < e.future_actions.rows(); ++k) {
    nlohmann::json step = nlohmann::json::array();
    for (Eigen::Index c = 0; c < e.future_actions.cols(); ++c) {
      const int on = e.future_actions(k, c) > 0.5 ? 1 : 0;
      step.push_back({1 - on, on});
    }
    acts.push_back(std::move(step));
  }
  j["future_actions"] = std::move(acts);
  return j;
}

Episode episode_from_json(const nlohmann::json& j) {
  Episode e;
  e.episode_id = j.at("episode_id").get<std::string>();
  e.video_id = j.at("video_id").get<int>();
  e.past_positions = rows_tensor(j.at("past_positions"), "past_positions");
  e.past_features = rows_tensor(j.at("past_features"), "past_features");
  e.future_positions = rows_tensor(j.at("future_positions"), "future_positions");
  const auto& acts = j.at("future_actions");
  require(acts.is_array() && !acts.empty(), "episode field 'future_actions' must be a non-empty array");
  e.future_actions = Tensor::Zero(static_cast<Eigen::Index>(acts.size()), static_cast<Eigen::Index>(acts[0].size()));
  for (std::size_t k = 0; k < acts.size(); ++k) {
    require(acts[k].size() == acts[0].size(), "episode field 'future_actions' is ragged");
    for (std::size_t c = 0; c < acts[k].size(); ++c) {
      const auto& pair = acts[k][c];
      const bool absent = pair == nlohmann::json::array({1, 0});
      const bool occurs = pair == nlohmann::json::array({0, 1});
      require(absent || occurs, "Episode " + e.episode_id + ": action entry must be [1,0] or [0,1]");
      e.future_actions(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c)) = occurs ? 1.0 : 0.0;
    }
  }
  return e;
}

void write_jsonl(const std::string& path, const std::vector<Episode>& episodes) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "write_jsonl: cannot open '" + path + "'");
  for (const auto& e : episodes) out << episode_to_json(e).dump() << '\n';
  require(static_cast<bool>(out), "write_jsonl: write failed for '" + path + "'");
}

std::vector<Episode> read_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "read_jsonl: cannot open '" + path + "'");
  std::vector<Episode> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(episode_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& ex) {
      throw ContractViolation("read_jsonl: " + path + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return out;
}

nlohmann::json dataset_manifest(const WorldConfig& config, int n_episodes, const DatasetSplit& split) {
  nlohmann::json m;
  m["format"] = "hybridcast-dataset-v1";
  m["config"] = config.to_json();
  m["seed"] = config.seed;
  m["n_episodes"] = n_episodes;
  m["class_names"] = config.class_names;
  m["splits"] = {{"train", split.train},
                 {"validation", split.validation},
                 {"test", split.test},
                 {"proportions", split.proportions}};
  return m;
}

DatasetSplit split_from_manifest(const nlohmann::json& manifest) {
  const auto& s = manifest.at("splits");
  DatasetSplit out;
  out.train = s.at("train").get<std::vector<std::string>>();
  out.validation = s.at("validation").get<std::vector<std::string>>();
  out.test = s.at("test").get<std::vector<std::string>>();
  out.proportions = s.value("proportions", std::vector<double>{0.7, 0.1, 0.2});
  return out;
}

}  // namespace hybridcast
