#pragma once

#include <initializer_list>
#include <optional>
#include <string>

#include "voxelfm/augment.hpp"
#include "voxelfm/checkpoint.hpp"
#include "voxelfm/embeddings.hpp"
#include "voxelfm/io.hpp"
#include "voxelfm/phantom.hpp"
#include "voxelfm/probe.hpp"
#include "voxelfm/trainer.hpp"

namespace voxelfm {

struct SearchConfig {
  Index3 box{16, 16, 16};
  Index3 stride{8, 8, 8};
  Index3 occluder{8, 8, 8};
  Index3 occluder_stride{8, 8, 8};
  std::optional<double> fill;  // occlusion fill in HU; default is the volume minimum
  double outlier_threshold = 0.9;
  int k = 10;
  AggregateKind aggregate = AggregateKind::min;

  void validate() const {
    for (int a = 0; a < 3; ++a) {
      require(box[a] >= 1 && occluder[a] >= 1, ErrorCode::invalid_argument, "search.box/occluder must be >= 1");
      require(stride[a] >= 1 && occluder_stride[a] >= 1, ErrorCode::invalid_argument, "search strides must be >= 1");
    }
    require(k >= 1, ErrorCode::invalid_argument, "search.k must be >= 1");
    require(outlier_threshold >= -1.0 && outlier_threshold <= 1.0, ErrorCode::invalid_argument,
            "search.outlier_threshold must be in [-1, 1]");
  }
};

struct PhantomConfig {
  PhantomSpec spec = default_phantom_spec();
  int count = 8;
};

struct RunConfig {
  PhantomConfig phantom;
  EncoderConfig encoder;
  TrainConfig training;  // training.pipeline holds the augmentation pipeline
  AblationConfig ablation;
  ProbeConfig probe;
  int few_shot = 2;
  SearchConfig search;

  /// Checks every section and the cross-section constraints.
  void validate() const {
    phantom.spec.validate();
    require(phantom.count >= 1, ErrorCode::invalid_argument, "phantom.count must be >= 1");
    encoder.validate();
    training.validate();
    for (int a = 0; a < 3; ++a)
      require(encoder.patch[a] <= phantom.spec.shape[a], ErrorCode::invalid_argument,
              "encoder.patch " + to_string(encoder.patch) + " exceeds phantom.shape " + to_string(phantom.spec.shape));
    ablation.train.validate();
    for (int c : ablation.crops) require(c >= 1, ErrorCode::invalid_argument, "ablation.crops must be >= 1");
    require(ablation.few_shot >= 1 && few_shot >= 1, ErrorCode::invalid_argument, "few_shot must be >= 1");
    require(probe.iterations >= 1 && probe.lr > 0.0 && probe.l2 >= 0.0, ErrorCode::invalid_argument,
            "probe needs iterations >= 1, lr > 0, l2 >= 0");
    search.validate();
  }
};

namespace detail {

inline void check_keys(const json& j, std::initializer_list<std::string_view> allowed, const std::string& section) {
  require(j.is_object(), ErrorCode::invalid_argument, "config section '" + section + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    require(ok, ErrorCode::invalid_argument, "unknown key '" + key + "' in config section '" + section + "'");
  }
}

template <class T>
void read(const json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

inline Range range_from_json(const json& j) {
  require(j.is_array() && j.size() == 2, ErrorCode::invalid_argument, "ranges are [lo, hi] pairs");
  return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace detail

inline TransformPipeline pipeline_from_json(const json& j) {
  require(j.is_array(), ErrorCode::invalid_argument, "pipeline must be an array");
  TransformPipeline p;
  for (const auto& t : j) {
    detail::check_keys(t, {"kind", "probability", "range", "range2"}, "pipeline[]");
    TransformSpec s;
    s.kind = transform_kind_from_string(t.at("kind").get<std::string>());
    detail::read(t, "probability", s.probability);
    if (t.contains("range")) s.range = detail::range_from_json(t.at("range"));
    if (t.contains("range2")) s.range2 = detail::range_from_json(t.at("range2"));
    s.validate();
    p.push_back(s);
  }
  return p;
}

inline json to_json(const TransformPipeline& p) {
  json out = json::array();
  for (const auto& t : p)
    out.push_back({{"kind", to_string(t.kind)},
                   {"probability", t.probability},
                   {"range", {t.range.lo, t.range.hi}},
                   {"range2", {t.range2.lo, t.range2.hi}}});
  return out;
}

inline ObjectiveConfig objective_from_json(const json& j, ObjectiveConfig c = {}) {
  detail::check_keys(j, {"kind", "temperature", "lambda_inv", "lambda_var", "lambda_cov", "gamma", "eps"},
                     "objective");
  if (j.contains("kind")) c.kind = objective_kind_from_string(j.at("kind").get<std::string>());
  detail::read(j, "temperature", c.temperature);
  detail::read(j, "lambda_inv", c.lambda_inv);
  detail::read(j, "lambda_var", c.lambda_var);
  detail::read(j, "lambda_cov", c.lambda_cov);
  detail::read(j, "gamma", c.gamma);
  detail::read(j, "eps", c.eps);
  return c;
}

inline TrainConfig training_from_json(const json& j, TrainConfig c = {}) {
  detail::check_keys(j,
                     {"epochs", "steps_per_epoch", "base_lr", "weight_decay", "warmup_epochs", "scans_per_batch",
                      "patches_per_scan", "objective", "strategy", "seed", "checkpoint_every", "workers"},
                     "training");
  detail::read(j, "epochs", c.epochs);
  detail::read(j, "steps_per_epoch", c.steps_per_epoch);
  detail::read(j, "base_lr", c.base_lr);
  detail::read(j, "weight_decay", c.weight_decay);
  detail::read(j, "warmup_epochs", c.warmup_epochs);
  detail::read(j, "scans_per_batch", c.batch.scans_per_batch);
  detail::read(j, "patches_per_scan", c.batch.patches_per_scan);
  if (j.contains("objective")) c.objective = objective_from_json(j.at("objective"), c.objective);
  if (j.contains("strategy")) c.strategy = strategy_from_string(j.at("strategy").get<std::string>());
  detail::read(j, "seed", c.seed);
  detail::read(j, "checkpoint_every", c.checkpoint_every);
  detail::read(j, "workers", c.workers);
  return c;
}

inline PhantomSpec phantom_spec_from_json(const json& j, PhantomSpec s) {
  detail::read(j, "shape", s.shape);
  detail::read(j, "spacing_mm", s.spacing_mm);
  detail::read(j, "background_hu", s.background_hu);
  detail::read(j, "noise_sigma", s.noise_sigma);
  if (j.contains("organs")) {
    s.organs.clear();
    for (const auto& o : j.at("organs")) {
      detail::check_keys(o, {"label", "geometry", "center_frac", "radii_frac", "mean_hu", "hu_jitter"},
                         "phantom.organs[]");
      OrganSpec spec;
      detail::read(o, "label", spec.label);
      if (o.contains("geometry")) {
        const auto g = o.at("geometry").get<std::string>();
        require(g == "ellipsoid" || g == "tube", ErrorCode::invalid_argument,
                "organ geometry must be ellipsoid or tube, got '" + g + "'");
        spec.geometry = g == "tube" ? OrganGeometry::tube : OrganGeometry::ellipsoid;
      }
      detail::read(o, "center_frac", spec.center_frac);
      detail::read(o, "radii_frac", spec.radii_frac);
      detail::read(o, "mean_hu", spec.mean_hu);
      detail::read(o, "hu_jitter", spec.hu_jitter);
      s.organs.push_back(spec);
    }
  }
  return s;
}

inline Index3 index3_from_json(const json& j) {
  if (j.is_number_integer()) {
    const int v = j.get<int>();
    return {v, v, v};
  }
  return j.get<Index3>();
}

/// Parses a run config. Absent keys keep their defaults; unknown keys are
/// rejected so typos fail fast. The result is validated before returning.
inline RunConfig run_config_from_json(const json& j) {
  detail::check_keys(j, {"phantom", "pipeline", "encoder", "training", "ablation", "probe", "search"}, "root");
  RunConfig c;
  if (j.contains("phantom")) {
    const auto& p = j.at("phantom");
    detail::check_keys(p, {"shape", "spacing_mm", "background_hu", "noise_sigma", "organs", "count"}, "phantom");
    if (p.contains("shape")) c.phantom.spec = default_phantom_spec(p.at("shape").get<Index3>());
    c.phantom.spec = phantom_spec_from_json(p, c.phantom.spec);
    detail::read(p, "count", c.phantom.count);
  }
  if (j.contains("encoder")) {
    const auto& e = j.at("encoder");
    detail::check_keys(e, {"patch", "stages", "base_channels", "embed_dim", "proj_dim"}, "encoder");
    if (e.contains("patch")) c.encoder.patch = index3_from_json(e.at("patch"));
    detail::read(e, "stages", c.encoder.stages);
    detail::read(e, "base_channels", c.encoder.base_channels);
    c.encoder.embed_dim = c.encoder.feature_channels();
    detail::read(e, "embed_dim", c.encoder.embed_dim);
    detail::read(e, "proj_dim", c.encoder.proj_dim);
  }
  if (j.contains("training")) c.training = training_from_json(j.at("training"), c.training);
  if (j.contains("pipeline")) c.training.pipeline = pipeline_from_json(j.at("pipeline"));
  if (j.contains("probe")) {
    const auto& p = j.at("probe");
    detail::check_keys(p, {"iterations", "lr", "l2", "max_train_voxels", "seed", "few_shot"}, "probe");
    detail::read(p, "iterations", c.probe.iterations);
    detail::read(p, "lr", c.probe.lr);
    detail::read(p, "l2", c.probe.l2);
    detail::read(p, "max_train_voxels", c.probe.max_train_voxels);
    detail::read(p, "seed", c.probe.seed);
    detail::read(p, "few_shot", c.few_shot);
  }
  c.ablation.encoder = c.encoder;
  c.ablation.train = c.training;
  c.ablation.probe = c.probe;
  c.ablation.few_shot = c.few_shot;
  if (j.contains("ablation")) {
    const auto& a = j.at("ablation");
    detail::check_keys(a, {"strategies", "variants", "crops", "seeds", "few_shot", "training"}, "ablation");
    if (a.contains("strategies")) {
      c.ablation.strategies.clear();
      for (const auto& s : a.at("strategies")) c.ablation.strategies.push_back(strategy_from_string(s.get<std::string>()));
    }
    if (a.contains("variants")) {
      c.ablation.variants.clear();
      for (const auto& s : a.at("variants")) c.ablation.variants.push_back(objective_kind_from_string(s.get<std::string>()));
    }
    detail::read(a, "crops", c.ablation.crops);
    detail::read(a, "seeds", c.ablation.seeds);
    detail::read(a, "few_shot", c.ablation.few_shot);
    if (a.contains("training")) c.ablation.train = training_from_json(a.at("training"), c.ablation.train);
  }
  if (j.contains("search")) {
    const auto& s = j.at("search");
    detail::check_keys(s, {"box", "stride", "occluder", "occluder_stride", "fill", "outlier_threshold", "k", "aggregate"},
                       "search");
    if (s.contains("box")) c.search.box = index3_from_json(s.at("box"));
    if (s.contains("stride")) c.search.stride = index3_from_json(s.at("stride"));
    if (s.contains("occluder")) c.search.occluder = index3_from_json(s.at("occluder"));
    if (s.contains("occluder_stride")) c.search.occluder_stride = index3_from_json(s.at("occluder_stride"));
    if (s.contains("fill")) c.search.fill = s.at("fill").get<double>();
    detail::read(s, "outlier_threshold", c.search.outlier_threshold);
    detail::read(s, "k", c.search.k);
    if (s.contains("aggregate")) c.search.aggregate = aggregate_kind_from_string(s.at("aggregate").get<std::string>());
  }
  c.validate();
  return c;
}

inline RunConfig load_run_config(const fs::path& path) {
  const auto text = read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::invalid_argument, "config " + path.string() + " is not valid JSON: " + e.what());
  }
  try {
    return run_config_from_json(j);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::invalid_argument, "config " + path.string() + ": " + e.what());
  }
}

}  // namespace voxelfm
