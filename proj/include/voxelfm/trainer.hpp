#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "voxelfm/augment.hpp"
#include "voxelfm/checkpoint.hpp"
#include "voxelfm/encoder.hpp"
#include "voxelfm/objectives.hpp"
#include "voxelfm/optim.hpp"
#include "voxelfm/probe.hpp"
#include "voxelfm/sampler.hpp"

namespace voxelfm {

/// intra: negatives and statistics come from the anchor's own scan only.
/// inter: the usual SimCLR batch, one loss group spanning every scan.
enum class Strategy { intra, inter };

inline std::string_view to_string(Strategy s) { return s == Strategy::intra ? "intra" : "inter"; }

inline Strategy strategy_from_string(std::string_view s) {
  if (s == "intra" || s == "intra-sample") return Strategy::intra;
  if (s == "inter" || s == "inter-sample") return Strategy::inter;
  throw Error(ErrorCode::invalid_argument, "unknown strategy '" + std::string(s) + "'");
}

struct TrainConfig {
  int epochs = 30;
  int steps_per_epoch = 50;
  double base_lr = 3e-4;
  double weight_decay = 1e-6;
  int warmup_epochs = 3;
  BatchComposition batch;
  ObjectiveConfig objective;
  Strategy strategy = Strategy::intra;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // epochs; 0 keeps only the final state
  int workers = 1;
  TransformPipeline pipeline = default_pipeline();

  void validate() const {
    require(epochs >= 1, ErrorCode::invalid_argument, "epochs must be >= 1");
    require(steps_per_epoch >= 1, ErrorCode::invalid_argument, "steps_per_epoch must be >= 1");
    require(warmup_epochs >= 0 && warmup_epochs < epochs, ErrorCode::invalid_argument,
            "warmup_epochs must be in [0, epochs)");
    require(base_lr >= 0.0 && std::isfinite(base_lr), ErrorCode::invalid_argument, "base_lr must be >= 0");
    require(weight_decay >= 0.0, ErrorCode::invalid_argument, "weight_decay must be >= 0");
    require(checkpoint_every >= 0, ErrorCode::invalid_argument, "checkpoint_every must be >= 0");
    require(workers >= 1, ErrorCode::invalid_argument, "workers must be >= 1");
    require(batch.scans_per_batch >= 1 && batch.patches_per_scan >= 1, ErrorCode::invalid_argument,
            "batch needs n >= 1 and M >= 1");
    objective.validate();
    for (const auto& t : pipeline) t.validate();
  }
};

struct LossPoint {
  std::int64_t step = 0;
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct PretrainResult {
  EncoderState<float> state;
  Predictor predictor;
  std::vector<LossPoint> curve;
  std::vector<Checkpoint> checkpoints;
};

using CheckpointSink = std::function<void(const Checkpoint&)>;

namespace detail {

template <class Fn>
void parallel_for(std::size_t count, int workers, const Fn& fn) {
  if (workers <= 1 || count < 2) {
    for (std::size_t n = 0; n < count; ++n) fn(n);
    return;
  }
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t n = static_cast<std::size_t>(w); n < count; n += static_cast<std::size_t>(workers)) fn(n);
    });
  for (auto& t : pool) t.join();
}

inline void adam_matrix(Matrix& p, const Matrix& g, AdamMoments<double>& m, std::int64_t t, double lr, double wd) {
  optimizer_step<double>(std::span<double>(p.data(), static_cast<std::size_t>(p.size())),
                         std::span<const double>(g.data(), static_cast<std::size_t>(g.size())), m, t, lr, wd);
}

inline void adam_row(RowVector& p, const RowVector& g, AdamMoments<double>& m, std::int64_t t, double lr, double wd) {
  optimizer_step<double>(std::span<double>(p.data(), static_cast<std::size_t>(p.size())),
                         std::span<const double>(g.data(), static_cast<std::size_t>(g.size())), m, t, lr, wd);
}

}  // namespace detail

/// Contrastive pre-training. Every random draw is derived from cfg.seed, and
/// per-view work is reduced in a fixed order, so the loss curve is
/// reproducible for any worker count.
inline PretrainResult pretrain(std::span<const Scan> dataset, const EncoderConfig& encoder_config,
                               const TrainConfig& cfg, const CheckpointSink& sink = {}) {
  cfg.validate();
  encoder_config.validate();
  require(dataset.size() >= static_cast<std::size_t>(cfg.batch.scans_per_batch), ErrorCode::invalid_argument,
          "dataset has " + std::to_string(dataset.size()) + " scans; batch needs " +
              std::to_string(cfg.batch.scans_per_batch));
  std::vector<Scan> scans;
  scans.reserve(dataset.size());
  for (const auto& s : dataset) scans.push_back({s.id, normalize_hu(s.volume)});

  BatchComposition batch = cfg.batch;
  batch.patch_size = encoder_config.patch;

  PretrainResult out;
  out.state = init_encoder<float>(encoder_config, derive_seed(cfg.seed, 0x454e43ULL));
  const bool simsiam = cfg.objective.kind == ObjectiveKind::simsiam;
  if (simsiam) out.predictor = Predictor::init(encoder_config.proj_dim, derive_seed(cfg.seed, 0x505245ULL));

  std::map<std::string, AdamMoments<float>> moments;
  for (const auto& [name, p] : out.state.params) moments.emplace(name, AdamMoments<float>(p.values.size()));
  std::array<AdamMoments<double>, 4> pred_moments{
      AdamMoments<double>(static_cast<std::size_t>(out.predictor.w1.size())),
      AdamMoments<double>(static_cast<std::size_t>(out.predictor.w2.size())),
      AdamMoments<double>(static_cast<std::size_t>(out.predictor.b1.size())),
      AdamMoments<double>(static_cast<std::size_t>(out.predictor.b2.size()))};

  const std::int64_t total_steps = static_cast<std::int64_t>(cfg.epochs) * cfg.steps_per_epoch;
  const std::int64_t warmup_steps = static_cast<std::int64_t>(cfg.warmup_epochs) * cfg.steps_per_epoch;
  const int n = batch.scans_per_batch, M = batch.patches_per_scan;
  const int P = encoder_config.proj_dim;

  for (std::int64_t step = 0; step < total_steps; ++step) {
    const int epoch = static_cast<int>(step / cfg.steps_per_epoch);
    const std::uint64_t step_seed = derive_seed(cfg.seed, 0x5354455000000000ULL + static_cast<std::uint64_t>(step));
    const auto sets = compose_batch(scans, batch, derive_seed(step_seed, 1));

    // View layout: scan s, patch m -> index 2(sM + m) for view 1, +1 for view 2.
    std::vector<Volume> views(static_cast<std::size_t>(2 * n * M));
    detail::parallel_for(static_cast<std::size_t>(n * M), cfg.workers, [&](std::size_t k) {
      const auto s = k / static_cast<std::size_t>(M), m = k % static_cast<std::size_t>(M);
      auto [a, b] = make_view_pair(sets[s].patches[m].data, cfg.pipeline, derive_seed(step_seed, 100 + k));
      views[2 * k] = std::move(a);
      views[2 * k + 1] = std::move(b);
    });
    std::vector<ForwardTape<float>> tapes(views.size());
    detail::parallel_for(views.size(), cfg.workers, [&](std::size_t v) { tapes[v] = forward_pass(out.state, views[v]); });

    std::vector<ScanEmbeddings> groups;
    auto fill = [&](Matrix& dst, Eigen::Index row, std::size_t view) {
      for (int c = 0; c < P; ++c) dst(row, c) = static_cast<double>(tapes[view].projected[static_cast<std::size_t>(c)]);
    };
    if (cfg.strategy == Strategy::intra) {
      for (int s = 0; s < n; ++s) {
        ScanEmbeddings g{sets[static_cast<std::size_t>(s)].scan_id, Matrix(M, P), Matrix(M, P)};
        for (int m = 0; m < M; ++m) {
          const auto k = static_cast<std::size_t>(s * M + m);
          fill(g.z1, m, 2 * k);
          fill(g.z2, m, 2 * k + 1);
        }
        groups.push_back(std::move(g));
      }
    } else {
      ScanEmbeddings g{0, Matrix(n * M, P), Matrix(n * M, P)};
      for (int k = 0; k < n * M; ++k) {
        fill(g.z1, k, 2 * static_cast<std::size_t>(k));
        fill(g.z2, k, 2 * static_cast<std::size_t>(k) + 1);
      }
      groups.push_back(std::move(g));
    }
    const auto lg = loss_gradients(cfg.objective, groups, out.predictor);
    const double loss = lg.report.total;
    require(std::isfinite(loss), ErrorCode::divergence,
            "non-finite loss at step " + std::to_string(step) + " (epoch " + std::to_string(epoch) +
                "); lower base_lr or check the input scaling");

    std::vector<std::vector<float>> upstream(views.size(), std::vector<float>(static_cast<std::size_t>(P)));
    for (std::size_t k = 0; k < static_cast<std::size_t>(n * M); ++k) {
      const std::size_t gi = cfg.strategy == Strategy::intra ? k / static_cast<std::size_t>(M) : 0;
      const auto row = static_cast<Eigen::Index>(cfg.strategy == Strategy::intra ? k % static_cast<std::size_t>(M) : k);
      for (int c = 0; c < P; ++c) {
        upstream[2 * k][static_cast<std::size_t>(c)] = static_cast<float>(lg.grad1[gi](row, c));
        upstream[2 * k + 1][static_cast<std::size_t>(c)] = static_cast<float>(lg.grad2[gi](row, c));
      }
    }
    std::vector<ParamGrads<float>> per_view(views.size());
    detail::parallel_for(views.size(), cfg.workers, [&](std::size_t v) {
      per_view[v] = zero_grads(out.state);
      backward_pass<float>(out.state, tapes[v], upstream[v], per_view[v]);
      tapes[v] = {};
    });
    auto grads = zero_grads(out.state);
    for (const auto& g : per_view)
      for (auto& [name, acc] : grads) {
        const auto& src = g.at(name);
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += src[i];
      }

    const double lr = lr_schedule(step, total_steps, warmup_steps, cfg.base_lr);
    for (auto& [name, p] : out.state.params)
      optimizer_step<float>(p.values, grads.at(name), moments.at(name), step + 1, lr, cfg.weight_decay);
    if (simsiam) {
      detail::adam_matrix(out.predictor.w1, lg.predictor.w1, pred_moments[0], step + 1, lr, cfg.weight_decay);
      detail::adam_matrix(out.predictor.w2, lg.predictor.w2, pred_moments[1], step + 1, lr, cfg.weight_decay);
      detail::adam_row(out.predictor.b1, lg.predictor.b1, pred_moments[2], step + 1, lr, cfg.weight_decay);
      detail::adam_row(out.predictor.b2, lg.predictor.b2, pred_moments[3], step + 1, lr, cfg.weight_decay);
    }
    out.curve.push_back({step, epoch, lr, loss});

    const bool epoch_end = (step + 1) % cfg.steps_per_epoch == 0;
    if (epoch_end && cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
      Checkpoint ck{out.state, epoch + 1};
      if (sink) sink(ck);
      out.checkpoints.push_back(std::move(ck));
    }
  }
  return out;
}

inline void write_loss_csv(std::ostream& os, std::span<const LossPoint> curve) {
  os << "step,epoch,lr,loss\n";
  os.precision(17);
  for (const auto& p : curve) os << p.step << ',' << p.epoch << ',' << p.lr << ',' << p.loss << '\n';
}

struct AblationConfig {
  std::vector<Strategy> strategies{Strategy::intra, Strategy::inter};
  std::vector<ObjectiveKind> variants{ObjectiveKind::ntxent, ObjectiveKind::simsiam, ObjectiveKind::vicreg};
  std::vector<int> crops{8};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  EncoderConfig encoder;
  TrainConfig train;  // shared budget; seed, kind, strategy and M are overridden per row
  ProbeConfig probe;
  int few_shot = 2;
};

struct AblationRow {
  Strategy strategy = Strategy::intra;
  ObjectiveKind variant = ObjectiveKind::ntxent;
  int crops = 0;
  std::uint64_t seed = 0;
  double micro_dice = 0.0;
  double macro_dice = 0.0;
};

/// One pretrain + probe per (strategy, variant, crops, seed). The encoder
/// init depends only on the seed, so rows sharing a seed are paired.
inline std::vector<AblationRow> ablate(std::span<const Scan> dataset, std::span<const LabeledVolume> probe_set,
                                       const AblationConfig& cfg,
                                       const std::function<void(const AblationRow&)>& on_row = {}) {
  require(!cfg.strategies.empty() && !cfg.variants.empty() && !cfg.crops.empty() && !cfg.seeds.empty(),
          ErrorCode::invalid_argument, "ablation grid has an empty axis");
  std::vector<AblationRow> rows;
  for (auto strategy : cfg.strategies)
    for (auto variant : cfg.variants)
      for (int crops : cfg.crops)
        for (auto seed : cfg.seeds) {
          TrainConfig t = cfg.train;
          t.strategy = strategy;
          t.objective.kind = variant;
          t.batch.patches_per_scan = crops;
          t.seed = seed;
          t.checkpoint_every = 0;
          const auto result = pretrain(dataset, cfg.encoder, t);
          ProbeConfig pc = cfg.probe;
          pc.seed = seed;
          const auto report = probe_evaluate(result.state, probe_set, cfg.few_shot, pc, t.epochs);
          rows.push_back({strategy, variant, crops, seed, report.micro_dice, report.macro_dice});
          if (on_row) on_row(rows.back());
        }
  return rows;
}

inline void write_ablation_csv(std::ostream& os, std::span<const AblationRow> rows) {
  os << "strategy,variant,crops,seed,micro_dice,macro_dice\n";
  os.precision(10);
  for (const auto& r : rows)
    os << to_string(r.strategy) << ',' << to_string(r.variant) << ',' << r.crops << ',' << r.seed << ','
       << r.micro_dice << ',' << r.macro_dice << '\n';
}

}  // namespace voxelfm
