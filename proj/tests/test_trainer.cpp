#include <numeric>
#include <sstream>

#include <gtest/gtest.h>

#include "support/expect.hpp"
#include "support/oracles.hpp"
#include "voxelfm/phantom.hpp"
#include "voxelfm/trainer.hpp"

using namespace voxelfm;

namespace {

EncoderConfig small_encoder() {
  EncoderConfig c;
  c.patch = {8, 8, 8};
  c.stages = 2;
  c.base_channels = 4;
  c.embed_dim = 8;
  c.proj_dim = 8;
  return c;
}

std::vector<Scan> phantoms(int count, Index3 shape = {16, 16, 16}) {
  std::vector<Scan> out;
  for (int n = 0; n < count; ++n)
    out.push_back({static_cast<std::uint64_t>(n), generate_phantom(default_phantom_spec(shape), 1000 + n).first});
  return out;
}

TrainConfig quick(int epochs, int steps) {
  TrainConfig t;
  t.epochs = epochs;
  t.steps_per_epoch = steps;
  t.warmup_epochs = 0;
  t.base_lr = 1e-3;
  t.batch = {4, 4, {8, 8, 8}};
  return t;
}

double mean_loss(const std::vector<LossPoint>& c, std::size_t begin, std::size_t end) {
  double s = 0;
  for (std::size_t n = begin; n < end; ++n) s += c[n].loss;
  return s / static_cast<double>(end - begin);
}

}  // namespace

TEST(Pretrain, ZeroLearningRateLeavesParametersUnchanged) {
  const auto data = phantoms(4);
  auto t = quick(1, 1);
  t.base_lr = 0;
  const auto r = pretrain(data, small_encoder(), t);
  const auto init = init_encoder<float>(small_encoder(), derive_seed(t.seed, 0x454e43ULL));
  for (const auto& [name, p] : init.params) EXPECT_EQ(r.state[name], p.values) << name;
  ASSERT_EQ(r.curve.size(), 1u);
  EXPECT_TRUE(std::isfinite(r.curve[0].loss));
}

TEST(Pretrain, SameSeedSameCurveForAnyWorkerCount) {
  const auto data = phantoms(4);
  auto t = quick(2, 3);
  t.seed = 12;
  const auto a = pretrain(data, small_encoder(), t), b = pretrain(data, small_encoder(), t);
  t.workers = 3;
  const auto c = pretrain(data, small_encoder(), t);
  ASSERT_EQ(a.curve.size(), 6u);
  for (std::size_t n = 0; n < a.curve.size(); ++n) {
    EXPECT_EQ(a.curve[n].loss, b.curve[n].loss);
    EXPECT_EQ(a.curve[n].loss, c.curve[n].loss);
  }
  for (const auto& [name, p] : a.state.params) EXPECT_EQ(c.state[name], p.values) << name;
}

TEST(Pretrain, LossDecreasesOverTwoHundredSteps) {
  const auto data = phantoms(8);
  double first = 0, last = 0;
  for (std::uint64_t seed : {0, 1, 2}) {
    auto t = quick(4, 50);
    t.warmup_epochs = 1;
    t.seed = seed;
    const auto r = pretrain(data, small_encoder(), t);
    ASSERT_EQ(r.curve.size(), 200u);
    first += mean_loss(r.curve, 0, 20);
    last += mean_loss(r.curve, 180, 200);
  }
  EXPECT_LT(last, first);
}

TEST(Pretrain, CheckpointsAndCsv) {
  const auto data = phantoms(4);
  auto t = quick(3, 2);
  t.checkpoint_every = 1;
  int sunk = 0;
  const auto r = pretrain(data, small_encoder(), t, [&](const Checkpoint&) { ++sunk; });
  EXPECT_EQ(sunk, 3);
  ASSERT_EQ(r.checkpoints.size(), 3u);
  EXPECT_EQ(r.checkpoints.back().epoch, 3);
  std::ostringstream os;
  write_loss_csv(os, r.curve);
  const auto csv = os.str();
  EXPECT_EQ(csv.rfind("step,epoch,lr,loss\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
}

TEST(Pretrain, VariantsAndStrategiesRun) {
  const auto data = phantoms(4);
  for (auto kind : {ObjectiveKind::ntxent, ObjectiveKind::simsiam, ObjectiveKind::vicreg})
    for (auto strategy : {Strategy::intra, Strategy::inter}) {
      auto t = quick(1, 2);
      t.objective.kind = kind;
      t.strategy = strategy;
      const auto r = pretrain(data, small_encoder(), t);
      for (const auto& p : r.curve) EXPECT_TRUE(std::isfinite(p.loss));
    }
}

TEST(Pretrain, RejectsBadConfigs) {
  const auto data = phantoms(2);
  EXPECT_ERROR_CODE(pretrain(data, small_encoder(), quick(1, 1)), ErrorCode::invalid_argument);
  auto t = quick(1, 1);
  t.warmup_epochs = 1;
  EXPECT_ERROR_CODE(pretrain(phantoms(4), small_encoder(), t), ErrorCode::invalid_argument);
}

TEST(Probe, SeparatesIntensityBands) {
  Volume v({16, 16, 16});
  SegmentationMask m(v.shape);
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j)
      for (int k = 0; k < 16; ++k) {
        const int band = (i / 8 + j / 8) % 3;
        v.at(i, j, k) = static_cast<float>(std::array<double, 3>{-600, 100, 900}[static_cast<std::size_t>(band)]);
        m.at(i, j, k) = band;
      }
  std::vector<Scan> data;
  for (int n = 0; n < 4; ++n) data.push_back({static_cast<std::uint64_t>(n), v});
  const auto trained = pretrain(data, small_encoder(), quick(1, 20)).state;
  const std::vector<LabeledVolume> set{{v, m}, {v, m}};
  const auto r = probe_evaluate(trained, std::span<const LabeledVolume>(set), 1);
  EXPECT_GT(r.micro_dice, 0.9);
  EXPECT_EQ(r.per_label.size(), 2u);
}

TEST(Probe, AllBackgroundScoresOne) {
  const std::vector<LabeledVolume> set(2, LabeledVolume{Volume({8, 8, 8}), SegmentationMask({8, 8, 8})});
  const auto r = probe_evaluate(init_encoder<float>(small_encoder(), 0), std::span<const LabeledVolume>(set), 1);
  EXPECT_EQ(r.micro_dice, 1.0);
  EXPECT_EQ(r.macro_dice, 1.0);
}

TEST(Probe, NeedsMoreVolumesThanShots) {
  const std::vector<LabeledVolume> set(2, LabeledVolume{Volume({8, 8, 8}), SegmentationMask({8, 8, 8})});
  const auto s = init_encoder<float>(small_encoder(), 0);
  EXPECT_ERROR_CODE(probe_evaluate(s, std::span<const LabeledVolume>(set), 2), ErrorCode::invalid_argument);
  const std::vector<int> shots{1, 1};
  EXPECT_EQ(probe_evaluate(s, std::span<const LabeledVolume>(set), std::span<const int>(shots)).size(), 2u);
}

TEST(SelectCheckpoint, ArgmaxWithEarliestTie) {
  auto rep = [](int epoch, double micro) {
    ProbeReport r;
    r.checkpoint_epoch = epoch;
    r.micro_dice = micro;
    return r;
  };
  const std::vector<ProbeReport> one{rep(4, 0.1)}, two{rep(10, 0.5), rep(20, 0.7)}, tie{rep(20, 0.7), rep(10, 0.7)};
  EXPECT_EQ(select_checkpoint(one), 4);
  EXPECT_EQ(select_checkpoint(two), 20);
  EXPECT_EQ(select_checkpoint(tie), 10);
  EXPECT_ERROR_CODE(select_checkpoint(std::span<const ProbeReport>{}), ErrorCode::empty_input);
}

TEST(Ablate, GridRowsAndCsv) {
  const auto data = phantoms(4);
  std::vector<LabeledVolume> probe_set;
  for (int n = 0; n < 3; ++n) {
    auto [v, m] = generate_phantom(default_phantom_spec({16, 16, 16}), 50 + n);
    probe_set.push_back({v, m});
  }
  AblationConfig cfg;
  cfg.variants = {ObjectiveKind::ntxent};
  cfg.crops = {2, 4};
  cfg.seeds = {0};
  cfg.encoder = small_encoder();
  cfg.train = quick(1, 2);
  cfg.probe.iterations = 20;
  cfg.few_shot = 1;
  int seen = 0;
  const auto rows = ablate(data, probe_set, cfg, [&](const AblationRow&) { ++seen; });
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(seen, 4);
  EXPECT_EQ(rows[0].strategy, Strategy::intra);
  EXPECT_EQ(rows[3].strategy, Strategy::inter);
  EXPECT_EQ(rows[1].crops, 4);
  for (const auto& r : rows) {
    EXPECT_GE(r.micro_dice, 0.0);
    EXPECT_LE(r.micro_dice, 1.0);
  }
  std::ostringstream os;
  write_ablation_csv(os, rows);
  EXPECT_EQ(os.str().rfind("strategy,variant,crops,seed,micro_dice,macro_dice\n", 0), 0u);
}
