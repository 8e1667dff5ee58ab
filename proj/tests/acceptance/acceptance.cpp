// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails. Names given on the command line select a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "voxelfm/embeddings.hpp"
#include "voxelfm/evalmetrics.hpp"
#include "voxelfm/objectives.hpp"
#include "voxelfm/phantom.hpp"
#include "voxelfm/probe.hpp"
#include "voxelfm/sampler.hpp"
#include "voxelfm/semantics.hpp"
#include "voxelfm/service.hpp"
#include "voxelfm/trainer.hpp"

using namespace voxelfm;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0, worst_loss_gap = 0;
  std::size_t params = 0;
  int redraws = 0;
  for (auto kind : {ObjectiveKind::ntxent, ObjectiveKind::simsiam, ObjectiveKind::vicreg})
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto r = oracle::gradcheck(kind, derive_seed(seed, 0x47524144ULL));
      worst = std::max(worst, r.rel_error);
      worst_loss_gap = std::max(worst_loss_gap, r.loss_gap);
      params = std::max(params, r.parameters);
      redraws += r.redraws;
    }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && worst_loss_gap < 1e-9 && params <= 5000 && secs < 120.0,
          fmt("3 objectives x 20 instances, max rel error %.3g, max loss gap %.3g, %zu checked values, "
              "%d redraws, %.1f s",
              worst, worst_loss_gap, params, redraws, secs)};
}

Outcome ntxent_exactness() {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  auto random = [&](int rows, int cols) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
    return m;
  };
  double single = 0;
  for (int t = 0; t < 20; ++t) single = std::max(single, std::abs(ntxent_intra(random(1, 8), random(1, 8))));
  Matrix e(2, 2);
  e << 1, 0, 0, 1;
  const double hand = ntxent_intra(e, e, 1.0), want = std::log(1 + 2 / std::exp(1.0));
  double drift = 0;
  for (int t = 0; t < 20; ++t) {
    const Matrix z1 = random(6, 8), z2 = random(6, 8);
    drift = std::max(drift, std::abs(ntxent_intra(z1, z2) - ntxent_intra(10 * z1, 10 * z2)));
  }
  return {single <= 1e-12 && std::abs(hand - want) <= 1e-4 && drift < 1e-9,
          fmt("M=1 max |loss| %.3g, M=2 hand case %.6f vs ln(1+2/e) %.6f, max rescale drift %.3g", single, hand, want,
              drift)};
}

// ---------------------------------------------------------------------------
// Ablations on a redundant corpus: every phantom shares the organ layout and
// differs only in tissue intensities and noise.

struct AblationSetup {
  std::vector<Scan> corpus;
  std::vector<LabeledVolume> probe_set;
  AblationConfig cfg;
};

AblationSetup ablation_setup() {
  AblationSetup s;
  const auto spec = default_phantom_spec({32, 32, 32});
  for (std::uint64_t n = 0; n < 32; ++n) s.corpus.push_back({n, generate_phantom(spec, n).first});
  for (std::uint64_t n = 0; n < 4; ++n) {
    auto [v, m] = generate_phantom(spec, 1000 + n);
    s.probe_set.push_back({std::move(v), std::move(m)});
  }
  auto& c = s.cfg;
  c.encoder.patch = {16, 16, 16};
  c.encoder.stages = 2;
  c.encoder.base_channels = 4;
  c.encoder.embed_dim = 8;
  c.encoder.proj_dim = 8;
  c.train.epochs = 1;
  c.train.steps_per_epoch = 100;
  c.train.warmup_epochs = 0;
  c.train.base_lr = 1e-3;
  c.train.batch.scans_per_batch = 4;
  c.variants = {ObjectiveKind::ntxent};
  c.seeds = {0, 1, 2};
  c.few_shot = 1;
  return s;
}

std::string rows_detail(const std::vector<AblationRow>& rows) {
  std::string out;
  for (const auto& r : rows)
    out += fmt("%s%s/M=%d/seed=%llu:%.4f", out.empty() ? "" : " ", std::string(to_string(r.strategy)).c_str(), r.crops,
               static_cast<unsigned long long>(r.seed), r.micro_dice);
  return out;
}

Outcome ablation_intra_vs_inter() {
  const auto t0 = std::chrono::steady_clock::now();
  auto s = ablation_setup();
  s.cfg.strategies = {Strategy::intra, Strategy::inter};
  s.cfg.crops = {8};
  const auto rows = ablate(s.corpus, s.probe_set, s.cfg);
  int wins = 0;
  for (std::size_t n = 0; n < s.cfg.seeds.size(); ++n) wins += rows[n].micro_dice >= rows[n + s.cfg.seeds.size()].micro_dice;
  const double secs = seconds_since(t0);
  return {wins >= 2 && secs < 1800.0,
          fmt("intra >= inter in %d/3 seeds (%s), %.0f s", wins, rows_detail(rows).c_str(), secs)};
}

Outcome ablation_crops() {
  const auto t0 = std::chrono::steady_clock::now();
  auto s = ablation_setup();
  s.cfg.strategies = {Strategy::intra};
  s.cfg.crops = {5, 15};
  const auto rows = ablate(s.corpus, s.probe_set, s.cfg);
  int wins = 0;
  for (std::size_t n = 0; n < s.cfg.seeds.size(); ++n) wins += rows[n + s.cfg.seeds.size()].micro_dice >= rows[n].micro_dice;
  const double secs = seconds_since(t0);
  return {wins >= 2 && secs < 1800.0,
          fmt("M=15 >= M=5 in %d/3 seeds (%s), %.0f s", wins, rows_detail(rows).c_str(), secs)};
}

// ---------------------------------------------------------------------------

Outcome retrieval_oracle() {
  std::mt19937_64 rng(2);
  int store_mismatch = 0;
  for (int t = 0; t < 100; ++t) {
    const int n = std::uniform_int_distribution<int>(1, 256)(rng), dim = std::uniform_int_distribution<int>(1, 32)(rng);
    const int k = std::uniform_int_distribution<int>(1, n)(rng);
    // A coarse value grid makes exact similarity ties common.
    std::uniform_int_distribution<int> q(-2, 2);
    EmbeddingStore store;
    store.dim = dim;
    std::vector<std::vector<float>> vecs;
    std::vector<std::uint64_t> ids;
    for (int r = 0; r < n; ++r) {
      EmbeddingRecord rec;
      rec.id = static_cast<std::uint64_t>(std::uniform_int_distribution<int>(0, 1 << 20)(rng)) * 256 + r;
      for (int d = 0; d < dim; ++d) rec.vector.push_back(t % 2 ? static_cast<float>(q(rng)) : std::normal_distribution<float>()(rng));
      vecs.push_back(rec.vector);
      ids.push_back(rec.id);
      store.add(std::move(rec));
    }
    std::vector<float> query(static_cast<std::size_t>(dim));
    for (auto& x : query) x = t % 2 ? static_cast<float>(q(rng)) : std::normal_distribution<float>()(rng);
    const auto got = topk_search(query, store, k);
    const auto want = oracle::topk(query, vecs, ids, k);
    bool same = got.size() == want.size();
    for (std::size_t i = 0; same && i < got.size(); ++i)
      same = got[i].id == want[i].id && std::abs(got[i].similarity - want[i].similarity) <= 1e-6;
    store_mismatch += !same;
  }
  int metric_mismatch = 0;
  for (int t = 0; t < 1000; ++t) {
    const int len = std::uniform_int_distribution<int>(1, 40)(rng), k = std::uniform_int_distribution<int>(1, len)(rng);
    std::vector<std::int32_t> ranked(static_cast<std::size_t>(len));
    for (auto& l : ranked) l = std::uniform_int_distribution<int>(0, 4)(rng);
    const int query = std::uniform_int_distribution<int>(0, 4)(rng);
    const auto in_top = static_cast<std::size_t>(std::count(ranked.begin(), ranked.begin() + k, query));
    const std::size_t corpus = in_top + static_cast<std::size_t>(std::uniform_int_distribution<int>(0, 6)(rng));
    const auto got = retrieval_metrics(query, ranked, corpus, k);
    const auto want = oracle::retrieval(query, std::vector<int>(ranked.begin(), ranked.end()), corpus, k);
    metric_mismatch += !(got.precision_at_k == want.precision && got.average_precision_at_k == want.ap &&
                         got.hit_rate == want.hit && got.recall_at_k == want.recall && got.f1 == want.f1);
  }
  return {store_mismatch == 0 && metric_mismatch == 0,
          fmt("top-k mismatches %d/100 stores, metric mismatches %d/1000 trials", store_mismatch, metric_mismatch)};
}

SegmentationMask random_mask(const Index3& shape, std::mt19937_64& rng) {
  SegmentationMask m(shape);
  const double p = std::uniform_real_distribution<double>(0.05, 0.6)(rng);
  std::bernoulli_distribution fg(p);
  std::uniform_int_distribution<int> label(1, 3);
  for (auto& l : m.labels) l = fg(rng) ? label(rng) : 0;
  return m;
}

Outcome metric_oracles() {
  std::mt19937_64 rng(3);
  int dice_bad = 0, asd_bad = 0, auc_bad = 0, f1_bad = 0, asd_pairs = 0;
  std::uniform_int_distribution<int> ext(1, 12);
  const std::vector<Vec3> spacings{{1, 1, 1}, {2.5, 0.8, 0.8}, {0.7, 1.3, 3.1}};
  for (int t = 0; t < 200; ++t) {
    const Index3 shape{ext(rng), ext(rng), ext(rng)};
    const auto a = random_mask(shape, rng), b = random_mask(shape, rng);
    for (std::int32_t l = 0; l <= 3; ++l) dice_bad += dice(a, b, l) != oracle::dice(a.labels, b.labels, l);
    const auto any = [](const SegmentationMask& m) {
      return std::any_of(m.labels.begin(), m.labels.end(), [](std::int32_t x) { return x != 0; });
    };
    if (any(a) && any(b)) {
      const auto& sp = spacings[static_cast<std::size_t>(t) % spacings.size()];
      asd_bad += asd(a, b, sp) != oracle::asd(a, b, sp);
      ++asd_pairs;
    }
  }
  for (int t = 0; t < 1000; ++t) {
    const int n = std::uniform_int_distribution<int>(2, 80)(rng);
    std::vector<double> s(static_cast<std::size_t>(n));
    std::vector<int> y(static_cast<std::size_t>(n)), p(static_cast<std::size_t>(n));
    for (auto& x : s) x = t % 2 ? std::uniform_int_distribution<int>(0, 5)(rng) / 5.0 : std::normal_distribution<double>()(rng);
    for (auto& l : y) l = std::uniform_int_distribution<int>(0, 1)(rng);
    for (auto& l : p) l = std::uniform_int_distribution<int>(0, 1)(rng);
    y[0] = 0;
    y[1] = 1;
    auc_bad += auc_roc(s, y) != oracle::auc(s, y);
    f1_bad += f1_binary(p, y) != oracle::f1(p, y);
  }
  SegmentationMask ha({3, 1, 1}), hb({3, 1, 1});
  ha.at(0, 0, 0) = 1;
  hb.at(2, 0, 0) = 1;
  const double hand = asd(ha, hb, {1.5, 1.0, 1.0});
  return {dice_bad + asd_bad + auc_bad + f1_bad == 0 && hand == 3.0,
          fmt("mismatches: dice %d/800, asd %d/%d, auc %d/1000, f1 %d/1000; two-voxel ASD %.17g mm", dice_bad, asd_bad,
              asd_pairs, auc_bad, f1_bad, hand)};
}

// ---------------------------------------------------------------------------
// Encoders shared by the analytics checks, trained once per seed.

EncoderConfig analytics_encoder() {
  EncoderConfig c;
  c.patch = {16, 16, 16};
  c.stages = 2;
  c.base_channels = 4;
  c.embed_dim = 8;
  c.proj_dim = 8;
  return c;
}

TrainConfig analytics_training(std::uint64_t seed) {
  TrainConfig t;
  t.epochs = 1;
  t.steps_per_epoch = 60;
  t.warmup_epochs = 0;
  t.base_lr = 1e-3;
  t.batch.scans_per_batch = 4;
  t.batch.patches_per_scan = 8;
  t.seed = seed;
  return t;
}

/// Adds a ball of `hu` with radius r voxels at `center`.
void plant_ball(Volume& v, const Vec3& center, double r, float hu) {
  for (int i = 0; i < v.shape[0]; ++i)
    for (int j = 0; j < v.shape[1]; ++j)
      for (int k = 0; k < v.shape[2]; ++k) {
        const double dz = i + 0.5 - center[0], dy = j + 0.5 - center[1], dx = k + 0.5 - center[2];
        if (dz * dz + dy * dy + dx * dx <= r * r) v.at(i, j, k) = hu;
      }
}

const EncoderState<float>& trained_encoder(std::uint64_t seed) {
  static std::map<std::uint64_t, EncoderState<float>> cache;
  if (const auto it = cache.find(seed); it != cache.end()) return it->second;
  const auto spec = default_phantom_spec({32, 32, 32});
  std::vector<Scan> scans;
  std::mt19937_64 rng(derive_seed(seed, 0x42414c4cULL));
  std::uniform_real_distribution<double> pos(6.0, 26.0);
  for (std::uint64_t n = 0; n < 16; ++n) {
    auto v = generate_phantom(spec, derive_seed(seed, 500 + n)).first;
    plant_ball(v, {pos(rng), pos(rng), pos(rng)}, 3.0, 1500.0f);
    scans.push_back({n, std::move(v)});
  }
  return cache.emplace(seed, pretrain(scans, analytics_encoder(), analytics_training(seed)).state).first->second;
}

/// Phantom whose organ layout is translated by `offset` voxels, with a
/// unique bright ball planted at `ball` + `offset`.
Volume shifted_phantom(const Index3& shape, const Index3& offset, const Vec3& ball, std::uint64_t seed) {
  auto spec = default_phantom_spec(shape);
  for (auto& o : spec.organs)
    for (int a = 0; a < 3; ++a) o.center_frac[a] += static_cast<double>(offset[a]) / shape[a];
  auto v = generate_phantom(spec, seed).first;
  plant_ball(v, {ball[0] + offset[0], ball[1] + offset[1], ball[2] + offset[2]}, 3.0, 1500.0f);
  return v;
}

Outcome semantic_search_localization() {
  const Index3 shape{40, 40, 40}, box{16, 16, 16}, stride{4, 4, 4};
  const std::vector<Index3> offsets{{3, -5, 6}, {-7, 2, 0}, {5, 5, -4}};
  int worst = 0;
  std::string errs;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const BackboneEmbedder emb(trained_encoder(seed));
    const auto& d = offsets[seed];
    const Vec3 ball{20.0 - d[0], 20.0 - d[1], 20.0 - d[2]};
    const auto src = shifted_phantom(shape, {0, 0, 0}, ball, derive_seed(seed, 1));
    const Scan tgt{1, shifted_phantom(shape, d, ball, derive_seed(seed, 2))};
    const Index3 center{static_cast<int>(ball[0]), static_cast<int>(ball[1]), static_cast<int>(ball[2])};
    const auto r = semantic_search(emb, src, center, box, std::span<const Scan>(&tgt, 1), stride).front();
    const auto q = query_corner(shape, center, box);
    int e = 0;
    for (int a = 0; a < 3; ++a) e = std::max(e, std::abs(r.best_position[a] - (q[a] + d[a])));
    worst = std::max(worst, e);
    errs += fmt("%s%d", errs.empty() ? "" : ",", e);
  }

  // Exhaustive comparison at stride 1 on a 24^3 target.
  const BackboneEmbedder emb(trained_encoder(0));
  const Index3 small{24, 24, 24}, qbox{8, 8, 8};
  const auto src = shifted_phantom(small, {0, 0, 0}, {12, 12, 12}, 11);
  const Scan tgt{0, shifted_phantom(small, {2, -3, 1}, {12, 12, 12}, 12)};
  const auto query = emb(crop(src, query_corner(small, {12, 12, 12}, qbox), qbox));
  const auto hm = heatmap(emb, query, tgt, qbox, {1, 1, 1});
  std::size_t n = 0, bad = 0;
  Index3 best{};
  double best_s = -2;
  for (int i = 0; i + qbox[0] <= small[0]; ++i)
    for (int j = 0; j + qbox[1] <= small[1]; ++j)
      for (int k = 0; k + qbox[2] <= small[2]; ++k, ++n) {
        const double s = cosine(query, emb(crop(tgt.volume, {i, j, k}, qbox)));
        bad += n >= hm.similarity.size() || hm.similarity[n] != s;
        if (s > best_s) {
          best_s = s;
          best = {i, j, k};
        }
      }
  const bool exhaustive = bad == 0 && n == hm.similarity.size() && hm.best_position == best;
  return {worst <= stride[0] && exhaustive,
          fmt("max per-axis error %s voxels (stride %d); stride-1 heatmap vs exhaustive: %zu/%zu windows differ, "
              "argmax %s",
              errs.c_str(), stride[0], bad, n, hm.best_position == best ? "equal" : "differs")};
}

Outcome ofd_sanity() {
  const auto v = generate_phantom(default_phantom_spec({32, 32, 32}), 77).first;
  const auto stub = ofd_saliency(oracle::ConstantEmbedder{}, v, {16, 16, 16}, {16, 16, 16});
  const bool zeros = std::all_of(stub.distance.begin(), stub.distance.end(), [](double d) { return d == 0.0; });
  int hits = 0;
  std::string got;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    std::mt19937_64 rng(derive_seed(seed, 0x4f4354ULL));
    const int octant = std::uniform_int_distribution<int>(0, 7)(rng);
    Volume vol(Index3{32, 32, 32}, {1, 1, 1}, {0, 0, 0}, 40.0f);
    std::normal_distribution<double> noise(0.0, 20.0);
    for (auto& x : vol.data) x = static_cast<float>(40.0 + noise(rng));
    const Vec3 c{(octant >> 2 & 1) * 16 + 8.0, (octant >> 1 & 1) * 16 + 8.0, (octant & 1) * 16 + 8.0};
    plant_ball(vol, c, 5.0, 1500.0f);
    const BackboneEmbedder emb(trained_encoder(seed));
    const auto m = ofd_saliency(emb, vol, {16, 16, 16}, {16, 16, 16});
    const auto arg = static_cast<int>(m.argmax());
    hits += arg == octant;
    got += fmt("%s%d/%d", got.empty() ? "" : " ", arg, octant);
  }
  return {zeros && hits >= 2,
          fmt("constant stub all zero: %s; argmax octant correct in %d/3 seeds (got/want %s)", zeros ? "yes" : "no", hits,
              got.c_str())};
}

Outcome stability() {
  const BackboneEmbedder emb(trained_encoder(0));
  const auto v = generate_phantom(default_phantom_spec({32, 32, 32}), 31).first;
  const auto same = test_retest(emb, v, v, {16, 16, 16}, {8, 8, 8}, 0.9);
  const bool exact = std::all_of(same.entries.begin(), same.entries.end(),
                                 [](const StabilityEntry& e) { return e.cosine == 1.0 && e.mse == 0.0; });
  std::vector<double> med;
  for (double sigma : {0.01, 0.05, 0.1})
    med.push_back(test_retest(emb, v, add_normalized_noise(v, sigma, 5), {16, 16, 16}, {8, 8, 8}, 0.9).median_cosine);
  const bool monotone = med[1] <= med[0] && med[2] <= med[1];
  return {exact && monotone,
          fmt("identical scans exact at %zu/%zu windows: %s; median cosine at sigma 0.01/0.05/0.1: %.6f %.6f %.6f",
              same.entries.size(), same.entries.size(), exact ? "yes" : "no", med[0], med[1], med[2])};
}

Outcome redundancy() {
  // Instances differ in mean intensity; noise views carry none of it.
  std::vector<Volume> vols;
  for (int n = 0; n < 8; ++n) vols.push_back(Volume({12, 12, 12}, {1, 1, 1}, {0, 0, 0}, static_cast<float>(-400 + 100 * n)));
  for (std::size_t n = 0; n < vols.size(); ++n) vols[n].data = oracle::noise_volume(vols[n].shape, n, vols[n].data[0], 20.0).data;
  const double identity =
      redundancy_ratio(std::span<const Volume>(vols), [](const Volume& v, std::uint64_t) { return v; }, 200, 1);
  const auto noise = [](const Volume& v, std::uint64_t seed) { return oracle::noise_volume(v.shape, seed, 0.0, 100.0); };
  const double independent = redundancy_ratio(std::span<const Volume>(vols), noise, 200, 2);
  return {identity == 1.0 && std::abs(independent) < 0.1,
          fmt("identity views ratio %.17g; independent noise views ratio %.4g (200 trials)", identity, independent)};
}

Outcome reproducibility() {
  std::vector<Scan> scans;
  for (std::uint64_t n = 0; n < 6; ++n) scans.push_back({n, generate_phantom(default_phantom_spec({24, 24, 24}), n).first});
  auto enc = analytics_encoder();
  enc.patch = {8, 8, 8};
  auto t = analytics_training(42);
  t.steps_per_epoch = 25;
  t.workers = 1;
  const auto a = pretrain(scans, enc, t), b = pretrain(scans, enc, t);
  bool same = a.curve.size() == b.curve.size();
  for (std::size_t n = 0; same && n < a.curve.size(); ++n)
    same = std::memcmp(&a.curve[n].loss, &b.curve[n].loss, sizeof(double)) == 0 && a.curve[n].lr == b.curve[n].lr;
  bool params = a.state.params.size() == b.state.params.size();
  for (const auto& [name, p] : a.state.params) params = params && p.values == b.state.params.at(name).values;
  return {same && params, fmt("%zu-step loss curves bit-identical: %s; final parameters identical: %s", a.curve.size(),
                              same ? "yes" : "no", params ? "yes" : "no")};
}

Outcome service() {
  std::vector<NamedVolume> vols;
  const auto spec = default_phantom_spec({32, 32, 32});
  vols.push_back({"scan_a", generate_phantom(spec, 1).first});
  vols.push_back({"scan_b", generate_phantom(spec, 2).first});
  ServiceOptions o;
  o.port = 0;
  o.ui_dir = oracle::scratch_dir("no_ui") / "missing";
  Service svc(std::move(vols), trained_encoder(0), o);
  const int port = svc.start();
  httplib::Client client("127.0.0.1", port);

  const json body{{"source_id", "scan_a"}, {"center", {16, 16, 16}}, {"box", {16, 16, 16}},
                  {"target_ids", {"scan_a", "scan_b"}}, {"stride", {8, 8, 8}}};
  double sim = -2;
  std::string status = "no response";
  if (const auto r = client.Post("/api/search", body.dump(), "application/json"); r && r->status == 202) {
    const auto id = json::parse(r->body).at("job_id").get<std::string>();
    for (int n = 0; n < 3000; ++n) {
      const auto p = client.Get("/api/search/" + id);
      if (!p) break;
      const auto j = json::parse(p->body);
      status = j.at("status").get<std::string>();
      if (status == "done") {
        sim = j.at("results")[0].at("best_similarity").get<double>();
        break;
      }
      if (status == "failed") break;
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
  }
  const auto s1 = client.Get("/api/volumes/scan_b/slice?axis=z&index=10");
  const auto s2 = client.Get("/api/volumes/scan_b/slice?axis=z&index=10");
  const bool slices = s1 && s2 && s1->status == 200 && !s1->body.empty() && s1->body == s2->body;
  const auto root = client.Get("/");
  const bool no_ui = root && root->status == 200;
  svc.stop();
  return {sim == 1.0 && slices && no_ui,
          fmt("self-match best_similarity %.17g (job %s); slice bytes identical across calls: %s; serving without UI "
              "assets: %s",
              sim, status.c_str(), slices ? "yes" : "no", no_ui ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> checks{
      {"gradient_correctness", gradient_correctness},
      {"ntxent_exactness", ntxent_exactness},
      {"ablation_intra_vs_inter", ablation_intra_vs_inter},
      {"ablation_crops", ablation_crops},
      {"retrieval_oracle", retrieval_oracle},
      {"metric_oracles", metric_oracles},
      {"semantic_search_localization", semantic_search_localization},
      {"ofd_sanity", ofd_sanity},
      {"stability", stability},
      {"redundancy", redundancy},
      {"reproducibility", reproducibility},
      {"service", service},
  };
  int failed = 0;
  for (const auto& [name, fn] : checks) {
    if (argc > 1 && std::find(argv + 1, argv + argc, name) == argv + argc) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
