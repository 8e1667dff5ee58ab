#include <cmath>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "support/expect.hpp"
#include "support/oracles.hpp"
#include "voxelfm/phantom.hpp"
#include "voxelfm/semantics.hpp"

using namespace voxelfm;

namespace {

EncoderState<float> tiny_state(std::uint64_t seed = 0) {
  EncoderConfig c;
  c.patch = {4, 4, 4};
  c.stages = 1;
  c.base_channels = 6;
  c.embed_dim = 6;
  c.proj_dim = 4;
  auto s = init_encoder<float>(c, seed);
  for (auto& [name, p] : s.params)
    if (name.ends_with("bias"))
      for (auto& b : p.values) b = 0.05f;
  return s;
}

/// target(i, j, k) = source(i - d0, j - d1, k - d2), vacated voxels = fill.
Volume shifted(const Volume& v, Index3 d, float fill) {
  Volume out(v.shape, v.spacing_mm, v.origin_mm, fill);
  for (int i = 0; i < v.shape[0]; ++i)
    for (int j = 0; j < v.shape[1]; ++j)
      for (int k = 0; k < v.shape[2]; ++k)
        if (v.contains(i - d[0], j - d[1], k - d[2])) out.at(i, j, k) = v.at(i - d[0], j - d[1], k - d[2]);
  return out;
}

}  // namespace

TEST(Search, SelfMatchAtStrideOne) {
  const auto st = tiny_state();
  const BackboneEmbedder emb(st);
  const auto v = oracle::noise_volume({12, 12, 12}, 3, 0.0, 400.0);
  const Index3 center{6, 5, 7}, box{4, 4, 4};
  const Scan t{1, v};
  const auto r = semantic_search(emb, v, center, box, std::span<const Scan>(&t, 1), {1, 1, 1});
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].best_similarity, 1.0);
  EXPECT_EQ(r[0].best_position, query_corner(v.shape, center, box));
  EXPECT_EQ(r[0].target_scan_id, 1u);
}

TEST(Search, FollowsTranslatedContent) {
  const auto st = tiny_state(1);
  const BackboneEmbedder emb(st);
  const auto src = oracle::noise_volume({12, 12, 20}, 5, 0.0, 400.0);
  const auto dst = shifted(src, {0, 0, 8}, 0.0f);
  const Index3 center{6, 6, 5}, box{4, 4, 4};
  const Scan t{2, dst};
  const auto r = semantic_search(emb, src, center, box, std::span<const Scan>(&t, 1), {1, 1, 1}).front();
  auto expected = query_corner(src.shape, center, box);
  expected[2] += 8;
  EXPECT_EQ(r.best_position, expected);
  EXPECT_EQ(r.best_similarity, 1.0);
}

TEST(Search, ConstantEmbedderTiesToFirstWindow) {
  const Scan t{0, oracle::noise_volume({10, 10, 10}, 1)};
  const auto r = semantic_search(oracle::ConstantEmbedder{}, t.volume, {5, 5, 5}, {4, 4, 4},
                                 std::span<const Scan>(&t, 1), {2, 2, 2})
                     .front();
  for (double s : r.similarity) EXPECT_EQ(s, 1.0);
  EXPECT_EQ(r.best_position, (Index3{0, 0, 0}));
}

TEST(Search, HeatmapEqualsExhaustiveComparison) {
  const auto st = tiny_state(2);
  const BackboneEmbedder emb(st);
  const Scan target{0, oracle::noise_volume({14, 12, 13}, 9, 0.0, 300.0)};
  const auto source = oracle::noise_volume({10, 10, 10}, 10, 0.0, 300.0);
  const Index3 box{5, 4, 6};
  const auto query = emb(crop(source, query_corner(source.shape, {4, 4, 4}, box), box));
  const auto hm = heatmap(emb, query, target, box, {1, 1, 1});
  std::size_t n = 0;
  Index3 best{};
  double best_s = -2;
  for (int i = 0; i + box[0] <= 14; ++i)
    for (int j = 0; j + box[1] <= 12; ++j)
      for (int k = 0; k + box[2] <= 13; ++k, ++n) {
        const double s = oracle::cosine(query, emb(crop(target.volume, {i, j, k}, box)));
        ASSERT_LT(n, hm.similarity.size());
        EXPECT_NEAR(hm.similarity[n], s, 1e-12);
        if (s > best_s) {
          best_s = s;
          best = {i, j, k};
        }
      }
  EXPECT_EQ(n, hm.similarity.size());
  EXPECT_EQ(hm.best_position, best);
  EXPECT_NEAR(hm.best_similarity, best_s, 1e-12);
}

TEST(Search, Errors) {
  const Volume v({8, 8, 8});
  EXPECT_ERROR_CODE(semantic_search(oracle::ConstantEmbedder{}, v, {4, 4, 4}, {4, 4, 4}, std::span<const Scan>{},
                                    {1, 1, 1}),
                    ErrorCode::empty_input);
  EXPECT_ERROR_CODE(query_corner({8, 8, 8}, {8, 0, 0}, {2, 2, 2}), ErrorCode::invalid_argument);
  EXPECT_ERROR_CODE(query_corner({8, 8, 8}, {1, 1, 1}, {9, 2, 2}), ErrorCode::no_valid_placement);
}

namespace {

PhantomSpec single_organ(Vec3 center) {
  PhantomSpec s;
  s.shape = {24, 24, 40};
  s.background_hu = -1000;
  s.organs = {{1, OrganGeometry::ellipsoid, center, {0.2, 0.2, 0.12}, 300.0, 0.0}};
  return s;
}

}  // namespace

TEST(Ocd, SelfMatchWithinQuantization) {
  const auto st = tiny_state(3);
  const BackboneEmbedder emb(st);
  auto [v, m] = generate_phantom(default_phantom_spec({16, 16, 16}), 4);
  const auto r = ocd(emb, v, m, v, m, 2, {8, 8, 8}, {1, 1, 1});
  EXPECT_EQ(r.best_similarity, 1.0);
  // Centroid rounding plus the half-voxel offset of an even box, per axis.
  EXPECT_LE(r.distance_cm, std::sqrt(3.0) * 1.0 / 10.0);
}

TEST(Ocd, PlantedDisplacement) {
  const auto st = tiny_state(4);
  const BackboneEmbedder emb(st);
  // 24 mm along x at 1 mm spacing on a 40-voxel axis.
  auto [a, ma] = generate_phantom(single_organ({0.5, 0.5, 0.35}), 0);
  auto [b, mb] = generate_phantom(single_organ({0.5, 0.5, 0.35 + 24.0 / 40.0}), 0);
  const int stride = 2;
  const auto r = ocd(emb, a, ma, b, mb, 1, {8, 8, 8}, {stride, stride, stride});
  const double quant = std::sqrt(3.0) * (stride / 2.0 + 1.0) / 10.0;
  EXPECT_LE(r.distance_cm, 2.4 + quant);
  EXPECT_ERROR_CODE(ocd(emb, a, ma, b, mb, 7, {8, 8, 8}, {2, 2, 2}), ErrorCode::not_found);
}

TEST(Pca, AxisAlignedVariances) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(6, 5);
  x(0, 1) = std::sqrt(10.0);
  x(1, 1) = -std::sqrt(10.0);
  x(2, 3) = std::sqrt(5.0);
  x(3, 3) = -std::sqrt(5.0);
  x(4, 0) = std::sqrt(2.5);
  x(5, 0) = -std::sqrt(2.5);
  x.rowwise() += Eigen::RowVectorXd::LinSpaced(5, 1, 5);
  const auto p = pca3(x);
  EXPECT_NEAR(p.explained_variance[0], 4, 1e-12);
  EXPECT_NEAR(p.explained_variance[1], 2, 1e-12);
  EXPECT_NEAR(p.explained_variance[2], 1, 1e-12);
  EXPECT_NEAR(p.components(0, 1), 1, 1e-12);
  EXPECT_NEAR(p.components(1, 3), 1, 1e-12);
  EXPECT_NEAR(p.components(2, 0), 1, 1e-12);
  const Eigen::RowVectorXd at_mean = (p.mean - p.mean) * p.components.transpose();
  EXPECT_EQ(at_mean.norm(), 0.0);
  EXPECT_ERROR_CODE(pca3(Eigen::MatrixXd::Ones(5, 4)), ErrorCode::zero_variance);
}

TEST(PcaMap, TwoTissuesGiveTwoColours) {
  Volume v({8, 8, 8}, {1, 1, 1}, {0, 0, 0}, -800.0f);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j)
      for (int k = 4; k < 8; ++k) v.at(i, j, k) = 200.0f;
  const std::vector<Volume> vols{v};
  const auto r = pca_cielab_map(oracle::MomentEmbedder{}, std::span<const Volume>(vols), {4, 4, 4}, {4, 4, 4});
  std::set<std::array<std::uint8_t, 3>> colours;
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j)
      for (int k = 0; k < 8; ++k) colours.insert(r.overlays[0].at(i, j, k));
  EXPECT_EQ(colours.size(), 2u);
  EXPECT_EQ(r.overlays[0].at(0, 0, 0), (std::array<std::uint8_t, 3>{0, 0, 0}));
}

TEST(PcaMap, SharedStructureSharesColour) {
  const auto a = oracle::noise_volume({12, 12, 12}, 1, 0.0, 300.0);
  auto b = oracle::noise_volume({12, 12, 12}, 2, 100.0, 500.0);
  for (int i = 4; i < 8; ++i)
    for (int j = 4; j < 8; ++j)
      for (int k = 4; k < 8; ++k) b.at(i, j, k) = a.at(i, j, k);
  const std::vector<Volume> vols{a, b};
  const auto r = pca_cielab_map(oracle::MomentEmbedder{}, std::span<const Volume>(vols), {4, 4, 4}, {4, 4, 4});
  const auto ca = r.overlays[0].at(5, 5, 5), cb = r.overlays[1].at(5, 5, 5);
  EXPECT_LT(delta_e76(srgb_to_lab(ca), srgb_to_lab(cb)), 5.0);
  const std::vector<Volume> flat{Volume({8, 8, 8})};
  EXPECT_ERROR_CODE(pca_cielab_map(oracle::MomentEmbedder{}, std::span<const Volume>(flat), {4, 4, 4}, {4, 4, 4}),
                    ErrorCode::zero_variance);
}

TEST(Colour, LabRoundTrip) {
  for (const Lab lab : {Lab{50, 10, -20}, Lab{80, -30, 40}, Lab{30, 0, 0}}) {
    const auto back = srgb_to_lab(lab_to_srgb(lab));
    EXPECT_LT(delta_e76(lab, back), 1.0);
  }
  EXPECT_EQ(lab_to_srgb({0, 0, 0}), (std::array<std::uint8_t, 3>{0, 0, 0}));
  EXPECT_NEAR(otsu_threshold({0, 0, 0, 10, 10}), 5.0, 1e-12);
}

TEST(Saliency, CountsAndConstantStub) {
  const auto v = oracle::noise_volume({16, 16, 16}, 4);
  const auto m = ofd_saliency(oracle::ConstantEmbedder{}, v, {8, 8, 8}, {8, 8, 8});
  ASSERT_EQ(m.distance.size(), 8u);
  for (double d : m.distance) EXPECT_EQ(d, 0.0);
}

TEST(Saliency, OccludingFillValuedRegionIsFree) {
  const auto st = tiny_state(5);
  const BackboneEmbedder emb(st);
  auto v = oracle::noise_volume({16, 16, 16}, 6, 0.0, 300.0);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j)
      for (int k = 0; k < 8; ++k) v.at(i, j, k) = -900.0f;
  const auto m = ofd_saliency(emb, v, {8, 8, 8}, {8, 8, 8}, -900.0);
  EXPECT_EQ(m.distance[0], 0.0);
  for (double d : m.distance) EXPECT_GE(d, 0.0);
  EXPECT_GT(*std::max_element(m.distance.begin(), m.distance.end()), 0.0);
}

TEST(Stability, IdenticalScansAndNoiseSweep) {
  const auto st = tiny_state(6);
  const BackboneEmbedder emb(st);
  const auto v = generate_phantom(default_phantom_spec({16, 16, 16}), 8).first;
  const auto same = test_retest(emb, v, v, {8, 8, 8}, {4, 4, 4}, 0.9);
  ASSERT_EQ(same.entries.size(), 27u);
  for (const auto& e : same.entries) {
    EXPECT_EQ(e.cosine, 1.0);
    EXPECT_EQ(e.mse, 0.0);
    EXPECT_FALSE(e.outlier);
  }
  EXPECT_TRUE(same.outliers.empty());
  double prev = 1.0;
  for (double sigma : {0.01, 0.05, 0.1}) {
    const auto r = test_retest(emb, v, add_normalized_noise(v, sigma, 1), {8, 8, 8}, {4, 4, 4}, 0.9);
    EXPECT_LE(r.median_cosine, prev) << sigma;
    prev = r.median_cosine;
  }
  EXPECT_ERROR_CODE(test_retest(emb, v, Volume({16, 16, 8}), {8, 8, 8}, {4, 4, 4}, 0.9), ErrorCode::shape_mismatch);
  std::ostringstream os;
  write_stability_csv(os, same);
  EXPECT_EQ(os.str().rfind("zi,yi,xi,cosine,mse,outlier\n0,0,0,1,0,0\n", 0), 0u);
}
