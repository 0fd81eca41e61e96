#include "oracles.hpp"
#include "vqa/adapter.hpp"
#include "vqa/scene.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace vqa;
using namespace vqa::adapter;

namespace {

MatrixD random_samples(std::mt19937_64& rng, int n, int d) {
  std::normal_distribution<double> g;
  // Distinct column scales give a well-separated spectrum.
  MatrixD x(n, d);
  for (int j = 0; j < d; ++j) {
    const double s = 1.0 + 3.0 * (d - j) / d;
    for (int i = 0; i < n; ++i) x(i, j) = s * g(rng) + 0.5 * j;
  }
  MatrixD mix = MatrixD::Identity(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) mix(i, j) += 0.1 * g(rng);
  return x * mix;
}

double relative_gap(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

}  // namespace

struct Table2Row {
  std::string profile;
  int budget;
  int tokens;
  int dim;
  DimensionMode mode;
};

class Table2 : public ::testing::TestWithParam<Table2Row> {};

TEST_P(Table2, PlanReproducesShape) {
  const auto& row = GetParam();
  const auto& profile = find_profile(row.profile);
  const auto plan = plan_adaptation(profile.native, MemoryRegime{row.budget, 10}, profile);
  EXPECT_EQ(plan.tokens, row.tokens);
  EXPECT_EQ(plan.dim, row.dim);
  EXPECT_EQ(plan.mode, row.mode);
  EXPECT_LE(plan.tokens * plan.dim, row.budget);
  EXPECT_GT(plan.tokens * (plan.dim + 1), row.budget);
}

INSTANTIATE_TEST_SUITE_P(
    Appendix, Table2,
    ::testing::Values(Table2Row{"gt", 100, 10, 10, DimensionMode::pad},
                      Table2Row{"slot_attention", 100, 11, 9, DimensionMode::compress},
                      Table2Row{"resnet50", 100, 16, 6, DimensionMode::compress},
                      Table2Row{"raw", 100, 9, 11, DimensionMode::compress},
                      Table2Row{"gt", 1000, 10, 100, DimensionMode::pad},
                      Table2Row{"slot_attention", 1000, 11, 90, DimensionMode::pad},
                      Table2Row{"resnet50", 1000, 16, 62, DimensionMode::compress},
                      Table2Row{"raw", 1000, 9, 111, DimensionMode::compress}));

TEST(Plan, BudgetLawForEveryProfile) {
  for (const auto& p : default_profiles())
    for (int budget : {100, 1000, 250, 17}) {
      const auto plan = plan_adaptation(p.native, MemoryRegime{budget, 10}, p);
      EXPECT_LE(plan.budget_used(), budget) << p.name;
      EXPECT_GT(plan.tokens * (plan.dim + 1), budget) << p.name;
    }
}

TEST(Plan, Errors) {
  const auto& p = find_profile("resnet50");
  EXPECT_THROW(plan_adaptation(p.native, MemoryRegime{10, 10}, p), AdapterError);
  EXPECT_THROW(plan_adaptation(EncoderGeometry::objects(11, 64), MemoryRegime{100, 10}, p), ConfigError);
  EXPECT_THROW(MemoryRegime({5, 10}).validate(), ConfigError);
  EXPECT_THROW(find_profile("nope"), ConfigError);
}

TEST(Pool, IdentityAndConstant) {
  std::mt19937_64 rng(1);
  const MatrixD x = random_samples(rng, 9, 4);
  const auto same = adaptive_avg_pool<double>(x, 3, 3, 3);
  EXPECT_EQ(same.tokens, x);
  EXPECT_EQ(same.coords[5], (GridCoord{1, 2}));
  const MatrixD c = MatrixD::Constant(16, 3, 2.5);
  const auto pooled = adaptive_avg_pool<double>(c, 4, 4, 2);
  EXPECT_TRUE(pooled.tokens.isApprox(MatrixD::Constant(4, 3, 2.5)));
  EXPECT_THROW(adaptive_avg_pool<double>(c, 4, 4, 5), AdapterError);
}

TEST(Pool, MatchesLoopOracle) {
  std::mt19937_64 rng(2);
  const int h = 7, w = 7, g = 4, d = 3;
  const MatrixD x = random_samples(rng, h * w, d);
  const auto pooled = adaptive_avg_pool<double>(x, h, w, g);
  for (int i = 0; i < g; ++i)
    for (int j = 0; j < g; ++j)
      for (int c = 0; c < d; ++c) {
        double s = 0.0;
        int n = 0;
        for (int r = 0; r < h; ++r)
          for (int q = 0; q < w; ++q)
            if (r >= (i * h) / g && r < ((i + 1) * h) / g && q >= (j * w) / g && q < ((j + 1) * w) / g) {
              s += x(r * w + q, c);
              ++n;
            }
        EXPECT_NEAR(pooled.tokens(i * g + j, c), s / n, 1e-6);
      }
}

TEST(Pool, Linearity) {
  std::mt19937_64 rng(3);
  const MatrixD x = random_samples(rng, 14 * 14, 5), y = random_samples(rng, 14 * 14, 5);
  const double a = 0.7, b = -2.3;
  const MatrixD lhs = adaptive_avg_pool<double>(a * x + b * y, 14, 14, 4).tokens;
  const MatrixD rhs = a * adaptive_avg_pool<double>(x, 14, 14, 4).tokens + b * adaptive_avg_pool<double>(y, 14, 14, 4).tokens;
  EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(PCA, AxisAlignedVariance) {
  MatrixD x = MatrixD::Zero(50, 4);
  for (int i = 0; i < 50; ++i) x(i, 0) = (i % 2 ? -1.0 : 1.0) * (1 + i % 5);
  const auto m = fit_pca<double>(x, 2);
  EXPECT_NEAR(m.components(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(m.components.row(0).tail(3).norm(), 0.0, 1e-12);
  EXPECT_EQ(m.rank, 1);
  EXPECT_TRUE(m.rank_deficient);
  EXPECT_NEAR((m.components * m.components.transpose() - MatrixD::Identity(2, 2)).norm(), 0.0, 1e-6);
  EXPECT_EQ(m.explained_variance(1), 0.0);
}

TEST(PCA, MatchesJacobiOracle) {
  std::mt19937_64 rng(4);
  for (auto [n, d, k] : std::vector<std::tuple<int, int, int>>{{200, 30, 5}, {60, 50, 10}, {51, 50, 50}, {80, 8, 3}}) {
    const MatrixD x = random_samples(rng, n, d);
    const auto m = fit_pca<double>(x, k);
    const auto ref = oracle::reference_pca(x, k);
    const double err = oracle::reconstruction_error(x, m.mean, m.components);
    const double ref_err = oracle::reconstruction_error(x, ref.mean, ref.components);
    if (k == d) {
      EXPECT_LT(err, 1e-8 * x.norm());
    } else {
      EXPECT_LT(relative_gap(err, ref_err), 1e-8) << n << "x" << d << " -> " << k;
    }
    EXPECT_LT((m.components * m.components.transpose() - MatrixD::Identity(k, k)).cwiseAbs().maxCoeff(), 1e-6);
    for (int i = 1; i < k; ++i) EXPECT_LE(m.explained_variance(i), m.explained_variance(i - 1));
    for (int i = 0; i < k; ++i) EXPECT_NEAR(m.explained_variance(i), ref.variance(i), 1e-8 * ref.variance(0));
  }
}

TEST(PCA, SignConventionAndDeterminism) {
  std::mt19937_64 rng(5);
  const MatrixD x = random_samples(rng, 100, 12);
  const auto a = fit_pca<double>(x, 6), b = fit_pca<double>(x, 6);
  EXPECT_EQ(a.components, b.components);
  for (int r = 0; r < 6; ++r) {
    Eigen::Index idx;
    a.components.row(r).cwiseAbs().maxCoeff(&idx);
    EXPECT_GT(a.components(r, idx), 0.0);
  }
}

TEST(PCA, FullRankReconstructs) {
  std::mt19937_64 rng(6);
  const MatrixD x = random_samples(rng, 40, 6);
  const auto m = fit_pca<double>(x, 6);
  EXPECT_LT((m.reconstruct(m.project(x)) - x).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(PCA, StreamingAccumulatorAgrees) {
  std::mt19937_64 rng(7);
  const MatrixD x = random_samples(rng, 300, 10);
  CovarianceAccumulator acc(10);
  for (int i = 0; i < 300; i += 37) acc.add(x.middleRows(i, std::min(37, 300 - i)));
  const auto streamed = fit_pca(acc, 4);
  const auto direct = fit_pca<double>(x, 4);
  EXPECT_LT((streamed.components - direct.components).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((streamed.mean - direct.mean).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(PCA, Errors) {
  const MatrixD x = MatrixD::Random(5, 4);
  EXPECT_THROW(fit_pca<double>(x, 5), AdapterError);
  EXPECT_THROW(fit_pca<double>(x, 0), AdapterError);
  EXPECT_THROW(fit_pca<double>(MatrixD::Random(3, 4), 3), AdapterError);
}

TEST(PCA, FileRoundTrip) {
  std::mt19937_64 rng(8);
  const auto m = fit_pca<double>(random_samples(rng, 50, 9), 4);
  const auto path = std::filesystem::temp_directory_path() / "vqa_pca_roundtrip.bin";
  save_pca(m, path);
  const auto back = load_pca(path);
  EXPECT_EQ(back.components, m.components);
  EXPECT_EQ(back.mean, m.mean);
  EXPECT_EQ(pca_checksum(back), pca_checksum(m));
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 8);
  EXPECT_THROW(load_pca(path), DataError);
  std::filesystem::remove(path);
}

TEST(Apply, GroundTruthPadsToTen) {
  const auto& p = find_profile("gt");
  const auto plan = plan_adaptation(p.native, MemoryRegime{100, 10}, p);
  const auto gt = scene::encode_ground_truth(scene::sample_scene(3, 3));
  const auto seq = apply_adapter(plan, nullptr, gt.matrix, gt.valid);
  EXPECT_EQ(seq.tokens.rows(), 10);
  EXPECT_EQ(seq.tokens.cols(), 10);
  EXPECT_EQ(seq.tokens.leftCols(7), gt.matrix);
  EXPECT_TRUE(seq.tokens.rightCols(3).isZero(0.0f));
  EXPECT_TRUE(seq.coords.empty());
  EXPECT_EQ(seq.valid, gt.valid);
}

TEST(Apply, GridCompressesWithCoords) {
  const auto& p = find_profile("resnet50");
  const auto plan = plan_adaptation(p.native, MemoryRegime{1000, 10}, p);
  std::srand(9);
  CovarianceAccumulator acc(2048);
  std::vector<MatrixF> natives;
  for (int i = 0; i < 6; ++i) {
    natives.push_back(MatrixF::Random(49, 2048));
    acc.add(pool_native(plan, natives.back()));
  }
  const auto pca = fit_pca(acc, plan.dim);
  const auto seq = apply_adapter(plan, &pca, natives[0]);
  EXPECT_EQ(seq.tokens.rows(), 16);
  EXPECT_EQ(seq.tokens.cols(), 62);
  ASSERT_EQ(seq.coords.size(), 16u);
  EXPECT_EQ(seq.coords[15], (GridCoord{3, 3}));
  EXPECT_THROW(apply_adapter(plan, nullptr, natives[0]), AdapterError);
}

TEST(Apply, IdentityPlanIsIdempotent) {
  const EncoderProfile p{"unit", EncoderGeometry::objects(10, 10), 0, false};
  const auto plan = plan_adaptation(p.native, MemoryRegime{100, 10}, p);
  EXPECT_EQ(plan.mode, DimensionMode::identity);
  const MatrixF x = MatrixF::Random(10, 10);
  const auto once = apply_adapter(plan, nullptr, x);
  const auto twice = apply_adapter(plan, nullptr, once.tokens);
  EXPECT_EQ(twice.tokens, x);
}
