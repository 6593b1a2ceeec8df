#include <gtest/gtest.h>

#include <cmath>
#include <mutex>
#include <set>

#include "itac/evalx.hpp"
#include "itac/factors.hpp"
#include "itac/random.hpp"
#include "itac/select.hpp"

using namespace itac;

namespace {

LossSeries losses(std::vector<double> v) { return {std::move(v), std::nullopt}; }

// Losses a, b with a - b = d and b strictly positive.
std::pair<LossSeries, LossSeries> from_differential(const std::vector<double>& d) {
  std::vector<double> a(d.size()), b(d.size());
  for (std::size_t t = 0; t < d.size(); ++t) {
    b[t] = 10.0;
    a[t] = 10.0 + d[t];
  }
  return {losses(a), losses(b)};
}

AlignedDataset dataset(Matrix x, Vector y, YearMonth start) {
  AlignedDataset d;
  d.span = {start, start.plus(static_cast<int>(x.rows()) - 1)};
  d.means = Vector::Zero(x.cols());
  d.scales = Vector::Ones(x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) d.feature_names.push_back("x" + std::to_string(j + 1));
  d.feature_categories.assign(static_cast<std::size_t>(x.cols()), "Food");
  d.features = std::move(x);
  d.target = std::move(y);
  return d;
}

// Principal-component regression scored by held-out MSE.
struct PcrFamily {
  double fit_and_score(const GridPoint& p, const AlignedDataset& train, const AlignedDataset& held, std::uint64_t) const {
    const auto k = static_cast<Eigen::Index>(p.get("components"));
    const auto model = pca_fit(train.features, k);
    const auto ols = ols_fit(pca_transform(model, train.features).values, train.target);
    return mse(held.target, ols.predict(pca_transform(model, held.features).values));
  }
  double parameter_count(const GridPoint& p, Eigen::Index width) const {
    return p.get("components") * static_cast<double>(width + 1);
  }
};

// Records every month range requested from the wrapped dataset.
struct TracingSource {
  AlignedDataset inner;
  MonthRange span;
  mutable std::vector<MonthRange> requests;
  mutable std::mutex mu;

  explicit TracingSource(AlignedDataset d) : inner(std::move(d)), span(inner.span) {}
  AlignedDataset rows_in(const MonthRange& r) const {
    std::lock_guard lock(mu);
    requests.push_back(r);
    return inner.rows_in(r);
  }
};

struct ConstantFamily {
  double score;
  double fit_and_score(const GridPoint& p, const AlignedDataset&, const AlignedDataset&, std::uint64_t) const {
    if (p.get("x") > 100.0) throw DivergenceError(3);
    return score;
  }
  double parameter_count(const GridPoint& p, Eigen::Index) const { return p.get("x"); }
};

struct DivergingFamily {
  double fit_and_score(const GridPoint&, const AlignedDataset&, const AlignedDataset&, std::uint64_t) const {
    return std::numeric_limits<double>::quiet_NaN();
  }
  double parameter_count(const GridPoint&, Eigen::Index) const { return 1.0; }
};

AlignedDataset factor_panel(std::uint64_t seed, int T, int N, int r, double idiosyncratic = 0.5) {
  Rng rng(seed);
  const Matrix f = rng.normal_matrix(T, r);
  const Matrix lambda = rng.normal_matrix(N, r);
  const Matrix x = f * lambda.transpose() + idiosyncratic * rng.normal_matrix(T, N);
  Vector beta(r);
  for (int j = 0; j < r; ++j) beta(j) = 1.0;
  const Vector y = f * beta + 0.5 * Vector(rng.normal_matrix(T, 1));
  return dataset(x, y, {2008, 1});
}

}  // namespace

TEST(Metrics, Examples) {
  Vector a(3), p(3);
  a << 1, 2, 3;
  p << 2, 2, 2;
  EXPECT_DOUBLE_EQ(mse(a, a), 0.0);
  EXPECT_NEAR(mse(a, p), 2.0 / 3.0, 1e-15);
  EXPECT_THROW(mse(a, Vector::Zero(2)), ShapeError);
  Vector z = Vector::Zero(2), q(2);
  q << 3, 4;
  EXPECT_NEAR(rmse(z, q), std::sqrt(12.5), 1e-15);
  EXPECT_NEAR(rmse(z, q), 3.5355, 1e-4);
  EXPECT_EQ(rmse(a, a), 0.0);
}

TEST(Metrics, RmseSquaredIsMse) {
  Rng rng(1);
  for (int rep = 0; rep < 200; ++rep) {
    const auto n = 1 + static_cast<Eigen::Index>(rng.below(50));
    const Vector a = 10.0 * rng.normal_matrix(n, 1), p = 10.0 * rng.normal_matrix(n, 1);
    const double m = mse(a, p);
    EXPECT_NEAR(rmse(a, p) * rmse(a, p), m, 1e-12 * std::max(1.0, m));
  }
}

TEST(Hac, MatchesHandComputedBartlett) {
  const std::vector<double> d{1, -2, 3, 0.5, -1, 2, 2, -0.5};
  const double mean = 5.0 / 8.0;
  auto g = [&](int k) {
    double s = 0.0;
    for (int t = k; t < 8; ++t) s += (d[static_cast<std::size_t>(t)] - mean) * (d[static_cast<std::size_t>(t - k)] - mean);
    return s / 8.0;
  };
  EXPECT_NEAR(hac_variance(d, 0), g(0), 1e-14);
  EXPECT_NEAR(hac_variance(d, 2), g(0) + 2.0 * (2.0 / 3.0) * g(1) + 2.0 * (1.0 / 3.0) * g(2), 1e-14);
}

TEST(DmTest, IdenticalLossesDegenerate) {
  const auto a = losses(std::vector<double>(30, 1.5));
  EXPECT_THROW(dm_test(a, a), DegenerateTestError);
  EXPECT_THROW(dm_test(losses(std::vector<double>(9, 1.0)), losses(std::vector<double>(9, 2.0))), LengthError);
}

TEST(DmTest, MatchesPlainTTestWithoutSerialCorrelation) {
  Rng rng(2);
  std::vector<double> d(5000);
  for (auto& v : d) v = 0.03 + rng.normal();
  const auto [a, b] = from_differential(d);
  const auto r = dm_test(a, b);
  double mean = 0.0, ss = 0.0;
  for (double v : d) mean += v;
  mean /= 5000.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  const double t = mean / std::sqrt(ss / 5000.0 / 5000.0);
  EXPECT_NEAR(r.statistic, t, 1e-6);
  const double p_normal = std::erfc(std::abs(t) / std::sqrt(2.0));
  EXPECT_NEAR(r.p_value, p_normal, 1e-6);
  EXPECT_EQ(r.T, 5000u);
}

TEST(DmTest, Antisymmetric) {
  Rng rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> la(60), lb(60);
    for (std::size_t t = 0; t < 60; ++t) {
      la[t] = std::pow(rng.normal(), 2);
      lb[t] = std::pow(rng.normal(0.2, 1.0), 2);
    }
    for (auto corr : {Correction::none, Correction::harvey}) {
      const auto ab = dm_test(losses(la), losses(lb), 2, corr);
      const auto ba = dm_test(losses(lb), losses(la), 2, corr);
      EXPECT_EQ(ab.statistic, -ba.statistic);
      EXPECT_NEAR(ab.p_value, ba.p_value, 1e-15);
    }
  }
}

TEST(DmTest, HarveyFactorAndStudentReference) {
  Rng rng(4);
  std::vector<double> d(40);
  for (auto& v : d) v = rng.normal(0.3, 1.0);
  const auto [a, b] = from_differential(d);
  const auto plain = dm_test(a, b, 3);
  const auto adj = dm_test(a, b, 3, Correction::harvey);
  const double T = 40.0, h = 3.0;
  EXPECT_NEAR(adj.statistic, plain.statistic * std::sqrt((T + 1 - 2 * h + h * (h - 1) / T) / T), 1e-12);
  EXPECT_EQ(adj.degrees_of_freedom, 39.0);
  // Student t is heavier-tailed than the normal, so the same statistic is less significant.
  const auto adj_h1 = dm_test(a, b, 1, Correction::harvey);
  const auto plain_h1 = dm_test(a, b, 1);
  EXPECT_NEAR(adj_h1.statistic, plain_h1.statistic * std::sqrt((T - 1.0) / T), 1e-12);
}

TEST(DmTest, StudentTailValue) {
  // t(9) two-sided 5% critical value 2.262157 from standard tables.
  const double target = 2.262157;
  // d with mean m and sample sd s: statistic = m / (s_pop / sqrt(T)) * sqrt((T-1)/T) under Harvey, h=1.
  std::vector<double> d{1, -1, 1, -1, 1, -1, 1, -1, 1, -1};
  const double s_pop = 1.0, T = 10.0;
  const double m = target / std::sqrt((T - 1.0) / T) * s_pop / std::sqrt(T);
  for (auto& v : d) v += m;
  const auto [a, b] = from_differential(d);
  const auto r = dm_test(a, b, 1, Correction::harvey);
  EXPECT_NEAR(r.statistic, target, 1e-9);
  EXPECT_NEAR(r.p_value, 0.05, 1e-6);
  const auto g = dm_test(a, b, 1, Correction::harvey, Alternative::greater);
  EXPECT_NEAR(g.p_value, 0.025, 1e-6);
  const auto l = dm_test(a, b, 1, Correction::harvey, Alternative::less);
  EXPECT_NEAR(l.p_value, 0.975, 1e-6);
}

TEST(DmTest, SizeAndPower) {
  Rng rng(5);
  int size_rej = 0, power_rej = 0;
  const int reps = 2000;
  for (int rep = 0; rep < reps; ++rep) {
    std::vector<double> d0(100), d1(100);
    for (auto& v : d0) v = rng.normal();
    for (auto& v : d1) v = rng.normal(0.5, 1.0);
    const auto [a0, b0] = from_differential(d0);
    const auto [a1, b1] = from_differential(d1);
    size_rej += dm_test(a0, b0).p_value < 0.05;
    power_rej += dm_test(a1, b1).p_value < 0.05;
  }
  EXPECT_GE(size_rej, 60);
  EXPECT_LE(size_rej, 140);
  EXPECT_GT(power_rej, 0.99 * reps);
}

TEST(GwTest, DegenerateAndShort) {
  const auto a = losses(std::vector<double>(40, 2.0));
  EXPECT_THROW(gw_test(a, a), DegenerateTestError);
  EXPECT_THROW(gw_test(losses(std::vector<double>(19, 1.0)), losses(std::vector<double>(19, 2.0))), LengthError);
  // A constant nonzero differential makes the instrument covariance singular.
  EXPECT_THROW(gw_test(losses(std::vector<double>(40, 3.0)), losses(std::vector<double>(40, 1.0))), NumericError);
}

TEST(GwTest, WaldFormAgainstHandComputation) {
  Rng rng(6);
  std::vector<double> d(30);
  for (auto& v : d) v = rng.normal(0.2, 1.0);
  const auto [a, b] = from_differential(d);
  const auto r = gw_test(a, b, 1);
  // Two instruments (1, d_{t-1}); closed-form 2x2 inverse.
  double z1 = 0, z2 = 0, s11 = 0, s12 = 0, s22 = 0;
  const double n = 29.0;
  for (std::size_t t = 1; t < 30; ++t) {
    const double u = d[t], v = d[t - 1] * d[t];
    z1 += u / n;
    z2 += v / n;
    s11 += u * u / n;
    s12 += u * v / n;
    s22 += v * v / n;
  }
  const double det = s11 * s22 - s12 * s12;
  const double stat = n * (z1 * z1 * s22 - 2 * z1 * z2 * s12 + z2 * z2 * s11) / det;
  EXPECT_NEAR(r.statistic, stat, 1e-10);
  EXPECT_EQ(r.degrees_of_freedom, 2.0);
  EXPECT_NEAR(r.p_value, std::exp(-stat / 2.0), 1e-12);  // chi-square(2) survival
}

TEST(GwTest, SizeAndPower) {
  Rng rng(7);
  int size_rej = 0, power_rej = 0;
  const int reps = 2000;
  for (int rep = 0; rep < reps; ++rep) {
    std::vector<double> ea(150), eb(150), pa(150), pb(150);
    for (std::size_t t = 0; t < 150; ++t) {
      ea[t] = std::pow(rng.normal(), 2);
      eb[t] = std::pow(rng.normal(), 2);
      pb[t] = std::pow(rng.normal(), 2);
      pa[t] = pb[t] + 0.5 + std::pow(rng.normal(), 2) - 1.0 + 0.0;
    }
    size_rej += gw_test(losses(ea), losses(eb), 1).p_value < 0.05;
    power_rej += gw_test(losses(pa), losses(pb), 1).p_value < 0.05;
  }
  EXPECT_GE(size_rej, 60);
  EXPECT_LE(size_rej, 140);
  EXPECT_GT(power_rej, 0.95 * reps);
}

TEST(MakeFolds, TablePlan) {
  const MonthRange span{{2008, 1}, {2024, 10}};
  const auto fp = make_folds(span, {{2014, 8}, {2022, 5}, 5});
  EXPECT_EQ(fp.training.size(), 80);
  ASSERT_EQ(fp.folds.size(), 5u);
  for (const auto& f : fp.folds) EXPECT_EQ(f.size(), 16);
  EXPECT_EQ(fp.validation, (MonthRange{{2014, 9}, {2022, 5}}));
  EXPECT_EQ(fp.testing, (MonthRange{{2022, 6}, {2024, 10}}));
  EXPECT_THROW(make_folds(span, {{2014, 8}, {2022, 5}, 0}), PlanError);
  EXPECT_THROW(make_folds(span, {{2022, 5}, {2014, 8}, 5}), PlanError);
  EXPECT_THROW(make_folds(span, {{2014, 8}, {2025, 1}, 5}), PlanError);
}

TEST(MakeFolds, TilesSpanExactly) {
  Rng rng(8);
  for (int rep = 0; rep < 200; ++rep) {
    const YearMonth start{2000 + static_cast<int>(rng.below(10)), 1 + static_cast<int>(rng.below(12))};
    const int len = 30 + static_cast<int>(rng.below(200));
    const MonthRange span{start, start.plus(len - 1)};
    const int te = 10 + static_cast<int>(rng.below(static_cast<std::uint64_t>(len - 25)));
    const int ve = te + 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(len - te - 2)));
    const int k = 1 + static_cast<int>(rng.below(10));
    const auto fp = make_folds(span, {start.plus(te), start.plus(ve), k});
    std::vector<MonthRange> pieces = fp.folds;
    pieces.push_back(fp.validation);
    pieces.push_back(fp.testing);
    YearMonth cursor = span.first;
    for (const auto& p : pieces) {
      ASSERT_FALSE(p.empty());
      EXPECT_EQ(p.first, cursor);
      cursor = p.last.plus(1);
    }
    EXPECT_EQ(cursor, span.last.plus(1));
    for (std::size_t f = 1; f < fp.folds.size(); ++f) EXPECT_LE(fp.folds[f].size(), fp.folds[f - 1].size());
    EXPECT_LE(fp.folds.front().size() - fp.folds.back().size(), 1);
  }
}

TEST(Grid, DimensionValues) {
  EXPECT_EQ((GridDimension{"k", 2, 12, Scale::integer}.values().size()), 11u);
  // The batch-size row read in log2 units: 2.1 -> 4, 2.5..6.5 -> 6..91.
  EXPECT_EQ((GridDimension{"b", 2.1, 2.2, Scale::log2, 1}.values()), (std::vector<double>{4}));
  EXPECT_EQ((GridDimension{"b", 2.5, 6.5, Scale::log2, 3}.values()), (std::vector<double>{6, 23, 91}));
  EXPECT_EQ((GridDimension{"s", 0.01, 2.5, Scale::linear, 2}.values()), (std::vector<double>{0.01, 2.5}));
  EXPECT_THROW((GridDimension{"s", 2, 2, Scale::linear}.values()), ConfigError);
  GridSpec spec{{{"a", 1, 2, Scale::integer}, {"b", 0, 1, Scale::linear, 3}}};
  const auto pts = expand(spec);
  ASSERT_EQ(pts.size(), 6u);
  EXPECT_EQ(pts[1].str(), "a=1 b=0.5");
  EXPECT_EQ(pts[3].get("a"), 2.0);
}

TEST(GridSearch, SinglePoint) {
  const auto d = factor_panel(1, 120, 10, 2);
  const auto fp = make_folds(d.span, {d.span.first.plus(79), d.span.first.plus(99), 5});
  const auto res = grid_search(PcrFamily{}, GridSpec{{{"components", 3, 3.5, Scale::integer}}}, fp, d, 1);
  EXPECT_EQ(res.leaderboard.size(), 1u);
  EXPECT_EQ(res.best.get("components"), 3.0);
  EXPECT_EQ(res.leaderboard.front().fold_mse.size(), 5u);
}

TEST(GridSearch, SelectsPlantedRankSix) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto d = factor_panel(seed, 214, 26, 6, 0.0);
    const auto fp = make_folds(d.span, {{2014, 8}, {2022, 5}, 5});
    const auto res = grid_search(PcrFamily{}, GridSpec{{{"components", 2, 12, Scale::integer}}}, fp, d, seed);
    EXPECT_EQ(res.best.get("components"), 6.0) << "seed " << seed;
    for (const auto& e : res.leaderboard)
      if (e.point.get("components") > 6.0) EXPECT_TRUE(e.failed);
  }
}

TEST(GridSearch, NoisyPanelNeverUnderfits) {
  // With idiosyncratic noise the extra components are noise regressors whose
  // held-out cost is comparable to the fold noise, so only k >= 6 is asserted.
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto d = factor_panel(seed, 214, 26, 6);
    const auto fp = make_folds(d.span, {{2014, 8}, {2022, 5}, 5});
    const auto res = grid_search(PcrFamily{}, GridSpec{{{"components", 2, 12, Scale::integer}}}, fp, d, seed);
    EXPECT_GE(res.best.get("components"), 6.0) << "seed " << seed;
  }
}

TEST(GridSearch, NeverReadsOutsideTraining) {
  const auto d = factor_panel(2, 214, 12, 3);
  const auto fp = make_folds(d.span, {{2014, 8}, {2022, 5}, 5});
  TracingSource src(d);
  grid_search(PcrFamily{}, GridSpec{{{"components", 2, 5, Scale::integer}}}, fp, src, 3, {.parallelism = 3});
  ASSERT_FALSE(src.requests.empty());
  for (const auto& r : src.requests) {
    EXPECT_TRUE(fp.training.contains(r)) << r.str();
    EXPECT_TRUE(MonthRange::intersect(r, fp.testing).empty());
  }
}

TEST(GridSearch, ParallelMatchesSerial) {
  const auto d = factor_panel(3, 214, 12, 4);
  const auto fp = make_folds(d.span, {{2014, 8}, {2022, 5}, 5});
  const GridSpec g{{{"components", 2, 10, Scale::integer}}};
  const auto a = grid_search(PcrFamily{}, g, fp, d, 5);
  const auto b = grid_search(PcrFamily{}, g, fp, d, 5, {.parallelism = 4});
  EXPECT_EQ(a.best_index, b.best_index);
  for (std::size_t i = 0; i < a.leaderboard.size(); ++i) EXPECT_EQ(a.leaderboard[i].fold_mse, b.leaderboard[i].fold_mse);
}

TEST(GridSearch, TiesPreferFewerParametersAndFailuresAreRecorded) {
  const auto d = factor_panel(4, 100, 4, 1);
  const auto fp = make_folds(d.span, {d.span.first.plus(59), d.span.first.plus(79), 4});
  const GridSpec g{{{"x", 50, 150, Scale::linear, 5}}};  // 50, 75, 100, 125, 150
  const auto res = grid_search(ConstantFamily{1.0}, g, fp, d, 0);
  EXPECT_EQ(res.best.get("x"), 50.0);
  EXPECT_TRUE(res.leaderboard[3].failed);
  EXPECT_TRUE(res.leaderboard[4].failed);
  EXPECT_NE(res.leaderboard[3].message.find("diverged"), std::string::npos);
  EXPECT_FALSE(res.leaderboard[2].failed);
}

TEST(GridSearch, AllFailedThrows) {
  const auto d = factor_panel(5, 100, 4, 1);
  const auto fp = make_folds(d.span, {d.span.first.plus(59), d.span.first.plus(79), 4});
  EXPECT_THROW(grid_search(DivergingFamily{}, GridSpec{{{"x", 1, 3, Scale::integer}}}, fp, d, 0), SearchFailedError);
}
