#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dada/detect.hpp"
#include "dada/spot.hpp"

using namespace dada;
using namespace dada::detect;

namespace {

net::NetConfig small_net() {
  net::NetConfig c;
  c.window = 20;
  c.patch = 4;
  c.d_model = 8;
  c.encoder_layers = 2;
  c.d_r = 16;
  c.pool_sizes = {2, 4, 8};
  c.k = 2;
  return c;
}

std::vector<double> exp_sample(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> e(1.0);
  std::vector<double> x(n);
  for (auto& v : x) v = e(rng);
  return x;
}

TimeSeries sine_series(std::size_t n) {
  TimeSeries ts;
  ts.name = "s";
  ts.values.resize(static_cast<Eigen::Index>(n), 1);
  for (std::size_t t = 0; t < n; ++t) ts.values(static_cast<Eigen::Index>(t), 0) = std::sin(0.3 * static_cast<double>(t));
  return ts;
}

}  // namespace

TEST(Detect, VarianceOfTwoReconstructionsIsQuarterSquaredGap) {
  const auto v = reconstruction_variance({{1.0, 2.0, 5.0}, {3.0, 2.0, -1.0}});
  EXPECT_DOUBLE_EQ(v[0], 1.0);
  EXPECT_DOUBLE_EQ(v[1], 0.0);
  EXPECT_DOUBLE_EQ(v[2], 9.0);
}

TEST(Detect, IdenticalReconstructionsScoreZero) {
  const std::vector<double> r{0.5, -1.0, 2.0};
  for (double s : reconstruction_variance({r, r, r, r})) EXPECT_EQ(s, 0.0);
}

TEST(Detect, ModelIgnoringItsInputScoresZero) {
  net::Network<double> m(small_net(), 1);
  // Zero every weight feeding the decoder so the output is the bias alone.
  m.params().dec_n.w.setZero();
  std::vector<double> w(20);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::cos(static_cast<double>(i));
  for (double s : score_window(m, w, 5, 3)) EXPECT_NEAR(s, 0.0, 1e-20);
}

TEST(Detect, ScoresAreDeterministicAndNonNegative) {
  net::Network<float> m(small_net(), 2);
  const auto ts = sine_series(210);
  const auto a = score_series(ts, m, 5, 9);
  const auto b = score_series(ts, m, 5, 9);
  ASSERT_EQ(a.scores.size(), 210u);
  EXPECT_EQ(a.scores, b.scores);
  for (double s : a.scores) EXPECT_GE(s, 0.0);
  EXPECT_NE(a.scores, score_series(ts, m, 5, 10).scores);
}

TEST(Detect, ScoringRejectsBadInputs) {
  net::Network<float> m(small_net(), 2);
  EXPECT_THROW(score_series(sine_series(210), m, 1, 0), ConfigError);
  EXPECT_THROW(score_series(sine_series(10), m, 5, 0), DataError);
}

TEST(Detect, DecisionIsStrictlyAboveThreshold) {
  const std::vector<double> s{0.1, 0.5, 0.7};
  EXPECT_EQ(decide(s, 0.5), (Labels{0, 0, 1}));
  const auto ss = detect::detect(ScoreSeries{s, std::nan(""), {}, std::nullopt, std::nullopt}, 0.05);
  EXPECT_EQ(ss.decisions, (Labels{1, 1, 1}));
}

TEST(Spot, QuantileOfSortedSample) {
  const std::vector<double> v{1, 2, 3, 4, 5};
  EXPECT_DOUBLE_EQ(spot::quantile_sorted(v, 0.5), 3.0);
  EXPECT_DOUBLE_EQ(spot::quantile_sorted(v, 0.625), 3.5);
}

TEST(Spot, ExponentialTailNearTrueQuantile) {
  const auto x = exp_sample(10000, 1);
  const auto r = spot::spot_threshold(x, {});
  EXPECT_FALSE(r.fallback);
  EXPECT_NEAR(r.fit.gamma, 0.0, 0.3);
  EXPECT_GT(r.threshold, 4.8);
  EXPECT_LT(r.threshold, 9.0);
  EXPECT_GE(r.threshold, r.t0);
}

TEST(Spot, SmallerRiskGivesHigherThreshold) {
  const auto x = exp_sample(5000, 2);
  spot::SpotConfig a, b;
  a.q = 1e-2;
  b.q = 1e-4;
  EXPECT_LT(spot::spot_threshold(x, a).threshold, spot::spot_threshold(x, b).threshold);
}

TEST(Spot, ParetoTailHasPositiveShape) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> x(10000);
  for (auto& v : x) v = std::pow(1.0 - u(rng), -0.5) - 1.0;  // GPD with gamma 0.5
  const auto r = spot::spot_threshold(x, {});
  EXPECT_NEAR(r.fit.gamma, 0.5, 0.2);
}

TEST(Spot, BoundedTailHasNegativeShape) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> x(10000);
  for (auto& v : x) v = u(rng);
  const auto r = spot::spot_threshold(x, {});
  EXPECT_LT(r.fit.gamma, 0.0);
  EXPECT_LE(r.threshold, 1.05);
}

TEST(Spot, TooFewPointsFallsBackToEmpiricalQuantile) {
  const auto x = exp_sample(50, 5);
  const auto r = spot::spot_threshold(x, {});
  EXPECT_TRUE(r.fallback);
  EXPECT_EQ(r.fit.method, "empirical");
}

TEST(Spot, ConstantScoresDoNotCrash) {
  const std::vector<double> x(1000, 2.0);
  const auto r = spot::spot_threshold(x, {});
  EXPECT_TRUE(std::isfinite(r.threshold));
  EXPECT_EQ(decide(x, r.threshold), Labels(1000, 0));
}

TEST(Spot, ConfigValidation) {
  spot::SpotConfig c;
  c.q = 0.5;
  EXPECT_THROW(c.validate(), ConfigError);
  auto j = spot::to_json(spot::SpotConfig{});
  j["level"] = 0.9;
  EXPECT_THROW(spot::spot_config_from_json(j), ConfigError);
  EXPECT_THROW(spot::spot_threshold(std::vector<double>{}, {}), EvaluationError);
}

TEST(Detect, ThresholdSeriesUsesCalibrationWhenGiven) {
  ScoreSeries ss;
  ss.scores = exp_sample(2000, 6);
  const auto calib = exp_sample(10000, 7);
  const auto a = threshold_series(ss, {}, std::span<const double>(calib));
  EXPECT_EQ(a.spot->n_init, 10000u);
  const auto b = threshold_series(ss, {});
  EXPECT_EQ(b.spot->n_init, 400u);
}
