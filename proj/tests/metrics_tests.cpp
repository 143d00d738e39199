#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "sbnn/data.hpp"
#include "sbnn/metrics.hpp"
#include "sbnn/model.hpp"
#include "test_oracles.hpp"

namespace {

using sbnn::Likelihood;
using sbnn::Method;
using sbnn::Network;
using sbnn::NetworkConfig;
using sbnn::PredictMode;
using sbnn::RngStream;
using sbnn::Tensor;

NetworkConfig base_config(std::vector<std::size_t> widths, Method m, Likelihood lk) {
  NetworkConfig cfg;
  cfg.widths = std::move(widths);
  cfg.method = m;
  cfg.likelihood = lk;
  cfg.prior = {1.0, 0.5};
  cfg.flow_width = 6;
  cfg.init_seed = 3;
  return cfg;
}

// Pins the single spike-and-slab weight and bias of a 1->1 network to known
// values so the predictive mean has a quadrature oracle.
Network pinned_scalar_net(double mu, double sigma, double alpha, double b_mu, double b_sigma) {
  Network net(base_config({1, 1}, Method::lbbnn_lrt, Likelihood::bernoulli));
  auto& l = net.layers[0];
  l.weight_mean[0] = mu;
  l.weight_rho[0] = sbnn::inv_softplus(sigma);
  l.inclusion_logit[0] = std::log(alpha / (1.0 - alpha));
  l.bias_mean[0] = b_mu;
  l.bias_rho[0] = sbnn::inv_softplus(b_sigma);
  return net;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// E[f(h)] for h ~ N(m, v) by Simpson quadrature.
double gauss_expect(const std::function<double(double)>& f, double m, double v) {
  double sd = std::sqrt(v);
  return oracle::simpson(
      [&](double h) { return f(h) * std::exp(oracle::normal_logpdf(h, m, v)); }, m - 10 * sd,
      m + 10 * sd, 4000);
}

// ---------------------------------------------------------------------------
// Entropy.
// ---------------------------------------------------------------------------

TEST(Entropy, KnownDistributions) {
  EXPECT_NEAR(sbnn::entropy_nats(Tensor({1, 5}, 0.2))[0], std::log(5.0), 1e-12);
  EXPECT_EQ(sbnn::entropy_nats(Tensor::from({1, 3}, {0.0, 1.0, 0.0}))[0], 0.0);
  EXPECT_NEAR(sbnn::entropy_nats(Tensor::from({1, 2}, {0.5, 0.5}))[0], std::log(2.0), 1e-12);
  EXPECT_THROW(sbnn::entropy_nats(Tensor::from({1, 2}, {1.2, -0.2})), sbnn::NumericError);
}

TEST(Entropy, BoundedByLogCardinality) {
  RngStream rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor p({1, 6});
    double s = 0;
    for (std::size_t i = 0; i < 6; ++i) s += p[i] = rng.uniform() + 1e-3;
    for (std::size_t i = 0; i < 6; ++i) p[i] /= s;
    double h = sbnn::entropy_nats(p)[0];
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, std::log(6.0) + 1e-12);
  }
}

// ---------------------------------------------------------------------------
// predict_avg.
// ---------------------------------------------------------------------------

TEST(Predict, RowsAreProperDistributionsInEveryMode) {
  Network net(base_config({3, 4, 3}, Method::lbbnn_flow, Likelihood::categorical));
  RngStream drng(8);
  Tensor X = oracle::rand_tensor({6, 3}, drng);
  for (PredictMode mode : {PredictMode::full, PredictMode::median, PredictMode::lrt}) {
    RngStream rng(4);
    auto s = sbnn::predict_avg(net, X, 7, mode, rng);
    ASSERT_EQ(s.probs.rows(), 6u);
    ASSERT_EQ(s.probs.cols(), 3u);
    for (std::size_t r = 0; r < 6; ++r) {
      double sum = 0;
      for (std::size_t c = 0; c < 3; ++c) {
        double p = s.probs.at(r, c);
        EXPECT_GE(p, 0.0);
        sum += p;
      }
      EXPECT_NEAR(sum, 1.0, 1e-9);
      EXPECT_EQ(s.prediction[r] >= 0 && s.prediction[r] < 3, true);
    }
  }
  RngStream rng(4);
  EXPECT_THROW(sbnn::predict_avg(net, X, 0, PredictMode::full, rng), sbnn::ShapeError);
}

TEST(Predict, FullModeMatchesMixtureQuadratureOracle) {
  double mu = 1.2, sigma = 0.5, alpha = 0.7, b_mu = 0.3, b_sigma = 0.2, x = 0.9;
  Network net = pinned_scalar_net(mu, sigma, alpha, b_mu, b_sigma);
  Tensor X = Tensor::from({1, 1}, {x});

  auto prob = [&](double h) { return sigmoid(h); };
  double m1 = x * mu + b_mu, v1 = x * x * sigma * sigma + b_sigma * b_sigma;
  double m0 = b_mu, v0 = b_sigma * b_sigma;
  double mean = alpha * gauss_expect(prob, m1, v1) + (1 - alpha) * gauss_expect(prob, m0, v0);
  double second = alpha * gauss_expect([&](double h) { return prob(h) * prob(h); }, m1, v1) +
                  (1 - alpha) * gauss_expect([&](double h) { return prob(h) * prob(h); }, m0, v0);
  double se = std::sqrt((second - mean * mean) / 100000.0);

  RngStream rng(17);
  auto s = sbnn::predict_avg(net, X, 100000, PredictMode::full, rng);
  EXPECT_NEAR(s.probs.at(0, 1), mean, 3.0 * se + 1e-9);
}

TEST(Predict, LrtModeMatchesMomentMatchedQuadratureOracle) {
  double mu = 1.2, sigma = 0.5, alpha = 0.7, b_mu = 0.3, b_sigma = 0.2, x = 0.9;
  Network net = pinned_scalar_net(mu, sigma, alpha, b_mu, b_sigma);
  Tensor X = Tensor::from({1, 1}, {x});

  double eh = x * alpha * mu + b_mu;
  double vh = x * x * (alpha * sigma * sigma + alpha * (1 - alpha) * mu * mu) +
              b_sigma * b_sigma;
  auto prob = [&](double h) { return sigmoid(h); };
  double mean = gauss_expect(prob, eh, vh);
  double second = gauss_expect([&](double h) { return prob(h) * prob(h); }, eh, vh);
  double se = std::sqrt((second - mean * mean) / 100000.0);

  RngStream rng(23);
  auto s = sbnn::predict_avg(net, X, 100000, PredictMode::lrt, rng);
  EXPECT_NEAR(s.probs.at(0, 1), mean, 3.0 * se + 1e-9);
}

TEST(Predict, LargeSampleCountsAgreeWithinCombinedError) {
  Network net = pinned_scalar_net(1.2, 0.5, 0.7, 0.3, 0.2);
  Tensor X = Tensor::from({1, 1}, {0.9});
  RngStream r1(3), r2(4);
  auto small = sbnn::predict_avg(net, X, 1000, PredictMode::full, r1);
  auto large = sbnn::predict_avg(net, X, 10000, PredictMode::full, r2);
  // Per-sample probabilities live in [0,1], so each sd is at most 1/2 and the
  // combined standard error is bounded by 0.5*sqrt(1/1000 + 1/10000).
  double bound = 3.0 * 0.5 * std::sqrt(1.0 / 1000.0 + 1.0 / 10000.0);
  EXPECT_NEAR(small.probs.at(0, 1), large.probs.at(0, 1), bound);
}

TEST(Predict, MedianModeWithVanishingNoiseIsPlainForward) {
  Network net(base_config({2, 3, 2}, Method::lbbnn_lrt, Likelihood::categorical));
  for (auto& l : net.layers) {
    for (std::size_t i = 0; i < l.weight_rho.size(); ++i) l.weight_rho[i] = -40.0;
    for (std::size_t j = 0; j < l.bias_rho.size(); ++j) l.bias_rho[j] = -40.0;
  }
  RngStream drng(31);
  Tensor X = oracle::rand_tensor({4, 2}, drng);

  RngStream rng(1);
  auto s = sbnn::predict_avg(net, X, 1, PredictMode::median, rng);

  // Hand forward pass with the median-model weights.
  Tensor h = X;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    auto& layer = net.layers[l];
    Tensor W({layer.n_in, layer.n_out});
    for (std::size_t i = 0; i < layer.n_in; ++i)
      for (std::size_t j = 0; j < layer.n_out; ++j)
        W.at(i, j) = layer.inclusion_logit.at(i, j) > 0.0 ? layer.weight_mean.at(i, j) : 0.0;
    h = sbnn::t_add(sbnn::t_matmul(h, W), layer.bias_mean);
    if (l + 1 < net.layers.size()) h = sbnn::t_relu(h);
  }
  Tensor probs = sbnn::t_softmax(h);
  for (std::size_t i = 0; i < probs.size(); ++i) EXPECT_NEAR(s.probs[i], probs[i], 1e-9);
}

TEST(Predict, DuplicateRowsGetIdenticalProbabilitiesUnderSharedWeights) {
  Network net(base_config({2, 4, 3}, Method::lbbnn_flow, Likelihood::categorical));
  Tensor X = Tensor::from({3, 2}, {0.4, -0.2, 0.4, -0.2, 1.0, 0.7});
  for (PredictMode mode : {PredictMode::full, PredictMode::median}) {
    RngStream rng(12);
    auto s = sbnn::predict_avg(net, X, 5, mode, rng);
    for (std::size_t c = 0; c < 3; ++c) {
      EXPECT_EQ(s.probs.at(0, c), s.probs.at(1, c));
    }
    EXPECT_EQ(s.max_preact[0], s.max_preact[1]);
    EXPECT_EQ(s.entropy[0], s.entropy[1]);
  }
}

TEST(Predict, MedianPredictionsIgnoreExcludedWeightParameters) {
  Network net(base_config({3, 4, 2}, Method::lbbnn_lrt, Likelihood::categorical));
  RngStream drng(41);
  Tensor X = oracle::rand_tensor({5, 3}, drng);
  RngStream r1(6);
  auto before = sbnn::predict_avg(net, X, 9, PredictMode::median, r1);

  // Scramble mean and scale of every weight the median model excludes.
  for (auto& l : net.layers)
    for (std::size_t i = 0; i < l.inclusion_logit.size(); ++i)
      if (l.inclusion_logit[i] <= 0.0) {
        l.weight_mean[i] = 1e6;
        l.weight_rho[i] = 9.0;
      }
  RngStream r2(6);
  auto after = sbnn::predict_avg(net, X, 9, PredictMode::median, r2);
  EXPECT_TRUE(before.probs.same_data(after.probs));
  EXPECT_EQ(before.max_preact, after.max_preact);
  EXPECT_EQ(before.prediction, after.prediction);
}

TEST(Predict, SeedDeterminism) {
  Network net(base_config({2, 3, 2}, Method::lbbnn_flow, Likelihood::categorical));
  RngStream drng(2);
  Tensor X = oracle::rand_tensor({4, 2}, drng);
  RngStream a(9), b(9), c(10);
  auto sa = sbnn::predict_avg(net, X, 6, PredictMode::full, a);
  auto sb = sbnn::predict_avg(net, X, 6, PredictMode::full, b);
  auto sc = sbnn::predict_avg(net, X, 6, PredictMode::full, c);
  EXPECT_TRUE(sa.probs.same_data(sb.probs));
  EXPECT_FALSE(sa.probs.same_data(sc.probs));
}

// ---------------------------------------------------------------------------
// Accuracy, density, selection scores.
// ---------------------------------------------------------------------------

TEST(Scores, AccuracyCountsArgmaxMatches) {
  sbnn::PredictiveSummary s;
  s.probs = Tensor::from({3, 2}, {0.9, 0.1, 0.2, 0.8, 0.55, 0.45});
  s.prediction = {0, 1, 0};
  EXPECT_DOUBLE_EQ(sbnn::accuracy(s, {0, 1, 1}), 2.0 / 3.0);
}

TEST(Scores, DensityIsExactInclusionFraction) {
  Network net(base_config({3, 2}, Method::lbbnn_lrt, Likelihood::categorical));
  auto& l = net.layers[0];
  // 6 weights; set logits so exactly 2 clear the 0.5 threshold.
  double on = 2.0, off = -2.0;
  l.inclusion_logit[0] = on;
  l.inclusion_logit[1] = off;
  l.inclusion_logit[2] = off;
  l.inclusion_logit[3] = on;
  l.inclusion_logit[4] = off;
  l.inclusion_logit[5] = off;
  EXPECT_DOUBLE_EQ(net.density(), 2.0 / 6.0);
  // Threshold 0.9 excludes logit 2.0 (alpha ~ 0.88).
  EXPECT_DOUBLE_EQ(net.density(0.9), 0.0);
}

TEST(Scores, TprFprAgainstTheBenchmarkCoefficients) {
  const std::vector<double>& beta = sbnn::logreg_beta();
  // True support under zero_tol 0.01: coords {0,2,6,10,12,15,17,18} (the
  // -0.00005 entry counts as zero). 8 true positives, 12 true zeros.
  std::vector<double> alpha_hat(20, 0.1);
  for (std::size_t c : {0u, 2u, 6u, 10u, 12u, 15u, 17u, 18u}) alpha_hat[c] = 0.95;
  auto perfect = sbnn::tpr_fpr(alpha_hat, beta);
  EXPECT_DOUBLE_EQ(perfect.tpr, 1.0);
  EXPECT_DOUBLE_EQ(perfect.fpr, 0.0);
  ASSERT_EQ(perfect.included.size(), 20u);
  EXPECT_EQ(std::count(perfect.included.begin(), perfect.included.end(), true), 8);
  EXPECT_TRUE(perfect.included[12]);
  EXPECT_FALSE(perfect.included[16]);

  alpha_hat[16] = 0.8;  // the negligible coefficient is a false positive
  auto extra = sbnn::tpr_fpr(alpha_hat, beta);
  EXPECT_DOUBLE_EQ(extra.tpr, 1.0);
  EXPECT_DOUBLE_EQ(extra.fpr, 1.0 / 12.0);

  alpha_hat[16] = 0.2;
  alpha_hat[12] = 0.3;  // drop a true positive
  auto miss = sbnn::tpr_fpr(alpha_hat, beta);
  EXPECT_DOUBLE_EQ(miss.tpr, 7.0 / 8.0);
  EXPECT_DOUBLE_EQ(miss.fpr, 0.0);
}

TEST(Scores, TprFprPermutationInvariance) {
  std::vector<double> beta = {1.0, 0.0, -2.0, 0.0};
  std::vector<double> alpha_hat = {0.9, 0.6, 0.3, 0.1};
  auto a = sbnn::tpr_fpr(alpha_hat, beta);
  std::vector<double> beta_p = {0.0, 1.0, 0.0, -2.0};
  std::vector<double> alpha_p = {0.6, 0.9, 0.1, 0.3};
  auto b = sbnn::tpr_fpr(alpha_p, beta_p);
  EXPECT_DOUBLE_EQ(a.tpr, b.tpr);
  EXPECT_DOUBLE_EQ(a.fpr, b.fpr);
}

// ---------------------------------------------------------------------------
// Cumulative accuracy curve.
// ---------------------------------------------------------------------------

TEST(Curve, SingleWindowEqualsOverallAccuracy) {
  sbnn::PredictiveSummary s;
  s.probs = Tensor({4, 2});
  s.max_prob = {0.9, 0.6, 0.8, 0.7};
  s.prediction = {0, 1, 0, 1};
  std::vector<int> labels = {0, 0, 0, 1};
  auto curve = sbnn::cumulative_accuracy(s, labels, 4);
  ASSERT_EQ(curve.size(), 1u);
  EXPECT_DOUBLE_EQ(curve[0], 0.75);
}

TEST(Curve, OrdersByConfidenceAndDropsIncompleteTail) {
  sbnn::PredictiveSummary s;
  s.max_prob = {0.51, 0.99, 0.98, 0.52, 0.97, 0.53, 0.96};
  s.prediction = {1, 0, 0, 1, 0, 1, 0};
  // Confident predictions (0.99..0.96) are all correct; the low-confidence
  // ones are all wrong. Window 2 over 7 items -> 3 complete windows, the
  // trailing singleton is dropped.
  std::vector<int> labels = {0, 0, 0, 0, 0, 0, 0};
  auto curve = sbnn::cumulative_accuracy(s, labels, 2);
  ASSERT_EQ(curve.size(), 3u);
  EXPECT_DOUBLE_EQ(curve[0], 1.0);  // {0.99, 0.98}
  EXPECT_DOUBLE_EQ(curve[1], 1.0);  // {0.97, 0.96}
  EXPECT_DOUBLE_EQ(curve[2], 0.0);  // {0.53, 0.52}
}

TEST(Curve, RandomTwoClassPredictorSitsNearHalf) {
  RngStream rng(14);
  sbnn::PredictiveSummary s;
  const std::size_t n = 4000;
  s.max_prob.resize(n);
  s.prediction.resize(n);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    s.max_prob[i] = 0.5 + 0.5 * rng.uniform();
    s.prediction[i] = rng.uniform() < 0.5 ? 0 : 1;
    labels[i] = rng.uniform() < 0.5 ? 0 : 1;
  }
  auto curve = sbnn::cumulative_accuracy(s, labels, n);
  ASSERT_EQ(curve.size(), 1u);
  EXPECT_NEAR(curve[0], 0.5, 3.0 * 0.5 / std::sqrt(double(n)));
}

// ---------------------------------------------------------------------------
// Out-of-distribution detection.
// ---------------------------------------------------------------------------

TEST(Ood, NearestRankIsAnExactOrderStatistic) {
  std::vector<double> v = {3, 1, 4, 1.5, 9, 2.6, 5, 3.5, 8, 7};
  // Sorted: 1, 1.5, 2.6, 3, 3.5, 4, 5, 7, 8, 9.
  EXPECT_DOUBLE_EQ(sbnn::nearest_rank(v, 0.5), 3.5);   // ceil(5) = 5th
  EXPECT_DOUBLE_EQ(sbnn::nearest_rank(v, 0.95), 9.0);  // ceil(9.5) = 10th
  EXPECT_DOUBLE_EQ(sbnn::nearest_rank(v, 0.91), 9.0);
  EXPECT_DOUBLE_EQ(sbnn::nearest_rank(v, 0.90), 8.0);  // ceil(9) = 9th
  EXPECT_DOUBLE_EQ(sbnn::nearest_rank(v, 0.01), 1.0);
  EXPECT_DOUBLE_EQ(sbnn::nearest_rank(v, 1.0), 9.0);
}

TEST(Ood, FlagsStrictlyAboveTheTrainQuantile) {
  // Effectively deterministic 1-D identity model: preactivation = x.
  Network net(base_config({1, 1}, Method::dense_bnn, Likelihood::bernoulli));
  auto& l = net.layers[0];
  l.weight_mean[0] = 1.0;
  l.weight_rho[0] = -40.0;
  l.bias_mean[0] = 0.0;
  l.bias_rho[0] = -40.0;

  Tensor train_X({10, 1});
  for (int i = 0; i < 10; ++i) train_X.at(i, 0) = 0.1 * (i + 1);
  Tensor query = Tensor::from({4, 1}, {0.65, 0.6999, 0.7001, 2.0});

  RngStream rng(19);
  auto flags = sbnn::ood_detect(net, train_X, query, 0.7, 3, rng, PredictMode::median);
  ASSERT_EQ(flags.size(), 4u);
  EXPECT_FALSE(flags[0]);  // below the 7th order statistic (0.7)
  EXPECT_FALSE(flags[1]);
  EXPECT_TRUE(flags[2]);
  EXPECT_TRUE(flags[3]);
}

}  // namespace
