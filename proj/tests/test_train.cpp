#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "dada/checkpoint.hpp"
#include "dada/train.hpp"
#include "toy.hpp"

using namespace dada;
using namespace dada::train;
using dada::net::Mat;

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

TrainData sine_data(int window, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, 6.28);
  std::normal_distribution<double> e(0.0, 0.05);
  TrainData d;
  d.normal.resize(64, window);
  d.abnormal.resize(16, window);
  d.abnormal_labels = RowMatrix::Zero(16, window);
  for (Eigen::Index r = 0; r < 64; ++r) {
    const double ph = phase(rng);
    for (int t = 0; t < window; ++t) d.normal(r, t) = std::sin(ph + 0.6 * t) + e(rng);
  }
  for (Eigen::Index r = 0; r < 16; ++r) {
    const double ph = phase(rng);
    for (int t = 0; t < window; ++t) d.abnormal(r, t) = std::sin(ph + 0.6 * t) + e(rng);
    for (int t = 5; t < 10; ++t) {
      d.abnormal(r, t) += 3.0;
      d.abnormal_labels(r, t) = 1.0;
    }
  }
  return d;
}

TrainConfig small_train() {
  TrainConfig tc;
  tc.batch_size = 16;
  tc.lr = 3e-3;
  tc.epochs = 2;
  tc.seed = 5;
  return tc;
}

bool same_params(const net::Params<float>& a, const net::Params<float>& b) {
  std::vector<const Mat<float>*> x, y;
  a.for_each([&](const std::string&, net::Group, const Mat<float>& m) { x.push_back(&m); });
  b.for_each([&](const std::string&, net::Group, const Mat<float>& m) { y.push_back(&m); });
  if (x.size() != y.size()) return false;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (*x[i] != *y[i]) return false;
  }
  return true;
}

}  // namespace

TEST(Train, LossNormalExample) {
  const Mat<double> x = Mat<double>::Zero(1, 100);
  const Mat<double> r = Mat<double>::Ones(1, 100);
  EXPECT_DOUBLE_EQ(loss_normal(x, r), 100.0);
  EXPECT_DOUBLE_EQ(loss_normal(x, x), 0.0);
  EXPECT_DOUBLE_EQ(loss_normal<double>(Mat<double>::Zero(2, 100), Mat<double>::Ones(2, 100)), 100.0);
}

TEST(Train, LossAbnormalCountsOnlyLabelledPoints) {
  const Mat<double> x = Mat<double>::Zero(1, 100);
  const Mat<double> r = Mat<double>::Ones(1, 100);
  Mat<double> y = Mat<double>::Zero(1, 100);
  EXPECT_DOUBLE_EQ(loss_abnormal(x, r, y), 0.0);
  y.leftCols(10).setOnes();
  EXPECT_DOUBLE_EQ(loss_abnormal(x, r, y), 10.0);
  EXPECT_DOUBLE_EQ(loss_abnormal<double>(x, r, Mat<double>::Ones(1, 100)), loss_normal(x, r));
  EXPECT_THROW(loss_abnormal<double>(x, r, Mat<double>::Ones(1, 99)), ConfigError);
}

TEST(Train, LossAbnormalIgnoresUnlabelledPerturbations) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  std::bernoulli_distribution coin(0.3);
  for (int trial = 0; trial < 50; ++trial) {
    Mat<double> x(4, 20), r(4, 20), y(4, 20);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      x.data()[i] = n(rng);
      r.data()[i] = n(rng);
      y.data()[i] = coin(rng) ? 1.0 : 0.0;
    }
    const double base = loss_abnormal(x, r, y);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      if (y.data()[i] == 0.0) {
        x.data()[i] += 100.0 * n(rng);
        r.data()[i] -= 100.0 * n(rng);
      }
    }
    EXPECT_EQ(loss_abnormal(x, r, y), base);
  }
}

TEST(Train, ConfigJsonAndValidation) {
  TrainConfig tc;
  EXPECT_EQ(tc.abnormal_per_batch() + tc.normal_per_batch(), tc.batch_size);
  auto j = to_json(tc);
  j["lr"] = 0.5;
  EXPECT_DOUBLE_EQ(train_config_from_json(j).lr, 0.5);
  j["momentum"] = 0.9;
  EXPECT_THROW(train_config_from_json(j), ConfigError);
  tc.mask_ratio = 1.0;
  EXPECT_THROW(tc.validate(), ConfigError);
}

TEST(Train, AbnormalScalesPerVariant) {
  net::NetConfig nc;
  nc.grl_lambda = 0.5;
  TrainConfig tc;
  EXPECT_DOUBLE_EQ(abnormal_scales(nc, tc).output, 1.0);
  EXPECT_DOUBLE_EQ(abnormal_scales(nc, tc).reversal, -0.5);
  tc.adversarial = false;
  EXPECT_DOUBLE_EQ(abnormal_scales(nc, tc).output, -1.0);
  EXPECT_DOUBLE_EQ(abnormal_scales(nc, tc).reversal, 1.0);
}

TEST(Train, EmptyBatchIsRejected) {
  const auto c = toy::config();
  auto m = toy::network(c, 1);
  const auto b = toy::batch(c, 0, 0, 2);
  net::Params<double> g;
  std::mt19937_64 rng(0);
  EXPECT_THROW(compute_gradients(m, b, toy::train_config(), rng, g), DataError);
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  auto tc = small_train();
  tc.lr = 0.0;
  const auto data = sine_data(20, 1);
  auto t = pretrain<float>(data, small_net(), tc);
  const net::Network<float> fresh(small_net(), tc.seed);
  EXPECT_TRUE(same_params(t.model.params(), fresh.params()));
  EXPECT_EQ(t.history.size(), 2u);
}

TEST(Train, TrainingReducesNormalLoss) {
  auto tc = small_train();
  tc.epochs = 15;
  const auto data = sine_data(20, 2);
  const auto t = pretrain<float>(data, small_net(), tc);
  EXPECT_LT(t.history.back().loss_norm, 0.8 * t.history.front().loss_norm);
}

TEST(Train, SameSeedSameModel) {
  const auto data = sine_data(20, 3);
  const auto a = pretrain<float>(data, small_net(), small_train());
  const auto b = pretrain<float>(data, small_net(), small_train());
  EXPECT_TRUE(same_params(a.model.params(), b.model.params()));
}

TEST(Train, ResumeIsBitIdentical) {
  const auto data = sine_data(20, 4);
  auto tc = small_train();
  const auto full = pretrain<float>(data, small_net(), tc);

  tc.epochs = 1;
  auto half = pretrain<float>(data, small_net(), tc);
  const auto path = std::filesystem::temp_directory_path() / "dada_test_resume.ckpt";
  save_archive(path, half.archive());
  auto resumed = Trainer<float>::from_archive(load_archive(path), small_train());
  EXPECT_EQ(resumed.epoch, 1);
  resumed.run(data, 1);
  EXPECT_TRUE(same_params(full.model.params(), resumed.model.params()));
  EXPECT_EQ(full.history.back().loss_norm, resumed.history.back().loss_norm);
}

TEST(Train, StepCallbackSeesEveryStep) {
  const auto data = sine_data(20, 5);
  auto tc = small_train();
  tc.epochs = 1;
  std::vector<StepRecord> seen;
  pretrain<float>(data, small_net(), tc, [&](const StepRecord& r) { seen.push_back(r); });
  // 64 normal windows, 8 per batch.
  ASSERT_EQ(seen.size(), 8u);
  EXPECT_EQ(seen.front().step, 1);
  EXPECT_EQ(seen.back().step, 8);
}

TEST(Train, NonFiniteLossRaises) {
  auto data = sine_data(20, 6);
  data.normal(0, 0) = std::numeric_limits<double>::infinity();
  auto tc = small_train();
  tc.epochs = 1;
  try {
    pretrain<float>(data, small_net(), tc);
    FAIL();
  } catch (const TrainingError& e) {
    EXPECT_EQ(e.kind(), "NonFiniteLoss");
  }
}

TEST(Train, CheckpointRoundTrip) {
  const net::Network<float> m(small_net(), 9);
  const auto path = std::filesystem::temp_directory_path() / "dada_test_model.ckpt";
  save_checkpoint(path, m);
  const auto back = load_checkpoint<float>(path);
  EXPECT_TRUE(same_params(m.params(), back.params()));
  EXPECT_EQ(back.config().pool_sizes, small_net().pool_sizes);
}
