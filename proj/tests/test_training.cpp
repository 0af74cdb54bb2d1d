#include "lightsae/error.hpp"
#include "lightsae/training.hpp"
#include "support/testutil.hpp"

#include <gtest/gtest.h>

using namespace lightsae;
using lightsae::testing::random_dense;
using lightsae::testing::randomize;

namespace {

// Series whose next H steps are an exact linear function of the previous L:
// a sum of sinusoids satisfies a fixed linear recurrence.
Dataset planted(Eigen::Index steps, Eigen::Index channels)
{
  Dataset ds;
  ds.name = "planted";
  ds.values.resize(steps, channels);
  for (Eigen::Index c = 0; c < channels; ++c)
    for (Eigen::Index t = 0; t < steps; ++t) {
      const auto tt = static_cast<double>(t);
      ds.values(t, c) = std::sin(2 * M_PI * tt / 12.0 + 0.3 * static_cast<double>(c)) +
                        0.5 * std::cos(2 * M_PI * tt / 8.0 + 0.1 * static_cast<double>(c));
    }
  for (Eigen::Index c = 0; c < channels; ++c)
    ds.channel_names.push_back("c" + std::to_string(c));
  for (Eigen::Index t = 0; t < steps; ++t)
    ds.timestamps.push_back(std::to_string(t));
  return normalize(split(std::move(ds), SplitProtocol::Ratio712));
}

BackboneSpec tiny_backbone()
{
  BackboneSpec b;
  b.d_model = 16;
  b.horizon = 4;
  return b;
}

EmbeddingSpec tiny_embedding(Variant v, Eigen::Index n, Eigen::Index lookback)
{
  EmbeddingSpec s;
  s.variant = v;
  s.channels = n;
  s.in_dim = lookback;
  s.out_dim = 16;
  s.rank = 2;
  s.pool_size = 2;
  return s;
}

}  // namespace

TEST(Metrics, MseAndMae)
{
  const Dense y = random_dense(3, 4, 1);
  EXPECT_EQ(mse(y, y), 0.0);
  EXPECT_EQ(mae(y, y), 0.0);
  EXPECT_EQ(mse(Dense::Zero(1, 2), Dense::Ones(1, 2)), 1.0);
  Dense a(1, 2), b(1, 2);
  a << 0, 2;
  b << 1, 1;
  EXPECT_EQ(mae(a, b), 1.0);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Dense p = random_dense(4, 5, 10 + s), q = random_dense(4, 5, 50 + s);
    EXPECT_LE(mae(p, q), std::sqrt(mse(p, q)) + 1e-15);
  }
  EXPECT_THROW(mse(Dense::Zero(2, 2), Dense::Zero(2, 3)), DimensionError);
}

TEST(Metrics, MseGradientIsScaledResidual)
{
  Matrix p(random_dense(3, 4, 2), true);
  const Dense y = random_dense(3, 4, 3);
  Tape t;
  t.backward(mse(t.leaf(p), y));
  EXPECT_LT((*p.grad - 2.0 * (p.data - y) / 12.0).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Adam, ZeroGradientLeavesParameters)
{
  Matrix w(random_dense(2, 2, 4), true);
  w.grad = Dense::Zero(2, 2);
  const Dense before = w.data;
  AdamState st;
  std::vector<Matrix*> ps{&w};
  adam_step(ps, st, 1e-2, AdamConfig{}, 1);
  EXPECT_EQ(w.data, before);
}

TEST(Adam, FirstStepMovesBySignedLearningRate)
{
  Matrix w(Dense::Zero(1, 3), true);
  w.grad = Dense(1, 3);
  *w.grad << 0.5, -3.0, 1e-3;
  AdamState st;
  std::vector<Matrix*> ps{&w};
  adam_step(ps, st, 0.1, AdamConfig{}, 1);
  EXPECT_NEAR(w.data(0, 0), -0.1, 1e-6);
  EXPECT_NEAR(w.data(0, 1), 0.1, 1e-6);
  EXPECT_NEAR(w.data(0, 2), -0.1, 1e-4);
}

TEST(Adam, ZeroRateChangesNothing)
{
  Matrix w(random_dense(3, 3, 5), true);
  w.grad = random_dense(3, 3, 6);
  const Dense before = w.data;
  AdamState st;
  std::vector<Matrix*> ps{&w};
  adam_step(ps, st, 0.0, AdamConfig{}, 1);
  EXPECT_EQ(w.data, before);
  EXPECT_THROW(adam_step(ps, st, 0.1, AdamConfig{}, 0), ContractError);
}

// Scalar simulation of f(x) = (x - 3)^2 from x = 0.
TEST(Adam, QuadraticBowlConverges)
{
  Matrix w(Dense::Zero(1, 1), true);
  AdamState st;
  std::vector<Matrix*> ps{&w};
  int steps = 0;
  for (; steps < 2000; ++steps) {
    const double x = w.data(0, 0);
    if ((x - 3.0) * (x - 3.0) < 1e-8)
      break;
    w.grad = Dense::Constant(1, 1, 2.0 * (x - 3.0));
    adam_step(ps, st, 0.05, AdamConfig{}, steps + 1);
  }
  EXPECT_LT(std::pow(w.data(0, 0) - 3.0, 2), 1e-8);
  EXPECT_LE(steps, 2000);
}

TEST(TrainConfig, ValidationAndGrid)
{
  TrainConfig c;
  EXPECT_THROW(c.validate(), ConfigError);  // neither a rate nor a grid
  c.learning_rate = 1e-3;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.candidate_rates(), std::vector<double>{1e-3});
  c.lr_grid = {1e-2, 1e-3};
  EXPECT_EQ(c.candidate_rates().size(), 2u);
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  TrainConfig d;
  d.lr_grid = {5e-3};
  d.seed = 12;
  EXPECT_EQ(train_config_from_json(Json::parse(train_config_to_json(d).dump())), d);
}

TEST(Train, PlantedLinearModelIsRecovered)
{
  const Dataset ds = planted(600, 2);
  auto model = make_model(tiny_backbone(), tiny_embedding(Variant::Shared, 2, 24), 1);
  TrainConfig c;
  c.learning_rate = 5e-3;
  c.max_epochs = 60;
  c.patience = 60;
  c.batch_size = 16;
  c.seed = 3;
  const auto r = train(model, ds, c);
  EXPECT_LT(r.history.train_loss.back(), 1e-6);
}

TEST(Train, PatienceOneStopsAtFirstNonImprovement)
{
  // white noise: nothing to learn, so a huge rate only makes validation worse
  Dataset ds;
  ds.values = random_dense(600, 2, 77);
  ds.channel_names = {"a", "b"};
  for (int t = 0; t < 600; ++t)
    ds.timestamps.push_back(std::to_string(t));
  ds = normalize(split(std::move(ds), SplitProtocol::Ratio712));
  auto model = make_model(tiny_backbone(), tiny_embedding(Variant::Shared, 2, 24), 2);
  TrainConfig c;
  c.learning_rate = 1.0;
  c.patience = 1;
  c.seed = 4;
  const auto r = train(model, ds, c);
  // patience 1: the run ends at the first epoch that fails to improve
  const auto& v = r.history.val_loss;
  std::size_t expected = v.size();
  double best = v[0];
  for (std::size_t e = 1; e < v.size(); ++e) {
    if (v[e] >= best) {
      expected = e + 1;
      break;
    }
    best = v[e];
  }
  EXPECT_EQ(r.history.stopping_epoch, expected);
  EXPECT_EQ(r.history.stopping_epoch, r.history.best_epoch + 1);
  EXPECT_LT(r.history.stopping_epoch, c.max_epochs);
}

TEST(Train, RestoresBestValidationSnapshot)
{
  const Dataset ds = planted(600, 3);
  auto model = make_model(tiny_backbone(), tiny_embedding(Variant::LightSAE, 3, 24), 5);
  TrainConfig c;
  c.learning_rate = 2e-2;
  c.max_epochs = 6;
  c.seed = 6;
  auto r = train(model, ds, c);
  const double best = *std::min_element(r.history.val_loss.begin(), r.history.val_loss.end());
  EXPECT_EQ(r.history.val_loss[r.history.best_epoch - 1], best);
  EXPECT_EQ(evaluate(r.model, ds, SplitPart::Val).mse, best);
}

TEST(Train, GridSelectsLowestValidationLoss)
{
  const Dataset ds = planted(600, 2);
  auto model = make_model(tiny_backbone(), tiny_embedding(Variant::Shared, 2, 24), 7);
  TrainConfig c;
  c.lr_grid = {1e-4, 5e-3};
  c.max_epochs = 3;
  c.seed = 8;
  const auto r = train(model, ds, c);
  ASSERT_EQ(r.history.candidates.size(), 2u);
  const auto& best = *std::min_element(r.history.candidates.begin(), r.history.candidates.end(),
                                       [](const auto& a, const auto& b) { return a.best_val_loss < b.best_val_loss; });
  EXPECT_EQ(r.history.selected_lr, best.learning_rate);
}

TEST(Train, SameSeedIsBitIdentical)
{
  const Dataset ds = planted(500, 3);
  auto model = make_model(tiny_backbone(), tiny_embedding(Variant::LightSAE, 3, 24), 9);
  TrainConfig c;
  c.lr_grid = {1e-3, 1e-2};
  c.max_epochs = 3;
  c.seed = 10;
  const auto a = train(model, ds, c), b = train(model, ds, c);
  EXPECT_EQ(history_to_json(a.history, false), history_to_json(b.history, false));
  for (std::size_t k = 0; k < a.model.named().size(); ++k)
    EXPECT_EQ(a.model.named()[k].second->data, b.model.named()[k].second->data);
}

TEST(Train, EvaluationIsRepeatable)
{
  const Dataset ds = planted(500, 2);
  auto model = make_model(tiny_backbone(), tiny_embedding(Variant::SAEFull, 2, 24), 11);
  randomize(model.named(), 12, 0.2);
  EXPECT_EQ(evaluate(model, ds, SplitPart::Test).mse, evaluate(model, ds, SplitPart::Test).mse);
}

TEST(Train, NoTrainingWindowsIsAConfigError)
{
  const Dataset ds = planted(100, 2);
  auto model = make_model(tiny_backbone(), tiny_embedding(Variant::Shared, 2, 96), 13);
  TrainConfig c;
  c.learning_rate = 1e-3;
  EXPECT_THROW(train(model, ds, c), ConfigError);
}
