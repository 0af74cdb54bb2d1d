#include "lightsae/backbone.hpp"
#include "lightsae/error.hpp"
#include "support/testutil.hpp"

#include <gtest/gtest.h>

using namespace lightsae;
using lightsae::testing::check_gradients;
using lightsae::testing::random_dense;
using lightsae::testing::randomize;
using lightsae::testing::small_spec;

namespace {

BackboneSpec small_backbone(BackboneKind kind, ApplyPoint at = ApplyPoint::Embedding)
{
  BackboneSpec b;
  b.kind = kind;
  b.d_model = 6;
  b.hidden_layers = 2;
  b.horizon = 4;
  b.apply_point = at;
  return b;
}

}  // namespace

TEST(Revin, NormalisesRows)
{
  Dense x(2, 3);
  x << 1, 2, 3, 5, 5, 5;
  auto [n, st] = revin_normalize(x, 1e-5);
  EXPECT_NEAR(n.row(0).mean(), 0.0, 1e-15);
  EXPECT_NEAR(std::sqrt(n.row(0).array().square().mean()), 1.0, 1e-12);
  EXPECT_EQ(n.row(1), Dense::Zero(1, 3));
  EXPECT_EQ(st.stdev(1), 1e-5);
}

TEST(Revin, RoundTripAndZeroPrediction)
{
  const Dense x = random_dense(4, 9, 1, -5, 20);
  auto [n, st] = revin_normalize(x, 1e-5);
  EXPECT_LT((revin_denormalize(n, st) - x).cwiseAbs().maxCoeff(), 1e-10);
  const Dense zero = revin_denormalize(Dense::Zero(4, 3), st);
  for (Eigen::Index i = 0; i < 4; ++i)
    for (Eigen::Index h = 0; h < 3; ++h)
      EXPECT_EQ(zero(i, h), st.mean(i));
}

TEST(Revin, RejectsSingleStepWindows) { EXPECT_THROW(revin_normalize(Dense::Zero(2, 1), 1e-5), DimensionError); }

// An affine change of a channel's input moves its RLinear prediction by the
// same affine map.
TEST(Revin, PredictionFollowsInputScaleAndShift)
{
  auto model = make_model(small_backbone(BackboneKind::RLinear), small_spec(Variant::LightSAE, 3, 8, 6), 2);
  randomize(model.named(), 3);
  const Dense x = random_dense(3, 8, 4);
  Dense x2 = x;
  x2.row(1) = x.row(1).array() * 3.5 + 2.0;
  const Dense y = predict(model, x), y2 = predict(model, x2);
  EXPECT_LT((y2.row(1).array() - (y.row(1).array() * 3.5 + 2.0)).abs().maxCoeff(), 1e-10);
  EXPECT_LT((y2.row(0) - y.row(0)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Backbone, SpecValidation)
{
  auto b = small_backbone(BackboneKind::RMLP);
  b.hidden_layers = 0;
  EXPECT_THROW(b.validate(), ConfigError);
  b = small_backbone(BackboneKind::RLinear);
  b.horizon = 0;
  EXPECT_THROW(b.validate(), ConfigError);
  EXPECT_EQ(parse_apply_point("both"), ApplyPoint::Both);
  EXPECT_EQ(parse_backbone("rmlp"), BackboneKind::RMLP);
  EXPECT_THROW(parse_backbone("transformer"), ConfigError);
}

TEST(Forward, OutputShapeAlwaysNByH)
{
  for (auto kind : {BackboneKind::RLinear, BackboneKind::RMLP})
    for (auto at : {ApplyPoint::Embedding, ApplyPoint::Head, ApplyPoint::Both, ApplyPoint::None})
      for (Variant v : kAllVariants) {
        auto model = make_model(small_backbone(kind, at), small_spec(v, 3, 8, 6), 5);
        const Dense y = predict(model, random_dense(3, 8, 6));
        EXPECT_EQ(y.rows(), 3);
        EXPECT_EQ(y.cols(), 4);
      }
}

TEST(Forward, ZeroHeadPredictsWindowMean)
{
  auto model = make_model(small_backbone(BackboneKind::RLinear), small_spec(Variant::Shared, 2, 8, 6), 7);
  model.head.shared_weight->data.setZero();
  const Dense x = random_dense(2, 8, 8, 0, 10);
  const Dense y = predict(model, x);
  for (Eigen::Index i = 0; i < 2; ++i)
    for (Eigen::Index h = 0; h < 4; ++h)
      EXPECT_NEAR(y(i, h), x.row(i).mean(), 1e-12);
}

TEST(Forward, SingleChannelRLinearIsTwoMatrixModel)
{
  auto model = make_model(small_backbone(BackboneKind::RLinear), small_spec(Variant::Shared, 1, 8, 6), 9);
  randomize(model.named(), 10);
  const Dense x = random_dense(1, 8, 11);
  auto [n, st] = revin_normalize(x, 1e-5);
  const Dense h = (n * model.embedding.shared_weight->data).rowwise() + model.embedding.shared_bias.data.row(0);
  const Dense z = (h * model.head.shared_weight->data).rowwise() + model.head.shared_bias.data.row(0);
  EXPECT_LT((predict(model, x) - revin_denormalize(z, st)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Forward, SharedModelIsChannelEquivariant)
{
  auto model = make_model(small_backbone(BackboneKind::RMLP, ApplyPoint::None), small_spec(Variant::LightSAE, 4, 8, 6), 12);
  randomize(model.named(), 13);
  const Dense x = random_dense(4, 8, 14);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(4);
  perm.indices() << 2, 0, 3, 1;
  const Dense px = perm * x;
  EXPECT_LT((predict(model, px) - perm * predict(model, x)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Forward, NoneForcesSharedEverywhere)
{
  auto model = make_model(small_backbone(BackboneKind::RLinear, ApplyPoint::None), small_spec(Variant::LightSAE), 1);
  EXPECT_EQ(model.embedding_spec.variant, Variant::Shared);
  EXPECT_EQ(model.head_spec.variant, Variant::Shared);
  auto both = make_model(small_backbone(BackboneKind::RLinear, ApplyPoint::Both), small_spec(Variant::LightSAE), 1);
  EXPECT_EQ(both.embedding_spec.variant, Variant::LightSAE);
  EXPECT_EQ(both.head_spec.variant, Variant::LightSAE);
  EXPECT_EQ(both.head_spec.in_dim, 6);
  EXPECT_EQ(both.head_spec.out_dim, 4);
}

TEST(Forward, StackedBatchEqualsPerWindowPredictions)
{
  auto model = make_model(small_backbone(BackboneKind::RMLP), small_spec(Variant::SAEPool, 3, 8, 6), 15);
  randomize(model.named(), 16);
  std::vector<Dense> windows = {random_dense(3, 8, 17), random_dense(3, 8, 18), random_dense(3, 8, 19)};
  const Dense stacked = predict_stacked(model, stack_channel_major(windows), 3);
  const auto per = unstack_channel_major(stacked, 3);
  for (std::size_t b = 0; b < windows.size(); ++b)
    EXPECT_LT((per[b] - predict(model, windows[b])).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(Gradient, FullModelsPassFiniteDifferences)
{
  for (auto kind : {BackboneKind::RLinear, BackboneKind::RMLP})
    for (Variant v : kAllVariants) {
      auto model = make_model(small_backbone(kind, ApplyPoint::Both), small_spec(v, 3, 8, 6), 20);
      randomize(model.named(), 21);
      const Dense x = random_dense(6, 8, 22);
      const Dense y = random_dense(6, 4, 23);
      auto r = check_gradients([&](Tape& t) { return mse(forward(t, model, x, 2), y); }, model.named());
      EXPECT_LT(r.max_rel_error, 1e-5) << backbone_name(kind) << "/" << variant_name(v) << " worst " << r.worst;
    }
}

// After one backward pass on random data every trainable matrix has a
// gradient, except the pool left factors whose only path runs through the
// zero-initialised right factor.
TEST(Gradient, ReachesEveryParameter)
{
  auto model = make_model(small_backbone(BackboneKind::RMLP, ApplyPoint::Both), small_spec(Variant::LightSAE, 3, 8, 6), 24);
  for (auto& [name, m] : model.named())
    m->zero_grad();
  Tape t;
  t.backward(mse(forward(t, model, random_dense(3, 8, 25), 1), random_dense(3, 4, 26)));
  for (auto& [name, m] : model.named()) {
    ASSERT_TRUE(m->grad.has_value()) << name;
    const bool first_step_zero = name.find("L_pool") != std::string::npos || name.find("gate_logits") != std::string::npos;
    if (first_step_zero)
      EXPECT_EQ(m->grad->norm(), 0.0) << name;
    else
      EXPECT_GT(m->grad->norm(), 0.0) << name;
  }
}

TEST(Checkpoint, ModelJsonRoundTrip)
{
  auto model = make_model(small_backbone(BackboneKind::RMLP, ApplyPoint::Both), small_spec(Variant::LightSAE), 27);
  randomize(model.named(), 28);
  auto back = model_from_json(Json::parse(model_to_json(model).dump()));
  const Dense x = random_dense(3, 5, 29);
  EXPECT_EQ(predict(model, x), predict(back, x));
  EXPECT_EQ(back.param_count(), model.param_count());
}
