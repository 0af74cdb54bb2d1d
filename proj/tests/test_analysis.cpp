#include "lightsae/analysis.hpp"
#include "lightsae/error.hpp"
#include "support/testutil.hpp"

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include <filesystem>

using namespace lightsae;
using lightsae::testing::random_dense;
using lightsae::testing::randomize;
using lightsae::testing::small_spec;

TEST(Energy, SmallClosedForms)
{
  Dense d(2, 2);
  d << 3, 0, 0, 4;
  const auto e = cumulative_energy(d);
  EXPECT_NEAR(e.cumulative[0], 0.64, 1e-15);
  EXPECT_EQ(e.cumulative[1], 1.0);
  EXPECT_EQ(effective_rank(e, 0.5), 1);
  EXPECT_EQ(effective_rank(e, 0.95), 2);

  const Dense r1 = random_dense(7, 1, 1) * random_dense(1, 5, 2);
  const auto e1 = cumulative_energy(r1);
  EXPECT_EQ(e1.cumulative[0], 1.0);
  EXPECT_EQ(effective_rank(e1, 0.95), 1);

  const auto ei = cumulative_energy(Dense(Dense::Identity(10, 10)));
  for (int k = 0; k < 10; ++k)
    EXPECT_NEAR(ei.cumulative[static_cast<std::size_t>(k)], (k + 1) / 10.0, 1e-14);
  EXPECT_EQ(effective_rank(ei, 0.95), 10);
}

TEST(Energy, MatchesGramEigenOracle)
{
  const Dense w = random_dense(96, 64, 3);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Eigen::MatrixXd(w.transpose() * w));
  std::vector<double> lambda(eig.eigenvalues().data(), eig.eigenvalues().data() + 64);
  std::sort(lambda.rbegin(), lambda.rend());
  double total = 0.0;
  for (double l : lambda)
    total += l;
  const auto e = cumulative_energy(w);
  double running = 0.0;
  for (std::size_t k = 0; k < 64; ++k) {
    running += lambda[k];
    EXPECT_NEAR(e.cumulative[k], running / total, 1e-8);
  }
}

TEST(Energy, MonotoneEndingAtOne)
{
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto e = cumulative_energy(random_dense(12, 9, 10 + s));
    EXPECT_EQ(e.cumulative.back(), 1.0);
    EXPECT_TRUE(std::is_sorted(e.cumulative.begin(), e.cumulative.end()));
  }
}

TEST(Energy, Errors)
{
  EXPECT_THROW(cumulative_energy(Dense(Dense::Zero(3, 3))), ContractError);
  const auto e = cumulative_energy(random_dense(3, 3, 4));
  EXPECT_THROW(effective_rank(e, 0.0), ContractError);
  EXPECT_THROW(effective_rank(e, 1.5), ContractError);
}

TEST(Energy, AverageIsPointwise)
{
  std::vector<EnergyCurve> cs = {cumulative_energy(random_dense(5, 4, 5)), cumulative_energy(random_dense(5, 4, 6))};
  const auto avg = average_energy(cs);
  for (std::size_t k = 0; k < 4; ++k)
    EXPECT_DOUBLE_EQ(avg[k], 0.5 * (cs[0].cumulative[k] + cs[1].cumulative[k]));
}

TEST(Cosine, Examples)
{
  const Dense w = random_dense(4, 3, 7);
  std::vector<Dense> same = {w, w};
  EXPECT_NEAR(cosine_similarity_matrix(same)(0, 1), 1.0, 1e-15);
  std::vector<Dense> opp = {w, -w};
  EXPECT_NEAR(cosine_similarity_matrix(opp)(0, 1), -1.0, 1e-15);
  Dense e11 = Dense::Zero(2, 2), e22 = Dense::Zero(2, 2);
  e11(0, 0) = 1;
  e22(1, 1) = 1;
  std::vector<Dense> orth = {e11, e22};
  EXPECT_EQ(cosine_similarity_matrix(orth)(0, 1), 0.0);
}

TEST(Cosine, SymmetricUnitDiagonalBounded)
{
  std::vector<Dense> ws;
  for (std::uint64_t s = 0; s < 6; ++s)
    ws.push_back(random_dense(5, 4, 20 + s));
  const Dense sim = cosine_similarity_matrix(ws);
  EXPECT_EQ(sim, sim.transpose());
  for (Eigen::Index p = 0; p < 6; ++p)
    EXPECT_EQ(sim(p, p), 1.0);
  EXPECT_LE(sim.cwiseAbs().maxCoeff(), 1.0 + 1e-12);
}

TEST(Cosine, Errors)
{
  std::vector<Dense> one = {random_dense(2, 2, 1)};
  EXPECT_THROW(cosine_similarity_matrix(one), ContractError);
  std::vector<Dense> mixed = {random_dense(2, 2, 1), random_dense(2, 3, 2)};
  EXPECT_THROW(cosine_similarity_matrix(mixed), ContractError);
  std::vector<Dense> zero = {random_dense(2, 2, 1), Dense::Zero(2, 2)};
  EXPECT_THROW(cosine_similarity_matrix(zero), ContractError);
}

TEST(Contrast, WithinAndCross)
{
  Dense sim(4, 4);
  sim << 1, 0.9, 0.1, 0.2, 0.9, 1, 0.3, 0.0, 0.1, 0.3, 1, 0.7, 0.2, 0.0, 0.7, 1;
  const std::vector<int> labels = {0, 0, 1, 1};
  const auto c = group_contrast(sim, labels);
  EXPECT_NEAR(c.within, 0.8, 1e-15);
  EXPECT_NEAR(c.cross, 0.15, 1e-15);
  EXPECT_NEAR(c.gap(), 0.65, 1e-15);
}

TEST(Gates, ExportAndReparse)
{
  auto spec = small_spec(Variant::LightSAE, 5);
  spec.pool_size = 4;
  auto p = init_params(spec, 1);
  const auto dir = std::filesystem::temp_directory_path() / "lightsae_gates_test";
  export_gates(p, spec, dir / "gates.csv");
  const Dense uniform = read_gates(dir / "gates.csv");
  EXPECT_EQ(uniform, Dense::Constant(5, 4, 0.25));

  randomize(p.named(), 2, 3.0);
  export_gates(p, spec, dir / "gates.csv");
  EXPECT_LT((read_gates(dir / "gates.csv") - gate_table(p, spec)).cwiseAbs().maxCoeff(), 1e-12);
  std::filesystem::remove_all(dir);
}

TEST(Pool, DuplicateAndDiagonal)
{
  auto spec = small_spec(Variant::LightSAE, 3, 16, 8);
  spec.pool_size = 3;
  auto p = init_params(spec, 3);
  p.pool_left[2].data = p.pool_left[0].data;
  const Dense sim = pool_similarity(p, spec);
  EXPECT_NEAR(sim(0, 2), 1.0, 1e-12);
  for (Eigen::Index k = 0; k < 3; ++k)
    EXPECT_NEAR(sim(k, k), 1.0, 1e-12);
}

// Independent random components are nearly orthogonal once L*r >= 512.
TEST(Pool, RandomComponentsNearlyOrthogonal)
{
  int ok = 0;
  const int trials = 20;
  for (int s = 0; s < trials; ++s) {
    auto spec = small_spec(Variant::LightSAE, 4, 128, 8);
    spec.rank = 4;
    spec.pool_size = 4;
    auto p = init_params(spec, 100 + static_cast<std::uint64_t>(s));
    const Dense sim = pool_similarity(p, spec);
    const double off = (sim - Dense::Identity(4, 4)).cwiseAbs().maxCoeff();
    ok += off < 0.2 ? 1 : 0;
  }
  EXPECT_GE(ok, trials - 1);
}

TEST(Pool, Errors)
{
  const auto spec = small_spec(Variant::SAEFull);
  auto p = init_params(spec, 1);
  EXPECT_THROW(pool_similarity(p, spec), VariantError);
  auto one = small_spec(Variant::LightSAE);
  one.pool_size = 1;
  auto q = init_params(one, 1);
  EXPECT_THROW(pool_similarity(q, one), ContractError);
}
