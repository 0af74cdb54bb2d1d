#include "lightsae/error.hpp"
#include "lightsae/experiment.hpp"
#include "lightsae/serialize.hpp"
#include "support/testutil.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

using namespace lightsae;
using lightsae::testing::random_dense;

namespace {

namespace fs = std::filesystem;

struct Cli {
  int code = 0;
  std::string out, err;
};

Cli cli(std::vector<std::string> args)
{
  args.insert(args.begin(), "lightsae");
  std::vector<const char*> argv;
  for (auto& a : args)
    argv.push_back(a.c_str());
  ::testing::internal::CaptureStdout();
  ::testing::internal::CaptureStderr();
  Cli r;
  r.code = cli_main(static_cast<int>(argv.size()), argv.data());
  r.out = ::testing::internal::GetCapturedStdout();
  r.err = ::testing::internal::GetCapturedStderr();
  return r;
}

class CliTest : public ::testing::Test {
 protected:
  fs::path dir;
  void SetUp() override
  {
    dir = fs::temp_directory_path() / ("lightsae_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  // Two sinusoids per channel; exactly linear-predictable.
  fs::path planted_csv(Eigen::Index steps = 800, Eigen::Index channels = 3)
  {
    Dataset ds;
    ds.values.resize(steps, channels);
    for (Eigen::Index c = 0; c < channels; ++c) {
      ds.channel_names.push_back("c" + std::to_string(c));
      for (Eigen::Index t = 0; t < steps; ++t)
        ds.values(t, c) = std::sin(2 * M_PI * static_cast<double>(t) / 16.0 + static_cast<double>(c)) +
                          0.3 * std::sin(2 * M_PI * static_cast<double>(t) / 5.0);
    }
    for (Eigen::Index t = 0; t < steps; ++t)
      ds.timestamps.push_back(std::to_string(t));
    write_csv(ds, dir / "planted.csv");
    return dir / "planted.csv";
  }

  std::vector<std::string> small_flags()
  {
    return {"--lookback", "24", "--horizon", "8", "--d-model", "16", "--rank", "2", "--pool-size", "2",
            "--epochs", "3", "--lr", "5e-3"};
  }

  std::vector<std::string> with(std::vector<std::string> head, const std::vector<std::string>& tail)
  {
    head.insert(head.end(), tail.begin(), tail.end());
    return head;
  }
};

Json strip_timing(Json j)
{
  j.erase("timing");
  return j;
}

}  // namespace

TEST_F(CliTest, MissingDatasetIsExitTwoWithPath)
{
  const auto r = cli({"run", "--data", (dir / "absent.csv").string(), "--seed", "1"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("absent.csv"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("run"), std::string::npos);
}

TEST_F(CliTest, SeedIsMandatoryForRun)
{
  EXPECT_EQ(cli({"run", "--data", planted_csv().string()}).code, 3);
}

TEST_F(CliTest, UnknownVariantIsExitThree)
{
  const auto r = cli(with({"run", "--data", planted_csv().string(), "--seed", "1", "--variant", "Fancy"}, small_flags()));
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("Fancy"), std::string::npos);
}

TEST_F(CliTest, ShortSeriesIsProtocolErrorExitThree)
{
  const auto r = cli(with({"run", "--data", planted_csv().string(), "--seed", "1", "--protocol", "ett_hourly"}, small_flags()));
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("protocol"), std::string::npos);
}

TEST_F(CliTest, PlantedLinearRunIsNearlyExact)
{
  const auto csv = planted_csv();
  auto flags = small_flags();
  flags[11] = "40";  // epochs
  flags.insert(flags.end(), {"--variant", "Shared", "--patience", "40"});
  const auto r = cli(with({"run", "--data", csv.string(), "--seed", "3", "--out", (dir / "out").string()}, flags));
  ASSERT_EQ(r.code, 0) << r.err;
  const Json report = Json::parse(read_text(dir / "out" / "report.json"));
  EXPECT_LT(report["test"]["mse"].get<double>(), 1e-4);
  // config echo reparses to the same config
  const ExperimentConfig echoed = config_from_json(report["config"]);
  EXPECT_EQ(config_to_json(echoed), report["config"]);
  EXPECT_EQ(echoed.train.seed, 3u);
  EXPECT_EQ(echoed.embedding.variant, Variant::Shared);
}

TEST_F(CliTest, ReportIsReproducibleFromEcho)
{
  const auto csv = planted_csv();
  const auto args = with({"run", "--data", csv.string(), "--seed", "5", "--out", (dir / "a").string()}, small_flags());
  ASSERT_EQ(cli(args).code, 0);
  const Json first = Json::parse(read_text(dir / "a" / "report.json"));
  ASSERT_EQ(cli(args).code, 0);
  const Json second = Json::parse(read_text(dir / "a" / "report.json"));
  EXPECT_EQ(strip_timing(first).dump(), strip_timing(second).dump());

  // the echoed config, fed back through --config, gives the same metrics
  write_text(dir / "echo.json", first["config"].dump());
  const auto r = cli({"run", "--config", (dir / "echo.json").string(), "--seed", "5"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(Json::parse(read_text(dir / "a" / "report.json"))["test"], first["test"]);
}

TEST_F(CliTest, ArtifactsAndAnalyses)
{
  const auto csv = planted_csv();
  const auto out = dir / "light";
  ASSERT_EQ(cli(with({"run", "--data", csv.string(), "--seed", "2", "--out", out.string()}, small_flags())).code, 0);
  EXPECT_TRUE(fs::exists(out / "checkpoint.json"));
  EXPECT_TRUE(fs::exists(out / "W_sh.csv"));
  EXPECT_TRUE(fs::exists(out / "gates.csv"));
  for (int i = 0; i < 3; ++i)
    EXPECT_TRUE(fs::exists(out / "weights" / ("aux_c" + std::to_string(i) + ".csv")));

  for (const char* mode : {"energy", "cosine", "gates", "pool"}) {
    const auto r = cli({"analyze", "--weights-dir", (out / "weights").string(), "--mode", mode, "--out", (dir / "an").string(), "--name", "light"});
    EXPECT_EQ(r.code, 0) << mode << ": " << r.err;
  }
  EXPECT_TRUE(fs::exists(dir / "an" / "energy_light_avg.csv"));
  EXPECT_TRUE(fs::exists(dir / "an" / "cos_light.csv"));
  EXPECT_TRUE(fs::exists(dir / "an" / "cos_light_pool.csv"));
  EXPECT_EQ(read_matrix_csv(dir / "an" / "cos_light.csv").rows(), 3);

  // running energy again into the weights dir must not pick up its own output
  EXPECT_EQ(cli({"analyze", "--weights-dir", (out / "weights").string(), "--mode", "energy"}).code, 0);
  EXPECT_EQ(cli({"analyze", "--weights-dir", (out / "weights").string(), "--mode", "energy"}).code, 0);

  const auto ex = cli({"export-weights", "--checkpoint", (out / "checkpoint.json").string(), "--out", (dir / "exported").string()});
  EXPECT_EQ(ex.code, 0) << ex.err;
  EXPECT_EQ(read_matrix_csv(dir / "exported" / "aux_c1.csv"), read_matrix_csv(out / "weights" / "aux_c1.csv"));
}

TEST_F(CliTest, AnalyzeEnergyOfRankOneAndCosineOfOpposites)
{
  const Dense w = random_dense(6, 1, 1) * random_dense(1, 4, 2);
  fs::create_directories(dir / "w");
  write_matrix_csv(w, dir / "w" / "a.csv");
  ASSERT_EQ(cli({"analyze", "--weights-dir", (dir / "w").string(), "--mode", "energy", "--out", (dir / "e").string()}).code, 0);
  EXPECT_NE(read_text(dir / "e" / "energy_a.csv").find("1,1\n"), std::string::npos);

  write_matrix_csv(-w, dir / "w" / "b.csv");
  ASSERT_EQ(cli({"analyze", "--weights-dir", (dir / "w").string(), "--mode", "cosine", "--out", (dir / "e").string()}).code, 0);
  const Dense sim = read_matrix_csv(dir / "e" / "cos_weights.csv");
  EXPECT_NEAR(sim(0, 1), -1.0, 1e-12);
  EXPECT_NEAR(sim(1, 1), 1.0, 1e-12);
}

TEST_F(CliTest, AnalyzeErrors)
{
  const auto csv = planted_csv();
  const auto out = dir / "shared";
  ASSERT_EQ(cli(with({"run", "--data", csv.string(), "--seed", "2", "--out", out.string(), "--variant", "Shared"}, small_flags())).code, 0);
  const auto g = cli({"analyze", "--weights-dir", out.string(), "--mode", "gates"});
  EXPECT_EQ(g.code, 3);
  EXPECT_NE(g.err.find("variant"), std::string::npos) << g.err;

  fs::create_directories(dir / "empty");
  EXPECT_EQ(cli({"analyze", "--weights-dir", (dir / "empty").string(), "--mode", "energy"}).code, 2);
  EXPECT_EQ(cli({"analyze", "--weights-dir", (dir / "nowhere").string(), "--mode", "energy"}).code, 2);
  EXPECT_EQ(cli({"analyze", "--weights-dir", out.string(), "--mode", "spectral"}).code, 3);
}

TEST_F(CliTest, AblateTable)
{
  const auto csv = planted_csv();
  auto flags = small_flags();
  flags[11] = "1";
  const auto r = cli(with({"ablate", "--data", csv.string(), "--seed", "1", "--variants", "Shared,LightSAE,SAE-Full",
                           "--out", (dir / "ab").string()}, flags));
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string table = read_text(dir / "ab" / "ablation.csv");
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 4);
  std::istringstream in(table);
  std::string line;
  int shared_rows = 0;
  while (std::getline(in, line))
    if (line.rfind("Shared,", 0) == 0) {
      ++shared_rows;
      EXPECT_EQ(line.substr(line.size() - 5), ",0.00") << line;
    }
  EXPECT_EQ(shared_rows, 1);
}

TEST_F(CliTest, AblationParamsAtLargeScale)
{
  // 307 channels, d_model 512: no training needed for the parameter columns.
  ExperimentConfig c;
  c.lookback = 96;
  c.backbone.d_model = 512;
  c.embedding.pool_size = 10;
  c.embedding.rank = 25;
  auto light = build_model(c, 307);
  c.embedding.variant = Variant::Shared;
  auto shared = build_model(c, 307);
  EXPECT_EQ(light.param_count() - shared.param_count(), 197054);
}

TEST_F(CliTest, SweepHasFourRowsAndNoneMatchesShared)
{
  const auto csv = planted_csv();
  ExperimentConfig c;
  c.dataset_path = csv.string();
  c.lookback = 24;
  c.backbone.horizon = 8;
  c.backbone.d_model = 16;
  c.embedding.rank = 2;
  c.embedding.pool_size = 2;
  c.train.learning_rate = 5e-3;
  c.train.max_epochs = 2;
  c.train.seed = 4;
  const auto rows = sweep_apply_point(c);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[3].point, ApplyPoint::None);

  c.embedding.variant = Variant::Shared;
  const RunReport shared = run(c);
  EXPECT_EQ(rows[3].mse, shared.test.mse);
  EXPECT_EQ(rows[3].mae, shared.test.mae);

  const auto r = cli({"sweep-apply-point", "--data", csv.string(), "--seed", "4", "--lookback", "24", "--horizon", "8",
                      "--d-model", "16", "--rank", "2", "--pool-size", "2", "--epochs", "1", "--lr", "5e-3"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 5);
}

TEST_F(CliTest, SynthWritesSeriesAndLabels)
{
  const auto r = cli({"synth", "--channels", "6", "--steps", "300", "--groups", "3", "--seed", "9", "--out", (dir / "syn" / "s.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const Dataset ds = load_csv(dir / "syn" / "s.csv");
  EXPECT_EQ(ds.channels(), 6);
  EXPECT_EQ(ds.steps(), 300);
  const Json labels = Json::parse(read_text(dir / "syn" / "groups.json"));
  EXPECT_EQ(labels["groups"], Json::array({0, 1, 2, 0, 1, 2}));
  EXPECT_EQ(cli({"synth", "--channels", "2", "--groups", "3", "--out", (dir / "x.csv").string()}).code, 3);
}

TEST_F(CliTest, HelpAndUsage)
{
  EXPECT_EQ(cli({"--help"}).code, 0);
  EXPECT_EQ(cli({}).code, 3);
  EXPECT_EQ(cli({"frobnicate"}).code, 3);
}

// Directional: per-channel embeddings help on grouped data (majority of 3 seeds).
TEST_F(CliTest, EmbeddingBeatsNoneOnGroupedData)
{
  int wins = 0;
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    const auto syn = synth_grouped(16, 2000, 4, 0.1, seed);
    ExperimentConfig c;
    c.lookback = 48;
    c.backbone.horizon = 12;
    c.backbone.d_model = 32;
    c.embedding.rank = 4;
    c.embedding.pool_size = 4;
    c.train.learning_rate = 5e-3;
    c.train.seed = seed;
    const auto rows = sweep_apply_point(syn.dataset, c);
    ASSERT_EQ(rows[0].point, ApplyPoint::Embedding);
    wins += rows[0].mse < rows[3].mse ? 1 : 0;
  }
  EXPECT_GE(wins, 2);
}
