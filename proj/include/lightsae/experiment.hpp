#ifndef LIGHTSAE_EXPERIMENT_HPP_
#define LIGHTSAE_EXPERIMENT_HPP_

#include "lightsae/backbone.hpp"
#include "lightsae/data.hpp"
#include "lightsae/training.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace lightsae {

// Variant choice and its hyperparameters; channel count and dimensions are
// filled in from the dataset and backbone.
struct EmbeddingChoice {
  Variant variant = Variant::LightSAE;
  Eigen::Index rank = 25;
  Eigen::Index pool_size = 3;
  bool use_aux_bias = true;
  bool operator==(const EmbeddingChoice&) const = default;
};

struct ExperimentConfig {
  std::string dataset_path;
  SplitProtocol protocol = SplitProtocol::Ratio712;
  BackboneSpec backbone;
  EmbeddingChoice embedding;
  TrainConfig train;
  Eigen::Index lookback = 96;
  std::string output_dir;  // empty: write nothing

  Eigen::Index horizon() const { return backbone.horizon; }
  // Warnings for unusual but legal settings.
  std::vector<std::string> validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

Json config_to_json(const ExperimentConfig& c);
ExperimentConfig config_from_json(const Json& j);

struct ParamSummary {
  std::int64_t total = 0;
  std::int64_t embedding = 0;
  std::int64_t embedding_delta = 0;  // over the Shared embedding of the same shape
};

struct RunReport {
  ExperimentConfig config;
  Metrics test;
  ParamSummary params;
  TrainHistory history;
  std::vector<std::string> artifacts;
  std::vector<std::string> warnings;
};

// Report as written to report.json. Timing lives under "timing" so that
// to_json(r, false) is identical across reruns with the same seed.
Json report_to_json(const RunReport& r, bool include_timing = true);

// load -> split -> normalize -> train -> evaluate on the test split.
RunReport run(const ExperimentConfig& config);
// Same on an in-memory dataset (split and normalization still applied here).
RunReport run_on(const Dataset& raw, const ExperimentConfig& config);

// Model construction used by run(): layer shapes from the dataset and config.
ForecastModel build_model(const ExperimentConfig& config, Eigen::Index channels);

struct AblationRow {
  Variant variant;
  double mse = 0.0;
  double mse_delta_pct = 0.0;  // improvement over Shared, positive is better
  std::int64_t params = 0;
  double params_delta_pct = 0.0;
};

std::vector<AblationRow> ablate(const Dataset& raw, const ExperimentConfig& base, const std::vector<Variant>& variants);
std::vector<AblationRow> ablate(const ExperimentConfig& base, const std::vector<Variant>& variants);
std::string ablation_csv(const std::vector<AblationRow>& rows);

struct ApplyPointRow {
  ApplyPoint point;
  double mse = 0.0;
  double mae = 0.0;
  std::int64_t params = 0;
};

std::vector<ApplyPointRow> sweep_apply_point(const Dataset& raw, const ExperimentConfig& base);
std::vector<ApplyPointRow> sweep_apply_point(const ExperimentConfig& base);
std::string apply_point_csv(const std::vector<ApplyPointRow>& rows);

// Writes aux_c{i}.csv for every channel (the auxiliary weight, or the whole
// channel weight for Ind variants). Shared variants export nothing.
std::vector<std::string> export_weights(const EmbeddingParams& params, const EmbeddingSpec& spec,
                                        const std::filesystem::path& dir);

enum class AnalyzeMode { Energy, Cosine, Gates, Pool };
AnalyzeMode parse_analyze_mode(std::string_view name);

// Energy/cosine read every *.csv weight matrix in weights_dir; gates/pool
// read weights_dir/checkpoint.json. Returns the files written.
std::vector<std::string> analyze(const std::filesystem::path& weights_dir, AnalyzeMode mode,
                                 const std::filesystem::path& out_dir, const std::string& name = "weights");

// Command-line entry point. Exit codes: 0 ok, 2 input/environment error,
// 3 configuration/variant error.
int cli_main(int argc, const char* const* argv);

}  // namespace lightsae

#endif  // LIGHTSAE_EXPERIMENT_HPP_
