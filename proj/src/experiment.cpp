#include "lightsae/experiment.hpp"

#include "lightsae/analysis.hpp"
#include "lightsae/error.hpp"
#include "lightsae/serialize.hpp"

#include <algorithm>
#include <regex>
#include <sstream>

namespace lightsae {

namespace {

constexpr Eigen::Index kStandardLookbacks[] = {96, 192, 336, 720};

EmbeddingSpec requested_spec(const ExperimentConfig& config, Eigen::Index channels)
{
  EmbeddingSpec spec;
  spec.variant = config.embedding.variant;
  spec.channels = channels;
  spec.in_dim = config.lookback;
  spec.out_dim = config.backbone.d_model;
  spec.rank = config.embedding.rank;
  spec.pool_size = config.embedding.pool_size;
  spec.use_aux_bias = config.embedding.use_aux_bias;
  return spec;
}

std::int64_t shared_count(EmbeddingSpec spec)
{
  spec.variant = Variant::Shared;
  return param_count(spec);
}

std::string pct(double v)
{
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  os << v;
  return os.str();
}

}  // namespace

std::vector<std::string> ExperimentConfig::validate() const
{
  backbone.validate();
  train.validate();
  if (lookback < 2)
    throw ConfigError("lookback must be >= 2");
  std::vector<std::string> warnings;
  if (std::find(std::begin(kStandardLookbacks), std::end(kStandardLookbacks), lookback) == std::end(kStandardLookbacks))
    warnings.push_back("lookback " + std::to_string(lookback) + " is outside the usual grid {96, 192, 336, 720}");
  return warnings;
}

Json config_to_json(const ExperimentConfig& c)
{
  return Json{{"dataset", Json{{"path", c.dataset_path}, {"protocol", std::string(protocol_name(c.protocol))}}},
              {"backbone", backbone_to_json(c.backbone)},
              {"embedding", Json{{"variant", std::string(variant_name(c.embedding.variant))},
                                 {"rank", c.embedding.rank},
                                 {"pool_size", c.embedding.pool_size},
                                 {"use_aux_bias", c.embedding.use_aux_bias}}},
              {"train", train_config_to_json(c.train)},
              {"lookback", c.lookback},
              {"horizon", c.backbone.horizon},
              {"output_dir", c.output_dir}};
}

ExperimentConfig config_from_json(const Json& j)
{
  try {
    ExperimentConfig c;
    if (j.contains("dataset")) {
      const Json& d = j.at("dataset");
      c.dataset_path = d.value("path", std::string());
      c.protocol = parse_protocol(d.value("protocol", std::string("ratio712")));
    }
    if (j.contains("backbone"))
      c.backbone = backbone_from_json(j.at("backbone"));
    if (j.contains("horizon"))
      c.backbone.horizon = j.at("horizon").get<Eigen::Index>();
    if (j.contains("embedding")) {
      const Json& e = j.at("embedding");
      c.embedding.variant = parse_variant(e.value("variant", std::string("LightSAE")));
      c.embedding.rank = e.value("rank", c.embedding.rank);
      c.embedding.pool_size = e.value("pool_size", c.embedding.pool_size);
      c.embedding.use_aux_bias = e.value("use_aux_bias", c.embedding.use_aux_bias);
    }
    if (j.contains("train"))
      c.train = train_config_from_json(j.at("train"));
    c.lookback = j.value("lookback", c.lookback);
    c.output_dir = j.value("output_dir", std::string());
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }
}

Json report_to_json(const RunReport& r, bool include_timing)
{
  Json j{{"config", config_to_json(r.config)},
         {"test", Json{{"mse", r.test.mse}, {"mae", r.test.mae}, {"windows", r.test.windows}}},
         {"params", Json{{"total", r.params.total},
                         {"embedding", r.params.embedding},
                         {"embedding_delta", r.params.embedding_delta}}},
         {"history", history_to_json(r.history, false)},
         {"artifacts", r.artifacts},
         {"warnings", r.warnings}};
  if (include_timing)
    j["timing"] = Json{{"wall_clock_seconds", r.history.wall_clock_seconds}};
  return j;
}

ForecastModel build_model(const ExperimentConfig& config, Eigen::Index channels)
{
  return make_model(config.backbone, requested_spec(config, channels), config.train.seed);
}

std::vector<std::string> export_weights(const EmbeddingParams& params, const EmbeddingSpec& spec,
                                        const std::filesystem::path& dir)
{
  std::vector<std::string> written;
  if (spec.variant == Variant::Shared)
    return written;
  for (Eigen::Index i = 0; i < spec.channels; ++i) {
    const auto path = dir / ("aux_c" + std::to_string(i) + ".csv");
    write_matrix_csv(compose_aux_weight(params, spec, i), path);
    written.push_back(path.string());
  }
  return written;
}

RunReport run_on(const Dataset& raw, const ExperimentConfig& config)
{
  RunReport report;
  report.config = config;
  report.warnings = config.validate();
  const Dataset ds = normalize(split(raw, config.protocol));

  ForecastModel initial = build_model(config, ds.channels());
  for (auto& w : initial.embedding_spec.validate())
    report.warnings.push_back(w);
  if (windows(ds, SplitPart::Val, config.lookback, config.backbone.horizon, 1, 0).window_count() == 0)
    report.warnings.push_back("validation split has no full window; model selection uses training loss");

  TrainResult trained = train(initial, ds, config.train);
  report.history = trained.history;
  report.test = evaluate(trained.model, ds, SplitPart::Test);

  ForecastModel& model = trained.model;
  report.params.total = model.param_count();
  report.params.embedding = param_count(model.embedding_spec);
  report.params.embedding_delta = report.params.embedding - shared_count(model.embedding_spec) +
                                  param_count(model.head_spec) - shared_count(model.head_spec);

  if (!config.output_dir.empty()) {
    const std::filesystem::path out(config.output_dir);
    std::filesystem::create_directories(out);
    write_text(out / "checkpoint.json", model_to_json(model).dump());
    report.artifacts.push_back((out / "checkpoint.json").string());
    if (model.embedding.shared_weight) {
      write_matrix_csv(model.embedding.shared_weight->data, out / "W_sh.csv");
      report.artifacts.push_back((out / "W_sh.csv").string());
    }
    for (auto& p : export_weights(model.embedding, model.embedding_spec, out / "weights"))
      report.artifacts.push_back(std::move(p));
    if (uses_pool(model.embedding_spec.variant)) {
      export_gates(model.embedding, model.embedding_spec, out / "gates.csv");
      report.artifacts.push_back((out / "gates.csv").string());
    }
    report.artifacts.push_back((out / "report.json").string());
    write_text(out / "report.json", report_to_json(report).dump(2));
  }
  return report;
}

RunReport run(const ExperimentConfig& config)
{
  if (config.dataset_path.empty())
    throw ConfigError("no dataset path given");
  return run_on(load_csv(config.dataset_path), config);
}

std::vector<AblationRow> ablate(const Dataset& raw, const ExperimentConfig& base, const std::vector<Variant>& variants)
{
  if (variants.empty())
    throw ConfigError("ablate: no variants requested");
  auto run_variant = [&](Variant v) {
    ExperimentConfig c = base;
    c.embedding.variant = v;
    if (!base.output_dir.empty())
      c.output_dir = (std::filesystem::path(base.output_dir) / std::string(variant_name(v))).string();
    return run_on(raw, c);
  };

  std::optional<RunReport> shared;
  std::vector<std::pair<Variant, RunReport>> reports;
  for (Variant v : variants) {
    reports.emplace_back(v, run_variant(v));
    if (v == Variant::Shared && !shared)
      shared = reports.back().second;
  }
  if (!shared) {
    ExperimentConfig c = base;
    c.output_dir.clear();
    c.embedding.variant = Variant::Shared;
    shared = run_on(raw, c);
  }

  std::vector<AblationRow> rows;
  for (const auto& [v, r] : reports) {
    AblationRow row;
    row.variant = v;
    row.mse = r.test.mse;
    row.mse_delta_pct = 100.0 * (shared->test.mse - r.test.mse) / shared->test.mse;
    row.params = r.params.total;
    row.params_delta_pct = 100.0 * static_cast<double>(r.params.total - shared->params.total) /
                           static_cast<double>(shared->params.total);
    rows.push_back(row);
  }
  if (!base.output_dir.empty())
    write_text(std::filesystem::path(base.output_dir) / "ablation.csv", ablation_csv(rows));
  return rows;
}

std::vector<AblationRow> ablate(const ExperimentConfig& base, const std::vector<Variant>& variants)
{
  return ablate(load_csv(base.dataset_path), base, variants);
}

std::string ablation_csv(const std::vector<AblationRow>& rows)
{
  std::string text = "variant,framework,lr,pool,mse,mse_delta_pct,params,params_delta_pct\n";
  for (const auto& r : rows) {
    text += std::string(variant_name(r.variant)) + "," + std::string(framework_name(framework_of(r.variant))) + "," +
            (uses_low_rank(r.variant) ? "yes" : "no") + "," + (uses_pool(r.variant) ? "yes" : "no") + "," +
            format_double(r.mse) + "," + pct(r.mse_delta_pct) + "," + std::to_string(r.params) + "," +
            pct(r.params_delta_pct) + "\n";
  }
  return text;
}

std::vector<ApplyPointRow> sweep_apply_point(const Dataset& raw, const ExperimentConfig& base)
{
  std::vector<ApplyPointRow> rows;
  for (ApplyPoint p : {ApplyPoint::Embedding, ApplyPoint::Head, ApplyPoint::Both, ApplyPoint::None}) {
    ExperimentConfig c = base;
    c.backbone.apply_point = p;
    if (!base.output_dir.empty())
      c.output_dir = (std::filesystem::path(base.output_dir) / std::string(apply_point_name(p))).string();
    const RunReport r = run_on(raw, c);
    rows.push_back({p, r.test.mse, r.test.mae, r.params.total});
  }
  if (!base.output_dir.empty())
    write_text(std::filesystem::path(base.output_dir) / "apply_point.csv", apply_point_csv(rows));
  return rows;
}

std::vector<ApplyPointRow> sweep_apply_point(const ExperimentConfig& base)
{
  return sweep_apply_point(load_csv(base.dataset_path), base);
}

std::string apply_point_csv(const std::vector<ApplyPointRow>& rows)
{
  std::string text = "apply_point,mse,mae,params\n";
  for (const auto& r : rows)
    text += std::string(apply_point_name(r.point)) + "," + format_double(r.mse) + "," + format_double(r.mae) + "," +
            std::to_string(r.params) + "\n";
  return text;
}

namespace {

// Files analyze() itself writes, so rerunning into the same directory is safe.
bool is_analysis_output(const std::filesystem::path& p)
{
  const std::string stem = p.stem().string();
  return stem.rfind("energy_", 0) == 0 || stem.rfind("cos_", 0) == 0 || stem == "gates";
}

}  // namespace

AnalyzeMode parse_analyze_mode(std::string_view name)
{
  if (name == "energy")
    return AnalyzeMode::Energy;
  if (name == "cosine")
    return AnalyzeMode::Cosine;
  if (name == "gates")
    return AnalyzeMode::Gates;
  if (name == "pool")
    return AnalyzeMode::Pool;
  throw ConfigError("unknown analyze mode '" + std::string(name) + "' (expected energy|cosine|gates|pool)");
}

std::vector<std::string> analyze(const std::filesystem::path& weights_dir, AnalyzeMode mode,
                                 const std::filesystem::path& out_dir, const std::string& name)
{
  if (!std::filesystem::is_directory(weights_dir))
    throw ParseError("weights directory not found: " + weights_dir.string());
  std::vector<std::string> written;

  if (mode == AnalyzeMode::Gates || mode == AnalyzeMode::Pool) {
    // run() keeps checkpoint.json one level above weights/
    auto checkpoint = weights_dir / "checkpoint.json";
    if (!std::filesystem::exists(checkpoint) && std::filesystem::exists(weights_dir.parent_path() / "checkpoint.json"))
      checkpoint = weights_dir.parent_path() / "checkpoint.json";
    if (!std::filesystem::exists(checkpoint))
      throw ParseError("no checkpoint.json in " + weights_dir.string());
    Json j;
    try {
      j = Json::parse(read_text(checkpoint));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(checkpoint.string() + ": " + e.what());
    }
    // Accept a full model checkpoint or a bare embedding envelope.
    auto [spec, params] = params_from_json(j.contains("embedding") ? j.at("embedding") : j);
    if (mode == AnalyzeMode::Gates) {
      const auto path = out_dir / "gates.csv";
      export_gates(params, spec, path);
      written.push_back(path.string());
    } else {
      const auto path = out_dir / ("cos_" + name + "_pool.csv");
      write_matrix_csv(pool_similarity(params, spec), path);
      written.push_back(path.string());
    }
    return written;
  }

  // Weight files, ordered by the numeric part of their name (aux_c2 < aux_c10).
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(weights_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".csv" && !is_analysis_output(entry.path()))
      files.push_back(entry.path());
  if (files.empty())
    throw ParseError("no weight CSV files in " + weights_dir.string());
  const std::regex digits("(\\d+)");
  auto key = [&](const std::filesystem::path& p) {
    const std::string stem = p.stem().string();
    std::smatch m;
    long n = -1;
    if (std::regex_search(stem, m, digits))
      n = std::stol(m.str(1));
    return std::make_pair(std::regex_replace(stem, digits, ""), n);
  };
  std::sort(files.begin(), files.end(), [&](const auto& a, const auto& b) {
    const auto ka = key(a), kb = key(b);
    return ka != kb ? ka < kb : a < b;
  });

  std::vector<Dense> weights;
  for (const auto& f : files)
    weights.push_back(read_matrix_csv(f));

  if (mode == AnalyzeMode::Energy) {
    std::vector<EnergyCurve> curves;
    for (std::size_t k = 0; k < files.size(); ++k) {
      curves.push_back(cumulative_energy(weights[k]));
      const auto path = out_dir / ("energy_" + files[k].stem().string() + ".csv");
      write_energy_csv(curves.back().cumulative, path);
      written.push_back(path.string());
    }
    bool same_length = std::all_of(curves.begin(), curves.end(), [&](const EnergyCurve& c) {
      return c.cumulative.size() == curves.front().cumulative.size();
    });
    if (curves.size() > 1 && same_length) {
      const auto path = out_dir / ("energy_" + name + "_avg.csv");
      write_energy_csv(average_energy(curves), path);
      written.push_back(path.string());
    }
  } else {
    const auto path = out_dir / ("cos_" + name + ".csv");
    write_matrix_csv(cosine_similarity_matrix(weights), path);
    written.push_back(path.string());
  }
  return written;
}

}  // namespace lightsae
