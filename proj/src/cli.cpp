#include "lightsae/analysis.hpp"
#include "lightsae/error.hpp"
#include "lightsae/experiment.hpp"
#include "lightsae/serialize.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

namespace lightsae {

namespace {

// Flags shared by run / ablate / sweep-apply-point. Anything left unset falls
// back to the --config file, then to built-in defaults.
struct ExperimentFlags {
  std::string config_file;
  std::optional<std::string> data, protocol, backbone, apply_point, variant, out;
  std::optional<Eigen::Index> d_model, hidden_layers, horizon, lookback, rank, pool_size;
  bool no_aux_bias = false;
  std::optional<double> lr;
  std::vector<std::string> lr_grid;
  std::optional<std::size_t> epochs, patience, batch_size;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App& app, bool seed_required)
  {
    app.add_option("--config", config_file, "JSON experiment config")->check(CLI::ExistingFile);
    app.add_option("--data", data, "TSLib-style CSV (date,ch1,...,chN)");
    app.add_option("--protocol", protocol, "ett_hourly | ett_quarter | ratio712");
    app.add_option("--backbone", backbone, "RLinear | RMLP");
    app.add_option("--apply-point", apply_point, "embedding | head | both | none");
    app.add_option("--variant", variant, "embedding variant, e.g. LightSAE, SAE-Full, Shared");
    app.add_option("--d-model", d_model);
    app.add_option("--hidden-layers", hidden_layers);
    app.add_option("--horizon", horizon);
    app.add_option("--lookback", lookback);
    app.add_option("--rank", rank);
    app.add_option("--pool-size", pool_size);
    app.add_flag("--no-aux-bias", no_aux_bias, "drop the per-channel auxiliary biases");
    app.add_option("--lr", lr, "single learning rate");
    app.add_option("--lr-grid", lr_grid, "learning-rate candidates, or 'default'")->delimiter(',');
    app.add_option("--epochs", epochs);
    app.add_option("--patience", patience);
    app.add_option("--batch-size", batch_size);
    auto* s = app.add_option("--seed", seed);
    if (seed_required)
      s->required();
    app.add_option("--out", out, "output directory");
  }

  ExperimentConfig resolve() const
  {
    ExperimentConfig c;
    if (!config_file.empty()) {
      try {
        c = config_from_json(Json::parse(read_text(config_file)));
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(config_file + ": " + e.what());
      }
    }
    if (data)
      c.dataset_path = *data;
    if (protocol)
      c.protocol = parse_protocol(*protocol);
    if (backbone)
      c.backbone.kind = parse_backbone(*backbone);
    if (apply_point)
      c.backbone.apply_point = parse_apply_point(*apply_point);
    if (variant)
      c.embedding.variant = parse_variant(*variant);
    if (d_model)
      c.backbone.d_model = *d_model;
    if (hidden_layers)
      c.backbone.hidden_layers = *hidden_layers;
    if (horizon)
      c.backbone.horizon = *horizon;
    if (lookback)
      c.lookback = *lookback;
    if (rank)
      c.embedding.rank = *rank;
    if (pool_size)
      c.embedding.pool_size = *pool_size;
    if (no_aux_bias)
      c.embedding.use_aux_bias = false;
    if (lr) {
      c.train.learning_rate = *lr;
      c.train.lr_grid.clear();
    }
    if (!lr_grid.empty()) {
      c.train.lr_grid.clear();
      for (const auto& s : lr_grid) {
        if (s == "default") {
          c.train.lr_grid.assign(std::begin(kDefaultLrGrid), std::end(kDefaultLrGrid));
          continue;
        }
        try {
          c.train.lr_grid.push_back(std::stod(s));
        } catch (const std::exception&) {
          throw ConfigError("bad --lr-grid entry '" + s + "'");
        }
      }
    }
    if (epochs)
      c.train.max_epochs = *epochs;
    if (patience)
      c.train.patience = *patience;
    if (batch_size)
      c.train.batch_size = *batch_size;
    if (seed)
      c.train.seed = *seed;
    if (out)
      c.output_dir = *out;
    if (c.dataset_path.empty())
      throw ConfigError("no dataset: pass --data or a config with dataset.path");
    if (!c.train.learning_rate && c.train.lr_grid.empty())
      c.train.learning_rate = 1e-3;
    return c;
  }
};

int exit_code_for(const std::exception& e)
{
  if (dynamic_cast<const ParseError*>(&e) != nullptr || dynamic_cast<const std::filesystem::filesystem_error*>(&e))
    return 2;
  return 3;
}

std::string error_kind(const std::exception& e)
{
  if (dynamic_cast<const ParseError*>(&e))
    return "input error";
  if (dynamic_cast<const VariantError*>(&e))
    return "variant error";
  if (dynamic_cast<const DimensionError*>(&e))
    return "dimension error";
  if (dynamic_cast<const ProtocolError*>(&e))
    return "protocol error";
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ContractError*>(&e))
    return "configuration error";
  if (dynamic_cast<const std::filesystem::filesystem_error*>(&e))
    return "filesystem error";
  return "error";
}

}  // namespace

int cli_main(int argc, const char* const* argv)
{
  CLI::App app{"Shared-auxiliary embedding forecasting lab"};
  app.require_subcommand(1);

  ExperimentFlags run_flags, ablate_flags, sweep_flags;
  auto* run_cmd = app.add_subcommand("run", "train one configuration and write report.json");
  run_flags.attach(*run_cmd, true);

  auto* ablate_cmd = app.add_subcommand("ablate", "train several embedding variants on identical data");
  ablate_flags.attach(*ablate_cmd, false);
  std::vector<std::string> variant_list;
  ablate_cmd->add_option("--variants", variant_list, "comma separated, or 'all'")->delimiter(',');

  auto* sweep_cmd = app.add_subcommand("sweep-apply-point", "compare embedding|head|both|none");
  sweep_flags.attach(*sweep_cmd, false);

  auto* analyze_cmd = app.add_subcommand("analyze", "energy / cosine / gates / pool analyses");
  std::string weights_dir, mode, analyze_out, analyze_name = "weights";
  analyze_cmd->add_option("--weights-dir", weights_dir)->required();
  analyze_cmd->add_option("--mode", mode, "energy | cosine | gates | pool")->required();
  analyze_cmd->add_option("--out", analyze_out, "output directory (default: weights dir)");
  analyze_cmd->add_option("--name", analyze_name, "tag used in output file names");

  auto* synth_cmd = app.add_subcommand("synth", "write a grouped synthetic dataset and groups.json");
  Eigen::Index synth_channels = 32, synth_steps = 4000;
  int synth_groups = 4;
  double synth_noise = 0.1;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  synth_cmd->add_option("--channels", synth_channels);
  synth_cmd->add_option("--steps", synth_steps);
  synth_cmd->add_option("--groups", synth_groups);
  synth_cmd->add_option("--noise", synth_noise);
  synth_cmd->add_option("--seed", synth_seed);
  synth_cmd->add_option("--out", synth_out, "CSV path")->required();

  auto* export_cmd = app.add_subcommand("export-weights", "write aux_c{i}.csv from a checkpoint");
  std::string checkpoint_path, export_out;
  export_cmd->add_option("--checkpoint", checkpoint_path)->required();
  export_cmd->add_option("--out", export_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::Error& e) {
    app.exit(e);
    return 3;
  }

  const std::string sub = app.get_subcommands().front()->get_name();
  try {
    if (*run_cmd) {
      const RunReport r = run(run_flags.resolve());
      for (const auto& w : r.warnings)
        std::cerr << "warning: " << w << "\n";
      std::cout << report_to_json(r).dump(2) << "\n";
    } else if (*ablate_cmd) {
      const ExperimentConfig base = ablate_flags.resolve();
      std::vector<Variant> variants;
      for (const auto& v : variant_list) {
        if (v == "all")
          variants.assign(std::begin(kAllVariants), std::end(kAllVariants));
        else
          variants.push_back(parse_variant(v));
      }
      if (variants.empty())
        variants.assign(std::begin(kAllVariants), std::end(kAllVariants));
      std::cout << ablation_csv(ablate(base, variants));
    } else if (*sweep_cmd) {
      std::cout << apply_point_csv(sweep_apply_point(sweep_flags.resolve()));
    } else if (*analyze_cmd) {
      const auto out = analyze_out.empty() ? std::filesystem::path(weights_dir) : std::filesystem::path(analyze_out);
      for (const auto& f : analyze(weights_dir, parse_analyze_mode(mode), out, analyze_name))
        std::cout << f << "\n";
    } else if (*synth_cmd) {
      const SyntheticDataset s = synth_grouped(synth_channels, synth_steps, synth_groups, synth_noise, synth_seed);
      const std::filesystem::path out(synth_out);
      write_csv(s.dataset, out);
      const auto sidecar = out.parent_path() / "groups.json";
      write_text(sidecar, Json{{"groups", s.groups},
                               {"channels", synth_channels},
                               {"steps", synth_steps},
                               {"group_count", synth_groups},
                               {"noise", synth_noise},
                               {"seed", synth_seed}}
                              .dump(2));
      std::cout << out.string() << "\n" << sidecar.string() << "\n";
    } else if (*export_cmd) {
      Json j;
      try {
        j = Json::parse(read_text(checkpoint_path));
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(checkpoint_path + ": " + e.what());
      }
      auto [spec, params] = params_from_json(j.contains("embedding") ? j.at("embedding") : j);
      if (spec.variant == Variant::Shared)
        throw VariantError("checkpoint uses the Shared variant; it has no auxiliary weights");
      for (const auto& f : export_weights(params, spec, export_out))
        std::cout << f << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "lightsae " << sub << ": " << error_kind(e) << ": " << e.what() << "\n";
    return exit_code_for(e);
  }
  return 0;
}

}  // namespace lightsae
