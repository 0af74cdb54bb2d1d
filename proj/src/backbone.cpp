#include "lightsae/backbone.hpp"

#include "lightsae/error.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>

namespace lightsae {

namespace {

std::string lower(std::string_view s)
{
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

// splitmix64 finaliser; derives independent seeds for the model's layers.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream)
{
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

template<typename Pairs>
void append_prefixed(Pairs& out, const std::string& prefix, Pairs items)
{
  for (auto& [name, m] : items)
    out.emplace_back(prefix + name, m);
}

}  // namespace

std::string_view backbone_name(BackboneKind k)
{
  return k == BackboneKind::RLinear ? "RLinear" : "RMLP";
}

BackboneKind parse_backbone(std::string_view name)
{
  const std::string key = lower(name);
  if (key == "rlinear")
    return BackboneKind::RLinear;
  if (key == "rmlp")
    return BackboneKind::RMLP;
  throw ConfigError("unknown backbone '" + std::string(name) + "' (expected RLinear or RMLP)");
}

std::string_view apply_point_name(ApplyPoint p)
{
  switch (p) {
    case ApplyPoint::Embedding: return "embedding";
    case ApplyPoint::Head: return "head";
    case ApplyPoint::Both: return "both";
    case ApplyPoint::None: return "none";
  }
  return "?";
}

ApplyPoint parse_apply_point(std::string_view name)
{
  const std::string key = lower(name);
  for (ApplyPoint p : {ApplyPoint::Embedding, ApplyPoint::Head, ApplyPoint::Both, ApplyPoint::None})
    if (apply_point_name(p) == key)
      return p;
  throw ConfigError("unknown apply point '" + std::string(name) + "' (expected embedding|head|both|none)");
}

void BackboneSpec::validate() const
{
  if (horizon < 1 || d_model < 1)
    throw ConfigError("backbone needs horizon >= 1 and d_model >= 1");
  if (kind == BackboneKind::RMLP && hidden_layers < 1)
    throw ConfigError("RMLP needs at least one hidden layer");
  if (!(revin_epsilon > 0.0))
    throw ConfigError("revin_epsilon must be positive");
}

Json backbone_to_json(const BackboneSpec& spec)
{
  return Json{{"kind", std::string(backbone_name(spec.kind))},
              {"d_model", spec.d_model},
              {"hidden_layers", spec.hidden_layers},
              {"horizon", spec.horizon},
              {"apply_point", std::string(apply_point_name(spec.apply_point))},
              {"revin_epsilon", spec.revin_epsilon}};
}

BackboneSpec backbone_from_json(const Json& j)
{
  try {
    BackboneSpec spec;
    spec.kind = parse_backbone(j.value("kind", std::string("RLinear")));
    spec.d_model = j.value("d_model", spec.d_model);
    spec.hidden_layers = j.value("hidden_layers", spec.hidden_layers);
    spec.horizon = j.value("horizon", spec.horizon);
    spec.apply_point = parse_apply_point(j.value("apply_point", std::string("embedding")));
    spec.revin_epsilon = j.value("revin_epsilon", spec.revin_epsilon);
    spec.validate();
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("backbone spec: ") + e.what());
  }
}

std::pair<Dense, RevinState> revin_normalize(const Dense& x, double eps)
{
  if (x.cols() < 2)
    throw DimensionError("revin_normalize: need at least 2 steps per row, got " + shape_string(x));
  RevinState state;
  state.mean = x.rowwise().mean();
  const Dense centered = x.colwise() - state.mean;
  state.stdev = (centered.rowwise().squaredNorm() / static_cast<double>(x.cols())).cwiseSqrt().cwiseMax(eps);
  Dense normalized = state.stdev.cwiseInverse().asDiagonal() * centered;
  return {std::move(normalized), std::move(state)};
}

Dense revin_denormalize(const Dense& y_norm, const RevinState& state)
{
  if (y_norm.rows() != state.mean.size() || y_norm.rows() != state.stdev.size())
    throw DimensionError("revin_denormalize: " + shape_string(y_norm) + " against statistics for " +
                         std::to_string(state.mean.size()) + " rows");
  return (state.stdev.asDiagonal() * y_norm).colwise() + state.mean;
}

std::vector<std::pair<std::string, Matrix*>> ForecastModel::named()
{
  std::vector<std::pair<std::string, Matrix*>> out;
  append_prefixed(out, "embedding.", embedding.named());
  for (std::size_t j = 0; j < hidden_weights.size(); ++j) {
    out.emplace_back("hidden" + std::to_string(j) + ".W", &hidden_weights[j]);
    out.emplace_back("hidden" + std::to_string(j) + ".b", &hidden_biases[j]);
  }
  append_prefixed(out, "head.", head.named());
  return out;
}

std::vector<std::pair<std::string, const Matrix*>> ForecastModel::named() const
{
  std::vector<std::pair<std::string, const Matrix*>> out;
  for (auto& [name, m] : const_cast<ForecastModel*>(this)->named())
    out.emplace_back(name, m);
  return out;
}

std::int64_t ForecastModel::param_count() const
{
  std::int64_t total = 0;
  for (const auto& [name, m] : named())
    total += m->size();
  return total;
}

std::pair<EmbeddingSpec, EmbeddingSpec> layer_specs(const BackboneSpec& backbone, const EmbeddingSpec& requested)
{
  backbone.validate();
  const ApplyPoint at = backbone.apply_point;
  const bool at_embedding = at == ApplyPoint::Embedding || at == ApplyPoint::Both;
  const bool at_head = at == ApplyPoint::Head || at == ApplyPoint::Both;

  EmbeddingSpec emb = requested;
  emb.out_dim = backbone.d_model;
  if (!at_embedding)
    emb.variant = Variant::Shared;

  EmbeddingSpec head = requested;
  head.in_dim = backbone.d_model;
  head.out_dim = backbone.horizon;
  head.rank = std::min({requested.rank, head.in_dim, head.out_dim});
  if (!at_head)
    head.variant = Variant::Shared;
  return {emb, head};
}

ForecastModel make_model(const BackboneSpec& backbone, EmbeddingSpec requested, std::uint64_t seed)
{
  ForecastModel model;
  model.backbone = backbone;
  std::tie(model.embedding_spec, model.head_spec) = layer_specs(backbone, requested);
  model.embedding = init_params(model.embedding_spec, derive_seed(seed, 0));
  model.head = init_params(model.head_spec, derive_seed(seed, 1));
  if (backbone.kind == BackboneKind::RMLP) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(backbone.d_model));
    for (Eigen::Index j = 0; j < backbone.hidden_layers; ++j) {
      std::mt19937_64 rng(derive_seed(seed, 2 + static_cast<std::uint64_t>(j)));
      std::uniform_real_distribution<double> dist(-bound, bound);
      Dense w(backbone.d_model, backbone.d_model);
      for (Eigen::Index k = 0; k < w.size(); ++k)
        w.data()[k] = dist(rng);
      model.hidden_weights.emplace_back(std::move(w), true);
      model.hidden_biases.emplace_back(Dense::Zero(1, backbone.d_model), true);
    }
  }
  return model;
}

Var forward(Tape& tape, ForecastModel& model, const Dense& x, Eigen::Index block)
{
  if (x.cols() != model.lookback() || x.rows() != model.channels() * block)
    throw DimensionError("forward: input " + shape_string(x) + " does not match " + std::to_string(model.channels()) +
                         " channels x " + std::to_string(block) + " windows of length " +
                         std::to_string(model.lookback()));
  auto [normalized, state] = revin_normalize(x, model.backbone.revin_epsilon);

  EmbeddingGraph embedding(tape, model.embedding, model.embedding_spec);
  Var h = embedding.forward(tape.constant(std::move(normalized)), block);
  for (std::size_t j = 0; j < model.hidden_weights.size(); ++j) {
    Var z = add_bias(matmul(h, tape.leaf(model.hidden_weights[j])), tape.leaf(model.hidden_biases[j]));
    h = add(h, relu(z));
  }
  EmbeddingGraph head(tape, model.head, model.head_spec);
  Var y = head.forward(h, block);
  return affine_rows(y, state.stdev, state.mean);
}

Dense predict_stacked(ForecastModel& model, const Dense& x, Eigen::Index block)
{
  Tape tape;
  return forward(tape, model, x, block).value();
}

Dense predict(ForecastModel& model, const Dense& x)
{
  return predict_stacked(model, x, 1);
}

Dense stack_channel_major(std::span<const Dense> windows)
{
  if (windows.empty())
    throw DimensionError("stack_channel_major: no windows");
  const Eigen::Index channels = windows.front().rows();
  const Eigen::Index width = windows.front().cols();
  const auto block = static_cast<Eigen::Index>(windows.size());
  Dense out(channels * block, width);
  for (Eigen::Index b = 0; b < block; ++b) {
    const Dense& w = windows[static_cast<std::size_t>(b)];
    if (w.rows() != channels || w.cols() != width)
      throw DimensionError("stack_channel_major: window " + std::to_string(b) + " is " + shape_string(w) +
                           ", expected " + shape_string(channels, width));
    for (Eigen::Index c = 0; c < channels; ++c)
      out.row(c * block + b) = w.row(c);
  }
  return out;
}

std::vector<Dense> unstack_channel_major(const Dense& stacked, Eigen::Index block)
{
  if (block < 1 || stacked.rows() % block != 0)
    throw DimensionError("unstack_channel_major: " + shape_string(stacked) + " not divisible into blocks of " +
                         std::to_string(block));
  const Eigen::Index channels = stacked.rows() / block;
  std::vector<Dense> out(static_cast<std::size_t>(block), Dense(channels, stacked.cols()));
  for (Eigen::Index c = 0; c < channels; ++c)
    for (Eigen::Index b = 0; b < block; ++b)
      out[static_cast<std::size_t>(b)].row(c) = stacked.row(c * block + b);
  return out;
}

Json model_to_json(const ForecastModel& model)
{
  Json hidden = Json::array();
  for (std::size_t j = 0; j < model.hidden_weights.size(); ++j)
    hidden.push_back(Json{{"W", matrix_to_json(model.hidden_weights[j].data)},
                          {"b", matrix_to_json(model.hidden_biases[j].data)}});
  return Json{{"backbone", backbone_to_json(model.backbone)},
              {"embedding", params_to_json(model.embedding, model.embedding_spec)},
              {"hidden", hidden},
              {"head", params_to_json(model.head, model.head_spec)}};
}

ForecastModel model_from_json(const Json& j)
{
  try {
    ForecastModel model;
    model.backbone = backbone_from_json(j.at("backbone"));
    std::tie(model.embedding_spec, model.embedding) = params_from_json(j.at("embedding"));
    std::tie(model.head_spec, model.head) = params_from_json(j.at("head"));
    for (const Json& layer : j.at("hidden")) {
      model.hidden_weights.emplace_back(matrix_from_json(layer.at("W")), true);
      model.hidden_biases.emplace_back(matrix_from_json(layer.at("b")), true);
    }
    const auto expected_hidden =
        model.backbone.kind == BackboneKind::RMLP ? static_cast<std::size_t>(model.backbone.hidden_layers) : 0;
    if (model.hidden_weights.size() != expected_hidden)
      throw ParseError("checkpoint has " + std::to_string(model.hidden_weights.size()) + " hidden layers, expected " +
                       std::to_string(expected_hidden));
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("model checkpoint: ") + e.what());
  }
}

}  // namespace lightsae
