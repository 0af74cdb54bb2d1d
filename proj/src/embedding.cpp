#include "lightsae/embedding.hpp"

#include "lightsae/error.hpp"

#include <algorithm>
#include <cmath>
#include <cctype>
#include <random>

namespace lightsae {

namespace {

struct VariantInfo {
  Variant variant;
  std::string_view name;
  Framework framework;
  bool low_rank;
  bool pool;
};

constexpr VariantInfo kVariantTable[] = {
    {Variant::Shared, "Shared", Framework::Shared, false, false},
    {Variant::IndFull, "Ind-Full", Framework::Ind, false, false},
    {Variant::IndLR, "Ind-LR", Framework::Ind, true, false},
    {Variant::IndPool, "Ind-Pool", Framework::Ind, false, true},
    {Variant::LightSAEInd, "LightSAE-Ind", Framework::Ind, true, true},
    {Variant::SAEFull, "SAE-Full", Framework::SAE, false, false},
    {Variant::SAELR, "SAE-LR", Framework::SAE, true, false},
    {Variant::SAEPool, "SAE-Pool", Framework::SAE, false, true},
    {Variant::LightSAE, "LightSAE", Framework::SAE, true, true},
};

const VariantInfo& info(Variant v)
{
  for (const auto& row : kVariantTable)
    if (row.variant == v)
      return row;
  throw VariantError("unknown embedding variant");
}

std::string lower_alnum(std::string_view s)
{
  std::string out;
  for (char c : s)
    if (std::isalnum(static_cast<unsigned char>(c)))
      out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

Dense uniform(Eigen::Index rows, Eigen::Index cols, double bound, std::mt19937_64& rng)
{
  std::uniform_real_distribution<double> dist(-bound, bound);
  Dense m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k)
    m.data()[k] = dist(rng);
  return m;
}

Matrix trainable(Dense d)
{
  return Matrix(std::move(d), true);
}

Dense softmax(const Dense& logits_row)
{
  const double m = logits_row.maxCoeff();
  Dense e = (logits_row.array() - m).exp().matrix();
  return e / e.sum();
}

void require_channel(const EmbeddingSpec& spec, Eigen::Index i)
{
  if (i < 0 || i >= spec.channels)
    throw ContractError("channel index " + std::to_string(i) + " out of range [0, " + std::to_string(spec.channels) + ")");
}

}  // namespace

std::string_view variant_name(Variant v)
{
  return info(v).name;
}

Variant parse_variant(std::string_view name)
{
  const std::string key = lower_alnum(name);
  for (const auto& row : kVariantTable)
    if (lower_alnum(row.name) == key)
      return row.variant;
  throw ConfigError("unknown embedding variant '" + std::string(name) + "'");
}

Framework framework_of(Variant v)
{
  return info(v).framework;
}

std::string_view framework_name(Framework f)
{
  switch (f) {
    case Framework::Shared: return "Shared";
    case Framework::Ind: return "Ind";
    case Framework::SAE: return "SAE";
  }
  return "?";
}

bool has_shared_base(Variant v)
{
  return info(v).framework != Framework::Ind;
}

bool uses_pool(Variant v)
{
  return info(v).pool;
}

bool uses_low_rank(Variant v)
{
  return info(v).low_rank;
}

std::vector<std::string> EmbeddingSpec::validate() const
{
  std::vector<std::string> warnings;
  if (channels < 1 || in_dim < 1 || out_dim < 1)
    throw ConfigError("embedding needs channels, in_dim, out_dim >= 1 (got " + std::to_string(channels) + ", " +
                      std::to_string(in_dim) + ", " + std::to_string(out_dim) + ")");
  if (uses_low_rank(variant) && (rank < 1 || rank > std::min(in_dim, out_dim)))
    throw ConfigError("rank " + std::to_string(rank) + " outside [1, " + std::to_string(std::min(in_dim, out_dim)) +
                      "] for " + std::string(variant_name(variant)));
  if (uses_pool(variant)) {
    if (pool_size < 1)
      throw ConfigError("pool size must be >= 1, got " + std::to_string(pool_size));
    if (pool_size > channels)
      warnings.push_back("pool size " + std::to_string(pool_size) + " exceeds channel count " + std::to_string(channels));
  }
  return warnings;
}

Json spec_to_json(const EmbeddingSpec& spec)
{
  return Json{{"variant", std::string(variant_name(spec.variant))},
              {"channels", spec.channels},
              {"in_dim", spec.in_dim},
              {"out_dim", spec.out_dim},
              {"rank", spec.rank},
              {"pool_size", spec.pool_size},
              {"use_aux_bias", spec.use_aux_bias}};
}

EmbeddingSpec spec_from_json(const Json& j)
{
  try {
    EmbeddingSpec spec;
    spec.variant = parse_variant(j.at("variant").get<std::string>());
    spec.channels = j.at("channels").get<Eigen::Index>();
    spec.in_dim = j.at("in_dim").get<Eigen::Index>();
    spec.out_dim = j.at("out_dim").get<Eigen::Index>();
    spec.rank = j.value("rank", Eigen::Index{1});
    spec.pool_size = j.value("pool_size", Eigen::Index{1});
    spec.use_aux_bias = j.value("use_aux_bias", true);
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("embedding spec: ") + e.what());
  }
}

std::vector<std::pair<std::string, Matrix*>> EmbeddingParams::named()
{
  std::vector<std::pair<std::string, Matrix*>> out;
  if (shared_weight)
    out.emplace_back("W_sh", &*shared_weight);
  out.emplace_back("b_sh", &shared_bias);
  for (std::size_t i = 0; i < channel_weights.size(); ++i)
    out.emplace_back("W_c" + std::to_string(i), &channel_weights[i]);
  for (std::size_t i = 0; i < channel_left.size(); ++i)
    out.emplace_back("L_c" + std::to_string(i), &channel_left[i]);
  for (std::size_t i = 0; i < channel_right.size(); ++i)
    out.emplace_back("R_c" + std::to_string(i), &channel_right[i]);
  for (std::size_t k = 0; k < pool_weights.size(); ++k)
    out.emplace_back("W_pool" + std::to_string(k), &pool_weights[k]);
  for (std::size_t k = 0; k < pool_left.size(); ++k)
    out.emplace_back("L_pool" + std::to_string(k), &pool_left[k]);
  if (pool_right)
    out.emplace_back("R_pool", &*pool_right);
  if (gate_logits)
    out.emplace_back("gate_logits", &*gate_logits);
  if (aux_bias)
    out.emplace_back("b_c", &*aux_bias);
  return out;
}

std::vector<std::pair<std::string, const Matrix*>> EmbeddingParams::named() const
{
  std::vector<std::pair<std::string, const Matrix*>> out;
  for (auto& [name, m] : const_cast<EmbeddingParams*>(this)->named())
    out.emplace_back(name, m);
  return out;
}

void EmbeddingParams::check(const EmbeddingSpec& spec) const
{
  const Variant v = spec.variant;
  const auto n = static_cast<std::size_t>(spec.channels);
  const auto k = static_cast<std::size_t>(spec.pool_size);
  const bool full_channel = v == Variant::IndFull || v == Variant::SAEFull;
  const bool lr_channel = v == Variant::IndLR || v == Variant::SAELR;
  const bool full_pool = v == Variant::IndPool || v == Variant::SAEPool;
  const bool lr_pool = v == Variant::LightSAE || v == Variant::LightSAEInd;

  auto expect = [&](bool ok, const char* what) {
    if (!ok)
      throw VariantError(std::string(variant_name(v)) + " parameter set: " + what);
  };
  auto shaped = [](const Matrix& m, Eigen::Index r, Eigen::Index c) { return m.rows() == r && m.cols() == c; };

  expect(shared_weight.has_value() == has_shared_base(v), "shared weight presence");
  if (shared_weight)
    expect(shaped(*shared_weight, spec.in_dim, spec.out_dim), "shared weight shape");
  expect(shaped(shared_bias, 1, spec.out_dim), "shared bias shape");
  expect(channel_weights.size() == (full_channel ? n : 0), "per-channel weights");
  for (const auto& m : channel_weights)
    expect(shaped(m, spec.in_dim, spec.out_dim), "per-channel weight shape");
  expect(channel_left.size() == (lr_channel ? n : 0) && channel_right.size() == channel_left.size(),
         "per-channel factors");
  for (std::size_t i = 0; i < channel_left.size(); ++i)
    expect(shaped(channel_left[i], spec.in_dim, spec.rank) && shaped(channel_right[i], spec.rank, spec.out_dim),
           "per-channel factor shape");
  expect(pool_weights.size() == (full_pool ? k : 0), "pool weights");
  for (const auto& m : pool_weights)
    expect(shaped(m, spec.in_dim, spec.out_dim), "pool weight shape");
  expect(pool_left.size() == (lr_pool ? k : 0), "pool left factors");
  for (const auto& m : pool_left)
    expect(shaped(m, spec.in_dim, spec.rank), "pool left factor shape");
  expect(pool_right.has_value() == lr_pool, "pool right factor presence");
  if (pool_right)
    expect(shaped(*pool_right, spec.rank, spec.out_dim), "pool right factor shape");
  expect(gate_logits.has_value() == uses_pool(v), "gate logits presence");
  if (gate_logits)
    expect(shaped(*gate_logits, spec.channels, spec.pool_size), "gate logits shape");
  const bool want_aux_bias = spec.use_aux_bias && v != Variant::Shared;
  expect(aux_bias.has_value() == want_aux_bias, "auxiliary bias presence");
  if (aux_bias)
    expect(shaped(*aux_bias, spec.channels, spec.out_dim), "auxiliary bias shape");
}

EmbeddingParams init_params(const EmbeddingSpec& spec, std::uint64_t seed)
{
  spec.validate();
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(spec.in_dim));
  const Variant v = spec.variant;
  const auto n = static_cast<std::size_t>(spec.channels);
  const auto k = static_cast<std::size_t>(spec.pool_size);
  const bool sae = framework_of(v) == Framework::SAE;

  EmbeddingParams p;
  if (has_shared_base(v))
    p.shared_weight = trainable(uniform(spec.in_dim, spec.out_dim, bound, rng));
  p.shared_bias = trainable(Dense::Zero(1, spec.out_dim));

  switch (v) {
    case Variant::Shared:
      break;
    case Variant::IndFull:
    case Variant::SAEFull:
      for (std::size_t i = 0; i < n; ++i)
        p.channel_weights.push_back(sae ? trainable(Dense::Zero(spec.in_dim, spec.out_dim))
                                        : trainable(uniform(spec.in_dim, spec.out_dim, bound, rng)));
      break;
    case Variant::IndLR:
    case Variant::SAELR:
      for (std::size_t i = 0; i < n; ++i) {
        p.channel_left.push_back(trainable(uniform(spec.in_dim, spec.rank, bound, rng)));
        p.channel_right.push_back(trainable(Dense::Zero(spec.rank, spec.out_dim)));
      }
      break;
    case Variant::IndPool:
    case Variant::SAEPool:
      // Zero-initialised full components would receive identical updates
      // under uniform gates and never separate, so these are random.
      for (std::size_t j = 0; j < k; ++j)
        p.pool_weights.push_back(trainable(uniform(spec.in_dim, spec.out_dim, bound, rng)));
      break;
    case Variant::LightSAEInd:
    case Variant::LightSAE:
      for (std::size_t j = 0; j < k; ++j)
        p.pool_left.push_back(trainable(uniform(spec.in_dim, spec.rank, bound, rng)));
      p.pool_right = trainable(Dense::Zero(spec.rank, spec.out_dim));
      break;
  }
  if (uses_pool(v))
    p.gate_logits = trainable(Dense::Zero(spec.channels, spec.pool_size));
  if (spec.use_aux_bias && v != Variant::Shared)
    p.aux_bias = trainable(Dense::Zero(spec.channels, spec.out_dim));
  p.check(spec);
  return p;
}

Dense gates(const EmbeddingParams& params, const EmbeddingSpec& spec, Eigen::Index i)
{
  if (!uses_pool(spec.variant) || !params.gate_logits)
    throw VariantError("gates: " + std::string(variant_name(spec.variant)) + " has no component pool");
  require_channel(spec, i);
  return softmax(params.gate_logits->data.row(i));
}

Dense compose_aux_weight(const EmbeddingParams& params, const EmbeddingSpec& spec, Eigen::Index i)
{
  require_channel(spec, i);
  const auto idx = static_cast<std::size_t>(i);
  switch (spec.variant) {
    case Variant::Shared:
      throw VariantError("compose_aux_weight: Shared variant has no auxiliary weight");
    case Variant::IndFull:
    case Variant::SAEFull:
      return params.channel_weights.at(idx).data;
    case Variant::IndLR:
    case Variant::SAELR:
      return params.channel_left.at(idx).data * params.channel_right.at(idx).data;
    case Variant::IndPool:
    case Variant::SAEPool: {
      const Dense g = gates(params, spec, i);
      Dense w = Dense::Zero(spec.in_dim, spec.out_dim);
      for (Eigen::Index k = 0; k < spec.pool_size; ++k)
        w += g(0, k) * params.pool_weights[static_cast<std::size_t>(k)].data;
      return w;
    }
    case Variant::LightSAEInd:
    case Variant::LightSAE: {
      const Dense g = gates(params, spec, i);
      Dense left = Dense::Zero(spec.in_dim, spec.rank);
      for (Eigen::Index k = 0; k < spec.pool_size; ++k)
        left += g(0, k) * params.pool_left[static_cast<std::size_t>(k)].data;
      return left * params.pool_right->data;
    }
  }
  throw VariantError("compose_aux_weight: unhandled variant");
}

Dense embed(EmbeddingParams& params, const EmbeddingSpec& spec, const Dense& x)
{
  if (x.rows() != spec.channels || x.cols() != spec.in_dim)
    throw DimensionError("embed: input " + shape_string(x) + " does not match (" + std::to_string(spec.channels) + ", " +
                         std::to_string(spec.in_dim) + ")");
  Tape tape;
  EmbeddingGraph graph(tape, params, spec);
  return graph.forward(tape.constant(x), 1).value();
}

MergedEmbedding merge_weights(const EmbeddingParams& params, const EmbeddingSpec& spec)
{
  MergedEmbedding merged;
  merged.weights.reserve(static_cast<std::size_t>(spec.channels));
  merged.biases.reserve(static_cast<std::size_t>(spec.channels));
  for (Eigen::Index i = 0; i < spec.channels; ++i) {
    Dense w = has_shared_base(spec.variant) ? params.shared_weight->data : Dense::Zero(spec.in_dim, spec.out_dim);
    if (spec.variant != Variant::Shared)
      w += compose_aux_weight(params, spec, i);
    Dense b = params.shared_bias.data;
    if (params.aux_bias)
      b += params.aux_bias->data.row(i);
    merged.weights.push_back(std::move(w));
    merged.biases.push_back(std::move(b));
  }
  return merged;
}

Dense merged_forward(const MergedEmbedding& merged, const Dense& x)
{
  if (static_cast<std::size_t>(x.rows()) != merged.weights.size())
    throw DimensionError("merged_forward: " + std::to_string(x.rows()) + " rows for " +
                         std::to_string(merged.weights.size()) + " channels");
  const Eigen::Index out_dim = merged.weights.empty() ? 0 : merged.weights.front().cols();
  Dense out(x.rows(), out_dim);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Dense& w = merged.weights[static_cast<std::size_t>(i)];
    if (w.rows() != x.cols())
      throw DimensionError("merged_forward: input " + shape_string(x) + " vs weight " + shape_string(w));
    out.row(i) = x.row(i) * w + merged.biases[static_cast<std::size_t>(i)];
  }
  return out;
}

std::int64_t param_count(const EmbeddingSpec& spec)
{
  spec.validate();
  const std::int64_t n = spec.channels, in = spec.in_dim, out = spec.out_dim, r = spec.rank, k = spec.pool_size;
  std::int64_t weights = 0;
  switch (spec.variant) {
    case Variant::Shared: weights = 0; break;
    case Variant::IndFull:
    case Variant::SAEFull: weights = n * in * out; break;
    case Variant::IndLR:
    case Variant::SAELR: weights = n * r * (in + out); break;
    case Variant::IndPool:
    case Variant::SAEPool: weights = k * in * out + n * k; break;
    case Variant::LightSAEInd:
    case Variant::LightSAE: weights = k * in * r + r * out + n * k; break;
  }
  if (has_shared_base(spec.variant))
    weights += in * out;
  const std::int64_t biases = out + (spec.use_aux_bias && spec.variant != Variant::Shared ? n * out : 0);
  return weights + biases;
}

EmbeddingGraph::EmbeddingGraph(Tape& tape, EmbeddingParams& params, const EmbeddingSpec& spec)
    : tape_(tape), params_(params), spec_(spec), channel_weight_(static_cast<std::size_t>(spec.channels))
{
  params_.check(spec_);
}

Var EmbeddingGraph::shared_weight()
{
  if (!shared_weight_)
    shared_weight_ = tape_.leaf(*params_.shared_weight);
  return *shared_weight_;
}

Var EmbeddingGraph::shared_bias()
{
  if (!shared_bias_)
    shared_bias_ = tape_.leaf(params_.shared_bias);
  return *shared_bias_;
}

Var EmbeddingGraph::aux_bias()
{
  if (!aux_bias_)
    aux_bias_ = tape_.leaf(*params_.aux_bias);
  return *aux_bias_;
}

Var EmbeddingGraph::gate_matrix()
{
  if (!uses_pool(spec_.variant))
    throw VariantError("gates: " + std::string(variant_name(spec_.variant)) + " has no component pool");
  if (!gates_)
    gates_ = softmax_rows(tape_.leaf(*params_.gate_logits));
  return *gates_;
}

Var EmbeddingGraph::channel_weight(Eigen::Index i)
{
  require_channel(spec_, i);
  auto& cached = channel_weight_[static_cast<std::size_t>(i)];
  if (cached)
    return *cached;
  const auto idx = static_cast<std::size_t>(i);

  std::optional<Var> aux;
  switch (spec_.variant) {
    case Variant::Shared:
      break;
    case Variant::IndFull:
    case Variant::SAEFull:
      aux = tape_.leaf(params_.channel_weights[idx]);
      break;
    case Variant::IndLR:
    case Variant::SAELR:
      aux = matmul(tape_.leaf(params_.channel_left[idx]), tape_.leaf(params_.channel_right[idx]));
      break;
    case Variant::IndPool:
    case Variant::SAEPool:
      if (pool_.empty())
        for (auto& m : params_.pool_weights)
          pool_.push_back(tape_.leaf(m));
      aux = gated_sum(gate_matrix(), i, pool_);
      break;
    case Variant::LightSAEInd:
    case Variant::LightSAE:
      if (pool_.empty()) {
        for (auto& m : params_.pool_left)
          pool_.push_back(tape_.leaf(m));
        pool_right_ = tape_.leaf(*params_.pool_right);
      }
      aux = matmul(gated_sum(gate_matrix(), i, pool_), *pool_right_);
      break;
  }

  Var w;
  if (!aux)
    w = shared_weight();
  else if (has_shared_base(spec_.variant))
    w = add(shared_weight(), *aux);
  else
    w = *aux;
  cached = w;
  return w;
}

Var EmbeddingGraph::forward(Var x, Eigen::Index block)
{
  if (x.cols() != spec_.in_dim || x.rows() != spec_.channels * block)
    throw DimensionError("embedding forward: input " + shape_string(x.value()) + " does not match " +
                         std::to_string(spec_.channels) + " channels x " + std::to_string(block) + " rows of width " +
                         std::to_string(spec_.in_dim));
  Var out;
  if (spec_.variant == Variant::Shared) {
    out = matmul(x, shared_weight());
  } else {
    std::vector<Var> weights;
    weights.reserve(static_cast<std::size_t>(spec_.channels));
    for (Eigen::Index i = 0; i < spec_.channels; ++i)
      weights.push_back(channel_weight(i));
    out = block_matmul(x, weights, block);
  }
  out = add_bias(out, shared_bias());
  if (params_.aux_bias)
    out = block_add_rows(out, aux_bias(), block);
  return out;
}

Var EmbeddingGraph::forward_channel(Eigen::Index i, Var x_rows)
{
  Var out = add_bias(matmul(x_rows, channel_weight(i)), shared_bias());
  if (params_.aux_bias)
    out = add_bias(out, row(aux_bias(), i));
  return out;
}

Json params_to_json(const EmbeddingParams& params, const EmbeddingSpec& spec)
{
  Json matrices = Json::object();
  for (const auto& [name, m] : params.named())
    matrices[name] = matrix_to_json(m->data);
  return Json{{"spec", spec_to_json(spec)}, {"matrices", matrices}};
}

std::pair<EmbeddingSpec, EmbeddingParams> params_from_json(const Json& j)
{
  EmbeddingSpec spec = spec_from_json(j.at("spec"));
  spec.validate();
  // Start from a correctly shaped set, then overwrite every matrix by name.
  EmbeddingParams params = init_params(spec, 0);
  const Json& matrices = j.at("matrices");
  for (auto& [name, m] : params.named()) {
    if (!matrices.contains(name))
      throw ParseError("checkpoint is missing matrix '" + name + "'");
    Dense value = matrix_from_json(matrices.at(name));
    if (value.rows() != m->rows() || value.cols() != m->cols())
      throw ParseError("checkpoint matrix '" + name + "' has shape " + shape_string(value) + ", expected " +
                       shape_string(m->data));
    m->data = std::move(value);
  }
  return {spec, std::move(params)};
}

}  // namespace lightsae
