#ifndef LIGHTSAE_BACKBONE_HPP_
#define LIGHTSAE_BACKBONE_HPP_

#include "lightsae/embedding.hpp"

#include <cstdint>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

namespace lightsae {

enum class BackboneKind { RLinear, RMLP };
// Where the configured embedding variant replaces the plain linear map.
enum class ApplyPoint { Embedding, Head, Both, None };

std::string_view backbone_name(BackboneKind k);
BackboneKind parse_backbone(std::string_view name);
std::string_view apply_point_name(ApplyPoint p);
ApplyPoint parse_apply_point(std::string_view name);

struct BackboneSpec {
  BackboneKind kind = BackboneKind::RLinear;
  Eigen::Index d_model = 128;
  Eigen::Index hidden_layers = 2;  // RMLP residual blocks
  Eigen::Index horizon = 96;
  ApplyPoint apply_point = ApplyPoint::Embedding;
  double revin_epsilon = 1e-5;

  void validate() const;
  bool operator==(const BackboneSpec&) const = default;
};

Json backbone_to_json(const BackboneSpec& spec);
BackboneSpec backbone_from_json(const Json& j);

// Per-row statistics of the window being forecast.
struct RevinState {
  Eigen::VectorXd mean;
  Eigen::VectorXd stdev;
};

// Each row is standardised by its own mean and (population) standard
// deviation; the deviation is floored at eps so constant rows map to zero.
std::pair<Dense, RevinState> revin_normalize(const Dense& x, double eps);
Dense revin_denormalize(const Dense& y_norm, const RevinState& state);

struct ForecastModel {
  BackboneSpec backbone;
  EmbeddingSpec embedding_spec;  // lookback -> d_model
  EmbeddingSpec head_spec;       // d_model -> horizon
  EmbeddingParams embedding;
  EmbeddingParams head;
  std::vector<Matrix> hidden_weights;  // RMLP only, d_model x d_model
  std::vector<Matrix> hidden_biases;   // 1 x d_model

  Eigen::Index channels() const { return embedding_spec.channels; }
  Eigen::Index lookback() const { return embedding_spec.in_dim; }
  Eigen::Index horizon() const { return backbone.horizon; }

  std::vector<std::pair<std::string, Matrix*>> named();
  std::vector<std::pair<std::string, const Matrix*>> named() const;
  std::int64_t param_count() const;
};

// Layer specs for a backbone and the requested variant. apply_point decides
// which of the two maps uses the variant; the other is Shared.
std::pair<EmbeddingSpec, EmbeddingSpec> layer_specs(const BackboneSpec& backbone, const EmbeddingSpec& requested);

// requested.in_dim is the lookback; out_dim is overridden by d_model.
// Every layer draws from its own seed stream so that, for example, the head
// initialisation does not depend on the embedding variant.
ForecastModel make_model(const BackboneSpec& backbone, EmbeddingSpec requested, std::uint64_t seed);

// x is channel-major stacked windows ((channels * block) x lookback). Returns
// the denormalised forecast ((channels * block) x horizon).
Var forward(Tape& tape, ForecastModel& model, const Dense& x, Eigen::Index block);

// Forecast for a single window X (channels x lookback).
Dense predict(ForecastModel& model, const Dense& x);
Dense predict_stacked(ForecastModel& model, const Dense& x, Eigen::Index block);

// Stacks B windows (each channels x width) channel-major and back.
Dense stack_channel_major(std::span<const Dense> windows);
std::vector<Dense> unstack_channel_major(const Dense& stacked, Eigen::Index block);

Json model_to_json(const ForecastModel& model);
ForecastModel model_from_json(const Json& j);

}  // namespace lightsae

#endif  // LIGHTSAE_BACKBONE_HPP_
