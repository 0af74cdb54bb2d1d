#ifndef LIGHTSAE_TRAINING_HPP_
#define LIGHTSAE_TRAINING_HPP_

#include "lightsae/backbone.hpp"
#include "lightsae/data.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace lightsae {

double mse(const Dense& y, const Dense& y_hat);
double mae(const Dense& y, const Dense& y_hat);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  bool operator==(const AdamConfig&) const = default;
};

// First and second moment estimates, one pair per parameter.
struct AdamState {
  std::vector<Dense> m;
  std::vector<Dense> v;
};

// Bias-corrected Adam on every parameter that carries a gradient. t is the
// 1-based step count. Parameters without a gradient are left untouched.
void adam_step(std::span<Matrix* const> params, AdamState& state, double lr, const AdamConfig& adam, std::int64_t t);

inline constexpr double kDefaultLrGrid[] = {1e-4, 5e-4, 1e-3, 5e-3, 1e-2};

struct TrainConfig {
  std::optional<double> learning_rate;  // used when lr_grid is empty
  std::vector<double> lr_grid;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 10;
  std::size_t patience = 3;
  std::uint64_t seed = 0;
  AdamConfig adam;

  void validate() const;
  std::vector<double> candidate_rates() const;
  bool operator==(const TrainConfig&) const = default;
};

Json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const Json& j);

struct CandidateResult {
  double learning_rate = 0.0;
  double best_val_loss = 0.0;
  std::size_t stopping_epoch = 0;
};

struct TrainHistory {
  std::vector<double> train_loss;  // per epoch, of the selected candidate
  std::vector<double> val_loss;
  double selected_lr = 0.0;
  std::size_t best_epoch = 0;      // 1-based
  std::size_t stopping_epoch = 0;  // 1-based, last epoch run
  std::vector<CandidateResult> candidates;
  double wall_clock_seconds = 0.0;
};

// Excludes wall-clock time so histories from identical runs compare equal.
Json history_to_json(const TrainHistory& h, bool include_timing = true);

struct TrainResult {
  ForecastModel model;
  TrainHistory history;
};

// Mean squared / absolute error over every window of a split.
struct Metrics {
  double mse = 0.0;
  double mae = 0.0;
  std::size_t windows = 0;
};
Metrics evaluate(ForecastModel& model, const Dataset& ds, SplitPart part, std::size_t batch_size = 256);

// Trains copies of `initial` (one per candidate rate, each from the same
// starting weights) and keeps the candidate with the lowest validation loss.
// Within a candidate the parameters from the best validation epoch are
// restored before returning.
TrainResult train(const ForecastModel& initial, const Dataset& ds, const TrainConfig& config);

}  // namespace lightsae

#endif  // LIGHTSAE_TRAINING_HPP_
