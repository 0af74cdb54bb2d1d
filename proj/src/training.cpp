#include "lightsae/training.hpp"

#include "lightsae/error.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <thread>

namespace lightsae {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b)
{
  std::uint64_t z = seed ^ (0x9E3779B97F4A7C15ULL * (a + 1)) ^ (0xC2B2AE3D27D4EB4FULL * (b + 1));
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::vector<Matrix*> parameters(ForecastModel& model)
{
  std::vector<Matrix*> out;
  for (auto& [name, m] : model.named())
    if (m->requires_grad)
      out.push_back(m);
  return out;
}

struct CandidateRun {
  ForecastModel model;
  TrainHistory history;
  double best_val = std::numeric_limits<double>::infinity();
};

CandidateRun run_candidate(const ForecastModel& initial, const Dataset& ds, const TrainConfig& config, double lr,
                           std::size_t candidate)
{
  CandidateRun run{initial, {}, std::numeric_limits<double>::infinity()};
  ForecastModel& model = run.model;
  const Eigen::Index lookback = model.lookback();
  const Eigen::Index horizon = model.horizon();
  const bool has_val = windows(ds, SplitPart::Val, lookback, horizon, 1, 0).window_count() > 0;

  std::vector<Matrix*> params = parameters(model);
  AdamState state;
  std::int64_t step = 0;
  ForecastModel best = model;
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const WindowLoader loader =
        windows(ds, SplitPart::Train, lookback, horizon, config.batch_size, mix_seed(config.seed, candidate, epoch));
    if (loader.window_count() == 0)
      throw ConfigError("training split has no windows: " + loader.warning());

    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < loader.batch_count(); ++b) {
      const WindowBatch batch = loader.batch(b);
      const auto block = static_cast<Eigen::Index>(batch.inputs.size());
      const Dense x = stack_channel_major(batch.inputs);
      const Dense y = stack_channel_major(batch.targets);
      for (Matrix* p : params)
        p->zero_grad();
      Tape tape;
      Var loss = lightsae::mse(forward(tape, model, x, block), y);
      tape.backward(loss);
      adam_step(params, state, lr, config.adam, ++step);
      epoch_loss += loss.value()(0, 0);
    }
    epoch_loss /= static_cast<double>(loader.batch_count());
    const double val = has_val ? evaluate(model, ds, SplitPart::Val).mse : epoch_loss;
    run.history.train_loss.push_back(epoch_loss);
    run.history.val_loss.push_back(val);
    run.history.stopping_epoch = epoch;

    if (val < run.best_val) {
      run.best_val = val;
      run.history.best_epoch = epoch;
      best = model;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  for (auto& [name, m] : best.named())
    m->zero_grad();
  model = std::move(best);
  run.history.selected_lr = lr;
  return run;
}

}  // namespace

double mse(const Dense& y, const Dense& y_hat)
{
  if (y.rows() != y_hat.rows() || y.cols() != y_hat.cols())
    throw DimensionError("mse: shape mismatch " + shape_string(y) + " vs " + shape_string(y_hat));
  return (y - y_hat).squaredNorm() / static_cast<double>(y.size());
}

double mae(const Dense& y, const Dense& y_hat)
{
  if (y.rows() != y_hat.rows() || y.cols() != y_hat.cols())
    throw DimensionError("mae: shape mismatch " + shape_string(y) + " vs " + shape_string(y_hat));
  return (y - y_hat).cwiseAbs().sum() / static_cast<double>(y.size());
}

void adam_step(std::span<Matrix* const> params, AdamState& state, double lr, const AdamConfig& adam, std::int64_t t)
{
  if (t < 1)
    throw ContractError("adam_step: step count must be >= 1");
  if (state.m.size() != params.size()) {
    state.m.clear();
    state.v.clear();
    for (const Matrix* p : params) {
      state.m.push_back(Dense::Zero(p->rows(), p->cols()));
      state.v.push_back(Dense::Zero(p->rows(), p->cols()));
    }
  }
  const double c1 = 1.0 - std::pow(adam.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(adam.beta2, static_cast<double>(t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& p = *params[k];
    if (!p.grad)
      continue;
    const Dense& g = *p.grad;
    state.m[k] = adam.beta1 * state.m[k] + (1.0 - adam.beta1) * g;
    state.v[k] = adam.beta2 * state.v[k] + (1.0 - adam.beta2) * g.cwiseAbs2();
    p.data.array() -= lr * (state.m[k].array() / c1) / ((state.v[k].array() / c2).sqrt() + adam.epsilon);
  }
}

void TrainConfig::validate() const
{
  if (patience < 1)
    throw ConfigError("patience must be >= 1");
  if (batch_size < 1 || max_epochs < 1)
    throw ConfigError("batch_size and max_epochs must be >= 1");
  if (lr_grid.empty() && !learning_rate)
    throw ConfigError("set a learning rate or a learning-rate grid");
  for (double lr : candidate_rates())
    if (!(lr > 0.0))
      throw ConfigError("learning rates must be positive");
}

std::vector<double> TrainConfig::candidate_rates() const
{
  if (!lr_grid.empty())
    return lr_grid;
  if (learning_rate)
    return {*learning_rate};
  return {};
}

Json train_config_to_json(const TrainConfig& c)
{
  Json j{{"lr_grid", c.lr_grid},
         {"batch_size", c.batch_size},
         {"max_epochs", c.max_epochs},
         {"patience", c.patience},
         {"seed", c.seed},
         {"adam", Json{{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"epsilon", c.adam.epsilon}}}};
  j["learning_rate"] = c.learning_rate ? Json(*c.learning_rate) : Json(nullptr);
  return j;
}

TrainConfig train_config_from_json(const Json& j)
{
  try {
    TrainConfig c;
    if (j.contains("learning_rate") && !j.at("learning_rate").is_null())
      c.learning_rate = j.at("learning_rate").get<double>();
    c.lr_grid = j.value("lr_grid", std::vector<double>{});
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.seed = j.value("seed", c.seed);
    if (j.contains("adam")) {
      const Json& a = j.at("adam");
      c.adam.beta1 = a.value("beta1", c.adam.beta1);
      c.adam.beta2 = a.value("beta2", c.adam.beta2);
      c.adam.epsilon = a.value("epsilon", c.adam.epsilon);
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
}

Json history_to_json(const TrainHistory& h, bool include_timing)
{
  Json candidates = Json::array();
  for (const auto& c : h.candidates)
    candidates.push_back(
        Json{{"learning_rate", c.learning_rate}, {"best_val_loss", c.best_val_loss}, {"stopping_epoch", c.stopping_epoch}});
  Json j{{"train_loss", h.train_loss},
         {"val_loss", h.val_loss},
         {"selected_lr", h.selected_lr},
         {"best_epoch", h.best_epoch},
         {"stopping_epoch", h.stopping_epoch},
         {"candidates", candidates}};
  if (include_timing)
    j["wall_clock_seconds"] = h.wall_clock_seconds;
  return j;
}

Metrics evaluate(ForecastModel& model, const Dataset& ds, SplitPart part, std::size_t batch_size)
{
  const WindowLoader loader = windows(ds, part, model.lookback(), model.horizon(), batch_size, 0);
  Metrics m;
  double sq = 0.0, abs = 0.0;
  std::size_t count = 0;
  for (std::size_t b = 0; b < loader.batch_count(); ++b) {
    const WindowBatch batch = loader.batch(b);
    const Dense pred = predict_stacked(model, stack_channel_major(batch.inputs), static_cast<Eigen::Index>(batch.inputs.size()));
    const Dense diff = pred - stack_channel_major(batch.targets);
    sq += diff.squaredNorm();
    abs += diff.cwiseAbs().sum();
    count += static_cast<std::size_t>(diff.size());
  }
  m.windows = loader.window_count();
  if (count > 0) {
    m.mse = sq / static_cast<double>(count);
    m.mae = abs / static_cast<double>(count);
  }
  return m;
}

TrainResult train(const ForecastModel& initial, const Dataset& ds, const TrainConfig& config)
{
  config.validate();
  if (!ds.is_split())
    throw ConfigError("train: dataset must be split (and normalized) first");
  const auto start = std::chrono::steady_clock::now();
  const std::vector<double> rates = config.candidate_rates();

  std::vector<std::optional<CandidateRun>> runs(rates.size());
  std::vector<std::exception_ptr> errors(rates.size());
  auto work = [&](std::size_t k) {
    try {
      runs[k] = run_candidate(initial, ds, config, rates[k], k);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  };
  if (rates.size() > 1 && std::thread::hardware_concurrency() > 1) {
    std::vector<std::thread> threads;
    for (std::size_t k = 0; k < rates.size(); ++k)
      threads.emplace_back(work, k);
    for (auto& t : threads)
      t.join();
  } else {
    for (std::size_t k = 0; k < rates.size(); ++k)
      work(k);
  }
  for (const auto& e : errors)
    if (e)
      std::rethrow_exception(e);

  std::size_t best = 0;
  for (std::size_t k = 1; k < runs.size(); ++k)
    if (runs[k]->best_val < runs[best]->best_val)
      best = k;

  TrainResult result{std::move(runs[best]->model), std::move(runs[best]->history)};
  for (std::size_t k = 0; k < runs.size(); ++k)
    result.history.candidates.push_back({rates[k], runs[k]->best_val, runs[k]->history.stopping_epoch});
  result.history.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace lightsae
