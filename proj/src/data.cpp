#include "lightsae/data.hpp"

#include "lightsae/error.hpp"
#include "lightsae/serialize.hpp"

#include <algorithm>
#include <charconv>
#include <cctype>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

namespace lightsae {

namespace {

constexpr double kStdFloor = 1e-8;

std::vector<std::string> split_fields(const std::string& line)
{
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t end = line.find(',', start);
    fields.push_back(line.substr(start, end == std::string::npos ? std::string::npos : end - start));
    if (end == std::string::npos)
      break;
    start = end + 1;
  }
  return fields;
}

std::string trim(const std::string& s)
{
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a])))
    ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1])))
    --b;
  return s.substr(a, b - a);
}

}  // namespace

std::string_view protocol_name(SplitProtocol p)
{
  switch (p) {
    case SplitProtocol::EttHourly: return "ett_hourly";
    case SplitProtocol::EttQuarter: return "ett_quarter";
    case SplitProtocol::Ratio712: return "ratio712";
  }
  return "?";
}

SplitProtocol parse_protocol(std::string_view name)
{
  for (SplitProtocol p : {SplitProtocol::EttHourly, SplitProtocol::EttQuarter, SplitProtocol::Ratio712})
    if (protocol_name(p) == name)
      return p;
  throw ConfigError("unknown split protocol '" + std::string(name) + "' (expected ett_hourly|ett_quarter|ratio712)");
}

std::string_view split_name(SplitPart s)
{
  switch (s) {
    case SplitPart::Train: return "train";
    case SplitPart::Val: return "val";
    case SplitPart::Test: return "test";
  }
  return "?";
}

std::pair<Eigen::Index, Eigen::Index> Dataset::bounds(SplitPart part) const
{
  if (!is_split())
    throw ContractError("dataset '" + name + "' has not been split");
  switch (part) {
    case SplitPart::Train: return {0, train_end};
    case SplitPart::Val: return {train_end, val_end};
    case SplitPart::Test: return {val_end, test_end};
  }
  return {0, 0};
}

Dataset load_csv(const std::filesystem::path& path)
{
  if (!std::filesystem::exists(path))
    throw ParseError("dataset file not found: " + path.string());
  std::istringstream in(read_text(path));
  Dataset ds;
  ds.name = path.stem().string();

  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line))
    throw ParseError(path.string() + ": empty file");
  ++line_no;
  if (!line.empty() && line.back() == '\r')
    line.pop_back();
  const auto header = split_fields(line);
  if (header.size() < 2)
    throw ParseError(path.string() + ":1: header needs a timestamp column and at least one channel");
  for (std::size_t c = 1; c < header.size(); ++c)
    ds.channel_names.push_back(trim(header[c]));
  const std::size_t n = ds.channel_names.size();

  std::vector<double> flat;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (trim(line).empty()) {
      // A trailing newline at EOF is fine; a blank line with data after it is not.
      if (in.peek() == std::char_traits<char>::eof())
        break;
      throw ParseError(path.string() + ": line " + std::to_string(line_no) + " is blank");
    }
    const auto fields = split_fields(line);
    if (fields.size() != n + 1)
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(n + 1) +
                       " columns, found " + std::to_string(fields.size()));
    ds.timestamps.push_back(fields[0]);
    for (std::size_t c = 1; c < fields.size(); ++c) {
      const std::string cell = trim(fields[c]);
      double v = 0.0;
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || res.ec != std::errc() || res.ptr != cell.data() + cell.size() || !std::isfinite(v))
        throw ParseError(path.string() + ":" + std::to_string(line_no) + ": column " + std::to_string(c + 1) +
                         " is not a finite number: '" + cell + "'");
      flat.push_back(v);
    }
  }
  if (ds.timestamps.empty())
    throw ParseError(path.string() + ": no data rows");
  const auto t = static_cast<Eigen::Index>(ds.timestamps.size());
  ds.values = Eigen::Map<const Dense>(flat.data(), t, static_cast<Eigen::Index>(n));
  return ds;
}

void write_csv(const Dataset& ds, const std::filesystem::path& path)
{
  std::string text = "date";
  for (Eigen::Index c = 0; c < ds.channels(); ++c)
    text += "," + (static_cast<std::size_t>(c) < ds.channel_names.size() ? ds.channel_names[static_cast<std::size_t>(c)]
                                                                          : "ch" + std::to_string(c + 1));
  text += '\n';
  for (Eigen::Index t = 0; t < ds.steps(); ++t) {
    text += static_cast<std::size_t>(t) < ds.timestamps.size() ? ds.timestamps[static_cast<std::size_t>(t)]
                                                              : std::to_string(t);
    for (Eigen::Index c = 0; c < ds.channels(); ++c)
      text += "," + format_double(ds.values(t, c));
    text += '\n';
  }
  write_text(path, text);
}

Dataset split(Dataset ds, SplitProtocol protocol)
{
  const Eigen::Index t = ds.steps();
  Eigen::Index train = 0, val = 0, test = 0;
  switch (protocol) {
    case SplitProtocol::EttHourly:
    case SplitProtocol::EttQuarter: {
      const Eigen::Index per_month = 30 * 24 * (protocol == SplitProtocol::EttQuarter ? 4 : 1);
      train = 12 * per_month;
      val = 4 * per_month;
      test = 4 * per_month;
      if (t < train + val + test)
        throw ProtocolError(std::string(protocol_name(protocol)) + " needs " + std::to_string(train + val + test) +
                            " steps, dataset '" + ds.name + "' has " + std::to_string(t));
      break;
    }
    case SplitProtocol::Ratio712:
      train = static_cast<Eigen::Index>(std::floor(0.7 * static_cast<double>(t)));
      val = static_cast<Eigen::Index>(std::floor(0.1 * static_cast<double>(t)));
      test = t - train - val;
      if (train < 1 || val < 1 || test < 1)
        throw ProtocolError("ratio712 needs at least 10 steps, dataset '" + ds.name + "' has " + std::to_string(t));
      break;
  }
  ds.train_end = train;
  ds.val_end = train + val;
  ds.test_end = train + val + test;
  return ds;
}

Dataset normalize(Dataset ds)
{
  if (!ds.is_split())
    throw ContractError("normalize: split the dataset first");
  if (ds.normalized)
    return ds;
  const auto train = ds.values.topRows(ds.train_end);
  ds.train_mean = train.colwise().mean().transpose();
  const Dense centered = train.rowwise() - ds.train_mean.transpose();
  ds.train_std = (centered.colwise().squaredNorm() / static_cast<double>(ds.train_end)).cwiseSqrt().transpose();
  ds.train_std = ds.train_std.cwiseMax(kStdFloor);
  ds.values = (ds.values.rowwise() - ds.train_mean.transpose()) * ds.train_std.cwiseInverse().asDiagonal();
  ds.normalized = true;
  return ds;
}

WindowLoader::WindowLoader(const Dataset& ds, SplitPart part, Eigen::Index lookback, Eigen::Index horizon,
                           std::size_t batch_size, std::uint64_t shuffle_seed)
    : ds_(&ds), lookback_(lookback), horizon_(horizon)
{
  if (lookback < 2 || horizon < 1 || batch_size < 1)
    throw ConfigError("windows need lookback >= 2, horizon >= 1 and batch_size >= 1");
  const auto [begin, end] = ds.bounds(part);
  const Eigen::Index span = lookback + horizon;
  if (end - begin < span) {
    warning_ = std::string(split_name(part)) + " split of '" + ds.name + "' has " + std::to_string(end - begin) +
               " steps, fewer than lookback + horizon = " + std::to_string(span) + "; no windows";
    return;
  }
  for (Eigen::Index s = begin; s + span <= end; ++s)
    starts_.push_back(s);

  std::vector<Eigen::Index> order = starts_;
  if (part == SplitPart::Train) {
    std::mt19937_64 rng(shuffle_seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  for (std::size_t k = 0; k < order.size(); k += batch_size)
    batches_.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(k),
                          order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), k + batch_size)));
}

WindowBatch WindowLoader::batch(std::size_t k) const
{
  if (k >= batches_.size())
    throw ContractError("batch index " + std::to_string(k) + " out of range (" + std::to_string(batches_.size()) + ")");
  WindowBatch out;
  for (Eigen::Index s : batches_[k]) {
    out.inputs.push_back(ds_->values.middleRows(s, lookback_).transpose());
    out.targets.push_back(ds_->values.middleRows(s + lookback_, horizon_).transpose());
    out.starts.push_back(s);
  }
  return out;
}

WindowLoader windows(const Dataset& ds, SplitPart part, Eigen::Index lookback, Eigen::Index horizon,
                     std::size_t batch_size, std::uint64_t shuffle_seed)
{
  return WindowLoader(ds, part, lookback, horizon, batch_size, shuffle_seed);
}

SyntheticDataset synth_grouped(Eigen::Index channels, Eigen::Index steps, int group_count, double noise,
                               std::uint64_t seed)
{
  if (group_count < 1 || channels < group_count)
    throw ConfigError("synth_grouped needs 1 <= groups <= channels (got " + std::to_string(group_count) + " groups, " +
                      std::to_string(channels) + " channels)");
  if (steps < 2 || noise < 0.0)
    throw ConfigError("synth_grouped needs steps >= 2 and noise >= 0");

  constexpr Eigen::Index kState = 2;
  constexpr Eigen::Index kBurnIn = 500;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  // Seasonal driver shared by every group.
  Eigen::VectorXd driver(steps + kBurnIn);
  const double phase = 2.0 * std::numbers::pi * unit(rng);
  for (Eigen::Index t = 0; t < driver.size(); ++t) {
    const auto tt = static_cast<double>(t);
    driver(t) = std::sin(2.0 * std::numbers::pi * tt / 24.0 + phase) +
                0.5 * std::sin(2.0 * std::numbers::pi * tt / 168.0 + 0.5 * phase);
  }

  // Per group: damped rotation A = rho * R(2 pi / period), driver loading b,
  // innovation scale q.
  Dense group_states(steps, kState * group_count);
  for (int g = 0; g < group_count; ++g) {
    const double period = 6.0 * std::pow(10.0, unit(rng));  // log-uniform in [6, 60]
    const double rho = 0.95 + 0.045 * unit(rng);
    const double angle = 2.0 * std::numbers::pi / period;
    Eigen::Matrix2d a;
    a << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
    a *= rho;
    const Eigen::Vector2d b(gauss(rng), gauss(rng));
    const double q = 0.5 + unit(rng);
    Eigen::Vector2d s = Eigen::Vector2d::Zero();
    for (Eigen::Index t = 0; t < steps + kBurnIn; ++t) {
      const Eigen::Vector2d u(gauss(rng), gauss(rng));
      s = a * s + 0.3 * b * driver(t) + q * u;
      if (t >= kBurnIn)
        group_states.block(t - kBurnIn, kState * g, 1, kState) = s.transpose();
    }
  }

  SyntheticDataset out;
  out.dataset.name = "synth_grouped";
  out.mixing.resize(channels, kState);
  out.dataset.values.resize(steps, channels);
  for (Eigen::Index c = 0; c < channels; ++c) {
    const int g = static_cast<int>(c % group_count);
    out.groups.push_back(g);
    Eigen::Vector2d mix(gauss(rng), gauss(rng));
    mix /= std::max(mix.norm(), 1e-3);
    out.mixing.row(c) = mix.transpose();
    out.dataset.values.col(c) = group_states.middleCols(kState * g, kState) * mix;
    out.dataset.channel_names.push_back("ch" + std::to_string(c + 1));
  }
  if (noise > 0.0)
    for (Eigen::Index c = 0; c < channels; ++c)
      for (Eigen::Index t = 0; t < steps; ++t)
        out.dataset.values(t, c) += noise * gauss(rng);
  for (Eigen::Index t = 0; t < steps; ++t)
    out.dataset.timestamps.push_back(std::to_string(t));
  out.group_states = std::move(group_states);
  return out;
}

}  // namespace lightsae
