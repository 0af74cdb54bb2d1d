#ifndef LIGHTSAE_DATA_HPP_
#define LIGHTSAE_DATA_HPP_

#include "lightsae/matrix.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace lightsae {

enum class SplitProtocol { EttHourly, EttQuarter, Ratio712 };
enum class SplitPart { Train, Val, Test };

std::string_view protocol_name(SplitProtocol p);
SplitProtocol parse_protocol(std::string_view name);
std::string_view split_name(SplitPart s);

struct Dataset {
  std::string name;
  Dense values;                   // T x N, time-major
  std::vector<std::string> channel_names;
  std::vector<std::string> timestamps;
  // [0, train_end) train, [train_end, val_end) val, [val_end, test_end) test.
  Eigen::Index train_end = 0;
  Eigen::Index val_end = 0;
  Eigen::Index test_end = 0;
  bool normalized = false;
  Eigen::VectorXd train_mean;
  Eigen::VectorXd train_std;

  Eigen::Index steps() const { return values.rows(); }
  Eigen::Index channels() const { return values.cols(); }
  bool is_split() const { return test_end > 0; }
  // First and one-past-last time index of a split.
  std::pair<Eigen::Index, Eigen::Index> bounds(SplitPart part) const;
};

// TSLib layout: header row, first column a timestamp, remaining columns
// numeric channels.
Dataset load_csv(const std::filesystem::path& path);
void write_csv(const Dataset& ds, const std::filesystem::path& path);

// ETT protocols use 30-day months: 12/4/4 months of hourly or 15-minute
// data. ratio712 takes floor(0.7T) / floor(0.1T) / rest.
Dataset split(Dataset ds, SplitProtocol protocol);

// z-score every channel with train-slice statistics.
Dataset normalize(Dataset ds);

struct WindowBatch {
  std::vector<Dense> inputs;   // each N x L
  std::vector<Dense> targets;  // each N x H
  std::vector<Eigen::Index> starts;
};

// Fixed list of window start indices, grouped into batches. Batches are
// materialised on demand so a full epoch is never held in memory.
class WindowLoader {
 public:
  WindowLoader(const Dataset& ds, SplitPart part, Eigen::Index lookback, Eigen::Index horizon, std::size_t batch_size,
               std::uint64_t shuffle_seed);

  std::size_t window_count() const { return starts_.size(); }
  std::size_t batch_count() const { return batches_.size(); }
  const std::vector<Eigen::Index>& starts() const { return starts_; }
  WindowBatch batch(std::size_t k) const;
  // Non-empty when the split was too short to yield a window.
  const std::string& warning() const { return warning_; }

 private:
  const Dataset* ds_;
  Eigen::Index lookback_;
  Eigen::Index horizon_;
  std::vector<Eigen::Index> starts_;
  std::vector<std::vector<Eigen::Index>> batches_;
  std::string warning_;
};

// Train windows are shuffled by shuffle_seed; val/test stay in time order.
WindowLoader windows(const Dataset& ds, SplitPart part, Eigen::Index lookback, Eigen::Index horizon,
                     std::size_t batch_size, std::uint64_t shuffle_seed);

struct SyntheticDataset {
  Dataset dataset;
  std::vector<int> groups;  // group label per channel
  Dense group_states;       // T x (2 * G), latent state of each group
  Dense mixing;             // N x 2, read-out vector of each channel
};

// N channels assigned round-robin to G groups. Each group owns a random
// stable linear state-space generator, driven by a shared seasonal signal and
// by its own innovations; channels read the group state through their own
// mixing vector and add N(0, noise^2) observation noise.
SyntheticDataset synth_grouped(Eigen::Index channels, Eigen::Index steps, int group_count, double noise,
                               std::uint64_t seed);

}  // namespace lightsae

#endif  // LIGHTSAE_DATA_HPP_
