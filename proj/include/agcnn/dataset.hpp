#pragma once

#include <array>
#include <cstdint>
#include <istream>
#include <string>
#include <vector>

#include "agcnn/tensor.hpp"

namespace agcnn {

struct TrackPoint {
  std::int64_t frame_id = 0;
  std::int64_t ped_id = 0;
  double x = 0.0;  // m
  double y = 0.0;  // m

  bool operator==(const TrackPoint&) const = default;
};

// Field order of the first four columns in a trajectory file. Public ETH/UCY
// releases disagree on this.
enum class ColumnOrder { frame_ped_x_y, frame_ped_y_x, ped_frame_x_y };

ColumnOrder column_order_from_string(const std::string& s);
std::string to_string(ColumnOrder order);

struct Scene {
  std::string name;
  std::vector<TrackPoint> points;  // sorted by (frame_id, ped_id)
  std::int64_t frame_stride = 1;   // frames between consecutive sampled steps
  double dt = 0.4;                 // seconds per sampled step
};

// Parses one point per line. Blank lines and lines starting with '#' are
// skipped; extra columns beyond the fourth are ignored. A stride of 0 asks for
// the stride to be inferred as the gcd of consecutive distinct frame gaps.
Scene parse_trajectory_file(std::istream& in, ColumnOrder order, std::int64_t frame_stride = 0,
                            double dt = 0.4);
Scene load_trajectory_file(const std::string& path, ColumnOrder order,
                           std::int64_t frame_stride = 0, double dt = 0.4);

// One window of N pedestrians; all tensors are N x T x 2.
struct SequenceSample {
  std::string scene;
  std::int64_t start_frame = 0;
  std::vector<std::int64_t> ped_ids;
  Tensor abs_obs, abs_fut, rel_obs, rel_fut;

  std::size_t num_peds() const { return ped_ids.size(); }
  std::size_t t_obs() const { return abs_obs.dim(1); }
  std::size_t t_pred() const { return abs_fut.dim(1); }
  // Last observed position per pedestrian, N x 2.
  Tensor last_observed() const;
};

struct WindowConfig {
  std::size_t t_obs = 8;
  std::size_t t_pred = 12;
  std::size_t stride = 1;  // window starts advance by this many sampled steps

  // Short-horizon preset for on-vehicle data (4 observed, 12 predicted).
  static WindowConfig short_observation() { return {4, 12, 1}; }
};

std::vector<SequenceSample> window_sequences(const Scene& scene, const WindowConfig& cfg);

// Builds a sample from absolute positions (N x (t_obs + t_pred) x 2).
SequenceSample make_sample(std::vector<std::int64_t> ped_ids, const Tensor& positions,
                           std::size_t t_obs);

struct Split {
  std::vector<SequenceSample> train, val, test;
};

// Seeded shuffle then partition. Val/test sizes are floor(n * ratio); the
// remainder goes to train.
Split split_dataset(std::vector<SequenceSample> samples, const std::array<double, 3>& ratios,
                    std::uint64_t seed);

// Returns the shuffled index order used by split_dataset.
std::vector<std::size_t> split_indices(std::size_t n, const std::array<double, 3>& ratios,
                                       std::uint64_t seed, std::array<std::size_t, 3>& sizes);

// Synthetic crowd for tests and demos when no recorded data is available.
// Pedestrians walk at a random heading and speed, turning at a random constant
// rate. With constant_velocity set, start points and velocities are dyadic
// rationals so every position x0 + k v is exact in binary floating point.
struct SyntheticCrowd {
  std::size_t num_peds = 4;
  std::size_t num_steps = 20;
  double area = 5.0;        // start points uniform in [-area, area]^2 (m)
  double min_speed = 0.3;   // m per sampled step
  double max_speed = 0.6;
  double max_turn = 0.02;   // rad per step
  bool constant_velocity = false;
  std::int64_t frame_stride = 10;
  double dt = 0.4;
};
Scene synthetic_scene(const SyntheticCrowd& cfg, std::uint64_t seed, std::string name = "synthetic");

}  // namespace agcnn
