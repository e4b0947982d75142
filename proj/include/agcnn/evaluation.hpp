#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "agcnn/dataset.hpp"
#include "agcnn/graph.hpp"
#include "agcnn/model.hpp"
#include "agcnn/numerics.hpp"

namespace agcnn {

// Mean Euclidean error over all pedestrians and predicted steps (m).
double ade(const Tensor& pred_abs, const Tensor& gt_abs);
// Euclidean error at the final step, averaged over pedestrians (m).
double fde(const Tensor& pred_abs, const Tensor& gt_abs);

enum class MetricMode { deterministic, best_of_n, most_likely };
std::string to_string(MetricMode mode);
MetricMode metric_mode_from_string(const std::string& s);

// Whether Best-of-N picks the best draw per pedestrian (benchmark convention)
// or the best joint draw of the whole scene.
enum class BonGranularity { per_pedestrian, per_scene };
std::string to_string(BonGranularity g);
BonGranularity bon_granularity_from_string(const std::string& s);

struct SceneMetrics {
  std::string scene;
  std::int64_t start_frame = 0;
  std::size_t num_peds = 0;
  double ade = 0.0;
  double fde = 0.0;
  double fde_at_best_ade = 0.0;  // FDE of the min-ADE draw (Best-of-N only)
};

struct MetricsReport {
  std::string predictor;  // "model", "cvm", "linear"
  MetricMode mode = MetricMode::deterministic;
  std::size_t draws = 1;
  // Pedestrian-weighted means over scenes.
  double ade = 0.0;
  double fde = 0.0;
  double fde_at_best_ade = 0.0;
  std::size_t n_samples_used = 0;
  std::size_t n_pedestrians = 0;
  std::vector<SceneMetrics> scenes;

  void add_scene(SceneMetrics m);
};

// Draws n trajectories from `field` (displacements), converts with `origin`,
// and reports the min-ADE and min-FDE (independent minima).
MetricsReport best_of_n(const GaussianField& field, const Tensor& gt_abs, const Tensor& origin,
                        std::size_t n, Rng& rng,
                        BonGranularity granularity = BonGranularity::per_pedestrian);

// One sampled trajectory (absolute N x T x 2) from a displacement field.
Tensor sample_trajectory(const GaussianField& field, const Tensor& origin, Rng& rng);

// The mean trajectory of the field in absolute coordinates.
Tensor most_likely(const GaussianField& field, const Tensor& origin);

// Baselines on N x T_obs x 2 absolute observations.
Tensor cvm_predict(const Tensor& abs_obs, std::size_t t_pred);
Tensor linear_predict(const Tensor& abs_obs, std::size_t t_pred);

struct EvalOptions {
  MetricMode mode = MetricMode::best_of_n;
  std::size_t draws = 20;
  std::uint64_t seed = 0;
  SignMode sign_mode = SignMode::negated;
  BonGranularity granularity = BonGranularity::per_pedestrian;
};

MetricsReport evaluate_model(const ModelParams& params, std::span<const SequenceSample> samples,
                             const EvalOptions& opts);
enum class Baseline { cvm, linear };
MetricsReport evaluate_baseline(Baseline which, std::span<const SequenceSample> samples);

struct BenchReport {
  std::string mode;              // "deterministic" or "probabilistic"
  std::size_t draws = 1;         // trajectories drawn per inference
  double forward_ms = 0.0;       // median per inference, graph already built
  double graph_build_ms = 0.0;   // median per graph, reported separately
  std::size_t param_count = 0;
  std::size_t repetitions = 0;
  std::size_t scenes = 0;
  std::string batch;             // human-readable description of the inputs
};

// Median wall time of one inference per scene (forward plus `draws`
// trajectory samples in probabilistic mode). Graph construction is timed on
// its own and excluded from forward_ms.
BenchReport benchmark_inference(const ModelParams& params, std::span<const SequenceSample> samples,
                                std::size_t draws, std::size_t repetitions,
                                SignMode sign_mode = SignMode::negated, std::uint64_t seed = 0);

// Structured-text (JSON) renderings. Metrics emit one record per scene plus an
// aggregate record when `per_scene` is set.
std::string to_json(const MetricsReport& r, bool per_scene = true);
std::string to_json(const BenchReport& r);

}  // namespace agcnn
