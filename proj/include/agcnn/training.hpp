#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "agcnn/dataset.hpp"
#include "agcnn/graph.hpp"
#include "agcnn/model.hpp"
#include "agcnn/numerics.hpp"
#include "agcnn/tape.hpp"

namespace agcnn {

enum class OptimizerKind { adam, sgd };
std::string to_string(OptimizerKind k);
OptimizerKind optimizer_kind_from_string(const std::string& s);

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 0.0015;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<Tensor> m, v;  // Adam moments, one per parameter; empty for SGD

  static OptimizerState make(OptimizerKind kind, double lr, const ModelParams& params);
};

// Applies one update in place. Throws NumericError (leaving params and state
// untouched) if any gradient is non-finite.
void optimizer_step(ModelParams& params, const Gradients& grads, OptimizerState& state);

// How each sample's loss is reduced before accumulation.
//   sum:  summed over pedestrians and steps.
//   mean: divided by N * T_pred, so scenes of different size weigh equally.
enum class LossReduction { sum, mean };

struct TrainConfig {
  std::size_t epochs = 150;
  std::size_t batch_size = 128;
  OutputMode mode = OutputMode::probabilistic;
  double alpha = 0.5;
  std::uint64_t seed = 0;
  std::size_t t_obs = 8;
  std::size_t t_pred = 12;
  SignMode sign_mode = SignMode::negated;

  // Network widths beyond the fixed layer counts.
  std::size_t hidden = 5;
  std::size_t txp_residual = 4;
  std::size_t kernel = 3;
  std::size_t graph_hops = 3;
  bool encoder_residual = true;

  // Zero learning rate selects the per-mode default (SGD 0.01 for
  // probabilistic, Adam 0.0015 for deterministic).
  std::string optimizer = "default";  // "default", "adam", "sgd"
  double learning_rate = 0.0;
  double weight_decay = 0.0;
  double grad_clip = 0.0;  // global L2 norm; 0 disables
  // Step decay: the rate is multiplied by lr_step_factor every lr_step_epochs
  // epochs. 0 disables.
  std::size_t lr_step_epochs = 0;
  double lr_step_factor = 0.1;
  LossReduction reduction = LossReduction::mean;
  bool shuffle = true;

  ModelConfig model_config() const;
  OptimizerKind optimizer_kind() const;
  double resolved_learning_rate() const;
  // Rate used during the epoch that follows `completed_epochs`.
  double learning_rate_at(std::size_t completed_epochs) const;
  void validate() const;
};

std::string to_json(const TrainConfig& cfg);
// Fields present in `json_text` override those of `base`; unknown keys throw.
TrainConfig train_config_from_json(const std::string& json_text, TrainConfig base = {});

// Graph and targets precomputed once per sample.
struct PreparedSample {
  GraphSequence graph;
  Tensor rel_fut;
  Tensor abs_fut;
  Tensor origin;
};
std::vector<PreparedSample> prepare_samples(std::span<const SequenceSample> samples,
                                            SignMode sign_mode);

// Training objective of one sample under `cfg` (recorded on `tape`).
Var sample_loss(Tape& tape, const BoundParams& p, const PreparedSample& s, const TrainConfig& cfg);

// Summed loss and summed gradient over `batch`.
struct BatchGradient {
  double loss = 0.0;
  Gradients grads;
};
BatchGradient accumulate_gradients(const ModelParams& params, std::span<const PreparedSample> batch,
                                   std::span<const std::size_t> order, const TrainConfig& cfg);

struct EpochRecord {
  std::size_t epoch = 0;       // 1-based count of completed epochs
  double loss = 0.0;           // mean per-sample training loss
  bool has_val = false;
  double val_ade = 0.0;
  double val_fde = 0.0;
  std::string to_json() const;
};

class Trainer {
public:
  Trainer(TrainConfig cfg, ModelParams params);
  explicit Trainer(TrainConfig cfg);  // fresh initialization from cfg.seed

  // Runs one epoch. On a non-finite loss or gradient, params, optimizer and
  // rng are restored to their values at the start of the epoch and the
  // NumericError is rethrown.
  EpochRecord run_epoch(std::span<const PreparedSample> train,
                        std::span<const PreparedSample> val = {});

  const TrainConfig& config() const { return cfg_; }
  const ModelParams& params() const { return params_; }
  const OptimizerState& optimizer() const { return opt_; }
  const Rng& rng() const { return rng_; }
  std::size_t epoch() const { return epoch_; }

  // Restores a full training state, e.g. from a checkpoint.
  void restore(ModelParams params, OptimizerState opt, Rng rng, std::size_t epoch);

private:
  TrainConfig cfg_;
  ModelParams params_;
  OptimizerState opt_;
  Rng rng_;
  std::size_t epoch_ = 0;
};

// Mean ADE/FDE of the point prediction (mean for probabilistic heads).
std::pair<double, double> point_metrics(const ModelParams& params,
                                        std::span<const PreparedSample> samples);

struct TrainResult {
  ModelParams params;
  std::vector<EpochRecord> log;
};
using EpochCallback = std::function<void(const Trainer&, const EpochRecord&)>;
TrainResult train(std::span<const SequenceSample> train_set, std::span<const SequenceSample> val_set,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

struct Checkpoint {
  TrainConfig config;
  ModelParams params;
  OptimizerState optimizer;
  Rng rng;
  std::size_t epoch = 0;
};
Checkpoint snapshot(const Trainer& t);

inline constexpr std::uint32_t kCheckpointVersion = 1;
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace agcnn
