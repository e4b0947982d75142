#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "agcnn/graph.hpp"
#include "agcnn/numerics.hpp"
#include "agcnn/tape.hpp"
#include "agcnn/tensor.hpp"

namespace agcnn {

enum class OutputMode { probabilistic, deterministic };

OutputMode output_mode_from_string(const std::string& s);
std::string to_string(OutputMode mode);

struct ModelConfig {
  std::size_t t_obs = 8;
  std::size_t t_pred = 12;
  std::size_t feat_in = 2;
  std::size_t hidden = 5;         // F_hid
  std::size_t txp_residual = 4;   // K residual layers after the first TXP layer
  std::size_t kernel = 3;         // temporal and feature-axis kernel size (odd)
  std::size_t graph_hops = 3;     // powers of A-hat mixed inside each TXP layer
  bool encoder_residual = true;   // per-node V W_res added before the encoder activation
  OutputMode mode = OutputMode::probabilistic;

  std::size_t head_channels() const { return mode == OutputMode::probabilistic ? 5 : 2; }
  bool operator==(const ModelConfig&) const = default;
};

struct Parameter {
  std::string name;
  Tensor value;
};

// All trainable tensors, in a fixed order derived from the config:
//   stgcnn.weight [F_in x F_hid], stgcnn.bias [F_hid],
//   stgcnn.temporal [F_hid x F_hid x k], stgcnn.temporal_bias [F_hid], stgcnn.slope [],
//   stgcnn.residual [F_in x F_hid], stgcnn.residual_bias [F_hid] (when encoder_residual),
//   txp.<l>.weight [hops x T_out x T_in x k], txp.<l>.bias [T_out], txp.<l>.slope [],
//   head.weight [F_hid x C], head.bias [C].
struct ModelParams {
  ModelConfig config;
  std::vector<Parameter> tensors;

  std::size_t index_of(const std::string& name) const;
  Tensor& get(const std::string& name) { return tensors[index_of(name)].value; }
  const Tensor& get(const std::string& name) const { return tensors[index_of(name)].value; }
  std::vector<Shape> shapes() const;
  bool all_finite() const;
};

// Glorot-uniform weights, zero biases, PReLU slopes 0.25.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

// Exact number of trainable scalars.
std::size_t parameter_census(const ModelParams& params);

// Parameters bound to a tape as Vars, slot i = params.tensors[i].
struct BoundParams {
  const ModelParams* params = nullptr;
  std::vector<Var> vars;
  Var operator[](const std::string& name) const { return vars[params->index_of(name)]; }
};
BoundParams bind(Tape& tape, const ModelParams& params);

// Encoder: per step A_t H_t W, temporal conv over steps, optional per-node
// residual, PReLU.
// Returns F_hid x T_obs x N.
Var stgcnn_forward(Tape& tape, const GraphSequence& graph, const BoundParams& p);
// Decoder: T_obs -> T_pred with time as channels, then K residual layers.
// Input F_hid x T_obs x N, output T_pred x F_hid x N.
Var txpcnn_forward(Tape& tape, Var h, const Tensor& adjacency, const BoundParams& p);
// Full network, N x T_pred x C raw head output.
Var model_forward(Tape& tape, const GraphSequence& graph, const BoundParams& p);

// Per pedestrian, per predicted step bivariate Gaussian over displacements.
struct GaussianField {
  Tensor mu;     // N x T x 2
  Tensor sigma;  // N x T x 2, > 0
  Tensor rho;    // N x T, |rho| < 1

  std::size_t num_peds() const { return mu.dim(0); }
  std::size_t steps() const { return mu.dim(1); }
  Bivariate at(std::size_t i, std::size_t t) const;
};

// Tape-level view of the probabilistic head.
struct GaussianVars {
  Var mu;         // N x T x 2
  Var log_sigma;  // N x T x 2
  Var rho;        // N x T x 1
};
GaussianVars gaussian_head(Var raw);

GaussianField predict_probabilistic(const GraphSequence& graph, const ModelParams& params);
// N x T_pred x 2 displacements.
Tensor predict_deterministic(const GraphSequence& graph, const ModelParams& params);

// Cumulative sum of displacements along time, offset by origin (N x 2).
Tensor relative_to_absolute(const Tensor& disp, const Tensor& origin);
Var relative_to_absolute(Var disp, const Tensor& origin);

}  // namespace agcnn
