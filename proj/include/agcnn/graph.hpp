#pragma once

#include <string>

#include "agcnn/dataset.hpp"
#include "agcnn/tensor.hpp"

namespace agcnn {

// Sign applied to distances inside the attention softmax. `negated` gives
// closer neighbours more weight; `verbatim` softmaxes the raw distances.
enum class SignMode { negated, verbatim };

SignMode sign_mode_from_string(const std::string& s);
std::string to_string(SignMode mode);

// Spatio-temporal graph over the observation window.
struct GraphSequence {
  Tensor node_feats;  // T x N x 2 displacements
  Tensor adj_norm;    // T x N x N normalized attention adjacency
  Tensor positions;   // T x N x 2 absolute positions

  std::size_t steps() const { return node_feats.dim(0); }
  std::size_t num_nodes() const { return node_feats.dim(1); }
};

// positions: N x 2. Returns N x N Euclidean distances.
Tensor pairwise_distances(const Tensor& positions);

// Row i is the softmax over k != i of s * d(i, k); diagonal is zero.
Tensor npa_attention(const Tensor& dist, SignMode mode = SignMode::negated);

// D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I. Rejects inputs that
// are negative, non-finite or asymmetric beyond 1e-9.
Tensor normalize_adjacency(const Tensor& attn);

GraphSequence build_graph_sequence(const SequenceSample& sample,
                                   SignMode mode = SignMode::negated);

}  // namespace agcnn
