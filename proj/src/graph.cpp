#include "agcnn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "agcnn/error.hpp"

namespace agcnn {

SignMode sign_mode_from_string(const std::string& s) {
  if (s == "negated") return SignMode::negated;
  if (s == "verbatim") return SignMode::verbatim;
  throw Error("unknown sign mode '" + s + "'");
}

std::string to_string(SignMode mode) {
  return mode == SignMode::negated ? "negated" : "verbatim";
}

Tensor pairwise_distances(const Tensor& positions) {
  if (positions.rank() != 2 || positions.dim(1) != 2 || positions.dim(0) == 0)
    throw ShapeError("pairwise_distances: expected N x 2, got " + shape_str(positions.shape()));
  const std::size_t n = positions.dim(0);
  Tensor d(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = std::hypot(positions[2 * i] - positions[2 * j],
                                  positions[2 * i + 1] - positions[2 * j + 1]);
      d[i * n + j] = v;
      d[j * n + i] = v;
    }
  return d;
}

Tensor npa_attention(const Tensor& dist, SignMode mode) {
  if (dist.rank() != 2 || dist.dim(0) != dist.dim(1))
    throw ShapeError("npa_attention: expected square matrix, got " + shape_str(dist.shape()));
  const std::size_t n = dist.dim(0);
  const double s = mode == SignMode::negated ? -1.0 : 1.0;
  Tensor a(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k)
      if (k != i) m = std::max(m, s * dist[i * n + k]);
    double z = 0.0;
    for (std::size_t k = 0; k < n; ++k)
      if (k != i) z += a[i * n + k] = std::exp(s * dist[i * n + k] - m);
    for (std::size_t k = 0; k < n; ++k)
      if (k != i) a[i * n + k] /= z;
  }
  return a;
}

Tensor normalize_adjacency(const Tensor& attn) {
  if (attn.rank() != 2 || attn.dim(0) != attn.dim(1))
    throw ShapeError("normalize_adjacency: expected square matrix, got " +
                     shape_str(attn.shape()));
  const std::size_t n = attn.dim(0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double v = attn[i * n + j];
      if (!std::isfinite(v) || v < 0.0)
        throw DomainError("normalize_adjacency: entries must be finite and non-negative");
      if (std::abs(v - attn[j * n + i]) > 1e-9)
        throw DomainError("normalize_adjacency: input is not symmetric");
    }
  std::vector<double> inv_sqrt_deg(n);
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 1.0;
    for (std::size_t j = 0; j < n; ++j) deg += attn[i * n + j];
    inv_sqrt_deg[i] = 1.0 / std::sqrt(deg);
  }
  Tensor out(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double a = attn[i * n + j] + (i == j ? 1.0 : 0.0);
      out[i * n + j] = inv_sqrt_deg[i] * a * inv_sqrt_deg[j];
    }
  return out;
}

GraphSequence build_graph_sequence(const SequenceSample& sample, SignMode mode) {
  const std::size_t n = sample.num_peds(), t_obs = sample.t_obs();
  GraphSequence g;
  g.node_feats = Tensor(Shape{t_obs, n, 2});
  g.adj_norm = Tensor(Shape{t_obs, n, n});
  g.positions = Tensor(Shape{t_obs, n, 2});
  Tensor pos_t(Shape{n, 2});
  for (std::size_t t = 0; t < t_obs; ++t) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < 2; ++c) {
        g.node_feats.at({t, i, c}) = sample.rel_obs.at({i, t, c});
        pos_t.at({i, c}) = g.positions.at({t, i, c}) = sample.abs_obs.at({i, t, c});
      }
    // Row-softmax attention is not symmetric in general; the undirected graph
    // takes the mean of the two directions.
    Tensor attn = npa_attention(pairwise_distances(pos_t), mode);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        const double v = 0.5 * (attn[i * n + j] + attn[j * n + i]);
        attn[i * n + j] = attn[j * n + i] = v;
      }
    const Tensor a = normalize_adjacency(attn);
    std::copy(a.data().begin(), a.data().end(), g.adj_norm.data().begin() + t * n * n);
  }
  return g;
}

}  // namespace agcnn
