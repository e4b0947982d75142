#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "agcnn/dataset.hpp"
#include "agcnn/graph.hpp"
#include "agcnn/losses.hpp"
#include "agcnn/model.hpp"
#include "agcnn/numerics.hpp"
#include "agcnn/tape.hpp"
#include "agcnn/tensor.hpp"

namespace agcnn::test {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.storage()) v = u(rng);
  return t;
}

// N x (t_obs + t_pred) random-walk positions with distinct start points.
inline SequenceSample random_sample(std::size_t n, std::size_t t_obs, std::size_t t_pred,
                                    std::mt19937_64& rng, double step = 0.4) {
  std::uniform_real_distribution<double> start(-4.0, 4.0), d(-step, step);
  const std::size_t t = t_obs + t_pred;
  Tensor pos({n, t, 2});
  std::vector<std::int64_t> ids;
  for (std::size_t i = 0; i < n; ++i) {
    ids.push_back(static_cast<std::int64_t>(i + 1));
    double x = start(rng), y = start(rng);
    for (std::size_t k = 0; k < t; ++k) {
      pos.at({i, k, 0}) = x;
      pos.at({i, k, 1}) = y;
      x += d(rng);
      y += d(rng);
    }
  }
  return make_sample(ids, pos, t_obs);
}

inline double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.storage()) m = std::max(m, std::abs(v));
  return m;
}

// All parameters concatenated in slot order.
inline Tensor flatten(const ModelParams& params) {
  std::vector<double> flat;
  for (const auto& t : params.tensors) flat.insert(flat.end(), t.value.storage().begin(), t.value.storage().end());
  const std::size_t n = flat.size();
  return Tensor({n}, std::move(flat));
}

// Binds a flat parameter Var as per-tensor views so the whole model can be
// checked by a single finite-difference sweep.
inline BoundParams unflatten(const ModelParams& params, Var flat) {
  BoundParams b;
  b.params = &params;
  std::size_t off = 0;
  for (const auto& t : params.tensors) {
    const std::size_t n = t.value.size();
    b.vars.push_back(reshape(slice(flat, 0, off, off + n), t.value.shape()));
    off += n;
  }
  return b;
}

struct GradInstance {
  ModelParams params;
  SequenceSample sample;
  GraphSequence graph;
};

// Glorot weights with zero-initialised entries replaced by small random values
// so the instance sits at a generic point. T_obs = 4, T_pred = 6.
inline GradInstance make_grad_instance(OutputMode mode, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  ModelConfig cfg;
  cfg.t_obs = 4;
  cfg.t_pred = 6;
  cfg.mode = mode;
  GradInstance inst{init_params(cfg, seed * 10 + n), {}, {}};
  for (auto& t : inst.params.tensors)
    for (auto& v : t.value.storage())
      if (v == 0.0) v = 0.1 * nd(rng);
  inst.sample = random_sample(n, 4, 6, rng);
  inst.graph = build_graph_sequence(inst.sample);
  return inst;
}

// NLL on displacements (probabilistic) or the displacement loss with
// alpha = 0.5 on absolute positions (deterministic), over flat parameters.
inline ScalarFn grad_instance_loss(const GradInstance& inst) {
  return [&inst](Tape& tape, Var flat) {
    BoundParams b = unflatten(inst.params, flat);
    Var raw = model_forward(tape, inst.graph, b);
    if (inst.params.config.mode == OutputMode::probabilistic)
      return nll_loss(gaussian_head(raw), tape.constant(inst.sample.rel_fut));
    return cde_loss(relative_to_absolute(raw, inst.sample.last_observed()),
                    tape.constant(inst.sample.abs_fut), 0.5);
  };
}

}  // namespace agcnn::test
