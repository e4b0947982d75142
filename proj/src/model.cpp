#include "agcnn/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "agcnn/error.hpp"

namespace agcnn {

OutputMode output_mode_from_string(const std::string& s) {
  if (s == "probabilistic") return OutputMode::probabilistic;
  if (s == "deterministic") return OutputMode::deterministic;
  throw Error("unknown output mode '" + s + "'");
}

std::string to_string(OutputMode mode) {
  return mode == OutputMode::probabilistic ? "probabilistic" : "deterministic";
}

std::size_t ModelParams::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < tensors.size(); ++i)
    if (tensors[i].name == name) return i;
  throw Error("no parameter named '" + name + "'");
}

std::vector<Shape> ModelParams::shapes() const {
  std::vector<Shape> s;
  s.reserve(tensors.size());
  for (const auto& t : tensors) s.push_back(t.value.shape());
  return s;
}

bool ModelParams::all_finite() const {
  return std::all_of(tensors.begin(), tensors.end(),
                     [](const Parameter& p) { return p.value.all_finite(); });
}

namespace {

std::string txp_name(std::size_t layer, const char* leaf) {
  return "txp." + std::to_string(layer) + "." + leaf;
}

void glorot(Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-a, a);
  for (auto& v : t.storage()) v = u(rng);
}

void validate(const ModelConfig& c) {
  if (c.t_obs < 1 || c.t_pred < 1 || c.feat_in < 1 || c.hidden < 1 || c.graph_hops < 1)
    throw Error("model config: dimensions must be positive");
  if (c.kernel % 2 == 0) throw Error("model config: kernel size must be odd");
}

}  // namespace

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  Rng rng(seed);
  ModelParams p;
  p.config = cfg;
  auto add = [&](std::string name, Shape shape) -> Tensor& {
    p.tensors.push_back({std::move(name), Tensor(std::move(shape))});
    return p.tensors.back().value;
  };
  const std::size_t f = cfg.hidden, k = cfg.kernel, hops = cfg.graph_hops;

  glorot(add("stgcnn.weight", {cfg.feat_in, f}), cfg.feat_in, f, rng);
  add("stgcnn.bias", {f});
  glorot(add("stgcnn.temporal", {f, f, k}), f * k, f * k, rng);
  add("stgcnn.temporal_bias", {f});
  add("stgcnn.slope", {}).fill(0.25);
  if (cfg.encoder_residual) {
    glorot(add("stgcnn.residual", {cfg.feat_in, f}), cfg.feat_in, f, rng);
    add("stgcnn.residual_bias", {f});
  }

  for (std::size_t l = 0; l <= cfg.txp_residual; ++l) {
    const std::size_t tin = l == 0 ? cfg.t_obs : cfg.t_pred;
    glorot(add(txp_name(l, "weight"), {hops, cfg.t_pred, tin, k}), tin * k * hops,
           cfg.t_pred * k * hops, rng);
    add(txp_name(l, "bias"), {cfg.t_pred});
    add(txp_name(l, "slope"), {}).fill(0.25);
  }

  const std::size_t c = cfg.head_channels();
  glorot(add("head.weight", {f, c}), f, c, rng);
  add("head.bias", {c});
  return p;
}

std::size_t parameter_census(const ModelParams& params) {
  std::size_t n = 0;
  for (const auto& t : params.tensors) n += t.value.size();
  return n;
}

BoundParams bind(Tape& tape, const ModelParams& params) {
  BoundParams b;
  b.params = &params;
  b.vars.reserve(params.tensors.size());
  for (std::size_t i = 0; i < params.tensors.size(); ++i)
    b.vars.push_back(tape.parameter(params.tensors[i].value, i));
  return b;
}

Var stgcnn_forward(Tape& tape, const GraphSequence& graph, const BoundParams& p) {
  const ModelConfig& cfg = p.params->config;
  if (graph.node_feats.rank() != 3 || graph.node_feats.dim(2) != cfg.feat_in)
    throw ShapeError("stgcnn_forward: node features " + shape_str(graph.node_feats.shape()) +
                     " do not match feat_in " + std::to_string(cfg.feat_in));
  Var v = tape.constant(graph.node_feats);  // T x N x F_in
  Var a = tape.constant(graph.adj_norm);    // T x N x N
  Var x = bmm(a, v);
  x = add_bias(matmul(x, p["stgcnn.weight"]), p["stgcnn.bias"], 2);  // T x N x F_hid
  x = permute(x, {2, 0, 1});                                          // F_hid x T x N
  x = conv_time(x, p["stgcnn.temporal"], cfg.kernel / 2);
  x = add_bias(x, p["stgcnn.temporal_bias"], 0);
  if (cfg.encoder_residual) {
    Var r = add_bias(matmul(v, p["stgcnn.residual"]), p["stgcnn.residual_bias"], 2);
    x = add(x, permute(r, {2, 0, 1}));
  }
  return prelu(x, p["stgcnn.slope"]);
}

namespace {

// Sum over hops h of conv(U A^h, W_h); U is T_in x F x N.
Var txp_layer(Tape& tape, Var u, const std::vector<Tensor>& powers, Var weight,
              std::size_t kernel) {
  const Shape ws = weight.shape();
  Var acc{};
  for (std::size_t h = 0; h < powers.size(); ++h) {
    Var w = reshape(slice(weight, 0, h, h + 1), {ws[1], ws[2], ws[3]});
    Var mixed = h == 0 ? u : matmul(u, tape.constant(powers[h]));
    Var term = conv_time(mixed, w, kernel / 2);
    acc = h == 0 ? term : add(acc, term);
  }
  return acc;
}

std::vector<Tensor> adjacency_powers(const Tensor& a, std::size_t hops) {
  const std::size_t n = a.dim(0);
  std::vector<Tensor> out;
  Tensor eye(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) eye[i * n + i] = 1.0;
  out.push_back(eye);
  for (std::size_t h = 1; h < hops; ++h) {
    const Tensor& prev = out.back();
    Tensor next(Shape{n, n});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t j = 0; j < n; ++j) next[i * n + j] += prev[i * n + k] * a[k * n + j];
    out.push_back(std::move(next));
  }
  return out;
}

}  // namespace

Var txpcnn_forward(Tape& tape, Var h, const Tensor& adjacency, const BoundParams& p) {
  const ModelConfig& cfg = p.params->config;
  if (h.shape().size() != 3 || h.shape()[0] != cfg.hidden || h.shape()[1] != cfg.t_obs)
    throw ShapeError("txpcnn_forward: expected F_hid x T_obs x N input, got " +
                     shape_str(h.shape()));
  const auto powers = adjacency_powers(adjacency, cfg.graph_hops);
  Var u = permute(h, {1, 0, 2});  // T_obs x F_hid x N
  u = txp_layer(tape, u, powers, p[txp_name(0, "weight")], cfg.kernel);
  u = prelu(add_bias(u, p[txp_name(0, "bias")], 0), p[txp_name(0, "slope")]);
  for (std::size_t l = 1; l <= cfg.txp_residual; ++l) {
    Var z = txp_layer(tape, u, powers, p[txp_name(l, "weight")], cfg.kernel);
    z = add_bias(z, p[txp_name(l, "bias")], 0);
    u = prelu(add(z, u), p[txp_name(l, "slope")]);
  }
  return u;
}

Var model_forward(Tape& tape, const GraphSequence& graph, const BoundParams& p) {
  const ModelConfig& cfg = p.params->config;
  if (graph.steps() != cfg.t_obs)
    throw ShapeError("model_forward: graph has " + std::to_string(graph.steps()) +
                     " steps, model expects " + std::to_string(cfg.t_obs));
  const std::size_t n = graph.num_nodes();
  Var h = stgcnn_forward(tape, graph, p);
  // The decoder mixes neighbours through the last observed adjacency.
  Tensor last(Shape{n, n});
  std::copy_n(graph.adj_norm.data().begin() + (cfg.t_obs - 1) * n * n, n * n,
              last.data().begin());
  Var u = txpcnn_forward(tape, h, last, p);  // T_pred x F_hid x N
  Var y = permute(u, {2, 0, 1});             // N x T_pred x F_hid
  return add_bias(matmul(y, p["head.weight"]), p["head.bias"], 2);
}

GaussianVars gaussian_head(Var raw) {
  if (raw.shape().size() != 3 || raw.shape()[2] != 5)
    throw ShapeError("gaussian_head: expected N x T x 5, got " + shape_str(raw.shape()));
  return {slice(raw, 2, 0, 2), slice(raw, 2, 2, 4), tanh(slice(raw, 2, 4, 5))};
}

Bivariate GaussianField::at(std::size_t i, std::size_t t) const {
  return {{mu.at({i, t, 0}), mu.at({i, t, 1})},
          {sigma.at({i, t, 0}), sigma.at({i, t, 1})},
          rho.at({i, t})};
}

GaussianField predict_probabilistic(const GraphSequence& graph, const ModelParams& params) {
  if (params.config.mode != OutputMode::probabilistic)
    throw Error("predict_probabilistic: model has a deterministic head");
  Tape tape(false);
  const BoundParams p = bind(tape, params);
  const GaussianVars g = gaussian_head(model_forward(tape, graph, p));
  GaussianField f;
  f.mu = g.mu.value();
  f.sigma = exp(g.log_sigma).value();
  const Tensor& r = g.rho.value();
  f.rho = r.reshaped({r.dim(0), r.dim(1)});
  // exp/tanh saturate in floating point although their codomains are open;
  // pin to the nearest representable interior values.
  const double rho_max = std::nextafter(1.0, 0.0);
  for (auto& s : f.sigma.storage()) s = std::max(s, std::numeric_limits<double>::min());
  for (auto& v : f.rho.storage()) v = std::clamp(v, -rho_max, rho_max);
  return f;
}

Tensor predict_deterministic(const GraphSequence& graph, const ModelParams& params) {
  if (params.config.mode != OutputMode::deterministic)
    throw Error("predict_deterministic: model has a probabilistic head");
  Tape tape(false);
  return model_forward(tape, graph, bind(tape, params)).value();
}

Tensor relative_to_absolute(const Tensor& disp, const Tensor& origin) {
  Tape tape(false);
  return relative_to_absolute(tape.constant(disp), origin).value();
}

Var relative_to_absolute(Var disp, const Tensor& origin) {
  const Shape s = disp.shape();
  if (s.size() != 3 || s[2] != 2 || origin.rank() != 2 || origin.dim(0) != s[0] ||
      origin.dim(1) != 2)
    throw ShapeError("relative_to_absolute: displacements " + shape_str(s) + " and origin " +
                     shape_str(origin.shape()) + " do not match");
  Tensor offset(s);
  for (std::size_t i = 0; i < s[0]; ++i)
    for (std::size_t t = 0; t < s[1]; ++t)
      for (std::size_t c = 0; c < 2; ++c) offset.at({i, t, c}) = origin.at({i, c});
  return add(cumsum(disp, 1), disp.tape->constant(std::move(offset)));
}

}  // namespace agcnn
