#include "agcnn/training.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "agcnn/error.hpp"
#include "agcnn/evaluation.hpp"
#include "agcnn/losses.hpp"

namespace agcnn {

using nlohmann::json;

std::string to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

OptimizerKind optimizer_kind_from_string(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd") return OptimizerKind::sgd;
  throw Error("unknown optimizer '" + s + "'");
}

OptimizerState OptimizerState::make(OptimizerKind kind, double lr, const ModelParams& params) {
  OptimizerState s;
  s.kind = kind;
  s.learning_rate = lr;
  if (kind == OptimizerKind::adam)
    for (const auto& p : params.tensors) {
      s.m.emplace_back(p.value.shape());
      s.v.emplace_back(p.value.shape());
    }
  return s;
}

void optimizer_step(ModelParams& params, const Gradients& grads, OptimizerState& state) {
  const std::size_t n = params.tensors.size();
  if (grads.size() != n) throw ShapeError("optimizer_step: gradient count does not match params");
  for (std::size_t i = 0; i < n; ++i) {
    if (grads[i].shape() != params.tensors[i].value.shape())
      throw ShapeError("optimizer_step: gradient shape mismatch for " + params.tensors[i].name);
    if (!grads[i].all_finite())
      throw NumericError("optimizer_step: non-finite gradient for " + params.tensors[i].name);
  }
  if (state.kind == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < n; ++i) {
      auto p = params.tensors[i].value.data();
      auto g = grads[i].data();
      for (std::size_t j = 0; j < p.size(); ++j) p[j] -= state.learning_rate * g[j];
    }
    ++state.step;
    return;
  }
  if (state.m.size() != n || state.v.size() != n)
    throw ShapeError("optimizer_step: Adam moments do not match params");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < n; ++i) {
    auto p = params.tensors[i].value.data();
    auto g = grads[i].data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      p[j] -= state.learning_rate * (m[j] / c1) / (std::sqrt(v[j] / c2) + state.epsilon);
    }
  }
}

ModelConfig TrainConfig::model_config() const {
  ModelConfig m;
  m.t_obs = t_obs;
  m.t_pred = t_pred;
  m.hidden = hidden;
  m.txp_residual = txp_residual;
  m.kernel = kernel;
  m.graph_hops = graph_hops;
  m.encoder_residual = encoder_residual;
  m.mode = mode;
  return m;
}

OptimizerKind TrainConfig::optimizer_kind() const {
  if (optimizer == "default")
    return mode == OutputMode::probabilistic ? OptimizerKind::sgd : OptimizerKind::adam;
  return optimizer_kind_from_string(optimizer);
}

double TrainConfig::resolved_learning_rate() const {
  if (learning_rate > 0.0) return learning_rate;
  return optimizer_kind() == OptimizerKind::sgd ? 0.01 : 0.0015;
}

double TrainConfig::learning_rate_at(std::size_t completed_epochs) const {
  const double base = resolved_learning_rate();
  if (lr_step_epochs == 0) return base;
  return base * std::pow(lr_step_factor, static_cast<double>(completed_epochs / lr_step_epochs));
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw Error("train config: batch_size must be positive");
  if (t_obs < 2 || t_pred < 1) throw Error("train config: need t_obs >= 2 and t_pred >= 1");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw DomainError("train config: alpha must lie in [0, 1]");
  if (!(learning_rate >= 0.0) || !(weight_decay >= 0.0) || !(grad_clip >= 0.0))
    throw Error("train config: learning_rate, weight_decay and grad_clip must be non-negative");
  if (!(lr_step_factor > 0.0 && lr_step_factor <= 1.0))
    throw Error("train config: lr_step_factor must lie in (0, 1]");
  optimizer_kind();
}

namespace {

std::string to_string(LossReduction r) { return r == LossReduction::sum ? "sum" : "mean"; }

LossReduction reduction_from_string(const std::string& s) {
  if (s == "sum") return LossReduction::sum;
  if (s == "mean") return LossReduction::mean;
  throw Error("unknown loss reduction '" + s + "'");
}

json config_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"mode", to_string(c.mode)},
          {"alpha", c.alpha},
          {"seed", c.seed},
          {"t_obs", c.t_obs},
          {"t_pred", c.t_pred},
          {"sign_mode", to_string(c.sign_mode)},
          {"hidden", c.hidden},
          {"txp_residual", c.txp_residual},
          {"kernel", c.kernel},
          {"graph_hops", c.graph_hops},
          {"encoder_residual", c.encoder_residual},
          {"optimizer", c.optimizer},
          {"learning_rate", c.learning_rate},
          {"weight_decay", c.weight_decay},
          {"grad_clip", c.grad_clip},
          {"lr_step_epochs", c.lr_step_epochs},
          {"lr_step_factor", c.lr_step_factor},
          {"reduction", to_string(c.reduction)},
          {"shuffle", c.shuffle}};
}

TrainConfig config_from(const json& j, TrainConfig c) {
  if (!j.is_object()) throw Error("train config: expected a JSON object");
  for (const auto& [key, val] : j.items()) {
    if (key == "epochs") c.epochs = val.get<std::size_t>();
    else if (key == "batch_size") c.batch_size = val.get<std::size_t>();
    else if (key == "mode") c.mode = output_mode_from_string(val.get<std::string>());
    else if (key == "alpha") c.alpha = val.get<double>();
    else if (key == "seed") c.seed = val.get<std::uint64_t>();
    else if (key == "t_obs") c.t_obs = val.get<std::size_t>();
    else if (key == "t_pred") c.t_pred = val.get<std::size_t>();
    else if (key == "sign_mode") c.sign_mode = sign_mode_from_string(val.get<std::string>());
    else if (key == "hidden") c.hidden = val.get<std::size_t>();
    else if (key == "txp_residual") c.txp_residual = val.get<std::size_t>();
    else if (key == "kernel") c.kernel = val.get<std::size_t>();
    else if (key == "graph_hops") c.graph_hops = val.get<std::size_t>();
    else if (key == "encoder_residual") c.encoder_residual = val.get<bool>();
    else if (key == "optimizer") c.optimizer = val.get<std::string>();
    else if (key == "learning_rate") c.learning_rate = val.get<double>();
    else if (key == "weight_decay") c.weight_decay = val.get<double>();
    else if (key == "grad_clip") c.grad_clip = val.get<double>();
    else if (key == "lr_step_epochs") c.lr_step_epochs = val.get<std::size_t>();
    else if (key == "lr_step_factor") c.lr_step_factor = val.get<double>();
    else if (key == "reduction") c.reduction = reduction_from_string(val.get<std::string>());
    else if (key == "shuffle") c.shuffle = val.get<bool>();
    else throw Error("train config: unknown key '" + key + "'");
  }
  return c;
}

}  // namespace

std::string to_json(const TrainConfig& cfg) { return config_json(cfg).dump(); }

TrainConfig train_config_from_json(const std::string& json_text, TrainConfig base) {
  json j;
  try {
    j = json::parse(json_text);
    return config_from(j, std::move(base));
  } catch (const json::exception& e) {
    throw Error(std::string("train config: ") + e.what());
  }
}

std::vector<PreparedSample> prepare_samples(std::span<const SequenceSample> samples,
                                            SignMode sign_mode) {
  std::vector<PreparedSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples)
    out.push_back({build_graph_sequence(s, sign_mode), s.rel_fut, s.abs_fut, s.last_observed()});
  return out;
}

Var sample_loss(Tape& tape, const BoundParams& p, const PreparedSample& s, const TrainConfig& cfg) {
  Var raw = model_forward(tape, s.graph, p);
  Var loss = cfg.mode == OutputMode::probabilistic
                 ? nll_loss(gaussian_head(raw), tape.constant(s.rel_fut))
                 : cde_loss(relative_to_absolute(raw, s.origin), tape.constant(s.abs_fut),
                            cfg.alpha);
  if (cfg.reduction == LossReduction::mean)
    loss = scale(loss, 1.0 / static_cast<double>(s.rel_fut.dim(0) * s.rel_fut.dim(1)));
  return loss;
}

BatchGradient accumulate_gradients(const ModelParams& params, std::span<const PreparedSample> batch,
                                   std::span<const std::size_t> order, const TrainConfig& cfg) {
  BatchGradient out;
  const auto shapes = params.shapes();
  for (const auto& s : shapes) out.grads.emplace_back(s);
  for (std::size_t idx : order) {
    Tape tape;
    const BoundParams p = bind(tape, params);
    const Var loss = sample_loss(tape, p, batch[idx], cfg);
    const Gradients g = tape.backward(loss, shapes);
    for (std::size_t i = 0; i < g.size(); ++i) {
      auto acc = out.grads[i].data();
      auto src = g[i].data();
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += src[j];
    }
    out.loss += loss.value().item();
  }
  return out;
}

std::string EpochRecord::to_json() const {
  json j = {{"epoch", epoch}, {"loss", loss}};
  if (has_val) {
    j["val_ade"] = val_ade;
    j["val_fde"] = val_fde;
  }
  return j.dump();
}

Trainer::Trainer(TrainConfig cfg, ModelParams params)
    : cfg_(std::move(cfg)), params_(std::move(params)), rng_(cfg_.seed) {
  cfg_.validate();
  if (!(params_.config == cfg_.model_config()))
    throw Error("Trainer: parameters were built for a different model configuration");
  opt_ = OptimizerState::make(cfg_.optimizer_kind(), cfg_.resolved_learning_rate(), params_);
}

Trainer::Trainer(TrainConfig cfg)
    : Trainer(cfg, init_params(cfg.model_config(), cfg.seed)) {}

void Trainer::restore(ModelParams params, OptimizerState opt, Rng rng, std::size_t epoch) {
  if (!(params.config == cfg_.model_config()))
    throw Error("Trainer::restore: model configuration mismatch");
  params_ = std::move(params);
  opt_ = std::move(opt);
  rng_ = rng;
  epoch_ = epoch;
}

EpochRecord Trainer::run_epoch(std::span<const PreparedSample> train,
                               std::span<const PreparedSample> val) {
  if (train.empty()) throw Error("run_epoch: empty training split");
  const ModelParams params0 = params_;
  const OptimizerState opt0 = opt_;
  const Rng rng0 = rng_;
  opt_.learning_rate = cfg_.learning_rate_at(epoch_);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (cfg_.shuffle)
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng_() % (i + 1)]);

  double loss_sum = 0.0;
  try {
    for (std::size_t b = 0; b < order.size(); b += cfg_.batch_size) {
      const std::size_t e = std::min(order.size(), b + cfg_.batch_size);
      BatchGradient bg = accumulate_gradients(params_, train, {order.data() + b, e - b}, cfg_);
      if (!std::isfinite(bg.loss)) throw NumericError("training loss is not finite");
      loss_sum += bg.loss;
      const double inv = 1.0 / static_cast<double>(e - b);
      double norm2 = 0.0;
      for (std::size_t i = 0; i < bg.grads.size(); ++i) {
        auto g = bg.grads[i].data();
        auto p = params_.tensors[i].value.data();
        for (std::size_t j = 0; j < g.size(); ++j) {
          g[j] = g[j] * inv + cfg_.weight_decay * p[j];
          norm2 += g[j] * g[j];
        }
      }
      if (cfg_.grad_clip > 0.0 && std::sqrt(norm2) > cfg_.grad_clip) {
        const double s = cfg_.grad_clip / std::sqrt(norm2);
        for (auto& g : bg.grads)
          for (auto& x : g.storage()) x *= s;
      }
      optimizer_step(params_, bg.grads, opt_);
      if (!params_.all_finite()) throw NumericError("parameters became non-finite");
    }
  } catch (const NumericError& e) {
    params_ = params0;
    opt_ = opt0;
    rng_ = rng0;
    throw NumericError("training diverged in epoch " + std::to_string(epoch_ + 1) + ": " +
                       e.what());
  }

  ++epoch_;
  EpochRecord rec;
  rec.epoch = epoch_;
  rec.loss = loss_sum / static_cast<double>(train.size());
  if (!val.empty()) {
    rec.has_val = true;
    std::tie(rec.val_ade, rec.val_fde) = point_metrics(params_, val);
  }
  return rec;
}

std::pair<double, double> point_metrics(const ModelParams& params,
                                        std::span<const PreparedSample> samples) {
  double a = 0.0, f = 0.0;
  std::size_t peds = 0;
  for (const auto& s : samples) {
    const Tensor disp = params.config.mode == OutputMode::probabilistic
                            ? predict_probabilistic(s.graph, params).mu
                            : predict_deterministic(s.graph, params);
    const Tensor pred = relative_to_absolute(disp, s.origin);
    const double n = static_cast<double>(s.abs_fut.dim(0));
    a += ade(pred, s.abs_fut) * n;
    f += fde(pred, s.abs_fut) * n;
    peds += s.abs_fut.dim(0);
  }
  if (peds == 0) return {0.0, 0.0};
  return {a / static_cast<double>(peds), f / static_cast<double>(peds)};
}

TrainResult train(std::span<const SequenceSample> train_set, std::span<const SequenceSample> val_set,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
  Trainer t(cfg);
  TrainResult r;
  if (cfg.epochs > 0) {
    if (train_set.empty()) throw Error("train: empty training split");
    const auto tr = prepare_samples(train_set, cfg.sign_mode);
    const auto va = prepare_samples(val_set, cfg.sign_mode);
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
      r.log.push_back(t.run_epoch(tr, va));
      if (on_epoch) on_epoch(t, r.log.back());
    }
  }
  r.params = t.params();
  return r;
}

Checkpoint snapshot(const Trainer& t) {
  return {t.config(), t.params(), t.optimizer(), t.rng(), t.epoch()};
}

// --- checkpoint container ---
//   8 bytes   magic "AGCNNCKP"
//   4 bytes   format version, uint32 little-endian
//   8 bytes   header length H, uint64 little-endian
//   H bytes   JSON header (config, epoch, rng, optimizer, tensor manifest)
//   payload   tensors in manifest order, row-major float64 little-endian

namespace {

constexpr char kMagic[8] = {'A', 'G', 'C', 'N', 'N', 'C', 'K', 'P'};

template <class U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <class U>
U get_le(const std::string& in, std::size_t pos) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i)
    v |= static_cast<U>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

struct Entry {
  std::string name;
  const Tensor* tensor;
};

std::vector<Entry> manifest_of(const Checkpoint& c) {
  std::vector<Entry> out;
  for (const auto& p : c.params.tensors) out.push_back({"param/" + p.name, &p.value});
  for (std::size_t i = 0; i < c.optimizer.m.size(); ++i)
    out.push_back({"adam.m/" + c.params.tensors[i].name, &c.optimizer.m[i]});
  for (std::size_t i = 0; i < c.optimizer.v.size(); ++i)
    out.push_back({"adam.v/" + c.params.tensors[i].name, &c.optimizer.v[i]});
  return out;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& c) {
  std::ostringstream rng_text;
  rng_text << c.rng;
  json tensors = json::array();
  const auto entries = manifest_of(c);
  for (const auto& e : entries) tensors.push_back({{"name", e.name}, {"shape", e.tensor->shape()}});
  const json header = {{"format_version", kCheckpointVersion},
                       {"config", config_json(c.config)},
                       {"epoch", c.epoch},
                       {"rng_state", rng_text.str()},
                       {"optimizer",
                        {{"kind", to_string(c.optimizer.kind)},
                         {"learning_rate", c.optimizer.learning_rate},
                         {"beta1", c.optimizer.beta1},
                         {"beta2", c.optimizer.beta2},
                         {"epsilon", c.optimizer.epsilon},
                         {"step", c.optimizer.step}}},
                       {"tensors", tensors}};
  const std::string h = header.dump();
  std::string out(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, h.size());
  out += h;
  for (const auto& e : entries)
    for (double x : e.tensor->data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(x));
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  constexpr std::size_t prefix = sizeof(kMagic) + 4 + 8;
  if (bytes.size() < prefix || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw FormatError("checkpoint: bad magic");
  const auto version = get_le<std::uint32_t>(bytes, sizeof(kMagic));
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported format version " + std::to_string(version));
  const auto hlen = get_le<std::uint64_t>(bytes, sizeof(kMagic) + 4);
  if (hlen > bytes.size() - prefix) throw FormatError("checkpoint: truncated header");

  Checkpoint c;
  std::vector<std::pair<std::string, Shape>> manifest;
  try {
    const json h = json::parse(bytes.begin() + prefix, bytes.begin() + prefix + hlen);
    if (h.at("format_version").get<std::uint32_t>() != version)
      throw FormatError("checkpoint: header version disagrees with container");
    c.config = config_from(h.at("config"), TrainConfig{});
    c.config.validate();
    c.epoch = h.at("epoch").get<std::size_t>();
    std::istringstream rng_text(h.at("rng_state").get<std::string>());
    rng_text >> c.rng;
    if (!rng_text) throw FormatError("checkpoint: malformed rng state");
    const json& o = h.at("optimizer");
    c.optimizer.kind = optimizer_kind_from_string(o.at("kind").get<std::string>());
    c.optimizer.learning_rate = o.at("learning_rate").get<double>();
    c.optimizer.beta1 = o.at("beta1").get<double>();
    c.optimizer.beta2 = o.at("beta2").get<double>();
    c.optimizer.epsilon = o.at("epsilon").get<double>();
    c.optimizer.step = o.at("step").get<std::uint64_t>();
    for (const auto& t : h.at("tensors"))
      manifest.emplace_back(t.at("name").get<std::string>(), t.at("shape").get<Shape>());
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
  } catch (const FormatError&) {
    throw;
  } catch (const Error& e) {
    throw FormatError(std::string("checkpoint: invalid header: ") + e.what());
  }

  // Layout implied by the stored config; the manifest must match it exactly.
  c.params = init_params(c.config.model_config(), 0);
  if (c.optimizer.kind == OptimizerKind::adam)
    c.optimizer = [&] {
      OptimizerState s = OptimizerState::make(OptimizerKind::adam, c.optimizer.learning_rate,
                                              c.params);
      s.beta1 = c.optimizer.beta1;
      s.beta2 = c.optimizer.beta2;
      s.epsilon = c.optimizer.epsilon;
      s.step = c.optimizer.step;
      return s;
    }();
  const auto entries = manifest_of(c);
  if (entries.size() != manifest.size())
    throw FormatError("checkpoint: manifest lists " + std::to_string(manifest.size()) +
                      " tensors, config implies " + std::to_string(entries.size()));
  std::size_t payload = 0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (manifest[i].first != entries[i].name || manifest[i].second != entries[i].tensor->shape())
      throw FormatError("checkpoint: tensor " + std::to_string(i) + " is '" + manifest[i].first +
                        "' " + shape_str(manifest[i].second) + ", expected '" + entries[i].name +
                        "' " + shape_str(entries[i].tensor->shape()));
    payload += entries[i].tensor->size() * 8;
  }
  if (bytes.size() - prefix - hlen != payload)
    throw FormatError("checkpoint: payload is " + std::to_string(bytes.size() - prefix - hlen) +
                      " bytes, manifest needs " + std::to_string(payload));

  std::size_t pos = prefix + hlen;
  for (const auto& e : entries)
    for (double& x : const_cast<Tensor*>(e.tensor)->storage()) {
      x = std::bit_cast<double>(get_le<std::uint64_t>(bytes, pos));
      pos += 8;
    }
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const std::string bytes = serialize_checkpoint(ckpt);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw IoError("cannot move checkpoint into place at '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace agcnn
