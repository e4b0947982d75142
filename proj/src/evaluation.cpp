#include "agcnn/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "agcnn/error.hpp"

namespace agcnn {

namespace {

void check_traj(const char* op, const Tensor& pred, const Tensor& gt) {
  if (pred.shape() != gt.shape() || gt.rank() != 3 || gt.dim(2) != 2 || gt.dim(1) == 0)
    throw ShapeError(std::string(op) + ": prediction " + shape_str(pred.shape()) +
                     " vs ground truth " + shape_str(gt.shape()));
}

double dist(const Tensor& a, const Tensor& b, std::size_t i, std::size_t t) {
  return std::hypot(a.at({i, t, 0}) - b.at({i, t, 0}), a.at({i, t, 1}) - b.at({i, t, 1}));
}

// Per-pedestrian mean error over steps and final-step error.
void per_ped_errors(const Tensor& pred, const Tensor& gt, std::vector<double>& ade_i,
                    std::vector<double>& fde_i) {
  const std::size_t n = gt.dim(0), t = gt.dim(1);
  ade_i.assign(n, 0.0);
  fde_i.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < t; ++k) ade_i[i] += dist(pred, gt, i, k);
    ade_i[i] /= static_cast<double>(t);
    fde_i[i] = dist(pred, gt, i, t - 1);
  }
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

// N x T x 2 displacement draw from the field.
Tensor draw_displacements(const GaussianField& field, Rng& rng) {
  Tensor d(field.mu.shape());
  for (std::size_t i = 0; i < field.num_peds(); ++i)
    for (std::size_t t = 0; t < field.steps(); ++t) {
      const auto xy = sample_bivariate(field.at(i, t), rng);
      d.at({i, t, 0}) = xy[0];
      d.at({i, t, 1}) = xy[1];
    }
  return d;
}

SceneMetrics scene_of(const SequenceSample& s) {
  SceneMetrics m;
  m.scene = s.scene;
  m.start_frame = s.start_frame;
  m.num_peds = s.num_peds();
  return m;
}

}  // namespace

double ade(const Tensor& pred_abs, const Tensor& gt_abs) {
  check_traj("ade", pred_abs, gt_abs);
  std::vector<double> a, f;
  per_ped_errors(pred_abs, gt_abs, a, f);
  return mean(a);
}

double fde(const Tensor& pred_abs, const Tensor& gt_abs) {
  check_traj("fde", pred_abs, gt_abs);
  std::vector<double> a, f;
  per_ped_errors(pred_abs, gt_abs, a, f);
  return mean(f);
}

std::string to_string(MetricMode mode) {
  switch (mode) {
    case MetricMode::deterministic: return "deterministic";
    case MetricMode::best_of_n: return "best_of_n";
    case MetricMode::most_likely: return "most_likely";
  }
  return "?";
}

MetricMode metric_mode_from_string(const std::string& s) {
  if (s == "deterministic") return MetricMode::deterministic;
  if (s == "best_of_n" || s == "bon") return MetricMode::best_of_n;
  if (s == "most_likely") return MetricMode::most_likely;
  throw Error("unknown metric mode '" + s + "'");
}

std::string to_string(BonGranularity g) {
  return g == BonGranularity::per_pedestrian ? "per_pedestrian" : "per_scene";
}

BonGranularity bon_granularity_from_string(const std::string& s) {
  if (s == "per_pedestrian") return BonGranularity::per_pedestrian;
  if (s == "per_scene") return BonGranularity::per_scene;
  throw Error("unknown best-of-n granularity '" + s + "'");
}

void MetricsReport::add_scene(SceneMetrics m) {
  const double w_old = static_cast<double>(n_pedestrians);
  const double w_new = static_cast<double>(m.num_peds);
  const double w = w_old + w_new;
  if (w > 0) {
    ade = (ade * w_old + m.ade * w_new) / w;
    fde = (fde * w_old + m.fde * w_new) / w;
    fde_at_best_ade = (fde_at_best_ade * w_old + m.fde_at_best_ade * w_new) / w;
  }
  n_pedestrians += m.num_peds;
  ++n_samples_used;
  scenes.push_back(std::move(m));
}

MetricsReport best_of_n(const GaussianField& field, const Tensor& gt_abs, const Tensor& origin,
                        std::size_t n, Rng& rng, BonGranularity granularity) {
  if (n < 1) throw Error("best_of_n: n must be at least 1");
  if (field.mu.shape() != gt_abs.shape())
    throw ShapeError("best_of_n: field " + shape_str(field.mu.shape()) + " vs ground truth " +
                     shape_str(gt_abs.shape()));
  const std::size_t np = gt_abs.dim(0);
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> best_ade(np, inf), best_fde(np, inf), fde_at_best(np, inf);
  double scene_best_ade = inf, scene_best_fde = inf, scene_fde_at_best = inf;
  std::vector<double> a, f;
  for (std::size_t k = 0; k < n; ++k) {
    const Tensor traj = sample_trajectory(field, origin, rng);
    per_ped_errors(traj, gt_abs, a, f);
    for (std::size_t i = 0; i < np; ++i) {
      if (a[i] < best_ade[i]) {
        best_ade[i] = a[i];
        fde_at_best[i] = f[i];
      }
      best_fde[i] = std::min(best_fde[i], f[i]);
    }
    const double sa = mean(a), sf = mean(f);
    if (sa < scene_best_ade) {
      scene_best_ade = sa;
      scene_fde_at_best = sf;
    }
    scene_best_fde = std::min(scene_best_fde, sf);
  }
  SceneMetrics m;
  m.num_peds = np;
  if (granularity == BonGranularity::per_pedestrian) {
    m.ade = mean(best_ade);
    m.fde = mean(best_fde);
    m.fde_at_best_ade = mean(fde_at_best);
  } else {
    m.ade = scene_best_ade;
    m.fde = scene_best_fde;
    m.fde_at_best_ade = scene_fde_at_best;
  }
  MetricsReport r;
  r.predictor = "model";
  r.mode = MetricMode::best_of_n;
  r.draws = n;
  r.add_scene(std::move(m));
  return r;
}

Tensor sample_trajectory(const GaussianField& field, const Tensor& origin, Rng& rng) {
  return relative_to_absolute(draw_displacements(field, rng), origin);
}

Tensor most_likely(const GaussianField& field, const Tensor& origin) {
  return relative_to_absolute(field.mu, origin);
}

Tensor cvm_predict(const Tensor& abs_obs, std::size_t t_pred) {
  if (abs_obs.rank() != 3 || abs_obs.dim(2) != 2 || abs_obs.dim(1) < 2)
    throw ShapeError("cvm_predict: expected N x T_obs x 2 with T_obs >= 2, got " +
                     shape_str(abs_obs.shape()));
  const std::size_t n = abs_obs.dim(0), t = abs_obs.dim(1);
  Tensor out(Shape{n, t_pred, 2});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 2; ++c) {
      const double last = abs_obs.at({i, t - 1, c});
      const double v = last - abs_obs.at({i, t - 2, c});
      for (std::size_t k = 0; k < t_pred; ++k)
        out.at({i, k, c}) = last + static_cast<double>(k + 1) * v;
    }
  return out;
}

Tensor linear_predict(const Tensor& abs_obs, std::size_t t_pred) {
  if (abs_obs.rank() != 3 || abs_obs.dim(2) != 2 || abs_obs.dim(1) < 2)
    throw ShapeError("linear_predict: expected N x T_obs x 2 with T_obs >= 2, got " +
                     shape_str(abs_obs.shape()));
  const std::size_t t = abs_obs.dim(1);
  // The least-squares line through two points is the constant-velocity line.
  if (t == 2) return cvm_predict(abs_obs, t_pred);
  const std::size_t n = abs_obs.dim(0);
  const double t_mean = 0.5 * static_cast<double>(t - 1);
  double s_tt = 0.0;
  for (std::size_t k = 0; k < t; ++k) s_tt += (k - t_mean) * (k - t_mean);
  Tensor out(Shape{n, t_pred, 2});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 2; ++c) {
      double x_mean = 0.0;
      for (std::size_t k = 0; k < t; ++k) x_mean += abs_obs.at({i, k, c});
      x_mean /= static_cast<double>(t);
      double s_tx = 0.0;
      for (std::size_t k = 0; k < t; ++k) s_tx += (k - t_mean) * (abs_obs.at({i, k, c}) - x_mean);
      const double slope = s_tx / s_tt;
      for (std::size_t k = 0; k < t_pred; ++k)
        out.at({i, k, c}) = x_mean + slope * (static_cast<double>(t + k) - t_mean);
    }
  return out;
}

MetricsReport evaluate_model(const ModelParams& params, std::span<const SequenceSample> samples,
                             const EvalOptions& opts) {
  const bool prob = params.config.mode == OutputMode::probabilistic;
  if (opts.mode == MetricMode::deterministic && prob)
    throw Error("evaluate_model: deterministic metrics need a deterministic model; use most_likely");
  if (opts.mode != MetricMode::deterministic && !prob)
    throw Error("evaluate_model: " + to_string(opts.mode) + " needs a probabilistic model");

  MetricsReport report;
  report.predictor = "model";
  report.mode = opts.mode;
  report.draws = opts.mode == MetricMode::best_of_n ? opts.draws : 1;
  Rng rng(opts.seed);
  for (const auto& s : samples) {
    const GraphSequence g = build_graph_sequence(s, opts.sign_mode);
    const Tensor origin = s.last_observed();
    SceneMetrics m = scene_of(s);
    if (opts.mode == MetricMode::best_of_n) {
      const MetricsReport one =
          best_of_n(predict_probabilistic(g, params), s.abs_fut, origin, opts.draws, rng,
                    opts.granularity);
      m.ade = one.ade;
      m.fde = one.fde;
      m.fde_at_best_ade = one.fde_at_best_ade;
    } else {
      const Tensor pred = prob ? most_likely(predict_probabilistic(g, params), origin)
                               : relative_to_absolute(predict_deterministic(g, params), origin);
      m.ade = ade(pred, s.abs_fut);
      m.fde = fde(pred, s.abs_fut);
      m.fde_at_best_ade = m.fde;
    }
    report.add_scene(std::move(m));
  }
  return report;
}

MetricsReport evaluate_baseline(Baseline which, std::span<const SequenceSample> samples) {
  MetricsReport report;
  report.predictor = which == Baseline::cvm ? "cvm" : "linear";
  report.mode = MetricMode::deterministic;
  for (const auto& s : samples) {
    const Tensor pred = which == Baseline::cvm ? cvm_predict(s.abs_obs, s.t_pred())
                                               : linear_predict(s.abs_obs, s.t_pred());
    SceneMetrics m = scene_of(s);
    m.ade = ade(pred, s.abs_fut);
    m.fde = fde(pred, s.abs_fut);
    m.fde_at_best_ade = m.fde;
    report.add_scene(std::move(m));
  }
  return report;
}

BenchReport benchmark_inference(const ModelParams& params, std::span<const SequenceSample> samples,
                                std::size_t draws, std::size_t repetitions, SignMode sign_mode,
                                std::uint64_t seed) {
  using clock = std::chrono::steady_clock;
  const auto ms_since = [](clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(clock::now() - t0).count();
  };
  if (samples.empty()) throw Error("benchmark_inference: no input scenes");
  if (repetitions < 1) throw Error("benchmark_inference: repetitions must be positive");
  const bool prob = params.config.mode == OutputMode::probabilistic;
  if (!prob) draws = 1;

  std::vector<GraphSequence> graphs;
  std::vector<double> build_ms, fwd_ms;
  for (const auto& s : samples) {
    const auto t0 = clock::now();
    graphs.push_back(build_graph_sequence(s, sign_mode));
    build_ms.push_back(ms_since(t0));
  }

  Rng rng(seed);
  double sink = 0.0;
  auto infer = [&](std::size_t k) {
    const Tensor origin = samples[k].last_observed();
    if (prob) {
      const GaussianField f = predict_probabilistic(graphs[k], params);
      for (std::size_t d = 0; d < draws; ++d)
        sink += sample_trajectory(f, origin, rng)[0];
    } else {
      sink += relative_to_absolute(predict_deterministic(graphs[k], params), origin)[0];
    }
  };
  for (std::size_t k = 0; k < graphs.size(); ++k) infer(k);  // warm-up
  for (std::size_t r = 0; r < repetitions; ++r)
    for (std::size_t k = 0; k < graphs.size(); ++k) {
      const auto t0 = clock::now();
      infer(k);
      fwd_ms.push_back(ms_since(t0));
    }
  if (!std::isfinite(sink)) throw NumericError("benchmark_inference: non-finite prediction");

  BenchReport r;
  r.mode = to_string(params.config.mode);
  r.draws = draws;
  r.forward_ms = median(std::move(fwd_ms));
  r.graph_build_ms = median(std::move(build_ms));
  r.param_count = parameter_census(params);
  r.repetitions = repetitions;
  r.scenes = samples.size();
  std::size_t peds = 0;
  for (const auto& s : samples) peds += s.num_peds();
  r.batch = std::to_string(samples.size()) + " scenes, " + std::to_string(peds) +
            " pedestrians, T_obs=" + std::to_string(samples[0].t_obs()) +
            ", T_pred=" + std::to_string(samples[0].t_pred()) + ", single scene per forward";
  return r;
}

std::string to_json(const MetricsReport& r, bool per_scene) {
  using nlohmann::json;
  std::string out;
  if (per_scene)
    for (const auto& s : r.scenes) {
      json j = {{"record", "scene"},   {"predictor", r.predictor}, {"scene", s.scene},
                {"start_frame", s.start_frame}, {"num_peds", s.num_peds}, {"ade", s.ade},
                {"fde", s.fde}};
      if (r.mode == MetricMode::best_of_n) j["fde_at_best_ade"] = s.fde_at_best_ade;
      out += j.dump() + "\n";
    }
  json agg = {{"record", "aggregate"},
              {"predictor", r.predictor},
              {"mode", to_string(r.mode)},
              {"draws", r.draws},
              {"ade", r.ade},
              {"fde", r.fde},
              {"n_samples_used", r.n_samples_used},
              {"n_pedestrians", r.n_pedestrians}};
  if (r.mode == MetricMode::best_of_n) agg["fde_at_best_ade"] = r.fde_at_best_ade;
  out += agg.dump() + "\n";
  return out;
}

std::string to_json(const BenchReport& r) {
  nlohmann::json j = {{"record", "bench"},
                      {"mode", r.mode},
                      {"draws", r.draws},
                      {"forward_time_ms", r.forward_ms},
                      {"graph_build_time_ms", r.graph_build_ms},
                      {"graph_time_included_in_forward", false},
                      {"param_count", r.param_count},
                      {"repetitions", r.repetitions},
                      {"scenes", r.scenes},
                      {"batch", r.batch}};
  return j.dump() + "\n";
}

}  // namespace agcnn
