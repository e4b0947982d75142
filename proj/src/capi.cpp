#include "agcnn/agcnn.h"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <new>
#include <string>

#include <json.hpp>

#include "agcnn/error.hpp"
#include "agcnn/evaluation.hpp"
#include "agcnn/training.hpp"

using nlohmann::json;
using namespace agcnn;

struct agcnn_dataset {
  Split split;
};

struct agcnn_model {
  std::unique_ptr<Trainer> trainer;
};

namespace {

thread_local std::string g_last_error;

template <class F>
agcnn_status guarded(F&& body) {
  try {
    body();
    g_last_error.clear();
    return AGCNN_OK;
  } catch (const ParseError& e) {
    g_last_error = e.what();
    return AGCNN_ERR_PARSE;
  } catch (const DataError& e) {
    g_last_error = e.what();
    return AGCNN_ERR_DATA;
  } catch (const ShapeError& e) {
    g_last_error = e.what();
    return AGCNN_ERR_SHAPE;
  } catch (const NumericError& e) {
    g_last_error = e.what();
    return AGCNN_ERR_NUMERIC;
  } catch (const DomainError& e) {
    g_last_error = e.what();
    return AGCNN_ERR_DOMAIN;
  } catch (const FormatError& e) {
    g_last_error = e.what();
    return AGCNN_ERR_FORMAT;
  } catch (const IoError& e) {
    g_last_error = e.what();
    return AGCNN_ERR_IO;
  } catch (const Error& e) {
    g_last_error = e.what();
    return AGCNN_ERR_INVALID_ARGUMENT;
  } catch (const json::exception& e) {
    g_last_error = std::string("invalid JSON: ") + e.what();
    return AGCNN_ERR_INVALID_ARGUMENT;
  } catch (const std::exception& e) {
    g_last_error = std::string("internal error: ") + e.what();
    return AGCNN_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "internal error: unknown exception";
    return AGCNN_ERR_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (!p) throw Error(std::string(what) + " must not be null");
}

json parse_options(const char* text) {
  if (!text || !*text) return json::object();
  json j = json::parse(text);
  if (!j.is_object()) throw Error("options must be a JSON object");
  return j;
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

const std::vector<SequenceSample>& split_of(const agcnn_dataset* ds, const char* name) {
  require(ds, "dataset");
  const std::string s = name ? name : "test";
  if (s == "train") return ds->split.train;
  if (s == "val") return ds->split.val;
  if (s == "test") return ds->split.test;
  throw Error("unknown split '" + s + "' (expected train, val or test)");
}

std::span<const SequenceSample> limited(const std::vector<SequenceSample>& v, const json& opts) {
  const std::size_t cap = opts.value("max_scenes", std::size_t{0});
  return {v.data(), cap > 0 ? std::min(cap, v.size()) : v.size()};
}

std::string scene_id(const SequenceSample& s) {
  return s.scene + "@" + std::to_string(s.start_frame);
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

extern "C" {

const char* agcnn_version(void) { return "1.0.0"; }

const char* agcnn_status_string(agcnn_status status) {
  switch (status) {
    case AGCNN_OK: return "ok";
    case AGCNN_ERR_INVALID_ARGUMENT: return "invalid argument";
    case AGCNN_ERR_IO: return "i/o error";
    case AGCNN_ERR_PARSE: return "parse error";
    case AGCNN_ERR_DATA: return "data error";
    case AGCNN_ERR_SHAPE: return "shape error";
    case AGCNN_ERR_NUMERIC: return "numeric error";
    case AGCNN_ERR_DOMAIN: return "domain error";
    case AGCNN_ERR_FORMAT: return "format error";
    case AGCNN_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* agcnn_last_error(void) { return g_last_error.c_str(); }

void agcnn_string_free(char* s) { std::free(s); }

agcnn_status agcnn_dataset_load(const char* config_json, agcnn_dataset** out) {
  return guarded([&] {
    require(out, "out");
    *out = nullptr;
    const json cfg = parse_options(config_json);
    WindowConfig wc;
    wc.t_obs = cfg.value("t_obs", wc.t_obs);
    wc.t_pred = cfg.value("t_pred", wc.t_pred);
    wc.stride = cfg.value("window_stride", wc.stride);

    std::vector<SequenceSample> samples;
    auto add = [&](const Scene& sc) {
      auto w = window_sequences(sc, wc);
      samples.insert(samples.end(), std::make_move_iterator(w.begin()),
                     std::make_move_iterator(w.end()));
    };
    if (cfg.contains("files")) {
      const auto order = column_order_from_string(cfg.value("column_order", "frame_ped_x_y"));
      for (const auto& f : cfg.at("files"))
        add(load_trajectory_file(f.get<std::string>(), order, cfg.value("frame_stride", 0),
                                 cfg.value("dt", 0.4)));
    }
    if (cfg.contains("synthetic")) {
      const json& s = cfg.at("synthetic");
      SyntheticCrowd c;
      c.num_peds = s.value("num_peds", c.num_peds);
      c.num_steps = s.value("num_steps", wc.t_obs + wc.t_pred);
      c.area = s.value("area", c.area);
      c.min_speed = s.value("min_speed", c.min_speed);
      c.max_speed = s.value("max_speed", c.max_speed);
      c.max_turn = s.value("max_turn", c.max_turn);
      c.constant_velocity = s.value("constant_velocity", c.constant_velocity);
      const std::size_t scenes = s.value("scenes", std::size_t{10});
      const std::uint64_t seed = s.value("seed", std::uint64_t{0});
      for (std::size_t k = 0; k < scenes; ++k)
        add(synthetic_scene(c, seed + k, "synthetic" + std::to_string(k)));
    }
    if (!cfg.contains("files") && !cfg.contains("synthetic"))
      throw Error("dataset config needs \"files\" or \"synthetic\"");
    if (samples.empty()) throw DataError("no complete windows in the dataset");

    std::array<double, 3> ratios{0.6, 0.2, 0.2};
    if (cfg.contains("split")) ratios = cfg.at("split").get<std::array<double, 3>>();
    auto ds = std::make_unique<agcnn_dataset>();
    ds->split = split_dataset(std::move(samples), ratios, cfg.value("split_seed", std::uint64_t{0}));
    *out = ds.release();
  });
}

void agcnn_dataset_free(agcnn_dataset* ds) { delete ds; }

agcnn_status agcnn_dataset_counts(const agcnn_dataset* ds, size_t counts[3]) {
  return guarded([&] {
    require(ds, "dataset");
    require(counts, "counts");
    counts[0] = ds->split.train.size();
    counts[1] = ds->split.val.size();
    counts[2] = ds->split.test.size();
  });
}

agcnn_status agcnn_dataset_export_csv(const agcnn_dataset* ds, const char* split,
                                      const char* csv_path) {
  return guarded([&] {
    require(csv_path, "csv_path");
    const auto& samples = split_of(ds, split);
    std::string out = "scene_id,ped_id,step,sample_id,x,y,mu_x,mu_y,sigma_x,sigma_y,rho\n";
    for (const auto& s : samples)
      for (std::size_t i = 0; i < s.num_peds(); ++i)
        for (std::size_t t = 0; t < s.t_obs() + s.t_pred(); ++t) {
          const Tensor& src = t < s.t_obs() ? s.abs_obs : s.abs_fut;
          const std::size_t k = t < s.t_obs() ? t : t - s.t_obs();
          out += scene_id(s) + "," + std::to_string(s.ped_ids[i]) + "," + std::to_string(t) +
                 ",-1," + num(src.at({i, k, 0})) + "," + num(src.at({i, k, 1})) + ",,,,,\n";
        }
    std::ofstream f(csv_path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(std::string("cannot open '") + csv_path + "' for writing");
    f << out;
    if (!f) throw IoError(std::string("failed writing '") + csv_path + "'");
  });
}

agcnn_status agcnn_model_create(const char* train_config_json, agcnn_model** out) {
  return guarded([&] {
    require(out, "out");
    *out = nullptr;
    const TrainConfig cfg =
        train_config_from_json(train_config_json && *train_config_json ? train_config_json : "{}");
    auto m = std::make_unique<agcnn_model>();
    m->trainer = std::make_unique<Trainer>(cfg);
    *out = m.release();
  });
}

agcnn_status agcnn_model_load(const char* checkpoint_path, agcnn_model** out) {
  return guarded([&] {
    require(out, "out");
    require(checkpoint_path, "checkpoint_path");
    *out = nullptr;
    Checkpoint c = load_checkpoint(checkpoint_path);
    auto m = std::make_unique<agcnn_model>();
    m->trainer = std::make_unique<Trainer>(c.config, c.params);
    m->trainer->restore(std::move(c.params), std::move(c.optimizer), c.rng, c.epoch);
    *out = m.release();
  });
}

agcnn_status agcnn_model_save(const agcnn_model* model, const char* checkpoint_path) {
  return guarded([&] {
    require(model, "model");
    require(checkpoint_path, "checkpoint_path");
    save_checkpoint(checkpoint_path, snapshot(*model->trainer));
  });
}

void agcnn_model_free(agcnn_model* model) { delete model; }

agcnn_status agcnn_model_param_count(const agcnn_model* model, size_t* out) {
  return guarded([&] {
    require(model, "model");
    require(out, "out");
    *out = parameter_census(model->trainer->params());
  });
}

agcnn_status agcnn_model_epoch(const agcnn_model* model, size_t* out) {
  return guarded([&] {
    require(model, "model");
    require(out, "out");
    *out = model->trainer->epoch();
  });
}

agcnn_status agcnn_model_config(const agcnn_model* model, char** out_json) {
  return guarded([&] {
    require(model, "model");
    require(out_json, "out_json");
    *out_json = dup_string(to_json(model->trainer->config()));
  });
}

agcnn_status agcnn_model_update_config(agcnn_model* model, const char* json_text) {
  return guarded([&] {
    require(model, "model");
    const Trainer& t = *model->trainer;
    const TrainConfig cfg = train_config_from_json(json_text ? json_text : "{}", t.config());
    if (!(cfg.model_config() == t.config().model_config()))
      throw Error("update_config: architecture fields cannot change on an existing model");
    if (cfg.optimizer_kind() != t.optimizer().kind)
      throw Error("update_config: the optimizer kind cannot change mid-training");
    OptimizerState opt = t.optimizer();
    opt.learning_rate = cfg.resolved_learning_rate();
    auto next = std::make_unique<Trainer>(cfg, t.params());
    next->restore(t.params(), std::move(opt), t.rng(), t.epoch());
    model->trainer = std::move(next);
  });
}

agcnn_status agcnn_model_train(agcnn_model* model, const agcnn_dataset* ds, const char* log_path,
                               const char* checkpoint_path) {
  return guarded([&] {
    require(model, "model");
    require(ds, "dataset");
    Trainer& t = *model->trainer;
    const TrainConfig& cfg = t.config();
    if (ds->split.train.empty()) throw DataError("train: empty training split");
    const auto train = prepare_samples(ds->split.train, cfg.sign_mode);
    const auto val = prepare_samples(ds->split.val, cfg.sign_mode);
    std::ofstream log;
    if (log_path) {
      log.open(log_path, std::ios::app);
      if (!log) throw IoError(std::string("cannot open log '") + log_path + "'");
    }
    while (t.epoch() < cfg.epochs) {
      const EpochRecord rec = t.run_epoch(train, val);
      if (log_path) log << rec.to_json() << "\n" << std::flush;
      if (checkpoint_path) save_checkpoint(checkpoint_path, snapshot(t));
    }
  });
}

agcnn_status agcnn_model_evaluate(const agcnn_model* model, const agcnn_dataset* ds,
                                  const char* split, const char* options_json, char** out_jsonl) {
  return guarded([&] {
    require(model, "model");
    require(out_jsonl, "out_jsonl");
    const json o = parse_options(options_json);
    const auto& samples = split_of(ds, split);
    const ModelParams& p = model->trainer->params();
    const bool prob = p.config.mode == OutputMode::probabilistic;
    EvalOptions eo;
    eo.mode = metric_mode_from_string(
        o.value("mode", prob ? std::string("best_of_n") : std::string("deterministic")));
    eo.draws = o.value("draws", eo.draws);
    eo.seed = o.value("seed", eo.seed);
    eo.sign_mode = model->trainer->config().sign_mode;
    eo.granularity = bon_granularity_from_string(o.value("granularity", "per_pedestrian"));
    const bool per_scene = o.value("per_scene", true);
    const auto view = limited(samples, o);
    std::string text = to_json(evaluate_model(p, view, eo), per_scene);
    if (o.value("baselines", true)) {
      text += to_json(evaluate_baseline(Baseline::cvm, view), per_scene);
      text += to_json(evaluate_baseline(Baseline::linear, view), per_scene);
    }
    *out_jsonl = dup_string(text);
  });
}

agcnn_status agcnn_model_predict_csv(const agcnn_model* model, const agcnn_dataset* ds,
                                     const char* split, const char* options_json,
                                     const char* csv_path) {
  return guarded([&] {
    require(model, "model");
    require(csv_path, "csv_path");
    const json o = parse_options(options_json);
    const auto view = limited(split_of(ds, split), o);
    const ModelParams& p = model->trainer->params();
    const bool prob = p.config.mode == OutputMode::probabilistic;
    const std::size_t draws = prob ? o.value("draws", std::size_t{20}) : 0;
    Rng rng(o.value("seed", std::uint64_t{0}));
    const SignMode sign = model->trainer->config().sign_mode;

    std::string out = "scene_id,ped_id,step,sample_id,x,y,mu_x,mu_y,sigma_x,sigma_y,rho\n";
    for (const auto& s : view) {
      const std::string sid = scene_id(s);
      const std::size_t to = s.t_obs();
      const GraphSequence g = build_graph_sequence(s, sign);
      const Tensor origin = s.last_observed();
      GaussianField f;
      Tensor mean_abs;
      if (prob) {
        f = predict_probabilistic(g, p);
        mean_abs = most_likely(f, origin);
      } else {
        mean_abs = relative_to_absolute(predict_deterministic(g, p), origin);
      }
      std::vector<Tensor> samples;
      for (std::size_t d = 0; d < draws; ++d) samples.push_back(sample_trajectory(f, origin, rng));

      for (std::size_t i = 0; i < s.num_peds(); ++i) {
        const std::string head = sid + "," + std::to_string(s.ped_ids[i]) + ",";
        for (std::size_t t = 0; t < to + s.t_pred(); ++t) {
          const Tensor& src = t < to ? s.abs_obs : s.abs_fut;
          const std::size_t k = t < to ? t : t - to;
          out += head + std::to_string(t) + ",-1," + num(src.at({i, k, 0})) + "," +
                 num(src.at({i, k, 1})) + ",,,,,\n";
        }
        for (std::size_t k = 0; k < s.t_pred(); ++k) {
          out += head + std::to_string(to + k) + ",-2," + num(mean_abs.at({i, k, 0})) + "," +
                 num(mean_abs.at({i, k, 1}));
          if (prob)
            out += "," + num(f.mu.at({i, k, 0})) + "," + num(f.mu.at({i, k, 1})) + "," +
                   num(f.sigma.at({i, k, 0})) + "," + num(f.sigma.at({i, k, 1})) + "," +
                   num(f.rho.at({i, k})) + "\n";
          else
            out += ",,,,,\n";
        }
        for (std::size_t d = 0; d < draws; ++d)
          for (std::size_t k = 0; k < s.t_pred(); ++k)
            out += head + std::to_string(to + k) + "," + std::to_string(d) + "," +
                   num(samples[d].at({i, k, 0})) + "," + num(samples[d].at({i, k, 1})) + ",,,,,\n";
      }
    }
    std::ofstream file(csv_path, std::ios::binary | std::ios::trunc);
    if (!file) throw IoError(std::string("cannot open '") + csv_path + "' for writing");
    file << out;
    if (!file) throw IoError(std::string("failed writing '") + csv_path + "'");
  });
}

agcnn_status agcnn_model_benchmark(const agcnn_model* model, const agcnn_dataset* ds,
                                   const char* split, const char* options_json, char** out_json) {
  return guarded([&] {
    require(model, "model");
    require(out_json, "out_json");
    const json o = parse_options(options_json);
    const auto view = limited(split_of(ds, split), o);
    const BenchReport r = benchmark_inference(
        model->trainer->params(), view, o.value("draws", std::size_t{20}),
        o.value("repetitions", std::size_t{20}), model->trainer->config().sign_mode,
        o.value("seed", std::uint64_t{0}));
    *out_json = dup_string(to_json(r));
  });
}

}  // extern "C"
