// Command-line front end over the agcnn C API.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "agcnn/agcnn.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Failure {
  agcnn_status status;
  std::string where;
};

void check(agcnn_status s, const std::string& where) {
  if (s != AGCNN_OK) throw Failure{s, where};
}

struct Dataset {
  agcnn_dataset* h = nullptr;
  ~Dataset() { agcnn_dataset_free(h); }
};

struct Model {
  agcnn_model* h = nullptr;
  ~Model() { agcnn_model_free(h); }
};

struct OwnedString {
  char* s = nullptr;
  ~OwnedString() { agcnn_string_free(s); }
};

// Flags left unset keep the value from the config file (or the library default).
template <class T>
void put(json& j, const char* key, const std::optional<T>& v) {
  if (v) j[key] = *v;
}

struct Options {
  std::string config_path;
  std::string out_dir = "agcnn_out";
  std::string checkpoint;
  std::string split = "test";

  // data
  std::vector<std::string> files;
  std::optional<std::string> column_order;
  std::optional<int> frame_stride;
  std::optional<double> dt;
  std::optional<std::size_t> t_obs, t_pred, window_stride, synthetic_scenes, synthetic_peds;
  std::optional<std::uint64_t> split_seed;
  bool synthetic_cv = false;

  // training
  std::optional<std::string> mode, optimizer, sign_mode, reduction;
  std::optional<std::size_t> epochs, batch_size, lr_step_epochs;
  std::optional<double> lr, alpha, weight_decay, grad_clip, lr_step_factor;
  std::optional<std::uint64_t> seed;
  bool resume = false;

  // eval / predict / bench
  std::optional<std::string> metric_mode, granularity;
  std::optional<std::size_t> draws, repetitions, max_scenes;
  std::optional<std::uint64_t> eval_seed;
  bool no_baselines = false;
};

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file '" + path + "'");
  json j = json::parse(f);
  if (!j.is_object()) throw std::runtime_error("config file must hold a JSON object");
  return j;
}

json section(const json& file, const char* name) {
  return file.contains(name) ? file.at(name) : json::object();
}

json data_config(const Options& o, const json& file) {
  json d = section(file, "data");
  if (!o.files.empty()) d["files"] = o.files;
  put(d, "column_order", o.column_order);
  put(d, "frame_stride", o.frame_stride);
  put(d, "dt", o.dt);
  put(d, "t_obs", o.t_obs);
  put(d, "t_pred", o.t_pred);
  put(d, "window_stride", o.window_stride);
  put(d, "split_seed", o.split_seed);
  if (o.synthetic_scenes || o.synthetic_peds || o.synthetic_cv) {
    json& s = d["synthetic"];
    if (!s.is_object()) s = json::object();
    put(s, "scenes", o.synthetic_scenes);
    put(s, "num_peds", o.synthetic_peds);
    if (o.synthetic_cv) s["constant_velocity"] = true;
  }
  return d;
}

json train_config(const Options& o, const json& file) {
  json t = section(file, "train");
  put(t, "mode", o.mode);
  put(t, "optimizer", o.optimizer);
  put(t, "sign_mode", o.sign_mode);
  put(t, "reduction", o.reduction);
  put(t, "epochs", o.epochs);
  put(t, "batch_size", o.batch_size);
  put(t, "learning_rate", o.lr);
  put(t, "alpha", o.alpha);
  put(t, "weight_decay", o.weight_decay);
  put(t, "grad_clip", o.grad_clip);
  put(t, "lr_step_epochs", o.lr_step_epochs);
  put(t, "lr_step_factor", o.lr_step_factor);
  put(t, "seed", o.seed);
  put(t, "t_obs", o.t_obs);
  put(t, "t_pred", o.t_pred);
  return t;
}

json run_options(const Options& o, const json& file, const char* name) {
  json r = section(file, name);
  put(r, "mode", o.metric_mode);
  put(r, "granularity", o.granularity);
  put(r, "draws", o.draws);
  put(r, "repetitions", o.repetitions);
  put(r, "max_scenes", o.max_scenes);
  put(r, "seed", o.eval_seed);
  if (o.no_baselines) r["baselines"] = false;
  return r;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write '" + p.string() + "'");
  f << text;
  if (!f) throw std::runtime_error("failed writing '" + p.string() + "'");
}

void write_resolved(const fs::path& dir, const std::string& command, json resolved) {
  resolved["command"] = command;
  write_file(dir / (command + "_config.json"), resolved.dump(2) + "\n");
}

void load_dataset(Dataset& ds, const json& data) {
  check(agcnn_dataset_load(data.dump().c_str(), &ds.h), "loading data");
  size_t n[3];
  check(agcnn_dataset_counts(ds.h, n), "counting samples");
  std::cerr << "data: " << n[0] << " train / " << n[1] << " val / " << n[2] << " test windows\n";
}

void load_model(Model& m, const Options& o) {
  if (o.checkpoint.empty()) throw std::runtime_error("--checkpoint is required");
  check(agcnn_model_load(o.checkpoint.c_str(), &m.h), "loading checkpoint");
}

std::string model_config(const Model& m) {
  OwnedString s;
  check(agcnn_model_config(m.h, &s.s), "reading model config");
  return s.s;
}

int cmd_train(const Options& o, const json& file) {
  const fs::path dir(o.out_dir);
  fs::create_directories(dir);
  const json data = data_config(o, file);
  const json train = train_config(o, file);
  Dataset ds;
  load_dataset(ds, data);
  Model m;
  const std::string ckpt = o.checkpoint.empty() ? (dir / "checkpoint.agcnn").string() : o.checkpoint;
  if (o.resume) {
    check(agcnn_model_load(ckpt.c_str(), &m.h), "loading checkpoint to resume");
    check(agcnn_model_update_config(m.h, train.dump().c_str()), "applying config to resumed model");
  } else {
    check(agcnn_model_create(train.dump().c_str(), &m.h), "creating model");
  }
  size_t params = 0;
  check(agcnn_model_param_count(m.h, &params), "counting parameters");
  write_resolved(dir, "train", {{"data", data}, {"train", json::parse(model_config(m))},
                                {"checkpoint", ckpt}, {"param_count", params}});
  const std::string log = (dir / "train_log.jsonl").string();
  if (!o.resume) std::remove(log.c_str());
  std::cerr << "training " << params << " parameters\n";
  check(agcnn_model_train(m.h, ds.h, log.c_str(), ckpt.c_str()), "training");
  // An untrained run still leaves a checkpoint behind.
  check(agcnn_model_save(m.h, ckpt.c_str()), "saving checkpoint");
  std::cout << "checkpoint: " << ckpt << "\nlog: " << log << "\n";
  return 0;
}

int cmd_eval(const Options& o, const json& file) {
  const fs::path dir(o.out_dir);
  fs::create_directories(dir);
  Model m;
  load_model(m, o);
  const json cfg = json::parse(model_config(m));
  json data = data_config(o, file);
  data.emplace("t_obs", cfg["t_obs"]);
  data.emplace("t_pred", cfg["t_pred"]);
  const json opts = run_options(o, file, "eval");
  Dataset ds;
  load_dataset(ds, data);
  OwnedString report;
  check(agcnn_model_evaluate(m.h, ds.h, o.split.c_str(), opts.dump().c_str(), &report.s),
        "evaluating");
  write_resolved(dir, "eval", {{"data", data}, {"model", cfg}, {"checkpoint", o.checkpoint},
                               {"split", o.split}, {"eval", opts}});
  write_file(dir / "metrics.jsonl", report.s);
  std::cout << report.s;
  return 0;
}

int cmd_predict(const Options& o, const json& file) {
  const fs::path dir(o.out_dir);
  fs::create_directories(dir);
  Model m;
  load_model(m, o);
  const json cfg = json::parse(model_config(m));
  json data = data_config(o, file);
  data.emplace("t_obs", cfg["t_obs"]);
  data.emplace("t_pred", cfg["t_pred"]);
  const json opts = run_options(o, file, "predict");
  Dataset ds;
  load_dataset(ds, data);
  const fs::path csv = dir / "predictions.csv";
  check(agcnn_model_predict_csv(m.h, ds.h, o.split.c_str(), opts.dump().c_str(), csv.string().c_str()),
        "predicting");
  write_resolved(dir, "predict", {{"data", data}, {"model", cfg}, {"checkpoint", o.checkpoint},
                                  {"split", o.split}, {"predict", opts}});
  std::cout << "predictions: " << csv.string() << "\n";
  return 0;
}

int cmd_bench(const Options& o, const json& file) {
  const fs::path dir(o.out_dir);
  fs::create_directories(dir);
  Model m;
  load_model(m, o);
  const json cfg = json::parse(model_config(m));
  json data = data_config(o, file);
  data.emplace("t_obs", cfg["t_obs"]);
  data.emplace("t_pred", cfg["t_pred"]);
  const json opts = run_options(o, file, "bench");
  Dataset ds;
  load_dataset(ds, data);
  OwnedString report;
  check(agcnn_model_benchmark(m.h, ds.h, o.split.c_str(), opts.dump().c_str(), &report.s),
        "benchmarking");
  write_resolved(dir, "bench", {{"data", data}, {"model", cfg}, {"checkpoint", o.checkpoint},
                                {"split", o.split}, {"bench", opts}});
  write_file(dir / "bench.json", report.s);
  std::cout << report.s;
  return 0;
}

int cmd_export(const Options& o, const json& file) {
  const fs::path dir(o.out_dir);
  fs::create_directories(dir);
  const json data = data_config(o, file);
  Dataset ds;
  load_dataset(ds, data);
  const fs::path csv = dir / (o.split + "_ground_truth.csv");
  check(agcnn_dataset_export_csv(ds.h, o.split.c_str(), csv.string().c_str()), "exporting");
  write_resolved(dir, "export", {{"data", data}, {"split", o.split}});
  std::cout << "export: " << csv.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-weighted spatio-temporal graph CNN for pedestrian trajectory prediction"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(agcnn_version()));
  Options o;

  auto add_common = [&](CLI::App* c) {
    c->add_option("--config", o.config_path, "JSON config file; flags override its values")
        ->check(CLI::ExistingFile);
    c->add_option("--out", o.out_dir, "output directory")->capture_default_str();
    c->add_option("--data", o.files, "trajectory file (repeatable)");
    c->add_option("--column-order", o.column_order, "frame_ped_x_y | frame_ped_y_x | ped_frame_x_y");
    c->add_option("--frame-stride", o.frame_stride, "frames between sampled steps (0 infers)");
    c->add_option("--dt", o.dt, "seconds per sampled step");
    c->add_option("--t-obs", o.t_obs, "observed steps");
    c->add_option("--t-pred", o.t_pred, "predicted steps");
    c->add_option("--window-stride", o.window_stride, "steps between window starts");
    c->add_option("--split-seed", o.split_seed, "seed of the train/val/test shuffle");
    c->add_option("--synthetic-scenes", o.synthetic_scenes, "use N synthetic crowd scenes");
    c->add_option("--synthetic-peds", o.synthetic_peds, "pedestrians per synthetic scene");
    c->add_flag("--synthetic-cv", o.synthetic_cv, "synthetic pedestrians move at constant velocity");
  };
  auto add_model_io = [&](CLI::App* c, bool with_split) {
    c->add_option("--checkpoint", o.checkpoint, "checkpoint file");
    if (with_split)
      c->add_option("--split", o.split, "train | val | test")->capture_default_str();
    c->add_option("--draws", o.draws, "trajectories sampled per scene");
    c->add_option("--max-scenes", o.max_scenes, "limit the number of scenes (0 = all)");
    c->add_option("--eval-seed", o.eval_seed, "sampling seed");
  };

  auto* train = app.add_subcommand("train", "train a model and write checkpoints and a JSONL log");
  add_common(train);
  train->add_option("--checkpoint", o.checkpoint, "checkpoint path (default <out>/checkpoint.agcnn)");
  train->add_flag("--resume", o.resume, "continue from --checkpoint up to --epochs");
  train->add_option("--mode", o.mode, "probabilistic | deterministic");
  train->add_option("--epochs", o.epochs, "training epochs");
  train->add_option("--batch-size", o.batch_size, "samples accumulated per optimizer step");
  train->add_option("--optimizer", o.optimizer, "default | adam | sgd");
  train->add_option("--lr", o.lr, "learning rate (0 = per-mode default)");
  train->add_option("--alpha", o.alpha, "weight of the all-steps term in the displacement loss");
  train->add_option("--weight-decay", o.weight_decay, "L2 weight decay");
  train->add_option("--grad-clip", o.grad_clip, "global gradient norm clip (0 = off)");
  train->add_option("--lr-step-epochs", o.lr_step_epochs, "decay the learning rate every N epochs (0 = off)");
  train->add_option("--lr-step-factor", o.lr_step_factor, "multiplier applied at each decay step");
  train->add_option("--reduction", o.reduction, "per-sample loss reduction: mean | sum");
  train->add_option("--sign-mode", o.sign_mode, "attention sign: negated | verbatim");
  train->add_option("--seed", o.seed, "initialization and shuffling seed");

  auto* eval = app.add_subcommand("eval", "write a metrics report (JSON lines)");
  add_common(eval);
  add_model_io(eval, true);
  eval->add_option("--metric-mode", o.metric_mode, "best_of_n | most_likely | deterministic");
  eval->add_option("--granularity", o.granularity, "best-of-n minimum: per_pedestrian | per_scene");
  eval->add_flag("--no-baselines", o.no_baselines, "skip the CVM and linear baselines");

  auto* predict = app.add_subcommand("predict", "write predicted and sampled trajectories as CSV");
  add_common(predict);
  add_model_io(predict, true);

  auto* bench = app.add_subcommand("bench", "time inference (graph construction reported separately)");
  add_common(bench);
  add_model_io(bench, true);
  bench->add_option("--repetitions", o.repetitions, "timed passes over the scenes");

  auto* exp = app.add_subcommand("export", "write ground-truth windows of a split as CSV");
  add_common(exp);
  exp->add_option("--split", o.split, "train | val | test")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    const json file = load_config_file(o.config_path);
    if (*train) return cmd_train(o, file);
    if (*eval) return cmd_eval(o, file);
    if (*predict) return cmd_predict(o, file);
    if (*bench) return cmd_bench(o, file);
    if (*exp) return cmd_export(o, file);
  } catch (const Failure& f) {
    std::cerr << "error while " << f.where << ": " << agcnn_status_string(f.status) << ": "
              << agcnn_last_error() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
