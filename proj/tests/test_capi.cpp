#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>
#include <sstream>
#include <string>
#include <unistd.h>

#include "agcnn/agcnn.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* kData = R"({"synthetic": {"scenes": 4, "num_peds": 3, "num_steps": 24, "seed": 5},
                        "t_obs": 4, "t_pred": 6, "split": [0.5, 0.25, 0.25], "split_seed": 1})";

const char* kTrain = R"({"t_obs": 4, "t_pred": 6, "epochs": 2, "batch_size": 4, "grad_clip": 5})";

std::string take(char* s) {
  std::string out(s);
  agcnn_string_free(s);
  return out;
}

fs::path scratch(const std::string& name) {
  return fs::temp_directory_path() / ("agcnn_capi_" + std::to_string(::getpid()) + "_" + name);
}

struct Fixture {
  agcnn_dataset* ds = nullptr;
  agcnn_model* model = nullptr;
  Fixture() {
    REQUIRE(agcnn_dataset_load(kData, &ds) == AGCNN_OK);
    REQUIRE(agcnn_model_create(kTrain, &model) == AGCNN_OK);
  }
  ~Fixture() {
    agcnn_model_free(model);
    agcnn_dataset_free(ds);
  }
};

}  // namespace

TEST_CASE("library identifies itself") {
  CHECK(std::string(agcnn_version()).size() > 0);
  CHECK(std::string(agcnn_status_string(AGCNN_ERR_FORMAT)).size() > 0);
  agcnn_dataset_free(nullptr);
  agcnn_model_free(nullptr);
  agcnn_string_free(nullptr);
}

TEST_CASE("dataset loading and counts") {
  Fixture fx;
  size_t counts[3] = {0, 0, 0};
  REQUIRE(agcnn_dataset_counts(fx.ds, counts) == AGCNN_OK);
  // 4 scenes of 24 steps give 15 windows each.
  CHECK(counts[0] + counts[1] + counts[2] == 60);
  CHECK(counts[0] == 30);

  const fs::path csv = scratch("gt.csv");
  REQUIRE(agcnn_dataset_export_csv(fx.ds, "val", csv.c_str()) == AGCNN_OK);
  std::ifstream in(csv);
  std::string header;
  std::getline(in, header);
  CHECK(header.find("ped_id") != std::string::npos);
  fs::remove(csv);
  CHECK(agcnn_dataset_export_csv(fx.ds, "holdout", csv.c_str()) == AGCNN_ERR_INVALID_ARGUMENT);
}

TEST_CASE("errors map to status codes and a message") {
  agcnn_dataset* ds = nullptr;
  CHECK(agcnn_dataset_load("{not json", &ds) == AGCNN_ERR_INVALID_ARGUMENT);
  CHECK(ds == nullptr);
  CHECK(std::string(agcnn_last_error()).size() > 0);

  CHECK(agcnn_dataset_load(R"({"files": ["/nonexistent/eth.txt"]})", &ds) == AGCNN_ERR_IO);
  CHECK(std::string(agcnn_last_error()).find("/nonexistent/eth.txt") != std::string::npos);

  CHECK(agcnn_dataset_load(nullptr, &ds) == AGCNN_ERR_INVALID_ARGUMENT);
  CHECK(agcnn_dataset_counts(nullptr, nullptr) == AGCNN_ERR_INVALID_ARGUMENT);

  agcnn_model* m = nullptr;
  CHECK(agcnn_model_create(R"({"epochs": 1, "colour": "blue"})", &m) == AGCNN_ERR_INVALID_ARGUMENT);
  CHECK(std::string(agcnn_last_error()).find("colour") != std::string::npos);
  CHECK(agcnn_model_load("/nonexistent/model.agcnn", &m) == AGCNN_ERR_IO);

  const fs::path junk = scratch("junk.agcnn");
  std::ofstream(junk) << "definitely not a checkpoint";
  CHECK(agcnn_model_load(junk.c_str(), &m) == AGCNN_ERR_FORMAT);
  fs::remove(junk);
  CHECK(m == nullptr);
}

TEST_CASE("model lifecycle through the C interface") {
  Fixture fx;
  size_t params = 0, epoch = 99;
  REQUIRE(agcnn_model_param_count(fx.model, &params) == AGCNN_OK);
  // Temporal layers scale with the 4/6 horizons used here.
  CHECK(params == 1688);
  REQUIRE(agcnn_model_epoch(fx.model, &epoch) == AGCNN_OK);
  CHECK(epoch == 0);

  char* cfg = nullptr;
  REQUIRE(agcnn_model_config(fx.model, &cfg) == AGCNN_OK);
  const json c = json::parse(take(cfg));
  CHECK(c["epochs"] == 2);
  CHECK(c["mode"] == "probabilistic");

  const fs::path log = scratch("log.jsonl"), ckpt = scratch("model.agcnn");
  REQUIRE(agcnn_model_train(fx.model, fx.ds, log.c_str(), ckpt.c_str()) == AGCNN_OK);
  REQUIRE(agcnn_model_epoch(fx.model, &epoch) == AGCNN_OK);
  CHECK(epoch == 2);
  std::ifstream lines(log);
  std::string line;
  int records = 0;
  while (std::getline(lines, line)) {
    const json r = json::parse(line);
    CHECK(r.contains("loss"));
    ++records;
  }
  CHECK(records == 2);

  agcnn_model* loaded = nullptr;
  REQUIRE(agcnn_model_load(ckpt.c_str(), &loaded) == AGCNN_OK);
  const fs::path again = scratch("again.agcnn");
  REQUIRE(agcnn_model_save(loaded, again.c_str()) == AGCNN_OK);
  auto bytes = [](const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
  };
  CHECK(bytes(ckpt) == bytes(again));

  CHECK(agcnn_model_update_config(loaded, R"({"hidden": 7})") != AGCNN_OK);
  REQUIRE(agcnn_model_update_config(loaded, R"({"epochs": 3})") == AGCNN_OK);
  REQUIRE(agcnn_model_train(loaded, fx.ds, nullptr, nullptr) == AGCNN_OK);
  REQUIRE(agcnn_model_epoch(loaded, &epoch) == AGCNN_OK);
  CHECK(epoch == 3);
  agcnn_model_free(loaded);
  for (const auto& p : {log, ckpt, again}) fs::remove(p);
}

TEST_CASE("evaluation, prediction and benchmark outputs") {
  Fixture fx;
  char* out = nullptr;
  REQUIRE(agcnn_model_evaluate(fx.model, fx.ds, "test", R"({"draws": 5, "seed": 3})", &out) ==
          AGCNN_OK);
  std::istringstream report(take(out));
  std::string line;
  std::map<std::string, json> aggregates;
  while (std::getline(report, line)) {
    const json r = json::parse(line);
    if (r["record"] == "aggregate") aggregates[r["predictor"].get<std::string>()] = r;
  }
  REQUIRE(aggregates.count("model") == 1);
  CHECK(aggregates["model"]["draws"] == 5);
  CHECK(aggregates["model"].contains("ade"));
  CHECK(aggregates["model"].contains("fde"));
  CHECK(aggregates.count("cvm") == 1);
  CHECK(aggregates.count("linear") == 1);

  CHECK(agcnn_model_evaluate(fx.model, fx.ds, "test", R"({"mode": "deterministic"})", &out) ==
        AGCNN_ERR_INVALID_ARGUMENT);

  const fs::path csv = scratch("pred.csv");
  REQUIRE(agcnn_model_predict_csv(fx.model, fx.ds, "test", R"({"draws": 20, "max_scenes": 2})",
                                  csv.c_str()) == AGCNN_OK);
  std::ifstream in(csv);
  std::getline(in, line);
  CHECK(line == "scene_id,ped_id,step,sample_id,x,y,mu_x,mu_y,sigma_x,sigma_y,rho");
  std::map<std::string, std::map<int, int>> rows;  // scene/ped -> sample_id -> rows
  while (std::getline(in, line)) {
    std::istringstream cells(line);
    std::string scene, ped, step, sample;
    std::getline(cells, scene, ',');
    std::getline(cells, ped, ',');
    std::getline(cells, step, ',');
    std::getline(cells, sample, ',');
    ++rows[scene + "/" + ped][std::stoi(sample)];
  }
  fs::remove(csv);
  REQUIRE(!rows.empty());
  for (const auto& [key, by_sample] : rows) {
    CAPTURE(key);
    int sampled = 0;
    for (const auto& [id, count] : by_sample) {
      CHECK(count == (id == -1 ? 10 : 6));
      if (id >= 0) ++sampled;
    }
    CHECK(sampled == 20);
    CHECK(by_sample.count(-1) == 1);
    CHECK(by_sample.count(-2) == 1);
  }

  REQUIRE(agcnn_model_benchmark(fx.model, fx.ds, "test", R"({"draws": 20, "repetitions": 3})",
                                &out) == AGCNN_OK);
  const json bench = json::parse(take(out));
  CHECK(bench["forward_time_ms"].get<double>() > 0.0);
  CHECK(bench["graph_build_time_ms"].get<double>() > 0.0);
  CHECK(bench["graph_time_included_in_forward"] == false);
  CHECK(bench["param_count"] == 1688);
}
