#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "agcnn/error.hpp"
#include "agcnn/training.hpp"
#include "support.hpp"

using namespace agcnn;

namespace {

std::vector<SequenceSample> toy_set(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<SequenceSample> out;
  for (std::size_t k = 0; k < count; ++k) out.push_back(test::random_sample(1 + k % 4, 4, 6, rng, 0.2));
  return out;
}

TrainConfig toy_config(OutputMode mode) {
  TrainConfig c;
  c.t_obs = 4;
  c.t_pred = 6;
  c.mode = mode;
  c.epochs = 3;
  c.batch_size = 3;
  c.grad_clip = 5.0;
  return c;
}

bool same_params(const ModelParams& a, const ModelParams& b) {
  if (a.tensors.size() != b.tensors.size()) return false;
  for (std::size_t i = 0; i < a.tensors.size(); ++i)
    if (a.tensors[i].name != b.tensors[i].name || !(a.tensors[i].value == b.tensors[i].value)) return false;
  return true;
}

Gradients filled(const ModelParams& p, double v) {
  Gradients g;
  for (const auto& t : p.tensors) g.emplace_back(t.value.shape(), v);
  return g;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("agcnn_test_" + name)).string();
}

}  // namespace

TEST_CASE("sgd step") {
  ModelParams p;
  p.tensors.push_back({"w", Tensor::from({1}, {1.0})});
  OptimizerState s = OptimizerState::make(OptimizerKind::sgd, 0.01, p);
  optimizer_step(p, {Tensor::from({1}, {2.0})}, s);
  CHECK(p.tensors[0].value[0] == doctest::Approx(0.98).epsilon(1e-15));
  CHECK(s.step == 1);
  CHECK(s.m.empty());
}

TEST_CASE("the first adam step moves each parameter by about the learning rate") {
  ModelParams p = init_params(ModelConfig{}, 1);
  const ModelParams before = p;
  std::mt19937_64 rng(1);
  Gradients g;
  for (const auto& t : p.tensors) g.push_back(test::random_tensor(t.value.shape(), rng, 0.1, 2.0));
  OptimizerState s = OptimizerState::make(OptimizerKind::adam, 0.0015, p);
  optimizer_step(p, g, s);
  for (std::size_t i = 0; i < p.tensors.size(); ++i)
    for (std::size_t j = 0; j < p.tensors[i].value.size(); ++j) {
      const double delta = before.tensors[i].value[j] - p.tensors[i].value[j];
      CHECK(std::abs(delta - 0.0015) < 1e-9);
    }
}

TEST_CASE("zero gradients leave parameters unchanged") {
  for (auto kind : {OptimizerKind::sgd, OptimizerKind::adam}) {
    ModelParams p = init_params(ModelConfig{}, 2);
    const ModelParams before = p;
    OptimizerState s = OptimizerState::make(kind, 0.01, p);
    for (int i = 0; i < 3; ++i) optimizer_step(p, filled(p, 0.0), s);
    CHECK(same_params(p, before));
  }
}

TEST_CASE("a non-finite gradient aborts the step without touching state") {
  ModelParams p = init_params(ModelConfig{}, 3);
  const ModelParams before = p;
  OptimizerState s = OptimizerState::make(OptimizerKind::adam, 0.01, p);
  Gradients g = filled(p, 0.5);
  g.back()[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(optimizer_step(p, g, s), NumericError);
  CHECK(same_params(p, before));
  CHECK(s.step == 0);
  CHECK(test::max_abs(s.m[0]) == 0.0);

  Gradients wrong = filled(p, 0.5);
  wrong.pop_back();
  CHECK_THROWS_AS(optimizer_step(p, wrong, s), ShapeError);
}

TEST_CASE("train config defaults, validation and json round trip") {
  TrainConfig c;
  CHECK(c.epochs == 150);
  CHECK(c.batch_size == 128);
  CHECK(c.optimizer_kind() == OptimizerKind::sgd);
  CHECK(c.resolved_learning_rate() == 0.01);
  c.mode = OutputMode::deterministic;
  CHECK(c.optimizer_kind() == OptimizerKind::adam);
  CHECK(c.resolved_learning_rate() == 0.0015);
  c.learning_rate = 0.003;
  c.alpha = 0.25;
  c.sign_mode = SignMode::verbatim;
  const TrainConfig back = train_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));

  CHECK_THROWS_AS(train_config_from_json(R"({"epochz": 3})"), Error);
  CHECK_THROWS_AS(train_config_from_json("{not json"), Error);
  TrainConfig bad;
  bad.alpha = 1.5;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = {};
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  CHECK(train_config_from_json(R"({"epochs": 7})").epochs == 7);
  bad = {};
  bad.lr_step_factor = 0.0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("step decay schedule") {
  TrainConfig c;
  CHECK(c.lr_step_epochs == 0);
  CHECK(c.learning_rate_at(1000) == 0.01);
  c.lr_step_epochs = 10;
  c.lr_step_factor = 0.5;
  CHECK(c.learning_rate_at(0) == 0.01);
  CHECK(c.learning_rate_at(9) == 0.01);
  CHECK(c.learning_rate_at(10) == 0.005);
  CHECK(c.learning_rate_at(25) == 0.0025);
  CHECK(train_config_from_json(to_json(c)).lr_step_epochs == 10);

  TrainConfig cfg = toy_config(OutputMode::deterministic);
  cfg.lr_step_epochs = 2;
  cfg.lr_step_factor = 0.1;
  const auto prepared = prepare_samples(toy_set(4, 12), cfg.sign_mode);
  Trainer t(cfg);
  t.run_epoch(prepared);
  CHECK(t.optimizer().learning_rate == 0.0015);
  t.run_epoch(prepared);
  t.run_epoch(prepared);
  CHECK(t.optimizer().learning_rate == doctest::Approx(0.00015).epsilon(1e-15));
}

TEST_CASE("accumulated gradients equal the gradient of the jointly summed loss") {
  for (auto mode : {OutputMode::probabilistic, OutputMode::deterministic}) {
    const TrainConfig cfg = toy_config(mode);
    const ModelParams params = init_params(cfg.model_config(), 4);
    const auto samples = toy_set(6, 4);
    const auto prepared = prepare_samples(samples, cfg.sign_mode);
    const std::vector<std::size_t> order{4, 1, 5, 0};
    const BatchGradient acc = accumulate_gradients(params, prepared, order, cfg);

    Tape tape;
    const BoundParams b = bind(tape, params);
    Var total = sample_loss(tape, b, prepared[order[0]], cfg);
    for (std::size_t k = 1; k < order.size(); ++k) total = add(total, sample_loss(tape, b, prepared[order[k]], cfg));
    const Gradients joint = tape.backward(total, params.shapes());

    CHECK(acc.loss == doctest::Approx(total.value().item()).epsilon(1e-12));
    for (std::size_t i = 0; i < joint.size(); ++i)
      for (std::size_t j = 0; j < joint[i].size(); ++j) CHECK(std::abs(acc.grads[i][j] - joint[i][j]) < 1e-10);
  }
}

TEST_CASE("zero epochs return the initialization") {
  TrainConfig cfg = toy_config(OutputMode::probabilistic);
  cfg.epochs = 0;
  const auto r = train(toy_set(4, 5), {}, cfg);
  CHECK(same_params(r.params, init_params(cfg.model_config(), cfg.seed)));
  CHECK(r.log.empty());
}

TEST_CASE("training is bitwise reproducible for a fixed seed") {
  for (auto mode : {OutputMode::probabilistic, OutputMode::deterministic}) {
    const TrainConfig cfg = toy_config(mode);
    const auto data = toy_set(7, 6);
    const auto a = train(data, data, cfg), b = train(data, data, cfg);
    CHECK(same_params(a.params, b.params));
    REQUIRE(a.log.size() == 3);
    CHECK(a.log.back().loss == b.log.back().loss);
    CHECK(a.log.back().has_val);
    TrainConfig other = cfg;
    other.seed = 1;
    CHECK_FALSE(same_params(a.params, train(data, {}, other).params));
  }
}

TEST_CASE("a trainer rejects params of another architecture and empty data") {
  TrainConfig cfg = toy_config(OutputMode::probabilistic);
  ModelConfig other = cfg.model_config();
  other.hidden = 7;
  CHECK_THROWS_AS(Trainer(cfg, init_params(other, 0)), Error);
  Trainer t(cfg);
  CHECK_THROWS_AS(t.run_epoch({}), Error);
}

TEST_CASE("divergence restores the state from the start of the epoch") {
  TrainConfig cfg = toy_config(OutputMode::probabilistic);
  cfg.optimizer = "sgd";
  cfg.learning_rate = 1e6;
  cfg.batch_size = 1;
  cfg.grad_clip = 0.0;
  const auto prepared = prepare_samples(toy_set(6, 7), cfg.sign_mode);
  Trainer t(cfg);
  const Checkpoint before = snapshot(t);
  try {
    t.run_epoch(prepared);
    FAIL("expected divergence");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("epoch 1") != std::string::npos);
  }
  CHECK(same_params(t.params(), before.params));
  CHECK(t.rng() == before.rng);
  CHECK(t.optimizer().step == before.optimizer.step);
  CHECK(t.epoch() == 0);
}

TEST_CASE("the smoothed overfit loss decreases") {
  TrainConfig cfg = toy_config(OutputMode::deterministic);
  cfg.epochs = 150;
  cfg.batch_size = 5;
  cfg.grad_clip = 0.0;
  cfg.learning_rate = 0.001;
  const auto r = train(toy_set(5, 8), {}, cfg);
  std::vector<double> windows;
  for (std::size_t w = 0; w + 10 <= r.log.size(); w += 10) {
    double s = 0.0;
    for (std::size_t k = w; k < w + 10; ++k) s += r.log[k].loss;
    windows.push_back(s / 10);
  }
  for (std::size_t k = 1; k < windows.size(); ++k) CHECK(windows[k] < windows[k - 1]);
}

TEST_CASE("checkpoint round trip is lossless and idempotent") {
  TrainConfig cfg = toy_config(OutputMode::deterministic);
  Trainer t(cfg);
  const auto prepared = prepare_samples(toy_set(5, 9), cfg.sign_mode);
  t.run_epoch(prepared);
  t.run_epoch(prepared);

  const std::string path = temp_path("roundtrip.agcnn");
  save_checkpoint(path, snapshot(t));
  const Checkpoint loaded = load_checkpoint(path);
  CHECK(same_params(loaded.params, t.params()));
  CHECK(loaded.epoch == 2);
  CHECK(loaded.rng == t.rng());
  CHECK(loaded.optimizer.step == t.optimizer().step);
  CHECK(loaded.optimizer.m == t.optimizer().m);
  CHECK(loaded.optimizer.v == t.optimizer().v);
  CHECK(to_json(loaded.config) == to_json(cfg));

  const std::string second = temp_path("roundtrip2.agcnn");
  save_checkpoint(second, loaded);
  auto slurp = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  CHECK(slurp(path) == slurp(second));
  CHECK_FALSE(std::filesystem::exists(path + ".tmp"));
  std::filesystem::remove(path);
  std::filesystem::remove(second);
}

TEST_CASE("corrupted checkpoints are rejected") {
  const TrainConfig cfg = toy_config(OutputMode::probabilistic);
  const std::string good = serialize_checkpoint(snapshot(Trainer(cfg)));
  CHECK_NOTHROW(deserialize_checkpoint(good));

  SUBCASE("shape header") {
    std::string bad = good;
    const auto pos = bad.find("\"shape\":[2,5]");
    REQUIRE(pos != std::string::npos);
    bad[pos + 9] = '3';
    CHECK_THROWS_AS(deserialize_checkpoint(bad), FormatError);
  }
  SUBCASE("magic") {
    std::string bad = good;
    bad[0] = 'X';
    CHECK_THROWS_AS(deserialize_checkpoint(bad), FormatError);
  }
  SUBCASE("version") {
    std::string bad = good;
    bad[8] = static_cast<char>(kCheckpointVersion + 1);
    CHECK_THROWS_AS(deserialize_checkpoint(bad), FormatError);
  }
  SUBCASE("truncated payload") {
    CHECK_THROWS_AS(deserialize_checkpoint(good.substr(0, good.size() - 8)), FormatError);
    CHECK_THROWS_AS(deserialize_checkpoint(good.substr(0, 10)), FormatError);
  }
  SUBCASE("trailing bytes") { CHECK_THROWS_AS(deserialize_checkpoint(good + "x"), FormatError); }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_checkpoint(temp_path("absent.agcnn")), IoError); }
}

TEST_CASE("resuming from a checkpoint matches an uninterrupted run") {
  for (auto mode : {OutputMode::probabilistic, OutputMode::deterministic}) {
    TrainConfig cfg = toy_config(mode);
    cfg.epochs = 20;
    cfg.batch_size = 2;
    cfg.lr_step_epochs = 7;
    cfg.lr_step_factor = 0.5;
    const auto prepared = prepare_samples(toy_set(7, 10), cfg.sign_mode);

    Trainer straight(cfg);
    for (int e = 0; e < 20; ++e) straight.run_epoch(prepared);

    Trainer first(cfg);
    for (int e = 0; e < 10; ++e) first.run_epoch(prepared);
    const Checkpoint ck = deserialize_checkpoint(serialize_checkpoint(snapshot(first)));
    Trainer resumed(ck.config, ck.params);
    resumed.restore(ck.params, ck.optimizer, ck.rng, ck.epoch);
    for (int e = 0; e < 10; ++e) resumed.run_epoch(prepared);

    CHECK(resumed.epoch() == 20);
    CHECK(same_params(resumed.params(), straight.params()));
  }
}

TEST_CASE("gradient clipping bounds the global step norm") {
  TrainConfig cfg = toy_config(OutputMode::deterministic);
  cfg.optimizer = "sgd";
  cfg.learning_rate = 1.0;
  cfg.grad_clip = 0.05;
  cfg.batch_size = 6;
  const auto prepared = prepare_samples(toy_set(6, 11), cfg.sign_mode);
  Trainer t(cfg);
  const ModelParams before = t.params();
  t.run_epoch(prepared);
  double norm2 = 0.0;
  for (std::size_t i = 0; i < before.tensors.size(); ++i)
    for (std::size_t j = 0; j < before.tensors[i].value.size(); ++j) {
      const double d = t.params().tensors[i].value[j] - before.tensors[i].value[j];
      norm2 += d * d;
    }
  CHECK(std::sqrt(norm2) == doctest::Approx(0.05).epsilon(1e-9));
}
