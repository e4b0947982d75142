#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "agcnn/error.hpp"
#include "agcnn/graph.hpp"
#include "agcnn/model.hpp"
#include "support.hpp"

using namespace agcnn;

namespace {

ModelConfig small_config(OutputMode mode = OutputMode::probabilistic) {
  ModelConfig c;
  c.t_obs = 4;
  c.t_pred = 6;
  c.mode = mode;
  return c;
}

Tensor run_stgcnn(const GraphSequence& g, const ModelParams& params) {
  Tape tape(false);
  return stgcnn_forward(tape, g, bind(tape, params)).value();
}

Tensor run_model(const GraphSequence& g, const ModelParams& params) {
  Tape tape(false);
  return model_forward(tape, g, bind(tape, params)).value();
}

// Sample on a 1/256 grid so differences and translations are exact.
SequenceSample grid_sample(std::size_t n, std::size_t t_obs, std::size_t t_pred, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> start(-1024, 1024), step(-100, 100);
  Tensor pos({n, t_obs + t_pred, 2});
  std::vector<std::int64_t> ids(n);
  std::iota(ids.begin(), ids.end(), 1);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 2; ++c) {
      int v = start(rng);
      for (std::size_t t = 0; t < t_obs + t_pred; ++t, v += step(rng)) pos.at({i, t, c}) = v / 256.0;
    }
  return make_sample(ids, pos, t_obs);
}

}  // namespace

TEST_CASE("encoder identity configuration reproduces its input features") {
  ModelConfig c = small_config();
  c.hidden = 2;
  c.encoder_residual = false;
  ModelParams p = init_params(c, 1);
  p.get("stgcnn.weight") = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor k({2, 2, 3});
  k.at({0, 0, 1}) = k.at({1, 1, 1}) = 1.0;
  p.get("stgcnn.temporal") = k;
  p.get("stgcnn.slope") = Tensor::scalar(1.0);

  std::mt19937_64 rng(2);
  GraphSequence g = build_graph_sequence(test::random_sample(1, 4, 6, rng));
  const Tensor out = run_stgcnn(g, p);
  REQUIRE(out.shape() == Shape{2, 4, 1});
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t f = 0; f < 2; ++f) CHECK(out.at({f, t, 0}) == g.node_feats.at({t, 0, f}));
}

TEST_CASE("zero displacements propagate to a zero encoding") {
  ModelParams p = init_params(small_config(), 3);
  std::mt19937_64 rng(3);
  GraphSequence g = build_graph_sequence(test::random_sample(4, 4, 6, rng));
  g.node_feats.fill(0.0);
  CHECK(test::max_abs(run_stgcnn(g, p)) == 0.0);
}

TEST_CASE("a node sees its neighbours only through off-diagonal adjacency") {
  ModelConfig c = small_config();
  c.encoder_residual = false;
  ModelParams p = init_params(c, 4);
  std::mt19937_64 rng(4);
  GraphSequence g = build_graph_sequence(test::random_sample(3, 4, 6, rng));
  GraphSequence poked = g;
  for (std::size_t t = 0; t < 4; ++t) poked.node_feats.at({t, 2, 0}) += 0.5;

  auto node0 = [](const Tensor& out) {
    std::vector<double> v;
    for (std::size_t f = 0; f < out.dim(0); ++f)
      for (std::size_t t = 0; t < out.dim(1); ++t) v.push_back(out.at({f, t, 0}));
    return v;
  };
  CHECK(node0(run_stgcnn(g, p)) != node0(run_stgcnn(poked, p)));

  for (auto* graph : {&g, &poked}) {
    graph->adj_norm.fill(0.0);
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t i = 0; i < 3; ++i) graph->adj_norm.at({t, i, i}) = 1.0;
  }
  CHECK(node0(run_stgcnn(g, p)) == node0(run_stgcnn(poked, p)));
}

TEST_CASE("decoder with no residual layers equals a deeper decoder whose residual layers are inert") {
  ModelConfig shallow_cfg = small_config();
  shallow_cfg.txp_residual = 0;
  ModelConfig deep_cfg = small_config();
  deep_cfg.txp_residual = 4;
  ModelParams shallow = init_params(shallow_cfg, 5);
  ModelParams deep = init_params(deep_cfg, 6);
  for (const auto& t : shallow.tensors) deep.get(t.name) = t.value;
  for (std::size_t l = 1; l <= 4; ++l) {
    deep.get("txp." + std::to_string(l) + ".weight").fill(0.0);
    deep.get("txp." + std::to_string(l) + ".slope") = Tensor::scalar(1.0);
  }
  CHECK(parameter_census(shallow) < parameter_census(deep));

  std::mt19937_64 rng(5);
  GraphSequence g = build_graph_sequence(test::random_sample(3, 4, 6, rng));
  CHECK(run_model(g, shallow) == run_model(g, deep));
}

TEST_CASE("a zero-weight residual layer passes its input through") {
  ModelParams p = init_params(small_config(), 7);
  p.get("txp.4.weight").fill(0.0);
  p.get("txp.4.slope") = Tensor::scalar(1.0);
  ModelConfig trimmed_cfg = p.config;
  trimmed_cfg.txp_residual = 3;
  ModelParams trimmed = init_params(trimmed_cfg, 0);
  for (auto& t : trimmed.tensors) t.value = p.get(t.name);

  std::mt19937_64 rng(7);
  GraphSequence g = build_graph_sequence(test::random_sample(2, 4, 6, rng));
  CHECK(run_model(g, p) == run_model(g, trimmed));
}

TEST_CASE("output shapes do not depend on the crowd size") {
  ModelParams p = init_params(small_config(), 8);
  std::mt19937_64 rng(8);
  for (std::size_t n = 1; n <= 10; ++n) {
    CAPTURE(n);
    GraphSequence g = build_graph_sequence(test::random_sample(n, 4, 6, rng));
    Tape tape(false);
    BoundParams b = bind(tape, p);
    Var h = stgcnn_forward(tape, g, b);
    CHECK(h.shape() == Shape{5, 4, n});
    Tensor a({n, n});
    std::copy_n(g.adj_norm.data().begin() + 3 * n * n, n * n, a.data().begin());
    CHECK(txpcnn_forward(tape, h, a, b).shape() == Shape{6, 5, n});
    CHECK(model_forward(tape, g, b).shape() == Shape{n, 6, 5});
  }
}

TEST_CASE("mismatched inputs are shape errors") {
  ModelParams p = init_params(small_config(), 9);
  std::mt19937_64 rng(9);
  GraphSequence wrong_len = build_graph_sequence(test::random_sample(2, 5, 6, rng));
  CHECK_THROWS_AS(run_model(wrong_len, p), ShapeError);
  GraphSequence g = build_graph_sequence(test::random_sample(2, 4, 6, rng));
  g.node_feats = Tensor({4, 2, 3});
  CHECK_THROWS_AS(run_stgcnn(g, p), ShapeError);
}

TEST_CASE("link functions map a zero head to the standard bivariate normal") {
  ModelParams p = init_params(small_config(), 10);
  p.get("head.weight").fill(0.0);
  std::mt19937_64 rng(10);
  GaussianField f = predict_probabilistic(build_graph_sequence(test::random_sample(3, 4, 6, rng)), p);
  CHECK(test::max_abs(f.mu) == 0.0);
  CHECK(std::all_of(f.sigma.storage().begin(), f.sigma.storage().end(), [](double s) { return s == 1.0; }));
  CHECK(test::max_abs(f.rho) == 0.0);
  CHECK(f.rho.shape() == Shape{3, 6});
}

TEST_CASE("random parameters give valid finite outputs") {
  std::mt19937_64 rng(11);
  for (auto mode : {OutputMode::probabilistic, OutputMode::deterministic}) {
    ModelParams p = init_params(small_config(mode), 11);
    for (auto& t : p.tensors) t.value = test::random_tensor(t.value.shape(), rng);
    GraphSequence g = build_graph_sequence(test::random_sample(5, 4, 6, rng));
    if (mode == OutputMode::probabilistic) {
      GaussianField f = predict_probabilistic(g, p);
      CHECK(f.mu.all_finite());
      for (double s : f.sigma.storage()) CHECK(s > 0.0);
      for (double r : f.rho.storage()) CHECK(std::abs(r) < 1.0);
    } else {
      CHECK(predict_deterministic(g, p).all_finite());
    }
  }
}

TEST_CASE("deterministic head with zero output holds the last observed position") {
  ModelParams p = init_params(small_config(OutputMode::deterministic), 12);
  p.get("head.weight").fill(0.0);
  std::mt19937_64 rng(12);
  SequenceSample s = test::random_sample(3, 4, 6, rng);
  Tensor abs = relative_to_absolute(predict_deterministic(build_graph_sequence(s), p), s.last_observed());
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t t = 0; t < 6; ++t)
      for (std::size_t c = 0; c < 2; ++c) CHECK(abs.at({i, t, c}) == s.abs_obs.at({i, 3, c}));
}

TEST_CASE("deterministic output equals the probabilistic mean when weights are shared") {
  ModelParams prob = init_params(small_config(), 13);
  ModelParams det = init_params(small_config(OutputMode::deterministic), 14);
  for (auto& t : det.tensors)
    if (t.name.rfind("head.", 0) != 0) t.value = prob.get(t.name);
  const Tensor& hw = prob.get("head.weight");
  for (std::size_t f = 0; f < 5; ++f)
    for (std::size_t c = 0; c < 2; ++c) det.get("head.weight").at({f, c}) = hw.at({f, c});
  prob.get("head.bias").at({0}) = 0.3;
  det.get("head.bias").at({0}) = 0.3;

  std::mt19937_64 rng(13);
  GraphSequence g = build_graph_sequence(test::random_sample(4, 4, 6, rng));
  CHECK(predict_deterministic(g, det) == predict_probabilistic(g, prob).mu);
  CHECK_THROWS_AS(predict_deterministic(g, prob), Error);
  CHECK_THROWS_AS(predict_probabilistic(g, det), Error);
}

TEST_CASE("parameter census") {
  const ModelParams def = init_params(ModelConfig{}, 0);
  const std::size_t n = parameter_census(def);
  CHECK(n >= 6000);
  CHECK(n <= 9000);
  CHECK(n == 6254);
  ModelConfig det;
  det.mode = OutputMode::deterministic;
  CHECK(parameter_census(init_params(det, 0)) == 6236);
  ModelConfig wide;
  wide.hidden = 10;
  CHECK(parameter_census(init_params(wide, 0)) > n);
  CHECK(parameter_census(ModelParams{}) == 0);
  ModelConfig even;
  even.kernel = 2;
  CHECK_THROWS_AS(init_params(even, 0), Error);
}

TEST_CASE("initialization is reproducible and uses the configured ranges") {
  CHECK(init_params(ModelConfig{}, 3).tensors[0].value == init_params(ModelConfig{}, 3).tensors[0].value);
  const ModelParams p = init_params(ModelConfig{}, 3);
  CHECK(p.get("stgcnn.slope").item() == 0.25);
  CHECK(test::max_abs(p.get("head.bias")) == 0.0);
  const double bound = std::sqrt(6.0 / (5.0 + 5.0));
  CHECK(test::max_abs(p.get("head.weight")) <= bound);
}

TEST_CASE("permuting pedestrians permutes the outputs") {
  ModelParams p = init_params(small_config(), 15);
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + trial % 6;
    SequenceSample s = test::random_sample(n, 4, 6, rng);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor pos({n, 10, 2});
    std::vector<std::int64_t> ids;
    for (std::size_t i = 0; i < n; ++i) {
      ids.push_back(s.ped_ids[perm[i]]);
      for (std::size_t t = 0; t < 10; ++t)
        for (std::size_t c = 0; c < 2; ++c)
          pos.at({i, t, c}) = t < 4 ? s.abs_obs.at({perm[i], t, c}) : s.abs_fut.at({perm[i], t - 4, c});
    }
    SequenceSample shuffled = make_sample(ids, pos, 4);
    const Tensor a = run_model(build_graph_sequence(s), p);
    const Tensor b = run_model(build_graph_sequence(shuffled), p);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t t = 0; t < 6; ++t)
        for (std::size_t c = 0; c < 5; ++c)
          CHECK(std::abs(b.at({i, t, c}) - a.at({perm[i], t, c})) < 1e-12);
  }
}

TEST_CASE("translating the scene leaves predicted displacements unchanged") {
  ModelParams p = init_params(small_config(), 16);
  std::mt19937_64 rng(16);
  for (int trial = 0; trial < 20; ++trial) {
    SequenceSample s = grid_sample(1 + trial % 5, 4, 6, rng);
    Tensor pos({s.num_peds(), 10, 2});
    for (std::size_t i = 0; i < s.num_peds(); ++i)
      for (std::size_t t = 0; t < 10; ++t)
        for (std::size_t c = 0; c < 2; ++c)
          pos.at({i, t, c}) = (t < 4 ? s.abs_obs.at({i, t, c}) : s.abs_fut.at({i, t - 4, c})) + (c ? -3.5 : 12.25);
    SequenceSample moved = make_sample(s.ped_ids, pos, 4);
    CHECK(run_model(build_graph_sequence(s), p) == run_model(build_graph_sequence(moved), p));
  }
}

TEST_CASE("relative_to_absolute examples") {
  const Tensor held = relative_to_absolute(Tensor({1, 3, 2}), Tensor::from({1, 2}, {5, 5}));
  CHECK(held == Tensor::from({1, 3, 2}, {5, 5, 5, 5, 5, 5}));
  CHECK(relative_to_absolute(Tensor::from({1, 2, 2}, {1, 0, 1, 0}), Tensor({1, 2})) ==
        Tensor::from({1, 2, 2}, {1, 0, 2, 0}));
  CHECK_THROWS_AS(relative_to_absolute(Tensor({2, 3, 2}), Tensor({1, 2})), ShapeError);

  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    SequenceSample s = test::random_sample(3, 8, 12, rng);
    const Tensor back = relative_to_absolute(s.rel_fut, s.last_observed());
    for (std::size_t k = 0; k < back.size(); ++k) CHECK(std::abs(back[k] - s.abs_fut[k]) < 1e-12);
  }
}
