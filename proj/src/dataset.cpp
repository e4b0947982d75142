#include "agcnn/dataset.hpp"

#include <algorithm>
#include <tuple>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "agcnn/error.hpp"

namespace agcnn {

namespace {

bool parse_double(const std::string& tok, double& out) {
  // strtod accepts the scientific notation some releases use ("1.2e+01").
  char* end = nullptr;
  out = std::strtod(tok.c_str(), &end);
  return end == tok.c_str() + tok.size() && !tok.empty() && std::isfinite(out);
}

bool parse_id(const std::string& tok, std::int64_t& out) {
  // Ids are often written as floats ("1.0000000e+00").
  double v = 0.0;
  if (!parse_double(tok, v) || v != std::floor(v)) return false;
  out = static_cast<std::int64_t>(v);
  return true;
}

}  // namespace

ColumnOrder column_order_from_string(const std::string& s) {
  if (s == "frame_ped_x_y") return ColumnOrder::frame_ped_x_y;
  if (s == "frame_ped_y_x") return ColumnOrder::frame_ped_y_x;
  if (s == "ped_frame_x_y") return ColumnOrder::ped_frame_x_y;
  throw Error("unknown column order '" + s + "'");
}

std::string to_string(ColumnOrder order) {
  switch (order) {
    case ColumnOrder::frame_ped_x_y: return "frame_ped_x_y";
    case ColumnOrder::frame_ped_y_x: return "frame_ped_y_x";
    case ColumnOrder::ped_frame_x_y: return "ped_frame_x_y";
  }
  return "?";
}

Scene parse_trajectory_file(std::istream& in, ColumnOrder order, std::int64_t frame_stride,
                            double dt) {
  Scene scene;
  scene.dt = dt;
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> toks;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    toks.clear();
    for (std::string tok; ls >> tok;) toks.push_back(tok);
    if (toks.empty() || toks[0][0] == '#') continue;
    if (toks.size() < 4)
      throw ParseError(lineno, "expected at least 4 fields, got " + std::to_string(toks.size()));

    TrackPoint p;
    std::int64_t a = 0, b = 0;
    double c = 0.0, d = 0.0;
    if (!parse_id(toks[0], a) || !parse_id(toks[1], b))
      throw ParseError(lineno, "non-integer id field");
    if (!parse_double(toks[2], c) || !parse_double(toks[3], d))
      throw ParseError(lineno, "non-numeric coordinate field");
    switch (order) {
      case ColumnOrder::frame_ped_x_y: p = {a, b, c, d}; break;
      case ColumnOrder::frame_ped_y_x: p = {a, b, d, c}; break;
      case ColumnOrder::ped_frame_x_y: p = {b, a, c, d}; break;
    }
    scene.points.push_back(p);
  }

  std::sort(scene.points.begin(), scene.points.end(), [](const TrackPoint& l, const TrackPoint& r) {
    return std::tie(l.frame_id, l.ped_id) < std::tie(r.frame_id, r.ped_id);
  });
  for (std::size_t i = 1; i < scene.points.size(); ++i) {
    const auto& l = scene.points[i - 1];
    const auto& r = scene.points[i];
    if (l.frame_id == r.frame_id && l.ped_id == r.ped_id)
      throw DataError("duplicate (frame " + std::to_string(r.frame_id) + ", ped " +
                      std::to_string(r.ped_id) + ")");
  }

  if (frame_stride > 0) {
    scene.frame_stride = frame_stride;
  } else {
    std::int64_t g = 0;
    std::int64_t prev = 0;
    bool first = true;
    for (const auto& p : scene.points) {
      if (!first && p.frame_id != prev) g = std::gcd(g, p.frame_id - prev);
      prev = p.frame_id;
      first = false;
    }
    scene.frame_stride = g > 0 ? g : 1;
  }
  return scene;
}

Scene load_trajectory_file(const std::string& path, ColumnOrder order, std::int64_t frame_stride,
                           double dt) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open trajectory file '" + path + "'");
  Scene s = parse_trajectory_file(f, order, frame_stride, dt);
  s.name = path;
  return s;
}

Tensor SequenceSample::last_observed() const {
  const std::size_t n = num_peds(), t = t_obs();
  Tensor out(Shape{n, 2});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 2; ++c) out.at({i, c}) = abs_obs.at({i, t - 1, c});
  return out;
}

SequenceSample make_sample(std::vector<std::int64_t> ped_ids, const Tensor& positions,
                           std::size_t t_obs) {
  if (positions.rank() != 3 || positions.dim(2) != 2 || positions.dim(0) != ped_ids.size())
    throw ShapeError("make_sample: positions must be N x T x 2, got " +
                     shape_str(positions.shape()));
  const std::size_t n = positions.dim(0), total = positions.dim(1);
  if (t_obs < 2 || t_obs >= total) throw ShapeError("make_sample: bad observation length");
  const std::size_t t_pred = total - t_obs;

  SequenceSample s;
  s.ped_ids = std::move(ped_ids);
  s.abs_obs = Tensor(Shape{n, t_obs, 2});
  s.abs_fut = Tensor(Shape{n, t_pred, 2});
  s.rel_obs = Tensor(Shape{n, t_obs, 2});
  s.rel_fut = Tensor(Shape{n, t_pred, 2});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < total; ++t)
      for (std::size_t c = 0; c < 2; ++c) {
        const double v = positions.at({i, t, c});
        const double rel = t == 0 ? 0.0 : v - positions.at({i, t - 1, c});
        if (t < t_obs) {
          s.abs_obs.at({i, t, c}) = v;
          s.rel_obs.at({i, t, c}) = rel;
        } else {
          s.abs_fut.at({i, t - t_obs, c}) = v;
          s.rel_fut.at({i, t - t_obs, c}) = rel;
        }
      }
  return s;
}

std::vector<SequenceSample> window_sequences(const Scene& scene, const WindowConfig& cfg) {
  if (cfg.t_obs < 2 || cfg.t_pred < 1 || cfg.stride < 1)
    throw Error("window_sequences: require t_obs >= 2, t_pred >= 1, stride >= 1");
  const std::size_t len = cfg.t_obs + cfg.t_pred;
  const std::int64_t fs = scene.frame_stride;

  // (frame, ped) -> position
  std::map<std::pair<std::int64_t, std::int64_t>, std::array<double, 2>> pos;
  std::set<std::int64_t> frame_set;
  for (const auto& p : scene.points) {
    pos[{p.frame_id, p.ped_id}] = {p.x, p.y};
    frame_set.insert(p.frame_id);
  }
  std::map<std::int64_t, std::vector<std::int64_t>> peds_at;
  for (const auto& p : scene.points) peds_at[p.frame_id].push_back(p.ped_id);

  const std::vector<std::int64_t> frames(frame_set.begin(), frame_set.end());
  std::vector<SequenceSample> out;
  for (std::size_t w = 0; w < frames.size(); w += cfg.stride) {
    const std::int64_t f0 = frames[w];
    std::vector<std::int64_t> ids;
    for (auto pid : peds_at[f0]) {
      bool full = true;
      for (std::size_t k = 1; k < len && full; ++k)
        full = pos.count({f0 + static_cast<std::int64_t>(k) * fs, pid}) > 0;
      if (full) ids.push_back(pid);
    }
    if (ids.empty()) continue;
    Tensor xy(Shape{ids.size(), len, 2});
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t k = 0; k < len; ++k) {
        const auto& v = pos.at({f0 + static_cast<std::int64_t>(k) * fs, ids[i]});
        xy.at({i, k, 0}) = v[0];
        xy.at({i, k, 1}) = v[1];
      }
    SequenceSample s = make_sample(std::move(ids), xy, cfg.t_obs);
    s.scene = scene.name;
    s.start_frame = f0;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::size_t> split_indices(std::size_t n, const std::array<double, 3>& ratios,
                                       std::uint64_t seed, std::array<std::size_t, 3>& sizes) {
  for (double r : ratios)
    if (!(r >= 0.0)) throw Error("split ratios must be non-negative");
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9)
    throw Error("split ratios must sum to 1");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  // Fisher-Yates with an explicit engine draw keeps the order stable across
  // standard library implementations.
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  // The epsilon absorbs representation error, e.g. 5 * 0.2.
  const auto floor_of = [n](double r) {
    return static_cast<std::size_t>(std::floor(static_cast<double>(n) * r + 1e-9));
  };
  sizes[1] = floor_of(ratios[1]);
  sizes[2] = floor_of(ratios[2]);
  sizes[0] = n - sizes[1] - sizes[2];
  return idx;
}

Split split_dataset(std::vector<SequenceSample> samples, const std::array<double, 3>& ratios,
                    std::uint64_t seed) {
  std::array<std::size_t, 3> sizes{};
  const auto idx = split_indices(samples.size(), ratios, seed, sizes);
  Split s;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    auto& dst = k < sizes[0] ? s.train : (k < sizes[0] + sizes[1] ? s.val : s.test);
    dst.push_back(std::move(samples[idx[k]]));
  }
  return s;
}

Scene synthetic_scene(const SyntheticCrowd& cfg, std::uint64_t seed, std::string name) {
  if (cfg.num_peds < 1 || cfg.num_steps < 1 || cfg.frame_stride < 1)
    throw Error("synthetic_scene: counts must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double two_pi = 2.0 * std::acos(-1.0);
  Scene scene;
  scene.name = std::move(name);
  scene.frame_stride = cfg.frame_stride;
  scene.dt = cfg.dt;
  for (std::size_t i = 0; i < cfg.num_peds; ++i) {
    double x = cfg.area * (2.0 * unit(rng) - 1.0);
    double y = cfg.area * (2.0 * unit(rng) - 1.0);
    const double speed = cfg.min_speed + (cfg.max_speed - cfg.min_speed) * unit(rng);
    double heading = two_pi * unit(rng);
    const double turn = cfg.max_turn * (2.0 * unit(rng) - 1.0);
    double vx = speed * std::cos(heading), vy = speed * std::sin(heading);
    if (cfg.constant_velocity) {
      x = std::round(x * 4.0) / 4.0;
      y = std::round(y * 4.0) / 4.0;
      vx = std::round(vx * 16.0) / 16.0;
      vy = std::round(vy * 16.0) / 16.0;
    }
    const double x0 = x, y0 = y;
    for (std::size_t k = 0; k < cfg.num_steps; ++k) {
      TrackPoint p;
      p.frame_id = static_cast<std::int64_t>(k) * cfg.frame_stride;
      p.ped_id = static_cast<std::int64_t>(i) + 1;
      if (cfg.constant_velocity) {
        p.x = x0 + static_cast<double>(k) * vx;
        p.y = y0 + static_cast<double>(k) * vy;
      } else {
        p.x = x;
        p.y = y;
        heading += turn;
        x += speed * std::cos(heading);
        y += speed * std::sin(heading);
      }
      scene.points.push_back(p);
    }
  }
  std::sort(scene.points.begin(), scene.points.end(), [](const TrackPoint& a, const TrackPoint& b) {
    return std::tie(a.frame_id, a.ped_id) < std::tie(b.frame_id, b.ped_id);
  });
  return scene;
}

}  // namespace agcnn
