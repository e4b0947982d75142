#include "agcnn/tape.hpp"

#include <algorithm>
#include <cmath>

#include "agcnn/error.hpp"

namespace agcnn {

namespace {

constexpr double kLogFloor = 1e-30;

Tape& tape_of(Var a) {
  if (!a.tape) throw Error("operation on an unbound Var");
  return *a.tape;
}

Tape& tape_of(Var a, Var b) {
  if (a.tape != b.tape) throw Error("operands recorded on different tapes");
  return tape_of(a);
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

void axpy(Tensor& y, const Tensor& x, double alpha = 1.0) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += alpha * x[i];
}

// Splits a shape around `axis` into (outer, dim, inner) extents.
struct AxisSplit {
  std::size_t outer = 1, dim = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.dim = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

// c[m,p] += sum_k a(m,k) b(k,p) where a(m,k) = a[m*a_rs + k*a_cs], likewise b.
void gemm_acc(const double* a, std::size_t a_rs, std::size_t a_cs, const double* b,
              std::size_t b_rs, std::size_t b_cs, double* c, std::size_t m, std::size_t k,
              std::size_t p) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = a[i * a_rs + kk * a_cs];
      if (av == 0.0) continue;
      const double* brow = b + kk * b_rs;
      double* crow = c + i * p;
      for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j * b_cs];
    }
}

template <class F>
Var unary(const char* name, Var a, F&& forward, Tape::Pullback pullback) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (auto& v : out.storage()) v = forward(v);
  return t.push(name, std::move(out), {a.id}, std::move(pullback));
}

}  // namespace

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::push(std::string op, Tensor value, std::vector<std::uint32_t> inputs, Pullback pullback) {
  if (!value.all_finite()) throw NumericError("non-finite value produced by op '" + op + "'");
  Node n;
  n.op = std::move(op);
  n.value = std::move(value);
  if (record_) {
    n.inputs = std::move(inputs);
    n.pullback = std::move(pullback);
  }
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::constant(Tensor value) { return push("constant", std::move(value), {}, nullptr); }

Var Tape::parameter(const Tensor& value, std::size_t slot) {
  Var v = push("parameter", value, {}, nullptr);
  nodes_[v.id].slot = slot;
  return v;
}

Gradients Tape::backward(Var loss, const std::vector<Shape>& slot_shapes) const {
  if (!record_) throw Error("backward() on a non-recording tape");
  if (loss.tape != this) throw Error("backward(): loss belongs to another tape");
  if (value(loss).size() != 1) throw ShapeError("backward(): loss must be a scalar");

  const std::size_t n = loss.id + 1;
  std::vector<char> needs(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const Node& node = nodes_[i];
    if (node.slot) {
      needs[i] = 1;
      continue;
    }
    for (auto j : node.inputs)
      if (needs[j]) {
        needs[i] = 1;
        break;
      }
  }

  Gradients out;
  out.reserve(slot_shapes.size());
  for (const auto& s : slot_shapes) out.emplace_back(s, 0.0);
  if (!needs[loss.id]) return out;

  std::vector<std::optional<Tensor>> grads(n);
  grads[loss.id] = Tensor(value(loss).shape(), 1.0);
  std::vector<Tensor*> grad_in;

  for (std::size_t i = n; i-- > 0;) {
    if (!grads[i]) continue;
    const Node& node = nodes_[i];
    if (node.slot) {
      if (*node.slot >= out.size()) throw Error("backward(): parameter slot out of range");
      require_same_shape("backward", out[*node.slot], *grads[i]);
      axpy(out[*node.slot], *grads[i]);
      grads[i].reset();
      continue;
    }
    if (!node.pullback) continue;
    grad_in.assign(node.inputs.size(), nullptr);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const auto j = node.inputs[k];
      if (!needs[j]) continue;
      if (!grads[j]) grads[j] = Tensor(nodes_[j].value.shape(), 0.0);
      grad_in[k] = &*grads[j];
    }
    node.pullback(node.value, *grads[i], grad_in);
    for (auto* g : grad_in)
      if (g && !g->all_finite())
        throw NumericError("non-finite gradient produced by op '" + node.op + "'");
    grads[i].reset();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  axpy(out, b.value());
  return t.push("add", std::move(out), {a.id, b.id},
                [](const Tensor&, const Tensor& g, std::vector<Tensor*>& gi) {
                  if (gi[0]) axpy(*gi[0], g);
                  if (gi[1]) axpy(*gi[1], g);
                });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  axpy(out, b.value(), -1.0);
  return t.push("sub", std::move(out), {a.id, b.id},
                [](const Tensor&, const Tensor& g, std::vector<Tensor*>& gi) {
                  if (gi[0]) axpy(*gi[0], g);
                  if (gi[1]) axpy(*gi[1], g, -1.0);
                });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same_shape("mul", x, y);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return t.push("mul", std::move(out), {a.id, b.id},
                [&t, a, b](const Tensor&, const Tensor& g, std::vector<Tensor*>& gi) {
                  const Tensor& x = t.value(a);
                  const Tensor& y = t.value(b);
                  if (gi[0])
                    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * y[i];
                  if (gi[1])
                    for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] += g[i] * x[i];
                });
}

Var scale(Var a, double c) {
  return unary("scale", a, [c](double v) { return c * v; },
               [c](const Tensor&, const Tensor& g, std::vector<Tensor*>& gi) {
                 if (gi[0]) axpy(*gi[0], g, c);
               });
}

Var add_scalar(Var a, double c) {
  return unary("add_scalar", a, [c](double v) { return v + c; },
               [](const Tensor&, const Tensor& g, std::vector<Tensor*>& gi) {
                 if (gi[0]) axpy(*gi[0], g);
               });
}

Var exp(Var a) {
  return unary("exp", a, [](double v) { return std::exp(v); },
               [](const Tensor& y, const Tensor& g, std::vector<Tensor*>& gi) {
                 if (gi[0])
                   for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * y[i];
               });
}

Var log(Var a) {
  Tape& t = tape_of(a);
  return unary("log", a, [](double v) { return std::log(std::max(v, kLogFloor)); },
               [&t, a](const Tensor&, const Tensor& g, std::vector<Tensor*>& gi) {
                 if (!gi[0]) return;
                 const Tensor& x = t.value(a);
                 for (std::size_t i = 0; i < g.size(); ++i)
                   if (x[i] > kLogFloor) (*gi[0])[i] += g[i] / x[i];
               });
}

Var tanh(Var a) {
  return unary("tanh", a, [](double v) { return std::tanh(v); },
               [](const Tensor& y, const Tensor& g, std::vector<Tensor*>& gi) {
                 if (gi[0])
                   for (std::size_t i = 0; i < g.size(); ++i)
                     (*gi[0])[i] += g[i] * (1.0 - y[i] * y[i]);
               });
}

Var square(Var a) {
  Tape& t = tape_of(a);
  return unary("square", a, [](double v) { return v * v; },
               [&t, a](const Tensor&, const Tensor& g, std::vector<Tensor*>& gi) {
                 if (!gi[0]) return;
                 const Tensor& x = t.value(a);
                 for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += 2.0 * x[i] * g[i];
               });
}

Var prelu(Var x, Var slope) {
  Tape& t = tape_of(x, slope);
  if (slope.value().size() != 1)
    throw ShapeError("prelu: slope must be a scalar, got " + shape_str(slope.shape()));
  const double s = slope.value()[0];
  const Tensor& in = x.value();
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] >= 0.0 ? in[i] : s * in[i];
  return t.push("prelu", std::move(out), {x.id, slope.id},
                [&t, x, s](const Tensor&, const Tensor& g, std::vector<Tensor*>& gi) {
                  const Tensor& in = t.value(x);
                  double gs = 0.0;
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    if (in[i] >= 0.0) {
                      if (gi[0]) (*gi[0])[i] += g[i];
                    } else {
                      if (gi[0]) (*gi[0])[i] += s * g[i];
                      gs += in[i] * g[i];
                    }
                  }
                  if (gi[1]) (*gi[1])[0] += gs;
                });
}

Var add_bias(Var x, Var bias, std::size_t axis) {
  Tape& t = tape_of(x, bias);
  const Tensor& in = x.value();
  if (axis >= in.rank() || bias.value().rank() != 1 || bias.value().size() != in.dim(axis))
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not fit axis " +
                     std::to_string(axis) + " of " + shape_str(in.shape()));
  const AxisSplit sp = split_at(in.shape(), axis);
  Tensor out = in;
  const Tensor& b = bias.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[(i / sp.inner) % sp.dim];
  return t.push("add_bias", std::move(out), {x.id, bias.id},
                [sp](const Tensor&, const Tensor& g, std::vector<Tensor*>& gi) {
                  if (gi[0]) axpy(*gi[0], g);
                  if (gi[1])
                    for (std::size_t i = 0; i < g.size(); ++i)
                      (*gi[1])[(i / sp.inner) % sp.dim] += g[i];
                });
}

Var norm_last(Var x) {
  Tape& t = tape_of(x);
  const Tensor& in = x.value();
  if (in.rank() == 0) throw ShapeError("norm_last: rank-0 input");
  const std::size_t d = in.shape().back();
  Shape os(in.shape().begin(), in.shape().end() - 1);
  Tensor out(os);
  for (std::size_t r = 0; r < out.size(); ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += in[r * d + j] * in[r * d + j];
    out[r] = std::sqrt(s);
  }
  return t.push("norm_last", std::move(out), {x.id},
                [&t, x, d](const Tensor& y, const Tensor& g, std::vector<Tensor*>& gi) {
                  if (!gi[0]) return;
                  const Tensor& in = t.value(x);
                  for (std::size_t r = 0; r < y.size(); ++r) {
                    if (y[r] == 0.0) continue;
                    for (std::size_t j = 0; j < d; ++j)
                      (*gi[0])[r * d + j] += g[r] * in[r * d + j] / y[r];
                  }
                });
}

Var softmax_last(Var x) {
  Tape& t = tape_of(x);
  const Tensor& in = x.value();
  if (in.rank() == 0) throw ShapeError("softmax_last: rank-0 input");
  const std::size_t d = in.shape().back();
  Tensor out(in.shape());
  for (std::size_t r = 0; r * d < in.size(); ++r) {
    double m = in[r * d];
    for (std::size_t j = 1; j < d; ++j) m = std::max(m, in[r * d + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) z += out[r * d + j] = std::exp(in[r * d + j] - m);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] /= z;
  }
  return t.push("softmax_last", std::move(out), {x.id},
                [d](const Tensor& y, const Tensor& g, std::vector<Tensor*>& gi) {
                  if (!gi[0]) return;
                  for (std::size_t r = 0; r * d < y.size(); ++r) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < d; ++j) dot += g[r * d + j] * y[r * d + j];
                    for (std::size_t j = 0; j < d; ++j)
                      (*gi[0])[r * d + j] += y[r * d + j] * (g[r * d + j] - dot);
                  }
                });
}

// ---------------------------------------------------------------------------
// Reductions and layout

Var sum(Var a) {
  Tape& t = tape_of(a);
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return t.push("sum", Tensor::scalar(s), {a.id},
                [](const Tensor&, const Tensor& g, std::vector<Tensor*>& gi) {
                  if (gi[0])
                    for (auto& v : gi[0]->storage()) v += g[0];
                });
}

Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) {
  Tape& t = tape_of(a);
  const Tensor& in = a.value();
  if (axis >= in.rank() || begin > end || end > in.dim(axis))
    throw ShapeError("slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range on axis " + std::to_string(axis) + " of " +
                     shape_str(in.shape()));
  const AxisSplit sp = split_at(in.shape(), axis);
  Shape os = in.shape();
  os[axis] = end - begin;
  Tensor out(os);
  const std::size_t w = (end - begin) * sp.inner;
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(in.data().begin() + (o * sp.dim + begin) * sp.inner, w,
                out.data().begin() + o * w);
  return t.push("slice", std::move(out), {a.id},
                [sp, begin, w](const Tensor&, const Tensor& g, std::vector<Tensor*>& gi) {
                  if (!gi[0]) return;
                  for (std::size_t o = 0; o < sp.outer; ++o)
                    for (std::size_t i = 0; i < w; ++i)
                      (*gi[0])[(o * sp.dim + begin) * sp.inner + i] += g[o * w + i];
                });
}

Var reshape(Var a, Shape shape) {
  Tape& t = tape_of(a);
  Tensor out = a.value().reshaped(std::move(shape));
  return t.push("reshape", std::move(out), {a.id},
                [](const Tensor&, const Tensor& g, std::vector<Tensor*>& gi) {
                  if (!gi[0]) return;
                  for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
                });
}

Var permute(Var a, const std::vector<std::size_t>& perm) {
  Tape& t = tape_of(a);
  const Tensor& in = a.value();
  const std::size_t r = in.rank();
  std::vector<char> seen(r, 0);
  if (perm.size() != r) throw ShapeError("permute: rank mismatch for " + shape_str(in.shape()));
  for (auto p : perm) {
    if (p >= r || seen[p]) throw ShapeError("permute: invalid axis permutation");
    seen[p] = 1;
  }
  Shape os(r);
  for (std::size_t i = 0; i < r; ++i) os[i] = in.dim(perm[i]);
  const Shape in_strides = strides_of(in.shape());
  // src[o] = linear input offset of output element o
  std::vector<std::size_t> src(in.size());
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t o = 0; o < src.size(); ++o) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < r; ++i) off += idx[i] * in_strides[perm[i]];
    src[o] = off;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < os[i]) break;
      idx[i] = 0;
    }
  }
  Tensor out(os);
  for (std::size_t o = 0; o < src.size(); ++o) out[o] = in[src[o]];
  return t.push("permute", std::move(out), {a.id},
                [src = std::move(src)](const Tensor&, const Tensor& g, std::vector<Tensor*>& gi) {
                  if (!gi[0]) return;
                  for (std::size_t o = 0; o < src.size(); ++o) (*gi[0])[src[o]] += g[o];
                });
}

Var cumsum(Var a, std::size_t axis) {
  Tape& t = tape_of(a);
  const Tensor& in = a.value();
  if (axis >= in.rank()) throw ShapeError("cumsum: axis out of range for " + shape_str(in.shape()));
  const AxisSplit sp = split_at(in.shape(), axis);
  Tensor out = in;
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t k = 1; k < sp.dim; ++k)
      for (std::size_t i = 0; i < sp.inner; ++i)
        out[(o * sp.dim + k) * sp.inner + i] += out[(o * sp.dim + k - 1) * sp.inner + i];
  return t.push("cumsum", std::move(out), {a.id},
                [sp](const Tensor&, const Tensor& g, std::vector<Tensor*>& gi) {
                  if (!gi[0]) return;
                  for (std::size_t o = 0; o < sp.outer; ++o)
                    for (std::size_t i = 0; i < sp.inner; ++i) {
                      double acc = 0.0;
                      for (std::size_t k = sp.dim; k-- > 0;) {
                        acc += g[(o * sp.dim + k) * sp.inner + i];
                        (*gi[0])[(o * sp.dim + k) * sp.inner + i] += acc;
                      }
                    }
                });
}

// ---------------------------------------------------------------------------
// Products

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& x = a.value();
  const Tensor& w = b.value();
  if (x.rank() < 2 || w.rank() != 2 || x.shape().back() != w.dim(0))
    throw ShapeError("matmul: incompatible shapes " + shape_str(x.shape()) + " and " +
                     shape_str(w.shape()));
  const std::size_t k = w.dim(0), p = w.dim(1);
  const std::size_t rows = x.size() / k;
  Shape os = x.shape();
  os.back() = p;
  Tensor out(os);
  gemm_acc(x.data().data(), k, 1, w.data().data(), p, 1, out.data().data(), rows, k, p);
  return t.push("matmul", std::move(out), {a.id, b.id},
                [&t, a, b, rows, k, p](const Tensor&, const Tensor& g, std::vector<Tensor*>& gi) {
                  const double* x = t.value(a).data().data();
                  const double* w = t.value(b).data().data();
                  // dX = G W^T, dW = X^T G
                  if (gi[0]) gemm_acc(g.data().data(), p, 1, w, 1, p, gi[0]->data().data(), rows, p, k);
                  if (gi[1]) gemm_acc(x, 1, k, g.data().data(), p, 1, gi[1]->data().data(), k, rows, p);
                });
}

Var bmm(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rank() != 3 || y.rank() != 3 || x.dim(0) != y.dim(0) || x.dim(2) != y.dim(1))
    throw ShapeError("bmm: incompatible shapes " + shape_str(x.shape()) + " and " +
                     shape_str(y.shape()));
  const std::size_t nb = x.dim(0), m = x.dim(1), k = x.dim(2), p = y.dim(2);
  Tensor out(Shape{nb, m, p});
  for (std::size_t i = 0; i < nb; ++i)
    gemm_acc(x.data().data() + i * m * k, k, 1, y.data().data() + i * k * p, p, 1,
             out.data().data() + i * m * p, m, k, p);
  return t.push("bmm", std::move(out), {a.id, b.id},
                [&t, a, b, nb, m, k, p](const Tensor&, const Tensor& g, std::vector<Tensor*>& gi) {
                  const double* x = t.value(a).data().data();
                  const double* y = t.value(b).data().data();
                  for (std::size_t i = 0; i < nb; ++i) {
                    const double* gb = g.data().data() + i * m * p;
                    if (gi[0])
                      gemm_acc(gb, p, 1, y + i * k * p, 1, p, gi[0]->data().data() + i * m * k, m, p, k);
                    if (gi[1])
                      gemm_acc(x + i * m * k, 1, k, gb, p, 1, gi[1]->data().data() + i * k * p, k, m, p);
                  }
                });
}

Var conv_time(Var x, Var kernel, std::size_t pad) {
  Tape& t = tape_of(x, kernel);
  const Tensor& in = x.value();
  const Tensor& kw = kernel.value();
  if (in.rank() != 3 || kw.rank() != 3 || kw.dim(1) != in.dim(0))
    throw ShapeError("conv_time: incompatible input " + shape_str(in.shape()) + " and kernel " +
                     shape_str(kw.shape()));
  const std::size_t cin = in.dim(0), tn = in.dim(1), f = in.dim(2);
  const std::size_t cout = kw.dim(0), kn = kw.dim(2);
  if (tn + 2 * pad < kn)
    throw ShapeError("conv_time: kernel longer than padded input " + shape_str(in.shape()));
  const std::size_t tout = tn + 2 * pad - kn + 1;
  Tensor out(Shape{cout, tout, f});
  // out[co, s, :] += k[co, ci, j] * in[ci, s + j - pad, :]
  auto for_each_tap = [=](auto&& body) {
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t ci = 0; ci < cin; ++ci)
        for (std::size_t j = 0; j < kn; ++j)
          for (std::size_t s = 0; s < tout; ++s) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(s + j) - static_cast<std::ptrdiff_t>(pad);
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(tn)) continue;
            body((co * cin + ci) * kn + j, (ci * tn + static_cast<std::size_t>(src)) * f,
                 (co * tout + s) * f);
          }
  };
  for_each_tap([&](std::size_t ki, std::size_t xi, std::size_t oi) {
    const double w = kw[ki];
    if (w == 0.0) return;
    for (std::size_t c = 0; c < f; ++c) out[oi + c] += w * in[xi + c];
  });
  return t.push("conv_time", std::move(out), {x.id, kernel.id},
                [&t, x, kernel, for_each_tap, f](const Tensor&, const Tensor& g,
                                                 std::vector<Tensor*>& gi) {
                  const Tensor& in = t.value(x);
                  const Tensor& kw = t.value(kernel);
                  for_each_tap([&](std::size_t ki, std::size_t xi, std::size_t oi) {
                    if (gi[0]) {
                      const double w = kw[ki];
                      for (std::size_t c = 0; c < f; ++c) (*gi[0])[xi + c] += w * g[oi + c];
                    }
                    if (gi[1]) {
                      double acc = 0.0;
                      for (std::size_t c = 0; c < f; ++c) acc += in[xi + c] * g[oi + c];
                      (*gi[1])[ki] += acc;
                    }
                  });
                });
}

}  // namespace agcnn
