#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "agcnn/tensor.hpp"

namespace agcnn {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

// Per-slot gradients returned by Tape::backward. Slots that the loss does not
// reach hold exact zeros of the parameter's shape.
using Gradients = std::vector<Tensor>;

// Reverse-mode gradient tape. Ops are free functions below; each appends a node
// holding its forward value and, when recording, a pullback closure.
class Tape {
public:
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return record_; }

  Var constant(Tensor value);
  // Leaf tracked for gradients under `slot`.
  Var parameter(const Tensor& value, std::size_t slot);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  const std::string& op_name(Var v) const { return nodes_[v.id].op; }
  std::size_t node_count() const noexcept { return nodes_.size(); }

  // Accumulates d(loss)/d(slot) for slots [0, n_slots). `slot_shapes` gives the
  // zero shape for unreached slots.
  Gradients backward(Var loss, const std::vector<Shape>& slot_shapes) const;

  // --- used by op implementations ---
  // grad_in[k] is null when input k does not lead to a parameter.
  using Pullback = std::function<void(const Tensor& out, const Tensor& grad_out,
                                      std::vector<Tensor*>& grad_in)>;
  Var push(std::string op, Tensor value, std::vector<std::uint32_t> inputs, Pullback pullback);

private:
  struct Node {
    std::string op;
    Tensor value;
    std::vector<std::uint32_t> inputs;
    Pullback pullback;
    std::optional<std::size_t> slot;
  };

  std::vector<Node> nodes_;
  bool record_;
};

// Elementwise (shapes must match exactly).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var exp(Var a);
// log(max(a, 1e-30)); gradient is zero where the clamp is active.
Var log(Var a);
Var tanh(Var a);
Var square(Var a);
// x if x >= 0 else slope * x, slope a rank-0 Var.
Var prelu(Var x, Var slope);

// Adds a 1-D bias along `axis` (broadcast over all other axes).
Var add_bias(Var x, Var bias, std::size_t axis);

// Euclidean norm over the last axis; subgradient 0 at the origin.
Var norm_last(Var x);
// Softmax over the last axis with max shift.
Var softmax_last(Var x);

Var sum(Var a);
Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end);
Var reshape(Var a, Shape shape);
Var permute(Var a, const std::vector<std::size_t>& perm);
Var cumsum(Var a, std::size_t axis);

// a: [..., M, K] times b: [K, P] -> [..., M, P].
Var matmul(Var a, Var b);
// a: [B, M, K] times b: [B, K, P] -> [B, M, P].
Var bmm(Var a, Var b);
// 1-D convolution along axis 1. x: [C_in, T, F], kernel: [C_out, C_in, k].
// Zero padding `pad` on both ends; output [C_out, T + 2*pad - k + 1, F].
Var conv_time(Var x, Var kernel, std::size_t pad);

}  // namespace agcnn
