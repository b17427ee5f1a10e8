#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "kiwiqe/tensor.hpp"

// Reverse-mode differentiation over dense tensors.
//
// A Tape records every operation in forward order. backward() walks the
// records in exact reverse order, handing each node's accumulated gradient to
// the closure that knows how to push it into the node's inputs. Only nodes
// that transitively depend on a requires_grad leaf keep a closure.
//
// A tape is confined to one thread. Vars are cheap handles and stay valid for
// the tape's lifetime.
namespace kiwiqe::ad {

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  std::uint32_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

// Called during backward with the tape and the id of the node being visited.
using BackwardFn = std::function<void(Tape&, std::uint32_t)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Appends an op result. The closure is dropped when no input needs a
  // gradient, so constant subgraphs cost nothing on the way back.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn);

  const Tensor& value(std::uint32_t id) const { return nodes_[id].value; }
  const Tensor& value(Var v) const { return nodes_[v.id()].value; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }

  // Gradient of the last backward() target; zeros when none reached v.
  Tensor grad(Var v) const;
  bool has_grad(Var v) const { return nodes_[v.id()].has_grad; }

  // Accumulation slot for backward closures; allocated on first use.
  Tensor& grad_slot(std::uint32_t id);
  const Tensor& out_grad(std::uint32_t id) const { return nodes_[id].grad; }

  // Seeds d loss / d loss = 1 and propagates. loss must hold one element.
  void backward(Var loss);
  void zero_grad();

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    bool requires_grad = false;
    bool has_grad = false;
  };
  std::vector<Node> nodes_;
};

// A contiguous run of rows [begin, begin + length) holding one sequence in a
// packed batch.
struct Segment {
  std::size_t begin = 0;
  std::size_t length = 0;
};

Var matmul(Var a, Var b);
// a * b^T
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
// Adds a length-m vector to every row of an n x m matrix.
Var add_row(Var x, Var bias);
Var scale(Var x, double c);
// s * x for a scalar-valued s.
Var scale_by(Var x, Var s);
// sum_k w[k] * xs[k] for same-shape xs and a vector w.
Var weighted_sum(std::span<const Var> xs, Var w);
Var softmax_rows(Var x);
Var sparsemax_rows(Var x);
Var log_softmax_rows(Var x);
Var tanh(Var x);
// tanh approximation of GELU.
Var gelu(Var x);
Var square(Var x);
Var layer_norm_rows(Var x, Var gain, Var bias, double eps = 1e-5);
Var gather_rows(Var x, std::span<const std::size_t> rows);
Var slice_cols(Var x, std::size_t begin, std::size_t end);
Var l2_norm_rows(Var x);
Var sum(Var x);
Var mean(Var x);
Var reshape(Var x, Shape shape);
// Identity that forces gradient tracking from this point on.
Var watch(Var x);

// Scaled dot-product attention applied independently to each segment of a
// packed batch: softmax(q_s k_s^T * scale) v_s. Rows outside every segment
// produce zeros. When weights_out is set it receives one attention matrix
// per segment.
Var segment_attention(Var q, Var k, Var v, std::span<const Segment> segments, double scale,
                      std::vector<Tensor>* weights_out = nullptr);

// -sum_i row_scale[i] * class_weights[t_i] * log_probs[i, t_i].
Var weighted_nll(Var log_probs, std::span<const int> targets,
                 std::span<const double> class_weights, std::span<const double> row_scale);

}  // namespace kiwiqe::ad
