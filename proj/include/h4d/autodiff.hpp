#pragma once

// Tape-based reverse-mode differentiation over Tensor values.
//
// A Tape records every op of one forward pass. Leaves are either constants or
// trainable; gradients flow only into nodes that (transitively) depend on a
// trainable leaf. Each recorded node stores its value, so a Var is just a
// (tape, index) handle. Tapes are single-writer and not reused across passes.

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "h4d/tensor.hpp"

namespace h4d {

class Tape;

class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  // Called with the gradient of the node's output; accumulates into inputs via grad_ref().
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value);
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
  }

  // Reverse sweep from a scalar loss. Throws DimensionError for non-scalar losses.
  void backward(Var loss);

  const Tensor& value(Var v) const { return nodes_.at(v.id()).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id()).requires_grad; }
  // Gradient after backward(); zeros for nodes the loss does not reach.
  Tensor grad(Var v) const;

  // For backward functions: lazily zero-initialized gradient slot.
  Tensor& grad_ref(Var v);
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    bool requires_grad = false;
  };
  void check_owner(Var v) const;

  std::deque<Node> nodes_;
};

// ---- primitive ops -------------------------------------------------------

Var matmul(Var a, Var b);                 // [m,k]·[k,n]
Var add(Var a, Var b);                    // same shape
Var sub(Var a, Var b);
Var mul(Var a, Var b);                    // elementwise
Var scale(Var a, float s);
Var add_row(Var a, Var bias);             // [m,n] + [n] broadcast over rows
Var relu(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
Var square(Var a);
Var sum(Var a);                           // -> scalar
Var mean(Var a);                          // -> scalar
Var reshape(Var a, Shape shape);
Var concat(std::span<const Var> parts);   // rank-1 pieces -> rank-1
Var concat(std::initializer_list<Var> parts);
Var concat_cols(Var a, Var b);            // [m,p] ‖ [m,q] -> [m,p+q]
Var slice(Var a, std::size_t begin, std::size_t end);           // rank-1
Var slice_cols(Var a, std::size_t begin, std::size_t end);      // rank-2
Var gather_rows(Var a, std::span<const std::size_t> rows);      // rank-2
Var row(Var a, std::size_t index);                              // [m,n] -> [n]
Var stack_rows(std::span<const Var> rows);                      // n x [c] -> [n,c]
// [s,c] -> [s*n,c], every row repeated n times consecutively (pool "expansion").
Var repeat_segments(Var a, std::size_t n);
// [s*n,c] -> [s,c], columnwise max over each block of n consecutive rows.
Var segment_max(Var a, std::size_t segments);
// [l,h] ⊕ [v,h] -> [l*v,h] with out[i*v+j] = a[i] + b[j].
Var outer_add_rows(Var a, Var b);

}  // namespace h4d
