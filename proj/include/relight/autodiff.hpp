#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "relight/tensor.hpp"

namespace relight {

template <typename T>
class Tape;

// Handle to a value recorded on a tape. Cheap to copy; valid while the tape
// lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, int id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const { return *tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Tape<T>* tape_ = nullptr;
  int id_ = -1;
};

// Reverse-mode tape. Operations append nodes in execution order, so the node
// list is already topologically sorted; backward() walks it once in reverse.
template <typename T>
class Tape {
 public:
  // Receives the output gradient and one slot per input. A slot is null when
  // that input does not need a gradient.
  using BackwardFn = std::function<void(const Tensor<T>& grad_out, std::span<Tensor<T>*> grad_in)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Tensor<T> value, bool requires_grad = false);
  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  // Records an operation result. Throws NumericError naming `op` when the
  // value contains NaN or Inf.
  Var<T> record(const char* op, Tensor<T> value, std::vector<Var<T>> inputs, BackwardFn backward);

  // Accumulates d(loss)/d(node) for every node that loss depends on.
  // Throws InvalidArgument for a non-scalar loss.
  void backward(const Var<T>& loss);

  // Gradient of the last backward pass; zeros for nodes it never reached.
  Tensor<T> grad(const Var<T>& v) const;

  const Tensor<T>& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  const char* op_name(int id) const { return nodes_[static_cast<std::size_t>(id)].op; }

 private:
  struct Node {
    const char* op = "leaf";
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::vector<int> inputs;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(id_);
}

// ---- Elementwise and structural ops ---------------------------------------

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, double s);
template <typename T> Var<T> abs(const Var<T>& a);
template <typename T> Var<T> square(const Var<T>& a);
// Sum of all elements as a shape {1} tensor.
template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> reshape(const Var<T>& a, Shape shape);

// log(1 + max(x, floor)). Elements below floor are clamped (zero gradient)
// and counted in *clamped when it is non-null.
template <typename T>
Var<T> log1p_clamped(const Var<T>& a, double floor, std::int64_t* clamped = nullptr);

// ---- Activations ----------------------------------------------------------

// alpha holds one slope per channel (last axis).
template <typename T> Var<T> prelu(const Var<T>& x, const Var<T>& alpha);
template <typename T> Var<T> softplus(const Var<T>& x);
template <typename T> Var<T> sigmoid(const Var<T>& x);

// ---- Layers on H x W x C tensors ------------------------------------------

// Cross-correlation with "same" zero padding: output pixel (i, j) is centered
// on input pixel (i*stride, j*stride), giving ceil(H/stride) x ceil(W/stride).
// kernel: kh x kw x Cin x Cout with odd kh, kw; bias: Cout.
template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernel, const Var<T>& bias, int stride);

// Adjoint of conv2d with the same kernel and stride (zero bias). input:
// H x W x Cin; kernel: kh x kw x Cout x Cin; output: H*stride x W*stride x Cout.
template <typename T>
Var<T> conv2d_transpose(const Var<T>& input, const Var<T>& kernel, const Var<T>& bias, int stride);

// Normalizes each of `groups` channel groups over H x W x (C/groups), then
// applies per-channel gamma and beta.
template <typename T>
Var<T> group_norm(const Var<T>& x, int groups, const Var<T>& gamma, const Var<T>& beta,
                  double eps = 1e-5);

template <typename T> Var<T> concat_channels(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> slice_channels(const Var<T>& a, int begin, int end);
// 1 x 1 x C -> H x W x C.
template <typename T> Var<T> broadcast_spatial(const Var<T>& a, int height, int width);

// Confidence-weighted spatial average.
//   values: Hb x Wb x (P*K), confidence: Hb x Wb x P (or x 1, shared by all P)
//   output: P x K with out[p, k] = sum_xy c(xy, p) v(xy, p, k) / sum_xy c(xy, p)
// Confidences must be strictly positive.
template <typename T>
Var<T> weighted_average(const Var<T>& values, const Var<T>& confidence, int groups);

// Circular shift of an H x W x C tensor along the column (longitude) axis by
// a fractional number of pixels, with linear interpolation. Positive shifts
// move content toward larger column indices.
template <typename T>
Var<T> roll_columns(const Var<T>& x, double shift_pixels);

// Non-differentiable kernels shared with plain (tape-free) image code.
namespace kernels {

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                         int stride);
// Adjoint of conv2d_forward without bias, producing out_h x out_w x Cin.
template <typename T>
Tensor<T> conv2d_adjoint(const Tensor<T>& grad, const Tensor<T>& kernel, int stride, int out_h,
                         int out_w);
template <typename T>
Tensor<T> roll_columns(const Tensor<T>& x, double shift_pixels);

}  // namespace kernels

}  // namespace relight
