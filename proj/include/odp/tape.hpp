#pragma once

#include <functional>
#include <string>
#include <vector>

#include "odp/errors.hpp"
#include "odp/mat.hpp"

namespace odp {

class Tape;

/// Handle to a node on a computation tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
};

/// A named trainable tensor. Gradients accumulate into `grad` when a tape
/// backward pass reaches a leaf bound to this parameter.
struct Parameter {
  std::string name;
  Mat value;
  Mat grad;

  Parameter() = default;
  Parameter(std::string n, Mat v)
      : name(std::move(n)), value(std::move(v)), grad(Mat::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(); }
};

/// Reverse-mode autodiff over dense row-major matrices.
///
/// Ops append nodes in execution order, which makes the record topologically
/// sorted by construction; one backward() sweep walks it in reverse and
/// populates a gradient for every differentiable leaf reachable from the loss.
/// A tape is single-use per forward pass and single-threaded by contract.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Non-differentiable input.
  Var constant(Mat value);

  /// Differentiable leaf bound to a parameter; backward() adds into p.grad.
  Var leaf(Parameter& p);

  /// Reverse sweep from a scalar loss. Throws ContractError for a non-scalar
  /// loss or a loss with no differentiable ancestors (empty gradient).
  void backward(Var loss);

  const Mat& value(Var v) const;
  /// Gradient of the last backward() loss w.r.t. node v (zero if unreached).
  Mat grad(Var v) const;

  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    bool has_grad = false;
    std::function<void(Tape&, int)> backprop;  // pulls grad of node `id`, pushes to inputs
    Parameter* sink = nullptr;
  };

  int push(Mat value, bool requires_grad, std::function<void(Tape&, int)> backprop);
  void accumulate(int id, const Mat& g);
  const Node& node(Var v) const;

  std::vector<Node> nodes_;
  std::vector<int> leaves_;

  friend Var matmul(Var a, Var b);
  friend Var operator+(Var a, Var b);
  friend Var operator-(Var a, Var b);
  friend Var operator*(Var a, Var b);
  friend Var operator*(double s, Var a);
  friend Var mish(Var a);
  friend Var sigmoid(Var a);
  friend Var layer_norm(Var x, Var gain, Var bias, double eps);
  friend Var concat_cols(const std::vector<Var>& parts);
  friend Var slice_cols(Var a, Index start, Index n);
  friend Var sum(Var a);
  friend Var mean(Var a);
  friend Var bce_with_logits(Var logits, Var targets);
};

/// Standard matrix product; backward gives dA = dC B^T, dB = A^T dC.
Var matmul(Var a, Var b);

/// Elementwise ops. The right operand may broadcast when it is a single row
/// (over the leading batch dimension) or a 1x1 scalar.
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator*(double s, Var a);
inline Var operator*(Var a, double s) { return s * a; }

Var mish(Var a);
Var sigmoid(Var a);

/// Row-wise layer normalization with learnable gain/bias (single rows).
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(Var a, Index start, Index n);

Var sum(Var a);
Var mean(Var a);

/// Mean binary cross-entropy between logits and 0/1 targets, computed in the
/// numerically stable logit form. Targets do not receive gradients.
Var bce_with_logits(Var logits, Var targets);

}  // namespace odp
