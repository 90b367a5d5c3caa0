#pragma once

#include <string>
#include <vector>

#include "odp/rng.hpp"
#include "odp/tape.hpp"

namespace odp {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected adaptive-moment optimizer over a fixed parameter list.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig cfg);

  /// Applies one update from the parameters' accumulated grads.
  /// Throws NumericalError naming the parameter if a grad is not finite.
  void step();
  void zero_grad();
  long step_count() const { return step_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Mat> m_, v_;
  AdamConfig cfg_;
  long step_ = 0;
};

/// He-style normal init, std = sqrt(2 / fan_in).
Mat init_he(Index rows, Index cols, Rng& rng);

/// Multi-layer perceptron with Mish hidden activations and a linear head.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::string name, int in_dim, std::vector<int> hidden, int out_dim, Rng& rng);

  Var forward(Tape& t, Var x);
  /// Convenience inference on a value matrix (rows = batch).
  Mat operator()(const Mat& x);

  std::vector<Parameter*> parameters();
  int in_dim() const { return in_dim_; }
  int out_dim() const { return out_dim_; }

 private:
  std::vector<Parameter> weights_, biases_;
  int in_dim_ = 0, out_dim_ = 0;
};

}  // namespace odp
