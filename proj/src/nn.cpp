#include "odp/nn.hpp"

#include <cmath>

namespace odp {

Adam::Adam(std::vector<Parameter*> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  for (const Parameter* p : params_) {
    m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::step() {
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    if (!p.grad.allFinite())
      throw NumericalError("adam: non-finite gradient in parameter '" + p.name + "' at step " +
                           std::to_string(step_));
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * p.grad;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * p.grad.cwiseProduct(p.grad);
    Mat mhat = m_[i] / bc1;
    Mat vhat = v_[i] / bc2;
    p.value.array() -= cfg_.lr * mhat.array() / (vhat.array().sqrt() + cfg_.eps);
  }
}

void Adam::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

Mat init_he(Index rows, Index cols, Rng& rng) {
  return std::sqrt(2.0 / static_cast<double>(rows)) * rng.normal_mat(rows, cols);
}

Mlp::Mlp(std::string name, int in_dim, std::vector<int> hidden, int out_dim, Rng& rng)
    : in_dim_(in_dim), out_dim_(out_dim) {
  std::vector<int> dims;
  dims.push_back(in_dim);
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(out_dim);
  for (size_t l = 0; l + 1 < dims.size(); ++l) {
    std::string tag = name + ".l" + std::to_string(l);
    weights_.emplace_back(tag + ".w", init_he(dims[l], dims[l + 1], rng));
    biases_.emplace_back(tag + ".b", Mat::Zero(1, dims[l + 1]));
  }
}

Var Mlp::forward(Tape& t, Var x) {
  Var h = x;
  for (size_t l = 0; l < weights_.size(); ++l) {
    h = matmul(h, t.leaf(weights_[l])) + t.leaf(biases_[l]);
    if (l + 1 < weights_.size()) h = mish(h);
  }
  return h;
}

Mat Mlp::operator()(const Mat& x) {
  Tape t;
  return t.value(forward(t, t.constant(x)));
}

std::vector<Parameter*> Mlp::parameters() {
  std::vector<Parameter*> ps;
  for (auto& w : weights_) ps.push_back(&w);
  for (auto& b : biases_) ps.push_back(&b);
  return ps;
}

}  // namespace odp
