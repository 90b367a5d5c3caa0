#include "odp/tape.hpp"

#include <cmath>
#include <utility>

namespace odp {

namespace {

void check_same_tape(Var a, Var b, const char* op) {
  if (a.tape == nullptr || b.tape == nullptr || a.tape != b.tape)
    throw ContractError(std::string(op) + ": operands must live on the same tape");
}

// Right-operand broadcast over the leading batch dimension: b may be a full
// matrix of a's shape, a single row, or a 1x1 scalar.
enum class Bcast { same, row, scalar };

Bcast bcast_kind(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Bcast::same;
  if (b.rows() == 1 && b.cols() == a.cols()) return Bcast::row;
  if (b.rows() == 1 && b.cols() == 1) return Bcast::scalar;
  throw ContractError(std::string(op) + ": shape mismatch: " + shape_str(a) + " vs " +
                      shape_str(b));
}

Mat broadcast_to(const Mat& b, const Mat& like, Bcast kind) {
  switch (kind) {
    case Bcast::same:
      return b;
    case Bcast::row:
      return b.replicate(like.rows(), 1);
    case Bcast::scalar:
      return Mat::Constant(like.rows(), like.cols(), b(0, 0));
  }
  return b;
}

Mat reduce_like(const Mat& g, Bcast kind) {
  switch (kind) {
    case Bcast::same:
      return g;
    case Bcast::row:
      return g.colwise().sum();
    case Bcast::scalar: {
      Mat r(1, 1);
      r(0, 0) = g.sum();
      return r;
    }
  }
  return g;
}

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

double sigmoid_scalar(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace

int Tape::push(Mat value, bool requires_grad, std::function<void(Tape&, int)> backprop) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backprop = requires_grad ? std::move(backprop) : nullptr;
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Var Tape::constant(Mat value) { return {this, push(std::move(value), false, nullptr)}; }

Var Tape::leaf(Parameter& p) {
  int id = push(p.value, true, nullptr);
  nodes_[id].sink = &p;
  leaves_.push_back(id);
  return {this, id};
}

void Tape::accumulate(int id, const Mat& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (!n.has_grad) {
    n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  n.grad += g;
}

const Tape::Node& Tape::node(Var v) const {
  if (v.tape != this || v.id < 0 || v.id >= size())
    throw ContractError("Tape: Var does not belong to this tape");
  return nodes_[v.id];
}

const Mat& Tape::value(Var v) const { return node(v).value; }

Mat Tape::grad(Var v) const {
  const Node& n = node(v);
  if (!n.has_grad) return Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var loss) {
  const Node& ln = node(loss);
  if (ln.value.rows() != 1 || ln.value.cols() != 1)
    throw ContractError("backward: loss must be a 1x1 tensor, got " + shape_str(ln.value));
  if (!ln.requires_grad)
    throw ContractError(
        "backward: loss is detached from every differentiable leaf (empty gradient)");

  accumulate(loss.id, Mat::Ones(1, 1));
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.requires_grad && n.has_grad && n.backprop) n.backprop(*this, id);
  }
  for (int id : leaves_) {
    Node& n = nodes_[id];
    if (n.sink && n.has_grad) n.sink->grad += n.grad;
  }
}

// ---------------------------------------------------------------------------
// ops
// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
  check_same_tape(a, b, "matmul");
  Tape& t = *a.tape;
  const Mat& av = t.nodes_[a.id].value;
  const Mat& bv = t.nodes_[b.id].value;
  if (av.cols() != bv.rows())
    throw ContractError("matmul: inner dimensions disagree: " + shape_str(av) + " vs " +
                        shape_str(bv));
  bool rg = t.nodes_[a.id].requires_grad || t.nodes_[b.id].requires_grad;
  int ai = a.id, bi = b.id;
  int id = t.push(av * bv, rg, [ai, bi](Tape& tp, int self) {
    const Mat& g = tp.nodes_[self].grad;
    tp.accumulate(ai, g * tp.nodes_[bi].value.transpose());
    tp.accumulate(bi, tp.nodes_[ai].value.transpose() * g);
  });
  return {&t, id};
}

Var operator+(Var a, Var b) {
  check_same_tape(a, b, "add");
  Tape& t = *a.tape;
  const Mat& av = t.nodes_[a.id].value;
  const Mat& bv = t.nodes_[b.id].value;
  Bcast k = bcast_kind(av, bv, "add");
  bool rg = t.nodes_[a.id].requires_grad || t.nodes_[b.id].requires_grad;
  int ai = a.id, bi = b.id;
  int id = t.push(av + broadcast_to(bv, av, k), rg, [ai, bi, k](Tape& tp, int self) {
    const Mat& g = tp.nodes_[self].grad;
    tp.accumulate(ai, g);
    tp.accumulate(bi, reduce_like(g, k));
  });
  return {&t, id};
}

Var operator-(Var a, Var b) {
  check_same_tape(a, b, "sub");
  Tape& t = *a.tape;
  const Mat& av = t.nodes_[a.id].value;
  const Mat& bv = t.nodes_[b.id].value;
  Bcast k = bcast_kind(av, bv, "sub");
  bool rg = t.nodes_[a.id].requires_grad || t.nodes_[b.id].requires_grad;
  int ai = a.id, bi = b.id;
  int id = t.push(av - broadcast_to(bv, av, k), rg, [ai, bi, k](Tape& tp, int self) {
    const Mat& g = tp.nodes_[self].grad;
    tp.accumulate(ai, g);
    tp.accumulate(bi, -reduce_like(g, k));
  });
  return {&t, id};
}

Var operator*(Var a, Var b) {
  check_same_tape(a, b, "mul");
  Tape& t = *a.tape;
  const Mat& av = t.nodes_[a.id].value;
  const Mat& bv = t.nodes_[b.id].value;
  Bcast k = bcast_kind(av, bv, "mul");
  bool rg = t.nodes_[a.id].requires_grad || t.nodes_[b.id].requires_grad;
  int ai = a.id, bi = b.id;
  int id = t.push(av.cwiseProduct(broadcast_to(bv, av, k)), rg, [ai, bi, k](Tape& tp, int self) {
    const Mat& g = tp.nodes_[self].grad;
    const Mat& av2 = tp.nodes_[ai].value;
    const Mat& bv2 = tp.nodes_[bi].value;
    tp.accumulate(ai, g.cwiseProduct(broadcast_to(bv2, av2, k)));
    tp.accumulate(bi, reduce_like(g.cwiseProduct(av2), k));
  });
  return {&t, id};
}

Var operator*(double s, Var a) {
  Tape& t = *a.tape;
  bool rg = t.nodes_[a.id].requires_grad;
  int ai = a.id;
  int id = t.push(s * t.nodes_[ai].value, rg, [ai, s](Tape& tp, int self) {
    tp.accumulate(ai, s * tp.nodes_[self].grad);
  });
  return {&t, id};
}

Var mish(Var a) {
  Tape& t = *a.tape;
  const Mat& av = t.nodes_[a.id].value;
  Mat out(av.rows(), av.cols());
  for (Index i = 0; i < av.size(); ++i) {
    double x = av(i);
    out(i) = x * std::tanh(softplus(x));
  }
  bool rg = t.nodes_[a.id].requires_grad;
  int ai = a.id;
  int id = t.push(std::move(out), rg, [ai](Tape& tp, int self) {
    const Mat& g = tp.nodes_[self].grad;
    const Mat& x = tp.nodes_[ai].value;
    Mat d(x.rows(), x.cols());
    for (Index i = 0; i < x.size(); ++i) {
      double xi = x(i);
      double th = std::tanh(softplus(xi));
      d(i) = th + xi * (1.0 - th * th) * sigmoid_scalar(xi);
    }
    tp.accumulate(ai, g.cwiseProduct(d));
  });
  return {&t, id};
}

Var sigmoid(Var a) {
  Tape& t = *a.tape;
  const Mat& av = t.nodes_[a.id].value;
  Mat out(av.rows(), av.cols());
  for (Index i = 0; i < av.size(); ++i) out(i) = sigmoid_scalar(av(i));
  bool rg = t.nodes_[a.id].requires_grad;
  int ai = a.id;
  int id = t.push(std::move(out), rg, [ai](Tape& tp, int self) {
    const Mat& g = tp.nodes_[self].grad;
    const Mat& y = tp.nodes_[self].value;
    tp.accumulate(ai, g.cwiseProduct(y.cwiseProduct(Mat::Ones(y.rows(), y.cols()) - y)));
  });
  return {&t, id};
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  check_same_tape(x, gain, "layer_norm");
  check_same_tape(x, bias, "layer_norm");
  Tape& t = *x.tape;
  const Mat& xv = t.nodes_[x.id].value;
  const Mat& gv = t.nodes_[gain.id].value;
  const Mat& bv = t.nodes_[bias.id].value;
  if (gv.rows() != 1 || gv.cols() != xv.cols() || bv.rows() != 1 || bv.cols() != xv.cols())
    throw ContractError("layer_norm: gain/bias must be 1x" + std::to_string(xv.cols()) +
                        ", got " + shape_str(gv) + " and " + shape_str(bv));

  const Index n = xv.cols();
  Mat xhat(xv.rows(), n);
  Vec inv(xv.rows());
  for (Index r = 0; r < xv.rows(); ++r) {
    double mu = xv.row(r).mean();
    double var = (xv.row(r).array() - mu).square().mean();
    inv(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mu) * inv(r);
  }
  Mat out = (xhat.array().rowwise() * gv.row(0).array()).rowwise() + bv.row(0).array();

  bool rg = t.nodes_[x.id].requires_grad || t.nodes_[gain.id].requires_grad ||
            t.nodes_[bias.id].requires_grad;
  int xi = x.id, gi = gain.id, bi = bias.id;
  // xhat and inv are captured by value; they are pure functions of the input.
  int id = t.push(std::move(out), rg, [xi, gi, bi, xhat, inv](Tape& tp, int self) {
    const Mat& g = tp.nodes_[self].grad;
    const Mat& gv2 = tp.nodes_[gi].value;
    tp.accumulate(gi, g.cwiseProduct(xhat).colwise().sum());
    tp.accumulate(bi, g.colwise().sum());
    Mat dxhat = g.array().rowwise() * gv2.row(0).array();
    Mat dx(dxhat.rows(), dxhat.cols());
    for (Index r = 0; r < dxhat.rows(); ++r) {
      double m1 = dxhat.row(r).mean();
      double m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
      dx.row(r) = inv(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
    }
    tp.accumulate(xi, dx);
  });
  return {&t, id};
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  Tape& t = *parts[0].tape;
  Index rows = t.nodes_[parts[0].id].value.rows();
  Index cols = 0;
  bool rg = false;
  for (Var p : parts) {
    check_same_tape(parts[0], p, "concat_cols");
    const Mat& v = t.nodes_[p.id].value;
    if (v.rows() != rows)
      throw ContractError("concat_cols: row mismatch: " + shape_str(t.nodes_[parts[0].id].value) +
                          " vs " + shape_str(v));
    cols += v.cols();
    rg = rg || t.nodes_[p.id].requires_grad;
  }
  Mat out(rows, cols);
  std::vector<int> ids;
  std::vector<Index> offs, widths;
  Index at = 0;
  for (Var p : parts) {
    const Mat& v = t.nodes_[p.id].value;
    out.block(0, at, rows, v.cols()) = v;
    ids.push_back(p.id);
    offs.push_back(at);
    widths.push_back(v.cols());
    at += v.cols();
  }
  int id = t.push(std::move(out), rg, [ids, offs, widths](Tape& tp, int self) {
    const Mat& g = tp.nodes_[self].grad;
    for (size_t i = 0; i < ids.size(); ++i)
      tp.accumulate(ids[i], g.block(0, offs[i], g.rows(), widths[i]));
  });
  return {&t, id};
}

Var slice_cols(Var a, Index start, Index n) {
  Tape& t = *a.tape;
  const Mat& av = t.nodes_[a.id].value;
  if (start < 0 || n < 0 || start + n > av.cols())
    throw ContractError("slice_cols: [" + std::to_string(start) + ", " +
                        std::to_string(start + n) + ") out of range for " + shape_str(av));
  bool rg = t.nodes_[a.id].requires_grad;
  int ai = a.id;
  int id = t.push(av.block(0, start, av.rows(), n), rg, [ai, start, n](Tape& tp, int self) {
    const Mat& g = tp.nodes_[self].grad;
    Mat full = Mat::Zero(tp.nodes_[ai].value.rows(), tp.nodes_[ai].value.cols());
    full.block(0, start, g.rows(), n) = g;
    tp.accumulate(ai, full);
  });
  return {&t, id};
}

Var sum(Var a) {
  Tape& t = *a.tape;
  const Mat& av = t.nodes_[a.id].value;
  Mat out(1, 1);
  out(0, 0) = av.sum();
  bool rg = t.nodes_[a.id].requires_grad;
  int ai = a.id;
  int id = t.push(std::move(out), rg, [ai](Tape& tp, int self) {
    const Mat& v = tp.nodes_[ai].value;
    tp.accumulate(ai, Mat::Constant(v.rows(), v.cols(), tp.nodes_[self].grad(0, 0)));
  });
  return {&t, id};
}

Var mean(Var a) {
  Tape& t = *a.tape;
  const Mat& av = t.nodes_[a.id].value;
  Mat out(1, 1);
  out(0, 0) = av.mean();
  bool rg = t.nodes_[a.id].requires_grad;
  int ai = a.id;
  int id = t.push(std::move(out), rg, [ai](Tape& tp, int self) {
    const Mat& v = tp.nodes_[ai].value;
    double scale = tp.nodes_[self].grad(0, 0) / static_cast<double>(v.size());
    tp.accumulate(ai, Mat::Constant(v.rows(), v.cols(), scale));
  });
  return {&t, id};
}

Var bce_with_logits(Var logits, Var targets) {
  check_same_tape(logits, targets, "bce_with_logits");
  Tape& t = *logits.tape;
  const Mat& z = t.nodes_[logits.id].value;
  const Mat& y = t.nodes_[targets.id].value;
  if (z.rows() != y.rows() || z.cols() != y.cols())
    throw ContractError("bce_with_logits: shape mismatch: " + shape_str(z) + " vs " +
                        shape_str(y));
  double acc = 0.0;
  for (Index i = 0; i < z.size(); ++i) {
    double zi = z(i);
    acc += std::max(zi, 0.0) - zi * y(i) + std::log1p(std::exp(-std::abs(zi)));
  }
  Mat out(1, 1);
  out(0, 0) = acc / static_cast<double>(z.size());
  bool rg = t.nodes_[logits.id].requires_grad;
  int zi_id = logits.id, yi_id = targets.id;
  int id = t.push(std::move(out), rg, [zi_id, yi_id](Tape& tp, int self) {
    const Mat& z2 = tp.nodes_[zi_id].value;
    const Mat& y2 = tp.nodes_[yi_id].value;
    double g = tp.nodes_[self].grad(0, 0) / static_cast<double>(z2.size());
    Mat d(z2.rows(), z2.cols());
    for (Index i = 0; i < z2.size(); ++i) d(i) = (sigmoid_scalar(z2(i)) - y2(i)) * g;
    tp.accumulate(zi_id, d);
  });
  return {&t, id};
}

}  // namespace odp
