#include "odp/context.hpp"

#include <algorithm>
#include <cmath>

#include "odp/errors.hpp"

namespace odp {

namespace {

constexpr Index kChunk = 16384;

Vec sigmoid_vec(const Mat& z) {
  Vec out(z.rows());
  for (Index i = 0; i < z.rows(); ++i) {
    const double x = z(i, 0);
    out(i) = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  return out;
}

}  // namespace

Vec DynamicsClassifier::prob_rows(const Mat& sas) {
  Vec out(sas.rows());
  for (Index at = 0; at < sas.rows(); at += kChunk) {
    const Index n = std::min(kChunk, sas.rows() - at);
    out.segment(at, n) = sigmoid_vec(net(sas.middleRows(at, n)));
  }
  return out;
}

double DynamicsClassifier::prob(const Vec& s, const Vec& a, const Vec& s_next) {
  Mat row(1, s.size() + a.size() + s_next.size());
  row << s.transpose(), a.transpose(), s_next.transpose();
  return prob_rows(row)(0);
}

Mat InverseModel::predict_rows(const Mat& ss) {
  Mat out(ss.rows(), net.out_dim());
  for (Index at = 0; at < ss.rows(); at += kChunk) {
    const Index n = std::min(kChunk, ss.rows() - at);
    out.middleRows(at, n) = net(ss.middleRows(at, n));
  }
  return out;
}

Vec InverseModel::predict(const Vec& s, const Vec& s_next) {
  Mat row(1, s.size() + s_next.size());
  row << s.transpose(), s_next.transpose();
  return predict_rows(row).row(0).transpose();
}

Mat transition_matrix(const Dataset& ds) {
  const Index sd = ds.state_dim, ad = ds.action_dim, L = ds.episode_len;
  Mat rows(ds.n_transitions(), 2 * sd + ad);
  Index r = 0;
  for (const Episode& ep : ds.episodes) {
    rows.block(r, 0, L, sd) = ep.states.topRows(L);
    rows.block(r, sd, L, ad) = ep.actions;
    rows.block(r, sd + ad, L, sd) = ep.states.bottomRows(L);
    r += L;
  }
  return rows;
}

ClassifierResult train_classifier(const Dataset& source, const Dataset& target,
                                  const ContextTrainConfig& cfg, Rng rng) {
  if (source.episodes.empty() || target.episodes.empty())
    throw ContractError("train_classifier: both datasets must be nonempty");

  const Mat src_rows = transition_matrix(source);
  const Mat tgt_rows = transition_matrix(target);
  const Index dim = src_rows.cols();

  ClassifierResult res;
  Rng init = rng.split("init");
  res.classifier = DynamicsClassifier(init);
  Adam opt(res.classifier.net.parameters(), {.lr = cfg.lr});
  Rng batch_rng = rng.split("batches");

  const int half = cfg.batch / 2;
  Mat x(cfg.batch, dim);
  Mat y(cfg.batch, 1);
  y.topRows(half).setZero();   // source label 0
  y.bottomRows(half).setOnes();  // target label 1

  double bucket = 0.0;
  long in_bucket = 0;
  for (long u = 0; u < cfg.updates; ++u) {
    StratifiedIndices idx = stratified_indices(static_cast<size_t>(src_rows.rows()),
                                               static_cast<size_t>(tgt_rows.rows()),
                                               cfg.batch, batch_rng);
    for (int i = 0; i < half; ++i) x.row(i) = src_rows.row(idx.source[i]);
    for (int i = 0; i < half; ++i) x.row(half + i) = tgt_rows.row(idx.target[i]);

    Tape t;
    Var loss = bce_with_logits(res.classifier.net.forward(t, t.constant(x)), t.constant(y));
    const double lv = t.value(loss)(0, 0);
    if (!std::isfinite(lv))
      throw NumericalError("train_classifier: loss diverged at update " + std::to_string(u));
    opt.zero_grad();
    t.backward(loss);
    opt.step();

    bucket += lv;
    if (++in_bucket == cfg.updates_per_epoch || u + 1 == cfg.updates) {
      res.epoch_loss.push_back(bucket / static_cast<double>(in_bucket));
      bucket = 0.0;
      in_bucket = 0;
    }
  }

  // min-max normalizer over raw outputs on the union dataset
  Vec ps = res.classifier.prob_rows(src_rows);
  Vec pt = res.classifier.prob_rows(tgt_rows);
  Vec mn(1), mx(1);
  mn(0) = std::min(ps.minCoeff(), pt.minCoeff());
  mx(0) = std::max(ps.maxCoeff(), pt.maxCoeff());
  res.out_norm = Normalizer(mn, mx, Normalizer::Mode::to_unit);

  long correct = 0;
  for (Index i = 0; i < ps.size(); ++i) correct += ps(i) < 0.5 ? 1 : 0;
  for (Index i = 0; i < pt.size(); ++i) correct += pt(i) > 0.5 ? 1 : 0;
  res.train_accuracy = static_cast<double>(correct) / static_cast<double>(ps.size() + pt.size());
  return res;
}

InverseResult train_inverse(const Dataset& target, const ContextTrainConfig& cfg, Rng rng) {
  if (target.episodes.empty()) throw ContractError("train_inverse: empty dataset");

  const Index sd = target.state_dim, ad = target.action_dim, L = target.episode_len;
  const Index n = target.n_transitions();
  Mat xs(n, 2 * sd);
  Mat as(n, ad);
  Index r = 0;
  for (const Episode& ep : target.episodes) {
    xs.block(r, 0, L, sd) = ep.states.topRows(L);
    xs.block(r, sd, L, sd) = ep.states.bottomRows(L);
    as.middleRows(r, L) = ep.actions;
    r += L;
  }

  InverseResult res;
  Rng init = rng.split("init");
  res.inverse = InverseModel(init);
  Adam opt(res.inverse.net.parameters(), {.lr = cfg.lr});
  Rng batch_rng = rng.split("batches");

  Mat bx(cfg.batch, 2 * sd), ba(cfg.batch, ad);
  double bucket = 0.0;
  long in_bucket = 0;
  for (long u = 0; u < cfg.updates; ++u) {
    for (int i = 0; i < cfg.batch; ++i) {
      const Index j = static_cast<Index>(batch_rng.uniform_int(static_cast<uint64_t>(n)));
      bx.row(i) = xs.row(j);
      ba.row(i) = as.row(j);
    }
    Tape t;
    Var d = res.inverse.net.forward(t, t.constant(bx)) - t.constant(ba);
    Var loss = mean(d * d);
    const double lv = t.value(loss)(0, 0);
    if (!std::isfinite(lv))
      throw NumericalError("train_inverse: loss diverged at update " + std::to_string(u));
    opt.zero_grad();
    t.backward(loss);
    opt.step();

    bucket += lv;
    if (++in_bucket == cfg.updates_per_epoch || u + 1 == cfg.updates) {
      res.epoch_loss.push_back(bucket / static_cast<double>(in_bucket));
      bucket = 0.0;
      in_bucket = 0;
    }
  }

  // error normalizer with min pinned at the natural zero, so a zero raw error
  // stays exactly zero after normalization
  Mat pred = res.inverse.predict_rows(xs);
  double max_err = 0.0;
  for (Index i = 0; i < n; ++i)
    max_err = std::max(max_err, (pred.row(i) - as.row(i)).norm());
  res.err_norm = Normalizer(Vec::Zero(1), Vec::Constant(1, max_err), Normalizer::Mode::to_unit);
  return res;
}

double dyn_score_from_probs(const Vec& p_hat, const ScoreConfig& cfg) {
  if (p_hat.size() == 0) throw ContractError("dyn_score: no transitions");
  double acc = 0.0;
  for (Index i = 0; i < p_hat.size(); ++i) {
    const double pt = p_hat(i), ps = 1.0 - p_hat(i);
    acc += (std::log(pt + cfg.epsilon) - std::log(ps + cfg.epsilon)) / cfg.kappa;
  }
  return std::clamp(acc / static_cast<double>(p_hat.size()), -1.0, 1.0);
}

double inv_context_from_errors(const Vec& e_hat) {
  if (e_hat.size() == 0) throw ContractError("inv_context: no transitions");
  double acc = 0.0;
  for (Index i = 0; i < e_hat.size(); ++i) acc += std::log1p(std::max(0.0, e_hat(i)));
  return acc / static_cast<double>(e_hat.size());
}

namespace {

// Rows [s_t | a_t | s_{t+1}] for the H transitions of a window.
Mat window_sas(const Trajectory& traj) {
  const Index H = traj.states.rows() - 1;
  const Index sd = traj.states.cols(), ad = traj.actions.cols();
  Mat rows(H, 2 * sd + ad);
  rows.leftCols(sd) = traj.states.topRows(H);
  rows.middleCols(sd, ad) = traj.actions.topRows(H);
  rows.rightCols(sd) = traj.states.bottomRows(H);
  return rows;
}

Mat window_ss(const Trajectory& traj) {
  const Index H = traj.states.rows() - 1;
  const Index sd = traj.states.cols();
  Mat rows(H, 2 * sd);
  rows.leftCols(sd) = traj.states.topRows(H);
  rows.rightCols(sd) = traj.states.bottomRows(H);
  return rows;
}

}  // namespace

double dyn_score(const Trajectory& traj, DynamicsClassifier& classifier,
                 const Normalizer& out_norm, const ScoreConfig& cfg) {
  if (!out_norm.fitted()) throw ContractError("dyn_score: output normalizer not fitted");
  Vec p_raw = classifier.prob_rows(window_sas(traj));
  Vec p_hat(p_raw.size());
  for (Index i = 0; i < p_raw.size(); ++i)
    p_hat(i) = std::clamp(out_norm.normalize(p_raw(i), 0), 0.0, 1.0);
  return dyn_score_from_probs(p_hat, cfg);
}

double inv_context(const Trajectory& traj, InverseModel& inverse, const Normalizer& err_norm) {
  if (!err_norm.fitted()) throw ContractError("inv_context: error normalizer not fitted");
  const Index H = traj.states.rows() - 1;
  Mat pred = inverse.predict_rows(window_ss(traj));
  Vec e_hat(H);
  for (Index t = 0; t < H; ++t) {
    const double raw = (pred.row(t) - traj.actions.row(t)).norm();
    e_hat(t) = err_norm.normalize(raw, 0);
  }
  return inv_context_from_errors(e_hat);
}

ContextVector full_context(const Trajectory& traj, const ContextModels& m) {
  if (!m.classifier || !m.inverse || !m.ret_stats)
    throw ContractError("full_context: classifier, inverse model and return stats required");
  ContextVector y;
  y.ret = normalized_return(traj, *m.ret_stats);
  y.dyn = dyn_score(traj, *m.classifier, *m.cls_norm, m.score);
  y.inv = inv_context(traj, *m.inverse, *m.err_norm);
  y.mask = {true, true, true};
  return y;
}

ContextTable compute_context_table(const Dataset& ds, const std::vector<WindowRef>& windows,
                                   int H, const ContextModels& m) {
  if (!m.classifier || !m.inverse || !m.ret_stats)
    throw ContractError("compute_context_table: models and stats required");

  // per-transition score and error terms for the whole dataset, then direct
  // sums per window (the models are frozen, so this matches the per-window ops)
  const Mat sas = transition_matrix(ds);
  Vec p_raw = m.classifier->prob_rows(sas);

  const Index sd = ds.state_dim;
  Mat ss(sas.rows(), 2 * sd);
  ss.leftCols(sd) = sas.leftCols(sd);
  ss.rightCols(sd) = sas.rightCols(sd);
  Mat pred = m.inverse->predict_rows(ss);

  Vec score_term(sas.rows()), err_term(sas.rows());
  for (Index i = 0; i < sas.rows(); ++i) {
    const double p_hat = std::clamp(m.cls_norm->normalize(p_raw(i), 0), 0.0, 1.0);
    score_term(i) =
        (std::log(p_hat + m.score.epsilon) - std::log(1.0 - p_hat + m.score.epsilon)) /
        m.score.kappa;
    const double e_hat =
        std::max(0.0, m.err_norm->normalize(
                          (pred.row(i) - sas.row(i).segment(sd, ds.action_dim)).norm(), 0));
    err_term(i) = std::log1p(e_hat);
  }

  ContextTable table;
  table.ret.reserve(windows.size());
  table.dyn.reserve(windows.size());
  table.inv.reserve(windows.size());
  for (const WindowRef& w : windows) {
    const Index base = static_cast<Index>(w.episode) * ds.episode_len + w.start;
    double s_acc = 0.0, e_acc = 0.0;
    for (int t = 0; t < H; ++t) {
      s_acc += score_term(base + t);
      e_acc += err_term(base + t);
    }
    table.dyn.push_back(std::clamp(s_acc / H, -1.0, 1.0));
    table.inv.push_back(e_acc / H);
    const double r = window_return(ds, w, H);
    table.ret.push_back(
        std::clamp((r - m.ret_stats->rmin) / (m.ret_stats->rmax - m.ret_stats->rmin), 0.0, 1.0));
  }
  return table;
}

}  // namespace odp
