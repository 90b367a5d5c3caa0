#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "odp/context.hpp"
#include "odp/errors.hpp"
#include "support.hpp"

using namespace odp;

namespace {

// Hand-built dataset whose transitions drift by `drift` per step; linearly
// separable from its mirror image by the sign of s' - s.
Dataset drift_dataset(double drift, Origin origin, int episodes, uint64_t seed) {
  Dataset ds;
  ds.episode_len = 16;
  ds.origin = origin;
  Rng rng(seed);
  for (int e = 0; e < episodes; ++e) {
    Episode ep;
    ep.states.resize(ds.episode_len + 1, kStateDim);
    ep.actions.resize(ds.episode_len, kActionDim);
    ep.rewards.resize(ds.episode_len);
    Vec s = rng.normal_vec(kStateDim);
    for (int t = 0; t < ds.episode_len; ++t) {
      ep.states.row(t) = s.transpose();
      ep.actions(t, 0) = rng.uniform(-0.2, 0.2);
      ep.actions(t, 1) = rng.uniform(-0.2, 0.2);
      ep.rewards(t) = rng.uniform(-1.0, 0.0);
      s = s.array() + drift + 0.01 * rng.normal();
      ep.states.row(t + 1) = s.transpose();
    }
    ep.total_reward = ep.rewards.sum();
    ds.episodes.push_back(std::move(ep));
  }
  return ds;
}

ContextTrainConfig quick(long updates) {
  ContextTrainConfig cfg;
  cfg.updates = updates;
  cfg.updates_per_epoch = std::max<long>(1, updates / 8);
  return cfg;
}

}  // namespace

TEST_CASE("dynamics score: zero at p=0.5, exact +-1 at the boundaries") {
  ScoreConfig cfg;
  CHECK(dyn_score_from_probs(Vec::Constant(10, 0.5), cfg) == 0.0);
  CHECK(dyn_score_from_probs(Vec::Constant(10, 1.0), cfg) == 1.0);
  CHECK(dyn_score_from_probs(Vec::Constant(10, 0.0), cfg) == -1.0);
  // kappa invariant ties the scale to epsilon
  CHECK(cfg.kappa == doctest::Approx(std::log((1.0 + cfg.epsilon) / cfg.epsilon)).epsilon(1e-15));
}

TEST_CASE("dynamics score: antisymmetric under source/target swap") {
  ScoreConfig cfg;
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Vec p(15);
    for (Index i = 0; i < p.size(); ++i) p(i) = rng.uniform();
    Vec swapped = Vec::Ones(15) - p;
    CHECK(std::abs(dyn_score_from_probs(p, cfg) + dyn_score_from_probs(swapped, cfg)) <= 1e-12);
  }
}

TEST_CASE("inverse context: zero iff exact, value 1 at normalized error e-1, monotone") {
  CHECK(inv_context_from_errors(Vec::Zero(15)) == 0.0);
  CHECK(inv_context_from_errors(Vec::Constant(15, std::exp(1.0) - 1.0)) ==
        doctest::Approx(1.0).epsilon(1e-12));

  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Vec e(10);
    for (Index i = 0; i < e.size(); ++i) e(i) = rng.uniform(0.0, 2.0);
    CHECK(inv_context_from_errors(e) > 0.0);  // nonzero error -> positive
    Vec bigger = e.array() + 0.1;
    CHECK(inv_context_from_errors(bigger) > inv_context_from_errors(e));
  }
}

TEST_CASE("classifier separates a linearly separable transition set") {
  Dataset src = drift_dataset(+0.1, Origin::source, 40, 11);
  Dataset tgt = drift_dataset(-0.1, Origin::target, 40, 12);
  ClassifierResult res = train_classifier(src, tgt, quick(5000), Rng(13));
  CHECK(res.train_accuracy >= 0.99);
  // loss curve decreases to near zero, nonincreasing up to batch noise
  CHECK(res.epoch_loss.back() < 0.5 * res.epoch_loss.front());
  for (size_t i = 1; i < res.epoch_loss.size(); ++i)
    CHECK(res.epoch_loss[i] <= res.epoch_loss[i - 1] * 1.10 + 1e-3);
}

TEST_CASE("classifier on identical datasets: held-out accuracy ~ 50%") {
  Dataset a = drift_dataset(+0.05, Origin::source, 40, 21);
  Dataset b = drift_dataset(+0.05, Origin::target, 40, 21);  // same seed: identical content
  ClassifierResult res = train_classifier(a, b, quick(2000), Rng(23));

  // balanced held-out set from the same generator; only the first transition
  // of each episode is scored so samples are independent and the binomial
  // bound applies
  Dataset ha = drift_dataset(+0.05, Origin::source, 400, 77);
  Dataset hb = drift_dataset(+0.05, Origin::target, 400, 78);
  auto first_transitions = [](const Dataset& ds) {
    Mat all = transition_matrix(ds);
    Mat firsts(ds.episodes.size(), all.cols());
    for (size_t e = 0; e < ds.episodes.size(); ++e)
      firsts.row(static_cast<Index>(e)) = all.row(static_cast<Index>(e) * ds.episode_len);
    return firsts;
  };
  Vec pa = res.classifier.prob_rows(first_transitions(ha));
  Vec pb = res.classifier.prob_rows(first_transitions(hb));
  long correct = 0;
  for (Index i = 0; i < pa.size(); ++i) correct += pa(i) < 0.5 ? 1 : 0;
  for (Index i = 0; i < pb.size(); ++i) correct += pb(i) > 0.5 ? 1 : 0;
  const double n = static_cast<double>(pa.size() + pb.size());
  const double acc = correct / n;
  const double sigma = std::sqrt(0.25 / n);
  CHECK(std::abs(acc - 0.5) <= 3.0 * sigma);
}

TEST_CASE("classifier outputs live strictly inside (0,1); fitted extremes map to 0 and 1") {
  Dataset src = drift_dataset(+0.1, Origin::source, 10, 31);
  Dataset tgt = drift_dataset(-0.1, Origin::target, 10, 32);
  ClassifierResult res = train_classifier(src, tgt, quick(500), Rng(33));
  Vec ps = res.classifier.prob_rows(transition_matrix(src));
  Vec pt = res.classifier.prob_rows(transition_matrix(tgt));
  CHECK(ps.minCoeff() > 0.0);
  CHECK(ps.maxCoeff() < 1.0);
  const double lo = std::min(ps.minCoeff(), pt.minCoeff());
  const double hi = std::max(ps.maxCoeff(), pt.maxCoeff());
  CHECK(res.out_norm.normalize(lo, 0) == 0.0);
  CHECK(res.out_norm.normalize(hi, 0) == 1.0);
}

TEST_CASE("inverse model recovers actions of invertible dynamics") {
  // point-mass transitions determine the executed action uniquely
  DatasetConfig cfg;
  cfg.n_source = 480;
  cfg.n_target = 4800;
  cfg.seed = 41;
  auto [unused, tgt] = generate_datasets("pointmass-mass-v0", cfg);
  InverseResult res = train_inverse(tgt, quick(8000), Rng(43));

  DatasetConfig hcfg = cfg;
  hcfg.seed = 44;
  auto [unused2, held] = generate_datasets("pointmass-mass-v0", hcfg);
  const Index sd = held.state_dim, L = held.episode_len;
  double mse = 0.0;
  long n = 0;
  for (const Episode& ep : held.episodes) {
    Mat ss(L, 2 * sd);
    ss.leftCols(sd) = ep.states.topRows(L);
    ss.rightCols(sd) = ep.states.bottomRows(L);
    Mat pred = res.inverse.predict_rows(ss);
    mse += (pred - ep.actions).squaredNorm();
    n += pred.size();
  }
  mse /= static_cast<double>(n);
  CHECK(mse < 1e-3);

  // loss curve: nonincreasing up to batch noise
  CHECK(res.epoch_loss.back() < res.epoch_loss.front());
  for (size_t i = 1; i < res.epoch_loss.size(); ++i)
    CHECK(res.epoch_loss[i] <= res.epoch_loss[i - 1] * 1.10 + 1e-4);
}

TEST_CASE("trained inverse loss beats the best constant predictor") {
  Dataset tgt = drift_dataset(-0.1, Origin::target, 40, 51);
  InverseResult res = train_inverse(tgt, quick(3000), Rng(53));

  const Index sd = tgt.state_dim, L = tgt.episode_len;
  Vec mean_action = Vec::Zero(kActionDim);
  long n = 0;
  for (const Episode& ep : tgt.episodes) {
    mean_action += ep.actions.colwise().sum().transpose();
    n += L;
  }
  mean_action /= static_cast<double>(n);

  double model_sse = 0.0, const_sse = 0.0;
  for (const Episode& ep : tgt.episodes) {
    Mat ss(L, 2 * sd);
    ss.leftCols(sd) = ep.states.topRows(L);
    ss.rightCols(sd) = ep.states.bottomRows(L);
    model_sse += (res.inverse.predict_rows(ss) - ep.actions).squaredNorm();
    const_sse += (ep.actions.rowwise() - mean_action.transpose()).squaredNorm();
  }
  CHECK(model_sse <= const_sse);
}

TEST_CASE("conflicting duplicate transitions pull predictions toward their mean") {
  // two episodes sharing identical states but mirrored actions
  Dataset ds;
  ds.episode_len = 8;
  ds.origin = Origin::target;
  Rng rng(61);
  Mat states(ds.episode_len + 1, kStateDim);
  for (Index i = 0; i < states.size(); ++i) states(i) = rng.uniform(-1, 1);
  Mat actions(ds.episode_len, kActionDim);
  for (Index i = 0; i < actions.size(); ++i) actions(i) = rng.uniform(-1, 1);
  for (double sign : {1.0, -1.0}) {
    Episode ep;
    ep.states = states;
    ep.actions = sign * actions;
    ep.rewards = Vec::Zero(ds.episode_len);
    ds.episodes.push_back(std::move(ep));
  }
  InverseResult res = train_inverse(ds, quick(4000), Rng(63));
  Mat ss(ds.episode_len, 2 * kStateDim);
  ss.leftCols(kStateDim) = states.topRows(ds.episode_len);
  ss.rightCols(kStateDim) = states.bottomRows(ds.episode_len);
  Mat pred = res.inverse.predict_rows(ss);
  // mean of the conflicting labels is 0
  CHECK(pred.cwiseAbs().maxCoeff() < 0.08);
}

TEST_CASE("full context on generated data: planning target and smoke directions") {
  CHECK(ContextVector::planning_target().ret == 1.0);
  CHECK(ContextVector::planning_target().dyn == 1.0);
  CHECK(ContextVector::planning_target().inv == 0.0);
  CHECK(ContextVector::planning_target().mask == std::array<bool, 3>{true, true, true});

  DatasetConfig dcfg;
  dcfg.n_source = 4800;
  dcfg.n_target = 2400;
  dcfg.seed = 71;
  auto [src, tgt] = generate_datasets("pointmass-mass-v0", dcfg);

  ClassifierResult cls = train_classifier(src, tgt, quick(4000), Rng(73));
  InverseResult inv = train_inverse(tgt, quick(4000), Rng(74));
  ReturnStats stats = fit_return_stats(src, tgt, 15);
  ContextModels models{&cls.classifier, &cls.out_norm, &inv.inverse, &inv.err_norm, &stats,
                       ScoreConfig()};

  auto sw = make_windows(src, 15);
  auto tw = make_windows(tgt, 15);
  ContextTable st = compute_context_table(src, sw, 15, models);
  ContextTable tt = compute_context_table(tgt, tw, 15, models);

  auto mean_of = [](const std::vector<double>& v) {
    double acc = 0;
    for (double x : v) acc += x;
    return acc / static_cast<double>(v.size());
  };
  // source windows look source-like, target windows target-like
  CHECK(mean_of(st.dyn) < -0.2);
  CHECK(mean_of(tt.dyn) > 0.2);
  // expert source data earns higher normalized returns than noisy target data
  CHECK(mean_of(st.ret) > mean_of(tt.ret));
  // target windows match the target inverse model better than source windows
  CHECK(mean_of(tt.inv) < mean_of(st.inv));

  // the table agrees with the per-trajectory ops
  Rng pick(75);
  for (int i = 0; i < 10; ++i) {
    const size_t j = pick.uniform_int(sw.size());
    Trajectory w = get_window(src, sw[j], 15);
    ContextVector y = full_context(w, models);
    CHECK(y.ret == doctest::Approx(st.ret[j]).epsilon(1e-9));
    CHECK(y.dyn == doctest::Approx(st.dyn[j]).epsilon(1e-9));
    CHECK(y.inv == doctest::Approx(st.inv[j]).epsilon(1e-9));
    CHECK(y.mask == std::array<bool, 3>{true, true, true});
  }

  // unfitted prerequisites are contract errors
  Trajectory w = get_window(src, sw[0], 15);
  CHECK_THROWS_AS(dyn_score(w, cls.classifier, Normalizer(), ScoreConfig()), ContractError);
  CHECK_THROWS_AS(inv_context(w, inv.inverse, Normalizer()), ContractError);
}
