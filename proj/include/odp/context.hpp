#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "odp/dataset.hpp"
#include "odp/nn.hpp"

namespace odp {

/// Scale configuration for the dynamics score. kappa is derived from epsilon
/// as log((1+eps)/eps), which pins per-transition scores to exactly [-1, 1]
/// when probabilities are min-max normalized to [0, 1].
struct ScoreConfig {
  double epsilon;
  double kappa;

  // kappa = log((1+eps)/eps), evaluated as the same log difference the
  // per-transition score uses so the boundary values are exactly +-1.
  explicit ScoreConfig(double eps = 1e-4)
      : epsilon(eps), kappa(std::log(1.0 + eps) - std::log(eps)) {}
};

/// y(tau) = [normalized return, dynamics score, inverse context]. A masked-out
/// channel is encoded as value 0 with its mask bit false, which is distinct
/// from an active 0.
struct ContextVector {
  double ret = 0.0;
  double dyn = 0.0;
  double inv = 0.0;
  std::array<bool, 3> mask{false, false, false};

  /// The planning target: perfectly target-like dynamics, maximal return,
  /// zero inverse error.
  static ContextVector planning_target() { return {1.0, 1.0, 0.0, {true, true, true}}; }
  static ContextVector null() { return {}; }
};

/// Binary transition classifier p(target | s, a, s'), MLP 2 hidden x 32, Mish,
/// sigmoid head. Raw outputs live strictly inside (0, 1).
class DynamicsClassifier {
 public:
  DynamicsClassifier() = default;
  explicit DynamicsClassifier(Rng& rng)
      : net("classifier", 2 * kStateDim + kActionDim, {32, 32}, 1, rng) {}

  /// Sigmoid probabilities for rows of [s | a | s'].
  Vec prob_rows(const Mat& sas);
  double prob(const Vec& s, const Vec& a, const Vec& s_next);

  Mlp net;
};

/// Target inverse-dynamics model a = I(s, s'), MLP 2 hidden x 32.
class InverseModel {
 public:
  InverseModel() = default;
  explicit InverseModel(Rng& rng)
      : net("inverse", 2 * kStateDim, {32, 32}, kActionDim, rng) {}

  /// Predicted actions for rows of [s | s'].
  Mat predict_rows(const Mat& ss);
  Vec predict(const Vec& s, const Vec& s_next);

  Mlp net;
};

struct ContextTrainConfig {
  long updates = 20000;
  int batch = 256;
  double lr = 1e-3;
  long updates_per_epoch = 1000;  // granularity of the reported loss curve
};

struct ClassifierResult {
  DynamicsClassifier classifier;
  Normalizer out_norm;            // to_unit over raw outputs on the union set
  std::vector<double> epoch_loss;
  double train_accuracy = 0.0;    // on stratified batches at the end
};

/// Fits the classifier on 1:1 stratified transition batches (labels: source 0,
/// target 1), then fits the output normalizer over the union dataset.
ClassifierResult train_classifier(const Dataset& source, const Dataset& target,
                                  const ContextTrainConfig& cfg, Rng rng);

struct InverseResult {
  InverseModel inverse;
  Normalizer err_norm;            // to_unit over per-transition L2 errors, min pinned to 0
  std::vector<double> epoch_loss;
};

/// Fits the inverse model on target transitions only (Eq. over D_target), then
/// fits the error normalizer with min pinned at the natural zero.
InverseResult train_inverse(const Dataset& target, const ContextTrainConfig& cfg, Rng rng);

/// All transitions of a dataset as rows of [s | a | s'].
Mat transition_matrix(const Dataset& ds);

// ---------------------------------------------------------------------------
// score maps (pure forms operating on already-normalized inputs)
// ---------------------------------------------------------------------------

/// Mean over transitions of (1/kappa) [log(p_hat + eps) - log(1 - p_hat + eps)],
/// clamped to [-1, 1]. p_hat are min-max normalized target probabilities.
double dyn_score_from_probs(const Vec& p_hat, const ScoreConfig& cfg);

/// Mean over transitions of log(1 + e_hat), e_hat the normalized action
/// prediction error; 0 iff every prediction is exact.
double inv_context_from_errors(const Vec& e_hat);

// ---------------------------------------------------------------------------
// per-trajectory contexts
// ---------------------------------------------------------------------------
double dyn_score(const Trajectory& traj, DynamicsClassifier& classifier,
                 const Normalizer& out_norm, const ScoreConfig& cfg);

double inv_context(const Trajectory& traj, InverseModel& inverse, const Normalizer& err_norm);

struct ContextModels {
  DynamicsClassifier* classifier = nullptr;
  const Normalizer* cls_norm = nullptr;
  InverseModel* inverse = nullptr;
  const Normalizer* err_norm = nullptr;
  const ReturnStats* ret_stats = nullptr;
  ScoreConfig score;
};

ContextVector full_context(const Trajectory& traj, const ContextModels& models);

/// Precomputed per-window contexts for a window list (the models are frozen
/// before diffusion training, so batch lookups replace per-batch recompute).
struct ContextTable {
  std::vector<double> ret, dyn, inv;
};

ContextTable compute_context_table(const Dataset& ds, const std::vector<WindowRef>& windows,
                                   int H, const ContextModels& models);

}  // namespace odp
