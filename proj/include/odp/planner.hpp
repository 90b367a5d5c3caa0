#pragma once

#include <optional>
#include <string>
#include <vector>

#include "odp/diffusion.hpp"
#include "odp/env.hpp"

namespace odp {

/// Receding-horizon planning policy: sample a guided plan inpainted at the
/// current state, execute its first actions, resample every replan_every
/// steps. The default target context is [1, 1, 0].
struct PlanningPolicy {
  Denoiser* denoiser = nullptr;
  const NoiseSchedule* schedule = nullptr;
  const Normalizer* sa_norm = nullptr;
  SamplerConfig sampler;
  ContextVector target_context = ContextVector::planning_target();
  int replan_every = 4;
  /// When set, execute I_target(s_hat_t, s_hat_{t+1}) from the generated
  /// states instead of the generated actions (the inverse-action variant).
  InverseModel* inverse_action = nullptr;
};

/// Single-episode executor with a cached plan (the spec-level act operation).
class PlanExecutor {
 public:
  PlanExecutor(PlanningPolicy& policy, const EnvParams& env);

  /// Returns the next action, clipped to the control bounds; resamples when
  /// the cached plan is exhausted.
  Eigen::Vector2d act(const EnvState& state, Rng& rng);
  void reset_plan() { age_ = -1; }

 private:
  PlanningPolicy& policy_;
  const EnvParams& env_;
  Mat plan_states_, plan_actions_;
  int age_ = -1;
};

struct EvalReport {
  std::string variant_id;
  std::vector<uint64_t> seeds;
  int episodes_per_seed = 0;
  std::vector<double> returns;  // valid episodes only
  int invalid_count = 0;
  bool flagged = false;  // more than 10% invalid episodes
  double mean_return = 0.0;
  double std_return = 0.0;
  double expert_mean = 0.0;
  double random_mean = 0.0;
  double normalized_score = 0.0;  // 100 (S - S_rand) / (S_expert - S_rand)
  std::vector<double> per_seed_mean;
  std::vector<double> per_seed_norm_score;
};

/// Episodes run in lockstep batches per seed; the expert and random baselines
/// are evaluated on the same start states, which makes the normalization
/// identities exact (expert -> 100, random -> 0).
EvalReport evaluate(PlanningPolicy& policy, const EnvParams& env, const std::string& variant_id,
                    int episodes_per_seed, const std::vector<uint64_t>& seeds);

/// Same protocol for a scripted policy (baselines, sanity checks).
EvalReport evaluate_scripted(const ScriptedPolicy& policy, const EnvParams& env,
                             const std::string& variant_id, int episodes_per_seed,
                             const std::vector<uint64_t>& seeds);

// ---------------------------------------------------------------------------
// ablation grid
// ---------------------------------------------------------------------------
struct AblationVariant {
  enum class Id { r, r_oh, r_ds, r_ds_id, r_ds_ia };
  Id id = Id::r_ds_id;

  std::string name() const;
  /// Channels the variant's denoiser trains with (r_ds_ia trains as r_ds).
  ChannelSetup channels() const;
  bool uses_inverse_action() const { return id == Id::r_ds_ia; }
  /// Planning context [1, 1, 0] restricted to the variant's channels.
  ContextVector planning_context() const;

  static const std::vector<Id>& all();
  static Id parse(const std::string& name);
};

struct AblationRow {
  std::string variant;
  std::string env;
  uint64_t seed = 0;
  double mean_return = 0.0;
  double norm_score = 0.0;
};

struct AblationConfig {
  std::vector<AblationVariant::Id> variants = AblationVariant::all();
  DiffusionTrainConfig train;
  int episodes_per_seed = 50;
  std::vector<uint64_t> eval_seeds = {1, 2, 3};
  uint64_t train_seed = 0;
  int threads = 1;  // independent variant trainings may run in parallel
};

/// Trains one denoiser per variant on the joint data (identical budgets) and
/// evaluates each on the target environment.
std::vector<AblationRow> run_ablation(const Dataset& source, const Dataset& target,
                                      const ContextModels& models, const Normalizer& sa_norm,
                                      const EnvVariant& variant, const AblationConfig& cfg);

// ---------------------------------------------------------------------------
// context interpolation sweep
// ---------------------------------------------------------------------------
struct InterpolationConfig {
  std::string param = "mass";  // mass | friction | control_clip
  double source_value = 1.0;
  double target_value = 2.0;
  std::vector<double> grid;
  int episodes_per_seed = 50;
  std::vector<uint64_t> eval_seeds = {1, 2, 3};
};

struct InterpolationRow {
  double param = 0.0;
  double mean_return = 0.0;
  double std_return = 0.0;
};

/// Linear map of the grid parameter onto the dyn_score channel: source value
/// -> -1, target value -> +1, held at the target context beyond it. Return
/// stays 1 and the inverse channel stays 0 across the grid.
double interpolated_dyn_context(double p, double source_value, double target_value);

/// Evaluates the policy across environments with the swept parameter, feeding
/// the mapped dyn_score context (when the policy's model uses that channel).
std::vector<InterpolationRow> interpolate(PlanningPolicy& policy, const EnvParams& base,
                                          const InterpolationConfig& cfg);

// CSV outputs with fixed columns; the run configuration and its content
// checksum are embedded as '#' header lines.
void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows,
                        const std::string& config_text);
void write_interpolation_csv(const std::string& path, const std::vector<InterpolationRow>& rows,
                             const std::string& config_text);

}  // namespace odp
