#pragma once

#include <functional>
#include <string>
#include <vector>

#include "odp/mat.hpp"
#include "odp/rng.hpp"

namespace odp {

/// Damped point-mass dynamics. Two parameter sets form an off-dynamics pair
/// when they differ in at least one of {mass, friction, control_gain,
/// control_clip} and nothing else; reward and task stay identical.
struct EnvParams {
  double mass = 1.0;          // kg, > 0
  double friction = 0.1;      // viscous coefficient, >= 0
  double control_gain = 2.0;  // > 0
  double control_clip = 1.0;  // symmetric action bound, > 0
  double dt = 0.05;           // s
  Eigen::Vector2d goal{1.5, 1.5};
  int episode_len = 48;
  Eigen::Vector2d start_min{-1.0, -1.0};
  Eigen::Vector2d start_max{1.0, 1.0};
};

struct EnvState {
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
  Eigen::Vector2d velocity = Eigen::Vector2d::Zero();
  int step_index = 0;
};

struct StepResult {
  EnvState state;
  double reward = 0.0;
  bool done = false;
};

constexpr int kStateDim = 4;   // position (2) + velocity (2)
constexpr int kActionDim = 2;

inline Vec state_vec(const EnvState& s) {
  Vec v(kStateDim);
  v << s.position(0), s.position(1), s.velocity(0), s.velocity(1);
  return v;
}

/// Semi-implicit Euler step. Actions are clipped to [-control_clip,
/// control_clip] before integration so the clip genuinely changes dynamics.
/// reward = -|x' - goal| - 0.01 |a|^2 with the executed (clipped) action.
StepResult step(const EnvParams& params, const EnvState& state, Eigen::Vector2d action);

/// Uniform position in the start box, zero velocity.
EnvState reset(const EnvParams& params, Rng& rng);

struct ScriptedPolicy {
  enum class Kind { pd_expert, noisy_suboptimal, uniform_random };
  Kind kind = Kind::pd_expert;
  double kp = 8.0;
  double kd = 4.0;
  double noise_std = 0.0;  // 0 for pd_expert, > 0 for noisy_suboptimal

  Eigen::Vector2d act(const EnvParams& params, const EnvState& s, Rng& rng) const;

  static ScriptedPolicy expert() { return {Kind::pd_expert, 8.0, 4.0, 0.0}; }
  static ScriptedPolicy noisy() { return {Kind::noisy_suboptimal, 2.0, 4.0, 0.8}; }
  static ScriptedPolicy random() { return {Kind::uniform_random, 0.0, 0.0, 0.0}; }
};

using PolicyFn = std::function<Eigen::Vector2d(const EnvState&, Rng&)>;

/// One stored episode: L+1 states, L executed (clipped) actions, L rewards.
struct Episode {
  Mat states;   // (L+1) x kStateDim
  Mat actions;  // L x kActionDim
  Vec rewards;  // L
  double total_reward = 0.0;
  bool valid = true;
};

Episode rollout(const EnvParams& params, const PolicyFn& policy, Rng& rng);
Episode rollout(const EnvParams& params, const ScriptedPolicy& policy, Rng& rng);

/// Registered off-dynamics variant: same task, shifted dynamics.
struct EnvVariant {
  std::string id;
  EnvParams source;
  EnvParams target;
};

const std::vector<EnvVariant>& env_registry();
const EnvVariant& find_variant(const std::string& id);
/// Resolves "pointmass-mass-v0:source" / ":target" style ids.
EnvParams resolve_env(const std::string& spec);

}  // namespace odp
