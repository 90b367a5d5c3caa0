#include "odp/env.hpp"

#include <cmath>

#include "odp/errors.hpp"

namespace odp {

StepResult step(const EnvParams& params, const EnvState& state, Eigen::Vector2d action) {
  if (!action.allFinite())
    throw ContractError("env step: non-finite action at step " + std::to_string(state.step_index));
  const double c = params.control_clip;
  Eigen::Vector2d a = action.cwiseMax(-c).cwiseMin(c);

  StepResult out;
  out.state.velocity =
      state.velocity + params.dt * (params.control_gain * a - params.friction * state.velocity) /
                           params.mass;
  out.state.position = state.position + params.dt * out.state.velocity;
  out.state.step_index = state.step_index + 1;
  out.reward = -(out.state.position - params.goal).norm() - 0.01 * a.squaredNorm();
  out.done = out.state.step_index >= params.episode_len;
  return out;
}

EnvState reset(const EnvParams& params, Rng& rng) {
  EnvState s;
  s.position(0) = rng.uniform(params.start_min(0), params.start_max(0));
  s.position(1) = rng.uniform(params.start_min(1), params.start_max(1));
  s.velocity.setZero();
  s.step_index = 0;
  return s;
}

Eigen::Vector2d ScriptedPolicy::act(const EnvParams& params, const EnvState& s, Rng& rng) const {
  switch (kind) {
    case Kind::pd_expert:
      return kp * (params.goal - s.position) - kd * s.velocity;
    case Kind::noisy_suboptimal: {
      Eigen::Vector2d a = kp * (params.goal - s.position) - kd * s.velocity;
      a(0) += noise_std * rng.normal();
      a(1) += noise_std * rng.normal();
      return a;
    }
    case Kind::uniform_random:
      return {rng.uniform(-params.control_clip, params.control_clip),
              rng.uniform(-params.control_clip, params.control_clip)};
  }
  return Eigen::Vector2d::Zero();
}

Episode rollout(const EnvParams& params, const PolicyFn& policy, Rng& rng) {
  const int L = params.episode_len;
  Episode ep;
  ep.states.resize(L + 1, kStateDim);
  ep.actions.resize(L, kActionDim);
  ep.rewards.resize(L);

  EnvState s = reset(params, rng);
  for (int t = 0; t < L; ++t) {
    ep.states.row(t) = state_vec(s).transpose();
    Eigen::Vector2d a = policy(s, rng);
    const double c = params.control_clip;
    Eigen::Vector2d executed = a.cwiseMax(-c).cwiseMin(c);
    StepResult r = step(params, s, a);
    ep.actions.row(t) = executed.transpose();
    ep.rewards(t) = r.reward;
    ep.total_reward += r.reward;
    s = r.state;
  }
  ep.states.row(L) = state_vec(s).transpose();
  return ep;
}

Episode rollout(const EnvParams& params, const ScriptedPolicy& policy, Rng& rng) {
  return rollout(
      params, [&](const EnvState& s, Rng& r) { return policy.act(params, s, r); }, rng);
}

const std::vector<EnvVariant>& env_registry() {
  static const std::vector<EnvVariant> registry = [] {
    EnvParams base;
    std::vector<EnvVariant> v;

    EnvVariant mass{"pointmass-mass-v0", base, base};
    mass.target.mass = 2.0;
    v.push_back(mass);

    EnvVariant ctrl{"pointmass-ctrl-v0", base, base};
    ctrl.target.control_clip = 0.5;
    v.push_back(ctrl);

    EnvVariant fric{"pointmass-friction-v0", base, base};
    fric.target.friction = 0.5;
    v.push_back(fric);

    return v;
  }();
  return registry;
}

const EnvVariant& find_variant(const std::string& id) {
  for (const auto& v : env_registry())
    if (v.id == id) return v;
  std::string known;
  for (const auto& v : env_registry()) known += " " + v.id;
  throw ConfigError("unknown environment variant '" + id + "'; known:" + known);
}

EnvParams resolve_env(const std::string& spec) {
  auto pos = spec.rfind(':');
  if (pos == std::string::npos)
    throw ConfigError("environment spec '" + spec + "' must end with :source or :target");
  const std::string id = spec.substr(0, pos);
  const std::string side = spec.substr(pos + 1);
  const EnvVariant& v = find_variant(id);
  if (side == "source") return v.source;
  if (side == "target") return v.target;
  throw ConfigError("environment spec '" + spec + "': side must be 'source' or 'target'");
}

}  // namespace odp
