#include "odp/planner.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include "odp/errors.hpp"

namespace odp {

namespace {

Eigen::Vector2d clip_action(const Eigen::Vector2d& a, const EnvParams& env) {
  return a.cwiseMax(-env.control_clip).cwiseMin(env.control_clip);
}

void check_policy(const PlanningPolicy& p) {
  if (!p.denoiser || !p.schedule || !p.sa_norm)
    throw ContractError("planning policy: denoiser, schedule and normalizer must be set");
  if (p.replan_every < 1 || p.replan_every > p.denoiser->config().horizon + 1)
    throw ConfigError("replan_every must be in [1, H+1]");
}

}  // namespace

PlanExecutor::PlanExecutor(PlanningPolicy& policy, const EnvParams& env)
    : policy_(policy), env_(env) {
  check_policy(policy);
}

Eigen::Vector2d PlanExecutor::act(const EnvState& state, Rng& rng) {
  if (age_ < 0 || age_ >= policy_.replan_every) {
    Trajectory plan = guided_sample(*policy_.denoiser, *policy_.schedule,
                                    policy_.target_context, policy_.sampler,
                                    state_vec(state), *policy_.sa_norm, rng);
    plan_states_ = plan.states;
    plan_actions_ = plan.actions;
    age_ = 0;
  }
  Eigen::Vector2d a;
  if (policy_.inverse_action) {
    Vec pred = policy_.inverse_action->predict(plan_states_.row(age_).transpose(),
                                               plan_states_.row(age_ + 1).transpose());
    a = {pred(0), pred(1)};
  } else {
    a = {plan_actions_(age_, 0), plan_actions_(age_, 1)};
  }
  ++age_;
  return clip_action(a, env_);
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------
namespace {

struct SeedRun {
  std::vector<double> returns;
  int invalid = 0;
};

// All episodes of one seed stepped in lockstep so denoiser batches span the
// whole set of episodes.
SeedRun run_planner_seed(PlanningPolicy& policy, const EnvParams& env, int episodes,
                         uint64_t seed) {
  const int L = env.episode_len;
  const int sd = policy.denoiser->config().state_dim;
  const int replan = policy.replan_every;

  Rng root(seed);
  Rng reset_root = root.split("reset");
  Rng plan_root = root.split("plan");

  std::vector<EnvState> states(static_cast<size_t>(episodes));
  std::vector<Rng> plan_streams;
  plan_streams.reserve(static_cast<size_t>(episodes));
  for (int i = 0; i < episodes; ++i) {
    Rng r = reset_root.split(static_cast<uint64_t>(i));
    states[static_cast<size_t>(i)] = reset(env, r);
    plan_streams.push_back(plan_root.split(static_cast<uint64_t>(i)));
  }
  std::vector<Rng*> rngs;
  for (Rng& r : plan_streams) rngs.push_back(&r);

  SeedRun out;
  out.returns.assign(static_cast<size_t>(episodes), 0.0);
  std::vector<Mat> plan_states(static_cast<size_t>(episodes));
  std::vector<Mat> plan_actions(static_cast<size_t>(episodes));
  bool batch_valid = true;

  const int H = policy.denoiser->config().horizon;
  for (int t = 0; t < L; ++t) {
    if (t % replan == 0) {
      Mat s0(episodes, sd);
      for (int i = 0; i < episodes; ++i)
        s0.row(i) = state_vec(states[static_cast<size_t>(i)]).transpose();
      try {
        SampleResult res = guided_sample_batch(*policy.denoiser, *policy.schedule,
                                               policy.target_context, policy.sampler, s0,
                                               *policy.sa_norm, rngs);
        for (int i = 0; i < episodes; ++i) {
          Trajectory traj =
              unflatten_trajectory(res.x0.row(i).transpose(), H, *policy.sa_norm);
          plan_states[static_cast<size_t>(i)] = traj.states;
          plan_actions[static_cast<size_t>(i)] = traj.actions;
        }
        batch_valid = true;
      } catch (const NumericalError&) {
        batch_valid = false;  // the whole lockstep batch is invalid
      }
    }
    if (!batch_valid) continue;
    const int off = t % replan;
    for (int i = 0; i < episodes; ++i) {
      Eigen::Vector2d a;
      if (policy.inverse_action) {
        Vec pred = policy.inverse_action->predict(
            plan_states[static_cast<size_t>(i)].row(off).transpose(),
            plan_states[static_cast<size_t>(i)].row(off + 1).transpose());
        a = {pred(0), pred(1)};
      } else {
        a = {plan_actions[static_cast<size_t>(i)](off, 0),
             plan_actions[static_cast<size_t>(i)](off, 1)};
      }
      StepResult r = step(env, states[static_cast<size_t>(i)], clip_action(a, env));
      out.returns[static_cast<size_t>(i)] += r.reward;
      states[static_cast<size_t>(i)] = r.state;
    }
  }
  if (!batch_valid) {
    out.invalid = episodes;
    out.returns.clear();
  }
  return out;
}

SeedRun run_scripted_seed(const ScriptedPolicy& policy, const EnvParams& env, int episodes,
                          uint64_t seed) {
  Rng root(seed);
  Rng reset_root = root.split("reset");
  Rng act_root = root.split("act");
  SeedRun out;
  for (int i = 0; i < episodes; ++i) {
    Rng reset_rng = reset_root.split(static_cast<uint64_t>(i));
    Rng act_rng = act_root.split(static_cast<uint64_t>(i));
    EnvState s = reset(env, reset_rng);
    double total = 0.0;
    for (int t = 0; t < env.episode_len; ++t) {
      StepResult r = step(env, s, policy.act(env, s, act_rng));
      total += r.reward;
      s = r.state;
    }
    out.returns.push_back(total);
  }
  return out;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

template <typename RunSeed>
EvalReport evaluate_impl(RunSeed&& run_seed, const EnvParams& env,
                         const std::string& variant_id, int episodes_per_seed,
                         const std::vector<uint64_t>& seeds) {
  EvalReport rep;
  rep.variant_id = variant_id;
  rep.seeds = seeds;
  rep.episodes_per_seed = episodes_per_seed;

  std::vector<double> expert_all, random_all;
  for (uint64_t seed : seeds) {
    SeedRun run = run_seed(seed);
    SeedRun exp = run_scripted_seed(ScriptedPolicy::expert(), env, episodes_per_seed, seed);
    SeedRun rnd = run_scripted_seed(ScriptedPolicy::random(), env, episodes_per_seed, seed);

    rep.invalid_count += run.invalid;
    rep.returns.insert(rep.returns.end(), run.returns.begin(), run.returns.end());
    expert_all.insert(expert_all.end(), exp.returns.begin(), exp.returns.end());
    random_all.insert(random_all.end(), rnd.returns.begin(), rnd.returns.end());

    const double seed_mean = mean_of(run.returns);
    const double se = mean_of(exp.returns), sr = mean_of(rnd.returns);
    rep.per_seed_mean.push_back(seed_mean);
    rep.per_seed_norm_score.push_back(100.0 * (seed_mean - sr) / (se - sr));
  }

  rep.mean_return = mean_of(rep.returns);
  rep.std_return = std_of(rep.returns);
  rep.expert_mean = mean_of(expert_all);
  rep.random_mean = mean_of(random_all);
  rep.normalized_score =
      100.0 * (rep.mean_return - rep.random_mean) / (rep.expert_mean - rep.random_mean);
  const long total = static_cast<long>(seeds.size()) * episodes_per_seed;
  rep.flagged = rep.invalid_count * 10 > total;
  return rep;
}

}  // namespace

EvalReport evaluate(PlanningPolicy& policy, const EnvParams& env, const std::string& variant_id,
                    int episodes_per_seed, const std::vector<uint64_t>& seeds) {
  check_policy(policy);
  return evaluate_impl(
      [&](uint64_t seed) { return run_planner_seed(policy, env, episodes_per_seed, seed); },
      env, variant_id, episodes_per_seed, seeds);
}

EvalReport evaluate_scripted(const ScriptedPolicy& policy, const EnvParams& env,
                             const std::string& variant_id, int episodes_per_seed,
                             const std::vector<uint64_t>& seeds) {
  return evaluate_impl(
      [&](uint64_t seed) { return run_scripted_seed(policy, env, episodes_per_seed, seed); },
      env, variant_id, episodes_per_seed, seeds);
}

// ---------------------------------------------------------------------------
// ablation
// ---------------------------------------------------------------------------
std::string AblationVariant::name() const {
  switch (id) {
    case Id::r: return "R";
    case Id::r_oh: return "R+OH";
    case Id::r_ds: return "R+DS";
    case Id::r_ds_id: return "R+DS+ID";
    case Id::r_ds_ia: return "R+DS+IA";
  }
  return "?";
}

ChannelSetup AblationVariant::channels() const {
  switch (id) {
    case Id::r: return ChannelSetup::r();
    case Id::r_oh: return ChannelSetup::r_oh();
    case Id::r_ds: return ChannelSetup::r_ds();
    case Id::r_ds_id: return ChannelSetup::r_ds_id();
    case Id::r_ds_ia: return ChannelSetup::r_ds();  // trains as R+DS
  }
  return {};
}

ContextVector AblationVariant::planning_context() const {
  ChannelSetup ch = channels();
  ContextVector ctx;
  ctx.ret = ch.ret ? 1.0 : 0.0;
  ctx.dyn = ch.dyn ? 1.0 : 0.0;
  ctx.inv = 0.0;
  ctx.mask = {ch.ret, ch.dyn, ch.inv};
  return ctx;
}

const std::vector<AblationVariant::Id>& AblationVariant::all() {
  static const std::vector<Id> ids{Id::r, Id::r_oh, Id::r_ds, Id::r_ds_id, Id::r_ds_ia};
  return ids;
}

AblationVariant::Id AblationVariant::parse(const std::string& name) {
  for (Id id : all())
    if (AblationVariant{id}.name() == name) return id;
  throw ConfigError("unknown ablation variant '" + name + "'");
}

std::vector<AblationRow> run_ablation(const Dataset& source, const Dataset& target,
                                      const ContextModels& models, const Normalizer& sa_norm,
                                      const EnvVariant& variant, const AblationConfig& cfg) {
  // R+DS and R+DS+IA share one trained model; collect the distinct setups
  std::vector<ChannelSetup> setups;
  std::vector<int> model_of_variant(cfg.variants.size());
  auto setup_key = [](const ChannelSetup& c) {
    return (c.ret ? 1 : 0) | (c.dyn ? 2 : 0) | (c.inv ? 4 : 0) | (c.dyn_is_onehot ? 8 : 0);
  };
  for (size_t v = 0; v < cfg.variants.size(); ++v) {
    ChannelSetup ch = AblationVariant{cfg.variants[v]}.channels();
    int found = -1;
    for (size_t s = 0; s < setups.size(); ++s)
      if (setup_key(setups[s]) == setup_key(ch)) found = static_cast<int>(s);
    if (found < 0) {
      setups.push_back(ch);
      found = static_cast<int>(setups.size()) - 1;
    }
    model_of_variant[v] = found;
  }

  // identical budgets per variant; seeds derived from the setup index so the
  // result is independent of which variants were requested together
  std::vector<DiffusionTrainResult> trained(setups.size());
  Rng train_root(cfg.train_seed);
  auto train_one = [&](size_t s) {
    trained[s] = train_diffusion(source, target, models, sa_norm, cfg.train, setups[s],
                                 TrainData::both, train_root.split(setup_key(setups[s])));
  };
  if (cfg.threads > 1) {
    std::vector<std::thread> pool;
    std::atomic<size_t> next{0};
    for (int t = 0; t < cfg.threads; ++t)
      pool.emplace_back([&] {
        for (size_t s = next.fetch_add(1); s < setups.size(); s = next.fetch_add(1))
          train_one(s);
      });
    for (auto& th : pool) th.join();
  } else {
    for (size_t s = 0; s < setups.size(); ++s) train_one(s);
  }

  std::vector<AblationRow> rows;
  for (size_t v = 0; v < cfg.variants.size(); ++v) {
    AblationVariant av{cfg.variants[v]};
    DiffusionTrainResult& model = trained[static_cast<size_t>(model_of_variant[v])];
    PlanningPolicy policy;
    policy.denoiser = &model.denoiser;
    policy.schedule = &model.schedule;
    policy.sa_norm = &sa_norm;
    policy.target_context = av.planning_context();
    if (av.uses_inverse_action()) policy.inverse_action = models.inverse;
    EvalReport rep =
        evaluate(policy, variant.target, variant.id, cfg.episodes_per_seed, cfg.eval_seeds);
    for (size_t s = 0; s < cfg.eval_seeds.size(); ++s)
      rows.push_back({av.name(), variant.id, cfg.eval_seeds[s], rep.per_seed_mean[s],
                      rep.per_seed_norm_score[s]});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// interpolation
// ---------------------------------------------------------------------------
double interpolated_dyn_context(double p, double source_value, double target_value) {
  const double raw = 2.0 * (source_value - p) / (source_value - target_value) - 1.0;
  return std::clamp(raw, -1.0, 1.0);  // beyond the endpoints, hold their context
}

std::vector<InterpolationRow> interpolate(PlanningPolicy& policy, const EnvParams& base,
                                          const InterpolationConfig& cfg) {
  check_policy(policy);
  std::vector<InterpolationRow> rows;
  for (double p : cfg.grid) {
    EnvParams env = base;
    if (cfg.param == "mass") env.mass = p;
    else if (cfg.param == "friction") env.friction = p;
    else if (cfg.param == "control_clip") env.control_clip = p;
    else throw ConfigError("interpolate: unknown parameter '" + cfg.param + "'");
    if (env.mass <= 0.0 || env.friction < 0.0 || env.control_clip <= 0.0)
      throw ConfigError("interpolate: grid value " + std::to_string(p) +
                        " leaves the simulable range");

    ContextVector ctx = policy.target_context;
    if (ctx.mask[1]) ctx.dyn = interpolated_dyn_context(p, cfg.source_value, cfg.target_value);
    PlanningPolicy swept = policy;
    swept.target_context = ctx;

    EvalReport rep = evaluate(swept, env, "sweep", cfg.episodes_per_seed, cfg.eval_seeds);
    rows.push_back({p, rep.mean_return, rep.std_return});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// CSV outputs
// ---------------------------------------------------------------------------
namespace {

std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_csv_header(std::ofstream& out, const std::string& config_text) {
  out << "# config-fnv1a = " << std::hex << fnv1a(config_text) << std::dec << "\n";
  std::istringstream cfg(config_text);
  std::string line;
  while (std::getline(cfg, line))
    if (!line.empty()) out << "# " << line << "\n";
}

}  // namespace

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows,
                        const std::string& config_text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  write_csv_header(out, config_text);
  out << "variant,env,seed,mean_return,norm_score\n";
  for (const AblationRow& r : rows)
    out << r.variant << "," << r.env << "," << r.seed << "," << fmt_g(r.mean_return) << ","
        << fmt_g(r.norm_score) << "\n";
  if (!out) throw IoError("write failure: " + path);
}

void write_interpolation_csv(const std::string& path, const std::vector<InterpolationRow>& rows,
                             const std::string& config_text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  write_csv_header(out, config_text);
  out << "param,mean_return,std\n";
  for (const InterpolationRow& r : rows)
    out << fmt_g(r.param) << "," << fmt_g(r.mean_return) << "," << fmt_g(r.std_return) << "\n";
  if (!out) throw IoError("write failure: " + path);
}

}  // namespace odp
