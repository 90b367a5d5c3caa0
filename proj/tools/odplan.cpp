// odplan: off-dynamics trajectory diffusion planning on point-mass tasks.
//
// Pipeline: gen-data -> train-classifier -> train-inverse -> train-diffusion
// -> evaluate / ablation / interpolate. Every artifact embeds the resolved
// run configuration; identical config + seed reproduces identical bytes.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "odp/checkpoint.hpp"
#include "odp/planner.hpp"
#include "odp/selftest.hpp"

namespace fs = std::filesystem;
using namespace odp;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<uint64_t> seed;
  std::optional<std::string> env;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "run configuration file (key = value lines)");
  cmd->add_option("--set", opts.sets, "override a config key, e.g. --set diffusion_updates=4000");
  cmd->add_option("--seed", opts.seed, "override the run seed");
  cmd->add_option("--env", opts.env, "override the environment variant id");
}

RunConfig resolve_config(const CommonOpts& opts, const RunConfig& base = RunConfig()) {
  RunConfig cfg = opts.config_path.empty() ? base : RunConfig::from_file(opts.config_path);
  for (const std::string& kv : opts.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (opts.seed) cfg.seed = *opts.seed;
  if (opts.env) cfg.env = *opts.env;
  return cfg;
}

DatasetConfig dataset_config(const RunConfig& cfg) {
  DatasetConfig d;
  d.gamma = cfg.gamma;
  d.horizon = cfg.horizon;
  d.n_source = cfg.n_source;
  d.n_target = cfg.n_target;
  d.seed = cfg.seed;
  return d;
}

ContextTrainConfig context_config(const RunConfig& cfg) {
  ContextTrainConfig c;
  c.updates = cfg.context_updates;
  c.batch = cfg.context_batch;
  c.lr = cfg.context_lr;
  return c;
}

DiffusionTrainConfig diffusion_config(const RunConfig& cfg) {
  DiffusionTrainConfig d;
  d.K = cfg.diffusion_steps;
  d.horizon = cfg.horizon;
  d.batch = cfg.diffusion_batch;
  d.updates = cfg.diffusion_updates;
  d.lr = cfg.diffusion_lr;
  d.p_dropout = cfg.p_dropout;
  d.width = cfg.width;
  d.blocks = cfg.blocks;
  d.time_dim = cfg.time_dim;
  d.ctx_dim = cfg.ctx_dim;
  return d;
}

TrainData train_data_mode(const RunConfig& cfg) {
  if (cfg.train_data == "source_only") return TrainData::source_only;
  if (cfg.train_data == "target_only") return TrainData::target_only;
  return TrainData::both;
}

uint64_t file_fnv1a(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return fnv1a(bytes.data(), bytes.size());
}

void write_meta(const std::string& artifact_path, const RunConfig& cfg) {
  std::ofstream out(artifact_path + ".meta", std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + artifact_path + ".meta");
  out << "# sidecar for " << fs::path(artifact_path).filename().string() << "\n";
  out << "# content-fnv1a = " << std::hex << file_fnv1a(artifact_path) << std::dec << "\n";
  out << cfg.serialize();
}

std::pair<Dataset, Dataset> load_datasets(const std::string& dir) {
  return {load_dataset(dir + "/source.oddf"), load_dataset(dir + "/target.oddf")};
}

// Fits the dataset-level statistics once, at whichever training stage runs
// first; later stages must agree bit-exactly (same datasets).
void ensure_stats(Checkpoint& ck, const Dataset& src, const Dataset& tgt) {
  if (ck.sa_norm.fitted()) return;
  ck.sa_norm = fit_state_action_normalizer(src, tgt);
  ck.ret_stats = fit_return_stats(src, tgt, ck.config.horizon);
}

Checkpoint load_or_new(const std::string& path, const RunConfig& cfg) {
  if (fs::exists(path)) {
    Checkpoint ck = Checkpoint::load(path);
    ck.config = cfg;
    return ck;
  }
  Checkpoint ck;
  ck.config = cfg;
  return ck;
}

PlanningPolicy make_policy(Checkpoint& ck) {
  if (!ck.denoiser)
    throw StageOrderError("checkpoint has no trained denoiser; run train-diffusion first");
  PlanningPolicy p;
  p.denoiser = &*ck.denoiser;
  p.schedule = &ck.schedule;
  p.sa_norm = &ck.sa_norm;
  p.sampler.w = ck.config.guidance_w;
  p.replan_every = ck.config.replan_every;
  AblationVariant variant{AblationVariant::parse(ck.config.context_variant)};
  p.target_context = variant.planning_context();
  if (variant.uses_inverse_action()) {
    if (!ck.inverse) throw StageOrderError("inverse-action policy needs a fitted inverse model");
    p.inverse_action = &*ck.inverse;
  }
  return p;
}

void print_report(const EvalReport& rep) {
  std::printf("env            %s\n", rep.variant_id.c_str());
  std::printf("episodes       %d x %zu seeds\n", rep.episodes_per_seed, rep.seeds.size());
  std::printf("mean return    %.3f (std %.3f)\n", rep.mean_return, rep.std_return);
  std::printf("norm score     %.2f  (expert %.3f, random %.3f)\n", rep.normalized_score,
              rep.expert_mean, rep.random_mean);
  for (size_t s = 0; s < rep.seeds.size(); ++s)
    std::printf("  seed %llu: mean %.3f, score %.2f\n",
                static_cast<unsigned long long>(rep.seeds[s]), rep.per_seed_mean[s],
                rep.per_seed_norm_score[s]);
  if (rep.invalid_count > 0)
    std::printf("invalid        %d episode(s) excluded%s\n", rep.invalid_count,
                rep.flagged ? "  [FLAGGED >10%]" : "");
}

int run(int argc, char** argv) {
  CLI::App app{"off-dynamics conditional diffusion planner"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string data_dir = "data";
  std::string checkpoint_path = "checkpoint.odck";
  std::string out_path;
  std::string env_spec;
  std::string context_override;
  std::string param = "mass";
  int grid_points = 9;
  std::vector<double> extend;
  int threads = 1;

  auto* gen = app.add_subcommand("gen-data", "roll out the scripted policies into dataset files");
  add_common(gen, opts);
  gen->add_option("--out-dir", data_dir, "output directory");

  auto* tc = app.add_subcommand("train-classifier", "fit the source/target transition classifier");
  add_common(tc, opts);
  tc->add_option("--data-dir", data_dir);
  tc->add_option("--checkpoint", checkpoint_path);

  auto* ti = app.add_subcommand("train-inverse", "fit the target inverse-dynamics model");
  add_common(ti, opts);
  ti->add_option("--data-dir", data_dir);
  ti->add_option("--checkpoint", checkpoint_path);

  auto* td = app.add_subcommand("train-diffusion", "train the conditional diffusion planner");
  add_common(td, opts);
  td->add_option("--data-dir", data_dir);
  td->add_option("--checkpoint", checkpoint_path);

  auto* ev = app.add_subcommand("evaluate", "receding-horizon evaluation on an environment");
  add_common(ev, opts);
  ev->add_option("--checkpoint", checkpoint_path);
  ev->add_option("--env-spec", env_spec, "e.g. pointmass-mass-v0:target (default: config target)");
  ev->add_option("--context", context_override, "override context values, e.g. 1,1,0");
  ev->add_option("--out", out_path, "optional CSV output");

  auto* ab = app.add_subcommand("ablation", "train and evaluate the context-ablation grid");
  add_common(ab, opts);
  ab->add_option("--data-dir", data_dir);
  ab->add_option("--checkpoint", checkpoint_path);
  ab->add_option("--out", out_path, "ablation CSV path")->required();
  ab->add_option("--threads", threads, "parallel variant trainings");

  auto* ip = app.add_subcommand("interpolate", "sweep a dynamics parameter with scaled context");
  add_common(ip, opts);
  ip->add_option("--checkpoint", checkpoint_path);
  ip->add_option("--param", param, "mass | friction | control_clip");
  ip->add_option("--points", grid_points, "grid points between source and target values");
  ip->add_option("--extend", extend, "extra grid values beyond the target");
  ip->add_option("--out", out_path, "interpolation CSV path")->required();

  auto* st = app.add_subcommand("selftest", "run the fast invariant suite");
  (void)st;

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // bad flags/usage are configuration errors
  }

  if (st->parsed()) return run_selftest(std::cout) == 0 ? 0 : 1;

  if (gen->parsed()) {
    RunConfig cfg = resolve_config(opts);
    auto [src, tgt] = generate_datasets(cfg.env, dataset_config(cfg));
    fs::create_directories(data_dir);
    save_dataset(src, data_dir + "/source.oddf");
    save_dataset(tgt, data_dir + "/target.oddf");
    write_meta(data_dir + "/source.oddf", cfg);
    write_meta(data_dir + "/target.oddf", cfg);
    std::printf("wrote %s/source.oddf (%ld transitions, %zu episodes)\n", data_dir.c_str(),
                src.n_transitions(), src.episodes.size());
    std::printf("wrote %s/target.oddf (%ld transitions, %zu episodes)\n", data_dir.c_str(),
                tgt.n_transitions(), tgt.episodes.size());
    std::printf("source.oddf fnv1a %016llx\n",
                static_cast<unsigned long long>(file_fnv1a(data_dir + "/source.oddf")));
    std::printf("target.oddf fnv1a %016llx\n",
                static_cast<unsigned long long>(file_fnv1a(data_dir + "/target.oddf")));
    return 0;
  }

  if (tc->parsed()) {
    RunConfig cfg = resolve_config(opts);
    auto [src, tgt] = load_datasets(data_dir);
    Checkpoint ck = load_or_new(checkpoint_path, cfg);
    ensure_stats(ck, src, tgt);
    ClassifierResult res = train_classifier(src, tgt, context_config(cfg), Rng(cfg.seed).split("classifier"));
    ck.classifier = std::move(res.classifier);
    ck.cls_out_norm = res.out_norm;
    ck.save(checkpoint_path);
    std::printf("classifier: train accuracy %.4f, final loss %.6f -> %s\n", res.train_accuracy,
                res.epoch_loss.back(), checkpoint_path.c_str());
    return 0;
  }

  if (ti->parsed()) {
    RunConfig cfg = resolve_config(opts);
    auto [src, tgt] = load_datasets(data_dir);
    Checkpoint ck = load_or_new(checkpoint_path, cfg);
    ensure_stats(ck, src, tgt);
    InverseResult res = train_inverse(tgt, context_config(cfg), Rng(cfg.seed).split("inverse"));
    ck.inverse = std::move(res.inverse);
    ck.inv_err_norm = res.err_norm;
    ck.save(checkpoint_path);
    std::printf("inverse model: final loss %.6f -> %s\n", res.epoch_loss.back(),
                checkpoint_path.c_str());
    return 0;
  }

  if (td->parsed()) {
    if (!fs::exists(checkpoint_path))
      throw StageOrderError("train-diffusion needs a checkpoint with a fitted classifier and "
                            "inverse model; run train-classifier and train-inverse first");
    Checkpoint ck = Checkpoint::load(checkpoint_path);
    RunConfig cfg = resolve_config(opts, ck.config);
    ck.config = cfg;
    auto [src, tgt] = load_datasets(data_dir);
    ensure_stats(ck, src, tgt);
    ContextModels models = ck.context_models();  // stage-order check lives here
    AblationVariant variant{AblationVariant::parse(cfg.context_variant)};
    DiffusionTrainResult res =
        train_diffusion(src, tgt, models, ck.sa_norm, diffusion_config(cfg), variant.channels(),
                        train_data_mode(cfg), Rng(cfg.seed).split("diffusion"));
    ck.denoiser = std::move(res.denoiser);
    ck.schedule = res.schedule;
    ck.save(checkpoint_path);
    std::printf("denoiser: loss %.4f -> %.4f over %zu epochs -> %s\n", res.epoch_loss.front(),
                res.epoch_loss.back(), res.epoch_loss.size(), checkpoint_path.c_str());
    return 0;
  }

  if (ev->parsed()) {
    Checkpoint ck = Checkpoint::load(checkpoint_path);
    RunConfig cfg = resolve_config(opts, ck.config);
    ck.config = cfg;
    PlanningPolicy policy = make_policy(ck);
    if (!context_override.empty()) {
      ContextVector ctx = policy.target_context;
      double v[3];
      if (std::sscanf(context_override.c_str(), "%lf,%lf,%lf", &v[0], &v[1], &v[2]) != 3)
        throw ConfigError("--context expects three comma-separated values");
      ctx.ret = v[0];
      ctx.dyn = v[1];
      ctx.inv = v[2];
      policy.target_context = ctx;
    }
    const std::string spec = env_spec.empty() ? cfg.env + ":target" : env_spec;
    EnvParams env = resolve_env(spec);
    EvalReport rep = evaluate(policy, env, spec, cfg.eval_episodes, cfg.eval_seed_list());
    print_report(rep);
    if (!out_path.empty()) {
      std::vector<AblationRow> rows;
      for (size_t s = 0; s < rep.seeds.size(); ++s)
        rows.push_back({cfg.context_variant, spec, rep.seeds[s], rep.per_seed_mean[s],
                        rep.per_seed_norm_score[s]});
      write_ablation_csv(out_path, rows, cfg.serialize());
    }
    return 0;
  }

  if (ab->parsed()) {
    Checkpoint ck = Checkpoint::load(checkpoint_path);
    RunConfig cfg = resolve_config(opts, ck.config);
    ck.config = cfg;
    auto [src, tgt] = load_datasets(data_dir);
    ensure_stats(ck, src, tgt);
    ContextModels models = ck.context_models();
    AblationConfig acfg;
    acfg.train = diffusion_config(cfg);
    acfg.episodes_per_seed = cfg.eval_episodes;
    acfg.eval_seeds = cfg.eval_seed_list();
    acfg.train_seed = cfg.seed;
    acfg.threads = threads;
    const EnvVariant& variant = find_variant(cfg.env);
    std::vector<AblationRow> rows =
        run_ablation(src, tgt, models, ck.sa_norm, variant, acfg);
    write_ablation_csv(out_path, rows, cfg.serialize());
    std::printf("wrote %s (%zu rows)\n", out_path.c_str(), rows.size());
    return 0;
  }

  if (ip->parsed()) {
    Checkpoint ck = Checkpoint::load(checkpoint_path);
    RunConfig cfg = resolve_config(opts, ck.config);
    ck.config = cfg;
    PlanningPolicy policy = make_policy(ck);

    const EnvVariant& variant = find_variant(cfg.env);
    InterpolationConfig icfg;
    icfg.param = param;
    if (param == "mass") {
      icfg.source_value = variant.source.mass;
      icfg.target_value = variant.target.mass;
    } else if (param == "friction") {
      icfg.source_value = variant.source.friction;
      icfg.target_value = variant.target.friction;
    } else if (param == "control_clip") {
      icfg.source_value = variant.source.control_clip;
      icfg.target_value = variant.target.control_clip;
    } else {
      throw ConfigError("interpolate: unknown parameter '" + param + "'");
    }
    if (icfg.source_value == icfg.target_value)
      throw ConfigError("interpolate: variant '" + cfg.env + "' does not shift '" + param + "'");
    if (grid_points < 2) throw ConfigError("interpolate: need at least 2 grid points");
    for (int i = 0; i < grid_points; ++i)
      icfg.grid.push_back(icfg.source_value + (icfg.target_value - icfg.source_value) * i /
                                                  (grid_points - 1));
    for (double x : extend) icfg.grid.push_back(x);
    icfg.episodes_per_seed = cfg.eval_episodes;
    icfg.eval_seeds = cfg.eval_seed_list();

    std::vector<InterpolationRow> rows = interpolate(policy, variant.source, icfg);
    write_interpolation_csv(out_path, rows, cfg.serialize());
    std::printf("wrote %s (%zu grid points)\n", out_path.c_str(), rows.size());
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
