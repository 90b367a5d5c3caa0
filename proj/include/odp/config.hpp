#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace odp {

/// Flat key = value run configuration. A RunConfig plus a seed fully
/// determines every artifact; its serialized text is embedded in checkpoints
/// and CSV outputs and written as a sidecar next to dataset files.
struct RunConfig {
  // environment / data
  std::string env = "pointmass-mass-v0";
  uint64_t seed = 0;
  double gamma = 0.99;
  long n_source = 200000;
  long n_target = 10000;
  int horizon = 15;

  // classifier / inverse-model training
  long context_updates = 20000;
  int context_batch = 256;
  double context_lr = 1e-3;
  double epsilon = 1e-4;  // dynamics-score epsilon; kappa derives from it

  // diffusion training
  int diffusion_steps = 100;  // K
  long diffusion_updates = 40000;
  int diffusion_batch = 64;
  double diffusion_lr = 2e-4;
  double p_dropout = 0.5;
  int width = 128;
  int blocks = 4;
  int time_dim = 32;
  int ctx_dim = 32;
  std::string context_variant = "R+DS+ID";  // ablation grid id
  std::string train_data = "both";          // both | source_only | target_only

  // planning / evaluation
  double guidance_w = 0.9;
  int replan_every = 4;
  int eval_episodes = 50;
  std::string eval_seeds = "1,2,3";

  /// Sorted "key = value" lines; doubles round-trip exactly.
  std::string serialize() const;
  static RunConfig from_text(const std::string& text);
  static RunConfig from_file(const std::string& path);
  /// Typed assignment; unknown keys and malformed values are ConfigErrors.
  void set(const std::string& key, const std::string& value);

  std::vector<uint64_t> eval_seed_list() const;
};

}  // namespace odp
