#pragma once

#include <array>
#include <functional>
#include <vector>

#include "odp/context.hpp"
#include "odp/dataset.hpp"
#include "odp/nn.hpp"

namespace odp {

/// Diffusion noise schedule: per-step alpha_k and cumulative alpha_bar_k,
/// k = 1..K, with alpha_bar strictly decreasing from ~1 to ~0.
struct NoiseSchedule {
  int K = 0;
  Vec alpha;      // alpha(k-1) holds alpha_k
  Vec alpha_bar;  // alpha_bar(k-1) = prod_{s<=k} alpha_s

  /// Cosine schedule: abar_k = f(k)/f(0), f(k) = cos^2(((k/K + s)/(1+s)) pi/2),
  /// s = 0.008; alphas clipped to [0.001, 0.9999] and abar recomputed so the
  /// product invariant holds exactly.
  static NoiseSchedule cosine(int K);

  double a(int k) const { return alpha(k - 1); }
  double abar(int k) const { return alpha_bar(k - 1); }
  double abar_prev(int k) const { return k > 1 ? alpha_bar(k - 2) : 1.0; }
  /// Posterior variance beta_tilde_k = (1-abar_{k-1})/(1-abar_k) (1-alpha_k).
  double posterior_var(int k) const {
    return (1.0 - abar_prev(k)) / (1.0 - abar(k)) * (1.0 - a(k));
  }
};

/// Closed-form forward marginal x_k = sqrt(abar_k) x0 + sqrt(1-abar_k) eps
/// with the supplied noise.
Mat noised_to(const Mat& x0, int k, const NoiseSchedule& sched, const Mat& eps);

/// Draws eps ~ N(0, I) and returns (x_k, eps).
std::pair<Mat, Mat> forward_noise(const Mat& x0, int k, const NoiseSchedule& sched, Rng& rng);

// ---------------------------------------------------------------------------
// trajectory packing: row-major time-major [s_t | a_t] blocks, normalized to
// [-1, 1] by the state/action normalizer
// ---------------------------------------------------------------------------
Vec flatten_trajectory(const Trajectory& traj, const Normalizer& sa_norm);
/// Inverse of flatten (rewards are zero; generated plans carry none).
Trajectory unflatten_trajectory(const Vec& x, int H, const Normalizer& sa_norm);

struct DenoiserConfig {
  int horizon = 15;
  int state_dim = kStateDim;
  int action_dim = kActionDim;
  int width = 128;
  int blocks = 4;
  int time_dim = 32;
  int ctx_dim = 32;

  int traj_dim() const { return (horizon + 1) * (state_dim + action_dim); }
};

/// Residual MLP over the flattened trajectory window. Input is the noisy
/// trajectory concatenated with a sinusoidal embedding of the step index and
/// the context embedding; output is the predicted noise in trajectory shape.
///
/// Context channels embed as value * w_i + b_i when active; a masked channel
/// contributes its learned null vector instead, so a fully masked context
/// equals the learned null embedding exactly. The output projection starts at
/// zero, making the untrained prediction identically zero.
class Denoiser {
 public:
  Denoiser() = default;
  Denoiser(DenoiserConfig cfg, Rng& rng);

  /// x: B x traj_dim, k: per-row diffusion step in [1, K], ctx/mask: B x 3.
  Var forward(Tape& t, const Mat& x, const std::vector<int>& k, const Mat& ctx,
              const Mat& mask);

  /// Inference with one context shared by all rows.
  Mat predict(const Mat& x, int k, const ContextVector& ctx);

  std::vector<Parameter*> parameters();
  const DenoiserConfig& config() const { return cfg_; }

 private:
  DenoiserConfig cfg_;
  Parameter in_w_, in_b_;
  struct Block {
    Parameter ln_g, ln_b, w1, b1, w2, b2;
  };
  std::vector<Block> blocks_;
  Parameter final_ln_g_, final_ln_b_;
  Parameter out_w_, out_b_;
  Parameter time_w_, time_b_;
  std::array<Parameter, 3> ctx_w_, ctx_b_, ctx_null_;
};

// ---------------------------------------------------------------------------
// training (Algorithm-style loop: stratified batches, per-channel context
// dropout with p = 0.5, uniform k, Adam on the eps-prediction loss)
// ---------------------------------------------------------------------------

/// Which context channels a model trains with (the ablation grid).
struct ChannelSetup {
  bool ret = true;
  bool dyn = true;
  bool inv = false;
  bool dyn_is_onehot = false;  // replace the score with the 0/1 origin label

  static ChannelSetup r() { return {true, false, false, false}; }
  static ChannelSetup r_oh() { return {true, true, false, true}; }
  static ChannelSetup r_ds() { return {true, true, false, false}; }
  static ChannelSetup r_ds_id() { return {true, true, true, false}; }
};

enum class TrainData { both, source_only, target_only };

struct DiffusionTrainConfig {
  int K = 100;
  int horizon = 15;
  int batch = 64;
  long updates = 40000;
  double lr = 2e-4;
  double p_dropout = 0.5;
  int width = 128;
  int blocks = 4;
  int time_dim = 32;
  int ctx_dim = 32;
  long updates_per_epoch = 2000;
};

struct DiffusionTrainResult {
  Denoiser denoiser;
  NoiseSchedule schedule;
  std::vector<double> epoch_loss;
};

DiffusionTrainResult train_diffusion(const Dataset& source, const Dataset& target,
                                     const ContextModels& models, const Normalizer& sa_norm,
                                     const DiffusionTrainConfig& cfg, ChannelSetup channels,
                                     TrainData data_mode, Rng rng);

// ---------------------------------------------------------------------------
// sampling
// ---------------------------------------------------------------------------
struct SamplerConfig {
  double w = 0.9;             // guidance weight, >= 0
  bool inpaint_start = true;  // overwrite the s0 columns after every step
  double hull_expand = 1.1;   // final clamp in normalized space; <= 0 disables
  // Per-step clamp of the implied x0 to the data range (training data lives
  // in [-1, 1]). Keeps the chain stable under imperfect predictions; <= 0
  // disables, leaving the raw epsilon-form reverse step.
  double x0_clip = 1.0;
  std::function<void(const ContextVector&)> context_probe;  // instrumentation
};

/// eps predictor abstraction so oracles can drive the reverse chain directly.
using NoisePredictor = std::function<Mat(const Mat& x, int k)>;

struct SampleResult {
  Mat x0;  // B x dim, normalized space
  long clamp_events = 0;
};

/// Reverse DDPM chain from x_K ~ N(0, I): posterior mean
/// (x - (1-a)/sqrt(1-abar) eps) / sqrt(a) (evaluated through the implied x0,
/// optionally clamped), posterior noise for k > 1, optional per-step
/// inpainting of given columns, optional final hull clamp. One Rng per row
/// keeps episodes on independent streams. Throws NumericalError with the step
/// index if a sample goes non-finite.
SampleResult reverse_sample(const NoisePredictor& eps_fn, const NoiseSchedule& sched, int dim,
                            const std::vector<Rng*>& rngs, const Mat* inpaint_values,
                            int inpaint_cols, double hull_expand, double x0_clip);

/// Classifier-free blend (1+w) eps(ctx) - w eps(null); reduces to the
/// conditional prediction exactly at w = 0 and is affine in w.
Mat guided_prediction(Denoiser& den, const Mat& x, int k, const ContextVector& ctx, double w);

/// Classifier-free guided sampling at a fixed context.
SampleResult guided_sample_batch(Denoiser& den, const NoiseSchedule& sched,
                                 const ContextVector& ctx, const SamplerConfig& cfg,
                                 const Mat& s0_rows, const Normalizer& sa_norm,
                                 const std::vector<Rng*>& rngs);

/// Single-trajectory convenience wrapper (denormalized output).
Trajectory guided_sample(Denoiser& den, const NoiseSchedule& sched, const ContextVector& ctx,
                         const SamplerConfig& cfg, const Vec& s0, const Normalizer& sa_norm,
                         Rng& rng);

}  // namespace odp
