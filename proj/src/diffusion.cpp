#include "odp/diffusion.hpp"

#include <cmath>
#include <numbers>

#include "odp/errors.hpp"

namespace odp {

NoiseSchedule NoiseSchedule::cosine(int K) {
  if (K < 2) throw ConfigError("noise schedule needs K >= 2, got " + std::to_string(K));
  const double s = 0.008;
  auto f = [&](double k) {
    const double u = ((k / K + s) / (1.0 + s)) * std::numbers::pi / 2.0;
    const double c = std::cos(u);
    return c * c;
  };
  NoiseSchedule sched;
  sched.K = K;
  sched.alpha.resize(K);
  sched.alpha_bar.resize(K);
  double prev_abar_raw = 1.0;  // f(0)/f(0)
  double abar = 1.0;
  for (int k = 1; k <= K; ++k) {
    const double abar_raw = f(k) / f(0);
    const double a = std::clamp(abar_raw / prev_abar_raw, 0.001, 0.9999);
    prev_abar_raw = abar_raw;
    abar *= a;
    sched.alpha(k - 1) = a;
    sched.alpha_bar(k - 1) = abar;
  }
  return sched;
}

Mat noised_to(const Mat& x0, int k, const NoiseSchedule& sched, const Mat& eps) {
  if (k < 1 || k > sched.K)
    throw ContractError("forward_noise: step " + std::to_string(k) + " outside [1, " +
                        std::to_string(sched.K) + "]");
  const double ab = sched.abar(k);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

std::pair<Mat, Mat> forward_noise(const Mat& x0, int k, const NoiseSchedule& sched, Rng& rng) {
  Mat eps = rng.normal_mat(x0.rows(), x0.cols());
  return {noised_to(x0, k, sched, eps), std::move(eps)};
}

Vec flatten_trajectory(const Trajectory& traj, const Normalizer& sa_norm) {
  const Index H1 = traj.states.rows();
  const Index sd = traj.states.cols(), ad = traj.actions.cols();
  Vec x(H1 * (sd + ad));
  for (Index t = 0; t < H1; ++t) {
    for (Index j = 0; j < sd; ++j) x(t * (sd + ad) + j) = sa_norm.normalize(traj.states(t, j), j);
    for (Index j = 0; j < ad; ++j)
      x(t * (sd + ad) + sd + j) = sa_norm.normalize(traj.actions(t, j), sd + j);
  }
  return x;
}

Trajectory unflatten_trajectory(const Vec& x, int H, const Normalizer& sa_norm) {
  const Index sd = sa_norm.dims() - kActionDim, ad = kActionDim;
  if (x.size() != (H + 1) * (sd + ad))
    throw ContractError("unflatten_trajectory: dim mismatch");
  Trajectory traj;
  traj.states.resize(H + 1, sd);
  traj.actions.resize(H + 1, ad);
  traj.rewards = Vec::Zero(H + 1);
  for (Index t = 0; t <= H; ++t) {
    for (Index j = 0; j < sd; ++j)
      traj.states(t, j) = sa_norm.denormalize(x(t * (sd + ad) + j), j);
    for (Index j = 0; j < ad; ++j)
      traj.actions(t, j) = sa_norm.denormalize(x(t * (sd + ad) + sd + j), sd + j);
  }
  return traj;
}

// ---------------------------------------------------------------------------
// denoiser
// ---------------------------------------------------------------------------
namespace {

Mat time_features(const std::vector<int>& k, int dim) {
  const int half = dim / 2;
  Mat out(static_cast<Index>(k.size()), dim);
  for (Index r = 0; r < out.rows(); ++r) {
    for (int i = 0; i < half; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / half);
      out(r, i) = std::sin(k[static_cast<size_t>(r)] * freq);
      out(r, half + i) = std::cos(k[static_cast<size_t>(r)] * freq);
    }
  }
  return out;
}

}  // namespace

Denoiser::Denoiser(DenoiserConfig cfg, Rng& rng) : cfg_(cfg) {
  const int in_dim = cfg.traj_dim() + cfg.time_dim + cfg.ctx_dim;
  in_w_ = Parameter("denoiser.in.w", init_he(in_dim, cfg.width, rng));
  in_b_ = Parameter("denoiser.in.b", Mat::Zero(1, cfg.width));
  for (int b = 0; b < cfg.blocks; ++b) {
    const std::string tag = "denoiser.block" + std::to_string(b);
    Block blk;
    blk.ln_g = Parameter(tag + ".ln.g", Mat::Ones(1, cfg.width));
    blk.ln_b = Parameter(tag + ".ln.b", Mat::Zero(1, cfg.width));
    blk.w1 = Parameter(tag + ".w1", init_he(cfg.width, cfg.width, rng));
    blk.b1 = Parameter(tag + ".b1", Mat::Zero(1, cfg.width));
    blk.w2 = Parameter(tag + ".w2", init_he(cfg.width, cfg.width, rng));
    blk.b2 = Parameter(tag + ".b2", Mat::Zero(1, cfg.width));
    blocks_.push_back(std::move(blk));
  }
  final_ln_g_ = Parameter("denoiser.final_ln.g", Mat::Ones(1, cfg.width));
  final_ln_b_ = Parameter("denoiser.final_ln.b", Mat::Zero(1, cfg.width));
  // zero-initialized head: the untrained model predicts zero noise
  out_w_ = Parameter("denoiser.out.w", Mat::Zero(cfg.width, cfg.traj_dim()));
  out_b_ = Parameter("denoiser.out.b", Mat::Zero(1, cfg.traj_dim()));
  time_w_ = Parameter("denoiser.time.w", init_he(cfg.time_dim, cfg.time_dim, rng));
  time_b_ = Parameter("denoiser.time.b", Mat::Zero(1, cfg.time_dim));
  for (int i = 0; i < 3; ++i) {
    const std::string tag = "denoiser.ctx" + std::to_string(i);
    ctx_w_[i] = Parameter(tag + ".w", init_he(1, cfg.ctx_dim, rng));
    ctx_b_[i] = Parameter(tag + ".b", Mat::Zero(1, cfg.ctx_dim));
    ctx_null_[i] = Parameter(tag + ".null", init_he(1, cfg.ctx_dim, rng));
  }
}

Var Denoiser::forward(Tape& t, const Mat& x, const std::vector<int>& k, const Mat& ctx,
                      const Mat& mask) {
  if (x.cols() != cfg_.traj_dim())
    throw ContractError("denoiser: input dim " + shape_str(x) + ", expected cols " +
                        std::to_string(cfg_.traj_dim()));
  if (static_cast<Index>(k.size()) != x.rows() || ctx.rows() != x.rows() || ctx.cols() != 3 ||
      mask.rows() != x.rows() || mask.cols() != 3)
    throw ContractError("denoiser: batch size mismatch between x, k, ctx, mask");

  const Index B = x.rows();
  Var temb = mish(matmul(t.constant(time_features(k, cfg_.time_dim)), t.leaf(time_w_)) +
                  t.leaf(time_b_));

  // per-channel context embedding: active rows use value*w + b, masked rows
  // fall back to the channel's learned null vector
  Var cemb{};
  for (int i = 0; i < 3; ++i) {
    Mat mc(B, 1), m(B, 1), inv_m(B, 1);
    for (Index r = 0; r < B; ++r) {
      m(r, 0) = mask(r, i) != 0.0 ? 1.0 : 0.0;
      mc(r, 0) = m(r, 0) * ctx(r, i);
      inv_m(r, 0) = 1.0 - m(r, 0);
    }
    Var contrib = matmul(t.constant(mc), t.leaf(ctx_w_[i])) +
                  matmul(t.constant(m), t.leaf(ctx_b_[i])) +
                  matmul(t.constant(inv_m), t.leaf(ctx_null_[i]));
    cemb = (i == 0) ? contrib : cemb + contrib;
  }

  Var h = concat_cols({t.constant(x), temb, cemb});
  h = mish(matmul(h, t.leaf(in_w_)) + t.leaf(in_b_));
  for (Block& blk : blocks_) {
    Var z = layer_norm(h, t.leaf(blk.ln_g), t.leaf(blk.ln_b));
    z = mish(matmul(z, t.leaf(blk.w1)) + t.leaf(blk.b1));
    z = matmul(z, t.leaf(blk.w2)) + t.leaf(blk.b2);
    h = h + z;
  }
  h = layer_norm(h, t.leaf(final_ln_g_), t.leaf(final_ln_b_));
  return matmul(h, t.leaf(out_w_)) + t.leaf(out_b_);
}

Mat Denoiser::predict(const Mat& x, int k, const ContextVector& ctx) {
  Mat c(x.rows(), 3), m(x.rows(), 3);
  for (Index r = 0; r < x.rows(); ++r) {
    c(r, 0) = ctx.ret;
    c(r, 1) = ctx.dyn;
    c(r, 2) = ctx.inv;
    for (int i = 0; i < 3; ++i) m(r, i) = ctx.mask[static_cast<size_t>(i)] ? 1.0 : 0.0;
  }
  std::vector<int> ks(static_cast<size_t>(x.rows()), k);
  Tape t;
  return t.value(forward(t, x, ks, c, m));
}

std::vector<Parameter*> Denoiser::parameters() {
  std::vector<Parameter*> ps{&in_w_, &in_b_};
  for (Block& b : blocks_) {
    ps.push_back(&b.ln_g);
    ps.push_back(&b.ln_b);
    ps.push_back(&b.w1);
    ps.push_back(&b.b1);
    ps.push_back(&b.w2);
    ps.push_back(&b.b2);
  }
  ps.push_back(&final_ln_g_);
  ps.push_back(&final_ln_b_);
  ps.push_back(&out_w_);
  ps.push_back(&out_b_);
  ps.push_back(&time_w_);
  ps.push_back(&time_b_);
  for (int i = 0; i < 3; ++i) {
    ps.push_back(&ctx_w_[i]);
    ps.push_back(&ctx_b_[i]);
    ps.push_back(&ctx_null_[i]);
  }
  return ps;
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------
DiffusionTrainResult train_diffusion(const Dataset& source, const Dataset& target,
                                     const ContextModels& models, const Normalizer& sa_norm,
                                     const DiffusionTrainConfig& cfg, ChannelSetup channels,
                                     TrainData data_mode, Rng rng) {
  const int H = cfg.horizon;
  std::vector<WindowRef> src_windows, tgt_windows;
  ContextTable src_table, tgt_table;
  if (data_mode != TrainData::target_only) {
    src_windows = make_windows(source, H);
    src_table = compute_context_table(source, src_windows, H, models);
  }
  if (data_mode != TrainData::source_only) {
    tgt_windows = make_windows(target, H);
    tgt_table = compute_context_table(target, tgt_windows, H, models);
  }

  DenoiserConfig dcfg;
  dcfg.horizon = H;
  dcfg.state_dim = source.state_dim;
  dcfg.action_dim = source.action_dim;
  dcfg.width = cfg.width;
  dcfg.blocks = cfg.blocks;
  dcfg.time_dim = cfg.time_dim;
  dcfg.ctx_dim = cfg.ctx_dim;

  DiffusionTrainResult res;
  Rng init = rng.split("init");
  res.denoiser = Denoiser(dcfg, init);
  res.schedule = NoiseSchedule::cosine(cfg.K);

  Adam opt(res.denoiser.parameters(), {.lr = cfg.lr});
  Rng batch_rng = rng.split("batches");
  Rng drop_rng = rng.split("dropout");
  Rng noise_rng = rng.split("noise");
  Rng step_rng = rng.split("steps");

  const int B = cfg.batch;
  const int D = dcfg.traj_dim();
  Mat x0(B, D), ctx(B, 3), mask(B, 3), eps(B, D), xk(B, D);
  std::vector<int> ks(static_cast<size_t>(B));

  auto fill_row = [&](int row, const Dataset& ds, const std::vector<WindowRef>& windows,
                      const ContextTable& table, int widx) {
    Trajectory w = get_window(ds, windows[static_cast<size_t>(widx)], H);
    x0.row(row) = flatten_trajectory(w, sa_norm).transpose();
    const double dyn_value =
        channels.dyn_is_onehot ? (ds.origin == Origin::target ? 1.0 : 0.0)
                               : table.dyn[static_cast<size_t>(widx)];
    ctx(row, 0) = table.ret[static_cast<size_t>(widx)];
    ctx(row, 1) = dyn_value;
    ctx(row, 2) = table.inv[static_cast<size_t>(widx)];
    const bool active[3] = {channels.ret, channels.dyn, channels.inv};
    for (int i = 0; i < 3; ++i) {
      const bool keep = active[i] && drop_rng.uniform() >= cfg.p_dropout;
      mask(row, i) = keep ? 1.0 : 0.0;
      if (!keep) ctx(row, i) = 0.0;  // null value for a masked channel
    }
  };

  double bucket = 0.0;
  long in_bucket = 0;
  for (long u = 0; u < cfg.updates; ++u) {
    switch (data_mode) {
      case TrainData::both: {
        StratifiedIndices idx =
            stratified_indices(src_windows.size(), tgt_windows.size(), B, batch_rng);
        for (int i = 0; i < B / 2; ++i) fill_row(i, source, src_windows, src_table, idx.source[i]);
        for (int i = 0; i < B / 2; ++i)
          fill_row(B / 2 + i, target, tgt_windows, tgt_table, idx.target[i]);
        break;
      }
      case TrainData::source_only:
        for (int i = 0; i < B; ++i)
          fill_row(i, source, src_windows, src_table,
                   static_cast<int>(batch_rng.uniform_int(src_windows.size())));
        break;
      case TrainData::target_only:
        for (int i = 0; i < B; ++i)
          fill_row(i, target, tgt_windows, tgt_table,
                   static_cast<int>(batch_rng.uniform_int(tgt_windows.size())));
        break;
    }

    for (int i = 0; i < B; ++i) ks[static_cast<size_t>(i)] = 1 + static_cast<int>(step_rng.uniform_int(cfg.K));
    eps = noise_rng.normal_mat(B, D);
    for (int i = 0; i < B; ++i) {
      const double ab = res.schedule.abar(ks[static_cast<size_t>(i)]);
      xk.row(i) = std::sqrt(ab) * x0.row(i) + std::sqrt(1.0 - ab) * eps.row(i);
    }

    Tape t;
    Var pred = res.denoiser.forward(t, xk, ks, ctx, mask);
    Var d = pred - t.constant(eps);
    Var loss = (1.0 / B) * sum(d * d);
    const double lv = t.value(loss)(0, 0);
    if (!std::isfinite(lv))
      throw NumericalError("train_diffusion: loss diverged at update " + std::to_string(u));
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
  return res;
}

// ---------------------------------------------------------------------------
// sampling
// ---------------------------------------------------------------------------
SampleResult reverse_sample(const NoisePredictor& eps_fn, const NoiseSchedule& sched, int dim,
                            const std::vector<Rng*>& rngs, const Mat* inpaint_values,
                            int inpaint_cols, double hull_expand, double x0_clip) {
  const Index B = static_cast<Index>(rngs.size());
  Mat x(B, dim);
  for (Index r = 0; r < B; ++r) x.row(r) = rngs[static_cast<size_t>(r)]->normal_vec(dim).transpose();

  auto inpaint = [&] {
    if (inpaint_values) x.leftCols(inpaint_cols) = *inpaint_values;
  };
  inpaint();

  for (int k = sched.K; k >= 1; --k) {
    Mat eps_hat = eps_fn(x, k);
    const double a = sched.a(k), ab = sched.abar(k);
    if (x0_clip > 0.0) {
      // same posterior mean routed through the implied x0, clamped to the
      // data range so early-step prediction error cannot blow up the chain
      const double abp = sched.abar_prev(k);
      Mat x0 = (x - std::sqrt(1.0 - ab) * eps_hat) / std::sqrt(ab);
      x0 = x0.cwiseMax(-x0_clip).cwiseMin(x0_clip);
      x = (std::sqrt(abp) * (1.0 - a) * x0 + std::sqrt(a) * (1.0 - abp) * x) / (1.0 - ab);
    } else {
      x = (x - ((1.0 - a) / std::sqrt(1.0 - ab)) * eps_hat) / std::sqrt(a);
    }
    if (k > 1) {
      const double sigma = std::sqrt(sched.posterior_var(k));
      for (Index r = 0; r < B; ++r)
        x.row(r) += sigma * rngs[static_cast<size_t>(r)]->normal_vec(dim).transpose();
    }
    if (!x.allFinite())
      throw NumericalError("reverse_sample: non-finite sample at diffusion step k=" +
                           std::to_string(k));
    inpaint();
  }

  SampleResult res;
  res.clamp_events = 0;
  if (hull_expand > 0.0) {
    for (Index i = 0; i < x.size(); ++i) {
      if (x(i) > hull_expand) {
        x(i) = hull_expand;
        ++res.clamp_events;
      } else if (x(i) < -hull_expand) {
        x(i) = -hull_expand;
        ++res.clamp_events;
      }
    }
    inpaint();  // conditioned columns are never clamped away
  }
  res.x0 = std::move(x);
  return res;
}

Mat guided_prediction(Denoiser& den, const Mat& x, int k, const ContextVector& ctx, double w) {
  Mat eps_c = den.predict(x, k, ctx);
  if (w == 0.0) return eps_c;
  Mat eps_n = den.predict(x, k, ContextVector::null());
  return Mat((1.0 + w) * eps_c - w * eps_n);
}

SampleResult guided_sample_batch(Denoiser& den, const NoiseSchedule& sched,
                                 const ContextVector& ctx, const SamplerConfig& cfg,
                                 const Mat& s0_rows, const Normalizer& sa_norm,
                                 const std::vector<Rng*>& rngs) {
  if (cfg.w < 0.0) throw ConfigError("guidance weight must be >= 0");
  if (cfg.context_probe) cfg.context_probe(ctx);

  NoisePredictor blended = [&](const Mat& x, int k) {
    return guided_prediction(den, x, k, ctx, cfg.w);
  };

  const int sd = den.config().state_dim;
  Mat s0_norm;
  const Mat* inpaint = nullptr;
  if (cfg.inpaint_start) {
    if (s0_rows.rows() != static_cast<Index>(rngs.size()) || s0_rows.cols() != sd)
      throw ContractError("guided_sample: s0 must be B x state_dim when inpainting");
    s0_norm.resize(s0_rows.rows(), sd);
    for (Index r = 0; r < s0_rows.rows(); ++r)
      for (Index j = 0; j < sd; ++j) s0_norm(r, j) = sa_norm.normalize(s0_rows(r, j), j);
    inpaint = &s0_norm;
  }

  return reverse_sample(blended, sched, den.config().traj_dim(), rngs, inpaint, sd,
                        cfg.hull_expand, cfg.x0_clip);
}

Trajectory guided_sample(Denoiser& den, const NoiseSchedule& sched, const ContextVector& ctx,
                         const SamplerConfig& cfg, const Vec& s0, const Normalizer& sa_norm,
                         Rng& rng) {
  Mat s0_rows = s0.transpose();
  std::vector<Rng*> rngs{&rng};
  SampleResult res = guided_sample_batch(den, sched, ctx, cfg, s0_rows, sa_norm, rngs);
  return unflatten_trajectory(res.x0.row(0).transpose(), den.config().horizon, sa_norm);
}

}  // namespace odp
