#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "odp/diffusion.hpp"
#include "odp/errors.hpp"
#include "support.hpp"

using namespace odp;
using namespace odp::testing;

namespace {

DenoiserConfig tiny_cfg() {
  DenoiserConfig cfg;
  cfg.horizon = 2;
  cfg.width = 8;
  cfg.blocks = 1;
  cfg.time_dim = 4;
  cfg.ctx_dim = 4;
  return cfg;
}

// a denoiser with a randomized (non-zero) head, for identity tests
Denoiser random_head_denoiser(uint64_t seed) {
  Rng rng(seed);
  Denoiser den(tiny_cfg(), rng);
  for (Parameter* p : den.parameters())
    if (p->name == "denoiser.out.w" || p->name == "denoiser.out.b")
      p->value = 0.3 * rng.normal_mat(p->value.rows(), p->value.cols());
  return den;
}

}  // namespace

TEST_CASE("cosine schedule: frozen endpoint values, monotone, product invariant") {
  NoiseSchedule s = NoiseSchedule::cosine(100);
  CHECK(s.abar(1) == doctest::Approx(0.9993687184016583).epsilon(1e-12));
  CHECK(s.abar(50) == doctest::Approx(0.49384359044063775).epsilon(1e-12));
  CHECK(s.abar(100) == doctest::Approx(2.4285722793500594e-07).epsilon(1e-9));
  CHECK(s.abar(1) > 0.99);
  CHECK(s.abar(100) < 0.01);
  for (int k = 2; k <= 100; ++k) CHECK(s.abar(k) < s.abar(k - 1));
  double prod = 1.0;
  for (int k = 1; k <= 100; ++k) {
    prod *= s.a(k);
    CHECK(s.abar(k) == prod);
    CHECK(s.a(k) >= 0.001);
    CHECK(s.a(k) <= 0.9999);
  }
  CHECK_THROWS_AS(NoiseSchedule::cosine(1), ConfigError);
}

TEST_CASE("forward noise: zero-noise case and step bounds") {
  NoiseSchedule s = NoiseSchedule::cosine(100);
  Rng rng(1);
  Mat x0 = rng.normal_mat(4, 6);
  Mat zero = Mat::Zero(4, 6);
  CHECK(noised_to(x0, 37, s, zero) == Mat(std::sqrt(s.abar(37)) * x0));
  CHECK_THROWS_AS(noised_to(x0, 0, s, zero), ContractError);
  CHECK_THROWS_AS(noised_to(x0, 101, s, zero), ContractError);
}

TEST_CASE("forward noise marginals match sqrt(abar) x0 and 1-abar at k in {1, K/2, K}") {
  const int K = 100, n = 10000;
  NoiseSchedule s = NoiseSchedule::cosine(K);
  Rng rng(2);
  const double x0v = 0.7;
  Mat x0 = Mat::Constant(n, 1, x0v);
  for (int k : {1, K / 2, K}) {
    CAPTURE(k);
    auto [xk, eps] = forward_noise(x0, k, s, rng);
    const double want_mean = std::sqrt(s.abar(k)) * x0v;
    const double want_var = 1.0 - s.abar(k);
    double m = xk.mean();
    double v = (xk.array() - m).square().sum() / (n - 1);
    const double sigma_mean = std::sqrt(want_var / n);
    const double sigma_var = want_var * std::sqrt(2.0 / (n - 1));
    CHECK(std::abs(m - want_mean) < 3.0 * sigma_mean + 1e-12);
    CHECK(std::abs(v - want_var) < 3.0 * sigma_var + 1e-12);
  }
  // x0 = 0: variance 1-abar within 2%
  Mat zeros = Mat::Zero(n, 1);
  for (int k : {10, 60}) {
    auto [xk, eps] = forward_noise(zeros, k, s, rng);
    double v = (xk.array() - xk.mean()).square().sum() / (n - 1);
    CHECK(std::abs(v - (1.0 - s.abar(k))) / (1.0 - s.abar(k)) < 0.02);
  }
  // k = K is statistically indistinguishable from N(0, 1)
  auto [xK, eps] = forward_noise(zeros, K, s, rng);
  CHECK(std::abs(xK.mean()) < 3.0 / std::sqrt(static_cast<double>(n)));
  double vK = (xK.array() - xK.mean()).square().sum() / (n - 1);
  CHECK(std::abs(vK - 1.0) < 3.0 * std::sqrt(2.0 / (n - 1)));
}

TEST_CASE("untrained denoiser predicts zero, so the initial loss is the trajectory dim") {
  Rng rng(3);
  DenoiserConfig cfg;  // default width/blocks, H = 15 -> D = 96
  Denoiser den(cfg, rng);
  const int B = 64, D = cfg.traj_dim();
  Mat x = rng.normal_mat(B, D);
  CHECK(den.predict(x, 10, ContextVector::planning_target()) == Mat::Zero(B, D));

  Mat eps = rng.normal_mat(B, D);
  const double loss = eps.squaredNorm() / B;  // ||eps - 0||^2 / B
  CHECK(std::abs(loss - D) < 0.10 * D);
}

TEST_CASE("guidance: w = 0 equals the conditional prediction exactly") {
  Denoiser den = random_head_denoiser(5);
  Rng rng(6);
  Mat x = rng.normal_mat(5, den.config().traj_dim());
  ContextVector ctx = ContextVector::planning_target();
  Mat g0 = guided_prediction(den, x, 7, ctx, 0.0);
  Mat cond = den.predict(x, 7, ctx);
  CHECK((g0 - cond).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("guidance: prediction is affine in w with slope eps_c - eps_null") {
  Denoiser den = random_head_denoiser(7);
  Rng rng(8);
  Mat x = rng.normal_mat(4, den.config().traj_dim());
  ContextVector ctx = ContextVector::planning_target();
  Mat g0 = guided_prediction(den, x, 3, ctx, 0.0);
  Mat gh = guided_prediction(den, x, 3, ctx, 0.5);
  Mat g1 = guided_prediction(den, x, 3, ctx, 1.0);
  CHECK((gh - 0.5 * (g0 + g1)).cwiseAbs().maxCoeff() <= 1e-12);

  Mat eps_c = den.predict(x, 3, ctx);
  Mat eps_n = den.predict(x, 3, ContextVector::null());
  CHECK((g1 - (2.0 * eps_c - eps_n)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("fully masked context equals the learned null embedding path exactly") {
  Denoiser den = random_head_denoiser(9);
  Rng rng(10);
  Mat x = rng.normal_mat(3, den.config().traj_dim());

  ContextVector masked;  // all mask bits false, values 0
  ContextVector masked_nonzero_values;
  masked_nonzero_values.ret = 0.7;  // values behind a masked bit must not leak
  masked_nonzero_values.dyn = -0.3;
  masked_nonzero_values.inv = 0.9;
  Mat a = den.predict(x, 4, masked);
  Mat b = den.predict(x, 4, masked_nonzero_values);
  CHECK(a == b);
}

TEST_CASE("full mask + w = 0 samples bit-identically to unconditional sampling") {
  Denoiser den = random_head_denoiser(11);
  NoiseSchedule sched = NoiseSchedule::cosine(12);
  Normalizer sa(Vec::Constant(6, -2.0), Vec::Constant(6, 2.0), Normalizer::Mode::to_sym);
  SamplerConfig cfg;
  cfg.w = 0.0;
  ContextVector all_masked;  // null context

  Vec s0 = Vec::Zero(kStateDim);
  Rng r1(12), r2(12);
  Trajectory a = guided_sample(den, sched, all_masked, cfg, s0, sa, r1);
  Trajectory b = guided_sample(den, sched, ContextVector::null(), cfg, s0, sa, r2);
  CHECK(a.states == b.states);
  CHECK(a.actions == b.actions);
}

TEST_CASE("inpainting pins the first state through clamping and denormalization") {
  Denoiser den = random_head_denoiser(13);
  NoiseSchedule sched = NoiseSchedule::cosine(12);
  Normalizer sa(Vec::Constant(6, -2.0), Vec::Constant(6, 2.0), Normalizer::Mode::to_sym);
  SamplerConfig cfg;
  Vec s0(kStateDim);
  s0 << 0.3, -0.8, 1.2, 0.0;
  Rng rng(14);
  Trajectory traj = guided_sample(den, sched, ContextVector::planning_target(), cfg, s0, sa, rng);
  for (Index j = 0; j < kStateDim; ++j)
    CHECK(traj.states(0, j) == doctest::Approx(s0(j)).epsilon(1e-12));
}

TEST_CASE("reverse chain with the analytic 1-D predictor recovers the data distribution") {
  // data x0 ~ N(m, s^2); the optimal predictor is
  //   E[eps | x_k] = sqrt(1-abar) (x - sqrt(abar) m) / (abar s^2 + 1 - abar)
  const double m = 0.4, sd = 0.9;
  const int K = 100, n = 20000;
  NoiseSchedule sched = NoiseSchedule::cosine(K);
  NoisePredictor oracle = [&](const Mat& x, int k) {
    const double ab = sched.abar(k);
    return Mat(std::sqrt(1.0 - ab) / (ab * sd * sd + 1.0 - ab) *
               (x.array() - std::sqrt(ab) * m).matrix());
  };

  std::vector<Rng> streams;
  streams.reserve(n);
  Rng root(15);
  for (int i = 0; i < n; ++i) streams.push_back(root.split(static_cast<uint64_t>(i)));
  std::vector<Rng*> rngs;
  for (Rng& r : streams) rngs.push_back(&r);

  SampleResult res =
      reverse_sample(oracle, sched, 1, rngs, nullptr, 0, /*hull_expand=*/0.0, /*x0_clip=*/0.0);
  const double got_mean = res.x0.mean();
  const double got_std = std::sqrt((res.x0.array() - got_mean).square().sum() / (n - 1));
  CHECK(std::abs(got_mean - m) < 0.05 * sd);
  CHECK(std::abs(got_std - sd) / sd < 0.05);

  // tighter cross-check against the closed-form recursion of the same chain
  double u = 0.0, v = 1.0;
  for (int k = K; k >= 1; --k) {
    const double a = sched.a(k), ab = sched.abar(k);
    const double d = (1.0 - a) / (ab * sd * sd + 1.0 - ab);
    u = ((1.0 - d) * u + d * std::sqrt(ab) * m) / std::sqrt(a);
    v = (1.0 - d) * (1.0 - d) * v / a + (k > 1 ? sched.posterior_var(k) : 0.0);
  }
  CHECK(std::abs(got_mean - u) < 0.02);
  CHECK(std::abs(got_std - std::sqrt(v)) / std::sqrt(v) < 0.02);
}

TEST_CASE("denoiser gradients match finite differences (Eq-8-style loss)") {
  Rng rng(16);
  Denoiser den(tiny_cfg(), rng);
  // give the zero head nonzero values so its gradient path is generic
  for (Parameter* p : den.parameters())
    if (p->name.rfind("denoiser.out", 0) == 0)
      p->value = 0.2 * rng.normal_mat(p->value.rows(), p->value.cols());

  const int B = 3, D = den.config().traj_dim();
  Mat xk = rng.normal_mat(B, D), eps = rng.normal_mat(B, D);
  std::vector<int> ks{1, 5, 9};
  Mat ctx = rng.normal_mat(B, 3);
  Mat mask(B, 3);
  mask << 1, 0, 1, 1, 1, 1, 0, 0, 0;  // mixed active/masked rows

  auto loss_value = [&] {
    Tape t;
    Var d = den.forward(t, xk, ks, ctx, mask) - t.constant(eps);
    return t.value((1.0 / B) * sum(d * d))(0, 0);
  };
  {
    Tape t;
    Var d = den.forward(t, xk, ks, ctx, mask) - t.constant(eps);
    Var loss = (1.0 / B) * sum(d * d);
    for (Parameter* p : den.parameters()) p->zero_grad();
    t.backward(loss);
  }
  for (Parameter* p : den.parameters()) {
    CAPTURE(p->name);
    CHECK(grad_rel_err(p->grad, fd_grad(*p, loss_value)) < 1e-4);
  }
}

TEST_CASE("all channels dropped: gradients flow through the null embeddings only") {
  Rng rng(17);
  Denoiser den(tiny_cfg(), rng);
  // non-zero head so gradients reach the trunk and embeddings at all
  for (Parameter* p : den.parameters())
    if (p->name.rfind("denoiser.out", 0) == 0)
      p->value = 0.2 * rng.normal_mat(p->value.rows(), p->value.cols());
  const int B = 4, D = den.config().traj_dim();
  Mat xk = rng.normal_mat(B, D), eps = rng.normal_mat(B, D);
  std::vector<int> ks{2, 2, 2, 2};
  Mat ctx = rng.normal_mat(B, 3);
  Mat mask = Mat::Zero(B, 3);  // forced full dropout

  Tape t;
  Var d = den.forward(t, xk, ks, ctx, mask) - t.constant(eps);
  for (Parameter* p : den.parameters()) p->zero_grad();
  t.backward((1.0 / B) * sum(d * d));

  for (Parameter* p : den.parameters()) {
    if (p->name.find(".null") != std::string::npos)
      CHECK(p->grad.cwiseAbs().maxCoeff() > 0.0);
    else if (p->name.find("denoiser.ctx") == 0)
      CHECK(p->grad.cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("diffusion training: epoch loss decreases on a small run") {
  DatasetConfig dcfg;
  dcfg.n_source = 2400;
  dcfg.n_target = 960;
  dcfg.seed = 18;
  auto [src, tgt] = generate_datasets("pointmass-mass-v0", dcfg);

  ContextTrainConfig ccfg;
  ccfg.updates = 1500;
  ccfg.updates_per_epoch = 500;
  ClassifierResult cls = train_classifier(src, tgt, ccfg, Rng(19));
  InverseResult inv = train_inverse(tgt, ccfg, Rng(20));
  ReturnStats stats = fit_return_stats(src, tgt, 15);
  ContextModels models{&cls.classifier, &cls.out_norm, &inv.inverse, &inv.err_norm, &stats,
                       ScoreConfig()};
  Normalizer sa = fit_state_action_normalizer(src, tgt);

  DiffusionTrainConfig cfg;
  cfg.K = 25;
  cfg.batch = 32;
  cfg.updates = 1500;
  cfg.width = 48;
  cfg.blocks = 2;
  cfg.updates_per_epoch = 250;
  DiffusionTrainResult res = train_diffusion(src, tgt, models, sa, cfg, ChannelSetup::r_ds_id(),
                                             TrainData::both, Rng(21));
  REQUIRE(res.epoch_loss.size() == 6);
  // starts near the trajectory dimensionality (zero-initialized head)
  CHECK(res.epoch_loss.front() < 96.0);
  CHECK(res.epoch_loss.back() < 0.8 * res.epoch_loss.front());
}
