#include "odp/selftest.hpp"

#include <cmath>
#include <functional>

#include "odp/diffusion.hpp"
#include "odp/env.hpp"
#include "odp/nn.hpp"

namespace odp {

namespace {

struct Harness {
  std::ostream& out;
  int failures = 0;

  void check(const char* name, bool ok) {
    out << (ok ? "  ok   " : "  FAIL ") << name << "\n";
    if (!ok) ++failures;
  }
};

double fd_loss(Parameter& p, Index i, const std::function<double()>& f, double h) {
  const double orig = p.value(i);
  p.value(i) = orig + h;
  const double fp = f();
  p.value(i) = orig - h;
  const double fm = f();
  p.value(i) = orig;
  return (fp - fm) / (2.0 * h);
}

}  // namespace

int run_selftest(std::ostream& out) {
  Harness h{out};

  {  // reverse-mode gradients vs central finite differences on a small MLP
    Rng rng(1);
    Mlp net("net", 4, {8}, 2, rng);
    Mat x = rng.normal_mat(3, 4);
    auto loss = [&] {
      Tape t;
      Var o = net.forward(t, t.constant(x));
      return t.value(sum(o * o))(0, 0);
    };
    Tape t;
    Var o = net.forward(t, t.constant(x));
    t.backward(sum(o * o));
    double worst = 0.0;
    for (Parameter* p : net.parameters())
      for (Index i = 0; i < p->value.size(); ++i) {
        const double fd = fd_loss(*p, i, loss, 1e-5);
        const double an = p->grad(i);
        worst = std::max(worst,
                         std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-3}));
      }
    h.check("mlp gradients match finite differences (<1e-4)", worst < 1e-4);
  }

  {  // rng determinism and split independence
    Rng a(7), b(7);
    bool same = a.normal_mat(3, 3) == b.normal_mat(3, 3);
    Rng p1(9), p2(9);
    Rng c1 = p1.split(4);
    (void)p2.next_u64();
    Rng c2 = p2.split(4);
    h.check("rng: seeded streams reproduce, splits are stable",
            same && c1.next_u64() == c2.next_u64());
  }

  {  // dynamics score exactness
    ScoreConfig cfg;
    bool ok = dyn_score_from_probs(Vec::Constant(8, 0.5), cfg) == 0.0 &&
              dyn_score_from_probs(Vec::Constant(8, 1.0), cfg) == 1.0 &&
              dyn_score_from_probs(Vec::Constant(8, 0.0), cfg) == -1.0;
    Rng rng(3);
    for (int i = 0; i < 10 && ok; ++i) {
      Vec p(12);
      for (Index j = 0; j < p.size(); ++j) p(j) = rng.uniform();
      ok = std::abs(dyn_score_from_probs(p, cfg) +
                    dyn_score_from_probs(Vec(Vec::Ones(12) - p), cfg)) <= 1e-12;
    }
    h.check("dynamics score: boundaries exact, antisymmetric", ok);
  }

  {  // inverse context exactness
    bool ok = inv_context_from_errors(Vec::Zero(8)) == 0.0 &&
              std::abs(inv_context_from_errors(Vec::Constant(8, std::exp(1.0) - 1.0)) - 1.0) <=
                  1e-12;
    h.check("inverse context: zero iff exact, log scale", ok);
  }

  {  // schedule shape and guidance identities
    NoiseSchedule s = NoiseSchedule::cosine(100);
    bool mono = true;
    for (int k = 2; k <= 100; ++k) mono = mono && s.abar(k) < s.abar(k - 1);
    h.check("cosine schedule: abar_1 > 0.99, abar_K < 0.01, monotone",
            s.abar(1) > 0.99 && s.abar(100) < 0.01 && mono);

    DenoiserConfig dcfg;
    dcfg.horizon = 2;
    dcfg.width = 8;
    dcfg.blocks = 1;
    dcfg.time_dim = 4;
    dcfg.ctx_dim = 4;
    Rng rng(5);
    Denoiser den(dcfg, rng);
    for (Parameter* p : den.parameters())
      if (p->name.rfind("denoiser.out", 0) == 0)
        p->value = 0.3 * rng.normal_mat(p->value.rows(), p->value.cols());
    Mat x = rng.normal_mat(4, dcfg.traj_dim());
    ContextVector ctx = ContextVector::planning_target();
    Mat g0 = guided_prediction(den, x, 3, ctx, 0.0);
    Mat gh = guided_prediction(den, x, 3, ctx, 0.5);
    Mat g1 = guided_prediction(den, x, 3, ctx, 1.0);
    bool ok = (g0 - den.predict(x, 3, ctx)).cwiseAbs().maxCoeff() <= 1e-12 &&
              (gh - 0.5 * (g0 + g1)).cwiseAbs().maxCoeff() <= 1e-12;
    h.check("guidance: w=0 identity and affinity in w", ok);
  }

  {  // environment: shift real, reward shared
    bool ok = true;
    for (const auto& v : env_registry()) {
      EnvState s;
      s.position = {0.2, -0.3};
      s.velocity = {0.4, 0.6};
      StepResult a = step(v.source, s, {0.9, -0.9});
      StepResult b = step(v.target, s, {0.9, -0.9});
      ok = ok && (a.state.position != b.state.position || a.state.velocity != b.state.velocity);
      ok = ok && v.source.goal == v.target.goal;
    }
    h.check("environments: dynamics shift real, task shared", ok);
  }

  out << (h.failures == 0 ? "selftest: all checks passed\n"
                          : "selftest: FAILURES detected\n");
  return h.failures;
}

}  // namespace odp
