#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <string>

#include "odp/checkpoint.hpp"
#include "odp/errors.hpp"
#include "support.hpp"

using namespace odp;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(ODPLAN_BIN) + " " + args + " >> /tmp/odp_cli_log.txt 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

Checkpoint small_checkpoint() {
  Checkpoint ck;
  ck.config.n_source = 960;
  ck.config.n_target = 480;
  ck.config.width = 16;
  ck.config.blocks = 2;
  ck.config.time_dim = 8;
  ck.config.ctx_dim = 8;
  ck.config.horizon = 15;
  Rng rng(3);
  ck.sa_norm = Normalizer(Vec::Constant(6, -2.0), Vec::Constant(6, 2.0),
                          Normalizer::Mode::to_sym);
  ck.ret_stats = {-40.0, -5.0, 0.99};
  ck.classifier = DynamicsClassifier(rng);
  ck.cls_out_norm = Normalizer(Vec::Constant(1, 0.2), Vec::Constant(1, 0.8),
                               Normalizer::Mode::to_unit);
  ck.inverse = InverseModel(rng);
  ck.inv_err_norm = Normalizer(Vec::Zero(1), Vec::Constant(1, 1.5), Normalizer::Mode::to_unit);
  DenoiserConfig dcfg;
  dcfg.horizon = 15;
  dcfg.width = 16;
  dcfg.blocks = 2;
  dcfg.time_dim = 8;
  dcfg.ctx_dim = 8;
  Denoiser den(dcfg, rng);
  for (Parameter* p : den.parameters())
    p->value = rng.normal_mat(p->value.rows(), p->value.cols());
  ck.denoiser = std::move(den);
  ck.schedule = NoiseSchedule::cosine(25);
  return ck;
}

}  // namespace

TEST_CASE("run config: serialize/parse round trip is exact") {
  RunConfig cfg;
  cfg.seed = 1234567;
  cfg.gamma = 0.97;
  cfg.diffusion_lr = 3.0000000000000001e-4;
  cfg.env = "pointmass-ctrl-v0";
  cfg.context_variant = "R+DS";
  RunConfig back = RunConfig::from_text(cfg.serialize());
  CHECK(back.serialize() == cfg.serialize());
  CHECK(back.gamma == cfg.gamma);
  CHECK(back.diffusion_lr == cfg.diffusion_lr);
  CHECK(back.eval_seed_list() == std::vector<uint64_t>{1, 2, 3});

  CHECK_THROWS_AS(RunConfig::from_text("nonsense_key = 3\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_text("gamma = banana\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_text("gamma 0.9\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_text("train_data = sideways\n"), ConfigError);
}

TEST_CASE("checkpoint: save/load round trips every parameter bit-exactly") {
  Checkpoint ck = small_checkpoint();
  ck.save("/tmp/odp_ck.odck");
  Checkpoint back = Checkpoint::load("/tmp/odp_ck.odck");

  CHECK(back.config.serialize() == ck.config.serialize());
  REQUIRE(back.classifier.has_value());
  REQUIRE(back.inverse.has_value());
  REQUIRE(back.denoiser.has_value());

  auto params_equal = [](std::vector<Parameter*> a, std::vector<Parameter*> b) {
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i]->name == b[i]->name);
      CHECK(a[i]->value == b[i]->value);
    }
  };
  params_equal(ck.classifier->net.parameters(), back.classifier->net.parameters());
  params_equal(ck.inverse->net.parameters(), back.inverse->net.parameters());
  params_equal(ck.denoiser->parameters(), back.denoiser->parameters());

  CHECK(back.schedule.K == 25);
  CHECK(back.schedule.alpha == ck.schedule.alpha);
  CHECK(back.schedule.alpha_bar == ck.schedule.alpha_bar);
  CHECK(back.sa_norm.min() == ck.sa_norm.min());
  CHECK(back.inv_err_norm.max() == ck.inv_err_norm.max());
  CHECK(back.ret_stats.rmin == ck.ret_stats.rmin);

  // saving the loaded checkpoint reproduces identical bytes
  back.save("/tmp/odp_ck2.odck");
  CHECK(slurp("/tmp/odp_ck.odck") == slurp("/tmp/odp_ck2.odck"));
}

TEST_CASE("checkpoint: corruption, truncation and version bumps are refused") {
  Checkpoint ck = small_checkpoint();
  ck.save("/tmp/odp_ck3.odck");
  std::string bytes = slurp("/tmp/odp_ck3.odck");

  spit("/tmp/odp_trunc.odck", bytes.substr(0, bytes.size() / 3));
  CHECK_THROWS_AS(Checkpoint::load("/tmp/odp_trunc.odck"), IoError);

  std::string flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x40;
  spit("/tmp/odp_flip.odck", flipped);
  CHECK_THROWS_AS(Checkpoint::load("/tmp/odp_flip.odck"), IoError);

  // bump the version field and repair the checksum so only the version trips
  std::string bumped = bytes;
  bumped[5] = 99;
  const uint64_t fixed = fnv1a(bumped.data() + 5, bumped.size() - 8 - 5);
  std::memcpy(bumped.data() + bumped.size() - 8, &fixed, 8);
  spit("/tmp/odp_ver.odck", bumped);
  CHECK_THROWS_WITH_AS(Checkpoint::load("/tmp/odp_ver.odck"), doctest::Contains("version"),
                       IoError);
}

TEST_CASE("checkpoint without classifier/inverse refuses to build contexts") {
  Checkpoint ck;
  ck.config = RunConfig();
  CHECK_THROWS_AS(ck.context_models(), StageOrderError);
}

TEST_CASE("cli: full small pipeline, stage order, determinism, exit codes") {
  std::system("rm -rf /tmp/odp_cli && mkdir -p /tmp/odp_cli; rm -f /tmp/odp_cli_log.txt");
  const std::string overrides =
      " --set n_source=1440 --set n_target=480 --set context_updates=400"
      " --set diffusion_updates=300 --set diffusion_batch=32 --set width=32 --set blocks=2"
      " --set diffusion_steps=25 --set eval_episodes=3 --set eval_seeds=1,2"
      " --seed 5 --env pointmass-mass-v0";

  // unknown flags are config errors (exit 2), stage order violations exit 3
  CHECK(run_cli("evaluate --no-such-flag") == 2);
  CHECK(run_cli("train-diffusion --checkpoint /tmp/odp_cli/none.odck --data-dir /tmp/odp_cli" +
                overrides) == 3);

  CHECK(run_cli("gen-data --out-dir /tmp/odp_cli/data" + overrides) == 0);
  const std::string src1 = slurp("/tmp/odp_cli/data/source.oddf");
  CHECK(run_cli("gen-data --out-dir /tmp/odp_cli/data2" + overrides) == 0);
  CHECK(src1 == slurp("/tmp/odp_cli/data2/source.oddf"));  // same seed, same bytes
  CHECK(!slurp("/tmp/odp_cli/data/source.oddf.meta").empty());

  const std::string common =
      " --data-dir /tmp/odp_cli/data --checkpoint /tmp/odp_cli/ck.odck" + overrides;
  // evaluate before any training: no checkpoint yet -> I/O error (5)
  CHECK(run_cli("evaluate --checkpoint /tmp/odp_cli/ck.odck") == 5);

  CHECK(run_cli("train-classifier" + common) == 0);
  // diffusion before the inverse model is a stage-order violation
  CHECK(run_cli("train-diffusion" + common) == 3);
  CHECK(run_cli("train-inverse" + common) == 0);
  // evaluate before train-diffusion: checkpoint exists but has no denoiser
  CHECK(run_cli("evaluate --checkpoint /tmp/odp_cli/ck.odck") == 3);
  CHECK(run_cli("train-diffusion" + common) == 0);

  CHECK(run_cli("evaluate --checkpoint /tmp/odp_cli/ck.odck --context 1,1,0 --out "
                "/tmp/odp_cli/eval.csv") == 0);
  const std::string eval_csv = slurp("/tmp/odp_cli/eval.csv");
  CHECK(eval_csv.find("variant,env,seed,mean_return,norm_score") != std::string::npos);
  CHECK(eval_csv.find("# config-fnv1a") != std::string::npos);

  // interpolation sweep on the trained checkpoint
  CHECK(run_cli("interpolate --checkpoint /tmp/odp_cli/ck.odck --points 3 --out "
                "/tmp/odp_cli/interp.csv --set eval_episodes=2 --set eval_seeds=1") == 0);
  CHECK(slurp("/tmp/odp_cli/interp.csv").find("param,mean_return,std") != std::string::npos);

  // determinism of the whole training path: rerun into a fresh checkpoint
  const std::string common2 =
      " --data-dir /tmp/odp_cli/data --checkpoint /tmp/odp_cli/ck2.odck" + overrides;
  CHECK(run_cli("train-classifier" + common2) == 0);
  CHECK(run_cli("train-inverse" + common2) == 0);
  CHECK(run_cli("train-diffusion" + common2) == 0);
  CHECK(slurp("/tmp/odp_cli/ck.odck") == slurp("/tmp/odp_cli/ck2.odck"));
}
