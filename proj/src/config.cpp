#include "odp/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "odp/errors.hpp"

namespace odp {

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_num(const std::string& key, const std::string& value) {
  T out{};
  const char* first = value.data();
  const char* last = value.data() + value.size();
  std::from_chars_result r;
  if constexpr (std::is_floating_point_v<T>)
    r = std::from_chars(first, last, out);
  else
    r = std::from_chars(first, last, out);
  if (r.ec != std::errc{} || r.ptr != last)
    throw ConfigError("config: bad value for '" + key + "': '" + value + "'");
  return out;
}

}  // namespace

std::string RunConfig::serialize() const {
  std::map<std::string, std::string> kv{
      {"blocks", std::to_string(blocks)},
      {"context_batch", std::to_string(context_batch)},
      {"context_lr", fmt_double(context_lr)},
      {"context_updates", std::to_string(context_updates)},
      {"context_variant", context_variant},
      {"ctx_dim", std::to_string(ctx_dim)},
      {"diffusion_batch", std::to_string(diffusion_batch)},
      {"diffusion_lr", fmt_double(diffusion_lr)},
      {"diffusion_steps", std::to_string(diffusion_steps)},
      {"diffusion_updates", std::to_string(diffusion_updates)},
      {"env", env},
      {"epsilon", fmt_double(epsilon)},
      {"eval_episodes", std::to_string(eval_episodes)},
      {"eval_seeds", eval_seeds},
      {"gamma", fmt_double(gamma)},
      {"guidance_w", fmt_double(guidance_w)},
      {"horizon", std::to_string(horizon)},
      {"n_source", std::to_string(n_source)},
      {"n_target", std::to_string(n_target)},
      {"p_dropout", fmt_double(p_dropout)},
      {"replan_every", std::to_string(replan_every)},
      {"seed", std::to_string(seed)},
      {"time_dim", std::to_string(time_dim)},
      {"train_data", train_data},
      {"width", std::to_string(width)},
  };
  std::ostringstream out;
  for (const auto& [k, v] : kv) out << k << " = " << v << "\n";
  return out.str();
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "env") env = value;
  else if (key == "seed") seed = parse_num<uint64_t>(key, value);
  else if (key == "gamma") gamma = parse_num<double>(key, value);
  else if (key == "n_source") n_source = parse_num<long>(key, value);
  else if (key == "n_target") n_target = parse_num<long>(key, value);
  else if (key == "horizon") horizon = parse_num<int>(key, value);
  else if (key == "context_updates") context_updates = parse_num<long>(key, value);
  else if (key == "context_batch") context_batch = parse_num<int>(key, value);
  else if (key == "context_lr") context_lr = parse_num<double>(key, value);
  else if (key == "epsilon") epsilon = parse_num<double>(key, value);
  else if (key == "diffusion_steps") diffusion_steps = parse_num<int>(key, value);
  else if (key == "diffusion_updates") diffusion_updates = parse_num<long>(key, value);
  else if (key == "diffusion_batch") diffusion_batch = parse_num<int>(key, value);
  else if (key == "diffusion_lr") diffusion_lr = parse_num<double>(key, value);
  else if (key == "p_dropout") p_dropout = parse_num<double>(key, value);
  else if (key == "width") width = parse_num<int>(key, value);
  else if (key == "blocks") blocks = parse_num<int>(key, value);
  else if (key == "time_dim") time_dim = parse_num<int>(key, value);
  else if (key == "ctx_dim") ctx_dim = parse_num<int>(key, value);
  else if (key == "context_variant") context_variant = value;
  else if (key == "train_data") {
    if (value != "both" && value != "source_only" && value != "target_only")
      throw ConfigError("config: train_data must be both|source_only|target_only");
    train_data = value;
  } else if (key == "guidance_w") guidance_w = parse_num<double>(key, value);
  else if (key == "replan_every") replan_every = parse_num<int>(key, value);
  else if (key == "eval_episodes") eval_episodes = parse_num<int>(key, value);
  else if (key == "eval_seeds") eval_seeds = value;
  else throw ConfigError("config: unknown key '" + key + "'");
}

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: line " + std::to_string(lineno) + " is not 'key = value'");
    cfg.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_text(text);
}

std::vector<uint64_t> RunConfig::eval_seed_list() const {
  std::vector<uint64_t> out;
  std::string token;
  std::istringstream in(eval_seeds);
  while (std::getline(in, token, ',')) {
    const std::string t = trim(token);
    if (!t.empty()) out.push_back(parse_num<uint64_t>("eval_seeds", t));
  }
  if (out.empty()) throw ConfigError("config: eval_seeds must list at least one seed");
  return out;
}

}  // namespace odp
