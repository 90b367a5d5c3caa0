#include "odp/dataset.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "odp/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "dataset/checkpoint formats are little-endian");

namespace odp {

Transition Dataset::transition(int episode, int t) const {
  const Episode& ep = episodes.at(episode);
  Transition tr;
  tr.s = ep.states.row(t).transpose();
  tr.a = ep.actions.row(t).transpose();
  tr.r = ep.rewards(t);
  tr.s_next = ep.states.row(t + 1).transpose();
  tr.done = (t + 1 == episode_len);
  tr.origin = origin;
  return tr;
}

// ---------------------------------------------------------------------------
// binary IO
// ---------------------------------------------------------------------------
namespace {

constexpr char kMagic[5] = {'O', 'D', 'D', 'F', '1'};

class PayloadWriter {
 public:
  explicit PayloadWriter(std::ofstream& out) : out_(out) {}
  void raw(const void* p, size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    hash_.update(p, n);
  }
  void u32(uint32_t v) { raw(&v, 4); }
  void u8(uint8_t v) { raw(&v, 1); }
  void f64(double v) { raw(&v, 8); }
  void f64_array(const double* p, size_t n) { raw(p, n * 8); }
  uint64_t digest() const { return hash_.digest(); }

 private:
  std::ofstream& out_;
  Fnv1a hash_;
};

class PayloadReader {
 public:
  PayloadReader(const std::string& bytes, size_t start, size_t end, const std::string& path)
      : bytes_(bytes), at_(start), end_(end), path_(path) {}
  void raw(void* p, size_t n) {
    if (at_ + n > end_) throw IoError("corrupt file (truncated payload): " + path_);
    std::memcpy(p, bytes_.data() + at_, n);
    at_ += n;
  }
  uint32_t u32() {
    uint32_t v;
    raw(&v, 4);
    return v;
  }
  uint8_t u8() {
    uint8_t v;
    raw(&v, 1);
    return v;
  }
  double f64() {
    double v;
    raw(&v, 8);
    return v;
  }
  void f64_array(double* p, size_t n) { raw(p, n * 8); }

 private:
  const std::string& bytes_;
  size_t at_, end_;
  std::string path_;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(kMagic, 5);

  PayloadWriter w(out);
  w.u32(static_cast<uint32_t>(ds.state_dim));
  w.u32(static_cast<uint32_t>(ds.action_dim));
  w.u32(static_cast<uint32_t>(ds.episodes.size()));
  w.u32(static_cast<uint32_t>(ds.episode_len));
  w.u8(static_cast<uint8_t>(ds.origin));
  w.f64(ds.gamma);
  for (const Episode& ep : ds.episodes) {
    w.f64_array(ep.states.data(), static_cast<size_t>(ep.states.size()));
    w.f64_array(ep.actions.data(), static_cast<size_t>(ep.actions.size()));
    w.f64_array(ep.rewards.data(), static_cast<size_t>(ep.rewards.size()));
  }
  const uint64_t checksum = w.digest();
  out.write(reinterpret_cast<const char*>(&checksum), 8);
  if (!out) throw IoError("write failure: " + path);
}

Dataset load_dataset(const std::string& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 5 + 8 || std::memcmp(bytes.data(), kMagic, 5) != 0)
    throw IoError("corrupt file (bad magic): " + path);

  const size_t payload_end = bytes.size() - 8;
  uint64_t stored;
  std::memcpy(&stored, bytes.data() + payload_end, 8);
  if (fnv1a(bytes.data() + 5, payload_end - 5) != stored)
    throw IoError("corrupt file (checksum mismatch): " + path);

  PayloadReader r(bytes, 5, payload_end, path);
  Dataset ds;
  ds.state_dim = static_cast<int>(r.u32());
  ds.action_dim = static_cast<int>(r.u32());
  const uint32_t n_episodes = r.u32();
  ds.episode_len = static_cast<int>(r.u32());
  ds.origin = static_cast<Origin>(r.u8());
  ds.gamma = r.f64();
  const int L = ds.episode_len;
  ds.episodes.resize(n_episodes);
  for (Episode& ep : ds.episodes) {
    ep.states.resize(L + 1, ds.state_dim);
    ep.actions.resize(L, ds.action_dim);
    ep.rewards.resize(L);
    r.f64_array(ep.states.data(), static_cast<size_t>(ep.states.size()));
    r.f64_array(ep.actions.data(), static_cast<size_t>(ep.actions.size()));
    r.f64_array(ep.rewards.data(), static_cast<size_t>(ep.rewards.size()));
    ep.total_reward = ep.rewards.sum();
  }
  return ds;
}

// ---------------------------------------------------------------------------
// generation
// ---------------------------------------------------------------------------
namespace {

Dataset collect(const EnvParams& params, const ScriptedPolicy& policy, Origin origin,
                long n_transitions, double gamma, Rng stream) {
  Dataset ds;
  ds.state_dim = kStateDim;
  ds.action_dim = kActionDim;
  ds.episode_len = params.episode_len;
  ds.origin = origin;
  ds.gamma = gamma;
  const long n_episodes = (n_transitions + params.episode_len - 1) / params.episode_len;
  ds.episodes.reserve(static_cast<size_t>(n_episodes));
  for (long i = 0; i < n_episodes; ++i) {
    Rng ep_rng = stream.split(static_cast<uint64_t>(i));
    ds.episodes.push_back(rollout(params, policy, ep_rng));
  }
  return ds;
}

}  // namespace

std::pair<Dataset, Dataset> generate_datasets(const std::string& variant_id,
                                              const DatasetConfig& cfg) {
  const EnvVariant& variant = find_variant(variant_id);
  Rng root(cfg.seed);
  Dataset source = collect(variant.source, ScriptedPolicy::expert(), Origin::source,
                           cfg.n_source, cfg.gamma, root.split("gen-source"));
  Dataset target = collect(variant.target, ScriptedPolicy::noisy(), Origin::target,
                           cfg.n_target, cfg.gamma, root.split("gen-target"));
  return {std::move(source), std::move(target)};
}

// ---------------------------------------------------------------------------
// windows
// ---------------------------------------------------------------------------
std::vector<WindowRef> make_windows(const Dataset& ds, int H) {
  if (H + 1 > ds.episode_len)
    throw ConfigError("window length H+1 = " + std::to_string(H + 1) +
                      " exceeds episode_len = " + std::to_string(ds.episode_len));
  std::vector<WindowRef> out;
  const int per_episode = ds.episode_len - (H + 1) + 1;
  out.reserve(ds.episodes.size() * static_cast<size_t>(per_episode));
  for (int e = 0; e < static_cast<int>(ds.episodes.size()); ++e)
    for (int t = 0; t < per_episode; ++t) out.push_back({e, t});
  return out;
}

Trajectory get_window(const Dataset& ds, WindowRef ref, int H) {
  const Episode& ep = ds.episodes.at(ref.episode);
  Trajectory traj;
  traj.states = ep.states.block(ref.start, 0, H + 1, ds.state_dim);
  traj.actions = ep.actions.block(ref.start, 0, H + 1, ds.action_dim);
  traj.rewards = ep.rewards.segment(ref.start, H + 1);
  traj.origin = ds.origin;
  return traj;
}

double window_return(const Dataset& ds, WindowRef ref, int H) {
  const Episode& ep = ds.episodes.at(ref.episode);
  double acc = 0.0, g = 1.0;
  for (int i = 0; i <= H; ++i) {
    acc += g * ep.rewards(ref.start + i);
    g *= ds.gamma;
  }
  return acc;
}

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------
Normalizer::Normalizer(Vec min, Vec max, Mode mode)
    : min_(std::move(min)), max_(std::move(max)), mode_(mode) {
  if (min_.size() != max_.size())
    throw ContractError("Normalizer: min/max dimension mismatch");
}

Normalizer Normalizer::fit_rows(const std::vector<const Mat*>& samples, Mode mode) {
  if (samples.empty() || samples[0]->rows() == 0)
    throw ContractError("Normalizer::fit_rows: no samples");
  const Index d = samples[0]->cols();
  Vec mn = Vec::Constant(d, std::numeric_limits<double>::infinity());
  Vec mx = Vec::Constant(d, -std::numeric_limits<double>::infinity());
  for (const Mat* m : samples) {
    if (m->cols() != d) throw ContractError("Normalizer::fit_rows: column mismatch");
    mn = mn.cwiseMin(m->colwise().minCoeff().transpose());
    mx = mx.cwiseMax(m->colwise().maxCoeff().transpose());
  }
  return Normalizer(std::move(mn), std::move(mx), mode);
}

double Normalizer::normalize(double v, Index dim) const {
  if (!fitted()) throw ContractError("Normalizer: not fitted");
  const double lo = min_(dim), hi = max_(dim);
  if (!(hi > lo)) return 0.0;
  const double u = (v - lo) / (hi - lo);
  return mode_ == Mode::to_unit ? u : 2.0 * u - 1.0;
}

double Normalizer::denormalize(double v, Index dim) const {
  if (!fitted()) throw ContractError("Normalizer: not fitted");
  const double lo = min_(dim), hi = max_(dim);
  if (!(hi > lo)) return lo;
  const double u = mode_ == Mode::to_unit ? v : (v + 1.0) / 2.0;
  return lo + u * (hi - lo);
}

Mat Normalizer::normalize_rows(const Mat& rows) const {
  if (rows.cols() != dims()) throw ContractError("Normalizer: dimension mismatch");
  Mat out(rows.rows(), rows.cols());
  for (Index c = 0; c < rows.cols(); ++c)
    for (Index r = 0; r < rows.rows(); ++r) out(r, c) = normalize(rows(r, c), c);
  return out;
}

Mat Normalizer::denormalize_rows(const Mat& rows) const {
  if (rows.cols() != dims()) throw ContractError("Normalizer: dimension mismatch");
  Mat out(rows.rows(), rows.cols());
  for (Index c = 0; c < rows.cols(); ++c)
    for (Index r = 0; r < rows.rows(); ++r) out(r, c) = denormalize(rows(r, c), c);
  return out;
}

Normalizer fit_state_action_normalizer(const Dataset& a, const Dataset& b) {
  const Index sd = a.state_dim, ad = a.action_dim;
  Vec mn = Vec::Constant(sd + ad, std::numeric_limits<double>::infinity());
  Vec mx = Vec::Constant(sd + ad, -std::numeric_limits<double>::infinity());
  for (const Dataset* ds : {&a, &b}) {
    for (const Episode& ep : ds->episodes) {
      mn.head(sd) = mn.head(sd).cwiseMin(ep.states.colwise().minCoeff().transpose());
      mx.head(sd) = mx.head(sd).cwiseMax(ep.states.colwise().maxCoeff().transpose());
      mn.tail(ad) = mn.tail(ad).cwiseMin(ep.actions.colwise().minCoeff().transpose());
      mx.tail(ad) = mx.tail(ad).cwiseMax(ep.actions.colwise().maxCoeff().transpose());
    }
  }
  return Normalizer(std::move(mn), std::move(mx), Normalizer::Mode::to_sym);
}

ReturnStats fit_return_stats(const Dataset& a, const Dataset& b, int H) {
  if (a.gamma != b.gamma) throw ContractError("fit_return_stats: datasets disagree on gamma");
  ReturnStats st;
  st.gamma = a.gamma;
  st.rmin = std::numeric_limits<double>::infinity();
  st.rmax = -std::numeric_limits<double>::infinity();
  for (const Dataset* ds : {&a, &b}) {
    for (const WindowRef& w : make_windows(*ds, H)) {
      const double r = window_return(*ds, w, H);
      st.rmin = std::min(st.rmin, r);
      st.rmax = std::max(st.rmax, r);
    }
  }
  return st;
}

double discounted_return(const Trajectory& traj, double gamma) {
  double acc = 0.0, g = 1.0;
  for (Index i = 0; i < traj.rewards.size(); ++i) {
    acc += g * traj.rewards(i);
    g *= gamma;
  }
  return acc;
}

double normalized_return(const Trajectory& traj, const ReturnStats& stats) {
  if (!(stats.rmax > stats.rmin))
    throw ContractError("normalized_return: return stats missing or degenerate");
  const double r = discounted_return(traj, stats.gamma);
  return std::clamp((r - stats.rmin) / (stats.rmax - stats.rmin), 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// stratified sampling
// ---------------------------------------------------------------------------
StratifiedIndices stratified_indices(size_t n_source_windows, size_t n_target_windows,
                                     int batch_size, Rng& rng) {
  if (batch_size <= 0 || batch_size % 2 != 0)
    throw ConfigError("stratified batch size must be positive and even, got " +
                      std::to_string(batch_size));
  if (n_source_windows == 0 || n_target_windows == 0)
    throw ContractError("stratified sampling from an empty window pool");
  StratifiedIndices out;
  const int half = batch_size / 2;
  out.source.reserve(half);
  out.target.reserve(half);
  for (int i = 0; i < half; ++i)
    out.source.push_back(static_cast<int>(rng.uniform_int(n_source_windows)));
  for (int i = 0; i < half; ++i)
    out.target.push_back(static_cast<int>(rng.uniform_int(n_target_windows)));
  return out;
}

std::vector<Trajectory> stratified_batch(const Dataset& source, const Dataset& target,
                                         const std::vector<WindowRef>& source_windows,
                                         const std::vector<WindowRef>& target_windows, int H,
                                         int batch_size, Rng& rng) {
  StratifiedIndices idx =
      stratified_indices(source_windows.size(), target_windows.size(), batch_size, rng);
  std::vector<Trajectory> batch;
  batch.reserve(static_cast<size_t>(batch_size));
  for (int i : idx.source) batch.push_back(get_window(source, source_windows[i], H));
  for (int i : idx.target) batch.push_back(get_window(target, target_windows[i], H));
  return batch;
}

}  // namespace odp
