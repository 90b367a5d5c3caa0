#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "odp/env.hpp"
#include "odp/mat.hpp"
#include "odp/rng.hpp"

namespace odp {

// Origin labels follow the classifier convention: y = 0 source, y = 1 target.
enum class Origin : uint8_t { source = 0, target = 1 };

struct Transition {
  Vec s;
  Vec a;
  double r = 0.0;
  Vec s_next;
  bool done = false;
  Origin origin = Origin::source;
};

/// H+1 steps of stacked states/actions plus per-step rewards, never crossing
/// an episode boundary and never mixing origins.
struct Trajectory {
  Mat states;   // (H+1) x state_dim
  Mat actions;  // (H+1) x action_dim
  Vec rewards;  // H+1
  Origin origin = Origin::source;
};

struct Dataset {
  int state_dim = kStateDim;
  int action_dim = kActionDim;
  int episode_len = 48;
  Origin origin = Origin::source;
  double gamma = 0.99;
  std::vector<Episode> episodes;

  long n_transitions() const {
    return static_cast<long>(episodes.size()) * episode_len;
  }
  Transition transition(int episode, int t) const;
};

// ---------------------------------------------------------------------------
// on-disk format "ODDF1" (bit-exact):
//   magic "ODDF1", LE u32 {state_dim, action_dim, n_episodes, episode_len},
//   u8 origin, f64 gamma, per-episode f64 arrays states[(L+1)*sdim],
//   actions[L*adim], rewards[L], trailing u64 FNV-1a checksum of the payload
//   bytes (everything after the magic, before the checksum).
// ---------------------------------------------------------------------------
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

struct DatasetConfig {
  double gamma = 0.99;
  int horizon = 15;       // H; windows are H+1 steps
  long n_source = 200000;  // requested transition counts; generation rounds up
  long n_target = 10000;   //   to whole episodes
  uint64_t seed = 0;
};

/// Rolls out the expert on the variant's source dynamics and the noisy
/// suboptimal policy on its target dynamics until each dataset holds at least
/// the requested number of transitions (whole episodes only).
std::pair<Dataset, Dataset> generate_datasets(const std::string& variant_id,
                                              const DatasetConfig& cfg);

// ---------------------------------------------------------------------------
// windows (Trajectory views into a dataset)
// ---------------------------------------------------------------------------
struct WindowRef {
  int episode = 0;
  int start = 0;
};

/// All length-(H+1) contiguous windows of every episode.
std::vector<WindowRef> make_windows(const Dataset& ds, int H);
Trajectory get_window(const Dataset& ds, WindowRef ref, int H);
/// Discounted return sum_{i=0..H} gamma^i r_{t+i} of a window.
double window_return(const Dataset& ds, WindowRef ref, int H);

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------
class Normalizer {
 public:
  enum class Mode { to_unit, to_sym };

  Normalizer() = default;
  Normalizer(Vec min, Vec max, Mode mode);

  /// Per-column min/max over the rows of one or more sample matrices.
  static Normalizer fit_rows(const std::vector<const Mat*>& samples, Mode mode);

  bool fitted() const { return min_.size() > 0; }
  Index dims() const { return min_.size(); }
  Mode mode() const { return mode_; }
  const Vec& min() const { return min_; }
  const Vec& max() const { return max_; }

  // Degenerate dimensions (max <= min) normalize to 0.
  double normalize(double v, Index dim) const;
  double denormalize(double v, Index dim) const;
  Mat normalize_rows(const Mat& rows) const;
  Mat denormalize_rows(const Mat& rows) const;

 private:
  Vec min_, max_;
  Mode mode_ = Mode::to_unit;
};

/// to_sym normalizer over the union of both datasets' states and actions;
/// dimension layout [state dims | action dims].
Normalizer fit_state_action_normalizer(const Dataset& a, const Dataset& b);

struct ReturnStats {
  double rmin = 0.0;
  double rmax = 0.0;
  double gamma = 0.99;
};

/// Pooled min/max of discounted window returns over both datasets.
ReturnStats fit_return_stats(const Dataset& a, const Dataset& b, int H);

double discounted_return(const Trajectory& traj, double gamma);
/// Min-max mapped to [0, 1] and clamped. Throws ContractError without stats.
double normalized_return(const Trajectory& traj, const ReturnStats& stats);

// ---------------------------------------------------------------------------
// 1:1 stratified sampling
// ---------------------------------------------------------------------------
struct StratifiedIndices {
  std::vector<int> source;  // indices into the source window list
  std::vector<int> target;  // indices into the target window list
};

/// batch_size/2 draws from each pool, uniform with replacement.
StratifiedIndices stratified_indices(size_t n_source_windows, size_t n_target_windows,
                                     int batch_size, Rng& rng);

/// Assembled Trajectory form of the stratified batch.
std::vector<Trajectory> stratified_batch(const Dataset& source, const Dataset& target,
                                         const std::vector<WindowRef>& source_windows,
                                         const std::vector<WindowRef>& target_windows, int H,
                                         int batch_size, Rng& rng);

}  // namespace odp
