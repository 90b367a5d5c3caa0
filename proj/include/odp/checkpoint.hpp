#pragma once

#include <optional>
#include <string>

#include "odp/config.hpp"
#include "odp/context.hpp"
#include "odp/diffusion.hpp"

namespace odp {

/// Versioned container for everything a planning run needs: classifier phi,
/// inverse model psi, denoiser theta, all normalizer statistics, the noise
/// schedule and the RunConfig. Pipeline stages fill it progressively.
///
/// On-disk format "ODCK1" (little-endian): magic, payload = [u32 version,
/// u64 config_len + config text, u32 n_arrays, per array u32 name_len + name
/// + u64 count + f64 values], trailing u64 FNV-1a checksum of the payload.
struct Checkpoint {
  static constexpr uint32_t kVersion = 1;

  RunConfig config;

  // fitted at the first training stage, from the datasets
  Normalizer sa_norm;
  ReturnStats ret_stats;

  std::optional<DynamicsClassifier> classifier;
  Normalizer cls_out_norm;

  std::optional<InverseModel> inverse;
  Normalizer inv_err_norm;

  std::optional<Denoiser> denoiser;
  NoiseSchedule schedule;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  /// ContextModels view over the fitted pieces (classifier + inverse needed).
  ContextModels context_models();
};

}  // namespace odp
