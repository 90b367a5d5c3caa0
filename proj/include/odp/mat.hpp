#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>

namespace odp {

// All dense math in this project is double precision, row-major.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;
using Index = Eigen::Index;

inline bool all_finite(const Mat& m) { return m.allFinite(); }

inline std::string shape_str(const Mat& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

// FNV-1a 64-bit, used for dataset/checkpoint integrity checksums.
class Fnv1a {
 public:
  void update(const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      hash_ ^= p[i];
      hash_ *= 0x100000001b3ull;
    }
  }
  uint64_t digest() const { return hash_; }

 private:
  uint64_t hash_ = 0xcbf29ce484222325ull;
};

inline uint64_t fnv1a(const void* data, size_t n) {
  Fnv1a h;
  h.update(data, n);
  return h.digest();
}

inline uint64_t fnv1a(const std::string& s) { return fnv1a(s.data(), s.size()); }

}  // namespace odp
