#pragma once

#include "aef/types.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <string>

namespace aef {

// Deterministic random stream. Uniform and normal draws are generated
// directly from the engine bits (no distribution-object state), so a
// serialized engine restores the stream exactly mid-sequence.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : eng_(seed) {}

  /// Uniform draw strictly inside (0, 1).
  double u01() {
    return (static_cast<double>(eng_() >> 11) + 0.5) * 0x1p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * u01(); }

  /// Standard normal via Box-Muller; two engine draws per call, no cached spare.
  double normal() {
    const double u1 = u01();
    const double u2 = u01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  /// Uniform integer in [0, n). Lemire reduction, bias-free enough for n << 2^64.
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(eng_()) * n) >> 64);
  }

  Matrix normal_matrix(Index rows, Index cols) {
    Matrix m(rows, cols);
    for (Index j = 0; j < cols; ++j)
      for (Index i = 0; i < rows; ++i) m(i, j) = normal();
    return m;
  }

  Matrix uniform_matrix(Index rows, Index cols, double lo = 0.0, double hi = 1.0) {
    Matrix m(rows, cols);
    for (Index j = 0; j < cols; ++j)
      for (Index i = 0; i < rows; ++i) m(i, j) = uniform(lo, hi);
    return m;
  }

  /// Derives an independent child stream; advances this stream by one draw.
  Rng fork() { return Rng(eng_() ^ 0x9e3779b97f4a7c15ull); }

  std::string serialize() const {
    std::ostringstream os;
    os << eng_;
    return os.str();
  }

  void deserialize(const std::string& s) {
    std::istringstream is(s);
    is >> eng_;
    if (is.fail()) throw NumericError("Rng::deserialize: malformed state string");
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace aef
