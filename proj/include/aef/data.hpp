#pragma once

#include "aef/rng.hpp"
#include "aef/types.hpp"

#include <optional>
#include <string>
#include <vector>

namespace aef::data {

struct ImageShape {
  Index c = 1, h = 0, w = 0;
  Index size() const { return c * h * w; }
};

struct Dataset {
  Matrix samples;  // dim x count, one sample per column
  std::string name;
  std::optional<ImageShape> image;
  bool dequantized = false;

  Index count() const { return samples.cols(); }
  Index dim() const { return samples.rows(); }
};

/// (raw + u) / 256 with u ~ U(0,1) iid; output strictly inside [0, 1).
/// Inputs must be integers in 0..255.
Matrix dequantize(const Matrix& raw, Rng& rng);

struct NoiseSpec {
  double sigma = 0.0;         // noise standard deviation per entry
  double clip_lo = 0.0;
  double clip_hi = 1.0;
};

/// clip(batch + N(0, sigma^2), lo, hi); sigma must be nonnegative.
Matrix add_noise(const Matrix& batch, const NoiseSpec& spec, Rng& rng);

enum class ToyKind { SineCurve, Circle, SwissRibbon };
ToyKind toy_kind_from_string(const std::string& s);
std::string to_string(ToyKind k);

// Synthetic dataset on a known smooth manifold, embedded into the ambient
// space by a seeded orthonormal map. `noise` is the RMS amplitude of the
// isotropic noise vector (per-dimension std = noise / sqrt(N)), so a sample
// typically sits at distance ~noise from the manifold.
struct ToyManifold {
  Dataset data;   // noisy samples
  Matrix clean;   // the matching points on the manifold
  ToyKind kind = ToyKind::SineCurve;
  Index intrinsic_dim = 1;
  double noise = 0.0;
  std::uint64_t seed = 0;
  Matrix basis;   // ambient x embedding_dim, orthonormal columns
  Vector center;

  /// Euclidean distance from x to the embedded manifold (dense parameter
  /// sweep; accurate to ~1e-3 of the curve scale).
  double distance_to_manifold(const Vector& x) const;
};

ToyManifold toy_manifold(ToyKind kind, Index ambient_dim, Index count,
                         double noise, std::uint64_t seed);

struct SplitResult {
  Dataset train;
  Dataset val;
  std::vector<Index> train_idx, val_idx;
};

/// Disjoint, covering, seeded split; val size = round(fraction * count).
SplitResult split(const Dataset& ds, double validation_fraction,
                  std::uint64_t seed);

// IDX container (the MNIST byte format); values returned in 0..255.
struct IdxImages {
  Matrix pixels;  // (h*w) x count
  Index h = 0, w = 0;
};
IdxImages read_idx_images(const std::string& path);
void write_idx_images(const std::string& path, const Matrix& images, Index h,
                      Index w);

// Toy dataset cache: flat binary arrays + JSON sidecar with the generator
// parameters, so oracle checks can be replayed against cached data.
void save_toy_cache(const std::string& path, const ToyManifold& toy);
ToyManifold load_toy_cache(const std::string& path);

}  // namespace aef::data
