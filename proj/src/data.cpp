#include "aef/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>

namespace aef::data {

Matrix dequantize(const Matrix& raw, Rng& rng) {
  for (Index j = 0; j < raw.cols(); ++j)
    for (Index i = 0; i < raw.rows(); ++i) {
      const double v = raw(i, j);
      if (v < 0.0 || v > 255.0 || std::floor(v) != v)
        throw DomainError("dequantize: inputs must be integers in 0..255");
    }
  Matrix out(raw.rows(), raw.cols());
  for (Index j = 0; j < raw.cols(); ++j)
    for (Index i = 0; i < raw.rows(); ++i)
      out(i, j) = (raw(i, j) + rng.u01()) / 256.0;
  return out;
}

Matrix add_noise(const Matrix& batch, const NoiseSpec& spec, Rng& rng) {
  require(spec.sigma >= 0.0, "add_noise: sigma must be nonnegative");
  if (spec.sigma == 0.0) return batch;
  Matrix out = batch + spec.sigma * rng.normal_matrix(batch.rows(), batch.cols());
  return out.cwiseMax(spec.clip_lo).cwiseMin(spec.clip_hi);
}

ToyKind toy_kind_from_string(const std::string& s) {
  if (s == "sine-curve") return ToyKind::SineCurve;
  if (s == "circle") return ToyKind::Circle;
  if (s == "swiss-ribbon") return ToyKind::SwissRibbon;
  throw DomainError("toy_manifold: unsupported kind '" + s + "'");
}

std::string to_string(ToyKind k) {
  switch (k) {
    case ToyKind::SineCurve: return "sine-curve";
    case ToyKind::Circle: return "circle";
    case ToyKind::SwissRibbon: return "swiss-ribbon";
  }
  return "?";
}

namespace {

Index embedding_dim(ToyKind k) {
  return k == ToyKind::SwissRibbon ? 3 : 2;
}

Index intrinsic(ToyKind k) { return k == ToyKind::SwissRibbon ? 2 : 1; }

// Curve/surface point for parameters in [0, 1]^intrinsic.
Vector manifold_point(ToyKind k, double t, double h) {
  switch (k) {
    case ToyKind::SineCurve: {
      const double u = 2.0 * t - 1.0;
      Vector p(2);
      p << u, std::sin(M_PI * u);
      return p;
    }
    case ToyKind::Circle: {
      const double a = 2.0 * M_PI * t;
      Vector p(2);
      p << std::cos(a), std::sin(a);
      return p;
    }
    case ToyKind::SwissRibbon: {
      const double a = M_PI * (1.5 + 3.0 * t);
      Vector p(3);
      p << a * std::cos(a) / (4.5 * M_PI), h, a * std::sin(a) / (4.5 * M_PI);
      return p;
    }
  }
  throw DomainError("manifold_point: bad kind");
}

Matrix orthonormal_basis(Index ambient, Index k, Rng& rng) {
  Matrix g = rng.normal_matrix(ambient, k);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(ambient, k);
  return q;
}

}  // namespace

ToyManifold toy_manifold(ToyKind kind, Index ambient_dim, Index count,
                         double noise, std::uint64_t seed) {
  require(count >= 1, "toy_manifold: count must be >= 1");
  require(noise >= 0.0, "toy_manifold: noise must be nonnegative");
  const Index k = embedding_dim(kind);
  require(intrinsic(kind) < ambient_dim,
          "toy_manifold: intrinsic dimension must be below the ambient one");
  require(ambient_dim >= k, "toy_manifold: ambient dimension too small");

  ToyManifold toy;
  toy.kind = kind;
  toy.intrinsic_dim = intrinsic(kind);
  toy.noise = noise;
  toy.seed = seed;

  Rng rng(seed);
  toy.basis = ambient_dim == k ? Matrix::Identity(ambient_dim, k)
                               : orthonormal_basis(ambient_dim, k, rng);
  toy.center = Vector::Zero(ambient_dim);

  Matrix clean(ambient_dim, count);
  for (Index j = 0; j < count; ++j) {
    const double t = rng.u01();
    const double h = rng.u01();
    clean.col(j) = toy.basis * manifold_point(kind, t, h) + toy.center;
  }
  toy.clean = clean;

  Matrix noisy = clean;
  if (noise > 0.0) {
    const double per_dim = noise / std::sqrt(static_cast<double>(ambient_dim));
    noisy += per_dim * rng.normal_matrix(ambient_dim, count);
  }
  toy.data.samples = std::move(noisy);
  toy.data.name = to_string(kind);
  toy.data.dequantized = false;
  return toy;
}

double ToyManifold::distance_to_manifold(const Vector& x) const {
  const Vector r = x - center;
  const Vector p = basis.transpose() * r;       // in-plane coordinates
  const double off2 = (r - basis * p).squaredNorm();
  double best = std::numeric_limits<double>::infinity();
  const int grid = 2000;
  for (int i = 0; i <= grid; ++i) {
    const double t = static_cast<double>(i) / grid;
    double h = 0.0;
    if (kind == ToyKind::SwissRibbon) {
      // the height coordinate is linear: project and clamp
      h = std::clamp(p[1], 0.0, 1.0);
    }
    const double d2 = (p - manifold_point(kind, t, h)).squaredNorm();
    best = std::min(best, d2);
  }
  return std::sqrt(best + off2);
}

SplitResult split(const Dataset& ds, double validation_fraction,
                  std::uint64_t seed) {
  require(validation_fraction > 0.0 && validation_fraction < 1.0,
          "split: fraction must lie in (0, 1)");
  const Index n = ds.count();
  const Index n_val = static_cast<Index>(
      std::llround(validation_fraction * static_cast<double>(n)));
  require(n_val >= 1 && n_val < n, "split: degenerate split sizes");

  std::vector<Index> idx(n);
  std::iota(idx.begin(), idx.end(), Index{0});
  Rng rng(seed);
  for (Index i = n - 1; i > 0; --i)
    std::swap(idx[i], idx[rng.below(static_cast<std::uint64_t>(i) + 1)]);

  SplitResult r;
  r.val_idx.assign(idx.begin(), idx.begin() + n_val);
  r.train_idx.assign(idx.begin() + n_val, idx.end());
  auto take = [&](const std::vector<Index>& which) {
    Matrix m(ds.dim(), static_cast<Index>(which.size()));
    for (std::size_t j = 0; j < which.size(); ++j)
      m.col(static_cast<Index>(j)) = ds.samples.col(which[j]);
    return m;
  };
  r.train = Dataset{take(r.train_idx), ds.name + "/train", ds.image, ds.dequantized};
  r.val = Dataset{take(r.val_idx), ds.name + "/val", ds.image, ds.dequantized};
  return r;
}

// ---------------------------------------------------------------------------
// IDX container

namespace {

std::uint32_t read_be32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

void write_be32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v)};
  os.write(reinterpret_cast<char*>(b), 4);
}

}  // namespace

IdxImages read_idx_images(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw NumericError("read_idx_images: cannot open " + path);
  const std::uint32_t magic = read_be32(is);
  if (magic != 0x00000803)
    throw DomainError("read_idx_images: bad magic (expected idx3-ubyte)");
  const Index count = read_be32(is);
  IdxImages out;
  out.h = read_be32(is);
  out.w = read_be32(is);
  const Index dim = out.h * out.w;
  std::vector<unsigned char> buf(static_cast<std::size_t>(dim));
  out.pixels.resize(dim, count);
  for (Index j = 0; j < count; ++j) {
    is.read(reinterpret_cast<char*>(buf.data()), dim);
    if (!is) throw NumericError("read_idx_images: truncated file");
    for (Index i = 0; i < dim; ++i) out.pixels(i, j) = static_cast<double>(buf[i]);
  }
  return out;
}

void write_idx_images(const std::string& path, const Matrix& images, Index h,
                      Index w) {
  require(images.rows() == h * w, "write_idx_images: shape mismatch");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw NumericError("write_idx_images: cannot open " + path);
  write_be32(os, 0x00000803);
  write_be32(os, static_cast<std::uint32_t>(images.cols()));
  write_be32(os, static_cast<std::uint32_t>(h));
  write_be32(os, static_cast<std::uint32_t>(w));
  std::vector<unsigned char> buf(static_cast<std::size_t>(images.rows()));
  for (Index j = 0; j < images.cols(); ++j) {
    for (Index i = 0; i < images.rows(); ++i)
      buf[i] = static_cast<unsigned char>(
          std::clamp(images(i, j), 0.0, 255.0));
    os.write(reinterpret_cast<char*>(buf.data()), images.rows());
  }
}

// ---------------------------------------------------------------------------
// Toy cache

namespace {

void write_matrix(std::ostream& os, const Matrix& m) {
  const std::uint64_t r = m.rows(), c = m.cols();
  os.write(reinterpret_cast<const char*>(&r), 8);
  os.write(reinterpret_cast<const char*>(&c), 8);
  os.write(reinterpret_cast<const char*>(m.data()),
           static_cast<std::streamsize>(sizeof(double) * m.size()));
}

Matrix read_matrix(std::istream& is) {
  std::uint64_t r = 0, c = 0;
  is.read(reinterpret_cast<char*>(&r), 8);
  is.read(reinterpret_cast<char*>(&c), 8);
  Matrix m(static_cast<Index>(r), static_cast<Index>(c));
  is.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(sizeof(double) * m.size()));
  if (!is) throw NumericError("toy cache: truncated binary file");
  return m;
}

}  // namespace

void save_toy_cache(const std::string& path, const ToyManifold& toy) {
  {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw NumericError("save_toy_cache: cannot open " + path);
    os.write("AEFTOY01", 8);
    write_matrix(os, toy.data.samples);
    write_matrix(os, toy.clean);
    write_matrix(os, toy.basis);
    write_matrix(os, toy.center);
  }
  nlohmann::json j;
  j["kind"] = to_string(toy.kind);
  j["ambient_dim"] = toy.data.dim();
  j["count"] = toy.data.count();
  j["intrinsic_dim"] = toy.intrinsic_dim;
  j["noise"] = toy.noise;
  j["seed"] = toy.seed;
  std::ofstream sj(path + ".json");
  sj << j.dump(2) << "\n";
}

ToyManifold load_toy_cache(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw NumericError("load_toy_cache: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (std::string(magic, 8) != "AEFTOY01")
    throw DomainError("load_toy_cache: bad magic");
  ToyManifold toy;
  toy.data.samples = read_matrix(is);
  toy.clean = read_matrix(is);
  toy.basis = read_matrix(is);
  toy.center = read_matrix(is);

  std::ifstream sj(path + ".json");
  if (!sj) throw NumericError("load_toy_cache: missing sidecar " + path + ".json");
  nlohmann::json j;
  sj >> j;
  toy.kind = toy_kind_from_string(j.at("kind").get<std::string>());
  toy.intrinsic_dim = j.at("intrinsic_dim").get<Index>();
  toy.noise = j.at("noise").get<double>();
  toy.seed = j.at("seed").get<std::uint64_t>();
  toy.data.name = to_string(toy.kind);
  return toy;
}

}  // namespace aef::data
