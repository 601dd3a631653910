#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "aef/data.hpp"
#include "aef/image_io.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>

using namespace aef;
using namespace aef::data;

TEST_CASE("dequantize") {
  Rng rng(1);

  SUBCASE("range is forced into [k/256, (k+1)/256)") {
    Matrix raw(2, 64);
    raw.row(0).setZero();
    raw.row(1).setConstant(255.0);
    Matrix out = dequantize(raw, rng);
    CHECK((out.row(0).array() >= 0.0).all());
    CHECK((out.row(0).array() < 1.0 / 256.0).all());
    CHECK((out.row(1).array() >= 255.0 / 256.0).all());
    CHECK((out.row(1).array() < 1.0).all());
  }

  SUBCASE("seeded reproducibility") {
    Matrix raw = Matrix::Constant(3, 5, 17.0);
    Rng a(7), b(7), c(8);
    CHECK((dequantize(raw, a) - dequantize(raw, b)).norm() == 0.0);
    CHECK((dequantize(raw, a) - dequantize(raw, c)).norm() != 0.0);
  }

  SUBCASE("out-of-range and non-integer inputs are rejected") {
    CHECK_THROWS_AS(dequantize(Matrix::Constant(1, 1, 256.0), rng), DomainError);
    CHECK_THROWS_AS(dequantize(Matrix::Constant(1, 1, -1.0), rng), DomainError);
    CHECK_THROWS_AS(dequantize(Matrix::Constant(1, 1, 3.5), rng), DomainError);
  }
}

TEST_CASE("add_noise") {
  Rng rng(2);
  Matrix batch = rng.uniform_matrix(4, 32, 0.0, 1.0);

  SUBCASE("sigma = 0 is the identity") {
    CHECK((add_noise(batch, {0.0, 0.0, 1.0}, rng) - batch).norm() == 0.0);
  }

  SUBCASE("output never leaves the clip range even at sigma = 10") {
    Matrix out = add_noise(batch, {10.0, 0.0, 1.0}, rng);
    CHECK((out.array() >= 0.0).all());
    CHECK((out.array() <= 1.0).all());
  }

  SUBCASE("negative sigma is rejected") {
    CHECK_THROWS_AS(add_noise(batch, {-0.1, 0.0, 1.0}, rng), DomainError);
  }
}

TEST_CASE("toy manifolds") {
  SUBCASE("circle in R^2 at zero noise satisfies x^2 + y^2 = 1") {
    auto toy = toy_manifold(ToyKind::Circle, 2, 200, 0.0, 3);
    for (Index j = 0; j < toy.data.count(); ++j)
      CHECK(std::abs(toy.data.samples.col(j).squaredNorm() - 1.0) <= 1e-6);
  }

  SUBCASE("seeded reproducibility") {
    auto a = toy_manifold(ToyKind::SineCurve, 10, 50, 0.05, 11);
    auto b = toy_manifold(ToyKind::SineCurve, 10, 50, 0.05, 11);
    auto c = toy_manifold(ToyKind::SineCurve, 10, 50, 0.05, 12);
    CHECK((a.data.samples - b.data.samples).norm() == 0.0);
    CHECK((a.data.samples - c.data.samples).norm() != 0.0);
  }

  SUBCASE("sine curve in R^10: 99% of samples lie within 3x the noise amplitude") {
    const double noise = 0.05;
    auto toy = toy_manifold(ToyKind::SineCurve, 10, 400, noise, 5);
    Index far = 0;
    for (Index j = 0; j < toy.data.count(); ++j)
      if (toy.distance_to_manifold(toy.data.samples.col(j)) > 3.0 * noise) ++far;
    CHECK(static_cast<double>(far) / toy.data.count() <= 0.01);
    // clean points are on the manifold
    CHECK(toy.distance_to_manifold(toy.clean.col(0)) <= 2e-3);
  }

  SUBCASE("swiss ribbon embeds into higher dimensions") {
    auto toy = toy_manifold(ToyKind::SwissRibbon, 6, 64, 0.01, 9);
    CHECK(toy.data.dim() == 6);
    CHECK(toy.intrinsic_dim == 2);
    CHECK((toy.basis.transpose() * toy.basis -
           Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(toy.distance_to_manifold(toy.clean.col(3)) <= 5e-3);
  }

  SUBCASE("bad arguments are rejected") {
    CHECK_THROWS_AS(toy_manifold(ToyKind::Circle, 1, 10, 0.0, 0), DomainError);
    CHECK_THROWS_AS(toy_manifold(ToyKind::SineCurve, 10, 0, 0.0, 0), DomainError);
    CHECK_THROWS_AS(toy_kind_from_string("moebius"), DomainError);
  }
}

TEST_CASE("split") {
  Rng rng(4);
  Dataset ds{rng.normal_matrix(3, 1000), "toy", std::nullopt, false};

  SUBCASE("0.1 of 1000 gives 900/100, disjoint and covering") {
    auto r = split(ds, 0.1, 17);
    CHECK(r.train.count() == 900);
    CHECK(r.val.count() == 100);
    std::vector<bool> seen(1000, false);
    for (Index i : r.train_idx) seen[i] = true;
    for (Index i : r.val_idx) {
      CHECK(!seen[i]);  // disjoint
      seen[i] = true;
    }
    CHECK(std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }));
  }

  SUBCASE("seeded reproducibility") {
    auto a = split(ds, 0.2, 5);
    auto b = split(ds, 0.2, 5);
    CHECK(a.val_idx == b.val_idx);
    auto c = split(ds, 0.2, 6);
    CHECK(a.val_idx != c.val_idx);
  }

  SUBCASE("degenerate fractions are rejected") {
    CHECK_THROWS_AS(split(ds, 0.0, 1), DomainError);
    CHECK_THROWS_AS(split(ds, 1.0, 1), DomainError);
    Dataset tiny{Matrix::Zero(2, 3), "t", std::nullopt, false};
    CHECK_THROWS_AS(split(tiny, 0.05, 1), DomainError);
  }
}

TEST_CASE("IDX round trip") {
  Rng rng(6);
  Matrix imgs(12, 7);
  for (Index j = 0; j < 7; ++j)
    for (Index i = 0; i < 12; ++i)
      imgs(i, j) = static_cast<double>(rng.below(256));
  const std::string path = "/tmp/aef_test_idx.idx3-ubyte";
  write_idx_images(path, imgs, 3, 4);
  auto back = read_idx_images(path);
  CHECK(back.h == 3);
  CHECK(back.w == 4);
  CHECK((back.pixels - imgs).norm() == 0.0);
  std::remove(path.c_str());
}

TEST_CASE("toy cache round trip keeps samples and generator parameters") {
  auto toy = toy_manifold(ToyKind::SineCurve, 8, 40, 0.1, 23);
  const std::string path = "/tmp/aef_test_toy.bin";
  save_toy_cache(path, toy);
  auto back = load_toy_cache(path);
  CHECK((back.data.samples - toy.data.samples).norm() == 0.0);
  CHECK((back.clean - toy.clean).norm() == 0.0);
  CHECK((back.basis - toy.basis).norm() == 0.0);
  CHECK(back.noise == toy.noise);
  CHECK(back.seed == toy.seed);
  CHECK(back.kind == toy.kind);
  std::remove(path.c_str());
  std::remove((path + ".json").c_str());
}

TEST_CASE("dequantization volume factor is consistent with the 8-bit BPD shift") {
  // Scaling by 1/256 adds log(256) nats per dim; in bits that is exactly 8.
  CHECK(std::log(256.0) / kLn2 == doctest::Approx(8.0).epsilon(1e-12));
}

TEST_CASE("png grid writer") {
  Rng rng(7);
  Matrix samples = rng.uniform_matrix(12, 5, 0.0, 1.0);
  data::ImageShape shape{1, 3, 4};
  auto [grid, gshape] = img::tile_grid(samples, shape);
  CHECK(gshape.h == 9);   // ceil(sqrt(5)) = 3 tiles per side
  CHECK(gshape.w == 12);
  const std::string path = "/tmp/aef_test_grid.png";
  img::write_png(path, grid, gshape);
  CHECK(std::filesystem::file_size(path) > 0);
  std::remove(path.c_str());

  CHECK(img::quantize_pixel(0.0) == 0);
  CHECK(img::quantize_pixel(1.0) == 255);
  CHECK(img::quantize_pixel(0.5) == 128);
  CHECK(img::quantize_pixel(2.0) == 255);   // clipped
  CHECK(img::quantize_pixel(-1.0) == 0);
}
