#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "aef/bijections.hpp"
#include "oracles.hpp"
#include "test_helpers.hpp"

#include <cmath>
#include <memory>

using namespace aef;
using namespace aef::flows;

namespace {

// Forward map of a bijection as a plain Vector -> Vector function.
std::function<Vector(const Vector&)> as_fn(const Bijection& b,
                                           const ParameterStore& store) {
  return [&](const Vector& y) -> Vector {
    return forward_values(b, store, y).first.col(0);
  };
}

void check_round_trip(const Bijection& b, const ParameterStore& store,
                      const Matrix& y, double tol = 1e-5) {
  auto [yp, ld_fwd] = forward_values(b, store, y);
  auto [back, ld_inv] = b.inverse(store, yp);
  for (Index j = 0; j < y.cols(); ++j) {
    CHECK((back.col(j) - y.col(j)).norm() <= tol * (1.0 + y.col(j).norm()));
    CHECK(std::abs(ld_fwd[j] + ld_inv[j]) <= 1e-8 * (1.0 + std::abs(ld_fwd[j])));
  }
}

}  // namespace

TEST_CASE("identity-initialized coupling is the identity with zero logdet") {
  ParameterStore store;
  Rng rng(1);
  CouplingLayer c(store, "c", 4, {0, 1}, {2, 3}, {8}, nets::Activation::Tanh, rng);
  Matrix y = rng.normal_matrix(4, 5);
  auto [yp, ld] = forward_values(c, store, y);
  CHECK((yp - y).norm() == 0.0);
  CHECK(ld.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("coupling matches the hand-evaluated scale/shift example") {
  // s = (2, 4), m = (1, -1) as constant nets; y2 = (0, 0).
  ParameterStore store;
  Rng rng(2);
  CouplingLayer c(store, "c", 4, {0, 1}, {2, 3}, {}, nets::Activation::Tanh, rng);
  store.view(store.find("c.scale.out.b")).col(0) << std::log(2.0), std::log(4.0);
  store.view(store.find("c.shift.out.b")).col(0) << 1.0, -1.0;

  Vector y(4);
  y << 0.7, -0.3, 0.0, 0.0;
  auto [yp, ld] = forward_values(c, store, y);
  CHECK(yp(0, 0) == doctest::Approx(0.7));   // block 1 passes through
  CHECK(yp(1, 0) == doctest::Approx(-0.3));
  CHECK(yp(2, 0) == doctest::Approx(1.0));
  CHECK(yp(3, 0) == doctest::Approx(-1.0));
  CHECK(ld[0] == doctest::Approx(std::log(8.0)));

  auto [back, ld_inv] = c.inverse(store, yp);
  CHECK(back(2, 0) == doctest::Approx(0.0));
  CHECK(back(3, 0) == doctest::Approx(0.0));
  CHECK(ld_inv[0] == doctest::Approx(-std::log(8.0)));
}

TEST_CASE("random 6-dim composed stack: analytic logdet matches dense FD Jacobian") {
  ParameterStore store;
  Rng rng(3);
  std::vector<std::shared_ptr<Bijection>> parts;
  parts.push_back(std::make_shared<CouplingLayer>(
      store, "c0", 6, std::vector<Index>{0, 2, 4}, std::vector<Index>{1, 3, 5},
      std::vector<Index>{16}, nets::Activation::Tanh, rng));
  parts.push_back(std::make_shared<ActNorm>(store, "an", 6));
  parts.push_back(std::make_shared<MaskedAutoregressiveLayer>(
      store, "maf", 6, 24, 2, nets::Activation::Tanh, rng));
  auto stack = compose(parts);
  testutil::perturb_params(store, rng, 0.2);

  for (int k = 0; k < 10; ++k) {
    Vector y = rng.normal_matrix(6, 1);
    auto [yp, ld] = forward_values(*stack, store, y);
    const double fd = oracle::fd_logabsdet(as_fn(*stack, store), y);
    CHECK(std::abs(ld[0] - fd) <= 1e-4);
    check_round_trip(*stack, store, y);
  }
}

TEST_CASE("logit preprocess: symmetry point, per-dim logdet, domain errors") {
  ParameterStore store;
  LogitPreprocess lp(3, 0.0);
  Matrix z = Matrix::Constant(3, 1, 0.5);
  auto [x, ld] = forward_values(lp, store, z);
  CHECK(x.cwiseAbs().maxCoeff() == doctest::Approx(0.0));
  CHECK(ld[0] == doctest::Approx(3.0 * std::log(4.0)));

  // boundary is rejected at lambda = 0, accepted (finite) at lambda > 0
  Matrix zb = Matrix::Constant(3, 1, 1.0);
  Tape t(&store, false);
  CHECK_THROWS_AS(lp.forward(t, t.constant(zb)), DomainError);
  LogitPreprocess lp2(3, 1e-6);
  auto [xb, ldb] = forward_values(lp2, store, zb);
  CHECK(xb.allFinite());
  Matrix zo = Matrix::Constant(3, 1, 1.5);
  CHECK_THROWS_AS(lp2.forward(t, t.constant(zo)), DomainError);

  CHECK_THROWS_AS(LogitPreprocess(3, 0.5), DomainError);

  // round trip + FD logdet at a generic point
  Rng rng(4);
  Matrix zz = rng.uniform_matrix(3, 4, 0.05, 0.95);
  check_round_trip(lp2, store, zz);
  const double fd = oracle::fd_logabsdet(as_fn(lp2, store), zz.col(0));
  CHECK(std::abs(forward_values(lp2, store, zz.col(0)).second[0] - fd) <= 1e-4);
}

TEST_CASE("actnorm data-dependent init") {
  Rng rng(5);

  SUBCASE("already standardized batch gives scale 1, shift 0") {
    ParameterStore store;
    ActNorm an(store, "an", 2);
    Matrix batch(2, 4);
    batch << 1.0, -1.0, 1.0, -1.0,
             1.0, 1.0, -1.0, -1.0;  // mean 0, var 1 per dim
    an.initialize(store, batch);
    CHECK(store.view(store.find("an.log_scale")).cwiseAbs().maxCoeff() ==
          doctest::Approx(0.0).epsilon(1e-12));
    CHECK(store.view(store.find("an.shift")).cwiseAbs().maxCoeff() ==
          doctest::Approx(0.0).epsilon(1e-12));
  }

  SUBCASE("constant dimension floors the variance instead of failing") {
    ParameterStore store;
    ActNorm an(store, "an", 2);
    Matrix batch(2, 8);
    batch.row(0) = rng.normal_matrix(1, 8);
    batch.row(1).setConstant(3.0);
    an.initialize(store, batch);
    const double scale =
        std::exp(store.view(store.find("an.log_scale"))(1, 0));
    CHECK(scale == doctest::Approx(1.0 / std::sqrt(ActNorm::kVarianceFloor)));
  }

  SUBCASE("random batch is standardized to within 1e-4") {
    ParameterStore store;
    ActNorm an(store, "an", 3);
    Matrix batch = rng.normal_matrix(3, 64) * 2.5;
    batch.array().colwise() += Eigen::ArrayXd::LinSpaced(3, -1.0, 1.0);
    Matrix out = an.init_with_batch(store, batch);
    for (Index d = 0; d < 3; ++d) {
      const double mean = out.row(d).mean();
      const double var = (out.row(d).array() - mean).square().mean();
      CHECK(std::abs(mean) <= 1e-4);
      CHECK(std::abs(var - 1.0) <= 1e-4);
    }
    CHECK_THROWS_AS(an.initialize(store, batch), DomainError);  // re-init
  }

  SUBCASE("init requires at least two samples") {
    ParameterStore store;
    ActNorm an(store, "an", 2);
    CHECK_THROWS_AS(an.initialize(store, Matrix::Zero(2, 1)), DomainError);
  }

  SUBCASE("scale underflow makes inverse fail loudly") {
    ParameterStore store;
    ActNorm an(store, "an", 2);
    store.view(store.find("an.log_scale")).setConstant(-1e6);
    CHECK_THROWS_AS(an.inverse(store, Matrix::Zero(2, 1)), NumericError);
  }
}

TEST_CASE("MADE masks enforce strict triangularity") {
  SUBCASE("D=1: outputs carry no input dependence") {
    auto mm = build_made_masks(1, {8});
    CHECK(mm.output->cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("D=2 natural ordering: FD Jacobian of the layer is triangular") {
    ParameterStore store;
    Rng rng(6);
    MaskedAutoregressiveLayer maf(store, "m", 2, 16, 2, nets::Activation::Tanh, rng);
    testutil::perturb_params(store, rng, 0.3);
    Vector y = rng.normal_matrix(2, 1);
    Matrix J = oracle::fd_jacobian(as_fn(maf, store), y);
    CHECK(std::abs(J(0, 1)) <= 1e-7);  // out_0 must not depend on in_1
  }

  SUBCASE("D=4 random ordering: sparsity matches the permuted triangle") {
    ParameterStore store;
    Rng rng(7);
    std::vector<Index> ordering{2, 0, 3, 1};
    MaskedAutoregressiveLayer maf(store, "m", 4, 24, 2, nets::Activation::Tanh,
                                  rng, ordering);
    testutil::perturb_params(store, rng, 0.3);
    std::vector<Index> pos(4);
    for (Index p = 0; p < 4; ++p) pos[ordering[p]] = p;
    Vector y = rng.normal_matrix(4, 1);
    Matrix J = oracle::fd_jacobian(as_fn(maf, store), y);
    for (Index i = 0; i < 4; ++i)
      for (Index j = 0; j < 4; ++j) {
        if (pos[j] > pos[i]) {
          CHECK(std::abs(J(i, j)) <= 1e-7);  // forbidden entry
        } else if (i == j) {
          CHECK(std::abs(J(i, j)) > 1e-8);  // diagonal is the scale
        }
      }
  }
}

TEST_CASE("MAF inverse agrees with forward round trip") {
  ParameterStore store;
  Rng rng(8);
  MaskedAutoregressiveLayer maf(store, "m", 5, 32, 2, nets::Activation::Tanh, rng);
  testutil::perturb_params(store, rng, 0.4);
  Matrix y = rng.normal_matrix(5, 16);
  check_round_trip(maf, store, y);

  // logdet against the FD Jacobian oracle
  auto [yp, ld] = forward_values(maf, store, y.col(0));
  CHECK(std::abs(ld[0] - oracle::fd_logabsdet(as_fn(maf, store), y.col(0))) <= 1e-4);
}

TEST_CASE("composition: additivity, inverse order, dimension checks") {
  ParameterStore store;
  Rng rng(9);
  auto c1 = std::make_shared<CouplingLayer>(
      store, "c1", 4, std::vector<Index>{0, 1}, std::vector<Index>{2, 3},
      std::vector<Index>{8}, nets::Activation::Tanh, rng);
  auto c2 = std::make_shared<CouplingLayer>(
      store, "c2", 4, std::vector<Index>{2, 3}, std::vector<Index>{0, 1},
      std::vector<Index>{8}, nets::Activation::Tanh, rng);
  testutil::perturb_params(store, rng, 0.3);

  SUBCASE("empty composition is the identity") {
    Compose empty({});
    Matrix y = rng.normal_matrix(4, 3);
    auto [yp, ld] = forward_values(empty, store, y);
    CHECK((yp - y).norm() == 0.0);
    CHECK(ld.cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("composite logdet is the sum of the parts") {
    auto stack = compose({c1, c2});
    Matrix y = rng.normal_matrix(4, 6);
    auto [y1, ld1] = forward_values(*c1, store, y);
    auto [y2, ld2] = forward_values(*c2, store, y1);
    auto [yc, ldc] = forward_values(*stack, store, y);
    CHECK((yc - y2).norm() == 0.0);
    CHECK((ldc - (ld1 + ld2)).cwiseAbs().maxCoeff() <= 1e-10 * 2);
    // FD cross-check on 4 dims
    const double fd = oracle::fd_logabsdet(as_fn(*stack, store), y.col(0));
    CHECK(std::abs(ldc[0] - fd) <= 1e-4);
    check_round_trip(*stack, store, y);
  }

  SUBCASE("dimension mismatch is rejected") {
    auto odd = std::make_shared<ActNorm>(store, "an3", 3);
    CHECK_THROWS_AS(Compose({c1, odd}), DomainError);
  }
}

TEST_CASE("autoregressive flow builder: round trips and FD logdet at dims <= 10") {
  ParameterStore store;
  Rng rng(10);
  auto flow = make_autoregressive_flow(store, "prior", 7, 3, 24, 2,
                                       nets::Activation::Tanh, rng);
  testutil::perturb_params(store, rng, 0.2);
  Matrix batch = rng.normal_matrix(7, 32);
  flow->init_with_batch(store, batch);

  Matrix y = rng.normal_matrix(7, 8);
  check_round_trip(*flow, store, y);
  auto [yp, ld] = forward_values(*flow, store, y.col(0));
  CHECK(std::abs(ld[0] - oracle::fd_logabsdet(as_fn(*flow, store), y.col(0))) <= 1e-4);
}

TEST_CASE("inverse orientation flips directions and refuses gradients") {
  ParameterStore store;
  Rng rng(11);
  auto maf = std::make_shared<MaskedAutoregressiveLayer>(
      store, "m", 3, 16, 1, nets::Activation::Tanh, rng);
  testutil::perturb_params(store, rng, 0.3);
  InverseOrientation iaf(maf);

  Matrix y = rng.normal_matrix(3, 4);
  auto [via_iaf, ld_iaf] = forward_values(iaf, store, y);
  auto [via_maf, ld_maf] = maf->inverse(store, y);
  CHECK((via_iaf - via_maf).norm() == 0.0);
  CHECK((ld_iaf - ld_maf).norm() == 0.0);
  check_round_trip(iaf, store, y);

  Tape rec(&store, true);
  CHECK_THROWS_AS(iaf.forward(rec, rec.constant(y)), DomainError);
}

TEST_CASE("property: round trips and logdet antisymmetry on random stacks") {
  Rng rng(12);
  for (int trial = 0; trial < 5; ++trial) {
    ParameterStore store;
    const Index d = 2 + static_cast<Index>(rng.below(7));
    std::vector<Index> b1, b2;
    for (Index i = 0; i < d; ++i) (i % 2 == 0 ? b1 : b2).push_back(i);
    if (b2.empty()) {
      b2.push_back(b1.back());
      b1.pop_back();
    }
    std::vector<std::shared_ptr<Bijection>> parts;
    parts.push_back(std::make_shared<CouplingLayer>(
        store, "c", d, b1, b2, std::vector<Index>{12}, nets::Activation::Tanh, rng));
    parts.push_back(std::make_shared<ActNorm>(store, "a", d));
    parts.push_back(std::make_shared<MaskedAutoregressiveLayer>(
        store, "m", d, 16, 1, nets::Activation::Tanh, rng));
    auto stack = compose(parts);
    testutil::perturb_params(store, rng, 0.25);
    Matrix y = rng.normal_matrix(d, 50);
    check_round_trip(*stack, store, y);
  }
}
