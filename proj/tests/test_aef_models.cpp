#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "aef/aef_models.hpp"
#include "oracles.hpp"
#include "test_helpers.hpp"

#include <cmath>
#include <memory>

using namespace aef;
using namespace aef::models;

namespace {

struct ToyOpts {
  std::vector<Index> hidden{8};
  bool core_flow = false;
  bool prior_flow = false;
  Index flow_hidden = 12;
  std::uint64_t seed = 0;
  PartitionScheme::Kind kind = PartitionScheme::Kind::Center;
};

AefModel make_partitioned(Index N, Index D, const ToyOpts& o = {}) {
  AefModel m;
  m.params = std::make_shared<ParameterStore>();
  Rng rng(o.seed);
  auto& store = *m.params;
  m.variant = AefVariant::Partitioned;
  m.ambient = N;
  m.latent = D;
  m.partition = make_partition(o.kind, D, N, std::nullopt, o.seed);
  auto trunk = std::make_shared<nets::MlpTrunk>(nets::MlpTrunk::build(
      store, "enc.trunk", N - D, o.hidden, nets::Activation::Tanh, rng));
  m.encoder = nets::TwoHeadEncoder::build(store, "enc", trunk, D, rng);
  m.decoder = std::make_shared<nets::Mlp>(nets::Mlp::build(
      store, "dec", D, o.hidden, N - D, nets::Activation::Tanh, rng));
  if (o.core_flow)
    m.core = flows::make_autoregressive_flow(store, "core", D, 2, o.flow_hidden,
                                             1, nets::Activation::Tanh, rng);
  m.prior.dim = D;
  if (o.prior_flow)
    m.prior.flow = flows::make_autoregressive_flow(
        store, "prior", D, 2, o.flow_hidden, 1, nets::Activation::Tanh, rng);
  m.sigma = dist::ErrorScale::build(store, "err");
  return m;
}

AefModel make_expanded(Index N, Index D, const ToyOpts& o = {}) {
  AefModel m;
  m.params = std::make_shared<ParameterStore>();
  Rng rng(o.seed);
  auto& store = *m.params;
  m.variant = AefVariant::Expanded;
  m.ambient = N;
  m.latent = D;
  m.expansion = FeatureExpansion::build(store, "h", N, D, rng);
  auto trunk = std::make_shared<nets::MlpTrunk>(nets::MlpTrunk::build(
      store, "enc.trunk", N, o.hidden, nets::Activation::Tanh, rng));
  m.encoder = nets::TwoHeadEncoder::build(store, "enc", trunk, D, rng);
  m.decoder = std::make_shared<nets::Mlp>(nets::Mlp::build(
      store, "dec", D, o.hidden, N, nets::Activation::Tanh, rng));
  if (o.core_flow)
    m.core = flows::make_autoregressive_flow(store, "core", D, 2, o.flow_hidden,
                                             1, nets::Activation::Tanh, rng);
  m.prior.dim = D;
  if (o.prior_flow)
    m.prior.flow = flows::make_autoregressive_flow(
        store, "prior", D, 2, o.flow_hidden, 1, nets::Activation::Tanh, rng);
  m.sigma = dist::ErrorScale::build(store, "err");
  return m;
}

void zero_decoder(AefModel& m) {
  for (const auto& [name, slice] : m.store().entries())
    if (name.rfind("dec.", 0) == 0) m.store().view(slice).setZero();
}

}  // namespace

TEST_CASE("partition schemes") {
  SUBCASE("4x4 image, center, D=4 picks the central 2x2 block") {
    auto s = make_partition(PartitionScheme::Kind::Center, 4, 16,
                            std::make_pair<Index, Index>(4, 4));
    CHECK(s.core_idx == std::vector<Index>{5, 6, 9, 10});
  }

  SUBCASE("corner takes the top-left block truncated row-major") {
    auto s = make_partition(PartitionScheme::Kind::Corner, 3, 16,
                            std::make_pair<Index, Index>(4, 4));
    CHECK(s.core_idx == std::vector<Index>{0, 1, 4});
  }

  SUBCASE("merge after split is the identity") {
    Rng rng(1);
    auto s = make_partition(PartitionScheme::Kind::Random, 5, 12, std::nullopt, 9);
    Matrix x = rng.normal_matrix(12, 7);
    auto [core, shell] = partition_split(x, s);
    CHECK((partition_merge(core, shell, s) - x).norm() == 0.0);
  }

  SUBCASE("random scheme is reproducible under a fixed seed") {
    auto a = make_partition(PartitionScheme::Kind::Random, 4, 10, std::nullopt, 42);
    auto b = make_partition(PartitionScheme::Kind::Random, 4, 10, std::nullopt, 42);
    auto c = make_partition(PartitionScheme::Kind::Random, 4, 10, std::nullopt, 43);
    CHECK(a.core_idx == b.core_idx);
    CHECK(a.core_idx != c.core_idx);
  }

  SUBCASE("core must be smaller than ambient") {
    CHECK_THROWS_AS(
        make_partition(PartitionScheme::Kind::Center, 5, 5, std::nullopt),
        DomainError);
  }
}

TEST_CASE("identity configuration: z = core, delta = shell - f(core)") {
  auto m = make_partitioned(6, 2);
  Rng rng(2);
  Matrix x = rng.normal_matrix(6, 3);
  auto e = encode_partitioned(m, x);
  auto [core, shell] = partition_split(x, *m.partition);
  CHECK((e.z - core).norm() == 0.0);
  Matrix f = m.decoder->values(m.store(), core);
  CHECK((e.delta - (shell - f)).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(e.logdet.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("partitioned round trips within 1e-5 on random models") {
  for (std::uint64_t seed : {3, 4}) {
    ToyOpts o;
    o.core_flow = true;
    o.seed = seed;
    auto m = make_partitioned(9, 3, o);
    Rng rng(seed + 100);
    testutil::perturb_params(m.store(), rng, 0.3);
    Matrix x = rng.normal_matrix(9, 20);
    auto e = encode_partitioned(m, x);
    Matrix back = decode_partitioned(m, e.z, e.delta);
    for (Index j = 0; j < x.cols(); ++j)
      CHECK((back.col(j) - x.col(j)).norm() <= 1e-5 * (1.0 + x.col(j).norm()));

    // decode then encode: (z, delta) recovered exactly
    Matrix z = rng.normal_matrix(3, 5);
    Matrix delta = Matrix::Zero(6, 5);
    Matrix xx = decode_partitioned(m, z, delta);
    auto e2 = encode_partitioned(m, xx);
    CHECK((e2.z - z).cwiseAbs().maxCoeff() <= 1e-5);
    CHECK(e2.delta.cwiseAbs().maxCoeff() <= 1e-5);
  }
}

TEST_CASE("partitioned logdet matches the dense Jacobian of the full map") {
  // N=6, D=2, random nets: the decoder's contribution must cancel exactly.
  ToyOpts o;
  o.core_flow = true;
  o.seed = 5;
  auto m = make_partitioned(6, 2, o);
  Rng rng(55);
  testutil::perturb_params(m.store(), rng, 0.3);
  AefBijection bij(m);
  for (int k = 0; k < 5; ++k) {
    Vector x = rng.normal_matrix(6, 1);
    auto [zd, ld] = flows::forward_values(bij, m.store(), x);
    const double fd = oracle::fd_logabsdet(
        [&](const Vector& v) -> Vector {
          return flows::forward_values(bij, m.store(), v).first.col(0);
        },
        x);
    CHECK(std::abs(ld[0] - fd) <= 1e-4);
  }
}

TEST_CASE("nll_partitioned: hand-evaluated value and flow_core cross-check") {
  SUBCASE("all-identity toy: NLL((0,0)) = log 2pi") {
    auto m = make_partitioned(2, 1, {{}, false, false, 12, 7});
    zero_decoder(m);
    Matrix x = Matrix::Zero(2, 1);
    CHECK(nll_partitioned(m, x)[0] == doctest::Approx(kLog2Pi).epsilon(1e-10));
  }

  SUBCASE("matches the generic change-of-variables path within 1e-6") {
    ToyOpts o;
    o.core_flow = true;
    o.prior_flow = true;
    o.seed = 6;
    auto m = make_partitioned(7, 3, o);
    Rng rng(66);
    testutil::perturb_params(m.store(), rng, 0.3);
    Matrix x = rng.normal_matrix(7, 9);
    RowVector direct = nll_partitioned(m, x);
    RowVector generic = nll_via_flow_core(m, x);
    CHECK((direct - generic).cwiseAbs().maxCoeff() <= 1e-6);
  }
}

TEST_CASE("partitioned sampler: zero temperature collapses, re-encoding recovers (z, 0)") {
  ToyOpts o;
  o.core_flow = true;
  o.prior_flow = true;
  o.seed = 7;
  auto m = make_partitioned(8, 2, o);
  Rng rng(77);
  testutil::perturb_params(m.store(), rng, 0.25);

  Rng s1(5), s2(5);
  Matrix a = sample_partitioned(m, s1, 0.0, 3);
  Matrix b = sample_partitioned(m, s2, 0.0, 3);
  CHECK((a - b).norm() == 0.0);
  CHECK((a.col(0) - a.col(1)).norm() == 0.0);  // T=0: a single deterministic point

  Matrix x = sample_partitioned(m, rng, 0.85, 16);
  auto e = encode_partitioned(m, x);
  CHECK(e.delta.cwiseAbs().maxCoeff() <= 1e-5);
}

TEST_CASE("expanded reduction case: h = coordinate projection behaves like a partition") {
  auto m = make_expanded(5, 2, {{}, false, false, 12, 8});
  auto& store = m.store();
  store.view(m.expansion->W).setZero();
  store.view(m.expansion->W)(0, 0) = 1.0;
  store.view(m.expansion->W)(1, 1) = 1.0;
  zero_decoder(m);
  Rng rng(8);
  Matrix x = rng.normal_matrix(5, 4);
  auto e = encode_expanded(m, x);
  CHECK((e.z - x.topRows(2)).norm() <= 1e-12);   // z = first D coordinates
  CHECK((e.delta - x).norm() <= 1e-12);          // f = 0 so delta = x
  CHECK(e.logdet.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("expanded logdet matches the dense Jacobian on the expanded space") {
  // N=3, D=2: the (N+D)x(N+D) Jacobian of (x, w) -> (z, delta).
  ToyOpts o;
  o.core_flow = true;
  o.seed = 9;
  auto m = make_expanded(3, 2, o);
  Rng rng(99);
  testutil::perturb_params(m.store(), rng, 0.3);
  AefBijection bij(m);
  for (int k = 0; k < 5; ++k) {
    Vector xw = rng.normal_matrix(5, 1);
    auto [zd, ld] = flows::forward_values(bij, m.store(), xw);
    const double fd = oracle::fd_logabsdet(
        [&](const Vector& v) -> Vector {
          return flows::forward_values(bij, m.store(), v).first.col(0);
        },
        xw);
    CHECK(std::abs(ld[0] - fd) <= 1e-4);
    // and the bijection inverts
    auto [back, ld_inv] = bij.inverse(m.store(), zd);
    CHECK((back - xw).norm() <= 1e-5 * (1.0 + xw.norm()));
    CHECK(ld_inv[0] == doctest::Approx(-ld[0]).epsilon(1e-8));
  }
}

TEST_CASE("nll_expanded: hand value, flow_core cross-check, joint density") {
  SUBCASE("N=1, D=1 all-identity toy: NLL(x) = x^2/2 + log 2pi") {
    auto m = make_expanded(1, 1, {{}, false, false, 12, 10});
    zero_decoder(m);
    m.store().view(m.expansion->W).setZero();
    for (double xv : {0.0, 0.7, -1.3}) {
      Matrix x = Matrix::Constant(1, 1, xv);
      CHECK(nll_expanded(m, x)[0] ==
            doctest::Approx(0.5 * xv * xv + kLog2Pi).epsilon(1e-10));
    }
  }

  SUBCASE("agrees with the generic composite path within 1e-6") {
    ToyOpts o;
    o.core_flow = true;
    o.prior_flow = true;
    o.seed = 10;
    auto m = make_expanded(4, 2, o);
    Rng rng(111);
    testutil::perturb_params(m.store(), rng, 0.3);
    Matrix x = rng.normal_matrix(4, 6);
    CHECK((nll_expanded(m, x) - nll_via_flow_core(m, x)).cwiseAbs().maxCoeff() <=
          1e-6);
  }

  SUBCASE("density_joint: consistency at w = h(x), closed form, symmetry") {
    auto m = make_expanded(1, 1, {{}, false, false, 12, 11});
    zero_decoder(m);
    Rng rng(12);
    // analytic factorized toy: h = 0, f = 0, identity core
    m.store().view(m.expansion->W).setZero();
    const double sigma = m.sigma.value(m.store());

    Matrix x = rng.normal_matrix(1, 5);
    Matrix w = rng.normal_matrix(1, 5);
    RowVector lp = density_joint(m, x, w);
    for (Index j = 0; j < 5; ++j) {
      const double expected =
          -0.5 * w(0, j) * w(0, j) - 0.5 * kLog2Pi -
          0.5 * x(0, j) * x(0, j) / (sigma * sigma) - 0.5 * kLog2Pi -
          std::log(sigma);
      CHECK(lp[j] == doctest::Approx(expected).epsilon(1e-10));
    }
    CHECK((density_joint(m, -x, w) - lp).cwiseAbs().maxCoeff() <= 1e-12);

    // at w = h(x), log p(x, h(x)) = -nll_expanded(x)
    ToyOpts o;
    o.core_flow = true;
    o.seed = 13;
    auto m2 = make_expanded(3, 2, o);
    Rng rng2(13);
    testutil::perturb_params(m2.store(), rng2, 0.3);
    Matrix x2 = rng2.normal_matrix(3, 4);
    Matrix w2 = m2.expansion->values(m2.store(), x2);
    CHECK((density_joint(m2, x2, w2) + nll_expanded(m2, x2)).cwiseAbs().maxCoeff() <=
          1e-10);
  }
}

TEST_CASE("expanded sampler contract") {
  ToyOpts o;
  o.seed = 14;
  auto m = make_expanded(6, 2, o);
  Rng rng(14);
  testutil::perturb_params(m.store(), rng, 0.3);

  Matrix s = sample_expanded(m, rng, 0.85, 10);
  CHECK(s.rows() == 6);
  CHECK(s.cols() == 10);

  Rng r0(3);
  Matrix t0 = sample_expanded(m, r0, 0.0, 4);
  Matrix f0 = m.decoder->values(m.store(), Matrix::Zero(2, 4));
  CHECK((t0 - f0).norm() == 0.0);  // T = 0 decodes the prior mode

  Rng ra(9), rb(9);
  CHECK((sample_expanded(m, ra, 1.0, 5) - sample_expanded(m, rb, 1.0, 5)).norm() ==
        0.0);
}

TEST_CASE("gradients of both NLLs match finite differences (incl. gamma and sigma)") {
  ToyOpts o;
  o.core_flow = true;
  o.prior_flow = true;
  o.hidden = {6};
  o.flow_hidden = 8;
  o.seed = 15;

  auto check_model = [](AefModel& m, const Matrix& x) {
    auto& store = m.store();
    auto graph = [&](Tape& t) {
      return ad::mean_all(aef_nll(m, t, t.constant(x)));
    };
    store.zero_grad();
    Tape t(&store, true);
    t.backward(graph(t), store);
    Vector analytic = store.grad();
    Vector theta0 = store.theta();
    Vector fd = oracle::fd_gradient(
        [&](const Vector& th) {
          store.theta() = th;
          Tape tv(&store, false);
          return tv.scalar(graph(tv));
        },
        theta0);
    store.theta() = theta0;
    Index bad = 0;
    for (Index i = 0; i < analytic.size(); ++i)
      if (std::abs(analytic[i] - fd[i]) > 1e-4 * (1.0 + std::abs(analytic[i])))
        ++bad;
    CHECK(bad == 0);
    return analytic;
  };

  Rng rng(16);
  SUBCASE("expanded, 5-dim toy") {
    auto m = make_expanded(5, 2, o);
    testutil::perturb_params(m.store(), rng, 0.2);
    Matrix x = rng.normal_matrix(5, 3);
    Vector analytic = check_model(m, x);

    // the feature-expansion gradient specifically (the limiting-KL claim)
    const auto wslice = m.expansion->W;
    double max_gamma = 0.0;
    for (Index i = 0; i < wslice.size(); ++i)
      max_gamma = std::max(max_gamma, std::abs(analytic[wslice.offset + i]));
    CHECK(max_gamma > 1e-8);  // gamma genuinely participates
  }

  SUBCASE("partitioned, 5-dim toy") {
    auto m = make_partitioned(5, 2, o);
    testutil::perturb_params(m.store(), rng, 0.2);
    Matrix x = rng.normal_matrix(5, 3);
    check_model(m, x);
  }
}

TEST_CASE("reconstruct") {
  SUBCASE("expanded: x_hat = x - delta exactly") {
    ToyOpts o;
    o.core_flow = true;
    o.seed = 17;
    auto m = make_expanded(6, 2, o);
    Rng rng(17);
    testutil::perturb_params(m.store(), rng, 0.3);
    Matrix x = rng.normal_matrix(6, 5);
    auto e = encode_expanded(m, x);
    CHECK((reconstruct(m, x) - (x - e.delta)).cwiseAbs().maxCoeff() <= 1e-12);
  }

  SUBCASE("linear toy with pseudo-inverse decoder reconstructs on-manifold points") {
    auto m = make_expanded(6, 2, {{}, false, false, 12, 18});
    auto& store = m.store();
    Rng rng(18);
    Matrix W = rng.normal_matrix(2, 6);
    store.view(m.expansion->W) = W;
    store.view(m.expansion->b).setZero();
    // decoder = W^+ (right pseudo-inverse), exact on the row space of W
    Matrix pinv = W.transpose() * (W * W.transpose()).inverse();
    store.view(store.find("dec.out.W")) = pinv;
    store.view(store.find("dec.out.b")).setZero();

    Matrix alpha = rng.normal_matrix(2, 4);
    Matrix x = W.transpose() * alpha;  // on-manifold: x in row(W)
    CHECK((reconstruct(m, x) - x).cwiseAbs().maxCoeff() <= 1e-10);
  }

  SUBCASE("partitioned: reconstruction is the full decode with delta = 0") {
    ToyOpts o;
    o.core_flow = true;
    o.seed = 19;
    auto m = make_partitioned(6, 2, o);
    Rng rng(19);
    testutil::perturb_params(m.store(), rng, 0.3);
    Matrix x = rng.normal_matrix(6, 4);
    auto e = encode_partitioned(m, x);
    Matrix expected =
        decode_partitioned(m, e.z, Matrix::Zero(e.delta.rows(), e.delta.cols()));
    CHECK((reconstruct(m, x) - expected).norm() == 0.0);
  }
}

TEST_CASE("quadrature: expanded joint density integrates to 1 on a 2-dim toy") {
  // N=1, D=1 with small random nets; integrate exp(log p(x, w)) over a box.
  ToyOpts o;
  o.hidden = {6};
  o.seed = 20;
  auto m = make_expanded(1, 1, o);
  Rng rng(20);
  testutil::perturb_params(m.store(), rng, 0.15);
  const double mass = oracle::simpson2d(
      [&](double xv, double wv) {
        Matrix x = Matrix::Constant(1, 1, xv);
        Matrix w = Matrix::Constant(1, 1, wv);
        return std::exp(density_joint(m, x, w)[0]);
      },
      -10.0, 10.0, -10.0, 10.0, 220);
  CHECK(std::abs(mass - 1.0) <= 0.02);
}
