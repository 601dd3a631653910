#include "aef/distributions.hpp"

#include <cmath>

namespace aef::dist {

Var std_normal_log_prob(Tape& t, Var u) {
  const double d = static_cast<double>(t.value(u).rows());
  return ad::colwise_sum(ad::square(u)) * (-0.5) - 0.5 * d * kLog2Pi;
}

RowVector std_normal_log_prob(const Matrix& u) {
  const double d = static_cast<double>(u.rows());
  return (-0.5 * u.array().square().colwise().sum() - 0.5 * d * kLog2Pi);
}

Var LatentPrior::log_prob(Tape& t, Var z) const {
  if (!flow) return std_normal_log_prob(t, z);
  auto [u, logdet] = flow->forward(t, z);
  return std_normal_log_prob(t, u) + logdet;
}

RowVector LatentPrior::log_prob(const ParameterStore& store, const Matrix& z) const {
  if (!flow) return std_normal_log_prob(z);
  auto [u, logdet] = flows::forward_values(*flow, store, z);
  return std_normal_log_prob(u) + logdet;
}

Matrix LatentPrior::sample(const ParameterStore& store, Rng& rng, Index count,
                           double temperature) const {
  require(temperature >= 0.0, "LatentPrior: temperature must be >= 0");
  Matrix u = rng.normal_matrix(dim, count) * temperature;
  if (!flow) return u;
  return flow->inverse(store, u).first;
}

ErrorScale ErrorScale::build(ParameterStore& store, const std::string& name,
                             double init) {
  ErrorScale e;
  e.raw = store.allocate(name + ".sigma_raw", 1, 1);
  e.set(store, init);
  return e;
}

Var ErrorScale::value(Tape& t) const {
  return ad::softplus(t.param(raw)) + kFloor;
}

double ErrorScale::value(const ParameterStore& store) const {
  const double r = store.view(raw)(0, 0);
  const double sp = r > 0.0 ? r + std::log1p(std::exp(-r)) : std::log1p(std::exp(r));
  return sp + kFloor;
}

void ErrorScale::set(ParameterStore& store, double sigma) const {
  require(sigma > kFloor, "ErrorScale: sigma must exceed the floor");
  // invert softplus
  const double y = sigma - kFloor;
  const double r = y > 30.0 ? y : std::log(std::expm1(y));
  store.view(raw)(0, 0) = r;
}

Var gaussian_residual_nll(Tape& t, Var delta, Var sigma) {
  const Matrix& dv = t.value(delta);
  const double d = static_cast<double>(dv.rows());
  const Index batch = dv.cols();
  Var sq = ad::colwise_sum(ad::square(delta));  // 1 x B
  Var inv_two_var = 1.0 / (ad::square(sigma) * 2.0);
  Var rec = sq * ad::tile_cols(inv_two_var, batch);
  Var logz = ad::tile_cols(ad::log(sigma) * d, batch) + 0.5 * d * kLog2Pi;
  return rec + logz;
}

RowVector gaussian_residual_nll(const Matrix& delta, double sigma) {
  const double d = static_cast<double>(delta.rows());
  RowVector sq = delta.array().square().colwise().sum();
  return (sq / (2.0 * sigma * sigma)).array() + d * std::log(sigma) +
         0.5 * d * kLog2Pi;
}

}  // namespace aef::dist
