#include "aef/vae_model.hpp"

#include <cmath>

namespace aef::models {

Reparam reparameterize(const VaeModel& m, Tape& t, Var x, const Matrix& noise) {
  require(noise.rows() == m.latent && noise.cols() == t.value(x).cols(),
          "reparameterize: noise must be D x batch");
  auto heads = m.encoder(t, x);
  Var z0 = heads.mean + heads.scale * t.constant(noise);
  Var logdet = t.constant(Matrix::Zero(1, noise.cols()));
  Var z = z0;
  if (m.posterior) {
    auto [zz, ld] = m.posterior->forward(t, z0);
    z = zz;
    logdet = ld;
  }
  Var lss = ad::colwise_sum(ad::log(heads.scale));
  return {z, logdet, lss};
}

Matrix reparameterize(const VaeModel& m, const Matrix& x, const Matrix& noise) {
  Tape t(&m.store(), false);
  return t.value(reparameterize(m, t, t.constant(x), noise).z);
}

Var elbo_loss(const VaeModel& m, Tape& t, Var x, const Matrix& noise) {
  auto rep = reparameterize(m, t, x, noise);
  Var delta = x - (*m.decoder)(t, rep.z);
  Var sigma = m.sigma.value(t);
  Var recon = dist::gaussian_residual_nll(t, delta, sigma);
  Var prior = m.prior.log_prob(t, rep.z);
  // Entropy surrogate: base Gaussian entropy D/2 log(2 pi e) plus the exact
  // affine and flow volume terms at the sampled point.
  const double ent_const = 0.5 * static_cast<double>(m.latent) * (kLog2Pi + 1.0);
  Var entropy = rep.log_scale_sum + rep.flow_logdet + ent_const;
  return recon - prior - entropy;
}

RowVector elbo_loss(const VaeModel& m, const Matrix& x, const Matrix& noise) {
  Tape t(&m.store(), false);
  return RowVector(t.value(elbo_loss(m, t, t.constant(x), noise)).row(0));
}

Matrix sample_vae(const VaeModel& m, Rng& rng, double temperature, Index count) {
  const Matrix z = m.prior.sample(m.store(), rng, count, temperature);
  return m.decoder->values(m.store(), z);
}

Matrix vae_reconstruct(const VaeModel& m, const Matrix& x) {
  // Deterministic reconstruction: posterior mean pushed through the flow.
  const Matrix noise = Matrix::Zero(m.latent, x.cols());
  const Matrix z = reparameterize(m, x, noise);
  return m.decoder->values(m.store(), z);
}

PosteriorDraw posterior_sample(const VaeModel& m, const Matrix& x,
                               const Matrix& noise) {
  Tape t(&m.store(), false);
  auto rep = reparameterize(m, t, t.constant(x), noise);
  // q(z | x) via change of variables through z = flow(m + s .* eps):
  // log q = log N(eps) - sum log s - logdet(flow).
  RowVector log_q = dist::std_normal_log_prob(noise) -
                    RowVector(t.value(rep.log_scale_sum).row(0)) -
                    RowVector(t.value(rep.flow_logdet).row(0));
  return {t.value(rep.z), log_q};
}

RowVector vae_recon_nll(const VaeModel& m, const Matrix& z, const Matrix& x) {
  const Matrix delta = x - m.decoder->values(m.store(), z);
  return dist::gaussian_residual_nll(delta, m.sigma.value(m.store()));
}

Var ae_mse(const DeterministicAe& m, Tape& t, Var x) {
  Var delta = x - (*m.decoder)(t, (*m.encoder)(t, x));
  return ad::colwise_sum(ad::square(delta)) /
         static_cast<double>(t.value(x).rows());
}

Matrix ae_reconstruct(const DeterministicAe& m, const Matrix& x) {
  return m.decoder->values(m.store(), m.encoder->values(m.store(), x));
}

}  // namespace aef::models
