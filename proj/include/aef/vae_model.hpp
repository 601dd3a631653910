#pragma once

#include "aef/bijections.hpp"
#include "aef/distributions.hpp"
#include "aef/nets.hpp"
#include "aef/types.hpp"

#include <memory>

namespace aef::models {

using ad::Tape;
using ad::Var;

// Architecturally the AEF's twin: same encoder/decoder/flows, but the core
// input is replaced by caller-supplied posterior noise and training uses the
// single-sample reparameterized ELBO.
struct VaeModel {
  std::shared_ptr<ParameterStore> params;
  nets::TwoHeadEncoder encoder;
  std::shared_ptr<nets::FeedForward> decoder;
  std::shared_ptr<flows::Bijection> posterior;  // forward: z0 -> z; null = affine only
  dist::LatentPrior prior;
  dist::ErrorScale sigma;
  Index ambient = 0;
  Index latent = 0;

  ParameterStore& store() { return *params; }
  const ParameterStore& store() const { return *params; }
};

struct Reparam {
  Var z;
  Var flow_logdet;    // 1 x B, zero without a posterior flow
  Var log_scale_sum;  // sum log g_s(x), 1 x B
};

/// z = flow(g_m(x) + g_s(x) .* noise); noise is a caller-supplied D x B
/// standard-normal draw.
Reparam reparameterize(const VaeModel& m, Tape& t, Var x, const Matrix& noise);
Matrix reparameterize(const VaeModel& m, const Matrix& x, const Matrix& noise);

/// Single-sample surrogate loss per datapoint (1 x B):
/// recon/(2 sigma^2) + N/2 log(2 pi sigma^2) - log p0(z)
///   - [sum log g_s + flow logdet + D/2 log(2 pi e)].
Var elbo_loss(const VaeModel& m, Tape& t, Var x, const Matrix& noise);
RowVector elbo_loss(const VaeModel& m, const Matrix& x, const Matrix& noise);

Matrix sample_vae(const VaeModel& m, Rng& rng, double temperature, Index count);

Matrix vae_reconstruct(const VaeModel& m, const Matrix& x);

/// Posterior draw with its exact log-density (change of variables through the
/// affine layer and the posterior flow); value-only, for importance sampling.
struct PosteriorDraw {
  Matrix z;
  RowVector log_q;
};
PosteriorDraw posterior_sample(const VaeModel& m, const Matrix& x,
                               const Matrix& noise);

/// -log p(x | z) for the Gaussian emission with the model's current sigma.
RowVector vae_recon_nll(const VaeModel& m, const Matrix& z, const Matrix& x);

// ---------------------------------------------------------------------------

/// Least-squares autoencoder baseline; no density, trained on plain MSE.
struct DeterministicAe {
  std::shared_ptr<ParameterStore> params;
  std::shared_ptr<nets::FeedForward> encoder;
  std::shared_ptr<nets::FeedForward> decoder;
  Index ambient = 0;
  Index latent = 0;

  ParameterStore& store() { return *params; }
  const ParameterStore& store() const { return *params; }
};

/// Per-sample mean squared reconstruction error (1 x B).
Var ae_mse(const DeterministicAe& m, Tape& t, Var x);
Matrix ae_reconstruct(const DeterministicAe& m, const Matrix& x);

}  // namespace aef::models
