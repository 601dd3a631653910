#pragma once

#include "aef/aef_models.hpp"
#include "aef/rng.hpp"
#include "aef/types.hpp"
#include "aef/vae_model.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace aef::eval {

struct ImportanceConfig {
  Index samples_per_round = 128;
  Index rounds = 20;
  double epsilon = 0.1;  // proposal standard deviation
};

/// Max-shifted log(mean(exp(v))): safe against overflow by construction.
double logmeanexp(const RowVector& log_values);

/// Importance-sampled log p(x) for an expanded AEF: w_k ~ N(h(x), eps^2 I),
/// log-mean-exp of log p(x, w_k) - log q(w_k), averaged over rounds.
double importance_log_marginal(const models::AefModel& m, const Vector& x,
                               const ImportanceConfig& cfg, Rng& rng);

/// IWAE-style marginal for a VAE with the flow posterior as proposal.
double importance_log_marginal_vae(const models::VaeModel& m, const Vector& x,
                                   Index samples, Rng& rng);

/// Grid search for the proposal scale: maximizes the mean IS estimate over a
/// validation batch (higher is better; the estimator is a lower bound).
double tune_epsilon(const models::AefModel& m, const Matrix& validation_batch,
                    const std::vector<double>& grid, const ImportanceConfig& cfg,
                    Rng& rng);

/// Eight log-spaced candidates in [1e-4, 1].
std::vector<double> default_epsilon_grid();

/// nats -> bits/dim, adding the 8-bit dequantization adjustment when the data
/// was scaled by 1/256.
double bits_per_dim(double nll_nats, Index ambient_dim, bool dequantized);

double reconstruction_mse(const Matrix& clean_batch, const Matrix& reconstructed);

// One row per datapoint plus a JSON-able summary.
struct EvalReport {
  std::string model_id;
  std::string config_hash;
  std::vector<double> log_likelihood;  // nats, per datapoint
  std::vector<double> bpd;
  std::vector<double> recon_mse;
  double epsilon_star = 0.0;
  Index is_samples = 0;
  Index is_rounds = 0;
  bool exact = false;  // true when NLL is computed exactly (no IS)
  std::string note;

  double mean_bpd() const;
  double mean_nll() const;
  void write_csv(std::ostream& os) const;
  std::string summary_json() const;
};

}  // namespace aef::eval
