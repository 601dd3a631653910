#include "aef/evaluation.hpp"

#include <json.hpp>

#include <cmath>
#include <numeric>
#include <ostream>

namespace aef::eval {

double logmeanexp(const RowVector& log_values) {
  require(log_values.size() >= 1, "logmeanexp: need at least one value");
  const double m = log_values.maxCoeff();
  if (!std::isfinite(m)) return m;
  const double s = (log_values.array() - m).exp().mean();
  return m + std::log(s);
}

double importance_log_marginal(const models::AefModel& m, const Vector& x,
                               const ImportanceConfig& cfg, Rng& rng) {
  require(m.variant == models::AefVariant::Expanded,
          "importance_log_marginal: requires an expanded-variant model");
  require(cfg.samples_per_round >= 1,
          "importance_log_marginal: samples_per_round must be >= 1");
  require(cfg.rounds >= 1, "importance_log_marginal: rounds must be >= 1");
  require(cfg.epsilon > 0.0, "importance_log_marginal: epsilon must be positive");
  require(x.size() == m.ambient, "importance_log_marginal: dimension mismatch");

  const Index K = cfg.samples_per_round;
  const Index D = m.latent;
  const Vector w_center = m.expansion->values(m.store(), x).col(0);
  const Matrix x_rep = x.replicate(1, K);
  const double log_q_norm =
      -0.5 * static_cast<double>(D) * kLog2Pi - D * std::log(cfg.epsilon);

  double acc = 0.0;
  for (Index r = 0; r < cfg.rounds; ++r) {
    Matrix w = (rng.normal_matrix(D, K) * cfg.epsilon).colwise() + w_center;
    RowVector log_p = models::density_joint(m, x_rep, w);
    RowVector log_q =
        (-0.5 * (w.colwise() - w_center).array().square().colwise().sum() /
         (cfg.epsilon * cfg.epsilon))
            .matrix();
    log_q.array() += log_q_norm;
    acc += logmeanexp(log_p - log_q);
  }
  return acc / static_cast<double>(cfg.rounds);
}

double importance_log_marginal_vae(const models::VaeModel& m, const Vector& x,
                                   Index samples, Rng& rng) {
  require(samples >= 1, "importance_log_marginal_vae: need K >= 1");
  require(x.size() == m.ambient, "importance_log_marginal_vae: dimension mismatch");
  const Matrix x_rep = x.replicate(1, samples);
  const Matrix noise = rng.normal_matrix(m.latent, samples);
  auto draw = models::posterior_sample(m, x_rep, noise);
  RowVector log_lik = -models::vae_recon_nll(m, draw.z, x_rep);
  RowVector log_prior = m.prior.log_prob(m.store(), draw.z);
  return logmeanexp(log_lik + log_prior - draw.log_q);
}

double tune_epsilon(const models::AefModel& m, const Matrix& validation_batch,
                    const std::vector<double>& grid, const ImportanceConfig& cfg,
                    Rng& rng) {
  require(!grid.empty(), "tune_epsilon: candidate grid is empty");
  require(validation_batch.cols() >= 1, "tune_epsilon: validation batch is empty");
  for (double e : grid) require(e > 0.0, "tune_epsilon: candidates must be positive");

  double best_eps = grid.front();
  double best_score = -std::numeric_limits<double>::infinity();
  for (double e : grid) {
    ImportanceConfig c = cfg;
    c.epsilon = e;
    double mean = 0.0;
    for (Index j = 0; j < validation_batch.cols(); ++j)
      mean += importance_log_marginal(m, validation_batch.col(j), c, rng);
    mean /= static_cast<double>(validation_batch.cols());
    if (mean > best_score) {
      best_score = mean;
      best_eps = e;
    }
  }
  return best_eps;
}

std::vector<double> default_epsilon_grid() {
  std::vector<double> g;
  const double lo = std::log(1e-4), hi = std::log(1.0);
  for (int i = 0; i < 8; ++i)
    g.push_back(std::exp(lo + (hi - lo) * i / 7.0));
  return g;
}

double bits_per_dim(double nll_nats, Index ambient_dim, bool dequantized) {
  require(ambient_dim >= 1, "bits_per_dim: ambient dimension must be >= 1");
  const double bpd = nll_nats / (static_cast<double>(ambient_dim) * kLn2);
  return dequantized ? bpd + 8.0 : bpd;
}

double reconstruction_mse(const Matrix& clean_batch, const Matrix& reconstructed) {
  require(clean_batch.rows() == reconstructed.rows() &&
              clean_batch.cols() == reconstructed.cols(),
          "reconstruction_mse: shape mismatch");
  return (clean_batch - reconstructed).array().square().mean();
}

double EvalReport::mean_bpd() const {
  require(!bpd.empty(), "EvalReport: no BPD entries");
  return std::accumulate(bpd.begin(), bpd.end(), 0.0) /
         static_cast<double>(bpd.size());
}

double EvalReport::mean_nll() const {
  require(!log_likelihood.empty(), "EvalReport: no likelihood entries");
  return -std::accumulate(log_likelihood.begin(), log_likelihood.end(), 0.0) /
         static_cast<double>(log_likelihood.size());
}

void EvalReport::write_csv(std::ostream& os) const {
  os << "index,log_likelihood,bpd,recon_mse\n";
  const std::size_t n = std::max({log_likelihood.size(), bpd.size(), recon_mse.size()});
  for (std::size_t i = 0; i < n; ++i) {
    os << i << ',';
    if (i < log_likelihood.size()) os << log_likelihood[i];
    os << ',';
    if (i < bpd.size()) os << bpd[i];
    os << ',';
    if (i < recon_mse.size()) os << recon_mse[i];
    os << '\n';
  }
}

std::string EvalReport::summary_json() const {
  nlohmann::json j;
  j["model_id"] = model_id;
  j["config_hash"] = config_hash;
  j["count"] = log_likelihood.size();
  if (!bpd.empty()) j["mean_bpd"] = mean_bpd();
  if (!log_likelihood.empty()) j["mean_nll_nats"] = mean_nll();
  if (!recon_mse.empty())
    j["mean_recon_mse"] =
        std::accumulate(recon_mse.begin(), recon_mse.end(), 0.0) /
        static_cast<double>(recon_mse.size());
  j["epsilon_star"] = epsilon_star;
  j["is_samples"] = is_samples;
  j["is_rounds"] = is_rounds;
  j["exact"] = exact;
  if (!note.empty()) j["note"] = note;
  return j.dump(2);
}

}  // namespace aef::eval
