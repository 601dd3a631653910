#pragma once

#include "aef/aef_models.hpp"
#include "aef/data.hpp"
#include "aef/evaluation.hpp"
#include "aef/run_config.hpp"
#include "aef/vae_model.hpp"

#include <memory>
#include <optional>

namespace aef::train {

enum class ModelKind { AefPartitioned, AefExpanded, Vae, Ae };

struct PreparedData {
  data::Dataset train, val;
  Matrix train_clean, val_clean;  // pre-noise counterparts, aligned by column
  Matrix test, test_clean;        // may be empty
  std::optional<data::ToyManifold> toy;
  std::optional<data::ImageShape> image;
  bool dequantized = false;
};

/// Generates/loads and splits the dataset named by the config. Deterministic
/// in config.seed.
PreparedData prepare_data(const RunConfig& c);

// A model plus its data-space preprocessing, built from one RunConfig. The
// preprocessing bijection (logit + ActNorm) shares the parameter store and is
// trained jointly; the deterministic AE never gets one (it works in pixel
// space).
struct BuiltModel {
  ModelKind kind = ModelKind::AefExpanded;
  RunConfig config;
  std::shared_ptr<ParameterStore> params;
  std::optional<models::AefModel> aef;
  std::optional<models::VaeModel> vae;
  std::optional<models::DeterministicAe> ae;
  std::shared_ptr<flows::Bijection> preprocess;
  Index ambient = 0;
  Index latent = 0;

  ParameterStore& store() { return *params; }
  const ParameterStore& store() const { return *params; }
  bool has_likelihood() const { return kind != ModelKind::Ae; }
};

BuiltModel build_model(const RunConfig& c, Index ambient,
                       std::optional<data::ImageShape> image);

/// (preprocessed batch, logdet of the preprocessing at each column).
std::pair<Matrix, RowVector> apply_preprocess(const BuiltModel& bm,
                                              const Matrix& x);
Matrix invert_preprocess(const BuiltModel& bm, const Matrix& y);

/// Per-sample training loss (1 x B) in data space: exact NLL for AEFs,
/// single-sample ELBO for the VAE (noise required), MSE for the AE.
ad::Var loss_row(const BuiltModel& bm, ad::Tape& t, ad::Var x_data,
                 const Matrix* vae_noise);
RowVector loss_row_values(const BuiltModel& bm, const Matrix& x_data,
                          const Matrix* vae_noise);

/// Data-dependent initialization (preprocess ActNorm, core/posterior and
/// prior flows) from a representative batch.
void data_init(BuiltModel& bm, const Matrix& batch, Rng& rng);
/// Marks all data-dependent layers initialized (checkpoint restore).
void mark_data_initialized(BuiltModel& bm);

/// Generates data-space samples at the given temperature.
Matrix sample_data_space(const BuiltModel& bm, Rng& rng, double temperature,
                         Index count);
/// Data-space reconstructions of data-space inputs.
Matrix reconstruct_data_space(const BuiltModel& bm, const Matrix& x);

/// Full evaluation protocol: epsilon tuning on validation (expanded AEF),
/// per-datapoint log-likelihood on the test batch, BPD, reconstruction MSE.
eval::EvalReport evaluate_model(const BuiltModel& bm, const Matrix& test,
                                const Matrix& test_clean,
                                const Matrix& validation, Rng& rng);

/// Ordered parameter shapes with the feature-expansion entries dropped;
/// the architectural-parity comparison between AEF (expanded) and VAE.
std::vector<std::pair<Index, Index>> parity_layout(const BuiltModel& bm);

}  // namespace aef::train
