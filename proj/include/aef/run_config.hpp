#pragma once

#include "aef/types.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace aef::train {

struct NetSpec {
  std::string type = "mlp";  // mlp | conv
  std::vector<Index> hidden{64, 64};
  std::string activation = "tanh";  // tanh | relu
  std::vector<Index> conv_channels{64, 128};
};

struct DatasetSpec {
  std::string kind = "toy-sine";  // toy-sine | toy-circle | toy-ribbon | idx
  std::string path;               // idx file, or toy cache location (optional)
  std::string test_path;          // idx test file (optional)
  Index ambient_dim = 10;         // toys only
  Index count = 4096;             // toys only
  Index test_count = 512;         // toys only
  double noise = 0.05;            // toy manifold noise (RMS amplitude)
  double denoise_sigma = 0.0;     // extra per-entry noise for denoising runs
  double validation_fraction = 0.1;
  bool dequantize = false;        // idx only
  std::string preprocess = "none";  // none | logit
  double logit_lambda = 1e-6;
};

struct ModelSpec {
  // aef-linear | aef-partitioned-center | aef-partitioned-corner | vae |
  // deterministic-ae
  std::string variant = "aef-linear";
  Index latent_dim = 2;
  NetSpec encoder;
  NetSpec decoder;
  bool core_flow = true;   // AEF core encoder / VAE posterior flow
  bool prior_flow = true;
  Index flow_layers = 4;
  Index flow_hidden = 256;
  Index flow_residual_blocks = 2;
  std::string flow_activation = "relu";
  double sigma_init = 1.0;
};

struct OptimizerSpec {
  double lr = 1e-3;
  Index batch_size = 128;
  long max_iterations = 20000;
  double clip_norm = 200.0;
  long patience = 5000;
  long eval_interval = 250;
  Index val_max_points = 512;
};

struct EvalSpec {
  Index is_samples = 128;
  Index is_rounds = 20;
  std::vector<double> epsilon_grid;  // empty = default 8 log-spaced in [1e-4, 1]
  double temperature = 0.85;
  Index sample_count = 64;
};

struct RunConfig {
  std::string name = "run";
  std::uint64_t seed = 0;
  DatasetSpec dataset;
  ModelSpec model;
  OptimizerSpec optimizer;
  EvalSpec evaluation;
};

/// Parses and validates; unknown keys and out-of-range values raise
/// DomainError with the offending field path.
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& c);
RunConfig load_config(const std::string& path);

/// FNV-1a over the canonical (key-sorted) serialization; stable under field
/// reordering in the source document.
std::string config_hash(const RunConfig& c);

/// Hash with the iteration budget normalized away: a checkpoint may be
/// resumed with a larger max_iterations, everything else must match.
std::string config_resume_hash(const RunConfig& c);

/// Applies "dotted.path=value" onto a config document; the path must name a
/// declared field and the value must parse to the same JSON type.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// The four flow-ablation configs for one model family:
/// {no flows, core/posterior only, prior only, both}.
std::vector<RunConfig> ablation_matrix(const RunConfig& base);

}  // namespace aef::train
