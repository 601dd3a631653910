#pragma once

#include "aef/model_factory.hpp"
#include "aef/run_config.hpp"

#include <string>
#include <vector>

namespace aef::train {

struct AdamState {
  Vector m, v;
  long t = 0;
  void reset(Index n) {
    m = Vector::Zero(n);
    v = Vector::Zero(n);
    t = 0;
  }
};

/// One Adam update from store.grad(); beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
void adam_step(ParameterStore& store, AdamState& state, double lr);

/// Rescales g in place when ||g||_2 exceeds max_norm; returns the pre-clip
/// norm. Direction is preserved.
double clip_global_norm(Vector& g, double max_norm);

struct MetricsRow {
  long iteration = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double sigma = 0.0;
  double wall_time_s = 0.0;
};

struct CheckpointData {
  Vector theta;
  AdamState adam;
  long iteration = 0;
  double best_val = 0.0;
  long best_iteration = -1;
  bool aborted = false;
  bool data_init_done = false;
  std::string config_hash;
  std::string resume_hash;
  std::string train_rng, noise_rng;
};

/// Atomic write (temp dir + rename): manifest.json, params.bin, adam.bin.
void save_checkpoint(const std::string& dir, const RunConfig& config,
                     const CheckpointData& data);
CheckpointData load_checkpoint(const std::string& dir);

struct TrainResult {
  double best_val = 0.0;
  long best_iteration = -1;
  long iterations_run = 0;
  bool aborted = false;
  std::string best_checkpoint;
  std::string last_checkpoint;
  std::string metrics_path;
  std::vector<MetricsRow> history;
};

/// Runs the full training protocol for the config, writing metrics and
/// checkpoints under out_dir. Deterministic in the config seed.
TrainResult train(const RunConfig& config, const std::string& out_dir);

/// Continues from a saved checkpoint; the config must hash-match the one the
/// checkpoint was created from. Bit-exact with an uninterrupted run.
TrainResult resume(const std::string& checkpoint_dir, const RunConfig& config,
                   const std::string& out_dir);

}  // namespace aef::train
