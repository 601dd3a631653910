#include "aef/training.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;

namespace aef::train {

void adam_step(ParameterStore& store, AdamState& state, double lr) {
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  const Vector& g = store.grad();
  ++state.t;
  state.m = beta1 * state.m + (1.0 - beta1) * g;
  state.v = beta2 * state.v + (1.0 - beta2) * g.cwiseProduct(g);
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  store.theta().array() -=
      lr * (state.m.array() / c1) /
      ((state.v.array() / c2).sqrt() + eps);
}

double clip_global_norm(Vector& g, double max_norm) {
  const double n = g.norm();
  if (n > max_norm && n > 0.0) g *= max_norm / n;
  return n;
}

// ---------------------------------------------------------------------------
// Checkpoint IO

namespace {

void write_vector(std::ostream& os, const char* magic, const Vector& v) {
  os.write(magic, 8);
  const std::uint64_t n = static_cast<std::uint64_t>(v.size());
  os.write(reinterpret_cast<const char*>(&n), 8);
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(sizeof(double) * v.size()));
}

Vector read_vector(std::istream& is, const char* magic) {
  char m[8];
  is.read(m, 8);
  if (std::string(m, 8) != magic)
    throw NumericError("checkpoint: bad section magic");
  std::uint64_t n = 0;
  is.read(reinterpret_cast<char*>(&n), 8);
  Vector v(static_cast<Index>(n));
  is.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(sizeof(double) * v.size()));
  if (!is) throw NumericError("checkpoint: truncated file");
  return v;
}

}  // namespace

void save_checkpoint(const std::string& dir, const RunConfig& config,
                     const CheckpointData& data) {
  const fs::path target(dir);
  const fs::path tmp = target.string() + ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);

  {
    std::ofstream os(tmp / "params.bin", std::ios::binary);
    write_vector(os, "AEFPAR01", data.theta);
  }
  {
    std::ofstream os(tmp / "adam.bin", std::ios::binary);
    os.write(reinterpret_cast<const char*>(&data.adam.t), sizeof(long));
    write_vector(os, "AEFADM01", data.adam.m);
    write_vector(os, "AEFADM02", data.adam.v);
  }
  nlohmann::json j;
  j["format"] = 1;
  j["config_hash"] = config_hash(config);
  j["resume_hash"] = config_resume_hash(config);
  j["name"] = config.name;
  j["iteration"] = data.iteration;
  j["best_val"] = data.best_val;
  j["best_iteration"] = data.best_iteration;
  j["aborted"] = data.aborted;
  j["data_init_done"] = data.data_init_done;
  j["rng"] = {{"train", data.train_rng}, {"noise", data.noise_rng}};
  {
    std::ofstream os(tmp / "manifest.json");
    os << j.dump(2) << "\n";
  }
  fs::remove_all(target);
  fs::rename(tmp, target);
}

CheckpointData load_checkpoint(const std::string& dir) {
  const fs::path p(dir);
  std::ifstream mf(p / "manifest.json");
  if (!mf) throw DomainError("checkpoint: cannot open " + dir + "/manifest.json");
  nlohmann::json j;
  mf >> j;
  CheckpointData d;
  d.config_hash = j.at("config_hash").get<std::string>();
  d.resume_hash = j.at("resume_hash").get<std::string>();
  d.iteration = j.at("iteration").get<long>();
  d.best_val = j.at("best_val").get<double>();
  d.best_iteration = j.at("best_iteration").get<long>();
  d.aborted = j.at("aborted").get<bool>();
  d.data_init_done = j.at("data_init_done").get<bool>();
  d.train_rng = j.at("rng").at("train").get<std::string>();
  d.noise_rng = j.at("rng").at("noise").get<std::string>();
  {
    std::ifstream is(p / "params.bin", std::ios::binary);
    if (!is) throw NumericError("checkpoint: missing params.bin");
    d.theta = read_vector(is, "AEFPAR01");
  }
  {
    std::ifstream is(p / "adam.bin", std::ios::binary);
    if (!is) throw NumericError("checkpoint: missing adam.bin");
    is.read(reinterpret_cast<char*>(&d.adam.t), sizeof(long));
    d.adam.m = read_vector(is, "AEFADM01");
    d.adam.v = read_vector(is, "AEFADM02");
  }
  return d;
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

class Trainer {
 public:
  Trainer(const RunConfig& config, const std::string& out_dir)
      : config_(config),
        out_dir_(out_dir),
        data_(prepare_data(config)),
        model_(build_model(config, data_.train.dim(), data_.image)),
        train_rng_(config.seed + 2),
        noise_rng_(config.seed + 3) {
    fs::create_directories(out_dir_);
    metrics_path_ = (fs::path(out_dir_) / "metrics.csv").string();
    adam_.reset(model_.store().size());
  }

  void restore(const CheckpointData& ck) {
    require(ck.resume_hash == config_resume_hash(config_),
            "resume: checkpoint was created from a different config");
    model_.store().theta() = ck.theta;
    adam_ = ck.adam;
    start_iter_ = ck.iteration;
    best_val_ = ck.best_val;
    best_iter_ = ck.best_iteration;
    train_rng_.deserialize(ck.train_rng);
    noise_rng_.deserialize(ck.noise_rng);
    if (ck.data_init_done) mark_data_initialized(model_);
    data_init_done_ = ck.data_init_done;
    restored_ = true;
  }

  TrainResult run() {
    const auto& opt = config_.optimizer;
    TrainResult result;
    result.metrics_path = metrics_path_;
    const auto t0 = std::chrono::steady_clock::now();

    if (!data_init_done_) {
      const Index n_init = std::min<Index>(256, data_.train.count());
      Rng init_rng(config_.seed ^ 0xBEEFULL);
      data_init(model_, data_.train.samples.leftCols(n_init), init_rng);
      data_init_done_ = true;
    }

    std::ofstream metrics(metrics_path_, std::ios::app);
    if (metrics.tellp() == 0)
      metrics << "iteration,train_loss,val_loss,sigma,wall_time_s\n";

    const Index B = std::min<Index>(opt.batch_size, data_.train.count());
    Matrix batch(data_.train.dim(), B);
    double train_loss = std::numeric_limits<double>::quiet_NaN();
    long iter = start_iter_;
    for (; iter < opt.max_iterations; ++iter) {
      for (Index j = 0; j < B; ++j)
        batch.col(j) = data_.train.samples.col(static_cast<Index>(
            train_rng_.below(static_cast<std::uint64_t>(data_.train.count()))));
      Matrix noise;
      const Matrix* noise_ptr = nullptr;
      if (model_.kind == ModelKind::Vae) {
        noise = noise_rng_.normal_matrix(model_.latent, B);
        noise_ptr = &noise;
      }

      bool failed = false;
      try {
        model_.store().zero_grad();
        ad::Tape t(&model_.store(), true);
        ad::Var loss = ad::mean_all(loss_row(model_, t, t.constant(batch), noise_ptr));
        train_loss = t.scalar(loss);
        if (!std::isfinite(train_loss)) failed = true;
        if (!failed) {
          t.backward(loss, model_.store());
          clip_global_norm(model_.store().grad(), opt.clip_norm);
          if (!model_.store().grad().allFinite()) failed = true;
        }
      } catch (const NumericError&) {
        failed = true;
      }
      if (failed) {
        result.aborted = true;
        break;
      }
      adam_step(model_.store(), adam_, opt.lr);

      const bool last = iter + 1 == opt.max_iterations;
      if ((iter + 1) % opt.eval_interval == 0 || last) {
        const double val_loss = validation_loss(iter);
        const double sigma = model_sigma();
        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                .count();
        metrics << (iter + 1) << ',' << train_loss << ',' << val_loss << ','
                << sigma << ',' << wall << '\n';
        metrics.flush();
        result.history.push_back({iter + 1, train_loss, val_loss, sigma, wall});

        if (val_loss < best_val_) {
          best_val_ = val_loss;
          best_iter_ = iter + 1;
          save(best_dir(), iter + 1);
        }
        if (opt.patience > 0 && best_iter_ >= 0 &&
            (iter + 1) - best_iter_ >= opt.patience) {
          ++iter;
          break;
        }
      }
    }

    save(last_dir(), iter);
    result.best_val = best_val_;
    result.best_iteration = best_iter_;
    result.iterations_run = iter - start_iter_;
    result.best_checkpoint = best_iter_ >= 0 ? best_dir() : "";
    result.last_checkpoint = last_dir();
    return result;
  }

  const BuiltModel& model() const { return model_; }
  const PreparedData& data() const { return data_; }

 private:
  std::string best_dir() const {
    return (fs::path(out_dir_) / "checkpoints" / "best").string();
  }
  std::string last_dir() const {
    return (fs::path(out_dir_) / "checkpoints" / "last").string();
  }

  double model_sigma() const {
    if (model_.aef) return model_.aef->sigma.value(model_.store());
    if (model_.vae) return model_.vae->sigma.value(model_.store());
    return std::numeric_limits<double>::quiet_NaN();
  }

  double validation_loss(long iter) {
    const Index n = std::min<Index>(config_.optimizer.val_max_points,
                                    data_.val.count());
    const Matrix& val = data_.val.samples;
    // Fresh seeded posterior noise per evaluation, tagged by iteration so a
    // resumed run reproduces the same draws.
    Rng vrng(config_.seed ^
             (0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(iter + 1)));
    double acc = 0.0;
    const Index chunk = 256;
    for (Index start = 0; start < n; start += chunk) {
      const Index b = std::min<Index>(chunk, n - start);
      Matrix xs = val.middleCols(start, b);
      Matrix noise;
      const Matrix* noise_ptr = nullptr;
      if (model_.kind == ModelKind::Vae) {
        noise = vrng.normal_matrix(model_.latent, b);
        noise_ptr = &noise;
      }
      acc += loss_row_values(model_, xs, noise_ptr).sum();
    }
    return acc / static_cast<double>(n);
  }

  void save(const std::string& dir, long iteration) {
    CheckpointData d;
    d.theta = model_.store().theta();
    d.adam = adam_;
    d.iteration = iteration;
    d.best_val = best_val_;
    d.best_iteration = best_iter_;
    d.aborted = false;
    d.data_init_done = data_init_done_;
    d.train_rng = train_rng_.serialize();
    d.noise_rng = noise_rng_.serialize();
    save_checkpoint(dir, config_, d);
  }

  RunConfig config_;
  std::string out_dir_;
  std::string metrics_path_;
  PreparedData data_;
  BuiltModel model_;
  AdamState adam_;
  Rng train_rng_, noise_rng_;
  long start_iter_ = 0;
  double best_val_ = std::numeric_limits<double>::infinity();
  long best_iter_ = -1;
  bool data_init_done_ = false;
  bool restored_ = false;
};

}  // namespace

TrainResult train(const RunConfig& config, const std::string& out_dir) {
  Trainer tr(config, out_dir);
  return tr.run();
}

TrainResult resume(const std::string& checkpoint_dir, const RunConfig& config,
                   const std::string& out_dir) {
  CheckpointData ck = load_checkpoint(checkpoint_dir);
  Trainer tr(config, out_dir);
  tr.restore(ck);
  return tr.run();
}

}  // namespace aef::train
