#include "aef/model_factory.hpp"

#include <cmath>
#include <filesystem>

namespace aef::train {

namespace {

nets::Activation act_from(const std::string& s) {
  return s == "relu" ? nets::Activation::Relu : nets::Activation::Tanh;
}

data::ToyKind toy_kind_of(const std::string& dataset_kind) {
  if (dataset_kind == "toy-sine") return data::ToyKind::SineCurve;
  if (dataset_kind == "toy-circle") return data::ToyKind::Circle;
  return data::ToyKind::SwissRibbon;
}

}  // namespace

PreparedData prepare_data(const RunConfig& c) {
  PreparedData p;
  const auto& ds = c.dataset;
  if (ds.kind == "idx") {
    auto idx = data::read_idx_images(ds.path);
    p.image = data::ImageShape{1, idx.h, idx.w};
    Matrix values;
    Rng deq_rng(c.seed ^ 0xD00DULL);
    if (ds.dequantize) {
      values = data::dequantize(idx.pixels, deq_rng);
      p.dequantized = true;
    } else {
      values = idx.pixels / 256.0;
    }
    Matrix clean = values;
    if (ds.denoise_sigma > 0.0) {
      Rng noise_rng(c.seed ^ 0xA011ULL);
      values = data::add_noise(values, {ds.denoise_sigma, 0.0, 1.0}, noise_rng);
    }
    data::Dataset full{values, "idx", p.image, p.dequantized};
    auto sp = data::split(full, ds.validation_fraction, c.seed ^ 0x5211ULL);
    p.train = sp.train;
    p.val = sp.val;
    auto take = [&](const std::vector<Index>& which) {
      Matrix m(clean.rows(), static_cast<Index>(which.size()));
      for (std::size_t j = 0; j < which.size(); ++j)
        m.col(static_cast<Index>(j)) = clean.col(which[j]);
      return m;
    };
    p.train_clean = take(sp.train_idx);
    p.val_clean = take(sp.val_idx);
    if (!ds.test_path.empty()) {
      auto tidx = data::read_idx_images(ds.test_path);
      require(tidx.h == idx.h && tidx.w == idx.w,
              "prepare_data: test images have a different shape");
      Rng tdeq(c.seed ^ 0xD00D7ULL);
      Matrix tv = ds.dequantize ? data::dequantize(tidx.pixels, tdeq)
                                : Matrix(tidx.pixels / 256.0);
      p.test_clean = tv;
      if (ds.denoise_sigma > 0.0) {
        Rng tnoise(c.seed ^ 0xA0117ULL);
        tv = data::add_noise(tv, {ds.denoise_sigma, 0.0, 1.0}, tnoise);
      }
      p.test = tv;
    }
    return p;
  }

  require(ds.denoise_sigma == 0.0,
          "prepare_data: denoise_sigma applies to image data; toy manifolds "
          "use dataset.noise");
  // One draw covers train+val+test so every subset lies on the same manifold.
  const Index total = ds.count + ds.test_count;
  data::ToyManifold toy;
  const bool use_cache = !ds.path.empty();
  if (use_cache && std::filesystem::exists(ds.path)) {
    toy = data::load_toy_cache(ds.path);
    require(toy.data.dim() == ds.ambient_dim && toy.data.count() == total,
            "prepare_data: cached toy dataset does not match the config");
  } else {
    toy = data::toy_manifold(toy_kind_of(ds.kind), ds.ambient_dim, total,
                             ds.noise, c.seed);
    if (use_cache) data::save_toy_cache(ds.path, toy);
  }

  Matrix all = toy.data.samples.leftCols(ds.count);
  Matrix all_clean = toy.clean.leftCols(ds.count);
  p.test = toy.data.samples.rightCols(ds.test_count);
  p.test_clean = toy.clean.rightCols(ds.test_count);

  data::Dataset full{all, toy.data.name, std::nullopt, false};
  auto sp = data::split(full, ds.validation_fraction, c.seed ^ 0x5211ULL);
  p.train = sp.train;
  p.val = sp.val;
  auto take = [&](const std::vector<Index>& which) {
    Matrix m(all_clean.rows(), static_cast<Index>(which.size()));
    for (std::size_t j = 0; j < which.size(); ++j)
      m.col(static_cast<Index>(j)) = all_clean.col(which[j]);
    return m;
  };
  p.train_clean = take(sp.train_idx);
  p.val_clean = take(sp.val_idx);
  p.toy = std::move(toy);
  return p;
}

BuiltModel build_model(const RunConfig& c, Index ambient,
                       std::optional<data::ImageShape> image) {
  BuiltModel bm;
  bm.config = c;
  bm.params = std::make_shared<ParameterStore>();
  bm.ambient = ambient;
  bm.latent = c.model.latent_dim;
  auto& store = *bm.params;
  Rng rng(c.seed + 1);

  const std::string& variant = c.model.variant;
  if (variant == "aef-linear") bm.kind = ModelKind::AefExpanded;
  else if (variant == "vae") bm.kind = ModelKind::Vae;
  else if (variant == "deterministic-ae") bm.kind = ModelKind::Ae;
  else bm.kind = ModelKind::AefPartitioned;

  const Index D = c.model.latent_dim;
  require(D < ambient, "build_model: latent_dim must be below the data dimension");

  if (c.dataset.preprocess == "logit" && bm.kind != ModelKind::Ae) {
    bm.preprocess = flows::compose(
        {std::make_shared<flows::LogitPreprocess>(ambient, c.dataset.logit_lambda),
         std::make_shared<flows::ActNorm>(store, "pre.an", ambient)});
  }

  const nets::Activation enc_act = act_from(c.model.encoder.activation);
  const nets::Activation dec_act = act_from(c.model.decoder.activation);
  const nets::Activation flow_act = act_from(c.model.flow_activation);

  auto make_encoder_trunk = [&](Index in_dim) -> std::shared_ptr<nets::FeedForward> {
    if (c.model.encoder.type == "conv") {
      require(image.has_value(), "build_model: conv encoder needs image data");
      require(in_dim == image->size(),
              "build_model: conv encoder cannot take a partitioned shell");
      return std::make_shared<nets::ConvTrunk>(nets::ConvTrunk::build(
          store, "enc.trunk", image->c, image->h, image->w,
          c.model.encoder.conv_channels, rng));
    }
    return std::make_shared<nets::MlpTrunk>(nets::MlpTrunk::build(
        store, "enc.trunk", in_dim, c.model.encoder.hidden, enc_act, rng));
  };

  auto make_decoder = [&](Index out_dim) -> std::shared_ptr<nets::FeedForward> {
    if (c.model.decoder.type == "conv") {
      require(image.has_value(), "build_model: conv decoder needs image data");
      require(out_dim == image->size(),
              "build_model: conv decoder cannot emit a partitioned shell");
      std::vector<Index> rev(c.model.decoder.conv_channels.rbegin(),
                             c.model.decoder.conv_channels.rend());
      return std::make_shared<nets::ConvDecoder>(nets::ConvDecoder::build(
          store, "dec", D, image->c, image->h, image->w, rev, rng));
    }
    return std::make_shared<nets::Mlp>(nets::Mlp::build(
        store, "dec", D, c.model.decoder.hidden, out_dim, dec_act, rng));
  };

  auto make_flow = [&](const std::string& name) {
    return flows::make_autoregressive_flow(store, name, D, c.model.flow_layers,
                                           c.model.flow_hidden,
                                           c.model.flow_residual_blocks,
                                           flow_act, rng);
  };

  switch (bm.kind) {
    case ModelKind::AefExpanded: {
      models::AefModel m;
      m.params = bm.params;
      m.variant = models::AefVariant::Expanded;
      m.ambient = ambient;
      m.latent = D;
      m.expansion = models::FeatureExpansion::build(store, "h", ambient, D, rng);
      m.encoder = nets::TwoHeadEncoder::build(store, "enc", make_encoder_trunk(ambient), D, rng);
      m.decoder = make_decoder(ambient);
      if (c.model.core_flow) m.core = make_flow("core");
      m.prior.dim = D;
      if (c.model.prior_flow) m.prior.flow = make_flow("prior");
      m.sigma = dist::ErrorScale::build(store, "err", c.model.sigma_init);
      bm.aef = std::move(m);
      break;
    }
    case ModelKind::AefPartitioned: {
      require(c.model.encoder.type == "mlp" && c.model.decoder.type == "mlp",
              "build_model: partitioned variants use mlp encoder/decoder");
      models::AefModel m;
      m.params = bm.params;
      m.variant = models::AefVariant::Partitioned;
      m.ambient = ambient;
      m.latent = D;
      const auto kind = variant == "aef-partitioned-center"
                            ? models::PartitionScheme::Kind::Center
                            : models::PartitionScheme::Kind::Corner;
      std::optional<std::pair<Index, Index>> hw;
      if (image) hw = std::make_pair(image->h, image->w);
      m.partition = models::make_partition(kind, D, ambient, hw, c.seed);
      m.encoder = nets::TwoHeadEncoder::build(
          store, "enc", make_encoder_trunk(ambient - D), D, rng);
      m.decoder = make_decoder(ambient - D);
      if (c.model.core_flow) m.core = make_flow("core");
      m.prior.dim = D;
      if (c.model.prior_flow) m.prior.flow = make_flow("prior");
      m.sigma = dist::ErrorScale::build(store, "err", c.model.sigma_init);
      bm.aef = std::move(m);
      break;
    }
    case ModelKind::Vae: {
      models::VaeModel m;
      m.params = bm.params;
      m.ambient = ambient;
      m.latent = D;
      m.encoder = nets::TwoHeadEncoder::build(store, "enc", make_encoder_trunk(ambient), D, rng);
      m.decoder = make_decoder(ambient);
      if (c.model.core_flow) m.posterior = make_flow("post");
      m.prior.dim = D;
      if (c.model.prior_flow) m.prior.flow = make_flow("prior");
      m.sigma = dist::ErrorScale::build(store, "err", c.model.sigma_init);
      bm.vae = std::move(m);
      break;
    }
    case ModelKind::Ae: {
      models::DeterministicAe m;
      m.params = bm.params;
      m.ambient = ambient;
      m.latent = D;
      if (c.model.encoder.type == "conv") {
        require(image.has_value(), "build_model: conv encoder needs image data");
        auto trunk = nets::ConvTrunk::build(store, "enc.trunk", image->c,
                                            image->h, image->w,
                                            c.model.encoder.conv_channels, rng);
        const Index feat = trunk.out_dim();
        auto head = nets::Dense::build(store, "enc.head", feat, D, rng);
        struct ConvEncoder final : nets::FeedForward {
          nets::ConvTrunk trunk;
          nets::Dense head;
          Index in, out;
          Index in_dim() const override { return in; }
          Index out_dim() const override { return out; }
          ad::Var operator()(ad::Tape& t, ad::Var x) const override {
            return head(t, trunk(t, x));
          }
        };
        auto enc = std::make_shared<ConvEncoder>();
        enc->trunk = std::move(trunk);
        enc->head = head;
        enc->in = ambient;
        enc->out = D;
        m.encoder = enc;
      } else {
        m.encoder = std::make_shared<nets::Mlp>(nets::Mlp::build(
            store, "enc", ambient, c.model.encoder.hidden, D, enc_act, rng));
      }
      m.decoder = make_decoder(ambient);
      bm.ae = std::move(m);
      break;
    }
  }
  return bm;
}

std::pair<Matrix, RowVector> apply_preprocess(const BuiltModel& bm,
                                              const Matrix& x) {
  if (!bm.preprocess) return {x, RowVector::Zero(x.cols())};
  return flows::forward_values(*bm.preprocess, bm.store(), x);
}

Matrix invert_preprocess(const BuiltModel& bm, const Matrix& y) {
  if (!bm.preprocess) return y;
  return bm.preprocess->inverse(bm.store(), y).first;
}

ad::Var loss_row(const BuiltModel& bm, ad::Tape& t, ad::Var x_data,
                 const Matrix* vae_noise) {
  ad::Var y = x_data;
  ad::Var ld = t.constant(Matrix::Zero(1, t.value(x_data).cols()));
  if (bm.preprocess) {
    auto [yy, dd] = bm.preprocess->forward(t, x_data);
    y = yy;
    ld = dd;
  }
  switch (bm.kind) {
    case ModelKind::AefExpanded:
    case ModelKind::AefPartitioned:
      return models::aef_nll(*bm.aef, t, y) - ld;
    case ModelKind::Vae:
      require(vae_noise != nullptr, "loss_row: VAE loss needs posterior noise");
      return models::elbo_loss(*bm.vae, t, y, *vae_noise) - ld;
    case ModelKind::Ae:
      return models::ae_mse(*bm.ae, t, y);
  }
  throw DomainError("loss_row: bad model kind");
}

RowVector loss_row_values(const BuiltModel& bm, const Matrix& x_data,
                          const Matrix* vae_noise) {
  ad::Tape t(&bm.store(), false);
  return RowVector(
      t.value(loss_row(bm, t, t.constant(x_data), vae_noise)).row(0));
}

void data_init(BuiltModel& bm, const Matrix& batch, Rng& rng) {
  Matrix y = batch;
  if (bm.preprocess) y = bm.preprocess->init_with_batch(bm.store(), batch);
  switch (bm.kind) {
    case ModelKind::AefExpanded: {
      auto& m = *bm.aef;
      if (m.core) {
        Matrix w = m.expansion->values(m.store(), y);
        m.core->init_with_batch(m.store(), w);
      }
      if (m.prior.flow) {
        auto e = models::encode_expanded(m, y);
        m.prior.flow->init_with_batch(m.store(), e.z);
      }
      break;
    }
    case ModelKind::AefPartitioned: {
      auto& m = *bm.aef;
      if (m.core) {
        auto [core, shell] = models::partition_split(y, *m.partition);
        m.core->init_with_batch(m.store(), core);
      }
      if (m.prior.flow) {
        auto e = models::encode_partitioned(m, y);
        m.prior.flow->init_with_batch(m.store(), e.z);
      }
      break;
    }
    case ModelKind::Vae: {
      auto& m = *bm.vae;
      const Matrix noise = rng.normal_matrix(m.latent, y.cols());
      if (m.posterior) {
        auto [mean, scale] = m.encoder.values(m.store(), y);
        Matrix z0 = mean + scale.cwiseProduct(noise);
        m.posterior->init_with_batch(m.store(), z0);
      }
      if (m.prior.flow) {
        Matrix z = models::reparameterize(m, y, noise);
        m.prior.flow->init_with_batch(m.store(), z);
      }
      break;
    }
    case ModelKind::Ae:
      break;
  }
}

void mark_data_initialized(BuiltModel& bm) {
  if (bm.preprocess) bm.preprocess->mark_initialized();
  if (bm.aef) {
    if (bm.aef->core) bm.aef->core->mark_initialized();
    if (bm.aef->prior.flow) bm.aef->prior.flow->mark_initialized();
  }
  if (bm.vae) {
    if (bm.vae->posterior) bm.vae->posterior->mark_initialized();
    if (bm.vae->prior.flow) bm.vae->prior.flow->mark_initialized();
  }
}

Matrix sample_data_space(const BuiltModel& bm, Rng& rng, double temperature,
                         Index count) {
  Matrix y;
  switch (bm.kind) {
    case ModelKind::AefExpanded:
      y = models::sample_expanded(*bm.aef, rng, temperature, count);
      break;
    case ModelKind::AefPartitioned:
      y = models::sample_partitioned(*bm.aef, rng, temperature, count);
      break;
    case ModelKind::Vae:
      y = models::sample_vae(*bm.vae, rng, temperature, count);
      break;
    case ModelKind::Ae:
      throw DomainError("sample: the deterministic AE has no generative model");
  }
  return invert_preprocess(bm, y);
}

Matrix reconstruct_data_space(const BuiltModel& bm, const Matrix& x) {
  auto [y, ld] = apply_preprocess(bm, x);
  Matrix ry;
  switch (bm.kind) {
    case ModelKind::AefExpanded:
    case ModelKind::AefPartitioned:
      ry = models::reconstruct(*bm.aef, y);
      break;
    case ModelKind::Vae:
      ry = models::vae_reconstruct(*bm.vae, y);
      break;
    case ModelKind::Ae:
      ry = models::ae_reconstruct(*bm.ae, y);
      break;
  }
  return invert_preprocess(bm, ry);
}

eval::EvalReport evaluate_model(const BuiltModel& bm, const Matrix& test,
                                const Matrix& test_clean,
                                const Matrix& validation, Rng& rng) {
  require(test.cols() >= 1, "evaluate_model: empty test batch");
  eval::EvalReport r;
  r.config_hash = config_hash(bm.config);
  r.model_id = bm.config.name;
  const auto& ev = bm.config.evaluation;
  r.is_samples = ev.is_samples;
  r.is_rounds = ev.is_rounds;
  const bool deq = bm.config.dataset.dequantize;

  // reconstruction error against the clean counterparts
  Matrix recon = reconstruct_data_space(bm, test);
  for (Index j = 0; j < test.cols(); ++j)
    r.recon_mse.push_back(
        (recon.col(j) - test_clean.col(j)).array().square().mean());

  if (!bm.has_likelihood()) {
    r.note = "deterministic autoencoder: no likelihood";
    return r;
  }

  auto [ytest, ld_test] = apply_preprocess(bm, test);
  switch (bm.kind) {
    case ModelKind::AefPartitioned: {
      RowVector nll = models::nll_partitioned(*bm.aef, ytest);
      for (Index j = 0; j < test.cols(); ++j) {
        const double ll = -nll[j] + ld_test[j];
        r.log_likelihood.push_back(ll);
        r.bpd.push_back(eval::bits_per_dim(-ll, bm.ambient, deq));
      }
      r.exact = true;
      r.note = "exact, no IS";
      break;
    }
    case ModelKind::AefExpanded: {
      eval::ImportanceConfig cfg{ev.is_samples, ev.is_rounds, 0.1};
      auto grid = ev.epsilon_grid.empty() ? eval::default_epsilon_grid()
                                          : ev.epsilon_grid;
      auto [yval, ld_val] = apply_preprocess(bm, validation);
      eval::ImportanceConfig tune_cfg{ev.is_samples, std::min<Index>(ev.is_rounds, 4), 0.1};
      cfg.epsilon = eval::tune_epsilon(*bm.aef, yval, grid, tune_cfg, rng);
      r.epsilon_star = cfg.epsilon;
      for (Index j = 0; j < test.cols(); ++j) {
        const double ll =
            eval::importance_log_marginal(*bm.aef, ytest.col(j), cfg, rng) +
            ld_test[j];
        r.log_likelihood.push_back(ll);
        r.bpd.push_back(eval::bits_per_dim(-ll, bm.ambient, deq));
      }
      break;
    }
    case ModelKind::Vae: {
      for (Index j = 0; j < test.cols(); ++j) {
        double acc = 0.0;
        for (Index round = 0; round < ev.is_rounds; ++round)
          acc += eval::importance_log_marginal_vae(*bm.vae, ytest.col(j),
                                                   ev.is_samples, rng);
        const double ll = acc / static_cast<double>(ev.is_rounds) + ld_test[j];
        r.log_likelihood.push_back(ll);
        r.bpd.push_back(eval::bits_per_dim(-ll, bm.ambient, deq));
      }
      break;
    }
    case ModelKind::Ae:
      break;
  }
  return r;
}

std::vector<std::pair<Index, Index>> parity_layout(const BuiltModel& bm) {
  std::vector<std::pair<Index, Index>> out;
  for (const auto& [name, slice] : bm.store().entries()) {
    if (name.rfind("h.", 0) == 0) continue;  // feature expansion
    out.emplace_back(slice.rows, slice.cols);
  }
  return out;
}

}  // namespace aef::train
