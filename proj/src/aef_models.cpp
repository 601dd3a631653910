#include "aef/aef_models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace aef::models {

using ad::colwise_sum;
using ad::gather_rows;

namespace {

void check_finite(const Matrix& v, const char* what) {
  if (!v.allFinite())
    throw NumericError(std::string("non-finite activations in ") + what);
}

std::vector<Index> complement(const std::vector<Index>& idx, Index n) {
  std::vector<bool> in(n, false);
  for (Index i : idx) in[i] = true;
  std::vector<Index> out;
  out.reserve(n - static_cast<Index>(idx.size()));
  for (Index i = 0; i < n; ++i)
    if (!in[i]) out.push_back(i);
  return out;
}

}  // namespace

PartitionScheme make_partition(PartitionScheme::Kind kind, Index core_dim,
                               Index ambient,
                               std::optional<std::pair<Index, Index>> image_hw,
                               std::uint64_t seed) {
  require(core_dim >= 1, "partition: core dimension must be >= 1");
  require(core_dim < ambient,
          "partition: core dimension must be smaller than the ambient dimension");
  if (image_hw)
    require(image_hw->first * image_hw->second == ambient,
            "partition: image shape does not match ambient dimension");

  PartitionScheme s;
  s.kind = kind;
  s.core_dim = core_dim;
  s.ambient = ambient;
  s.seed = seed;

  auto block_indices = [&](Index r0, Index c0) {
    const Index W = image_hw->second;
    const Index d = static_cast<Index>(
        std::ceil(std::sqrt(static_cast<double>(core_dim))));
    std::vector<Index> idx;
    for (Index r = 0; r < d && static_cast<Index>(idx.size()) < core_dim; ++r)
      for (Index c = 0; c < d && static_cast<Index>(idx.size()) < core_dim; ++c)
        idx.push_back((r0 + r) * W + (c0 + c));
    return idx;
  };

  switch (kind) {
    case PartitionScheme::Kind::Center:
      if (image_hw) {
        const Index d = static_cast<Index>(
            std::ceil(std::sqrt(static_cast<double>(core_dim))));
        require(d <= image_hw->first && d <= image_hw->second,
                "partition: core block does not fit the image");
        s.core_idx = block_indices((image_hw->first - d) / 2,
                                   (image_hw->second - d) / 2);
      } else {
        const Index start = (ambient - core_dim) / 2;
        for (Index i = 0; i < core_dim; ++i) s.core_idx.push_back(start + i);
      }
      break;
    case PartitionScheme::Kind::Corner:
      if (image_hw) {
        const Index d = static_cast<Index>(
            std::ceil(std::sqrt(static_cast<double>(core_dim))));
        require(d <= image_hw->first && d <= image_hw->second,
                "partition: core block does not fit the image");
        s.core_idx = block_indices(0, 0);
      } else {
        for (Index i = 0; i < core_dim; ++i) s.core_idx.push_back(i);
      }
      break;
    case PartitionScheme::Kind::Random: {
      Rng rng(seed);
      std::vector<Index> all(ambient);
      std::iota(all.begin(), all.end(), Index{0});
      for (Index i = ambient - 1; i > 0; --i)
        std::swap(all[i], all[rng.below(static_cast<std::uint64_t>(i) + 1)]);
      s.core_idx.assign(all.begin(), all.begin() + core_dim);
      std::sort(s.core_idx.begin(), s.core_idx.end());
      break;
    }
  }
  s.shell_idx = complement(s.core_idx, ambient);
  return s;
}

std::pair<Matrix, Matrix> partition_split(const Matrix& x,
                                          const PartitionScheme& scheme) {
  require(x.rows() == scheme.ambient, "partition_split: dimension mismatch");
  Matrix core(scheme.core_dim, x.cols());
  Matrix shell(scheme.ambient - scheme.core_dim, x.cols());
  for (std::size_t i = 0; i < scheme.core_idx.size(); ++i)
    core.row(i) = x.row(scheme.core_idx[i]);
  for (std::size_t i = 0; i < scheme.shell_idx.size(); ++i)
    shell.row(i) = x.row(scheme.shell_idx[i]);
  return {core, shell};
}

Matrix partition_merge(const Matrix& core, const Matrix& shell,
                       const PartitionScheme& scheme) {
  require(core.rows() + shell.rows() == scheme.ambient,
          "partition_merge: dimension mismatch");
  Matrix x(scheme.ambient, core.cols());
  for (std::size_t i = 0; i < scheme.core_idx.size(); ++i)
    x.row(scheme.core_idx[i]) = core.row(i);
  for (std::size_t i = 0; i < scheme.shell_idx.size(); ++i)
    x.row(scheme.shell_idx[i]) = shell.row(i);
  return x;
}

FeatureExpansion FeatureExpansion::build(ParameterStore& store,
                                         const std::string& name, Index in,
                                         Index out, Rng& rng) {
  FeatureExpansion h;
  h.in = in;
  h.out = out;
  h.W = store.allocate(name + ".W", out, in);
  h.b = store.allocate(name + ".b", out, 1);
  const double scale = 1.0 / std::sqrt(static_cast<double>(in));
  auto w = store.view(h.W);
  for (Index j = 0; j < in; ++j)
    for (Index i = 0; i < out; ++i) w(i, j) = rng.normal() * scale;
  store.view(h.b).setZero();
  return h;
}

Var FeatureExpansion::operator()(Tape& t, Var x) const {
  return ad::add_colvec(ad::matmul(t.param(W), x), t.param(b));
}

Matrix FeatureExpansion::values(const ParameterStore& store, const Matrix& x) const {
  return (store.view(W) * x).colwise() + Vector(store.view(b).col(0));
}

// ---------------------------------------------------------------------------
// Shared encoding core: z = m(cond) + s(cond) .* core_fwd(w), delta = res - f(z)

namespace {

struct AffineEncoding {
  Var z, delta, logdet;
};

// cond: encoder input; w: core-flow input; res: what delta is measured
// against (shell or full x).
AffineEncoding affine_encode(const AefModel& m, Tape& t, Var cond, Var w, Var res) {
  Var u, ld_core;
  if (m.core) {
    auto [uu, ld] = m.core->forward(t, w);
    u = uu;
    ld_core = ld;
  } else {
    u = w;
    ld_core = t.constant(Matrix::Zero(1, t.value(w).cols()));
  }
  auto heads = m.encoder(t, cond);
  check_finite(t.value(heads.mean), "encoder mean head");
  check_finite(t.value(heads.scale), "encoder scale head");
  Var z = heads.mean + heads.scale * u;
  Var delta = res - (*m.decoder)(t, z);
  check_finite(t.value(z), "latent code");
  check_finite(t.value(delta), "decoder residual");
  Var logdet = ld_core + colwise_sum(ad::log(heads.scale));
  return {z, delta, logdet};
}

Var nll_from(const AefModel& m, Tape& t, const AffineEncoding& e) {
  Var sigma = m.sigma.value(t);
  return dist::gaussian_residual_nll(t, e.delta, sigma) -
         m.prior.log_prob(t, e.z) - e.logdet;
}

}  // namespace

// ---------------------------------------------------------------------------
// Partitioned variant

Encoded encode_partitioned(const AefModel& m, Tape& t, Var x) {
  require(m.variant == AefVariant::Partitioned && m.partition.has_value(),
          "encode_partitioned: model is not partitioned");
  check_finite(t.value(x), "encode_partitioned input");
  const auto& p = *m.partition;
  Var core = gather_rows(x, p.core_idx);
  Var shell = gather_rows(x, p.shell_idx);
  auto e = affine_encode(m, t, shell, core, shell);
  return {e.z, e.delta, e.logdet};
}

EncodedValues encode_partitioned(const AefModel& m, const Matrix& x) {
  Tape t(&m.store(), false);
  auto e = encode_partitioned(m, t, t.constant(x));
  return {t.value(e.z), t.value(e.delta), RowVector(t.value(e.logdet).row(0))};
}

Matrix decode_partitioned(const AefModel& m, const Matrix& z, const Matrix& delta) {
  require(m.variant == AefVariant::Partitioned && m.partition.has_value(),
          "decode_partitioned: model is not partitioned");
  const auto& p = *m.partition;
  const Matrix shell = m.decoder->values(m.store(), z) + delta;
  auto [mean, scale] = m.encoder.values(m.store(), shell);
  if (!(scale.array() > 0.0).all())
    throw NumericError("decode_partitioned: non-positive encoder scale");
  const Matrix u = (z - mean).cwiseQuotient(scale);
  const Matrix core = m.core ? m.core->inverse(m.store(), u).first : u;
  return partition_merge(core, shell, p);
}

Var nll_partitioned(const AefModel& m, Tape& t, Var x) {
  auto e = encode_partitioned(m, t, x);
  return nll_from(m, t, {e.z, e.delta, e.logdet});
}

RowVector nll_partitioned(const AefModel& m, const Matrix& x) {
  Tape t(&m.store(), false);
  return RowVector(t.value(nll_partitioned(m, t, t.constant(x))).row(0));
}

Matrix sample_partitioned(const AefModel& m, Rng& rng, double temperature,
                          Index count) {
  require(m.variant == AefVariant::Partitioned,
          "sample_partitioned: model is not partitioned");
  const Matrix z = m.prior.sample(m.store(), rng, count, temperature);
  const Matrix delta = Matrix::Zero(m.ambient - m.latent, count);
  return decode_partitioned(m, z, delta);
}

// ---------------------------------------------------------------------------
// Expanded variant

Encoded encode_expanded(const AefModel& m, Tape& t, Var x) {
  require(m.variant == AefVariant::Expanded && m.expansion.has_value(),
          "encode_expanded: model is not expanded");
  check_finite(t.value(x), "encode_expanded input");
  Var w = (*m.expansion)(t, x);
  auto e = affine_encode(m, t, x, w, x);
  return {e.z, e.delta, e.logdet};
}

EncodedValues encode_expanded(const AefModel& m, const Matrix& x) {
  Tape t(&m.store(), false);
  auto e = encode_expanded(m, t, t.constant(x));
  return {t.value(e.z), t.value(e.delta), RowVector(t.value(e.logdet).row(0))};
}

Var nll_expanded(const AefModel& m, Tape& t, Var x) {
  auto e = encode_expanded(m, t, x);
  return nll_from(m, t, {e.z, e.delta, e.logdet});
}

RowVector nll_expanded(const AefModel& m, const Matrix& x) {
  Tape t(&m.store(), false);
  return RowVector(t.value(nll_expanded(m, t, t.constant(x))).row(0));
}

RowVector density_joint(const AefModel& m, const Matrix& x, const Matrix& w) {
  require(m.variant == AefVariant::Expanded,
          "density_joint: model is not expanded");
  require(x.rows() == m.ambient && w.rows() == m.latent && x.cols() == w.cols(),
          "density_joint: dimension mismatch");
  Tape t(&m.store(), false);
  auto e = affine_encode(m, t, t.constant(x), t.constant(w), t.constant(x));
  const double sigma = m.sigma.value(m.store());
  RowVector log_r = -dist::gaussian_residual_nll(t.value(e.delta), sigma);
  RowVector log_p0 = m.prior.log_prob(m.store(), t.value(e.z));
  return log_p0 + log_r + RowVector(t.value(e.logdet).row(0));
}

Matrix sample_expanded(const AefModel& m, Rng& rng, double temperature,
                       Index count) {
  require(m.variant == AefVariant::Expanded,
          "sample_expanded: model is not expanded");
  const Matrix z = m.prior.sample(m.store(), rng, count, temperature);
  return m.decoder->values(m.store(), z);
}

Matrix reconstruct(const AefModel& m, const Matrix& x) {
  if (m.variant == AefVariant::Expanded) {
    auto e = encode_expanded(m, x);
    return m.decoder->values(m.store(), e.z);
  }
  auto e = encode_partitioned(m, x);
  return decode_partitioned(m, e.z, Matrix::Zero(e.delta.rows(), e.delta.cols()));
}

Var aef_nll(const AefModel& m, Tape& t, Var x) {
  return m.variant == AefVariant::Expanded ? nll_expanded(m, t, x)
                                           : nll_partitioned(m, t, x);
}

RowVector aef_nll(const AefModel& m, const Matrix& x) {
  return m.variant == AefVariant::Expanded ? nll_expanded(m, x)
                                           : nll_partitioned(m, x);
}

// ---------------------------------------------------------------------------
// AefBijection

Index AefBijection::dim() const {
  return m_->variant == AefVariant::Expanded ? m_->ambient + m_->latent
                                             : m_->ambient;
}

std::pair<Var, Var> AefBijection::forward(Tape& t, Var y) const {
  if (t.value(y).rows() != dim())
    throw DomainError("AefBijection: bad input dimension");
  if (m_->variant == AefVariant::Partitioned) {
    auto e = encode_partitioned(*m_, t, y);
    return {ad::vcat(e.z, e.delta), e.logdet};
  }
  std::vector<Index> xi(m_->ambient), wi(m_->latent);
  std::iota(xi.begin(), xi.end(), Index{0});
  std::iota(wi.begin(), wi.end(), m_->ambient);
  Var x = gather_rows(y, xi);
  Var w = gather_rows(y, wi);
  auto e = affine_encode(*m_, t, x, w, x);
  return {ad::vcat(e.z, e.delta), e.logdet};
}

std::pair<Matrix, RowVector> AefBijection::inverse(const ParameterStore& store,
                                                   const Matrix& yp) const {
  if (yp.rows() != dim()) throw DomainError("AefBijection: bad input dimension");
  const Index D = m_->latent;
  const Matrix z = yp.topRows(D);
  const Matrix delta = yp.bottomRows(yp.rows() - D);
  if (m_->variant == AefVariant::Partitioned) {
    Matrix x = decode_partitioned(*m_, z, delta);
    auto e = encode_partitioned(*m_, x);
    return {x, RowVector(-e.logdet)};
  }
  const Matrix x = m_->decoder->values(store, z) + delta;
  auto [mean, scale] = m_->encoder.values(store, x);
  if (!(scale.array() > 0.0).all())
    throw NumericError("AefBijection: non-positive encoder scale");
  Matrix u = (z - mean).cwiseQuotient(scale);
  RowVector logdet = scale.array().log().colwise().sum();
  if (m_->core) {
    auto [w, ld] = m_->core->inverse(store, u);
    u = std::move(w);
    logdet -= ld;  // ld is the inverse-direction logdet; forward adds +ld_fwd
  }
  Matrix out(dim(), yp.cols());
  out.topRows(m_->ambient) = x;
  out.bottomRows(D) = u;
  return {out, RowVector(-logdet)};
}

RowVector nll_via_flow_core(const AefModel& m, const Matrix& x) {
  AefBijection bij(m);
  Matrix input = x;
  if (m.variant == AefVariant::Expanded) {
    const Matrix w = m.expansion->values(m.store(), x);
    input.conservativeResize(x.rows() + w.rows(), Eigen::NoChange);
    input.bottomRows(w.rows()) = w;
  }
  const double sigma = m.sigma.value(m.store());
  const Index D = m.latent;
  return flows::flow_nll(bij, m.store(), input, [&](const Matrix& u) {
    RowVector lp = m.prior.log_prob(m.store(), u.topRows(D));
    lp -= dist::gaussian_residual_nll(u.bottomRows(u.rows() - D), sigma);
    return lp;
  });
}

}  // namespace aef::models
