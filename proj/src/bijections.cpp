#include "aef/bijections.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace aef::flows {

using ad::add_colvec;
using ad::clamped_exp;
using ad::colwise_sum;
using ad::gather_rows;
using ad::masked_matmul;
using ad::matmul;
using ad::mul_colvec;
using ad::scatter_rows;
using ad::sum_all;
using ad::tile_cols;

Matrix Bijection::init_with_batch(ParameterStore& store, const Matrix& batch) {
  return forward_values(*this, store, batch).first;
}

std::pair<Matrix, RowVector> forward_values(const Bijection& b,
                                            const ParameterStore& store,
                                            const Matrix& y) {
  Tape t(&store, false);
  auto [yp, ld] = b.forward(t, t.constant(y));
  return {t.value(yp), RowVector(t.value(ld).row(0))};
}

// ---------------------------------------------------------------------------
// CouplingLayer

CouplingLayer::CouplingLayer(ParameterStore& store, const std::string& name,
                             Index dim, std::vector<Index> block1,
                             std::vector<Index> block2,
                             const std::vector<Index>& hidden, Activation act,
                             Rng& rng)
    : dim_(dim), idx1_(std::move(block1)), idx2_(std::move(block2)) {
  require(!idx1_.empty() && !idx2_.empty(),
          "CouplingLayer: both blocks must be nonempty");
  std::vector<bool> seen(dim, false);
  for (Index i : idx1_) {
    require(i >= 0 && i < dim && !seen[i], "CouplingLayer: bad block-1 index");
    seen[i] = true;
  }
  for (Index i : idx2_) {
    require(i >= 0 && i < dim && !seen[i], "CouplingLayer: bad block-2 index");
    seen[i] = true;
  }
  require(std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }),
          "CouplingLayer: blocks must cover all dimensions");
  const Index d1 = static_cast<Index>(idx1_.size());
  const Index d2 = static_cast<Index>(idx2_.size());
  // Zero-initialized output layers make a fresh coupling the identity.
  scale_net_ = nets::Mlp::build(store, name + ".scale", d1, hidden, d2, act, rng, 0.0);
  shift_net_ = nets::Mlp::build(store, name + ".shift", d1, hidden, d2, act, rng, 0.0);
}

std::pair<Var, Var> CouplingLayer::forward(Tape& t, Var y) const {
  if (t.value(y).rows() != dim_) throw DomainError("CouplingLayer: bad input dim");
  Var x1 = gather_rows(y, idx1_);
  Var x2 = gather_rows(y, idx2_);
  Var s = clamped_exp(scale_net_(t, x1), kScaleFloor);
  Var m = shift_net_(t, x1);
  Var y2 = s * x2 + m;
  Var out = scatter_rows(x1, idx1_, dim_) + scatter_rows(y2, idx2_, dim_);
  Var logdet = colwise_sum(ad::log(s));
  return {out, logdet};
}

std::pair<Matrix, RowVector> CouplingLayer::inverse(const ParameterStore& store,
                                                    const Matrix& yp) const {
  if (yp.rows() != dim_) throw DomainError("CouplingLayer: bad input dim");
  Tape t(&store, false);
  Matrix x1(static_cast<Index>(idx1_.size()), yp.cols());
  Matrix y2(static_cast<Index>(idx2_.size()), yp.cols());
  for (std::size_t i = 0; i < idx1_.size(); ++i) x1.row(i) = yp.row(idx1_[i]);
  for (std::size_t i = 0; i < idx2_.size(); ++i) y2.row(i) = yp.row(idx2_[i]);
  Var vx1 = t.constant(x1);
  Matrix s = t.value(clamped_exp(scale_net_(t, vx1), kScaleFloor));
  Matrix m = t.value(shift_net_(t, vx1));
  if (!(s.array() > 0.0).all())
    throw NumericError("CouplingLayer: scale underflow, not invertible");
  Matrix x2 = (y2 - m).cwiseQuotient(s);
  Matrix out(dim_, yp.cols());
  for (std::size_t i = 0; i < idx1_.size(); ++i) out.row(idx1_[i]) = x1.row(i);
  for (std::size_t i = 0; i < idx2_.size(); ++i) out.row(idx2_[i]) = x2.row(i);
  RowVector logdet = -s.array().log().colwise().sum();
  return {out, logdet};
}

// ---------------------------------------------------------------------------
// ActNorm

ActNorm::ActNorm(ParameterStore& store, const std::string& name, Index dim)
    : dim_(dim) {
  log_scale_ = store.allocate(name + ".log_scale", dim, 1);
  shift_ = store.allocate(name + ".shift", dim, 1);
}

void ActNorm::initialize(ParameterStore& store, const Matrix& batch) {
  require(!initialized_, "ActNorm: already initialized");
  require(batch.rows() == dim_, "ActNorm: batch dimension mismatch");
  require(batch.cols() >= 2, "ActNorm: init batch must have at least 2 samples");
  const Vector mean = batch.rowwise().mean();
  Vector var = (batch.colwise() - mean).array().square().rowwise().mean();
  var = var.cwiseMax(kVarianceFloor);
  const Vector ls = -0.5 * var.array().log();
  store.view(log_scale_).col(0) = ls;
  store.view(shift_).col(0) = -mean.array() * ls.array().exp();
  initialized_ = true;
}

std::pair<Var, Var> ActNorm::forward(Tape& t, Var y) const {
  if (t.value(y).rows() != dim_) throw DomainError("ActNorm: bad input dim");
  Var ls = t.param(log_scale_);
  Var scale = ad::exp(ls);
  Var out = add_colvec(mul_colvec(y, scale), t.param(shift_));
  Var logdet = tile_cols(sum_all(ls), t.value(y).cols());
  return {out, logdet};
}

std::pair<Matrix, RowVector> ActNorm::inverse(const ParameterStore& store,
                                              const Matrix& yp) const {
  if (yp.rows() != dim_) throw DomainError("ActNorm: bad input dim");
  const Vector ls = store.view(log_scale_).col(0);
  const Vector scale = ls.array().exp();
  // exp() may hand back a denormal instead of 0 for extreme inputs.
  if (!(scale.array() > 1e-300).all())
    throw NumericError("ActNorm: scale underflow, not invertible");
  const Vector shift = store.view(shift_).col(0);
  Matrix out = (yp.colwise() - shift).array().colwise() / scale.array();
  RowVector logdet = RowVector::Constant(yp.cols(), -ls.sum());
  return {out, logdet};
}

Matrix ActNorm::init_with_batch(ParameterStore& store, const Matrix& batch) {
  if (!initialized_) initialize(store, batch);
  return forward_values(*this, store, batch).first;
}

// ---------------------------------------------------------------------------
// LogitPreprocess

LogitPreprocess::LogitPreprocess(Index dim, double lambda)
    : dim_(dim), lambda_(lambda) {
  require(lambda >= 0.0 && lambda < 0.5,
          "LogitPreprocess: lambda must lie in [0, 0.5)");
}

std::pair<Var, Var> LogitPreprocess::forward(Tape& t, Var y) const {
  const Matrix& yv = t.value(y);
  if (yv.rows() != dim_) throw DomainError("LogitPreprocess: bad input dim");
  if (lambda_ == 0.0) {
    if (!((yv.array() > 0.0).all() && (yv.array() < 1.0).all()))
      throw DomainError(
          "LogitPreprocess: input must lie strictly inside (0,1); "
          "dequantize the data first");
  } else {
    if (!((yv.array() >= 0.0).all() && (yv.array() <= 1.0).all()))
      throw DomainError("LogitPreprocess: input must lie in [0,1]");
  }
  const double a = 1.0 - 2.0 * lambda_;
  Var u = y * a + lambda_;
  Var one_minus_u = 1.0 - u;
  Var out = ad::log(u) - ad::log(one_minus_u);
  Var logdet = colwise_sum(-ad::log(u) - ad::log(one_minus_u)) +
               static_cast<double>(dim_) * std::log(a);
  return {out, logdet};
}

std::pair<Matrix, RowVector> LogitPreprocess::inverse(const ParameterStore&,
                                                      const Matrix& yp) const {
  if (yp.rows() != dim_) throw DomainError("LogitPreprocess: bad input dim");
  const double a = 1.0 - 2.0 * lambda_;
  Matrix u = 1.0 / (1.0 + (-yp.array()).exp());
  Matrix out = (u.array() - lambda_) / a;
  RowVector logdet =
      (u.array().log() + (1.0 - u.array()).log()).colwise().sum();
  logdet.array() -= static_cast<double>(dim_) * std::log(a);
  return {out, logdet};
}

// ---------------------------------------------------------------------------
// MADE masks

MadeMasks build_made_masks(Index dim, const std::vector<Index>& hidden_sizes,
                           std::vector<Index> ordering) {
  require(dim >= 1, "build_made_masks: dim must be >= 1");
  if (ordering.empty()) {
    ordering.resize(dim);
    std::iota(ordering.begin(), ordering.end(), Index{0});
  }
  require(static_cast<Index>(ordering.size()) == dim,
          "build_made_masks: ordering size mismatch");
  MadeMasks mm;
  mm.input_degrees.assign(dim, 0);
  {
    std::vector<bool> seen(dim, false);
    for (Index p = 0; p < dim; ++p) {
      const Index v = ordering[p];
      require(v >= 0 && v < dim && !seen[v],
              "build_made_masks: ordering is not a permutation");
      seen[v] = true;
      mm.input_degrees[v] = p + 1;
    }
  }
  // Hidden degrees cycle 1..D-1 (all 1 when D == 1, which blanks the output).
  const Index max_deg = std::max<Index>(1, dim - 1);
  std::vector<Index> prev_deg = mm.input_degrees;
  for (Index h : hidden_sizes) {
    std::vector<Index> deg(h);
    for (Index a = 0; a < h; ++a) deg[a] = 1 + (a % max_deg);
    auto mask = std::make_shared<Matrix>(h, prev_deg.size());
    for (Index a = 0; a < h; ++a)
      for (std::size_t b = 0; b < prev_deg.size(); ++b)
        (*mask)(a, b) = deg[a] >= prev_deg[b] ? 1.0 : 0.0;
    mm.hidden.push_back(std::move(mask));
    mm.hidden_degrees.push_back(deg);
    prev_deg.assign(deg.begin(), deg.end());
  }
  auto out = std::make_shared<Matrix>(dim, prev_deg.size());
  for (Index i = 0; i < dim; ++i)
    for (std::size_t b = 0; b < prev_deg.size(); ++b)
      (*out)(i, b) = mm.input_degrees[i] > prev_deg[b] ? 1.0 : 0.0;
  mm.output = std::move(out);
  return mm;
}

// ---------------------------------------------------------------------------
// MaskedAutoregressiveLayer

MaskedAutoregressiveLayer::MaskedAutoregressiveLayer(
    ParameterStore& store, const std::string& name, Index dim, Index hidden,
    Index residual_blocks, Activation act, Rng& rng, std::vector<Index> ordering)
    : dim_(dim), hidden_(hidden), act_(act) {
  require(dim >= 1, "MaskedAutoregressiveLayer: dim must be >= 1");
  masks_ = build_made_masks(dim, {hidden, hidden}, std::move(ordering));
  ordering_.resize(dim);
  for (Index i = 0; i < dim; ++i) ordering_[masks_.input_degrees[i] - 1] = i;
  auto out2 = std::make_shared<Matrix>(2 * dim, hidden);
  out2->topRows(dim) = *masks_.output;
  out2->bottomRows(dim) = *masks_.output;
  out_mask2_ = std::move(out2);

  const double sc_in = std::sqrt(2.0 / static_cast<double>(dim + hidden));
  w_in_ = store.allocate(name + ".in.W", hidden, dim);
  b_in_ = store.allocate(name + ".in.b", hidden, 1);
  auto w = store.view(w_in_);
  for (Index j = 0; j < dim; ++j)
    for (Index i = 0; i < hidden; ++i) w(i, j) = rng.uniform(-sc_in, sc_in);
  store.view(b_in_).setZero();

  const double sc_h = std::sqrt(1.0 / static_cast<double>(hidden));
  for (Index r = 0; r < residual_blocks; ++r) {
    ResBlock blk;
    const std::string bn = name + ".res" + std::to_string(r);
    blk.w1 = store.allocate(bn + ".W1", hidden, hidden);
    blk.b1 = store.allocate(bn + ".b1", hidden, 1);
    blk.w2 = store.allocate(bn + ".W2", hidden, hidden);
    blk.b2 = store.allocate(bn + ".b2", hidden, 1);
    auto w1 = store.view(blk.w1);
    auto w2 = store.view(blk.w2);
    for (Index j = 0; j < hidden; ++j)
      for (Index i = 0; i < hidden; ++i) {
        w1(i, j) = rng.uniform(-sc_h, sc_h);
        w2(i, j) = rng.uniform(-sc_h, sc_h) * 0.1;
      }
    store.view(blk.b1).setZero();
    store.view(blk.b2).setZero();
    blocks_.push_back(blk);
  }
  // Zero output layer: the layer starts as the identity map.
  w_out_ = store.allocate(name + ".out.W", 2 * dim, hidden);
  b_out_ = store.allocate(name + ".out.b", 2 * dim, 1);
  store.view(w_out_).setZero();
  store.view(b_out_).setZero();
}

std::pair<Var, Var> MaskedAutoregressiveLayer::conditioner(Tape& t, Var y) const {
  Var h = nets::activate(
      add_colvec(masked_matmul(t.param(w_in_), masks_.hidden[0], y), t.param(b_in_)),
      act_);
  const auto& hh = masks_.hidden[1];
  for (const auto& blk : blocks_) {
    Var z = nets::activate(
        add_colvec(masked_matmul(t.param(blk.w1), hh, h), t.param(blk.b1)), act_);
    Var z2 = add_colvec(masked_matmul(t.param(blk.w2), hh, z), t.param(blk.b2));
    h = h + z2;
  }
  Var out = add_colvec(masked_matmul(t.param(w_out_), out_mask2_, h), t.param(b_out_));
  std::vector<Index> lo(dim_), hi(dim_);
  std::iota(lo.begin(), lo.end(), Index{0});
  std::iota(hi.begin(), hi.end(), dim_);
  return {gather_rows(out, lo), gather_rows(out, hi)};
}

std::pair<Var, Var> MaskedAutoregressiveLayer::forward(Tape& t, Var y) const {
  if (t.value(y).rows() != dim_)
    throw DomainError("MaskedAutoregressiveLayer: bad input dim");
  auto [m, sraw] = conditioner(t, y);
  Var s = clamped_exp(sraw, kScaleFloor);
  Var out = s * y + m;
  Var logdet = colwise_sum(ad::log(s));
  return {out, logdet};
}

std::pair<Matrix, RowVector> MaskedAutoregressiveLayer::inverse(
    const ParameterStore& store, const Matrix& yp) const {
  if (yp.rows() != dim_)
    throw DomainError("MaskedAutoregressiveLayer: bad input dim");
  const Index batch = yp.cols();
  Matrix y = Matrix::Zero(dim_, batch);
  RowVector logdet = RowVector::Zero(batch);
  // Dimension i only depends on earlier positions, so filling in ordering
  // order makes each step's conditioner row final.
  for (Index p = 0; p < dim_; ++p) {
    const Index i = ordering_[p];
    Tape t(&store, false);
    auto [m, sraw] = conditioner(t, t.constant(y));
    const Matrix& mv = t.value(m);
    Matrix sv = t.value(sraw).array().exp().max(kScaleFloor);
    if (!(sv.row(i).array() > 0.0).all())
      throw NumericError("MaskedAutoregressiveLayer: scale underflow");
    y.row(i) = (yp.row(i) - mv.row(i)).array() / sv.row(i).array();
    logdet -= sv.row(i).array().log().matrix();
  }
  return {y, logdet};
}

// ---------------------------------------------------------------------------
// Compose

Compose::Compose(std::vector<std::shared_ptr<Bijection>> parts)
    : parts_(std::move(parts)) {
  for (const auto& p : parts_) {
    require(p != nullptr, "compose: null bijection");
    if (dim_ == 0) dim_ = p->dim();
    require(p->dim() == dim_, "compose: dimension mismatch between layers");
  }
}

std::pair<Var, Var> Compose::forward(Tape& t, Var y) const {
  Var logdet = t.constant(Matrix::Zero(1, t.value(y).cols()));
  Var cur = y;
  for (const auto& p : parts_) {
    auto [next, ld] = p->forward(t, cur);
    cur = next;
    logdet = logdet + ld;
  }
  return {cur, logdet};
}

std::pair<Matrix, RowVector> Compose::inverse(const ParameterStore& store,
                                              const Matrix& yp) const {
  Matrix cur = yp;
  RowVector logdet = RowVector::Zero(yp.cols());
  for (auto it = parts_.rbegin(); it != parts_.rend(); ++it) {
    auto [prev, ld] = (*it)->inverse(store, cur);
    cur = std::move(prev);
    logdet += ld;
  }
  return {cur, logdet};
}

Matrix Compose::init_with_batch(ParameterStore& store, const Matrix& batch) {
  Matrix cur = batch;
  for (const auto& p : parts_) cur = p->init_with_batch(store, cur);
  return cur;
}

void Compose::mark_initialized() {
  for (const auto& p : parts_) p->mark_initialized();
}

std::shared_ptr<Bijection> compose(std::vector<std::shared_ptr<Bijection>> parts) {
  return std::make_shared<Compose>(std::move(parts));
}

// ---------------------------------------------------------------------------
// InverseOrientation

std::pair<Var, Var> InverseOrientation::forward(Tape& t, Var y) const {
  if (t.recording())
    throw DomainError(
        "InverseOrientation: the flipped direction is sequential and "
        "value-only; orient the flow so training uses the fast direction");
  auto [out, ld] = inner_->inverse(*t.params(), t.value(y));
  return {t.constant(std::move(out)), t.constant(ld)};
}

std::pair<Matrix, RowVector> InverseOrientation::inverse(
    const ParameterStore& store, const Matrix& yp) const {
  return forward_values(*inner_, store, yp);
}

// ---------------------------------------------------------------------------

std::shared_ptr<Bijection> make_autoregressive_flow(
    ParameterStore& store, const std::string& name, Index dim, Index layers,
    Index hidden, Index residual_blocks, Activation act, Rng& rng) {
  std::vector<std::shared_ptr<Bijection>> parts;
  std::vector<Index> natural(dim), reversed(dim);
  std::iota(natural.begin(), natural.end(), Index{0});
  for (Index i = 0; i < dim; ++i) reversed[i] = dim - 1 - i;
  for (Index k = 0; k < layers; ++k) {
    if (k > 0)
      parts.push_back(std::make_shared<ActNorm>(
          store, name + ".an" + std::to_string(k), dim));
    parts.push_back(std::make_shared<MaskedAutoregressiveLayer>(
        store, name + ".maf" + std::to_string(k), dim, hidden, residual_blocks,
        act, rng, (k % 2 == 0) ? natural : reversed));
  }
  return compose(std::move(parts));
}

RowVector flow_nll(const Bijection& b, const ParameterStore& store,
                   const Matrix& y,
                   const std::function<RowVector(const Matrix&)>& base_log_prob) {
  auto [u, logdet] = forward_values(b, store, y);
  return -(base_log_prob(u) + logdet);
}

}  // namespace aef::flows
