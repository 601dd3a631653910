#pragma once

#include "aef/nets.hpp"
#include "aef/params.hpp"
#include "aef/rng.hpp"
#include "aef/tape.hpp"
#include "aef/types.hpp"

#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace aef::flows {

using ad::Tape;
using ad::Var;
using nets::Activation;

// Invertible transform on R^D. `forward` is the orientation that can be
// evaluated in a single differentiable pass; `inverse` is value-only (it may
// be sequential) and reports the log-determinant of the inverse map, i.e.
// the negative of the forward logdet at the recovered point.
class Bijection {
 public:
  virtual ~Bijection() = default;
  virtual Index dim() const = 0;

  /// y -> (y', logdet) with logdet = log|det dy'/dy| as a 1 x B row.
  virtual std::pair<Var, Var> forward(Tape& t, Var y) const = 0;

  /// y' -> (y, logdet of the inverse map).
  virtual std::pair<Matrix, RowVector> inverse(const ParameterStore& store,
                                               const Matrix& yp) const = 0;

  /// Transforms a batch, performing any data-dependent initialization on the
  /// way (ActNorm). Default: plain value forward.
  virtual Matrix init_with_batch(ParameterStore& store, const Matrix& batch);

  /// Marks data-dependent state as already initialized (checkpoint restore).
  virtual void mark_initialized() {}
};

/// Value-only forward.
std::pair<Matrix, RowVector> forward_values(const Bijection& b,
                                            const ParameterStore& store,
                                            const Matrix& y);

// Affine coupling: block-1 coordinates pass through and condition a scale and
// shift applied to block 2. Scales come from the clamped exponential, so the
// layer is invertible by construction.
class CouplingLayer final : public Bijection {
 public:
  static constexpr double kScaleFloor = 1e-6;

  CouplingLayer(ParameterStore& store, const std::string& name, Index dim,
                std::vector<Index> block1, std::vector<Index> block2,
                const std::vector<Index>& hidden, Activation act, Rng& rng);

  Index dim() const override { return dim_; }
  std::pair<Var, Var> forward(Tape& t, Var y) const override;
  std::pair<Matrix, RowVector> inverse(const ParameterStore& store,
                                       const Matrix& yp) const override;

  const std::vector<Index>& block1() const { return idx1_; }
  const std::vector<Index>& block2() const { return idx2_; }

 private:
  Index dim_;
  std::vector<Index> idx1_, idx2_;
  nets::Mlp scale_net_, shift_net_;
};

// Per-dimension affine layer with data-dependent initialization: the init
// batch is mapped to zero mean, unit variance per dimension. Scale is
// exp(log_scale), trainable afterwards.
class ActNorm final : public Bijection {
 public:
  static constexpr double kVarianceFloor = 1e-6;

  ActNorm(ParameterStore& store, const std::string& name, Index dim);

  Index dim() const override { return dim_; }
  std::pair<Var, Var> forward(Tape& t, Var y) const override;
  std::pair<Matrix, RowVector> inverse(const ParameterStore& store,
                                       const Matrix& yp) const override;
  Matrix init_with_batch(ParameterStore& store, const Matrix& batch) override;
  void mark_initialized() override { initialized_ = true; }

  /// Data-dependent initialization from a batch (columns are samples).
  void initialize(ParameterStore& store, const Matrix& batch);
  bool initialized() const { return initialized_; }

 private:
  Index dim_;
  ParamSlice log_scale_, shift_;
  bool initialized_ = false;
};

/// Free-function spelling of the data-dependent init.
inline void actnorm_init(ActNorm& layer, ParameterStore& store,
                         const Matrix& batch) {
  layer.initialize(store, batch);
}

// x = logit(lambda + (1-2*lambda)*z), mapping (0,1)^D to R^D. Inputs on the
// boundary are rejected when lambda == 0 (the transform is not finite there);
// with lambda > 0 the closed interval is accepted, which is what clipped
// noisy data requires.
class LogitPreprocess final : public Bijection {
 public:
  LogitPreprocess(Index dim, double lambda);

  Index dim() const override { return dim_; }
  double lambda() const { return lambda_; }
  std::pair<Var, Var> forward(Tape& t, Var y) const override;
  std::pair<Matrix, RowVector> inverse(const ParameterStore& store,
                                       const Matrix& yp) const override;

 private:
  Index dim_;
  double lambda_;
};

/// MADE connectivity masks: output i may depend only on inputs strictly
/// preceding i in the declared ordering.
struct MadeMasks {
  // hidden[0]: first_hidden x D; hidden[l]: h_l x h_{l-1}
  std::vector<std::shared_ptr<const Matrix>> hidden;
  // output mask for one D-wide head: D x last_hidden (strict inequality)
  std::shared_ptr<const Matrix> output;
  std::vector<Index> input_degrees;
  std::vector<std::vector<Index>> hidden_degrees;
};

/// ordering[p] = variable index at position p; natural ordering if empty.
MadeMasks build_made_masks(Index dim, const std::vector<Index>& hidden_sizes,
                           std::vector<Index> ordering = {});

// One masked autoregressive layer: a MADE conditioner producing a shift and
// log-scale per dimension, applied as u = s(y) .* y + m(y). The forward pass
// is a single net evaluation; the inverse recovers dimensions sequentially
// in ordering order.
class MaskedAutoregressiveLayer final : public Bijection {
 public:
  static constexpr double kScaleFloor = 1e-6;

  MaskedAutoregressiveLayer(ParameterStore& store, const std::string& name,
                            Index dim, Index hidden, Index residual_blocks,
                            Activation act, Rng& rng,
                            std::vector<Index> ordering = {});

  Index dim() const override { return dim_; }
  std::pair<Var, Var> forward(Tape& t, Var y) const override;
  std::pair<Matrix, RowVector> inverse(const ParameterStore& store,
                                       const Matrix& yp) const override;

  /// (shift, raw log-scale), each D x B.
  std::pair<Var, Var> conditioner(Tape& t, Var y) const;
  const std::vector<Index>& ordering() const { return ordering_; }

 private:
  Index dim_, hidden_;
  std::vector<Index> ordering_;
  MadeMasks masks_;
  std::shared_ptr<const Matrix> out_mask2_;  // stacked for both heads
  ParamSlice w_in_, b_in_;
  struct ResBlock {
    ParamSlice w1, b1, w2, b2;
  };
  std::vector<ResBlock> blocks_;
  ParamSlice w_out_, b_out_;
  Activation act_;
};

// Sequential composition; logdets add, inverses apply in reverse order.
class Compose final : public Bijection {
 public:
  explicit Compose(std::vector<std::shared_ptr<Bijection>> parts);

  Index dim() const override { return dim_; }
  std::pair<Var, Var> forward(Tape& t, Var y) const override;
  std::pair<Matrix, RowVector> inverse(const ParameterStore& store,
                                       const Matrix& yp) const override;
  Matrix init_with_batch(ParameterStore& store, const Matrix& batch) override;
  void mark_initialized() override;

  const std::vector<std::shared_ptr<Bijection>>& parts() const { return parts_; }

 private:
  std::vector<std::shared_ptr<Bijection>> parts_;
  Index dim_ = 0;
};

std::shared_ptr<Bijection> compose(std::vector<std::shared_ptr<Bijection>> parts);

// Orientation flip. The wrapped inverse becomes the forward direction; since
// that direction may be sequential, it is value-only and refuses to
// participate in gradient recording.
class InverseOrientation final : public Bijection {
 public:
  explicit InverseOrientation(std::shared_ptr<Bijection> inner)
      : inner_(std::move(inner)) {}

  Index dim() const override { return inner_->dim(); }
  std::pair<Var, Var> forward(Tape& t, Var y) const override;
  std::pair<Matrix, RowVector> inverse(const ParameterStore& store,
                                       const Matrix& yp) const override;
  void mark_initialized() override { inner_->mark_initialized(); }

 private:
  std::shared_ptr<Bijection> inner_;
};

/// K masked autoregressive layers with ActNorm between consecutive layers and
/// alternating orderings.
std::shared_ptr<Bijection> make_autoregressive_flow(
    ParameterStore& store, const std::string& name, Index dim, Index layers,
    Index hidden, Index residual_blocks, Activation act, Rng& rng);

/// Generic change-of-variables NLL: -log p_base(fwd(y)) - logdet(fwd at y).
/// `base_log_prob` maps a D x B matrix of transformed points to a 1 x B row.
RowVector flow_nll(const Bijection& b, const ParameterStore& store,
                   const Matrix& y,
                   const std::function<RowVector(const Matrix&)>& base_log_prob);

}  // namespace aef::flows
