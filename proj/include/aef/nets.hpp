#pragma once

#include "aef/params.hpp"
#include "aef/rng.hpp"
#include "aef/tape.hpp"
#include "aef/types.hpp"

#include <memory>
#include <string>
#include <vector>

namespace aef::nets {

using ad::ConvShape;
using ad::Tape;
using ad::Var;

enum class Activation { Tanh, Relu };

Var activate(Var x, Activation a);

struct Dense {
  ParamSlice W, b;
  Index in = 0, out = 0;

  static Dense build(ParameterStore& store, const std::string& name, Index in,
                     Index out, Rng& rng, double weight_scale = -1.0);
  /// weight_scale < 0 selects Glorot; 0 gives an exactly-zero layer.
  Var operator()(Tape& t, Var x) const;
};

/// Differentiable feedforward map with fixed input/output widths.
class FeedForward {
 public:
  virtual ~FeedForward() = default;
  virtual Index in_dim() const = 0;
  virtual Index out_dim() const = 0;
  virtual Var operator()(Tape& t, Var x) const = 0;
  /// Value-only convenience (non-recording tape).
  Matrix values(const ParameterStore& store, const Matrix& x) const;
};

class Mlp final : public FeedForward {
 public:
  static Mlp build(ParameterStore& store, const std::string& name, Index in,
                   const std::vector<Index>& hidden, Index out, Activation act,
                   Rng& rng, double final_scale = -1.0);

  Index in_dim() const override { return in_; }
  Index out_dim() const override { return out_; }
  Var operator()(Tape& t, Var x) const override;

  const std::vector<Dense>& layers() const { return layers_; }

 private:
  std::vector<Dense> layers_;
  Activation act_ = Activation::Tanh;
  Index in_ = 0, out_ = 0;
};

/// Hidden trunk only (no output projection); out_dim is the last hidden width,
/// or the input width when there are no hidden layers.
class MlpTrunk final : public FeedForward {
 public:
  static MlpTrunk build(ParameterStore& store, const std::string& name,
                        Index in, const std::vector<Index>& hidden,
                        Activation act, Rng& rng);

  Index in_dim() const override { return in_; }
  Index out_dim() const override { return out_; }
  Var operator()(Tape& t, Var x) const override;

 private:
  std::vector<Dense> layers_;
  Activation act_ = Activation::Tanh;
  Index in_ = 0, out_ = 0;
};

struct ConvLayer {
  ParamSlice W, b;
  ConvShape shape;
  bool transposed = false;
};

/// Stride-2 conv stack for images, flattening to features (channel-major in).
class ConvTrunk final : public FeedForward {
 public:
  /// channels: e.g. {64, 128}; each layer is k3 s2 p1 + ReLU.
  static ConvTrunk build(ParameterStore& store, const std::string& name,
                         Index in_c, Index in_h, Index in_w,
                         const std::vector<Index>& channels, Rng& rng);

  Index in_dim() const override { return in_; }
  Index out_dim() const override { return out_; }
  Var operator()(Tape& t, Var x) const override;

 private:
  std::vector<ConvLayer> layers_;
  Index in_ = 0, out_ = 0;
};

/// Dense up-projection followed by transposed convs back to image size.
class ConvDecoder final : public FeedForward {
 public:
  static ConvDecoder build(ParameterStore& store, const std::string& name,
                           Index latent, Index out_c, Index out_h, Index out_w,
                           const std::vector<Index>& channels, Rng& rng);

  Index in_dim() const override { return in_; }
  Index out_dim() const override { return out_; }
  Var operator()(Tape& t, Var x) const override;

 private:
  Dense up_;
  Index feat_c_ = 0, feat_h_ = 0, feat_w_ = 0;
  std::vector<ConvLayer> layers_;
  Index in_ = 0, out_ = 0;
};

/// Shared trunk with zero-initialized mean and log-scale heads; the scale
/// head output is mapped through the clamped exponential, so a fresh encoder
/// returns (0, 1).
class TwoHeadEncoder {
 public:
  static TwoHeadEncoder build(ParameterStore& store, const std::string& name,
                              std::shared_ptr<FeedForward> trunk, Index out,
                              Rng& rng);

  struct Heads {
    Var mean;
    Var scale;  // strictly positive
  };
  Heads operator()(Tape& t, Var x) const;
  /// Value-only (mean, scale).
  std::pair<Matrix, Matrix> values(const ParameterStore& store,
                                   const Matrix& x) const;

  Index in_dim() const { return trunk_->in_dim(); }
  Index out_dim() const { return out_; }

  static constexpr double kScaleFloor = 1e-6;

 private:
  std::shared_ptr<FeedForward> trunk_;
  Dense head_m_, head_s_;
  Index out_ = 0;
};

}  // namespace aef::nets
