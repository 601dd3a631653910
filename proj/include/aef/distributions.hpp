#pragma once

#include "aef/bijections.hpp"
#include "aef/params.hpp"
#include "aef/rng.hpp"
#include "aef/tape.hpp"
#include "aef/types.hpp"

#include <memory>

namespace aef::dist {

using ad::Tape;
using ad::Var;

/// log N(u; 0, I) per column: 1 x B.
Var std_normal_log_prob(Tape& t, Var u);
RowVector std_normal_log_prob(const Matrix& u);

// Base distribution over latents: a standard normal, optionally transported
// through a flow whose forward direction maps latents to the normal base.
// Sampling inverts the flow; temperature scales the base draw.
struct LatentPrior {
  Index dim = 0;
  std::shared_ptr<flows::Bijection> flow;  // may be null

  Var log_prob(Tape& t, Var z) const;
  RowVector log_prob(const ParameterStore& store, const Matrix& z) const;
  Matrix sample(const ParameterStore& store, Rng& rng, Index count,
                double temperature) const;
};

// Trainable residual scale sigma = softplus(raw) + floor, a single global
// scalar shared across dimensions.
struct ErrorScale {
  ParamSlice raw;
  static constexpr double kFloor = 1e-4;

  static ErrorScale build(ParameterStore& store, const std::string& name,
                          double init = 1.0);
  Var value(Tape& t) const;  // 1 x 1
  double value(const ParameterStore& store) const;
  void set(ParameterStore& store, double sigma) const;
};

/// Gaussian residual negative log-density with scalar scale:
/// ||delta||^2/(2 sigma^2) + dim/2 * log(2 pi sigma^2), per column.
Var gaussian_residual_nll(Tape& t, Var delta, Var sigma);
RowVector gaussian_residual_nll(const Matrix& delta, double sigma);

}  // namespace aef::dist
