#pragma once

#include "aef/bijections.hpp"
#include "aef/distributions.hpp"
#include "aef/nets.hpp"
#include "aef/params.hpp"
#include "aef/rng.hpp"
#include "aef/types.hpp"

#include <memory>
#include <optional>
#include <utility>
#include <vector>

namespace aef::models {

using ad::Tape;
using ad::Var;

// ---------------------------------------------------------------------------
// Core/shell partitions

struct PartitionScheme {
  enum class Kind { Center, Corner, Random };
  Kind kind = Kind::Center;
  Index core_dim = 0;
  Index ambient = 0;
  std::uint64_t seed = 0;
  std::vector<Index> core_idx, shell_idx;
};

/// image_hw: set for 2-D data so center/corner pick pixel blocks; 1-D data
/// uses contiguous runs (middle / front).
PartitionScheme make_partition(PartitionScheme::Kind kind, Index core_dim,
                               Index ambient,
                               std::optional<std::pair<Index, Index>> image_hw,
                               std::uint64_t seed = 0);

std::pair<Matrix, Matrix> partition_split(const Matrix& x,
                                          const PartitionScheme& scheme);
Matrix partition_merge(const Matrix& core, const Matrix& shell,
                       const PartitionScheme& scheme);

// ---------------------------------------------------------------------------
// Learned linear feature expansion w = h(x) = Wx + b

struct FeatureExpansion {
  ParamSlice W, b;
  Index in = 0, out = 0;

  static FeatureExpansion build(ParameterStore& store, const std::string& name,
                                Index in, Index out, Rng& rng);
  Var operator()(Tape& t, Var x) const;
  Matrix values(const ParameterStore& store, const Matrix& x) const;
};

// ---------------------------------------------------------------------------

enum class AefVariant { Partitioned, Expanded };

// Deterministic generative autoencoder embedded in an invertible map. The
// encoder/decoder pair, the core flow and the base distribution together
// define a bijection between data (or expanded data) and (z, delta), trained
// by exact change-of-variables likelihood.
struct AefModel {
  std::shared_ptr<ParameterStore> params;
  nets::TwoHeadEncoder encoder;                 // shell input (partitioned) or full input (expanded)
  std::shared_ptr<nets::FeedForward> decoder;   // -> N-D or N
  std::shared_ptr<flows::Bijection> core;       // forward = core-encoding direction; null = identity
  dist::LatentPrior prior;
  dist::ErrorScale sigma;
  AefVariant variant = AefVariant::Expanded;
  std::optional<PartitionScheme> partition;     // partitioned only
  std::optional<FeatureExpansion> expansion;    // expanded only
  Index ambient = 0;
  Index latent = 0;

  ParameterStore& store() { return *params; }
  const ParameterStore& store() const { return *params; }
};

struct Encoded {
  Var z;
  Var delta;
  Var logdet;
};

struct EncodedValues {
  Matrix z;
  Matrix delta;
  RowVector logdet;
};

// --- partitioned variant ---
Encoded encode_partitioned(const AefModel& m, Tape& t, Var x);
EncodedValues encode_partitioned(const AefModel& m, const Matrix& x);
Matrix decode_partitioned(const AefModel& m, const Matrix& z, const Matrix& delta);
Var nll_partitioned(const AefModel& m, Tape& t, Var x);
RowVector nll_partitioned(const AefModel& m, const Matrix& x);
Matrix sample_partitioned(const AefModel& m, Rng& rng, double temperature,
                          Index count);

// --- expanded variant ---
Encoded encode_expanded(const AefModel& m, Tape& t, Var x);
EncodedValues encode_expanded(const AefModel& m, const Matrix& x);
Var nll_expanded(const AefModel& m, Tape& t, Var x);
RowVector nll_expanded(const AefModel& m, const Matrix& x);
/// Joint log-density at arbitrary (x, w), not restricted to w = h(x).
RowVector density_joint(const AefModel& m, const Matrix& x, const Matrix& w);
Matrix sample_expanded(const AefModel& m, Rng& rng, double temperature,
                       Index count);

/// x_hat = f(z(x)); the partitioned variant decodes core and shell with
/// delta = 0.
Matrix reconstruct(const AefModel& m, const Matrix& x);

/// Per-sample NLL for whichever variant the model carries (tape and value).
Var aef_nll(const AefModel& m, Tape& t, Var x);
RowVector aef_nll(const AefModel& m, const Matrix& x);

// ---------------------------------------------------------------------------
// The whole AEF map as a flow_core bijection: x -> (z, delta) for the
// partitioned variant on R^N, (x, w) -> (z, delta) for the expanded variant
// on R^{N+D}. Gives the generic change-of-variables path over the model.
class AefBijection final : public flows::Bijection {
 public:
  explicit AefBijection(const AefModel& m) : m_(&m) {}

  Index dim() const override;
  std::pair<Var, Var> forward(Tape& t, Var y) const override;
  std::pair<Matrix, RowVector> inverse(const ParameterStore& store,
                                       const Matrix& yp) const override;

 private:
  const AefModel* m_;
};

/// NLL computed through the generic composite change-of-variables formula
/// (AefBijection + factorized base p_0(z) r(delta)); must agree with the
/// direct nll_* paths. For the expanded variant, x is lifted with w = h(x).
RowVector nll_via_flow_core(const AefModel& m, const Matrix& x);

}  // namespace aef::models
