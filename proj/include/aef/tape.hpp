#pragma once

#include "aef/params.hpp"
#include "aef/types.hpp"

#include <functional>
#include <memory>
#include <utility>
#include <vector>

namespace aef::ad {

class Tape;

/// Handle to a node on a tape. Values are dense matrices; a batch of column
/// vectors is a D x B matrix, a per-sample scalar row is 1 x B, a scalar is
/// 1 x 1.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

/// Planar image geometry for the convolution ops: tensors are flattened
/// channel-major, index = c*(h*w) + y*w + x.
struct ConvShape {
  Index in_c = 1, in_h = 1, in_w = 1;
  Index out_c = 1;
  Index kh = 3, kw = 3;
  Index stride = 1, pad = 0;
  Index out_h() const { return (in_h + 2 * pad - kh) / stride + 1; }
  Index out_w() const { return (in_w + 2 * pad - kw) / stride + 1; }
  Index in_size() const { return in_c * in_h * in_w; }
  Index out_size() const { return out_c * out_h() * out_w(); }
  // Transposed orientation: input is (in_c, in_h, in_w), output spatial size
  // grows by the conv relation run backwards.
  Index tr_out_h() const { return (in_h - 1) * stride - 2 * pad + kh; }
  Index tr_out_w() const { return (in_w - 1) * stride - 2 * pad + kw; }
  Index tr_out_size() const { return out_c * tr_out_h() * tr_out_w(); }
};

// Recording tape for reverse-mode differentiation over Eigen matrices.
// Every op computes its value eagerly; when recording, it also pushes a
// closure that propagates adjoints to its parents. Parameter leaves scatter
// their adjoints into the bound ParameterStore's flat gradient.
class Tape {
 public:
  explicit Tape(const ParameterStore* params = nullptr, bool record = true)
      : params_(params), record_(record) {
    nodes_.reserve(256);
  }

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }
  const ParameterStore* params() const { return params_; }

  Var constant(Matrix v);
  Var param(const ParamSlice& s);

  const Matrix& value(Var v) const { return nodes_[check(v)].value; }
  /// Value of a 1 x 1 node.
  double scalar(Var v) const;

  /// Runs the reverse sweep from a 1 x 1 loss node. Parameter gradients are
  /// accumulated (+=) into the store; call store.zero_grad() between steps.
  void backward(Var loss, ParameterStore& store);

  // --- internals used by the op free functions ---
  // Backward closures receive the id of their own node; they read its adjoint
  // and accumulate into the parents'.
  using BackFn = std::function<void(Tape&, int self)>;
  struct Node {
    Matrix value;
    Matrix adj;  // lazily sized
    bool touched = false;
    BackFn back;  // empty for leaves / non-recording
  };

  Var push(Matrix value, BackFn back = nullptr);
  Matrix& adj(int id);          // zero-initialized on first access
  const Matrix& val(int id) const { return nodes_[id].value; }
  bool touched(int id) const { return nodes_[id].touched; }

 private:
  int check(Var v) const {
    if (v.tape != this) throw DomainError("ad::Var used with a foreign tape");
    return v.id;
  }

  std::vector<Node> nodes_;
  std::vector<std::pair<int, ParamSlice>> param_nodes_;
  const ParameterStore* params_;
  bool record_;
};

// ---- arithmetic ----
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);  // elementwise
Var operator/(Var a, Var b);  // elementwise
Var operator-(Var a);
Var operator+(Var a, double c);
Var operator+(double c, Var a);
Var operator-(Var a, double c);
Var operator-(double c, Var a);
Var operator*(Var a, double c);
Var operator*(double c, Var a);
Var operator/(Var a, double c);
Var operator/(double c, Var a);  // elementwise c / a

/// General matrix product; a: m x k, b: k x n.
Var matmul(Var a, Var b);
/// (W .* mask) * x, with the mask fixed. Used by masked autoregressive nets.
Var masked_matmul(Var w, std::shared_ptr<const Matrix> mask, Var x);
/// Adds a column vector to every column of x.
Var add_colvec(Var x, Var b);
/// Multiplies every column of x elementwise by a column vector.
Var mul_colvec(Var x, Var c);
/// Scales column j of x by s(0, j); s is 1 x B.
Var colwise_scale(Var x, Var s);
/// Replicates a 1 x 1 node into a 1 x n row.
Var tile_cols(Var s, Index n);

// ---- elementwise functions ----
Var exp(Var a);
Var log(Var a);
Var tanh(Var a);
Var relu(Var a);
Var sigmoid(Var a);
Var softplus(Var a);
Var square(Var a);
/// max(exp(a), floor): positive scale with a hard lower clamp; the gradient
/// vanishes on the clamped set.
Var clamped_exp(Var a, double floor);

// ---- reductions / shaping ----
Var colwise_sum(Var x);          // D x B -> 1 x B
Var sum_all(Var x);              // -> 1 x 1
Var mean_all(Var x);             // -> 1 x 1
Var gather_rows(Var x, std::vector<Index> idx);
/// Rows `idx` of the result (dim x B) are the rows of x; all others zero.
Var scatter_rows(Var x, std::vector<Index> idx, Index dim);
Var vcat(Var a, Var b);

// ---- convolution ----
Var conv2d(Var x, Var w, Var b, const ConvShape& cs);
Var conv_transpose2d(Var x, Var w, Var b, const ConvShape& cs);

// im2col helpers shared by the conv ops and their adjoints.
Matrix im2col(const Eigen::Ref<const Vector>& img, const ConvShape& cs);
void col2im_add(const Matrix& cols, const ConvShape& cs, Eigen::Ref<Vector> img);

}  // namespace aef::ad
