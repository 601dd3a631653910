#include "aef/tape.hpp"

#include <cmath>

namespace aef::ad {

Var Tape::push(Matrix value, BackFn back) {
  Node n;
  n.value = std::move(value);
  if (record_) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Matrix v) { return push(std::move(v)); }

Var Tape::param(const ParamSlice& s) {
  if (params_ == nullptr)
    throw DomainError("Tape::param: tape has no bound ParameterStore");
  Matrix v = params_->view(s);
  Var out = push(std::move(v));
  if (record_) param_nodes_.emplace_back(out.id, s);
  return out;
}

double Tape::scalar(Var v) const {
  const Matrix& m = value(v);
  if (m.size() != 1) throw DomainError("Tape::scalar: node is not 1x1");
  return m(0, 0);
}

Matrix& Tape::adj(int id) {
  Node& n = nodes_[id];
  if (!n.touched) {
    n.adj = Matrix::Zero(n.value.rows(), n.value.cols());
    n.touched = true;
  }
  return n.adj;
}

void Tape::backward(Var loss, ParameterStore& store) {
  if (!record_) throw DomainError("Tape::backward on a non-recording tape");
  if (loss.tape != this) throw DomainError("Tape::backward: foreign Var");
  const int root = loss.id;
  if (nodes_[root].value.size() != 1)
    throw DomainError("Tape::backward: loss node must be 1x1");
  adj(root)(0, 0) += 1.0;
  for (int i = root; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.touched && n.back) n.back(*this, i);
  }
  for (const auto& [id, slice] : param_nodes_) {
    if (!nodes_[id].touched) continue;
    store.grad_view(slice) += nodes_[id].adj;
  }
}

namespace {

Tape& tape_of(Var a) {
  if (!a.valid()) throw DomainError("ad op on invalid Var");
  return *a.tape;
}

void check_same(Var a, Var b) {
  if (a.tape != b.tape) throw DomainError("ad op across different tapes");
}

void check_same_shape(Tape& t, Var a, Var b, const char* op) {
  if (t.val(a.id).rows() != t.val(b.id).rows() ||
      t.val(a.id).cols() != t.val(b.id).cols())
    throw DomainError(std::string("ad::") + op + ": shape mismatch");
}

// Elementwise op with derivative computed from own value and/or parent value.
template <typename FwdFn, typename BwdFn>
Var unary(Var a, FwdFn&& fwd, BwdFn&& bwd) {
  Tape& t = tape_of(a);
  Matrix v = fwd(t.val(a.id));
  return t.push(std::move(v), [pa = a.id, bwd](Tape& t, int self) {
    t.adj(pa).array() += t.adj(self).array() * bwd(t.val(pa), t.val(self)).array();
  });
}

}  // namespace

Var operator+(Var a, Var b) {
  check_same(a, b);
  Tape& t = tape_of(a);
  check_same_shape(t, a, b, "add");
  return t.push(t.val(a.id) + t.val(b.id), [pa = a.id, pb = b.id](Tape& t, int self) {
    t.adj(pa) += t.adj(self);
    t.adj(pb) += t.adj(self);
  });
}

Var operator-(Var a, Var b) {
  check_same(a, b);
  Tape& t = tape_of(a);
  check_same_shape(t, a, b, "sub");
  return t.push(t.val(a.id) - t.val(b.id), [pa = a.id, pb = b.id](Tape& t, int self) {
    t.adj(pa) += t.adj(self);
    t.adj(pb) -= t.adj(self);
  });
}

Var operator*(Var a, Var b) {
  check_same(a, b);
  Tape& t = tape_of(a);
  check_same_shape(t, a, b, "mul");
  return t.push(t.val(a.id).cwiseProduct(t.val(b.id)),
                [pa = a.id, pb = b.id](Tape& t, int self) {
                  t.adj(pa).array() += t.adj(self).array() * t.val(pb).array();
                  t.adj(pb).array() += t.adj(self).array() * t.val(pa).array();
                });
}

Var operator/(Var a, Var b) {
  check_same(a, b);
  Tape& t = tape_of(a);
  check_same_shape(t, a, b, "div");
  return t.push(t.val(a.id).cwiseQuotient(t.val(b.id)),
                [pa = a.id, pb = b.id](Tape& t, int self) {
                  const auto& g = t.adj(self).array();
                  const auto& bv = t.val(pb).array();
                  t.adj(pa).array() += g / bv;
                  t.adj(pb).array() -= g * t.val(self).array() / bv;
                });
}

Var operator-(Var a) {
  Tape& t = tape_of(a);
  return t.push(-t.val(a.id), [pa = a.id](Tape& t, int self) {
    t.adj(pa) -= t.adj(self);
  });
}

Var operator+(Var a, double c) {
  Tape& t = tape_of(a);
  return t.push(t.val(a.id).array() + c, [pa = a.id](Tape& t, int self) {
    t.adj(pa) += t.adj(self);
  });
}
Var operator+(double c, Var a) { return a + c; }
Var operator-(Var a, double c) { return a + (-c); }
Var operator-(double c, Var a) { return -a + c; }

Var operator*(Var a, double c) {
  Tape& t = tape_of(a);
  return t.push(t.val(a.id) * c, [pa = a.id, c](Tape& t, int self) {
    t.adj(pa) += t.adj(self) * c;
  });
}
Var operator*(double c, Var a) { return a * c; }
Var operator/(Var a, double c) { return a * (1.0 / c); }

Var operator/(double c, Var a) {
  Tape& t = tape_of(a);
  Matrix v = c * t.val(a.id).cwiseInverse();
  return t.push(std::move(v), [pa = a.id](Tape& t, int self) {
    t.adj(pa).array() -=
        t.adj(self).array() * t.val(self).array() / t.val(pa).array();
  });
}

Var matmul(Var a, Var b) {
  check_same(a, b);
  Tape& t = tape_of(a);
  if (t.val(a.id).cols() != t.val(b.id).rows())
    throw DomainError("ad::matmul: inner dimension mismatch");
  return t.push(t.val(a.id) * t.val(b.id), [pa = a.id, pb = b.id](Tape& t, int self) {
    const Matrix& g = t.adj(self);
    t.adj(pa).noalias() += g * t.val(pb).transpose();
    t.adj(pb).noalias() += t.val(pa).transpose() * g;
  });
}

Var masked_matmul(Var w, std::shared_ptr<const Matrix> mask, Var x) {
  check_same(w, x);
  Tape& t = tape_of(w);
  const Matrix& wv = t.val(w.id);
  if (mask->rows() != wv.rows() || mask->cols() != wv.cols())
    throw DomainError("ad::masked_matmul: mask shape mismatch");
  Matrix wm = wv.cwiseProduct(*mask);
  return t.push(wm * t.val(x.id), [pw = w.id, px = x.id, mask](Tape& t, int self) {
    const Matrix& g = t.adj(self);
    t.adj(pw).noalias() += (g * t.val(px).transpose()).cwiseProduct(*mask);
    t.adj(px).noalias() += t.val(pw).cwiseProduct(*mask).transpose() * g;
  });
}

Var add_colvec(Var x, Var b) {
  check_same(x, b);
  Tape& t = tape_of(x);
  if (t.val(b.id).cols() != 1 || t.val(b.id).rows() != t.val(x.id).rows())
    throw DomainError("ad::add_colvec: b must be a matching column vector");
  Matrix v = t.val(x.id);
  v.colwise() += Vector(t.val(b.id));
  return t.push(std::move(v), [px = x.id, pb = b.id](Tape& t, int self) {
    t.adj(px) += t.adj(self);
    t.adj(pb) += t.adj(self).rowwise().sum();
  });
}

Var mul_colvec(Var x, Var c) {
  check_same(x, c);
  Tape& t = tape_of(x);
  if (t.val(c.id).cols() != 1 || t.val(c.id).rows() != t.val(x.id).rows())
    throw DomainError("ad::mul_colvec: c must be a matching column vector");
  Matrix v = t.val(x.id).array().colwise() * t.val(c.id).col(0).array();
  return t.push(std::move(v), [px = x.id, pc = c.id](Tape& t, int self) {
    const Matrix& g = t.adj(self);
    t.adj(px).array() += g.array().colwise() * t.val(pc).col(0).array();
    t.adj(pc).col(0).array() +=
        (g.array() * t.val(px).array()).rowwise().sum();
  });
}

Var colwise_scale(Var x, Var s) {
  check_same(x, s);
  Tape& t = tape_of(x);
  if (t.val(s.id).rows() != 1 || t.val(s.id).cols() != t.val(x.id).cols())
    throw DomainError("ad::colwise_scale: s must be 1 x cols(x)");
  Matrix v = t.val(x.id).array().rowwise() * t.val(s.id).row(0).array();
  return t.push(std::move(v), [px = x.id, ps = s.id](Tape& t, int self) {
    const Matrix& g = t.adj(self);
    t.adj(px).array() += g.array().rowwise() * t.val(ps).row(0).array();
    t.adj(ps).row(0).array() +=
        (g.array() * t.val(px).array()).colwise().sum();
  });
}

Var tile_cols(Var s, Index n) {
  Tape& t = tape_of(s);
  if (t.val(s.id).size() != 1) throw DomainError("ad::tile_cols: node not 1x1");
  Matrix v = Matrix::Constant(1, n, t.val(s.id)(0, 0));
  return t.push(std::move(v), [ps = s.id](Tape& t, int self) {
    t.adj(ps)(0, 0) += t.adj(self).sum();
  });
}

Var exp(Var a) {
  return unary(
      a, [](const Matrix& x) -> Matrix { return x.array().exp(); },
      [](const Matrix&, const Matrix& y) -> Matrix { return y; });
}

Var log(Var a) {
  return unary(
      a, [](const Matrix& x) -> Matrix { return x.array().log(); },
      [](const Matrix& x, const Matrix&) -> Matrix { return x.cwiseInverse(); });
}

Var tanh(Var a) {
  return unary(
      a, [](const Matrix& x) -> Matrix { return x.array().tanh(); },
      [](const Matrix&, const Matrix& y) -> Matrix {
        return 1.0 - y.array().square();
      });
}

Var relu(Var a) {
  return unary(
      a, [](const Matrix& x) -> Matrix { return x.cwiseMax(0.0); },
      [](const Matrix& x, const Matrix&) -> Matrix {
        return (x.array() > 0.0).cast<double>();
      });
}

Var sigmoid(Var a) {
  return unary(
      a,
      [](const Matrix& x) -> Matrix {
        return 1.0 / (1.0 + (-x.array()).exp());
      },
      [](const Matrix&, const Matrix& y) -> Matrix {
        return y.array() * (1.0 - y.array());
      });
}

Var softplus(Var a) {
  return unary(
      a,
      [](const Matrix& x) -> Matrix {
        // log(1 + e^x), overflow-safe: x + log1p(e^-x) for x > 0.
        return x.unaryExpr([](double v) {
          return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
        });
      },
      [](const Matrix& x, const Matrix&) -> Matrix {
        return 1.0 / (1.0 + (-x.array()).exp());
      });
}

Var square(Var a) {
  return unary(
      a, [](const Matrix& x) -> Matrix { return x.array().square(); },
      [](const Matrix& x, const Matrix&) -> Matrix { return 2.0 * x; });
}

Var clamped_exp(Var a, double floor) {
  Tape& t = tape_of(a);
  Matrix v = t.val(a.id).array().exp().max(floor);
  const double lf = std::log(floor);
  return t.push(std::move(v), [pa = a.id, lf](Tape& t, int self) {
    const auto& x = t.val(pa).array();
    t.adj(pa).array() +=
        t.adj(self).array() * t.val(self).array() * (x > lf).cast<double>();
  });
}

Var colwise_sum(Var x) {
  Tape& t = tape_of(x);
  Matrix v = t.val(x.id).colwise().sum();
  return t.push(std::move(v), [px = x.id](Tape& t, int self) {
    t.adj(px).array().rowwise() += t.adj(self).row(0).array();
  });
}

Var sum_all(Var x) {
  Tape& t = tape_of(x);
  Matrix v(1, 1);
  v(0, 0) = t.val(x.id).sum();
  return t.push(std::move(v), [px = x.id](Tape& t, int self) {
    t.adj(px).array() += t.adj(self)(0, 0);
  });
}

Var mean_all(Var x) {
  Tape& t = tape_of(x);
  const double n = static_cast<double>(t.val(x.id).size());
  Matrix v(1, 1);
  v(0, 0) = t.val(x.id).sum() / n;
  return t.push(std::move(v), [px = x.id, n](Tape& t, int self) {
    t.adj(px).array() += t.adj(self)(0, 0) / n;
  });
}

Var gather_rows(Var x, std::vector<Index> idx) {
  Tape& t = tape_of(x);
  const Matrix& xv = t.val(x.id);
  Matrix v(static_cast<Index>(idx.size()), xv.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) v.row(i) = xv.row(idx[i]);
  return t.push(std::move(v), [px = x.id, idx = std::move(idx)](Tape& t, int self) {
    const Matrix& g = t.adj(self);
    Matrix& pg = t.adj(px);
    for (std::size_t i = 0; i < idx.size(); ++i) pg.row(idx[i]) += g.row(i);
  });
}

Var scatter_rows(Var x, std::vector<Index> idx, Index dim) {
  Tape& t = tape_of(x);
  const Matrix& xv = t.val(x.id);
  if (static_cast<Index>(idx.size()) != xv.rows())
    throw DomainError("ad::scatter_rows: index count != rows(x)");
  Matrix v = Matrix::Zero(dim, xv.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) v.row(idx[i]) = xv.row(i);
  return t.push(std::move(v), [px = x.id, idx = std::move(idx)](Tape& t, int self) {
    const Matrix& g = t.adj(self);
    Matrix& pg = t.adj(px);
    for (std::size_t i = 0; i < idx.size(); ++i) pg.row(i) += g.row(idx[i]);
  });
}

Var vcat(Var a, Var b) {
  check_same(a, b);
  Tape& t = tape_of(a);
  const Matrix& av = t.val(a.id);
  const Matrix& bv = t.val(b.id);
  if (av.cols() != bv.cols()) throw DomainError("ad::vcat: column mismatch");
  Matrix v(av.rows() + bv.rows(), av.cols());
  v.topRows(av.rows()) = av;
  v.bottomRows(bv.rows()) = bv;
  const Index ar = av.rows();
  return t.push(std::move(v), [pa = a.id, pb = b.id, ar](Tape& t, int self) {
    const Matrix& g = t.adj(self);
    t.adj(pa) += g.topRows(ar);
    t.adj(pb) += g.bottomRows(g.rows() - ar);
  });
}

// ---- convolution ----

Matrix im2col(const Eigen::Ref<const Vector>& img, const ConvShape& cs) {
  const Index oh = cs.out_h(), ow = cs.out_w();
  Matrix cols = Matrix::Zero(cs.in_c * cs.kh * cs.kw, oh * ow);
  for (Index c = 0; c < cs.in_c; ++c) {
    const Index plane = c * cs.in_h * cs.in_w;
    for (Index ky = 0; ky < cs.kh; ++ky) {
      for (Index kx = 0; kx < cs.kw; ++kx) {
        const Index row = (c * cs.kh + ky) * cs.kw + kx;
        for (Index oy = 0; oy < oh; ++oy) {
          const Index iy = oy * cs.stride + ky - cs.pad;
          if (iy < 0 || iy >= cs.in_h) continue;
          for (Index ox = 0; ox < ow; ++ox) {
            const Index ix = ox * cs.stride + kx - cs.pad;
            if (ix < 0 || ix >= cs.in_w) continue;
            cols(row, oy * ow + ox) = img[plane + iy * cs.in_w + ix];
          }
        }
      }
    }
  }
  return cols;
}

void col2im_add(const Matrix& cols, const ConvShape& cs, Eigen::Ref<Vector> img) {
  const Index oh = cs.out_h(), ow = cs.out_w();
  for (Index c = 0; c < cs.in_c; ++c) {
    const Index plane = c * cs.in_h * cs.in_w;
    for (Index ky = 0; ky < cs.kh; ++ky) {
      for (Index kx = 0; kx < cs.kw; ++kx) {
        const Index row = (c * cs.kh + ky) * cs.kw + kx;
        for (Index oy = 0; oy < oh; ++oy) {
          const Index iy = oy * cs.stride + ky - cs.pad;
          if (iy < 0 || iy >= cs.in_h) continue;
          for (Index ox = 0; ox < ow; ++ox) {
            const Index ix = ox * cs.stride + kx - cs.pad;
            if (ix < 0 || ix >= cs.in_w) continue;
            img[plane + iy * cs.in_w + ix] += cols(row, oy * ow + ox);
          }
        }
      }
    }
  }
}

namespace {

// Forward conv on one sample: w (out_c x in_c*kh*kw), result flattened planar.
Vector conv_sample(const Eigen::Ref<const Vector>& img, const Matrix& w,
                   const Vector& b, const ConvShape& cs) {
  Matrix cols = im2col(img, cs);
  Matrix y = w * cols;  // out_c x (oh*ow)
  y.colwise() += b;
  y.transposeInPlace();  // (oh*ow) x out_c; column-major flatten -> planar
  return Eigen::Map<Vector>(y.data(), y.size());
}

}  // namespace

Var conv2d(Var x, Var w, Var b, const ConvShape& cs) {
  check_same(x, w);
  check_same(x, b);
  Tape& t = tape_of(x);
  const Matrix& xv = t.val(x.id);
  if (xv.rows() != cs.in_size())
    throw DomainError("ad::conv2d: input rows != in_c*in_h*in_w");
  const Matrix& wv = t.val(w.id);
  if (wv.rows() != cs.out_c || wv.cols() != cs.in_c * cs.kh * cs.kw)
    throw DomainError("ad::conv2d: weight shape mismatch");
  const Index batch = xv.cols();
  Matrix v(cs.out_size(), batch);
  const Vector bias = t.val(b.id).col(0);
  for (Index j = 0; j < batch; ++j)
    v.col(j) = conv_sample(xv.col(j), wv, bias, cs);
  return t.push(std::move(v),
                [px = x.id, pw = w.id, pb = b.id, cs](Tape& t, int self) {
                  const Matrix& g = t.adj(self);
                  const Matrix& xv = t.val(px);
                  const Matrix& wv = t.val(pw);
                  Matrix& gx = t.adj(px);
                  Matrix& gw = t.adj(pw);
                  Matrix& gb = t.adj(pb);
                  const Index oh = cs.out_h(), ow = cs.out_w();
                  for (Index j = 0; j < g.cols(); ++j) {
                    // planar grad column -> out_c x (oh*ow)
                    Eigen::Map<const Matrix> gyT(g.col(j).data(), oh * ow, cs.out_c);
                    Matrix gy = gyT.transpose();
                    Matrix cols = im2col(xv.col(j), cs);
                    gw.noalias() += gy * cols.transpose();
                    gb.col(0) += gy.rowwise().sum();
                    Matrix gcols = wv.transpose() * gy;
                    col2im_add(gcols, cs, gx.col(j));
                  }
                });
}

Var conv_transpose2d(Var x, Var w, Var b, const ConvShape& cs) {
  // cs describes the *transposed* layer: cs.in_* is the (small) input, the
  // output has cs.out_c channels of tr_out_h x tr_out_w. Internally this is
  // the adjoint of a conv with geometry `fwd` mapping output -> input.
  check_same(x, w);
  check_same(x, b);
  Tape& t = tape_of(x);
  const Matrix& xv = t.val(x.id);
  if (xv.rows() != cs.in_size())
    throw DomainError("ad::conv_transpose2d: input rows != in_c*in_h*in_w");
  ConvShape fwd;
  fwd.in_c = cs.out_c;
  fwd.in_h = cs.tr_out_h();
  fwd.in_w = cs.tr_out_w();
  fwd.out_c = cs.in_c;
  fwd.kh = cs.kh;
  fwd.kw = cs.kw;
  fwd.stride = cs.stride;
  fwd.pad = cs.pad;
  const Matrix& wv = t.val(w.id);  // (in_c) x (out_c*kh*kw), conv weights of fwd
  if (wv.rows() != cs.in_c || wv.cols() != cs.out_c * cs.kh * cs.kw)
    throw DomainError("ad::conv_transpose2d: weight shape mismatch");
  const Index batch = xv.cols();
  Matrix v = Matrix::Zero(cs.tr_out_size(), batch);
  const Vector bias = t.val(b.id).col(0);
  for (Index j = 0; j < batch; ++j) {
    Eigen::Map<const Matrix> xm(xv.col(j).data(), cs.in_h * cs.in_w, cs.in_c);
    Matrix gy = xm.transpose();             // in_c x (ih*iw)
    Matrix gcols = wv.transpose() * gy;     // (out_c*kh*kw) x (ih*iw)
    col2im_add(gcols, fwd, v.col(j));
    // broadcast bias per output channel
    for (Index c = 0; c < cs.out_c; ++c)
      v.col(j).segment(c * fwd.in_h * fwd.in_w, fwd.in_h * fwd.in_w).array() +=
          bias[c];
  }
  return t.push(std::move(v),
                [px = x.id, pw = w.id, pb = b.id, cs, fwd](Tape& t, int self) {
                  const Matrix& g = t.adj(self);
                  const Matrix& xv = t.val(px);
                  Matrix& gx = t.adj(px);
                  Matrix& gw = t.adj(pw);
                  Matrix& gb = t.adj(pb);
                  const Matrix& wv = t.val(pw);
                  for (Index j = 0; j < g.cols(); ++j) {
                    // adjoint of col2im_add is im2col on the output grad
                    Matrix cols = im2col(g.col(j), fwd);
                    Eigen::Map<const Matrix> xm(xv.col(j).data(),
                                                cs.in_h * cs.in_w, cs.in_c);
                    gw.noalias() += xm.transpose() * cols.transpose();


                    Matrix gxm = (wv * cols).transpose();  // (ih*iw) x in_c
                    Eigen::Map<const Matrix> goT(g.col(j).data(),
                                                 fwd.in_h * fwd.in_w, cs.out_c);
                    for (Index c = 0; c < cs.out_c; ++c)
                      gb(c, 0) += goT.col(c).sum();
                    gx.col(j) +=
                        Eigen::Map<const Vector>(gxm.data(), cs.in_size());
                  }
                });
}

}  // namespace aef::ad
