#include "aef/nets.hpp"

#include <cmath>

namespace aef::nets {

Var activate(Var x, Activation a) {
  switch (a) {
    case Activation::Tanh: return ad::tanh(x);
    case Activation::Relu: return ad::relu(x);
  }
  throw DomainError("unknown activation");
}

Dense Dense::build(ParameterStore& store, const std::string& name, Index in,
                   Index out, Rng& rng, double weight_scale) {
  Dense d;
  d.in = in;
  d.out = out;
  d.W = store.allocate(name + ".W", out, in);
  d.b = store.allocate(name + ".b", out, 1);
  double scale = weight_scale;
  if (scale < 0.0) scale = std::sqrt(6.0 / static_cast<double>(in + out));
  auto w = store.view(d.W);
  for (Index j = 0; j < in; ++j)
    for (Index i = 0; i < out; ++i) w(i, j) = rng.uniform(-scale, scale);
  if (weight_scale == 0.0) w.setZero();
  store.view(d.b).setZero();
  return d;
}

Var Dense::operator()(Tape& t, Var x) const {
  return ad::add_colvec(ad::matmul(t.param(W), x), t.param(b));
}

Matrix FeedForward::values(const ParameterStore& store, const Matrix& x) const {
  Tape t(&store, false);
  return t.value((*this)(t, t.constant(x)));
}

Mlp Mlp::build(ParameterStore& store, const std::string& name, Index in,
               const std::vector<Index>& hidden, Index out, Activation act,
               Rng& rng, double final_scale) {
  Mlp m;
  m.in_ = in;
  m.out_ = out;
  m.act_ = act;
  Index cur = in;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    m.layers_.push_back(Dense::build(
        store, name + ".h" + std::to_string(i), cur, hidden[i], rng));
    cur = hidden[i];
  }
  m.layers_.push_back(Dense::build(store, name + ".out", cur, out, rng, final_scale));
  return m;
}

Var Mlp::operator()(Tape& t, Var x) const {
  Var h = x;
  for (std::size_t i = 0; i + 1 < layers_.size(); ++i)
    h = activate(layers_[i](t, h), act_);
  return layers_.back()(t, h);
}

MlpTrunk MlpTrunk::build(ParameterStore& store, const std::string& name,
                         Index in, const std::vector<Index>& hidden,
                         Activation act, Rng& rng) {
  MlpTrunk m;
  m.in_ = in;
  m.act_ = act;
  Index cur = in;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    m.layers_.push_back(Dense::build(
        store, name + ".h" + std::to_string(i), cur, hidden[i], rng));
    cur = hidden[i];
  }
  m.out_ = cur;
  return m;
}

Var MlpTrunk::operator()(Tape& t, Var x) const {
  Var h = x;
  for (const auto& l : layers_) h = activate(l(t, h), act_);
  return h;
}

ConvTrunk ConvTrunk::build(ParameterStore& store, const std::string& name,
                           Index in_c, Index in_h, Index in_w,
                           const std::vector<Index>& channels, Rng& rng) {
  ConvTrunk c;
  c.in_ = in_c * in_h * in_w;
  Index cc = in_c, ch = in_h, cw = in_w;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    ConvLayer l;
    l.shape.in_c = cc;
    l.shape.in_h = ch;
    l.shape.in_w = cw;
    l.shape.out_c = channels[i];
    l.shape.kh = 3;
    l.shape.kw = 3;
    l.shape.stride = 2;
    l.shape.pad = 1;
    const Index fan_in = cc * 9;
    const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
    l.W = store.allocate(name + ".c" + std::to_string(i) + ".W",
                         l.shape.out_c, fan_in);
    l.b = store.allocate(name + ".c" + std::to_string(i) + ".b",
                         l.shape.out_c, 1);
    auto w = store.view(l.W);
    for (Index jj = 0; jj < w.cols(); ++jj)
      for (Index ii = 0; ii < w.rows(); ++ii) w(ii, jj) = rng.normal() * scale;
    store.view(l.b).setZero();
    cc = channels[i];
    ch = l.shape.out_h();
    cw = l.shape.out_w();
    c.layers_.push_back(l);
  }
  c.out_ = cc * ch * cw;
  return c;
}

Var ConvTrunk::operator()(Tape& t, Var x) const {
  Var h = x;
  for (const auto& l : layers_)
    h = ad::relu(ad::conv2d(h, t.param(l.W), t.param(l.b), l.shape));
  return h;
}

ConvDecoder ConvDecoder::build(ParameterStore& store, const std::string& name,
                               Index latent, Index out_c, Index out_h,
                               Index out_w, const std::vector<Index>& channels,
                               Rng& rng) {
  // Mirror of the conv trunk: each transposed layer (k4 s2 p1) doubles the
  // spatial size, so the seed feature map is out/2^L.
  ConvDecoder d;
  d.in_ = latent;
  d.out_ = out_c * out_h * out_w;
  const Index L = static_cast<Index>(channels.size());
  Index fh = out_h, fw = out_w;
  for (Index i = 0; i < L; ++i) {
    require(fh % 2 == 0 && fw % 2 == 0,
            "ConvDecoder: image size must be divisible by 2^layers");
    fh /= 2;
    fw /= 2;
  }
  d.feat_c_ = channels.empty() ? out_c : channels.front();
  d.feat_h_ = fh;
  d.feat_w_ = fw;
  d.up_ = Dense::build(store, name + ".up", latent, d.feat_c_ * fh * fw, rng);

  Index cc = d.feat_c_, ch = fh, cw = fw;
  for (Index i = 0; i < L; ++i) {
    const Index next_c = (i + 1 < L) ? channels[i + 1] : out_c;
    ConvLayer l;
    l.transposed = true;
    l.shape.in_c = cc;
    l.shape.in_h = ch;
    l.shape.in_w = cw;
    l.shape.out_c = next_c;
    l.shape.kh = 4;
    l.shape.kw = 4;
    l.shape.stride = 2;
    l.shape.pad = 1;
    const Index fan_in = cc * l.shape.kh * l.shape.kw;
    const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
    l.W = store.allocate(name + ".t" + std::to_string(i) + ".W", cc,
                         next_c * l.shape.kh * l.shape.kw);
    l.b = store.allocate(name + ".t" + std::to_string(i) + ".b", next_c, 1);
    auto w = store.view(l.W);
    for (Index jj = 0; jj < w.cols(); ++jj)
      for (Index ii = 0; ii < w.rows(); ++ii) w(ii, jj) = rng.normal() * scale;
    store.view(l.b).setZero();
    cc = next_c;
    ch = l.shape.tr_out_h();
    cw = l.shape.tr_out_w();
    d.layers_.push_back(l);
  }
  require(ch == out_h && cw == out_w, "ConvDecoder: geometry does not close");
  return d;
}

Var ConvDecoder::operator()(Tape& t, Var x) const {
  Var h = ad::relu(up_(t, x));
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    h = ad::conv_transpose2d(h, t.param(l.W), t.param(l.b), l.shape);
    if (i + 1 < layers_.size()) h = ad::relu(h);
  }
  return h;
}

TwoHeadEncoder TwoHeadEncoder::build(ParameterStore& store,
                                     const std::string& name,
                                     std::shared_ptr<FeedForward> trunk,
                                     Index out, Rng& rng) {
  TwoHeadEncoder e;
  e.trunk_ = std::move(trunk);
  e.out_ = out;
  e.head_m_ = Dense::build(store, name + ".mean", e.trunk_->out_dim(), out, rng, 0.0);
  e.head_s_ = Dense::build(store, name + ".scale", e.trunk_->out_dim(), out, rng, 0.0);
  return e;
}

TwoHeadEncoder::Heads TwoHeadEncoder::operator()(Tape& t, Var x) const {
  Var h = (*trunk_)(t, x);
  Var m = head_m_(t, h);
  Var s = ad::clamped_exp(head_s_(t, h), kScaleFloor);
  return {m, s};
}

std::pair<Matrix, Matrix> TwoHeadEncoder::values(const ParameterStore& store,
                                                 const Matrix& x) const {
  Tape t(&store, false);
  Heads h = (*this)(t, t.constant(x));
  return {t.value(h.mean), t.value(h.scale)};
}

}  // namespace aef::nets
