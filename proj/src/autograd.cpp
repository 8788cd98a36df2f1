// SPDX-License-Identifier: Apache-2.0
#include "bfvae/autograd.hpp"

#include <cmath>
#include <stdexcept>

#include "bfvae/special.hpp"

namespace bfvae::ad {

namespace {

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace

// Ops live outside the class; this accessor keeps Node internals private
// without befriending every free function.
struct OpAccess {
  static Tape* tape(const Var& v) { return v.tape_; }
  static int id(const Var& v) { return v.id_; }
  static Var make(Tape* t, int id) { return Var(t, id); }
  static int push(Tape& t, Mat val, bool needs,
                  std::function<void(Tape&, int)> back) {
    return t.push(std::move(val), needs, std::move(back));
  }
  static const Mat& value(const Tape& t, int id) { return t.value(id); }
  static bool tracked(const Tape& t, int id) { return t.tracked(id); }
  static void acc(Tape& t, int id, const Mat& g) { t.accumulate(id, g); }
  static const Mat& grad(Tape& t, int id) { return t.grad_ref(id); }
};

const Mat& Var::val() const {
  if (!defined()) throw std::logic_error("Var::val on empty Var");
  return OpAccess::value(*tape_, id_);
}

const Mat& Var::grad() const {
  if (!defined()) throw std::logic_error("Var::grad on empty Var");
  return OpAccess::grad(*tape_, id_);
}

int Tape::push(Mat val, bool needs_grad, std::function<void(Tape&, int)> back) {
  Node n;
  n.val = std::move(val);
  n.needs_grad = needs_grad;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Var Tape::constant(Mat v) {
  return Var(this, push(std::move(v), false, nullptr));
}

Var Tape::leaf(Mat v) { return Var(this, push(std::move(v), true, nullptr)); }

Var Tape::param(Parameter& p) {
  const int id = push(p.value, true, nullptr);
  nodes_[id].par = &p;
  return Var(this, id);
}

Mat& Tape::grad_ref(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.val.rows(), n.val.cols());
  return n.grad;
}

void Tape::accumulate(int id, const Mat& g) {
  if (!nodes_[id].needs_grad) return;
  grad_ref(id) += g;
}

bool Tape::has_grad(int id) const { return nodes_[id].grad.size() != 0; }

void Tape::backward(const Var& loss) {
  if (OpAccess::tape(loss) != this) throw std::logic_error("backward: foreign Var");
  const int top = OpAccess::id(loss);
  if (nodes_[top].val.size() != 1)
    throw std::invalid_argument("backward: loss must be 1x1");
  grad_ref(top).setConstant(1.0);
  for (int i = top; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.back) n.back(*this, i);
    if (n.par) n.par->grad += n.grad;
  }
}

namespace {

struct Ctx {
  Tape* t;
  int a = -1, b = -1;
  const Mat& av() const { return OpAccess::value(*t, a); }
  const Mat& bv() const { return OpAccess::value(*t, b); }
  bool any_tracked() const {
    return (a >= 0 && OpAccess::tracked(*t, a)) ||
           (b >= 0 && OpAccess::tracked(*t, b));
  }
};

Ctx ctx1(const Var& a) { return {OpAccess::tape(a), OpAccess::id(a), -1}; }

Ctx ctx2(const Var& a, const Var& b) {
  if (OpAccess::tape(a) != OpAccess::tape(b))
    throw std::logic_error("op: Vars from different tapes");
  return {OpAccess::tape(a), OpAccess::id(a), OpAccess::id(b)};
}

Var make_op(const Ctx& c, Mat val, std::function<void(Tape&, int)> back) {
  const bool needs = c.any_tracked();
  const int id = OpAccess::push(*c.t, std::move(val), needs,
                                needs ? std::move(back) : nullptr);
  return OpAccess::make(c.t, id);
}

}  // namespace

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Ctx c = ctx2(a, b);
  return make_op(c, c.av() + c.bv(), [c](Tape& t, int self) {
    const Mat& g = OpAccess::grad(t, self);
    OpAccess::acc(t, c.a, g);
    OpAccess::acc(t, c.b, g);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Ctx c = ctx2(a, b);
  return make_op(c, c.av() - c.bv(), [c](Tape& t, int self) {
    const Mat& g = OpAccess::grad(t, self);
    OpAccess::acc(t, c.a, g);
    OpAccess::acc(t, c.b, -g);
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Ctx c = ctx2(a, b);
  return make_op(c, c.av().cwiseProduct(c.bv()), [c](Tape& t, int self) {
    const Mat& g = OpAccess::grad(t, self);
    OpAccess::acc(t, c.a, g.cwiseProduct(c.bv()));
    OpAccess::acc(t, c.b, g.cwiseProduct(c.av()));
  });
}

Var add_rowvec(const Var& a, const Var& v) {
  if (v.rows() != 1 || v.cols() != a.cols())
    throw std::invalid_argument("add_rowvec: v must be 1 x a.cols()");
  Ctx c = ctx2(a, v);
  Mat out = c.av();
  out.rowwise() += c.bv().row(0);
  return make_op(c, std::move(out), [c](Tape& t, int self) {
    const Mat& g = OpAccess::grad(t, self);
    OpAccess::acc(t, c.a, g);
    OpAccess::acc(t, c.b, g.colwise().sum());
  });
}

Var sub_rowvec(const Var& a, const Var& v) {
  if (v.rows() != 1 || v.cols() != a.cols())
    throw std::invalid_argument("sub_rowvec: v must be 1 x a.cols()");
  Ctx c = ctx2(a, v);
  Mat out = c.av();
  out.rowwise() -= c.bv().row(0);
  return make_op(c, std::move(out), [c](Tape& t, int self) {
    const Mat& g = OpAccess::grad(t, self);
    OpAccess::acc(t, c.a, g);
    OpAccess::acc(t, c.b, -g.colwise().sum());
  });
}

Var mul_rowvec(const Var& a, const Var& v) {
  if (v.rows() != 1 || v.cols() != a.cols())
    throw std::invalid_argument("mul_rowvec: v must be 1 x a.cols()");
  Ctx c = ctx2(a, v);
  Mat out = c.av().array().rowwise() * c.bv().row(0).array();
  return make_op(c, std::move(out), [c](Tape& t, int self) {
    const Mat& g = OpAccess::grad(t, self);
    OpAccess::acc(t, c.a, g.array().rowwise() * c.bv().row(0).array());
    OpAccess::acc(t, c.b, g.cwiseProduct(c.av()).colwise().sum());
  });
}

Var add_scalar_var(const Var& a, const Var& s) {
  if (s.rows() != 1 || s.cols() != 1)
    throw std::invalid_argument("add_scalar_var: s must be 1x1");
  Ctx c = ctx2(a, s);
  return make_op(c, c.av().array() + c.bv()(0, 0), [c](Tape& t, int self) {
    const Mat& g = OpAccess::grad(t, self);
    OpAccess::acc(t, c.a, g);
    Mat gs(1, 1);
    gs(0, 0) = g.sum();
    OpAccess::acc(t, c.b, gs);
  });
}

Var sub_scalar_var(const Var& a, const Var& s) {
  if (s.rows() != 1 || s.cols() != 1)
    throw std::invalid_argument("sub_scalar_var: s must be 1x1");
  Ctx c = ctx2(a, s);
  return make_op(c, c.av().array() - c.bv()(0, 0), [c](Tape& t, int self) {
    const Mat& g = OpAccess::grad(t, self);
    OpAccess::acc(t, c.a, g);
    Mat gs(1, 1);
    gs(0, 0) = -g.sum();
    OpAccess::acc(t, c.b, gs);
  });
}

Var scale(const Var& a, double k) {
  Ctx c = ctx1(a);
  return make_op(c, c.av() * k, [c, k](Tape& t, int self) {
    OpAccess::acc(t, c.a, OpAccess::grad(t, self) * k);
  });
}

Var add_const(const Var& a, double k) {
  Ctx c = ctx1(a);
  return make_op(c, c.av().array() + k, [c](Tape& t, int self) {
    OpAccess::acc(t, c.a, OpAccess::grad(t, self));
  });
}

Var add_constmat(const Var& a, const Mat& m) {
  if (m.rows() != a.rows() || m.cols() != a.cols())
    throw std::invalid_argument("add_constmat: shape mismatch");
  Ctx c = ctx1(a);
  return make_op(c, c.av() + m, [c](Tape& t, int self) {
    OpAccess::acc(t, c.a, OpAccess::grad(t, self));
  });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dim mismatch");
  Ctx c = ctx2(a, b);
  return make_op(c, c.av() * c.bv(), [c](Tape& t, int self) {
    const Mat& g = OpAccess::grad(t, self);
    if (OpAccess::tracked(t, c.a)) OpAccess::acc(t, c.a, g * c.bv().transpose());
    if (OpAccess::tracked(t, c.b)) OpAccess::acc(t, c.b, c.av().transpose() * g);
  });
}

Var dense(const Var& x, const Var& w, const Var& b) {
  if (x.cols() != w.rows()) throw std::invalid_argument("dense: inner dim mismatch");
  if (b.rows() != 1 || b.cols() != w.cols())
    throw std::invalid_argument("dense: bias shape mismatch");
  Tape* t = OpAccess::tape(x);
  if (t != OpAccess::tape(w) || t != OpAccess::tape(b))
    throw std::logic_error("dense: Vars from different tapes");
  Mat out = x.val() * w.val();
  out.rowwise() += b.val().row(0);
  const int xi = OpAccess::id(x), wi = OpAccess::id(w), bi = OpAccess::id(b);
  const bool needs = OpAccess::tracked(*t, xi) || OpAccess::tracked(*t, wi) ||
                     OpAccess::tracked(*t, bi);
  const int id = OpAccess::push(
      *t, std::move(out), needs,
      !needs ? std::function<void(Tape&, int)>(nullptr)
             : [xi, wi, bi](Tape& t2, int self) {
                 const Mat& g = OpAccess::grad(t2, self);
                 if (OpAccess::tracked(t2, xi))
                   OpAccess::acc(t2, xi, g * OpAccess::value(t2, wi).transpose());
                 if (OpAccess::tracked(t2, wi))
                   OpAccess::acc(t2, wi, OpAccess::value(t2, xi).transpose() * g);
                 if (OpAccess::tracked(t2, bi)) OpAccess::acc(t2, bi, g.colwise().sum());
               });
  return OpAccess::make(t, id);
}

Var exp(const Var& a) {
  Ctx c = ctx1(a);
  return make_op(c, c.av().array().exp(), [c](Tape& t, int self) {
    OpAccess::acc(t, c.a,
                  OpAccess::grad(t, self).cwiseProduct(OpAccess::value(t, self)));
  });
}

Var log(const Var& a) {
  Ctx c = ctx1(a);
  return make_op(c, c.av().array().log(), [c](Tape& t, int self) {
    OpAccess::acc(t, c.a, OpAccess::grad(t, self).cwiseQuotient(c.av()));
  });
}

Var square(const Var& a) {
  Ctx c = ctx1(a);
  return make_op(c, c.av().array().square(), [c](Tape& t, int self) {
    OpAccess::acc(t, c.a, 2.0 * OpAccess::grad(t, self).cwiseProduct(c.av()));
  });
}

Var tanh(const Var& a) {
  Ctx c = ctx1(a);
  return make_op(c, c.av().array().tanh(), [c](Tape& t, int self) {
    const Mat& y = OpAccess::value(t, self);
    Mat d = (1.0 - y.array().square()).matrix();
    OpAccess::acc(t, c.a, OpAccess::grad(t, self).cwiseProduct(d));
  });
}

Var sigmoid(const Var& a) {
  Ctx c = ctx1(a);
  Mat out = c.av().unaryExpr([](double x) { return bfvae::sigmoid(x); });
  return make_op(c, std::move(out), [c](Tape& t, int self) {
    const Mat& y = OpAccess::value(t, self);
    Mat d = y.array() * (1.0 - y.array());
    OpAccess::acc(t, c.a, OpAccess::grad(t, self).cwiseProduct(d));
  });
}

Var softplus(const Var& a) {
  Ctx c = ctx1(a);
  Mat out = c.av().unaryExpr([](double x) { return bfvae::softplus(x); });
  return make_op(c, std::move(out), [c](Tape& t, int self) {
    Mat d = c.av().unaryExpr([](double x) { return bfvae::sigmoid(x); });
    OpAccess::acc(t, c.a, OpAccess::grad(t, self).cwiseProduct(d));
  });
}

Var leaky_relu(const Var& a, double slope) {
  Ctx c = ctx1(a);
  Mat out = c.av().unaryExpr([slope](double x) { return x > 0.0 ? x : slope * x; });
  return make_op(c, std::move(out), [c, slope](Tape& t, int self) {
    Mat d = c.av().unaryExpr([slope](double x) { return x > 0.0 ? 1.0 : slope; });
    OpAccess::acc(t, c.a, OpAccess::grad(t, self).cwiseProduct(d));
  });
}

Var lgamma(const Var& a) {
  Ctx c = ctx1(a);
  Mat out = c.av().unaryExpr([](double x) { return bfvae::log_gamma(x); });
  return make_op(c, std::move(out), [c](Tape& t, int self) {
    Mat d = c.av().unaryExpr([](double x) { return bfvae::digamma(x); });
    OpAccess::acc(t, c.a, OpAccess::grad(t, self).cwiseProduct(d));
  });
}

Var digamma(const Var& a) {
  Ctx c = ctx1(a);
  Mat out = c.av().unaryExpr([](double x) { return bfvae::digamma(x); });
  return make_op(c, std::move(out), [c](Tape& t, int self) {
    Mat d = c.av().unaryExpr([](double x) { return bfvae::trigamma(x); });
    OpAccess::acc(t, c.a, OpAccess::grad(t, self).cwiseProduct(d));
  });
}

Var clamp_st(const Var& a, double lo, double hi) {
  Ctx c = ctx1(a);
  Mat out = c.av().unaryExpr([lo, hi](double x) { return std::fmin(std::fmax(x, lo), hi); });
  return make_op(c, std::move(out), [c](Tape& t, int self) {
    OpAccess::acc(t, c.a, OpAccess::grad(t, self));
  });
}

Var sum(const Var& a) {
  Ctx c = ctx1(a);
  Mat out(1, 1);
  out(0, 0) = c.av().sum();
  return make_op(c, std::move(out), [c](Tape& t, int self) {
    const double g = OpAccess::grad(t, self)(0, 0);
    OpAccess::acc(t, c.a, Mat::Constant(c.av().rows(), c.av().cols(), g));
  });
}

Var mean_all(const Var& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.rows() * a.cols()));
}

Var colsum(const Var& a) {
  Ctx c = ctx1(a);
  return make_op(c, c.av().colwise().sum(), [c](Tape& t, int self) {
    const Mat& g = OpAccess::grad(t, self);  // 1 x d
    Mat ga = g.replicate(c.av().rows(), 1);
    OpAccess::acc(t, c.a, ga);
  });
}

Var rowsum(const Var& a) {
  Ctx c = ctx1(a);
  return make_op(c, c.av().rowwise().sum(), [c](Tape& t, int self) {
    const Mat& g = OpAccess::grad(t, self);  // B x 1
    Mat ga = g.replicate(1, c.av().cols());
    OpAccess::acc(t, c.a, ga);
  });
}

Var bernoulli_ce(const Var& logits, const Mat& targets) {
  if (targets.rows() != logits.rows() || targets.cols() != logits.cols())
    throw std::invalid_argument("bernoulli_ce: target shape mismatch");
  if ((targets.array() < 0.0).any() || (targets.array() > 1.0).any())
    throw std::invalid_argument("bernoulli_ce: targets must lie in [0,1]");
  Ctx c = ctx1(logits);
  const double inv_b = 1.0 / static_cast<double>(logits.rows());
  Mat sp = c.av().unaryExpr([](double x) { return bfvae::softplus(x); });
  Mat out(1, 1);
  out(0, 0) = (sp - targets.cwiseProduct(c.av())).sum() * inv_b;
  return make_op(c, std::move(out), [c, targets, inv_b](Tape& t, int self) {
    const double g = OpAccess::grad(t, self)(0, 0);
    Mat sig = c.av().unaryExpr([](double x) { return bfvae::sigmoid(x); });
    OpAccess::acc(t, c.a, (g * inv_b) * (sig - targets));
  });
}

Var block(const Var& a, Eigen::Index r0, Eigen::Index c0, Eigen::Index rows,
          Eigen::Index cols) {
  if (r0 < 0 || c0 < 0 || r0 + rows > a.rows() || c0 + cols > a.cols())
    throw std::invalid_argument("block: out of range");
  Ctx c = ctx1(a);
  return make_op(c, c.av().block(r0, c0, rows, cols),
                 [c, r0, c0, rows, cols](Tape& t, int self) {
                   Mat ga = Mat::Zero(c.av().rows(), c.av().cols());
                   ga.block(r0, c0, rows, cols) = OpAccess::grad(t, self);
                   OpAccess::acc(t, c.a, ga);
                 });
}

Var stop_grad(const Var& a) {
  Tape* t = OpAccess::tape(a);
  return t->constant(a.val());
}

Var logsumexp(const std::vector<Var>& items) {
  if (items.empty()) throw std::invalid_argument("logsumexp: empty list");
  Tape* t = OpAccess::tape(items[0]);
  Mat m = items[0].val();
  for (size_t k = 1; k < items.size(); ++k) m = m.cwiseMax(items[k].val());
  // sum_k exp(x_k - m), with m held constant: its gradient contributions
  // cancel exactly, so treating it as a constant is sound for any m.
  Var acc;
  for (size_t k = 0; k < items.size(); ++k) {
    Var e = exp(add_constmat(items[k], -m));
    acc = k == 0 ? e : add(acc, e);
  }
  (void)t;
  return add_constmat(log(acc), m);
}

// --- convolution -----------------------------------------------------------

ConvPlan make_conv_plan(int in_c, int in_h, int in_w, int out_c, int k,
                        int stride, int pad) {
  ConvPlan p;
  p.in_c = in_c;
  p.in_h = in_h;
  p.in_w = in_w;
  p.out_c = out_c;
  p.k = k;
  p.stride = stride;
  p.pad = pad;
  p.out_h = (in_h + 2 * pad - k) / stride + 1;
  p.out_w = (in_w + 2 * pad - k) / stride + 1;
  if (p.out_h <= 0 || p.out_w <= 0)
    throw std::invalid_argument("make_conv_plan: empty output");
  p.idx.assign(static_cast<size_t>(p.positions()) * p.patch(), -1);
  for (int oy = 0; oy < p.out_h; ++oy) {
    for (int ox = 0; ox < p.out_w; ++ox) {
      const int pos = oy * p.out_w + ox;
      for (int ci = 0; ci < in_c; ++ci) {
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const int iy = oy * stride - pad + ky;
            const int ix = ox * stride - pad + kx;
            const int q = (ci * k + ky) * k + kx;
            if (iy < 0 || iy >= in_h || ix < 0 || ix >= in_w) continue;
            p.idx[static_cast<size_t>(pos) * p.patch() + q] =
                (ci * in_h + iy) * in_w + ix;
          }
        }
      }
    }
  }
  return p;
}

namespace {

// Gather x (B x in_feats) into the column matrix (B*P x patch).
Mat im2col(const Mat& x, const ConvPlan& p) {
  const int B = static_cast<int>(x.rows());
  const int P = p.positions();
  const int K = p.patch();
  Mat col(static_cast<Eigen::Index>(B) * P, K);
  for (int b = 0; b < B; ++b) {
    for (int pos = 0; pos < P; ++pos) {
      double* dst = nullptr;
      for (int q = 0; q < K; ++q) {
        const int src = p.idx[static_cast<size_t>(pos) * K + q];
        col(static_cast<Eigen::Index>(b) * P + pos, q) = src >= 0 ? x(b, src) : 0.0;
      }
      (void)dst;
    }
  }
  return col;
}

// Scatter-add the column matrix gradient back into x-space.
void col2im_add(const Mat& dcol, const ConvPlan& p, Mat& dx) {
  const int B = static_cast<int>(dx.rows());
  const int P = p.positions();
  const int K = p.patch();
  for (int b = 0; b < B; ++b) {
    for (int pos = 0; pos < P; ++pos) {
      for (int q = 0; q < K; ++q) {
        const int dst = p.idx[static_cast<size_t>(pos) * K + q];
        if (dst >= 0) dx(b, dst) += dcol(static_cast<Eigen::Index>(b) * P + pos, q);
      }
    }
  }
}

// (B x C*P) <-> (B*P x C) layout shuffles, feature index = c*P + pos.
Mat to_bp_rows(const Mat& x, int C, int P) {
  const int B = static_cast<int>(x.rows());
  Mat y(static_cast<Eigen::Index>(B) * P, C);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int pos = 0; pos < P; ++pos)
        y(static_cast<Eigen::Index>(b) * P + pos, c) = x(b, c * P + pos);
  return y;
}

Mat from_bp_rows(const Mat& y, int C, int P) {
  const int B = static_cast<int>(y.rows()) / P;
  Mat x(B, static_cast<Eigen::Index>(C) * P);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int pos = 0; pos < P; ++pos)
        x(b, c * P + pos) = y(static_cast<Eigen::Index>(b) * P + pos, c);
  return x;
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, const ConvPlan& plan) {
  if (x.cols() != plan.in_c * plan.in_h * plan.in_w)
    throw std::invalid_argument("conv2d: input feature size mismatch");
  if (w.rows() != plan.patch() || w.cols() != plan.out_c)
    throw std::invalid_argument("conv2d: weight shape mismatch");
  if (b.rows() != 1 || b.cols() != plan.out_c)
    throw std::invalid_argument("conv2d: bias shape mismatch");
  Tape* t = OpAccess::tape(x);
  if (t != OpAccess::tape(w) || t != OpAccess::tape(b))
    throw std::logic_error("conv2d: Vars from different tapes");
  const int P = plan.positions();
  Mat col = im2col(x.val(), plan);           // (B*P) x patch
  Mat y = col * w.val();                     // (B*P) x out_c
  y.rowwise() += b.val().row(0);
  Mat out = from_bp_rows(y, plan.out_c, P);  // B x (out_c*P)

  Ctx c{t, OpAccess::id(x), OpAccess::id(w)};
  const int bid = OpAccess::id(b);
  const bool needs = c.any_tracked() || OpAccess::tracked(*t, bid);
  const int id = OpAccess::push(
      *t, std::move(out), needs,
      !needs ? std::function<void(Tape&, int)>(nullptr)
             : [c, bid, plan, P, col = std::move(col)](Tape& t2, int self) {
                 const Mat& g = OpAccess::grad(t2, self);     // B x (out_c*P)
                 Mat gy = to_bp_rows(g, plan.out_c, P);       // (B*P) x out_c
                 // bias
                 Mat gb = gy.colwise().sum();
                 OpAccess::acc(t2, bid, gb);
                 // weight
                 OpAccess::acc(t2, c.b, col.transpose() * gy);
                 // input
                 if (OpAccess::tracked(t2, c.a)) {
                   Mat dcol = gy * OpAccess::value(t2, c.b).transpose();
                   Mat dx = Mat::Zero(g.rows(), plan.in_c * plan.in_h * plan.in_w);
                   col2im_add(dcol, plan, dx);
                   OpAccess::acc(t2, c.a, dx);
                 }
               });
  return OpAccess::make(t, id);
}

Var conv2d_transpose(const Var& x, const Var& w, const Var& b,
                     const ConvPlan& plan) {
  // plan describes a conv FROM this layer's output space TO its input space;
  // forward here is that conv's backward-data pass.
  const int P = plan.positions();
  if (x.cols() != plan.out_c * P)
    throw std::invalid_argument("conv2d_transpose: input feature size mismatch");
  if (w.rows() != plan.patch() || w.cols() != plan.out_c)
    throw std::invalid_argument("conv2d_transpose: weight shape mismatch");
  if (b.rows() != 1 || b.cols() != plan.in_c)
    throw std::invalid_argument("conv2d_transpose: bias shape mismatch");
  Tape* t = OpAccess::tape(x);
  if (t != OpAccess::tape(w) || t != OpAccess::tape(b))
    throw std::logic_error("conv2d_transpose: Vars from different tapes");

  Mat xr = to_bp_rows(x.val(), plan.out_c, P);  // (B*P) x out_c
  Mat m = xr * w.val().transpose();             // (B*P) x patch
  const int out_feats = plan.in_c * plan.in_h * plan.in_w;
  Mat out = Mat::Zero(x.rows(), out_feats);
  col2im_add(m, plan, out);
  // one bias per plan.in_c channel, broadcast over its in_h*in_w positions
  const int spatial = plan.in_h * plan.in_w;
  for (int ci = 0; ci < plan.in_c; ++ci)
    out.middleCols(static_cast<Eigen::Index>(ci) * spatial, spatial).array() +=
        b.val()(0, ci);

  Ctx c{t, OpAccess::id(x), OpAccess::id(w)};
  const int bid = OpAccess::id(b);
  const bool needs = c.any_tracked() || OpAccess::tracked(*t, bid);
  const int id = OpAccess::push(
      *t, std::move(out), needs,
      !needs ? std::function<void(Tape&, int)>(nullptr)
             : [c, bid, plan, P, spatial, xr = std::move(xr)](Tape& t2, int self) {
                 const Mat& g = OpAccess::grad(t2, self);  // B x (in_c*in_h*in_w)
                 Mat gb(1, plan.in_c);
                 for (int ci = 0; ci < plan.in_c; ++ci)
                   gb(0, ci) =
                       g.middleCols(static_cast<Eigen::Index>(ci) * spatial, spatial)
                           .sum();
                 OpAccess::acc(t2, bid, gb);
                 Mat gcol = im2col(g, plan);  // (B*P) x patch
                 OpAccess::acc(t2, c.b, gcol.transpose() * xr);
                 if (OpAccess::tracked(t2, c.a)) {
                   Mat gxr = gcol * OpAccess::value(t2, c.b);  // (B*P) x out_c
                   OpAccess::acc(t2, c.a, from_bp_rows(gxr, plan.out_c, P));
                 }
               });
  return OpAccess::make(t, id);
}

}  // namespace bfvae::ad
