// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode autodiff on dense Eigen matrices. A Tape owns the
// computation graph for one objective evaluation; Vars are lightweight
// handles into it. Parameters live outside the tape and receive their
// accumulated gradients after backward(), so one set of parameters can be
// reused across many tapes (one per training step).
//
// Matrices are (batch x features) throughout; scalars are 1x1.
#pragma once

#include <Eigen/Dense>

#include <deque>
#include <functional>
#include <string>
#include <vector>

namespace bfvae::ad {

using Mat = Eigen::MatrixXd;

class Tape;
struct OpAccess;

struct Parameter {
  std::string name;
  Mat value;
  Mat grad;

  Parameter() = default;
  Parameter(std::string n, Mat v)
      : name(std::move(n)), value(std::move(v)),
        grad(Mat::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(); }
  Eigen::Index size() const { return value.size(); }
};

class Var {
 public:
  Var() = default;
  const Mat& val() const;
  const Mat& grad() const;  // valid after Tape::backward
  Eigen::Index rows() const { return val().rows(); }
  Eigen::Index cols() const { return val().cols(); }
  bool defined() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  friend struct OpAccess;
  Var(Tape* t, int id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  // Leaf without gradient tracking (data, noise, masks).
  Var constant(Mat v);
  // Leaf with gradient tracking (used by tests probing d loss / d input).
  Var leaf(Mat v);
  // Leaf bound to a Parameter; backward() adds into p.grad.
  Var param(Parameter& p);

  // Reverse sweep from a 1x1 loss node.
  void backward(const Var& loss);

  size_t size() const { return nodes_.size(); }

 private:
  friend class Var;
  friend struct OpAccess;

  struct Node {
    Mat val;
    Mat grad;                     // lazily allocated
    bool needs_grad = false;
    Parameter* par = nullptr;
    // Pulls this node's gradient into its parents; receives the tape and
    // this node's own id.
    std::function<void(Tape&, int)> back;
  };

  int push(Mat val, bool needs_grad, std::function<void(Tape&, int)> back);
  Mat& grad_ref(int id);
  void accumulate(int id, const Mat& g);
  bool has_grad(int id) const;
  const Mat& value(int id) const { return nodes_[id].val; }
  bool tracked(int id) const { return nodes_[id].needs_grad; }

  std::deque<Node> nodes_;
};

// --- elementwise / broadcast ops -----------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);

// b is 1 x d, broadcast across the rows of a (B x d).
Var add_rowvec(const Var& a, const Var& v);
Var sub_rowvec(const Var& a, const Var& v);
Var mul_rowvec(const Var& a, const Var& v);

// s is 1 x 1, broadcast everywhere.
Var add_scalar_var(const Var& a, const Var& s);
Var sub_scalar_var(const Var& a, const Var& s);

Var scale(const Var& a, double c);
Var add_const(const Var& a, double c);
Var add_constmat(const Var& a, const Mat& m);
Var neg(const Var& a);

Var matmul(const Var& a, const Var& b);

// Fused affine map x * w + b (b broadcast across rows); skips gradient
// GEMMs for untracked operands.
Var dense(const Var& x, const Var& w, const Var& b);

Var exp(const Var& a);
Var log(const Var& a);
Var square(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var softplus(const Var& a);
Var leaky_relu(const Var& a, double slope = 0.2);
Var lgamma(const Var& a);
Var digamma(const Var& a);

// Value clamped to [lo, hi]; gradient passes through unchanged
// (straight-through), so saturated units keep receiving pressure.
Var clamp_st(const Var& a, double lo, double hi);

// --- reductions ------------------------------------------------------------

Var sum(const Var& a);       // 1 x 1
Var mean_all(const Var& a);  // 1 x 1
Var colsum(const Var& a);    // 1 x d
Var rowsum(const Var& a);    // B x 1

// Mean over rows of the summed per-column Bernoulli cross entropy between
// `targets` (constants in [0,1]) and `logits`:
//   mean_b sum_i [ softplus(l) - x * l ].
Var bernoulli_ce(const Var& logits, const Mat& targets);

// Submatrix view (copied); gradient scatters back into the region.
Var block(const Var& a, Eigen::Index r0, Eigen::Index c0, Eigen::Index rows,
          Eigen::Index cols);

// Detach: value copied into an untracked constant.
Var stop_grad(const Var& a);

// log sum_k exp(items_k) elementwise over a list of same-shaped Vars,
// stabilized by the running max (treated as a constant).
Var logsumexp(const std::vector<Var>& items);

// --- convolution -----------------------------------------------------------

// Index plan mapping (output position, patch slot) -> input feature index
// (-1 for zero padding). Features are laid out c * (h * w) + y * w + x.
struct ConvPlan {
  int in_c = 0, in_h = 0, in_w = 0;
  int out_c = 0, out_h = 0, out_w = 0;
  int k = 0, stride = 1, pad = 0;
  std::vector<int> idx;  // (out_h*out_w) x (in_c*k*k), row-major

  int patch() const { return in_c * k * k; }
  int positions() const { return out_h * out_w; }
};

ConvPlan make_conv_plan(int in_c, int in_h, int in_w, int out_c, int k,
                        int stride, int pad);

// x: B x (in_c*in_h*in_w), w: (in_c*k*k) x out_c, b: 1 x out_c.
// Returns B x (out_c*out_h*out_w).
Var conv2d(const Var& x, const Var& w, const Var& b, const ConvPlan& plan);

// Transposed convolution, implemented as the adjoint of `plan`. The plan
// must describe the forward conv that maps this layer's OUTPUT geometry
// back onto its INPUT geometry, i.e. for a layer (ci,h,w) -> (co,s*h,s*w):
//   plan = make_conv_plan(co, s*h, s*w, ci, k, s, pad)
// so plan.out_* is the layer input space and plan.in_* the layer output
// space. x: B x (plan.out_c*plan.out_h*plan.out_w),
// w: (plan.in_c*k*k) x plan.out_c (same shape a conv on the plan would use),
// b: 1 x plan.in_c. Returns B x (plan.in_c*plan.in_h*plan.in_w).
Var conv2d_transpose(const Var& x, const Var& w, const Var& b,
                     const ConvPlan& plan);

}  // namespace bfvae::ad
