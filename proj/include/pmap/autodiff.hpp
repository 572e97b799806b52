#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "pmap/common.hpp"

// Reverse-mode differentiation over a fixed set of matrix operators
// (linear, layer norm, multi-head softmax attention, GELU, add and a few
// row manipulations). Tokens are rows.
namespace pmap::ad {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

template <typename Scalar>
struct Parameter {
  std::string name;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;

  Parameter(std::string n, Matrix<Scalar> v) : name(std::move(n)), value(std::move(v)) {
    grad = Matrix<Scalar>::Zero(value.rows(), value.cols());
  }
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  using Row = RowVector<Scalar>;

  // With grad_enabled = false nothing records a backward closure (inference).
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Var constant(Mat value) { return push(std::move(value), false); }

  // One leaf per parameter per tape; gradients flow into p.grad on backward().
  Var param(Parameter<Scalar>& p) {
    auto it = leaves_.find(&p);
    if (it != leaves_.end()) return it->second;
    Var v = push(p.value, grad_enabled_);
    nodes_[v.id].param = &p;
    leaves_.emplace(&p, v);
    return v;
  }

  const Mat& value(Var v) const { return nodes_[v.id].value; }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Adds `seed` to d(out) and runs the reverse sweep. May be called for
  // several outputs before backward_finish().
  void seed(Var out, const Mat& g) {
    auto& n = nodes_[out.id];
    require(g.rows() == n.value.rows() && g.cols() == n.value.cols(), "seed: gradient shape mismatch");
    grad_ref(out) += g;
  }

  // Reverse sweep, then accumulate leaf gradients into their parameters.
  void backward() {
    for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
      auto& n = nodes_[id];
      if (!n.needs_grad || n.grad.size() == 0 || !n.backward) continue;
      n.backward(*this);
    }
    for (auto& n : nodes_)
      if (n.param && n.grad.size()) n.param->grad += n.grad;
  }

  // --- operators -------------------------------------------------------

  Var add(Var a, Var b) {
    require(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(), "add: shape mismatch");
    Var out = push(value(a) + value(b), any_grad(a, b));
    on_backward(out, [a, b, out](Tape& t) {
      if (t.needs_grad(a)) t.grad_ref(a) += t.grad_of(out);
      if (t.needs_grad(b)) t.grad_ref(b) += t.grad_of(out);
    });
    return out;
  }

  // x W + b, with W (in x out) and b (1 x out).
  Var linear(Var x, Var w, Var b) {
    const Mat& xv = value(x);
    const Mat& wv = value(w);
    require(xv.cols() == wv.rows() && value(b).rows() == 1 && value(b).cols() == wv.cols(), "linear: shape mismatch");
    Mat y(xv.rows(), wv.cols());
    y.noalias() = xv * wv;
    y.rowwise() += value(b).row(0);
    Var out = push(std::move(y), any_grad(x, w, b));
    on_backward(out, [x, w, b, out](Tape& t) {
      const Mat& g = t.grad_of(out);
      if (t.needs_grad(x)) t.grad_ref(x).noalias() += g * t.value(w).transpose();
      if (t.needs_grad(w)) t.grad_ref(w).noalias() += t.value(x).transpose() * g;
      if (t.needs_grad(b)) t.grad_ref(b) += g.colwise().sum();
    });
    return out;
  }

  Var matmul(Var a, Var b) {
    require(value(a).cols() == value(b).rows(), "matmul: shape mismatch");
    Mat y(value(a).rows(), value(b).cols());
    y.noalias() = value(a) * value(b);
    Var out = push(std::move(y), any_grad(a, b));
    on_backward(out, [a, b, out](Tape& t) {
      const Mat& g = t.grad_of(out);
      if (t.needs_grad(a)) t.grad_ref(a).noalias() += g * t.value(b).transpose();
      if (t.needs_grad(b)) t.grad_ref(b).noalias() += t.value(a).transpose() * g;
    });
    return out;
  }

  // Row-wise layer normalization with affine gamma, beta (1 x d).
  Var layer_norm(Var x, Var gamma, Var beta, Scalar eps = Scalar(1e-6)) {
    const Mat& xv = value(x);
    const Eigen::Index d = xv.cols();
    require(value(gamma).cols() == d && value(beta).cols() == d, "layer_norm: shape mismatch");
    auto xhat = std::make_shared<Mat>(xv.rows(), d);
    auto inv_std = std::make_shared<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(xv.rows());
    for (Eigen::Index r = 0; r < xv.rows(); ++r) {
      const Scalar mu = xv.row(r).mean();
      const Scalar var = (xv.row(r).array() - mu).square().mean();
      const Scalar is = Scalar(1) / std::sqrt(var + eps);
      (*inv_std)(r) = is;
      xhat->row(r) = (xv.row(r).array() - mu) * is;
    }
    Mat y = (xhat->array().rowwise() * value(gamma).row(0).array()).rowwise() + value(beta).row(0).array();
    Var out = push(std::move(y), any_grad(x, gamma, beta));
    on_backward(out, [x, gamma, beta, out, xhat, inv_std, d](Tape& t) {
      const Mat& g = t.grad_of(out);
      if (t.needs_grad(gamma)) t.grad_ref(gamma) += (g.array() * xhat->array()).colwise().sum().matrix();
      if (t.needs_grad(beta)) t.grad_ref(beta) += g.colwise().sum();
      if (!t.needs_grad(x)) return;
      Mat dxhat = g.array().rowwise() * t.value(gamma).row(0).array();
      Mat& gx = t.grad_ref(x);
      const Scalar inv_d = Scalar(1) / static_cast<Scalar>(d);
      for (Eigen::Index r = 0; r < g.rows(); ++r) {
        const Scalar s1 = dxhat.row(r).sum();
        const Scalar s2 = dxhat.row(r).dot(xhat->row(r));
        gx.row(r).array() += (*inv_std)(r) * inv_d *
                             (static_cast<Scalar>(d) * dxhat.row(r).array() - s1 - xhat->row(r).array() * s2);
      }
    });
    return out;
  }

  // tanh approximation of GELU
  Var gelu(Var x) {
    static constexpr Scalar c = Scalar(0.7978845608028654);  // sqrt(2/pi)
    static constexpr Scalar a = Scalar(0.044715);
    const Mat& xv = value(x);
    auto th = std::make_shared<Mat>((c * (xv.array() + a * xv.array().cube())).tanh().matrix());
    Mat y = (Scalar(0.5) * xv.array() * (Scalar(1) + th->array())).matrix();
    Var out = push(std::move(y), needs_grad(x));
    on_backward(out, [x, out, th](Tape& t) {
      const auto& xv = t.value(x).array();
      const auto& tv = th->array();
      auto dy = Scalar(0.5) * (Scalar(1) + tv) +
                Scalar(0.5) * xv * (Scalar(1) - tv.square()) * c * (Scalar(1) + Scalar(3) * a * xv.square());
      t.grad_ref(x).array() += t.grad_of(out).array() * dy;
    });
    return out;
  }

  // Multi-head scaled dot-product attention: q (Nq x d), k and v (Nk x d).
  Var attention(Var q, Var k, Var v, int heads) {
    const Mat& qv = value(q);
    const Mat& kv = value(k);
    const Mat& vv = value(v);
    const Eigen::Index d = qv.cols();
    require(heads > 0 && d % heads == 0 && kv.cols() == d && vv.cols() == d && kv.rows() == vv.rows(),
            "attention: shape mismatch");
    const Eigen::Index dh = d / heads;
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
    auto probs = std::make_shared<std::vector<Mat>>(heads);
    Mat y(qv.rows(), d);
    for (int h = 0; h < heads; ++h) {
      Mat s(qv.rows(), kv.rows());
      s.noalias() = qv.middleCols(h * dh, dh) * kv.middleCols(h * dh, dh).transpose();
      s *= scale;
      for (Eigen::Index r = 0; r < s.rows(); ++r) {
        const Scalar m = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - m).exp();
        s.row(r) /= s.row(r).sum();
      }
      y.middleCols(h * dh, dh).noalias() = s * vv.middleCols(h * dh, dh);
      (*probs)[h] = std::move(s);
    }
    Var out = push(std::move(y), any_grad(q, k, v));
    on_backward(out, [q, k, v, out, probs, heads, dh, scale](Tape& t) {
      const Mat& g = t.grad_of(out);
      const bool gq = t.needs_grad(q), gk = t.needs_grad(k), gv = t.needs_grad(v);
      for (int h = 0; h < heads; ++h) {
        const Mat& p = (*probs)[h];
        const auto gh = g.middleCols(h * dh, dh);
        if (gv) t.grad_ref(v).middleCols(h * dh, dh).noalias() += p.transpose() * gh;
        if (!gq && !gk) continue;
        Mat dp(p.rows(), p.cols());
        dp.noalias() = gh * t.value(v).middleCols(h * dh, dh).transpose();
        const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> rs = (dp.array() * p.array()).rowwise().sum();
        Mat ds = (p.array() * (dp.array().colwise() - rs.array())).matrix();
        ds *= scale;
        if (gq) t.grad_ref(q).middleCols(h * dh, dh).noalias() += ds * t.value(k).middleCols(h * dh, dh);
        if (gk) t.grad_ref(k).middleCols(h * dh, dh).noalias() += ds.transpose() * t.value(q).middleCols(h * dh, dh);
      }
    });
    return out;
  }

  Var concat_rows(Var a, Var b) {
    const Mat& av = value(a);
    const Mat& bv = value(b);
    require(av.cols() == bv.cols(), "concat_rows: column mismatch");
    Mat y(av.rows() + bv.rows(), av.cols());
    y.topRows(av.rows()) = av;
    y.bottomRows(bv.rows()) = bv;
    const Eigen::Index na = av.rows(), nb = bv.rows();
    Var out = push(std::move(y), any_grad(a, b));
    on_backward(out, [a, b, out, na, nb](Tape& t) {
      if (t.needs_grad(a)) t.grad_ref(a) += t.grad_of(out).topRows(na);
      if (t.needs_grad(b)) t.grad_ref(b) += t.grad_of(out).bottomRows(nb);
    });
    return out;
  }

  Var slice_rows(Var x, Eigen::Index start, Eigen::Index count) {
    require(start >= 0 && count >= 0 && start + count <= value(x).rows(), "slice_rows: out of range");
    Var out = push(value(x).middleRows(start, count), needs_grad(x));
    on_backward(out, [x, out, start, count](Tape& t) { t.grad_ref(x).middleRows(start, count) += t.grad_of(out); });
    return out;
  }

  // x with the single-row `v` added to row `row`.
  Var add_to_row(Var x, Eigen::Index row, Var v) {
    require(value(v).rows() == 1 && value(v).cols() == value(x).cols() && row >= 0 && row < value(x).rows(),
            "add_to_row: shape mismatch");
    Mat y = value(x);
    y.row(row) += value(v).row(0);
    Var out = push(std::move(y), any_grad(x, v));
    on_backward(out, [x, v, out, row](Tape& t) {
      if (t.needs_grad(x)) t.grad_ref(x) += t.grad_of(out);
      if (t.needs_grad(v)) t.grad_ref(v) += t.grad_of(out).row(row);
    });
    return out;
  }

 private:
  struct Node {
    Mat value;
    Mat grad;  // allocated on first use
    bool needs_grad = false;
    Parameter<Scalar>* param = nullptr;
    std::function<void(Tape&)> backward;
  };

  Var push(Mat value, bool needs_grad) {
    nodes_.push_back(Node{std::move(value), Mat(), needs_grad, nullptr, {}});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  template <typename... Vs>
  bool any_grad(Vs... vs) const {
    return (needs_grad(vs) || ...);
  }

  void on_backward(Var out, std::function<void(Tape&)> fn) {
    if (nodes_[out.id].needs_grad) nodes_[out.id].backward = std::move(fn);
  }

  const Mat& grad_of(Var v) { return grad_ref(v); }

  Mat& grad_ref(Var v) {
    auto& n = nodes_[v.id];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  bool grad_enabled_ = true;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<Scalar>*, Var> leaves_;
};

}  // namespace pmap::ad
