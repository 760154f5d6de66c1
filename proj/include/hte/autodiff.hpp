#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <hte/errors.hpp>

namespace hte::ad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// A matrix value in the computation graph. `grad` stays empty (0x0) until the
// backward pass first touches the node, which doubles as the "gradients
// populated" signal the optimizer checks.
struct Value2D {
  Matrix data;
  Matrix grad;
  bool requires_grad = false;

  Eigen::Index rows() const { return data.rows(); }
  Eigen::Index cols() const { return data.cols(); }

  bool has_grad() const { return grad.size() > 0; }

  Matrix& ensure_grad() {
    if (!has_grad()) grad = Matrix::Zero(data.rows(), data.cols());
    return grad;
  }

  void accumulate(const Matrix& g) { ensure_grad() += g; }

  void clear_grad() { grad.resize(0, 0); }

  double scalar() const {
    if (data.size() != 1) throw DimensionError("scalar(): value is not 1x1");
    return data(0, 0);
  }
};

namespace detail {

inline double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Row-wise softmax with max subtraction; normalizer is strictly positive for
// finite inputs.
inline void softmax_rows_inplace(Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double mx = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - mx).exp();
    m.row(r) /= m.row(r).sum();
  }
}

}  // namespace detail

// Records intermediate nodes in creation order, which is already a valid
// topological order, so backward() is a single reverse sweep. Parameters live
// outside the tape (see ParamStore) and act as leaves; their gradients are
// accumulated in place.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return slots_.size(); }

  void clear() { slots_.clear(); }

  // Leaf node holding input data. Set requires_grad to obtain d(output)/d(input).
  Value2D* input(Matrix data, bool requires_grad = false) {
    Slot& s = push(std::move(data));
    s.value.requires_grad = requires_grad && grad_enabled_;
    return &s.value;
  }

  Value2D* matmul(Value2D* a, Value2D* b) {
    if (a->cols() != b->rows())
      throw DimensionError("matmul: inner dimensions disagree (" +
                           shape(*a) + " x " + shape(*b) + ")");
    Slot& s = push(a->data * b->data);
    if (track(s, {a, b})) {
      s.backward = [a, b](Value2D& out) {
        if (a->requires_grad) a->accumulate(out.grad * b->data.transpose());
        if (b->requires_grad) b->accumulate(a->data.transpose() * out.grad);
      };
    }
    return &s.value;
  }

  Value2D* add(Value2D* a, Value2D* b) {
    require_same_shape("add", *a, *b);
    Slot& s = push(a->data + b->data);
    if (track(s, {a, b})) {
      s.backward = [a, b](Value2D& out) {
        if (a->requires_grad) a->accumulate(out.grad);
        if (b->requires_grad) b->accumulate(out.grad);
      };
    }
    return &s.value;
  }

  Value2D* sub(Value2D* a, Value2D* b) {
    require_same_shape("sub", *a, *b);
    Slot& s = push(a->data - b->data);
    if (track(s, {a, b})) {
      s.backward = [a, b](Value2D& out) {
        if (a->requires_grad) a->accumulate(out.grad);
        if (b->requires_grad) b->accumulate(-out.grad);
      };
    }
    return &s.value;
  }

  // out[i,:] = a[i,:] + bias[0,:]
  Value2D* add_row_broadcast(Value2D* a, Value2D* bias) {
    if (bias->rows() != 1 || bias->cols() != a->cols())
      throw DimensionError("add_row_broadcast: bias must be 1x" +
                           std::to_string(a->cols()) + ", got " + shape(*bias));
    Slot& s = push(a->data.rowwise() + bias->data.row(0));
    if (track(s, {a, bias})) {
      s.backward = [a, bias](Value2D& out) {
        if (a->requires_grad) a->accumulate(out.grad);
        if (bias->requires_grad) bias->accumulate(out.grad.colwise().sum());
      };
    }
    return &s.value;
  }

  Value2D* scale(Value2D* a, double c) {
    Slot& s = push(a->data * c);
    if (track(s, {a})) {
      s.backward = [a, c](Value2D& out) { a->accumulate(out.grad * c); };
    }
    return &s.value;
  }

  Value2D* relu(Value2D* a) {
    Slot& s = push(a->data.cwiseMax(0.0));
    if (track(s, {a})) {
      Matrix mask = (a->data.array() > 0.0).cast<double>();
      s.backward = [a, mask = std::move(mask)](Value2D& out) {
        a->accumulate(out.grad.cwiseProduct(mask));
      };
    }
    return &s.value;
  }

  Value2D* sigmoid(Value2D* a) {
    Matrix y = a->data.unaryExpr([](double x) { return detail::stable_sigmoid(x); });
    Slot& s = push(std::move(y));
    if (track(s, {a})) {
      s.backward = [a](Value2D& out) {
        a->accumulate(out.grad.cwiseProduct(
            out.data.cwiseProduct(Matrix::Ones(out.rows(), out.cols()) - out.data)));
      };
    }
    return &s.value;
  }

  Value2D* concat_cols(Value2D* a, Value2D* b) {
    if (a->rows() != b->rows())
      throw DimensionError("concat_cols: row counts disagree (" + shape(*a) +
                           " vs " + shape(*b) + ")");
    Matrix m(a->rows(), a->cols() + b->cols());
    m.leftCols(a->cols()) = a->data;
    m.rightCols(b->cols()) = b->data;
    Slot& s = push(std::move(m));
    if (track(s, {a, b})) {
      const Eigen::Index ca = a->cols(), cb = b->cols();
      s.backward = [a, b, ca, cb](Value2D& out) {
        if (a->requires_grad) a->accumulate(out.grad.leftCols(ca));
        if (b->requires_grad) b->accumulate(out.grad.rightCols(cb));
      };
    }
    return &s.value;
  }

  // [N*L x c] -> [N x c], averaging each consecutive block of L rows.
  Value2D* mean_pool_rows(Value2D* a, Eigen::Index group) {
    if (group < 1 || a->rows() % group != 0)
      throw DimensionError("mean_pool_rows: row count " + std::to_string(a->rows()) +
                           " not divisible by group " + std::to_string(group));
    const Eigen::Index n = a->rows() / group;
    Matrix m(n, a->cols());
    for (Eigen::Index i = 0; i < n; ++i)
      m.row(i) = a->data.middleRows(i * group, group).colwise().mean();
    Slot& s = push(std::move(m));
    if (track(s, {a})) {
      s.backward = [a, group](Value2D& out) {
        Matrix& g = a->ensure_grad();
        const double inv = 1.0 / static_cast<double>(group);
        for (Eigen::Index i = 0; i < out.rows(); ++i)
          g.middleRows(i * group, group).rowwise() += out.grad.row(i) * inv;
      };
    }
    return &s.value;
  }

  // Per-feature token embedding: token row (i*p + j) = x[i,j] * E[j,:] + B[j,:].
  Value2D* embed_tokens(Value2D* x, Value2D* embed, Value2D* offset) {
    const Eigen::Index n = x->rows(), p = x->cols(), d = embed->cols();
    if (embed->rows() != p || offset->rows() != p || offset->cols() != d)
      throw DimensionError("embed_tokens: expected E,B of shape " +
                           std::to_string(p) + "x" + std::to_string(d));
    Matrix m(n * p, d);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < p; ++j)
        m.row(i * p + j) = x->data(i, j) * embed->data.row(j) + offset->data.row(j);
    Slot& s = push(std::move(m));
    if (track(s, {x, embed, offset})) {
      s.backward = [x, embed, offset, n, p](Value2D& out) {
        for (Eigen::Index i = 0; i < n; ++i) {
          for (Eigen::Index j = 0; j < p; ++j) {
            const auto g = out.grad.row(i * p + j);
            if (embed->requires_grad) embed->ensure_grad().row(j) += x->data(i, j) * g;
            if (offset->requires_grad) offset->ensure_grad().row(j) += g;
            if (x->requires_grad)
              x->ensure_grad()(i, j) += g.dot(embed->data.row(j));
          }
        }
      };
    }
    return &s.value;
  }

  // Scaled dot-product attention over per-sample token blocks. q, k, v are
  // [N*L x d]; each head operates on its own column slice of width d/heads.
  // Attention rows are softmax distributions; the weight matrices are cached
  // for the backward pass and optionally exported for inspection.
  Value2D* attention_mix(Value2D* q, Value2D* k, Value2D* v, Eigen::Index tokens,
                         int heads, std::vector<Matrix>* attn_export = nullptr) {
    const Eigen::Index d = q->cols();
    if (heads < 1 || d % heads != 0)
      throw ConfigError("attention_mix: width " + std::to_string(d) +
                        " not divisible by heads " + std::to_string(heads));
    if (k->rows() != q->rows() || v->rows() != q->rows() || k->cols() != d ||
        v->cols() != d)
      throw DimensionError("attention_mix: q,k,v shapes disagree");
    if (tokens < 1 || q->rows() % tokens != 0)
      throw DimensionError("attention_mix: row count not divisible by token count");

    const Eigen::Index n = q->rows() / tokens;
    const Eigen::Index dh = d / heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));

    auto weights = std::make_shared<std::vector<Matrix>>();
    weights->reserve(static_cast<std::size_t>(n * heads));
    Matrix m(q->rows(), d);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int h = 0; h < heads; ++h) {
        const auto qb = q->data.block(i * tokens, h * dh, tokens, dh);
        const auto kb = k->data.block(i * tokens, h * dh, tokens, dh);
        const auto vb = v->data.block(i * tokens, h * dh, tokens, dh);
        Matrix a = qb * kb.transpose() * sc;
        detail::softmax_rows_inplace(a);
        m.block(i * tokens, h * dh, tokens, dh) = a * vb;
        weights->push_back(std::move(a));
      }
    }
    if (attn_export) *attn_export = *weights;

    Slot& s = push(std::move(m));
    if (track(s, {q, k, v})) {
      s.backward = [q, k, v, weights, n, tokens, heads, dh, sc](Value2D& out) {
        for (Eigen::Index i = 0; i < n; ++i) {
          for (int h = 0; h < heads; ++h) {
            const Matrix& a = (*weights)[static_cast<std::size_t>(i * heads + h)];
            const auto qb = q->data.block(i * tokens, h * dh, tokens, dh);
            const auto kb = k->data.block(i * tokens, h * dh, tokens, dh);
            const auto vb = v->data.block(i * tokens, h * dh, tokens, dh);
            const auto go = out.grad.block(i * tokens, h * dh, tokens, dh);

            Matrix da = go * vb.transpose();
            // softmax backward, row-wise: ds_r = a_r ∘ (da_r - <da_r, a_r>)
            Matrix ds(tokens, tokens);
            for (Eigen::Index r = 0; r < tokens; ++r) {
              const double dot = da.row(r).dot(a.row(r));
              ds.row(r) = a.row(r).cwiseProduct(da.row(r).array() - dot).matrix();
            }
            if (v->requires_grad)
              v->ensure_grad().block(i * tokens, h * dh, tokens, dh) +=
                  a.transpose() * go;
            if (q->requires_grad)
              q->ensure_grad().block(i * tokens, h * dh, tokens, dh) +=
                  sc * ds * kb;
            if (k->requires_grad)
              k->ensure_grad().block(i * tokens, h * dh, tokens, dh) +=
                  sc * ds.transpose() * qb;
          }
        }
      };
    }
    return &s.value;
  }

  // Row-wise factual selection: out[i] = (t[i] == 1 ? y1[i] : y0[i]).
  Value2D* select_rows(Value2D* y0, Value2D* y1, std::vector<int> treat) {
    require_same_shape("select_rows", *y0, *y1);
    if (y0->cols() != 1 || static_cast<std::size_t>(y0->rows()) != treat.size())
      throw DimensionError("select_rows: expected Nx1 columns and N treatments");
    Matrix m(y0->rows(), 1);
    for (Eigen::Index i = 0; i < y0->rows(); ++i)
      m(i, 0) = treat[static_cast<std::size_t>(i)] ? y1->data(i, 0) : y0->data(i, 0);
    Slot& s = push(std::move(m));
    if (track(s, {y0, y1})) {
      s.backward = [y0, y1, treat = std::move(treat)](Value2D& out) {
        for (Eigen::Index i = 0; i < out.rows(); ++i) {
          Value2D* dst = treat[static_cast<std::size_t>(i)] ? y1 : y0;
          if (dst->requires_grad) dst->ensure_grad()(i, 0) += out.grad(i, 0);
        }
      };
    }
    return &s.value;
  }

  // Soft subgroup probabilities from scalar effects: softmax over the negative
  // absolute distances to the centroids. Differentiable route for the optional
  // gradient-through-v configuration.
  Value2D* soft_assign(Value2D* te, Vector centroids) {
    if (te->cols() != 1) throw DimensionError("soft_assign: effects must be Nx1");
    const Eigen::Index n = te->rows(), kk = centroids.size();
    Matrix m(n, kk);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index k = 0; k < kk; ++k)
        m(i, k) = -std::abs(te->data(i, 0) - centroids(k));
    }
    detail::softmax_rows_inplace(m);
    Slot& s = push(std::move(m));
    if (track(s, {te})) {
      s.backward = [te, centroids = std::move(centroids)](Value2D& out) {
        const Eigen::Index kk = centroids.size();
        for (Eigen::Index i = 0; i < out.rows(); ++i) {
          // d v_ik / d te_i = v_ik * (sum_j v_ij s_ij - s_ik), s = sign(te - mu)
          double mixed = 0.0;
          for (Eigen::Index j = 0; j < kk; ++j) {
            const double diff = te->data(i, 0) - centroids(j);
            mixed += out.data(i, j) * (diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0));
          }
          double g = 0.0;
          for (Eigen::Index k = 0; k < kk; ++k) {
            const double diff = te->data(i, 0) - centroids(k);
            const double sk = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
            g += out.grad(i, k) * out.data(i, k) * (mixed - sk);
          }
          te->ensure_grad()(i, 0) += g;
        }
      };
    }
    return &s.value;
  }

  // Mean squared error against a fixed target; gradient is 2(pred - y)/N.
  Value2D* mse_loss(Value2D* pred, Vector target) {
    if (pred->cols() != 1 || pred->rows() != target.size())
      throw DimensionError("mse_loss: prediction/target lengths disagree (" +
                           std::to_string(pred->rows()) + " vs " +
                           std::to_string(target.size()) + ")");
    const double n = static_cast<double>(target.size());
    const Vector diff = pred->data.col(0) - target;
    Slot& s = push(Matrix::Constant(1, 1, diff.squaredNorm() / n));
    if (track(s, {pred})) {
      s.backward = [pred, diff, n](Value2D& out) {
        pred->ensure_grad().col(0) += (2.0 / n) * out.grad(0, 0) * diff;
      };
    }
    return &s.value;
  }

  // Mean binary cross-entropy with both class terms. Probabilities are clamped
  // to [eps, 1-eps] before the logs; gradients are evaluated at the clamped
  // values, so they stay bounded.
  Value2D* bce_loss(Value2D* prob, std::vector<int> target, double eps = 1e-7) {
    if (prob->cols() != 1 || static_cast<std::size_t>(prob->rows()) != target.size())
      throw DimensionError("bce_loss: probability/target lengths disagree");
    const double n = static_cast<double>(target.size());
    Vector clamped(prob->rows());
    double loss = 0.0;
    for (Eigen::Index i = 0; i < prob->rows(); ++i) {
      const double p = std::min(1.0 - eps, std::max(eps, prob->data(i, 0)));
      clamped(i) = p;
      loss -= target[static_cast<std::size_t>(i)] ? std::log(p) : std::log1p(-p);
    }
    Slot& s = push(Matrix::Constant(1, 1, loss / n));
    if (track(s, {prob})) {
      s.backward = [prob, clamped = std::move(clamped), target = std::move(target),
                    n](Value2D& out) {
        Matrix& g = prob->ensure_grad();
        for (Eigen::Index i = 0; i < prob->rows(); ++i) {
          const double p = clamped(i);
          const double t = target[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
          g(i, 0) += out.grad(0, 0) * (-(t / p) + (1.0 - t) / (1.0 - p)) / n;
        }
      };
    }
    return &s.value;
  }

  // sum(a ∘ w) as a 1x1 node; handy for reducing arbitrary outputs to a scalar.
  Value2D* weighted_sum(Value2D* a, Matrix w) {
    require_same_shape_m("weighted_sum", *a, w);
    Slot& s = push(Matrix::Constant(1, 1, a->data.cwiseProduct(w).sum()));
    if (track(s, {a})) {
      s.backward = [a, w = std::move(w)](Value2D& out) {
        a->accumulate(out.grad(0, 0) * w);
      };
    }
    return &s.value;
  }

  // Reverse sweep from `root`, which is seeded with a gradient of ones.
  void backward(Value2D* root) {
    if (!grad_enabled_) throw StateError("backward: tape was built with gradients disabled");
    root->ensure_grad().setOnes();
    for (auto it = slots_.rbegin(); it != slots_.rend(); ++it) {
      if (it->backward && it->value.has_grad()) it->backward(it->value);
    }
  }

 private:
  struct Slot {
    Value2D value;
    std::function<void(Value2D&)> backward;
  };

  Slot& push(Matrix data) {
    slots_.emplace_back();
    slots_.back().value.data = std::move(data);
    return slots_.back();
  }

  // Marks the slot's value as gradient-bearing when any parent needs it.
  bool track(Slot& s, std::initializer_list<Value2D*> parents) {
    if (!grad_enabled_) return false;
    for (Value2D* p : parents) {
      if (p->requires_grad) {
        s.value.requires_grad = true;
        return true;
      }
    }
    return false;
  }

  static std::string shape(const Value2D& v) {
    return std::to_string(v.rows()) + "x" + std::to_string(v.cols());
  }

  static void require_same_shape(const char* op, const Value2D& a, const Value2D& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
      throw DimensionError(std::string(op) + ": shapes disagree (" + shape(a) +
                           " vs " + shape(b) + ")");
  }

  static void require_same_shape_m(const char* op, const Value2D& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
      throw DimensionError(std::string(op) + ": shapes disagree");
  }

  bool grad_enabled_;
  std::deque<Slot> slots_;
};

}  // namespace hte::ad
