#pragma once

#include <cmath>
#include <deque>
#include <string>
#include <unordered_map>
#include <vector>

#include <hte/autodiff.hpp>
#include <hte/errors.hpp>
#include <hte/hashing.hpp>
#include <hte/rng.hpp>

namespace hte::nn {

using ad::Matrix;
using ad::Tape;
using ad::Value2D;

// Owns every learnable parameter under a stable unique name, in a stable
// insertion order (iteration order matters for determinism and hashing).
class ParamStore {
 public:
  // Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
  Value2D* create(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                  Eigen::Index fan_in, RngStream& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Value2D* p = emplace(name, rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) p->data(i, j) = rng.uniform(-bound, bound);
    return p;
  }

  Value2D* create_zeros(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    return emplace(name, rows, cols);
  }

  Value2D* find(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("ParamStore: unknown parameter " + name);
    return it->second;
  }

  const Value2D* find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("ParamStore: unknown parameter " + name);
    return it->second;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t size() const { return entries_.size(); }

  const std::vector<std::string>& names() const { return order_; }

  // theta <- theta - lr * grad, then gradients are dropped. Throws when no
  // parameter carries a gradient, i.e. no backward pass happened since the
  // last step.
  void sgd_step(double lr) {
    bool any = false;
    for (auto& e : entries_) {
      if (e.value.has_grad()) {
        any = true;
        e.value.data -= lr * e.value.grad;
      }
    }
    if (!any) throw StateError("sgd_step: no gradients populated");
    clear_grads();
  }

  void clear_grads() {
    for (auto& e : entries_) e.value.clear_grad();
  }

  bool any_grad() const {
    for (const auto& e : entries_) {
      if (e.value.has_grad()) return true;
    }
    return false;
  }

  // Snapshot / restore of raw parameter values (used for best-epoch selection).
  std::vector<Matrix> snapshot() const {
    std::vector<Matrix> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.value.data);
    return out;
  }

  void restore(const std::vector<Matrix>& snap) {
    if (snap.size() != entries_.size())
      throw StateError("ParamStore::restore: snapshot size mismatch");
    std::size_t i = 0;
    for (auto& e : entries_) e.value.data = snap[i++];
  }

  std::uint64_t content_hash() const {
    Fnv1a h;
    for (const auto& e : entries_) {
      h.update(e.name);
      h.update_int(e.value.rows());
      h.update_int(e.value.cols());
      h.update(e.value.data.data(), sizeof(double) * static_cast<std::size_t>(e.value.data.size()));
    }
    return h.digest();
  }

  template <typename Fn>
  void for_each(Fn&& fn) const {
    for (const auto& e : entries_) fn(e.name, e.value);
  }

 private:
  struct Entry {
    std::string name;
    Value2D value;
  };

  Value2D* emplace(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    if (index_.count(name)) throw ConfigError("ParamStore: duplicate parameter " + name);
    entries_.emplace_back();
    Entry& e = entries_.back();
    e.name = name;
    e.value.data = Matrix::Zero(rows, cols);
    e.value.requires_grad = true;
    index_[name] = &e.value;
    order_.push_back(name);
    return &e.value;
  }

  std::deque<Entry> entries_;
  std::vector<std::string> order_;
  std::unordered_map<std::string, Value2D*> index_;
};

// y = xW + b
struct Dense {
  Value2D* weight = nullptr;
  Value2D* bias = nullptr;

  static Dense create(ParamStore& params, const std::string& prefix, Eigen::Index in,
                      Eigen::Index out, RngStream& rng) {
    Dense d;
    d.weight = params.create(prefix + ".W", in, out, in, rng);
    d.bias = params.create(prefix + ".b", 1, out, in, rng);
    return d;
  }

  Value2D* forward(Tape& tape, Value2D* x) const {
    return tape.add_row_broadcast(tape.matmul(x, weight), bias);
  }
};

// Turns a covariate row into p tokens of width d: token_j = x_j * E_j + B_j.
struct FeatureEmbedding {
  Value2D* scale = nullptr;   // [p x d]
  Value2D* offset = nullptr;  // [p x d]

  static FeatureEmbedding create(ParamStore& params, const std::string& prefix,
                                 Eigen::Index features, Eigen::Index dim, RngStream& rng) {
    FeatureEmbedding e;
    e.scale = params.create(prefix + ".E", features, dim, 1, rng);
    e.offset = params.create(prefix + ".B", features, dim, 1, rng);
    return e;
  }

  // [N x p] -> [N*p x d]
  Value2D* forward(Tape& tape, Value2D* x) const {
    return tape.embed_tokens(x, scale, offset);
  }
};

// Multi-head self-attention with learned Q/K/V/output projections.
struct SelfAttention {
  Dense q, k, v, out;
  int heads = 1;

  static SelfAttention create(ParamStore& params, const std::string& prefix,
                              Eigen::Index dim, int heads, RngStream& rng) {
    if (heads < 1 || dim % heads != 0)
      throw ConfigError("SelfAttention: dim " + std::to_string(dim) +
                        " not divisible by heads " + std::to_string(heads));
    SelfAttention a;
    a.heads = heads;
    a.q = Dense::create(params, prefix + ".q", dim, dim, rng);
    a.k = Dense::create(params, prefix + ".k", dim, dim, rng);
    a.v = Dense::create(params, prefix + ".v", dim, dim, rng);
    a.out = Dense::create(params, prefix + ".o", dim, dim, rng);
    return a;
  }

  // tokens is [N*L x d]; attn_export receives the N*heads attention matrices.
  Value2D* forward(Tape& tape, Value2D* tokens, Eigen::Index token_count,
                   std::vector<Matrix>* attn_export = nullptr) const {
    Value2D* mixed = tape.attention_mix(q.forward(tape, tokens), k.forward(tape, tokens),
                                        v.forward(tape, tokens), token_count, heads,
                                        attn_export);
    return out.forward(tape, mixed);
  }
};

// Self-attention followed by a ReLU feed-forward pair, each with a residual
// connection.
struct EncoderBlock {
  SelfAttention attn;
  Dense ff1, ff2;

  static EncoderBlock create(ParamStore& params, const std::string& prefix,
                             Eigen::Index dim, int heads, RngStream& rng) {
    EncoderBlock b;
    b.attn = SelfAttention::create(params, prefix + ".attn", dim, heads, rng);
    b.ff1 = Dense::create(params, prefix + ".ff1", dim, dim, rng);
    b.ff2 = Dense::create(params, prefix + ".ff2", dim, dim, rng);
    return b;
  }

  Value2D* forward(Tape& tape, Value2D* tokens, Eigen::Index token_count,
                   std::vector<Matrix>* attn_export = nullptr) const {
    Value2D* h = tape.add(tokens, attn.forward(tape, tokens, token_count, attn_export));
    Value2D* ff = ff2.forward(tape, tape.relu(ff1.forward(tape, h)));
    return tape.add(h, ff);
  }
};

}  // namespace hte::nn
