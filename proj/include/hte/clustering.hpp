#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include <hte/errors.hpp>
#include <hte/hashing.hpp>
#include <hte/rng.hpp>

namespace hte::cluster {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// K scalar centroids over pre-subgrouping treatment effects, plus the kernel
// bandwidth used by the drift adjustment. Centroids persist across batches
// and epochs (online mini-batch updates).
struct CentroidSet {
  VectorXd mu;
  double bandwidth = 1.0;
  bool initialized = false;

  Eigen::Index k() const { return mu.size(); }

  std::uint64_t content_hash() const {
    Fnv1a h;
    h.update_int(static_cast<std::int64_t>(mu.size()));
    h.update(mu.data(), sizeof(double) * static_cast<std::size_t>(mu.size()));
    h.update(bandwidth);
    h.update_int(static_cast<int>(initialized));
    return h.digest();
  }
};

namespace detail {

// Linear-interpolation percentile (the numpy default); q in [0,1].
inline double percentile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  if (sorted.size() == 1) return sorted[0];
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

}  // namespace detail

// Silverman's rule of thumb over the batch, floored at 1e-3 so the kernel
// bandwidth stays strictly positive on degenerate batches.
inline double default_bandwidth(const VectorXd& values) {
  const Eigen::Index n = values.size();
  if (n < 2) return 1e-3;
  const double mean = values.mean();
  const double var = (values.array() - mean).square().sum() / static_cast<double>(n - 1);
  const double sd = std::sqrt(var);
  std::vector<double> sorted(values.data(), values.data() + n);
  std::sort(sorted.begin(), sorted.end());
  const double iqr =
      detail::percentile_sorted(sorted, 0.75) - detail::percentile_sorted(sorted, 0.25);
  double spread = sd;
  if (iqr > 0.0) spread = std::min(spread, iqr / 1.34);
  const double h = 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
  return std::max(h, 1e-3);
}

// k-means++ seeding over a scalar batch: the first centroid is drawn uniformly
// from the batch, each further one with probability proportional to the
// squared distance to its nearest already-chosen centroid. A batch of
// duplicates collapses the remaining mass to a uniform draw.
inline CentroidSet init_kmeanspp(const VectorXd& effects, Eigen::Index k, RngStream& rng) {
  if (k < 1) throw ConfigError("init_kmeanspp: need K >= 1");
  if (effects.size() < k)
    throw DataError("init_kmeanspp: batch of " + std::to_string(effects.size()) +
                    " smaller than K=" + std::to_string(k));
  const std::size_t n = static_cast<std::size_t>(effects.size());

  CentroidSet c;
  c.mu.resize(k);
  c.mu(0) = effects(static_cast<Eigen::Index>(rng.uniform_index(n)));

  std::vector<double> d2(n);
  for (Eigen::Index next = 1; next < k; ++next) {
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < next; ++j)
        best = std::min(best, std::abs(effects(static_cast<Eigen::Index>(i)) - c.mu(j)));
      d2[i] = best * best;
    }
    c.mu(next) = effects(static_cast<Eigen::Index>(rng.discrete(d2)));
  }
  c.bandwidth = default_bandwidth(effects);
  c.initialized = true;
  return c;
}

// KDE drift correction: each centroid is shifted by the kernel-weighted mean
// displacement of the batch around it,
//   Kernel(te_i, mu_k) = exp(-((te_i - mu_k)/h)^2 / 2), normalized over i,
//   Diff(te, mu_k)     = sum_i Kernel(te_i, mu_k) * (te_i - mu_k),
// which moves stale centroids toward the current effect density before
// assignment. The exponents are max-shifted so the normalizer stays positive
// even when the whole batch is far from a centroid.
inline VectorXd kde_adjust(const CentroidSet& centroids, const VectorXd& effects) {
  if (!centroids.initialized) throw StateError("kde_adjust: centroids not initialized");
  if (effects.size() == 0) throw DataError("kde_adjust: empty batch");
  const double h = centroids.bandwidth;
  VectorXd adjusted(centroids.k());
  VectorXd expo(effects.size());
  for (Eigen::Index k = 0; k < centroids.k(); ++k) {
    const double mu = centroids.mu(k);
    for (Eigen::Index i = 0; i < effects.size(); ++i) {
      const double z = (effects(i) - mu) / h;
      expo(i) = -0.5 * z * z;
    }
    const double shift = expo.maxCoeff();
    const VectorXd w = (expo.array() - shift).exp();
    const double diff = (w.array() * (effects.array() - mu)).sum() / w.sum();
    adjusted(k) = mu + diff;
  }
  return adjusted;
}

// Nearest-centroid hard assignment; ties break toward the lowest index.
inline std::vector<int> hard_assign(const VectorXd& centroids, const VectorXd& effects) {
  if (centroids.size() == 0) throw ConfigError("hard_assign: no centroids");
  std::vector<int> assign(static_cast<std::size_t>(effects.size()));
  for (Eigen::Index i = 0; i < effects.size(); ++i) {
    int best = 0;
    double best_d = std::abs(effects(i) - centroids(0));
    for (Eigen::Index k = 1; k < centroids.size(); ++k) {
      const double d = std::abs(effects(i) - centroids(k));
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(k);
      }
    }
    assign[static_cast<std::size_t>(i)] = best;
  }
  return assign;
}

inline MatrixXd to_one_hot(const std::vector<int>& assign, Eigen::Index k) {
  MatrixXd m = MatrixXd::Zero(static_cast<Eigen::Index>(assign.size()), k);
  for (std::size_t i = 0; i < assign.size(); ++i)
    m(static_cast<Eigen::Index>(i), assign[i]) = 1.0;
  return m;
}

// Mini-batch centroid update: a cluster that received samples moves to their
// mean; an empty cluster keeps its drift-adjusted position, so the number of
// usable centroids never shrinks.
inline void update_centroids(CentroidSet& centroids, const VectorXd& adjusted,
                             const std::vector<int>& assign, const VectorXd& effects) {
  if (!centroids.initialized) throw StateError("update_centroids: centroids not initialized");
  if (adjusted.size() != centroids.k())
    throw DimensionError("update_centroids: adjusted centroid count mismatch");
  if (assign.size() != static_cast<std::size_t>(effects.size()))
    throw DimensionError("update_centroids: assignment/batch size mismatch");
  VectorXd sum = VectorXd::Zero(centroids.k());
  VectorXd count = VectorXd::Zero(centroids.k());
  for (std::size_t i = 0; i < assign.size(); ++i) {
    const int k = assign[i];
    if (k < 0 || k >= centroids.k())
      throw DimensionError("update_centroids: assignment index out of range");
    sum(k) += effects(static_cast<Eigen::Index>(i));
    count(k) += 1.0;
  }
  for (Eigen::Index k = 0; k < centroids.k(); ++k)
    centroids.mu(k) = count(k) > 0.0 ? sum(k) / count(k) : adjusted(k);
}

// Soft subgroup probabilities: softmax over negative absolute distances,
//   v_ik = exp(-|te_i - mu_k|) / sum_j exp(-|te_i - mu_j|).
// Rows are valid distributions; argmax agrees with hard_assign.
inline MatrixXd soft_probabilities(const CentroidSet& centroids, const VectorXd& effects) {
  if (!centroids.initialized)
    throw StateError("soft_probabilities: centroids not initialized");
  MatrixXd v(effects.size(), centroids.k());
  for (Eigen::Index i = 0; i < effects.size(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < centroids.k(); ++k) {
      v(i, k) = -std::abs(effects(i) - centroids.mu(k));
      mx = std::max(mx, v(i, k));
    }
    v.row(i) = (v.row(i).array() - mx).exp();
    v.row(i) /= v.row(i).sum();
  }
  return v;
}

}  // namespace hte::cluster
