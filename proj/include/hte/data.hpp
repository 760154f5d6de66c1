#pragma once

#include <Eigen/Dense>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <hte/errors.hpp>
#include <hte/rng.hpp>

namespace hte::data {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Provenance { synthetic, semi_synthetic, external };

inline const char* provenance_name(Provenance p) {
  switch (p) {
    case Provenance::synthetic: return "synthetic";
    case Provenance::semi_synthetic: return "semi-synthetic";
    default: return "external";
  }
}

// Columnar sample store: covariates, binary treatment, factual outcome and,
// when available, the true potential outcomes used only for evaluation.
struct Dataset {
  MatrixXd x;          // [n x p]
  std::vector<int> t;  // 0/1
  VectorXd y;
  VectorXd mu0, mu1;   // empty unless has_truth
  bool has_truth = false;
  Provenance provenance = Provenance::synthetic;
  std::vector<std::string> feature_names;

  Eigen::Index n() const { return x.rows(); }
  Eigen::Index p() const { return x.cols(); }
};

struct SplitIndices {
  std::vector<int> train, dev, test;
};

// Per-feature affine scaler; fit on the training split, applied everywhere.
struct Standardizer {
  VectorXd mean, stddev;

  static Standardizer fit(const MatrixXd& x, const std::vector<int>& rows) {
    if (rows.empty()) throw DataError("Standardizer: empty fitting split");
    Standardizer s;
    s.mean = VectorXd::Zero(x.cols());
    s.stddev = VectorXd::Zero(x.cols());
    for (int r : rows) s.mean += x.row(r).transpose();
    s.mean /= static_cast<double>(rows.size());
    for (int r : rows)
      s.stddev += (x.row(r).transpose() - s.mean).array().square().matrix();
    s.stddev = (s.stddev / static_cast<double>(rows.size())).array().sqrt();
    for (Eigen::Index j = 0; j < s.stddev.size(); ++j)
      if (s.stddev(j) <= 0.0) s.stddev(j) = 1.0;  // constant feature
    return s;
  }

  static Standardizer fit_all(const MatrixXd& x) {
    std::vector<int> rows(static_cast<std::size_t>(x.rows()));
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<int>(i);
    return fit(x, rows);
  }

  MatrixXd apply(const MatrixXd& x) const {
    if (x.cols() != mean.size()) throw DimensionError("Standardizer: feature count mismatch");
    MatrixXd out = x;
    out.rowwise() -= mean.transpose();
    for (Eigen::Index j = 0; j < out.cols(); ++j) out.col(j) /= stddev(j);
    return out;
  }
};

// Simulated potential outcomes on standardized covariates:
//   mu0 = exp((Xs + 0.5) beta),  mu1 = Xs beta - omega,
// with beta drawn per feature from {0, .1, .2, .3, .4} with probabilities
// {.6, .1, .1, .1, .1} and omega calibrated on the treated group.
struct SurfaceOutcomes {
  VectorXd mu0, mu1;  // noiseless means
  VectorXd y0, y1;    // means plus unit normal noise
  VectorXd beta;
  double omega = 0.0;
};

// Noiseless surface means for given coefficients; xs must already be
// standardized per feature.
inline std::pair<VectorXd, VectorXd> surface_means(const MatrixXd& xs, const VectorXd& beta,
                                                   double omega) {
  if (xs.rows() == 0 || xs.cols() == 0) throw DimensionError("surface_means: empty covariates");
  if (beta.size() != xs.cols()) throw DimensionError("surface_means: beta length mismatch");
  const VectorXd xb = xs * beta;
  const VectorXd mu0 = ((xs.array() + 0.5).matrix() * beta).array().exp();
  const VectorXd mu1 = xb.array() - omega;
  return {mu0, mu1};
}

// Full outcome simulation. `treated` marks the samples whose mean effect is
// calibrated to 4; when empty, the calibration averages over all samples.
// Covariates are standardized internally over the given rows.
inline SurfaceOutcomes response_surface_b(const MatrixXd& x, const std::vector<int>& treated,
                                          RngStream& rng) {
  if (x.rows() == 0 || x.cols() == 0)
    throw DimensionError("response_surface_b: empty covariate matrix");
  const MatrixXd xs = Standardizer::fit_all(x).apply(x);

  SurfaceOutcomes out;
  out.beta = VectorXd::Zero(x.cols());
  static const double kLevels[] = {0.0, 0.1, 0.2, 0.3, 0.4};
  static const std::vector<double> kWeights = {0.6, 0.1, 0.1, 0.1, 0.1};
  for (Eigen::Index j = 0; j < x.cols(); ++j) out.beta(j) = kLevels[rng.discrete(kWeights)];

  auto [mu0_raw, mu1_raw] = surface_means(xs, out.beta, 0.0);
  double effect_sum = 0.0;
  double count = 0.0;
  if (treated.empty()) {
    effect_sum = (mu1_raw - mu0_raw).sum();
    count = static_cast<double>(x.rows());
  } else {
    if (treated.size() != static_cast<std::size_t>(x.rows()))
      throw DimensionError("response_surface_b: treatment vector length mismatch");
    for (std::size_t i = 0; i < treated.size(); ++i) {
      if (treated[i]) {
        effect_sum += mu1_raw(static_cast<Eigen::Index>(i)) - mu0_raw(static_cast<Eigen::Index>(i));
        count += 1.0;
      }
    }
    if (count == 0.0) {  // no treated samples; calibrate over everyone
      effect_sum = (mu1_raw - mu0_raw).sum();
      count = static_cast<double>(x.rows());
    }
  }
  out.omega = effect_sum / count - 4.0;

  out.mu0 = mu0_raw;
  out.mu1 = mu1_raw.array() - out.omega;
  out.y0 = out.mu0;
  out.y1 = out.mu1;
  for (Eigen::Index i = 0; i < x.rows(); ++i) out.y0(i) += rng.normal();
  for (Eigen::Index i = 0; i < x.rows(); ++i) out.y1(i) += rng.normal();
  return out;
}

struct SyntheticParams {
  Eigen::Index n_case = 500;
  Eigen::Index n_control = 500;
  Eigen::Index p = 10;
  bool confounded = false;  // assign t by sigmoid(x.c) instead of by construction
};

// Synthetic cohort: covariate j ~ Normal(m_j, s_j) with m_j ~ U(-1,1) and
// s_j ~ U(0.5, 1.5) drawn once per dataset, outcomes from Response Surface B.
inline Dataset generate_synthetic(const SyntheticParams& params, RngStream& rng) {
  if (params.p < 1) throw DataError("generate_synthetic: need p >= 1");
  const Eigen::Index n = params.n_case + params.n_control;
  if (n < 1) throw DataError("generate_synthetic: need at least one sample");

  VectorXd m(params.p), s(params.p);
  for (Eigen::Index j = 0; j < params.p; ++j) m(j) = rng.uniform(-1.0, 1.0);
  for (Eigen::Index j = 0; j < params.p; ++j) s(j) = rng.uniform(0.5, 1.5);

  Dataset d;
  d.provenance = Provenance::synthetic;
  d.x.resize(n, params.p);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < params.p; ++j) d.x(i, j) = rng.normal(m(j), s(j));

  d.t.assign(static_cast<std::size_t>(n), 0);
  if (params.confounded) {
    VectorXd c(params.p);
    for (Eigen::Index j = 0; j < params.p; ++j) c(j) = rng.uniform(-1.0, 1.0);
    const MatrixXd xs = Standardizer::fit_all(d.x).apply(d.x);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double logit = xs.row(i).dot(c.transpose());
      d.t[static_cast<std::size_t>(i)] = rng.bernoulli(1.0 / (1.0 + std::exp(-logit))) ? 1 : 0;
    }
  } else {
    for (Eigen::Index i = 0; i < params.n_case; ++i) d.t[static_cast<std::size_t>(i)] = 1;
  }

  const SurfaceOutcomes so = response_surface_b(d.x, d.t, rng);
  d.mu0 = so.mu0;
  d.mu1 = so.mu1;
  d.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i)
    d.y(i) = d.t[static_cast<std::size_t>(i)] ? so.y1(i) : so.y0(i);
  d.has_truth = true;
  d.feature_names.clear();
  for (Eigen::Index j = 0; j < params.p; ++j)
    d.feature_names.push_back("f" + std::to_string(j));
  return d;
}

// Shuffled 6:2:2 split: floor(0.6 n) train, floor(0.2 n) dev, remainder test.
inline SplitIndices split_6_2_2(Eigen::Index n, RngStream& rng) {
  if (n < 5) throw DataError("split_6_2_2: need at least 5 samples, got " + std::to_string(n));
  std::vector<int> order(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  rng.shuffle(order);
  const auto n_train = static_cast<std::size_t>(0.6 * static_cast<double>(n));
  const auto n_dev = static_cast<std::size_t>(0.2 * static_cast<double>(n));
  SplitIndices s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.dev.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
               order.begin() + static_cast<std::ptrdiff_t>(n_train + n_dev));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_dev), order.end());
  return s;
}

inline Dataset subset(const Dataset& d, const std::vector<int>& rows) {
  Dataset out;
  out.provenance = d.provenance;
  out.has_truth = d.has_truth;
  out.feature_names = d.feature_names;
  out.x.resize(static_cast<Eigen::Index>(rows.size()), d.p());
  out.y.resize(static_cast<Eigen::Index>(rows.size()));
  if (d.has_truth) {
    out.mu0.resize(static_cast<Eigen::Index>(rows.size()));
    out.mu1.resize(static_cast<Eigen::Index>(rows.size()));
  }
  out.t.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const int r = rows[i];
    out.x.row(static_cast<Eigen::Index>(i)) = d.x.row(r);
    out.t[i] = d.t[static_cast<std::size_t>(r)];
    out.y(static_cast<Eigen::Index>(i)) = d.y(r);
    if (d.has_truth) {
      out.mu0(static_cast<Eigen::Index>(i)) = d.mu0(r);
      out.mu1(static_cast<Eigen::Index>(i)) = d.mu1(r);
    }
  }
  return out;
}

// --- CSV ---------------------------------------------------------------

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Header `f0..f{p-1},t[,y][,mu0,mu1]`, one sample per line, UTF-8, '.' decimal.
inline void write_csv(const std::string& path, const Dataset& d) {
  std::ofstream out(path);
  if (!out) throw DataError("write_csv: cannot open " + path);
  for (Eigen::Index j = 0; j < d.p(); ++j) {
    out << (j < static_cast<Eigen::Index>(d.feature_names.size())
                ? d.feature_names[static_cast<std::size_t>(j)]
                : "f" + std::to_string(j));
    out << ',';
  }
  out << "t,y";
  if (d.has_truth) out << ",mu0,mu1";
  out << '\n';
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    for (Eigen::Index j = 0; j < d.p(); ++j) out << format_double(d.x(i, j)) << ',';
    out << d.t[static_cast<std::size_t>(i)] << ',' << format_double(d.y(i));
    if (d.has_truth) out << ',' << format_double(d.mu0(i)) << ',' << format_double(d.mu1(i));
    out << '\n';
  }
  if (!out) throw DataError("write_csv: write failure on " + path);
}

namespace detail {

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_double(const std::string& s, std::size_t row, const std::string& col) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError("csv: cannot parse value '" + s + "' in column " + col + " at data row " +
                    std::to_string(row));
  }
}

}  // namespace detail

// Loads a covariate CSV. Columns named `t` (or `treatment_col`), `y`, `mu0`,
// `mu1` are treated specially; every other column is a feature. When the
// true-outcome columns are absent the outcomes (including y) are re-simulated
// with Response Surface B over the file's covariates — semi-synthetic mode.
inline Dataset load_external_csv(const std::string& path, RngStream& rng,
                                 const std::string& treatment_col = "t") {
  std::ifstream in(path);
  if (!in) throw DataError("load_external_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("load_external_csv: empty file " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();

  const std::vector<std::string> header = detail::split_line(line);
  int t_col = -1, y_col = -1, mu0_col = -1, mu1_col = -1;
  std::vector<int> feature_cols;
  std::vector<std::string> feature_names;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string& name = header[c];
    if (name == treatment_col) {
      t_col = static_cast<int>(c);
    } else if (name == "y") {
      y_col = static_cast<int>(c);
    } else if (name == "mu0") {
      mu0_col = static_cast<int>(c);
    } else if (name == "mu1") {
      mu1_col = static_cast<int>(c);
    } else {
      feature_cols.push_back(static_cast<int>(c));
      feature_names.push_back(name);
    }
  }
  if (t_col < 0)
    throw DataError("load_external_csv: missing treatment column '" + treatment_col + "' in " + path);
  if (feature_cols.empty()) throw DataError("load_external_csv: no feature columns in " + path);

  std::vector<std::vector<double>> rows;
  std::vector<int> treat;
  std::vector<double> ys, mu0s, mu1s;
  std::size_t row_no = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++row_no;
    const std::vector<std::string> cells = detail::split_line(line);
    if (cells.size() != header.size())
      throw DataError("load_external_csv: data row " + std::to_string(row_no) + " has " +
                      std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(header.size()));
    std::vector<double> feats;
    feats.reserve(feature_cols.size());
    for (std::size_t j = 0; j < feature_cols.size(); ++j)
      feats.push_back(detail::parse_double(cells[static_cast<std::size_t>(feature_cols[j])],
                                           row_no, feature_names[j]));
    rows.push_back(std::move(feats));
    const double tv = detail::parse_double(cells[static_cast<std::size_t>(t_col)], row_no,
                                           treatment_col);
    if (tv != 0.0 && tv != 1.0)
      throw DataError("load_external_csv: non-binary treatment at data row " +
                      std::to_string(row_no));
    treat.push_back(tv == 1.0 ? 1 : 0);
    if (y_col >= 0)
      ys.push_back(detail::parse_double(cells[static_cast<std::size_t>(y_col)], row_no, "y"));
    if (mu0_col >= 0)
      mu0s.push_back(detail::parse_double(cells[static_cast<std::size_t>(mu0_col)], row_no, "mu0"));
    if (mu1_col >= 0)
      mu1s.push_back(detail::parse_double(cells[static_cast<std::size_t>(mu1_col)], row_no, "mu1"));
  }
  if (rows.empty()) throw DataError("load_external_csv: no data rows in " + path);

  Dataset d;
  d.feature_names = feature_names;
  d.x.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(feature_cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      d.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  d.t = std::move(treat);

  const bool have_truth = mu0_col >= 0 && mu1_col >= 0;
  if (have_truth) {
    if (y_col < 0)
      throw DataError("load_external_csv: mu0/mu1 present but y missing in " + path);
    d.y = Eigen::Map<VectorXd>(ys.data(), static_cast<Eigen::Index>(ys.size()));
    d.mu0 = Eigen::Map<VectorXd>(mu0s.data(), static_cast<Eigen::Index>(mu0s.size()));
    d.mu1 = Eigen::Map<VectorXd>(mu1s.data(), static_cast<Eigen::Index>(mu1s.size()));
    d.has_truth = true;
    d.provenance = Provenance::external;
  } else {
    const SurfaceOutcomes so = response_surface_b(d.x, d.t, rng);
    d.mu0 = so.mu0;
    d.mu1 = so.mu1;
    d.y.resize(d.n());
    for (Eigen::Index i = 0; i < d.n(); ++i)
      d.y(i) = d.t[static_cast<std::size_t>(i)] ? so.y1(i) : so.y0(i);
    d.has_truth = true;
    d.provenance = Provenance::semi_synthetic;
  }
  return d;
}

}  // namespace hte::data
