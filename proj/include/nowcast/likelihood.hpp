#pragma once
// Likelihood functionals and error metrics: observed/complete log-likelihood,
// the EM objectives q_occ / q_rep, and the two ASE metrics.  All record sums
// use pairwise accumulation so totals are reproducible to ~1e-12 regardless
// of record count.

#include "nowcast/core.hpp"

#include <cmath>
#include <functional>

namespace nowcast {

// ------------------------------------------------------------ accumulation

namespace detail {
template <typename F>
double pairwise_sum_impl(Index lo, Index len, const F& term) {
  if (len <= 32) {
    double s = 0;
    for (Index k = 0; k < len; ++k) s += term(lo + k);
    return s;
  }
  Index half = len / 2;
  return pairwise_sum_impl(lo, half, term) + pairwise_sum_impl(lo + half, len - half, term);
}
}  // namespace detail

// pairwise reduction of term(0..n-1)
template <typename F>
double pairwise_sum_terms(Index n, const F& term) {
  return n <= 0 ? 0.0 : detail::pairwise_sum_impl(0, n, term);
}

template <typename Derived>
double pairwise_sum(const Eigen::DenseBase<Derived>& v) {
  return pairwise_sum_terms(v.size(), [&](Index i) { return double(v.derived()(i)); });
}

// ------------------------------------------------------------ softmax

template <typename Derived>
double log_sum_exp(const Eigen::DenseBase<Derived>& v) {
  double m = v.derived().maxCoeff();
  double s = 0;
  for (Index i = 0; i < v.size(); ++i) s += std::exp(double(v.derived()(i)) - m);
  return m + std::log(s);
}

// row-wise softmax of a score matrix, log-sum-exp guarded
inline Matrix softmax_rows(const Matrix& scores) {
  Matrix p(scores.rows(), scores.cols());
  for (Index i = 0; i < scores.rows(); ++i) {
    double lse = log_sum_exp(scores.row(i));
    for (Index j = 0; j < scores.cols(); ++j) p(i, j) = std::exp(scores(i, j) - lse);
  }
  return p;
}

// ------------------------------------------------------------ likelihoods

struct LikelihoodValue {
  double value = 0;     // natural-log scale
  Index n_terms = 0;    // number of (record, delay) cells contributing
};

// log(N!) for integer or fractional N
inline double log_factorial(double n) { return std::lgamma(n + 1.0); }

// Sum_i Sum_{j<=tau_i} [ -lambda_i p_ij + N_ij log lambda_i + N_ij log p_ij - log(N_ij!) ]
inline LikelihoodValue observed_ll(const ParameterEstimates& est, const Dataset& data,
                                   const std::vector<Index>& rows) {
  if (est.n() != data.n() || est.d() != data.d())
    throw std::invalid_argument("observed_ll: estimate/data sizes disagree");
  Index cells = 0;
  for (Index r : rows) cells += data.tau_i(r);
  double v = pairwise_sum_terms(static_cast<Index>(rows.size()), [&](Index k) {
    const Index i = rows[static_cast<size_t>(k)];
    const double lam = est.lambda(i);
    const double loglam = std::log(lam);
    double s = 0;
    for (Index j = 0; j < data.tau_i(i); ++j) {
      const double nij = data.counts(i, j);
      const double pij = est.p(i, j);
      s -= lam * pij;
      if (nij > 0) {
        if (pij <= 0) throw NumericError("observed_ll: p <= 0 with positive count");
        s += nij * loglam + nij * std::log(pij) - log_factorial(nij);
      }
    }
    return s;
  });
  return {v, cells};
}

inline LikelihoodValue observed_ll(const ParameterEstimates& est, const Dataset& data) {
  return observed_ll(est, data, all_rows(data));
}

// Sum_i [ -lambda_i + N_i log lambda_i + Sum_j ( N_ij log p_ij - log(N_ij!) ) ]
inline LikelihoodValue complete_ll(const ParameterEstimates& est, const Matrix& completed,
                                   const std::vector<Index>& rows) {
  if (est.n() != completed.rows() || est.d() != completed.cols())
    throw std::invalid_argument("complete_ll: estimate/data sizes disagree");
  double v = pairwise_sum_terms(static_cast<Index>(rows.size()), [&](Index k) {
    const Index i = rows[static_cast<size_t>(k)];
    const double lam = est.lambda(i);
    const double ni = completed.row(i).sum();
    double s = -lam;
    if (ni > 0) s += ni * std::log(lam);
    for (Index j = 0; j < completed.cols(); ++j) {
      const double nij = completed(i, j);
      if (nij > 0) {
        const double pij = est.p(i, j);
        if (pij <= 0) throw NumericError("complete_ll: p <= 0 with positive count");
        s += nij * std::log(pij) - log_factorial(nij);
      }
    }
    return s;
  });
  return {v, static_cast<Index>(rows.size()) * est.d()};
}

inline LikelihoodValue complete_ll(const ParameterEstimates& est, const Matrix& completed) {
  std::vector<Index> rows(static_cast<size_t>(completed.rows()));
  std::iota(rows.begin(), rows.end(), Index(0));
  return complete_ll(est, completed, rows);
}

// Q^occ = Sum_i [ -lambda_i + N_i log lambda_i ],  N_i = completed row sum
inline double q_occ(const Vector& lambda, const Matrix& completed, const std::vector<Index>& rows) {
  if (lambda.size() != completed.rows())
    throw std::invalid_argument("q_occ: sizes disagree");
  return pairwise_sum_terms(static_cast<Index>(rows.size()), [&](Index k) {
    const Index i = rows[static_cast<size_t>(k)];
    const double lam = lambda(i);
    if (!(lam > 0)) throw NumericError("q_occ: lambda <= 0");
    const double ni = completed.row(i).sum();
    return -lam + (ni > 0 ? ni * std::log(lam) : 0.0);
  });
}

inline double q_occ(const Vector& lambda, const Matrix& completed) {
  std::vector<Index> rows(static_cast<size_t>(completed.rows()));
  std::iota(rows.begin(), rows.end(), Index(0));
  return q_occ(lambda, completed, rows);
}

// Q^rep = Sum_i Sum_j N_ij log p_ij ; rows of p must lie on the simplex
inline double q_rep(const Matrix& p, const Matrix& completed, const std::vector<Index>& rows) {
  if (p.rows() != completed.rows() || p.cols() != completed.cols())
    throw std::invalid_argument("q_rep: sizes disagree");
  for (Index r : rows) {
    double sum = p.row(r).sum();
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("q_rep: p row " + std::to_string(r) + " not on simplex");
  }
  return pairwise_sum_terms(static_cast<Index>(rows.size()), [&](Index k) {
    const Index i = rows[static_cast<size_t>(k)];
    double s = 0;
    for (Index j = 0; j < completed.cols(); ++j) {
      const double nij = completed(i, j);
      if (nij > 0) {
        const double pij = p(i, j);
        if (pij <= 0) throw NumericError("q_rep: p <= 0 with positive count");
        s += nij * std::log(pij);
      }
    }
    return s;
  });
}

inline double q_rep(const Matrix& p, const Matrix& completed) {
  std::vector<Index> rows(static_cast<size_t>(completed.rows()));
  std::iota(rows.begin(), rows.end(), Index(0));
  return q_rep(p, completed, rows);
}

// ------------------------------------------------------------ error metrics

// (1/n) Sum_i (lambda_i - lambda_hat_i)^2
inline double ase_lambda(const ParameterEstimates& est, const ParameterEstimates& truth) {
  if (est.n() != truth.n()) throw std::invalid_argument("ase_lambda: sizes disagree");
  if (est.n() == 0) return 0;
  double s = pairwise_sum_terms(est.n(), [&](Index i) {
    double e = truth.lambda(i) - est.lambda(i);
    return e * e;
  });
  return s / static_cast<double>(est.n());
}

// (1/n) Sum_i Sum_j (p_ij - p_hat_ij)^2
inline double ase_p(const ParameterEstimates& est, const ParameterEstimates& truth) {
  if (est.n() != truth.n() || est.d() != truth.d())
    throw std::invalid_argument("ase_p: sizes disagree");
  if (est.n() == 0) return 0;
  double s = pairwise_sum_terms(est.n(), [&](Index i) {
    double row = 0;
    for (Index j = 0; j < est.d(); ++j) {
      double e = truth.p(i, j) - est.p(i, j);
      row += e * e;
    }
    return row;
  });
  return s / static_cast<double>(est.n());
}

}  // namespace nowcast
