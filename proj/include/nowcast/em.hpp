#pragma once
// Expectation-maximisation driver: completes censored cells from the current
// estimates, delegates the M-step to a learner, and early-stops on the val2
// observed log-likelihood with the best iteration restored.

#include "nowcast/core.hpp"
#include "nowcast/learner.hpp"
#include "nowcast/likelihood.hpp"

#include <json.hpp>

#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace nowcast {

// p^(0)_j = sum_z N_zj / total observed count; zero classes are floored and
// the vector renormalized so downstream logs stay finite
inline Vector initial_reporting_probs(const Dataset& data) {
  const Index d = data.d();
  Vector col = Vector::Zero(d);
  for (Index i = 0; i < data.n(); ++i)
    for (Index j = 0; j < data.tau_i(i); ++j) col(j) += data.counts(i, j);
  const double total = col.sum();
  if (!(total > 0)) throw DataError("initialization: no observed events");
  Vector p0 = col / total;
  if ((p0.array() <= 0).any()) {
    p0 = p0.cwiseMax(1e-8);
    p0 /= p0.sum();
  }
  return p0;
}

// lambda^(0)_i is the observed total (floored at 1e-8); the initial reporting
// row is shared across records
inline ParameterEstimates initialize_estimates(const Dataset& data) {
  ParameterEstimates est;
  const Index n = data.n(), d = data.d();
  est.lambda.resize(n);
  for (Index i = 0; i < n; ++i) {
    double s = 0;
    for (Index j = 0; j < data.tau_i(i); ++j) s += data.counts(i, j);
    est.lambda(i) = std::max(s, 1e-8);
  }
  Vector p0 = initial_reporting_probs(data);
  est.p = p0.transpose().replicate(n, 1);
  return est;
}

// completed(i, j) = N_ij for observed cells, lambda_i p_ij beyond tau_i
inline Matrix expectation_step(const Dataset& data, const ParameterEstimates& est) {
  if (est.n() != data.n() || est.d() != data.d())
    throw std::invalid_argument("expectation_step: estimate shape differs from the data");
  Matrix completed = data.counts;
  for (Index i = 0; i < data.n(); ++i)
    for (Index j = data.tau_i(i); j < data.d(); ++j) completed(i, j) = est.lambda(i) * est.p(i, j);
  return completed;
}

struct EmOptions {
  int max_iter = 100;  // K
  int patience = 10;   // EM-level early stopping on val2
  uint64_t seed = 0;
};

struct EmTraceRecord {
  int iteration = 0;
  double train_ll = 0, val2_ll = 0;
  double data_ll = 0;  // observed LL over every record, splits ignored
  nlohmann::json learner_info;

  nlohmann::json to_json() const {
    return {{"iteration", iteration},
            {"train_ll", train_ll},
            {"val2_ll", val2_ll},
            {"data_ll", data_ll},
            {"learner", learner_info}};
  }
};

struct FitResult {
  std::string learner;
  ParameterEstimates estimates;     // at the best iteration, over all data rows
  std::vector<double> ll_trace;     // val2 observed LL per iteration
  std::vector<EmTraceRecord> trace;
  int best_iteration = 0;           // 1-based argmax of ll_trace
  nlohmann::json config_echo;
};

inline FitResult run_em(const Dataset& data, Learner& learner, const EmOptions& opt) {
  if (opt.max_iter < 1) throw ConfigError("run_em: max_iter must be >= 1");
  if (opt.patience < 1) throw ConfigError("run_em: patience must be >= 1");
  data.validate();
  if (data.split.size() != static_cast<size_t>(data.n()))
    throw DataError("run_em: the dataset has no split labels");
  const auto train_rows = split_rows(data, Split::train);
  const auto val1_rows = split_rows(data, Split::val1);
  const auto val2_rows = split_rows(data, Split::val2);
  if (train_rows.empty() || val1_rows.empty() || val2_rows.empty())
    throw DataError("run_em: every split must be non-empty");

  ParameterEstimates est = initialize_estimates(data);
  const Vector p0 = initial_reporting_probs(data);

  FitResult out;
  out.learner = learner.kind();
  double best_val2 = -std::numeric_limits<double>::infinity();
  double prev_train = -std::numeric_limits<double>::infinity();
  int since_best = 0;

  for (int k = 1; k <= opt.max_iter; ++k) {
    Matrix completed = expectation_step(data, est);
    MStepContext ctx{data, completed, train_rows, val1_rows, k, p0, opt.seed};
    try {
      learner.m_step(ctx);
      est = learner.predict(data);
      est.validate();
    } catch (const NumericError& e) {
      throw NumericError("em aborted at iteration " + std::to_string(k) + " (" + learner.kind() +
                         "): " + e.what());
    }

    const double train_ll = observed_ll(est, data, train_rows).value;
    const double val2_ll = observed_ll(est, data, val2_rows).value;
    const double data_ll = observed_ll(est, data).value;
    if (learner.kind() == "glm" && k > 1 &&
        train_ll < prev_train - 1e-8 * (1.0 + std::abs(prev_train)))
      throw NumericError("em: train log-likelihood decreased at iteration " + std::to_string(k));
    prev_train = train_ll;

    out.ll_trace.push_back(val2_ll);
    out.trace.push_back({k, train_ll, val2_ll, data_ll, learner.last_fit_info()});

    if (val2_ll > best_val2) {
      best_val2 = val2_ll;
      out.best_iteration = k;
      out.estimates = est;
      learner.snapshot();
      since_best = 0;
    } else if (++since_best >= opt.patience) {
      break;
    }
  }
  learner.rollback();
  out.config_echo = {{"max_iter", opt.max_iter}, {"patience", opt.patience}, {"seed", opt.seed},
                     {"learner", learner.kind()}};
  return out;
}

// ------------------------------------------------------------ nowcasting

// one row per censored cell: the expected count lambda_i p_ij for j > tau_i
struct NowcastCell {
  Index row = 0;
  int delay = 0;  // 1-based class index
  double expected = 0;
};

struct NowcastResult {
  std::vector<NowcastCell> cells;
  Vector total_unreported;  // per record
};

inline NowcastResult nowcast_unreported(const ParameterEstimates& est, const Dataset& data) {
  if (est.n() != data.n() || est.d() != data.d())
    throw std::invalid_argument("nowcast_unreported: estimate shape differs from the data");
  NowcastResult out;
  out.total_unreported = Vector::Zero(data.n());
  for (Index i = 0; i < data.n(); ++i) {
    double total = 0;
    for (Index j = data.tau_i(i); j < data.d(); ++j) {
      const double e = est.lambda(i) * est.p(i, j);
      out.cells.push_back({i, static_cast<int>(j) + 1, e});
      total += e;
    }
    out.total_unreported(i) = total;
  }
  return out;
}

}  // namespace nowcast
