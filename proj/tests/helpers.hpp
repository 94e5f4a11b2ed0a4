#pragma once
// Small fixtures shared across test binaries.

#include "nowcast/core.hpp"

#include <random>

namespace testutil {

using namespace nowcast;

// two records, d = 2: counts (1,1) with tau 2 and (2,-) with tau 1
inline Dataset tiny_dataset() {
  Dataset ds;
  ds.schema = FeatureSchema::infer({"x"});
  ds.ids = {"a", "b"};
  ds.occ = IntVector(2);
  ds.occ << 1, 2;
  ds.tau_i = IntVector(2);
  ds.tau_i << 2, 1;
  ds.counts = Matrix::Zero(2, 2);
  ds.counts(0, 0) = 1;
  ds.counts(0, 1) = 1;
  ds.counts(1, 0) = 2;
  ds.X = Matrix::Zero(2, 1);
  ds.tau = 2;
  return ds;
}

// random dataset with a 3-class group, a binary group and two scalars
inline Dataset random_dataset(Index n, Index d, std::uint64_t seed, int tau_now = 0) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> cls3(1, 3), cls2(1, 2);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::poisson_distribution<long> pois(3.0);

  Dataset ds;
  ds.schema = FeatureSchema::infer({"g_1", "g_2", "g_3", "b_1", "b_2", "u", "v"});
  ds.X = Matrix::Zero(n, 7);
  ds.counts = Matrix::Zero(n, d);
  ds.occ = IntVector(n);
  ds.tau_i = IntVector(n);
  if (tau_now <= 0) tau_now = static_cast<int>(d) + 3;
  ds.tau = tau_now;
  for (Index i = 0; i < n; ++i) {
    ds.ids.push_back("r" + std::to_string(i));
    int g = cls3(rng), b = cls2(rng);
    ds.X(i, g - 1) = 1.0;
    ds.X(i, 3 + b - 1) = 1.0;
    ds.X(i, 5) = unif(rng);
    ds.X(i, 6) = unif(rng);
    std::uniform_int_distribution<int> occ_d(1, tau_now);
    ds.occ(i) = occ_d(rng);
    ds.tau_i(i) = compute_tau(ds.occ(i), tau_now, static_cast<int>(d));
    for (Index j = 0; j < ds.tau_i(i); ++j) ds.counts(i, j) = static_cast<double>(pois(rng));
  }
  return ds;
}

// estimates with random positive lambda and softmax rows
inline ParameterEstimates random_estimates(Index n, Index d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  ParameterEstimates est;
  est.lambda = Vector(n);
  est.p = Matrix(n, d);
  for (Index i = 0; i < n; ++i) {
    est.lambda(i) = std::exp(unif(rng) + 0.5);
    double mx = -2, lse = 0;
    Vector s(d);
    for (Index j = 0; j < d; ++j) s(j) = unif(rng);
    mx = s.maxCoeff();
    for (Index j = 0; j < d; ++j) lse += std::exp(s(j) - mx);
    lse = mx + std::log(lse);
    for (Index j = 0; j < d; ++j) est.p(i, j) = std::exp(s(j) - lse);
  }
  return est;
}

}  // namespace testutil
