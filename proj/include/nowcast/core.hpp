#pragma once
// Shared data model: feature schema, observation datasets, train/val splits,
// and per-record parameter containers used by every other header.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace nowcast {

using Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using IntVector = Eigen::VectorXi;

struct ConfigError : std::runtime_error { using std::runtime_error::runtime_error; };
struct DataError : std::runtime_error { using std::runtime_error::runtime_error; };
struct NumericError : std::runtime_error { using std::runtime_error::runtime_error; };

// shortest decimal text that parses back to exactly the same double
inline std::string format_double(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw DataError("bad numeric field \"" + std::string(s) + "\"");
  return v;
}

// ---------------------------------------------------------------- schema

// one-hot indicator block; class c (1-based) sits at columns[c-1]
struct FeatureGroup {
  std::string name;
  std::vector<Index> columns;
};

struct FeatureSchema {
  std::vector<std::string> names;         // ordered, unique
  std::vector<FeatureGroup> groups;       // indicator groups with >= 2 classes

  Index n_features() const { return static_cast<Index>(names.size()); }

  Index find(const std::string& name) const {
    auto it = std::find(names.begin(), names.end(), name);
    return it == names.end() ? Index(-1) : static_cast<Index>(it - names.begin());
  }

  Index require(const std::string& name) const {
    Index c = find(name);
    if (c < 0) throw DataError("unknown feature column: " + name);
    return c;
  }

  // groups columns named <base>_<digits> (>= 2 of them, by numeric suffix);
  // everything else stays scalar.  `X`, when given, demotes any candidate
  // group holding non-0/1 values back to scalars.
  static FeatureSchema infer(std::vector<std::string> names, const Matrix* X = nullptr);
};

inline FeatureSchema FeatureSchema::infer(std::vector<std::string> names, const Matrix* X) {
  FeatureSchema s;
  s.names = std::move(names);
  for (size_t i = 0; i < s.names.size(); ++i)
    for (size_t j = i + 1; j < s.names.size(); ++j)
      if (s.names[i] == s.names[j]) throw DataError("duplicate feature column: " + s.names[i]);

  struct Member { long cls; Index col; };
  std::vector<std::pair<std::string, std::vector<Member>>> cand;
  for (Index c = 0; c < s.n_features(); ++c) {
    const std::string& nm = s.names[c];
    auto us = nm.rfind('_');
    if (us == std::string::npos || us + 1 >= nm.size()) continue;
    std::string suffix = nm.substr(us + 1);
    if (!std::all_of(suffix.begin(), suffix.end(), [](unsigned char ch) { return std::isdigit(ch); }))
      continue;
    std::string base = nm.substr(0, us);
    auto it = std::find_if(cand.begin(), cand.end(), [&](auto& kv) { return kv.first == base; });
    if (it == cand.end()) {
      cand.push_back({base, {}});
      it = std::prev(cand.end());
    }
    it->second.push_back({std::stol(suffix), c});
  }
  for (auto& [base, members] : cand) {
    if (members.size() < 2) continue;
    if (X) {
      bool indicator = true;
      for (const Member& m : members)
        for (Index r = 0; r < X->rows() && indicator; ++r) {
          double v = (*X)(r, m.col);
          if (v != 0.0 && v != 1.0) indicator = false;
        }
      if (!indicator) continue;
    }
    std::sort(members.begin(), members.end(), [](const Member& a, const Member& b) { return a.cls < b.cls; });
    FeatureGroup g;
    g.name = base;
    for (const Member& m : members) g.columns.push_back(m.col);
    s.groups.push_back(std::move(g));
  }
  return s;
}

// ---------------------------------------------------------------- records

// number of observable delay cells for a record occurring at `occ_period`
// when the present time is `tau`:  min(d, tau - occ + 1)
inline int compute_tau(int occ_period, int tau, int d) {
  if (d < 1) throw DataError("d must be >= 1");
  if (occ_period > tau) throw DataError("occ_period " + std::to_string(occ_period) +
                                        " exceeds present time " + std::to_string(tau));
  return std::min(d, tau - occ_period + 1);
}

enum class Split : std::uint8_t { train = 0, val1 = 1, val2 = 2, test = 3 };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val1: return "val1";
    case Split::val2: return "val2";
    case Split::test: return "test";
  }
  return "?";
}

// Column-oriented dataset: one row per observation record.  `counts` holds
// the observed prefix (cells j > tau_i are zero and mean "unobserved").
struct Dataset {
  FeatureSchema schema;
  std::vector<std::string> ids;   // entity_id per record
  IntVector occ;                  // occurrence period, 1-based
  IntVector tau_i;                // observable cells per record, in 1..d
  Matrix counts;                  // n x d observed counts, zero beyond tau_i
  Matrix X;                       // n x q covariates (one-hot expanded)
  int tau = 0;                    // present-time period index; 0 = unknown
  std::vector<Split> split;       // empty or length n

  Index n() const { return X.rows(); }
  Index d() const { return counts.cols(); }

  void validate() const;
};

inline void Dataset::validate() const {
  const Index nrec = n();
  if (counts.rows() != nrec || static_cast<Index>(ids.size()) != nrec ||
      occ.size() != nrec || tau_i.size() != nrec)
    throw DataError("dataset field lengths disagree");
  if (X.cols() != schema.n_features())
    throw DataError("covariate width does not match schema");
  if (!split.empty() && static_cast<Index>(split.size()) != nrec)
    throw DataError("split labels length mismatch");
  const Index dd = d();
  if (dd < 1) throw DataError("d must be >= 1");
  for (Index i = 0; i < nrec; ++i) {
    if (occ(i) < 1) throw DataError("occ_period must be >= 1 (record " + std::to_string(i) + ")");
    if (tau_i(i) < 1 || tau_i(i) > dd)
      throw DataError("tau_i out of range (record " + std::to_string(i) + ")");
    if (tau > 0 && tau_i(i) != compute_tau(occ(i), tau, static_cast<int>(dd)))
      throw DataError("tau_i inconsistent with present time (record " + std::to_string(i) + ")");
    for (Index j = 0; j < dd; ++j) {
      double v = counts(i, j);
      if (!std::isfinite(v) || v < 0)
        throw DataError("negative or non-finite count (record " + std::to_string(i) + ")");
      if (j >= tau_i(i) && v != 0.0)
        throw DataError("count present beyond tau_i (record " + std::to_string(i) + ")");
    }
  }
  for (const FeatureGroup& g : schema.groups)
    for (Index c : g.columns) {
      if (c < 0 || c >= X.cols()) throw DataError("group column index out of range: " + g.name);
      for (Index i = 0; i < nrec; ++i)
        if (X(i, c) != 0.0 && X(i, c) != 1.0)
          throw DataError("non-indicator value in group " + g.name);
    }
}

// ---------------------------------------------------------------- splits

// deterministic 64/16/20-style assignment with largest-remainder rounding;
// labels only the non-test records, preserving any existing test marks.
inline void assign_splits(Dataset& data, const std::array<double, 3>& fractions, std::uint64_t seed) {
  double total = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  for (double f : fractions)
    if (f < 0) throw ConfigError("split fractions must be non-negative");

  std::vector<Index> pool;
  if (data.split.empty()) data.split.assign(static_cast<size_t>(data.n()), Split::train);
  for (Index i = 0; i < data.n(); ++i)
    if (data.split[static_cast<size_t>(i)] != Split::test) pool.push_back(i);

  const auto m = static_cast<double>(pool.size());
  std::array<long, 3> want{};
  std::array<double, 3> rem{};
  long assigned = 0;
  for (int s = 0; s < 3; ++s) {
    double exact = m * fractions[s];
    want[s] = static_cast<long>(std::floor(exact));
    rem[s] = exact - static_cast<double>(want[s]);
    assigned += want[s];
  }
  std::array<int, 3> order{0, 1, 2};
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return rem[a] != rem[b] ? rem[a] > rem[b] : a < b;
  });
  for (long left = static_cast<long>(m) - assigned, k = 0; left > 0; --left, ++k)
    ++want[order[static_cast<size_t>(k % 3)]];

  std::mt19937_64 rng(seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  size_t pos = 0;
  for (int s = 0; s < 3; ++s)
    for (long k = 0; k < want[s]; ++k)
      data.split[static_cast<size_t>(pool[pos++])] = static_cast<Split>(s);
}

inline std::vector<Index> split_rows(const Dataset& data, Split which) {
  std::vector<Index> rows;
  if (data.split.empty()) throw DataError("dataset has no split labels");
  for (Index i = 0; i < data.n(); ++i)
    if (data.split[static_cast<size_t>(i)] == which) rows.push_back(i);
  return rows;
}

inline std::vector<Index> all_rows(const Dataset& data) {
  std::vector<Index> rows(static_cast<size_t>(data.n()));
  std::iota(rows.begin(), rows.end(), Index(0));
  return rows;
}

// ---------------------------------------------------------------- estimates

template <typename Scalar>
struct ParameterEstimatesT {
  Eigen::Vector<Scalar, Eigen::Dynamic> lambda;                  // n, > 0
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> p;       // n x d, rows on simplex

  Index n() const { return lambda.size(); }
  Index d() const { return p.cols(); }

  void validate(double tol = 1e-12) const {
    if (p.rows() != lambda.size()) throw DataError("estimate sizes disagree");
    for (Index i = 0; i < lambda.size(); ++i) {
      if (!(lambda(i) > 0) || !std::isfinite(lambda(i)))
        throw NumericError("lambda not positive/finite at record " + std::to_string(i));
      Scalar sum = 0;
      for (Index j = 0; j < p.cols(); ++j) {
        Scalar v = p(i, j);
        if (!std::isfinite(v) || v < 0 || v > 1)
          throw NumericError("p outside [0,1] at record " + std::to_string(i));
        sum += v;
      }
      if (std::abs(double(sum) - 1.0) > tol)
        throw NumericError("p row does not sum to 1 at record " + std::to_string(i));
    }
  }
};

using ParameterEstimates = ParameterEstimatesT<double>;

}  // namespace nowcast
