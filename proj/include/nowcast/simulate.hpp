#pragma once
// Synthetic-data generator: Poisson occurrence totals thinned over reporting
// delay classes, with entity covariates and calendar effects.  All draws come
// from one seeded stream in a fixed per-record order, so equal seeds give
// byte-identical datasets.

#include "nowcast/core.hpp"
#include "nowcast/likelihood.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace nowcast {

// ------------------------------------------------------------ randomness

// portable draws on top of the fixed mt19937_64 bit stream
struct RandomStream {
  std::mt19937_64 rng;

  explicit RandomStream(uint64_t seed) : rng(seed) {}

  double uniform() { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }  // [0, 1)

  int uniform_int(int lo, int hi) {  // inclusive bounds
    const double u = uniform();
    int v = lo + static_cast<int>(u * (static_cast<double>(hi - lo) + 1.0));
    return std::min(v, hi);
  }

  long poisson(double lambda) {
    if (!(lambda >= 0)) throw NumericError("poisson: negative rate");
    if (lambda == 0) return 0;
    if (lambda > 500) {  // split to keep exp(-lambda) in range; never hit by the study
      long a = poisson(lambda / 2);
      return a + poisson(lambda - lambda / 2);
    }
    const double u = uniform();
    double p = std::exp(-lambda), cdf = p;
    long k = 0;
    while (u > cdf && k < 100000) {
      ++k;
      p *= lambda / static_cast<double>(k);
      cdf += p;
    }
    return k;
  }

  long binomial(long n, double p) {
    p = std::min(1.0, std::max(0.0, p));
    long k = 0;
    for (long i = 0; i < n; ++i)
      if (uniform() < p) ++k;
    return k;
  }
};

// one record's counts: a Poisson total split over classes by sequential
// conditional binomials (the remainder lands in the last class)
inline Eigen::RowVectorXd sample_counts(RandomStream& rs, double lambda,
                                        const Eigen::RowVectorXd& p) {
  const Index d = p.size();
  Eigen::RowVectorXd counts = Eigen::RowVectorXd::Zero(d);
  long remaining = rs.poisson(lambda);
  double mass = 1.0;
  for (Index j = 0; j + 1 < d; ++j) {
    if (remaining <= 0) break;
    const double cond = mass > 0 ? p(j) / mass : 0.0;
    const long nj = rs.binomial(remaining, cond);
    counts(j) = static_cast<double>(nj);
    remaining -= nj;
    mass -= p(j);
  }
  if (d > 0) counts(d - 1) += static_cast<double>(remaining);
  return counts;
}

// ------------------------------------------------------------ calendar

struct Calendar {
  int n_days = 31;
  int last_observable = 21;  // reporting horizon of the present
  std::string epoch = "2022-04-11";  // civil date of day 1
  std::vector<int> weekend, holiday, month_edge;

  static Calendar april_2022() {
    Calendar c;
    c.weekend = {6, 7, 13, 14, 20, 21, 27, 28};
    c.holiday = {5, 7, 8, 17};
    c.month_edge = {20, 21};
    return c;
  }

  bool flag(const std::string& name, int day) const {
    const std::vector<int>* set = nullptr;
    if (name == "weekend") set = &weekend;
    else if (name == "holiday") set = &holiday;
    else if (name == "monthedge") set = &month_edge;
    else throw ConfigError("unknown calendar flag: " + name);
    return std::find(set->begin(), set->end(), day) != set->end();
  }

  nlohmann::json to_json() const {
    return {{"n_days", n_days},
            {"last_observable", last_observable},
            {"epoch", epoch},
            {"weekend", weekend},
            {"holiday", holiday},
            {"month_edge", month_edge}};
  }
  static Calendar from_json(const nlohmann::json& j) {
    Calendar c;
    c.n_days = j.at("n_days").get<int>();
    c.last_observable = j.at("last_observable").get<int>();
    c.epoch = j.value("epoch", std::string("2022-04-11"));
    c.weekend = j.at("weekend").get<std::vector<int>>();
    c.holiday = j.at("holiday").get<std::vector<int>>();
    c.month_edge = j.at("month_edge").get<std::vector<int>>();
    return c;
  }
};

// ------------------------------------------------------------ specification

struct TermFactor {
  std::string column;  // x1 | x2 | x3 | x4
  std::string op;      // eq | id | log1p | gt | lt
  double arg = 0;

  double eval(double value) const {
    if (op == "eq") return value == arg ? 1.0 : 0.0;
    if (op == "id") return value;
    if (op == "log1p") return std::log(value + 1.0);
    if (op == "gt") return value > arg ? 1.0 : 0.0;
    if (op == "lt") return value < arg ? 1.0 : 0.0;
    throw ConfigError("unknown term op: " + op);
  }
};

struct SimTerm {
  std::vector<TermFactor> factors;  // product over factors
  double beta_occ = 0;
  Vector beta_rep;  // length d; empty means all zero
};

struct CalendarTerm {
  std::vector<std::string> flags;  // product over flags of the same day
  double beta_occ = 0;
  Vector beta_rep;
};

struct SimSpec {
  Index d = 11;
  Calendar calendar = Calendar::april_2022();
  int first_occ_day = 1, last_occ_day = 21;
  double occ_intercept = 0;
  Vector rep_intercepts;
  std::vector<SimTerm> terms;
  std::vector<CalendarTerm> calendar_terms;

  static SimSpec spec1();
  static SimSpec spec2();
  nlohmann::json to_json() const;
  static SimSpec from_json(const nlohmann::json& j);
};

namespace detail {

inline Vector rep_vec(Index d, double (*f)(Index)) {
  Vector v(d);
  for (Index j = 0; j < d; ++j) v(j) = f(j);
  return v;
}

}  // namespace detail

inline SimSpec SimSpec::spec1() {
  SimSpec s;
  s.d = 11;
  s.rep_intercepts.resize(11);
  for (Index j = 0; j < 11; ++j) s.rep_intercepts(j) = j < 10 ? 2.0 - 0.2 * static_cast<double>(j) : 0.0;
  auto zeros = Vector::Zero(11).eval();
  s.terms.push_back({{{"x1", "eq", 2}}, 0.5, zeros});
  s.terms.push_back(
      {{{"x2", "id", 0}}, 0.01, detail::rep_vec(11, [](Index j) { return 0.001 * static_cast<double>(j + 1); })});
  s.terms.push_back(
      {{{"x3", "eq", 2}}, 0.2, detail::rep_vec(11, [](Index j) { return -0.02 - 0.005 * static_cast<double>(j); })});
  s.terms.push_back(
      {{{"x3", "eq", 3}}, 0.4, detail::rep_vec(11, [](Index j) { return -0.05 - 0.005 * static_cast<double>(j); })});
  s.terms.push_back({{{"x4", "eq", 1}}, 0.3, detail::rep_vec(11, [](Index j) { return j < 5 ? -0.1 : 0.0; })});
  s.terms.push_back({{{"x4", "eq", 3}}, -0.3, detail::rep_vec(11, [](Index j) { return j < 5 ? 0.2 : 0.0; })});
  s.calendar_terms.push_back({{"weekend"}, 0.75, Vector::Constant(11, -0.2)});
  s.calendar_terms.push_back({{"holiday"}, 0.4, Vector::Constant(11, -0.3)});
  s.calendar_terms.push_back({{"monthedge"}, 0.0, Vector::Constant(11, 0.05)});
  return s;
}

inline SimSpec SimSpec::spec2() {
  SimSpec s = spec1();
  s.terms[1].factors[0].op = "log1p";  // x2 enters on the log scale
  auto zeros = Vector::Zero(11).eval();
  s.terms.push_back({{{"x2", "gt", 80}}, 0.5, zeros});
  s.terms.push_back({{{"x2", "lt", 40}, {"x1", "eq", 1}}, -0.25, zeros});
  s.terms.push_back({{{"x3", "eq", 1}, {"x4", "eq", 3}}, -0.5, zeros});
  s.terms.push_back({{{"x3", "eq", 3}, {"x4", "eq", 1}}, 0.5, zeros});
  s.terms.push_back({{{"x1", "eq", 1}, {"x4", "eq", 3}},
                     -0.3,
                     detail::rep_vec(11, [](Index j) { return j < 3 ? 0.03 : 0.0; })});
  s.calendar_terms.push_back(
      {{"weekend", "holiday"}, 0.0, detail::rep_vec(11, [](Index j) { return j < 5 ? 0.06 : 0.0; })});
  return s;
}

// ------------------------------------------------------------ schema

inline FeatureSchema sim_schema(Index d) {
  std::vector<std::string> names = {"x1_1", "x1_2", "x2",   "x3_1", "x3_2",
                                    "x3_3", "x4_1", "x4_2", "x4_3"};
  for (Index j = 1; j <= d; ++j) {
    const std::string b = "ps" + std::to_string(j) + "_";
    names.push_back(b + "weekend");
    names.push_back(b + "holiday");
    names.push_back(b + "monthedge");
  }
  return FeatureSchema::infer(names);
}

// ------------------------------------------------------------ truth

namespace detail {

struct EntityView {
  double x1, x2, x3, x4;
  int t;
};

inline EntityView decode_entity(const Dataset& data, Index i) {
  const auto& s = data.schema;
  EntityView e;
  e.x1 = data.X(i, s.require("x1_2")) > 0.5 ? 2 : 1;
  e.x2 = data.X(i, s.require("x2"));
  e.x3 = data.X(i, s.require("x3_3")) > 0.5 ? 3 : (data.X(i, s.require("x3_2")) > 0.5 ? 2 : 1);
  e.x4 = data.X(i, s.require("x4_3")) > 0.5 ? 3 : (data.X(i, s.require("x4_2")) > 0.5 ? 2 : 1);
  e.t = data.occ(i);
  return e;
}

inline double factor_value(const EntityView& e, const TermFactor& f) {
  double v;
  if (f.column == "x1") v = e.x1;
  else if (f.column == "x2") v = e.x2;
  else if (f.column == "x3") v = e.x3;
  else if (f.column == "x4") v = e.x4;
  else throw ConfigError("unknown term column: " + f.column);
  return f.eval(v);
}

inline void entity_params(const SimSpec& spec, const EntityView& e, double& lambda,
                          Eigen::RowVectorXd& p) {
  const Index d = spec.d;
  double lp_occ = spec.occ_intercept;
  Eigen::RowVectorXd lp = spec.rep_intercepts.transpose();
  for (const auto& term : spec.terms) {
    double v = 1.0;
    for (const auto& f : term.factors) v *= factor_value(e, f);
    if (v == 0.0) continue;
    lp_occ += term.beta_occ * v;
    if (term.beta_rep.size()) lp += v * term.beta_rep.transpose();
  }
  for (const auto& term : spec.calendar_terms) {
    double v_occ = 1.0;
    for (const auto& name : term.flags) v_occ *= spec.calendar.flag(name, e.t) ? 1.0 : 0.0;
    lp_occ += term.beta_occ * v_occ;
    if (term.beta_rep.size())
      for (Index j = 0; j < d; ++j) {
        double v = 1.0;
        for (const auto& name : term.flags)
          v *= spec.calendar.flag(name, e.t + static_cast<int>(j)) ? 1.0 : 0.0;
        lp(j) += term.beta_rep(j) * v;
      }
  }
  lambda = std::exp(lp_occ);
  const double m = lp.maxCoeff();
  Eigen::RowVectorXd ex = (lp.array() - m).exp();
  p = ex / ex.sum();
}

}  // namespace detail

// exact rates and reporting distributions the generator assigns to each record
inline ParameterEstimates true_parameters(const SimSpec& spec, const Dataset& data) {
  ParameterEstimates truth;
  truth.lambda.resize(data.n());
  truth.p.resize(data.n(), spec.d);
  Eigen::RowVectorXd p;
  for (Index i = 0; i < data.n(); ++i) {
    auto e = detail::decode_entity(data, i);
    double lam;
    detail::entity_params(spec, e, lam, p);
    truth.lambda(i) = lam;
    truth.p.row(i) = p;
  }
  return truth;
}

// ------------------------------------------------------------ generation

struct SimulatedData {
  Dataset data;        // censored at each record's tau_i
  Matrix full_counts;  // the uncensored draw
  ParameterEstimates truth;
};

inline SimulatedData simulate_dataset(const SimSpec& spec, Index n, uint64_t seed) {
  if (n < 1) throw ConfigError("simulate_dataset: n must be >= 1");
  if (spec.rep_intercepts.size() != spec.d)
    throw ConfigError("simulate_dataset: rep_intercepts length differs from d");
  const Index d = spec.d;
  const Calendar& cal = spec.calendar;

  SimulatedData out;
  Dataset& data = out.data;
  data.schema = sim_schema(d);
  data.ids.resize(static_cast<size_t>(n));
  data.occ.resize(n);
  data.tau_i.resize(n);
  data.counts = Matrix::Zero(n, d);
  data.X = Matrix::Zero(n, data.schema.n_features());
  data.tau = cal.last_observable;
  out.full_counts = Matrix::Zero(n, d);
  out.truth.lambda.resize(n);
  out.truth.p.resize(n, d);

  RandomStream rs(seed);
  Eigen::RowVectorXd p;
  for (Index i = 0; i < n; ++i) {
    detail::EntityView e;
    e.x1 = rs.uniform_int(1, 2);
    e.x2 = rs.uniform_int(18, 90);
    e.x3 = rs.uniform_int(1, 3);
    e.x4 = rs.uniform_int(1, 3);
    e.t = rs.uniform_int(spec.first_occ_day, spec.last_occ_day);

    data.ids[static_cast<size_t>(i)] = std::to_string(i + 1);
    data.occ(i) = e.t;
    data.tau_i(i) = compute_tau(e.t, cal.last_observable, static_cast<int>(d));
    Index col = 0;
    data.X(i, col++) = e.x1 == 1;
    data.X(i, col++) = e.x1 == 2;
    data.X(i, col++) = e.x2;
    data.X(i, col++) = e.x3 == 1;
    data.X(i, col++) = e.x3 == 2;
    data.X(i, col++) = e.x3 == 3;
    data.X(i, col++) = e.x4 == 1;
    data.X(i, col++) = e.x4 == 2;
    data.X(i, col++) = e.x4 == 3;
    for (Index j = 0; j < d; ++j) {
      const int day = e.t + static_cast<int>(j);
      data.X(i, col++) = cal.flag("weekend", day);
      data.X(i, col++) = cal.flag("holiday", day);
      data.X(i, col++) = cal.flag("monthedge", day);
    }

    double lam;
    detail::entity_params(spec, e, lam, p);
    out.truth.lambda(i) = lam;
    out.truth.p.row(i) = p;

    Eigen::RowVectorXd counts = sample_counts(rs, lam, p);
    out.full_counts.row(i) = counts;
    for (Index j = 0; j < data.tau_i(i); ++j) data.counts(i, j) = counts(j);
  }
  data.validate();
  return out;
}

// ------------------------------------------------------------ serialization

inline nlohmann::json SimSpec::to_json() const {
  auto vec = [](const Vector& v) {
    nlohmann::json a = nlohmann::json::array();
    for (Index k = 0; k < v.size(); ++k) a.push_back(v(k));
    return a;
  };
  nlohmann::json terms_j = nlohmann::json::array();
  for (const auto& t : terms) {
    nlohmann::json factors = nlohmann::json::array();
    for (const auto& f : t.factors)
      factors.push_back({{"column", f.column}, {"op", f.op}, {"arg", f.arg}});
    terms_j.push_back({{"factors", factors},
                       {"beta_occ", t.beta_occ},
                       {"beta_rep", vec(t.beta_rep.size() ? t.beta_rep : Vector::Zero(d))}});
  }
  nlohmann::json cal_terms = nlohmann::json::array();
  for (const auto& t : calendar_terms)
    cal_terms.push_back({{"flags", t.flags},
                         {"beta_occ", t.beta_occ},
                         {"beta_rep", vec(t.beta_rep.size() ? t.beta_rep : Vector::Zero(d))}});
  return {{"schema_version", 1},
          {"d", d},
          {"calendar", calendar.to_json()},
          {"first_occ_day", first_occ_day},
          {"last_occ_day", last_occ_day},
          {"occ_intercept", occ_intercept},
          {"rep_intercepts", vec(rep_intercepts)},
          {"terms", terms_j},
          {"calendar_terms", cal_terms}};
}

inline SimSpec SimSpec::from_json(const nlohmann::json& j) {
  SimSpec s;
  if (j.value("schema_version", 1) != 1)
    throw ConfigError("simulation spec: unsupported schema_version");
  s.d = j.at("d").get<Index>();
  if (s.d < 1) throw ConfigError("simulation spec: d must be >= 1");
  s.calendar = Calendar::from_json(j.at("calendar"));
  s.first_occ_day = j.value("first_occ_day", 1);
  s.last_occ_day = j.value("last_occ_day", s.calendar.last_observable);
  s.occ_intercept = j.at("occ_intercept").get<double>();
  auto vec = [&](const nlohmann::json& a) {
    Vector v(static_cast<Index>(a.size()));
    for (Index k = 0; k < v.size(); ++k) v(k) = a[static_cast<size_t>(k)].get<double>();
    return v;
  };
  s.rep_intercepts = vec(j.at("rep_intercepts"));
  for (const auto& tj : j.value("terms", nlohmann::json::array())) {
    SimTerm t;
    for (const auto& fj : tj.at("factors"))
      t.factors.push_back({fj.at("column").get<std::string>(), fj.at("op").get<std::string>(),
                           fj.value("arg", 0.0)});
    t.beta_occ = tj.value("beta_occ", 0.0);
    if (tj.contains("beta_rep")) t.beta_rep = vec(tj.at("beta_rep"));
    s.terms.push_back(std::move(t));
  }
  for (const auto& tj : j.value("calendar_terms", nlohmann::json::array())) {
    CalendarTerm t;
    t.flags = tj.at("flags").get<std::vector<std::string>>();
    t.beta_occ = tj.value("beta_occ", 0.0);
    if (tj.contains("beta_rep")) t.beta_rep = vec(tj.at("beta_rep"));
    s.calendar_terms.push_back(std::move(t));
  }
  return s;
}

}  // namespace nowcast
