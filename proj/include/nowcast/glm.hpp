#pragma once
// Exact GLM learner: Poisson regression with log link for occurrence and
// multinomial logistic (softmax) regression with reference-class coding for
// reporting, both solved by damped Newton iterations.

#include "nowcast/core.hpp"
#include "nowcast/learner.hpp"
#include "nowcast/likelihood.hpp"

#include <iostream>
#include <limits>
#include <optional>
#include <sstream>

namespace nowcast {

struct GlmOptions {
  int max_iter = 100;
  double score_tol = 1e-8;    // max |score| for convergence
  double ll_tol = 1e-10;      // relative objective change for convergence
  double clamp = 30.0;        // linear predictors clamped to [-clamp, clamp]
};

inline double clamp_lp(double v, double c) { return v < -c ? -c : (v > c ? c : v); }

// ------------------------------------------------------------ rank pruning

namespace detail {

// indices of a maximal linearly independent column subset, in column order
inline std::vector<Index> independent_columns(const Matrix& X) {
  Eigen::ColPivHouseholderQR<Matrix> qr(X);
  const Index rank = qr.rank();
  std::vector<Index> kept;
  const auto& perm = qr.colsPermutation().indices();
  for (Index k = 0; k < rank; ++k) kept.push_back(perm(k));
  std::sort(kept.begin(), kept.end());
  return kept;
}

inline Matrix take_columns(const Matrix& X, const std::vector<Index>& cols) {
  Matrix out(X.rows(), static_cast<Index>(cols.size()));
  for (size_t k = 0; k < cols.size(); ++k) out.col(static_cast<Index>(k)) = X.col(cols[k]);
  return out;
}

inline void warn_dropped(const std::vector<Index>& dropped,
                         const std::vector<std::string>* labels) {
  for (Index c : dropped) {
    std::cerr << "warning: dropping collinear design column ";
    if (labels && c < static_cast<Index>(labels->size()))
      std::cerr << '"' << (*labels)[static_cast<size_t>(c)] << '"';
    else
      std::cerr << c;
    std::cerr << "\n";
  }
}

}  // namespace detail

// ------------------------------------------------------------ poisson fit

struct PoissonGlmFit {
  Vector beta;                 // full design width; dropped columns are 0
  Vector se;                   // Wald standard errors; NaN where dropped
  double objective = 0;        // Sum_i w_i (-mu_i + y_i eta_i)
  int iterations = 0;
  bool converged = false;
  std::vector<Index> dropped;  // pruned column indices
  std::vector<Index> kept;     // fitted column indices, ascending
  Matrix cov;                  // inverse final Hessian over kept columns
};

// maximizes Sum_i w_i [ -exp(x'b) + y_i x'b ] by damped Newton steps
inline PoissonGlmFit fit_poisson_glm(const Matrix& X, const Vector& y,
                                     const GlmOptions& opt = {},
                                     const Vector* init = nullptr,
                                     const Vector* weights = nullptr,
                                     const std::vector<std::string>* labels = nullptr) {
  const Index n = X.rows(), q = X.cols();
  if (y.size() != n) throw std::invalid_argument("fit_poisson_glm: sizes disagree");
  if (n == 0) throw DataError("fit_poisson_glm: empty input");
  Vector w = weights ? *weights : Vector::Ones(n);

  std::vector<Index> kept = detail::independent_columns(X);
  std::vector<Index> dropped;
  for (Index c = 0; c < q; ++c)
    if (!std::binary_search(kept.begin(), kept.end(), c)) dropped.push_back(c);
  detail::warn_dropped(dropped, labels);
  const Matrix Xk = detail::take_columns(X, kept);
  const Index m = Xk.cols();

  Vector beta = Vector::Zero(m);
  if (init && init->size() == q)
    for (size_t k = 0; k < kept.size(); ++k) beta(static_cast<Index>(k)) = (*init)(kept[k]);

  auto objective = [&](const Vector& b) {
    Vector eta = (Xk * b).unaryExpr([&](double v) { return clamp_lp(v, opt.clamp); });
    double s = 0;
    for (Index i = 0; i < n; ++i) s += w(i) * (-std::exp(eta(i)) + y(i) * eta(i));
    return s;
  };

  PoissonGlmFit fit;
  double obj = objective(beta);
  Matrix H(m, m);
  for (int it = 0; it < opt.max_iter && !fit.converged; ++it) {
    Vector eta = (Xk * beta).unaryExpr([&](double v) { return clamp_lp(v, opt.clamp); });
    Vector mu = eta.array().exp();
    Vector score = Xk.transpose() * (w.array() * (y - mu).array()).matrix();
    if (score.cwiseAbs().maxCoeff() < opt.score_tol) {
      fit.converged = true;
      break;
    }
    H = Xk.transpose() * (w.array() * mu.array()).matrix().asDiagonal() * Xk;
    Vector delta = H.ldlt().solve(score);
    if (!delta.allFinite()) throw NumericError("fit_poisson_glm: singular Newton system");
    double step = 1.0, cand = 0;
    Vector next;
    bool accepted = false;
    for (int half = 0; half < 40; ++half) {
      next = beta + step * delta;
      cand = objective(next);
      if (cand >= obj - 1e-12 * (1 + std::abs(obj))) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      fit.converged = true;  // no ascent available: stationary to machine precision
      break;
    }
    double change = std::abs(cand - obj);
    beta = next;
    obj = cand;
    ++fit.iterations;
    if (change <= opt.ll_tol * (1 + std::abs(obj))) fit.converged = true;
  }
  if (!fit.converged)
    throw NumericError("fit_poisson_glm: no convergence in " + std::to_string(opt.max_iter) +
                       " Newton steps");

  Vector eta = (Xk * beta).unaryExpr([&](double v) { return clamp_lp(v, opt.clamp); });
  Vector mu = eta.array().exp();
  H = Xk.transpose() * (w.array() * mu.array()).matrix().asDiagonal() * Xk;
  Matrix cov = H.ldlt().solve(Matrix::Identity(m, m));

  fit.beta = Vector::Zero(q);
  fit.se = Vector::Constant(q, std::numeric_limits<double>::quiet_NaN());
  for (size_t k = 0; k < kept.size(); ++k) {
    fit.beta(kept[k]) = beta(static_cast<Index>(k));
    double v = cov(static_cast<Index>(k), static_cast<Index>(k));
    fit.se(kept[k]) = v > 0 ? std::sqrt(v) : std::numeric_limits<double>::quiet_NaN();
  }
  fit.objective = obj;
  fit.dropped = dropped;
  fit.kept = kept;
  fit.cov = cov;
  return fit;
}

// ------------------------------------------------------------ multinomial fit

struct MultinomialGlmFit {
  Matrix B;                    // d x q coefficients; row d-1 (reference) is 0
  Matrix se;                   // d x q; NaN for reference row / dropped columns
  double objective = 0;        // Sum_i Sum_j W_ij log softmax_j(x_i' B)
  int iterations = 0;
  bool converged = false;
  std::vector<Index> dropped;
  std::vector<Index> kept;     // fitted column indices, ascending
  Matrix cov;                  // inverse final Hessian, (d-1)*|kept| square,
                               // coefficient (z, kept[k]) at position z*|kept|+k
};

// maximizes the weighted multinomial log-likelihood with class d as the
// reference (its coefficient row pinned to zero); W holds non-negative
// (possibly fractional) class weights per record.
inline MultinomialGlmFit fit_multinomial_glm(const Matrix& X, const Matrix& W,
                                             const GlmOptions& opt = {},
                                             const Matrix* init = nullptr,
                                             const std::vector<std::string>* labels = nullptr) {
  const Index n = X.rows(), q = X.cols(), d = W.cols();
  if (W.rows() != n) throw std::invalid_argument("fit_multinomial_glm: sizes disagree");
  if (n == 0 || d < 1) throw DataError("fit_multinomial_glm: empty input");
  if (W.minCoeff() < 0) throw std::invalid_argument("fit_multinomial_glm: negative weight");
  Vector ni = W.rowwise().sum();
  if (ni.maxCoeff() <= 0) throw DataError("fit_multinomial_glm: all row weights zero");

  std::vector<Index> kept = detail::independent_columns(X);
  std::vector<Index> dropped;
  for (Index c = 0; c < q; ++c)
    if (!std::binary_search(kept.begin(), kept.end(), c)) dropped.push_back(c);
  detail::warn_dropped(dropped, labels);
  const Matrix Xk = detail::take_columns(X, kept);
  const Index m = Xk.cols();
  const Index nfree = d - 1;  // free coefficient rows

  Matrix B = Matrix::Zero(nfree, m);
  if (init && init->rows() == d && init->cols() == q)
    for (Index z = 0; z < nfree; ++z)
      for (size_t k = 0; k < kept.size(); ++k) B(z, static_cast<Index>(k)) = (*init)(z, kept[k]);

  auto scores = [&](const Matrix& b) {
    Matrix eta = Matrix::Zero(n, d);
    if (nfree > 0) eta.leftCols(nfree) = Xk * b.transpose();
    return eta.unaryExpr([&](double v) { return clamp_lp(v, opt.clamp); }).eval();
  };
  auto objective_of = [&](const Matrix& P) {
    double s = 0;
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < d; ++j)
        if (W(i, j) > 0) s += W(i, j) * std::log(P(i, j));
    return s;
  };

  MultinomialGlmFit fit;
  Matrix P = softmax_rows(scores(B));
  double obj = objective_of(P);

  const Index dim = nfree * m;
  Matrix J(dim, dim);
  Vector g(dim);
  for (int it = 0; it < opt.max_iter && !fit.converged && nfree > 0; ++it) {
    for (Index z = 0; z < nfree; ++z) {
      Vector r = W.col(z) - (ni.array() * P.col(z).array()).matrix();
      g.segment(z * m, m) = Xk.transpose() * r;
    }
    if (g.cwiseAbs().maxCoeff() < opt.score_tol) {
      fit.converged = true;
      break;
    }
    for (Index z = 0; z < nfree; ++z)
      for (Index zp = z; zp < nfree; ++zp) {
        Vector dvec = (ni.array() * P.col(z).array() *
                       ((z == zp ? 1.0 : 0.0) - P.col(zp).array()))
                          .matrix();
        Matrix block = Xk.transpose() * dvec.asDiagonal() * Xk;
        J.block(z * m, zp * m, m, m) = block;
        if (zp != z) J.block(zp * m, z * m, m, m) = block.transpose();
      }
    Vector delta = J.ldlt().solve(g);
    if (!delta.allFinite()) throw NumericError("fit_multinomial_glm: singular Newton system");

    double step = 1.0;
    bool accepted = false;
    Matrix nextB, nextP;
    double cand = 0;
    for (int half = 0; half < 40; ++half) {
      nextB = B;
      for (Index z = 0; z < nfree; ++z) nextB.row(z) += step * delta.segment(z * m, m).transpose();
      nextP = softmax_rows(scores(nextB));
      cand = objective_of(nextP);
      if (cand >= obj - 1e-12 * (1 + std::abs(obj))) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      fit.converged = true;
      break;
    }
    double change = std::abs(cand - obj);
    B = nextB;
    P = nextP;
    obj = cand;
    ++fit.iterations;
    if (change <= opt.ll_tol * (1 + std::abs(obj))) fit.converged = true;
  }
  if (nfree == 0) fit.converged = true;
  if (!fit.converged)
    throw NumericError("fit_multinomial_glm: no convergence in " + std::to_string(opt.max_iter) +
                       " Newton steps");

  fit.B = Matrix::Zero(d, q);
  fit.se = Matrix::Constant(d, q, std::numeric_limits<double>::quiet_NaN());
  if (nfree > 0) {
    for (Index z = 0; z < nfree; ++z) {
      Vector r = W.col(z) - (ni.array() * P.col(z).array()).matrix();
      g.segment(z * m, m) = Xk.transpose() * r;
    }
    for (Index z = 0; z < nfree; ++z)
      for (Index zp = z; zp < nfree; ++zp) {
        Vector dvec = (ni.array() * P.col(z).array() *
                       ((z == zp ? 1.0 : 0.0) - P.col(zp).array()))
                          .matrix();
        Matrix block = Xk.transpose() * dvec.asDiagonal() * Xk;
        J.block(z * m, zp * m, m, m) = block;
        if (zp != z) J.block(zp * m, z * m, m, m) = block.transpose();
      }
    Matrix cov = J.ldlt().solve(Matrix::Identity(dim, dim));
    for (Index z = 0; z < nfree; ++z)
      for (size_t k = 0; k < kept.size(); ++k) {
        fit.B(z, kept[k]) = B(z, static_cast<Index>(k));
        double v = cov(z * m + static_cast<Index>(k), z * m + static_cast<Index>(k));
        fit.se(z, kept[k]) = v > 0 ? std::sqrt(v) : std::numeric_limits<double>::quiet_NaN();
      }
    fit.cov = cov;
  }
  fit.objective = obj;
  fit.dropped = dropped;
  fit.kept = kept;
  return fit;
}

// ------------------------------------------------------------ designs

enum class DesignTarget { occurrence, reporting };

// true when `name` looks like a delay-indexed period column ps<j>_<flag>
inline bool parse_ps_column(const std::string& name, int* delay_out = nullptr) {
  if (name.size() < 4 || name[0] != 'p' || name[1] != 's') return false;
  size_t k = 2;
  while (k < name.size() && std::isdigit(static_cast<unsigned char>(name[k]))) ++k;
  if (k == 2 || k >= name.size() || name[k] != '_' || k + 1 >= name.size()) return false;
  if (delay_out) *delay_out = std::stoi(name.substr(2, k - 2));
  return true;
}

// reduced design: intercept, one dropped indicator per categorical group,
// and (occurrence only) just the delay-1 period block
struct GlmDesign {
  std::vector<std::string> labels;  // "(intercept)" first, then source column names

  Index width() const { return static_cast<Index>(labels.size()); }

  Matrix build(const FeatureSchema& schema, const Matrix& X,
               const std::vector<Index>& rows) const {
    Matrix D(static_cast<Index>(rows.size()), width());
    D.col(0).setOnes();
    for (Index c = 1; c < width(); ++c) {
      Index src = schema.require(labels[static_cast<size_t>(c)]);
      for (size_t r = 0; r < rows.size(); ++r)
        D(static_cast<Index>(r), c) = X(rows[r], src);
    }
    return D;
  }
  Matrix build(const Dataset& data, const std::vector<Index>& rows) const {
    return build(data.schema, data.X, rows);
  }
  Matrix build(const Dataset& data) const { return build(data, all_rows(data)); }
};

inline GlmDesign build_design(const FeatureSchema& schema, DesignTarget target) {
  GlmDesign d;
  d.labels.push_back("(intercept)");
  std::vector<bool> drop(static_cast<size_t>(schema.n_features()), false);
  for (const FeatureGroup& g : schema.groups)
    if (!g.columns.empty()) drop[static_cast<size_t>(g.columns.front())] = true;
  for (Index c = 0; c < schema.n_features(); ++c) {
    if (drop[static_cast<size_t>(c)]) continue;
    const std::string& nm = schema.names[static_cast<size_t>(c)];
    int delay = 0;
    if (target == DesignTarget::occurrence && parse_ps_column(nm, &delay) && delay != 1) continue;
    d.labels.push_back(nm);
  }
  return d;
}

// ------------------------------------------------------------ learner

class GlmLearner final : public Learner {
 public:
  explicit GlmLearner(GlmOptions opt = {}) : opt_(opt) {}

  std::string kind() const override { return "glm"; }

  void m_step(const MStepContext& ctx) override {
    if (occ_design_.labels.empty()) {
      occ_design_ = build_design(ctx.data.schema, DesignTarget::occurrence);
      rep_design_ = build_design(ctx.data.schema, DesignTarget::reporting);
      d_ = ctx.data.d();
    }
    Matrix Xo = occ_design_.build(ctx.data, ctx.train_rows);
    Vector y(static_cast<Index>(ctx.train_rows.size()));
    for (size_t r = 0; r < ctx.train_rows.size(); ++r)
      y(static_cast<Index>(r)) = ctx.completed.row(ctx.train_rows[r]).sum();
    const Vector* occ_init = occ_.beta.size() ? &occ_.beta : nullptr;
    occ_ = fit_poisson_glm(Xo, y, opt_, occ_init, nullptr, &occ_design_.labels);

    Matrix Xr = rep_design_.build(ctx.data, ctx.train_rows);
    Matrix W(static_cast<Index>(ctx.train_rows.size()), d_);
    for (size_t r = 0; r < ctx.train_rows.size(); ++r)
      W.row(static_cast<Index>(r)) = ctx.completed.row(ctx.train_rows[r]);
    const Matrix* rep_init = rep_.B.size() ? &rep_.B : nullptr;
    rep_ = fit_multinomial_glm(Xr, W, opt_, rep_init, &rep_design_.labels);
  }

  ParameterEstimates predict(const Dataset& data) const override {
    if (occ_design_.labels.empty() || !occ_.beta.size())
      throw DataError("glm learner is not fitted");
    ParameterEstimates est;
    Matrix Xo = occ_design_.build(data);
    est.lambda = (Xo * occ_.beta)
                     .unaryExpr([&](double v) { return std::exp(clamp_lp(v, opt_.clamp)); });
    Matrix Xr = rep_design_.build(data);
    Matrix eta = (Xr * rep_.B.transpose())
                     .unaryExpr([&](double v) { return clamp_lp(v, opt_.clamp); });
    est.p = softmax_rows(eta);
    return est;
  }

  void snapshot() override {
    snap_occ_ = occ_;
    snap_rep_ = rep_;
  }
  void rollback() override {
    if (snap_occ_.beta.size()) {
      occ_ = snap_occ_;
      rep_ = snap_rep_;
    }
  }

  nlohmann::json last_fit_info() const override {
    return {{"occ_newton_steps", occ_.iterations},
            {"rep_newton_steps", rep_.iterations},
            {"occ_objective", occ_.objective},
            {"rep_objective", rep_.objective}};
  }

  nlohmann::json to_json() const override;
  static std::unique_ptr<GlmLearner> from_json(const nlohmann::json& j);

  // (column name, class index, value) rows; class 0 = occurrence model
  std::string coefficients_csv() const {
    std::ostringstream out;
    out << "model,column,class,value\n";
    for (Index c = 0; c < occ_design_.width(); ++c)
      out << "occurrence," << occ_design_.labels[static_cast<size_t>(c)] << ",0,"
          << occ_.beta(c) << "\n";
    for (Index z = 0; z < d_; ++z)
      for (Index c = 0; c < rep_design_.width(); ++c)
        out << "reporting," << rep_design_.labels[static_cast<size_t>(c)] << "," << (z + 1) << ","
            << rep_.B(z, c) << "\n";
    return out.str();
  }

  const PoissonGlmFit& occurrence_fit() const { return occ_; }
  const MultinomialGlmFit& reporting_fit() const { return rep_; }
  const GlmDesign& occurrence_design() const { return occ_design_; }
  const GlmDesign& reporting_design() const { return rep_design_; }

 private:
  GlmOptions opt_;
  GlmDesign occ_design_, rep_design_;
  Index d_ = 0;
  PoissonGlmFit occ_;
  MultinomialGlmFit rep_;
  PoissonGlmFit snap_occ_;
  MultinomialGlmFit snap_rep_;
};

namespace detail {

inline nlohmann::json real_array(const Vector& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Index i = 0; i < v.size(); ++i)
    a.push_back(std::isfinite(v(i)) ? nlohmann::json(v(i)) : nlohmann::json(nullptr));
  return a;
}

inline Vector real_array_parse(const nlohmann::json& a) {
  Vector v(static_cast<Index>(a.size()));
  for (Index i = 0; i < v.size(); ++i) {
    const auto& e = a[static_cast<size_t>(i)];
    v(i) = e.is_null() ? std::numeric_limits<double>::quiet_NaN() : e.get<double>();
  }
  return v;
}

inline nlohmann::json real_matrix(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Index i = 0; i < m.rows(); ++i) rows.push_back(real_array(m.row(i).transpose()));
  return rows;
}

inline Matrix real_matrix_parse(const nlohmann::json& rows) {
  if (rows.empty()) return Matrix(0, 0);
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows[0].size()));
  for (Index i = 0; i < m.rows(); ++i)
    m.row(i) = real_array_parse(rows[static_cast<size_t>(i)]).transpose();
  return m;
}

}  // namespace detail

inline nlohmann::json GlmLearner::to_json() const {
  return {{"schema_version", 1},
          {"kind", "glm"},
          {"d", d_},
          {"occurrence",
           {{"labels", occ_design_.labels},
            {"beta", detail::real_array(occ_.beta)},
            {"se", detail::real_array(occ_.se)}}},
          {"reporting",
           {{"labels", rep_design_.labels},
            {"B", detail::real_matrix(rep_.B)},
            {"se", detail::real_matrix(rep_.se)}}}};
}

inline std::unique_ptr<GlmLearner> GlmLearner::from_json(const nlohmann::json& j) {
  auto lr = std::make_unique<GlmLearner>();
  lr->d_ = j.at("d").get<Index>();
  lr->occ_design_.labels = j.at("occurrence").at("labels").get<std::vector<std::string>>();
  lr->rep_design_.labels = j.at("reporting").at("labels").get<std::vector<std::string>>();
  lr->occ_.beta = detail::real_array_parse(j.at("occurrence").at("beta"));
  lr->occ_.se = detail::real_array_parse(j.at("occurrence").at("se"));
  lr->rep_.B = detail::real_matrix_parse(j.at("reporting").at("B"));
  lr->rep_.se = detail::real_matrix_parse(j.at("reporting").at("se"));
  lr->occ_.converged = lr->rep_.converged = true;
  return lr;
}

}  // namespace nowcast
