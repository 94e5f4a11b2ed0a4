#pragma once
// Additive gradient-boosted regression trees with second-order Poisson and
// softmax objectives.  Trees accumulate across EM iterations: each M-step
// appends rounds to the incoming ensemble, so earlier iterations' trees are
// never refit.

#include "nowcast/core.hpp"
#include "nowcast/learner.hpp"
#include "nowcast/likelihood.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <utility>
#include <vector>

namespace nowcast {

// ------------------------------------------------------------ trees

template <typename Scalar = double>
struct RegressionTree {
  struct Node {
    int feature = -1;  // -1 marks a leaf
    Scalar threshold = 0;
    Scalar value = 0;
    int left = -1, right = -1;
  };
  std::vector<Node> nodes;

  bool empty() const { return nodes.empty(); }

  template <typename Row>
  Scalar predict_row(const Row& x) const {
    if (nodes.empty()) return Scalar(0);
    int k = 0;
    while (nodes[static_cast<size_t>(k)].feature >= 0) {
      const Node& nd = nodes[static_cast<size_t>(k)];
      k = x(nd.feature) < nd.threshold ? nd.left : nd.right;
    }
    return nodes[static_cast<size_t>(k)].value;
  }
};

// ------------------------------------------------------------ objectives

// Poisson: g_i = exp(f_i) - N_i, h_i = exp(f_i)
inline void occurrence_grad_hess(const Vector& scores, const Vector& completed_totals,
                                 Vector& g, Vector& h) {
  if (scores.size() != completed_totals.size())
    throw std::invalid_argument("occurrence_grad_hess: sizes disagree");
  if (!scores.allFinite()) throw NumericError("occurrence_grad_hess: non-finite score");
  g.resize(scores.size());
  h.resize(scores.size());
  for (Index i = 0; i < scores.size(); ++i) {
    double e = std::exp(scores(i));
    g(i) = e - completed_totals(i);
    h(i) = e;
  }
}

// Softmax: G_ij = p_ij - y_ij, H_ij = p_ij (1 - p_ij); weights enter later,
// multiplicatively, when rows are aggregated into split statistics.
inline void reporting_grad_hess(const Matrix& scores, const std::vector<int>& labels,
                                Matrix& G, Matrix& H) {
  if (scores.rows() != static_cast<Index>(labels.size()))
    throw std::invalid_argument("reporting_grad_hess: sizes disagree");
  if (!scores.allFinite()) throw NumericError("reporting_grad_hess: non-finite score");
  Matrix P = softmax_rows(scores);
  G = P;
  H.resize(P.rows(), P.cols());
  for (Index i = 0; i < P.rows(); ++i) {
    G(i, labels[static_cast<size_t>(i)]) -= 1.0;
    for (Index j = 0; j < P.cols(); ++j) H(i, j) = P(i, j) * (1.0 - P(i, j));
  }
}

// ------------------------------------------------------------ tree fitting

// Presorted feature orders over a fixed row multiset, reused across boosting
// rounds.  `parent[k]` is the X row behind fit-row k (duplicates allowed for
// expanded reporting rows).
struct TreeFitContext {
  const Matrix* X = nullptr;
  std::vector<Index> parent;
  std::vector<std::vector<int>> order;    // per feature: fit-row ids sorted by value
  std::vector<std::vector<double>> vals;  // per feature: values aligned with `order`

  Index size() const { return static_cast<Index>(parent.size()); }

  void build(const Matrix& x, std::vector<Index> parents) {
    X = &x;
    parent = std::move(parents);
    const int q = static_cast<int>(x.cols());
    const int m = static_cast<int>(parent.size());
    order.assign(static_cast<size_t>(q), {});
    vals.assign(static_cast<size_t>(q), {});
    std::vector<int> idx(static_cast<size_t>(m));
    for (int k = 0; k < m; ++k) idx[static_cast<size_t>(k)] = k;
    for (int f = 0; f < q; ++f) {
      auto& ord = order[static_cast<size_t>(f)];
      ord = idx;
      std::stable_sort(ord.begin(), ord.end(), [&](int a, int b) {
        return x(parent[static_cast<size_t>(a)], f) < x(parent[static_cast<size_t>(b)], f);
      });
      auto& vv = vals[static_cast<size_t>(f)];
      vv.resize(static_cast<size_t>(m));
      for (int k = 0; k < m; ++k)
        vv[static_cast<size_t>(k)] = x(parent[static_cast<size_t>(ord[static_cast<size_t>(k)])], f);
    }
  }

  // Build for expanded rows grouped by record, reusing a record-level sort:
  // spans[r] = [begin, end) in the expanded arrays for record slot r, and
  // record_order[f] lists record slots sorted by feature f.
  void build_grouped(const Matrix& x, const std::vector<Index>& record_rows,
                     const std::vector<std::pair<int, int>>& spans,
                     std::vector<Index> expanded_parent,
                     const std::vector<std::vector<int>>& record_order) {
    X = &x;
    parent = std::move(expanded_parent);
    const int q = static_cast<int>(x.cols());
    const int m = static_cast<int>(parent.size());
    order.assign(static_cast<size_t>(q), {});
    vals.assign(static_cast<size_t>(q), {});
    for (int f = 0; f < q; ++f) {
      auto& ord = order[static_cast<size_t>(f)];
      auto& vv = vals[static_cast<size_t>(f)];
      ord.reserve(static_cast<size_t>(m));
      vv.reserve(static_cast<size_t>(m));
      for (int slot : record_order[static_cast<size_t>(f)]) {
        const double v = x(record_rows[static_cast<size_t>(slot)], f);
        for (int k = spans[static_cast<size_t>(slot)].first;
             k < spans[static_cast<size_t>(slot)].second; ++k) {
          ord.push_back(k);
          vv.push_back(v);
        }
      }
    }
  }
};

// Exact greedy induction maximizing G_L^2/H_L + G_R^2/H_R - G_P^2/H_P with
// leaf value -G/H.  Ties go to the lowest feature index, then the lowest
// threshold; nodes with H < min_child_weight are not split and candidate
// splits must leave both children with H >= min_child_weight.
inline RegressionTree<double> fit_regression_tree(const TreeFitContext& ctx, const Vector& g,
                                                  const Vector& h, const Vector& w, int depth,
                                                  double min_child_weight = 1e-3) {
  const int m = static_cast<int>(ctx.size());
  if (m == 0) throw DataError("fit_regression_tree: empty input");
  if (depth < 1) throw std::invalid_argument("fit_regression_tree: depth must be >= 1");
  if (g.size() != m || h.size() != m || w.size() != m)
    throw std::invalid_argument("fit_regression_tree: sizes disagree");

  RegressionTree<double> tree;
  auto& nodes = tree.nodes;
  nodes.emplace_back();

  struct NodeStat {
    int id;
    double G, H;
  };
  std::vector<NodeStat> level;
  {
    double G = 0, H = 0;
    for (int k = 0; k < m; ++k) {
      G += w(k) * g(k);
      H += w(k) * h(k);
    }
    level.push_back({0, G, H});
  }
  std::vector<int> node_of(static_cast<size_t>(m), 0);

  struct Best {
    double gain = 0;
    int feature = -1;
    double threshold = 0;
  };
  const int q = static_cast<int>(ctx.order.size());

  for (int lvl = 0; lvl < depth && !level.empty(); ++lvl) {
    const int nact = static_cast<int>(level.size());
    std::vector<int> slot_of(nodes.size(), -1);
    std::vector<char> splittable(static_cast<size_t>(nact), 1);
    for (int s = 0; s < nact; ++s) {
      slot_of[static_cast<size_t>(level[static_cast<size_t>(s)].id)] = s;
      if (level[static_cast<size_t>(s)].H < min_child_weight) splittable[static_cast<size_t>(s)] = 0;
    }
    std::vector<Best> best(static_cast<size_t>(nact));
    std::vector<double> GL(static_cast<size_t>(nact)), HL(static_cast<size_t>(nact)),
        last(static_cast<size_t>(nact));
    std::vector<char> seen(static_cast<size_t>(nact));

    for (int f = 0; f < q; ++f) {
      std::fill(GL.begin(), GL.end(), 0.0);
      std::fill(HL.begin(), HL.end(), 0.0);
      std::fill(seen.begin(), seen.end(), 0);
      const auto& ord = ctx.order[static_cast<size_t>(f)];
      const auto& vv = ctx.vals[static_cast<size_t>(f)];
      for (int k = 0; k < m; ++k) {
        const int row = ord[static_cast<size_t>(k)];
        const int slot = slot_of[static_cast<size_t>(node_of[static_cast<size_t>(row)])];
        if (slot < 0 || !splittable[static_cast<size_t>(slot)]) continue;
        const double v = vv[static_cast<size_t>(k)];
        if (seen[static_cast<size_t>(slot)] && v > last[static_cast<size_t>(slot)]) {
          const NodeStat& ns = level[static_cast<size_t>(slot)];
          const double gl = GL[static_cast<size_t>(slot)], hl = HL[static_cast<size_t>(slot)];
          const double gr = ns.G - gl, hr = ns.H - hl;
          if (hl >= min_child_weight && hr >= min_child_weight) {
            const double gain = gl * gl / hl + gr * gr / hr - ns.G * ns.G / ns.H;
            Best& b = best[static_cast<size_t>(slot)];
            if (gain > b.gain) b = {gain, f, 0.5 * (last[static_cast<size_t>(slot)] + v)};
          }
        }
        GL[static_cast<size_t>(slot)] += w(row) * g(row);
        HL[static_cast<size_t>(slot)] += w(row) * h(row);
        last[static_cast<size_t>(slot)] = v;
        seen[static_cast<size_t>(slot)] = 1;
      }
    }

    std::vector<NodeStat> next;
    std::vector<char> went_internal(static_cast<size_t>(nact), 0);
    for (int s = 0; s < nact; ++s) {
      const NodeStat& ns = level[static_cast<size_t>(s)];
      const Best& b = best[static_cast<size_t>(s)];
      auto& nd = nodes[static_cast<size_t>(ns.id)];
      if (splittable[static_cast<size_t>(s)] && b.feature >= 0 && b.gain > 0) {
        nd.feature = b.feature;
        nd.threshold = b.threshold;
        nd.left = static_cast<int>(nodes.size());
        nd.right = nd.left + 1;
        nodes.emplace_back();
        nodes.emplace_back();
        next.push_back({nd.left, 0, 0});
        next.push_back({nd.right, 0, 0});
        went_internal[static_cast<size_t>(s)] = 1;
      } else {
        nd.feature = -1;
        nd.value = ns.H > 0 ? -ns.G / ns.H : 0.0;
      }
    }
    // partition rows into children and accumulate their statistics
    std::vector<int> next_slot(nodes.size(), -1);
    for (size_t s = 0; s < next.size(); ++s) next_slot[static_cast<size_t>(next[s].id)] = static_cast<int>(s);
    for (int k = 0; k < m; ++k) {
      const int nid = node_of[static_cast<size_t>(k)];
      const int slot = slot_of[static_cast<size_t>(nid)];
      if (slot < 0 || !went_internal[static_cast<size_t>(slot)]) continue;
      const auto& nd = nodes[static_cast<size_t>(nid)];
      const double v = (*ctx.X)(ctx.parent[static_cast<size_t>(k)], nd.feature);
      const int child = v < nd.threshold ? nd.left : nd.right;
      node_of[static_cast<size_t>(k)] = child;
      NodeStat& cs = next[static_cast<size_t>(next_slot[static_cast<size_t>(child)])];
      cs.G += w(k) * g(k);
      cs.H += w(k) * h(k);
    }
    level = std::move(next);
  }
  // depth limit reached: finalize any still-open nodes as leaves
  for (const NodeStat& ns : level) {
    auto& nd = tree.nodes[static_cast<size_t>(ns.id)];
    nd.feature = -1;
    nd.value = ns.H > 0 ? -ns.G / ns.H : 0.0;
  }
  return tree;
}

inline std::vector<Index> all_rows_of(const Matrix& X) {
  std::vector<Index> rows(static_cast<size_t>(X.rows()));
  std::iota(rows.begin(), rows.end(), Index(0));
  return rows;
}

inline RegressionTree<double> fit_regression_tree(const Matrix& X, const Vector& g, const Vector& h,
                                                  const Vector& w, int depth,
                                                  double min_child_weight = 1e-3) {
  TreeFitContext ctx;
  ctx.build(X, all_rows_of(X));
  return fit_regression_tree(ctx, g, h, w, depth, min_child_weight);
}

// ------------------------------------------------------------ ensembles

template <typename Scalar = double>
struct BoostedEnsemble {
  Scalar base = 0;
  Scalar eta = 0.1;
  std::vector<RegressionTree<Scalar>> trees;

  template <typename Row>
  Scalar predict_row(const Row& x) const {
    Scalar s = base;
    for (const auto& t : trees) s += eta * t.predict_row(x);
    return s;
  }
  Vector predict(const Matrix& X, const std::vector<Index>& rows) const {
    Vector out(static_cast<Index>(rows.size()));
    for (size_t k = 0; k < rows.size(); ++k)
      out(static_cast<Index>(k)) = predict_row(X.row(rows[k]));
    return out;
  }
};

template <typename Scalar = double>
struct SoftmaxEnsemble {
  Eigen::RowVectorXd base;                  // 1 x d
  Scalar eta = 0.01;
  std::vector<RegressionTree<Scalar>> trees;  // round-major, d trees per round

  Index n_classes() const { return base.size(); }
  Index n_rounds() const { return n_classes() ? static_cast<Index>(trees.size()) / n_classes() : 0; }

  template <typename Row>
  Eigen::RowVectorXd predict_scores_row(const Row& x) const {
    Eigen::RowVectorXd s = base;
    const Index d = n_classes();
    for (size_t t = 0; t < trees.size(); ++t)
      s(static_cast<Index>(t) % d) += eta * trees[t].predict_row(x);
    return s;
  }
  Matrix predict_scores(const Matrix& X, const std::vector<Index>& rows) const {
    Matrix out(static_cast<Index>(rows.size()), n_classes());
    for (size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Index>(k)) = predict_scores_row(X.row(rows[k]));
    return out;
  }
};

// ------------------------------------------------------------ expansion

// Per-event rows for the reporting model: each positive completed cell
// (i, j) becomes floor(N_ij) rows of weight 1 plus one fractional-weight row.
struct ExpandedReporting {
  std::vector<Index> parent;  // dataset row
  std::vector<int> cls;       // 0-based delay class
  Vector weight;

  Index size() const { return static_cast<Index>(parent.size()); }
};

inline ExpandedReporting expand_reporting_dataset(const Matrix& completed,
                                                  const std::vector<Index>& rows) {
  ExpandedReporting out;
  std::vector<double> wts;
  for (Index r : rows)
    for (Index j = 0; j < completed.cols(); ++j) {
      const double nij = completed(r, j);
      if (nij < 0) throw std::invalid_argument("expand_reporting_dataset: negative count");
      if (nij == 0) continue;
      double whole = std::floor(nij);
      double frac = nij - whole;
      for (long k = 0; k < static_cast<long>(whole); ++k) {
        out.parent.push_back(r);
        out.cls.push_back(static_cast<int>(j));
        wts.push_back(1.0);
      }
      if (frac > 0) {
        out.parent.push_back(r);
        out.cls.push_back(static_cast<int>(j));
        wts.push_back(frac);
      }
    }
  out.weight = Eigen::Map<Vector>(wts.data(), static_cast<Index>(wts.size()));
  return out;
}

inline ExpandedReporting expand_reporting_dataset(const Matrix& completed) {
  std::vector<Index> rows(static_cast<size_t>(completed.rows()));
  std::iota(rows.begin(), rows.end(), Index(0));
  return expand_reporting_dataset(completed, rows);
}

// weighted log-likelihood over expanded rows; P holds class probabilities
// indexed by dataset row (the Appendix A.2 identity makes this equal q_rep)
inline double expanded_q_rep(const ExpandedReporting& rows, const Matrix& P) {
  return pairwise_sum_terms(rows.size(), [&](Index e) {
    const double p = P(rows.parent[static_cast<size_t>(e)], rows.cls[static_cast<size_t>(e)]);
    if (p <= 0) throw NumericError("expanded_q_rep: p <= 0 on an event row");
    return rows.weight(e) * std::log(p);
  });
}

// ------------------------------------------------------------ boosting

struct GbtModelConfig {
  double eta = 0.1;
  int t_first = 20;   // rounds at EM iteration 1
  int t_later = 10;   // rounds at EM iterations >= 2
  int depth = 3;
  int patience = 15;  // early-stopping rounds on val1
  double min_child_weight = 1e-3;
};

struct BoostDiagnostics {
  int rounds_fit = 0;
  int rounds_kept = 0;
  double best_q = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> q_trace;  // q on val1 after each round (index 0 = before boosting)
};

// Appends <= T rounds to the occurrence ensemble, starting from its current
// scores; stops early when q_occ on val1 has not improved for cfg.patience
// rounds, and truncates to the best round.
inline BoostDiagnostics boost_occurrence(BoostedEnsemble<double>& ens, const TreeFitContext& ctx,
                                         const Vector& y_fit, const Matrix& X,
                                         const std::vector<Index>& val1_rows, const Vector& y_val1,
                                         int T, const GbtModelConfig& cfg) {
  if (ens.eta != cfg.eta) throw ConfigError("boost_occurrence: ensemble eta differs from config");
  const Index m = ctx.size();
  if (y_fit.size() != m) throw std::invalid_argument("boost_occurrence: sizes disagree");

  Vector F(m);
  for (Index k = 0; k < m; ++k) F(k) = ens.predict_row(X.row(ctx.parent[static_cast<size_t>(k)]));
  Vector Fv = ens.predict(X, val1_rows);

  auto q_val = [&]() {
    return pairwise_sum_terms(Fv.size(), [&](Index i) {
      double lam = std::exp(Fv(i));
      return -lam + y_val1(i) * Fv(i);
    });
  };

  BoostDiagnostics diag;
  const size_t n0 = ens.trees.size();
  double best = q_val();
  diag.q_trace.push_back(best);
  diag.best_q = best;
  int best_round = 0, since_best = 0;
  Vector g, h;
  const Vector w = Vector::Ones(m);
  for (int t = 1; t <= T; ++t) {
    occurrence_grad_hess(F, y_fit, g, h);
    RegressionTree<double> tree = fit_regression_tree(ctx, g, h, w, cfg.depth, cfg.min_child_weight);
    ens.trees.push_back(tree);
    ++diag.rounds_fit;
    for (Index k = 0; k < m; ++k)
      F(k) += ens.eta * tree.predict_row(X.row(ctx.parent[static_cast<size_t>(k)]));
    for (size_t k = 0; k < val1_rows.size(); ++k)
      Fv(static_cast<Index>(k)) += ens.eta * tree.predict_row(X.row(val1_rows[k]));
    double q = q_val();
    diag.q_trace.push_back(q);
    if (q > best) {
      best = q;
      best_round = t;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  ens.trees.resize(n0 + static_cast<size_t>(best_round));
  diag.rounds_kept = best_round;
  diag.best_q = best;
  return diag;
}

// Reporting counterpart: d trees per round on the shared expanded rows, all
// computed from the same scores before any of the round's trees apply.
inline BoostDiagnostics boost_reporting(SoftmaxEnsemble<double>& ens, const TreeFitContext& ctx,
                                        const ExpandedReporting& rows, const Matrix& X,
                                        const std::vector<Index>& train_records,
                                        const std::vector<Index>& val1_records,
                                        const Matrix& completed, int T,
                                        const GbtModelConfig& cfg) {
  if (ens.eta != cfg.eta) throw ConfigError("boost_reporting: ensemble eta differs from config");
  const Index d = ens.n_classes();
  const Index m = ctx.size();
  if (rows.size() != m) throw std::invalid_argument("boost_reporting: sizes disagree");

  std::vector<int> local(static_cast<size_t>(X.rows()), -1);
  for (size_t k = 0; k < train_records.size(); ++k)
    local[static_cast<size_t>(train_records[k])] = static_cast<int>(k);

  Matrix Ft = ens.predict_scores(X, train_records);
  Matrix Fv = ens.predict_scores(X, val1_records);

  auto q_val = [&]() {
    Matrix P = softmax_rows(Fv);
    return pairwise_sum_terms(static_cast<Index>(val1_records.size()), [&](Index k) {
      double s = 0;
      for (Index j = 0; j < d; ++j) {
        double nij = completed(val1_records[static_cast<size_t>(k)], j);
        if (nij > 0) s += nij * std::log(P(k, j));
      }
      return s;
    });
  };

  BoostDiagnostics diag;
  const size_t n0 = ens.trees.size();
  double best = q_val();
  diag.q_trace.push_back(best);
  diag.best_q = best;
  int best_round = 0, since_best = 0;
  Vector g(m), h(m);
  for (int t = 1; t <= T; ++t) {
    Matrix P = softmax_rows(Ft);
    std::vector<RegressionTree<double>> round;
    round.reserve(static_cast<size_t>(d));
    for (Index c = 0; c < d; ++c) {
      for (Index e = 0; e < m; ++e) {
        const int li = local[static_cast<size_t>(rows.parent[static_cast<size_t>(e)])];
        const double p = P(li, c);
        g(e) = p - (rows.cls[static_cast<size_t>(e)] == static_cast<int>(c) ? 1.0 : 0.0);
        h(e) = p * (1.0 - p);
      }
      round.push_back(
          fit_regression_tree(ctx, g, h, rows.weight, cfg.depth, cfg.min_child_weight));
    }
    for (Index c = 0; c < d; ++c) ens.trees.push_back(round[static_cast<size_t>(c)]);
    ++diag.rounds_fit;
    for (size_t k = 0; k < train_records.size(); ++k)
      for (Index c = 0; c < d; ++c)
        Ft(static_cast<Index>(k), c) +=
            ens.eta * round[static_cast<size_t>(c)].predict_row(X.row(train_records[k]));
    for (size_t k = 0; k < val1_records.size(); ++k)
      for (Index c = 0; c < d; ++c)
        Fv(static_cast<Index>(k), c) +=
            ens.eta * round[static_cast<size_t>(c)].predict_row(X.row(val1_records[k]));
    double q = q_val();
    diag.q_trace.push_back(q);
    if (q > best) {
      best = q;
      best_round = t;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  ens.trees.resize(n0 + static_cast<size_t>(best_round) * static_cast<size_t>(d));
  diag.rounds_kept = best_round;
  diag.best_q = best;
  return diag;
}

// ------------------------------------------------------------ learner

struct GbtConfig {
  GbtModelConfig occ{0.1, 20, 10, 3, 15, 1e-3};
  GbtModelConfig rep{0.01, 20, 20, 3, 30, 1e-3};
};

class GbtLearner final : public Learner {
 public:
  explicit GbtLearner(GbtConfig cfg = {}) : cfg_(cfg) {
    occ_.eta = cfg_.occ.eta;
    rep_.eta = cfg_.rep.eta;
  }

  std::string kind() const override { return "gbt"; }

  void m_step(const MStepContext& ctx) override {
    const Index d = ctx.data.d();
    const bool fresh = ctx.em_iteration == 1 || feature_names_.empty();
    if (fresh) {
      feature_names_ = ctx.data.schema.names;
      occ_.trees.clear();
      rep_.trees.clear();
      double mean_total = 0;
      for (Index r : ctx.train_rows) mean_total += ctx.completed.row(r).sum();
      mean_total /= static_cast<double>(ctx.train_rows.size());
      if (!(mean_total > 0)) throw DataError("gbt learner: non-positive mean completed total");
      occ_.base = std::log(mean_total);
      rep_.base.resize(d);
      for (Index j = 0; j < d; ++j) rep_.base(j) = std::log(std::max(ctx.p0(j), 1e-8));
    }
    if (fresh || occ_ctx_.parent != ctx.train_rows) {
      occ_ctx_.build(ctx.data.X, ctx.train_rows);
      rep_record_order_.clear();
    }

    Vector y_fit(static_cast<Index>(ctx.train_rows.size()));
    for (size_t k = 0; k < ctx.train_rows.size(); ++k)
      y_fit(static_cast<Index>(k)) = ctx.completed.row(ctx.train_rows[k]).sum();
    Vector y_val1(static_cast<Index>(ctx.val1_rows.size()));
    for (size_t k = 0; k < ctx.val1_rows.size(); ++k)
      y_val1(static_cast<Index>(k)) = ctx.completed.row(ctx.val1_rows[k]).sum();
    const int t_occ = ctx.em_iteration == 1 ? cfg_.occ.t_first : cfg_.occ.t_later;
    occ_diag_ = boost_occurrence(occ_, occ_ctx_, y_fit, ctx.data.X, ctx.val1_rows, y_val1, t_occ,
                                 cfg_.occ);

    ExpandedReporting rows = expand_reporting_dataset(ctx.completed, ctx.train_rows);
    TreeFitContext rep_ctx;
    build_expanded_context(rep_ctx, ctx.data.X, ctx.train_rows, rows);
    const int t_rep = ctx.em_iteration == 1 ? cfg_.rep.t_first : cfg_.rep.t_later;
    rep_diag_ = boost_reporting(rep_, rep_ctx, rows, ctx.data.X, ctx.train_rows, ctx.val1_rows,
                                ctx.completed, t_rep, cfg_.rep);
  }

  ParameterEstimates predict(const Dataset& data) const override {
    if (feature_names_.empty()) throw DataError("gbt learner is not fitted");
    if (data.schema.names != feature_names_)
      throw DataError("gbt learner: dataset schema differs from the fitted schema");
    ParameterEstimates est;
    auto rows = all_rows(data);
    est.lambda = occ_.predict(data.X, rows).array().exp();
    est.p = softmax_rows(rep_.predict_scores(data.X, rows));
    return est;
  }

  void snapshot() override {
    snap_ = {occ_.trees.size(), rep_.trees.size(), occ_.base, rep_.base};
  }
  void rollback() override {
    if (snap_.occ_trees == size_t(-1)) return;
    occ_.trees.resize(snap_.occ_trees);
    rep_.trees.resize(snap_.rep_trees);
    occ_.base = snap_.occ_base;
    rep_.base = snap_.rep_base;
  }

  nlohmann::json last_fit_info() const override {
    return {{"occ_rounds", occ_diag_.rounds_kept},
            {"rep_rounds", rep_diag_.rounds_kept},
            {"occ_q_val1", occ_diag_.best_q},
            {"rep_q_val1", rep_diag_.best_q}};
  }

  nlohmann::json to_json() const override;
  static std::unique_ptr<GbtLearner> from_json(const nlohmann::json& j);

  const BoostedEnsemble<double>& occurrence() const { return occ_; }
  const SoftmaxEnsemble<double>& reporting() const { return rep_; }
  BoostedEnsemble<double>& occurrence() { return occ_; }
  SoftmaxEnsemble<double>& reporting() { return rep_; }
  const BoostDiagnostics& occurrence_diagnostics() const { return occ_diag_; }
  const BoostDiagnostics& reporting_diagnostics() const { return rep_diag_; }
  const GbtConfig& config() const { return cfg_; }

 private:
  void build_expanded_context(TreeFitContext& out, const Matrix& X,
                              const std::vector<Index>& train_rows,
                              const ExpandedReporting& rows) {
    if (rep_record_order_.empty()) {
      const int q = static_cast<int>(X.cols());
      rep_record_order_.assign(static_cast<size_t>(q), {});
      std::vector<int> idx(train_rows.size());
      for (size_t k = 0; k < train_rows.size(); ++k) idx[k] = static_cast<int>(k);
      for (int f = 0; f < q; ++f) {
        auto ord = idx;
        std::stable_sort(ord.begin(), ord.end(), [&](int a, int b) {
          return X(train_rows[static_cast<size_t>(a)], f) < X(train_rows[static_cast<size_t>(b)], f);
        });
        rep_record_order_[static_cast<size_t>(f)] = std::move(ord);
      }
    }
    // spans of each record's expanded rows (records appear in train order)
    std::vector<std::pair<int, int>> spans(train_rows.size(), {0, 0});
    std::vector<int> local(static_cast<size_t>(X.rows()), -1);
    for (size_t k = 0; k < train_rows.size(); ++k) local[static_cast<size_t>(train_rows[k])] = static_cast<int>(k);
    Index e = 0;
    while (e < rows.size()) {
      Index b = e;
      Index rec = rows.parent[static_cast<size_t>(e)];
      while (e < rows.size() && rows.parent[static_cast<size_t>(e)] == rec) ++e;
      spans[static_cast<size_t>(local[static_cast<size_t>(rec)])] = {static_cast<int>(b),
                                                                     static_cast<int>(e)};
    }
    out.build_grouped(X, train_rows, spans, rows.parent, rep_record_order_);
  }

  GbtConfig cfg_;
  std::vector<std::string> feature_names_;
  BoostedEnsemble<double> occ_;
  SoftmaxEnsemble<double> rep_;
  TreeFitContext occ_ctx_;
  std::vector<std::vector<int>> rep_record_order_;
  BoostDiagnostics occ_diag_, rep_diag_;
  struct Snap {
    size_t occ_trees = size_t(-1);
    size_t rep_trees = 0;
    double occ_base = 0;
    Eigen::RowVectorXd rep_base;
  } snap_;
};

// ------------------------------------------------------------ serialization

namespace detail {

inline nlohmann::json tree_to_json(const RegressionTree<double>& t) {
  nlohmann::json feature = nlohmann::json::array(), threshold = nlohmann::json::array(),
                 value = nlohmann::json::array(), left = nlohmann::json::array(),
                 right = nlohmann::json::array();
  for (const auto& nd : t.nodes) {
    feature.push_back(nd.feature);
    threshold.push_back(nd.threshold);
    value.push_back(nd.value);
    left.push_back(nd.left);
    right.push_back(nd.right);
  }
  return {{"feature", feature}, {"threshold", threshold}, {"value", value},
          {"left", left},       {"right", right}};
}

inline RegressionTree<double> tree_from_json(const nlohmann::json& j) {
  RegressionTree<double> t;
  const auto& f = j.at("feature");
  t.nodes.resize(f.size());
  for (size_t k = 0; k < f.size(); ++k) {
    t.nodes[k].feature = j.at("feature")[k].get<int>();
    t.nodes[k].threshold = j.at("threshold")[k].get<double>();
    t.nodes[k].value = j.at("value")[k].get<double>();
    t.nodes[k].left = j.at("left")[k].get<int>();
    t.nodes[k].right = j.at("right")[k].get<int>();
  }
  return t;
}

}  // namespace detail

inline nlohmann::json GbtLearner::to_json() const {
  nlohmann::json occ_trees = nlohmann::json::array(), rep_trees = nlohmann::json::array();
  for (const auto& t : occ_.trees) occ_trees.push_back(detail::tree_to_json(t));
  for (const auto& t : rep_.trees) rep_trees.push_back(detail::tree_to_json(t));
  nlohmann::json rep_base = nlohmann::json::array();
  for (Index j = 0; j < rep_.base.size(); ++j) rep_base.push_back(rep_.base(j));
  return {{"schema_version", 1},
          {"kind", "gbt"},
          {"feature_names", feature_names_},
          {"config",
           {{"occ",
             {{"eta", cfg_.occ.eta},
              {"t_first", cfg_.occ.t_first},
              {"t_later", cfg_.occ.t_later},
              {"depth", cfg_.occ.depth},
              {"patience", cfg_.occ.patience},
              {"min_child_weight", cfg_.occ.min_child_weight}}},
            {"rep",
             {{"eta", cfg_.rep.eta},
              {"t_first", cfg_.rep.t_first},
              {"t_later", cfg_.rep.t_later},
              {"depth", cfg_.rep.depth},
              {"patience", cfg_.rep.patience},
              {"min_child_weight", cfg_.rep.min_child_weight}}}}},
          {"occurrence", {{"base", occ_.base}, {"eta", occ_.eta}, {"trees", occ_trees}}},
          {"reporting",
           {{"base", rep_base}, {"eta", rep_.eta}, {"trees", rep_trees}}}};
}

inline GbtModelConfig gbt_model_config_from_json(const nlohmann::json& j) {
  GbtModelConfig c;
  c.eta = j.at("eta").get<double>();
  c.t_first = j.at("t_first").get<int>();
  c.t_later = j.at("t_later").get<int>();
  c.depth = j.at("depth").get<int>();
  c.patience = j.at("patience").get<int>();
  c.min_child_weight = j.value("min_child_weight", 1e-3);
  return c;
}

inline std::unique_ptr<GbtLearner> GbtLearner::from_json(const nlohmann::json& j) {
  GbtConfig cfg;
  cfg.occ = gbt_model_config_from_json(j.at("config").at("occ"));
  cfg.rep = gbt_model_config_from_json(j.at("config").at("rep"));
  auto lr = std::make_unique<GbtLearner>(cfg);
  lr->feature_names_ = j.at("feature_names").get<std::vector<std::string>>();
  lr->occ_.base = j.at("occurrence").at("base").get<double>();
  lr->occ_.eta = j.at("occurrence").at("eta").get<double>();
  for (const auto& t : j.at("occurrence").at("trees")) lr->occ_.trees.push_back(detail::tree_from_json(t));
  const auto& rb = j.at("reporting").at("base");
  lr->rep_.base.resize(static_cast<Index>(rb.size()));
  for (Index k = 0; k < lr->rep_.base.size(); ++k) lr->rep_.base(k) = rb[static_cast<size_t>(k)].get<double>();
  lr->rep_.eta = j.at("reporting").at("eta").get<double>();
  for (const auto& t : j.at("reporting").at("trees")) lr->rep_.trees.push_back(detail::tree_from_json(t));
  return lr;
}

}  // namespace nowcast
