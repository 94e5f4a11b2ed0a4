#pragma once
// Feed-forward networks (two hidden layers) for the occurrence and reporting
// models, trained with Adam on sum-scaled minibatch losses.  Weights carry
// over between EM iterations; optimizer state does not.

#include "nowcast/core.hpp"
#include "nowcast/learner.hpp"
#include "nowcast/likelihood.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace nowcast {

// ------------------------------------------------------------ standardization

// Wrapper marking a matrix as already standardized; the network only accepts
// this type, so applying the standardizer twice cannot compile.
struct StandardizedMatrix {
  Matrix m;
};

struct Standardizer {
  Vector mean, scale;

  // location/scale from the given rows only; 0/1-valued and constant columns
  // pass through unchanged
  static Standardizer fit(const Matrix& X, const std::vector<Index>& rows) {
    if (rows.empty()) throw DataError("standardizer: no rows");
    Standardizer s;
    const Index q = X.cols();
    s.mean = Vector::Zero(q);
    s.scale = Vector::Ones(q);
    const double n = static_cast<double>(rows.size());
    for (Index c = 0; c < q; ++c) {
      bool indicator = true;
      double sum = 0;
      for (Index r : rows) {
        const double v = X(r, c);
        if (v != 0.0 && v != 1.0) indicator = false;
        sum += v;
      }
      if (indicator) continue;
      const double mu = sum / n;
      double ss = 0;
      for (Index r : rows) {
        const double d = X(r, c) - mu;
        ss += d * d;
      }
      const double sd = std::sqrt(ss / n);
      if (sd < 1e-12) continue;
      s.mean(c) = mu;
      s.scale(c) = sd;
    }
    return s;
  }

  StandardizedMatrix apply(const Matrix& X) const {
    if (X.cols() != mean.size()) throw DataError("standardizer: column count differs");
    StandardizedMatrix out;
    out.m = ((X.rowwise() - mean.transpose()).array().rowwise() /
             scale.transpose().array())
                .matrix();
    return out;
  }
  StandardizedMatrix apply(const Matrix& X, const std::vector<Index>& rows) const {
    Matrix sub(static_cast<Index>(rows.size()), X.cols());
    for (size_t k = 0; k < rows.size(); ++k) sub.row(static_cast<Index>(k)) = X.row(rows[k]);
    return apply(sub);
  }
};

// ------------------------------------------------------------ network

enum class Activation { tanh_act, relu, sigmoid };

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::tanh_act;
  if (s == "relu") return Activation::relu;
  if (s == "sigmoid") return Activation::sigmoid;
  throw ConfigError("unknown activation: " + s);
}

inline std::string activation_to_string(Activation a) {
  switch (a) {
    case Activation::tanh_act: return "tanh";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
  }
  throw ConfigError("unknown activation");
}

struct Mlp {
  std::vector<Matrix> W;  // W[l]: out_l x in_l; last layer is the linear output
  std::vector<Vector> b;
  Activation act = Activation::tanh_act;

  Index n_inputs() const { return W.front().cols(); }
  Index n_outputs() const { return W.back().rows(); }

  Matrix activate(Matrix z) const {
    switch (act) {
      case Activation::tanh_act: return z.array().tanh().matrix();
      case Activation::relu: return z.cwiseMax(0.0);
      case Activation::sigmoid: return (1.0 / (1.0 + (-z.array()).exp())).matrix();
    }
    throw ConfigError("unknown activation");
  }
  // derivative expressed through the activation output
  Matrix activate_grad(const Matrix& a) const {
    switch (act) {
      case Activation::tanh_act: return (1.0 - a.array().square()).matrix();
      case Activation::relu: return (a.array() > 0.0).cast<double>().matrix();
      case Activation::sigmoid: return (a.array() * (1.0 - a.array())).matrix();
    }
    throw ConfigError("unknown activation");
  }

  // acts[0] = input, acts[l] = hidden activations; returns output scores
  Matrix forward_cached(const Matrix& X, std::vector<Matrix>& acts) const {
    acts.clear();
    acts.push_back(X);
    Matrix a = X;
    for (size_t l = 0; l + 1 < W.size(); ++l) {
      a = activate(((a * W[l].transpose()).rowwise() + b[l].transpose()).eval());
      acts.push_back(a);
    }
    return (a * W.back().transpose()).rowwise() + b.back().transpose();
  }
  Matrix forward(const StandardizedMatrix& X) const {
    std::vector<Matrix> acts;
    return forward_cached(X.m, acts);
  }
};

// Xavier-uniform weights drawn row-major layer by layer, zero biases
inline Mlp make_mlp(Index q_in, Index q1, Index q2, Index n_out, Activation act, uint64_t seed) {
  if (q_in < 1 || q1 < 1 || q2 < 1 || n_out < 1)
    throw ConfigError("make_mlp: sizes must be positive");
  Mlp net;
  net.act = act;
  std::mt19937_64 rng(seed);
  auto layer = [&](Index out, Index in) {
    const double a = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> u(-a, a);
    Matrix w(out, in);
    for (Index r = 0; r < out; ++r)
      for (Index c = 0; c < in; ++c) w(r, c) = u(rng);
    net.W.push_back(std::move(w));
    net.b.push_back(Vector::Zero(out));
  };
  layer(q1, q_in);
  layer(q2, q1);
  layer(n_out, q2);
  return net;
}

struct MlpGradients {
  std::vector<Matrix> W;
  std::vector<Vector> b;

  static MlpGradients zeros_like(const Mlp& net) {
    MlpGradients g;
    for (size_t l = 0; l < net.W.size(); ++l) {
      g.W.push_back(Matrix::Zero(net.W[l].rows(), net.W[l].cols()));
      g.b.push_back(Vector::Zero(net.b[l].size()));
    }
    return g;
  }
};

// backpropagation of dL/dF (rows = batch records) into parameter gradients
inline void mlp_backward(const Mlp& net, const std::vector<Matrix>& acts, const Matrix& dF,
                         MlpGradients& g) {
  Matrix delta = dF;
  for (size_t l = net.W.size(); l-- > 0;) {
    g.W[l] = delta.transpose() * acts[l];
    g.b[l] = delta.colwise().sum();
    if (l > 0) delta = (delta * net.W[l]).array() * net.activate_grad(acts[l]).array();
  }
}

// loss = -q_occ = sum_i [exp(f_i) - y_i f_i]
inline double mlp_occurrence_loss(const Mlp& net, const StandardizedMatrix& X, const Vector& y) {
  Matrix f = net.forward(X);
  return pairwise_sum_terms(f.rows(), [&](Index i) { return std::exp(f(i, 0)) - y(i) * f(i, 0); });
}

inline MlpGradients mlp_occurrence_grad(const Mlp& net, const StandardizedMatrix& X,
                                        const Vector& y) {
  std::vector<Matrix> acts;
  Matrix f = net.forward_cached(X.m, acts);
  Matrix dF = f.array().exp().matrix();
  dF.col(0) -= y;
  MlpGradients g = MlpGradients::zeros_like(net);
  mlp_backward(net, acts, dF, g);
  return g;
}

// loss = -q_rep = -sum_i sum_j N_ij log p_ij with p = softmax(f)
inline double mlp_reporting_loss(const Mlp& net, const StandardizedMatrix& X,
                                 const Matrix& counts) {
  Matrix f = net.forward(X);
  Matrix P = softmax_rows(f);
  return -pairwise_sum_terms(f.rows(), [&](Index i) {
    double s = 0;
    for (Index j = 0; j < counts.cols(); ++j)
      if (counts(i, j) > 0) s += counts(i, j) * std::log(P(i, j));
    return s;
  });
}

inline MlpGradients mlp_reporting_grad(const Mlp& net, const StandardizedMatrix& X,
                                       const Matrix& counts) {
  std::vector<Matrix> acts;
  Matrix f = net.forward_cached(X.m, acts);
  Matrix P = softmax_rows(f);
  Vector totals = counts.rowwise().sum();
  Matrix dF = (P.array().colwise() * totals.array()).matrix();
  dF -= counts;
  MlpGradients g = MlpGradients::zeros_like(net);
  mlp_backward(net, acts, dF, g);
  return g;
}

// ------------------------------------------------------------ training

struct MlpModelConfig {
  int q1 = 10;  // hidden layer widths
  int q2 = 10;
  std::string activation = "tanh";
  double lr = 1e-3;
  int n_epoch = 50;
  int batch = 32;
  int patience = 10;  // early-stopping epochs on val1
};

struct AdamState {
  std::vector<Matrix> mW, vW;
  std::vector<Vector> mb, vb;
  long t = 0;

  explicit AdamState(const Mlp& net) {
    for (size_t l = 0; l < net.W.size(); ++l) {
      mW.push_back(Matrix::Zero(net.W[l].rows(), net.W[l].cols()));
      vW.push_back(Matrix::Zero(net.W[l].rows(), net.W[l].cols()));
      mb.push_back(Vector::Zero(net.b[l].size()));
      vb.push_back(Vector::Zero(net.b[l].size()));
    }
  }

  void step(Mlp& net, const MlpGradients& g, double lr, double beta1 = 0.9,
            double beta2 = 0.999, double eps = 1e-8) {
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (size_t l = 0; l < net.W.size(); ++l) {
      mW[l] = beta1 * mW[l] + (1 - beta1) * g.W[l];
      vW[l] = (beta2 * vW[l].array() + (1 - beta2) * g.W[l].array().square()).matrix();
      net.W[l].array() -= lr * (mW[l].array() / c1) / ((vW[l].array() / c2).sqrt() + eps);
      mb[l] = beta1 * mb[l] + (1 - beta1) * g.b[l];
      vb[l] = (beta2 * vb[l].array() + (1 - beta2) * g.b[l].array().square()).matrix();
      net.b[l].array() -= lr * (mb[l].array() / c1) / ((vb[l].array() / c2).sqrt() + eps);
    }
  }
};

struct TrainDiagnostics {
  int epochs_run = 0;
  int best_epoch = 0;  // 0 = the incoming weights
  double best_q = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> q_trace;  // val1 objective after each epoch; index 0 = before training
};

namespace detail {

// Shared epoch loop: GradFn(batch_rows) -> MlpGradients, ValFn() -> q on val1.
// Seeded shuffling per epoch; the best-epoch weights are restored at the end.
template <typename GradFn, typename ValFn>
TrainDiagnostics train_network(Mlp& net, Index n_train, const MlpModelConfig& cfg,
                               uint64_t shuffle_seed, GradFn&& batch_grad, ValFn&& val_q) {
  TrainDiagnostics diag;
  double best = val_q();
  diag.q_trace.push_back(best);
  diag.best_q = best;
  Mlp best_net = net;
  int since_best = 0;
  std::mt19937_64 rng(shuffle_seed);
  std::vector<Index> idx(static_cast<size_t>(n_train));
  std::iota(idx.begin(), idx.end(), Index(0));
  AdamState adam(net);
  const int batch = std::max(1, cfg.batch);
  for (int epoch = 1; epoch <= cfg.n_epoch; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (size_t start = 0; start < idx.size(); start += static_cast<size_t>(batch)) {
      const size_t stop = std::min(idx.size(), start + static_cast<size_t>(batch));
      std::vector<Index> rows(idx.begin() + static_cast<std::ptrdiff_t>(start),
                              idx.begin() + static_cast<std::ptrdiff_t>(stop));
      MlpGradients g = batch_grad(rows);
      adam.step(net, g, cfg.lr);
    }
    ++diag.epochs_run;
    const double q = val_q();
    diag.q_trace.push_back(q);
    if (q > best) {
      best = q;
      diag.best_epoch = epoch;
      best_net = net;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  net = std::move(best_net);
  diag.best_q = best;
  return diag;
}

inline Matrix gather_rows(const Matrix& X, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), X.cols());
  for (size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Index>(k)) = X.row(rows[k]);
  return out;
}

}  // namespace detail

inline TrainDiagnostics train_occurrence_mlp(Mlp& net, const StandardizedMatrix& Xt,
                                             const Vector& yt, const StandardizedMatrix& Xv,
                                             const Vector& yv, const MlpModelConfig& cfg,
                                             uint64_t shuffle_seed) {
  if (Xt.m.rows() != yt.size()) throw std::invalid_argument("train_occurrence_mlp: sizes disagree");
  return detail::train_network(
      net, Xt.m.rows(), cfg, shuffle_seed,
      [&](const std::vector<Index>& rows) {
        StandardizedMatrix xb{detail::gather_rows(Xt.m, rows)};
        Vector yb(static_cast<Index>(rows.size()));
        for (size_t k = 0; k < rows.size(); ++k) yb(static_cast<Index>(k)) = yt(rows[k]);
        return mlp_occurrence_grad(net, xb, yb);
      },
      [&]() { return -mlp_occurrence_loss(net, Xv, yv); });
}

inline TrainDiagnostics train_reporting_mlp(Mlp& net, const StandardizedMatrix& Xt,
                                            const Matrix& Nt, const StandardizedMatrix& Xv,
                                            const Matrix& Nv, const MlpModelConfig& cfg,
                                            uint64_t shuffle_seed) {
  if (Xt.m.rows() != Nt.rows()) throw std::invalid_argument("train_reporting_mlp: sizes disagree");
  return detail::train_network(
      net, Xt.m.rows(), cfg, shuffle_seed,
      [&](const std::vector<Index>& rows) {
        StandardizedMatrix xb{detail::gather_rows(Xt.m, rows)};
        Matrix nb(static_cast<Index>(rows.size()), Nt.cols());
        for (size_t k = 0; k < rows.size(); ++k) nb.row(static_cast<Index>(k)) = Nt.row(rows[k]);
        return mlp_reporting_grad(net, xb, nb);
      },
      [&]() { return -mlp_reporting_loss(net, Xv, Nv); });
}

// ------------------------------------------------------------ learner

struct MlpConfig {
  MlpModelConfig occ;
  MlpModelConfig rep;
};

class MlpLearner final : public Learner {
 public:
  explicit MlpLearner(MlpConfig cfg = {}) : cfg_(cfg) {}

  std::string kind() const override { return "mlp"; }

  void m_step(const MStepContext& ctx) override {
    const Index d = ctx.data.d();
    const bool fresh = ctx.em_iteration == 1 || !fitted_;
    if (fresh) {
      feature_names_ = ctx.data.schema.names;
      std_ = Standardizer::fit(ctx.data.X, ctx.train_rows);
      // Xavier start with informed output biases
      occ_ = make_mlp(ctx.data.X.cols(), cfg_.occ.q1, cfg_.occ.q2, 1,
                      activation_from_string(cfg_.occ.activation), ctx.seed);
      rep_ = make_mlp(ctx.data.X.cols(), cfg_.rep.q1, cfg_.rep.q2, d,
                      activation_from_string(cfg_.rep.activation), ctx.seed + 1);
      double mean_total = 0;
      for (Index r : ctx.train_rows) mean_total += ctx.completed.row(r).sum();
      mean_total /= static_cast<double>(ctx.train_rows.size());
      if (!(mean_total > 0)) throw DataError("mlp learner: non-positive mean completed total");
      occ_.b.back()(0) = std::log(mean_total);
      for (Index j = 0; j < d; ++j) rep_.b.back()(j) = std::log(std::max(ctx.p0(j), 1e-8));
      fitted_ = true;
    }

    StandardizedMatrix Xt = std_.apply(ctx.data.X, ctx.train_rows);
    StandardizedMatrix Xv = std_.apply(ctx.data.X, ctx.val1_rows);
    Vector yt(static_cast<Index>(ctx.train_rows.size())), yv(static_cast<Index>(ctx.val1_rows.size()));
    Matrix Nt(static_cast<Index>(ctx.train_rows.size()), d),
        Nv(static_cast<Index>(ctx.val1_rows.size()), d);
    for (size_t k = 0; k < ctx.train_rows.size(); ++k) {
      Nt.row(static_cast<Index>(k)) = ctx.completed.row(ctx.train_rows[k]);
      yt(static_cast<Index>(k)) = Nt.row(static_cast<Index>(k)).sum();
    }
    for (size_t k = 0; k < ctx.val1_rows.size(); ++k) {
      Nv.row(static_cast<Index>(k)) = ctx.completed.row(ctx.val1_rows[k]);
      yv(static_cast<Index>(k)) = Nv.row(static_cast<Index>(k)).sum();
    }
    const uint64_t base = ctx.seed + 0x9e3779b97f4a7c15ull * static_cast<uint64_t>(ctx.em_iteration);
    occ_diag_ = train_occurrence_mlp(occ_, Xt, yt, Xv, yv, cfg_.occ, base);
    rep_diag_ = train_reporting_mlp(rep_, Xt, Nt, Xv, Nv, cfg_.rep, base + 1);
  }

  ParameterEstimates predict(const Dataset& data) const override {
    if (!fitted_) throw DataError("mlp learner is not fitted");
    if (data.schema.names != feature_names_)
      throw DataError("mlp learner: dataset schema differs from the fitted schema");
    StandardizedMatrix Xs = std_.apply(data.X);
    ParameterEstimates est;
    Matrix f_occ = occ_.forward(Xs);
    if (!f_occ.allFinite()) throw NumericError("mlp learner: non-finite occurrence score");
    est.lambda = f_occ.col(0).array().exp();
    Matrix f_rep = rep_.forward(Xs);
    if (!f_rep.allFinite()) throw NumericError("mlp learner: non-finite reporting score");
    est.p = softmax_rows(f_rep);
    return est;
  }

  void snapshot() override { snap_ = std::make_unique<State>(State{occ_, rep_, fitted_}); }
  void rollback() override {
    if (!snap_) return;
    occ_ = snap_->occ;
    rep_ = snap_->rep;
    fitted_ = snap_->fitted;
  }

  nlohmann::json last_fit_info() const override {
    return {{"occ_epochs", occ_diag_.epochs_run},
            {"rep_epochs", rep_diag_.epochs_run},
            {"occ_best_epoch", occ_diag_.best_epoch},
            {"rep_best_epoch", rep_diag_.best_epoch},
            {"occ_q_val1", occ_diag_.best_q},
            {"rep_q_val1", rep_diag_.best_q}};
  }

  nlohmann::json to_json() const override;
  static std::unique_ptr<MlpLearner> from_json(const nlohmann::json& j);

  Mlp& occurrence() { return occ_; }
  Mlp& reporting() { return rep_; }
  const Mlp& occurrence() const { return occ_; }
  const Mlp& reporting() const { return rep_; }
  const Standardizer& standardizer() const { return std_; }
  const TrainDiagnostics& occurrence_diagnostics() const { return occ_diag_; }
  const TrainDiagnostics& reporting_diagnostics() const { return rep_diag_; }
  const MlpConfig& config() const { return cfg_; }

 private:
  MlpConfig cfg_;
  std::vector<std::string> feature_names_;
  Standardizer std_;
  Mlp occ_, rep_;
  bool fitted_ = false;
  TrainDiagnostics occ_diag_, rep_diag_;
  struct State {
    Mlp occ, rep;
    bool fitted;
  };
  std::unique_ptr<State> snap_;
};

// ------------------------------------------------------------ serialization

namespace detail {

inline nlohmann::json mlp_to_json(const Mlp& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (size_t l = 0; l < net.W.size(); ++l) {
    nlohmann::json w = nlohmann::json::array();
    for (Index r = 0; r < net.W[l].rows(); ++r)
      for (Index c = 0; c < net.W[l].cols(); ++c) w.push_back(net.W[l](r, c));
    nlohmann::json bv = nlohmann::json::array();
    for (Index r = 0; r < net.b[l].size(); ++r) bv.push_back(net.b[l](r));
    layers.push_back({{"rows", net.W[l].rows()},
                      {"cols", net.W[l].cols()},
                      {"w", w},  // row-major
                      {"b", bv}});
  }
  return {{"activation", activation_to_string(net.act)}, {"layers", layers}};
}

inline Mlp mlp_from_json(const nlohmann::json& j) {
  Mlp net;
  net.act = activation_from_string(j.at("activation").get<std::string>());
  for (const auto& layer : j.at("layers")) {
    const Index rows = layer.at("rows").get<Index>();
    const Index cols = layer.at("cols").get<Index>();
    const auto& w = layer.at("w");
    if (static_cast<Index>(w.size()) != rows * cols)
      throw ConfigError("mlp model: layer shape disagrees with its array");
    Matrix W(rows, cols);
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c)
        W(r, c) = w[static_cast<size_t>(r * cols + c)].get<double>();
    const auto& bv = layer.at("b");
    if (static_cast<Index>(bv.size()) != rows)
      throw ConfigError("mlp model: bias shape disagrees with its array");
    Vector b(rows);
    for (Index r = 0; r < rows; ++r) b(r) = bv[static_cast<size_t>(r)].get<double>();
    net.W.push_back(std::move(W));
    net.b.push_back(std::move(b));
  }
  if (net.W.empty()) throw ConfigError("mlp model: no layers");
  return net;
}

inline nlohmann::json mlp_model_config_to_json(const MlpModelConfig& c) {
  return {{"q1", c.q1},
          {"q2", c.q2},
          {"activation", c.activation},
          {"lr", c.lr},
          {"n_epoch", c.n_epoch},
          {"batch", c.batch},
          {"patience", c.patience}};
}

inline MlpModelConfig mlp_model_config_from_json(const nlohmann::json& j) {
  MlpModelConfig c;
  c.q1 = j.at("q1").get<int>();
  c.q2 = j.at("q2").get<int>();
  c.activation = j.value("activation", std::string("tanh"));
  c.lr = j.at("lr").get<double>();
  c.n_epoch = j.at("n_epoch").get<int>();
  c.batch = j.at("batch").get<int>();
  c.patience = j.at("patience").get<int>();
  return c;
}

}  // namespace detail

inline nlohmann::json MlpLearner::to_json() const {
  nlohmann::json mean = nlohmann::json::array(), scale = nlohmann::json::array();
  for (Index c = 0; c < std_.mean.size(); ++c) {
    mean.push_back(std_.mean(c));
    scale.push_back(std_.scale(c));
  }
  return {{"schema_version", 1},
          {"kind", "mlp"},
          {"feature_names", feature_names_},
          {"config",
           {{"occ", detail::mlp_model_config_to_json(cfg_.occ)},
            {"rep", detail::mlp_model_config_to_json(cfg_.rep)}}},
          {"standardizer", {{"mean", mean}, {"scale", scale}}},
          {"occurrence", detail::mlp_to_json(occ_)},
          {"reporting", detail::mlp_to_json(rep_)}};
}

inline std::unique_ptr<MlpLearner> MlpLearner::from_json(const nlohmann::json& j) {
  MlpConfig cfg;
  cfg.occ = detail::mlp_model_config_from_json(j.at("config").at("occ"));
  cfg.rep = detail::mlp_model_config_from_json(j.at("config").at("rep"));
  auto lr = std::make_unique<MlpLearner>(cfg);
  lr->feature_names_ = j.at("feature_names").get<std::vector<std::string>>();
  const auto& st = j.at("standardizer");
  const auto& mean = st.at("mean");
  const auto& scale = st.at("scale");
  lr->std_.mean.resize(static_cast<Index>(mean.size()));
  lr->std_.scale.resize(static_cast<Index>(scale.size()));
  for (Index c = 0; c < lr->std_.mean.size(); ++c) {
    lr->std_.mean(c) = mean[static_cast<size_t>(c)].get<double>();
    lr->std_.scale(c) = scale[static_cast<size_t>(c)].get<double>();
  }
  lr->occ_ = detail::mlp_from_json(j.at("occurrence"));
  lr->rep_ = detail::mlp_from_json(j.at("reporting"));
  lr->fitted_ = true;
  return lr;
}

}  // namespace nowcast
