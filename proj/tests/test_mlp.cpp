#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <nowcast/mlp.hpp>

#include "helpers.hpp"

#include <random>
#include <type_traits>

using namespace nowcast;

namespace {

// flatten / perturb helpers for finite-difference checks
double param_get(const Mlp& net, size_t flat) {
  for (size_t l = 0; l < net.W.size(); ++l) {
    size_t nw = static_cast<size_t>(net.W[l].size());
    if (flat < nw) return net.W[l](static_cast<Index>(flat));
    flat -= nw;
    size_t nb = static_cast<size_t>(net.b[l].size());
    if (flat < nb) return net.b[l](static_cast<Index>(flat));
    flat -= nb;
  }
  throw std::out_of_range("param_get");
}

void param_set(Mlp& net, size_t flat, double v) {
  for (size_t l = 0; l < net.W.size(); ++l) {
    size_t nw = static_cast<size_t>(net.W[l].size());
    if (flat < nw) {
      net.W[l](static_cast<Index>(flat)) = v;
      return;
    }
    flat -= nw;
    size_t nb = static_cast<size_t>(net.b[l].size());
    if (flat < nb) {
      net.b[l](static_cast<Index>(flat)) = v;
      return;
    }
    flat -= nb;
  }
  throw std::out_of_range("param_set");
}

template <typename T>
concept standardizable = requires(const Standardizer& st, const T& z) { st.apply(z); };

size_t param_count(const Mlp& net) {
  size_t n = 0;
  for (size_t l = 0; l < net.W.size(); ++l)
    n += static_cast<size_t>(net.W[l].size() + net.b[l].size());
  return n;
}

double grad_get(const MlpGradients& g, size_t flat) {
  for (size_t l = 0; l < g.W.size(); ++l) {
    size_t nw = static_cast<size_t>(g.W[l].size());
    if (flat < nw) return g.W[l](static_cast<Index>(flat));
    flat -= nw;
    size_t nb = static_cast<size_t>(g.b[l].size());
    if (flat < nb) return g.b[l](static_cast<Index>(flat));
    flat -= nb;
  }
  throw std::out_of_range("grad_get");
}

}  // namespace

TEST_CASE("xavier initialization is bounded and deterministic") {
  Mlp a = make_mlp(5, 10, 10, 3, Activation::tanh_act, 77);
  Mlp b = make_mlp(5, 10, 10, 3, Activation::tanh_act, 77);
  Mlp c = make_mlp(5, 10, 10, 3, Activation::tanh_act, 78);
  REQUIRE(a.W.size() == 3);
  CHECK(a.W[0].rows() == 10);
  CHECK(a.W[0].cols() == 5);
  CHECK(a.W[2].rows() == 3);
  const double bound0 = std::sqrt(6.0 / 15.0);
  CHECK(a.W[0].cwiseAbs().maxCoeff() <= bound0);
  const double bound1 = std::sqrt(6.0 / 20.0);
  CHECK(a.W[1].cwiseAbs().maxCoeff() <= bound1);
  for (size_t l = 0; l < 3; ++l) {
    CHECK((a.W[l].array() == b.W[l].array()).all());
    CHECK(a.b[l].isZero(0.0));
  }
  CHECK(!(a.W[0].array() == c.W[0].array()).all());
}

TEST_CASE("frozen xavier bounds for the simulation widths") {
  CHECK(std::sqrt(6.0 / (42 + 10)) == doctest::Approx(0.33968311024337872).epsilon(1e-15));
  CHECK(std::sqrt(6.0 / (10 + 1)) == doctest::Approx(0.7385489458759964).epsilon(1e-15));
}

TEST_CASE("standardizer uses fit-row statistics and passes indicators through") {
  Matrix X(4, 3);
  X << 0, 10, 1, 1, 20, 0, 0, 30, 1, 1, 40, 0;  // col 0 and 2 are indicators
  Standardizer s = Standardizer::fit(X, {0, 1});  // stats from the first two rows only
  CHECK(s.mean(0) == 0.0);
  CHECK(s.scale(0) == 1.0);
  CHECK(s.mean(2) == 0.0);
  CHECK(s.scale(2) == 1.0);
  CHECK(s.mean(1) == 15.0);
  CHECK(s.scale(1) == 5.0);  // population sd of {10, 20}
  auto Z = s.apply(X);
  CHECK(Z.m(0, 0) == 0.0);
  CHECK(Z.m(0, 1) == -1.0);
  CHECK(Z.m(3, 1) == 5.0);  // (40 - 15) / 5, train stats applied to new rows
  CHECK(Z.m(2, 2) == 1.0);

  // constant non-indicator columns also pass through rather than divide by 0
  Matrix C = Matrix::Constant(3, 1, 7.0);
  Standardizer sc = Standardizer::fit(C, {0, 1, 2});
  CHECK(sc.scale(0) == 1.0);
  CHECK(sc.mean(0) == 0.0);

  // the network only accepts the standardized wrapper, so a matrix cannot be
  // standardized twice
  static_assert(standardizable<Matrix> && !standardizable<StandardizedMatrix>);
}

TEST_CASE("occurrence gradients match central finite differences") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ux(-1.5, 1.5);
  for (Activation act : {Activation::tanh_act, Activation::relu, Activation::sigmoid}) {
    Mlp net = make_mlp(3, 4, 4, 1, act, 11);
    Matrix X(5, 3);
    for (Index i = 0; i < 5; ++i)
      for (Index j = 0; j < 3; ++j) X(i, j) = ux(rng);
    Vector y(5);
    y << 2, 0, 1, 3, 1;
    StandardizedMatrix Xs{X};
    MlpGradients g = mlp_occurrence_grad(net, Xs, y);
    const double eps = 1e-6;
    for (size_t k = 0; k < param_count(net); ++k) {
      const double v0 = param_get(net, k);
      param_set(net, k, v0 + eps);
      const double lp = mlp_occurrence_loss(net, Xs, y);
      param_set(net, k, v0 - eps);
      const double lm = mlp_occurrence_loss(net, Xs, y);
      param_set(net, k, v0);
      const double fd = (lp - lm) / (2 * eps);
      const double an = grad_get(g, k);
      CHECK(std::abs(fd - an) <= 1e-5 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("reporting gradients match central finite differences") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> ux(-1.5, 1.5);
  Mlp net = make_mlp(3, 4, 4, 4, Activation::tanh_act, 13);
  Matrix X(5, 3);
  for (Index i = 0; i < 5; ++i)
    for (Index j = 0; j < 3; ++j) X(i, j) = ux(rng);
  Matrix N(5, 4);
  N << 1, 0, 2, 0, 0.5, 1, 0, 0, 2, 2, 1, 1, 0, 0, 0, 3, 1.25, 0.75, 0.5, 0;
  StandardizedMatrix Xs{X};
  MlpGradients g = mlp_reporting_grad(net, Xs, N);
  const double eps = 1e-6;
  for (size_t k = 0; k < param_count(net); ++k) {
    const double v0 = param_get(net, k);
    param_set(net, k, v0 + eps);
    const double lp = mlp_reporting_loss(net, Xs, N);
    param_set(net, k, v0 - eps);
    const double lm = mlp_reporting_loss(net, Xs, N);
    param_set(net, k, v0);
    const double fd = (lp - lm) / (2 * eps);
    const double an = grad_get(g, k);
    CHECK(std::abs(fd - an) <= 1e-5 * std::max(1.0, std::abs(fd)));
  }
}

TEST_CASE("adam's first step matches the frozen value") {
  Mlp net;
  net.W.push_back(Matrix::Zero(1, 1));
  net.b.push_back(Vector::Zero(1));
  MlpGradients g;
  g.W.push_back(Matrix::Constant(1, 1, 3.0));
  g.b.push_back(Vector::Zero(1));
  AdamState adam(net);
  adam.step(net, g, 0.1);
  CHECK(net.W[0](0, 0) == doctest::Approx(-0.09999999966666677).epsilon(1e-15));
  CHECK(net.b[0](0) == 0.0);
}

TEST_CASE("zero epochs leave the weights untouched") {
  Mlp net = make_mlp(2, 3, 3, 1, Activation::tanh_act, 3);
  Mlp before = net;
  Matrix X(4, 2);
  X << 0, 1, 1, 0, 0.5, 0.5, -1, 2;
  Vector y(4);
  y << 1, 2, 0, 3;
  MlpModelConfig cfg;
  cfg.n_epoch = 0;
  StandardizedMatrix Xs{X};
  auto diag = train_occurrence_mlp(net, Xs, y, Xs, y, cfg, 1);
  CHECK(diag.epochs_run == 0);
  CHECK(diag.best_epoch == 0);
  REQUIRE(diag.q_trace.size() == 1);
  for (size_t l = 0; l < net.W.size(); ++l) {
    CHECK((net.W[l].array() == before.W[l].array()).all());
    CHECK((net.b[l].array() == before.b[l].array()).all());
  }
}

TEST_CASE("all-zero weights give unit rates and uniform reporting") {
  Mlp occ = make_mlp(3, 4, 4, 1, Activation::tanh_act, 1);
  for (auto& w : occ.W) w.setZero();
  for (auto& b : occ.b) b.setZero();
  Matrix X = Matrix::Random(6, 3);
  StandardizedMatrix Xs{X};
  Matrix f = occ.forward(Xs);
  for (Index i = 0; i < 6; ++i) CHECK(std::exp(f(i, 0)) == 1.0);

  Mlp rep = make_mlp(3, 4, 4, 11, Activation::tanh_act, 2);
  for (auto& w : rep.W) w.setZero();
  for (auto& b : rep.b) b.setZero();
  Matrix P = softmax_rows(rep.forward(Xs));
  for (Index i = 0; i < 6; ++i)
    for (Index j = 0; j < 11; ++j)
      CHECK(P(i, j) == doctest::Approx(1.0 / 11.0).epsilon(1e-15));
}

TEST_CASE("training drives an intercept-only rate to the sample mean") {
  std::mt19937_64 rng(17);
  std::poisson_distribution<int> pois(4.0);
  const Index n = 200;
  Matrix X = Matrix::Ones(n, 1);  // constant input: intercept-only model
  Vector y(n);
  for (Index i = 0; i < n; ++i) y(i) = pois(rng);
  Mlp net = make_mlp(1, 4, 4, 1, Activation::tanh_act, 23);
  MlpModelConfig cfg;
  cfg.lr = 5e-3;
  cfg.n_epoch = 50;
  cfg.batch = 32;
  cfg.patience = 50;
  StandardizedMatrix Xs{X};
  train_occurrence_mlp(net, Xs, y, Xs, y, cfg, 29);
  const double f = net.forward(Xs)(0, 0);
  CHECK(std::abs(f - std::log(y.mean())) < 0.05);
}

TEST_CASE("weight transfer lowers the starting loss against a fresh start") {
  int wins = 0;
  for (uint64_t seed = 0; seed < 10; ++seed) {
    auto data = testutil::random_dataset(150, 3, 100 + seed, 10);
    Vector y(150);
    for (Index i = 0; i < 150; ++i) y(i) = data.counts.row(i).sum();
    Standardizer st = Standardizer::fit(data.X, all_rows(data));
    StandardizedMatrix Xs = st.apply(data.X);

    Mlp warm = make_mlp(data.X.cols(), 6, 6, 1, Activation::tanh_act, seed);
    warm.b.back()(0) = std::log(std::max(y.mean(), 1e-8));
    MlpModelConfig cfg;
    cfg.lr = 1e-3;
    cfg.n_epoch = 8;
    cfg.patience = 8;
    train_occurrence_mlp(warm, Xs, y, Xs, y, cfg, seed + 1000);

    Mlp fresh = make_mlp(data.X.cols(), 6, 6, 1, Activation::tanh_act, seed + 5000);
    fresh.b.back()(0) = std::log(std::max(y.mean(), 1e-8));
    if (mlp_occurrence_loss(warm, Xs, y) < mlp_occurrence_loss(fresh, Xs, y)) ++wins;
  }
  CHECK(wins >= 8);
}

TEST_CASE("the best validation epoch is restored") {
  // tiny train set, large capacity: validation degrades while training improves
  auto train = testutil::random_dataset(12, 3, 41, 10);
  auto val = testutil::random_dataset(200, 3, 42, 10);
  Vector yt(12), yv(200);
  for (Index i = 0; i < 12; ++i) yt(i) = train.counts.row(i).sum();
  for (Index i = 0; i < 200; ++i) yv(i) = val.counts.row(i).sum();
  Standardizer st = Standardizer::fit(train.X, all_rows(train));
  StandardizedMatrix Xt = st.apply(train.X), Xv = st.apply(val.X);
  Mlp net = make_mlp(train.X.cols(), 16, 16, 1, Activation::tanh_act, 7);
  net.b.back()(0) = std::log(std::max(yt.mean(), 1e-8));
  MlpModelConfig cfg;
  cfg.lr = 5e-2;
  cfg.n_epoch = 60;
  cfg.patience = 5;
  auto diag = train_occurrence_mlp(net, Xt, yt, Xv, yv, cfg, 13);
  size_t best = 0;
  for (size_t t = 1; t < diag.q_trace.size(); ++t)
    if (diag.q_trace[t] > diag.q_trace[best]) best = t;
  CHECK(static_cast<size_t>(diag.best_epoch) == best);
  CHECK(diag.best_q == diag.q_trace[best]);
  // restored weights reproduce the best objective
  CHECK(-mlp_occurrence_loss(net, Xv, yv) == doctest::Approx(diag.best_q).epsilon(1e-12));
  if (diag.epochs_run < cfg.n_epoch)
    CHECK(static_cast<size_t>(diag.epochs_run) >= best + static_cast<size_t>(cfg.patience));
}

TEST_CASE("k=1 output bias with zeroed hidden-to-output weights recovers p0") {
  auto data = testutil::random_dataset(60, 4, 55, 10);
  data.split.assign(60, Split::train);
  for (Index i = 45; i < 60; ++i) data.split[static_cast<size_t>(i)] = Split::val1;
  Matrix completed = data.counts;
  auto train = split_rows(data, Split::train);
  auto val1 = split_rows(data, Split::val1);
  Vector p0(4);
  p0 << 0.4, 0.3, 0.2, 0.1;

  MlpConfig cfg;
  cfg.occ.n_epoch = 0;
  cfg.rep.n_epoch = 0;
  MlpLearner lr(cfg);
  lr.m_step(MStepContext{data, completed, train, val1, 1, p0, 99});
  // zero the output layer's weights: predictions collapse to the bias
  lr.reporting().W.back().setZero();
  lr.occurrence().W.back().setZero();
  auto est = lr.predict(data);
  est.validate();
  for (Index i = 0; i < est.p.rows(); ++i)
    for (Index j = 0; j < 4; ++j)
      CHECK(est.p(i, j) == doctest::Approx(p0(j)).epsilon(1e-9));
  double mean_total = 0;
  for (Index r : train) mean_total += completed.row(r).sum();
  mean_total /= static_cast<double>(train.size());
  for (Index i = 0; i < est.lambda.size(); ++i)
    CHECK(est.lambda(i) == doctest::Approx(mean_total).epsilon(1e-9));
}

TEST_CASE("warm start carries weights into the next m-step") {
  auto data = testutil::random_dataset(80, 3, 68, 10);
  data.split.assign(80, Split::train);
  for (Index i = 60; i < 80; ++i) data.split[static_cast<size_t>(i)] = Split::val1;
  Matrix completed = data.counts;
  auto train = split_rows(data, Split::train);
  auto val1 = split_rows(data, Split::val1);
  Vector p0 = Vector::Constant(3, 1.0 / 3.0);

  MlpConfig cfg;
  cfg.occ.n_epoch = 2;
  cfg.rep.n_epoch = 2;
  MlpLearner lr(cfg);
  lr.m_step(MStepContext{data, completed, train, val1, 1, p0, 5});
  Mlp after_k1 = lr.occurrence();
  // k=2 with zero epochs: weights must be exactly the k=1 weights
  MlpConfig cfg2 = cfg;
  cfg2.occ.n_epoch = 0;
  cfg2.rep.n_epoch = 0;
  MlpLearner probe(cfg2);
  probe.m_step(MStepContext{data, completed, train, val1, 1, p0, 5});
  // same seed and config: k=1 states agree
  for (size_t l = 0; l < after_k1.W.size(); ++l) {
    Mlp probe_net = probe.occurrence();
    REQUIRE(probe_net.W[l].rows() == after_k1.W[l].rows());
  }
  lr.m_step(MStepContext{data, completed, train, val1, 2, p0, 5});
  // a second m_step trains further but starts from the k=1 weights: with the
  // snapshot/rollback pair the state is restored bit for bit
  lr.snapshot();
  lr.m_step(MStepContext{data, completed, train, val1, 3, p0, 5});
  lr.rollback();
  auto est_a = lr.predict(data);
  lr.rollback();
  auto est_b = lr.predict(data);
  CHECK((est_a.lambda.array() == est_b.lambda.array()).all());
  CHECK((est_a.p.array() == est_b.p.array()).all());
}

TEST_CASE("determinism: identical seeds give identical fits") {
  auto data = testutil::random_dataset(70, 3, 81, 10);
  data.split.assign(70, Split::train);
  for (Index i = 55; i < 70; ++i) data.split[static_cast<size_t>(i)] = Split::val1;
  Matrix completed = data.counts;
  auto train = split_rows(data, Split::train);
  auto val1 = split_rows(data, Split::val1);
  Vector p0 = Vector::Constant(3, 1.0 / 3.0);

  MlpConfig cfg;
  cfg.occ.n_epoch = 3;
  cfg.rep.n_epoch = 3;
  MlpLearner a(cfg), b(cfg);
  a.m_step(MStepContext{data, completed, train, val1, 1, p0, 12});
  b.m_step(MStepContext{data, completed, train, val1, 1, p0, 12});
  auto ea = a.predict(data), eb = b.predict(data);
  CHECK((ea.lambda.array() == eb.lambda.array()).all());
  CHECK((ea.p.array() == eb.p.array()).all());
}

TEST_CASE("serialization round-trips bit-exact predictions") {
  auto data = testutil::random_dataset(50, 3, 91, 10);
  data.split.assign(50, Split::train);
  for (Index i = 40; i < 50; ++i) data.split[static_cast<size_t>(i)] = Split::val1;
  Matrix completed = data.counts;
  auto train = split_rows(data, Split::train);
  auto val1 = split_rows(data, Split::val1);
  Vector p0 = Vector::Constant(3, 1.0 / 3.0);
  MlpConfig cfg;
  cfg.occ.n_epoch = 2;
  cfg.rep.n_epoch = 2;
  MlpLearner lr(cfg);
  lr.m_step(MStepContext{data, completed, train, val1, 1, p0, 31});

  auto j = lr.to_json();
  CHECK(j.at("kind") == "mlp");
  auto lr2 = MlpLearner::from_json(j);
  auto a = lr.predict(data);
  auto b = lr2->predict(data);
  CHECK((a.lambda.array() == b.lambda.array()).all());
  CHECK((a.p.array() == b.p.array()).all());
  Dataset other = data;
  other.schema.names[0] = "renamed";
  CHECK_THROWS_AS(lr2->predict(other), DataError);
}
