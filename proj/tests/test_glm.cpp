#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "helpers.hpp"
#include "nowcast/glm.hpp"

#include <random>

using namespace nowcast;

namespace {

std::vector<std::string> simulation_schema_names() {
  std::vector<std::string> names = {"x1_1", "x1_2", "x2",   "x3_1", "x3_2",
                                    "x3_3", "x4_1", "x4_2", "x4_3"};
  for (int j = 1; j <= 11; ++j)
    for (const char* f : {"weekend", "holiday", "monthedge"})
      names.push_back("ps" + std::to_string(j) + "_" + f);
  return names;
}

}  // namespace

TEST_CASE("intercept-only poisson fit equals log mean") {
  Matrix X = Matrix::Ones(3, 1);
  Vector y(3);
  y << 1, 2, 3;
  PoissonGlmFit fit = fit_poisson_glm(X, y);
  CHECK(fit.converged);
  CHECK(fit.beta(0) == doctest::Approx(0.69314718055994529).epsilon(1e-12));
  // intercept score equation: fitted total equals observed total
  CHECK(3 * std::exp(fit.beta(0)) == doctest::Approx(y.sum()).epsilon(1e-9));
}

TEST_CASE("weighted poisson fit equals log weighted mean") {
  Matrix X = Matrix::Ones(3, 1);
  Vector y(3), w(3);
  y << 1, 2, 3;
  w << 1, 1, 0.5;
  PoissonGlmFit fit = fit_poisson_glm(X, y, {}, nullptr, &w);
  CHECK(fit.beta(0) == doctest::Approx(0.58778666490211906).epsilon(1e-12));
}

TEST_CASE("all-zero responses are guarded by the linear-predictor clamp") {
  Matrix X = Matrix::Ones(5, 1);
  Vector y = Vector::Zero(5);
  PoissonGlmFit fit = fit_poisson_glm(X, y);
  CHECK(fit.converged);
  CHECK(std::exp(fit.beta(0)) <= 1e-8);  // score tolerance can stop before the clamp binds
  // with tolerances forced to zero the iteration runs into the clamp and stalls there
  GlmOptions tight;
  tight.score_tol = 0.0;
  tight.ll_tol = 0.0;
  PoissonGlmFit clamped = fit_poisson_glm(X, y, tight);
  CHECK(clamped.converged);
  CHECK(clamped.beta(0) <= -30.0);
}

TEST_CASE("poisson recovery within three standard errors") {
  std::mt19937_64 rng(1234);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  Index n = 4000;
  Matrix X(n, 3);
  Vector beta_true(3);
  beta_true << 0.3, -0.5, 0.8;
  Vector y(n);
  for (Index i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = unif(rng);
    X(i, 2) = unif(rng);
    double lam = std::exp(X.row(i).dot(beta_true));
    std::poisson_distribution<long> pois(lam);
    y(i) = static_cast<double>(pois(rng));
  }
  PoissonGlmFit fit = fit_poisson_glm(X, y);
  for (Index c = 0; c < 3; ++c)
    CHECK(std::abs(fit.beta(c) - beta_true(c)) < 3 * fit.se(c));
  double fitted = 0;
  for (Index i = 0; i < n; ++i) fitted += std::exp(X.row(i).dot(fit.beta));
  CHECK(fitted == doctest::Approx(y.sum()).epsilon(1e-6));
}

TEST_CASE("collinear columns are pruned with a warning and zero coefficient") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  Index n = 200;
  Matrix X(n, 3);
  Vector y(n);
  for (Index i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = unif(rng);
    X(i, 2) = X(i, 1);  // exact duplicate
    std::poisson_distribution<long> pois(std::exp(0.2 + 0.5 * X(i, 1)));
    y(i) = static_cast<double>(pois(rng));
  }
  PoissonGlmFit fit = fit_poisson_glm(X, y);
  CHECK(fit.dropped.size() == 1);
  Index dropped = fit.dropped[0];
  CHECK(fit.beta(dropped) == 0.0);
  CHECK(std::isnan(fit.se(dropped)));
  CHECK(fit.beta.allFinite());
}

TEST_CASE("poisson warm start converges in at most two steps") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  Index n = 500;
  Matrix X(n, 2);
  Vector y(n);
  for (Index i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = unif(rng);
    std::poisson_distribution<long> pois(std::exp(0.4 + 0.3 * X(i, 1)));
    y(i) = static_cast<double>(pois(rng));
  }
  PoissonGlmFit cold = fit_poisson_glm(X, y);
  PoissonGlmFit warm = fit_poisson_glm(X, y, {}, &cold.beta);
  CHECK(warm.iterations <= 2);
  CHECK(warm.beta.isApprox(cold.beta, 1e-8));
}

TEST_CASE("intercept-only multinomial recovers empirical shares") {
  Matrix X = Matrix::Ones(1, 1);
  Matrix W(1, 2);
  W << 30, 10;
  MultinomialGlmFit fit = fit_multinomial_glm(X, W);
  CHECK(fit.converged);
  CHECK(fit.B(0, 0) == doctest::Approx(1.0986122886681098).epsilon(1e-10));
  CHECK(fit.B(1, 0) == 0.0);
  Matrix p = softmax_rows(Matrix::Ones(1, 1) * fit.B.leftCols(1).transpose());
  CHECK(p(0, 0) == doctest::Approx(0.75).epsilon(1e-10));
  CHECK(p(0, 1) == doctest::Approx(0.25).epsilon(1e-10));
}

TEST_CASE("uniform class weights give zero coefficients") {
  Matrix X = Matrix::Ones(4, 1);
  Matrix W = Matrix::Constant(4, 3, 2.0);
  MultinomialGlmFit fit = fit_multinomial_glm(X, W);
  CHECK(fit.B.cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("multinomial recovery within three standard errors") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  Index n = 4000, d = 3;
  Matrix X(n, 2);
  Matrix Btrue(d, 2);
  Btrue << 0.5, -0.3, -0.2, 0.4, 0.0, 0.0;
  Matrix W = Matrix::Zero(n, d);
  for (Index i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = unif(rng);
    Vector eta = Btrue * X.row(i).transpose();
    double lse = log_sum_exp(eta);
    std::poisson_distribution<long> pois(6.0);
    long total = pois(rng);
    double remaining_p = 1.0;
    long remaining_n = total;
    for (Index j = 0; j < d && remaining_n > 0; ++j) {
      double pj = std::exp(eta(j) - lse);
      if (j == d - 1) {
        W(i, j) = static_cast<double>(remaining_n);
        break;
      }
      std::binomial_distribution<long> bin(remaining_n, std::min(1.0, pj / remaining_p));
      long k = bin(rng);
      W(i, j) = static_cast<double>(k);
      remaining_n -= k;
      remaining_p -= pj;
    }
  }
  MultinomialGlmFit fit = fit_multinomial_glm(X, W);
  for (Index z = 0; z < d - 1; ++z)
    for (Index c = 0; c < 2; ++c)
      CHECK(std::abs(fit.B(z, c) - Btrue(z, c)) < 3 * fit.se(z, c));
}

TEST_CASE("multinomial warm start converges in at most two steps") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unif(0.0, 3.0);
  Index n = 60, d = 4;
  Matrix X(n, 2);
  Matrix W(n, d);
  for (Index i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = unif(rng) - 1.5;
    for (Index j = 0; j < d; ++j) W(i, j) = unif(rng);
  }
  MultinomialGlmFit cold = fit_multinomial_glm(X, W);
  MultinomialGlmFit warm = fit_multinomial_glm(X, W, {}, &cold.B);
  CHECK(warm.iterations <= 2);
}

TEST_CASE("design widths for the simulation schema are 10 and 40") {
  FeatureSchema schema = FeatureSchema::infer(simulation_schema_names());
  GlmDesign occ = build_design(schema, DesignTarget::occurrence);
  GlmDesign rep = build_design(schema, DesignTarget::reporting);
  CHECK(occ.width() == 10);
  CHECK(rep.width() == 40);
  CHECK(occ.labels[0] == "(intercept)");
  // dropped first indicators
  for (const auto& lbl : occ.labels) {
    CHECK(lbl != "x1_1");
    CHECK(lbl != "x3_1");
    CHECK(lbl != "x4_1");
  }
  // occurrence keeps only the delay-1 period block
  for (const auto& lbl : occ.labels) {
    int delay = 0;
    if (parse_ps_column(lbl, &delay)) CHECK(delay == 1);
  }
}

TEST_CASE("design rows prepend an intercept") {
  FeatureSchema schema = FeatureSchema::infer({"a", "b"});
  GlmDesign d = build_design(schema, DesignTarget::reporting);
  Matrix X = Matrix::Zero(1, 2);
  Dataset ds;
  ds.schema = schema;
  ds.X = X;
  ds.counts = Matrix::Zero(1, 2);
  ds.occ = IntVector::Constant(1, 1);
  ds.tau_i = IntVector::Constant(1, 2);
  ds.ids = {"a"};
  Matrix D = d.build(ds);
  CHECK(D(0, 0) == 1.0);
  CHECK(D(0, 1) == 0.0);
  CHECK(D(0, 2) == 0.0);
}

TEST_CASE("glm learner round-trips through json and predicts identically") {
  Dataset ds = testutil::random_dataset(120, 3, 21);
  std::vector<Index> train, val1;
  for (Index i = 0; i < ds.n(); ++i) (i % 5 ? train : val1).push_back(i);
  Matrix completed = ds.counts;
  for (Index i = 0; i < ds.n(); ++i)
    for (Index j = ds.tau_i(i); j < ds.d(); ++j) completed(i, j) = 0.7;

  GlmLearner lr;
  MStepContext ctx{ds, completed, train, val1, 1, Vector::Constant(3, 1.0 / 3), 0};
  lr.m_step(ctx);
  ParameterEstimates est = lr.predict(ds);
  est.validate();

  nlohmann::json j = lr.to_json();
  auto lr2 = GlmLearner::from_json(nlohmann::json::parse(j.dump()));
  ParameterEstimates est2 = lr2->predict(ds);
  CHECK(est2.lambda.isApprox(est.lambda, 0));
  CHECK(est2.p.isApprox(est.p, 0));

  std::string csv = lr.coefficients_csv();
  CHECK(csv.rfind("model,column,class,value\n", 0) == 0);
  CHECK(csv.find("occurrence,(intercept),0,") != std::string::npos);
}

TEST_CASE("predicting with an unfitted learner fails loudly") {
  GlmLearner lr;
  Dataset ds = testutil::tiny_dataset();
  CHECK_THROWS_AS(lr.predict(ds), DataError);
}
