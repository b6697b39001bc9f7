#include <cmath>

#include "doctest.h"
#include "support/paths.hpp"
#include "tagforge/gmm.hpp"

using namespace tagforge;

namespace {

Matrix random_matrix(std::size_t n, std::size_t d, Rng& rng, double scale = 1.0) {
  Matrix m(n, d);
  for (auto& v : m.data()) v = scale * rng.normal();
  return m;
}

GmmModel random_gmm(std::size_t k, std::size_t d, Rng& rng) {
  GmmModel g;
  g.means = random_matrix(k, d, rng, 2.0);
  g.variances = Matrix(k, d);
  for (auto& v : g.variances.data()) v = 0.3 + rng.uniform();
  double sum = 0;
  for (std::size_t c = 0; c < k; ++c) {
    g.weights.push_back(0.2 + rng.uniform());
    sum += g.weights.back();
  }
  for (auto& w : g.weights) w /= sum;
  return g;
}

// Direct density evaluation, no log-space tricks.
double naive_density(const GmmModel& g, std::span<const double> x, std::size_t c) {
  double p = g.weights[c];
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double var = g.variances(c, j);
    const double z = x[j] - g.means(c, j);
    p *= std::exp(-0.5 * z * z / var) / std::sqrt(2.0 * M_PI * var);
  }
  return p;
}

}  // namespace

TEST_CASE("K = 1 is the closed form") {
  Rng rng(3);
  const Matrix data = random_matrix(200, 3, rng, 2.0);
  const auto fit = fit_gmm(data, 1);
  REQUIRE(fit.model.weights.size() == 1);
  CHECK(fit.model.weights[0] == 1.0);
  for (std::size_t j = 0; j < 3; ++j) {
    double mean = 0, var = 0;
    for (std::size_t i = 0; i < 200; ++i) mean += data(i, j);
    mean /= 200;
    for (std::size_t i = 0; i < 200; ++i) var += (data(i, j) - mean) * (data(i, j) - mean);
    var /= 200;
    CHECK(fit.model.means(0, j) == doctest::Approx(mean).epsilon(1e-12));
    CHECK(fit.model.variances(0, j) == doctest::Approx(var).epsilon(1e-10));
  }
}

TEST_CASE("two separated clusters are recovered") {
  Rng rng(17);
  Matrix data(1000, 2);
  for (std::size_t i = 0; i < 1000; ++i) {
    const double mu = i < 500 ? 5.0 : -5.0;
    for (std::size_t j = 0; j < 2; ++j) data(i, j) = mu + rng.normal();
  }
  for (GmmInit init : {GmmInit::kmeans_pp, GmmInit::random_points}) {
    EmConfig cfg;
    cfg.init = init;
    const auto fit = fit_gmm(data, 2, cfg);
    const auto& g = fit.model;
    const std::size_t pos = g.means(0, 0) > 0 ? 0 : 1;
    for (std::size_t j = 0; j < 2; ++j) {
      CHECK(std::abs(g.means(pos, j) - 5.0) <= 0.15);
      CHECK(std::abs(g.means(1 - pos, j) + 5.0) <= 0.15);
    }
    CHECK(std::abs(g.weights[0] - 0.5) <= 0.05);
    CHECK(fit.diagnostics.converged);
    CHECK(fit.diagnostics.reseeded_components == 0);
  }
}

TEST_CASE("EM log-likelihood never decreases") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    const std::size_t k = 1 + rng.below(4), d = 1 + rng.below(4), n = 30 + rng.below(200);
    Matrix data = random_matrix(n, d, rng);
    for (std::size_t i = 0; i < n; ++i) data(i, 0) += 4.0 * static_cast<double>(i % k);
    EmConfig cfg;
    cfg.seed = seed;
    cfg.max_iters = 60;
    cfg.ll_rel_tol = 1e-12;
    const auto fit = fit_gmm(data, k, cfg);
    const auto& h = fit.diagnostics.loglik_history;
    CAPTURE(seed);
    for (std::size_t t = 1; t < h.size(); ++t) CHECK(h[t] >= h[t - 1] - 1e-9);
    CHECK(h.back() == doctest::Approx(log_likelihood(fit.model, data)).epsilon(1e-12));
  }
}

TEST_CASE("fit errors") {
  Matrix two(2, 1);
  CHECK_THROWS_WITH_AS(fit_gmm(two, 3), "fewer descriptors than components", InvalidArgument);
  Matrix bad(5, 1, 1.0);
  bad(2, 0) = std::nan("");
  CHECK_THROWS_WITH_AS(fit_gmm(bad, 1), "non-finite input", DataError);
  bad(2, 0) = INFINITY;
  CHECK_THROWS_AS(fit_gmm(bad, 1), DataError);
}

TEST_CASE("variances are floored") {
  Matrix data(50, 2, 0.0);
  for (std::size_t i = 0; i < 50; ++i) data(i, 0) = static_cast<double>(i % 2);
  const auto fit = fit_gmm(data, 2);
  for (double v : fit.model.variances.data()) CHECK(v >= 1e-12);
  // Column 0 has variance 0.25; each component collapses onto one value.
  CHECK(fit.model.variances(0, 0) == doctest::Approx(0.25e-6));
}

TEST_CASE("fixed seed gives an identical model") {
  Rng rng(8);
  const Matrix data = random_matrix(300, 3, rng);
  EmConfig cfg;
  cfg.seed = 42;
  CHECK(fit_gmm(data, 3, cfg).model == fit_gmm(data, 3, cfg).model);
}

TEST_CASE("responsibilities") {
  SUBCASE("K = 1") {
    Rng rng(1);
    const auto g = random_gmm(1, 3, rng);
    const std::vector<double> x{0.3, -2, 1};
    CHECK(responsibilities(g, x) == std::vector<double>{1.0});
  }
  SUBCASE("symmetric pair at the midpoint") {
    GmmModel g{{0.5, 0.5}, Matrix(2, 2), Matrix(2, 2, 1.0)};
    g.means(0, 0) = 1.5;
    g.means(0, 1) = -1.5;
    g.means(1, 0) = -1.5;
    g.means(1, 1) = 1.5;
    const auto r = responsibilities(g, std::vector<double>{0, 0});
    CHECK(r[0] == r[1]);
    CHECK(r[0] == doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("naive oracle") {
    Rng rng(5);
    for (int inst = 0; inst < 50; ++inst) {
      const std::size_t k = 1 + rng.below(4), d = 1 + rng.below(4);
      const auto g = random_gmm(k, d, rng);
      std::vector<double> x(d);
      for (auto& v : x) v = rng.normal();
      const auto r = responsibilities(g, x);
      double z = 0, sum = 0;
      for (std::size_t c = 0; c < k; ++c) z += naive_density(g, x, c);
      for (std::size_t c = 0; c < k; ++c) {
        CHECK(r[c] >= 0.0);
        CHECK(std::abs(r[c] - naive_density(g, x, c) / z) <= 1e-12);
        sum += r[c];
      }
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
  }
  SUBCASE("far-away points stay finite") {
    Rng rng(6);
    const auto g = random_gmm(3, 2, rng);
    const auto r = responsibilities(g, std::vector<double>{1e6, -1e6});
    double sum = 0;
    for (double v : r) sum += v;
    CHECK(std::abs(sum - 1.0) <= 1e-12);
  }
  SUBCASE("non-finite input") {
    Rng rng(7);
    const auto g = random_gmm(2, 2, rng);
    CHECK_THROWS_AS(responsibilities(g, std::vector<double>{NAN, 0}), DataError);
  }
}

TEST_CASE("log_likelihood") {
  GmmModel unit{{1.0}, Matrix(1, 1, 0.7), Matrix(1, 1, 1.0)};
  Matrix at_mean(1, 1, 0.7);
  CHECK(log_likelihood(unit, at_mean) == doctest::Approx(-0.5 * std::log(2 * M_PI)).epsilon(1e-15));

  Rng rng(9);
  for (int inst = 0; inst < 20; ++inst) {
    const std::size_t k = 1 + rng.below(3), d = 1 + rng.below(4), n = 1 + rng.below(30);
    const auto g = random_gmm(k, d, rng);
    const Matrix data = random_matrix(n, d, rng);
    double naive = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double p = 0;
      for (std::size_t c = 0; c < k; ++c) p += naive_density(g, data.row(i), c);
      naive += std::log(p);
    }
    CHECK(std::abs(log_likelihood(g, data) - naive) <= 1e-10 * std::max(1.0, std::abs(naive)));
  }
}

TEST_CASE("model JSON round trip") {
  Rng rng(10);
  Matrix data = random_matrix(100, 4, rng);
  const auto g = fit_gmm(data, 3).model;
  CHECK(gmm_from_json(gmm_to_json(g), "mem") == g);
  testing_support::TempDir dir("gmm");
  save_gmm(g, dir / "g.json");
  CHECK(load_gmm(dir / "g.json") == g);
  CHECK(read_file(dir / "g.json") == gmm_to_json(g));

  CHECK_THROWS_AS(gmm_from_json("{", "bad.json"), DataError);
  CHECK_THROWS_AS(gmm_from_json(R"({"version":1,"k":1,"d":1,"weights":[1],"means":[[0]],"variances":[[-1]]})", "b"),
                  DataError);
  CHECK_THROWS_AS(gmm_from_json(R"({"version":1,"k":2,"d":1,"weights":[1],"means":[[0]],"variances":[[1]]})", "b"),
                  DataError);
  CHECK_THROWS_WITH_AS(load_gmm("/nonexistent/g.json"), doctest::Contains("g.json"), DataError);
}
