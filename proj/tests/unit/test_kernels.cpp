#include <cmath>

#include "doctest.h"
#include "tagforge/crossmodal.hpp"
#include "tagforge/kernels.hpp"

using namespace tagforge;

namespace {

struct ThreadScope {
  explicit ThreadScope(int n) : saved(threads()) { set_threads(n); }
  ~ThreadScope() { set_threads(saved); }
  int saved;
};

GmmModel random_gmm(std::size_t k, std::size_t d, Rng& rng) {
  GmmModel g{std::vector<double>(k, 1.0 / static_cast<double>(k)), Matrix(k, d), Matrix(k, d)};
  for (auto& v : g.means.data()) v = 2 * rng.normal();
  for (auto& v : g.variances.data()) v = 0.5 + rng.uniform();
  return g;
}

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m(r, c);
  for (auto& v : m.data()) v = 2 * rng.normal();
  return m;
}

void check_close(const std::vector<double>& a, const std::vector<double>& b, double rel) {
  REQUIRE(a.size() == b.size());
  double scale = 0;
  for (double v : b) scale = std::max(scale, std::abs(v));
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= rel * scale);
}

std::vector<double> flatten(const EmbeddingNet& n) {
  std::vector<double> out(n.w1.data().begin(), n.w1.data().end());
  out.insert(out.end(), n.b1.begin(), n.b1.end());
  out.insert(out.end(), n.w2.data().begin(), n.w2.data().end());
  out.insert(out.end(), n.b2.begin(), n.b2.end());
  return out;
}

}  // namespace

TEST_CASE("estep statistics") {
  Rng rng(5);
  const auto g = random_gmm(4, 6, rng);
  const auto data = random_matrix(2000, 6, rng);
  kernels::EStepStats one, three;
  {
    ThreadScope t(1);
    one = kernels::estep_stats(g, data);
  }
  {
    ThreadScope t(3);
    three = kernels::estep_stats(g, data);
  }
  CHECK(one.nk == three.nk);
  CHECK(one.s1 == three.s1);
  CHECK(one.s2 == three.s2);
  CHECK(one.loglik == three.loglik);

  const auto ref = kernels::reference::estep_stats(g, data);
  check_close(one.nk, ref.nk, 1e-12);
  check_close(one.s1.data(), ref.s1.data(), 1e-12);
  check_close(one.s2.data(), ref.s2.data(), 1e-12);
  CHECK(one.loglik == doctest::Approx(ref.loglik).epsilon(1e-12));
}

TEST_CASE("fisher sums") {
  Rng rng(9);
  for (std::size_t n : {1u, 2u, 7u, 100u, 1001u}) {
    const auto g = random_gmm(3, 4, rng);
    const auto data = random_matrix(n, 4, rng);
    std::vector<double> one, three;
    {
      ThreadScope t(1);
      one = kernels::fisher_sums(g, data);
    }
    {
      ThreadScope t(3);
      three = kernels::fisher_sums(g, data);
    }
    CHECK(one == three);
    check_close(one, kernels::reference::fisher_sums(g, data), 1e-12);
  }
}

TEST_CASE("squared distances") {
  Rng rng(11);
  const auto rows = random_matrix(500, 9, rng);
  std::vector<double> q(9);
  for (auto& v : q) v = rng.normal();
  std::vector<double> one, three;
  {
    ThreadScope t(1);
    one = kernels::squared_distances(rows, q);
  }
  {
    ThreadScope t(3);
    three = kernels::squared_distances(rows, q);
  }
  CHECK(one == three);
  CHECK(one == kernels::reference::squared_distances(rows, q));
}

TEST_CASE("mlp loss and gradient") {
  Rng rng(13);
  auto net = EmbeddingNet::zeros(12, 6, 4);
  for (auto* m : {&net.w1, &net.w2}) {
    for (auto& v : m->data()) v = 0.3 * rng.normal();
  }
  for (auto& v : net.b1) v = 0.1 * rng.normal();
  for (auto& v : net.b2) v = 0.1 * rng.normal();
  std::vector<TrainPair> batch(17);
  for (auto& p : batch) {
    p.fisher.resize(12);
    p.target.resize(4);
    for (auto& v : p.fisher) v = rng.normal();
    for (auto& v : p.target) v = rng.normal();
  }
  EmbeddingNet g1, g3, gref;
  double l1, l3;
  {
    ThreadScope t(1);
    l1 = kernels::mlp_loss_grad(net, batch, 1e-3, g1);
  }
  {
    ThreadScope t(3);
    l3 = kernels::mlp_loss_grad(net, batch, 1e-3, g3);
  }
  CHECK(l1 == l3);
  CHECK(g1 == g3);
  const double lref = kernels::reference::mlp_loss_grad(net, batch, 1e-3, gref);
  CHECK(l1 == doctest::Approx(lref).epsilon(1e-12));
  check_close(flatten(g1), flatten(gref), 1e-12);

  std::vector<TrainPair> bad(1);
  bad[0].fisher.resize(3);
  bad[0].target.resize(4);
  CHECK_THROWS_AS(kernels::mlp_loss_grad(net, bad, 0.0, g1), InvalidArgument);
  CHECK_THROWS_AS(kernels::mlp_loss_grad(net, {}, 0.0, g1), InvalidArgument);
}
