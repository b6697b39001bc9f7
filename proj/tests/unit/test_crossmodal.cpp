#include <cmath>

#include "doctest.h"
#include "support/paths.hpp"
#include "tagforge/crossmodal.hpp"

using namespace tagforge;

namespace {

EmbeddingNet random_net(std::size_t f, std::size_t h, std::size_t d, double scale, Rng& rng) {
  auto net = EmbeddingNet::zeros(f, h, d);
  for (auto& v : net.w1.data()) v = scale * rng.normal();
  for (auto& v : net.w2.data()) v = scale * rng.normal();
  for (auto& v : net.b1) v = scale * rng.normal();
  for (auto& v : net.b2) v = scale * rng.normal();
  return net;
}

std::vector<TrainPair> random_pairs(std::size_t n, std::size_t f, std::size_t d, Rng& rng) {
  std::vector<TrainPair> out(n);
  for (auto& p : out) {
    p.fisher.resize(f);
    p.target.resize(d);
    for (auto& v : p.fisher) v = rng.normal();
    for (auto& v : p.target) v = rng.normal();
  }
  return out;
}

std::vector<std::vector<double>*> params(EmbeddingNet& n) { return {&n.w1.data(), &n.b1, &n.w2.data(), &n.b2}; }

// Loss computed straight from the definition, no shared code with the
// kernel. Extended precision keeps rounding out of the finite differences.
long double plain_loss(const EmbeddingNet& n, const std::vector<TrainPair>& batch, double l2) {
  long double total = 0;
  for (const auto& p : batch) {
    for (std::size_t o = 0; o < n.output_dim(); ++o) {
      long double y = n.b2[o];
      for (std::size_t j = 0; j < n.hidden_dim(); ++j) {
        long double a = n.b1[j];
        for (std::size_t i = 0; i < n.input_dim(); ++i) a += static_cast<long double>(n.w1(j, i)) * p.fisher[i];
        y += n.w2(o, j) * std::tanh(a);
      }
      total += (y - p.target[o]) * (y - p.target[o]);
    }
  }
  long double reg = 0;
  for (double w : n.w1.data()) reg += static_cast<long double>(w) * w;
  for (double w : n.w2.data()) reg += static_cast<long double>(w) * w;
  return total / batch.size() + l2 * reg;
}

}  // namespace

TEST_CASE("zero net") {
  const auto net = EmbeddingNet::zeros(4, 3, 2);
  TrainPair p{{1, 2, 3, 4}, {0.5, -2.0}, "c"};
  const auto lg = loss_and_grad(net, std::vector<TrainPair>{p}, 0.0);
  CHECK(lg.loss == 0.25 + 4.0);
  CHECK(lg.grad.b2 == std::vector<double>{-1.0, 4.0});
  CHECK(project(net, p.fisher) == std::vector<double>{0.0, 0.0});
}

TEST_CASE("gradient matches central differences") {
  const double step = 1e-5;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    auto net = random_net(20, 7, 5, 0.5, rng);
    const auto batch = random_pairs(3, 20, 5, rng);
    const double l2 = 1e-3;
    const auto lg = loss_and_grad(net, batch, l2);
    CHECK(lg.loss == doctest::Approx(static_cast<double>(plain_loss(net, batch, l2))).epsilon(1e-12));
    auto grad = lg.grad;
    const auto gp = params(grad);
    const auto np = params(net);
    double worst = 0;
    for (std::size_t t = 0; t < np.size(); ++t) {
      for (std::size_t i = 0; i < np[t]->size(); ++i) {
        const double saved = (*np[t])[i];
        const double hi = saved + step, lo = saved - step;
        (*np[t])[i] = hi;
        const long double up = plain_loss(net, batch, l2);
        (*np[t])[i] = lo;
        const long double down = plain_loss(net, batch, l2);
        (*np[t])[i] = saved;
        const double fd = static_cast<double>((up - down) / (static_cast<long double>(hi) - lo));
        const double a = (*gp[t])[i];
        const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-12});
        worst = std::max(worst, rel);
      }
    }
    CHECK_MESSAGE(worst <= 1e-6, "seed " << seed << " worst " << worst);
  }
}

TEST_CASE("zero loss when every pair already maps to its target") {
  Rng rng(3);
  const auto net = random_net(6, 4, 3, 0.7, rng);
  auto batch = random_pairs(5, 6, 3, rng);
  for (auto& p : batch) p.target = project(net, p.fisher);
  const auto lg = loss_and_grad(net, batch, 0.0);
  CHECK(lg.loss == 0.0);
  auto g = lg.grad;
  for (auto* v : params(g)) {
    for (double x : *v) CHECK(std::abs(x) <= 1e-14);
  }
}

TEST_CASE("memorizes a single pair") {
  Rng rng(4);
  auto pairs = random_pairs(1, 8, 3, rng);
  NetConfig cfg;
  cfg.hidden = 1;
  cfg.max_iters = 3000;
  cfg.l2_reg = 0.0;
  const auto trained = train_embedding(pairs, cfg);
  CHECK(trained.trace.best_loss <= 1e-6);
  const auto y = project(trained.net, pairs[0].fisher);
  for (std::size_t o = 0; o < y.size(); ++o) CHECK(std::abs(y[o] - pairs[0].target[o]) <= 1e-3);
}

TEST_CASE("training is deterministic and accepted losses never increase") {
  Rng rng(8);
  const auto pairs = random_pairs(12, 10, 4, rng);
  NetConfig cfg;
  cfg.hidden = 6;
  cfg.max_iters = 200;
  cfg.lr = 0.2;  // large enough to trigger backoff
  const auto a = train_embedding(pairs, cfg);
  const auto b = train_embedding(pairs, cfg);
  CHECK(a.net == b.net);
  CHECK(net_to_json(a.net) == net_to_json(b.net));
  CHECK(a.trace.accepted_losses == b.trace.accepted_losses);
  for (std::size_t i = 1; i < a.trace.accepted_losses.size(); ++i) {
    CHECK(a.trace.accepted_losses[i] <= a.trace.accepted_losses[i - 1]);
  }
  CHECK(a.trace.best_loss == a.trace.accepted_losses.back());
  CHECK(a.trace.best_loss < a.trace.accepted_losses.front());

  cfg.optimizer = Optimizer::minibatch_sgd;
  cfg.batch_size = 5;
  cfg.lr = 0.01;
  CHECK(train_embedding(pairs, cfg).net == train_embedding(pairs, cfg).net);
}

TEST_CASE("training errors") {
  Rng rng(2);
  auto pairs = random_pairs(3, 4, 2, rng);
  NetConfig cfg;
  cfg.hidden = 2;
  cfg.max_iters = 5;
  CHECK_THROWS_AS(train_embedding({}, cfg), InvalidArgument);
  auto bad = pairs;
  bad[1].fisher.push_back(0.0);
  CHECK_THROWS_AS(train_embedding(bad, cfg), InvalidArgument);
  bad = pairs;
  bad[2].target.pop_back();
  CHECK_THROWS_AS(train_embedding(bad, cfg), InvalidArgument);
  auto c2 = cfg;
  c2.hidden = 0;
  CHECK_THROWS_AS(train_embedding(pairs, c2), InvalidArgument);
  c2 = cfg;
  c2.lr = 0.0;
  CHECK_THROWS_AS(train_embedding(pairs, c2), InvalidArgument);

  for (auto& p : pairs) {
    for (auto& v : p.target) v *= 1e200;
  }
  c2 = cfg;
  c2.lr = 1e300;
  try {
    train_embedding(pairs, c2);
    FAIL("no divergence");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("divergence") != std::string::npos);
    CHECK(std::string(e.what()).find("iteration") != std::string::npos);
  }
}

TEST_CASE("project on a hand-worked 2x3x2 net") {
  EmbeddingNet net = EmbeddingNet::zeros(2, 3, 2);
  // w1 = [[1,0],[0,1],[1,-1]], b1 = [0, 0.5, 0]
  net.w1(0, 0) = 1;
  net.w1(1, 1) = 1;
  net.w1(2, 0) = 1;
  net.w1(2, 1) = -1;
  net.b1 = {0, 0.5, 0};
  // w2 = [[1,1,0],[0,2,-1]], b2 = [0.1, -0.2]
  net.w2(0, 0) = 1;
  net.w2(0, 1) = 1;
  net.w2(1, 1) = 2;
  net.w2(1, 2) = -1;
  net.b2 = {0.1, -0.2};
  // x = (0.5, -0.5): pre-activations 0.5, 0, 1
  const auto y = project(net, std::vector<double>{0.5, -0.5});
  const double t05 = std::tanh(0.5), t1 = std::tanh(1.0);
  REQUIRE(y.size() == 2);
  CHECK(y[0] == doctest::Approx(t05 + 0.0 + 0.1).epsilon(1e-15));
  CHECK(y[1] == doctest::Approx(0.0 - t1 - 0.2).epsilon(1e-15));
  CHECK_THROWS_AS(project(net, std::vector<double>{1, 2, 3}), InvalidArgument);
}

TEST_CASE("projection stays inside the saturation bound") {
  Rng rng(21);
  for (int inst = 0; inst < 20; ++inst) {
    const auto net = random_net(5, 4, 3, 2.0, rng);
    double w2 = 0, b2 = 0;
    for (double v : net.w2.data()) w2 += v * v;
    for (double v : net.b2) b2 += v * v;
    const double bound = std::sqrt(w2) * std::sqrt(4.0) + std::sqrt(b2);
    for (int k = 0; k < 20; ++k) {
      std::vector<double> x(5);
      for (auto& v : x) v = 100 * rng.normal();
      const auto y = project(net, x);
      double n = 0;
      for (double v : y) n += v * v;
      CHECK(std::sqrt(n) <= bound + 1e-12);
    }
  }
}

TEST_CASE("nearest class accuracy") {
  Rng rng(17);
  const auto net = random_net(4, 5, 3, 1.0, rng);
  auto pairs = random_pairs(6, 4, 3, rng);
  std::map<std::string, std::vector<double>> classes;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    pairs[i].class_stem = "c" + std::to_string(i);
    classes[pairs[i].class_stem] = project(net, pairs[i].fisher);
  }
  CHECK(nearest_class_accuracy(net, pairs, classes) == 1.0);
  // Swap two class vectors: exactly those two pairs now miss.
  std::swap(classes["c0"], classes["c1"]);
  CHECK(nearest_class_accuracy(net, pairs, classes) == doctest::Approx(4.0 / 6.0));
  classes.erase("c3");
  CHECK_THROWS_AS(nearest_class_accuracy(net, pairs, classes), InvalidArgument);
}

TEST_CASE("net files round-trip bit-exactly") {
  Rng rng(23);
  auto net = random_net(7, 3, 2, 1.0, rng);
  net.w1(0, 0) = 1.0 / 3.0;
  net.b2[1] = -0.0;
  net.w2(1, 2) = 5e-324;
  const auto back = net_from_json(net_to_json(net), "net.json");
  CHECK(back == net);
  CHECK(std::signbit(back.b2[1]));
  CHECK(net_to_json(back) == net_to_json(net));

  testing_support::TempDir dir("net");
  save_net(net, dir / "net.json");
  CHECK(load_net(dir / "net.json") == net);

  CHECK_THROWS_AS(net_from_json("{", "x"), DataError);
  auto j = net_to_json(net);
  CHECK_THROWS_AS(net_from_json(j.replace(j.find("\"version\":1"), 11, "\"version\":2"), "x"), DataError);
  j = net_to_json(net);
  CHECK_THROWS_AS(net_from_json(j.replace(j.find("\"h\":3"), 5, "\"h\":4"), "x"), DataError);
}
