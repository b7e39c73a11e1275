#include "rlshift/core.hpp"

#include <doctest.h>

#include <thread>
#include <vector>

using namespace rlshift;

namespace {

VectorXd vec(std::initializer_list<double> xs) {
  VectorXd v(static_cast<Index>(xs.size()));
  Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

// Brute force over a 1/step grid of the 3-simplex.
VectorXd grid_projection(const VectorXd& v, int step) {
  VectorXd best = VectorXd::Zero(3);
  double best_d = 1e300;
  for (int a = 0; a <= step; ++a) {
    for (int b = 0; a + b <= step; ++b) {
      VectorXd p = vec({double(a) / step, double(b) / step, double(step - a - b) / step});
      double d = (p - v).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = p;
      }
    }
  }
  return best;
}

}  // namespace

TEST_CASE("label marginal validation") {
  CHECK_NOTHROW(LabelMarginal(vec({0.25, 0.75})));
  CHECK_THROWS_AS(LabelMarginal(vec({1.0})), Error);
  CHECK_THROWS_AS(LabelMarginal(vec({0.5, 0.6})), Error);
  CHECK_THROWS_AS(LabelMarginal(vec({1.5, -0.5})), Error);
  LabelMarginal p(vec({0.3, 0.7 + 5e-7}));
  CHECK(p.probs().sum() == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(LabelMarginal::from_labels({0, 1, 1, 2}, 3).probs().isApprox(vec({0.25, 0.5, 0.25})));
}

TEST_CASE("simplex projection examples") {
  CHECK(project_simplex(vec({0.2, 0.3, 0.5})).probs().isApprox(vec({0.2, 0.3, 0.5})));
  CHECK(project_simplex(vec({1.2, -0.2})).probs().isApprox(vec({1.0, 0.0})));
  CHECK(project_simplex(vec({0.0, 0.0})).probs().isApprox(vec({0.5, 0.5})));
  CHECK(project_simplex(vec({3.0, 1.0, -1.0})).probs().isApprox(vec({1.0, 0.0, 0.0})));
}

TEST_CASE("simplex projection matches grid search and is idempotent") {
  RngStream rng(5, 100);
  for (int t = 0; t < 100; ++t) {
    VectorXd v(3);
    for (Index j = 0; j < 3; ++j) v(j) = 3.0 * rng.uniform() - 1.0;
    VectorXd p = project_simplex(v).probs();
    CHECK((p - grid_projection(v, 200)).cwiseAbs().maxCoeff() <= 1.0 / 200 + 1e-12);
    CHECK((project_simplex(p).probs() - p).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(p.minCoeff() >= 0.0);
  }
}

TEST_CASE("l1 distance") {
  LabelMarginal a(vec({0.5, 0.5})), b(vec({0.9, 0.1})), c(vec({0.0, 1.0}));
  CHECK(l1_distance(a, b) == doctest::Approx(0.8));
  CHECK(l1_distance(a, a) == 0.0);
  CHECK(l1_distance(b, c) <= l1_distance(b, a) + l1_distance(a, c) + 1e-15);
  CHECK_THROWS_AS(l1_distance(a, LabelMarginal::uniform(3)), Error);
}

TEST_CASE("weights to marginal") {
  LabelMarginal p_s(vec({0.5, 0.5}));
  CHECK(weights_to_marginal(ImportanceWeights(vec({0.4, 1.6}), p_s), p_s).probs().isApprox(vec({0.2, 0.8})));
  CHECK_THROWS_AS(weights_to_marginal(ImportanceWeights(vec({0.0, 0.0}), p_s), p_s), Error);
  CHECK(ImportanceWeights(vec({0.4, 1.6}), p_s).feasible());
  CHECK_FALSE(ImportanceWeights(vec({1.0, 1.6}), p_s).feasible());
}

TEST_CASE("floor marginal") {
  auto p = floor_marginal(LabelMarginal(vec({1.0, 0.0})), 1e-6);
  CHECK(p[1] > 0.0);
  CHECK(p.probs().sum() == doctest::Approx(1.0));
}

TEST_CASE("prediction matrix rows and argmax ties") {
  MatrixXd m(2, 3);
  m << 0.4, 0.4, 0.2, 0.1, 0.2, 0.7;
  PredictionMatrix p(m);
  CHECK(p.argmax() == Labels{0, 2});
  MatrixXd bad(1, 2);
  bad << 0.5, 0.6;
  CHECK_THROWS_AS(PredictionMatrix{bad}, Error);
}

TEST_CASE("rng streams are deterministic across threads") {
  auto draw = [] {
    RngStream r(42, stream::kDirichlet);
    std::vector<double> out;
    for (int i = 0; i < 10000; ++i) out.push_back(r.uniform());
    return out;
  };
  std::vector<double> serial = draw();
  std::vector<std::vector<double>> results(4);
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) threads.emplace_back([&, t] { results[t] = draw(); });
  for (auto& th : threads) th.join();
  for (const auto& r : results) CHECK(r == serial);
  CHECK(derive_seed({1, 2}) != derive_seed({2, 1}));
  RngStream other(42, stream::kRealize);
  CHECK(other.uniform() != serial[0]);
}
