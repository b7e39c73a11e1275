#include "rlshift/shift.hpp"

#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>

using namespace rlshift;

namespace {

VectorXd vec(std::initializer_list<double> xs) {
  VectorXd v(static_cast<Index>(xs.size()));
  Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

SynthTaskSpec small_spec(double epsilon = 0.0) {
  SynthTaskSpec s;
  s.k = 3;
  s.d = 4;
  s.epsilon = epsilon;
  s.n_source = 600;
  s.n_target_pool = 900;
  s.seed = 9;
  return s;
}

}  // namespace

TEST_CASE("dirichlet without alpha returns the base marginal") {
  LabelMarginal p0(vec({0.2, 0.3, 0.5}));
  CHECK(dirichlet_marginal(p0, ShiftSpec{std::nullopt, 4}) == p0);
  CHECK_THROWS_AS(dirichlet_marginal(p0, ShiftSpec{0.0, 4}), Error);
}

TEST_CASE("dirichlet draw is reproducible from its stream") {
  LabelMarginal p0 = LabelMarginal::uniform(3);
  RngStream rng(17, stream::kDirichlet);
  VectorXd g(3);
  for (Index y = 0; y < 3; ++y) g(y) = std::gamma_distribution<double>(10.0 / 3.0, 1.0)(rng);
  g /= g.sum();
  LabelMarginal p = dirichlet_marginal(p0, ShiftSpec{10.0, 17});
  CHECK((p.probs() - g).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(dirichlet_marginal(p0, ShiftSpec{10.0, 17}) == p);
}

TEST_CASE("dirichlet mean and severity") {
  LabelMarginal p0(vec({0.2, 0.3, 0.5}));
  auto mean_l1 = [&](double alpha, VectorXd* mean) {
    double total = 0.0;
    VectorXd acc = VectorXd::Zero(3);
    const int n = 2000;
    for (int s = 0; s < n; ++s) {
      LabelMarginal p = dirichlet_marginal(p0, ShiftSpec{alpha, static_cast<std::uint64_t>(s)});
      acc += p.probs();
      total += l1_distance(p, p0);
    }
    if (mean) *mean = acc / n;
    return total / n;
  };
  VectorXd mean;
  double l1_small_shift = mean_l1(100.0, nullptr);
  double l1_mid = mean_l1(1.0, &mean);
  double l1_severe = mean_l1(0.1, nullptr);
  CHECK((mean - p0.probs()).cwiseAbs().maxCoeff() < 0.02);
  CHECK(l1_small_shift < l1_mid);
  CHECK(l1_mid < l1_severe);

  // Shapes far below one must not underflow to an all-zero draw.
  LabelMarginal tiny = dirichlet_marginal(p0, ShiftSpec{1e-3, 5});
  CHECK(tiny.probs().sum() == doctest::Approx(1.0));
}

TEST_CASE("largest remainder") {
  auto c = largest_remainder(LabelMarginal(vec({0.5, 0.25, 0.25})), 10);
  CHECK(std::accumulate(c.begin(), c.end(), std::size_t{0}) == 10);
  CHECK(c == std::vector<std::size_t>{5, 3, 2});
}

TEST_CASE("realize marginal") {
  Labels pool;
  for (int i = 0; i < 100; ++i) pool.push_back(0);
  for (int i = 0; i < 100; ++i) pool.push_back(1);
  IndexList idx = realize_marginal(pool, LabelMarginal(vec({0.8, 0.2})), 3);
  CHECK(idx.size() == 125);
  CHECK(std::is_sorted(idx.begin(), idx.end()));
  CHECK(std::set<std::size_t>(idx.begin(), idx.end()).size() == idx.size());
  std::size_t zeros = std::count_if(idx.begin(), idx.end(), [&](std::size_t i) { return pool[i] == 0; });
  CHECK(zeros == 100);

  Labels one_class(50, 0);
  CHECK_THROWS_AS(realize_marginal(one_class, LabelMarginal(vec({0.5, 0.5})), 3), Error);
  CHECK(realize_marginal(one_class, LabelMarginal(vec({1.0, 0.0})), 3).size() == 50);
}

TEST_CASE("split holdout") {
  auto [train, val] = split_holdout(10, 0.2, 1);
  CHECK(train.size() == 8);
  CHECK(val.size() == 2);
  std::set<std::size_t> all(train.begin(), train.end());
  all.insert(val.begin(), val.end());
  CHECK(all.size() == 10);
  auto [t1, v1] = split_holdout(5, 0.01, 1);
  CHECK(v1.size() == 1);
  CHECK(t1.size() == 4);
  CHECK_THROWS_AS(split_holdout(1, 0.2, 1), Error);
  CHECK(split_holdout(10, 0.2, 1) == split_holdout(10, 0.2, 1));
}

TEST_CASE("gaussian task geometry") {
  for (double eps : {0.0, 1.0}) {
    SynthTaskSpec spec = small_spec(eps);
    GaussianTask task = GaussianTask::build(spec);
    for (Index i = 0; i < spec.k; ++i) {
      CHECK((task.target_means().row(i) - task.source_means().row(i)).norm() ==
            doctest::Approx(eps).epsilon(1e-12));
      for (Index j = i + 1; j < spec.k; ++j) {
        CHECK((task.source_means().row(i) - task.source_means().row(j)).norm() ==
              doctest::Approx(spec.class_separation));
      }
    }
    if (eps == 0.0) CHECK(task.target_means() == task.source_means());
  }
  SynthTaskSpec bad = small_spec();
  bad.d = 1;
  CHECK_THROWS_AS(GaussianTask::build(bad), Error);
}

TEST_CASE("no conditional shift draws identical features") {
  SynthTaskSpec spec = small_spec(0.0);
  GaussianTask task = GaussianTask::build(spec);
  Labels y{0, 1, 2, 1};
  RngStream a(1, stream::kPoolFeatures), b(1, stream::kPoolFeatures);
  CHECK(task.sample(y, false, a) == task.sample(y, true, b));
}

TEST_CASE("bundle invariants") {
  for (std::optional<double> alpha : {std::optional<double>{}, std::optional<double>{0.5}}) {
    TaskBundle b = synth_relaxed_task(small_spec(1.0), ShiftSpec{alpha, 4});
    Labels all = b.target_train.labels;
    all.insert(all.end(), b.target_test.labels.begin(), b.target_test.labels.end());
    CHECK(LabelMarginal::from_labels(all, 3) == b.true_target_marginal);
    CHECK(b.source_train.size() + b.source_val.size() == 600);
    CHECK(b.source_val.size() == 120);
    CHECK(b.target_test.size() >= 1);
    CHECK(b.alpha == alpha);
    CHECK(b.epsilon == 1.0);
  }
  TaskBundle again = synth_relaxed_task(small_spec(1.0), ShiftSpec{0.5, 4});
  TaskBundle first = synth_relaxed_task(small_spec(1.0), ShiftSpec{0.5, 4});
  CHECK(again.target_test.features == first.target_test.features);
}
