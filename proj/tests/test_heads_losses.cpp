#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cmow/errors.hpp"
#include "cmow/heads.hpp"
#include "cmow/losses.hpp"
#include "support.hpp"

using namespace cmow;

namespace {

// log-sum-exp with long double accumulation.
long double lse(const std::vector<double>& z) {
  long double m = *std::max_element(z.begin(), z.end());
  long double s = 0;
  for (double v : z) s += std::exp(static_cast<long double>(v) - m);
  return m + std::log(s);
}

std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

TeacherDistribution random_teacher(std::size_t classes, std::mt19937_64& rng) {
  TeacherDistribution t;
  std::uniform_real_distribution<double> u(0.1, 1.0);
  double total = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    t.support.push_back(static_cast<std::uint32_t>(c));
    t.probs.push_back(u(rng));
    total += t.probs.back();
  }
  for (auto& p : t.probs) p /= total;
  return t;
}

}  // namespace

TEST_CASE("dropout mask") {
  Rng rng(1);
  const auto off = dropout_mask<double>(100, 0.5, false, rng);
  for (double v : off) CHECK(v == 1.0);
  Rng a(3), b(3);
  (void)dropout_mask<double>(10, 0.0, true, a);
  CHECK(a() == b());

  Rng r(2);
  const auto mask = dropout_mask<double>(20000, 0.25, true, r);
  double kept = 0, mean = 0;
  std::size_t odd = 0;
  for (double v : mask) {
    odd += !(v == 0.0 || std::abs(v - 1.0 / 0.75) < 1e-12);
    kept += v != 0.0;
    mean += v;
  }
  CHECK(odd == 0);
  CHECK(std::abs(kept / 20000 - 0.75) < 0.02);
  CHECK(std::abs(mean / 20000 - 1.0) < 0.03);

  DropoutPolicy bad{1.0, 0.0, true};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("mlm head") {
  Rng rng(4);
  MlmHead<double> head{3, 4, std::vector<double>(12, 0.0), {0.5, -1.0, 2.0, 0.0}};
  const std::vector<double> rows{1, 2, 3, 4, 5, 6};
  const DropoutPolicy eval{};
  const auto logits = mlm_logits<double>(rows, 2, head, eval, rng);
  REQUIRE(logits.size() == 8);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t v = 0; v < 4; ++v) CHECK(logits[r * 4 + v] == head.bias[v]);

  auto random_head = init_mlm_head<double>(3, 4, rng);
  Rng r1(9), r2(10);
  const DropoutPolicy inference{0.5, 0.5, false};
  CHECK(mlm_logits<double>(rows, 2, random_head, inference, r1) == mlm_logits<double>(rows, 2, random_head, inference, r2));

  for (auto& b : random_head.bias) b = std::normal_distribution<double>()(rng);
  const auto out = mlm_logits<double>(rows, 2, random_head, eval, rng);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t v = 0; v < 4; ++v) {
      double acc = random_head.bias[v];
      for (std::size_t k = 0; k < 3; ++k) acc += random_head.weight[v * 3 + k] * rows[r * 3 + k];
      CHECK(out[r * 4 + v] == doctest::Approx(acc).epsilon(1e-14));
    }
}

TEST_CASE("classifier head") {
  Rng rng(5);
  CHECK(classifier_parameter_count(ClassifierVariant::linear, 1200, 2, 0) == 2402);
  CHECK(classifier_parameter_count(ClassifierVariant::mlp, 10, 3, 0) == 10 * 10 + 10 + 10 * 3 + 3);
  const auto mlp = init_classifier_head<double>(ClassifierVariant::mlp, 10, 3, 0, rng);
  CHECK(mlp.hidden == 10);
  CHECK(mlp.parameter_count() == classifier_parameter_count(ClassifierVariant::mlp, 10, 3, 0));
  const auto lin = init_classifier_head<double>(ClassifierVariant::linear, 1200, 2, 0, rng);
  CHECK(lin.parameter_count() == 2402);
  CHECK(parse_classifier_variant("mlp") == ClassifierVariant::mlp);
  CHECK(parse_classifier_variant("linear") == ClassifierVariant::linear);
  CHECK_THROWS_AS(parse_classifier_variant("svm"), ConfigError);

  const DropoutPolicy eval{};
  ClassifierHead<double> head;
  head.variant = ClassifierVariant::mlp;
  head.in_dim = 3;
  head.hidden = 3;
  head.classes = 2;
  head.w1 = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  head.b1 = {0, 0, 0};
  head.w2 = std::vector<double>(6, 0.0);
  head.b2 = {0, 0};
  const std::vector<double> x{0.3, -0.2, 0.9};
  CHECK(classify<double>(x, head, eval, rng) == std::vector<double>{0, 0});

  head.w2 = {1, 1, 1, 2, 2, 2};
  head.b2 = {0.5, -0.5};
  const std::vector<double> neg{-1, -2, -3};
  CHECK(classify<double>(neg, head, eval, rng) == std::vector<double>{0.5, -0.5});
  const auto trace = classify_traced<double>(neg, head, eval, rng);
  for (double h : trace.hidden) CHECK(h == 0.0);
}

TEST_CASE("hard loss") {
  std::vector<double> peaked{0, 30, 0, 0};
  CHECK(hard_loss<double>(peaked, 1).loss < 1e-9);
  for (std::size_t k : {2, 5, 30522}) {
    std::vector<double> uniform(k, 0.7);
    CHECK(hard_loss<double>(uniform, 0).loss == doctest::Approx(std::log(double(k))).epsilon(1e-12));
  }
  std::mt19937_64 rng(6);
  const auto z = random_vector(4, rng, 3.0);
  const auto got = hard_loss<double>(z, 2);
  CHECK(std::abs(got.loss - static_cast<double>(lse(z) - z[2])) < 1e-12);
  double sum = 0;
  for (double g : got.grad) sum += g;
  CHECK(std::abs(sum) < 1e-12);
}

TEST_CASE("soft loss") {
  std::mt19937_64 rng(7);
  for (double temperature : {1.0, 2.0, 0.5}) {
    const auto s = random_vector(6, rng, 2.0);
    TeacherDistribution onehot{{3}, {1.0}};
    std::vector<double> scaled(s);
    for (auto& v : scaled) v /= temperature;
    CHECK(std::abs(soft_loss<double>(s, onehot, temperature).loss - hard_loss<double>(scaled, 3).loss) < 1e-10);

    // Teacher equal to the student distribution gives the teacher entropy.
    const auto lp = log_softmax<double>(s, temperature);
    TeacherDistribution matched;
    double entropy = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      matched.support.push_back(static_cast<std::uint32_t>(i));
      matched.probs.push_back(std::exp(lp[i]));
      entropy -= std::exp(lp[i]) * lp[i];
    }
    const auto at_match = soft_loss<double>(s, matched, temperature);
    CHECK(at_match.loss == doctest::Approx(entropy).epsilon(1e-12));
    for (double g : at_match.grad) CHECK(std::abs(g) < 1e-12);
  }

  const auto s = random_vector(5, rng, 2.0);
  const auto t = random_teacher(5, rng);
  long double oracle = 0;
  const long double norm = lse(s);
  for (std::size_t i = 0; i < 5; ++i) oracle -= t.probs[i] * (s[t.support[i]] - norm);
  CHECK(std::abs(soft_loss<double>(s, t, 1.0).loss - static_cast<double>(oracle)) < 1e-10);

  TeacherDistribution off{{0, 1}, {0.5, 0.4}};
  CHECK_THROWS_AS(soft_loss<double>(s, off, 1.0), StructuralError);
  TeacherDistribution oob{{9}, {1.0}};
  CHECK_THROWS_AS(soft_loss<double>(s, oob, 1.0), StructuralError);
}

TEST_CASE("combined loss") {
  CHECK(combined_loss(2.0, 4.0, 0.5) == 3.0);
  CHECK(combined_loss(2.0, 4.0, 1.0) == 2.0);
  CHECK(combined_loss(2.0, 4.0, 0.0) == 4.0);
  CHECK_THROWS_AS(combined_loss(1.0, 1.0, 1.5), ConfigError);
}
