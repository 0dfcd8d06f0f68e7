#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cmow/data.hpp"
#include "cmow/errors.hpp"
#include "support.hpp"

using namespace cmow;

namespace {

using Ids = std::vector<std::size_t>;

long double brute_pearson(const std::vector<double>& a, const std::vector<double>& b) {
  long double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= a.size();
  mb /= b.size();
  long double c = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    c += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  return c / std::sqrt(va * vb);
}

// Rank by counting, ties share the mean rank.
std::vector<double> brute_ranks(const std::vector<double>& x) {
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double less = 0, equal = 0;
    for (double y : x) {
      less += y < x[i];
      equal += y == x[i];
    }
    r[i] = less + (equal + 1) / 2;
  }
  return r;
}

}  // namespace

TEST_CASE("binning") {
  const BinnedRegression stsb{0.0, 5.0, 0.2};
  CHECK(stsb.bin_count() == 25);
  CHECK(bin_score(0.0, stsb) == 0);
  CHECK(bin_score(5.0, stsb) == 24);
  CHECK(bin_score(0.2, stsb) == 1);
  CHECK(debin(0, stsb) == doctest::Approx(0.1));
  CHECK_THROWS_AS(bin_score(5.01, stsb), DataError);
  CHECK_THROWS_AS(bin_score(-0.1, stsb), DataError);
  CHECK_THROWS_AS(debin(25, stsb), StructuralError);
  CHECK_THROWS_AS((BinnedRegression{0.0, 1.0, 0.3}.bin_count()), ConfigError);

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const double x = u(rng);
    worst = std::max(worst, std::abs(debin(bin_score(x, stsb), stsb) - x));
  }
  CHECK(worst <= 0.1 + 1e-12);
}

TEST_CASE("class metrics") {
  const Ids gold{1, 0, 1, 1, 0, 0};
  CHECK(metric_accuracy(gold, gold) == 1.0);
  CHECK(metric_f1(gold, gold) == 1.0);
  CHECK(metric_matthews(gold, gold) == doctest::Approx(1.0));

  // TP=1, TN=2, FP=1, FN=0.
  const Ids preds{1, 0, 0, 1}, golds{1, 0, 0, 0};
  CHECK(metric_matthews(preds, golds) == doctest::Approx(2.0 / std::sqrt(12.0)).epsilon(1e-12));
  CHECK(metric_accuracy(preds, golds) == 0.75);
  CHECK(metric_f1(preds, golds) == doctest::Approx(2.0 / 3.0));

  const Ids ones(4, 1);
  CHECK(metric_matthews(ones, golds) == 0.0);
  CHECK_THROWS_AS(metric_accuracy(Ids{1}, Ids{1, 0}), StructuralError);
  CHECK_THROWS_AS(metric_accuracy(Ids{}, Ids{}), StructuralError);

  // Three classes, checked against the covariance form of Gorodkin's R_K.
  const Ids p3{0, 1, 2, 2, 1, 0, 2}, g3{0, 1, 1, 2, 2, 0, 2};
  auto cov = [](const Ids& x, const Ids& y) {
    double s = 0;
    const double n = x.size();
    for (std::size_t k = 0; k < 3; ++k) {
      double mx = 0, my = 0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i] == k;
        my += y[i] == k;
      }
      mx /= n;
      my /= n;
      for (std::size_t i = 0; i < x.size(); ++i) s += ((x[i] == k) - mx) * ((y[i] == k) - my);
    }
    return s;
  };
  CHECK(metric_matthews(p3, g3) == doctest::Approx(cov(p3, g3) / std::sqrt(cov(p3, p3) * cov(g3, g3))).epsilon(1e-12));
}

TEST_CASE("correlations") {
  const std::vector<double> g{0.5, 1.5, 2.0, 4.0, 3.5};
  CHECK(metric_pearson(g, g) == doctest::Approx(1.0));
  CHECK(metric_spearman(g, g) == doctest::Approx(1.0));
  std::vector<double> neg(g);
  for (auto& v : neg) v = -v;
  CHECK(metric_pearson(neg, g) == doctest::Approx(-1.0));
  CHECK_THROWS_AS(metric_pearson(std::vector<double>(5, 1.0), g), DataError);

  std::mt19937_64 rng(2);
  std::normal_distribution<double> n;
  std::vector<double> a(100), b(100);
  for (std::size_t i = 0; i < 100; ++i) {
    a[i] = std::round(n(rng) * 4) / 4;  // ties
    b[i] = a[i] + n(rng);
  }
  CHECK(std::abs(metric_pearson(a, b) - static_cast<double>(brute_pearson(a, b))) < 1e-10);
  CHECK(average_ranks(a) == brute_ranks(a));
  CHECK(std::abs(metric_spearman(a, b) - static_cast<double>(brute_pearson(brute_ranks(a), brute_ranks(b)))) < 1e-10);
}

TEST_CASE("task files") {
  const auto dir = testing::scratch_dir("tsv");
  TaskSpec pair;
  pair.arity = TaskArity::pair;
  pair.metrics = {Metric::accuracy, Metric::f1};
  testing::write_text(dir / "pair.tsv", "label\tsentence\tsentence2\n1\ta b\tc d\n0\te\tf\n1\tg\th i\n");
  const auto rows = read_task_tsv(dir / "pair.tsv", pair);
  REQUIRE(rows.size() == 3);
  for (const auto& r : rows) CHECK(r.b.has_value());
  CHECK(rows[2].a == "g");
  CHECK(*rows[2].b == "h i");
  CHECK(rows[1].label == 0);
  CHECK(rows[2].id == 2);

  testing::write_text(dir / "missing.tsv", "label\tsentence\tsentence2\n1\ta\tb\n\tc\td\n");
  CHECK_THROWS_WITH_AS(read_task_tsv(dir / "missing.tsv", pair), doctest::Contains("missing.tsv:3"), DataError);
  const auto lenient = read_task_tsv(dir / "missing.tsv", pair, false);
  CHECK(lenient.size() == 1);

  TaskSpec stsb;
  stsb.arity = TaskArity::pair;
  stsb.binned = BinnedRegression{};
  stsb.metrics = {Metric::pearson, Metric::spearman};
  stsb.column_label = "score";
  testing::write_text(dir / "stsb.tsv", "sentence\tsentence2\tscore\na\tb\t0.0\nc\td\t5.0\ne\tf\t2.3\n");
  const auto scored = read_task_tsv(dir / "stsb.tsv", stsb);
  REQUIRE(scored.size() == 3);
  CHECK(scored[0].label == 0);
  CHECK(scored[1].label == 24);
  CHECK(scored[2].label == bin_score(2.3, *stsb.binned));
  CHECK(*scored[2].score == 2.3);
  CHECK(stsb.class_count() == 25);

  TaskSpec named;
  named.label_names = {"neg", "pos"};
  testing::write_text(dir / "named.tsv", "sentence\tlabel\nfine\tpos\nbad\tneg\n");
  const auto by_name = read_task_tsv(dir / "named.tsv", named);
  CHECK(by_name[0].label == 1);

  testing::write_text(dir / "nocol.tsv", "text\tlabel\nx\t1\n");
  CHECK_THROWS_AS(read_task_tsv(dir / "nocol.tsv", named), ConfigError);
}

TEST_CASE("evaluate task") {
  TaskSpec spec;
  spec.metrics = {Metric::accuracy, Metric::f1};
  std::vector<ExampleRow> rows(4);
  const Ids labels{1, 0, 0, 0};
  for (std::size_t i = 0; i < 4; ++i) rows[i].label = labels[i];
  const auto report = evaluate_task(spec, Ids{1, 0, 0, 1}, rows);
  REQUIRE(report.values.size() == 2);
  CHECK(report.selection == doctest::Approx((0.75 + 2.0 / 3.0) / 2));

  TaskSpec stsb;
  stsb.binned = BinnedRegression{};
  stsb.metrics = {Metric::pearson, Metric::spearman};
  std::vector<ExampleRow> scored(3);
  const double s[] = {0.0, 2.5, 5.0};
  for (int i = 0; i < 3; ++i) {
    scored[i].score = s[i];
    scored[i].label = bin_score(s[i], *stsb.binned);
  }
  const auto corr = evaluate_task(stsb, Ids{0, 12, 24}, scored);
  CHECK(corr.selection == doctest::Approx(1.0));
}

TEST_CASE("corpus reader") {
  const auto dir = testing::scratch_dir("corpus");
  testing::write_text(dir / "c.txt", "one\r\ntwo\n\nfour\n");
  CHECK(read_corpus(dir / "c.txt") == std::vector<std::string>{"one", "two", "", "four"});
  CHECK_THROWS_AS(read_corpus(dir / "none.txt"), ConfigError);
}
