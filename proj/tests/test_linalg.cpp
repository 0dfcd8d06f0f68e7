#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cmow/errors.hpp"
#include "cmow/linalg.hpp"
#include "support.hpp"

using namespace cmow;
using M = SquareMatrix<double>;

TEST_CASE("matmul small cases") {
  const M a(2, {1, 2, 3, 4});
  CHECK(matmul(M::identity(2), a) == a);
  CHECK(matmul(a, M(2, {0, 1, 1, 0})) == M(2, {2, 1, 4, 3}));
}

TEST_CASE("matmul agrees with triple loop") {
  std::mt19937_64 rng(1);
  for (std::size_t d : {3, 5, 20}) {
    const auto a = testing::random_matrix<double>(d, rng);
    const auto b = testing::random_matrix<double>(d, rng);
    CHECK(relative_frobenius_error(matmul(a, b), testing::naive_matmul(a, b)) < 1e-14);
    const auto at = transpose(a);
    const auto bt = transpose(b);
    M out(d);
    matmul_at_b_into(a.entries().data(), b.entries().data(), out.entries().data(), d);
    CHECK(relative_frobenius_error(out, testing::naive_matmul(at, b)) < 1e-14);
    matmul_a_bt_into(a.entries().data(), b.entries().data(), out.entries().data(), d);
    CHECK(relative_frobenius_error(out, testing::naive_matmul(a, bt)) < 1e-14);
  }
}

TEST_CASE("flatten and unflatten") {
  CHECK(flatten(M(2, {1, 2, 3, 4})) == std::vector<double>{1, 2, 3, 4});
  CHECK(flatten(M::identity(3)) == std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1});
  std::mt19937_64 rng(2);
  const auto m = testing::random_matrix<double>(4, rng);
  const auto flat = flatten(m);
  CHECK(unflatten<double>(flat) == m);
  CHECK(flatten(unflatten<double>(flat)) == flat);
  const std::vector<double> five(5, 1.0);
  CHECK_THROWS_AS(unflatten<double>(five), StructuralError);
}

TEST_CASE("concat") {
  std::vector<std::vector<double>> parts{{1, 2}, {3}};
  CHECK(concat<double>(parts) == std::vector<double>{1, 2, 3});
  std::vector<std::vector<double>> with_empty{{7.5}, {}};
  CHECK(concat<double>(with_empty) == std::vector<double>{7.5});

  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  std::vector<std::vector<double>> three{std::vector<double>(3), std::vector<double>(5), std::vector<double>(2)};
  for (auto& p : three)
    for (auto& v : p) v = n(rng);
  const auto joined = concat<double>(three);
  REQUIRE(joined.size() == 10);
  std::size_t offset = 0;
  for (const auto& p : three) {
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(joined[offset + i] == p[i]);
    offset += p.size();
  }
}

TEST_CASE("chain product") {
  std::mt19937_64 rng(4);
  std::vector<M> none;
  CHECK(chain_product<double>(none, Direction::left_to_right, 3) == M::identity(3));
  const auto a = testing::random_matrix<double>(3, rng);
  const auto b = testing::random_matrix<double>(3, rng);
  const auto c = testing::random_matrix<double>(3, rng);
  std::vector<M> one{a};
  CHECK(chain_product<double>(one, Direction::left_to_right) == a);
  std::vector<M> abc{a, b, c};
  const auto fold = testing::naive_matmul(testing::naive_matmul(a, b), c);
  CHECK(relative_frobenius_error(chain_product<double>(abc, Direction::left_to_right), fold) < 1e-14);
  const auto reverse = testing::naive_matmul(testing::naive_matmul(c, b), a);
  CHECK(relative_frobenius_error(chain_product<double>(abc, Direction::right_to_left), reverse) < 1e-14);
}

TEST_CASE("tree product matches the left fold") {
  std::mt19937_64 rng(5);
  for (std::size_t n : {1, 2, 3, 7, 16, 33}) {
    std::vector<SquareMatrix<float>> ms;
    for (std::size_t i = 0; i < n; ++i) ms.push_back(testing::near_identity<float>(6, rng));
    const auto fold = chain_product<float>(ms, Direction::left_to_right);
    CHECK(relative_frobenius_error(tree_product<float>(ms), fold) < 1e-6);
  }
}

TEST_CASE("prefix scan") {
  std::vector<M> ids(5, M::identity(4));
  for (const auto& m : prefix_scan<double>(ids)) CHECK(m == M::identity(4));

  std::mt19937_64 rng(6);
  const auto a = testing::random_matrix<double>(3, rng);
  const auto b = testing::random_matrix<double>(3, rng);
  std::vector<M> ab{a, b};
  for (auto schedule : {ScanSchedule::sequential, ScanSchedule::balanced}) {
    const auto s = prefix_scan<double>(ab, schedule);
    REQUIRE(s.size() == 2);
    CHECK(s[0] == a);
    CHECK(relative_frobenius_error(s[1], testing::naive_matmul(a, b)) < 1e-14);
  }

  std::vector<SquareMatrix<float>> ms;
  std::vector<M> wide;
  for (int i = 0; i < 64; ++i) {
    wide.push_back(testing::near_identity<double>(4, rng));
    SquareMatrix<float> f(4);
    for (std::size_t k = 0; k < 16; ++k) f.entries()[k] = static_cast<float>(wide.back().entries()[k]);
    ms.push_back(f);
  }
  for (auto schedule : {ScanSchedule::sequential, ScanSchedule::balanced}) {
    const auto s = prefix_scan<float>(ms, schedule);
    for (std::size_t i = 0; i < ms.size(); ++i) {
      const auto oracle = testing::naive_chain(ms, 0, i + 1, 4);
      CHECK(relative_frobenius_error(s[i], oracle) < 1e-6);
    }
  }
}

TEST_CASE("suffix scan") {
  std::mt19937_64 rng(7);
  const auto a = testing::random_matrix<double>(3, rng);
  const auto b = testing::random_matrix<double>(3, rng);
  std::vector<M> one{a};
  CHECK(suffix_scan<double>(one)[0] == a);
  std::vector<M> ab{a, b};
  for (auto schedule : {ScanSchedule::sequential, ScanSchedule::balanced}) {
    const auto s = suffix_scan<double>(ab, schedule);
    REQUIRE(s.size() == 2);
    CHECK(relative_frobenius_error(s[0], testing::naive_matmul(b, a)) < 1e-14);
    CHECK(s[1] == b);
  }

  std::vector<SquareMatrix<float>> ms;
  for (int i = 0; i < 64; ++i) ms.push_back(testing::near_identity<float>(4, rng));
  for (auto schedule : {ScanSchedule::sequential, ScanSchedule::balanced}) {
    const auto s = suffix_scan<float>(ms, schedule);
    for (std::size_t i = 0; i < ms.size(); ++i) {
      auto oracle = SquareMatrix<float>::identity(4);
      for (std::size_t j = ms.size(); j-- > i;) oracle = testing::naive_matmul(oracle, ms[j]);
      CHECK(relative_frobenius_error(s[i], oracle) < 1e-6);
    }
  }
}

TEST_CASE("norms and finiteness") {
  CHECK(frobenius_norm(M(2, {3, 0, 0, 4})) == doctest::Approx(5.0));
  CHECK(relative_frobenius_error(M(2, {1, 0, 0, 1}), M(2, {1, 0, 0, 1})) == 0.0);
  std::vector<float> ok{1.0f, -2.0f};
  std::vector<float> bad{1.0f, std::nanf("")};
  CHECK(all_finite<float>(ok));
  CHECK_FALSE(all_finite<float>(bad));
}
