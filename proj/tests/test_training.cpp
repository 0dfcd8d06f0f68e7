#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>
#include <set>

#include "cmow/errors.hpp"
#include "cmow/training.hpp"
#include "gradcheck.hpp"
#include "support.hpp"

using namespace cmow;

namespace {

const Vocabulary& vocab11() {
  static const Vocabulary v = testing::toy_vocab({"a", "b", "c", "d", "e", "f"});
  return v;
}

constexpr double kTolerance = 1e-4;

}  // namespace

// ---------------------------------------------------------------------------
// Masking

TEST_CASE("mask count and determinism") {
  const auto& v = vocab11();
  const std::vector<TokenId> ids{2, 5, 6, 7, 8, 3};
  const auto one = mask_sequence(ids, v, 0.15, 7, 0);
  CHECK(one.positions.size() == 1);
  CHECK(one.targets.size() == 1);
  CHECK(one.ids.size() == ids.size());

  const auto again = mask_sequence(ids, v, 0.15, 7, 0);
  CHECK(again.positions == one.positions);
  CHECK(again.ids == one.ids);

  const auto half = mask_sequence(ids, v, 0.5, 7, 0);
  CHECK(half.positions.size() == 2);
  CHECK(std::is_sorted(half.positions.begin(), half.positions.end()));
  for (std::size_t k = 0; k < half.positions.size(); ++k) {
    CHECK_FALSE(v.is_special(ids[half.positions[k]]));
    CHECK(half.targets[k] == ids[half.positions[k]]);
  }

  const std::vector<TokenId> specials_only{2, 3};
  CHECK(mask_sequence(specials_only, v, 0.15, 7, 0).positions.empty());

  const std::vector<std::vector<TokenId>> batch{ids, ids};
  const std::vector<std::uint64_t> lines{0, 1};
  const auto masked = mask_batch(batch, lines, 0.5, v, 7);
  CHECK(masked[0].ids == half.ids);
}

TEST_CASE("SplitMix64 reference values") {
  // Published first outputs for seed 1234567.
  SplitMix64 g(1234567);
  CHECK(g.next() == 6457827717110365317ULL);
  CHECK(g.next() == 3203168211198807973ULL);
  CHECK(g.next() == 9817491932198370423ULL);
}

TEST_CASE("replacement ratios") {
  const auto& v = vocab11();
  const std::vector<TokenId> ids{5, 6, 7, 8, 9, 10, 5, 6, 7, 8};
  std::size_t masked = 0, replaced = 0, kept = 0, total = 0;
  for (std::uint64_t line = 0; total < 10000; ++line) {
    const auto m = mask_sequence(ids, v, 0.3, 99, line);
    for (std::size_t k = 0; k < m.positions.size(); ++k, ++total) {
      const TokenId now = m.ids[m.positions[k]];
      if (now == v.specials().mask) {
        ++masked;
      } else if (now == m.targets[k]) {
        ++kept;  // includes random draws that hit the original id
      } else {
        ++replaced;
      }
    }
  }
  const double n = static_cast<double>(total);
  auto within = [&](double count, double p) { return std::abs(count - n * p) <= 3 * std::sqrt(n * p * (1 - p)); };
  // A random replacement equals the original with probability 1/6 here.
  const double p_keep = 0.1 + 0.1 / 6.0;
  CHECK(within(static_cast<double>(masked), 0.8));
  CHECK(within(static_cast<double>(kept), p_keep));
  CHECK(within(static_cast<double>(replaced), 0.1 - 0.1 / 6.0));
}

// ---------------------------------------------------------------------------
// Gradients

TEST_CASE("chain_grad closed forms") {
  std::mt19937_64 rng(1);
  const auto g = testing::random_matrix<double>(3, rng);
  const auto x1 = testing::random_matrix<double>(3, rng);
  const auto x2 = testing::random_matrix<double>(3, rng);
  std::vector<SquareMatrix<double>> one{x1};
  CHECK(chain_grad<double>(one, g)[0] == g);
  std::vector<SquareMatrix<double>> two{x1, x2};
  const auto grads = chain_grad<double>(two, g);
  CHECK(relative_frobenius_error(grads[0], testing::naive_matmul(g, transpose(x2))) < 1e-14);
  CHECK(relative_frobenius_error(grads[1], testing::naive_matmul(transpose(x1), g)) < 1e-14);
}

TEST_CASE("chain_grad matches finite differences") {
  std::mt19937_64 rng(2);
  std::vector<SquareMatrix<double>> ms;
  for (int i = 0; i < 5; ++i) ms.push_back(testing::near_identity<double>(3, rng, 0.4));
  const auto w = testing::random_matrix<double>(3, rng);
  // L = <W, P>, so dL/dP = W.
  auto loss = [&] {
    const auto p = chain_product<double>(ms, Direction::left_to_right);
    double s = 0;
    for (std::size_t i = 0; i < 9; ++i) s += w.entries()[i] * p.entries()[i];
    return s;
  };
  const auto grads = chain_grad<double>(ms, w);
  double worst = 0;
  for (std::size_t m = 0; m < ms.size(); ++m)
    for (std::size_t i = 0; i < 9; ++i) {
      const double saved = ms[m].entries()[i];
      ms[m].entries()[i] = saved + 1e-5;
      const double up = loss();
      ms[m].entries()[i] = saved - 1e-5;
      const double down = loss();
      ms[m].entries()[i] = saved;
      worst = std::max(worst, testing::relative_error(grads[m].entries()[i], (up - down) / 2e-5));
    }
  CHECK(worst < 1e-7);
}

TEST_CASE("MLM objective gradients") {
  std::mt19937_64 rng(3);
  const auto& v = vocab11();
  for (auto kind : {EmbeddingKind::hybrid_bidirectional, EmbeddingKind::hybrid_unidirectional,
                    EmbeddingKind::cmow_bidirectional, EmbeddingKind::cbow}) {
    for (double alpha : {1.0, 0.0, 0.5}) {
      CAPTURE(to_string(kind));
      CAPTURE(alpha);
      const std::size_t d = has_matrices(kind) ? 4 : 0;
      const std::size_t dv = has_vectors(kind) ? 3 : 0;
      auto model = testing::small_model(kind, d, dv, v.size(), 0, true, 0, ClassifierVariant::mlp, 11);
      const auto t1 = testing::random_teacher(v.size(), 4, rng);
      const auto t2 = testing::random_teacher(v.size(), 11, rng);
      MlmExample ex{{2, 5, 4, 9, 3}, {1, 2}, {5, 8}, {&t1, &t2}};
      const LossSettings loss{alpha, 2.0};
      const DropoutPolicy none{};
      Rng r(0);
      auto grad = zeros_like(model);
      mlm_objective<double>(model, ex, loss, none, r, &grad);
      const auto result = testing::finite_difference_check(
          model, [&](const Model<double>& m) { Rng rr(0); return mlm_objective<double>(m, ex, loss, none, rr, nullptr); },
          grad);
      INFO(result.worst_where);
      CHECK(result.worst_relative < kTolerance);
    }
  }
}

TEST_CASE("classification objective gradients") {
  std::mt19937_64 rng(4);
  for (auto variant : {ClassifierVariant::mlp, ClassifierVariant::linear}) {
    for (auto kind : {EmbeddingKind::hybrid_bidirectional, EmbeddingKind::cmow_unidirectional, EmbeddingKind::cbow}) {
      for (bool diffcat : {false, true}) {
        for (double alpha : {1.0, 0.0, 0.5}) {
          CAPTURE(to_string(kind));
          CAPTURE(diffcat);
          CAPTURE(alpha);
          const std::size_t d = has_matrices(kind) ? 4 : 0;
          const std::size_t dv = has_vectors(kind) ? 3 : 0;
          const std::size_t in = pooled_dim(kind, d, dv) * (diffcat ? 3 : 1);
          auto model = testing::small_model(kind, d, dv, 11, 3, false, in, variant, 12);
          const auto teacher = testing::random_teacher(3, 3, rng);
          ClassificationExample ex;
          ex.sequences = diffcat ? std::vector<std::vector<TokenId>>{{2, 5, 6, 3}, {2, 7, 5, 9, 3}}
                                 : std::vector<std::vector<TokenId>>{{2, 5, 6, 3, 7, 9, 3}};
          ex.label = 1;
          ex.teacher = &teacher;
          const LossSettings loss{alpha, 1.5};
          const DropoutPolicy none{};
          Rng r(0);
          auto grad = zeros_like(model);
          classification_objective<double>(model, ex, loss, none, r, &grad);
          const auto result = testing::finite_difference_check(
              model,
              [&](const Model<double>& m) { Rng rr(0); return classification_objective<double>(m, ex, loss, none, rr, nullptr); },
              grad);
          INFO(result.worst_where);
          CHECK(result.worst_relative < kTolerance);
        }
      }
    }
  }
}

TEST_CASE("gradients with dropout use the same masks") {
  auto model = testing::small_model(EmbeddingKind::hybrid_bidirectional, 3, 2, 11, 2, false, 20,
                                    ClassifierVariant::mlp, 13);
  ClassificationExample ex{{{2, 5, 6, 3}}, 0, nullptr};
  const LossSettings loss{1.0, 1.0};
  const DropoutPolicy drop{0.2, 0.3, true};
  Rng r(5);
  auto grad = zeros_like(model);
  classification_objective<double>(model, ex, loss, drop, r, &grad);
  const auto result = testing::finite_difference_check(
      model, [&](const Model<double>& m) { Rng rr(5); return classification_objective<double>(m, ex, loss, drop, rr, nullptr); },
      grad);
  INFO(result.worst_where);
  CHECK(result.worst_relative < kTolerance);
}

TEST_CASE("missing teacher") {
  auto model = testing::small_model(EmbeddingKind::hybrid_bidirectional, 2, 2, 11, 2, true, 10,
                                    ClassifierVariant::linear, 14);
  Rng r(0);
  const DropoutPolicy none{};
  MlmExample ex{{2, 5, 4, 3}, {2}, {6}, {nullptr}};
  CHECK_THROWS_AS(mlm_objective<double>(model, ex, LossSettings{0.5, 1.0}, none, r, nullptr), DataError);
  CHECK_NOTHROW(mlm_objective<double>(model, ex, LossSettings{1.0, 1.0}, none, r, nullptr));
  ClassificationExample task{{{2, 5, 3}}, 1, nullptr};
  CHECK_THROWS_AS(classification_objective<double>(model, task, LossSettings{0.5, 1.0}, none, r, nullptr), DataError);
  CHECK_NOTHROW(classification_objective<double>(model, task, LossSettings{1.0, 1.0}, none, r, nullptr));
}

TEST_CASE("diffcat on one sequence is the pooled encoding") {
  const auto t = init_embeddings<double>(EmbeddingKind::hybrid_bidirectional, 2, 3, 11, 0.2, 1);
  ClassificationExample ex{{{2, 5, 3}}, 0, nullptr};
  CHECK(classification_features(t, ex) == encode_pooled<double>(ex.sequences[0], t).values);
}

// ---------------------------------------------------------------------------
// Optimizer

TEST_CASE("learning rate schedule") {
  OptimizerConfig c;
  c.learning_rate = 1e-3;
  c.warmup_steps = 500;
  c.total_steps = 10500;
  for (std::size_t step : {1, 17, 250, 500}) CHECK(learning_rate_at(c, step) == doctest::Approx(1e-3 * step / 500.0));
  CHECK(learning_rate_at(c, 5500) == doctest::Approx(5e-4));
  CHECK(learning_rate_at(c, 10500) == 0.0);
  OptimizerConfig flat;
  flat.learning_rate = 0.1;
  CHECK(learning_rate_at(flat, 12345) == 0.1);
}

TEST_CASE("adam leaves parameters alone for zero gradients") {
  std::vector<double> p{1.0, -2.0, 3.0};
  std::vector<double> g(3, 0.0);
  std::vector<std::span<double>> params{p}, grads{g};
  AdamOptimizer<double> opt(params);
  OptimizerConfig c;
  for (std::size_t s = 1; s <= 5; ++s) opt.step(params, grads, c, s);
  CHECK(p == std::vector<double>{1.0, -2.0, 3.0});
}

TEST_CASE("adam matches a hand-stepped scalar") {
  std::vector<double> p{0.5};
  std::vector<double> g(1);
  std::vector<std::span<double>> params{p}, grads{g};
  AdamOptimizer<double> opt(params);
  OptimizerConfig c;
  c.learning_rate = 0.01;
  c.grad_clip = 0.0;
  double x = 0.5, m = 0, v = 0;
  for (int t = 1; t <= 10; ++t) {
    const double grad = 2 * x - 0.3;  // derivative of x^2 - 0.3x
    g[0] = 2 * p[0] - 0.3;
    opt.step(params, grads, c, t);
    m = 0.9 * m + 0.1 * grad;
    v = 0.999 * v + 0.001 * grad * grad;
    const double mh = m / (1 - std::pow(0.9, t));
    const double vh = v / (1 - std::pow(0.999, t));
    x -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    CHECK(p[0] == doctest::Approx(x).epsilon(1e-14));
  }
}

TEST_CASE("global norm clipping") {
  std::vector<double> a{3.0}, b{4.0};
  std::vector<std::span<double>> gs{a, b};
  CHECK(clip_global_norm<double>(gs, 1.0) == doctest::Approx(5.0));
  CHECK(a[0] == doctest::Approx(0.6));
  CHECK(b[0] == doctest::Approx(0.8));
  std::vector<double> nan{std::nan("")};
  std::vector<double> p{1.0};
  std::vector<std::span<double>> params{p}, grads{nan};
  AdamOptimizer<double> opt(params);
  CHECK_THROWS_AS(opt.step(params, grads, OptimizerConfig{}, 1), NumericalError);
}

// ---------------------------------------------------------------------------
// Early stopping

namespace {

// Runs the loop over a scripted metric sequence; the "model" is the epoch it
// was last trained in.
TrainOutcome run_script(const std::vector<double>& metrics, std::size_t& restored) {
  std::size_t current = 0, best = 0;
  EpochHooks hooks;
  hooks.train_epoch = [&](std::size_t epoch) {
    current = epoch;
    return 1.0 / static_cast<double>(epoch);
  };
  hooks.evaluate = [&](std::size_t epoch) { return EvalResult{metrics[epoch - 1], 0.0, "accuracy"}; };
  hooks.snapshot_best = [&] { best = current; };
  hooks.restore_best = [&] { current = best; };
  auto out = train_loop(kDefaultMaxEpochs, kDefaultPatience, hooks);
  restored = current;
  return out;
}

}  // namespace

TEST_CASE("early stopping policy") {
  std::size_t restored = 0;
  std::vector<double> rising(20);
  for (std::size_t i = 0; i < 20; ++i) rising[i] = 0.5 + 0.01 * static_cast<double>(i);
  auto out = run_script(rising, restored);
  CHECK(out.epochs_run == 20);
  CHECK(out.best_epoch == 20);
  CHECK(restored == 20);

  std::vector<double> flat{0.5, 0.6, 0.7};
  flat.resize(20, 0.7);
  out = run_script(flat, restored);
  CHECK(out.epochs_run == 8);
  CHECK(out.best_epoch == 3);
  CHECK(restored == 3);
  CHECK(out.trace.size() == 16);
  CHECK(out.trace[1].split == "dev");

  std::vector<double> bumpy{0.5, 0.4, 0.4, 0.4, 0.4, 0.6, 0.3, 0.3, 0.3, 0.3, 0.3, 0.9};
  bumpy.resize(20, 0.0);
  out = run_script(bumpy, restored);
  CHECK(out.epochs_run == 11);
  CHECK(out.best_epoch == 6);
  CHECK(restored == 6);

  CHECK_THROWS_AS(EarlyStopping(0, 0), ConfigError);
  EarlyStopping s(20, 5);
  CHECK(s.observe(-1.0));
  CHECK(s.best_epoch() == 1);
}

TEST_CASE("trace record json") {
  TraceRecord r{3, "dev", "accuracy", 0.75, 0.5};
  const auto j = nlohmann::json::parse(r.to_json());
  CHECK(j["epoch"] == 3);
  CHECK(j["split"] == "dev");
  CHECK(j["metric"] == "accuracy");
  CHECK(j["value"] == 0.75);
  CHECK(j["loss"] == 0.5);
}
