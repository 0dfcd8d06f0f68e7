#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cmow/encoder.hpp"
#include "cmow/heads.hpp"
#include "cmow/linalg.hpp"
#include "cmow/losses.hpp"
#include "cmow/model.hpp"
#include "cmow/tokenizer.hpp"

namespace cmow {

// ---------------------------------------------------------------------------
// Masking
//
// Masks are a pure function of (seed, corpus line index, token ids) so that an
// external exporter can reproduce the exact masked sites:
//
//   state      = seed XOR (line_index * 0x9E3779B97F4A7C15), fed to SplitMix64
//   candidates = positions holding non-special ids, ascending
//   k          = min(|candidates|, ceil(fraction * |candidates| - 1e-9)), >= 1
//   for i in [0, k): j = i + next() % (|candidates| - i); swap(cand[i], cand[j])
//   selected   = sorted(cand[0..k))
//   per selected position, ascending: r = next() % 10
//     r < 8  -> [MASK]
//     r == 8 -> non_special_ids[next() % |non_special_ids|]
//     r == 9 -> unchanged
// ---------------------------------------------------------------------------

class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t state) : state_(state) {}
  std::uint64_t next();

 private:
  std::uint64_t state_;
};

inline constexpr double kDefaultMaskFraction = 0.15;

struct MaskedSequence {
  std::vector<TokenId> ids;             // corrupted input
  std::vector<std::size_t> positions;   // prediction sites, ascending
  std::vector<TokenId> targets;         // original ids at those sites
};

MaskedSequence mask_sequence(std::span<const TokenId> ids, const Vocabulary& vocab,
                             double fraction, std::uint64_t seed, std::uint64_t line_index);

// Sequences holding only special tokens come back with no targets and a
// logged warning.
std::vector<MaskedSequence> mask_batch(std::span<const std::vector<TokenId>> sequences,
                                       std::span<const std::uint64_t> line_indices,
                                       double fraction, const Vocabulary& vocab,
                                       std::uint64_t seed);

// ---------------------------------------------------------------------------
// Gradients through the encoder
// ---------------------------------------------------------------------------

// Gradient of L with respect to every factor of P = X_1 ... X_n given
// G = dL/dP: dL/dX_i = (X_1..X_{i-1})^T G (X_{i+1}..X_n)^T.
template <typename T>
std::vector<SquareMatrix<T>> chain_grad(std::span<const SquareMatrix<T>> ms,
                                        const SquareMatrix<T>& upstream);

// Accumulates embedding gradients for a pooled encoding given d L / d pooled.
template <typename T>
void backprop_pooled(std::span<const TokenId> ids, const EmbeddingTable<T>& table,
                     std::span<const T> grad_pooled, EmbeddingTable<T>& grad);

// Accumulates embedding gradients for a per-token encoding given
// d L / d rows (n x per_token_dim). O(n) matrix products.
template <typename T>
void backprop_per_token(std::span<const TokenId> ids, const EmbeddingTable<T>& table,
                        std::span<const T> grad_rows, EmbeddingTable<T>& grad);

// ---------------------------------------------------------------------------
// Objectives
// ---------------------------------------------------------------------------

struct LossSettings {
  double alpha = 0.5;
  double temperature = 1.0;
};

struct MlmExample {
  std::vector<TokenId> ids;
  std::vector<std::size_t> positions;
  std::vector<TokenId> targets;
  // Parallel to positions; may be null when alpha == 1.
  std::vector<const TeacherDistribution*> teachers;
};

// Sum over prediction sites of alpha*hard + (1-alpha)*soft. When `grad` is
// set, gradients of `scale` * that sum are accumulated into it.
template <typename T>
double mlm_objective(const Model<T>& model, const MlmExample& example, const LossSettings& loss,
                     const DropoutPolicy& dropout, Rng& rng, GradientBundle<T>* grad,
                     double scale = 1.0);

enum class PairEncoding { joint, diffcat };

struct ClassificationExample {
  // One sequence (single sentence or joint pair) or two (diffcat).
  std::vector<std::vector<TokenId>> sequences;
  std::size_t label = 0;
  const TeacherDistribution* teacher = nullptr;
};

// Pooled features: the single pooled encoding, or diffcat of two.
template <typename T>
std::vector<T> classification_features(const EmbeddingTable<T>& table,
                                       const ClassificationExample& example);

template <typename T>
std::vector<T> classification_logits(const Model<T>& model, const ClassificationExample& example,
                                     const DropoutPolicy& dropout, Rng& rng);

template <typename T>
double classification_objective(const Model<T>& model, const ClassificationExample& example,
                                const LossSettings& loss, const DropoutPolicy& dropout, Rng& rng,
                                GradientBundle<T>* grad, double scale = 1.0);

// ---------------------------------------------------------------------------
// Optimization
// ---------------------------------------------------------------------------

struct OptimizerConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double grad_clip = 1.0;         // global norm; <= 0 disables clipping
  std::size_t warmup_steps = 0;
  std::size_t total_steps = 0;    // 0 disables the linear decay
};

// base * step/warmup during warmup, then linear decay to zero at total_steps.
double learning_rate_at(const OptimizerConfig& config, std::size_t step);

// Scales grads in place so their global L2 norm is at most max_norm; returns
// the norm before clipping.
template <typename T>
double clip_global_norm(std::span<const std::span<T>> grads, double max_norm);

template <typename T>
class AdamOptimizer {
 public:
  AdamOptimizer() = default;
  explicit AdamOptimizer(std::span<const std::span<T>> params);

  // One update with 1-based step. Clips grads in place first. Throws
  // NumericalError on a non-finite gradient norm.
  void step(std::span<const std::span<T>> params, std::span<const std::span<T>> grads,
            const OptimizerConfig& config, std::size_t step);

  double last_grad_norm() const { return last_grad_norm_; }

 private:
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
  double last_grad_norm_ = 0.0;
};

// ---------------------------------------------------------------------------
// Early stopping and the epoch loop
// ---------------------------------------------------------------------------

inline constexpr std::size_t kDefaultMaxEpochs = 20;
inline constexpr std::size_t kDefaultPatience = 5;

// Higher metric is better; only strict improvements reset patience.
class EarlyStopping {
 public:
  EarlyStopping(std::size_t max_epochs, std::size_t patience);

  // Records the metric of the next epoch; true when it is a new best.
  bool observe(double metric);
  bool should_stop() const;

  std::size_t epochs_seen() const { return epochs_seen_; }
  std::size_t best_epoch() const { return best_epoch_; }  // 1-based, 0 before any epoch
  double best_metric() const { return best_metric_; }

 private:
  std::size_t max_epochs_;
  std::size_t patience_;
  std::size_t epochs_seen_ = 0;
  std::size_t best_epoch_ = 0;
  std::size_t since_best_ = 0;
  double best_metric_ = 0.0;
};

struct TraceRecord {
  std::size_t epoch = 0;
  std::string split;
  std::string metric;
  double value = 0.0;
  double loss = 0.0;

  std::string to_json() const;
};

struct EvalResult {
  double selection = 0.0;  // the value early stopping compares
  double loss = 0.0;
  std::string metric_name;
};

struct EpochHooks {
  std::function<double(std::size_t epoch)> train_epoch;  // returns mean train loss
  std::function<EvalResult(std::size_t epoch)> evaluate;
  std::function<void()> snapshot_best;
  std::function<void()> restore_best;
  std::function<void(const TraceRecord&)> on_trace;
};

struct TrainOutcome {
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  double best_metric = 0.0;
  std::vector<TraceRecord> trace;
};

// Runs epochs until max_epochs or patience runs out, snapshotting on every new
// best and restoring the best snapshot at the end.
TrainOutcome train_loop(std::size_t max_epochs, std::size_t patience, const EpochHooks& hooks);

}  // namespace cmow
