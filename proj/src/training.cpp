#include "cmow/training.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <string>

#include "cmow/errors.hpp"
#include "cmow/log.hpp"

namespace cmow {

// ---------------------------------------------------------------------------
// Masking

std::uint64_t SplitMix64::next() {
  std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

MaskedSequence mask_sequence(std::span<const TokenId> ids, const Vocabulary& vocab,
                             double fraction, std::uint64_t seed, std::uint64_t line_index) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("mask fraction must lie in (0, 1)");

  MaskedSequence out;
  out.ids.assign(ids.begin(), ids.end());
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!vocab.is_special(ids[i])) candidates.push_back(i);
  }
  if (candidates.empty()) return out;

  static thread_local std::vector<TokenId> non_special;
  static thread_local const Vocabulary* non_special_vocab = nullptr;
  if (non_special_vocab != &vocab || non_special.empty()) {
    non_special.clear();
    for (std::size_t id = 0; id < vocab.size(); ++id) {
      if (!vocab.is_special(static_cast<TokenId>(id))) non_special.push_back(static_cast<TokenId>(id));
    }
    non_special_vocab = &vocab;
  }

  SplitMix64 rng(seed ^ (line_index * 0x9E3779B97F4A7C15ULL));
  const std::size_t m = candidates.size();
  auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(m) - 1e-9));
  k = std::clamp<std::size_t>(k, 1, m);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.next() % (m - i));
    std::swap(candidates[i], candidates[j]);
  }
  out.positions.assign(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(out.positions.begin(), out.positions.end());

  for (std::size_t pos : out.positions) {
    out.targets.push_back(ids[pos]);
    const std::uint64_t r = rng.next() % 10;
    if (r < 8) {
      out.ids[pos] = vocab.specials().mask;
    } else if (r == 8) {
      out.ids[pos] = non_special[rng.next() % non_special.size()];
    }
  }
  return out;
}

std::vector<MaskedSequence> mask_batch(std::span<const std::vector<TokenId>> sequences,
                                       std::span<const std::uint64_t> line_indices,
                                       double fraction, const Vocabulary& vocab,
                                       std::uint64_t seed) {
  if (sequences.size() != line_indices.size()) {
    throw StructuralError("mask_batch: one line index per sequence required");
  }
  std::vector<MaskedSequence> out;
  out.reserve(sequences.size());
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    out.push_back(mask_sequence(sequences[i], vocab, fraction, seed, line_indices[i]));
    if (out.back().positions.empty()) {
      logger().warn("line {} holds only special tokens; skipped for masking", line_indices[i]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gradients through the encoder

template <typename T>
std::vector<SquareMatrix<T>> chain_grad(std::span<const SquareMatrix<T>> ms,
                                        const SquareMatrix<T>& upstream) {
  const std::size_t n = ms.size();
  if (n == 0) return {};
  const std::size_t d = upstream.dim();
  for (const auto& m : ms) {
    if (m.dim() != d) throw StructuralError("chain_grad: mixed matrix dimensions");
  }
  // left[i] = X_0..X_{i-1}, right[i] = X_{i+1}..X_{n-1}
  std::vector<SquareMatrix<T>> left(n), right(n);
  left[0] = SquareMatrix<T>::identity(d);
  for (std::size_t i = 1; i < n; ++i) left[i] = matmul(left[i - 1], ms[i - 1]);
  right[n - 1] = SquareMatrix<T>::identity(d);
  for (std::size_t i = n - 1; i-- > 0;) right[i] = matmul(ms[i + 1], right[i + 1]);

  std::vector<SquareMatrix<T>> grads(n, SquareMatrix<T>(d));
  SquareMatrix<T> tmp(d);
  for (std::size_t i = 0; i < n; ++i) {
    matmul_at_b_into(left[i].entries().data(), upstream.entries().data(), tmp.entries().data(), d);
    matmul_a_bt_into(tmp.entries().data(), right[i].entries().data(), grads[i].entries().data(), d);
  }
  return grads;
}

namespace {

template <typename T>
void accumulate(std::span<T> dst, std::span<const T> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T>
void require_congruent(const EmbeddingTable<T>& table, const EmbeddingTable<T>& grad) {
  if (table.kind() != grad.kind() || table.d() != grad.d() || table.d_vec() != grad.d_vec() ||
      table.n_vocab() != grad.n_vocab()) {
    throw StructuralError("gradient table is not congruent with the embedding table");
  }
}

}  // namespace

template <typename T>
void backprop_pooled(std::span<const TokenId> ids, const EmbeddingTable<T>& table,
                     std::span<const T> grad_pooled, EmbeddingTable<T>& grad) {
  require_congruent(table, grad);
  if (grad_pooled.size() != pooled_dim(table)) {
    throw StructuralError("pooled gradient has dimension " + std::to_string(grad_pooled.size()) +
                          ", expected " + std::to_string(pooled_dim(table)));
  }
  const std::size_t n = ids.size();
  const std::size_t m = table.matrix_size();
  std::size_t offset = 0;
  if (has_matrices(table.kind())) {
    const auto upstream_fw = unflatten<T>(grad_pooled.subspan(0, m));
    const auto fw = gather_matrices(ids, table, false);
    const auto g_fw = chain_grad<T>(fw, upstream_fw);
    for (std::size_t i = 0; i < n; ++i) accumulate<T>(grad.forward_matrix(ids[i]), g_fw[i].entries());
    offset = m;
    if (is_bidirectional(table.kind())) {
      const auto upstream_bw = unflatten<T>(grad_pooled.subspan(m, m));
      auto bw = gather_matrices(ids, table, true);
      std::reverse(bw.begin(), bw.end());
      const auto g_bw = chain_grad<T>(bw, upstream_bw);
      for (std::size_t k = 0; k < n; ++k) {
        accumulate<T>(grad.backward_matrix(ids[n - 1 - k]), g_bw[k].entries());
      }
      offset += m;
    }
  }
  if (has_vectors(table.kind())) {
    const auto g = grad_pooled.subspan(offset, table.d_vec());
    for (TokenId id : ids) accumulate<T>(grad.vector(id), g);
  }
}

template <typename T>
void backprop_per_token(std::span<const TokenId> ids, const EmbeddingTable<T>& table,
                        std::span<const T> grad_rows, EmbeddingTable<T>& grad) {
  require_congruent(table, grad);
  const std::size_t n = ids.size();
  const std::size_t dim = per_token_dim(table);
  if (grad_rows.size() != n * dim) {
    throw StructuralError("per-token gradient has " + std::to_string(grad_rows.size()) +
                          " entries, expected " + std::to_string(n * dim));
  }
  const bool bidi = is_bidirectional(table.kind());
  const std::size_t d = table.d();
  const std::size_t m = table.matrix_size();
  auto row_block = [&](std::size_t i, std::size_t offset, std::size_t len) {
    return grad_rows.subspan(i * dim + offset, len);
  };

  std::size_t offset = 0;
  if (has_matrices(table.kind())) {
    SquareMatrix<T> tmp(d), contrib(d);
    {
      // P_i = P_{i-1} X_i. Walk right to left carrying D_i = total dL/dP_i.
      const auto fw = gather_matrices(ids, table, false);
      const auto prefix = prefix_scan<T>(fw, ScanSchedule::sequential);
      auto carry = unflatten<T>(row_block(n - 1, offset, m));
      for (std::size_t i = n; i-- > 0;) {
        if (i == 0) {
          accumulate<T>(grad.forward_matrix(ids[0]), carry.entries());
        } else {
          matmul_at_b_into(prefix[i - 1].entries().data(), carry.entries().data(),
                           contrib.entries().data(), d);
          accumulate<T>(grad.forward_matrix(ids[i]), contrib.entries());
          matmul_a_bt_into(carry.entries().data(), fw[i].entries().data(), tmp.entries().data(), d);
          accumulate<T>(tmp.entries(), row_block(i - 1, offset, m));
          std::swap(carry, tmp);
        }
      }
      offset += m;
    }
    if (bidi) {
      // S_i = S_{i+1} B_i. Walk left to right carrying D_i = total dL/dS_i.
      const auto bw = gather_matrices(ids, table, true);
      const auto suffix = suffix_scan<T>(bw, ScanSchedule::sequential);
      auto carry = unflatten<T>(row_block(0, offset, m));
      for (std::size_t i = 0; i < n; ++i) {
        if (i == n - 1) {
          accumulate<T>(grad.backward_matrix(ids[i]), carry.entries());
        } else {
          matmul_at_b_into(suffix[i + 1].entries().data(), carry.entries().data(),
                           contrib.entries().data(), d);
          accumulate<T>(grad.backward_matrix(ids[i]), contrib.entries());
          matmul_a_bt_into(carry.entries().data(), bw[i].entries().data(), tmp.entries().data(), d);
          accumulate<T>(tmp.entries(), row_block(i + 1, offset, m));
          std::swap(carry, tmp);
        }
      }
      offset += m;
    }
  }
  if (has_vectors(table.kind())) {
    const std::size_t dv = table.d_vec();
    std::vector<T> running(dv, T(0));
    // Forward partial sums: x_j feeds rows j..n-1.
    for (std::size_t i = n; i-- > 0;) {
      accumulate<T>(running, row_block(i, offset, dv));
      accumulate<T>(grad.vector(ids[i]), running);
    }
    if (bidi) {
      offset += dv;
      std::fill(running.begin(), running.end(), T(0));
      // Backward partial sums: x_j feeds rows 0..j.
      for (std::size_t i = 0; i < n; ++i) {
        accumulate<T>(running, row_block(i, offset, dv));
        accumulate<T>(grad.vector(ids[i]), running);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Objectives

namespace {

// Combined loss at one prediction site; writes scale * dL/dlogits into grad.
template <typename T>
double site_loss(std::span<const T> logits, std::size_t label, const TeacherDistribution* teacher,
                 const LossSettings& loss, double scale, std::vector<T>* grad,
                 const std::string& site) {
  if (!(loss.alpha >= 0.0 && loss.alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  double hard = 0.0;
  double soft = 0.0;
  if (grad != nullptr) grad->assign(logits.size(), T(0));
  if (loss.alpha > 0.0) {
    const auto h = hard_loss<T>(logits, label);
    hard = h.loss;
    if (grad != nullptr) {
      for (std::size_t i = 0; i < logits.size(); ++i) {
        (*grad)[i] += static_cast<T>(scale * loss.alpha * static_cast<double>(h.grad[i]));
      }
    }
  }
  if (loss.alpha < 1.0) {
    if (teacher == nullptr) throw DataError("missing teacher record for " + site);
    const auto s = soft_loss<T>(logits, *teacher, loss.temperature);
    soft = s.loss;
    if (grad != nullptr) {
      for (std::size_t i = 0; i < logits.size(); ++i) {
        (*grad)[i] += static_cast<T>(scale * (1.0 - loss.alpha) * static_cast<double>(s.grad[i]));
      }
    }
  }
  return combined_loss(hard, soft, loss.alpha);
}

}  // namespace

template <typename T>
double mlm_objective(const Model<T>& model, const MlmExample& example, const LossSettings& loss,
                     const DropoutPolicy& dropout, Rng& rng, GradientBundle<T>* grad,
                     double scale) {
  if (!model.mlm) throw StructuralError("model has no MLM head");
  const auto& head = *model.mlm;
  if (example.positions.size() != example.targets.size()) {
    throw StructuralError("MLM example positions and targets differ in length");
  }
  if (example.positions.empty()) return 0.0;
  const auto enc = encode_per_token<T>(example.ids, model.embeddings);
  if (enc.dim != head.in_dim) {
    throw StructuralError("per-token encoding has dimension " + std::to_string(enc.dim) +
                          ", MLM head expects " + std::to_string(head.in_dim));
  }
  std::vector<T> grad_rows;
  if (grad != nullptr) grad_rows.assign(enc.rows * enc.dim, T(0));

  double total = 0.0;
  std::vector<T> x(enc.dim);
  std::vector<T> g_logits;
  for (std::size_t k = 0; k < example.positions.size(); ++k) {
    const std::size_t pos = example.positions[k];
    if (pos >= enc.rows) throw StructuralError("MLM prediction site outside the sequence");
    const auto mask = dropout_mask<T>(enc.dim, dropout.p_embed, dropout.training, rng);
    const auto row = enc.row(pos);
    for (std::size_t c = 0; c < enc.dim; ++c) x[c] = row[c] * mask[c];
    const auto logits = mlm_row_logits<T>(x, head);
    const TeacherDistribution* teacher = k < example.teachers.size() ? example.teachers[k] : nullptr;
    const auto target = static_cast<std::size_t>(example.targets[k]);
    total += site_loss<T>(logits, target, teacher, loss, scale, grad ? &g_logits : nullptr,
                          "masked position " + std::to_string(pos));
    if (grad != nullptr) {
      const auto dx = mlm_row_backward<T>(x, head, g_logits, *grad->mlm);
      for (std::size_t c = 0; c < enc.dim; ++c) grad_rows[pos * enc.dim + c] += dx[c] * mask[c];
    }
  }
  if (grad != nullptr) backprop_per_token<T>(example.ids, model.embeddings, grad_rows, grad->embeddings);
  return total;
}

template <typename T>
std::vector<T> classification_features(const EmbeddingTable<T>& table,
                                       const ClassificationExample& example) {
  if (example.sequences.size() == 1) return encode_pooled<T>(example.sequences[0], table).values;
  if (example.sequences.size() == 2) {
    const auto a = encode_pooled<T>(example.sequences[0], table);
    const auto b = encode_pooled<T>(example.sequences[1], table);
    return combine_diffcat<T>(a.values, b.values);
  }
  throw StructuralError("classification example needs one or two sequences");
}

template <typename T>
std::vector<T> classification_logits(const Model<T>& model, const ClassificationExample& example,
                                     const DropoutPolicy& dropout, Rng& rng) {
  if (!model.classifier) throw StructuralError("model has no classifier head");
  const auto features = classification_features(model.embeddings, example);
  return classify<T>(features, *model.classifier, dropout, rng);
}

template <typename T>
double classification_objective(const Model<T>& model, const ClassificationExample& example,
                                const LossSettings& loss, const DropoutPolicy& dropout, Rng& rng,
                                GradientBundle<T>* grad, double scale) {
  if (!model.classifier) throw StructuralError("model has no classifier head");
  const auto features = classification_features(model.embeddings, example);
  const auto trace = classify_traced<T>(features, *model.classifier, dropout, rng);
  std::vector<T> g_logits;
  const double value = site_loss<T>(trace.logits, example.label, example.teacher, loss, scale,
                                    grad ? &g_logits : nullptr, "task example");
  if (grad == nullptr) return value;

  const auto d_features = classify_backward<T>(trace, *model.classifier, g_logits, *grad->classifier);
  if (example.sequences.size() == 1) {
    backprop_pooled<T>(example.sequences[0], model.embeddings, d_features, grad->embeddings);
    return value;
  }
  const std::size_t p = features.size() / 3;
  std::vector<T> d_a(p), d_b(p);
  for (std::size_t i = 0; i < p; ++i) {
    const T a = features[i];
    const T b = features[2 * p + i];
    const T sign = a > b ? T(1) : (a < b ? T(-1) : T(0));
    d_a[i] = d_features[i] + sign * d_features[p + i];
    d_b[i] = d_features[2 * p + i] - sign * d_features[p + i];
  }
  backprop_pooled<T>(example.sequences[0], model.embeddings, d_a, grad->embeddings);
  backprop_pooled<T>(example.sequences[1], model.embeddings, d_b, grad->embeddings);
  return value;
}

// ---------------------------------------------------------------------------
// Optimization

double learning_rate_at(const OptimizerConfig& config, std::size_t step) {
  double factor = 1.0;
  if (config.warmup_steps > 0 && step <= config.warmup_steps) {
    factor = static_cast<double>(step) / static_cast<double>(config.warmup_steps);
  } else if (config.total_steps > config.warmup_steps) {
    const double remaining = static_cast<double>(config.total_steps) - static_cast<double>(step);
    factor = std::max(0.0, remaining / static_cast<double>(config.total_steps - config.warmup_steps));
  }
  return config.learning_rate * factor;
}

template <typename T>
double clip_global_norm(std::span<const std::span<T>> grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (T v : g) sq += static_cast<double>(v) * static_cast<double>(v);
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm && std::isfinite(norm)) {
    const auto factor = static_cast<T>(max_norm / norm);
    for (const auto& g : grads) {
      for (T& v : g) v *= factor;
    }
  }
  return norm;
}

template <typename T>
AdamOptimizer<T>::AdamOptimizer(std::span<const std::span<T>> params) {
  for (const auto& p : params) {
    m_.emplace_back(p.size(), T(0));
    v_.emplace_back(p.size(), T(0));
  }
}

template <typename T>
void AdamOptimizer<T>::step(std::span<const std::span<T>> params,
                            std::span<const std::span<T>> grads, const OptimizerConfig& config,
                            std::size_t step) {
  if (step == 0) throw ConfigError("optimizer steps are 1-based");
  if (params.size() != grads.size() || params.size() != m_.size()) {
    throw StructuralError("optimizer: parameter and gradient groups are not congruent");
  }
  last_grad_norm_ = clip_global_norm(grads, config.grad_clip);
  if (!std::isfinite(last_grad_norm_)) throw NumericalError("non-finite gradient norm");

  const double lr = learning_rate_at(config, step);
  const double t = static_cast<double>(step);
  const double bias1 = 1.0 - std::pow(config.beta1, t);
  const double bias2 = 1.0 - std::pow(config.beta2, t);
  const auto b1 = static_cast<T>(config.beta1);
  const auto b2 = static_cast<T>(config.beta2);
  for (std::size_t g = 0; g < params.size(); ++g) {
    auto& m = m_[g];
    auto& v = v_[g];
    const auto& grad = grads[g];
    const auto& param = params[g];
    if (grad.size() != param.size() || m.size() != param.size()) {
      throw StructuralError("optimizer: group sizes differ");
    }
    for (std::size_t i = 0; i < param.size(); ++i) {
      const T gi = grad[i];
      m[i] = b1 * m[i] + (T(1) - b1) * gi;
      v[i] = b2 * v[i] + (T(1) - b2) * gi * gi;
      const double m_hat = static_cast<double>(m[i]) / bias1;
      const double v_hat = static_cast<double>(v[i]) / bias2;
      param[i] -= static_cast<T>(lr * m_hat / (std::sqrt(v_hat) + config.epsilon));
    }
  }
}

// ---------------------------------------------------------------------------
// Early stopping

EarlyStopping::EarlyStopping(std::size_t max_epochs, std::size_t patience)
    : max_epochs_(max_epochs), patience_(patience) {
  if (max_epochs == 0) throw ConfigError("max_epochs must be positive");
  if (patience > max_epochs) throw ConfigError("patience must not exceed max_epochs");
}

bool EarlyStopping::observe(double metric) {
  ++epochs_seen_;
  if (best_epoch_ == 0 || metric > best_metric_) {
    best_epoch_ = epochs_seen_;
    best_metric_ = metric;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

bool EarlyStopping::should_stop() const {
  return epochs_seen_ >= max_epochs_ || (patience_ > 0 && since_best_ >= patience_);
}

std::string TraceRecord::to_json() const {
  nlohmann::json j;
  j["epoch"] = epoch;
  j["split"] = split;
  j["metric"] = metric;
  j["value"] = value;
  j["loss"] = loss;
  return j.dump();
}

TrainOutcome train_loop(std::size_t max_epochs, std::size_t patience, const EpochHooks& hooks) {
  EarlyStopping stopper(max_epochs, patience);
  TrainOutcome outcome;
  auto emit = [&](TraceRecord record) {
    if (hooks.on_trace) hooks.on_trace(record);
    outcome.trace.push_back(std::move(record));
  };
  for (std::size_t epoch = 1; epoch <= max_epochs; ++epoch) {
    const double train_loss = hooks.train_epoch(epoch);
    if (!std::isfinite(train_loss)) {
      throw NumericalError("non-finite training loss at epoch " + std::to_string(epoch));
    }
    emit({epoch, "train", "loss", train_loss, train_loss});
    const EvalResult eval = hooks.evaluate(epoch);
    emit({epoch, "dev", eval.metric_name, eval.selection, eval.loss});
    logger().info("epoch {}: train loss {:.6f}, dev {} {:.6f}", epoch, train_loss, eval.metric_name,
                  eval.selection);
    if (stopper.observe(eval.selection) && hooks.snapshot_best) hooks.snapshot_best();
    outcome.epochs_run = epoch;
    if (stopper.should_stop()) break;
  }
  if (hooks.restore_best) hooks.restore_best();
  outcome.best_epoch = stopper.best_epoch();
  outcome.best_metric = stopper.best_metric();
  return outcome;
}

#define CMOW_INSTANTIATE_TRAINING(T)                                                             \
  template std::vector<SquareMatrix<T>> chain_grad<T>(std::span<const SquareMatrix<T>>,          \
                                                      const SquareMatrix<T>&);                   \
  template void backprop_pooled<T>(std::span<const TokenId>, const EmbeddingTable<T>&,           \
                                   std::span<const T>, EmbeddingTable<T>&);                      \
  template void backprop_per_token<T>(std::span<const TokenId>, const EmbeddingTable<T>&,        \
                                      std::span<const T>, EmbeddingTable<T>&);                   \
  template double mlm_objective<T>(const Model<T>&, const MlmExample&, const LossSettings&,      \
                                   const DropoutPolicy&, Rng&, GradientBundle<T>*, double);      \
  template std::vector<T> classification_features<T>(const EmbeddingTable<T>&,                  \
                                                      const ClassificationExample&);             \
  template std::vector<T> classification_logits<T>(const Model<T>&, const ClassificationExample&, \
                                                   const DropoutPolicy&, Rng&);                  \
  template double classification_objective<T>(const Model<T>&, const ClassificationExample&,     \
                                               const LossSettings&, const DropoutPolicy&, Rng&,  \
                                               GradientBundle<T>*, double);                      \
  template double clip_global_norm<T>(std::span<const std::span<T>>, double);                    \
  template class AdamOptimizer<T>;

CMOW_INSTANTIATE_TRAINING(float)
CMOW_INSTANTIATE_TRAINING(double)

#undef CMOW_INSTANTIATE_TRAINING

}  // namespace cmow
