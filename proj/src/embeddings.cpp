#include "cmow/embeddings.hpp"

#include <algorithm>

#include <random>

#include "cmow/errors.hpp"

namespace cmow {

std::string_view to_string(EmbeddingKind kind) {
  switch (kind) {
    case EmbeddingKind::cmow_unidirectional: return "cmow-unidirectional";
    case EmbeddingKind::cmow_bidirectional: return "cmow-bidirectional";
    case EmbeddingKind::cbow: return "cbow";
    case EmbeddingKind::hybrid_unidirectional: return "hybrid-unidirectional";
    case EmbeddingKind::hybrid_bidirectional: return "hybrid-bidirectional";
  }
  return "unknown";
}

EmbeddingKind parse_embedding_kind(std::string_view name) {
  struct Alias {
    std::string_view name;
    EmbeddingKind kind;
  };
  static constexpr Alias aliases[] = {
      {"cmow-unidirectional", EmbeddingKind::cmow_unidirectional},
      {"cmow", EmbeddingKind::cmow_unidirectional},
      {"cmow-uni", EmbeddingKind::cmow_unidirectional},
      {"cmow-bidirectional", EmbeddingKind::cmow_bidirectional},
      {"cmow-bidi", EmbeddingKind::cmow_bidirectional},
      {"cbow", EmbeddingKind::cbow},
      {"hybrid-unidirectional", EmbeddingKind::hybrid_unidirectional},
      {"hybrid", EmbeddingKind::hybrid_unidirectional},
      {"hybrid-uni", EmbeddingKind::hybrid_unidirectional},
      {"hybrid-bidirectional", EmbeddingKind::hybrid_bidirectional},
      {"hybrid-bidi", EmbeddingKind::hybrid_bidirectional},
  };
  std::string key(name);
  std::replace(key.begin(), key.end(), '_', '-');
  for (const auto& alias : aliases) {
    if (alias.name == key) return alias.kind;
  }
  throw ConfigError("unknown embedding kind '" + std::string(name) + "'");
}

template <typename T>
EmbeddingTable<T>::EmbeddingTable(EmbeddingKind kind, std::size_t d, std::size_t d_vec,
                                  std::size_t n_vocab)
    : kind_(kind), d_(d), d_vec_(d_vec), n_vocab_(n_vocab) {
  if (n_vocab == 0) throw ConfigError("embedding table needs a non-empty vocabulary");
  if (has_matrices(kind) != (d > 0)) {
    throw ConfigError("kind " + std::string(to_string(kind)) + " is inconsistent with d=" +
                      std::to_string(d));
  }
  if (has_vectors(kind) != (d_vec > 0)) {
    throw ConfigError("kind " + std::string(to_string(kind)) + " is inconsistent with d_vec=" +
                      std::to_string(d_vec));
  }
  forward_.assign(n_vocab * d * d, T(0));
  if (is_bidirectional(kind)) backward_.assign(n_vocab * d * d, T(0));
  vectors_.assign(n_vocab * d_vec, T(0));
}

template <typename T>
void EmbeddingTable<T>::check_id(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= n_vocab_) {
    throw StructuralError("token id " + std::to_string(id) + " outside embedding table of " +
                          std::to_string(n_vocab_) + " rows");
  }
}

template <typename T>
TokenEmbedding<T> EmbeddingTable<T>::lookup(TokenId id) const {
  check_id(id);
  const auto row = static_cast<std::size_t>(id);
  const std::size_t m = matrix_size();
  TokenEmbedding<T> out;
  if (!forward_.empty()) out.forward = std::span<const T>(forward_).subspan(row * m, m);
  if (!backward_.empty()) out.backward = std::span<const T>(backward_).subspan(row * m, m);
  if (!vectors_.empty()) out.vector = std::span<const T>(vectors_).subspan(row * d_vec_, d_vec_);
  return out;
}

template <typename T>
std::span<T> EmbeddingTable<T>::forward_matrix(TokenId id) {
  check_id(id);
  if (forward_.empty()) return {};
  return std::span<T>(forward_).subspan(static_cast<std::size_t>(id) * matrix_size(), matrix_size());
}

template <typename T>
std::span<T> EmbeddingTable<T>::backward_matrix(TokenId id) {
  check_id(id);
  if (backward_.empty()) return {};
  return std::span<T>(backward_).subspan(static_cast<std::size_t>(id) * matrix_size(), matrix_size());
}

template <typename T>
std::span<T> EmbeddingTable<T>::vector(TokenId id) {
  check_id(id);
  if (vectors_.empty()) return {};
  return std::span<T>(vectors_).subspan(static_cast<std::size_t>(id) * d_vec_, d_vec_);
}

template <typename T>
EmbeddingTable<T> init_embeddings(EmbeddingKind kind, std::size_t d, std::size_t d_vec,
                                  std::size_t n_vocab, double sigma_init, std::uint64_t seed) {
  if (!(sigma_init >= 0.0)) throw ConfigError("sigma_init must be non-negative");
  EmbeddingTable<T> table(kind, d, d_vec, n_vocab);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);

  auto fill_matrices = [&](std::span<T> block) {
    for (std::size_t offset = 0; offset < block.size(); offset += d * d) {
      for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
          const double base = i == j ? 1.0 : 0.0;
          block[offset + i * d + j] = static_cast<T>(base + sigma_init * noise(rng));
        }
      }
    }
  };
  fill_matrices(table.forward_block());
  fill_matrices(table.backward_block());
  for (T& v : table.vector_block()) v = static_cast<T>(sigma_init * noise(rng));
  return table;
}

std::size_t embedding_parameter_count(EmbeddingKind kind, std::size_t d, std::size_t d_vec,
                                      std::size_t n_vocab) {
  const std::size_t matrices = has_matrices(kind) ? direction_count(kind) * d * d : 0;
  const std::size_t vectors = has_vectors(kind) ? d_vec : 0;
  return n_vocab * (matrices + vectors);
}

template class EmbeddingTable<float>;
template class EmbeddingTable<double>;
template EmbeddingTable<float> init_embeddings<float>(EmbeddingKind, std::size_t, std::size_t,
                                                      std::size_t, double, std::uint64_t);
template EmbeddingTable<double> init_embeddings<double>(EmbeddingKind, std::size_t, std::size_t,
                                                        std::size_t, double, std::uint64_t);

}  // namespace cmow
