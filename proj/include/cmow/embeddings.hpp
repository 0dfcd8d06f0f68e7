#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cmow/tokenizer.hpp"

namespace cmow {

enum class EmbeddingKind : std::uint32_t {
  cmow_unidirectional = 0,
  cmow_bidirectional = 1,
  cbow = 2,
  hybrid_unidirectional = 3,
  hybrid_bidirectional = 4,
};

std::string_view to_string(EmbeddingKind kind);
// Accepts the canonical names ("hybrid-bidirectional") and short forms
// ("hybrid_bidi", "cmow", "cbow", ...). Throws ConfigError otherwise.
EmbeddingKind parse_embedding_kind(std::string_view name);

constexpr bool has_matrices(EmbeddingKind k) { return k != EmbeddingKind::cbow; }
constexpr bool has_vectors(EmbeddingKind k) {
  return k == EmbeddingKind::cbow || k == EmbeddingKind::hybrid_unidirectional ||
         k == EmbeddingKind::hybrid_bidirectional;
}
constexpr bool is_bidirectional(EmbeddingKind k) {
  return k == EmbeddingKind::cmow_bidirectional || k == EmbeddingKind::hybrid_bidirectional;
}
constexpr std::size_t direction_count(EmbeddingKind k) { return is_bidirectional(k) ? 2 : 1; }

template <typename T>
struct TokenEmbedding {
  std::span<const T> forward;   // d*d, empty without a matrix part
  std::span<const T> backward;  // d*d, bidirectional kinds only
  std::span<const T> vector;    // d_vec, empty without a vector part
};

// Per-token matrices and vectors, stored as contiguous per-direction blocks
// keyed by token id: forward[id*d*d ...], backward[id*d*d ...], vectors[id*d_vec ...].
template <typename T>
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  // Zero-filled table. d must be 0 exactly when the kind has no matrix part,
  // and likewise d_vec for the vector part.
  EmbeddingTable(EmbeddingKind kind, std::size_t d, std::size_t d_vec, std::size_t n_vocab);

  EmbeddingKind kind() const { return kind_; }
  std::size_t d() const { return d_; }
  std::size_t d_vec() const { return d_vec_; }
  std::size_t n_vocab() const { return n_vocab_; }
  std::size_t matrix_size() const { return d_ * d_; }

  TokenEmbedding<T> lookup(TokenId id) const;

  std::span<T> forward_matrix(TokenId id);
  std::span<T> backward_matrix(TokenId id);
  std::span<T> vector(TokenId id);

  std::span<T> forward_block() { return forward_; }
  std::span<T> backward_block() { return backward_; }
  std::span<T> vector_block() { return vectors_; }
  std::span<const T> forward_block() const { return forward_; }
  std::span<const T> backward_block() const { return backward_; }
  std::span<const T> vector_block() const { return vectors_; }

  void check_id(TokenId id) const;

 private:
  EmbeddingKind kind_ = EmbeddingKind::hybrid_bidirectional;
  std::size_t d_ = 0;
  std::size_t d_vec_ = 0;
  std::size_t n_vocab_ = 0;
  std::vector<T> forward_;
  std::vector<T> backward_;
  std::vector<T> vectors_;
};

// Matrices start at I_d + N(0, sigma_init^2) elementwise, vectors at
// N(0, sigma_init^2). Deterministic for a given seed.
template <typename T>
EmbeddingTable<T> init_embeddings(EmbeddingKind kind, std::size_t d, std::size_t d_vec,
                                  std::size_t n_vocab, double sigma_init, std::uint64_t seed);

// n_vocab * (dirs * d^2 + d_vec)
std::size_t embedding_parameter_count(EmbeddingKind kind, std::size_t d, std::size_t d_vec,
                                      std::size_t n_vocab);

template <typename T>
std::size_t parameter_count(const EmbeddingTable<T>& table) {
  return embedding_parameter_count(table.kind(), table.d(), table.d_vec(), table.n_vocab());
}

// Copies a table into another precision.
template <typename To, typename From>
EmbeddingTable<To> convert_table(const EmbeddingTable<From>& table) {
  EmbeddingTable<To> out(table.kind(), table.d(), table.d_vec(), table.n_vocab());
  auto copy = [](std::span<const From> src, std::span<To> dst) {
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<To>(src[i]);
  };
  copy(table.forward_block(), out.forward_block());
  copy(table.backward_block(), out.backward_block());
  copy(table.vector_block(), out.vector_block());
  return out;
}

}  // namespace cmow
