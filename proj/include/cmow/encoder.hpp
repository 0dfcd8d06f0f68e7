#pragma once

#include <span>
#include <vector>

#include "cmow/embeddings.hpp"
#include "cmow/linalg.hpp"

namespace cmow {

enum class EncodingMode { pooled, per_token };

// A pooled vector (rows == 1) or one vector per token position.
template <typename T>
struct SequenceEncoding {
  EncodingMode mode = EncodingMode::pooled;
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<T> values;  // rows * dim, row-major
  EmbeddingKind kind = EmbeddingKind::hybrid_bidirectional;
  std::size_t d = 0;
  std::size_t d_vec = 0;

  std::span<const T> row(std::size_t i) const {
    return std::span<const T>(values).subspan(i * dim, dim);
  }
};

// dirs*d^2 + d_vec: one CBOW copy regardless of direction count.
std::size_t pooled_dim(EmbeddingKind kind, std::size_t d, std::size_t d_vec);
// dirs*d^2 + dirs*d_vec: forward and backward partial sums in bidirectional kinds.
std::size_t per_token_dim(EmbeddingKind kind, std::size_t d, std::size_t d_vec);

template <typename T>
std::size_t pooled_dim(const EmbeddingTable<T>& t) {
  return pooled_dim(t.kind(), t.d(), t.d_vec());
}
template <typename T>
std::size_t per_token_dim(const EmbeddingTable<T>& t) {
  return per_token_dim(t.kind(), t.d(), t.d_vec());
}

// Sum of token vectors.
template <typename T>
RealVector<T> encode_cbow(std::span<const TokenId> ids, const EmbeddingTable<T>& table);

// left_to_right: X_1 * ... * X_n over the forward matrices.
// right_to_left: X_n * ... * X_1 over the backward matrices (the forward
// matrices for unidirectional tables).
template <typename T>
SquareMatrix<T> encode_cmow(std::span<const TokenId> ids, const EmbeddingTable<T>& table,
                            Direction direction = Direction::left_to_right);

// flatten(fw product) [|| flatten(bw product)] || CBOW sum; pure kinds emit
// only their own blocks.
template <typename T>
SequenceEncoding<T> encode_pooled(std::span<const TokenId> ids, const EmbeddingTable<T>& table);

// Allocation-free pooled encoding for batch inference. `out` has pooled_dim
// entries; `scratch` is resized as needed and may be reused across calls.
template <typename T>
void encode_pooled_into(std::span<const TokenId> ids, const EmbeddingTable<T>& table,
                        std::span<T> out, std::vector<T>& scratch);

// Position i: flatten(X_1..X_i fw) || flatten(X_n..X_i bw) || sum_{j<=i} x_j
// || sum_{j>=i} x_j. Unidirectional kinds emit only the forward blocks.
// One prefix scan and one suffix scan, O(n) multiplications.
template <typename T>
SequenceEncoding<T> encode_per_token(std::span<const TokenId> ids, const EmbeddingTable<T>& table,
                                     ScanSchedule schedule = ScanSchedule::sequential);

// a || |a - b| || b
template <typename T>
RealVector<T> combine_diffcat(std::span<const T> a, std::span<const T> b);

// Matrices of a sequence in storage order, for scans and gradient code.
template <typename T>
std::vector<SquareMatrix<T>> gather_matrices(std::span<const TokenId> ids,
                                             const EmbeddingTable<T>& table, bool backward);

}  // namespace cmow
