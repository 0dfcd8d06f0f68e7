#include "cmow/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cmow/errors.hpp"

namespace cmow {

namespace {

void require_nonempty(std::span<const TokenId> ids) {
  if (ids.empty()) throw StructuralError("cannot encode an empty sequence");
}

template <typename T>
void require_matrices(const EmbeddingTable<T>& table) {
  if (!has_matrices(table.kind())) {
    throw StructuralError("embedding kind " + std::string(to_string(table.kind())) +
                          " has no matrix part");
  }
}

template <typename T>
void add_into(std::span<T> acc, std::span<const T> v) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
}

}  // namespace

std::size_t pooled_dim(EmbeddingKind kind, std::size_t d, std::size_t d_vec) {
  const std::size_t m = has_matrices(kind) ? direction_count(kind) * d * d : 0;
  return m + (has_vectors(kind) ? d_vec : 0);
}

std::size_t per_token_dim(EmbeddingKind kind, std::size_t d, std::size_t d_vec) {
  const std::size_t dirs = direction_count(kind);
  const std::size_t m = has_matrices(kind) ? dirs * d * d : 0;
  return m + (has_vectors(kind) ? dirs * d_vec : 0);
}

template <typename T>
std::vector<SquareMatrix<T>> gather_matrices(std::span<const TokenId> ids,
                                             const EmbeddingTable<T>& table, bool backward) {
  require_matrices(table);
  std::vector<SquareMatrix<T>> ms;
  ms.reserve(ids.size());
  for (TokenId id : ids) {
    const auto emb = table.lookup(id);
    const auto src = backward && is_bidirectional(table.kind()) ? emb.backward : emb.forward;
    ms.emplace_back(table.d(), std::vector<T>(src.begin(), src.end()));
  }
  return ms;
}

template <typename T>
RealVector<T> encode_cbow(std::span<const TokenId> ids, const EmbeddingTable<T>& table) {
  require_nonempty(ids);
  if (!has_vectors(table.kind())) {
    throw StructuralError("embedding kind " + std::string(to_string(table.kind())) +
                          " has no vector part");
  }
  RealVector<T> sum(table.d_vec(), T(0));
  for (TokenId id : ids) add_into<T>(sum, table.lookup(id).vector);
  return sum;
}

template <typename T>
SquareMatrix<T> encode_cmow(std::span<const TokenId> ids, const EmbeddingTable<T>& table,
                            Direction direction) {
  require_nonempty(ids);
  const bool backward = direction == Direction::right_to_left;
  const auto ms = gather_matrices(ids, table, backward);
  return chain_product<T>(ms, direction, table.d());
}

template <typename T>
void encode_pooled_into(std::span<const TokenId> ids, const EmbeddingTable<T>& table,
                        std::span<T> out, std::vector<T>& scratch) {
  require_nonempty(ids);
  const std::size_t d = table.d();
  const std::size_t m = d * d;
  if (out.size() != pooled_dim(table)) {
    throw StructuralError("pooled output buffer has " + std::to_string(out.size()) +
                          " entries, expected " + std::to_string(pooled_dim(table)));
  }
  std::size_t offset = 0;
  if (has_matrices(table.kind())) {
    scratch.resize(2 * m);
    auto run_chain = [&](bool backward, T* dst) {
      // Running product through two ping-pong buffers; the final one lands in dst.
      const std::size_t n = ids.size();
      auto matrix_at = [&](std::size_t step) {
        const TokenId id = backward ? ids[n - 1 - step] : ids[step];
        const auto emb = table.lookup(id);
        return backward ? emb.backward.data() : emb.forward.data();
      };
      if (n == 1) {
        std::copy_n(matrix_at(0), m, dst);
        return;
      }
      T* bufs[2] = {scratch.data(), scratch.data() + m};
      const T* acc = matrix_at(0);
      for (std::size_t step = 1; step < n; ++step) {
        T* target = step == n - 1 ? dst : bufs[step % 2];
        matmul_into(acc, matrix_at(step), target, d);
        acc = target;
      }
    };
    run_chain(false, out.data());
    offset += m;
    if (is_bidirectional(table.kind())) {
      run_chain(true, out.data() + offset);
      offset += m;
    }
  }
  if (has_vectors(table.kind())) {
    auto cbow = out.subspan(offset, table.d_vec());
    std::fill(cbow.begin(), cbow.end(), T(0));
    for (TokenId id : ids) add_into<T>(cbow, table.lookup(id).vector);
  }
}

template <typename T>
SequenceEncoding<T> encode_pooled(std::span<const TokenId> ids, const EmbeddingTable<T>& table) {
  SequenceEncoding<T> enc;
  enc.mode = EncodingMode::pooled;
  enc.rows = 1;
  enc.dim = pooled_dim(table);
  enc.kind = table.kind();
  enc.d = table.d();
  enc.d_vec = table.d_vec();
  enc.values.assign(enc.dim, T(0));
  std::vector<T> scratch;
  encode_pooled_into<T>(ids, table, enc.values, scratch);
  return enc;
}

template <typename T>
SequenceEncoding<T> encode_per_token(std::span<const TokenId> ids, const EmbeddingTable<T>& table,
                                     ScanSchedule schedule) {
  require_nonempty(ids);
  const std::size_t n = ids.size();
  const std::size_t m = table.matrix_size();
  const bool bidi = is_bidirectional(table.kind());

  SequenceEncoding<T> enc;
  enc.mode = EncodingMode::per_token;
  enc.rows = n;
  enc.dim = per_token_dim(table);
  enc.kind = table.kind();
  enc.d = table.d();
  enc.d_vec = table.d_vec();
  enc.values.assign(n * enc.dim, T(0));

  std::size_t offset = 0;
  if (has_matrices(table.kind())) {
    const auto forward = prefix_scan<T>(gather_matrices(ids, table, false), schedule);
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(forward[i].entries().data(), m, enc.values.data() + i * enc.dim + offset);
    }
    offset += m;
    if (bidi) {
      const auto backward = suffix_scan<T>(gather_matrices(ids, table, true), schedule);
      for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(backward[i].entries().data(), m, enc.values.data() + i * enc.dim + offset);
      }
      offset += m;
    }
  }
  if (has_vectors(table.kind())) {
    const std::size_t dv = table.d_vec();
    std::vector<T> running(dv, T(0));
    for (std::size_t i = 0; i < n; ++i) {
      add_into<T>(running, table.lookup(ids[i]).vector);
      std::copy(running.begin(), running.end(), enc.values.begin() + static_cast<std::ptrdiff_t>(i * enc.dim + offset));
    }
    if (bidi) {
      offset += dv;
      std::fill(running.begin(), running.end(), T(0));
      for (std::size_t i = n; i-- > 0;) {
        add_into<T>(running, table.lookup(ids[i]).vector);
        std::copy(running.begin(), running.end(), enc.values.begin() + static_cast<std::ptrdiff_t>(i * enc.dim + offset));
      }
    }
  }
  return enc;
}

template <typename T>
RealVector<T> combine_diffcat(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) {
    throw StructuralError("diffcat operands differ in length: " + std::to_string(a.size()) +
                          " vs " + std::to_string(b.size()));
  }
  RealVector<T> out;
  out.reserve(3 * a.size());
  out.insert(out.end(), a.begin(), a.end());
  for (std::size_t i = 0; i < a.size(); ++i) out.push_back(std::abs(a[i] - b[i]));
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

#define CMOW_INSTANTIATE_ENCODER(T)                                                              \
  template std::vector<SquareMatrix<T>> gather_matrices<T>(std::span<const TokenId>,             \
                                                           const EmbeddingTable<T>&, bool);      \
  template RealVector<T> encode_cbow<T>(std::span<const TokenId>, const EmbeddingTable<T>&);     \
  template SquareMatrix<T> encode_cmow<T>(std::span<const TokenId>, const EmbeddingTable<T>&,    \
                                          Direction);                                            \
  template void encode_pooled_into<T>(std::span<const TokenId>, const EmbeddingTable<T>&,        \
                                      std::span<T>, std::vector<T>&);                            \
  template SequenceEncoding<T> encode_pooled<T>(std::span<const TokenId>,                        \
                                                const EmbeddingTable<T>&);                       \
  template SequenceEncoding<T> encode_per_token<T>(std::span<const TokenId>,                     \
                                                   const EmbeddingTable<T>&, ScanSchedule);      \
  template RealVector<T> combine_diffcat<T>(std::span<const T>, std::span<const T>);

CMOW_INSTANTIATE_ENCODER(float)
CMOW_INSTANTIATE_ENCODER(double)

#undef CMOW_INSTANTIATE_ENCODER

}  // namespace cmow
