#pragma once

// Slow reference computations the encoder is checked against.

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "cmow/embeddings.hpp"
#include "cmow/linalg.hpp"
#include "support.hpp"

namespace testing {

template <typename T>
cmow::SquareMatrix<T> matrix_of(std::span<const T> entries, std::size_t d) {
  return cmow::SquareMatrix<T>(d, std::vector<T>(entries.begin(), entries.end()));
}

// Per-token rows recomputed from scratch at every position.
template <typename T>
std::vector<T> naive_per_token(const std::vector<cmow::TokenId>& ids, const cmow::EmbeddingTable<T>& t) {
  const std::size_t n = ids.size(), d = t.d(), dv = t.d_vec();
  const bool bidi = cmow::is_bidirectional(t.kind());
  std::vector<T> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (cmow::has_matrices(t.kind())) {
      auto fw = cmow::SquareMatrix<T>::identity(d);
      for (std::size_t j = 0; j <= i; ++j) fw = testing::naive_matmul(fw, matrix_of<T>(t.lookup(ids[j]).forward, d));
      for (T v : fw.entries()) out.push_back(v);
      if (bidi) {
        auto bw = cmow::SquareMatrix<T>::identity(d);
        for (std::size_t j = n; j-- > i;) bw = testing::naive_matmul(bw, matrix_of<T>(t.lookup(ids[j]).backward, d));
        for (T v : bw.entries()) out.push_back(v);
      }
    }
    if (cmow::has_vectors(t.kind())) {
      std::vector<T> fw(dv, T(0)), bw(dv, T(0));
      for (std::size_t j = 0; j <= i; ++j)
        for (std::size_t k = 0; k < dv; ++k) fw[k] += t.lookup(ids[j]).vector[k];
      out.insert(out.end(), fw.begin(), fw.end());
      if (bidi) {
        for (std::size_t j = i; j < n; ++j)
          for (std::size_t k = 0; k < dv; ++k) bw[k] += t.lookup(ids[j]).vector[k];
        out.insert(out.end(), bw.begin(), bw.end());
      }
    }
  }
  return out;
}

// max over rows of ||a_r - b_r|| / ||b_r||
template <typename A, typename B>
double row_relative_error(std::span<const A> a, std::span<const B> b, std::size_t dim) {
  if (a.size() != b.size()) throw std::logic_error("row_relative_error: size mismatch");
  double worst = 0;
  for (std::size_t r = 0; r * dim < a.size(); ++r) {
    double num = 0, den = 0;
    for (std::size_t i = r * dim; i < (r + 1) * dim; ++i) {
      num += (double(a[i]) - double(b[i])) * (double(a[i]) - double(b[i]));
      den += double(b[i]) * double(b[i]);
    }
    worst = std::max(worst, den > 0 ? std::sqrt(num / den) : std::sqrt(num));
  }
  return worst;
}

}  // namespace testing
