#include "cmow/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cmow/errors.hpp"

namespace cmow {

template <typename T>
SquareMatrix<T>::SquareMatrix(std::size_t dim, std::vector<T> entries)
    : dim_(dim), entries_(std::move(entries)) {
  if (entries_.size() != dim * dim) {
    throw StructuralError("matrix of dim " + std::to_string(dim) + " needs " +
                          std::to_string(dim * dim) + " entries, got " +
                          std::to_string(entries_.size()));
  }
}

template <typename T>
SquareMatrix<T> SquareMatrix<T>::identity(std::size_t dim) {
  SquareMatrix m(dim);
  for (std::size_t i = 0; i < dim; ++i) m(i, i) = T(1);
  return m;
}

template <typename T>
void matmul_into(const T* __restrict a, const T* __restrict b, T* __restrict out, std::size_t d) {
  for (std::size_t i = 0; i < d; ++i) {
    T* row = out + i * d;
    std::fill(row, row + d, T(0));
    const T* arow = a + i * d;
    for (std::size_t k = 0; k < d; ++k) {
      const T aik = arow[k];
      const T* brow = b + k * d;
      for (std::size_t j = 0; j < d; ++j) row[j] += aik * brow[j];
    }
  }
}

template <typename T>
void matmul_at_b_into(const T* __restrict a, const T* __restrict b, T* __restrict out,
                      std::size_t d) {
  std::fill(out, out + d * d, T(0));
  for (std::size_t k = 0; k < d; ++k) {
    const T* arow = a + k * d;
    const T* brow = b + k * d;
    for (std::size_t i = 0; i < d; ++i) {
      const T aki = arow[i];
      T* row = out + i * d;
      for (std::size_t j = 0; j < d; ++j) row[j] += aki * brow[j];
    }
  }
}

template <typename T>
void matmul_a_bt_into(const T* __restrict a, const T* __restrict b, T* __restrict out,
                      std::size_t d) {
  for (std::size_t i = 0; i < d; ++i) {
    const T* arow = a + i * d;
    for (std::size_t j = 0; j < d; ++j) {
      const T* brow = b + j * d;
      T acc = T(0);
      for (std::size_t k = 0; k < d; ++k) acc += arow[k] * brow[k];
      out[i * d + j] = acc;
    }
  }
}

namespace {

template <typename T>
void require_same_dim(const SquareMatrix<T>& a, const SquareMatrix<T>& b) {
  if (a.dim() != b.dim()) {
    throw StructuralError("matrix dimension mismatch: " + std::to_string(a.dim()) + " vs " +
                          std::to_string(b.dim()));
  }
}

template <typename T>
void require_uniform(std::span<const SquareMatrix<T>> ms) {
  for (const auto& m : ms) require_same_dim(ms.front(), m);
}

template <typename T>
std::vector<SquareMatrix<T>> balanced_scan(std::span<const SquareMatrix<T>> ms) {
  const std::size_t n = ms.size();
  if (n <= 1) return {ms.begin(), ms.end()};

  std::vector<SquareMatrix<T>> reduced;
  reduced.reserve((n + 1) / 2);
  for (std::size_t i = 0; i + 1 < n; i += 2) reduced.push_back(matmul(ms[i], ms[i + 1]));
  if (n % 2 == 1) reduced.push_back(ms[n - 1]);

  const auto sub = balanced_scan<T>(reduced);

  std::vector<SquareMatrix<T>> out(n);
  out[0] = ms[0];
  for (std::size_t i = 1; i < n; ++i) {
    if (i % 2 == 1) {
      out[i] = sub[i / 2];
    } else if (i == n - 1) {
      out[i] = sub.back();
    } else {
      out[i] = matmul(sub[i / 2 - 1], ms[i]);
    }
  }
  return out;
}

}  // namespace

template <typename T>
SquareMatrix<T> matmul(const SquareMatrix<T>& a, const SquareMatrix<T>& b) {
  require_same_dim(a, b);
  SquareMatrix<T> out(a.dim());
  matmul_into(a.entries().data(), b.entries().data(), out.entries().data(), a.dim());
  return out;
}

template <typename T>
SquareMatrix<T> transpose(const SquareMatrix<T>& m) {
  SquareMatrix<T> out(m.dim());
  for (std::size_t i = 0; i < m.dim(); ++i)
    for (std::size_t j = 0; j < m.dim(); ++j) out(j, i) = m(i, j);
  return out;
}

template <typename T>
RealVector<T> flatten(const SquareMatrix<T>& m) {
  return {m.entries().begin(), m.entries().end()};
}

template <typename T>
SquareMatrix<T> unflatten(std::span<const T> v) {
  const auto d = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(v.size()))));
  if (d * d != v.size()) {
    throw StructuralError("cannot unflatten a vector of length " + std::to_string(v.size()));
  }
  return SquareMatrix<T>(d, std::vector<T>(v.begin(), v.end()));
}

template <typename T>
RealVector<T> concat(std::span<const RealVector<T>> parts) {
  if (parts.empty()) throw StructuralError("concat of an empty list");
  std::size_t total = 0;
  for (const auto& p : parts) total += p.size();
  RealVector<T> out;
  out.reserve(total);
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

template <typename T>
SquareMatrix<T> chain_product(std::span<const SquareMatrix<T>> ms, Direction direction,
                              std::size_t empty_dim) {
  if (ms.empty()) return SquareMatrix<T>::identity(empty_dim);
  require_uniform(ms);
  const std::size_t d = ms.front().dim();
  const std::size_t n = ms.size();
  SquareMatrix<T> acc = direction == Direction::left_to_right ? ms.front() : ms.back();
  SquareMatrix<T> tmp(d);
  for (std::size_t step = 1; step < n; ++step) {
    const auto& next = direction == Direction::left_to_right ? ms[step] : ms[n - 1 - step];
    matmul_into(acc.entries().data(), next.entries().data(), tmp.entries().data(), d);
    std::swap(acc, tmp);
  }
  return acc;
}

template <typename T>
SquareMatrix<T> tree_product(std::span<const SquareMatrix<T>> ms) {
  if (ms.empty()) throw StructuralError("tree_product of an empty list has no dimension");
  require_uniform(ms);
  std::vector<SquareMatrix<T>> level(ms.begin(), ms.end());
  while (level.size() > 1) {
    std::vector<SquareMatrix<T>> next;
    next.reserve((level.size() + 1) / 2);
    for (std::size_t i = 0; i + 1 < level.size(); i += 2) next.push_back(matmul(level[i], level[i + 1]));
    if (level.size() % 2 == 1) next.push_back(std::move(level.back()));
    level = std::move(next);
  }
  return std::move(level.front());
}

template <typename T>
std::vector<SquareMatrix<T>> prefix_scan(std::span<const SquareMatrix<T>> ms,
                                         ScanSchedule schedule) {
  if (ms.empty()) return {};
  require_uniform(ms);
  if (schedule == ScanSchedule::balanced) return balanced_scan(ms);

  std::vector<SquareMatrix<T>> out;
  out.reserve(ms.size());
  out.push_back(ms.front());
  for (std::size_t i = 1; i < ms.size(); ++i) out.push_back(matmul(out.back(), ms[i]));
  return out;
}

template <typename T>
std::vector<SquareMatrix<T>> suffix_scan(std::span<const SquareMatrix<T>> ms,
                                         ScanSchedule schedule) {
  // suffix_scan(ms)[i] = prefix_scan(reverse(ms))[n-1-i]
  std::vector<SquareMatrix<T>> reversed(ms.rbegin(), ms.rend());
  auto out = prefix_scan<T>(reversed, schedule);
  std::reverse(out.begin(), out.end());
  return out;
}

template <typename T>
double frobenius_norm(const SquareMatrix<T>& m) {
  double acc = 0.0;
  for (T v : m.entries()) acc += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(acc);
}

template <typename T>
double relative_frobenius_error(const SquareMatrix<T>& a, const SquareMatrix<T>& b) {
  require_same_dim(a, b);
  double diff = 0.0;
  for (std::size_t i = 0; i < a.entries().size(); ++i) {
    const double delta = static_cast<double>(a.entries()[i]) - static_cast<double>(b.entries()[i]);
    diff += delta * delta;
  }
  const double norm = frobenius_norm(b);
  return norm > 0.0 ? std::sqrt(diff) / norm : std::sqrt(diff);
}

template <typename T>
bool all_finite(std::span<const T> values) {
  return std::all_of(values.begin(), values.end(), [](T v) { return std::isfinite(v); });
}

#define CMOW_INSTANTIATE_LINALG(T)                                                              \
  template class SquareMatrix<T>;                                                               \
  template void matmul_into<T>(const T*, const T*, T*, std::size_t);                            \
  template void matmul_at_b_into<T>(const T*, const T*, T*, std::size_t);                       \
  template void matmul_a_bt_into<T>(const T*, const T*, T*, std::size_t);                       \
  template SquareMatrix<T> matmul<T>(const SquareMatrix<T>&, const SquareMatrix<T>&);           \
  template SquareMatrix<T> transpose<T>(const SquareMatrix<T>&);                                \
  template RealVector<T> flatten<T>(const SquareMatrix<T>&);                                    \
  template SquareMatrix<T> unflatten<T>(std::span<const T>);                                    \
  template RealVector<T> concat<T>(std::span<const RealVector<T>>);                             \
  template SquareMatrix<T> chain_product<T>(std::span<const SquareMatrix<T>>, Direction,        \
                                            std::size_t);                                       \
  template SquareMatrix<T> tree_product<T>(std::span<const SquareMatrix<T>>);                   \
  template std::vector<SquareMatrix<T>> prefix_scan<T>(std::span<const SquareMatrix<T>>,        \
                                                       ScanSchedule);                           \
  template std::vector<SquareMatrix<T>> suffix_scan<T>(std::span<const SquareMatrix<T>>,        \
                                                       ScanSchedule);                           \
  template double frobenius_norm<T>(const SquareMatrix<T>&);                                    \
  template double relative_frobenius_error<T>(const SquareMatrix<T>&, const SquareMatrix<T>&); \
  template bool all_finite<T>(std::span<const T>);

CMOW_INSTANTIATE_LINALG(float)
CMOW_INSTANTIATE_LINALG(double)

#undef CMOW_INSTANTIATE_LINALG

}  // namespace cmow
