#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace cmow {

// wide = 64-bit reals (gradient checks, oracles), narrow = 32-bit (training,
// benchmarks).
enum class Precision { wide, narrow };

enum class Direction { left_to_right, right_to_left };

// Reduction order used by the scans. `sequential` is a plain left fold;
// `balanced` pairs neighbours recursively and needs O(log n) dependent
// multiplication rounds.
enum class ScanSchedule { sequential, balanced };

template <typename T>
using RealVector = std::vector<T>;

// Dense d x d matrix stored row-major.
template <typename T>
class SquareMatrix {
 public:
  SquareMatrix() = default;
  explicit SquareMatrix(std::size_t dim) : dim_(dim), entries_(dim * dim, T(0)) {}
  SquareMatrix(std::size_t dim, std::vector<T> entries);

  static SquareMatrix identity(std::size_t dim);

  std::size_t dim() const { return dim_; }
  T& operator()(std::size_t row, std::size_t col) { return entries_[row * dim_ + col]; }
  T operator()(std::size_t row, std::size_t col) const { return entries_[row * dim_ + col]; }

  std::span<T> entries() { return entries_; }
  std::span<const T> entries() const { return entries_; }

  bool operator==(const SquareMatrix&) const = default;

 private:
  std::size_t dim_ = 0;
  std::vector<T> entries_;
};

// Raw kernels over row-major d x d blocks. `out` must not alias the inputs.
template <typename T>
void matmul_into(const T* a, const T* b, T* out, std::size_t d);
// out = a^T * b
template <typename T>
void matmul_at_b_into(const T* a, const T* b, T* out, std::size_t d);
// out = a * b^T
template <typename T>
void matmul_a_bt_into(const T* a, const T* b, T* out, std::size_t d);

template <typename T>
SquareMatrix<T> matmul(const SquareMatrix<T>& a, const SquareMatrix<T>& b);

template <typename T>
SquareMatrix<T> transpose(const SquareMatrix<T>& m);

template <typename T>
RealVector<T> flatten(const SquareMatrix<T>& m);

// Inverse of flatten; the vector length must be a perfect square.
template <typename T>
SquareMatrix<T> unflatten(std::span<const T> v);

template <typename T>
RealVector<T> concat(std::span<const RealVector<T>> parts);

// Fold of matmul over `ms`. right_to_left multiplies ms[n-1] * ... * ms[0].
// The empty product is the identity of dimension `empty_dim`.
template <typename T>
SquareMatrix<T> chain_product(std::span<const SquareMatrix<T>> ms, Direction direction,
                              std::size_t empty_dim = 0);

// Product ms[0] * ... * ms[n-1] evaluated as a balanced binary tree.
template <typename T>
SquareMatrix<T> tree_product(std::span<const SquareMatrix<T>> ms);

// output[i] = ms[0] * ... * ms[i]
template <typename T>
std::vector<SquareMatrix<T>> prefix_scan(std::span<const SquareMatrix<T>> ms,
                                         ScanSchedule schedule = ScanSchedule::balanced);

// output[i] = ms[n-1] * ms[n-2] * ... * ms[i]
template <typename T>
std::vector<SquareMatrix<T>> suffix_scan(std::span<const SquareMatrix<T>> ms,
                                         ScanSchedule schedule = ScanSchedule::balanced);

template <typename T>
double frobenius_norm(const SquareMatrix<T>& m);

// ||a - b||_F / ||b||_F (absolute difference when b is zero).
template <typename T>
double relative_frobenius_error(const SquareMatrix<T>& a, const SquareMatrix<T>& b);

template <typename T>
bool all_finite(std::span<const T> values);

}  // namespace cmow
