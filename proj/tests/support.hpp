#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "cmow/linalg.hpp"
#include "cmow/tokenizer.hpp"

namespace testing {

inline std::filesystem::path scratch_dir(const std::string& name) {
  static std::atomic<int> counter{0};
  auto dir = std::filesystem::temp_directory_path() /
             ("cmow_test_" + name + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream(path, std::ios::binary) << text;
}

template <typename T>
cmow::SquareMatrix<T> random_matrix(std::size_t d, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  cmow::SquareMatrix<T> m(d);
  for (auto& v : m.entries()) v = static_cast<T>(n(rng));
  return m;
}

// I + noise, keeps long products bounded.
template <typename T>
cmow::SquareMatrix<T> near_identity(std::size_t d, std::mt19937_64& rng, double noise = 0.1) {
  auto m = random_matrix<T>(d, rng, noise);
  for (std::size_t i = 0; i < d; ++i) m(i, i) += T(1);
  return m;
}

// Triple-loop product.
template <typename T>
cmow::SquareMatrix<T> naive_matmul(const cmow::SquareMatrix<T>& a, const cmow::SquareMatrix<T>& b) {
  const std::size_t d = a.dim();
  cmow::SquareMatrix<T> out(d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      T acc = 0;
      for (std::size_t k = 0; k < d; ++k) acc += a(i, k) * b(k, j);
      out(i, j) = acc;
    }
  return out;
}

template <typename T>
cmow::SquareMatrix<T> naive_chain(const std::vector<cmow::SquareMatrix<T>>& ms, std::size_t first,
                                  std::size_t last, std::size_t d) {
  auto acc = cmow::SquareMatrix<T>::identity(d);
  for (std::size_t i = first; i < last; ++i) acc = naive_matmul(acc, ms[i]);
  return acc;
}

inline double relative_error(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-12});
  return std::abs(a - b) / scale;
}

// [PAD] [UNK] [CLS] [SEP] [MASK] followed by `words`.
inline cmow::Vocabulary toy_vocab(const std::vector<std::string>& words) {
  std::vector<std::string> tokens{"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
  tokens.insert(tokens.end(), words.begin(), words.end());
  return cmow::Vocabulary(tokens);
}

}  // namespace testing
