#pragma once

#include <optional>
#include <span>
#include <vector>

#include "cmow/embeddings.hpp"
#include "cmow/heads.hpp"

namespace cmow {

template <typename T>
struct Model {
  EmbeddingTable<T> embeddings;
  std::optional<MlmHead<T>> mlm;
  std::optional<ClassifierHead<T>> classifier;
};

// Per-parameter-group gradient buffers, shape-congruent with a Model.
template <typename T>
using GradientBundle = Model<T>;

template <typename T>
GradientBundle<T> zeros_like(const Model<T>& model);

// Parameter groups in a fixed order: forward, backward, vectors, MLM weight,
// MLM bias, classifier w1, b1, w2, b2. Absent groups are skipped, so two
// congruent models produce congruent lists.
template <typename T>
std::vector<std::span<T>> parameter_groups(Model<T>& model);

template <typename T>
std::vector<std::span<const T>> parameter_groups(const Model<T>& model);

template <typename T>
std::size_t total_parameter_count(const Model<T>& model);

template <typename T>
void add_into(GradientBundle<T>& acc, const GradientBundle<T>& other);

template <typename To, typename From>
Model<To> convert_model(const Model<From>& model);

// Rounds every parameter through float32, which is what a checkpoint stores.
template <typename T>
void round_to_float32(Model<T>& model);

}  // namespace cmow
