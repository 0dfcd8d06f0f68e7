#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace cmow {

using Rng = std::mt19937_64;

// p_embed drops entries of the encoder output fed to a head; p_hidden drops
// MLP hidden units. Inverted scaling keeps expectations unchanged.
struct DropoutPolicy {
  double p_embed = 0.0;
  double p_hidden = 0.0;
  bool training = false;

  void validate() const;
};

// Multiplicative mask (0 or 1/(1-p)) for n units; all ones when p == 0 or
// when not training. Consumes rng draws only when it actually drops.
template <typename T>
std::vector<T> dropout_mask(std::size_t n, double p, bool training, Rng& rng);

// Linear map from a per-token representation to vocabulary logits.
template <typename T>
struct MlmHead {
  std::size_t in_dim = 0;
  std::size_t n_vocab = 0;
  std::vector<T> weight;  // n_vocab x in_dim, row-major
  std::vector<T> bias;    // n_vocab

  std::size_t parameter_count() const { return weight.size() + bias.size(); }
};

enum class ClassifierVariant : std::uint32_t { linear = 0, mlp = 1 };

ClassifierVariant parse_classifier_variant(std::string_view name);
std::string_view to_string(ClassifierVariant v);

// linear: logits = W1 x + b1 (W1 is classes x in_dim).
// mlp:    logits = W2 dropout(relu(W1 x + b1)) + b2 (W1 is hidden x in_dim).
template <typename T>
struct ClassifierHead {
  ClassifierVariant variant = ClassifierVariant::mlp;
  std::size_t in_dim = 0;
  std::size_t hidden = 0;  // 0 for linear heads
  std::size_t classes = 0;
  std::vector<T> w1, b1, w2, b2;

  std::size_t parameter_count() const { return w1.size() + b1.size() + w2.size() + b2.size(); }
};

// Weights ~ N(0, 0.02^2), biases zero.
inline constexpr double kHeadInitStd = 0.02;

template <typename T>
MlmHead<T> init_mlm_head(std::size_t in_dim, std::size_t n_vocab, Rng& rng);

// hidden == 0 selects hidden = in_dim for MLP heads.
template <typename T>
ClassifierHead<T> init_classifier_head(ClassifierVariant variant, std::size_t in_dim,
                                       std::size_t classes, std::size_t hidden, Rng& rng);

std::size_t classifier_parameter_count(ClassifierVariant variant, std::size_t in_dim,
                                       std::size_t classes, std::size_t hidden);

// Logits for every row of a per-token encoding (rows x in_dim values).
// Returns rows x n_vocab.
template <typename T>
std::vector<T> mlm_logits(std::span<const T> per_token, std::size_t rows, const MlmHead<T>& head,
                          const DropoutPolicy& dropout, Rng& rng);

// Single-row affine map W x + b, no dropout.
template <typename T>
std::vector<T> mlm_row_logits(std::span<const T> x, const MlmHead<T>& head);

// Accumulates dW += g x^T, db += g into `grad` and returns W^T g.
template <typename T>
std::vector<T> mlm_row_backward(std::span<const T> x, const MlmHead<T>& head,
                                std::span<const T> grad_logits, MlmHead<T>& grad);

// Intermediate values of one classifier forward pass, kept for backprop.
template <typename T>
struct ClassifierTrace {
  std::vector<T> input_mask;   // dropout on the input
  std::vector<T> input;        // input after dropout
  std::vector<T> pre_hidden;   // W1 x + b1 (mlp)
  std::vector<T> hidden_mask;  // dropout on relu output (mlp)
  std::vector<T> hidden;       // relu + dropout (mlp)
  std::vector<T> logits;
};

template <typename T>
std::vector<T> classify(std::span<const T> features, const ClassifierHead<T>& head,
                        const DropoutPolicy& dropout, Rng& rng);

template <typename T>
ClassifierTrace<T> classify_traced(std::span<const T> features, const ClassifierHead<T>& head,
                                   const DropoutPolicy& dropout, Rng& rng);

// Accumulates parameter gradients into `grad` (same shapes as `head`) and
// returns d loss / d features.
template <typename T>
std::vector<T> classify_backward(const ClassifierTrace<T>& trace, const ClassifierHead<T>& head,
                                 std::span<const T> grad_logits, ClassifierHead<T>& grad);

}  // namespace cmow
