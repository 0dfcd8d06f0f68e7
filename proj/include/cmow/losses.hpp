#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace cmow {

// Teacher probabilities over a (possibly top-K) support of class or vocabulary ids.
struct TeacherDistribution {
  std::vector<std::uint32_t> support;
  std::vector<double> probs;
};

template <typename T>
struct LossWithGrad {
  double loss = 0.0;
  std::vector<T> grad;  // d loss / d logits
};

// log softmax(logits / temperature), computed in double.
template <typename T>
std::vector<double> log_softmax(std::span<const T> logits, double temperature = 1.0);

// -log softmax(logits)[label]
template <typename T>
LossWithGrad<T> hard_loss(std::span<const T> logits, std::size_t label);

// Mean of hard_loss over rows of a rows x classes logit matrix.
template <typename T>
double hard_loss_mean(std::span<const T> logits, std::span<const std::size_t> labels,
                      std::size_t classes);

// -sum_i t_i log softmax(s / T)_i over the teacher's support; no T^2 factor.
// The teacher must sum to 1 within 1e-6.
template <typename T>
LossWithGrad<T> soft_loss(std::span<const T> logits, const TeacherDistribution& teacher,
                          double temperature);

// alpha * hard + (1 - alpha) * soft
double combined_loss(double hard, double soft, double alpha);

}  // namespace cmow
