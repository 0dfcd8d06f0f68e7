#include "cmow/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cmow/errors.hpp"

namespace cmow {

template <typename T>
std::vector<double> log_softmax(std::span<const T> logits, double temperature) {
  if (logits.empty()) throw StructuralError("log_softmax of an empty logit vector");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  std::vector<double> out(logits.size());
  double max = -INFINITY;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = static_cast<double>(logits[i]) / temperature;
    max = std::max(max, out[i]);
  }
  double sum = 0.0;
  for (double v : out) sum += std::exp(v - max);
  const double log_norm = max + std::log(sum);
  for (double& v : out) v -= log_norm;
  return out;
}

template <typename T>
LossWithGrad<T> hard_loss(std::span<const T> logits, std::size_t label) {
  if (label >= logits.size()) {
    throw StructuralError("label " + std::to_string(label) + " outside " +
                          std::to_string(logits.size()) + " classes");
  }
  const auto logp = log_softmax(logits);
  LossWithGrad<T> out;
  out.loss = -logp[label];
  out.grad.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out.grad[i] = static_cast<T>(std::exp(logp[i]) - (i == label ? 1.0 : 0.0));
  }
  return out;
}

template <typename T>
double hard_loss_mean(std::span<const T> logits, std::span<const std::size_t> labels,
                      std::size_t classes) {
  if (labels.empty() || logits.size() != labels.size() * classes) {
    throw StructuralError("hard_loss_mean: logits do not match labels x classes");
  }
  double total = 0.0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    total += hard_loss<T>(logits.subspan(r * classes, classes), labels[r]).loss;
  }
  return total / static_cast<double>(labels.size());
}

template <typename T>
LossWithGrad<T> soft_loss(std::span<const T> logits, const TeacherDistribution& teacher,
                          double temperature) {
  if (teacher.support.size() != teacher.probs.size() || teacher.support.empty()) {
    throw StructuralError("teacher support and probabilities differ in length");
  }
  double mass = 0.0;
  for (double p : teacher.probs) mass += p;
  if (std::abs(mass - 1.0) > 1e-6) {
    throw StructuralError("teacher distribution sums to " + std::to_string(mass) + ", not 1");
  }
  const auto logp = log_softmax(logits, temperature);
  LossWithGrad<T> out;
  out.grad.assign(logits.size(), T(0));
  std::vector<double> grad(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) grad[i] = std::exp(logp[i]) * mass;
  for (std::size_t k = 0; k < teacher.support.size(); ++k) {
    const std::size_t id = teacher.support[k];
    if (id >= logits.size()) {
      throw StructuralError("teacher support id " + std::to_string(id) + " outside " +
                            std::to_string(logits.size()) + " logits");
    }
    out.loss -= teacher.probs[k] * logp[id];
    grad[id] -= teacher.probs[k];
  }
  for (std::size_t i = 0; i < logits.size(); ++i) out.grad[i] = static_cast<T>(grad[i] / temperature);
  return out;
}

double combined_loss(double hard, double soft, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  return alpha * hard + (1.0 - alpha) * soft;
}

#define CMOW_INSTANTIATE_LOSSES(T)                                                             \
  template std::vector<double> log_softmax<T>(std::span<const T>, double);                     \
  template LossWithGrad<T> hard_loss<T>(std::span<const T>, std::size_t);                      \
  template double hard_loss_mean<T>(std::span<const T>, std::span<const std::size_t>,          \
                                    std::size_t);                                              \
  template LossWithGrad<T> soft_loss<T>(std::span<const T>, const TeacherDistribution&, double);

CMOW_INSTANTIATE_LOSSES(float)
CMOW_INSTANTIATE_LOSSES(double)

#undef CMOW_INSTANTIATE_LOSSES

}  // namespace cmow
