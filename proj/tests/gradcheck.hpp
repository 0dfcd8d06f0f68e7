#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "cmow/distill_io.hpp"
#include "cmow/model.hpp"
#include "cmow/training.hpp"

namespace testing {

struct GradCheckResult {
  std::size_t checked = 0;
  std::size_t floored = 0;  // pairs below the floor, compared absolutely
  double worst_relative = 0.0;
  std::string worst_where;
};

// Central differences over every parameter of `model`. The relative error of
// a parameter is |a - n| / max(|a|, |n|, floor). Rounding in a double central
// difference is about 1e-16 * |L| / h, so with h = 1e-5 gradients below ~1e-6
// carry no relative information and are measured against the floor.
inline GradCheckResult finite_difference_check(
    cmow::Model<double>& model, const std::function<double(const cmow::Model<double>&)>& loss,
    const cmow::GradientBundle<double>& analytic, double h = 1e-5, double floor = 1e-6) {
  static const char* kGroupNames[] = {"forward", "backward", "vectors", "mlm.weight", "mlm.bias",
                                      "cls.w1",  "cls.b1",   "cls.w2",  "cls.b2"};
  auto params = cmow::parameter_groups(model);
  const auto grads = cmow::parameter_groups(analytic);
  // Names follow the fixed group order with absent groups skipped.
  std::vector<std::string> names;
  const bool present[] = {!model.embeddings.forward_block().empty(), !model.embeddings.backward_block().empty(),
                          !model.embeddings.vector_block().empty(),  model.mlm.has_value(),
                          model.mlm.has_value(),                     model.classifier.has_value(),
                          model.classifier.has_value(),
                          model.classifier && !model.classifier->w2.empty(),
                          model.classifier && !model.classifier->b2.empty()};
  for (std::size_t i = 0; i < 9; ++i)
    if (present[i]) names.push_back(kGroupNames[i]);

  GradCheckResult result;
  for (std::size_t g = 0; g < params.size(); ++g) {
    for (std::size_t i = 0; i < params[g].size(); ++i) {
      const double saved = params[g][i];
      params[g][i] = saved + h;
      const double up = loss(model);
      params[g][i] = saved - h;
      const double down = loss(model);
      params[g][i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double a = grads[g][i];
      const double scale = std::max(std::abs(a), std::abs(numeric));
      const double rel = std::abs(a - numeric) / std::max(scale, floor);
      ++result.checked;
      result.floored += scale < floor;
      if (rel > result.worst_relative) {
        result.worst_relative = rel;
        char buf[96];
        std::snprintf(buf, sizeof buf, "[%zu] analytic %.9e numeric %.9e", i, a, numeric);
        result.worst_where = (g < names.size() ? names[g] : "group" + std::to_string(g)) + buf;
      }
    }
  }
  return result;
}

// A small model with every parameter group populated.
inline cmow::Model<double> small_model(cmow::EmbeddingKind kind, std::size_t d, std::size_t d_vec,
                                       std::size_t n_vocab, std::size_t classes, bool mlm,
                                       std::size_t classifier_in, cmow::ClassifierVariant variant,
                                       std::uint64_t seed) {
  cmow::Model<double> model{cmow::init_embeddings<double>(kind, d, d_vec, n_vocab, 0.3, seed), {}, {}};
  cmow::Rng rng(seed + 1);
  // Larger head weights than the default init so every path carries signal.
  auto widen = [&](std::vector<double>& w) {
    std::normal_distribution<double> n(0.0, 0.5);
    for (auto& v : w) v = n(rng);
  };
  if (mlm) {
    model.mlm = cmow::init_mlm_head<double>(cmow::per_token_dim(model.embeddings), n_vocab, rng);
    widen(model.mlm->weight);
    widen(model.mlm->bias);
  }
  if (classifier_in > 0) {
    model.classifier = cmow::init_classifier_head<double>(variant, classifier_in, classes, 5, rng);
    widen(model.classifier->w1);
    widen(model.classifier->b1);
    widen(model.classifier->w2);
    widen(model.classifier->b2);
  }
  return model;
}

inline cmow::TeacherDistribution random_teacher(std::size_t labels, std::size_t support,
                                                std::mt19937_64& rng) {
  cmow::TeacherDistribution t;
  std::vector<std::uint32_t> all(labels);
  for (std::size_t i = 0; i < labels; ++i) all[i] = static_cast<std::uint32_t>(i);
  std::shuffle(all.begin(), all.end(), rng);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  double total = 0;
  for (std::size_t i = 0; i < support; ++i) {
    t.support.push_back(all[i]);
    t.probs.push_back(u(rng));
    total += t.probs.back();
  }
  for (auto& p : t.probs) p /= total;
  return t;
}

}  // namespace testing
