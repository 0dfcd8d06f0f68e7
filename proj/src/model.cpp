#include "cmow/model.hpp"

#include "cmow/errors.hpp"

namespace cmow {

namespace {

template <typename To, typename From>
std::vector<To> convert_vector(const std::vector<From>& v) {
  return std::vector<To>(v.begin(), v.end());
}

template <typename T>
void zero(std::vector<T>& v) {
  std::fill(v.begin(), v.end(), T(0));
}

}  // namespace

template <typename T>
GradientBundle<T> zeros_like(const Model<T>& model) {
  const auto& e = model.embeddings;
  GradientBundle<T> g;
  g.embeddings = EmbeddingTable<T>(e.kind(), e.d(), e.d_vec(), e.n_vocab());
  if (model.mlm) {
    g.mlm = *model.mlm;
    zero(g.mlm->weight);
    zero(g.mlm->bias);
  }
  if (model.classifier) {
    g.classifier = *model.classifier;
    zero(g.classifier->w1);
    zero(g.classifier->b1);
    zero(g.classifier->w2);
    zero(g.classifier->b2);
  }
  return g;
}

template <typename T>
std::vector<std::span<T>> parameter_groups(Model<T>& model) {
  std::vector<std::span<T>> groups;
  auto push = [&](std::span<T> s) {
    if (!s.empty()) groups.push_back(s);
  };
  push(model.embeddings.forward_block());
  push(model.embeddings.backward_block());
  push(model.embeddings.vector_block());
  if (model.mlm) {
    push(model.mlm->weight);
    push(model.mlm->bias);
  }
  if (model.classifier) {
    push(model.classifier->w1);
    push(model.classifier->b1);
    push(model.classifier->w2);
    push(model.classifier->b2);
  }
  return groups;
}

template <typename T>
std::vector<std::span<const T>> parameter_groups(const Model<T>& model) {
  auto groups = parameter_groups(const_cast<Model<T>&>(model));
  return {groups.begin(), groups.end()};
}

template <typename T>
std::size_t total_parameter_count(const Model<T>& model) {
  std::size_t n = 0;
  for (const auto& g : parameter_groups(model)) n += g.size();
  return n;
}

template <typename T>
void add_into(GradientBundle<T>& acc, const GradientBundle<T>& other) {
  auto dst = parameter_groups(acc);
  const auto src = parameter_groups(other);
  if (dst.size() != src.size()) throw StructuralError("gradient bundles are not congruent");
  for (std::size_t g = 0; g < dst.size(); ++g) {
    if (dst[g].size() != src[g].size()) throw StructuralError("gradient bundles are not congruent");
    for (std::size_t i = 0; i < dst[g].size(); ++i) dst[g][i] += src[g][i];
  }
}

template <typename To, typename From>
Model<To> convert_model(const Model<From>& model) {
  Model<To> out;
  out.embeddings = convert_table<To>(model.embeddings);
  if (model.mlm) {
    MlmHead<To> h;
    h.in_dim = model.mlm->in_dim;
    h.n_vocab = model.mlm->n_vocab;
    h.weight = convert_vector<To>(model.mlm->weight);
    h.bias = convert_vector<To>(model.mlm->bias);
    out.mlm = std::move(h);
  }
  if (model.classifier) {
    const auto& c = *model.classifier;
    ClassifierHead<To> h;
    h.variant = c.variant;
    h.in_dim = c.in_dim;
    h.hidden = c.hidden;
    h.classes = c.classes;
    h.w1 = convert_vector<To>(c.w1);
    h.b1 = convert_vector<To>(c.b1);
    h.w2 = convert_vector<To>(c.w2);
    h.b2 = convert_vector<To>(c.b2);
    out.classifier = std::move(h);
  }
  return out;
}

template <typename T>
void round_to_float32(Model<T>& model) {
  for (auto group : parameter_groups(model)) {
    for (T& v : group) v = static_cast<T>(static_cast<float>(v));
  }
}

#define CMOW_INSTANTIATE_MODEL(T)                                                         \
  template GradientBundle<T> zeros_like<T>(const Model<T>&);                              \
  template std::vector<std::span<T>> parameter_groups<T>(Model<T>&);                      \
  template std::vector<std::span<const T>> parameter_groups<T>(const Model<T>&);          \
  template std::size_t total_parameter_count<T>(const Model<T>&);                         \
  template void add_into<T>(GradientBundle<T>&, const GradientBundle<T>&);                \
  template void round_to_float32<T>(Model<T>&);

CMOW_INSTANTIATE_MODEL(float)
CMOW_INSTANTIATE_MODEL(double)

template Model<float> convert_model<float, double>(const Model<double>&);
template Model<double> convert_model<double, float>(const Model<float>&);
template Model<float> convert_model<float, float>(const Model<float>&);
template Model<double> convert_model<double, double>(const Model<double>&);

#undef CMOW_INSTANTIATE_MODEL

}  // namespace cmow
