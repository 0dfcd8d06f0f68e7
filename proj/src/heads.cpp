#include "cmow/heads.hpp"

#include <algorithm>
#include <string>

#include "cmow/errors.hpp"

namespace cmow {

namespace {

template <typename T>
void fill_gaussian(std::vector<T>& values, double stddev, Rng& rng) {
  std::normal_distribution<double> noise(0.0, stddev);
  for (T& v : values) v = static_cast<T>(noise(rng));
}

// out = W x + b for a rows x cols matrix W.
template <typename T>
void affine(std::span<const T> w, std::span<const T> b, std::span<const T> x, std::span<T> out,
            std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* wr = w.data() + r * cols;
    T acc = b[r];
    for (std::size_t c = 0; c < cols; ++c) acc += wr[c] * x[c];
    out[r] = acc;
  }
}

// dW += g x^T, db += g, returns W^T g.
template <typename T>
std::vector<T> affine_backward(std::span<const T> w, std::span<const T> x, std::span<const T> g,
                               std::span<T> dw, std::span<T> db, std::size_t rows,
                               std::size_t cols) {
  std::vector<T> dx(cols, T(0));
  for (std::size_t r = 0; r < rows; ++r) {
    const T gr = g[r];
    if (gr == T(0)) continue;
    db[r] += gr;
    T* dwr = dw.data() + r * cols;
    const T* wr = w.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) {
      dwr[c] += gr * x[c];
      dx[c] += gr * wr[c];
    }
  }
  return dx;
}

void require_dim(std::size_t got, std::size_t expected, const char* what) {
  if (got != expected) {
    throw StructuralError(std::string(what) + " has dimension " + std::to_string(got) +
                          ", head expects " + std::to_string(expected));
  }
}

}  // namespace

void DropoutPolicy::validate() const {
  auto ok = [](double p) { return p >= 0.0 && p < 1.0; };
  if (!ok(p_embed) || !ok(p_hidden)) {
    throw ConfigError("dropout probabilities must lie in [0, 1)");
  }
}

template <typename T>
std::vector<T> dropout_mask(std::size_t n, double p, bool training, Rng& rng) {
  std::vector<T> mask(n, T(1));
  if (!training || p <= 0.0) return mask;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  for (T& m : mask) m = u(rng) < p ? T(0) : keep_scale;
  return mask;
}

ClassifierVariant parse_classifier_variant(std::string_view name) {
  if (name == "linear") return ClassifierVariant::linear;
  if (name == "mlp") return ClassifierVariant::mlp;
  throw ConfigError("unknown classifier head '" + std::string(name) + "'");
}

std::string_view to_string(ClassifierVariant v) {
  return v == ClassifierVariant::linear ? "linear" : "mlp";
}

template <typename T>
MlmHead<T> init_mlm_head(std::size_t in_dim, std::size_t n_vocab, Rng& rng) {
  MlmHead<T> head;
  head.in_dim = in_dim;
  head.n_vocab = n_vocab;
  head.weight.resize(in_dim * n_vocab);
  head.bias.assign(n_vocab, T(0));
  fill_gaussian(head.weight, kHeadInitStd, rng);
  return head;
}

std::size_t classifier_parameter_count(ClassifierVariant variant, std::size_t in_dim,
                                       std::size_t classes, std::size_t hidden) {
  if (variant == ClassifierVariant::linear) return in_dim * classes + classes;
  if (hidden == 0) hidden = in_dim;
  return in_dim * hidden + hidden + hidden * classes + classes;
}

template <typename T>
ClassifierHead<T> init_classifier_head(ClassifierVariant variant, std::size_t in_dim,
                                       std::size_t classes, std::size_t hidden, Rng& rng) {
  if (in_dim == 0 || classes == 0) throw ConfigError("classifier needs positive input and class counts");
  ClassifierHead<T> head;
  head.variant = variant;
  head.in_dim = in_dim;
  head.classes = classes;
  if (variant == ClassifierVariant::linear) {
    head.hidden = 0;
    head.w1.resize(classes * in_dim);
    head.b1.assign(classes, T(0));
    fill_gaussian(head.w1, kHeadInitStd, rng);
  } else {
    head.hidden = hidden == 0 ? in_dim : hidden;
    head.w1.resize(head.hidden * in_dim);
    head.b1.assign(head.hidden, T(0));
    head.w2.resize(classes * head.hidden);
    head.b2.assign(classes, T(0));
    fill_gaussian(head.w1, kHeadInitStd, rng);
    fill_gaussian(head.w2, kHeadInitStd, rng);
  }
  return head;
}

template <typename T>
std::vector<T> mlm_row_logits(std::span<const T> x, const MlmHead<T>& head) {
  require_dim(x.size(), head.in_dim, "MLM head input");
  std::vector<T> out(head.n_vocab);
  affine<T>(head.weight, head.bias, x, out, head.n_vocab, head.in_dim);
  return out;
}

template <typename T>
std::vector<T> mlm_row_backward(std::span<const T> x, const MlmHead<T>& head,
                                std::span<const T> grad_logits, MlmHead<T>& grad) {
  return affine_backward<T>(head.weight, x, grad_logits, grad.weight, grad.bias, head.n_vocab,
                            head.in_dim);
}

template <typename T>
std::vector<T> mlm_logits(std::span<const T> per_token, std::size_t rows, const MlmHead<T>& head,
                          const DropoutPolicy& dropout, Rng& rng) {
  require_dim(rows == 0 ? 0 : per_token.size() / rows, head.in_dim, "per-token encoding");
  if (per_token.size() != rows * head.in_dim) {
    throw StructuralError("per-token buffer size does not match rows x in_dim");
  }
  std::vector<T> out(rows * head.n_vocab);
  std::vector<T> x(head.in_dim);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto mask = dropout_mask<T>(head.in_dim, dropout.p_embed, dropout.training, rng);
    for (std::size_t c = 0; c < head.in_dim; ++c) x[c] = per_token[r * head.in_dim + c] * mask[c];
    affine<T>(head.weight, head.bias, x, std::span<T>(out).subspan(r * head.n_vocab, head.n_vocab),
              head.n_vocab, head.in_dim);
  }
  return out;
}

template <typename T>
ClassifierTrace<T> classify_traced(std::span<const T> features, const ClassifierHead<T>& head,
                                   const DropoutPolicy& dropout, Rng& rng) {
  require_dim(features.size(), head.in_dim, "classifier input");
  ClassifierTrace<T> trace;
  trace.input_mask = dropout_mask<T>(head.in_dim, dropout.p_embed, dropout.training, rng);
  trace.input.resize(head.in_dim);
  for (std::size_t i = 0; i < head.in_dim; ++i) trace.input[i] = features[i] * trace.input_mask[i];

  trace.logits.resize(head.classes);
  if (head.variant == ClassifierVariant::linear) {
    affine<T>(head.w1, head.b1, trace.input, trace.logits, head.classes, head.in_dim);
    return trace;
  }
  trace.pre_hidden.resize(head.hidden);
  affine<T>(head.w1, head.b1, trace.input, trace.pre_hidden, head.hidden, head.in_dim);
  trace.hidden_mask = dropout_mask<T>(head.hidden, dropout.p_hidden, dropout.training, rng);
  trace.hidden.resize(head.hidden);
  for (std::size_t i = 0; i < head.hidden; ++i) {
    trace.hidden[i] = std::max(trace.pre_hidden[i], T(0)) * trace.hidden_mask[i];
  }
  affine<T>(head.w2, head.b2, trace.hidden, trace.logits, head.classes, head.hidden);
  return trace;
}

template <typename T>
std::vector<T> classify(std::span<const T> features, const ClassifierHead<T>& head,
                        const DropoutPolicy& dropout, Rng& rng) {
  return classify_traced(features, head, dropout, rng).logits;
}

template <typename T>
std::vector<T> classify_backward(const ClassifierTrace<T>& trace, const ClassifierHead<T>& head,
                                 std::span<const T> grad_logits, ClassifierHead<T>& grad) {
  std::vector<T> d_input;
  if (head.variant == ClassifierVariant::linear) {
    d_input = affine_backward<T>(head.w1, trace.input, grad_logits, grad.w1, grad.b1, head.classes,
                                 head.in_dim);
  } else {
    auto d_hidden = affine_backward<T>(head.w2, trace.hidden, grad_logits, grad.w2, grad.b2,
                                       head.classes, head.hidden);
    for (std::size_t i = 0; i < head.hidden; ++i) {
      d_hidden[i] = trace.pre_hidden[i] > T(0) ? d_hidden[i] * trace.hidden_mask[i] : T(0);
    }
    d_input = affine_backward<T>(head.w1, trace.input, d_hidden, grad.w1, grad.b1, head.hidden,
                                 head.in_dim);
  }
  for (std::size_t i = 0; i < head.in_dim; ++i) d_input[i] *= trace.input_mask[i];
  return d_input;
}

#define CMOW_INSTANTIATE_HEADS(T)                                                                \
  template std::vector<T> dropout_mask<T>(std::size_t, double, bool, Rng&);                      \
  template MlmHead<T> init_mlm_head<T>(std::size_t, std::size_t, Rng&);                          \
  template ClassifierHead<T> init_classifier_head<T>(ClassifierVariant, std::size_t,             \
                                                     std::size_t, std::size_t, Rng&);            \
  template std::vector<T> mlm_row_logits<T>(std::span<const T>, const MlmHead<T>&);              \
  template std::vector<T> mlm_row_backward<T>(std::span<const T>, const MlmHead<T>&,             \
                                              std::span<const T>, MlmHead<T>&);                  \
  template std::vector<T> mlm_logits<T>(std::span<const T>, std::size_t, const MlmHead<T>&,      \
                                        const DropoutPolicy&, Rng&);                             \
  template ClassifierTrace<T> classify_traced<T>(std::span<const T>, const ClassifierHead<T>&,   \
                                                 const DropoutPolicy&, Rng&);                    \
  template std::vector<T> classify<T>(std::span<const T>, const ClassifierHead<T>&,              \
                                      const DropoutPolicy&, Rng&);                               \
  template std::vector<T> classify_backward<T>(const ClassifierTrace<T>&,                        \
                                               const ClassifierHead<T>&, std::span<const T>,     \
                                               ClassifierHead<T>&);

CMOW_INSTANTIATE_HEADS(float)
CMOW_INSTANTIATE_HEADS(double)

#undef CMOW_INSTANTIATE_HEADS

}  // namespace cmow
