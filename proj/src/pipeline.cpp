#include "cmow/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <thread>

#include "cmow/binary_io.hpp"
#include "cmow/checkpoint.hpp"
#include "cmow/distill_io.hpp"
#include "cmow/encoder.hpp"
#include "cmow/errors.hpp"
#include "cmow/heads.hpp"
#include "cmow/log.hpp"
#include "cmow/model.hpp"
#include "cmow/tokenizer.hpp"
#include "cmow/training.hpp"

namespace cmow {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::size_t kBertVocabSize = 30522;

Precision precision_of(const RunConfig& config) {
  const auto& p = config.text("precision");
  if (p == "wide" || p == "double" || p == "f64") return Precision::wide;
  if (p == "narrow" || p == "float" || p == "f32") return Precision::narrow;
  throw ConfigError("precision must be wide or narrow, got '" + p + "'");
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  SplitMix64 g(seed ^ (a * 0x9E3779B97F4A7C15ULL) ^ (b * 0xD1B54A32D192ED03ULL));
  g.next();
  return g.next();
}

// Calls fn(worker, begin, end) over contiguous chunks of [0, n).
template <typename Fn>
void parallel_chunks(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    if (n > 0) fn(std::size_t{0}, std::size_t{0}, n);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  auto body = [&](std::size_t w) {
    try {
      fn(w, n * w / threads, n * (w + 1) / threads);
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < threads; ++w) pool.emplace_back(body, w);
  body(0);
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::size_t thread_count(const RunConfig& config) {
  const auto t = config.integer("threads");
  if (t < 0) throw ConfigError("threads must be >= 0");
  if (t == 0) return std::max(1u, std::thread::hardware_concurrency());
  return static_cast<std::size_t>(t);
}

fs::path out_dir(const RunConfig& config) {
  const auto p = config.path("out");
  if (!p) throw ConfigError("out must name a directory");
  std::error_code ec;
  fs::create_directories(*p, ec);
  if (ec) throw ConfigError("cannot create output directory " + p->string() + ": " + ec.message());
  return *p;
}

fs::path checkpoint_path(const RunConfig& config) {
  if (config.path("checkpoint")) return config.require_file("checkpoint");
  if (config.path("init")) return config.require_file("init");
  throw ConfigError("checkpoint is not set");
}

std::size_t patience(const RunConfig& config) {
  return std::min(config.size("patience"), config.size("max_epochs"));
}

LossSettings loss_settings(const RunConfig& config) {
  LossSettings loss{config.real("alpha"), config.real("temperature")};
  if (!(loss.alpha >= 0.0 && loss.alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  if (!(loss.temperature > 0.0)) throw ConfigError("temperature must be positive");
  return loss;
}

DropoutPolicy train_dropout(const RunConfig& config) {
  DropoutPolicy p{config.real("p_embed"), config.real("p_hidden"), true};
  p.validate();
  return p;
}

OptimizerConfig optimizer_config(const RunConfig& config, std::size_t steps_per_epoch) {
  OptimizerConfig oc;
  oc.learning_rate = config.real("lr");
  oc.grad_clip = config.real("grad_clip");
  oc.warmup_steps = config.size("warmup");
  oc.total_steps = steps_per_epoch * config.size("max_epochs");
  if (!(oc.learning_rate > 0.0)) throw ConfigError("lr must be positive");
  return oc;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed(seed, epoch, 0x5348));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < n; i += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  }
  return batches;
}

// [CLS] text [SEP], content truncated to max_len - 2.
std::vector<TokenId> sentence_ids(std::string_view text, const Vocabulary& vocab, std::size_t max_len) {
  const auto seq = tokenize(text, vocab);
  if (seq.ids.empty()) return {vocab.specials().cls, vocab.specials().sep};
  return build_model_input(seq, nullptr, PairScheme::joint, vocab, max_len).sequences[0].ids;
}

PairEncoding parse_encoding(const std::string& name) {
  if (name == "diffcat") return PairEncoding::diffcat;
  if (name == "joint") return PairEncoding::joint;
  throw ConfigError("encoding must be joint or diffcat, got '" + name + "'");
}

std::string_view to_string(PairEncoding e) { return e == PairEncoding::diffcat ? "diffcat" : "joint"; }

std::vector<ClassificationExample> build_examples(const std::vector<ExampleRow>& rows, const Vocabulary& vocab,
                                                  PairEncoding encoding, std::size_t max_len) {
  const auto scheme = encoding == PairEncoding::diffcat ? PairScheme::separate : PairScheme::joint;
  const auto& sp = vocab.specials();
  std::vector<ClassificationExample> out;
  out.reserve(rows.size());
  for (const auto& row : rows) {
    ClassificationExample ex;
    ex.label = row.label;
    auto a = tokenize(row.a, vocab);
    if (a.ids.empty()) a.ids.push_back(sp.unk);
    if (row.b) {
      auto b = tokenize(*row.b, vocab);
      if (b.ids.empty()) b.ids.push_back(sp.unk);
      for (auto& s : build_model_input(a, &b, scheme, vocab, max_len).sequences) ex.sequences.push_back(std::move(s.ids));
    } else {
      for (auto& s : build_model_input(a, nullptr, scheme, vocab, max_len).sequences) ex.sequences.push_back(std::move(s.ids));
    }
    out.push_back(std::move(ex));
  }
  return out;
}

BinnedRegression parse_bins(const std::string& text) {
  if (text == "default" || text == "true") return BinnedRegression{};
  const auto parts = split_list(text);
  if (parts.size() != 3) throw ConfigError("task.binned must be 'default' or 'lo,hi,width', got '" + text + "'");
  BinnedRegression b;
  try {
    b.lo = std::stod(parts[0]);
    b.hi = std::stod(parts[1]);
    b.width = std::stod(parts[2]);
  } catch (const std::exception&) {
    throw ConfigError("task.binned has a non-numeric field: '" + text + "'");
  }
  return b;
}

std::string metric_names(const TaskSpec& spec) {
  std::string s;
  for (auto m : spec.metrics) {
    if (!s.empty()) s += "+";
    s += std::string(to_string(m));
  }
  return s;
}

json report_json(const MetricReport& report) {
  json j = json::object();
  for (const auto& [m, v] : report.values) j[std::string(to_string(m))] = v;
  return j;
}

template <typename T>
void check_explicit_dims(const RunConfig& config, const EmbeddingTable<T>& table, const std::string& what) {
  const auto dims = model_dims(config);
  if (config.is_set("kind") && dims.kind != table.kind()) {
    throw StructuralError(what + " has kind " + std::string(to_string(table.kind())) + ", config asks for " +
                          std::string(to_string(dims.kind)));
  }
  if (config.is_set("d") && has_matrices(table.kind()) && dims.d != table.d()) {
    throw StructuralError(what + " has d = " + std::to_string(table.d()) + ", config asks for d = " +
                          std::to_string(dims.d));
  }
  if (config.is_set("d_vec") && has_vectors(table.kind()) && dims.d_vec != table.d_vec()) {
    throw StructuralError(what + " has d_vec = " + std::to_string(table.d_vec()) + ", config asks for d_vec = " +
                          std::to_string(dims.d_vec));
  }
}

template <typename T>
void check_vocab(const EmbeddingTable<T>& table, const Vocabulary& vocab, const std::string& what) {
  if (table.n_vocab() != vocab.size()) {
    throw StructuralError(what + " has " + std::to_string(table.n_vocab()) + " vocabulary rows, vocab file has " +
                          std::to_string(vocab.size()) + " tokens");
  }
}

// Random embeddings, or the embeddings of the `init` checkpoint with its
// dimensions written back into `resolved`.
template <typename T>
Model<T> starting_model(const RunConfig& config, RunConfig& resolved, const Vocabulary& vocab,
                        bool keep_mlm_head) {
  if (const auto init = config.path("init")) {
    const auto path = config.require_file("init");
    auto model = load_checkpoint<T>(path);
    const std::string what = "init checkpoint " + path.string();
    check_explicit_dims(config, model.embeddings, what);
    check_vocab(model.embeddings, vocab, what);
    resolved.set("kind", std::string(to_string(model.embeddings.kind())));
    resolved.set("d", std::to_string(model.embeddings.d()));
    resolved.set("d_vec", std::to_string(model.embeddings.d_vec()));
    if (!keep_mlm_head || (model.mlm && model.mlm->in_dim != per_token_dim(model.embeddings))) model.mlm.reset();
    model.classifier.reset();
    logger().info("starting from {}", path.string());
    return model;
  }
  const auto dims = model_dims(config);
  const double sigma = config.real("sigma_init");
  if (!(sigma >= 0.0)) throw ConfigError("sigma_init must be non-negative");
  Model<T> model;
  model.embeddings = init_embeddings<T>(dims.kind, dims.d, dims.d_vec, vocab.size(), sigma, config.u64("seed"));
  return model;
}

template <typename T>
void zero(GradientBundle<T>& g) {
  for (auto group : parameter_groups(g)) std::fill(group.begin(), group.end(), T(0));
}

// Minibatch stepping with per-worker gradient buffers reduced in worker order,
// so results depend on the thread count only through float summation order.
template <typename T>
class Stepper {
 public:
  Stepper(Model<T>& model, OptimizerConfig oc, std::size_t threads, std::size_t batch_size)
      : model_(model), oc_(oc), threads_(std::max<std::size_t>(1, std::min(threads, batch_size))) {
    auto params = parameter_groups(model_);
    adam_ = AdamOptimizer<T>(params);
    for (std::size_t w = 0; w < threads_; ++w) grads_.push_back(zeros_like(model_));
  }

  // per_example(index, grad) returns the unscaled loss of one example.
  template <typename Fn>
  double step(const std::vector<std::size_t>& batch, Fn&& per_example) {
    const std::size_t workers = std::min(threads_, batch.size());
    for (std::size_t w = 0; w < workers; ++w) zero(grads_[w]);
    std::vector<double> losses(workers, 0.0);
    parallel_chunks(batch.size(), workers, [&](std::size_t w, std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) losses[w] += per_example(batch[i], &grads_[w]);
    });
    for (std::size_t w = 1; w < workers; ++w) add_into(grads_[0], grads_[w]);
    auto params = parameter_groups(model_);
    auto grads = parameter_groups(grads_[0]);
    adam_.step(params, grads, oc_, ++steps_);
    const double total = std::accumulate(losses.begin(), losses.end(), 0.0);
    if (!std::isfinite(total)) throw NumericalError("training loss became non-finite at step " + std::to_string(steps_));
    return total;
  }

 private:
  Model<T>& model_;
  OptimizerConfig oc_;
  std::size_t threads_;
  AdamOptimizer<T> adam_;
  std::vector<GradientBundle<T>> grads_;
  std::size_t steps_ = 0;
};

class TraceWriter {
 public:
  explicit TraceWriter(const fs::path& path) : out_(path) {
    if (!out_) throw ConfigError("cannot write " + path.string());
  }
  void operator()(const TraceRecord& r) {
    out_ << r.to_json() << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

// ---------------------------------------------------------------------------
// MLM data

struct MlmData {
  std::vector<MlmExample> examples;
  std::vector<std::uint64_t> lines;  // corpus line index of each example
  std::size_t n_train = 0;
};

struct MaskSettings {
  double fraction = kDefaultMaskFraction;
  std::uint64_t seed = 0;
  double dev_fraction = 0.05;
  std::size_t max_len = kDefaultMaxSequenceLength;
};

MlmData prepare_mlm(const fs::path& corpus, const Vocabulary& vocab, const MaskSettings& ms) {
  if (!(ms.fraction > 0.0 && ms.fraction <= 1.0)) throw ConfigError("mask_fraction must lie in (0, 1]");
  if (!(ms.dev_fraction > 0.0 && ms.dev_fraction < 1.0)) throw ConfigError("dev_fraction must lie in (0, 1)");
  const auto lines = read_corpus(corpus);
  MlmData data;
  std::size_t skipped = 0;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto ids = sentence_ids(lines[i], vocab, ms.max_len);
    auto m = mask_sequence(ids, vocab, ms.fraction, ms.seed, i);
    if (m.targets.empty()) {
      ++skipped;
      continue;
    }
    data.examples.push_back(MlmExample{std::move(m.ids), std::move(m.positions), std::move(m.targets), {}});
    data.lines.push_back(i);
  }
  if (skipped) logger().warn("{}: {} lines have no maskable tokens and are skipped", corpus.string(), skipped);
  const std::size_t n = data.examples.size();
  if (n < 2) throw DataError(corpus.string() + ": need at least two lines with maskable tokens, found " + std::to_string(n));
  const auto dev = std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(ms.dev_fraction * static_cast<double>(n))), 1, n - 1);
  data.n_train = n - dev;
  return data;
}

void attach_mlm_teacher(MlmData& data, const RecordStore& store, const Vocabulary& vocab, const MaskSettings& ms,
                        bool need_all, const std::string& what) {
  const auto& h = store.header();
  if (h.n_labels != vocab.size()) {
    throw DataError(what + " covers " + std::to_string(h.n_labels) + " vocabulary ids, vocab file has " +
                    std::to_string(vocab.size()));
  }
  if (h.mask_seed != ms.seed) {
    throw DataError(what + " was exported with mask_seed " + std::to_string(h.mask_seed) + ", run uses " +
                    std::to_string(ms.seed));
  }
  if (std::abs(static_cast<double>(h.mask_fraction) - ms.fraction) > 1e-6) {
    throw DataError(what + " was exported with mask_fraction " + std::to_string(h.mask_fraction) + ", run uses " +
                    std::to_string(ms.fraction));
  }
  std::size_t matched = 0;
  for (std::size_t k = 0; k < data.examples.size(); ++k) {
    auto& ex = data.examples[k];
    ex.teachers.assign(ex.positions.size(), nullptr);
    for (std::size_t s = 0; s < ex.positions.size(); ++s) {
      const SiteKey key{data.lines[k], ex.positions[s]};
      ex.teachers[s] = store.lookup(key);
      if (ex.teachers[s]) {
        ++matched;
      } else if (need_all && k < data.n_train) {
        throw DataError(what + " has no record for corpus line " + std::to_string(key.example) + " position " +
                        std::to_string(key.position));
      }
    }
  }
  if (matched != store.size()) {
    throw DataError(what + ": " + std::to_string(store.size() - matched) +
                    " records do not match any masked site (different corpus or masking?)");
  }
}

template <typename T>
double mlm_dev_loss(const Model<T>& model, const MlmData& data, std::size_t threads) {
  const std::size_t n_dev = data.examples.size() - data.n_train;
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, n_dev));
  std::vector<double> loss(workers, 0.0);
  std::vector<std::size_t> sites(workers, 0);
  const LossSettings hard{1.0, 1.0};
  const DropoutPolicy off{};
  parallel_chunks(n_dev, workers, [&](std::size_t w, std::size_t b, std::size_t e) {
    Rng rng(0);
    for (std::size_t i = b; i < e; ++i) {
      const auto& ex = data.examples[data.n_train + i];
      loss[w] += mlm_objective(model, ex, hard, off, rng, static_cast<GradientBundle<T>*>(nullptr));
      sites[w] += ex.positions.size();
    }
  });
  return std::accumulate(loss.begin(), loss.end(), 0.0) /
         static_cast<double>(std::accumulate(sites.begin(), sites.end(), std::size_t{0}));
}

// ---------------------------------------------------------------------------
// Classification helpers

template <typename T>
std::size_t argmax(const std::vector<T>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

template <typename T>
std::pair<std::vector<std::size_t>, double> predict(const Model<T>& model,
                                                    const std::vector<ClassificationExample>& examples,
                                                    std::size_t threads) {
  std::vector<std::size_t> preds(examples.size());
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, examples.size()));
  std::vector<double> loss(workers, 0.0);
  const DropoutPolicy off{};
  parallel_chunks(examples.size(), workers, [&](std::size_t w, std::size_t b, std::size_t e) {
    Rng rng(0);
    for (std::size_t i = b; i < e; ++i) {
      const auto logits = classification_logits(model, examples[i], off, rng);
      preds[i] = argmax(logits);
      loss[w] += hard_loss<T>(logits, examples[i].label).loss;
    }
  });
  return {std::move(preds), std::accumulate(loss.begin(), loss.end(), 0.0) / static_cast<double>(examples.size())};
}

std::size_t classifier_input_dim(EmbeddingKind kind, std::size_t d, std::size_t d_vec, const TaskSpec& spec,
                                 PairEncoding encoding) {
  const std::size_t pooled = pooled_dim(kind, d, d_vec);
  return spec.arity == TaskArity::pair && encoding == PairEncoding::diffcat ? 3 * pooled : pooled;
}

void write_dev_metrics(const fs::path& path, const TaskSpec& spec, const MetricReport& report, double loss,
                       std::size_t best_epoch) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << std::setprecision(17);
  out << "task\t" << spec.name << '\n';
  out << "best_epoch\t" << best_epoch << '\n';
  for (const auto& [m, v] : report.values) out << to_string(m) << '\t' << v << '\n';
  out << "selection\t" << report.selection << '\n';
  out << "loss\t" << loss << '\n';
}

// ---------------------------------------------------------------------------
// Commands

template <typename T>
json pretrain(const RunConfig& config) {
  const auto vocab_path = config.require_file("vocab");
  const auto corpus_path = config.require_file("corpus");
  const auto teacher_path = config.path("teacher") ? std::optional(config.require_file("teacher")) : std::nullopt;
  auto loss = loss_settings(config);
  const auto dropout = train_dropout(config);
  const std::size_t batch_size = config.size("batch_size");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  const std::size_t threads = thread_count(config);
  const std::uint64_t seed = config.u64("seed");
  const auto out = out_dir(config);

  const auto vocab = load_vocab(vocab_path);
  const MaskSettings ms{config.real("mask_fraction"), config.u64("mask_seed"), config.real("dev_fraction"),
                        config.size("max_len")};
  auto data = prepare_mlm(corpus_path, vocab, ms);
  RunConfig resolved = config;

  RecordStore store;
  if (teacher_path) {
    store = load_records(*teacher_path, RecordKind::mlm);
    attach_mlm_teacher(data, store, vocab, ms, loss.alpha < 1.0, "teacher records " + teacher_path->string());
  } else if (loss.alpha != 1.0) {
    logger().warn("no teacher records; training on hard targets only (alpha = 1)");
    loss.alpha = 1.0;
    resolved.set("alpha", "1");
  }

  Model<T> model = starting_model<T>(config, resolved, vocab, true);
  if (!model.mlm) {
    Rng head_rng(mix_seed(seed, 0, 0x4D4C));
    model.mlm = init_mlm_head<T>(per_token_dim(model.embeddings), vocab.size(), head_rng);
  }
  resolved.echo(out);

  const std::size_t steps_per_epoch = (data.n_train + batch_size - 1) / batch_size;
  Stepper<T> stepper(model, optimizer_config(config, steps_per_epoch), threads, batch_size);
  TraceWriter trace(out / "trace.jsonl");
  Model<T> best = model;
  logger().info("pretraining {} on {} lines ({} dev), {} parameters", to_string(model.embeddings.kind()),
                data.n_train, data.examples.size() - data.n_train, total_parameter_count(model));

  EpochHooks hooks;
  hooks.train_epoch = [&](std::size_t epoch) {
    double total = 0.0;
    std::size_t sites = 0;
    for (const auto& batch : epoch_batches(data.n_train, batch_size, seed, epoch)) {
      std::size_t batch_sites = 0;
      for (auto i : batch) batch_sites += data.examples[i].positions.size();
      const double scale = 1.0 / static_cast<double>(batch_sites);
      total += stepper.step(batch, [&](std::size_t i, GradientBundle<T>* g) {
        Rng rng(mix_seed(seed, epoch, i));
        return mlm_objective(model, data.examples[i], loss, dropout, rng, g, scale);
      });
      sites += batch_sites;
    }
    return total / static_cast<double>(sites);
  };
  hooks.evaluate = [&](std::size_t) {
    const double l = mlm_dev_loss(model, data, threads);
    return EvalResult{-l, l, "neg_mlm_loss"};
  };
  hooks.snapshot_best = [&] { best = model; };
  hooks.restore_best = [&] { model = best; };
  hooks.on_trace = [&](const TraceRecord& r) { trace(r); };
  const auto outcome = train_loop(config.size("max_epochs"), patience(config), hooks);

  round_to_float32(model);
  const double dev_loss = mlm_dev_loss(model, data, threads);
  json meta{{"stage", "pretrain"},
            {"precision", config.text("precision")},
            {"max_len", ms.max_len},
            {"mask_seed", ms.seed},
            {"mask_fraction", ms.fraction},
            {"dev_fraction", ms.dev_fraction},
            {"vocab_size", vocab.size()},
            {"alpha", loss.alpha},
            {"temperature", loss.temperature},
            {"best_epoch", outcome.best_epoch},
            {"epochs_run", outcome.epochs_run},
            {"selection_metric", "neg_mlm_loss"},
            {"selection", -dev_loss},
            {"dev", {{"neg_mlm_loss", -dev_loss}, {"mlm_loss", dev_loss}}},
            {"config", resolved.resolved()}};
  save_checkpoint(out / "model.ckpt", model, meta);
  logger().info("best epoch {} of {}, dev MLM loss {:.6f}", outcome.best_epoch, outcome.epochs_run, dev_loss);

  json summary = meta;
  summary.erase("config");
  summary["checkpoint"] = (out / "model.ckpt").string();
  summary["parameters"] = total_parameter_count(model);
  summary["teacher_records"] = store.size();
  return summary;
}

template <typename T>
json finetune(const RunConfig& config) {
  const auto vocab_path = config.require_file("vocab");
  const auto train_path = config.require_file("task");
  const auto dev_path = config.require_file("dev");
  const auto teacher_path = config.path("teacher") ? std::optional(config.require_file("teacher")) : std::nullopt;
  const auto spec = task_spec_from(config);
  const auto encoding = parse_encoding(config.text("encoding"));
  const auto variant = parse_classifier_variant(config.text("head"));
  auto loss = loss_settings(config);
  const auto dropout = train_dropout(config);
  const std::size_t batch_size = config.size("batch_size");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  const std::size_t threads = thread_count(config);
  const std::size_t max_len = config.size("max_len");
  const std::uint64_t seed = config.u64("seed");
  const bool strict = config.flag("task.strict");
  const auto out = out_dir(config);

  const auto vocab = load_vocab(vocab_path);
  const auto train_rows = read_task_tsv(train_path, spec, strict);
  const auto dev_rows = read_task_tsv(dev_path, spec, strict);
  if (train_rows.empty()) throw DataError(train_path.string() + ": no training rows");
  if (dev_rows.empty()) throw DataError(dev_path.string() + ": no dev rows");
  auto train = build_examples(train_rows, vocab, encoding, max_len);
  const auto dev = build_examples(dev_rows, vocab, encoding, max_len);
  RunConfig resolved = config;

  RecordStore store;
  if (teacher_path) {
    store = load_records(*teacher_path, RecordKind::task);
    const std::string what = "teacher records " + teacher_path->string();
    if (store.header().n_labels != spec.class_count()) {
      throw DataError(what + " cover " + std::to_string(store.header().n_labels) + " classes, task " + spec.name +
                      " has " + std::to_string(spec.class_count()));
    }
    for (std::size_t i = 0; i < train.size(); ++i) {
      train[i].teacher = store.lookup(SiteKey{train_rows[i].id, kNoPosition});
      if (!train[i].teacher && loss.alpha < 1.0) {
        throw DataError(what + " have no record for training row " + std::to_string(train_rows[i].id));
      }
    }
  } else if (loss.alpha != 1.0) {
    logger().warn("no teacher records; training on hard labels only (alpha = 1)");
    loss.alpha = 1.0;
    resolved.set("alpha", "1");
  }

  Model<T> model = starting_model<T>(config, resolved, vocab, false);
  const auto& table = model.embeddings;
  const std::size_t in_dim = classifier_input_dim(table.kind(), table.d(), table.d_vec(), spec, encoding);
  {
    Rng head_rng(mix_seed(seed, 0, 0x434C));
    model.classifier = init_classifier_head<T>(variant, in_dim, spec.class_count(), config.size("mlp_hidden"), head_rng);
  }
  resolved.echo(out);

  const std::size_t steps_per_epoch = (train.size() + batch_size - 1) / batch_size;
  Stepper<T> stepper(model, optimizer_config(config, steps_per_epoch), threads, batch_size);
  TraceWriter trace(out / "trace.jsonl");
  Model<T> best = model;
  logger().info("fine-tuning on {}: {} train rows, {} dev rows, {} parameters", spec.name, train.size(), dev.size(),
                total_parameter_count(model));

  const std::string metric_name = metric_names(spec);
  EpochHooks hooks;
  hooks.train_epoch = [&](std::size_t epoch) {
    double total = 0.0;
    for (const auto& batch : epoch_batches(train.size(), batch_size, seed, epoch)) {
      const double scale = 1.0 / static_cast<double>(batch.size());
      total += stepper.step(batch, [&](std::size_t i, GradientBundle<T>* g) {
        Rng rng(mix_seed(seed, epoch, i));
        return classification_objective(model, train[i], loss, dropout, rng, g, scale);
      });
    }
    return total / static_cast<double>(train.size());
  };
  hooks.evaluate = [&](std::size_t) {
    const auto [preds, l] = predict(model, dev, threads);
    return EvalResult{evaluate_task(spec, preds, dev_rows).selection, l, metric_name};
  };
  hooks.snapshot_best = [&] { best = model; };
  hooks.restore_best = [&] { model = best; };
  hooks.on_trace = [&](const TraceRecord& r) { trace(r); };
  const auto outcome = train_loop(config.size("max_epochs"), patience(config), hooks);

  round_to_float32(model);
  const auto [preds, dev_loss] = predict(model, dev, threads);
  const auto report = evaluate_task(spec, preds, dev_rows);
  json meta{{"stage", "finetune"},
            {"precision", config.text("precision")},
            {"max_len", max_len},
            {"encoding", std::string(to_string(encoding))},
            {"task_spec", task_spec_to_json(spec)},
            {"alpha", loss.alpha},
            {"temperature", loss.temperature},
            {"best_epoch", outcome.best_epoch},
            {"epochs_run", outcome.epochs_run},
            {"selection_metric", metric_name},
            {"selection", report.selection},
            {"dev", report_json(report)},
            {"dev_loss", dev_loss},
            {"config", resolved.resolved()}};
  save_checkpoint(out / "model.ckpt", model, meta);
  write_dev_metrics(out / "dev_metrics.txt", spec, report, dev_loss, outcome.best_epoch);
  logger().info("best epoch {} of {}, dev {} {:.6f}", outcome.best_epoch, outcome.epochs_run, metric_name,
                report.selection);

  json summary = meta;
  summary.erase("config");
  summary["checkpoint"] = (out / "model.ckpt").string();
  summary["parameters"] = total_parameter_count(model);
  summary["teacher_records"] = store.size();
  return summary;
}

template <typename T>
json encode(const RunConfig& config) {
  const auto ckpt = checkpoint_path(config);
  const auto vocab = load_vocab(config.require_file("vocab"));
  const auto input = config.require_file("input");
  const auto& mode_name = config.text("encode.mode");
  if (mode_name != "pooled" && mode_name != "per_token") {
    throw ConfigError("encode.mode must be pooled or per_token, got '" + mode_name + "'");
  }
  const bool per_token = mode_name == "per_token";
  const auto out = out_dir(config);

  json meta;
  const auto model = load_checkpoint<T>(ckpt, &meta);
  const auto& table = model.embeddings;
  check_explicit_dims(config, table, "checkpoint " + ckpt.string());
  check_vocab(table, vocab, "checkpoint " + ckpt.string());
  const std::size_t max_len = config.is_set("max_len") || !meta.contains("max_len") ? config.size("max_len")
                                                                                    : meta["max_len"].get<std::size_t>();
  config.echo(out);

  const auto lines = read_corpus(input);
  const std::size_t dim = per_token ? per_token_dim(table) : pooled_dim(table);
  std::vector<std::vector<float>> rows_by_line(lines.size());
  std::vector<std::size_t> rows_per_line(lines.size());
  parallel_chunks(lines.size(), thread_count(config), [&](std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const auto ids = sentence_ids(lines[i], vocab, max_len);
      const auto enc = per_token ? encode_per_token(std::span<const TokenId>(ids), table)
                                 : encode_pooled(std::span<const TokenId>(ids), table);
      rows_by_line[i].assign(enc.values.begin(), enc.values.end());
      rows_per_line[i] = enc.rows;
    }
  });
  binary::Writer w;
  std::size_t rows = 0;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    w.f32_block(std::span<const float>(rows_by_line[i]));
    rows += rows_per_line[i];
  }
  binary::write_file(out / "encodings.f32", w.buffer());

  json sidecar{{"checkpoint", ckpt.string()},
               {"kind", std::string(to_string(table.kind()))},
               {"d", table.d()},
               {"d_vec", table.d_vec()},
               {"mode", mode_name},
               {"dim", dim},
               {"lines", lines.size()},
               {"rows", rows},
               {"dtype", "float32"},
               {"byte_order", "little"}};
  if (per_token) sidecar["rows_per_line"] = rows_per_line;
  std::ofstream(out / "encodings.json") << sidecar.dump(2) << '\n';
  sidecar["path"] = (out / "encodings.f32").string();
  return sidecar;
}

template <typename T>
json eval(const RunConfig& config, const fs::path& ckpt) {
  const auto vocab = load_vocab(config.require_file("vocab"));
  const std::size_t threads = thread_count(config);
  const auto out = out_dir(config);
  json meta;
  const auto model = load_checkpoint<T>(ckpt, &meta);
  const std::string what = "checkpoint " + ckpt.string();
  check_explicit_dims(config, model.embeddings, what);
  check_vocab(model.embeddings, vocab, what);
  config.echo(out);

  auto from_meta = [&](const std::string& key) { return !config.is_set(key) && meta.contains(key); };
  const std::size_t max_len = from_meta("max_len") ? meta["max_len"].get<std::size_t>() : config.size("max_len");

  json result{{"checkpoint", ckpt.string()}};
  if (model.classifier) {
    const bool spec_set = std::any_of(RunConfig::known_keys().begin(), RunConfig::known_keys().end(),
                                      [&](const std::string& k) { return k.rfind("task.", 0) == 0 && config.is_set(k); });
    const auto spec = !spec_set && meta.contains("task_spec") ? task_spec_from_json(meta["task_spec"]) : task_spec_from(config);
    const auto encoding = parse_encoding(from_meta("encoding") ? meta["encoding"].get<std::string>() : config.text("encoding"));
    const auto& t = model.embeddings;
    const std::size_t want = classifier_input_dim(t.kind(), t.d(), t.d_vec(), spec, encoding);
    if (model.classifier->in_dim != want) {
      throw StructuralError(what + " has a classifier over " + std::to_string(model.classifier->in_dim) +
                            " features, " + std::string(to_string(encoding)) + " encoding of this task gives " +
                            std::to_string(want));
    }
    if (model.classifier->classes != spec.class_count()) {
      throw StructuralError(what + " predicts " + std::to_string(model.classifier->classes) + " classes, task " +
                            spec.name + " has " + std::to_string(spec.class_count()));
    }
    const auto dev_path = config.require_file("dev");
    const auto rows = read_task_tsv(dev_path, spec, config.flag("task.strict"));
    if (rows.empty()) throw DataError(dev_path.string() + ": no rows");
    const auto examples = build_examples(rows, vocab, encoding, max_len);
    const auto [preds, loss] = predict(model, examples, threads);
    const auto report = evaluate_task(spec, preds, rows);
    result["task"] = spec.name;
    result["encoding"] = std::string(to_string(encoding));
    result["metrics"] = report_json(report);
    result["selection_metric"] = metric_names(spec);
    result["selection"] = report.selection;
    result["loss"] = loss;
    result["examples"] = rows.size();
  } else if (model.mlm) {
    MaskSettings ms{from_meta("mask_fraction") ? meta["mask_fraction"].get<double>() : config.real("mask_fraction"),
                    from_meta("mask_seed") ? meta["mask_seed"].get<std::uint64_t>() : config.u64("mask_seed"),
                    from_meta("dev_fraction") ? meta["dev_fraction"].get<double>() : config.real("dev_fraction"),
                    max_len};
    const auto data = prepare_mlm(config.require_file("corpus"), vocab, ms);
    const double loss = mlm_dev_loss(model, data, threads);
    result["metrics"] = {{"neg_mlm_loss", -loss}, {"mlm_loss", loss}};
    result["selection_metric"] = "neg_mlm_loss";
    result["selection"] = -loss;
    result["loss"] = loss;
    result["examples"] = data.examples.size() - data.n_train;
  } else {
    throw StructuralError(what + " has no MLM or classifier head to evaluate");
  }
  if (meta.contains("selection")) {
    const double recorded = meta["selection"].get<double>();
    result["recorded_selection"] = recorded;
    result["matches_recorded"] = recorded == result["selection"].get<double>();
  }
  std::ofstream(out / "eval.json") << result.dump(2) << '\n';
  return result;
}

template <typename T>
json bench(const RunConfig& config) {
  const auto dims = model_dims(config);
  std::size_t n_vocab = config.size("n_vocab");
  if (n_vocab == 0) n_vocab = config.path("vocab") ? load_vocab(config.require_file("vocab")).size() : kBertVocabSize;
  const std::size_t batches = config.size("bench.batches");
  const std::size_t batch_size = config.size("bench.batch_size");
  const std::size_t seq_len = config.size("bench.seq_len");
  const std::size_t classes = config.size("bench.classes");
  if (batches == 0 || batch_size == 0 || seq_len == 0) throw ConfigError("bench sizes must be positive");
  const std::size_t threads = thread_count(config);
  const auto variant = parse_classifier_variant(config.text("head"));
  const auto out = out_dir(config);
  config.echo(out);

  const auto table = init_embeddings<T>(dims.kind, dims.d, dims.d_vec, n_vocab, config.real("sigma_init"), config.u64("seed"));
  const std::size_t dim = pooled_dim(table);
  const std::size_t embedding_params = parameter_count(table);
  const std::size_t head_params = classifier_parameter_count(variant, dim, classes, config.size("mlp_hidden"));

  const std::size_t sentences = batches * batch_size;
  std::vector<TokenId> ids(sentences * seq_len);
  {
    Rng rng(config.u64("seed"));
    std::uniform_int_distribution<TokenId> pick(0, static_cast<TokenId>(n_vocab - 1));
    for (auto& id : ids) id = pick(rng);
  }

  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, batch_size));
  std::vector<std::vector<T>> outputs(workers, std::vector<T>(dim));
  std::vector<std::vector<T>> scratch(workers);
  std::vector<double> checksum(workers, 0.0);
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t b = 0; b < batches; ++b) {
    parallel_chunks(batch_size, workers, [&](std::size_t w, std::size_t lo, std::size_t hi) {
      for (std::size_t i = lo; i < hi; ++i) {
        const std::size_t s = b * batch_size + i;
        encode_pooled_into(std::span<const TokenId>(ids).subspan(s * seq_len, seq_len), table,
                           std::span<T>(outputs[w]), scratch[w]);
        checksum[w] += static_cast<double>(outputs[w][0]) + static_cast<double>(outputs[w][dim - 1]);
      }
    });
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const double total_checksum = std::accumulate(checksum.begin(), checksum.end(), 0.0);
  const double rate = static_cast<double>(sentences) / wall;

  json result{{"kind", std::string(to_string(dims.kind))},
              {"d", dims.d},
              {"d_vec", dims.d_vec},
              {"n_vocab", n_vocab},
              {"head", std::string(to_string(variant))},
              {"embedding_parameters", embedding_params},
              {"head_parameters", head_params},
              {"total_parameters", embedding_params + head_params},
              {"batches", batches},
              {"batch_size", batch_size},
              {"seq_len", seq_len},
              {"threads", workers},
              {"precision", config.text("precision")},
              {"wall_seconds", wall},
              {"sentences_per_second", rate},
              {"checksum", total_checksum}};

  std::ofstream txt(out / "bench.txt");
  txt << std::setprecision(10);
  for (auto it = result.begin(); it != result.end(); ++it) {
    txt << it.key() << '\t' << (it->is_string() ? it->get<std::string>() : it->dump()) << '\n';
  }
  std::ofstream csv(out / "bench.csv");
  csv << "kind,d,d_vec,n_vocab,embedding_parameters,head_parameters,total_parameters,batches,batch_size,seq_len,"
         "threads,precision,wall_seconds,sentences_per_second\n";
  csv << std::setprecision(10) << to_string(dims.kind) << ',' << dims.d << ',' << dims.d_vec << ',' << n_vocab << ','
      << embedding_params << ',' << head_params << ',' << embedding_params + head_params << ',' << batches << ','
      << batch_size << ',' << seq_len << ',' << workers << ',' << config.text("precision") << ',' << wall << ','
      << rate << '\n';
  logger().info("bench: {} sentences in {:.3f} s, {:.0f} sentences/s", sentences, wall, rate);
  return result;
}

template <template <typename> class Cmd, typename... Args>
json dispatch(const RunConfig& config, Args&&... args) {
  if (precision_of(config) == Precision::wide) return Cmd<double>::run(config, std::forward<Args>(args)...);
  return Cmd<float>::run(config, std::forward<Args>(args)...);
}

template <typename T> struct PretrainCmd { static json run(const RunConfig& c) { return pretrain<T>(c); } };
template <typename T> struct FinetuneCmd { static json run(const RunConfig& c) { return finetune<T>(c); } };
template <typename T> struct EncodeCmd { static json run(const RunConfig& c) { return encode<T>(c); } };
template <typename T> struct EvalCmd {
  static json run(const RunConfig& c, const fs::path& p) { return eval<T>(c, p); }
};
template <typename T> struct BenchCmd { static json run(const RunConfig& c) { return bench<T>(c); } };

}  // namespace

ModelDims model_dims(const RunConfig& config) {
  ModelDims dims;
  dims.kind = parse_embedding_kind(config.text("kind"));
  dims.d = has_matrices(dims.kind) ? config.size("d") : 0;
  dims.d_vec = has_vectors(dims.kind) ? config.size("d_vec") : 0;
  if (has_matrices(dims.kind) && dims.d == 0) throw ConfigError("d must be positive for " + config.text("kind"));
  if (has_vectors(dims.kind) && dims.d_vec == 0) throw ConfigError("d_vec must be positive for " + config.text("kind"));
  return dims;
}

TaskSpec task_spec_from(const RunConfig& config) {
  TaskSpec spec;
  spec.name = config.text("task.name");
  const auto& arity = config.text("task.arity");
  if (arity == "single") {
    spec.arity = TaskArity::single;
  } else if (arity == "pair") {
    spec.arity = TaskArity::pair;
  } else {
    throw ConfigError("task.arity must be single or pair, got '" + arity + "'");
  }
  spec.classes = config.size("task.classes");
  const auto& binned = config.text("task.binned");
  if (!binned.empty() && binned != "none" && binned != "false") {
    spec.binned = parse_bins(binned);
    spec.classes = spec.binned->bin_count();
  }
  spec.label_names = split_list(config.text("task.labels"));
  spec.metrics.clear();
  for (const auto& m : split_list(config.text("task.metrics"))) spec.metrics.push_back(parse_metric(m));
  spec.column_a = config.text("task.col_a");
  spec.column_b = config.text("task.col_b");
  spec.column_label = config.text("task.col_label");
  spec.validate();
  return spec;
}

json task_spec_to_json(const TaskSpec& spec) {
  json j{{"name", spec.name},
         {"arity", spec.arity == TaskArity::pair ? "pair" : "single"},
         {"classes", spec.classes},
         {"label_names", spec.label_names},
         {"column_a", spec.column_a},
         {"column_b", spec.column_b},
         {"column_label", spec.column_label}};
  j["metrics"] = json::array();
  for (auto m : spec.metrics) j["metrics"].push_back(std::string(to_string(m)));
  if (spec.binned) j["binned"] = {{"lo", spec.binned->lo}, {"hi", spec.binned->hi}, {"width", spec.binned->width}};
  return j;
}

TaskSpec task_spec_from_json(const json& j) {
  try {
    TaskSpec spec;
    spec.name = j.at("name").get<std::string>();
    spec.arity = j.at("arity").get<std::string>() == "pair" ? TaskArity::pair : TaskArity::single;
    spec.classes = j.at("classes").get<std::size_t>();
    spec.label_names = j.value("label_names", std::vector<std::string>{});
    spec.column_a = j.value("column_a", spec.column_a);
    spec.column_b = j.value("column_b", spec.column_b);
    spec.column_label = j.value("column_label", spec.column_label);
    spec.metrics.clear();
    for (const auto& m : j.at("metrics")) spec.metrics.push_back(parse_metric(m.get<std::string>()));
    if (j.contains("binned")) {
      const auto& b = j["binned"];
      spec.binned = BinnedRegression{b.at("lo").get<double>(), b.at("hi").get<double>(), b.at("width").get<double>()};
    }
    spec.validate();
    return spec;
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint task description is malformed: ") + e.what());
  }
}

json cmd_pretrain(const RunConfig& config) { return dispatch<PretrainCmd>(config); }
json cmd_finetune(const RunConfig& config) { return dispatch<FinetuneCmd>(config); }
json cmd_encode(const RunConfig& config) { return dispatch<EncodeCmd>(config); }
json cmd_bench(const RunConfig& config) { return dispatch<BenchCmd>(config); }

json cmd_eval(const RunConfig& config) {
  const auto ckpt = checkpoint_path(config);
  if (config.is_set("precision")) return dispatch<EvalCmd>(config, ckpt);
  // Score in the precision the recorded metric was computed in.
  RunConfig c = config;
  const auto info = inspect_checkpoint(ckpt);
  if (info.contains("meta") && info["meta"].is_object() && info["meta"].contains("precision")) {
    c.set("precision", info["meta"]["precision"].get<std::string>());
  }
  return dispatch<EvalCmd>(c, ckpt);
}

json cmd_inspect(const RunConfig& config) { return inspect_checkpoint(checkpoint_path(config)); }

}  // namespace cmow
