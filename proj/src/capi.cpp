#include "cmow/cmow.h"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <memory>
#include <new>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>

#include "cmow/checkpoint.hpp"
#include "cmow/config.hpp"
#include "cmow/distill_io.hpp"
#include "cmow/encoder.hpp"
#include "cmow/errors.hpp"
#include "cmow/pipeline.hpp"
#include "cmow/tokenizer.hpp"
#include "cmow/training.hpp"

struct cmow_config {
  cmow::RunConfig config;
  mutable std::unordered_map<std::string, std::string> views;
};

struct cmow_vocab {
  cmow::Vocabulary vocab;
};

struct cmow_model {
  cmow::Model<float> model;
  cmow::PairEncoding encoding = cmow::PairEncoding::diffcat;
  std::size_t max_len = cmow::kDefaultMaxSequenceLength;
};

struct cmow_records {
  cmow::RecordStore store;
};

namespace {

thread_local std::string last_error;

template <typename Fn>
cmow_status guarded(Fn&& fn) {
  try {
    fn();
    last_error.clear();
    return CMOW_OK;
  } catch (const cmow::StructuralError& e) {
    last_error = e.what();
    return CMOW_ERR_STRUCTURAL;
  } catch (const cmow::ConfigError& e) {
    last_error = e.what();
    return CMOW_ERR_CONFIG;
  } catch (const cmow::DataError& e) {
    last_error = e.what();
    return CMOW_ERR_DATA;
  } catch (const cmow::NumericalError& e) {
    last_error = e.what();
    return CMOW_ERR_NUMERICAL;
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
    return CMOW_ERR_INTERNAL;
  } catch (const std::exception& e) {
    last_error = e.what();
    return CMOW_ERR_INTERNAL;
  } catch (...) {
    last_error = "unknown failure";
    return CMOW_ERR_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (!p) throw cmow::ConfigError(std::string(what) + " is null");
}

char* copy_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

std::span<const cmow::TokenId> id_span(const int32_t* ids, std::size_t n) {
  if (n > 0) require(ids, "ids");
  return {ids, n};
}

}  // namespace

extern "C" {

const char* cmow_last_error(void) { return last_error.c_str(); }
const char* cmow_version(void) { return "1.0.0"; }
void cmow_string_free(char* s) { delete[] s; }

cmow_status cmow_config_new(cmow_config** out) {
  return guarded([&] {
    require(out, "out");
    *out = new cmow_config();
  });
}

void cmow_config_free(cmow_config* config) { delete config; }

cmow_status cmow_config_load(cmow_config* config, const char* path) {
  return guarded([&] {
    require(config, "config");
    require(path, "path");
    std::ifstream in(path);
    if (!in) throw cmow::ConfigError(std::string("cannot open config file ") + path);
    std::stringstream text;
    text << in.rdbuf();
    config->config.merge_text(text.str(), path);
  });
}

cmow_status cmow_config_set(cmow_config* config, const char* key, const char* value) {
  return guarded([&] {
    require(config, "config");
    require(key, "key");
    require(value, "value");
    config->config.set(key, value);
  });
}

cmow_status cmow_config_assign(cmow_config* config, const char* assignment) {
  return guarded([&] {
    require(config, "config");
    require(assignment, "assignment");
    config->config.set_assignment(assignment);
  });
}

cmow_status cmow_config_get(const cmow_config* config, const char* key, const char** value) {
  return guarded([&] {
    require(config, "config");
    require(key, "key");
    require(value, "value");
    auto& slot = config->views[key];
    slot = config->config.text(key);
    *value = slot.c_str();
  });
}

cmow_status cmow_config_resolved(const cmow_config* config, char** text) {
  return guarded([&] {
    require(config, "config");
    require(text, "text");
    *text = copy_string(config->config.resolved());
  });
}

cmow_status cmow_run(const cmow_config* config, const char* command, char** summary_json) {
  return guarded([&] {
    require(config, "config");
    require(command, "command");
    const std::string cmd = command;
    const auto& c = config->config;
    nlohmann::json summary;
    if (cmd == "pretrain") {
      summary = cmow::cmd_pretrain(c);
    } else if (cmd == "finetune") {
      summary = cmow::cmd_finetune(c);
    } else if (cmd == "encode") {
      summary = cmow::cmd_encode(c);
    } else if (cmd == "eval") {
      summary = cmow::cmd_eval(c);
    } else if (cmd == "bench") {
      summary = cmow::cmd_bench(c);
    } else if (cmd == "inspect-checkpoint" || cmd == "inspect") {
      summary = cmow::cmd_inspect(c);
    } else {
      throw cmow::ConfigError("unknown command '" + cmd + "'");
    }
    if (summary_json) *summary_json = copy_string(summary.dump(2));
  });
}

cmow_status cmow_vocab_load(const char* path, cmow_vocab** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new cmow_vocab{cmow::load_vocab(path)};
  });
}

void cmow_vocab_free(cmow_vocab* vocab) { delete vocab; }

size_t cmow_vocab_size(const cmow_vocab* vocab) { return vocab ? vocab->vocab.size() : 0; }

cmow_status cmow_tokenize(const cmow_vocab* vocab, const char* text, int32_t* ids, size_t capacity, size_t* count) {
  return guarded([&] {
    require(vocab, "vocab");
    require(text, "text");
    require(count, "count");
    if (capacity > 0) require(ids, "ids");
    const auto seq = cmow::tokenize(text, vocab->vocab);
    *count = seq.ids.size();
    std::copy_n(seq.ids.begin(), std::min(capacity, seq.ids.size()), ids);
  });
}

cmow_status cmow_model_load(const char* checkpoint, cmow_model** out) {
  return guarded([&] {
    require(checkpoint, "checkpoint");
    require(out, "out");
    auto handle = std::make_unique<cmow_model>();
    nlohmann::json meta;
    handle->model = cmow::load_checkpoint<float>(checkpoint, &meta);
    if (meta.contains("encoding") && meta["encoding"] == "joint") handle->encoding = cmow::PairEncoding::joint;
    if (meta.contains("max_len")) handle->max_len = meta["max_len"].get<std::size_t>();
    *out = handle.release();
  });
}

void cmow_model_free(cmow_model* model) { delete model; }

cmow_status cmow_model_info_get(const cmow_model* model, cmow_model_info* info) {
  return guarded([&] {
    require(model, "model");
    require(info, "info");
    const auto& t = model->model.embeddings;
    *info = cmow_model_info{};
    info->kind = static_cast<uint32_t>(t.kind());
    info->d = t.d();
    info->d_vec = t.d_vec();
    info->n_vocab = t.n_vocab();
    info->pooled_dim = cmow::pooled_dim(t);
    info->per_token_dim = cmow::per_token_dim(t);
    info->embedding_parameters = cmow::parameter_count(t);
    info->total_parameters = cmow::total_parameter_count(model->model);
    info->has_mlm_head = model->model.mlm.has_value();
    info->has_classifier = model->model.classifier.has_value();
    info->classes = model->model.classifier ? model->model.classifier->classes : 0;
  });
}

cmow_status cmow_encode_pooled(const cmow_model* model, const int32_t* ids, size_t n, float* out, size_t out_len) {
  return guarded([&] {
    require(model, "model");
    require(out, "out");
    const auto& t = model->model.embeddings;
    if (out_len != cmow::pooled_dim(t)) {
      throw cmow::StructuralError("output buffer holds " + std::to_string(out_len) + " floats, pooled dim is " +
                                  std::to_string(cmow::pooled_dim(t)));
    }
    const auto enc = cmow::encode_pooled(id_span(ids, n), t);
    std::copy(enc.values.begin(), enc.values.end(), out);
  });
}

cmow_status cmow_encode_per_token(const cmow_model* model, const int32_t* ids, size_t n, float* out,
                                  size_t out_len) {
  return guarded([&] {
    require(model, "model");
    require(out, "out");
    const auto& t = model->model.embeddings;
    if (out_len != n * cmow::per_token_dim(t)) {
      throw cmow::StructuralError("output buffer holds " + std::to_string(out_len) + " floats, need " +
                                  std::to_string(n * cmow::per_token_dim(t)));
    }
    const auto enc = cmow::encode_per_token(id_span(ids, n), t);
    std::copy(enc.values.begin(), enc.values.end(), out);
  });
}

cmow_status cmow_classify(const cmow_model* model, const cmow_vocab* vocab, const char* a, const char* b,
                          float* logits, size_t classes) {
  return guarded([&] {
    require(model, "model");
    require(vocab, "vocab");
    require(a, "a");
    require(logits, "logits");
    const auto& m = model->model;
    if (!m.classifier) throw cmow::StructuralError("checkpoint has no classifier head");
    if (classes != m.classifier->classes) {
      throw cmow::StructuralError("logit buffer holds " + std::to_string(classes) + " classes, classifier has " +
                                  std::to_string(m.classifier->classes));
    }
    if (vocab->vocab.size() != m.embeddings.n_vocab()) {
      throw cmow::StructuralError("vocabulary has " + std::to_string(vocab->vocab.size()) + " tokens, checkpoint has " +
                                  std::to_string(m.embeddings.n_vocab()));
    }
    const auto& v = vocab->vocab;
    auto sa = cmow::tokenize(a, v);
    if (sa.ids.empty()) sa.ids.push_back(v.specials().unk);
    std::optional<cmow::TokenizedSequence> sb;
    if (b) {
      sb = cmow::tokenize(b, v);
      if (sb->ids.empty()) sb->ids.push_back(v.specials().unk);
    }
    const auto scheme = model->encoding == cmow::PairEncoding::joint ? cmow::PairScheme::joint : cmow::PairScheme::separate;
    cmow::ClassificationExample ex;
    for (auto& s : cmow::build_model_input(sa, sb ? &*sb : nullptr, scheme, v, model->max_len).sequences) {
      ex.sequences.push_back(std::move(s.ids));
    }
    cmow::Rng rng(0);
    const auto out = cmow::classification_logits(m, ex, cmow::DropoutPolicy{}, rng);
    std::copy(out.begin(), out.end(), logits);
  });
}

cmow_status cmow_records_load(const char* path, uint32_t kind, cmow_records** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    if (kind > 1) throw cmow::ConfigError("record kind must be 0 (mlm) or 1 (task)");
    *out = new cmow_records{cmow::load_records(path, static_cast<cmow::RecordKind>(kind))};
  });
}

void cmow_records_free(cmow_records* records) { delete records; }

cmow_status cmow_records_header_get(const cmow_records* records, cmow_records_header* header) {
  return guarded([&] {
    require(records, "records");
    require(header, "header");
    const auto& h = records->store.header();
    header->kind = static_cast<uint32_t>(h.kind);
    header->n_labels = h.n_labels;
    header->top_k = h.top_k;
    header->mask_seed = h.mask_seed;
    header->mask_fraction = h.mask_fraction;
    header->temperature = h.temperature;
    header->count = records->store.size();
  });
}

cmow_status cmow_records_lookup(const cmow_records* records, uint64_t example, uint64_t position, uint32_t* support,
                                float* probs, size_t capacity, size_t* k) {
  return guarded([&] {
    require(records, "records");
    require(k, "k");
    const auto* dist = records->store.lookup(cmow::SiteKey{example, position});
    if (!dist) {
      throw cmow::DataError("no record for example " + std::to_string(example) + " position " +
                            std::to_string(position));
    }
    *k = dist->support.size();
    const std::size_t n = std::min(capacity, dist->support.size());
    if (n > 0) {
      require(support, "support");
      require(probs, "probs");
    }
    for (std::size_t i = 0; i < n; ++i) {
      support[i] = dist->support[i];
      probs[i] = static_cast<float>(dist->probs[i]);
    }
  });
}

}  // extern "C"
