#pragma once

#include <json.hpp>

#include "cmow/config.hpp"
#include "cmow/data.hpp"
#include "cmow/embeddings.hpp"

namespace cmow {

// Each command validates its inputs, writes config.resolved and its outputs
// under the `out` directory, and returns a JSON summary.

// MLM pretraining, distilling from teacher MLM records when `teacher` is set.
// Outputs: model.ckpt, trace.jsonl.
nlohmann::json cmd_pretrain(const RunConfig& config);

// Classification fine-tuning with early stopping on the dev split.
// Outputs: model.ckpt, trace.jsonl, dev_metrics.txt.
nlohmann::json cmd_finetune(const RunConfig& config);

// Encodes every line of `input`. Outputs: encodings.f32 (little-endian
// float32 rows) and encodings.json.
nlohmann::json cmd_encode(const RunConfig& config);

// Scores `checkpoint` on the `dev` task file (classifier checkpoints) or on
// the corpus dev split (MLM checkpoints). Output: eval.json.
nlohmann::json cmd_eval(const RunConfig& config);

// Times pooled encoding of pre-generated random id batches.
// Outputs: bench.txt, bench.csv.
nlohmann::json cmd_bench(const RunConfig& config);

nlohmann::json cmd_inspect(const RunConfig& config);

TaskSpec task_spec_from(const RunConfig& config);
nlohmann::json task_spec_to_json(const TaskSpec& spec);
TaskSpec task_spec_from_json(const nlohmann::json& j);

struct ModelDims {
  EmbeddingKind kind = EmbeddingKind::hybrid_bidirectional;
  std::size_t d = 0;
  std::size_t d_vec = 0;
};

// Dimensions from the config with the unused part of a kind zeroed.
ModelDims model_dims(const RunConfig& config);

}  // namespace cmow
