#pragma once

#include <cstdint>
#include <filesystem>

#include <json.hpp>

#include "cmow/model.hpp"

namespace cmow {

// Checkpoint container, little-endian:
//
//   header   : "CMOW" | u32 version (1) | u32 kind | u32 d | u32 d_vec
//              | u32 n_vocab | u32 dirs
//   payload  : f32 blocks [forward | backward | vectors], each block
//              n_vocab x (d*d or d_vec), absent blocks omitted
//   sections : repeated { 4-byte tag | u64 byte length | bytes } until EOF
//     "MLMH" : u32 in_dim | u32 n_vocab | f32 weight | f32 bias
//     "CLSH" : u32 variant | u32 in_dim | u32 hidden | u32 classes
//              | f32 w1 | f32 b1 | f32 w2 | f32 b2
//     "META" : UTF-8 JSON object
//
// Unknown sections are skipped.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointHeader {
  EmbeddingKind kind = EmbeddingKind::hybrid_bidirectional;
  std::size_t d = 0;
  std::size_t d_vec = 0;
  std::size_t n_vocab = 0;
  std::size_t dirs = 0;
};

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model,
                     const nlohmann::json& meta = nlohmann::json::object());

// Throws DataError on a malformed file.
template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& path, nlohmann::json* meta = nullptr);

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

// Summary of a checkpoint: header fields, sections, parameter counts, META.
nlohmann::json inspect_checkpoint(const std::filesystem::path& path);

}  // namespace cmow
