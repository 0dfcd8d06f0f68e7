#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <unordered_map>
#include <vector>

#include "cmow/losses.hpp"

namespace cmow {

// TDR1 wire format, little-endian throughout:
//
//   header  : "TDR1" | u32 kind (0 mlm, 1 task) | u32 n_labels | u32 K
//             | u64 mask_seed | f32 mask_fraction | f32 temperature | u64 count
//   record  : u64 example | u64 position | u32 k (<= K) | k x (u32 id, f32 prob)
//   trailer : u32 CRC-32 (zlib polynomial) of every preceding byte
//
// Task records carry position = kNoPosition. n_labels is the vocabulary size
// for MLM records and the class count for task records.
enum class RecordKind : std::uint32_t { mlm = 0, task = 1 };

RecordKind parse_record_kind(std::string_view name);

inline constexpr std::uint64_t kNoPosition = ~std::uint64_t{0};
inline constexpr std::uint32_t kDefaultTopK = 128;

struct SiteKey {
  std::uint64_t example = 0;
  std::uint64_t position = kNoPosition;

  bool operator==(const SiteKey&) const = default;
};

struct SiteKeyHash {
  std::size_t operator()(const SiteKey& k) const noexcept {
    return std::hash<std::uint64_t>{}(k.example * 0x9E3779B97F4A7C15ULL ^ k.position);
  }
};

struct RecordHeader {
  RecordKind kind = RecordKind::mlm;
  std::uint32_t n_labels = 0;
  std::uint32_t top_k = kDefaultTopK;
  std::uint64_t mask_seed = 0;
  float mask_fraction = 0.0f;
  float temperature = 1.0f;
};

struct DistillationRecord {
  SiteKey key;
  std::vector<std::uint32_t> support;
  std::vector<float> probs;  // as stored on disk
};

// Records keyed by site. Distributions are renormalized to sum to 1 on load;
// the stored float32 payload is kept alongside.
class RecordStore {
 public:
  const RecordHeader& header() const { return header_; }
  std::size_t size() const { return distributions_.size(); }

  // Absence is not an error here; callers decide per training mode.
  const TeacherDistribution* lookup(const SiteKey& key) const;
  const DistillationRecord* raw(const SiteKey& key) const;
  const std::vector<DistillationRecord>& records() const { return records_; }

 private:
  friend RecordStore load_records(const std::filesystem::path&, RecordKind);
  RecordHeader header_;
  std::vector<DistillationRecord> records_;
  std::unordered_map<SiteKey, std::size_t, SiteKeyHash> index_;
  std::vector<TeacherDistribution> distributions_;
};

// Throws DataError on a bad magic, kind mismatch, CRC failure, duplicate site
// key, out-of-range or repeated support id, non-positive probability, or a
// mass above 1 + 1e-4.
RecordStore load_records(const std::filesystem::path& path, RecordKind expected);

void write_records(const std::filesystem::path& path, const RecordHeader& header,
                   const std::vector<DistillationRecord>& records);

}  // namespace cmow
