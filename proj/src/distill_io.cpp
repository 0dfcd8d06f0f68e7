#include "cmow/distill_io.hpp"

#include <zlib.h>

#include <cmath>
#include <string>
#include <unordered_set>

#include "cmow/binary_io.hpp"
#include "cmow/errors.hpp"

namespace cmow {

namespace {

constexpr double kMassSlack = 1e-4;

std::uint32_t crc32_of(std::span<const std::uint8_t> data) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in chunks.
  constexpr std::size_t kChunk = 1u << 30;
  for (std::size_t off = 0; off < data.size(); off += kChunk) {
    const std::size_t n = std::min(kChunk, data.size() - off);
    crc = crc32(crc, data.data() + off, static_cast<uInt>(n));
  }
  return static_cast<std::uint32_t>(crc);
}

std::string describe(const SiteKey& key) {
  std::string s = "record (example " + std::to_string(key.example);
  if (key.position != kNoPosition) s += ", position " + std::to_string(key.position);
  return s + ")";
}

std::string_view kind_name(RecordKind kind) { return kind == RecordKind::mlm ? "mlm" : "task"; }

}  // namespace

RecordKind parse_record_kind(std::string_view name) {
  if (name == "mlm") return RecordKind::mlm;
  if (name == "task") return RecordKind::task;
  throw ConfigError("unknown record kind '" + std::string(name) + "'");
}

const TeacherDistribution* RecordStore::lookup(const SiteKey& key) const {
  auto it = index_.find(key);
  return it == index_.end() ? nullptr : &distributions_[it->second];
}

const DistillationRecord* RecordStore::raw(const SiteKey& key) const {
  auto it = index_.find(key);
  return it == index_.end() ? nullptr : &records_[it->second];
}

RecordStore load_records(const std::filesystem::path& path, RecordKind expected) {
  const auto data = binary::read_file(path);
  const std::string what = "teacher records " + path.string();
  if (data.size() < 4 + 4) throw DataError(what + ": file too short");

  const std::span<const std::uint8_t> body(data.data(), data.size() - 4);
  binary::Reader trailer(std::span<const std::uint8_t>(data).subspan(data.size() - 4), what);
  const std::uint32_t stored_crc = trailer.u32();
  if (crc32_of(body) != stored_crc) throw DataError(what + ": CRC-32 checksum mismatch");

  binary::Reader in(body, what);
  if (in.tag() != "TDR1") throw DataError(what + ": bad magic, expected TDR1");
  RecordStore store;
  auto& h = store.header_;
  const std::uint32_t kind = in.u32();
  if (kind > 1) throw DataError(what + ": unknown record kind " + std::to_string(kind));
  h.kind = static_cast<RecordKind>(kind);
  if (h.kind != expected) {
    throw DataError(what + ": holds " + std::string(kind_name(h.kind)) + " records, expected " +
                    std::string(kind_name(expected)));
  }
  h.n_labels = in.u32();
  h.top_k = in.u32();
  h.mask_seed = in.u64();
  h.mask_fraction = in.f32();
  h.temperature = in.f32();
  const std::uint64_t count = in.u64();

  store.records_.reserve(count);
  store.distributions_.reserve(count);
  for (std::uint64_t r = 0; r < count; ++r) {
    DistillationRecord rec;
    rec.key.example = in.u64();
    rec.key.position = in.u64();
    const std::uint32_t k = in.u32();
    if (k == 0 || k > h.top_k) {
      throw DataError(what + ": " + describe(rec.key) + " has " + std::to_string(k) +
                      " entries, header allows 1.." + std::to_string(h.top_k));
    }
    rec.support.resize(k);
    rec.probs.resize(k);
    std::unordered_set<std::uint32_t> seen;
    double mass = 0.0;
    for (std::uint32_t i = 0; i < k; ++i) {
      rec.support[i] = in.u32();
      rec.probs[i] = in.f32();
      if (rec.support[i] >= h.n_labels) {
        throw DataError(what + ": " + describe(rec.key) + " has id " + std::to_string(rec.support[i]) +
                        " outside range " + std::to_string(h.n_labels));
      }
      if (!seen.insert(rec.support[i]).second) {
        throw DataError(what + ": " + describe(rec.key) + " repeats id " + std::to_string(rec.support[i]));
      }
      if (!(rec.probs[i] > 0.0f) || !std::isfinite(rec.probs[i])) {
        throw DataError(what + ": " + describe(rec.key) + " has a non-positive probability");
      }
      mass += static_cast<double>(rec.probs[i]);
    }
    if (mass > 1.0 + kMassSlack) {
      throw DataError(what + ": " + describe(rec.key) + " has probability mass " + std::to_string(mass));
    }
    if (!store.index_.emplace(rec.key, store.records_.size()).second) {
      throw DataError(what + ": duplicate site key in " + describe(rec.key));
    }
    TeacherDistribution dist;
    dist.support = rec.support;
    dist.probs.reserve(k);
    for (float p : rec.probs) dist.probs.push_back(static_cast<double>(p) / mass);
    store.distributions_.push_back(std::move(dist));
    store.records_.push_back(std::move(rec));
  }
  if (!in.at_end()) throw DataError(what + ": trailing bytes after " + std::to_string(count) + " records");
  return store;
}

void write_records(const std::filesystem::path& path, const RecordHeader& header,
                   const std::vector<DistillationRecord>& records) {
  binary::Writer out;
  out.tag("TDR1");
  out.u32(static_cast<std::uint32_t>(header.kind));
  out.u32(header.n_labels);
  out.u32(header.top_k);
  out.u64(header.mask_seed);
  out.f32(header.mask_fraction);
  out.f32(header.temperature);
  out.u64(records.size());
  for (const auto& rec : records) {
    if (rec.support.size() != rec.probs.size()) {
      throw StructuralError("record support and probabilities differ in length");
    }
    out.u64(rec.key.example);
    out.u64(rec.key.position);
    out.u32(static_cast<std::uint32_t>(rec.support.size()));
    for (std::size_t i = 0; i < rec.support.size(); ++i) {
      out.u32(rec.support[i]);
      out.f32(rec.probs[i]);
    }
  }
  out.u32(crc32_of(out.buffer()));
  binary::write_file(path, out.buffer());
}

}  // namespace cmow
