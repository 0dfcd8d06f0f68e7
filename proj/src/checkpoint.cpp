#include "cmow/checkpoint.hpp"

#include <fstream>
#include <string>

#include "cmow/binary_io.hpp"
#include "cmow/errors.hpp"
#include "cmow/log.hpp"

namespace cmow {

namespace {

std::uint32_t narrow_u32(std::size_t v, const char* what) {
  if (v > UINT32_MAX) throw StructuralError(std::string(what) + " does not fit the checkpoint header");
  return static_cast<std::uint32_t>(v);
}

CheckpointHeader read_header(binary::Reader& in, const std::string& what) {
  if (in.tag() != "CMOW") throw DataError(what + ": bad magic, expected CMOW");
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion) {
    throw DataError(what + ": unsupported format version " + std::to_string(version));
  }
  const std::uint32_t kind = in.u32();
  if (kind > static_cast<std::uint32_t>(EmbeddingKind::hybrid_bidirectional)) {
    throw DataError(what + ": unknown embedding kind " + std::to_string(kind));
  }
  CheckpointHeader h;
  h.kind = static_cast<EmbeddingKind>(kind);
  h.d = in.u32();
  h.d_vec = in.u32();
  h.n_vocab = in.u32();
  h.dirs = in.u32();
  if (has_matrices(h.kind) && h.dirs != direction_count(h.kind)) {
    throw DataError(what + ": header says " + std::to_string(h.dirs) + " directions for kind " +
                    std::string(to_string(h.kind)));
  }
  return h;
}

struct Section {
  std::string tag;
  std::span<const std::uint8_t> bytes;
};

template <typename T>
void write_mlm(binary::Writer& out, const MlmHead<T>& head) {
  out.u32(narrow_u32(head.in_dim, "MLM input dim"));
  out.u32(narrow_u32(head.n_vocab, "MLM vocabulary"));
  out.f32_block(std::span<const T>(head.weight));
  out.f32_block(std::span<const T>(head.bias));
}

template <typename T>
MlmHead<T> read_mlm(binary::Reader& in) {
  MlmHead<T> head;
  head.in_dim = in.u32();
  head.n_vocab = in.u32();
  head.weight.resize(head.in_dim * head.n_vocab);
  head.bias.resize(head.n_vocab);
  in.f32_block(std::span<T>(head.weight));
  in.f32_block(std::span<T>(head.bias));
  return head;
}

template <typename T>
void write_classifier(binary::Writer& out, const ClassifierHead<T>& head) {
  out.u32(static_cast<std::uint32_t>(head.variant));
  out.u32(narrow_u32(head.in_dim, "classifier input dim"));
  out.u32(narrow_u32(head.hidden, "classifier hidden dim"));
  out.u32(narrow_u32(head.classes, "classifier classes"));
  out.f32_block(std::span<const T>(head.w1));
  out.f32_block(std::span<const T>(head.b1));
  out.f32_block(std::span<const T>(head.w2));
  out.f32_block(std::span<const T>(head.b2));
}

template <typename T>
ClassifierHead<T> read_classifier(binary::Reader& in, const std::string& what) {
  ClassifierHead<T> head;
  const std::uint32_t variant = in.u32();
  if (variant > 1) throw DataError(what + ": unknown classifier variant " + std::to_string(variant));
  head.variant = static_cast<ClassifierVariant>(variant);
  head.in_dim = in.u32();
  head.hidden = in.u32();
  head.classes = in.u32();
  if (head.variant == ClassifierVariant::linear) {
    head.w1.resize(head.classes * head.in_dim);
    head.b1.resize(head.classes);
  } else {
    head.w1.resize(head.hidden * head.in_dim);
    head.b1.resize(head.hidden);
    head.w2.resize(head.classes * head.hidden);
    head.b2.resize(head.classes);
  }
  in.f32_block(std::span<T>(head.w1));
  in.f32_block(std::span<T>(head.b1));
  in.f32_block(std::span<T>(head.w2));
  in.f32_block(std::span<T>(head.b2));
  return head;
}

// Reads the header and embedding payload of `data` into `table` when given,
// skipping the blocks otherwise, and returns the trailing sections.
template <typename T>
std::vector<Section> parse(std::span<const std::uint8_t> data, const std::string& what,
                           CheckpointHeader& header, EmbeddingTable<T>* table) {
  binary::Reader in(data, what);
  header = read_header(in, what);
  const std::size_t blocks =
      (has_matrices(header.kind) ? header.dirs * header.d * header.d : 0) + (has_vectors(header.kind) ? header.d_vec : 0);
  if (table) {
    try {
      *table = EmbeddingTable<T>(header.kind, header.d, header.d_vec, header.n_vocab);
    } catch (const ConfigError& e) {
      throw DataError(what + ": " + e.what());
    }
    in.f32_block(table->forward_block());
    in.f32_block(table->backward_block());
    in.f32_block(table->vector_block());
  } else {
    in.skip(blocks * header.n_vocab * sizeof(float));
  }
  std::vector<Section> sections;
  while (!in.at_end()) {
    Section s;
    s.tag = in.tag();
    const std::uint64_t length = in.u64();
    if (length > in.remaining()) throw DataError(what + ": section " + s.tag + " is truncated");
    s.bytes = data.subspan(in.position(), length);
    in.skip(length);
    sections.push_back(s);
  }
  return sections;
}

void append_section(binary::Writer& out, const char (&tag)[5], const std::vector<std::uint8_t>& payload) {
  out.tag(tag);
  out.u64(payload.size());
  out.bytes(payload.data(), payload.size());
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model, const nlohmann::json& meta) {
  const auto& t = model.embeddings;
  binary::Writer out;
  out.tag("CMOW");
  out.u32(kCheckpointVersion);
  out.u32(static_cast<std::uint32_t>(t.kind()));
  out.u32(narrow_u32(t.d(), "d"));
  out.u32(narrow_u32(t.d_vec(), "d_vec"));
  out.u32(narrow_u32(t.n_vocab(), "n_vocab"));
  out.u32(has_matrices(t.kind()) ? static_cast<std::uint32_t>(direction_count(t.kind())) : 0);
  out.f32_block(t.forward_block());
  out.f32_block(t.backward_block());
  out.f32_block(t.vector_block());
  if (model.mlm) {
    binary::Writer section;
    write_mlm(section, *model.mlm);
    append_section(out, "MLMH", section.buffer());
  }
  if (model.classifier) {
    binary::Writer section;
    write_classifier(section, *model.classifier);
    append_section(out, "CLSH", section.buffer());
  }
  const std::string text = meta.dump();
  append_section(out, "META", std::vector<std::uint8_t>(text.begin(), text.end()));
  binary::write_file(path, out.buffer());
}

template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& path, nlohmann::json* meta) {
  const auto data = binary::read_file(path);
  const std::string what = "checkpoint " + path.string();
  Model<T> model;
  CheckpointHeader header;
  const auto sections = parse<T>(data, what, header, &model.embeddings);
  if (meta) *meta = nlohmann::json::object();
  for (const auto& s : sections) {
    binary::Reader in(s.bytes, what + " section " + s.tag);
    if (s.tag == "MLMH") {
      model.mlm = read_mlm<T>(in);
    } else if (s.tag == "CLSH") {
      model.classifier = read_classifier<T>(in, what);
    } else if (s.tag == "META") {
      if (meta) {
        try {
          *meta = nlohmann::json::parse(s.bytes.begin(), s.bytes.end());
        } catch (const nlohmann::json::exception& e) {
          throw DataError(what + ": META section is not valid JSON: " + e.what());
        }
      }
      continue;
    } else {
      logger().warn("{}: skipping unknown section {}", what, s.tag);
      continue;
    }
    if (!in.at_end()) throw DataError(what + ": section " + s.tag + " has trailing bytes");
  }
  return model;
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw ConfigError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> data(7 * 4);
  file.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()));
  data.resize(static_cast<std::size_t>(file.gcount()));
  binary::Reader in(data, "checkpoint " + path.string());
  return read_header(in, "checkpoint " + path.string());
}

nlohmann::json inspect_checkpoint(const std::filesystem::path& path) {
  const auto data = binary::read_file(path);
  const std::string what = "checkpoint " + path.string();
  CheckpointHeader h;
  const auto sections = parse<float>(data, what, h, nullptr);
  nlohmann::json info;
  info["path"] = path.string();
  info["version"] = kCheckpointVersion;
  info["kind"] = std::string(to_string(h.kind));
  info["d"] = h.d;
  info["d_vec"] = h.d_vec;
  info["n_vocab"] = h.n_vocab;
  info["dirs"] = h.dirs;
  info["embedding_parameters"] = embedding_parameter_count(h.kind, h.d, h.d_vec, h.n_vocab);
  std::size_t head_params = 0;
  info["sections"] = nlohmann::json::array();
  for (const auto& s : sections) {
    nlohmann::json entry{{"tag", s.tag}, {"bytes", s.bytes.size()}};
    binary::Reader in(s.bytes, what + " section " + s.tag);
    if (s.tag == "MLMH") {
      const auto head = read_mlm<float>(in);
      entry["in_dim"] = head.in_dim;
      entry["n_vocab"] = head.n_vocab;
      entry["parameters"] = head.parameter_count();
      head_params += head.parameter_count();
    } else if (s.tag == "CLSH") {
      const auto head = read_classifier<float>(in, what);
      entry["variant"] = std::string(to_string(head.variant));
      entry["in_dim"] = head.in_dim;
      entry["hidden"] = head.hidden;
      entry["classes"] = head.classes;
      entry["parameters"] = head.parameter_count();
      head_params += head.parameter_count();
    } else if (s.tag == "META") {
      info["meta"] = nlohmann::json::parse(s.bytes.begin(), s.bytes.end(), nullptr, false);
    }
    info["sections"].push_back(entry);
  }
  info["head_parameters"] = head_params;
  info["total_parameters"] = info["embedding_parameters"].get<std::size_t>() + head_params;
  return info;
}

template void save_checkpoint<float>(const std::filesystem::path&, const Model<float>&, const nlohmann::json&);
template void save_checkpoint<double>(const std::filesystem::path&, const Model<double>&, const nlohmann::json&);
template Model<float> load_checkpoint<float>(const std::filesystem::path&, nlohmann::json*);
template Model<double> load_checkpoint<double>(const std::filesystem::path&, nlohmann::json*);

}  // namespace cmow
