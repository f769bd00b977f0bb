#include "mother/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <unordered_set>

#include <json.hpp>

namespace mother {

namespace {

using ordered_json = nlohmann::ordered_json;

uint64_t read_u64_le(const uint8_t* p) {
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i) {
    v = (v << 8) | p[i];
  }
  return v;
}

void write_u64_le(uint64_t v, std::string& out) {
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>(v & 0xffu));
    v >>= 8;
  }
}

float f32_from_le(const uint8_t* p) {
  const uint32_t bits = static_cast<uint32_t>(p[0]) |
                        (static_cast<uint32_t>(p[1]) << 8) |
                        (static_cast<uint32_t>(p[2]) << 16) |
                        (static_cast<uint32_t>(p[3]) << 24);
  return std::bit_cast<float>(bits);
}

void f32_to_le(float f, std::string& out) {
  uint32_t bits = std::bit_cast<uint32_t>(f);
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<char>(bits & 0xffu));
    bits >>= 8;
  }
}

// The JSON parser silently collapses duplicate object keys, so duplicate
// tensor names are caught with a depth-1 key scan over the raw header text.
std::vector<std::string> scan_top_level_keys(std::string_view header) {
  std::vector<std::string> keys;
  int depth = 0;
  bool in_string = false;
  bool escaped = false;
  bool key_position = false;  // next string at depth 1 is a key
  std::string current;
  for (const char c : header) {
    if (in_string) {
      if (escaped) {
        escaped = false;
        current.push_back(c);
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
        if (depth == 1 && key_position) {
          keys.push_back(current);
          key_position = false;
        }
      } else {
        current.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        in_string = true;
        current.clear();
        break;
      case '{':
      case '[':
        ++depth;
        if (depth == 1) {
          key_position = true;
        }
        break;
      case '}':
      case ']':
        --depth;
        break;
      case ',':
        if (depth == 1) {
          key_position = true;
        }
        break;
      case ':':
        break;
      default:
        break;
    }
  }
  return keys;
}

}  // namespace

ModelWeights load_model(const std::filesystem::path& path,
                        const LoadOptions& opts) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error("cannot open checkpoint '" + path.string() + "'");
  }
  std::string raw((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  if (raw.size() < 8) {
    throw Error("malformed header: file too short '" + path.string() + "'");
  }
  const uint64_t header_len =
      read_u64_le(reinterpret_cast<const uint8_t*>(raw.data()));
  if (header_len > raw.size() - 8) {
    throw Error("malformed header: declared length exceeds file '" +
                path.string() + "'");
  }
  const std::string_view header_text(raw.data() + 8, header_len);
  const char* data = raw.data() + 8 + header_len;
  const uint64_t data_size = raw.size() - 8 - header_len;

  ordered_json header;
  try {
    header = ordered_json::parse(header_text);
  } catch (const std::exception& e) {
    throw Error("malformed header: " + std::string(e.what()));
  }
  if (!header.is_object()) {
    throw Error("malformed header: not a JSON object");
  }

  {
    const auto keys = scan_top_level_keys(header_text);
    std::unordered_set<std::string> seen;
    for (const auto& k : keys) {
      if (!seen.insert(k).second) {
        throw Error("duplicate tensor name '" + k + "' in '" + path.string() +
                    "'");
      }
    }
  }

  ModelWeights m;
  m.model_id = path.stem().string();

  for (auto it = header.begin(); it != header.end(); ++it) {
    if (it.key() == "__metadata__") {
      if (it.value().is_object() && it.value().contains("model_id") &&
          it.value()["model_id"].is_string()) {
        m.model_id = it.value()["model_id"].get<std::string>();
      }
      continue;
    }
    const auto& entry = it.value();
    if (!entry.is_object() || !entry.contains("dtype") ||
        !entry.contains("shape") || !entry.contains("data_offsets")) {
      throw Error("malformed header: tensor '" + it.key() +
                  "' missing required fields");
    }
    const std::string dtype = entry["dtype"].get<std::string>();
    if (dtype != "F32" && dtype != "F16") {
      throw Error("unsupported dtype '" + dtype + "' for tensor '" + it.key() +
                  "'");
    }
    TensorRecord t;
    t.name = it.key();
    if (!entry["shape"].is_array() || entry["shape"].empty()) {
      throw Error("degenerate shape: tensor '" + t.name + "'");
    }
    for (const auto& d : entry["shape"]) {
      if (!d.is_number_integer() || d.get<int64_t>() <= 0) {
        throw Error("degenerate shape: tensor '" + t.name + "'");
      }
      t.shape.push_back(d.get<int64_t>());
    }
    const auto& offs = entry["data_offsets"];
    if (!offs.is_array() || offs.size() != 2) {
      throw Error("malformed header: bad data_offsets for '" + t.name + "'");
    }
    const uint64_t begin = offs[0].get<uint64_t>();
    const uint64_t end = offs[1].get<uint64_t>();
    const uint64_t elem_size = dtype == "F32" ? 4 : 2;
    const uint64_t expected = static_cast<uint64_t>(t.numel()) * elem_size;
    if (end < begin || end - begin != expected) {
      throw Error("truncated data: tensor '" + t.name +
                  "' offsets disagree with shape");
    }
    if (end > data_size) {
      throw Error("truncated data: tensor '" + t.name + "' exceeds file size");
    }
    const uint8_t* src = reinterpret_cast<const uint8_t*>(data + begin);
    t.data.resize(static_cast<size_t>(t.numel()));
    if (dtype == "F32") {
      if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(t.data.data(), src, expected);
      } else {
        for (int64_t i = 0; i < t.numel(); ++i) {
          t.data[static_cast<size_t>(i)] = f32_from_le(src + 4 * i);
        }
      }
    } else {  // F16 widened to F32
      for (int64_t i = 0; i < t.numel(); ++i) {
        const uint16_t h = static_cast<uint16_t>(src[2 * i]) |
                           (static_cast<uint16_t>(src[2 * i + 1]) << 8);
        t.data[static_cast<size_t>(i)] = f16_to_f32(h);
      }
    }
    m.tensors.push_back(std::move(t));
  }

  validate_model(m, opts.strict);
  return m;
}

void save_model(const ModelWeights& m, const std::filesystem::path& path) {
  validate_model(m, /*check_finite=*/false);

  std::vector<const TensorRecord*> sorted;
  sorted.reserve(m.tensors.size());
  for (const auto& t : m.tensors) {
    sorted.push_back(&t);
  }
  std::sort(sorted.begin(), sorted.end(),
            [](const TensorRecord* a, const TensorRecord* b) {
              return a->name < b->name;
            });

  ordered_json header = ordered_json::object();
  header["__metadata__"] = {{"model_id", m.model_id}};
  uint64_t offset = 0;
  for (const TensorRecord* t : sorted) {
    const uint64_t bytes = static_cast<uint64_t>(t->numel()) * 4;
    ordered_json entry;
    entry["dtype"] = "F32";
    entry["shape"] = t->shape;
    entry["data_offsets"] = {offset, offset + bytes};
    header[t->name] = std::move(entry);
    offset += bytes;
  }

  std::string out;
  const std::string header_text = header.dump();
  out.reserve(8 + header_text.size() + offset);
  write_u64_le(header_text.size(), out);
  out += header_text;
  for (const TensorRecord* t : sorted) {
    if constexpr (std::endian::native == std::endian::little) {
      const size_t pos = out.size();
      out.resize(pos + t->data.size() * 4);
      std::memcpy(out.data() + pos, t->data.data(), t->data.size() * 4);
    } else {
      for (const float v : t->data) {
        f32_to_le(v, out);
      }
    }
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) {
    throw Error("cannot open '" + path.string() + "' for writing");
  }
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) {
    throw Error("write failed for '" + path.string() + "'");
  }
}

}  // namespace mother
