#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "qmpnn/layers.hpp"

// A checkpoint is three files sharing a stem:
//   <stem>.json  manifest: model spec, one entry per parameter (name, shape,
//                arithmetic, byte offset/count into the data file, optional
//                mask byte offset) and an optional metadata block
//   <stem>.bin   parameter values, little-endian IEEE-754 binary64
//   <stem>.mask  one byte (0/1) per masked scalar, present only with masks

namespace qmpnn {

using nlohmann::json;

inline LayerKind parse_layer_kind(const std::string& s) {
  if (s == "gcn") return LayerKind::gcn;
  if (s == "gat") return LayerKind::gat;
  if (s == "sage") return LayerKind::sage;
  throw ConfigError("unknown layer kind '" + s + "'");
}

inline Arithmetic parse_arithmetic(const std::string& s) {
  if (s == "real") return Arithmetic::real;
  if (s == "quaternion") return Arithmetic::quaternion;
  throw ConfigError("unknown arithmetic '" + s + "'");
}

inline TaskHead parse_task(const std::string& s) {
  if (s == "node") return TaskHead::node_classify;
  if (s == "link") return TaskHead::link_decode;
  if (s == "graph") return TaskHead::graph_classify;
  throw ConfigError("unknown task '" + s + "'");
}

inline json to_json(const ModelSpec& s) {
  return json{{"kind", to_string(s.kind)},       {"arithmetic", to_string(s.arithmetic)},
              {"widths", s.widths},              {"task", to_string(s.head)},
              {"num_classes", s.num_classes},    {"heads", s.heads},
              {"dropout", s.dropout}};
}

inline ModelSpec model_spec_from_json(const json& j) {
  ModelSpec s;
  s.kind = parse_layer_kind(j.at("kind").get<std::string>());
  s.arithmetic = parse_arithmetic(j.at("arithmetic").get<std::string>());
  s.widths = j.at("widths").get<std::vector<std::size_t>>();
  s.head = parse_task(j.at("task").get<std::string>());
  s.num_classes = j.at("num_classes").get<std::size_t>();
  s.heads = j.at("heads").get<std::size_t>();
  s.dropout = j.at("dropout").get<double>();
  return s;
}

struct CheckpointPaths {
  std::filesystem::path manifest, data, mask;

  static CheckpointPaths from(const std::filesystem::path& p) {
    auto stem = p;
    if (stem.extension() == ".json") stem.replace_extension();
    auto with = [&](const char* ext) {
      auto q = stem;
      q += ext;
      return q;
    };
    return {with(".json"), with(".bin"), with(".mask")};
  }
};

inline void save_checkpoint(const Model& model, const std::filesystem::path& path, const json& metadata = nullptr) {
  const auto paths = CheckpointPaths::from(path);
  json entries = json::array();
  std::vector<unsigned char> data, masks;
  for (const auto& p : model.params()) {
    json e{{"name", p.name},
           {"shape", p.value.shape()},
           {"arithmetic", to_string(p.arithmetic)},
           {"offset", data.size()},
           {"count", p.value.size()},
           {"prunable", p.prunable}};
    for (double v : p.value.data()) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int b = 0; b < 8; ++b) data.push_back(static_cast<unsigned char>(bits >> (8 * b)));
    }
    if (p.mask) {
      e["mask_offset"] = masks.size();
      for (auto a : p.mask->alive) masks.push_back(a ? 1 : 0);
    } else {
      e["mask_offset"] = nullptr;
    }
    entries.push_back(std::move(e));
  }
  json manifest{{"format", "qmpnn-checkpoint"},
                {"version", 1},
                {"data_file", paths.data.filename().string()},
                {"mask_file", masks.empty() ? json(nullptr) : json(paths.mask.filename().string())},
                {"model", to_json(model.spec())},
                {"parameters", std::move(entries)}};
  if (!metadata.is_null()) manifest["metadata"] = metadata;
  {
    std::ofstream out(paths.manifest);
    out << manifest.dump(2) << '\n';
  }
  {
    std::ofstream out(paths.data, std::ios::binary);
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  }
  if (!masks.empty()) {
    std::ofstream out(paths.mask, std::ios::binary);
    out.write(reinterpret_cast<const char*>(masks.data()), static_cast<std::streamsize>(masks.size()));
  } else {
    std::filesystem::remove(paths.mask);
  }
}

struct Checkpoint {
  ModelSpec spec;
  std::vector<Parameter> params;
  json metadata;
};

inline std::vector<unsigned char> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw CorruptFileError("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Reads and validates a checkpoint; any inconsistency between the manifest
/// and the binary files is reported as CorruptFileError.
inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto paths = CheckpointPaths::from(path);
  json manifest;
  try {
    std::ifstream in(paths.manifest);
    if (!in) throw CorruptFileError("cannot open " + paths.manifest.string());
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw CorruptFileError(paths.manifest.string() + ": " + e.what());
  }
  try {
    if (manifest.at("format") != "qmpnn-checkpoint") throw CorruptFileError("not a qmpnn checkpoint");
    Checkpoint ck;
    ck.spec = model_spec_from_json(manifest.at("model"));
    const auto base = paths.manifest.parent_path();
    const auto data = read_bytes(base / manifest.at("data_file").get<std::string>());
    std::vector<unsigned char> masks;
    if (!manifest.at("mask_file").is_null()) masks = read_bytes(base / manifest.at("mask_file").get<std::string>());
    for (const auto& e : manifest.at("parameters")) {
      const auto shape = e.at("shape").get<Shape>();
      const auto offset = e.at("offset").get<std::size_t>();
      const auto count = e.at("count").get<std::size_t>();
      if (count != shape_size(shape)) throw CorruptFileError("parameter " + e.at("name").get<std::string>() + ": count/shape mismatch");
      if (offset + 8 * count > data.size())
        throw CorruptFileError("parameter " + e.at("name").get<std::string>() + ": data file truncated");
      std::vector<double> values(count);
      for (std::size_t q = 0; q < count; ++q) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= std::uint64_t{data[offset + 8 * q + b]} << (8 * b);
        values[q] = std::bit_cast<double>(bits);
      }
      Parameter p(e.at("name").get<std::string>(), Tensor(shape, std::move(values)),
                  parse_arithmetic(e.at("arithmetic").get<std::string>()), e.at("prunable").get<bool>());
      if (!e.at("mask_offset").is_null()) {
        const auto moff = e.at("mask_offset").get<std::size_t>();
        if (moff + count > masks.size())
          throw CorruptFileError("parameter " + p.name + ": mask file truncated");
        Mask m = Mask::ones(count);
        for (std::size_t q = 0; q < count; ++q) {
          const unsigned char b = masks[moff + q];
          if (b > 1) throw CorruptFileError("parameter " + p.name + ": mask byte is not 0/1");
          m.alive[q] = b;
          m.values[q] = b;
        }
        p.mask = std::move(m);
      }
      ck.params.push_back(std::move(p));
    }
    if (manifest.contains("metadata")) ck.metadata = manifest["metadata"];
    return ck;
  } catch (const json::exception& e) {
    throw CorruptFileError(paths.manifest.string() + ": " + e.what());
  } catch (const ShapeError& e) {
    throw CorruptFileError(paths.manifest.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw CorruptFileError(paths.manifest.string() + ": " + e.what());
  }
}

/// Rebuilds a model from a checkpoint, checking parameter names and shapes.
inline Model restore_model(const Checkpoint& ck) {
  Model m(ck.spec, 0);
  if (m.params().size() != ck.params.size()) throw CorruptFileError("checkpoint parameter count mismatch");
  for (std::size_t i = 0; i < ck.params.size(); ++i) {
    auto& dst = m.params()[i];
    const auto& src = ck.params[i];
    if (dst.name != src.name || dst.value.shape() != src.value.shape())
      throw CorruptFileError("checkpoint parameter " + src.name + " does not match model layout");
    dst.value = src.value;
    dst.mask = src.mask;
  }
  return m;
}

}  // namespace qmpnn
