#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "qmpnn/checkpoint.hpp"
#include "qmpnn/pruning.hpp"

// Experiment config (JSON). Unknown keys anywhere are rejected.
//
// {
//   "dataset":    {"name": "cora", "edges": "...", "features": "...", "labels": "..."}
//                 or {"name": "...", "manifest": "..."} for graph tasks,
//   "task":       "node" | "link" | "graph",
//   "model":      {"kind": "gcn", "arithmetic": "quaternion", "hidden": [128], "heads": 1}
//                 or an array of such objects,
//   "train":      {"learning_rate", "weight_decay", "dropout", "max_epochs", "patience"},
//   "prune":      {"eta", "lambda", "iterations", "fraction", "target", "max_rounds"},
//   "split":      {"train", "val", "test"},
//   "seeds":      [0, 1, 2, 3, 4],
//   "output_dir": "out",
//   "workers":    1
// }
//
// Relative paths resolve against the config file's directory. `hidden`
// lists the widths after the input: one entry for node tasks (the output is
// the class count), two for link tasks, three for graph tasks.

namespace qmpnn {

struct DatasetConfig {
  std::string name;
  std::filesystem::path edges, features, labels, manifest;
};

struct ModelConfig {
  LayerKind kind = LayerKind::gcn;
  Arithmetic arithmetic = Arithmetic::real;
  std::vector<std::size_t> hidden;
  std::size_t heads = 1;

  /// Display name, e.g. "GCN" or "QGCN".
  std::string label() const {
    std::string k = to_string(kind);
    for (char& c : k) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return arithmetic == Arithmetic::quaternion ? "Q" + k : k;
  }
};

struct ExperimentConfig {
  DatasetConfig dataset;
  TaskHead task = TaskHead::node_classify;
  std::vector<ModelConfig> models;
  TrainConfig train;
  std::optional<PruneConfig> prune;
  SplitSpec split;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::filesystem::path output_dir = "out";
  std::size_t workers = 1;
};

namespace config_detail {

inline void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items())
    if (!ok.count(k)) throw ConfigError("unknown field '" + (where.empty() ? k : where + "." + k) + "'");
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("field '" + where + "." + key + "' has the wrong type");
  }
}

inline std::filesystem::path existing(const std::filesystem::path& base, const json& j, const char* key) {
  if (!j.contains(key)) return {};
  if (!j.at(key).is_string()) throw ConfigError("field 'dataset." + std::string(key) + "' must be a path string");
  auto p = std::filesystem::path(j.at(key).get<std::string>());
  if (p.is_relative()) p = base / p;
  if (!std::filesystem::exists(p)) throw ConfigError("dataset." + std::string(key) + ": no such file " + p.string());
  return p;
}

inline ModelConfig parse_model(const json& j, const std::string& where) {
  check_keys(j, where, {"kind", "arithmetic", "hidden", "heads"});
  ModelConfig m;
  std::string kind = "gcn", arith = "real";
  read(j, "kind", kind, where);
  read(j, "arithmetic", arith, where);
  read(j, "hidden", m.hidden, where);
  read(j, "heads", m.heads, where);
  m.kind = parse_layer_kind(kind);
  m.arithmetic = parse_arithmetic(arith);
  if (m.hidden.empty()) throw ConfigError(where + ".hidden: at least one width required");
  if (m.heads == 0) throw ConfigError(where + ".heads must be positive");
  return m;
}

}  // namespace config_detail

inline ExperimentConfig parse_config(const json& j, const std::filesystem::path& base) {
  using namespace config_detail;
  check_keys(j, "", {"dataset", "task", "model", "train", "prune", "split", "seeds", "output_dir", "workers"});
  ExperimentConfig c;
  if (!j.contains("dataset")) throw ConfigError("missing field 'dataset'");
  if (!j.contains("task")) throw ConfigError("missing field 'task'");
  if (!j.contains("model")) throw ConfigError("missing field 'model'");

  const json& d = j.at("dataset");
  check_keys(d, "dataset", {"name", "edges", "features", "labels", "manifest"});
  read(d, "name", c.dataset.name, "dataset");
  std::string task;
  read(j, "task", task, "");
  c.task = parse_task(task);
  c.dataset.edges = existing(base, d, "edges");
  c.dataset.features = existing(base, d, "features");
  c.dataset.labels = existing(base, d, "labels");
  c.dataset.manifest = existing(base, d, "manifest");
  if (c.dataset.name.empty()) throw ConfigError("dataset.name is required");
  if (c.task == TaskHead::graph_classify) {
    if (c.dataset.manifest.empty()) throw ConfigError("graph tasks need dataset.manifest");
  } else {
    if (c.dataset.edges.empty() || c.dataset.features.empty()) throw ConfigError("dataset.edges and dataset.features are required");
    if (c.task == TaskHead::node_classify && c.dataset.labels.empty()) throw ConfigError("node tasks need dataset.labels");
  }

  const json& m = j.at("model");
  if (m.is_array()) {
    for (std::size_t i = 0; i < m.size(); ++i) c.models.push_back(parse_model(m[i], "model[" + std::to_string(i) + "]"));
  } else {
    c.models.push_back(parse_model(m, "model"));
  }
  if (c.models.empty()) throw ConfigError("model: at least one model required");
  const std::size_t want = c.task == TaskHead::node_classify ? 1 : c.task == TaskHead::link_decode ? 2 : 3;
  for (const auto& mc : c.models)
    if (mc.hidden.size() != want)
      throw ConfigError("model.hidden: " + std::string(to_string(c.task)) + " tasks take " + std::to_string(want) +
                        " widths, got " + std::to_string(mc.hidden.size()));

  if (j.contains("train")) {
    const json& t = j.at("train");
    check_keys(t, "train", {"learning_rate", "weight_decay", "dropout", "max_epochs", "patience"});
    read(t, "learning_rate", c.train.learning_rate, "train");
    read(t, "weight_decay", c.train.weight_decay, "train");
    read(t, "dropout", c.train.dropout, "train");
    read(t, "max_epochs", c.train.max_epochs, "train");
    read(t, "patience", c.train.patience, "train");
  }
  try {
    c.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (j.contains("prune") && !j.at("prune").is_null()) {
    const json& p = j.at("prune");
    check_keys(p, "prune", {"eta", "lambda", "iterations", "fraction", "target", "max_rounds"});
    PruneConfig pc;
    read(p, "eta", pc.eta, "prune");
    read(p, "lambda", pc.lambda, "prune");
    read(p, "iterations", pc.iterations, "prune");
    read(p, "fraction", pc.fraction, "prune");
    read(p, "target", pc.target, "prune");
    read(p, "max_rounds", pc.max_rounds, "prune");
    try {
      pc.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    c.prune = pc;
  }
  if (j.contains("split")) {
    const json& s = j.at("split");
    check_keys(s, "split", {"train", "val", "test"});
    read(s, "train", c.split.train, "split");
    read(s, "val", c.split.val, "split");
    read(s, "test", c.split.test, "split");
  }
  try {
    c.split.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  read(j, "seeds", c.seeds, "");
  if (c.seeds.empty()) throw ConfigError("seeds: at least one seed required");
  std::string out;
  read(j, "output_dir", out, "");
  if (!out.empty()) c.output_dir = std::filesystem::path(out).is_relative() ? base / out : std::filesystem::path(out);
  else c.output_dir = base / "out";
  read(j, "workers", c.workers, "");
  if (c.workers == 0) throw ConfigError("workers must be at least 1");
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(j, path.parent_path());
}

}  // namespace qmpnn
