#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "qmpnn/graph.hpp"

// Text formats:
//   edges     one `src<TAB>dst` pair per line, 0-based ids, `#` starts a comment
//   features  CSV, row r holds the F features of node r
//   labels    one integer per line
//   manifest  `edges<TAB>features<TAB>labels<TAB>graph_label` per graph; paths
//             are relative to the manifest, `-` marks an absent label file

namespace qmpnn {

namespace io_detail {

inline std::string where(const std::filesystem::path& p, std::size_t line) {
  return p.string() + ":" + std::to_string(line);
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::string_view strip_comment(std::string_view s) {
  if (auto pos = s.find('#'); pos != std::string_view::npos) s = s.substr(0, pos);
  return trim(s);
}

template <class T>
T parse_number(std::string_view tok, const std::filesystem::path& p, std::size_t line) {
  tok = trim(tok);
  T v{};
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size() || tok.empty())
    throw ParseError(where(p, line) + ": cannot parse '" + std::string(tok) + "'");
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(v)) throw ParseError(where(p, line) + ": non-finite value '" + std::string(tok) + "'");
  }
  return v;
}

inline std::ifstream open_input(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw ParseError("cannot open " + p.string());
  return in;
}

}  // namespace io_detail

inline std::vector<Edge> read_edge_file(const std::filesystem::path& path) {
  auto in = io_detail::open_input(path);
  std::vector<Edge> edges;
  std::string raw;
  for (std::size_t line = 1; std::getline(in, raw); ++line) {
    const std::string_view s = io_detail::strip_comment(raw);
    if (s.empty()) continue;
    const auto tab = s.find('\t');
    if (tab == std::string_view::npos)
      throw ParseError(io_detail::where(path, line) + ": expected src<TAB>dst");
    const auto u = io_detail::parse_number<std::size_t>(s.substr(0, tab), path, line);
    const auto v = io_detail::parse_number<std::size_t>(s.substr(tab + 1), path, line);
    edges.emplace_back(u, v);
  }
  return edges;
}

inline Tensor read_feature_file(const std::filesystem::path& path) {
  auto in = io_detail::open_input(path);
  std::vector<double> data;
  std::size_t width = 0, rows = 0;
  std::string raw;
  for (std::size_t line = 1; std::getline(in, raw); ++line) {
    const std::string_view s = io_detail::trim(raw);
    if (s.empty()) continue;
    std::size_t count = 0, start = 0;
    while (true) {
      const auto comma = s.find(',', start);
      const auto tok = s.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
      data.push_back(io_detail::parse_number<double>(tok, path, line));
      ++count;
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (rows == 0) width = count;
    else if (count != width)
      throw ParseError(io_detail::where(path, line) + ": expected " + std::to_string(width) + " columns, got " +
                       std::to_string(count));
    ++rows;
  }
  if (rows == 0) throw ParseError(path.string() + ": no feature rows");
  return Tensor({rows, width}, std::move(data));
}

inline std::vector<int> read_label_file(const std::filesystem::path& path) {
  auto in = io_detail::open_input(path);
  std::vector<int> labels;
  std::string raw;
  for (std::size_t line = 1; std::getline(in, raw); ++line) {
    const std::string_view s = io_detail::strip_comment(raw);
    if (s.empty()) continue;
    labels.push_back(io_detail::parse_number<int>(s, path, line));
  }
  return labels;
}

/// Loads an undirected graph. The node count is the number of feature rows;
/// edges are symmetrized, duplicates merged and self-loops dropped.
inline Graph load_graph(const std::filesystem::path& edge_file, const std::filesystem::path& feature_file,
                        const std::filesystem::path& label_file = {}) {
  Graph g;
  g.features = read_feature_file(feature_file);
  g.num_nodes = g.features.rows();
  const auto edges = read_edge_file(edge_file);
  for (auto [u, v] : edges)
    if (u >= g.num_nodes || v >= g.num_nodes)
      throw IndexError(edge_file.string() + ": node id " + std::to_string(std::max(u, v)) + " out of range for " +
                       std::to_string(g.num_nodes) + " nodes");
  g.csr = csr_from_undirected(g.num_nodes, edges);
  if (!label_file.empty()) {
    g.labels = read_label_file(label_file);
    if (g.labels.size() != g.num_nodes)
      throw ParseError(label_file.string() + ": " + std::to_string(g.labels.size()) + " labels for " +
                       std::to_string(g.num_nodes) + " nodes");
  }
  return g;
}

inline GraphDataset load_dataset(const std::filesystem::path& manifest) {
  auto in = io_detail::open_input(manifest);
  const auto base = manifest.parent_path();
  GraphDataset ds;
  std::string raw;
  for (std::size_t line = 1; std::getline(in, raw); ++line) {
    const std::string_view s = io_detail::strip_comment(raw);
    if (s.empty()) continue;
    std::vector<std::string_view> cols;
    std::size_t start = 0;
    while (true) {
      const auto tab = s.find('\t', start);
      cols.push_back(s.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start));
      if (tab == std::string_view::npos) break;
      start = tab + 1;
    }
    if (cols.size() != 4) throw ParseError(io_detail::where(manifest, line) + ": expected 4 tab-separated columns");
    const std::string labels(io_detail::trim(cols[2]));
    ds.graphs.push_back(load_graph(base / std::string(io_detail::trim(cols[0])), base / std::string(io_detail::trim(cols[1])),
                                   labels == "-" ? std::filesystem::path{} : base / labels));
    ds.graph_labels.push_back(io_detail::parse_number<int>(cols[3], manifest, line));
  }
  if (ds.graphs.empty()) throw ParseError(manifest.string() + ": no graphs listed");
  return ds;
}

/// Writes a graph in the text formats above (each undirected edge once).
inline void save_graph(const Graph& g, const std::filesystem::path& edge_file, const std::filesystem::path& feature_file,
                       const std::filesystem::path& label_file = {}) {
  {
    std::ofstream out(edge_file);
    for (auto [u, v] : undirected_edges(g.csr)) out << u << '\t' << v << '\n';
  }
  {
    std::ofstream out(feature_file);
    out.precision(17);
    for (std::size_t u = 0; u < g.num_nodes; ++u) {
      for (std::size_t j = 0; j < g.num_features(); ++j) out << (j ? "," : "") << g.features(u, j);
      out << '\n';
    }
  }
  if (!label_file.empty()) {
    std::ofstream out(label_file);
    for (int y : g.labels) out << y << '\n';
  }
}

}  // namespace qmpnn
