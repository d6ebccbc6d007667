#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "qmpnn/graph.hpp"
#include "qmpnn/layers.hpp"

namespace test_support {

using namespace qmpnn;

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "qmpnn") {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::filesystem::path write(const std::string& name, const std::string& text) const {
    std::ofstream(path_ / name) << text;
    return path_ / name;
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline Tensor random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(std::move(s));
  for (double& x : t.data()) x = d(rng);
  return t;
}

/// Undirected G(n, p) graph with random features of width f.
inline Graph random_graph(std::size_t n, double p, std::size_t f, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(p);
  std::vector<Edge> edges;
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v = u + 1; v < n; ++v)
      if (coin(rng)) edges.emplace_back(u, v);
  Graph g;
  g.num_nodes = n;
  g.csr = csr_from_undirected(n, edges);
  g.features = random_tensor({n, f}, seed + 1);
  return g;
}

/// Stochastic block graph: `classes` communities of `per_class` nodes, dense
/// inside and sparse across, with noisy class-indicative features.
inline Graph community_graph(std::size_t classes, std::size_t per_class, std::size_t f, std::uint64_t seed,
                             double p_in = 0.3, double p_out = 0.02, double noise = 1.0) {
  const std::size_t n = classes * per_class;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, noise);
  std::vector<Edge> edges;
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v = u + 1; v < n; ++v)
      if (unif(rng) < (u / per_class == v / per_class ? p_in : p_out)) edges.emplace_back(u, v);
  Graph g;
  g.num_nodes = n;
  g.csr = csr_from_undirected(n, edges);
  g.features = Tensor::matrix(n, f);
  g.labels.resize(n);
  for (std::size_t u = 0; u < n; ++u) {
    const std::size_t c = u / per_class;
    g.labels[u] = static_cast<int>(c);
    for (std::size_t j = 0; j < f; ++j) g.features(u, j) = gauss(rng) + (j % classes == c ? 1.0 : 0.0);
  }
  return g;
}

inline Parameter& find_param(Model& m, const std::string& name) {
  for (auto& p : m.params())
    if (p.name == name) return p;
  throw std::out_of_range("no parameter " + name);
}

inline std::vector<std::size_t> random_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

}  // namespace test_support
