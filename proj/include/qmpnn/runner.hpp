#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "qmpnn/config.hpp"
#include "qmpnn/graph_io.hpp"

namespace qmpnn {

/// One line of the results CSV.
struct ResultRow {
  std::string dataset, model, arithmetic, task;
  std::uint64_t seed = 0;
  double sparsity = 0.0;
  std::size_t params = 0;
  double flops = 0.0;
  std::string metric;
  double value = 0.0;
  std::size_t epochs = 0;
  double wall_seconds = 0.0;
};

inline constexpr const char* kResultsHeader =
    "dataset,model,arithmetic,task,seed,sparsity,params,flops,metric,value,epochs,wall_seconds";

inline std::string format_number(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

inline std::string to_csv(const ResultRow& r) {
  std::ostringstream o;
  o << r.dataset << ',' << r.model << ',' << r.arithmetic << ',' << r.task << ',' << r.seed << ','
    << format_number("%.6f", r.sparsity) << ',' << r.params << ',' << format_number("%.0f", r.flops) << ','
    << r.metric << ',' << format_number("%.10g", r.value) << ',' << r.epochs << ','
    << format_number("%.3f", r.wall_seconds);
  return o.str();
}

/// Data loaded once per experiment and shared read-only by all runs.
struct LoadedData {
  Graph graph;            // node and link tasks
  GraphDataset dataset;   // graph tasks
  std::size_t num_classes = 0;
};

inline LoadedData load_data(const ExperimentConfig& c) {
  LoadedData d;
  if (c.task == TaskHead::graph_classify) {
    d.dataset = load_dataset(c.dataset.manifest);
    d.num_classes = d.dataset.num_classes();
  } else {
    d.graph = load_graph(c.dataset.edges, c.dataset.features, c.dataset.labels);
    if (!d.graph.labels.empty()) {
      int mx = -1;
      for (int y : d.graph.labels) {
        if (y < 0) throw ParseError("labels must be non-negative");
        mx = std::max(mx, y);
      }
      d.num_classes = static_cast<std::size_t>(mx + 1);
    }
  }
  return d;
}

/// Task instance and model layout for one (model, seed) run. Quaternion
/// models see features (and node-class outputs) padded to multiples of 4.
struct PreparedRun {
  std::unique_ptr<Task> task;
  ModelSpec spec;
};

inline PreparedRun prepare_run(const LoadedData& d, const ExperimentConfig& c, const ModelConfig& mc,
                               std::uint64_t seed) {
  const bool quat = mc.arithmetic == Arithmetic::quaternion;
  SplitSpec split = c.split;
  split.seed = seed;
  PreparedRun r;
  r.spec.kind = mc.kind;
  r.spec.arithmetic = mc.arithmetic;
  r.spec.head = c.task;
  r.spec.heads = mc.heads;
  r.spec.dropout = c.train.dropout;
  if (c.task == TaskHead::graph_classify) {
    GraphDataset ds = d.dataset;
    if (quat)
      for (auto& g : ds.graphs) g = pad_for_quaternion(g, 1).first;
    r.spec.widths = {ds.graphs.front().num_features()};
    r.spec.widths.insert(r.spec.widths.end(), mc.hidden.begin(), mc.hidden.end());
    r.spec.num_classes = d.num_classes;
    r.task = std::make_unique<GraphTask>(std::move(ds), split);
  } else {
    Graph g = d.graph;
    std::size_t out_classes = d.num_classes;
    if (quat) std::tie(g, out_classes) = pad_for_quaternion(d.graph, d.num_classes);
    r.spec.widths = {g.num_features()};
    r.spec.widths.insert(r.spec.widths.end(), mc.hidden.begin(), mc.hidden.end());
    if (c.task == TaskHead::node_classify) {
      r.spec.widths.push_back(out_classes);
      const SplitMasks masks = make_splits(g, split);
      r.task = std::make_unique<NodeTask>(std::move(g), d.num_classes, masks);
    } else {
      r.task = std::make_unique<LinkTask>(g, split);
    }
  }
  try {
    r.spec.validate();
  } catch (const ShapeError& e) {
    throw ConfigError(mc.label() + ": " + e.what());
  }
  return r;
}

inline json train_config_json(const TrainConfig& t) {
  return json{{"learning_rate", t.learning_rate}, {"weight_decay", t.weight_decay}, {"dropout", t.dropout},
              {"max_epochs", t.max_epochs},       {"patience", t.patience}};
}

inline json prune_config_json(const PruneConfig& p) {
  return json{{"eta", p.eta},           {"lambda", p.lambda}, {"iterations", p.iterations},
              {"fraction", p.fraction}, {"target", p.target}, {"max_rounds", p.max_rounds}};
}

inline json metrics_json(const RunResult& r) {
  json m = json::object();
  for (const auto& [k, v] : r.metrics) m[k] = v;
  return m;
}

/// Rows of one (model, seed) job: the dense run, then one run per ticket
/// round when pruning is configured. Checkpoints and tickets are written
/// under the output directory.
inline std::vector<ResultRow> run_job(const LoadedData& d, const ExperimentConfig& c, const ModelConfig& mc,
                                      std::uint64_t seed) {
  PreparedRun pr = prepare_run(d, c, mc, seed);
  TrainConfig tc = c.train;
  tc.seed = mix_seed(seed, 2);
  const Model fresh(pr.spec, mix_seed(seed, 1));
  const double flops = count_flops(fresh, pr.task->reference_graph());
  const std::string stem = c.dataset.name + "-" + mc.label() + "-seed" + std::to_string(seed);

  std::vector<ResultRow> rows;
  auto emit = [&](const RunResult& r, double sp) {
    for (const auto& [name, value] : r.metrics)
      rows.push_back(ResultRow{c.dataset.name, mc.label(), to_string(mc.arithmetic), to_string(c.task), seed, sp,
                               r.params, flops, name, value, r.best_epoch, r.wall_seconds});
  };

  Model dense = fresh;
  const RunResult base = train(dense, *pr.task, tc);
  emit(base, 0.0);
  std::error_code ec;  // concurrent jobs may race on creation
  std::filesystem::create_directories(c.output_dir / "checkpoints", ec);
  save_checkpoint(dense, c.output_dir / "checkpoints" / (stem + ".json"),
                  json{{"seed", seed}, {"best_val_loss", base.best_val_loss}, {"best_epoch", base.best_epoch},
                       {"metrics", metrics_json(base)}, {"train", train_config_json(c.train)}});

  if (c.prune) {
    std::filesystem::create_directories(c.output_dir / "tickets", ec);
    Model search = fresh;
    find_ticket(search, *pr.task, *c.prune, tc, mix_seed(seed, 3), [&](std::size_t round, const Model& ticket) {
      Model m = ticket;
      const RunResult r = train(m, *pr.task, tc);
      const double sp = sparsity(ticket);
      emit(r, sp);
      save_checkpoint(ticket, c.output_dir / "tickets" / (stem + "-round" + std::to_string(round) + ".json"),
                      json{{"seed", seed}, {"rounds", round}, {"sparsity", sp}, {"metrics", metrics_json(r)},
                           {"best_epoch", r.best_epoch}, {"prune", prune_config_json(*c.prune)},
                           {"train", train_config_json(c.train)}});
    });
  }
  return rows;
}

struct RunOutcome {
  std::vector<ResultRow> rows;
  std::filesystem::path results_csv;
};

/// Executes every (model, seed) job and writes results.csv (rows in model,
/// then seed order), plus comparison.csv when several models share ≥2 seeds.
inline RunOutcome run_experiment(const ExperimentConfig& c, std::ostream& log = std::cerr) {
  const LoadedData data = load_data(c);
  const std::size_t jobs = c.models.size() * c.seeds.size();
  auto per_job = parallel_map<std::vector<ResultRow>>(jobs, c.workers, [&](std::size_t i) {
    const auto& mc = c.models[i / c.seeds.size()];
    const auto seed = c.seeds[i % c.seeds.size()];
    return run_job(data, c, mc, seed);
  });
  RunOutcome out;
  for (auto& rows : per_job) out.rows.insert(out.rows.end(), rows.begin(), rows.end());
  std::filesystem::create_directories(c.output_dir);
  out.results_csv = c.output_dir / "results.csv";
  {
    std::ofstream f(out.results_csv);
    f << kResultsHeader << '\n';
    for (const auto& r : out.rows) f << to_csv(r) << '\n';
  }

  // Dense primary metric per model, in seed order.
  std::vector<std::vector<double>> primary(c.models.size());
  std::string metric_name;
  for (std::size_t i = 0; i < per_job.size(); ++i) {
    const auto& rows = per_job[i];
    if (rows.empty()) continue;
    primary[i / c.seeds.size()].push_back(rows.front().value);
    metric_name = rows.front().metric;
  }
  for (std::size_t m = 0; m < c.models.size(); ++m) {
    const SeedSummary s = summarize(primary[m]);
    log << c.models[m].label() << " " << metric_name << " " << format_number("%.4f", s.mean) << " ± "
        << format_number("%.4f", s.std) << " (n=" << s.n << ")\n";
  }
  if (c.models.size() > 1 && c.seeds.size() > 1) {
    std::ofstream f(c.output_dir / "comparison.csv");
    f << "first,second,metric,mean_first,std_first,mean_second,std_second,mean_diff,t,p,winner\n";
    for (std::size_t m = 1; m < c.models.size(); ++m) {
      const PairedTest t = paired_t_test(primary[0], primary[m]);
      const SeedSummary a = summarize(primary[0]), b = summarize(primary[m]);
      const std::string winner =
          t.winner == Winner::tie ? "tie" : t.winner == Winner::first ? c.models[0].label() : c.models[m].label();
      f << c.models[0].label() << ',' << c.models[m].label() << ',' << metric_name << ','
        << format_number("%.10g", a.mean) << ',' << format_number("%.10g", a.std) << ','
        << format_number("%.10g", b.mean) << ',' << format_number("%.10g", b.std) << ','
        << format_number("%.10g", t.mean_diff) << ',' << format_number("%.10g", t.t) << ','
        << format_number("%.10g", t.p) << ',' << winner << '\n';
      log << c.models[0].label() << " vs " << c.models[m].label() << ": p=" << format_number("%.4g", t.p) << " -> "
          << winner << '\n';
    }
  }
  return out;
}

/// Human-readable checkpoint summary.
inline void inspect_checkpoint(const std::filesystem::path& path, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(path);
  const Model m = restore_model(ck);
  out << "model " << to_string(ck.spec.kind) << " " << to_string(ck.spec.arithmetic) << " task "
      << to_string(ck.spec.head) << "\n";
  for (const auto& p : m.params()) {
    const Tensor v = apply_mask(p);
    std::size_t nz = 0;
    for (double x : v.data()) nz += x != 0.0;
    out << p.name << "  " << shape_string(p.value.shape()) << "  " << to_string(p.arithmetic) << "  nonzero "
        << format_number("%.3f", static_cast<double>(nz) / static_cast<double>(v.size())) << "\n";
  }
  out << "sparsity " << format_number("%.3f", sparsity(m)) << "\n";
  if (!ck.metadata.is_null()) out << "metadata " << ck.metadata.dump() << "\n";
}

namespace csv_detail {

inline std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream s(line);
  while (std::getline(s, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace csv_detail

struct CurvePoint {
  std::string model, metric;
  double sparsity = 0.0;
  SeedSummary stats;
  std::optional<double> baseline;
};

/// Groups a results CSV by (model, metric). Rows at sparsity 0 form the
/// dense baseline (mean over seeds); each positive sparsity is a curve point.
/// A model with no pruned rows yields one point without sparsity or stats.
inline std::vector<CurvePoint> build_curve(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("export-curve: empty results file");
  const auto header = csv_detail::split(line);
  auto col = [&](const char* name) {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw ParseError(std::string("export-curve: missing column '") + name + "'");
  };
  const std::size_t cm = col("model"), cs = col("sparsity"), cmet = col("metric"), cv = col("value");
  struct Group {
    std::vector<double> baseline;
    std::map<double, std::vector<double>> points;
  };
  std::map<std::pair<std::string, std::string>, Group> groups;
  std::vector<std::pair<std::string, std::string>> order;
  for (std::size_t ln = 2; std::getline(in, line); ++ln) {
    if (line.empty()) continue;
    const auto cells = csv_detail::split(line);
    if (cells.size() != header.size()) throw ParseError("export-curve: line " + std::to_string(ln) + " has wrong column count");
    double sp = 0.0, v = 0.0;
    try {
      sp = std::stod(cells[cs]);
      v = std::stod(cells[cv]);
    } catch (const std::exception&) {
      throw ParseError("export-curve: line " + std::to_string(ln) + " has a non-numeric value");
    }
    const auto key = std::make_pair(cells[cm], cells[cmet]);
    if (!groups.count(key)) order.push_back(key);
    auto& g = groups[key];
    (sp == 0.0 ? g.baseline : g.points[sp]).push_back(v);
  }
  std::vector<CurvePoint> out;
  for (const auto& key : order) {
    const auto& g = groups[key];
    std::optional<double> base;
    if (!g.baseline.empty()) base = summarize(g.baseline).mean;
    if (g.points.empty()) {
      out.push_back(CurvePoint{key.first, key.second, std::numeric_limits<double>::quiet_NaN(), {}, base});
      continue;
    }
    for (const auto& [sp, vals] : g.points) out.push_back(CurvePoint{key.first, key.second, sp, summarize(vals), base});
  }
  return out;
}

inline void export_curve(const std::filesystem::path& results, const std::filesystem::path& out_path) {
  std::ifstream in(results);
  if (!in) throw ParseError("cannot open " + results.string());
  const auto points = build_curve(in);
  std::ofstream out(out_path);
  out << "model,metric,sparsity,mean,std,baseline\n";
  for (const auto& p : points) {
    out << p.model << ',' << p.metric << ',';
    if (p.stats.n > 0)
      out << format_number("%.6f", p.sparsity) << ',' << format_number("%.10g", p.stats.mean) << ','
          << format_number("%.10g", p.stats.std);
    else
      out << ",,";
    out << ',' << (p.baseline ? format_number("%.10g", *p.baseline) : std::string()) << '\n';
  }
}

}  // namespace qmpnn
