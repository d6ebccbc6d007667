#include <gtest/gtest.h>

#include "qmpnn/pruning.hpp"
#include "support.hpp"

using namespace qmpnn;
using namespace test_support;

namespace {

Model gcn(std::vector<std::size_t> widths, Arithmetic a = Arithmetic::real, std::uint64_t seed = 3) {
  ModelSpec s;
  s.arithmetic = a;
  s.widths = std::move(widths);
  return Model(s, seed);
}

NodeTask small_task(std::size_t features, std::uint64_t seed = 5) {
  Graph g = community_graph(2, 15, features, seed);
  return NodeTask(g, 2, make_splits(g, SplitSpec{0.6, 0.2, 0.2, seed}));
}

TrainConfig quick_train() {
  TrainConfig c;
  c.max_epochs = 30;
  c.patience = 10;
  c.dropout = 0.0;
  return c;
}

// Leaves exactly `values.size()` alive entries in layer0.weight with the
// given mask magnitudes; everything else is already pruned.
void restrict_alive(Model& m, const std::vector<double>& values) {
  attach_masks(m);
  for (auto& p : m.params()) {
    if (!p.mask) continue;
    std::fill(p.mask->alive.begin(), p.mask->alive.end(), 0);
    std::fill(p.mask->values.begin(), p.mask->values.end(), 0.0);
  }
  auto& mask = *find_param(m, "layer0.weight").mask;
  for (std::size_t e = 0; e < values.size(); ++e) {
    mask.alive[e] = 1;
    mask.values[e] = values[e];
  }
}

std::vector<std::vector<std::uint8_t>> alive_snapshot(const Model& m) {
  std::vector<std::vector<std::uint8_t>> s;
  for (const auto& p : m.params()) s.push_back(p.mask ? p.mask->alive : std::vector<std::uint8_t>{});
  return s;
}

}  // namespace

TEST(Sparsity, Examples) {
  Mask m = Mask::ones(4);
  EXPECT_EQ(sparsity(m), 0.0);
  m.alive[2] = 0;
  EXPECT_EQ(sparsity(m), 0.25);
  std::fill(m.alive.begin(), m.alive.end(), 0);
  EXPECT_EQ(sparsity(m), 1.0);

  Model model = gcn({5, 5, 20});
  EXPECT_EQ(sparsity(model), 0.0);
  attach_masks(model);
  EXPECT_EQ(sparsity(model), 0.0);
}

TEST(AttachMasks, OnlyWeightsAndAttentionVectors) {
  ModelSpec s;
  s.kind = LayerKind::gat;
  s.widths = {4, 4, 4};
  Model m(s, 1);
  attach_masks(m);
  for (const auto& p : m.params()) EXPECT_EQ(p.mask.has_value(), p.name.find("bias") == std::string::npos) << p.name;
}

TEST(ApplyMask, ZeroesPrunedEntries) {
  Parameter p("w", Tensor({1, 4}, std::vector<double>{1, 2, 3, 4}), Arithmetic::real, true);
  EXPECT_EQ(apply_mask(p), p.value);
  p.mask = Mask::ones(4);
  p.mask->alive[1] = 0;
  p.mask->values[1] = 0.0;
  EXPECT_EQ(apply_mask(p), Tensor({1, 4}, std::vector<double>{1, 0, 3, 4}));
}

TEST(ThresholdMasks, PrunesSmallestMagnitudes) {
  Model m = gcn({5, 5, 20});
  restrict_alive(m, {0.9, -0.05, 0.7, 0.3, 0.01, -0.8, 0.6, 0.5, 0.4, 0.2});
  EXPECT_EQ(threshold_masks(m, 0.2), 2u);
  const auto& mask = *find_param(m, "layer0.weight").mask;
  EXPECT_EQ(mask.alive[1], 0);
  EXPECT_EQ(mask.alive[4], 0);
  EXPECT_EQ(mask.alive_count(), 8u);
  for (std::size_t e = 0; e < mask.size(); ++e) EXPECT_EQ(mask.values[e], static_cast<double>(mask.alive[e]));
  EXPECT_EQ(mask.phase, MaskPhase::hard);
}

TEST(ThresholdMasks, TiesGoToLowerIndex) {
  Model m = gcn({5, 5, 20});
  restrict_alive(m, std::vector<double>(10, 0.5));
  EXPECT_EQ(threshold_masks(m, 0.2), 2u);
  const auto& mask = *find_param(m, "layer0.weight").mask;
  EXPECT_EQ(mask.alive[0], 0);
  EXPECT_EQ(mask.alive[1], 0);
  EXPECT_EQ(mask.alive_count(), 8u);
}

TEST(ThresholdMasks, FloorOfSurvivorShare) {
  Model m = gcn({5, 5, 20});
  attach_masks(m);
  const std::size_t total = 125;
  std::size_t pruned = 0;
  for (int round = 0; round < 6; ++round) {
    const std::size_t expect = static_cast<std::size_t>(0.2 * static_cast<double>(total - pruned) + 1e-9);
    EXPECT_EQ(threshold_masks(m, 0.2), expect);
    pruned += expect;
    EXPECT_DOUBLE_EQ(sparsity(m), static_cast<double>(pruned) / total);
  }
}

TEST(ThresholdMasks, AllZeroMaskRejected) {
  Model m = gcn({5, 5, 20});
  restrict_alive(m, {});
  EXPECT_THROW(threshold_masks(m, 0.2), std::invalid_argument);
  NodeTask task = small_task(5);
  PruneConfig cfg;
  cfg.iterations = 2;
  EXPECT_THROW(sparsify(m, task, cfg, quick_train(), 1), std::invalid_argument);
}

TEST(Sparsify, RejectsZeroIterations) {
  Model m = gcn({5, 5, 20});
  NodeTask task = small_task(5);
  PruneConfig cfg;
  cfg.iterations = 0;
  EXPECT_THROW(sparsify(m, task, cfg, quick_train(), 1), std::invalid_argument);
  EXPECT_THROW(find_ticket(m, task, cfg, quick_train(), 1), std::invalid_argument);
}

TEST(Sparsify, LeavesPrunedWeightsAndMasksUntouched) {
  Model m = gcn({5, 5, 20});
  attach_masks(m);
  threshold_masks(m, 0.3);
  std::vector<Tensor> before;
  for (const auto& p : m.params()) before.push_back(p.value);
  const auto alive = alive_snapshot(m);
  NodeTask task = small_task(5);
  PruneConfig cfg;
  cfg.iterations = 5;
  sparsify(m, task, cfg, quick_train(), 2);
  for (std::size_t q = 0; q < m.params().size(); ++q) {
    const auto& p = m.params()[q];
    if (!p.mask) continue;
    for (std::size_t e = 0; e < p.value.size(); ++e)
      if (!alive[q][e]) {
        EXPECT_EQ(p.value[e], before[q][e]) << p.name << "[" << e << "]";
        EXPECT_EQ(p.mask->alive[e], 0);
      }
  }
}

TEST(Train, OptimizerSkipsPrunedEntries) {
  Model m = gcn({5, 5, 20});
  attach_masks(m);
  threshold_masks(m, 0.5);
  std::vector<Tensor> before;
  for (const auto& p : m.params()) before.push_back(p.value);
  NodeTask task = small_task(5);
  train(m, task, quick_train());
  for (std::size_t q = 0; q < m.params().size(); ++q) {
    const auto& p = m.params()[q];
    if (!p.mask) continue;
    const Tensor eff = apply_mask(p);
    for (std::size_t e = 0; e < p.value.size(); ++e)
      if (!p.mask->alive[e]) {
        EXPECT_EQ(p.value[e], before[q][e]);
        EXPECT_EQ(eff[e], 0.0);
      }
  }
}

TEST(FindTicket, RoundCountsForTargets) {
  NodeTask task = small_task(5);
  PruneConfig cfg;
  cfg.iterations = 3;

  cfg.target = 0.2;
  Model a = gcn({5, 5, 20});
  const TicketState one = find_ticket(a, task, cfg, quick_train(), 7);
  EXPECT_EQ(one.rounds, 1u);
  EXPECT_DOUBLE_EQ(one.sparsity, 0.2);
  EXPECT_TRUE(one.reached);

  cfg.target = 0.48;
  Model b = gcn({5, 5, 20});
  std::vector<double> seen;
  const TicketState three =
      find_ticket(b, task, cfg, quick_train(), 7, [&](std::size_t, const Model& t) { seen.push_back(sparsity(t)); });
  EXPECT_EQ(three.rounds, 3u);
  EXPECT_DOUBLE_EQ(three.sparsity, 61.0 / 125.0);
  EXPECT_EQ(seen, (std::vector<double>{25.0 / 125, 45.0 / 125, 61.0 / 125}));
}

TEST(FindTicket, RoundCapStopsSearch) {
  NodeTask task = small_task(5);
  PruneConfig cfg;
  cfg.iterations = 2;
  cfg.target = 0.9;
  cfg.max_rounds = 2;
  Model m = gcn({5, 5, 20});
  const TicketState st = find_ticket(m, task, cfg, quick_train(), 7);
  EXPECT_EQ(st.rounds, 2u);
  EXPECT_FALSE(st.reached);
  EXPECT_LT(st.sparsity, 0.9);
}

TEST(FindTicket, RewindsToInitializationBitExactly) {
  NodeTask task = small_task(5);
  PruneConfig cfg;
  cfg.iterations = 4;
  Model m = gcn({5, 5, 20});
  std::vector<Tensor> init;
  for (const auto& p : m.params()) init.push_back(p.value);
  std::size_t checked = 0;
  const TicketState st = find_ticket(m, task, cfg, quick_train(), 9, [&](std::size_t, const Model& t) {
    for (std::size_t q = 0; q < init.size(); ++q) EXPECT_EQ(t.params()[q].value, init[q]);
    ++checked;
  });
  EXPECT_EQ(checked, st.rounds);
  for (std::size_t q = 0; q < init.size(); ++q) {
    EXPECT_EQ(m.params()[q].value, init[q]);
    EXPECT_EQ(st.w0[q], init[q]);
  }
}

TEST(FindTicket, MasksShrinkMonotonically) {
  NodeTask task = small_task(5);
  PruneConfig cfg;
  cfg.iterations = 3;
  cfg.target = 0.6;
  Model m = gcn({5, 5, 20});
  std::vector<std::vector<std::vector<std::uint8_t>>> history;
  find_ticket(m, task, cfg, quick_train(), 11, [&](std::size_t, const Model& t) { history.push_back(alive_snapshot(t)); });
  ASSERT_GE(history.size(), 2u);
  for (std::size_t r = 1; r < history.size(); ++r)
    for (std::size_t q = 0; q < history[r].size(); ++q)
      for (std::size_t e = 0; e < history[r][q].size(); ++e)
        EXPECT_LE(history[r][q][e], history[r - 1][q][e]) << "round " << r << " revived an entry";
}

TEST(FindTicket, DeterministicForFixedSeed) {
  NodeTask task = small_task(5);
  PruneConfig cfg;
  cfg.iterations = 3;
  Model a = gcn({5, 5, 20}), b = gcn({5, 5, 20});
  find_ticket(a, task, cfg, quick_train(), 13);
  find_ticket(b, task, cfg, quick_train(), 13);
  EXPECT_EQ(alive_snapshot(a), alive_snapshot(b));
}

TEST(FindTicket, QuaternionAndRealModels) {
  NodeTask task = small_task(8);
  PruneConfig cfg;
  cfg.iterations = 3;
  for (LayerKind k : {LayerKind::gcn, LayerKind::gat, LayerKind::sage})
    for (Arithmetic a : {Arithmetic::real, Arithmetic::quaternion}) {
      ModelSpec s;
      s.kind = k;
      s.arithmetic = a;
      s.widths = {8, 8, 4};
      Model m(s, 21);
      SCOPED_TRACE(std::string(to_string(k)) + "/" + to_string(a));
      const TicketState st = find_ticket(m, task, cfg, quick_train(), 23);
      EXPECT_TRUE(st.reached);
      EXPECT_GE(st.sparsity, cfg.target);
      const RunResult r = train(m, task, quick_train());
      EXPECT_TRUE(std::isfinite(r.metric()));
      EXPECT_LT(r.params, count_params(m));
    }
}
