#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "support/gradcheck.hpp"
#include "tnas/dataio.hpp"
#include "tnas/engine.hpp"
#include "tnas/ops.hpp"

namespace tnas {
namespace {

SearchConfig tiny_config() {
  SearchConfig cfg;
  cfg.blocks = 2;
  cfg.cells_per_block = 1;
  cfg.base_width = 8;
  cfg.num_images = 8;
  cfg.image_size = 16;
  cfg.holdout_images = 4;
  cfg.batch_size = 4;
  cfg.pretrain_epochs = 2;
  cfg.search_epochs = 3;
  cfg.train_epochs = 2;
  cfg.flops_eval_height = 16;
  cfg.flops_eval_width = 16;
  return cfg;
}

TreeSupernet make_net(const SearchConfig& cfg) {
  Rng rng(init_seed(cfg));
  return build_supernet(cfg, rng);
}

std::vector<double> one_hot(int k, int at) {
  std::vector<double> v(static_cast<std::size_t>(k), 0.0);
  v[static_cast<std::size_t>(at)] = 1.0;
  return v;
}

std::vector<std::vector<double>> snapshot(const std::vector<nd::Tensor>& ts) {
  std::vector<std::vector<double>> out;
  for (const auto& t : ts) out.emplace_back(t.data().begin(), t.data().end());
  return out;
}

TEST(ContentLossTest, Examples) {
  nd::Graph g;
  nd::Tensor a(nd::Shape{1, 3, 2, 2}, 0.25);
  EXPECT_EQ(content_loss(g, a, a).item(), 0.0);
  EXPECT_EQ(content_loss(g, a, nd::add_scalar(g, a, 0.5)).item(), 0.5);
  EXPECT_THROW(content_loss(g, a, nd::Tensor(nd::Shape{1, 3, 2, 3})), std::invalid_argument);
}

TEST(ContentLossTest, GradientMatchesFiniteDifferences) {
  Rng rng(1);
  for (int trial = 0; trial < 5; ++trial) {
    auto s = testing::random_tensor(rng, nd::Shape{2, 3, 3, 3});
    auto t = testing::random_tensor(rng, nd::Shape{2, 3, 3, 3});
    const auto r = testing::gradcheck(
        [&](nd::Graph& g, std::vector<nd::Tensor>& in) { return content_loss(g, in[0], t); }, {s});
    EXPECT_LE(r.max_rel_err, 1e-4);
  }
}

TEST(TeacherTest, SeededAndIdentityDominant) {
  const auto a = make_teacher(3, 2), b = make_teacher(3, 2), c = make_teacher(4, 2);
  EXPECT_TRUE(nd::bit_equal(a.conv.weight, b.conv.weight));
  EXPECT_FALSE(nd::bit_equal(a.conv.weight, c.conv.weight));
  for (std::int64_t co = 0; co < 3; ++co) {
    for (std::int64_t ci = 0; ci < 3; ++ci) {
      for (std::int64_t t = 0; t < 9; ++t) {
        const double w = a.conv.weight[(co * 3 + ci) * 9 + t];
        if (co == ci && t == 4) {
          EXPECT_NEAR(w, 1.0, 0.02);
        } else {
          EXPECT_LE(std::abs(w), 0.02);
        }
      }
    }
  }
  const auto hr = data::gen_synthetic(5, 1, 16, 16)[0];
  nd::Tensor lr(nd::Shape{1, 3, 8, 8});
  const auto down = data::downsample(hr, 2);
  std::copy(down.data().begin(), down.data().end(), lr.data().begin());
  const auto out = a(lr);
  EXPECT_EQ(out.shape(), (nd::Shape{1, 3, 16, 16}));
  EXPECT_LT(nd::max_abs_diff(out, data::bicubic_upsample(lr, 2)), 0.3);
}

TEST(DataTest, RunDataSplitsDisjointHalves) {
  auto cfg = tiny_config();
  const auto d = make_run_data(cfg);
  EXPECT_EQ(d.all.size(), 8);
  EXPECT_EQ(d.chi1.size(), 4);
  EXPECT_EQ(d.chi2.size(), 4);
  EXPECT_EQ(d.holdout.size(), 4);
  EXPECT_EQ(d.all.lr[0].shape(), (nd::Shape{3, 8, 8}));
  EXPECT_EQ(d.all.target[0].shape(), (nd::Shape{3, 16, 16}));
  std::set<const double*> seen;
  for (const auto& t : d.chi1.lr) seen.insert(t.data().data());
  for (const auto& t : d.chi2.lr) EXPECT_FALSE(seen.count(t.data().data()));
}

TEST(BatchTest, ShuffleIsAPermutation) {
  Rng rng(2);
  auto order = shuffled_order(17, rng);
  std::sort(order.begin(), order.end());
  std::vector<int> expect(17);
  std::iota(expect.begin(), expect.end(), 0);
  EXPECT_EQ(order, expect);
}

TEST(BatchTest, ShapesAndAlignedCrops) {
  const auto d = make_run_data(tiny_config());
  std::vector<int> order = {3, 1, 0, 2, 5};
  const auto full = make_batches(d.all, order, 2, 0, 2, nullptr);
  ASSERT_EQ(full.size(), 3u);
  EXPECT_EQ(full[0].lr.shape(), (nd::Shape{2, 3, 8, 8}));
  EXPECT_EQ(full[2].target.shape(), (nd::Shape{1, 3, 16, 16}));
  EXPECT_EQ(full[0].lr[0], d.all.lr[3][0]);

  Rng rng(3);
  const auto crops = make_batches(d.all, order, 5, 8, 2, &rng);
  ASSERT_EQ(crops.size(), 1u);
  EXPECT_EQ(crops[0].lr.shape(), (nd::Shape{5, 3, 4, 4}));
  EXPECT_EQ(crops[0].target.shape(), (nd::Shape{5, 3, 8, 8}));
  // A whole-image "crop" reproduces the image.
  Rng rng2(3);
  const auto whole = make_batches(d.all, order, 5, 16, 2, &rng2);
  EXPECT_TRUE(nd::bit_equal(whole[0].target, make_batches(d.all, order, 5, 0, 2, nullptr)[0].target));
  EXPECT_THROW(make_batches(d.all, order, 2, 7, 2, &rng), std::invalid_argument);
}

TEST(ScheduleTest, StepDecay) {
  EXPECT_EQ(step_decayed_lr(1.0, 0, 20), 1.0);
  EXPECT_EQ(step_decayed_lr(1.0, 4, 20), 1.0);
  EXPECT_EQ(step_decayed_lr(1.0, 5, 20), 0.5);
  EXPECT_EQ(step_decayed_lr(1.0, 10, 20), 0.25);
  EXPECT_EQ(step_decayed_lr(1.0, 19, 20), 0.125);
  EXPECT_EQ(step_decayed_lr(1.0, 0, 1), 1.0);
}

TEST(ScheduleTest, GumbelTemperature) {
  SearchConfig cfg;
  EXPECT_DOUBLE_EQ(gumbel_temperature(cfg, 0), 5.0);
  EXPECT_NEAR(gumbel_temperature(cfg, cfg.search_epochs - 1), 0.1, 1e-12);
  EXPECT_GT(gumbel_temperature(cfg, 10), gumbel_temperature(cfg, 11));
}

TEST(ScheduleTest, RadiusReachesCircumradius) {
  auto cfg = tiny_config();
  const auto plan = radius_plan(cfg, 4);
  EXPECT_EQ(plan.total_steps, 3);
  EXPECT_EQ(plan.fraction(0), 0.0);
  EXPECT_EQ(plan.fraction(3), 1.0);
  EXPECT_EQ(plan.alpha(3), proj::circumradius(4));
  EXPECT_EQ(plan.beta(3), proj::circumradius(2));
  EXPECT_LT(plan.alpha(2), proj::circumradius(4));
}

TEST(OrderingPenaltyTest, SumsOverPrefixPaths) {
  const std::vector<double> beta = {3.0, 2.0, 1.0};
  const auto p = path_ordering_penalty(beta, 0.1, false);
  EXPECT_NEAR(p.value, -0.3, 1e-15);
  EXPECT_NEAR(p.gradient[0], -0.2, 1e-15);
  EXPECT_NEAR(p.gradient[1], 0.1, 1e-15);
  EXPECT_NEAR(p.gradient[2], 0.1, 1e-15);
  const auto h = path_ordering_penalty(beta, 0.1, true);
  EXPECT_EQ(h.value, 0.0);
  const auto up = path_ordering_penalty(std::vector<double>{1.0, 2.0, 4.0}, 0.1, true);
  EXPECT_NEAR(up.value, 0.1 * 1.0 + 0.1 * (1.0 + 2.0), 1e-15);
}

struct CostInputs {
  std::vector<nd::Tensor> alpha;
  nd::Tensor beta;
  std::vector<std::array<nd::Tensor, kNumOps>> gamma;
};

CostInputs one_hot_inputs(const TreeSupernet& net, const DerivedArch& arch) {
  CostInputs in;
  for (int b = 0; b < net.blocks; ++b) {
    for (int c = 0; c < net.cells_per_block; ++c) {
      const bool kept = b <= arch.terminal;
      const int op = kept ? static_cast<int>(arch.cell(b, c).op) : 0;
      const int ratio = kept ? arch.cell(b, c).ratio_index : 0;
      in.alpha.push_back(nd::Tensor::vector(one_hot(kNumOps, op)));
      std::array<nd::Tensor, kNumOps> g;
      for (int o = 0; o < kNumOps; ++o) g[static_cast<std::size_t>(o)] = nd::Tensor::vector(one_hot(kNumRatios, o == op ? ratio : 1));
      in.gamma.push_back(g);
    }
  }
  in.beta = nd::Tensor::vector(one_hot(net.blocks, arch.terminal));
  return in;
}

TEST(EfficiencyCostTest, OneHotEqualsCountFlopsExactly) {
  SearchConfig cfg;
  auto net = make_net(cfg);
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    for (auto p : net.arch_params()) {
      for (auto& v : p.data()) v = rng.normal();
    }
    std::vector<std::vector<double>> alpha;
    for (int i = 0; i < net.num_cells(); ++i) alpha.push_back(one_hot(kNumOps, static_cast<int>(rng.below(kNumOps))));
    const auto beta = one_hot(net.blocks, static_cast<int>(rng.below(static_cast<std::uint64_t>(net.blocks))));
    const auto arch = derive_architecture(net, beta, alpha);
    const auto in = one_hot_inputs(net, arch);
    for (auto [h, w] : {std::pair<std::int64_t, std::int64_t>{32, 32}, {256, 256}, {7, 5}}) {
      nd::Graph g;
      EXPECT_EQ(efficiency_cost(g, net, in.alpha, in.beta, in.gamma, h, w).item(),
                static_cast<double>(count_flops(arch, h, w)));
    }
  }
}

CostInputs random_inputs(const TreeSupernet& net, Rng& rng) {
  CostInputs in;
  auto simplex = [&](int k) {
    std::vector<double> v(static_cast<std::size_t>(k));
    for (auto& x : v) x = rng.normal();
    return nd::Tensor::vector(proj::softmax(v));
  };
  for (int i = 0; i < net.num_cells(); ++i) {
    in.alpha.push_back(simplex(kNumOps));
    std::array<nd::Tensor, kNumOps> g;
    for (auto& t : g) t = simplex(kNumRatios);
    in.gamma.push_back(g);
  }
  in.beta = simplex(net.blocks);
  return in;
}

TEST(EfficiencyCostTest, ShallowerBetaIsCheaperAndResolutionScales) {
  SearchConfig cfg;
  auto net = make_net(cfg);
  Rng rng(5);
  auto in = random_inputs(net, rng);
  nd::Graph g;
  const double base = efficiency_cost(g, net, in.alpha, in.beta, in.gamma, 32, 32).item();
  auto shifted = in.beta.clone();
  shifted[0] += 0.1;
  shifted[2] -= 0.1;
  EXPECT_LT(efficiency_cost(g, net, in.alpha, shifted, in.gamma, 32, 32).item(), base);
  EXPECT_EQ(efficiency_cost(g, net, in.alpha, in.beta, in.gamma, 64, 64).item(), 4.0 * base);
}

TEST(EfficiencyCostTest, GradientMatchesFiniteDifferences) {
  SearchConfig cfg = tiny_config();
  auto net = make_net(cfg);
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    auto in = random_inputs(net, rng);
    std::vector<nd::Tensor> leaves = in.alpha;
    leaves.push_back(in.beta);
    for (const auto& g : in.gamma) leaves.insert(leaves.end(), g.begin(), g.end());
    const auto cells = static_cast<std::size_t>(net.num_cells());
    const auto r = testing::gradcheck(
        [&](nd::Graph& g, std::vector<nd::Tensor>& x) {
          std::vector<nd::Tensor> a(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(cells));
          std::vector<std::array<nd::Tensor, kNumOps>> gm(cells);
          for (std::size_t i = 0; i < cells; ++i) {
            for (std::size_t o = 0; o < kNumOps; ++o) gm[i][o] = x[cells + 1 + i * kNumOps + o];
          }
          return efficiency_cost(g, net, a, x[cells], gm, 6, 5);
        },
        leaves);
    EXPECT_LE(r.max_rel_err, 1e-4) << trial;
  }
}

TEST(EvaluateTest, LossIsIndependentOfBatching) {
  const auto cfg = tiny_config();
  const auto d = make_run_data(cfg);
  auto net = make_net(cfg);
  ArchWeights w;
  w.alpha.assign(2, std::vector<double>(kNumOps, 0.25));
  w.beta = {0.5, 0.5};
  const auto sample = constant_sample(net, w, kMaxRatio);
  const ForwardFn f = [&](nd::Graph& g, const nd::Tensor& x) { return tree_forward(g, net, x, sample); };
  const double a = evaluate_loss(f, d.all, 3);
  EXPECT_EQ(a, evaluate_loss(f, d.all, 8));
  EXPECT_GT(a, 0.0);
  EXPECT_TRUE(std::isfinite(evaluate_psnr(f, d.all, 2)));
}

TEST(MetricsTest, HeaderAndRow) {
  EXPECT_EQ(metrics_header(),
            "epoch,phase,loss_content,loss_efficiency,loss_order,r_value,psnr_val,nnz_alpha,nnz_beta,wall_seconds");
  MetricsRow r;
  r.epoch = 3;
  r.phase = "search";
  r.loss_content = 0.1;
  r.nnz_alpha = 7;
  r.nnz_beta = 2;
  EXPECT_EQ(format_metrics(r), "3,search,0.10000000000000001,0,0,0,0,7,2,0.000");
}

TEST(PretrainTest, ZeroEpochsLeavesNetUnchanged) {
  auto cfg = tiny_config();
  cfg.pretrain_epochs = 0;
  const auto d = make_run_data(cfg);
  auto net = make_net(cfg);
  const auto before = snapshot(net.weights());
  PhaseProgress p;
  pretrain(net, d.chi1, d.holdout, cfg, p);
  EXPECT_EQ(snapshot(net.weights()), before);
  EXPECT_EQ(p.epochs_done, 0);
}

TEST(PretrainTest, TrainsWeightsOnlyAndReducesLoss) {
  auto cfg = tiny_config();
  cfg.num_images = 64;
  cfg.pretrain_epochs = 5;
  const auto d = make_run_data(cfg);
  auto net = make_net(cfg);
  const auto arch_before = snapshot(net.arch_params());
  const auto w_before = snapshot(net.weights());
  std::vector<MetricsRow> rows;
  PhaseProgress p;
  pretrain(net, d.chi1, d.holdout, cfg, p, [&](const MetricsRow& r, const PhaseProgress&) {
    rows.push_back(r);
    return true;
  });
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_LT(rows.back().loss_content, rows.front().loss_content);
  EXPECT_EQ(snapshot(net.arch_params()), arch_before);
  EXPECT_NE(snapshot(net.weights()), w_before);
  EXPECT_EQ(rows[0].nnz_alpha, 4 * 2);
  EXPECT_EQ(rows[0].nnz_beta, 2);
}

struct SearchRun {
  TreeSupernet net;
  RunData data;
  PhaseProgress progress;
  std::vector<std::string> rows;
};

SearchRun run_search(const SearchConfig& cfg, int stop_after = -1) {
  SearchRun run{make_net(cfg), make_run_data(cfg), {}, {}};
  pretrain(run.net, run.data.chi1, run.data.holdout, cfg, run.progress);
  run.progress = PhaseProgress{};
  search(run.net, run.data.chi1, run.data.chi2, run.data.holdout, cfg, run.progress,
         [&](const MetricsRow& r, const PhaseProgress& p) {
           run.rows.push_back(format_metrics(r));
           return stop_after < 0 || p.epochs_done < stop_after;
         });
  return run;
}

TEST(SearchTest, EndsOneHotAndDeterministic) {
  const auto cfg = tiny_config();
  auto a = run_search(cfg);
  auto b = run_search(cfg);
  EXPECT_EQ(a.rows, b.rows);
  ASSERT_EQ(a.rows.size(), 3u);
  EXPECT_EQ(snapshot(a.net.arch_params()), snapshot(b.net.arch_params()));
  const auto res = finish_search(a.net, cfg, a.data.chi2, a.progress.arch_steps, a.data.chi2.size());
  for (const auto& v : res.weights.alpha) EXPECT_EQ(std::count(v.begin(), v.end(), 1.0), 1);
  EXPECT_EQ(std::count(res.weights.beta.begin(), res.weights.beta.end(), 1.0), 1);
  EXPECT_NE(a.rows.back().find(",1,"), std::string::npos);  // r_value reaches 1
}

TEST(SearchTest, ResumeWithinPhaseMatchesUninterrupted) {
  const auto cfg = tiny_config();
  auto full = run_search(cfg);
  auto part = run_search(cfg, 1);
  ASSERT_EQ(part.rows.size(), 1u);
  search(part.net, part.data.chi1, part.data.chi2, part.data.holdout, cfg, part.progress,
         [&](const MetricsRow& r, const PhaseProgress&) {
           part.rows.push_back(format_metrics(r));
           return true;
         });
  EXPECT_EQ(part.rows, full.rows);
  EXPECT_EQ(snapshot(part.net.weights()), snapshot(full.net.weights()));
}

TEST(SearchTest, ArchitectureChangesAndWeightsChange) {
  const auto cfg = tiny_config();
  auto net = make_net(cfg);
  const auto d = make_run_data(cfg);
  const auto w0 = snapshot(net.weights());
  const auto a0 = snapshot(net.arch_params());
  PhaseProgress p;
  search(net, d.chi1, d.chi2, d.holdout, cfg, p);
  EXPECT_NE(snapshot(net.weights()), w0);
  EXPECT_NE(snapshot(net.arch_params()), a0);
  EXPECT_EQ(p.arch_steps, 3);
}

TEST(TrainFinalTest, ZeroEpochsFromSearchReproducesFinalSearchLoss) {
  auto cfg = tiny_config();
  auto run = run_search(cfg);
  const auto res = finish_search(run.net, cfg, run.data.chi2, run.progress.arch_steps, run.data.chi2.size());
  cfg.train_epochs = 0;
  auto model = make_final_model(run.net, res.arch, cfg);
  PhaseProgress p;
  train_final(model, run.data.all, run.data.holdout, cfg, p);
  const ForwardFn f = [&](nd::Graph& g, const nd::Tensor& x) { return model.forward(g, x); };
  EXPECT_EQ(evaluate_loss(f, run.data.chi2, cfg.batch_size), res.final_loss);
}

TEST(TrainFinalTest, FromScratchIsDeterministic) {
  auto cfg = tiny_config();
  cfg.train_mode = TrainMode::kFromScratch;
  auto run = run_search(cfg);
  const auto res = finish_search(run.net, cfg, run.data.chi2, run.progress.arch_steps, run.data.chi2.size());
  std::vector<std::vector<std::vector<double>>> finals;
  for (int rep = 0; rep < 2; ++rep) {
    auto model = make_final_model(run.net, res.arch, cfg);
    PhaseProgress p;
    train_final(model, run.data.all, run.data.holdout, cfg, p);
    finals.push_back(snapshot(model.weights()));
  }
  EXPECT_EQ(finals[0], finals[1]);
}

TEST(TrainFinalTest, DivergenceAborts) {
  auto cfg = tiny_config();
  auto run = run_search(cfg);
  const auto res = finish_search(run.net, cfg, run.data.chi2, run.progress.arch_steps, run.data.chi2.size());
  auto model = make_final_model(run.net, res.arch, cfg);
  model.stem.weight[0] = std::nan("");
  PhaseProgress p;
  EXPECT_THROW(train_final(model, run.data.all, run.data.holdout, cfg, p), std::runtime_error);
}

}  // namespace
}  // namespace tnas
