#include <gtest/gtest.h>

#include <omp.h>

#include <ostream>
#include <string>
#include <vector>

#include "tnas/kernels.hpp"
#include "tnas/rng.hpp"

namespace tnas::nd::kernels {
namespace {

std::vector<double> random_vec(Rng& rng, std::int64_t n) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

struct Case {
  ConvGeometry geo;
  bool bias;
};

// Keeps the discovered test names free of raw struct bytes (padding is indeterminate).
void PrintTo(const Case& c, std::ostream* os) {
  const auto& g = c.geo;
  *os << g.batch << "," << g.in_channels << "," << g.out_channels << "," << g.height << "," << g.width << ","
      << g.kernel << "," << g.groups << (c.bias ? ",bias" : "");
}

class ParallelMatchesReference : public ::testing::TestWithParam<Case> {};

TEST_P(ParallelMatchesReference, ForwardAndBackward) {
  const auto [geo, with_bias] = GetParam();
  Rng rng(42);
  const auto in = random_vec(rng, geo.input_size());
  const auto w = random_vec(rng, geo.weight_size());
  const auto b = with_bias ? random_vec(rng, geo.out_channels) : std::vector<double>{};
  const auto go = random_vec(rng, geo.output_size());

  std::vector<double> out(static_cast<std::size_t>(geo.output_size())), ref_out(out.size());
  conv2d_forward(geo, in, w, b, out);
  reference::conv2d_forward(geo, in, w, b, ref_out);
  for (std::size_t i = 0; i < out.size(); ++i) ASSERT_NEAR(out[i], ref_out[i], 1e-12) << i;

  std::vector<double> gi(in.size(), 0.5), ref_gi(in.size(), 0.5);
  conv2d_backward_input(geo, go, w, gi);
  reference::conv2d_backward_input(geo, go, w, ref_gi);
  for (std::size_t i = 0; i < gi.size(); ++i) ASSERT_NEAR(gi[i], ref_gi[i], 1e-12) << i;

  std::vector<double> gw(w.size(), 0.25), ref_gw(w.size(), 0.25);
  std::vector<double> gb(b.size(), 0.0), ref_gb(b.size(), 0.0);
  conv2d_backward_params(geo, go, in, gw, gb);
  reference::conv2d_backward_params(geo, go, in, ref_gw, ref_gb);
  for (std::size_t i = 0; i < gw.size(); ++i) ASSERT_NEAR(gw[i], ref_gw[i], 1e-11) << i;
  for (std::size_t i = 0; i < gb.size(); ++i) ASSERT_NEAR(gb[i], ref_gb[i], 1e-11) << i;
}

INSTANTIATE_TEST_SUITE_P(Geometries, ParallelMatchesReference,
                         ::testing::Values(Case{{1, 1, 1, 2, 2, 3, 1}, true}, Case{{2, 3, 5, 7, 6, 3, 1}, true},
                                           Case{{2, 4, 4, 5, 5, 3, 4}, false}, Case{{3, 6, 2, 4, 9, 1, 1}, true},
                                           Case{{1, 4, 6, 3, 3, 5, 2}, false}, Case{{1, 16, 16, 8, 8, 3, 1}, true}),
                         [](const ::testing::TestParamInfo<Case>& info) {
                           const auto& g = info.param.geo;
                           return "n" + std::to_string(g.batch) + "_c" + std::to_string(g.in_channels) + "x" +
                                  std::to_string(g.out_channels) + "_" + std::to_string(g.height) + "x" +
                                  std::to_string(g.width) + "_k" + std::to_string(g.kernel) + "_g" +
                                  std::to_string(g.groups) + (info.param.bias ? "_bias" : "");
                         });

TEST(KernelDeterminism, ResultsIndependentOfThreadCount) {
  const ConvGeometry geo{4, 8, 8, 12, 12, 3, 1};
  Rng rng(7);
  const auto in = random_vec(rng, geo.input_size());
  const auto w = random_vec(rng, geo.weight_size());
  const auto go = random_vec(rng, geo.output_size());
  auto run = [&](int threads) {
    const int saved = omp_get_max_threads();
    omp_set_num_threads(threads);
    std::vector<double> out(static_cast<std::size_t>(geo.output_size()));
    std::vector<double> gi(in.size()), gw(w.size());
    conv2d_forward(geo, in, w, {}, out);
    conv2d_backward_input(geo, go, w, gi);
    conv2d_backward_params(geo, go, in, gw, {});
    omp_set_num_threads(saved);
    out.insert(out.end(), gi.begin(), gi.end());
    out.insert(out.end(), gw.begin(), gw.end());
    return out;
  };
  EXPECT_EQ(run(1), run(3));
}

TEST(PixelShuffleKernel, UnshuffleInvertsShuffle) {
  Rng rng(1);
  const auto in = random_vec(rng, 2 * 12 * 3 * 4);
  std::vector<double> mid(in.size()), back(in.size());
  pixel_shuffle(2, 3, 3, 4, 2, in, mid);
  pixel_unshuffle(2, 3, 3, 4, 2, mid, back);
  EXPECT_EQ(in, back);
}

}  // namespace
}  // namespace tnas::nd::kernels
