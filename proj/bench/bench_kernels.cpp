#include <benchmark/benchmark.h>

#include <vector>

#include "tnas/kernels.hpp"
#include "tnas/rng.hpp"

namespace {

using tnas::nd::kernels::ConvGeometry;

struct Buffers {
  ConvGeometry geo;
  std::vector<double> in, weight, bias, out, grad_in, grad_w, grad_b;

  explicit Buffers(ConvGeometry g) : geo(g) {
    tnas::Rng rng(1);
    auto fill = [&](std::vector<double>& v, std::int64_t n) {
      v.resize(static_cast<std::size_t>(n));
      for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    };
    fill(in, g.input_size());
    fill(weight, g.weight_size());
    fill(bias, g.out_channels);
    fill(out, g.output_size());
    grad_in.assign(in.size(), 0.0);
    grad_w.assign(weight.size(), 0.0);
    grad_b.assign(bias.size(), 0.0);
  }

  double flops() const {
    return 2.0 * static_cast<double>(geo.kernel * geo.kernel * geo.in_per_group() * geo.out_channels * geo.batch *
                                     geo.height * geo.width);
  }
};

// Args: batch, channels, spatial extent, kernel, groups.
ConvGeometry geometry(const benchmark::State& st) {
  return ConvGeometry{st.range(0), st.range(1), st.range(1), st.range(2), st.range(2), st.range(3), st.range(4)};
}

template <bool kParallel>
void BM_ConvForward(benchmark::State& st) {
  Buffers b(geometry(st));
  for (auto _ : st) {
    if constexpr (kParallel) {
      tnas::nd::kernels::conv2d_forward(b.geo, b.in, b.weight, b.bias, b.out);
    } else {
      tnas::nd::kernels::reference::conv2d_forward(b.geo, b.in, b.weight, b.bias, b.out);
    }
    benchmark::DoNotOptimize(b.out.data());
  }
  st.counters["FLOPS"] = benchmark::Counter(b.flops(), benchmark::Counter::kIsIterationInvariantRate);
}

template <bool kParallel>
void BM_ConvBackward(benchmark::State& st) {
  Buffers b(geometry(st));
  for (auto _ : st) {
    if constexpr (kParallel) {
      tnas::nd::kernels::conv2d_backward_input(b.geo, b.out, b.weight, b.grad_in);
      tnas::nd::kernels::conv2d_backward_params(b.geo, b.out, b.in, b.grad_w, b.grad_b);
    } else {
      tnas::nd::kernels::reference::conv2d_backward_input(b.geo, b.out, b.weight, b.grad_in);
      tnas::nd::kernels::reference::conv2d_backward_params(b.geo, b.out, b.in, b.grad_w, b.grad_b);
    }
    benchmark::DoNotOptimize(b.grad_in.data());
  }
  st.counters["FLOPS"] = benchmark::Counter(2.0 * b.flops(), benchmark::Counter::kIsIterationInvariantRate);
}

void Shapes(benchmark::internal::Benchmark* b) {
  b->Args({16, 16, 16, 3, 1});
  b->Args({16, 16, 16, 1, 1});
  b->Args({16, 16, 16, 3, 16});
  b->Args({4, 16, 64, 3, 1});
}

}  // namespace

BENCHMARK(BM_ConvForward<false>)->Name("conv_forward/serial_reference")->Apply(Shapes);
BENCHMARK(BM_ConvForward<true>)->Name("conv_forward/openmp")->Apply(Shapes);
BENCHMARK(BM_ConvBackward<false>)->Name("conv_backward/serial_reference")->Apply(Shapes);
BENCHMARK(BM_ConvBackward<true>)->Name("conv_backward/openmp")->Apply(Shapes);

BENCHMARK_MAIN();
