#pragma once

// The trilevel search space: candidate operations with searchable internal
// width (kernel level), supercells mixing the four candidates (cell level) and
// a tree of residual-in-residual blocks whose every prefix is a feasible path
// (network level).
//
// Shapes: features are [N, C, h, w] with C = base_width throughout the trunk;
// input is [N, 3, h, w]; output is [N, 3, scale*h, scale*w].

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tnas/config.hpp"
#include "tnas/graph.hpp"
#include "tnas/rng.hpp"
#include "tnas/tensor.hpp"

namespace tnas {

inline constexpr std::array<double, 5> kRatios = {1.0 / 3.0, 1.0 / 2.0, 4.0 / 5.0, 5.0 / 6.0, 1.0};
inline constexpr int kNumRatios = 5;
inline constexpr int kNumOps = 4;
inline constexpr int kMaxRatio = kNumRatios - 1;
inline constexpr double kLeakySlope = 0.2;

/// round(phi_i * base_width), halves rounded away from zero.
int ratio_width(int base_width, int ratio_index);
std::string ratio_label(int ratio_index);  // "1/3", "1/2", ...

enum class OpKind { kConv1x1 = 0, kConv3x3 = 1, kResidualBlock = 2, kDepthwiseBlock = 3 };
std::string to_string(OpKind kind);
OpKind op_kind_from_string(const std::string& name);

struct ConvParams {
  nd::Tensor weight;  // [Cout, Cin/groups, k, k]
  nd::Tensor bias;    // [Cout]
  int groups = 1;

  int kernel() const { return static_cast<int>(weight.dim(2)); }
  ConvParams clone() const;
};

nd::Tensor conv_forward(nd::Graph& g, const ConvParams& p, const nd::Tensor& x);

/// He-uniform weights for a leaky-relu network, zero bias.
ConvParams init_conv(Rng& rng, std::int64_t cout, std::int64_t cin, int kernel, int groups = 1);

/// One candidate op evaluated with weights already cut to `width`:
///   Conv1x1, Conv3x3:  lrelu(conv C->w), zero channels w..C appended
///   ResidualBlock:     conv3x3 w->C (lrelu(conv3x3 C->w)) + x
///   DepthwiseBlock:    conv1x1 w->C (lrelu(dw3x3 (lrelu(conv1x1 C->w))))
nd::Tensor candidate_forward(nd::Graph& g, OpKind kind, const std::vector<ConvParams>& convs, const nd::Tensor& x,
                             int width, int base_width);

/// Convolution at maximum width plus expansion-ratio logits. A sub-kernel at
/// ratio i is the leading round(phi_i * C) output channels of `full`.
struct SuperKernel {
  ConvParams full;
  nd::Tensor gamma;  // [kNumRatios]
};

nd::Tensor superkernel_forward(nd::Graph& g, const SuperKernel& k, const nd::Tensor& x, int ratio_index);

/// A candidate op inside a supercell. `expand` sets the internal width;
/// `follow` convs consume it (their inputs, or for the depthwise conv their
/// channels, are cut to the same width).
struct Branch {
  OpKind kind = OpKind::kConv1x1;
  SuperKernel expand;
  std::vector<ConvParams> follow;
};

/// Weights of `b` cut to the width at `ratio_index`; differentiable slices.
std::vector<ConvParams> slice_branch(nd::Graph& g, const Branch& b, int ratio_index, int base_width);
nd::Tensor branch_forward(nd::Graph& g, const Branch& b, const nd::Tensor& x, int ratio_index, int base_width);

struct SuperCell {
  std::array<Branch, kNumOps> branches;
  nd::Tensor alpha;  // [kNumOps] logits
};

/// Per-cell inputs to one supernet forward.
struct CellChoice {
  nd::Tensor alpha;                           // normalized [kNumOps]
  std::array<int, kNumOps> ratio{};           // sampled ratio index per branch
  std::array<nd::Tensor, kNumOps> gate{};     // optional straight-through scalars (value 1)
};

/// sum_o alpha_o * gate_o * O_o(x); branches with alpha_o == 0 are not evaluated.
nd::Tensor supercell_forward(nd::Graph& g, const SuperCell& cell, const nd::Tensor& x, const CellChoice& choice,
                             int base_width);

enum class TailMode { kFuseThenTail, kPerNodeTail };

struct TreeSupernet {
  int blocks = 0;
  int cells_per_block = 0;
  int base_width = 0;
  int scale = 0;
  ConvParams stem;  // 3 -> C, 3x3
  ConvParams tail;  // C -> 3*scale^2, 3x3, then depth-to-space
  std::vector<SuperCell> cells;  // block-major
  nd::Tensor beta;               // [blocks] logits, one per node
  std::vector<std::int64_t> block_executions;  // instrumentation: forward count per block

  SuperCell& cell(int block, int index) { return cells[static_cast<std::size_t>(block * cells_per_block + index)]; }
  const SuperCell& cell(int block, int index) const {
    return cells[static_cast<std::size_t>(block * cells_per_block + index)];
  }
  int num_cells() const { return blocks * cells_per_block; }

  /// Network weights w in a fixed order (stem, cells, tail).
  std::vector<nd::Tensor> weights() const;
  /// Architecture logits: alpha per cell, then beta, then gamma per branch.
  std::vector<nd::Tensor> arch_params() const;
};

/// Seeded He-uniform weights; alpha, beta, gamma logits all zero (uniform).
TreeSupernet build_supernet(const SearchConfig& cfg, Rng& rng);

/// Supernet inputs for one forward pass.
struct ArchSample {
  nd::Tensor beta;  // normalized [blocks]
  std::vector<CellChoice> cells;
};

nd::Tensor stem_forward(nd::Graph& g, const ConvParams& stem, const nd::Tensor& lr);
nd::Tensor tail_forward(nd::Graph& g, const ConvParams& tail, const nd::Tensor& features, int scale);

/// Tree output: tail(sum_j beta_j f_j) in fuse-then-tail mode, or
/// sum_j beta_j tail(f_j) in per-node mode. Blocks past the last nonzero
/// beta are not executed.
nd::Tensor tree_forward(nd::Graph& g, TreeSupernet& net, const nd::Tensor& lr, const ArchSample& arch,
                        TailMode mode = TailMode::kFuseThenTail);

/// Path j covers blocks 0..j; '0' marks a residual-in-residual block.
std::vector<std::vector<int>> enumerate_paths(const TreeSupernet& net);
std::string path_string(const std::vector<int>& path);

}  // namespace tnas
