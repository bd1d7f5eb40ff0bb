#pragma once

// Discretization of a searched supernet and exact cost accounting.
//
// FLOPs convention: 2 per multiply-accumulate, 1 per elementwise output
// (activations, residual adds); biases and zero padding are free. Counts are
// taken at the LR input resolution H x W, where every trunk op runs.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tnas/searchspace.hpp"

namespace tnas {

struct DerivedCell {
  OpKind op = OpKind::kConv1x1;
  int ratio_index = kMaxRatio;
  int width = 0;

  bool operator==(const DerivedCell&) const = default;
};

struct DerivedArch {
  int base_width = 0;
  int scale = 0;
  int supernet_blocks = 0;  // blocks in the tree the arch was cut from
  int cells_per_block = 0;
  int terminal = 0;         // node index; the path keeps blocks 0..terminal
  std::vector<DerivedCell> cells;  // (terminal + 1) * cells_per_block, block-major

  int path_length() const { return terminal + 1; }
  std::vector<int> path() const { return std::vector<int>(static_cast<std::size_t>(terminal + 1), 0); }
  std::string path_string() const;
  const DerivedCell& cell(int block, int index) const {
    return cells.at(static_cast<std::size_t>(block * cells_per_block + index));
  }

  bool operator==(const DerivedArch&) const = default;
};

/// Per cell: op = argmax alpha; terminal = argmax beta; per branch: width at
/// argmax gamma logits. Ties go to the lowest index.
DerivedArch derive_architecture(const TreeSupernet& net, std::span<const double> beta_norm,
                                const std::vector<std::vector<double>>& alpha_norm);

std::int64_t conv_flops(std::int64_t cin, std::int64_t cout, int kernel, int groups, std::int64_t h, std::int64_t w);
std::int64_t conv_params(std::int64_t cin, std::int64_t cout, int kernel, int groups);
std::int64_t op_flops(OpKind kind, int base_width, int width, std::int64_t h, std::int64_t w);
std::int64_t op_params(OpKind kind, int base_width, int width);
/// The residual add closing each block.
std::int64_t block_skip_flops(int base_width, std::int64_t h, std::int64_t w);
std::int64_t stem_flops(int base_width, std::int64_t h, std::int64_t w);
std::int64_t tail_flops(int base_width, int scale, std::int64_t h, std::int64_t w);

std::int64_t count_params(const DerivedArch& arch);
std::int64_t count_flops(const DerivedArch& arch, std::int64_t h, std::int64_t w);

/// Human-readable table: path string, dimensions, one row per cell.
std::string to_text(const DerivedArch& arch);
DerivedArch parse_derived_arch(const std::string& text);

/// A standalone network for a DerivedArch. Cell weights are stored already cut
/// to their widths and run through the same candidate_forward as the
/// supernet, so inherited weights give bit-identical outputs.
struct DerivedModel {
  DerivedArch arch;
  ConvParams stem;
  ConvParams tail;
  std::vector<std::vector<ConvParams>> cells;

  std::vector<nd::Tensor> weights() const;
  nd::Tensor forward(nd::Graph& g, const nd::Tensor& lr) const;
};

/// Copies the surviving branches' weights out of the supernet.
DerivedModel extract_model(const TreeSupernet& net, const DerivedArch& arch);
/// Fresh He-uniform weights for the architecture.
DerivedModel init_model(const DerivedArch& arch, Rng& rng);

}  // namespace tnas
