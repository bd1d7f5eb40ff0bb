#include "tnas/searchspace.hpp"

#include <cmath>
#include <stdexcept>

#include "tnas/ops.hpp"

namespace tnas {

int ratio_width(int base_width, int ratio_index) {
  if (ratio_index < 0 || ratio_index >= kNumRatios) {
    throw std::out_of_range("ratio index " + std::to_string(ratio_index) + " outside [0, 5)");
  }
  return static_cast<int>(std::lround(kRatios[static_cast<std::size_t>(ratio_index)] * base_width));
}

std::string ratio_label(int ratio_index) {
  static const char* labels[] = {"1/3", "1/2", "4/5", "5/6", "1"};
  if (ratio_index < 0 || ratio_index >= kNumRatios) throw std::out_of_range("ratio index");
  return labels[ratio_index];
}

std::string to_string(OpKind kind) {
  switch (kind) {
    case OpKind::kConv1x1:
      return "Conv1x1";
    case OpKind::kConv3x3:
      return "Conv3x3";
    case OpKind::kResidualBlock:
      return "ResidualBlock";
    case OpKind::kDepthwiseBlock:
      return "DepthwiseBlock";
  }
  return "?";
}

OpKind op_kind_from_string(const std::string& name) {
  for (int i = 0; i < kNumOps; ++i) {
    if (to_string(static_cast<OpKind>(i)) == name) return static_cast<OpKind>(i);
  }
  throw std::invalid_argument("unknown operation '" + name + "'");
}

ConvParams ConvParams::clone() const { return ConvParams{weight.clone(), bias.clone(), groups}; }

nd::Tensor conv_forward(nd::Graph& g, const ConvParams& p, const nd::Tensor& x) {
  return nd::conv2d(g, x, p.weight, p.bias, (p.kernel() - 1) / 2, p.groups);
}

ConvParams init_conv(Rng& rng, std::int64_t cout, std::int64_t cin, int kernel, int groups) {
  const std::int64_t cin_g = cin / groups;
  const double fan_in = static_cast<double>(cin_g * kernel * kernel);
  const double bound = std::sqrt(6.0 / ((1.0 + kLeakySlope * kLeakySlope) * fan_in));
  ConvParams p;
  p.weight = nd::Tensor(nd::Shape{cout, cin_g, kernel, kernel});
  for (auto& v : p.weight.data()) v = rng.uniform(-bound, bound);
  p.bias = nd::Tensor(nd::Shape{cout}, 0.0);
  p.groups = groups;
  return p;
}

nd::Tensor candidate_forward(nd::Graph& g, OpKind kind, const std::vector<ConvParams>& convs, const nd::Tensor& x,
                             int width, int base_width) {
  switch (kind) {
    case OpKind::kConv1x1:
    case OpKind::kConv3x3: {
      auto y = nd::leaky_relu(g, conv_forward(g, convs.at(0), x), kLeakySlope);
      return width < base_width ? nd::pad_zeros(g, y, 1, base_width) : y;
    }
    case OpKind::kResidualBlock: {
      auto h = nd::leaky_relu(g, conv_forward(g, convs.at(0), x), kLeakySlope);
      return nd::add(g, conv_forward(g, convs.at(1), h), x);
    }
    case OpKind::kDepthwiseBlock: {
      auto h = nd::leaky_relu(g, conv_forward(g, convs.at(0), x), kLeakySlope);
      h = nd::leaky_relu(g, conv_forward(g, convs.at(1), h), kLeakySlope);
      return conv_forward(g, convs.at(2), h);
    }
  }
  throw std::logic_error("unhandled op kind");
}

nd::Tensor superkernel_forward(nd::Graph& g, const SuperKernel& k, const nd::Tensor& x, int ratio_index) {
  const int w = ratio_width(static_cast<int>(k.full.weight.dim(0)), ratio_index);
  ConvParams cut{nd::narrow(g, k.full.weight, 0, w), nd::narrow(g, k.full.bias, 0, w), 1};
  return conv_forward(g, cut, x);
}

std::vector<ConvParams> slice_branch(nd::Graph& g, const Branch& b, int ratio_index, int base_width) {
  const int w = ratio_width(base_width, ratio_index);
  std::vector<ConvParams> out;
  out.push_back({nd::narrow(g, b.expand.full.weight, 0, w), nd::narrow(g, b.expand.full.bias, 0, w), 1});
  switch (b.kind) {
    case OpKind::kConv1x1:
    case OpKind::kConv3x3:
      break;
    case OpKind::kResidualBlock:
      out.push_back({nd::narrow(g, b.follow.at(0).weight, 1, w), b.follow[0].bias, 1});
      break;
    case OpKind::kDepthwiseBlock:
      out.push_back({nd::narrow(g, b.follow.at(0).weight, 0, w), nd::narrow(g, b.follow[0].bias, 0, w), w});
      out.push_back({nd::narrow(g, b.follow.at(1).weight, 1, w), b.follow[1].bias, 1});
      break;
  }
  return out;
}

nd::Tensor branch_forward(nd::Graph& g, const Branch& b, const nd::Tensor& x, int ratio_index, int base_width) {
  return candidate_forward(g, b.kind, slice_branch(g, b, ratio_index, base_width), x,
                           ratio_width(base_width, ratio_index), base_width);
}

nd::Tensor supercell_forward(nd::Graph& g, const SuperCell& cell, const nd::Tensor& x, const CellChoice& choice,
                             int base_width) {
  if (choice.alpha.numel() != kNumOps) throw std::invalid_argument("supercell_forward: alpha must have 4 entries");
  nd::Tensor acc;
  for (int o = 0; o < kNumOps; ++o) {
    if (choice.alpha[o] == 0.0) continue;
    auto y = branch_forward(g, cell.branches[static_cast<std::size_t>(o)], x,
                            choice.ratio[static_cast<std::size_t>(o)], base_width);
    const auto& gate = choice.gate[static_cast<std::size_t>(o)];
    if (gate.defined()) y = nd::mul(g, y, gate);
    auto term = nd::mul(g, y, nd::select(g, choice.alpha, o));
    acc = acc.defined() ? nd::add(g, acc, term) : term;
  }
  if (!acc.defined()) throw std::invalid_argument("supercell_forward: all mixture weights are zero");
  return acc;
}

std::vector<nd::Tensor> TreeSupernet::weights() const {
  std::vector<nd::Tensor> w{stem.weight, stem.bias};
  for (const auto& c : cells) {
    for (const auto& b : c.branches) {
      w.push_back(b.expand.full.weight);
      w.push_back(b.expand.full.bias);
      for (const auto& f : b.follow) {
        w.push_back(f.weight);
        w.push_back(f.bias);
      }
    }
  }
  w.push_back(tail.weight);
  w.push_back(tail.bias);
  return w;
}

std::vector<nd::Tensor> TreeSupernet::arch_params() const {
  std::vector<nd::Tensor> p;
  for (const auto& c : cells) p.push_back(c.alpha);
  p.push_back(beta);
  for (const auto& c : cells) {
    for (const auto& b : c.branches) p.push_back(b.expand.gamma);
  }
  return p;
}

TreeSupernet build_supernet(const SearchConfig& cfg, Rng& rng) {
  validate(cfg);
  TreeSupernet net;
  net.blocks = cfg.blocks;
  net.cells_per_block = cfg.cells_per_block;
  net.base_width = cfg.base_width;
  net.scale = cfg.scale;
  const std::int64_t C = cfg.base_width;
  net.stem = init_conv(rng, C, 3, 3);
  net.cells.resize(static_cast<std::size_t>(cfg.blocks * cfg.cells_per_block));
  for (auto& cell : net.cells) {
    for (int o = 0; o < kNumOps; ++o) {
      auto& b = cell.branches[static_cast<std::size_t>(o)];
      b.kind = static_cast<OpKind>(o);
      switch (b.kind) {
        case OpKind::kConv1x1:
          b.expand.full = init_conv(rng, C, C, 1);
          break;
        case OpKind::kConv3x3:
          b.expand.full = init_conv(rng, C, C, 3);
          break;
        case OpKind::kResidualBlock:
          b.expand.full = init_conv(rng, C, C, 3);
          b.follow.push_back(init_conv(rng, C, C, 3));
          break;
        case OpKind::kDepthwiseBlock:
          b.expand.full = init_conv(rng, C, C, 1);
          b.follow.push_back(init_conv(rng, C, C, 3, static_cast<int>(C)));
          b.follow.push_back(init_conv(rng, C, C, 1));
          break;
      }
      b.expand.gamma = nd::Tensor(nd::Shape{kNumRatios}, 0.0);
    }
    cell.alpha = nd::Tensor(nd::Shape{kNumOps}, 0.0);
  }
  net.tail = init_conv(rng, 3 * static_cast<std::int64_t>(cfg.scale) * cfg.scale, C, 3);
  net.beta = nd::Tensor(nd::Shape{cfg.blocks}, 0.0);
  net.block_executions.assign(static_cast<std::size_t>(cfg.blocks), 0);
  for (auto& t : net.weights()) t.set_requires_grad(true);
  for (auto& t : net.arch_params()) t.set_requires_grad(true);
  return net;
}

nd::Tensor stem_forward(nd::Graph& g, const ConvParams& stem, const nd::Tensor& lr) {
  return conv_forward(g, stem, lr);
}

nd::Tensor tail_forward(nd::Graph& g, const ConvParams& tail, const nd::Tensor& features, int scale) {
  return nd::pixel_shuffle(g, conv_forward(g, tail, features), scale);
}

nd::Tensor tree_forward(nd::Graph& g, TreeSupernet& net, const nd::Tensor& lr, const ArchSample& arch, TailMode mode) {
  if (arch.beta.numel() != net.blocks) throw std::invalid_argument("tree_forward: beta length must equal blocks");
  if (static_cast<int>(arch.cells.size()) != net.num_cells()) {
    throw std::invalid_argument("tree_forward: one CellChoice per cell required");
  }
  int last = -1;
  for (int j = 0; j < net.blocks; ++j) {
    if (arch.beta[j] != 0.0) last = j;
  }
  if (last < 0) throw std::invalid_argument("tree_forward: beta is all zero");

  auto feature = stem_forward(g, net.stem, lr);
  nd::Tensor acc;
  for (int b = 0; b <= last; ++b) {
    ++net.block_executions[static_cast<std::size_t>(b)];
    auto h = feature;
    for (int c = 0; c < net.cells_per_block; ++c) {
      h = supercell_forward(g, net.cell(b, c), h, arch.cells[static_cast<std::size_t>(b * net.cells_per_block + c)],
                            net.base_width);
    }
    feature = nd::add(g, feature, h);
    if (arch.beta[b] == 0.0) continue;
    auto node = mode == TailMode::kPerNodeTail ? tail_forward(g, net.tail, feature, net.scale) : feature;
    auto term = nd::mul(g, node, nd::select(g, arch.beta, b));
    acc = acc.defined() ? nd::add(g, acc, term) : term;
  }
  return mode == TailMode::kPerNodeTail ? acc : tail_forward(g, net.tail, acc, net.scale);
}

std::vector<std::vector<int>> enumerate_paths(const TreeSupernet& net) {
  std::vector<std::vector<int>> paths;
  for (int j = 0; j < net.blocks; ++j) paths.emplace_back(static_cast<std::size_t>(j + 1), 0);
  return paths;
}

std::string path_string(const std::vector<int>& path) {
  std::string s = "[";
  for (std::size_t i = 0; i < path.size(); ++i) s += (i ? "," : "") + std::to_string(path[i]);
  return s + "]";
}

}  // namespace tnas
