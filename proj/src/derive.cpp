#include "tnas/derive.hpp"

#include <sstream>
#include <stdexcept>

#include "tnas/ops.hpp"
#include "tnas/projections.hpp"

namespace tnas {

std::string DerivedArch::path_string() const { return tnas::path_string(path()); }

DerivedArch derive_architecture(const TreeSupernet& net, std::span<const double> beta_norm,
                                const std::vector<std::vector<double>>& alpha_norm) {
  if (static_cast<int>(beta_norm.size()) != net.blocks) {
    throw std::invalid_argument("derive_architecture: beta length must equal the number of nodes");
  }
  if (static_cast<int>(alpha_norm.size()) != net.num_cells()) {
    throw std::invalid_argument("derive_architecture: one alpha vector per cell required");
  }
  DerivedArch a;
  a.base_width = net.base_width;
  a.scale = net.scale;
  a.supernet_blocks = net.blocks;
  a.cells_per_block = net.cells_per_block;
  a.terminal = static_cast<int>(proj::argmax(beta_norm));
  for (int b = 0; b <= a.terminal; ++b) {
    for (int c = 0; c < net.cells_per_block; ++c) {
      const auto idx = static_cast<std::size_t>(b * net.cells_per_block + c);
      DerivedCell dc;
      dc.op = static_cast<OpKind>(proj::argmax(alpha_norm[idx]));
      const auto& gamma = net.cells[idx].branches[static_cast<std::size_t>(dc.op)].expand.gamma;
      dc.ratio_index = static_cast<int>(proj::argmax(gamma.data()));
      dc.width = ratio_width(net.base_width, dc.ratio_index);
      a.cells.push_back(dc);
    }
  }
  return a;
}

std::int64_t conv_flops(std::int64_t cin, std::int64_t cout, int kernel, int groups, std::int64_t h, std::int64_t w) {
  return 2 * kernel * kernel * (cin / groups) * cout * h * w;
}

std::int64_t conv_params(std::int64_t cin, std::int64_t cout, int kernel, int groups) {
  return kernel * kernel * (cin / groups) * cout + cout;
}

std::int64_t op_flops(OpKind kind, int base_width, int width, std::int64_t h, std::int64_t w) {
  const std::int64_t C = base_width, k = width, hw = h * w;
  switch (kind) {
    case OpKind::kConv1x1:
      return conv_flops(C, k, 1, 1, h, w) + k * hw;
    case OpKind::kConv3x3:
      return conv_flops(C, k, 3, 1, h, w) + k * hw;
    case OpKind::kResidualBlock:
      return conv_flops(C, k, 3, 1, h, w) + k * hw + conv_flops(k, C, 3, 1, h, w) + C * hw;
    case OpKind::kDepthwiseBlock:
      return conv_flops(C, k, 1, 1, h, w) + k * hw + conv_flops(k, k, 3, static_cast<int>(k), h, w) + k * hw +
             conv_flops(k, C, 1, 1, h, w);
  }
  throw std::logic_error("unhandled op kind");
}

std::int64_t op_params(OpKind kind, int base_width, int width) {
  const std::int64_t C = base_width, k = width;
  switch (kind) {
    case OpKind::kConv1x1:
      return conv_params(C, k, 1, 1);
    case OpKind::kConv3x3:
      return conv_params(C, k, 3, 1);
    case OpKind::kResidualBlock:
      return conv_params(C, k, 3, 1) + conv_params(k, C, 3, 1);
    case OpKind::kDepthwiseBlock:
      return conv_params(C, k, 1, 1) + conv_params(k, k, 3, static_cast<int>(k)) + conv_params(k, C, 1, 1);
  }
  throw std::logic_error("unhandled op kind");
}

std::int64_t block_skip_flops(int base_width, std::int64_t h, std::int64_t w) { return base_width * h * w; }

std::int64_t stem_flops(int base_width, std::int64_t h, std::int64_t w) { return conv_flops(3, base_width, 3, 1, h, w); }

std::int64_t tail_flops(int base_width, int scale, std::int64_t h, std::int64_t w) {
  return conv_flops(base_width, 3 * scale * scale, 3, 1, h, w);
}

std::int64_t count_params(const DerivedArch& arch) {
  std::int64_t n = conv_params(3, arch.base_width, 3, 1) + conv_params(arch.base_width, 3 * arch.scale * arch.scale, 3, 1);
  for (const auto& c : arch.cells) n += op_params(c.op, arch.base_width, c.width);
  return n;
}

std::int64_t count_flops(const DerivedArch& arch, std::int64_t h, std::int64_t w) {
  if (h <= 0 || w <= 0) throw std::invalid_argument("count_flops: resolution must be positive");
  std::int64_t f = stem_flops(arch.base_width, h, w) + tail_flops(arch.base_width, arch.scale, h, w);
  for (const auto& c : arch.cells) f += op_flops(c.op, arch.base_width, c.width, h, w);
  f += arch.path_length() * block_skip_flops(arch.base_width, h, w);
  return f;
}

std::string to_text(const DerivedArch& arch) {
  std::ostringstream os;
  os << "path: " << arch.path_string() << "\n"
     << "terminal_node: " << arch.terminal << "\n"
     << "supernet_blocks: " << arch.supernet_blocks << "\n"
     << "cells_per_block: " << arch.cells_per_block << "\n"
     << "base_width: " << arch.base_width << "\n"
     << "scale: " << arch.scale << "\n"
     << "block | cell | op | ratio | width\n";
  for (int b = 0; b < arch.path_length(); ++b) {
    for (int c = 0; c < arch.cells_per_block; ++c) {
      const auto& dc = arch.cell(b, c);
      os << b << " | " << c << " | " << to_string(dc.op) << " | " << ratio_label(dc.ratio_index) << " | " << dc.width
         << "\n";
    }
  }
  return os.str();
}

DerivedArch parse_derived_arch(const std::string& text) {
  DerivedArch a;
  std::istringstream in(text);
  std::string line;
  auto header = [&](const char* key) {
    if (!std::getline(in, line)) throw std::runtime_error(std::string("derived arch: missing '") + key + "'");
    const std::string prefix = std::string(key) + ": ";
    if (line.rfind(prefix, 0) != 0) {
      throw std::runtime_error("derived arch: expected '" + prefix + "', got '" + line + "'");
    }
    return line.substr(prefix.size());
  };
  const auto path = header("path");
  a.terminal = std::stoi(header("terminal_node"));
  a.supernet_blocks = std::stoi(header("supernet_blocks"));
  a.cells_per_block = std::stoi(header("cells_per_block"));
  a.base_width = std::stoi(header("base_width"));
  a.scale = std::stoi(header("scale"));
  if (!std::getline(in, line) || line != "block | cell | op | ratio | width") {
    throw std::runtime_error("derived arch: missing cell table header");
  }
  if (a.terminal < 0 || a.terminal >= a.supernet_blocks || a.cells_per_block <= 0) {
    throw std::runtime_error("derived arch: inconsistent dimensions");
  }
  for (int i = 0; i < a.path_length() * a.cells_per_block; ++i) {
    if (!std::getline(in, line)) throw std::runtime_error("derived arch: truncated cell table");
    std::vector<std::string> cols;
    std::istringstream row(line);
    std::string col;
    while (std::getline(row, col, '|')) {
      const auto b = col.find_first_not_of(' ');
      const auto e = col.find_last_not_of(' ');
      cols.push_back(b == std::string::npos ? "" : col.substr(b, e - b + 1));
    }
    if (cols.size() != 5) throw std::runtime_error("derived arch: malformed row '" + line + "'");
    if (std::stoi(cols[0]) != i / a.cells_per_block || std::stoi(cols[1]) != i % a.cells_per_block) {
      throw std::runtime_error("derived arch: rows out of order at '" + line + "'");
    }
    DerivedCell dc;
    dc.op = op_kind_from_string(cols[2]);
    dc.ratio_index = -1;
    for (int r = 0; r < kNumRatios; ++r) {
      if (ratio_label(r) == cols[3]) dc.ratio_index = r;
    }
    if (dc.ratio_index < 0) throw std::runtime_error("derived arch: unknown ratio '" + cols[3] + "'");
    dc.width = ratio_width(a.base_width, dc.ratio_index);
    if (std::stoi(cols[4]) != dc.width) throw std::runtime_error("derived arch: width does not match ratio");
    a.cells.push_back(dc);
  }
  if (path != a.path_string()) throw std::runtime_error("derived arch: path does not match terminal node");
  return a;
}

std::vector<nd::Tensor> DerivedModel::weights() const {
  std::vector<nd::Tensor> w{stem.weight, stem.bias};
  for (const auto& cell : cells) {
    for (const auto& p : cell) {
      w.push_back(p.weight);
      w.push_back(p.bias);
    }
  }
  w.push_back(tail.weight);
  w.push_back(tail.bias);
  return w;
}

nd::Tensor DerivedModel::forward(nd::Graph& g, const nd::Tensor& lr) const {
  auto feature = stem_forward(g, stem, lr);
  for (int b = 0; b < arch.path_length(); ++b) {
    auto h = feature;
    for (int c = 0; c < arch.cells_per_block; ++c) {
      const auto& dc = arch.cell(b, c);
      h = candidate_forward(g, dc.op, cells[static_cast<std::size_t>(b * arch.cells_per_block + c)], h, dc.width,
                            arch.base_width);
    }
    feature = nd::add(g, feature, h);
  }
  return tail_forward(g, tail, feature, arch.scale);
}

DerivedModel extract_model(const TreeSupernet& net, const DerivedArch& arch) {
  if (arch.base_width != net.base_width || arch.cells_per_block != net.cells_per_block || arch.terminal >= net.blocks) {
    throw std::invalid_argument("extract_model: architecture does not fit the supernet");
  }
  DerivedModel m;
  m.arch = arch;
  m.stem = net.stem.clone();
  m.tail = net.tail.clone();
  nd::Graph g(nd::Graph::Mode::kInference);
  for (int b = 0; b < arch.path_length(); ++b) {
    for (int c = 0; c < arch.cells_per_block; ++c) {
      const auto& dc = arch.cell(b, c);
      const auto& branch = net.cell(b, c).branches[static_cast<std::size_t>(dc.op)];
      auto sliced = slice_branch(g, branch, dc.ratio_index, net.base_width);
      for (auto& p : sliced) p = p.clone();
      m.cells.push_back(std::move(sliced));
    }
  }
  for (auto& t : m.weights()) t.set_requires_grad(true);
  return m;
}

DerivedModel init_model(const DerivedArch& arch, Rng& rng) {
  DerivedModel m;
  m.arch = arch;
  const std::int64_t C = arch.base_width;
  m.stem = init_conv(rng, C, 3, 3);
  for (const auto& dc : arch.cells) {
    const std::int64_t k = dc.width;
    std::vector<ConvParams> convs;
    switch (dc.op) {
      case OpKind::kConv1x1:
        convs.push_back(init_conv(rng, k, C, 1));
        break;
      case OpKind::kConv3x3:
        convs.push_back(init_conv(rng, k, C, 3));
        break;
      case OpKind::kResidualBlock:
        convs.push_back(init_conv(rng, k, C, 3));
        convs.push_back(init_conv(rng, C, k, 3));
        break;
      case OpKind::kDepthwiseBlock:
        convs.push_back(init_conv(rng, k, C, 1));
        convs.push_back(init_conv(rng, k, k, 3, static_cast<int>(k)));
        convs.push_back(init_conv(rng, C, k, 1));
        break;
    }
    m.cells.push_back(std::move(convs));
  }
  m.tail = init_conv(rng, 3 * static_cast<std::int64_t>(arch.scale) * arch.scale, C, 3);
  for (auto& t : m.weights()) t.set_requires_grad(true);
  return m;
}

}  // namespace tnas
