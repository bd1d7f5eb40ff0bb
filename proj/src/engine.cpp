#include "tnas/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "tnas/dataio.hpp"
#include "tnas/ops.hpp"

namespace tnas {

namespace {

enum Phase : std::uint64_t { kPretrainPhase = 1, kSearchPhase = 2, kTrainPhase = 3 };

constexpr double kTieNoise = 1e-3;

Rng epoch_rng(const SearchConfig& cfg, Phase phase, int epoch) {
  return Rng(derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(phase) * 100000 + static_cast<std::uint64_t>(epoch)));
}

void require_finite(double loss, const char* phase, int epoch) {
  if (!std::isfinite(loss)) {
    throw std::runtime_error(std::string("diverged: non-finite loss in ") + phase + " epoch " +
                             std::to_string(epoch));
  }
}

void set_requires_grad(const std::vector<nd::Tensor>& params, bool on) {
  for (auto t : params) t.set_requires_grad(on);
}

nd::Tensor image_batch(const std::vector<nd::Tensor>& images, const std::vector<int>& ids) {
  const auto& s = images.at(static_cast<std::size_t>(ids.front())).shape();
  nd::Tensor out(nd::Shape{static_cast<std::int64_t>(ids.size()), s[0], s[1], s[2]});
  const auto per = static_cast<std::size_t>(nd::numel(s));
  auto dst = out.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto& img = images[static_cast<std::size_t>(ids[i])];
    if (img.shape() != s) throw std::invalid_argument("image_batch: images differ in shape");
    std::copy(img.data().begin(), img.data().end(), dst.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return out;
}

/// [C,H,W] window of size ph x pw at (y, x).
nd::Tensor crop(const nd::Tensor& img, std::int64_t y, std::int64_t x, std::int64_t ph, std::int64_t pw) {
  const auto c = img.dim(0), h = img.dim(1), w = img.dim(2);
  if (y + ph > h || x + pw > w) throw std::invalid_argument("crop: window exceeds image");
  nd::Tensor out(nd::Shape{c, ph, pw});
  for (std::int64_t k = 0; k < c; ++k) {
    for (std::int64_t i = 0; i < ph; ++i) {
      for (std::int64_t j = 0; j < pw; ++j) out[(k * ph + i) * pw + j] = img[(k * h + y + i) * w + x + j];
    }
  }
  return out;
}

nd::Tensor constant_vector(std::span<const double> v) { return nd::Tensor::vector({v.begin(), v.end()}); }

int count_nonzero(std::span<const double> v) {
  return static_cast<int>(std::count_if(v.begin(), v.end(), [](double x) { return x != 0.0; }));
}

std::array<int, kNumOps> argmax_ratios(const SuperCell& cell) {
  std::array<int, kNumOps> r{};
  for (int o = 0; o < kNumOps; ++o) {
    r[static_cast<std::size_t>(o)] =
        static_cast<int>(proj::argmax(cell.branches[static_cast<std::size_t>(o)].expand.gamma.data()));
  }
  return r;
}

ForwardFn supernet_forward(TreeSupernet& net, const ArchSample& sample, TailMode mode) {
  return [&net, sample, mode](nd::Graph& g, const nd::Tensor& lr) { return tree_forward(g, net, lr, sample, mode); };
}

double elapsed(std::chrono::steady_clock::time_point start, const SearchConfig& cfg) {
  if (!cfg.record_wall_seconds) return 0.0;
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

nd::AdamConfig adam_config(double lr) {
  nd::AdamConfig a;
  a.lr = lr;
  return a;
}

}  // namespace

nd::Tensor Teacher::operator()(const nd::Tensor& lr) const {
  nd::Graph g(nd::Graph::Mode::kInference);
  return conv_forward(g, conv, data::bicubic_upsample(lr, scale));
}

Teacher make_teacher(std::uint64_t seed, int scale) {
  Rng rng(seed);
  Teacher t;
  t.scale = scale;
  t.conv.weight = nd::Tensor(nd::Shape{3, 3, 3, 3});
  t.conv.bias = nd::Tensor(nd::Shape{3}, 0.0);
  for (std::int64_t i = 0; i < t.conv.weight.numel(); ++i) t.conv.weight[i] = rng.uniform(-0.02, 0.02);
  for (std::int64_t c = 0; c < 3; ++c) t.conv.weight[((c * 3 + c) * 3 + 1) * 3 + 1] += 1.0;
  return t;
}

Dataset Dataset::subset(const std::vector<int>& indices) const {
  Dataset d;
  for (int i : indices) {
    d.lr.push_back(lr.at(static_cast<std::size_t>(i)));
    d.target.push_back(target.at(static_cast<std::size_t>(i)));
  }
  return d;
}

Dataset build_dataset(const std::vector<nd::Tensor>& hr, const Teacher& teacher, int scale) {
  Dataset d;
  for (const auto& img : hr) {
    auto lr = data::downsample(img, scale);
    nd::Tensor batch(nd::Shape{1, lr.dim(0), lr.dim(1), lr.dim(2)}, {lr.data().begin(), lr.data().end()});
    auto out = teacher(batch);
    d.target.emplace_back(nd::Shape{out.dim(1), out.dim(2), out.dim(3)},
                          std::vector<double>(out.data().begin(), out.data().end()));
    d.lr.push_back(std::move(lr));
  }
  return d;
}

std::vector<int> shuffled_order(int n, Rng& rng) {
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  for (int i = n - 1; i > 0; --i) {
    std::swap(order[static_cast<std::size_t>(i)], order[rng.below(static_cast<std::uint64_t>(i) + 1)]);
  }
  return order;
}

std::vector<Batch> make_batches(const Dataset& data, const std::vector<int>& order, int batch_size, int patch,
                                int scale, Rng* rng) {
  if (batch_size <= 0) throw std::invalid_argument("make_batches: batch_size must be positive");
  if (patch > 0 && (patch % scale != 0 || rng == nullptr)) {
    throw std::invalid_argument("make_batches: patch must be a multiple of scale and needs an rng");
  }
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto stop = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<int> ids(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(stop));
    if (patch <= 0) {
      out.push_back(Batch{image_batch(data.lr, ids), image_batch(data.target, ids)});
      continue;
    }
    const std::int64_t lp = patch / scale;
    std::vector<nd::Tensor> lrs, targets;
    std::vector<int> local;
    for (int id : ids) {
      const auto& lr = data.lr[static_cast<std::size_t>(id)];
      const auto& tg = data.target[static_cast<std::size_t>(id)];
      if (lr.dim(1) < lp || lr.dim(2) < lp) throw std::invalid_argument("make_batches: patch larger than image");
      const auto y = static_cast<std::int64_t>(rng->below(static_cast<std::uint64_t>(lr.dim(1) - lp + 1)));
      const auto x = static_cast<std::int64_t>(rng->below(static_cast<std::uint64_t>(lr.dim(2) - lp + 1)));
      lrs.push_back(crop(lr, y, x, lp, lp));
      targets.push_back(crop(tg, y * scale, x * scale, patch, patch));
      local.push_back(static_cast<int>(local.size()));
    }
    out.push_back(Batch{image_batch(lrs, local), image_batch(targets, local)});
  }
  return out;
}

nd::Tensor content_loss(nd::Graph& g, const nd::Tensor& student, const nd::Tensor& teacher_out) {
  if (student.shape() != teacher_out.shape()) {
    throw std::invalid_argument("content_loss: shape mismatch " + nd::to_string(student.shape()) + " vs " +
                                nd::to_string(teacher_out.shape()));
  }
  return nd::mean(g, nd::abs(g, nd::sub(g, student, teacher_out)));
}

nd::Tensor normalize(nd::Graph& g, const nd::Tensor& logits, Normalization kind, double r) {
  return kind == Normalization::kSoftmax ? proj::softmax(g, logits) : proj::sparsestmax(g, logits, r);
}

std::vector<double> normalize(std::span<const double> logits, Normalization kind, double r) {
  return kind == Normalization::kSoftmax ? proj::softmax(logits) : proj::sparsestmax(logits, r);
}

double RadiusPlan::fraction(std::int64_t step) const {
  return proj::RadiusSchedule{1.0, total_steps}.at(step);
}

double RadiusPlan::alpha(std::int64_t step) const { return proj::circumradius(kNumOps) * fraction(step); }

double RadiusPlan::beta(std::int64_t step) const {
  return proj::circumradius(static_cast<std::size_t>(blocks)) * fraction(step);
}

RadiusPlan radius_plan(const SearchConfig& cfg, int chi2_size) {
  const std::int64_t per_epoch = (chi2_size + cfg.batch_size - 1) / cfg.batch_size;
  return RadiusPlan{std::max<std::int64_t>(1, static_cast<std::int64_t>(cfg.search_epochs) * per_epoch), cfg.blocks};
}

nd::Tensor efficiency_cost(nd::Graph& g, const TreeSupernet& net, const std::vector<nd::Tensor>& alpha_norm,
                           const nd::Tensor& beta_norm,
                           const std::vector<std::array<nd::Tensor, kNumOps>>& gamma_probs, std::int64_t h,
                           std::int64_t w) {
  if (static_cast<int>(alpha_norm.size()) != net.num_cells() ||
      static_cast<int>(gamma_probs.size()) != net.num_cells() || beta_norm.numel() != net.blocks) {
    throw std::invalid_argument("efficiency_cost: one alpha and gamma set per cell and one beta per node required");
  }
  const int C = net.base_width;
  // Op FLOPs are affine in the width, so <p_gamma, F_o> = F_o(E_gamma[width]).
  std::vector<nd::Tensor> prefix;
  nd::Tensor running;
  for (int b = 0; b < net.blocks; ++b) {
    nd::Tensor block = nd::Tensor::scalar(static_cast<double>(block_skip_flops(C, h, w)));
    for (int c = 0; c < net.cells_per_block; ++c) {
      const auto idx = static_cast<std::size_t>(b * net.cells_per_block + c);
      const auto& cell = net.cell(b, c);
      std::vector<nd::Tensor> per_op;
      for (int o = 0; o < kNumOps; ++o) {
        std::vector<double> table(kNumRatios);
        const auto kind = cell.branches[static_cast<std::size_t>(o)].kind;
        for (int i = 0; i < kNumRatios; ++i) {
          table[static_cast<std::size_t>(i)] = static_cast<double>(op_flops(kind, C, ratio_width(C, i), h, w));
        }
        per_op.push_back(nd::dot(g, gamma_probs[idx][static_cast<std::size_t>(o)], nd::Tensor::vector(table)));
      }
      block = nd::add(g, block, nd::dot(g, alpha_norm[idx], nd::stack(g, per_op)));
    }
    running = running.defined() ? nd::add(g, running, block) : block;
    prefix.push_back(running);
  }
  const double fixed = static_cast<double>(stem_flops(C, h, w) + tail_flops(C, net.scale, h, w));
  return nd::add_scalar(g, nd::dot(g, beta_norm, nd::stack(g, prefix)), fixed);
}

proj::Penalty path_ordering_penalty(std::span<const double> beta_logits, double lambda, bool hinge) {
  proj::Penalty total;
  total.gradient.assign(beta_logits.size(), 0.0);
  const auto mode = hinge ? proj::OrderingMode::kHinge : proj::OrderingMode::kTelescoping;
  for (std::size_t j = 1; j <= beta_logits.size(); ++j) {
    const auto p = proj::ordering_penalty(beta_logits.first(j), lambda, mode);
    total.value += p.value;
    for (std::size_t i = 0; i < j; ++i) total.gradient[i] += p.gradient[i];
  }
  return total;
}

namespace {

struct ErrorSums {
  double abs = 0.0;
  double sq = 0.0;
  std::int64_t count = 0;
};

ErrorSums error_sums(const ForwardFn& forward, const Dataset& data, int batch_size) {
  if (data.size() == 0) throw std::invalid_argument("evaluation on an empty dataset");
  std::vector<int> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), 0);
  ErrorSums s;
  for (const auto& batch : make_batches(data, order, batch_size, 0, 1, nullptr)) {
    nd::Graph g(nd::Graph::Mode::kInference);
    const auto out = forward(g, batch.lr);
    if (out.shape() != batch.target.shape()) throw std::invalid_argument("evaluation: output shape mismatch");
    for (std::int64_t i = 0; i < out.numel(); ++i) {
      const double d = out[i] - batch.target[i];
      s.abs += std::abs(d);
      s.sq += d * d;
    }
    s.count += out.numel();
  }
  return s;
}

}  // namespace

double evaluate_loss(const ForwardFn& forward, const Dataset& data, int batch_size) {
  const auto s = error_sums(forward, data, batch_size);
  return s.abs / static_cast<double>(s.count);
}

double evaluate_psnr(const ForwardFn& forward, const Dataset& data, int batch_size) {
  const auto s = error_sums(forward, data, batch_size);
  return data::psnr_from_mse(s.sq / static_cast<double>(s.count));
}

std::string metrics_header() {
  return "epoch,phase,loss_content,loss_efficiency,loss_order,r_value,psnr_val,nnz_alpha,nnz_beta,wall_seconds";
}

std::string format_metrics(const MetricsRow& row) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%d,%s,%.17g,%.17g,%.17g,%.17g,%.17g,%d,%d,%.3f", row.epoch, row.phase.c_str(),
                row.loss_content, row.loss_efficiency, row.loss_order, row.r_value, row.psnr_val, row.nnz_alpha,
                row.nnz_beta, row.wall_seconds);
  return buf;
}

double step_decayed_lr(double base, int epoch, int epochs) {
  double lr = base;
  for (int q = 1; q <= 3; ++q) {
    const int milestone = epochs * q / 4;
    if (milestone > 0 && epoch >= milestone) lr *= 0.5;
  }
  return lr;
}

double gumbel_temperature(const SearchConfig& cfg, int epoch) {
  if (cfg.search_epochs <= 1) return cfg.gumbel_tau_start;
  const double t = static_cast<double>(epoch) / static_cast<double>(cfg.search_epochs - 1);
  return cfg.gumbel_tau_start * std::pow(cfg.gumbel_tau_end / cfg.gumbel_tau_start, std::min(1.0, t));
}

ArchWeights arch_weights(const TreeSupernet& net, Normalization kind, double r_alpha, double r_beta) {
  ArchWeights w;
  for (const auto& c : net.cells) w.alpha.push_back(normalize(c.alpha.data(), kind, r_alpha));
  w.beta = normalize(net.beta.data(), kind, r_beta);
  return w;
}

ArchSample constant_sample(const TreeSupernet& net, const ArchWeights& w, int ratio) {
  ArchSample s;
  s.beta = constant_vector(w.beta);
  for (int i = 0; i < net.num_cells(); ++i) {
    CellChoice c;
    c.alpha = constant_vector(w.alpha.at(static_cast<std::size_t>(i)));
    if (ratio < 0) {
      c.ratio = argmax_ratios(net.cells[static_cast<std::size_t>(i)]);
    } else {
      c.ratio.fill(ratio);
    }
    s.cells.push_back(std::move(c));
  }
  return s;
}

TailMode tail_mode(const SearchConfig& cfg) {
  return cfg.per_node_tail ? TailMode::kPerNodeTail : TailMode::kFuseThenTail;
}

void pretrain(TreeSupernet& net, const Dataset& chi1, const Dataset& val, const SearchConfig& cfg,
              PhaseProgress& progress, const EpochCallback& on_epoch) {
  const auto start = std::chrono::steady_clock::now();
  if (progress.w_opt.params().empty()) progress.w_opt = nd::Adam(net.weights(), adam_config(cfg.lr_w));
  set_requires_grad(net.weights(), true);
  set_requires_grad(net.arch_params(), false);
  const auto mode = tail_mode(cfg);
  ArchWeights uniform;
  uniform.alpha.assign(static_cast<std::size_t>(net.num_cells()), std::vector<double>(kNumOps, 1.0 / kNumOps));
  uniform.beta.assign(static_cast<std::size_t>(net.blocks), 1.0 / net.blocks);

  while (progress.epochs_done < cfg.pretrain_epochs) {
    const int epoch = progress.epochs_done;
    Rng rng = epoch_rng(cfg, kPretrainPhase, epoch);
    progress.w_opt.set_lr(step_decayed_lr(cfg.lr_w, epoch, cfg.pretrain_epochs));
    const auto batches = make_batches(chi1, shuffled_order(chi1.size(), rng), cfg.batch_size, cfg.patch_size,
                                      cfg.scale, &rng);
    double loss_sum = 0.0;
    for (const auto& batch : batches) {
      // Sandwich: largest, smallest and two random width assignments.
      for (int pass = 0; pass < 4; ++pass) {
        ArchSample sample = constant_sample(net, uniform, pass == 0 ? kMaxRatio : 0);
        if (pass >= 2) {
          for (auto& c : sample.cells) {
            for (auto& r : c.ratio) r = static_cast<int>(rng.below(kNumRatios));
          }
        }
        nd::Graph g;
        auto loss = content_loss(g, tree_forward(g, net, batch.lr, sample, mode), batch.target);
        require_finite(loss.item(), "pretrain", epoch);
        loss_sum += loss.item();
        g.backward(loss);
      }
      progress.w_opt.step();
      progress.w_opt.zero_grad();
    }
    ++progress.epochs_done;

    MetricsRow row;
    row.epoch = epoch;
    row.phase = "pretrain";
    row.loss_content = loss_sum / static_cast<double>(4 * batches.size());
    row.psnr_val = evaluate_psnr(supernet_forward(net, constant_sample(net, uniform, kMaxRatio), mode), val,
                                 cfg.batch_size);
    row.nnz_alpha = kNumOps * net.num_cells();
    row.nnz_beta = net.blocks;
    row.wall_seconds = elapsed(start, cfg);
    if (on_epoch && !on_epoch(row, progress)) break;
  }
  set_requires_grad(net.arch_params(), true);
}

namespace {

/// Architecture-step objective terms of one batch.
struct ArchTerms {
  double content = 0.0;
  double efficiency = 0.0;
  double order = 0.0;
};

ArchTerms arch_step(TreeSupernet& net, const Batch& batch, const SearchConfig& cfg, const RadiusPlan& plan,
                    std::int64_t step, double tau, Rng& rng, nd::Adam& opt) {
  const auto kind = cfg.normalization;
  nd::Graph g;
  std::vector<nd::Tensor> alpha_n;
  std::vector<std::array<nd::Tensor, kNumOps>> gamma_p;
  ArchSample sample;
  for (const auto& cell : net.cells) {
    CellChoice c;
    c.alpha = normalize(g, cell.alpha, kind, plan.alpha(step));
    std::array<nd::Tensor, kNumOps> probs;
    for (int o = 0; o < kNumOps; ++o) {
      const auto& gamma = cell.branches[static_cast<std::size_t>(o)].expand.gamma;
      const auto s = proj::gumbel_softmax_sample(gamma.data(), tau, rng);
      auto soft = proj::gumbel_softmax(g, gamma, s.noise, tau);
      c.ratio[static_cast<std::size_t>(o)] = static_cast<int>(s.hard);
      c.gate[static_cast<std::size_t>(o)] = proj::straight_through(g, soft, s.hard);
      probs[static_cast<std::size_t>(o)] = nd::grad_scale(g, soft, cfg.omega2);
    }
    alpha_n.push_back(nd::grad_scale(g, c.alpha, cfg.omega1));
    gamma_p.push_back(probs);
    sample.cells.push_back(std::move(c));
  }
  sample.beta = normalize(g, net.beta, kind, plan.beta(step));

  ArchTerms terms;
  auto loss = content_loss(g, tree_forward(g, net, batch.lr, sample, tail_mode(cfg)), batch.target);
  terms.content = loss.item();
  if (cfg.lambda_flops != 0.0) {
    auto h = efficiency_cost(g, net, alpha_n, nd::grad_scale(g, sample.beta, cfg.omega1), gamma_p,
                             cfg.flops_eval_height, cfg.flops_eval_width);
    auto e = nd::scale(g, h, cfg.lambda_flops * 1e-9);
    terms.efficiency = e.item();
    loss = nd::add(g, loss, e);
  }
  if (cfg.lambda_order != 0.0) {
    auto p = path_ordering_penalty(net.beta.data(), cfg.lambda_order, cfg.hinge_order);
    terms.order = p.value;
    loss = nd::add(g, loss, nd::constant_gradient(g, net.beta, p.value, std::move(p.gradient)));
  }
  if (!std::isfinite(loss.item())) throw std::runtime_error("diverged: non-finite architecture loss");
  g.backward(loss);
  opt.step();
  opt.zero_grad();
  return terms;
}

/// Exactly equal logits sit on the tie-escape branch of sparsestmax, whose
/// derivative is zero; a seeded perturbation of 1e-3 makes every direction
/// learnable.
void break_ties(TreeSupernet& net, const SearchConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, 106));
  for (auto& c : net.cells) {
    for (auto& x : c.alpha.data()) x += kTieNoise * rng.normal();
  }
  for (auto& x : net.beta.data()) x += kTieNoise * rng.normal();
}

}  // namespace

void search(TreeSupernet& net, const Dataset& chi1, const Dataset& chi2, const Dataset& val, const SearchConfig& cfg,
            PhaseProgress& progress, const EpochCallback& on_epoch) {
  const auto start = std::chrono::steady_clock::now();
  if (progress.w_opt.params().empty()) progress.w_opt = nd::Adam(net.weights(), adam_config(cfg.lr_w));
  if (progress.arch_opt.params().empty()) progress.arch_opt = nd::Adam(net.arch_params(), adam_config(cfg.lr_arch));
  const auto plan = radius_plan(cfg, chi2.size());
  const auto mode = tail_mode(cfg);
  if (progress.epochs_done == 0 && progress.arch_steps == 0) break_ties(net, cfg);

  while (progress.epochs_done < cfg.search_epochs) {
    const int epoch = progress.epochs_done;
    Rng rng = epoch_rng(cfg, kSearchPhase, epoch);
    const double tau = gumbel_temperature(cfg, epoch);

    // Weight pass on chi1 under the current (constant) architecture distribution.
    set_requires_grad(net.weights(), true);
    set_requires_grad(net.arch_params(), false);
    progress.w_opt.set_lr(step_decayed_lr(cfg.lr_w, epoch, cfg.search_epochs));
    const auto current = arch_weights(net, cfg.normalization, plan.alpha(progress.arch_steps),
                                      plan.beta(progress.arch_steps));
    for (const auto& batch : make_batches(chi1, shuffled_order(chi1.size(), rng), cfg.batch_size, cfg.patch_size,
                                          cfg.scale, &rng)) {
      ArchSample sample = constant_sample(net, current, kMaxRatio);
      for (std::size_t i = 0; i < sample.cells.size(); ++i) {
        for (int o = 0; o < kNumOps; ++o) {
          const auto& gamma = net.cells[i].branches[static_cast<std::size_t>(o)].expand.gamma;
          sample.cells[i].ratio[static_cast<std::size_t>(o)] =
              static_cast<int>(proj::gumbel_softmax_sample(gamma.data(), tau, rng).hard);
        }
      }
      nd::Graph g;
      auto loss = content_loss(g, tree_forward(g, net, batch.lr, sample, mode), batch.target);
      require_finite(loss.item(), "search", epoch);
      g.backward(loss);
      progress.w_opt.step();
      progress.w_opt.zero_grad();
    }

    // Architecture pass on chi2; the radius advances once per batch.
    set_requires_grad(net.weights(), false);
    set_requires_grad(net.arch_params(), true);
    ArchTerms sums;
    const auto batches =
        make_batches(chi2, shuffled_order(chi2.size(), rng), cfg.batch_size, cfg.patch_size, cfg.scale, &rng);
    for (const auto& batch : batches) {
      ++progress.arch_steps;
      const auto t = arch_step(net, batch, cfg, plan, progress.arch_steps, tau, rng, progress.arch_opt);
      sums.content += t.content;
      sums.efficiency += t.efficiency;
      sums.order += t.order;
    }
    set_requires_grad(net.weights(), true);
    ++progress.epochs_done;

    const auto now = arch_weights(net, cfg.normalization, plan.alpha(progress.arch_steps),
                                  plan.beta(progress.arch_steps));
    const auto n = static_cast<double>(batches.size());
    MetricsRow row;
    row.epoch = epoch;
    row.phase = "search";
    row.loss_content = sums.content / n;
    row.loss_efficiency = sums.efficiency / n;
    row.loss_order = sums.order / n;
    row.r_value = plan.fraction(progress.arch_steps);
    row.psnr_val = evaluate_psnr(supernet_forward(net, constant_sample(net, now, -1), mode), val, cfg.batch_size);
    for (const auto& a : now.alpha) row.nnz_alpha += count_nonzero(a);
    row.nnz_beta = count_nonzero(now.beta);
    row.wall_seconds = elapsed(start, cfg);
    if (on_epoch && !on_epoch(row, progress)) break;
  }
}

SearchResult finish_search(TreeSupernet& net, const SearchConfig& cfg, const Dataset& eval, std::int64_t arch_steps,
                           int chi2_size) {
  const auto plan = radius_plan(cfg, chi2_size);
  SearchResult res;
  res.weights = arch_weights(net, cfg.normalization, plan.alpha(arch_steps), plan.beta(arch_steps));
  res.arch = derive_architecture(net, res.weights.beta, res.weights.alpha);
  res.final_loss =
      evaluate_loss(supernet_forward(net, constant_sample(net, res.weights, -1), tail_mode(cfg)), eval, cfg.batch_size);
  return res;
}

DerivedModel make_final_model(const TreeSupernet& net, const DerivedArch& arch, const SearchConfig& cfg) {
  if (cfg.train_mode == TrainMode::kFromSearch) return extract_model(net, arch);
  Rng rng(derive_seed(init_seed(cfg), kTrainPhase));
  return init_model(arch, rng);
}

void train_final(DerivedModel& model, const Dataset& train, const Dataset& val, const SearchConfig& cfg,
                 PhaseProgress& progress, const EpochCallback& on_epoch) {
  const auto start = std::chrono::steady_clock::now();
  const auto params = model.weights();
  set_requires_grad(params, true);
  if (progress.w_opt.params().empty()) progress.w_opt = nd::Adam(params, adam_config(cfg.lr_w));
  const ForwardFn forward = [&model](nd::Graph& g, const nd::Tensor& lr) { return model.forward(g, lr); };
  const double efficiency =
      cfg.lambda_flops * 1e-9 * static_cast<double>(count_flops(model.arch, cfg.flops_eval_height, cfg.flops_eval_width));

  while (progress.epochs_done < cfg.train_epochs) {
    const int epoch = progress.epochs_done;
    Rng rng = epoch_rng(cfg, kTrainPhase, epoch);
    progress.w_opt.set_lr(step_decayed_lr(cfg.lr_w, epoch, cfg.train_epochs));
    const auto batches =
        make_batches(train, shuffled_order(train.size(), rng), cfg.batch_size, cfg.patch_size, cfg.scale, &rng);
    double loss_sum = 0.0;
    for (const auto& batch : batches) {
      nd::Graph g;
      auto loss = content_loss(g, model.forward(g, batch.lr), batch.target);
      require_finite(loss.item(), "train", epoch);
      loss_sum += loss.item();
      g.backward(loss);
      progress.w_opt.step();
      progress.w_opt.zero_grad();
    }
    ++progress.epochs_done;

    MetricsRow row;
    row.epoch = epoch;
    row.phase = "train";
    row.loss_content = loss_sum / static_cast<double>(batches.size());
    row.loss_efficiency = efficiency;
    row.r_value = 1.0;
    row.psnr_val = evaluate_psnr(forward, val, cfg.batch_size);
    row.nnz_alpha = static_cast<int>(model.arch.cells.size());
    row.nnz_beta = 1;
    row.wall_seconds = elapsed(start, cfg);
    if (on_epoch && !on_epoch(row, progress)) break;
  }
}

std::uint64_t teacher_seed(const SearchConfig& cfg) { return derive_seed(cfg.seed, 101); }
std::uint64_t data_seed(const SearchConfig& cfg) { return derive_seed(cfg.seed, 102); }
std::uint64_t holdout_seed(const SearchConfig& cfg) { return derive_seed(cfg.seed, 103); }
std::uint64_t split_seed(const SearchConfig& cfg) { return derive_seed(cfg.seed, 104); }
std::uint64_t init_seed(const SearchConfig& cfg) { return derive_seed(cfg.seed, 105); }

RunData make_run_data(const SearchConfig& cfg) {
  RunData d;
  d.teacher = make_teacher(teacher_seed(cfg), cfg.scale);
  d.all = build_dataset(data::gen_synthetic(data_seed(cfg), cfg.num_images, cfg.image_size, cfg.image_size),
                        d.teacher, cfg.scale);
  const auto [first, second] = data::split(cfg.num_images, split_seed(cfg));
  d.chi1 = d.all.subset(first);
  d.chi2 = d.all.subset(second);
  d.holdout = build_dataset(
      data::gen_synthetic(holdout_seed(cfg), cfg.holdout_images, cfg.image_size, cfg.image_size), d.teacher, cfg.scale);
  return d;
}

}  // namespace tnas
