#pragma once

// The three optimization phases: sandwich pretraining of the supernet
// weights, alternating weight / architecture search, and training of the
// derived network. The student is trained against a frozen analytic teacher
// with an L1 content loss; the architecture step adds the expected-FLOPs
// penalty and the path-ordering penalty.
//
// All randomness inside an epoch comes from a generator seeded by
// (seed, phase, epoch), so a run resumed at an epoch boundary replays the
// uninterrupted run exactly.

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tnas/adam.hpp"
#include "tnas/config.hpp"
#include "tnas/derive.hpp"
#include "tnas/projections.hpp"
#include "tnas/searchspace.hpp"

namespace tnas {

/// Bicubic upsampling followed by one frozen 3x3 convolution whose center
/// taps are the identity plus small seeded perturbations.
struct Teacher {
  ConvParams conv;
  int scale = 2;

  nd::Tensor operator()(const nd::Tensor& lr) const;  // [N,3,h,w] -> [N,3,nh,nw]
};

Teacher make_teacher(std::uint64_t seed, int scale);

/// Per-image LR inputs [3,h,w] and teacher targets [3,nh,nw].
struct Dataset {
  std::vector<nd::Tensor> lr;
  std::vector<nd::Tensor> target;

  int size() const { return static_cast<int>(lr.size()); }
  Dataset subset(const std::vector<int>& indices) const;
};

Dataset build_dataset(const std::vector<nd::Tensor>& hr, const Teacher& teacher, int scale);

struct Batch {
  nd::Tensor lr;      // [N,3,h,w]
  nd::Tensor target;  // [N,3,nh,nw]
};

/// Consecutive batches over `order`. With patch > 0 each image contributes a
/// random patch x patch HR crop (and the aligned LR crop) drawn from `rng`.
std::vector<Batch> make_batches(const Dataset& data, const std::vector<int>& order, int batch_size, int patch,
                                int scale, Rng* rng);
std::vector<int> shuffled_order(int n, Rng& rng);

/// mean |student - teacher|.
nd::Tensor content_loss(nd::Graph& g, const nd::Tensor& student, const nd::Tensor& teacher_out);

nd::Tensor normalize(nd::Graph& g, const nd::Tensor& logits, Normalization kind, double r);
std::vector<double> normalize(std::span<const double> logits, Normalization kind, double r);

/// Radius at architecture step s (1-based): r_c * min(1, s / total) for the
/// alpha (K = 4) and beta (K = blocks) simplices.
struct RadiusPlan {
  std::int64_t total_steps = 1;
  int blocks = 1;

  double fraction(std::int64_t step) const;
  double alpha(std::int64_t step) const;
  double beta(std::int64_t step) const;
};

RadiusPlan radius_plan(const SearchConfig& cfg, int chi2_size);

/// Expected FLOPs under the architecture distribution at LR resolution h x w:
///   stem + tail + sum_j beta_j sum_{b<=j} (skip_b + sum_cells sum_o alpha_o <p_gamma, F_o>).
/// Raw operation count (not scaled); exact integer under one-hot inputs.
nd::Tensor efficiency_cost(nd::Graph& g, const TreeSupernet& net, const std::vector<nd::Tensor>& alpha_norm,
                           const nd::Tensor& beta_norm,
                           const std::vector<std::array<nd::Tensor, kNumOps>>& gamma_probs, std::int64_t h,
                           std::int64_t w);

/// Ordering penalty summed over every prefix path of the beta logits.
proj::Penalty path_ordering_penalty(std::span<const double> beta_logits, double lambda, bool hinge);

using ForwardFn = std::function<nd::Tensor(nd::Graph&, const nd::Tensor&)>;

/// Mean absolute error over every output element of `data`, evaluated in
/// fixed batches of `batch_size` in index order.
double evaluate_loss(const ForwardFn& forward, const Dataset& data, int batch_size);
/// PSNR from the pooled MSE over `data`.
double evaluate_psnr(const ForwardFn& forward, const Dataset& data, int batch_size);

struct MetricsRow {
  int epoch = 0;
  std::string phase;
  double loss_content = 0.0;
  double loss_efficiency = 0.0;
  double loss_order = 0.0;
  double r_value = 0.0;  // r / r_c, shared by the alpha and beta schedules
  double psnr_val = 0.0;
  int nnz_alpha = 0;
  int nnz_beta = 0;
  double wall_seconds = 0.0;
};

std::string metrics_header();
std::string format_metrics(const MetricsRow& row);

/// Optimizer and counters of the phase in progress.
struct PhaseProgress {
  int epochs_done = 0;
  std::int64_t arch_steps = 0;
  nd::Adam w_opt;
  nd::Adam arch_opt;
};

/// Called after every epoch; returning false stops the phase early.
using EpochCallback = std::function<bool(const MetricsRow&, const PhaseProgress&)>;

/// Learning rate after halvings at 25%, 50% and 75% of `epochs`.
double step_decayed_lr(double base, int epoch, int epochs);
/// Exponential decay from tau_start (first epoch) to tau_end (last epoch).
double gumbel_temperature(const SearchConfig& cfg, int epoch);

/// Normalized alpha per cell and beta at the given radii, as plain vectors.
struct ArchWeights {
  std::vector<std::vector<double>> alpha;
  std::vector<double> beta;
};
ArchWeights arch_weights(const TreeSupernet& net, Normalization kind, double r_alpha, double r_beta);

/// Constant ArchSample: given weights, every branch at `ratio` or, with
/// ratio < 0, at its argmax-gamma ratio.
ArchSample constant_sample(const TreeSupernet& net, const ArchWeights& w, int ratio);

TailMode tail_mode(const SearchConfig& cfg);

/// Phase 1. Weights only; alpha, beta, gamma are never touched.
void pretrain(TreeSupernet& net, const Dataset& chi1, const Dataset& val, const SearchConfig& cfg,
              PhaseProgress& progress, const EpochCallback& on_epoch = {});

/// Phase 2. Epoch-level alternation: a weight pass on chi1, then an
/// architecture pass on chi2 with one radius step per batch. A fresh search
/// first perturbs the alpha and beta logits by 1e-3 seeded noise.
void search(TreeSupernet& net, const Dataset& chi1, const Dataset& chi2, const Dataset& val, const SearchConfig& cfg,
            PhaseProgress& progress, const EpochCallback& on_epoch = {});

struct SearchResult {
  DerivedArch arch;
  ArchWeights weights;    // final normalizations
  double final_loss = 0;  // supernet loss on the evaluation set under `weights`
};

/// Final normalizations at the radius reached after `arch_steps`, the derived
/// architecture, and the supernet loss under those normalizations with
/// argmax-gamma widths.
SearchResult finish_search(TreeSupernet& net, const SearchConfig& cfg, const Dataset& eval, std::int64_t arch_steps,
                           int chi2_size);

/// Phase 3 model: inherited weights (from_search) or fresh ones (from_scratch).
DerivedModel make_final_model(const TreeSupernet& net, const DerivedArch& arch, const SearchConfig& cfg);

/// Phase 3. Content-loss training of the derived network.
void train_final(DerivedModel& model, const Dataset& train, const Dataset& val, const SearchConfig& cfg,
                 PhaseProgress& progress, const EpochCallback& on_epoch = {});

/// Deterministic seeds of the run's components.
std::uint64_t teacher_seed(const SearchConfig& cfg);
std::uint64_t data_seed(const SearchConfig& cfg);
std::uint64_t holdout_seed(const SearchConfig& cfg);
std::uint64_t split_seed(const SearchConfig& cfg);
std::uint64_t init_seed(const SearchConfig& cfg);

/// Data of a run derived from its config: chi split in halves plus a
/// separately generated held-out set.
struct RunData {
  Teacher teacher;
  Dataset all;
  Dataset chi1;
  Dataset chi2;
  Dataset holdout;
};
RunData make_run_data(const SearchConfig& cfg);

}  // namespace tnas
