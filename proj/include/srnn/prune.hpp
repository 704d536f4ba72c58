#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "srnn/forward.hpp"
#include "srnn/model.hpp"

namespace srnn {

// Degree-3 polynomial sparsity-over-steps law:
//   S(t) = S_f - (S_f - S_i) * (1 - (t - t_i)/(t_f - t_i))^3
// clamped to S_i before t_i and S_f from t_f on.
struct PruneSchedule {
  double s_initial = 0.0;
  double s_final = 0.9;
  std::int64_t t_start = 0;
  std::int64_t t_end = 0;
  std::int64_t total_steps = 0;
  int updates_per_epoch = 3;

  // Default endpoints: starts at step 0, t_end = 0.75 * T.
  static PruneSchedule polynomial(double s_i, double s_f, std::int64_t total);
  void validate() const;
};

double schedule_sparsity(const PruneSchedule& sched, std::int64_t t);

struct ErkLayerSpec {
  std::string id;
  int n = 0;       // matrix rows
  int m = 0;       // matrix cols
  int planes = 1;  // 2 for complex pairs sharing one mask
  std::int64_t param_count() const {
    return std::int64_t(planes) * n * m;
  }
};

struct ErkLayerAlloc {
  ErkLayerSpec layer;
  double raw_score = 0.0;  // (n + m) / (n * m)
  double sparsity = 0.0;   // allocated per-layer sparsity
};

struct ErkAllocation {
  double target = 0.0;  // global sparsity S_t
  std::vector<ErkLayerAlloc> layers;

  const ErkLayerAlloc* find(const std::string& id) const;
};

// Per-layer density proportional to (n+m)/(n*m), normalized so the
// parameter-weighted global density equals 1 - target; layers whose
// proportional density would exceed 1 are clamped dense and the
// constant re-solved over the rest.
ErkAllocation erk_allocate(const std::vector<ErkLayerSpec>& layers,
                           double target);

// Keeps exactly round((1-s) * rows * cols) largest-magnitude entries;
// ties at the threshold break by (row, col) order.
Mask magnitude_mask(const DenseMatrixF& w, double s);
// Shared mask for a complex pair, ranked by sqrt(re^2 + im^2).
Mask magnitude_mask_complex(const DenseMatrixF& re, const DenseMatrixF& im,
                            double s);

// The prunable weights of a model, in a stable order: encoder, per-layer
// B / C / glu_w, decoder. Diagonals (lambda, D) and norm parameters are
// exempt.
std::vector<ErkLayerSpec> prunable_layers(const ModelSpec& spec);

struct PruneResult {
  Model model;                        // weights masked in place
  std::map<std::string, Mask> masks;  // keyed like prunable_layers ids
  CsrWeights csr;
  double realized_sparsity = 0.0;     // over prunable weights
};

PruneResult prune_model(const Model& m, const ErkAllocation& alloc);

// layer, N, M, planes, raw score, target sparsity, realized sparsity, nnz
std::string erk_report_csv(const ErkAllocation& alloc,
                           const PruneResult* result = nullptr);

// Schedule trace at every in-schedule update point (updates_per_epoch per
// epoch): step, epoch, update index, sparsity.
std::string schedule_trace_csv(const PruneSchedule& sched, int epochs);

}  // namespace srnn
