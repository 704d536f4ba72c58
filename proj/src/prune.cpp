#include "srnn/prune.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace srnn {

PruneSchedule PruneSchedule::polynomial(double s_i, double s_f,
                                        std::int64_t total) {
  PruneSchedule s;
  s.s_initial = s_i;
  s.s_final = s_f;
  s.t_start = 0;
  s.total_steps = total;
  s.t_end = std::int64_t(std::llround(0.75 * double(total)));
  s.validate();
  return s;
}

void PruneSchedule::validate() const {
  if (!(0.0 <= s_initial && s_initial <= s_final && s_final < 1.0))
    throw config_error("prune schedule: need 0 <= S_i <= S_f < 1");
  if (!(t_start < t_end && t_end <= total_steps))
    throw config_error("prune schedule: need t_i < t_f <= T");
  if (updates_per_epoch < 1)
    throw config_error("prune schedule: updates_per_epoch must be >= 1");
}

double schedule_sparsity(const PruneSchedule& sched, std::int64_t t) {
  sched.validate();
  if (t < 0 || t > sched.total_steps)
    throw numeric_error("schedule_sparsity: step outside [0, T]");
  if (t <= sched.t_start) return sched.s_initial;
  if (t >= sched.t_end) return sched.s_final;
  double frac = double(t - sched.t_start) / double(sched.t_end - sched.t_start);
  double rem = 1.0 - frac;
  return sched.s_final - (sched.s_final - sched.s_initial) * rem * rem * rem;
}

const ErkLayerAlloc* ErkAllocation::find(const std::string& id) const {
  for (const auto& l : layers)
    if (l.layer.id == id) return &l;
  return nullptr;
}

ErkAllocation erk_allocate(const std::vector<ErkLayerSpec>& layers,
                           double target) {
  if (!(target >= 0.0 && target < 1.0))
    throw config_error("erk_allocate: target sparsity must be in [0, 1)");
  if (layers.empty()) throw config_error("erk_allocate: no layers");

  ErkAllocation out;
  out.target = target;
  out.layers.resize(layers.size());
  std::vector<double> density(layers.size(), 0.0);
  std::vector<bool> clamped(layers.size(), false);

  std::int64_t total_params = 0;
  for (const auto& l : layers) total_params += l.param_count();
  double budget = (1.0 - target) * double(total_params);

  // waterfilling: densities proportional to the ERK score until a layer
  // saturates at density 1, then re-solve over the rest
  for (int pass = 0; pass < int(layers.size()) + 1; ++pass) {
    double score_mass = 0.0;
    double clamped_params = 0.0;
    for (size_t i = 0; i < layers.size(); ++i) {
      double score = double(layers[i].n + layers[i].m) /
                     (double(layers[i].n) * double(layers[i].m));
      if (clamped[i])
        clamped_params += double(layers[i].param_count());
      else
        score_mass += score * double(layers[i].param_count());
    }
    if (score_mass <= 0.0) break;
    double c = (budget - clamped_params) / score_mass;
    if (c < 0.0)
      throw numeric_error("erk_allocate: infeasible target after clamping");
    bool new_clamp = false;
    for (size_t i = 0; i < layers.size(); ++i) {
      if (clamped[i]) {
        density[i] = 1.0;
        continue;
      }
      double score = double(layers[i].n + layers[i].m) /
                     (double(layers[i].n) * double(layers[i].m));
      density[i] = c * score;
      if (density[i] > 1.0) {
        clamped[i] = true;
        new_clamp = true;
      }
    }
    if (!new_clamp) break;
  }

  for (size_t i = 0; i < layers.size(); ++i) {
    out.layers[i].layer = layers[i];
    out.layers[i].raw_score = double(layers[i].n + layers[i].m) /
                              (double(layers[i].n) * double(layers[i].m));
    out.layers[i].sparsity = std::clamp(1.0 - density[i], 0.0, 1.0);
  }
  return out;
}

namespace {

Mask mask_from_magnitudes(const std::vector<double>& mag, int rows, int cols,
                          double s) {
  if (!(s >= 0.0 && s <= 1.0))
    throw config_error("magnitude_mask: sparsity must be in [0, 1]");
  const std::int64_t total = std::int64_t(rows) * cols;
  const std::int64_t keep = std::llround((1.0 - s) * double(total));
  Mask m(rows, cols);
  if (keep <= 0) return m;
  std::vector<std::int64_t> idx(total);
  std::iota(idx.begin(), idx.end(), 0);
  // magnitude descending, (row, col) ascending on ties
  std::stable_sort(idx.begin(), idx.end(), [&](std::int64_t a, std::int64_t b) {
    if (mag[a] != mag[b]) return mag[a] > mag[b];
    return a < b;
  });
  for (std::int64_t k = 0; k < std::min(keep, total); ++k) {
    int r = int(idx[k] / cols);
    int c = int(idx[k] % cols);
    m.set(r, c, true);
  }
  return m;
}

}  // namespace

Mask magnitude_mask(const DenseMatrixF& w, double s) {
  std::vector<double> mag(w.values.size());
  for (size_t i = 0; i < w.values.size(); ++i)
    mag[i] = std::fabs(double(w.values[i]));
  return mask_from_magnitudes(mag, w.rows, w.cols, s);
}

Mask magnitude_mask_complex(const DenseMatrixF& re, const DenseMatrixF& im,
                            double s) {
  if (re.rows != im.rows || re.cols != im.cols)
    throw numeric_error("magnitude_mask_complex: plane shape mismatch");
  std::vector<double> mag(re.values.size());
  for (size_t i = 0; i < re.values.size(); ++i)
    mag[i] = std::hypot(double(re.values[i]), double(im.values[i]));
  return mask_from_magnitudes(mag, re.rows, re.cols, s);
}

std::vector<ErkLayerSpec> prunable_layers(const ModelSpec& spec) {
  std::vector<ErkLayerSpec> out;
  out.push_back({"encoder", spec.n_model, spec.n_input, 1});
  for (int l = 0; l < spec.depth; ++l) {
    std::string p = "layer" + std::to_string(l) + ".";
    out.push_back({p + "B", spec.n_ssm, spec.n_model, 2});
    out.push_back({p + "C", spec.n_model, spec.n_ssm, 2});
    out.push_back({p + "glu_w", spec.n_model, spec.n_model, 1});
  }
  out.push_back({"decoder", spec.n_output, spec.n_model, 1});
  return out;
}

PruneResult prune_model(const Model& m, const ErkAllocation& alloc) {
  PruneResult res;
  res.model = m;
  auto want = prunable_layers(m.spec);
  for (const auto& l : want)
    if (!alloc.find(l.id))
      throw data_error("prune_model: allocation missing layer " + l.id);

  std::int64_t kept = 0, total = 0;
  auto apply_real = [&](const std::string& id, DenseMatrixF& w) {
    const ErkLayerAlloc* a = alloc.find(id);
    Mask mask = magnitude_mask(w, a->sparsity);
    w = mask_apply(w, mask);
    kept += mask.popcount();
    total += std::int64_t(w.rows) * w.cols;
    res.masks.emplace(id, std::move(mask));
  };
  auto apply_complex = [&](const std::string& id, DenseMatrixF& re,
                           DenseMatrixF& im) {
    const ErkLayerAlloc* a = alloc.find(id);
    Mask mask = magnitude_mask_complex(re, im, a->sparsity);
    re = mask_apply(re, mask);
    im = mask_apply(im, mask);
    kept += 2 * mask.popcount();
    total += 2 * std::int64_t(re.rows) * re.cols;
    res.masks.emplace(id, std::move(mask));
  };

  apply_real("encoder", res.model.encoder);
  for (int l = 0; l < m.spec.depth; ++l) {
    std::string p = "layer" + std::to_string(l) + ".";
    apply_complex(p + "B", res.model.layers[l].b_re, res.model.layers[l].b_im);
    apply_complex(p + "C", res.model.layers[l].c_re, res.model.layers[l].c_im);
    apply_real(p + "glu_w", res.model.layers[l].glu_w);
  }
  apply_real("decoder", res.model.decoder);

  res.realized_sparsity = 1.0 - double(kept) / double(total);
  res.csr = compile_csr(res.model);
  return res;
}

std::string erk_report_csv(const ErkAllocation& alloc,
                           const PruneResult* result) {
  std::ostringstream os;
  os << "# erk_report v1\n";
  os << "layer,rows,cols,planes,raw_score,target_sparsity,realized_sparsity,nnz\n";
  for (const auto& l : alloc.layers) {
    double realized = l.sparsity;
    std::int64_t nnz =
        std::llround((1.0 - l.sparsity) * double(l.layer.param_count()));
    if (result) {
      auto it = result->masks.find(l.layer.id);
      if (it != result->masks.end()) {
        nnz = it->second.popcount() * l.layer.planes;
        realized = 1.0 - double(nnz) / double(l.layer.param_count());
      }
    }
    os << l.layer.id << ',' << l.layer.n << ',' << l.layer.m << ','
       << l.layer.planes << ',' << l.raw_score << ',' << l.sparsity << ','
       << realized << ',' << nnz << '\n';
  }
  return os.str();
}

std::string schedule_trace_csv(const PruneSchedule& sched, int epochs) {
  sched.validate();
  if (epochs < 1) throw config_error("schedule trace: epochs must be >= 1");
  std::ostringstream os;
  os << "# prune_schedule v1\n";
  os << "step,epoch,update,sparsity\n";
  double steps_per_epoch = double(sched.total_steps) / double(epochs);
  for (int e = 0; e < epochs; ++e) {
    for (int u = 0; u < sched.updates_per_epoch; ++u) {
      double frac = (double(u) + 1.0) / double(sched.updates_per_epoch);
      std::int64_t t = std::int64_t(
          std::llround(steps_per_epoch * (double(e) + frac)));
      t = std::clamp<std::int64_t>(t, 0, sched.total_steps);
      os << t << ',' << e << ',' << u << ',' << schedule_sparsity(sched, t)
         << '\n';
    }
  }
  return os.str();
}

}  // namespace srnn
