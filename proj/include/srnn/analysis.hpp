#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "srnn/forward.hpp"
#include "srnn/fxp.hpp"
#include "srnn/model.hpp"

namespace srnn {

// Weight and activation densities feeding the effective-MAC formulas.
// Missing entries default to 1 (fully dense).
struct DensitySet {
  std::map<std::string, double> weight;      // encoder, layerK.B, ...
  std::map<std::string, double> activation;  // input, layerK.pre_ssm, ...

  double wgt(const std::string& id) const;
  double act(const std::string& id) const;
  void validate() const;  // all entries within [0, 1]
};

// Exact-zero fractions of the model's weight tensors (complex pairs
// combined over both planes).
DensitySet weight_densities(const Model& m);
DensitySet weight_densities(const FxpCheckpoint& ckpt);

// Nonzero fractions across all frames at the instrumented sites
// (pre_ssm, hidden, pre_glu per layer, plus input and dec_in).
DensitySet measured_densities(const std::vector<TapFrame>& taps);
DensitySet measured_densities(const std::vector<IntTapFrame>& taps);

struct MacProfile {
  struct Row {
    std::string component;  // encoder | batchnorm | s5_hidden | s5_output | glu | head
    int layer = -1;
    double macs = 0.0;  // per frame
  };
  std::vector<Row> rows;
  double total = 0.0;
};

// Per-component effective MACs for one frame:
//   encoder   N_in  * N_model * d_wgt_enc * d_act_input
//   batchnorm N_model
//   s5_hidden 2 * N_model * N_ssm * d_wgt_B * d_act_pre_ssm + 4 * N_ssm
//   s5_output 2 * N_ssm * N_model * d_wgt_C * d_act_hidden
//             + N_model * d_act_pre_ssm
//   glu       N_model^2 * d_wgt_glu * d_act_pre_glu + N_model
//   head      N_model * N_out * d_wgt_head * d_act_dec_in
MacProfile effective_macs(const ModelSpec& spec, const DensitySet& d);

// formula total over `frames` frames, rounded to the nearest count
std::uint64_t expected_total_macs(const MacProfile& p, std::uint64_t frames);

struct MemoryBreakdown {
  struct Row {
    std::string tensor;
    std::string dtype;  // f32 | i8 | i16 | i32 | csr-i8 | lut-i16
    std::int64_t elements = 0;
    std::int64_t bytes = 0;
  };
  std::vector<Row> rows;
  std::int64_t total_bytes = 0;
};

// Byte accounting: f32 4B, i8 1B, i16 2B, i32 4B; CSR adds a 2-byte
// column index per stored value and 4-byte row offsets.
MemoryBreakdown memory_footprint(const Model& m);
MemoryBreakdown memory_footprint(const FxpCheckpoint& ckpt);

// Scale-invariant SNR in dB: zero-mean both signals, project the
// estimate onto the target, compare projection against residual.
// Capped at +60 dB for (near-)perfect reconstruction.
double si_snr(std::span<const float> estimate, std::span<const float> target);

struct MismatchReport {
  struct Row {
    std::string site;
    int layer = -1;
    double mae = 0.0;  // mean |x - x'|
    double mre = 0.0;  // mean |x - x'|/|x| over reference-nonzero x
    std::int64_t count = 0;
  };
  std::vector<Row> rows;
};

// Integer taps are dequantized at their site scales, then compared
// against the float reference taps, site by site in depth order.
MismatchReport mismatch_report(const std::vector<TapFrame>& ref,
                               const std::vector<IntTapFrame>& fxp,
                               const ScaleSet& scales);

// Largest |q_int - round(s * x_float)| per site: integer-domain distance
// between an FXP run and the fake-quant reference.
std::map<std::string, std::int64_t> max_lsb_diff(
    const std::vector<TapFrame>& ref, const std::vector<IntTapFrame>& fxp,
    const ScaleSet& scales);

std::string mac_profile_csv(const MacProfile& p);
std::string memory_csv(const MemoryBreakdown& b);
std::string densities_csv(const DensitySet& d);
std::string mismatch_csv(const MismatchReport& r);

}  // namespace srnn
