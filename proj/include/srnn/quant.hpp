#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "srnn/forward.hpp"
#include "srnn/model.hpp"

namespace srnn {

// Symmetric absmax scale for one tensor or activation site:
//   s = (2^(n-1) - 1) / max|x|,  zero point fixed at 0.
struct QuantScale {
  std::string site;
  int bits = 16;
  double scale = 1.0;
  double absmax = 0.0;
  bool degenerate = false;  // all-zero tensor; scale pinned to 1

  std::int32_t qmax() const { return (std::int32_t(1) << (bits - 1)) - 1; }
};

// W8A16: 8-bit weights, 16-bit recurrent diagonal, 16-bit activations.
struct QuantRecipe {
  int weight_bits = 8;
  int lambda_bits = 16;
  int activation_bits = 16;

  int bits_for_weight(const std::string& site) const {
    return site.size() >= 6 &&
                   site.compare(site.size() - 6, 6, "lambda") == 0
               ? lambda_bits
               : weight_bits;
  }
};

struct ScaleSet {
  std::map<std::string, QuantScale> sites;

  const QuantScale& at(const std::string& site) const;
  bool has(const std::string& site) const { return sites.count(site) > 0; }
  // Exactly one entry per declared weight and activation site.
  void validate_complete(const ModelSpec& spec) const;
};

// Canonical site lists for a spec, in dataflow order.
std::vector<std::string> weight_site_names(const ModelSpec& spec);
std::vector<std::string> activation_site_names(const ModelSpec& spec);

// Project-wide rounding rule (mirrored bit-exactly by the integer
// runtime's requantizers).
inline std::int64_t round_half_away(double x) { return std::llround(x); }

QuantScale fit_scale(const std::string& site, std::span<const float> x,
                     int bits);
QuantScale fit_scale_absmax(const std::string& site, double absmax, int bits);

// q = clamp(round_half_away(s * x), -qmax, qmax)
std::vector<std::int32_t> quantize(std::span<const float> x,
                                   const QuantScale& s);
std::vector<float> dequantize(std::span<const std::int32_t> q,
                              const QuantScale& s);
std::vector<float> fake_quant(std::span<const float> x, const QuantScale& s);

// Static calibration: weight scales straight from the tensors,
// activation scales from the running absmax over every instrumented
// site across all calibration frames.
ScaleSet calibrate(const Model& m,
                   const std::vector<std::vector<std::vector<float>>>& seqs,
                   const QuantRecipe& recipe = {});

// Float forward pass with fake-quant applied at every weight and every
// activation site: the reference semantics the integer runtime must
// reproduce. The observe hook fires with post-fake-quant vectors.
std::vector<std::vector<float>> static_quant_eval(
    const Model& m, const ScaleSet& scales,
    const std::vector<std::vector<float>>& frames,
    const ObserveFn* observe = nullptr);

// site, bits, scale, absmax, degenerate
std::string scales_csv(const ScaleSet& scales);

}  // namespace srnn
