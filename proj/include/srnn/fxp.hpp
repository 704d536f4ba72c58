#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "srnn/model.hpp"
#include "srnn/quant.hpp"

namespace srnn {

enum class OverflowPolicy { kSaturate, kWrap };

OverflowPolicy parse_overflow_policy(const std::string& s);

// What happens when a value is materialized into a narrower width.
// SATURATE clips to the symmetric range [-qmax, qmax]; WRAP applies
// two's-complement wraparound (a large positive accumulator reappears
// with inverted sign). Every out-of-range event is counted either way.
struct OverflowCounters {
  std::uint64_t acc32 = 0;
  std::uint64_t narrow16 = 0;
  std::uint64_t total() const { return acc32 + narrow16; }
};

// Fixed-point rescale by multiplier * 2^-shift with the multiplier
// normalized into [2^30, 2^31), giving <= 2^-31 relative error against
// the exact scale ratio. Rounds half away from zero, matching the
// quantizer.
struct Requantizer {
  std::int32_t multiplier = 1 << 30;
  int shift = 30;

  static Requantizer make(double ratio);
  double realized_ratio() const;
  std::int64_t apply(std::int64_t v) const;
};

// Integer weight matrix, stored dense or CSR depending on density.
struct FxpMatrix {
  bool sparse = false;
  DenseMatrix<std::int8_t> dense;
  SparseMatrix<std::int8_t> csr;

  static FxpMatrix from(DenseMatrix<std::int8_t> w, double csr_threshold = 0.5);
  int rows() const { return sparse ? csr.rows : dense.rows; }
  int cols() const { return sparse ? csr.cols : dense.cols; }
  std::int64_t nnz() const;
  double density() const;
};

// Piecewise-linear sigmoid in integers: 1024 uniform intervals spanning
// the input site's representable range, clamped to |x| <= 16 where the
// function is indistinguishable from its asymptotes at 16-bit output
// resolution. Knots are exact quantized sigmoid samples.
struct SigmoidLut {
  std::int32_t q_lim = 0;             // domain is [-q_lim, +q_lim]
  std::vector<std::int16_t> knots;    // kIntervals + 1 samples

  static constexpr int kIntervals = 1024;
  static SigmoidLut build(double in_scale, double out_scale,
                          std::int32_t out_qmax);
  std::int32_t lookup(std::int32_t q_in) const;
};

struct FxpLayer {
  std::vector<std::int16_t> lambda_re, lambda_im;
  FxpMatrix b_re, b_im, c_re, c_im, glu_w;
  std::vector<std::int8_t> d;
  std::vector<std::int8_t> norm_scale;
  std::vector<std::int32_t> norm_shift;  // at s_norm_scale * s_block_in
  SigmoidLut sigmoid;
  Requantizer rq_pre_ssm;   // s_ns*s_blk   -> s_v
  Requantizer rq_lambda;    // s_l*s_x      -> 2^hs * s_x
  Requantizer rq_b;         // s_B*s_v      -> 2^hs * s_x
  Requantizer rq_c;         // s_C*s_x      -> 2^hs * s_y
  Requantizer rq_d;         // s_D*s_v      -> 2^hs * s_y
  Requantizer rq_pre_glu;   // s_y          -> s_t
  Requantizer rq_gate_in;   // s_glu*s_t    -> s_gin
  Requantizer rq_hadamard;  // s_gout*s_t   -> s_gluout
  Requantizer rq_res_skip;  // s_blk        -> 2^hs * s_res
  Requantizer rq_res_glu;   // s_gluout     -> 2^hs * s_res
};

// Self-contained integer model: weights, biases, requantizers, and
// sigmoid tables; inference needs no floating point.
struct FxpCheckpoint {
  static constexpr int kHeadroomShift = 12;  // combine scale is 2^hs * s_dst

  ModelSpec spec;  // relufied by construction
  QuantRecipe recipe;
  ScaleSet scales;  // retained for dequantized reporting
  FxpMatrix encoder;
  std::vector<std::int32_t> encoder_bias;  // at s_enc * s_input
  std::vector<FxpLayer> layers;
  FxpMatrix decoder;
  std::vector<std::int32_t> decoder_bias;  // at s_dec * s_dec_in
  Requantizer rq_enc;     // s_enc*s_input  -> s_enc_out
  Requantizer rq_dec_in;  // s_res(last)    -> s_dec_in
  Requantizer rq_dec;     // s_dec*s_dec_in -> s_output
};

FxpCheckpoint freeze(const Model& m, const ScaleSet& scales,
                     const QuantRecipe& recipe = {});

// Integer mirrors of the instrumented taps, at their site scales.
struct IntTapFrame {
  struct Layer {
    std::vector<std::int32_t> pre_ssm;    // s_v
    std::vector<std::int32_t> hidden_re;  // s_x, post-ReLU
    std::vector<std::int32_t> hidden_im;  // s_x
    std::vector<std::int32_t> s5_out;     // s_y
    std::vector<std::int32_t> pre_glu;    // s_t
  };
  std::vector<std::int32_t> input;
  std::vector<std::int32_t> enc_out;
  std::vector<Layer> layers;
  std::vector<std::int32_t> dec_in;
  std::vector<std::int32_t> output;
};

struct FxpState {
  std::vector<std::vector<std::int16_t>> re, im;

  explicit FxpState(const ModelSpec& spec)
      : re(spec.depth, std::vector<std::int16_t>(spec.n_ssm, 0)),
        im(spec.depth, std::vector<std::int16_t>(spec.n_ssm, 0)) {}
  void reset();
};

class FxpEngine {
 public:
  FxpEngine(const FxpCheckpoint& ckpt, OverflowPolicy policy);

  std::vector<std::int16_t> step(FxpState& state,
                                 std::span<const std::int16_t> u_q,
                                 IntTapFrame* taps = nullptr,
                                 MacTally* macs = nullptr);

  // Sequential token-by-token execution; the integer recurrence is never
  // reassociated.
  std::vector<std::vector<std::int16_t>> run(
      const std::vector<std::vector<std::int16_t>>& frames,
      std::vector<IntTapFrame>* taps = nullptr, MacTally* macs = nullptr);

  const OverflowCounters& overflows() const { return overflows_; }
  void reset_overflows() { overflows_ = {}; }
  const FxpCheckpoint& checkpoint() const { return ckpt_; }

  // quantize floats at the input site scale / dequantize model outputs
  std::vector<std::int16_t> quantize_input(std::span<const float> u) const;
  std::vector<float> dequantize_output(
      std::span<const std::int16_t> y) const;

 private:
  std::int64_t materialize32(std::int64_t v);
  std::int32_t narrow16(std::int64_t v);

  const FxpCheckpoint& ckpt_;
  OverflowPolicy policy_;
  OverflowCounters overflows_;
};

}  // namespace srnn
