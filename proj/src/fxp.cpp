#include "srnn/fxp.hpp"

#include <algorithm>
#include <cmath>

namespace srnn {

OverflowPolicy parse_overflow_policy(const std::string& s) {
  if (s == "saturate") return OverflowPolicy::kSaturate;
  if (s == "wrap") return OverflowPolicy::kWrap;
  throw config_error("unknown overflow policy: " + s);
}

Requantizer Requantizer::make(double ratio) {
  if (!(ratio > 0.0) || !std::isfinite(ratio))
    throw numeric_error("requantizer: ratio must be positive and finite");
  int e = 0;
  double f = std::frexp(ratio, &e);  // ratio = f * 2^e, f in [0.5, 1)
  std::int64_t m = std::llround(f * 2147483648.0);  // f * 2^31
  if (m == std::int64_t(1) << 31) {
    m >>= 1;
    e += 1;
  }
  Requantizer r;
  r.multiplier = std::int32_t(m);
  r.shift = 31 - e;
  return r;
}

double Requantizer::realized_ratio() const {
  return double(multiplier) * std::ldexp(1.0, -shift);
}

std::int64_t Requantizer::apply(std::int64_t v) const {
  __int128 prod = __int128(v) * multiplier;
  if (shift <= 0) {
    prod <<= -shift;
  } else {
    bool neg = prod < 0;
    unsigned __int128 a = neg ? (unsigned __int128)(-prod) : (unsigned __int128)prod;
    a = (a + ((unsigned __int128)1 << (shift - 1))) >> shift;
    prod = neg ? -(__int128)a : (__int128)a;
  }
  const __int128 lim = (__int128(1) << 62);
  if (prod > lim) prod = lim;
  if (prod < -lim) prod = -lim;
  return std::int64_t(prod);
}

FxpMatrix FxpMatrix::from(DenseMatrix<std::int8_t> w, double csr_threshold) {
  FxpMatrix out;
  std::int64_t nz = 0;
  for (auto v : w.values)
    if (v != 0) ++nz;
  double density =
      w.values.empty() ? 0.0 : double(nz) / double(w.values.size());
  if (density < csr_threshold) {
    out.sparse = true;
    out.csr = to_csr(w);
  } else {
    out.sparse = false;
    out.dense = std::move(w);
  }
  return out;
}

std::int64_t FxpMatrix::nnz() const {
  if (sparse) return csr.nnz();
  std::int64_t nz = 0;
  for (auto v : dense.values)
    if (v != 0) ++nz;
  return nz;
}

double FxpMatrix::density() const {
  std::int64_t total = std::int64_t(rows()) * cols();
  return total ? double(nnz()) / double(total) : 0.0;
}

SigmoidLut SigmoidLut::build(double in_scale, double out_scale,
                             std::int32_t out_qmax) {
  SigmoidLut lut;
  // clamp the sampled domain: sigmoid is flat beyond |x| = 16 at any
  // 16-bit output resolution
  double lim = std::min(32767.0, 16.0 * in_scale);
  lut.q_lim = std::max<std::int32_t>(1, std::int32_t(std::floor(lim)));
  lut.knots.resize(kIntervals + 1);
  for (int i = 0; i <= kIntervals; ++i) {
    double q = -double(lut.q_lim) +
               double(i) * (2.0 * double(lut.q_lim)) / double(kIntervals);
    double x = q / in_scale;
    double y = 1.0 / (1.0 + std::exp(-x));
    std::int64_t v = std::llround(out_scale * y);
    lut.knots[i] =
        std::int16_t(std::clamp<std::int64_t>(v, 0, out_qmax));
  }
  return lut;
}

std::int32_t SigmoidLut::lookup(std::int32_t q_in) const {
  std::int64_t pos = std::int64_t(q_in) + q_lim;
  const std::int64_t span = 2 * std::int64_t(q_lim);
  if (pos <= 0) return knots.front();
  if (pos >= span) return knots.back();
  std::int64_t num = pos * kIntervals;
  std::int64_t idx = num / span;
  std::int64_t rem = num % span;
  std::int64_t lo = knots[size_t(idx)];
  std::int64_t hi = knots[size_t(idx) + 1];
  std::int64_t delta = hi - lo;
  // round-half-away interpolation of delta * rem / span
  std::int64_t prod = delta * rem;
  std::int64_t half = span / 2;
  std::int64_t inc = prod >= 0 ? (prod + half) / span : -((-prod + half) / span);
  return std::int32_t(lo + inc);
}

void FxpState::reset() {
  for (auto& v : re) std::fill(v.begin(), v.end(), std::int16_t(0));
  for (auto& v : im) std::fill(v.begin(), v.end(), std::int16_t(0));
}

namespace {

DenseMatrix<std::int8_t> quantize_matrix_i8(const DenseMatrixF& w,
                                            const QuantScale& s) {
  std::vector<std::int32_t> q = quantize(w.values, s);
  DenseMatrix<std::int8_t> out(w.rows, w.cols);
  for (size_t i = 0; i < q.size(); ++i) out.values[i] = std::int8_t(q[i]);
  return out;
}

std::vector<std::int16_t> quantize_vec_i16(std::span<const float> v,
                                           const QuantScale& s) {
  std::vector<std::int32_t> q = quantize(v, s);
  std::vector<std::int16_t> out(q.size());
  for (size_t i = 0; i < q.size(); ++i) out[i] = std::int16_t(q[i]);
  return out;
}

std::vector<std::int8_t> quantize_vec_i8(std::span<const float> v,
                                         const QuantScale& s) {
  std::vector<std::int32_t> q = quantize(v, s);
  std::vector<std::int8_t> out(q.size());
  for (size_t i = 0; i < q.size(); ++i) out[i] = std::int8_t(q[i]);
  return out;
}

std::vector<std::int32_t> bias_i32(std::span<const float> v, double scale) {
  std::vector<std::int32_t> out(v.size());
  for (size_t i = 0; i < v.size(); ++i) {
    std::int64_t q = round_half_away(scale * double(v[i]));
    if (q > INT32_MAX || q < INT32_MIN)
      throw numeric_error("freeze: bias exceeds 32-bit range");
    out[i] = std::int32_t(q);
  }
  return out;
}

}  // namespace

FxpCheckpoint freeze(const Model& m, const ScaleSet& scales,
                     const QuantRecipe& recipe) {
  if (!m.spec.relufied)
    throw data_error("freeze: model must be relufied for integer inference");
  scales.validate_complete(m.spec);
  m.validate();

  const double hs = std::ldexp(1.0, FxpCheckpoint::kHeadroomShift);
  FxpCheckpoint ck;
  ck.spec = m.spec;
  ck.recipe = recipe;
  ck.scales = scales;

  const QuantScale& s_in = scales.at("input");
  const QuantScale& s_enc = scales.at("encoder");
  const QuantScale& s_enc_out = scales.at("enc_out");
  ck.encoder = FxpMatrix::from(quantize_matrix_i8(m.encoder, s_enc));
  ck.encoder_bias = bias_i32(m.encoder_bias, s_enc.scale * s_in.scale);
  ck.rq_enc =
      Requantizer::make(s_enc_out.scale / (s_enc.scale * s_in.scale));

  double s_blk = s_enc_out.scale;
  ck.layers.resize(m.spec.depth);
  for (int l = 0; l < m.spec.depth; ++l) {
    std::string p = "layer" + std::to_string(l) + ".";
    const LayerParams& lp = m.layers[l];
    FxpLayer& fl = ck.layers[l];

    const QuantScale& s_lam = scales.at(p + "lambda");
    const QuantScale& s_b = scales.at(p + "B");
    const QuantScale& s_c = scales.at(p + "C");
    const QuantScale& s_d = scales.at(p + "D");
    const QuantScale& s_glu = scales.at(p + "glu_w");
    const QuantScale& s_ns = scales.at(p + "norm_scale");
    const QuantScale& s_v = scales.at(p + "pre_ssm");
    const QuantScale& s_x = scales.at(p + "state");
    const QuantScale& s_y = scales.at(p + "s5_out");
    const QuantScale& s_t = scales.at(p + "pre_glu");
    const QuantScale& s_gin = scales.at(p + "glu_gate_in");
    const QuantScale& s_gout = scales.at(p + "glu_gate_out");
    const QuantScale& s_go = scales.at(p + "glu_out");
    const QuantScale& s_res = scales.at(p + "res_out");

    fl.lambda_re = quantize_vec_i16(lp.lambda_re, s_lam);
    fl.lambda_im = quantize_vec_i16(lp.lambda_im, s_lam);
    fl.b_re = FxpMatrix::from(quantize_matrix_i8(lp.b_re, s_b));
    fl.b_im = FxpMatrix::from(quantize_matrix_i8(lp.b_im, s_b));
    fl.c_re = FxpMatrix::from(quantize_matrix_i8(lp.c_re, s_c));
    fl.c_im = FxpMatrix::from(quantize_matrix_i8(lp.c_im, s_c));
    fl.glu_w = FxpMatrix::from(quantize_matrix_i8(lp.glu_w, s_glu));
    fl.d = quantize_vec_i8(lp.d, s_d);
    fl.norm_scale = quantize_vec_i8(lp.norm_scale, s_ns);
    fl.norm_shift = bias_i32(lp.norm_shift, s_ns.scale * s_blk);

    fl.rq_pre_ssm = Requantizer::make(s_v.scale / (s_ns.scale * s_blk));
    fl.rq_lambda =
        Requantizer::make(hs * s_x.scale / (s_lam.scale * s_x.scale));
    fl.rq_b = Requantizer::make(hs * s_x.scale / (s_b.scale * s_v.scale));
    fl.rq_c = Requantizer::make(hs * s_y.scale / (s_c.scale * s_x.scale));
    fl.rq_d = Requantizer::make(hs * s_y.scale / (s_d.scale * s_v.scale));
    fl.rq_pre_glu = Requantizer::make(s_t.scale / s_y.scale);
    fl.rq_gate_in =
        Requantizer::make(s_gin.scale / (s_glu.scale * s_t.scale));
    fl.sigmoid = SigmoidLut::build(s_gin.scale, s_gout.scale, s_gout.qmax());
    fl.rq_hadamard =
        Requantizer::make(s_go.scale / (s_gout.scale * s_t.scale));
    fl.rq_res_skip = Requantizer::make(hs * s_res.scale / s_blk);
    fl.rq_res_glu = Requantizer::make(hs * s_res.scale / s_go.scale);

    s_blk = s_res.scale;
  }

  const QuantScale& s_dec = scales.at("decoder");
  const QuantScale& s_dec_in = scales.at("dec_in");
  const QuantScale& s_out = scales.at("output");
  ck.decoder = FxpMatrix::from(quantize_matrix_i8(m.decoder, s_dec));
  ck.decoder_bias = bias_i32(m.decoder_bias, s_dec.scale * s_dec_in.scale);
  ck.rq_dec_in = Requantizer::make(s_dec_in.scale / s_blk);
  ck.rq_dec =
      Requantizer::make(s_out.scale / (s_dec.scale * s_dec_in.scale));
  return ck;
}

FxpEngine::FxpEngine(const FxpCheckpoint& ckpt, OverflowPolicy policy)
    : ckpt_(ckpt), policy_(policy) {}

namespace {

inline std::int64_t wrap_bits(std::int64_t v, int bits) {
  std::uint64_t mask = (bits == 64) ? ~0ull : ((1ull << bits) - 1);
  std::uint64_t u = std::uint64_t(v) & mask;
  std::uint64_t half = 1ull << (bits - 1);
  if (u >= half) return std::int64_t(u) - std::int64_t(std::uint64_t(1) << bits);
  return std::int64_t(u);
}

}  // namespace

std::int64_t FxpEngine::materialize32(std::int64_t v) {
  const std::int64_t qmax = 2147483647;
  if (v > qmax || v < -qmax) {
    ++overflows_.acc32;
    return policy_ == OverflowPolicy::kSaturate ? std::clamp(v, -qmax, qmax)
                                                : wrap_bits(v, 32);
  }
  return v;
}

std::int32_t FxpEngine::narrow16(std::int64_t v) {
  const std::int64_t qmax = 32767;
  if (v > qmax || v < -qmax) {
    ++overflows_.narrow16;
    return std::int32_t(policy_ == OverflowPolicy::kSaturate
                            ? std::clamp(v, -qmax, qmax)
                            : wrap_bits(v, 16));
  }
  return std::int32_t(v);
}

namespace {

// event-driven integer MVM, exact 64-bit row sums
std::vector<std::int64_t> fxp_mvm(const FxpMatrix& w,
                                  std::span<const std::int32_t> x,
                                  std::uint64_t* macs) {
  if (w.sparse) return spmv_event_driven_i(w.csr, x, macs);
  return matvec_event_driven_i(w.dense, x, macs);
}

std::vector<std::int32_t> widen(std::span<const std::int16_t> v) {
  return std::vector<std::int32_t>(v.begin(), v.end());
}

void record(std::vector<std::int32_t>* slot,
            const std::vector<std::int32_t>& v) {
  if (slot) *slot = v;
}

}  // namespace

std::vector<std::int16_t> FxpEngine::step(FxpState& state,
                                          std::span<const std::int16_t> u_q,
                                          IntTapFrame* taps, MacTally* macs) {
  const ModelSpec& spec = ckpt_.spec;
  if (int(u_q.size()) != spec.n_input)
    throw numeric_error("fxp step: input length mismatch");
  if (macs && macs->layers.empty()) macs->layers.resize(spec.depth);
  if (taps && int(taps->layers.size()) < spec.depth)
    taps->layers.resize(spec.depth);
  const int hs = FxpCheckpoint::kHeadroomShift;
  const std::int64_t hs_half = std::int64_t(1) << (hs - 1);
  auto combine_narrow = [&](std::int64_t sum) {
    // exact round-half-away shift by the headroom amount
    std::int64_t r = sum >= 0 ? (sum + hs_half) >> hs
                              : -((-sum + hs_half) >> hs);
    return narrow16(r);
  };

  std::vector<std::int32_t> u = widen(u_q);
  record(taps ? &taps->input : nullptr, u);

  // encoder
  std::vector<std::int64_t> acc =
      fxp_mvm(ckpt_.encoder, u, macs ? &macs->encoder : nullptr);
  std::vector<std::int32_t> blk(spec.n_model);
  for (int i = 0; i < spec.n_model; ++i) {
    std::int64_t a = materialize32(acc[i] + ckpt_.encoder_bias[i]);
    blk[i] = narrow16(ckpt_.rq_enc.apply(a));
  }
  record(taps ? &taps->enc_out : nullptr, blk);

  for (int l = 0; l < spec.depth; ++l) {
    const FxpLayer& fl = ckpt_.layers[l];
    MacTally::Layer* lm = macs ? &macs->layers[l] : nullptr;

    // norm + ReLU -> pre_ssm vector
    std::vector<std::int32_t> v(spec.n_model);
    for (int i = 0; i < spec.n_model; ++i) {
      std::int64_t n = std::int64_t(fl.norm_scale[i]) * blk[i] +
                       fl.norm_shift[i];
      n = materialize32(n);
      std::int32_t q = std::int32_t(
          std::max<std::int64_t>(0, narrow16(fl.rq_pre_ssm.apply(n))));
      v[i] = q;
    }
    if (lm) lm->batchnorm += std::uint64_t(spec.n_model);
    record(taps ? &taps->layers[l].pre_ssm : nullptr, v);

    // recurrent update: four diagonal products plus the B projection,
    // combined at the headroom scale and narrowed once to the state
    std::uint64_t hidden_macs = 0;
    std::vector<std::int64_t> bre = fxp_mvm(fl.b_re, v, &hidden_macs);
    std::vector<std::int64_t> bim = fxp_mvm(fl.b_im, v, &hidden_macs);
    std::vector<std::int16_t>& xre = state.re[l];
    std::vector<std::int16_t>& xim = state.im[l];
    std::vector<std::int32_t> h(spec.n_ssm), xi_new(spec.n_ssm);
    for (int i = 0; i < spec.n_ssm; ++i) {
      std::int64_t are = std::int64_t(fl.lambda_re[i]) * xre[i] -
                         std::int64_t(fl.lambda_im[i]) * xim[i];
      std::int64_t aim = std::int64_t(fl.lambda_re[i]) * xim[i] +
                         std::int64_t(fl.lambda_im[i]) * xre[i];
      std::int64_t re_sum = materialize32(fl.rq_lambda.apply(materialize32(are)) +
                                          fl.rq_b.apply(materialize32(bre[i])));
      std::int64_t im_sum = materialize32(fl.rq_lambda.apply(materialize32(aim)) +
                                          fl.rq_b.apply(materialize32(bim[i])));
      std::int32_t nre = combine_narrow(re_sum);
      std::int32_t nim = combine_narrow(im_sum);
      xre[i] = std::int16_t(nre);
      xim[i] = std::int16_t(nim);
      h[i] = std::max(0, nre);  // read-out rectification
      xi_new[i] = nim;
    }
    hidden_macs += 4u * std::uint64_t(spec.n_ssm);
    if (lm) lm->s5_hidden += hidden_macs;
    record(taps ? &taps->layers[l].hidden_re : nullptr, h);
    record(taps ? &taps->layers[l].hidden_im : nullptr, xi_new);

    // read-out: y = C_re h - C_im x_im + D (.) v
    std::uint64_t out_macs = 0;
    std::vector<std::int64_t> cre = fxp_mvm(fl.c_re, h, &out_macs);
    std::vector<std::int64_t> cim = fxp_mvm(fl.c_im, xi_new, &out_macs);
    std::vector<std::int32_t> y(spec.n_model), t(spec.n_model);
    for (int i = 0; i < spec.n_model; ++i) {
      std::int64_t c =
          materialize32(materialize32(cre[i]) - materialize32(cim[i]));
      std::int64_t sum = fl.rq_c.apply(c);
      if (v[i] != 0) {
        std::int64_t dprod = materialize32(std::int64_t(fl.d[i]) * v[i]);
        sum += fl.rq_d.apply(dprod);
        ++out_macs;
      }
      y[i] = combine_narrow(materialize32(sum));
      t[i] = narrow16(
          fl.rq_pre_glu.apply(std::max<std::int32_t>(0, y[i])));
    }
    if (lm) lm->s5_output += out_macs;
    record(taps ? &taps->layers[l].s5_out : nullptr, y);
    record(taps ? &taps->layers[l].pre_glu : nullptr, t);

    // GLU: sigma(W t) (.) t
    std::uint64_t glu_macs = 0;
    std::vector<std::int64_t> gacc = fxp_mvm(fl.glu_w, t, &glu_macs);
    for (int i = 0; i < spec.n_model; ++i) {
      std::int32_t gate_in =
          narrow16(fl.rq_gate_in.apply(materialize32(gacc[i])));
      std::int32_t gate = fl.sigmoid.lookup(gate_in);
      std::int64_t had = materialize32(std::int64_t(gate) * t[i]);
      std::int32_t glu_out = narrow16(fl.rq_hadamard.apply(had));
      std::int64_t res = materialize32(fl.rq_res_skip.apply(blk[i]) +
                                       fl.rq_res_glu.apply(glu_out));
      blk[i] = combine_narrow(res);
    }
    glu_macs += std::uint64_t(spec.n_model);
    if (lm) lm->glu += glu_macs;
  }

  // decoder
  std::vector<std::int32_t> dec_in(spec.n_model);
  for (int i = 0; i < spec.n_model; ++i)
    dec_in[i] = narrow16(
        ckpt_.rq_dec_in.apply(std::max<std::int32_t>(0, blk[i])));
  record(taps ? &taps->dec_in : nullptr, dec_in);

  std::vector<std::int64_t> oacc =
      fxp_mvm(ckpt_.decoder, dec_in, macs ? &macs->head : nullptr);
  std::vector<std::int16_t> out(spec.n_output);
  std::vector<std::int32_t> out32(spec.n_output);
  for (int i = 0; i < spec.n_output; ++i) {
    std::int64_t a = materialize32(oacc[i] + ckpt_.decoder_bias[i]);
    std::int32_t q = narrow16(ckpt_.rq_dec.apply(a));
    out[i] = std::int16_t(q);
    out32[i] = q;
  }
  record(taps ? &taps->output : nullptr, out32);
  return out;
}

std::vector<std::vector<std::int16_t>> FxpEngine::run(
    const std::vector<std::vector<std::int16_t>>& frames,
    std::vector<IntTapFrame>* taps, MacTally* macs) {
  FxpState state(ckpt_.spec);
  std::vector<std::vector<std::int16_t>> out;
  out.reserve(frames.size());
  for (const auto& f : frames) {
    IntTapFrame frame_taps;
    out.push_back(step(state, f, taps ? &frame_taps : nullptr, macs));
    if (taps) taps->push_back(std::move(frame_taps));
  }
  return out;
}

std::vector<std::int16_t> FxpEngine::quantize_input(
    std::span<const float> u) const {
  return quantize_vec_i16(u, ckpt_.scales.at("input"));
}

std::vector<float> FxpEngine::dequantize_output(
    std::span<const std::int16_t> y) const {
  const QuantScale& s = ckpt_.scales.at("output");
  std::vector<float> out(y.size());
  for (size_t i = 0; i < y.size(); ++i)
    out[i] = float(double(y[i]) / s.scale);
  return out;
}

}  // namespace srnn
