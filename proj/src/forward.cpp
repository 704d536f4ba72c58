#include "srnn/forward.hpp"

#include <cmath>

#include "srnn/parallel.hpp"

namespace srnn {

const char* site_kind_name(SiteKind k) {
  switch (k) {
    case SiteKind::kInput: return "input";
    case SiteKind::kEncOut: return "enc_out";
    case SiteKind::kPreSsm: return "pre_ssm";
    case SiteKind::kStateRe: return "state_re";
    case SiteKind::kStateIm: return "state_im";
    case SiteKind::kHiddenRe: return "hidden_re";
    case SiteKind::kS5Out: return "s5_out";
    case SiteKind::kPreGlu: return "pre_glu";
    case SiteKind::kGluGateIn: return "glu_gate_in";
    case SiteKind::kGluGateOut: return "glu_gate_out";
    case SiteKind::kGluOut: return "glu_out";
    case SiteKind::kResOut: return "res_out";
    case SiteKind::kDecIn: return "dec_in";
    case SiteKind::kOutput: return "output";
  }
  return "?";
}

std::string site_name(SiteKind k, int layer) {
  if (layer < 0) return site_kind_name(k);
  return "layer" + std::to_string(layer) + "." + site_kind_name(k);
}

std::uint64_t MacTally::total() const {
  std::uint64_t t = encoder + head;
  for (const auto& l : layers)
    t += l.batchnorm + l.s5_hidden + l.s5_output + l.glu;
  return t;
}

CsrWeights compile_csr(const Model& m) {
  CsrWeights cw;
  cw.encoder = to_csr(m.encoder);
  cw.layers.resize(m.layers.size());
  for (size_t i = 0; i < m.layers.size(); ++i) {
    cw.layers[i].b_re = to_csr(m.layers[i].b_re);
    cw.layers[i].b_im = to_csr(m.layers[i].b_im);
    cw.layers[i].c_re = to_csr(m.layers[i].c_re);
    cw.layers[i].c_im = to_csr(m.layers[i].c_im);
    cw.layers[i].glu_w = to_csr(m.layers[i].glu_w);
  }
  cw.decoder = to_csr(m.decoder);
  return cw;
}

TapFrame& TapRecorder::frame_for(SiteKind k, int layer) {
  size_t idx = counts_[{int(k), layer}]++;
  if (frames_.size() <= idx) frames_.resize(idx + 1);
  TapFrame& f = frames_[idx];
  if (int(f.layers.size()) < depth_) f.layers.resize(depth_);
  return f;
}

ObserveFn TapRecorder::hook() {
  return [this](SiteKind k, int layer, std::span<const float> v) {
    TapFrame& f = frame_for(k, layer);
    std::vector<float> copy(v.begin(), v.end());
    switch (k) {
      case SiteKind::kInput: f.input = std::move(copy); break;
      case SiteKind::kEncOut: f.enc_out = std::move(copy); break;
      case SiteKind::kPreSsm: f.layers[layer].pre_ssm = std::move(copy); break;
      case SiteKind::kHiddenRe: f.layers[layer].hidden_re = std::move(copy); break;
      case SiteKind::kStateIm: f.layers[layer].hidden_im = std::move(copy); break;
      case SiteKind::kS5Out: f.layers[layer].s5_out = std::move(copy); break;
      case SiteKind::kPreGlu: f.layers[layer].pre_glu = std::move(copy); break;
      case SiteKind::kDecIn: f.dec_in = std::move(copy); break;
      case SiteKind::kOutput: f.output = std::move(copy); break;
      default: break;  // scale-only sites, not retained
    }
  };
}

namespace {

inline float gelu_exact(float x) {
  // erf-based definition, evaluated in double
  double xd = x;
  return float(0.5 * xd * (1.0 + std::erf(xd * 0.7071067811865475244)));
}

inline float sigmoid(float x) { return float(1.0 / (1.0 + std::exp(-double(x)))); }

struct WeightRef {
  const DenseMatrixF* dense = nullptr;
  const SparseMatrixF* csr = nullptr;

  std::vector<float> apply(std::span<const float> x, std::uint64_t* macs) const {
    return csr ? spmv_event_driven(*csr, x, macs)
               : matvec_event_driven(*dense, x, macs);
  }
};

struct LayerWeights {
  WeightRef b_re, b_im, c_re, c_im, glu_w;
};

void observe(const ObserveFn* fn, SiteKind k, int layer,
             std::span<const float> v) {
  if (fn && *fn) (*fn)(k, layer, v);
}

// norm -> S5 -> GLU -> residual for one frame. `blk` is the block input
// and is replaced with the block output.
void run_block(const LayerParams& p, const LayerWeights& w, bool relufied,
               Activation act, ComplexVector& x, std::vector<float>& blk,
               int layer, const ObserveFn* obs, MacTally::Layer* macs) {
  const int n_model = int(blk.size());
  const int n_ssm = int(x.re.size());

  // fused inference norm; the post-norm ReLU realizes the sparsifying
  // rectification of the residual stream in relufied models
  std::vector<float> v(n_model);
  for (int i = 0; i < n_model; ++i) {
    float t = float(double(p.norm_scale[i]) * blk[i] + double(p.norm_shift[i]));
    v[i] = (relufied && t < 0.0f) ? 0.0f : t;
  }
  if (macs) macs->batchnorm += std::uint64_t(n_model);
  observe(obs, SiteKind::kPreSsm, layer, v);

  // x' = lambda (.) x + B v
  std::uint64_t hidden_macs = 0;
  std::vector<float> bre = w.b_re.apply(v, &hidden_macs);
  std::vector<float> bim = w.b_im.apply(v, &hidden_macs);
  for (int i = 0; i < n_ssm; ++i) {
    double xr = x.re[i], xi = x.im[i];
    double lr = p.lambda_re[i], li = p.lambda_im[i];
    x.re[i] = float(lr * xr - li * xi + bre[i]);
    x.im[i] = float(lr * xi + li * xr + bim[i]);
  }
  hidden_macs += 4u * std::uint64_t(n_ssm);
  if (macs) macs->s5_hidden += hidden_macs;
  observe(obs, SiteKind::kStateRe, layer, x.re);
  observe(obs, SiteKind::kStateIm, layer, x.im);

  // read-out path rectification ("hidden" site); the carried state stays
  // linear so the scan remains valid
  std::vector<float> h(n_ssm);
  for (int i = 0; i < n_ssm; ++i)
    h[i] = (relufied && x.re[i] < 0.0f) ? 0.0f : x.re[i];
  observe(obs, SiteKind::kHiddenRe, layer, h);

  std::uint64_t out_macs = 0;
  std::vector<float> cre = w.c_re.apply(h, &out_macs);
  std::vector<float> cim = w.c_im.apply(x.im, &out_macs);
  std::vector<float> y(n_model);
  for (int i = 0; i < n_model; ++i) {
    double acc = double(cre[i]) - double(cim[i]);
    if (v[i] != 0.0f) {
      acc += double(p.d[i]) * double(v[i]);
      ++out_macs;
    }
    y[i] = float(acc);
  }
  if (macs) macs->s5_output += out_macs;
  observe(obs, SiteKind::kS5Out, layer, y);

  // GLU(y) = sigmoid(W tau(y)) (.) tau(y)
  std::vector<float> t(n_model);
  for (int i = 0; i < n_model; ++i)
    t[i] = act == Activation::kRelu ? std::max(0.0f, y[i]) : gelu_exact(y[i]);
  observe(obs, SiteKind::kPreGlu, layer, t);

  std::uint64_t glu_macs = 0;
  std::vector<float> gate_in = w.glu_w.apply(t, &glu_macs);
  observe(obs, SiteKind::kGluGateIn, layer, gate_in);
  std::vector<float> gate(n_model);
  for (int i = 0; i < n_model; ++i) gate[i] = sigmoid(gate_in[i]);
  observe(obs, SiteKind::kGluGateOut, layer, gate);
  std::vector<float> g(n_model);
  for (int i = 0; i < n_model; ++i) g[i] = float(double(gate[i]) * double(t[i]));
  glu_macs += std::uint64_t(n_model);
  if (macs) macs->glu += glu_macs;
  observe(obs, SiteKind::kGluOut, layer, g);

  for (int i = 0; i < n_model; ++i) blk[i] = float(double(blk[i]) + double(g[i]));
  observe(obs, SiteKind::kResOut, layer, blk);
}

LayerWeights layer_weights(const Model& m, const CsrWeights* cw, int l) {
  LayerWeights w;
  w.b_re.dense = &m.layers[l].b_re;
  w.b_im.dense = &m.layers[l].b_im;
  w.c_re.dense = &m.layers[l].c_re;
  w.c_im.dense = &m.layers[l].c_im;
  w.glu_w.dense = &m.layers[l].glu_w;
  if (cw) {
    w.b_re.csr = &cw->layers[l].b_re;
    w.b_im.csr = &cw->layers[l].b_im;
    w.c_re.csr = &cw->layers[l].c_re;
    w.c_im.csr = &cw->layers[l].c_im;
    w.glu_w.csr = &cw->layers[l].glu_w;
  }
  return w;
}

}  // namespace

std::vector<float> layer_step(const LayerParams& p, const ModelSpec& spec,
                              ComplexVector& x, std::span<const float> u,
                              const ObserveFn* observe_fn, int layer,
                              MacTally::Layer* macs) {
  if (int(u.size()) != spec.n_model)
    throw numeric_error("layer_step: input length does not match n_model");
  for (float v : u)
    if (!std::isfinite(v)) throw numeric_error("layer_step: non-finite input");
  LayerWeights w;
  w.b_re.dense = &p.b_re;
  w.b_im.dense = &p.b_im;
  w.c_re.dense = &p.c_re;
  w.c_im.dense = &p.c_im;
  w.glu_w.dense = &p.glu_w;
  std::vector<float> blk(u.begin(), u.end());
  run_block(p, w, spec.relufied, spec.activation, x, blk, layer, observe_fn,
            macs);
  return blk;
}

std::vector<float> model_forward_step(const Model& m, SequenceState& state,
                                      std::span<const float> u,
                                      const ForwardOptions& opt) {
  if (int(u.size()) != m.spec.n_input)
    throw numeric_error("forward: input length does not match n_input");
  for (float x : u)
    if (!std::isfinite(x)) throw numeric_error("forward: non-finite input");
  if (opt.macs && opt.macs->layers.empty())
    opt.macs->layers.resize(m.spec.depth);

  observe(opt.observe, SiteKind::kInput, -1, u);

  WeightRef enc{&m.encoder, opt.csr ? &opt.csr->encoder : nullptr};
  std::vector<float> blk =
      enc.apply(u, opt.macs ? &opt.macs->encoder : nullptr);
  for (int i = 0; i < m.spec.n_model; ++i)
    blk[i] = float(double(blk[i]) + double(m.encoder_bias[i]));
  observe(opt.observe, SiteKind::kEncOut, -1, blk);

  for (int l = 0; l < m.spec.depth; ++l) {
    run_block(m.layers[l], layer_weights(m, opt.csr, l), m.spec.relufied,
              m.spec.activation, state.x[l], blk, l, opt.observe,
              opt.macs ? &opt.macs->layers[l] : nullptr);
  }

  std::vector<float> dec_in(blk.size());
  for (size_t i = 0; i < blk.size(); ++i)
    dec_in[i] = (m.spec.relufied && blk[i] < 0.0f) ? 0.0f : blk[i];
  observe(opt.observe, SiteKind::kDecIn, -1, dec_in);

  WeightRef dec{&m.decoder, opt.csr ? &opt.csr->decoder : nullptr};
  std::vector<float> out =
      dec.apply(dec_in, opt.macs ? &opt.macs->head : nullptr);
  for (int i = 0; i < m.spec.n_output; ++i)
    out[i] = float(double(out[i]) + double(m.decoder_bias[i]));
  observe(opt.observe, SiteKind::kOutput, -1, out);
  return out;
}

std::vector<std::vector<float>> model_forward_scan(
    const Model& m, const std::vector<std::vector<float>>& frames, int chunk,
    const ForwardOptions& opt, int workers, SequenceState* state) {
  const int T = int(frames.size());
  if (T == 0) return {};
  if (chunk < 1) throw config_error("scan: chunk must be >= 1");
  for (const auto& f : frames) {
    if (int(f.size()) != m.spec.n_input)
      throw numeric_error("scan: input length does not match n_input");
    for (float x : f)
      if (!std::isfinite(x)) throw numeric_error("scan: non-finite input");
  }
  if (opt.macs && opt.macs->layers.empty())
    opt.macs->layers.resize(m.spec.depth);

  const int n_chunks = (T + chunk - 1) / chunk;
  const int n_model = m.spec.n_model;
  const int n_ssm = m.spec.n_ssm;

  std::vector<MacTally> chunk_macs(n_chunks, MacTally(m.spec.depth));

  if (opt.observe)
    for (int t = 0; t < T; ++t)
      observe(opt.observe, SiteKind::kInput, -1, frames[t]);

  // encoder over the whole sequence
  std::vector<std::vector<float>> blk(T);
  WeightRef enc{&m.encoder, opt.csr ? &opt.csr->encoder : nullptr};
  parallel_for(n_chunks, workers, [&](int c) {
    for (int t = c * chunk; t < std::min(T, (c + 1) * chunk); ++t) {
      blk[t] = enc.apply(frames[t], &chunk_macs[c].encoder);
      for (int i = 0; i < n_model; ++i)
        blk[t][i] = float(double(blk[t][i]) + double(m.encoder_bias[i]));
    }
  });
  if (opt.observe)
    for (int t = 0; t < T; ++t)
      observe(opt.observe, SiteKind::kEncOut, -1, blk[t]);

  for (int l = 0; l < m.spec.depth; ++l) {
    const LayerParams& p = m.layers[l];
    LayerWeights w = layer_weights(m, opt.csr, l);

    // pre-B vector and its projection, per frame
    std::vector<std::vector<float>> v(T);
    std::vector<ComplexVector> x(T);  // holds B v, then the local scan, then x_t
    parallel_for(n_chunks, workers, [&](int c) {
      for (int t = c * chunk; t < std::min(T, (c + 1) * chunk); ++t) {
        v[t].resize(n_model);
        for (int i = 0; i < n_model; ++i) {
          float s = float(double(p.norm_scale[i]) * blk[t][i] +
                          double(p.norm_shift[i]));
          v[t][i] = (m.spec.relufied && s < 0.0f) ? 0.0f : s;
        }
        chunk_macs[c].layers[l].batchnorm += std::uint64_t(n_model);
        std::uint64_t hm = 0;
        std::vector<float> bre = w.b_re.apply(v[t], &hm);
        std::vector<float> bim = w.b_im.apply(v[t], &hm);
        chunk_macs[c].layers[l].s5_hidden += hm + 4u * std::uint64_t(n_ssm);
        x[t].re = std::move(bre);
        x[t].im = std::move(bim);
      }
    });
    if (opt.observe)
      for (int t = 0; t < T; ++t)
        observe(opt.observe, SiteKind::kPreSsm, l, v[t]);

    // local scan within each chunk, from zero entry state:
    //   xl_t = lambda (.) xl_{t-1} + (B v)_t
    parallel_for(n_chunks, workers, [&](int c) {
      int t0 = c * chunk, t1 = std::min(T, (c + 1) * chunk);
      for (int t = t0 + 1; t < t1; ++t) {
        for (int i = 0; i < n_ssm; ++i) {
          double lr = p.lambda_re[i], li = p.lambda_im[i];
          double xr = x[t - 1].re[i], xi = x[t - 1].im[i];
          x[t].re[i] = float(lr * xr - li * xi + double(x[t].re[i]));
          x[t].im[i] = float(lr * xi + li * xr + double(x[t].im[i]));
        }
      }
    });

    // carry chunk entry states sequentially:
    //   entry_{c+1} = lambda^len (.) entry_c + xl_last(c)
    std::vector<ComplexVector> entry(n_chunks, ComplexVector(n_ssm));
    if (state) entry[0] = state->x[l];
    std::vector<double> pow_re(n_ssm), pow_im(n_ssm);
    for (int c = 0; c + 1 < n_chunks; ++c) {
      int t0 = c * chunk, t1 = std::min(T, (c + 1) * chunk);
      int len = t1 - t0;
      for (int i = 0; i < n_ssm; ++i) {
        pow_re[i] = 1.0;
        pow_im[i] = 0.0;
      }
      for (int k = 0; k < len; ++k) {
        for (int i = 0; i < n_ssm; ++i) {
          double nr = pow_re[i] * p.lambda_re[i] - pow_im[i] * p.lambda_im[i];
          double ni = pow_re[i] * p.lambda_im[i] + pow_im[i] * p.lambda_re[i];
          pow_re[i] = nr;
          pow_im[i] = ni;
        }
      }
      for (int i = 0; i < n_ssm; ++i) {
        double er = entry[c].re[i], ei = entry[c].im[i];
        entry[c + 1].re[i] =
            float(pow_re[i] * er - pow_im[i] * ei + double(x[t1 - 1].re[i]));
        entry[c + 1].im[i] =
            float(pow_re[i] * ei + pow_im[i] * er + double(x[t1 - 1].im[i]));
      }
    }

    // apply carries: x_t = lambda^{k+1} (.) entry_c + xl_t
    parallel_for(n_chunks, workers, [&](int c) {
      int t0 = c * chunk, t1 = std::min(T, (c + 1) * chunk);
      std::vector<double> pr(n_ssm, 1.0), pi(n_ssm, 0.0);
      for (int t = t0; t < t1; ++t) {
        for (int i = 0; i < n_ssm; ++i) {
          double nr = pr[i] * p.lambda_re[i] - pi[i] * p.lambda_im[i];
          double ni = pr[i] * p.lambda_im[i] + pi[i] * p.lambda_re[i];
          pr[i] = nr;
          pi[i] = ni;
          double er = entry[c].re[i], ei = entry[c].im[i];
          x[t].re[i] = float(nr * er - ni * ei + double(x[t].re[i]));
          x[t].im[i] = float(nr * ei + ni * er + double(x[t].im[i]));
        }
      }
    });
    if (state) state->x[l] = x[T - 1];
    if (opt.observe) {
      for (int t = 0; t < T; ++t) {
        observe(opt.observe, SiteKind::kStateRe, l, x[t].re);
        observe(opt.observe, SiteKind::kStateIm, l, x[t].im);
      }
    }

    // read-out, GLU, residual per frame
    std::vector<std::vector<float>> h_all, y_all, t_all, gin_all, gout_all,
        g_all;
    const bool keep = opt.observe != nullptr;
    if (keep) {
      h_all.resize(T);
      y_all.resize(T);
      t_all.resize(T);
      gin_all.resize(T);
      gout_all.resize(T);
      g_all.resize(T);
    }
    parallel_for(n_chunks, workers, [&](int c) {
      for (int t = c * chunk; t < std::min(T, (c + 1) * chunk); ++t) {
        std::vector<float> h(n_ssm);
        for (int i = 0; i < n_ssm; ++i)
          h[i] = (m.spec.relufied && x[t].re[i] < 0.0f) ? 0.0f : x[t].re[i];
        std::uint64_t om = 0;
        std::vector<float> cre = w.c_re.apply(h, &om);
        std::vector<float> cim = w.c_im.apply(x[t].im, &om);
        std::vector<float> y(n_model);
        for (int i = 0; i < n_model; ++i) {
          double acc = double(cre[i]) - double(cim[i]);
          if (v[t][i] != 0.0f) {
            acc += double(p.d[i]) * double(v[t][i]);
            ++om;
          }
          y[i] = float(acc);
        }
        chunk_macs[c].layers[l].s5_output += om;

        std::vector<float> tau(n_model);
        for (int i = 0; i < n_model; ++i)
          tau[i] = m.spec.activation == Activation::kRelu
                       ? std::max(0.0f, y[i])
                       : gelu_exact(y[i]);
        std::uint64_t gm = 0;
        std::vector<float> gate_in = w.glu_w.apply(tau, &gm);
        std::vector<float> gate(n_model), g(n_model);
        for (int i = 0; i < n_model; ++i) gate[i] = sigmoid(gate_in[i]);
        for (int i = 0; i < n_model; ++i)
          g[i] = float(double(gate[i]) * double(tau[i]));
        gm += std::uint64_t(n_model);
        chunk_macs[c].layers[l].glu += gm;
        for (int i = 0; i < n_model; ++i)
          blk[t][i] = float(double(blk[t][i]) + double(g[i]));
        if (keep) {
          h_all[t] = std::move(h);
          y_all[t] = std::move(y);
          t_all[t] = std::move(tau);
          gin_all[t] = std::move(gate_in);
          gout_all[t] = std::move(gate);
          g_all[t] = std::move(g);
        }
      }
    });
    if (opt.observe) {
      for (int t = 0; t < T; ++t) {
        observe(opt.observe, SiteKind::kHiddenRe, l, h_all[t]);
        observe(opt.observe, SiteKind::kS5Out, l, y_all[t]);
        observe(opt.observe, SiteKind::kPreGlu, l, t_all[t]);
        observe(opt.observe, SiteKind::kGluGateIn, l, gin_all[t]);
        observe(opt.observe, SiteKind::kGluGateOut, l, gout_all[t]);
        observe(opt.observe, SiteKind::kGluOut, l, g_all[t]);
        observe(opt.observe, SiteKind::kResOut, l, blk[t]);
      }
    }
  }

  std::vector<std::vector<float>> out(T);
  WeightRef dec{&m.decoder, opt.csr ? &opt.csr->decoder : nullptr};
  parallel_for(n_chunks, workers, [&](int c) {
    for (int t = c * chunk; t < std::min(T, (c + 1) * chunk); ++t) {
      std::vector<float> dec_in(n_model);
      for (int i = 0; i < n_model; ++i)
        dec_in[i] =
            (m.spec.relufied && blk[t][i] < 0.0f) ? 0.0f : blk[t][i];
      out[t] = dec.apply(dec_in, &chunk_macs[c].head);
      for (int i = 0; i < m.spec.n_output; ++i)
        out[t][i] = float(double(out[t][i]) + double(m.decoder_bias[i]));
      blk[t] = std::move(dec_in);  // reuse as dec_in storage for observe
    }
  });
  if (opt.observe) {
    for (int t = 0; t < T; ++t) {
      observe(opt.observe, SiteKind::kDecIn, -1, blk[t]);
      observe(opt.observe, SiteKind::kOutput, -1, out[t]);
    }
  }

  if (opt.macs) {
    for (const auto& cm : chunk_macs) {
      opt.macs->encoder += cm.encoder;
      opt.macs->head += cm.head;
      for (int l = 0; l < m.spec.depth; ++l) {
        opt.macs->layers[l].batchnorm += cm.layers[l].batchnorm;
        opt.macs->layers[l].s5_hidden += cm.layers[l].s5_hidden;
        opt.macs->layers[l].s5_output += cm.layers[l].s5_output;
        opt.macs->layers[l].glu += cm.layers[l].glu;
      }
    }
  }
  return out;
}

}  // namespace srnn
