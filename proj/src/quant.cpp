#include "srnn/quant.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace srnn {

const QuantScale& ScaleSet::at(const std::string& site) const {
  auto it = sites.find(site);
  if (it == sites.end()) throw data_error("scale set: missing site " + site);
  return it->second;
}

std::vector<std::string> weight_site_names(const ModelSpec& spec) {
  std::vector<std::string> out;
  out.push_back("encoder");
  for (int l = 0; l < spec.depth; ++l) {
    std::string p = "layer" + std::to_string(l) + ".";
    out.push_back(p + "lambda");
    out.push_back(p + "B");
    out.push_back(p + "C");
    out.push_back(p + "D");
    out.push_back(p + "glu_w");
    out.push_back(p + "norm_scale");
  }
  out.push_back("decoder");
  return out;
}

std::vector<std::string> activation_site_names(const ModelSpec& spec) {
  std::vector<std::string> out;
  out.push_back("input");
  out.push_back("enc_out");
  for (int l = 0; l < spec.depth; ++l) {
    std::string p = "layer" + std::to_string(l) + ".";
    out.push_back(p + "pre_ssm");
    out.push_back(p + "state");
    out.push_back(p + "s5_out");
    out.push_back(p + "pre_glu");
    out.push_back(p + "glu_gate_in");
    out.push_back(p + "glu_gate_out");
    out.push_back(p + "glu_out");
    out.push_back(p + "res_out");
  }
  out.push_back("dec_in");
  out.push_back("output");
  return out;
}

void ScaleSet::validate_complete(const ModelSpec& spec) const {
  for (const auto& s : weight_site_names(spec))
    if (!has(s)) throw data_error("scale set: missing weight site " + s);
  for (const auto& s : activation_site_names(spec))
    if (!has(s)) throw data_error("scale set: missing activation site " + s);
}

QuantScale fit_scale_absmax(const std::string& site, double absmax, int bits) {
  if (bits != 8 && bits != 16)
    throw config_error("fit_scale: bit width must be 8 or 16");
  QuantScale s;
  s.site = site;
  s.bits = bits;
  s.absmax = absmax;
  if (absmax > 0.0) {
    s.scale = double(s.qmax()) / absmax;
  } else {
    s.scale = 1.0;
    s.degenerate = true;
  }
  return s;
}

QuantScale fit_scale(const std::string& site, std::span<const float> x,
                     int bits) {
  double absmax = 0.0;
  for (float v : x) absmax = std::max(absmax, std::fabs(double(v)));
  return fit_scale_absmax(site, absmax, bits);
}

std::vector<std::int32_t> quantize(std::span<const float> x,
                                   const QuantScale& s) {
  std::vector<std::int32_t> q(x.size());
  const std::int64_t qmax = s.qmax();
  for (size_t i = 0; i < x.size(); ++i) {
    std::int64_t v = round_half_away(s.scale * double(x[i]));
    q[i] = std::int32_t(std::clamp<std::int64_t>(v, -qmax, qmax));
  }
  return q;
}

std::vector<float> dequantize(std::span<const std::int32_t> q,
                              const QuantScale& s) {
  std::vector<float> x(q.size());
  for (size_t i = 0; i < q.size(); ++i)
    x[i] = float(double(q[i]) / s.scale);
  return x;
}

std::vector<float> fake_quant(std::span<const float> x, const QuantScale& s) {
  std::vector<float> out(x.size());
  const std::int64_t qmax = s.qmax();
  for (size_t i = 0; i < x.size(); ++i) {
    std::int64_t v = round_half_away(s.scale * double(x[i]));
    v = std::clamp<std::int64_t>(v, -qmax, qmax);
    out[i] = float(double(v) / s.scale);
  }
  return out;
}

namespace {

double absmax_of(std::span<const float> x) {
  double m = 0.0;
  for (float v : x) m = std::max(m, std::fabs(double(v)));
  return m;
}

double absmax_of(const DenseMatrixF& m) { return absmax_of(m.values); }

}  // namespace

ScaleSet calibrate(const Model& m,
                   const std::vector<std::vector<std::vector<float>>>& seqs,
                   const QuantRecipe& recipe) {
  if (seqs.empty()) throw data_error("calibrate: empty calibration set");

  ScaleSet out;

  // weight scales come straight from the tensors
  auto add_weight = [&](const std::string& site, double absmax) {
    out.sites.emplace(site, fit_scale_absmax(site, absmax,
                                             recipe.bits_for_weight(site)));
  };
  add_weight("encoder", absmax_of(m.encoder));
  for (int l = 0; l < m.spec.depth; ++l) {
    std::string p = "layer" + std::to_string(l) + ".";
    const LayerParams& lp = m.layers[l];
    add_weight(p + "lambda",
               std::max(absmax_of(lp.lambda_re), absmax_of(lp.lambda_im)));
    add_weight(p + "B", std::max(absmax_of(lp.b_re), absmax_of(lp.b_im)));
    add_weight(p + "C", std::max(absmax_of(lp.c_re), absmax_of(lp.c_im)));
    add_weight(p + "D", absmax_of(lp.d));
    add_weight(p + "glu_w", absmax_of(lp.glu_w));
    add_weight(p + "norm_scale", absmax_of(lp.norm_scale));
  }
  add_weight("decoder", absmax_of(m.decoder));

  // activation scales from the running absmax across all frames;
  // max-merge is associative and commutative, so any calibration order
  // produces the same scales
  std::map<std::string, double> act_max;
  for (const auto& s : activation_site_names(m.spec)) act_max[s] = 0.0;
  ObserveFn observer = [&](SiteKind k, int layer, std::span<const float> v) {
    std::string site;
    switch (k) {
      case SiteKind::kStateRe:
      case SiteKind::kStateIm:
        site = "layer" + std::to_string(layer) + ".state";
        break;
      case SiteKind::kHiddenRe:
        return;  // shares the state scale
      default:
        site = site_name(k, layer);
    }
    auto it = act_max.find(site);
    if (it != act_max.end()) it->second = std::max(it->second, absmax_of(v));
  };
  for (const auto& seq : seqs) {
    SequenceState state(m.spec);
    ForwardOptions opt;
    opt.observe = &observer;
    for (const auto& frame : seq) model_forward_step(m, state, frame, opt);
  }
  for (const auto& [site, mx] : act_max)
    out.sites.emplace(site,
                      fit_scale_absmax(site, mx, recipe.activation_bits));
  return out;
}

namespace {

inline float gelu_exact(float x) {
  double xd = x;
  return float(0.5 * xd * (1.0 + std::erf(xd * 0.7071067811865475244)));
}

struct FqWeights {
  DenseMatrixF encoder, decoder;
  struct Layer {
    std::vector<float> lambda_re, lambda_im, d, norm_scale;
    DenseMatrixF b_re, b_im, c_re, c_im, glu_w;
  };
  std::vector<Layer> layers;
};

DenseMatrixF fq_matrix(const DenseMatrixF& w, const QuantScale& s) {
  return DenseMatrixF(w.rows, w.cols, fake_quant(w.values, s));
}

FqWeights build_fq_weights(const Model& m, const ScaleSet& scales) {
  FqWeights fw;
  fw.encoder = fq_matrix(m.encoder, scales.at("encoder"));
  fw.decoder = fq_matrix(m.decoder, scales.at("decoder"));
  fw.layers.resize(m.spec.depth);
  for (int l = 0; l < m.spec.depth; ++l) {
    std::string p = "layer" + std::to_string(l) + ".";
    const LayerParams& lp = m.layers[l];
    FqWeights::Layer& out = fw.layers[l];
    const QuantScale& sl = scales.at(p + "lambda");
    out.lambda_re = fake_quant(lp.lambda_re, sl);
    out.lambda_im = fake_quant(lp.lambda_im, sl);
    const QuantScale& sb = scales.at(p + "B");
    out.b_re = fq_matrix(lp.b_re, sb);
    out.b_im = fq_matrix(lp.b_im, sb);
    const QuantScale& sc = scales.at(p + "C");
    out.c_re = fq_matrix(lp.c_re, sc);
    out.c_im = fq_matrix(lp.c_im, sc);
    out.d = fake_quant(lp.d, scales.at(p + "D"));
    out.glu_w = fq_matrix(lp.glu_w, scales.at(p + "glu_w"));
    out.norm_scale = fake_quant(lp.norm_scale, scales.at(p + "norm_scale"));
  }
  return fw;
}

std::vector<float> fq_vec(std::vector<float> x, const QuantScale& s) {
  return fake_quant(x, s);
}

void call_observe(const ObserveFn* fn, SiteKind k, int layer,
                  std::span<const float> v) {
  if (fn && *fn) (*fn)(k, layer, v);
}

}  // namespace

std::vector<std::vector<float>> static_quant_eval(
    const Model& m, const ScaleSet& scales,
    const std::vector<std::vector<float>>& frames, const ObserveFn* observe) {
  scales.validate_complete(m.spec);
  FqWeights fw = build_fq_weights(m, scales);
  const int n_model = m.spec.n_model;
  const int n_ssm = m.spec.n_ssm;

  std::vector<ComplexVector> x(m.spec.depth, ComplexVector(n_ssm));
  std::vector<std::vector<float>> outputs;
  outputs.reserve(frames.size());

  for (const auto& u : frames) {
    if (int(u.size()) != m.spec.n_input)
      throw numeric_error("static_quant_eval: input length mismatch");
    std::vector<float> uf = fq_vec({u.begin(), u.end()}, scales.at("input"));
    call_observe(observe, SiteKind::kInput, -1, uf);

    std::vector<double> acc = matvec_dense(fw.encoder, uf);
    std::vector<float> blk(n_model);
    for (int i = 0; i < n_model; ++i)
      blk[i] = float(acc[i] + double(m.encoder_bias[i]));
    blk = fq_vec(std::move(blk), scales.at("enc_out"));
    call_observe(observe, SiteKind::kEncOut, -1, blk);

    for (int l = 0; l < m.spec.depth; ++l) {
      std::string p = "layer" + std::to_string(l) + ".";
      const FqWeights::Layer& lw = fw.layers[l];

      std::vector<float> v(n_model);
      for (int i = 0; i < n_model; ++i) {
        float t = float(double(lw.norm_scale[i]) * blk[i] +
                        double(m.layers[l].norm_shift[i]));
        v[i] = (m.spec.relufied && t < 0.0f) ? 0.0f : t;
      }
      v = fq_vec(std::move(v), scales.at(p + "pre_ssm"));
      call_observe(observe, SiteKind::kPreSsm, l, v);

      std::vector<double> bre = matvec_dense(lw.b_re, v);
      std::vector<double> bim = matvec_dense(lw.b_im, v);
      const QuantScale& sx = scales.at(p + "state");
      std::vector<float> xr(n_ssm), xi(n_ssm);
      for (int i = 0; i < n_ssm; ++i) {
        double lr = lw.lambda_re[i], li = lw.lambda_im[i];
        xr[i] = float(lr * x[l].re[i] - li * x[l].im[i] + bre[i]);
        xi[i] = float(lr * x[l].im[i] + li * x[l].re[i] + bim[i]);
      }
      xr = fq_vec(std::move(xr), sx);
      xi = fq_vec(std::move(xi), sx);
      x[l].re = xr;
      x[l].im = xi;
      call_observe(observe, SiteKind::kStateRe, l, xr);
      call_observe(observe, SiteKind::kStateIm, l, xi);

      std::vector<float> h(n_ssm);
      for (int i = 0; i < n_ssm; ++i)
        h[i] = (m.spec.relufied && xr[i] < 0.0f) ? 0.0f : xr[i];
      call_observe(observe, SiteKind::kHiddenRe, l, h);

      std::vector<double> cre = matvec_dense(lw.c_re, h);
      std::vector<double> cim = matvec_dense(lw.c_im, xi);
      std::vector<float> y(n_model);
      for (int i = 0; i < n_model; ++i)
        y[i] = float(cre[i] - cim[i] + double(lw.d[i]) * double(v[i]));
      y = fq_vec(std::move(y), scales.at(p + "s5_out"));
      call_observe(observe, SiteKind::kS5Out, l, y);

      std::vector<float> tau(n_model);
      for (int i = 0; i < n_model; ++i)
        tau[i] = m.spec.activation == Activation::kRelu
                     ? std::max(0.0f, y[i])
                     : gelu_exact(y[i]);
      tau = fq_vec(std::move(tau), scales.at(p + "pre_glu"));
      call_observe(observe, SiteKind::kPreGlu, l, tau);

      std::vector<double> gi = matvec_dense(lw.glu_w, tau);
      std::vector<float> gate_in(n_model);
      for (int i = 0; i < n_model; ++i) gate_in[i] = float(gi[i]);
      gate_in = fq_vec(std::move(gate_in), scales.at(p + "glu_gate_in"));
      call_observe(observe, SiteKind::kGluGateIn, l, gate_in);

      std::vector<float> gate(n_model);
      for (int i = 0; i < n_model; ++i)
        gate[i] = float(1.0 / (1.0 + std::exp(-double(gate_in[i]))));
      gate = fq_vec(std::move(gate), scales.at(p + "glu_gate_out"));
      call_observe(observe, SiteKind::kGluGateOut, l, gate);

      std::vector<float> g(n_model);
      for (int i = 0; i < n_model; ++i)
        g[i] = float(double(gate[i]) * double(tau[i]));
      g = fq_vec(std::move(g), scales.at(p + "glu_out"));
      call_observe(observe, SiteKind::kGluOut, l, g);

      for (int i = 0; i < n_model; ++i)
        blk[i] = float(double(blk[i]) + double(g[i]));
      blk = fq_vec(std::move(blk), scales.at(p + "res_out"));
      call_observe(observe, SiteKind::kResOut, l, blk);
    }

    std::vector<float> dec_in(n_model);
    for (int i = 0; i < n_model; ++i)
      dec_in[i] = (m.spec.relufied && blk[i] < 0.0f) ? 0.0f : blk[i];
    dec_in = fq_vec(std::move(dec_in), scales.at("dec_in"));
    call_observe(observe, SiteKind::kDecIn, -1, dec_in);

    std::vector<double> oacc = matvec_dense(fw.decoder, dec_in);
    std::vector<float> out(m.spec.n_output);
    for (int i = 0; i < m.spec.n_output; ++i)
      out[i] = float(oacc[i] + double(m.decoder_bias[i]));
    out = fq_vec(std::move(out), scales.at("output"));
    call_observe(observe, SiteKind::kOutput, -1, out);
    outputs.push_back(std::move(out));
  }
  return outputs;
}

std::string scales_csv(const ScaleSet& scales) {
  std::ostringstream os;
  os << "# quant_scales v1\n";
  os << "site,bits,scale,absmax,degenerate\n";
  os.precision(17);
  for (const auto& [site, s] : scales.sites)
    os << site << ',' << s.bits << ',' << s.scale << ',' << s.absmax << ','
       << (s.degenerate ? 1 : 0) << '\n';
  return os.str();
}

}  // namespace srnn
