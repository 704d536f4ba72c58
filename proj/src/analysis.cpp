#include "srnn/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace srnn {

double DensitySet::wgt(const std::string& id) const {
  auto it = weight.find(id);
  return it == weight.end() ? 1.0 : it->second;
}

double DensitySet::act(const std::string& id) const {
  auto it = activation.find(id);
  return it == activation.end() ? 1.0 : it->second;
}

void DensitySet::validate() const {
  for (const auto& [k, v] : weight)
    if (!(v >= 0.0 && v <= 1.0))
      throw numeric_error("density outside [0,1] for weight " + k);
  for (const auto& [k, v] : activation)
    if (!(v >= 0.0 && v <= 1.0))
      throw numeric_error("density outside [0,1] for activation " + k);
}

namespace {

std::int64_t count_nonzero(std::span<const float> v) {
  std::int64_t n = 0;
  for (float x : v)
    if (x != 0.0f) ++n;
  return n;
}

std::int64_t count_nonzero(std::span<const std::int32_t> v) {
  std::int64_t n = 0;
  for (std::int32_t x : v)
    if (x != 0) ++n;
  return n;
}

std::int64_t count_nonzero(const DenseMatrixF& m) {
  return count_nonzero(std::span<const float>(m.values));
}

// shared accumulator for measured activation densities
struct Ratio {
  std::int64_t nonzero = 0;
  std::int64_t total = 0;
  void add(std::int64_t nz, std::int64_t n) {
    nonzero += nz;
    total += n;
  }
  double value() const { return total ? double(nonzero) / double(total) : 1.0; }
};

template <typename Taps>
DensitySet densities_from_taps(const Taps& taps) {
  if (taps.empty()) throw data_error("measured_densities: no tap frames");
  DensitySet out;
  Ratio input, dec_in;
  std::map<int, Ratio> pre_ssm, hidden, pre_glu;
  for (const auto& f : taps) {
    input.add(count_nonzero(f.input), std::int64_t(f.input.size()));
    dec_in.add(count_nonzero(f.dec_in), std::int64_t(f.dec_in.size()));
    for (size_t l = 0; l < f.layers.size(); ++l) {
      const auto& lay = f.layers[l];
      pre_ssm[int(l)].add(count_nonzero(lay.pre_ssm),
                          std::int64_t(lay.pre_ssm.size()));
      hidden[int(l)].add(
          count_nonzero(lay.hidden_re) + count_nonzero(lay.hidden_im),
          std::int64_t(lay.hidden_re.size() + lay.hidden_im.size()));
      pre_glu[int(l)].add(count_nonzero(lay.pre_glu),
                          std::int64_t(lay.pre_glu.size()));
    }
  }
  out.activation["input"] = input.value();
  out.activation["dec_in"] = dec_in.value();
  for (const auto& [l, r] : pre_ssm)
    out.activation["layer" + std::to_string(l) + ".pre_ssm"] = r.value();
  for (const auto& [l, r] : hidden)
    out.activation["layer" + std::to_string(l) + ".hidden"] = r.value();
  for (const auto& [l, r] : pre_glu)
    out.activation["layer" + std::to_string(l) + ".pre_glu"] = r.value();
  return out;
}

}  // namespace

DensitySet weight_densities(const Model& m) {
  DensitySet out;
  auto den = [](std::int64_t nz, std::int64_t total) {
    return total ? double(nz) / double(total) : 1.0;
  };
  out.weight["encoder"] = den(count_nonzero(m.encoder),
                              std::int64_t(m.encoder.values.size()));
  for (int l = 0; l < m.spec.depth; ++l) {
    std::string p = "layer" + std::to_string(l) + ".";
    const LayerParams& lp = m.layers[l];
    out.weight[p + "B"] =
        den(count_nonzero(lp.b_re) + count_nonzero(lp.b_im),
            std::int64_t(lp.b_re.values.size() + lp.b_im.values.size()));
    out.weight[p + "C"] =
        den(count_nonzero(lp.c_re) + count_nonzero(lp.c_im),
            std::int64_t(lp.c_re.values.size() + lp.c_im.values.size()));
    out.weight[p + "glu_w"] = den(count_nonzero(lp.glu_w),
                                  std::int64_t(lp.glu_w.values.size()));
  }
  out.weight["decoder"] = den(count_nonzero(m.decoder),
                              std::int64_t(m.decoder.values.size()));
  return out;
}

DensitySet weight_densities(const FxpCheckpoint& ckpt) {
  DensitySet out;
  out.weight["encoder"] = ckpt.encoder.density();
  for (int l = 0; l < ckpt.spec.depth; ++l) {
    std::string p = "layer" + std::to_string(l) + ".";
    const FxpLayer& fl = ckpt.layers[l];
    auto pair_density = [](const FxpMatrix& a, const FxpMatrix& b) {
      std::int64_t total =
          std::int64_t(a.rows()) * a.cols() + std::int64_t(b.rows()) * b.cols();
      return total ? double(a.nnz() + b.nnz()) / double(total) : 1.0;
    };
    out.weight[p + "B"] = pair_density(fl.b_re, fl.b_im);
    out.weight[p + "C"] = pair_density(fl.c_re, fl.c_im);
    out.weight[p + "glu_w"] = fl.glu_w.density();
  }
  out.weight["decoder"] = ckpt.decoder.density();
  return out;
}

DensitySet measured_densities(const std::vector<TapFrame>& taps) {
  return densities_from_taps(taps);
}

DensitySet measured_densities(const std::vector<IntTapFrame>& taps) {
  return densities_from_taps(taps);
}

MacProfile effective_macs(const ModelSpec& spec, const DensitySet& d) {
  d.validate();
  MacProfile p;
  auto push = [&](const std::string& comp, int layer, double macs) {
    p.rows.push_back({comp, layer, macs});
    p.total += macs;
  };
  const double n_in = spec.n_input, n_m = spec.n_model, n_s = spec.n_ssm,
               n_out = spec.n_output;
  push("encoder", -1, n_in * n_m * d.wgt("encoder") * d.act("input"));
  for (int l = 0; l < spec.depth; ++l) {
    std::string lp = "layer" + std::to_string(l) + ".";
    push("batchnorm", l, n_m);
    push("s5_hidden", l,
         2.0 * n_m * n_s * d.wgt(lp + "B") * d.act(lp + "pre_ssm") +
             4.0 * n_s);
    push("s5_output", l,
         2.0 * n_s * n_m * d.wgt(lp + "C") * d.act(lp + "hidden") +
             n_m * d.act(lp + "pre_ssm"));
    push("glu", l,
         n_m * n_m * d.wgt(lp + "glu_w") * d.act(lp + "pre_glu") + n_m);
  }
  push("head", -1, n_m * n_out * d.wgt("decoder") * d.act("dec_in"));
  return p;
}

std::uint64_t expected_total_macs(const MacProfile& p, std::uint64_t frames) {
  return std::uint64_t(std::llround(p.total * double(frames)));
}

namespace {

void add_memory_row(MemoryBreakdown& b, const std::string& name,
                    const std::string& dtype, std::int64_t elements,
                    std::int64_t bytes) {
  b.rows.push_back({name, dtype, elements, bytes});
  b.total_bytes += bytes;
}

void add_f32_matrix(MemoryBreakdown& b, const std::string& name,
                    const DenseMatrixF& m) {
  add_memory_row(b, name, "f32", std::int64_t(m.values.size()),
                 4 * std::int64_t(m.values.size()));
}

void add_f32_vec(MemoryBreakdown& b, const std::string& name,
                 const std::vector<float>& v) {
  add_memory_row(b, name, "f32", std::int64_t(v.size()),
                 4 * std::int64_t(v.size()));
}

void add_fxp_matrix(MemoryBreakdown& b, const std::string& name,
                    const FxpMatrix& m) {
  if (m.sparse) {
    std::int64_t nnz = m.csr.nnz();
    std::int64_t bytes = nnz * 1 + nnz * 2 + 4 * (std::int64_t(m.rows()) + 1);
    add_memory_row(b, name, "csr-i8", nnz, bytes);
  } else {
    add_memory_row(b, name, "i8", std::int64_t(m.dense.values.size()),
                   std::int64_t(m.dense.values.size()));
  }
}

}  // namespace

MemoryBreakdown memory_footprint(const Model& m) {
  MemoryBreakdown b;
  add_f32_matrix(b, "encoder", m.encoder);
  add_f32_vec(b, "encoder_bias", m.encoder_bias);
  for (int l = 0; l < m.spec.depth; ++l) {
    std::string p = "layer" + std::to_string(l) + ".";
    const LayerParams& lp = m.layers[l];
    add_f32_vec(b, p + "lambda_re", lp.lambda_re);
    add_f32_vec(b, p + "lambda_im", lp.lambda_im);
    add_f32_matrix(b, p + "b_re", lp.b_re);
    add_f32_matrix(b, p + "b_im", lp.b_im);
    add_f32_matrix(b, p + "c_re", lp.c_re);
    add_f32_matrix(b, p + "c_im", lp.c_im);
    add_f32_vec(b, p + "d", lp.d);
    add_f32_matrix(b, p + "glu_w", lp.glu_w);
    add_f32_vec(b, p + "norm_scale", lp.norm_scale);
    add_f32_vec(b, p + "norm_shift", lp.norm_shift);
  }
  add_f32_matrix(b, "decoder", m.decoder);
  add_f32_vec(b, "decoder_bias", m.decoder_bias);
  return b;
}

MemoryBreakdown memory_footprint(const FxpCheckpoint& ckpt) {
  MemoryBreakdown b;
  add_fxp_matrix(b, "encoder", ckpt.encoder);
  add_memory_row(b, "encoder_bias", "i32",
                 std::int64_t(ckpt.encoder_bias.size()),
                 4 * std::int64_t(ckpt.encoder_bias.size()));
  for (int l = 0; l < ckpt.spec.depth; ++l) {
    std::string p = "layer" + std::to_string(l) + ".";
    const FxpLayer& fl = ckpt.layers[l];
    add_memory_row(b, p + "lambda", "i16",
                   std::int64_t(fl.lambda_re.size() + fl.lambda_im.size()),
                   2 * std::int64_t(fl.lambda_re.size() + fl.lambda_im.size()));
    add_fxp_matrix(b, p + "b_re", fl.b_re);
    add_fxp_matrix(b, p + "b_im", fl.b_im);
    add_fxp_matrix(b, p + "c_re", fl.c_re);
    add_fxp_matrix(b, p + "c_im", fl.c_im);
    add_memory_row(b, p + "d", "i8", std::int64_t(fl.d.size()),
                   std::int64_t(fl.d.size()));
    add_fxp_matrix(b, p + "glu_w", fl.glu_w);
    add_memory_row(b, p + "norm_scale", "i8",
                   std::int64_t(fl.norm_scale.size()),
                   std::int64_t(fl.norm_scale.size()));
    add_memory_row(b, p + "norm_shift", "i32",
                   std::int64_t(fl.norm_shift.size()),
                   4 * std::int64_t(fl.norm_shift.size()));
    add_memory_row(b, p + "sigmoid_lut", "lut-i16",
                   std::int64_t(fl.sigmoid.knots.size()),
                   2 * std::int64_t(fl.sigmoid.knots.size()));
  }
  add_fxp_matrix(b, "decoder", ckpt.decoder);
  add_memory_row(b, "decoder_bias", "i32",
                 std::int64_t(ckpt.decoder_bias.size()),
                 4 * std::int64_t(ckpt.decoder_bias.size()));
  // frozen scales and requantizer constants travel with the checkpoint
  std::int64_t n_scales = std::int64_t(ckpt.scales.sites.size());
  add_memory_row(b, "scales", "f64", n_scales, 8 * n_scales);
  std::int64_t n_rq = 3 + 10 * std::int64_t(ckpt.spec.depth);
  add_memory_row(b, "requantizers", "i32x2", n_rq, 8 * n_rq);
  return b;
}

double si_snr(std::span<const float> estimate, std::span<const float> target) {
  if (estimate.size() != target.size())
    throw numeric_error("si_snr: length mismatch");
  if (estimate.empty()) throw numeric_error("si_snr: empty signals");
  bool all_zero = true;
  for (float v : target)
    if (v != 0.0f) {
      all_zero = false;
      break;
    }
  if (all_zero) throw numeric_error("si_snr: all-zero target");

  const size_t n = target.size();
  double mean_e = 0.0, mean_t = 0.0;
  for (size_t i = 0; i < n; ++i) {
    mean_e += estimate[i];
    mean_t += target[i];
  }
  mean_e /= double(n);
  mean_t /= double(n);

  double dot = 0.0, tt = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double e = estimate[i] - mean_e;
    double t = target[i] - mean_t;
    dot += e * t;
    tt += t * t;
  }
  if (tt <= 0.0) throw numeric_error("si_snr: target has no energy");
  double alpha = dot / tt;
  double sig = 0.0, err = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double e = estimate[i] - mean_e;
    double t = target[i] - mean_t;
    double s = alpha * t;
    sig += s * s;
    err += (e - s) * (e - s);
  }
  if (err < 1e-12 * sig) return 60.0;
  double v = 10.0 * std::log10(sig / err);
  return std::min(v, 60.0);
}

namespace {

// compensated (Kahan) accumulator so parallel-friendly reductions stay
// order-insensitive at double precision
struct Kahan {
  double sum = 0.0, c = 0.0;
  void add(double x) {
    double y = x - c;
    double t = sum + y;
    c = (t - sum) - y;
    sum = t;
  }
};

struct SitePair {
  std::string site;
  int layer;
  const std::vector<float>* ref;
  const std::vector<std::int32_t>* fxp;
  std::string scale_site;
};

std::vector<SitePair> paired_sites(const TapFrame& a, const IntTapFrame& b) {
  std::vector<SitePair> out;
  out.push_back({"enc_out", -1, &a.enc_out, &b.enc_out, "enc_out"});
  size_t depth = std::min(a.layers.size(), b.layers.size());
  for (size_t l = 0; l < depth; ++l) {
    std::string p = "layer" + std::to_string(l) + ".";
    out.push_back({"pre_ssm", int(l), &a.layers[l].pre_ssm,
                   &b.layers[l].pre_ssm, p + "pre_ssm"});
    out.push_back({"hidden_re", int(l), &a.layers[l].hidden_re,
                   &b.layers[l].hidden_re, p + "state"});
    out.push_back({"hidden_im", int(l), &a.layers[l].hidden_im,
                   &b.layers[l].hidden_im, p + "state"});
    out.push_back({"s5_out", int(l), &a.layers[l].s5_out,
                   &b.layers[l].s5_out, p + "s5_out"});
    out.push_back({"pre_glu", int(l), &a.layers[l].pre_glu,
                   &b.layers[l].pre_glu, p + "pre_glu"});
  }
  out.push_back({"dec_in", -1, &a.dec_in, &b.dec_in, "dec_in"});
  out.push_back({"output", -1, &a.output, &b.output, "output"});
  return out;
}

}  // namespace

MismatchReport mismatch_report(const std::vector<TapFrame>& ref,
                               const std::vector<IntTapFrame>& fxp,
                               const ScaleSet& scales) {
  if (ref.size() != fxp.size())
    throw data_error("mismatch_report: frame count differs");
  if (ref.empty()) throw data_error("mismatch_report: no frames");

  struct Acc {
    Kahan mae, mre;
    std::int64_t count = 0, nz = 0;
  };
  std::map<std::pair<int, std::string>, Acc> accs;

  for (size_t t = 0; t < ref.size(); ++t) {
    for (const auto& sp : paired_sites(ref[t], fxp[t])) {
      if (sp.ref->size() != sp.fxp->size())
        throw data_error("mismatch_report: site size mismatch at " + sp.site);
      const QuantScale& s = scales.at(sp.scale_site);
      Acc& a = accs[{sp.layer, sp.site}];
      for (size_t i = 0; i < sp.ref->size(); ++i) {
        double x = (*sp.ref)[i];
        double xq = double((*sp.fxp)[i]) / s.scale;
        double diff = std::fabs(x - xq);
        a.mae.add(diff);
        ++a.count;
        if (x != 0.0) {
          a.mre.add(diff / std::fabs(x));
          ++a.nz;
        }
      }
    }
  }

  MismatchReport rep;
  for (const auto& sp : paired_sites(ref.front(), fxp.front())) {
    const Acc& a = accs[{sp.layer, sp.site}];
    MismatchReport::Row row;
    row.site = sp.site;
    row.layer = sp.layer;
    row.count = a.count;
    row.mae = a.count ? a.mae.sum / double(a.count) : 0.0;
    row.mre = a.nz ? a.mre.sum / double(a.nz) : 0.0;
    rep.rows.push_back(row);
  }
  return rep;
}

std::map<std::string, std::int64_t> max_lsb_diff(
    const std::vector<TapFrame>& ref, const std::vector<IntTapFrame>& fxp,
    const ScaleSet& scales) {
  if (ref.size() != fxp.size())
    throw data_error("max_lsb_diff: frame count differs");
  std::map<std::string, std::int64_t> out;
  for (size_t t = 0; t < ref.size(); ++t) {
    for (const auto& sp : paired_sites(ref[t], fxp[t])) {
      const QuantScale& s = scales.at(sp.scale_site);
      std::string key = sp.layer < 0
                            ? sp.site
                            : "layer" + std::to_string(sp.layer) + "." + sp.site;
      std::int64_t& worst = out[key];
      for (size_t i = 0; i < sp.ref->size(); ++i) {
        std::int64_t qf = round_half_away(s.scale * double((*sp.ref)[i]));
        std::int64_t d = std::llabs(qf - std::int64_t((*sp.fxp)[i]));
        worst = std::max(worst, d);
      }
    }
  }
  return out;
}

std::string mac_profile_csv(const MacProfile& p) {
  std::ostringstream os;
  os << "# mac_profile v1\ncomponent,layer,macs\n";
  os.precision(17);
  for (const auto& r : p.rows)
    os << r.component << ',' << r.layer << ',' << r.macs << '\n';
  os << "total,-1," << p.total << '\n';
  return os.str();
}

std::string memory_csv(const MemoryBreakdown& b) {
  std::ostringstream os;
  os << "# memory v1\ntensor,dtype,elements,bytes\n";
  for (const auto& r : b.rows)
    os << r.tensor << ',' << r.dtype << ',' << r.elements << ',' << r.bytes
       << '\n';
  os << "total,,," << b.total_bytes << '\n';
  return os.str();
}

std::string densities_csv(const DensitySet& d) {
  std::ostringstream os;
  os << "# densities v1\nkind,site,density\n";
  os.precision(17);
  for (const auto& [k, v] : d.weight) os << "weight," << k << ',' << v << '\n';
  for (const auto& [k, v] : d.activation)
    os << "activation," << k << ',' << v << '\n';
  return os.str();
}

std::string mismatch_csv(const MismatchReport& r) {
  std::ostringstream os;
  os << "# mismatch v1\nsite,layer,mae,mre,count\n";
  os.precision(17);
  for (const auto& row : r.rows)
    os << row.site << ',' << row.layer << ',' << row.mae << ',' << row.mre
       << ',' << row.count << '\n';
  return os.str();
}

}  // namespace srnn
