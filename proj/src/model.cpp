#include "srnn/model.hpp"

#include <cmath>

#include "srnn/rng.hpp"

namespace srnn {

void ModelSpec::validate() const {
  if (depth < 1 || n_input < 1 || n_model < 1 || n_ssm < 1 || n_output < 1)
    throw config_error("model spec: all dimensions must be >= 1");
  if (width_factor <= 0.0)
    throw config_error("model spec: width factor must be positive");
}

ModelSpec base_spec() { return ModelSpec{}; }

ModelSpec scaled_spec(double k) {
  ModelSpec s;
  s.width_factor = k;
  s.n_model = std::max(1, int(std::lround(192.0 * k)));
  s.n_ssm = std::max(1, int(std::lround(256.0 * k)));
  s.validate();
  return s;
}

static void check_finite(const std::vector<float>& v, const char* what) {
  for (float x : v)
    if (!std::isfinite(x)) throw numeric_error(std::string(what) + ": non-finite value");
}

static void check_finite(const DenseMatrixF& m, const char* what) {
  for (float x : m.values)
    if (!std::isfinite(x)) throw numeric_error(std::string(what) + ": non-finite value");
}

void Model::validate() const {
  spec.validate();
  if (encoder.rows != spec.n_model || encoder.cols != spec.n_input)
    throw numeric_error("model: encoder shape mismatch");
  if (decoder.rows != spec.n_output || decoder.cols != spec.n_model)
    throw numeric_error("model: decoder shape mismatch");
  if (int(layers.size()) != spec.depth)
    throw numeric_error("model: layer count does not match depth");
  check_finite(encoder, "encoder");
  check_finite(decoder, "decoder");
  for (const auto& l : layers) {
    if (int(l.lambda_re.size()) != spec.n_ssm ||
        int(l.lambda_im.size()) != spec.n_ssm)
      throw numeric_error("model: lambda length mismatch");
    if (l.b_re.rows != spec.n_ssm || l.b_re.cols != spec.n_model ||
        l.c_re.rows != spec.n_model || l.c_re.cols != spec.n_ssm)
      throw numeric_error("model: projection shape mismatch");
    for (int i = 0; i < spec.n_ssm; ++i) {
      double mag = std::hypot(double(l.lambda_re[i]), double(l.lambda_im[i]));
      if (!(mag < 1.0))
        throw numeric_error("model: |lambda| must be < 1 for stability");
    }
    check_finite(l.b_re, "B.re");
    check_finite(l.b_im, "B.im");
    check_finite(l.c_re, "C.re");
    check_finite(l.c_im, "C.im");
    check_finite(l.glu_w, "glu_w");
    check_finite(l.d, "D");
    check_finite(l.norm_scale, "norm_scale");
    check_finite(l.norm_shift, "norm_shift");
  }
}

double Model::max_lambda_mag() const {
  double m = 0.0;
  for (const auto& l : layers)
    for (size_t i = 0; i < l.lambda_re.size(); ++i)
      m = std::max(m, std::hypot(double(l.lambda_re[i]), double(l.lambda_im[i])));
  return m;
}

static DenseMatrixF random_matrix(Rng& rng, int rows, int cols, double scale) {
  DenseMatrixF m(rows, cols);
  for (auto& v : m.values) v = float(rng.normal() * scale);
  return m;
}

Model init_random(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  Model m;
  m.spec = spec;

  m.encoder = random_matrix(rng, spec.n_model, spec.n_input,
                            1.0 / std::sqrt(double(spec.n_input)));
  m.encoder_bias.resize(spec.n_model);
  for (auto& v : m.encoder_bias) v = float(rng.normal() * 0.1);

  m.layers.resize(spec.depth);
  const double log_lo = std::log(0.5);
  const double log_hi = std::log(0.999);
  for (auto& l : m.layers) {
    l.lambda_re.resize(spec.n_ssm);
    l.lambda_im.resize(spec.n_ssm);
    for (int i = 0; i < spec.n_ssm; ++i) {
      double mag = std::exp(rng.uniform(log_lo, log_hi));
      double phase = rng.uniform(0.0, 6.283185307179586);
      l.lambda_re[i] = float(mag * std::cos(phase));
      l.lambda_im[i] = float(mag * std::sin(phase));
    }
    double b_scale = 1.0 / std::sqrt(double(spec.n_model));
    double c_scale = 1.0 / std::sqrt(double(spec.n_ssm));
    l.b_re = random_matrix(rng, spec.n_ssm, spec.n_model, b_scale);
    l.b_im = random_matrix(rng, spec.n_ssm, spec.n_model, b_scale);
    l.c_re = random_matrix(rng, spec.n_model, spec.n_ssm, c_scale);
    l.c_im = random_matrix(rng, spec.n_model, spec.n_ssm, c_scale);
    l.d.resize(spec.n_model);
    for (auto& v : l.d) v = float(rng.normal());
    l.glu_w = random_matrix(rng, spec.n_model, spec.n_model,
                            1.0 / std::sqrt(double(spec.n_model)));
    l.norm_scale.resize(spec.n_model);
    l.norm_shift.resize(spec.n_model);
    for (auto& v : l.norm_scale) v = float(rng.uniform(0.8, 1.2));
    for (auto& v : l.norm_shift) v = float(rng.normal() * 0.1);
  }

  m.decoder = random_matrix(rng, spec.n_output, spec.n_model,
                            1.0 / std::sqrt(double(spec.n_model)));
  m.decoder_bias.resize(spec.n_output);
  for (auto& v : m.decoder_bias) v = float(rng.normal() * 0.1);
  return m;
}

Model relufy(const Model& m) {
  Model out = m;
  if (out.spec.relufied) return out;  // idempotent
  out.spec.activation = Activation::kRelu;
  out.spec.relufied = true;
  return out;
}

Model make_constant_output_model(const ModelSpec& spec, float value) {
  spec.validate();
  Model m;
  m.spec = spec;
  m.encoder = DenseMatrixF(spec.n_model, spec.n_input);
  m.encoder_bias.assign(spec.n_model, 0.0f);
  m.layers.resize(spec.depth);
  for (auto& l : m.layers) {
    l.lambda_re.assign(spec.n_ssm, 0.0f);
    l.lambda_im.assign(spec.n_ssm, 0.0f);
    l.b_re = DenseMatrixF(spec.n_ssm, spec.n_model);
    l.b_im = DenseMatrixF(spec.n_ssm, spec.n_model);
    l.c_re = DenseMatrixF(spec.n_model, spec.n_ssm);
    l.c_im = DenseMatrixF(spec.n_model, spec.n_ssm);
    l.d.assign(spec.n_model, 0.0f);
    l.glu_w = DenseMatrixF(spec.n_model, spec.n_model);
    l.norm_scale.assign(spec.n_model, 1.0f);
    l.norm_shift.assign(spec.n_model, 0.0f);
  }
  m.decoder = DenseMatrixF(spec.n_output, spec.n_model);
  m.decoder_bias.assign(spec.n_output, value);
  return m;
}

}  // namespace srnn
