#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "srnn/tensor.hpp"

namespace srnn {

enum class Activation { kGelu, kRelu };

// Architecture dimensions. The base configuration (width_factor 1) is
// depth 3, n_model 192, n_ssm 256, n_input = n_output = 257.
struct ModelSpec {
  int depth = 3;
  int n_input = 257;
  int n_model = 192;
  int n_ssm = 256;
  int n_output = 257;
  double width_factor = 1.0;
  Activation activation = Activation::kGelu;
  bool relufied = false;

  void validate() const;
  bool operator==(const ModelSpec&) const = default;
};

ModelSpec base_spec();
// Scales n_model and n_ssm linearly by k (rounded), in/out fixed.
ModelSpec scaled_spec(double k);

// One recurrent block. Weight matrices are stored rows = output dim,
// cols = input dim, so every matrix-vector product consumes its input
// along columns (the event-driven skip axis).
struct LayerParams {
  std::vector<float> lambda_re, lambda_im;  // N, diagonal recurrence
  DenseMatrixF b_re, b_im;                  // N x M, input projection
  DenseMatrixF c_re, c_im;                  // M x N, output projection
  std::vector<float> d;                     // M, feedthrough diagonal
  DenseMatrixF glu_w;                       // M x M
  std::vector<float> norm_scale, norm_shift;  // M, inference-fused norm
};

struct Model {
  ModelSpec spec;
  DenseMatrixF encoder;              // n_model x n_input
  std::vector<float> encoder_bias;   // n_model
  std::vector<LayerParams> layers;
  DenseMatrixF decoder;              // n_output x n_model
  std::vector<float> decoder_bias;   // n_output

  void validate() const;
  double max_lambda_mag() const;
};

// Carried recurrent state, one complex vector per layer. Single-owner:
// exactly one stream advances it at a time.
struct SequenceState {
  std::vector<ComplexVector> x;

  explicit SequenceState(const ModelSpec& spec)
      : x(spec.depth, ComplexVector(spec.n_ssm)) {}
  void reset() {
    for (auto& v : x) v.fill_zero();
  }
};

// Deterministic random model: |lambda| log-uniform in [0.5, 0.999),
// phase uniform, projections scaled by 1/sqrt(fan_in).
Model init_random(const ModelSpec& spec, std::uint64_t seed);

// GELU -> ReLU surgery. Swaps the GLU nonlinearity and flags the extra
// ReLU sites (post-norm, hidden real component, pre-decoder). Weights
// are untouched; applying it twice is a no-op.
Model relufy(const Model& m);

// All weights zero except a constant decoder bias; the forward pass
// emits `value` on every output channel regardless of input.
Model make_constant_output_model(const ModelSpec& spec, float value);

}  // namespace srnn
