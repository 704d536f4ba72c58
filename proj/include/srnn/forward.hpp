#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "srnn/model.hpp"

namespace srnn {

// Activation sites, in dataflow order. Per-layer kinds carry the layer
// index; global kinds use layer = -1.
enum class SiteKind {
  kInput,
  kEncOut,
  kPreSsm,      // fed to B and D
  kStateRe,     // recurrent state, real plane
  kStateIm,
  kHiddenRe,    // state real plane after the read-out ReLU (fed to C_re)
  kS5Out,       // y, before the GLU nonlinearity
  kPreGlu,      // tau(y), fed to the GLU weight
  kGluGateIn,   // W tau(y), sigmoid input
  kGluGateOut,  // sigmoid output
  kGluOut,
  kResOut,      // block output after the residual add
  kDecIn,
  kOutput,
};

const char* site_kind_name(SiteKind k);
// "input", "enc_out", "layer2.pre_ssm", ... stable ids used by scales,
// taps, and reports.
std::string site_name(SiteKind k, int layer);

using ObserveFn =
    std::function<void(SiteKind, int layer, std::span<const float>)>;

// Executed-MAC tally per cost-model component, accumulated across frames.
struct MacTally {
  struct Layer {
    std::uint64_t batchnorm = 0;
    std::uint64_t s5_hidden = 0;
    std::uint64_t s5_output = 0;
    std::uint64_t glu = 0;
  };
  std::uint64_t encoder = 0;
  std::uint64_t head = 0;
  std::vector<Layer> layers;

  explicit MacTally(int depth = 0) : layers(depth) {}
  std::uint64_t total() const;
};

// Optional CSR forms of every big weight matrix, for event-driven
// execution. Built once from a (typically pruned) model.
struct CsrWeights {
  SparseMatrixF encoder;
  struct Layer {
    SparseMatrixF b_re, b_im, c_re, c_im, glu_w;
  };
  std::vector<Layer> layers;
  SparseMatrixF decoder;
};

CsrWeights compile_csr(const Model& m);

// The three per-layer instrumented tap vectors plus the global ones.
struct TapFrame {
  struct Layer {
    std::vector<float> pre_ssm;
    std::vector<float> hidden_re;  // post-ReLU when relufied
    std::vector<float> hidden_im;
    std::vector<float> s5_out;
    std::vector<float> pre_glu;
  };
  std::vector<float> input;
  std::vector<float> enc_out;
  std::vector<Layer> layers;
  std::vector<float> dec_in;
  std::vector<float> output;
};

// Records TapFrames through the observe hook. Works for both step order
// (frame-major) and scan order (site-major): the t-th call for a given
// site lands in frame t.
class TapRecorder {
 public:
  explicit TapRecorder(int depth) : depth_(depth) {}
  ObserveFn hook();
  std::vector<TapFrame>& frames() { return frames_; }
  const std::vector<TapFrame>& frames() const { return frames_; }

 private:
  TapFrame& frame_for(SiteKind k, int layer);

  int depth_;
  std::map<std::pair<int, int>, size_t> counts_;
  std::vector<TapFrame> frames_;
};

struct ForwardOptions {
  const CsrWeights* csr = nullptr;  // run event-driven when set
  const ObserveFn* observe = nullptr;
  MacTally* macs = nullptr;
};

// One block (norm -> S5 -> GLU -> residual) on a single frame; advances
// the carried complex state and returns the block output.
std::vector<float> layer_step(const LayerParams& p, const ModelSpec& spec,
                              ComplexVector& x, std::span<const float> u,
                              const ObserveFn* observe = nullptr,
                              int layer = 0, MacTally::Layer* macs = nullptr);

// One frame through the whole stack:
//   encoder -> depth x (norm -> S5 -> GLU -> residual) -> decoder.
std::vector<float> model_forward_step(const Model& m, SequenceState& state,
                                      std::span<const float> u,
                                      const ForwardOptions& opt = {});

// Whole-sequence evaluation via the associative scan
//   (a1,b1) o (a2,b2) = (a1*a2, a2*b1 + b2)
// on per-channel pairs, processed in chunks. Matches step mode from the
// same initial state within float reassociation noise; results are
// independent of the worker count.
std::vector<std::vector<float>> model_forward_scan(
    const Model& m, const std::vector<std::vector<float>>& frames, int chunk,
    const ForwardOptions& opt = {}, int workers = 1,
    SequenceState* state = nullptr);

}  // namespace srnn
