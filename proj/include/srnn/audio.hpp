#pragma once

#include <complex>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "srnn/fxp.hpp"
#include "srnn/model.hpp"

namespace srnn {

// 16 kHz, 32 ms sqrt-Hann windows with 8 ms hop: 512-point frames,
// 75% overlap, 257 bins.
struct StftConfig {
  int sample_rate = 16000;
  int window_len = 512;
  int hop = 128;
  int fft_size = 512;

  int bins() const { return fft_size / 2 + 1; }
  void validate() const;
};

struct Spectrum {
  std::vector<double> re, im;  // bins

  std::vector<float> magnitude() const;
};

std::vector<Spectrum> stft(std::span<const float> wave, const StftConfig& cfg);
// Overlap-add reconstruction; interior samples (beyond one window from
// either end) match the input to ~1e-7 relative.
std::vector<float> istft(const std::vector<Spectrum>& frames,
                         const StftConfig& cfg, size_t out_len = 0);

// Frame-in, hop-samples-out synthesis with window-sum normalization,
// for causal streaming.
class StreamingIstft {
 public:
  explicit StreamingIstft(const StftConfig& cfg);
  std::vector<float> push(const Spectrum& frame);  // hop samples
  std::vector<float> flush();                      // remaining tail

 private:
  StftConfig cfg_;
  std::vector<double> win_;
  std::vector<double> wave_cache_, win_cache_;
};

// Produces a spectral mask per frame from the magnitude spectrum.
class MaskSource {
 public:
  virtual ~MaskSource() = default;
  virtual void reset() = 0;
  virtual std::vector<float> step(std::span<const float> mag) = 0;
  // chunked evaluation; default loops step()
  virtual std::vector<std::vector<float>> chunk(
      const std::vector<std::vector<float>>& mags, int chunk_len, int workers);
};

class ModelMaskSource : public MaskSource {
 public:
  explicit ModelMaskSource(const Model& m, const CsrWeights* csr = nullptr);
  void reset() override;
  std::vector<float> step(std::span<const float> mag) override;
  std::vector<std::vector<float>> chunk(
      const std::vector<std::vector<float>>& mags, int chunk_len,
      int workers) override;

 private:
  const Model& model_;
  const CsrWeights* csr_;
  SequenceState state_;
};

class FxpMaskSource : public MaskSource {
 public:
  FxpMaskSource(const FxpCheckpoint& ckpt, OverflowPolicy policy);
  void reset() override;
  std::vector<float> step(std::span<const float> mag) override;
  const FxpEngine& engine() const { return engine_; }
  FxpEngine& engine() { return engine_; }

 private:
  FxpEngine engine_;
  FxpState state_;
};

// Training-free spectral-floor baseline: tracks a slowly rising per-bin
// noise floor (instant drop to new minima) and applies power-domain
// subtraction with a small mask floor.
class SpectralFloorMaskSource : public MaskSource {
 public:
  explicit SpectralFloorMaskSource(int bins, float oversubtract = 2.0f,
                                   float mask_floor = 0.05f,
                                   float rise = 1.02f);
  void reset() override;
  std::vector<float> step(std::span<const float> mag) override;

 private:
  int bins_;
  float oversubtract_, mask_floor_, rise_;
  bool primed_ = false;
  std::vector<double> noise_;
};

// Constant mask (identity at 1, silence at 0).
class ConstantMaskSource : public MaskSource {
 public:
  ConstantMaskSource(int bins, float value) : bins_(bins), value_(value) {}
  void reset() override {}
  std::vector<float> step(std::span<const float>) override {
    return std::vector<float>(bins_, value_);
  }

 private:
  int bins_;
  float value_;
};

struct FrameTimingStats {
  std::uint64_t frames = 0;
  double mean_us = 0.0;
  double p50_us = 0.0;
  double p95_us = 0.0;
  double max_us = 0.0;
  double budget_ms = 8.0;
  bool meets_budget() const { return p95_us <= budget_ms * 1000.0; }
};

class FrameProfiler {
 public:
  void record_us(double us) { samples_.push_back(us); }
  FrameTimingStats stats(double budget_ms = 8.0) const;

 private:
  std::vector<double> samples_;
};

struct DenoiseOptions {
  enum class Mode { kFallThrough, kChunked };
  Mode mode = Mode::kFallThrough;
  int chunk = 16;
  int workers = 1;
  float mask_max = 2.0f;
  FrameProfiler* profiler = nullptr;  // mask-computation time per frame
};

// Mask-based streaming denoiser: magnitude in, clamped multiplicative
// mask out, noisy phase reused. Output length equals input length (the
// final partial hop is zero-padded).
std::vector<float> denoise_stream(MaskSource& source,
                                  std::span<const float> noisy,
                                  const StftConfig& cfg,
                                  const DenoiseOptions& opt = {});

// Synthetic noisy/clean pair: 3-8 enveloped harmonic tones over filtered
// white noise mixed at exactly snr_db (by l2 norms). Deterministic per
// seed.
struct Mixture {
  std::vector<float> noisy, clean;
};
Mixture synth_mixture(std::uint64_t seed, double seconds, double snr_db,
                      int sample_rate = 16000);

// 16-bit PCM mono RIFF files.
struct WavData {
  int sample_rate = 16000;
  std::vector<float> samples;
};
WavData read_wav(const std::string& path);
void write_wav(const std::string& path, const WavData& wav);

}  // namespace srnn
