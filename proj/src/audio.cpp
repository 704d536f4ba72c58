#include "srnn/audio.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>

#include "srnn/forward.hpp"
#include "srnn/rng.hpp"

namespace srnn {

void StftConfig::validate() const {
  if (sample_rate < 1) throw config_error("stft: bad sample rate");
  if (fft_size < 2 || (fft_size & (fft_size - 1)) != 0)
    throw config_error("stft: fft_size must be a power of two");
  if (window_len < 2 || window_len > fft_size)
    throw config_error("stft: need 2 <= window_len <= fft_size");
  if (hop < 1 || window_len % hop != 0 || window_len / hop < 2)
    throw config_error("stft: COLA requires hop dividing window_len with >= 2x overlap");
}

namespace {

constexpr double kPi = 3.14159265358979323846;

// iterative radix-2 complex FFT, in place
void fft_inplace(std::vector<double>& re, std::vector<double>& im,
                 bool inverse) {
  const size_t n = re.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    double ang = 2.0 * kPi / double(len) * (inverse ? 1.0 : -1.0);
    double wr = std::cos(ang), wi = std::sin(ang);
    for (size_t i = 0; i < n; i += len) {
      double cr = 1.0, ci = 0.0;
      for (size_t k = 0; k < len / 2; ++k) {
        size_t a = i + k, b = i + k + len / 2;
        double ur = re[a], ui = im[a];
        double vr = re[b] * cr - im[b] * ci;
        double vi = re[b] * ci + im[b] * cr;
        re[a] = ur + vr;
        im[a] = ui + vi;
        re[b] = ur - vr;
        im[b] = ui - vi;
        double ncr = cr * wr - ci * wi;
        ci = cr * wi + ci * wr;
        cr = ncr;
      }
    }
  }
  if (inverse) {
    for (size_t i = 0; i < n; ++i) {
      re[i] /= double(n);
      im[i] /= double(n);
    }
  }
}

std::vector<double> sqrt_hann(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i)
    w[i] = std::sqrt(0.5 - 0.5 * std::cos(2.0 * kPi * double(i) / double(n)));
  return w;
}

// time-domain synthesis of one frame: irfft then synthesis window
std::vector<double> synth_frame(const Spectrum& f, const StftConfig& cfg,
                                const std::vector<double>& win) {
  const int n = cfg.fft_size;
  const int bins = cfg.bins();
  if (int(f.re.size()) != bins)
    throw numeric_error("istft: frame bin count mismatch");
  std::vector<double> re(n, 0.0), im(n, 0.0);
  for (int b = 0; b < bins; ++b) {
    re[b] = f.re[b];
    im[b] = f.im[b];
  }
  for (int b = 1; b < bins - 1; ++b) {  // conjugate symmetry
    re[n - b] = f.re[b];
    im[n - b] = -f.im[b];
  }
  fft_inplace(re, im, true);
  std::vector<double> out(cfg.window_len);
  for (int i = 0; i < cfg.window_len; ++i) out[i] = re[i] * win[i];
  return out;
}

}  // namespace

std::vector<float> Spectrum::magnitude() const {
  std::vector<float> m(re.size());
  for (size_t i = 0; i < re.size(); ++i)
    m[i] = float(std::hypot(re[i], im[i]));
  return m;
}

std::vector<Spectrum> stft(std::span<const float> wave, const StftConfig& cfg) {
  cfg.validate();
  if (int(wave.size()) < cfg.window_len)
    throw data_error("stft: input shorter than one window");
  const std::vector<double> win = sqrt_hann(cfg.window_len);
  const int n_frames = int((wave.size() - cfg.window_len) / cfg.hop) + 1;
  std::vector<Spectrum> frames(n_frames);
  std::vector<double> re(cfg.fft_size), im(cfg.fft_size);
  for (int k = 0; k < n_frames; ++k) {
    std::fill(re.begin(), re.end(), 0.0);
    std::fill(im.begin(), im.end(), 0.0);
    const size_t off = size_t(k) * cfg.hop;
    for (int i = 0; i < cfg.window_len; ++i)
      re[i] = double(wave[off + i]) * win[i];
    fft_inplace(re, im, false);
    frames[k].re.assign(re.begin(), re.begin() + cfg.bins());
    frames[k].im.assign(im.begin(), im.begin() + cfg.bins());
  }
  return frames;
}

std::vector<float> istft(const std::vector<Spectrum>& frames,
                         const StftConfig& cfg, size_t out_len) {
  cfg.validate();
  if (frames.empty()) return {};
  const std::vector<double> win = sqrt_hann(cfg.window_len);
  const size_t full_len =
      size_t(frames.size() - 1) * cfg.hop + cfg.window_len;
  std::vector<double> acc(full_len, 0.0), wsum(full_len, 0.0);
  for (size_t k = 0; k < frames.size(); ++k) {
    std::vector<double> t = synth_frame(frames[k], cfg, win);
    size_t off = k * cfg.hop;
    for (int i = 0; i < cfg.window_len; ++i) {
      acc[off + i] += t[i];
      wsum[off + i] += win[i] * win[i];
    }
  }
  if (out_len == 0) out_len = full_len;
  std::vector<float> out(out_len, 0.0f);
  for (size_t i = 0; i < std::min(out_len, full_len); ++i)
    out[i] = float(acc[i] / std::max(wsum[i], 1e-10));
  return out;
}

StreamingIstft::StreamingIstft(const StftConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  wave_cache_.assign(size_t(cfg_.window_len), 0.0);
  win_cache_.assign(size_t(cfg_.window_len), 0.0);
}

std::vector<float> StreamingIstft::push(const Spectrum& frame) {
  const std::vector<double> win = sqrt_hann(cfg_.window_len);
  std::vector<double> t = synth_frame(frame, cfg_, win);
  for (int i = 0; i < cfg_.window_len; ++i) {
    wave_cache_[i] += t[i];
    win_cache_[i] += win[i] * win[i];
  }
  std::vector<float> out(cfg_.hop);
  for (int i = 0; i < cfg_.hop; ++i)
    out[i] = float(wave_cache_[i] / std::max(win_cache_[i], 1e-10));
  // slide caches by one hop
  std::memmove(wave_cache_.data(), wave_cache_.data() + cfg_.hop,
               sizeof(double) * (cfg_.window_len - cfg_.hop));
  std::memmove(win_cache_.data(), win_cache_.data() + cfg_.hop,
               sizeof(double) * (cfg_.window_len - cfg_.hop));
  std::fill(wave_cache_.end() - cfg_.hop, wave_cache_.end(), 0.0);
  std::fill(win_cache_.end() - cfg_.hop, win_cache_.end(), 0.0);
  return out;
}

std::vector<float> StreamingIstft::flush() {
  std::vector<float> out(cfg_.window_len - cfg_.hop);
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = float(wave_cache_[i] / std::max(win_cache_[i], 1e-10));
  std::fill(wave_cache_.begin(), wave_cache_.end(), 0.0);
  std::fill(win_cache_.begin(), win_cache_.end(), 0.0);
  return out;
}

std::vector<std::vector<float>> MaskSource::chunk(
    const std::vector<std::vector<float>>& mags, int, int) {
  std::vector<std::vector<float>> out;
  out.reserve(mags.size());
  for (const auto& m : mags) out.push_back(step(m));
  return out;
}

ModelMaskSource::ModelMaskSource(const Model& m, const CsrWeights* csr)
    : model_(m), csr_(csr), state_(m.spec) {}

void ModelMaskSource::reset() { state_.reset(); }

std::vector<float> ModelMaskSource::step(std::span<const float> mag) {
  ForwardOptions opt;
  opt.csr = csr_;
  return model_forward_step(model_, state_, mag, opt);
}

std::vector<std::vector<float>> ModelMaskSource::chunk(
    const std::vector<std::vector<float>>& mags, int chunk_len, int workers) {
  ForwardOptions opt;
  opt.csr = csr_;
  return model_forward_scan(model_, mags, chunk_len, opt, workers, &state_);
}

FxpMaskSource::FxpMaskSource(const FxpCheckpoint& ckpt, OverflowPolicy policy)
    : engine_(ckpt, policy), state_(ckpt.spec) {}

void FxpMaskSource::reset() { state_.reset(); }

std::vector<float> FxpMaskSource::step(std::span<const float> mag) {
  std::vector<std::int16_t> q = engine_.quantize_input(mag);
  std::vector<std::int16_t> y = engine_.step(state_, q);
  return engine_.dequantize_output(y);
}

SpectralFloorMaskSource::SpectralFloorMaskSource(int bins, float oversubtract,
                                                 float mask_floor, float rise)
    : bins_(bins),
      oversubtract_(oversubtract),
      mask_floor_(mask_floor),
      rise_(rise),
      noise_(bins, 0.0) {}

void SpectralFloorMaskSource::reset() {
  primed_ = false;
  std::fill(noise_.begin(), noise_.end(), 0.0);
}

std::vector<float> SpectralFloorMaskSource::step(std::span<const float> mag) {
  if (int(mag.size()) != bins_)
    throw numeric_error("spectral floor: bin count mismatch");
  if (!primed_) {
    for (int b = 0; b < bins_; ++b) noise_[b] = mag[b];
    primed_ = true;
  } else {
    for (int b = 0; b < bins_; ++b)
      noise_[b] = std::min(noise_[b] * double(rise_), double(mag[b]));
  }
  std::vector<float> mask(bins_);
  for (int b = 0; b < bins_; ++b) {
    double m = double(mag[b]);
    double p = m * m;
    double np = noise_[b] * noise_[b];
    double g2 = p > 0.0 ? 1.0 - double(oversubtract_) * np / p : 0.0;
    double g = g2 > 0.0 ? std::sqrt(g2) : 0.0;
    mask[b] = float(std::max(g, double(mask_floor_)));
  }
  return mask;
}

FrameTimingStats FrameProfiler::stats(double budget_ms) const {
  FrameTimingStats s;
  s.budget_ms = budget_ms;
  s.frames = samples_.size();
  if (samples_.empty()) return s;
  std::vector<double> sorted = samples_;
  std::sort(sorted.begin(), sorted.end());
  double sum = 0.0;
  for (double v : sorted) sum += v;
  s.mean_us = sum / double(sorted.size());
  s.p50_us = sorted[sorted.size() / 2];
  s.p95_us = sorted[std::min(sorted.size() - 1,
                             size_t(double(sorted.size()) * 0.95))];
  s.max_us = sorted.back();
  return s;
}

std::vector<float> denoise_stream(MaskSource& source,
                                  std::span<const float> noisy,
                                  const StftConfig& cfg,
                                  const DenoiseOptions& opt) {
  cfg.validate();
  source.reset();
  std::vector<Spectrum> frames = stft(noisy, cfg);
  StreamingIstft synth(cfg);
  std::vector<float> out;
  out.reserve(noisy.size() + cfg.window_len);

  auto apply_mask = [&](const Spectrum& spec, const std::vector<float>& mask) {
    Spectrum masked;
    masked.re.resize(spec.re.size());
    masked.im.resize(spec.im.size());
    for (size_t b = 0; b < spec.re.size(); ++b) {
      float g = std::clamp(mask[b], 0.0f, opt.mask_max);
      masked.re[b] = spec.re[b] * g;
      masked.im[b] = spec.im[b] * g;
    }
    return masked;
  };

  using Clock = std::chrono::steady_clock;
  if (opt.mode == DenoiseOptions::Mode::kFallThrough) {
    for (const auto& spec : frames) {
      std::vector<float> mag = spec.magnitude();
      auto t0 = Clock::now();
      std::vector<float> mask = source.step(mag);
      if (opt.profiler)
        opt.profiler->record_us(
            std::chrono::duration<double, std::micro>(Clock::now() - t0)
                .count());
      if (mask.size() != spec.re.size())
        throw numeric_error("denoise: mask size does not match bins");
      std::vector<float> hop = synth.push(apply_mask(spec, mask));
      out.insert(out.end(), hop.begin(), hop.end());
    }
  } else {
    for (size_t k0 = 0; k0 < frames.size(); k0 += size_t(opt.chunk)) {
      size_t k1 = std::min(frames.size(), k0 + size_t(opt.chunk));
      std::vector<std::vector<float>> mags;
      mags.reserve(k1 - k0);
      for (size_t k = k0; k < k1; ++k) mags.push_back(frames[k].magnitude());
      auto t0 = Clock::now();
      std::vector<std::vector<float>> masks =
          source.chunk(mags, opt.chunk, opt.workers);
      if (opt.profiler) {
        double us =
            std::chrono::duration<double, std::micro>(Clock::now() - t0)
                .count();
        for (size_t k = k0; k < k1; ++k)
          opt.profiler->record_us(us / double(k1 - k0));
      }
      for (size_t k = k0; k < k1; ++k) {
        std::vector<float> hop = synth.push(apply_mask(frames[k], masks[k - k0]));
        out.insert(out.end(), hop.begin(), hop.end());
      }
    }
  }
  std::vector<float> tail = synth.flush();
  out.insert(out.end(), tail.begin(), tail.end());
  out.resize(noisy.size(), 0.0f);
  return out;
}

Mixture synth_mixture(std::uint64_t seed, double seconds, double snr_db,
                      int sample_rate) {
  if (!std::isfinite(snr_db)) throw config_error("synth_mixture: snr must be finite");
  if (seconds <= 0.0) throw config_error("synth_mixture: non-positive duration");
  Rng rng(seed);
  const size_t n = size_t(seconds * sample_rate);
  std::vector<double> clean(n, 0.0);

  int tones = rng.uniform_int(3, 8);
  for (int t = 0; t < tones; ++t) {
    double f0 = rng.uniform(100.0, 2000.0);
    double phase = rng.uniform(0.0, 2.0 * kPi);
    double amp = rng.uniform(0.3, 1.0);
    double start = rng.uniform(0.0, 0.4) * double(n);
    double stop = rng.uniform(0.6, 1.0) * double(n);
    int harmonics = rng.uniform_int(1, 3);
    for (size_t i = size_t(start); i < size_t(stop) && i < n; ++i) {
      double pos = (double(i) - start) / std::max(1.0, stop - start);
      double env = std::sin(kPi * pos);  // smooth attack/decay
      double s = 0.0;
      for (int h = 1; h <= harmonics; ++h)
        s += std::sin(2.0 * kPi * f0 * double(h) * double(i) /
                          double(sample_rate) +
                      phase * double(h)) /
             double(h);
      clean[i] += amp * env * s;
    }
  }

  // filtered white noise
  std::vector<double> noise(n);
  double lp = 0.0;
  for (size_t i = 0; i < n; ++i) {
    lp += 0.35 * (rng.normal() - lp);
    noise[i] = lp;
  }

  double ce = 0.0, ne = 0.0;
  for (size_t i = 0; i < n; ++i) {
    ce += clean[i] * clean[i];
    ne += noise[i] * noise[i];
  }
  if (ce <= 0.0 || ne <= 0.0)
    throw numeric_error("synth_mixture: degenerate signal");
  // ||clean|| / ||noise|| = 10^(snr/20), exactly
  double gain = std::sqrt(ce / ne) * std::pow(10.0, -snr_db / 20.0);

  // normalize mixture peak into [-1, 1) for PCM-friendly output
  double peak = 0.0;
  for (size_t i = 0; i < n; ++i)
    peak = std::max(peak, std::fabs(clean[i] + gain * noise[i]));
  double norm = peak > 0.0 ? 0.9 / peak : 1.0;

  Mixture out;
  out.clean.resize(n);
  out.noisy.resize(n);
  for (size_t i = 0; i < n; ++i) {
    out.clean[i] = float(clean[i] * norm);
    out.noisy[i] = float((clean[i] + gain * noise[i]) * norm);
  }
  return out;
}

namespace {

std::uint32_t read_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
         (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}
std::uint16_t read_u16(const unsigned char* p) {
  return std::uint16_t(p[0] | (p[1] << 8));
}

}  // namespace

WavData read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw data_error("wav: cannot open " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() < 44 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw data_error("wav: not a RIFF/WAVE file: " + path);

  WavData out;
  size_t pos = 12;
  bool got_fmt = false;
  while (pos + 8 <= buf.size()) {
    std::uint32_t size = read_u32(buf.data() + pos + 4);
    const unsigned char* body = buf.data() + pos + 8;
    if (std::memcmp(buf.data() + pos, "fmt ", 4) == 0) {
      if (size < 16) throw data_error("wav: malformed fmt chunk");
      std::uint16_t format = read_u16(body);
      std::uint16_t channels = read_u16(body + 2);
      out.sample_rate = int(read_u32(body + 4));
      std::uint16_t bits = read_u16(body + 14);
      if (format != 1 || channels != 1 || bits != 16)
        throw data_error("wav: only 16-bit PCM mono is supported: " + path);
      got_fmt = true;
    } else if (std::memcmp(buf.data() + pos, "data", 4) == 0) {
      if (!got_fmt) throw data_error("wav: data chunk before fmt");
      size_t count = std::min(size_t(size), buf.size() - pos - 8) / 2;
      out.samples.resize(count);
      for (size_t i = 0; i < count; ++i) {
        std::int16_t v =
            std::int16_t(std::uint16_t(body[2 * i] | (body[2 * i + 1] << 8)));
        out.samples[i] = float(v) / 32768.0f;
      }
      return out;
    }
    pos += 8 + size + (size & 1);
  }
  throw data_error("wav: missing data chunk: " + path);
}

void write_wav(const std::string& path, const WavData& wav) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw data_error("wav: cannot write " + path);
  auto put_u32 = [&](std::uint32_t v) {
    char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff),
                 char((v >> 24) & 0xff)};
    f.write(b, 4);
  };
  auto put_u16 = [&](std::uint16_t v) {
    char b[2] = {char(v & 0xff), char((v >> 8) & 0xff)};
    f.write(b, 2);
  };
  std::uint32_t data_bytes = std::uint32_t(wav.samples.size() * 2);
  f.write("RIFF", 4);
  put_u32(36 + data_bytes);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  put_u32(16);
  put_u16(1);  // PCM
  put_u16(1);  // mono
  put_u32(std::uint32_t(wav.sample_rate));
  put_u32(std::uint32_t(wav.sample_rate) * 2);
  put_u16(2);
  put_u16(16);
  f.write("data", 4);
  put_u32(data_bytes);
  for (float s : wav.samples) {
    double v = std::clamp(double(s), -1.0, 1.0) * 32767.0;
    std::int16_t q = std::int16_t(std::lround(v));
    put_u16(std::uint16_t(q));
  }
  if (!f) throw data_error("wav: write failed: " + path);
}

}  // namespace srnn
