#include "pmag/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>
#include <sstream>

#include "json.hpp"

#include "pmag/util.hpp"

namespace pmag {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Clips

VideoClip::VideoClip(int frames, int height, int width, double rate, float fill)
    : t(frames), h(height), w(width), fps(rate) {
  if (frames < 0 || height < 0 || width < 0) throw ShapeError("VideoClip: negative dimension");
  rgb.assign(static_cast<std::size_t>(frames) * height * width * 3, fill);
}

void VideoClip::validate() const {
  if (t < 1) throw ShapeError("VideoClip: need at least one frame");
  if (h < 8 || w < 8) throw ShapeError("VideoClip: frames must be at least 8x8");
  if (rgb.size() != static_cast<std::size_t>(t) * h * w * 3) {
    throw ShapeError("VideoClip: buffer size does not match T x H x W x 3");
  }
  if (!(fps > 0.0)) throw ShapeError("VideoClip: fps must be positive");
  for (float v : rgb) {
    if (!std::isfinite(v)) throw ShapeError("VideoClip: non-finite pixel value");
  }
}

VideoClip VideoClip::slice(int first, int count) const {
  if (first < 0 || count < 0 || first + count > t) throw ShapeError("VideoClip::slice: out of range");
  VideoClip out(count, h, w, fps);
  const std::size_t frame = static_cast<std::size_t>(h) * w * 3;
  std::copy(rgb.begin() + static_cast<std::ptrdiff_t>(first * frame),
            rgb.begin() + static_cast<std::ptrdiff_t>((first + count) * frame), out.rgb.begin());
  return out;
}

Volume to_volume(const VideoClip& clip) {
  Volume v(clip.t, 3, clip.h, clip.w);
  for (int t = 0; t < clip.t; ++t) {
    for (int y = 0; y < clip.h; ++y) {
      for (int x = 0; x < clip.w; ++x) {
        const std::size_t p = clip.pixel_index(t, y, x);
        for (int c = 0; c < 3; ++c) v.at(t, c, y, x) = static_cast<double>(clip.rgb[p + c]);
      }
    }
  }
  return v;
}

VideoClip to_clip(const Volume& v, double fps, bool clamp) {
  if (v.c != 3) throw ShapeError("to_clip: expected 3 channels, got " + std::to_string(v.c));
  VideoClip clip(v.t, v.h, v.w, fps);
  for (int t = 0; t < v.t; ++t) {
    for (int y = 0; y < v.h; ++y) {
      for (int x = 0; x < v.w; ++x) {
        const std::size_t p = clip.pixel_index(t, y, x);
        for (int c = 0; c < 3; ++c) {
          double val = v.at(t, c, y, x);
          if (clamp) val = std::clamp(val, 0.0, 1.0);
          clip.rgb[p + c] = static_cast<float>(val);
        }
      }
    }
  }
  return clip;
}

// ---------------------------------------------------------------------------
// Parameters

const char* to_string(ModelKind kind) { return kind == ModelKind::kTdm ? "tdm" : "psmn"; }

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "tdm") return ModelKind::kTdm;
  if (s == "psmn") return ModelKind::kPsmn;
  throw ShapeError("unknown model kind `" + s + "`");
}

std::string ModelParams::config_json() const {
  json j;
  j["kind"] = to_string(kind);
  if (kind == ModelKind::kTdm) {
    j["input_size"] = tdm.input_size;
    j["pool"] = tdm.pool;
    j["width1"] = tdm.width1;
    j["width2"] = tdm.width2;
    j["max_order"] = tdm.max_order;
    j["head_kernel"] = tdm.head_kernel;
    j["input_norm"] = tdm.input_norm;
  } else {
    j["widths"] = psmn.widths;
    j["bottleneck"] = psmn.bottleneck;
  }
  return j.dump();
}

std::string ModelParams::config_hash() const { return sha256_hex(config_json()); }

const Tensor& ModelParams::get(const std::string& name) const {
  const auto it = tensors.find(name);
  if (it == tensors.end()) throw ShapeError("missing parameter `" + name + "`");
  return it->second;
}

std::string hash_params(const TensorMap& tensors) {
  Sha256 h;
  for (const auto& [name, t] : tensors) {
    h.update(name);
    for (auto d : t.shape) h.update(&d, sizeof d);
    h.update(t.data.data(), t.data.size() * sizeof(double));
  }
  return h.hex();
}

namespace {

void add_conv(TensorMap& m, std::mt19937_64& rng, const std::string& name, int cin, int cout,
              bool zero = false) {
  Tensor w({3, cout, cin, 3, 3});
  if (!zero) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (27.0 * cin)));
    for (double& v : w.data) v = dist(rng);
  }
  m.emplace(name + ".weight", std::move(w));
  m.emplace(name + ".bias", Tensor({cout}, 0.0));
}

nn::Conv3dParams conv_of(const ModelParams& p, const std::string& name) {
  return {&p.get(name + ".weight"), &p.get(name + ".bias")};
}

nn::Conv3dGrads conv_grads(TensorMap* g, const std::string& name) {
  if (g == nullptr) return {};
  return {&g->at(name + ".weight"), &g->at(name + ".bias")};
}

constexpr auto kPad = nn::TemporalPad::kReplicate;
constexpr double kNormEps = 1e-12;

}  // namespace

ModelParams init_tdm(std::uint64_t seed, const TdmConfig& cfg) {
  if (cfg.pool < 1 || cfg.input_size % cfg.pool != 0) {
    throw ShapeError("init_tdm: input_size must be divisible by pool");
  }
  if (cfg.max_order < 0 || cfg.head_kernel < 1 || cfg.head_kernel % 2 == 0) {
    throw ShapeError("init_tdm: invalid order or head kernel");
  }
  ModelParams p;
  p.kind = ModelKind::kTdm;
  p.tdm = cfg;
  p.seed = seed;
  std::mt19937_64 rng(seed);
  for (int k = 0; k <= cfg.max_order; ++k) {
    const std::string base = "order" + std::to_string(k);
    add_conv(p.tensors, rng, base + ".conv1", 3, cfg.width1);
    add_conv(p.tensors, rng, base + ".conv2", cfg.width1, cfg.width2);
  }
  p.tensors.emplace("mix", Tensor({cfg.max_order + 1}, 1.0));
  Tensor head({cfg.width2, cfg.head_kernel});
  std::normal_distribution<double> dist(0.0, std::sqrt(1.0 / (cfg.width2 * cfg.head_kernel)));
  for (double& v : head.data) v = dist(rng);
  p.tensors.emplace("head.weight", std::move(head));
  p.tensors.emplace("head.bias", Tensor({1}, 0.0));
  return p;
}

ModelParams init_psmn(std::uint64_t seed, const PsmnConfig& cfg) {
  for (int w : cfg.widths) {
    if (w < 1) throw ShapeError("init_psmn: widths must be positive");
  }
  if (cfg.bottleneck < 1) throw ShapeError("init_psmn: bottleneck must be positive");
  ModelParams p;
  p.kind = ModelKind::kPsmn;
  p.psmn = cfg;
  p.seed = seed;
  std::mt19937_64 rng(seed);
  const auto [w1, w2, w3] = cfg.widths;
  const int wb = cfg.bottleneck;
  add_conv(p.tensors, rng, "enc1", 3, w1);
  add_conv(p.tensors, rng, "enc2", w1, w2);
  add_conv(p.tensors, rng, "enc3", w2, w3);
  add_conv(p.tensors, rng, "mid1", w3, wb);
  add_conv(p.tensors, rng, "mid2", wb, wb);
  add_conv(p.tensors, rng, "dec3", wb + w3, w3);
  add_conv(p.tensors, rng, "dec2", w3 + w2, w2);
  add_conv(p.tensors, rng, "dec1", w2 + w1, w1);
  add_conv(p.tensors, rng, "out", w1, 3, /*zero=*/true);
  return p;
}

// ---------------------------------------------------------------------------
// Estimator

struct TdmTape {
  int t = 0;
  int in_h = 0;
  int in_w = 0;
  double fps = 30.0;
  Volume normalized;  // pooled (and normalised) input
  double rms = 1.0;
  std::vector<Volume> diffs;
  std::vector<Volume> h1;
  std::vector<std::vector<std::uint8_t>> mask1;
  std::vector<std::vector<std::uint8_t>> mask2;
  std::vector<std::vector<double>> gap;
  std::vector<double> features;
};

struct PsmnTape {
  struct Block {
    Volume y;
    std::vector<std::uint8_t> mask;
    std::vector<double> inv_std;
  };
  const Volume* input = nullptr;
  Block enc1, enc2, enc3, mid1, mid2, dec3, dec2, dec1;
  Volume pool1, pool2, pool3;
};

void TapeDeleter::operator()(TdmTape* p) const { delete p; }
void TapeDeleter::operator()(PsmnTape* p) const { delete p; }

namespace {

void check_tdm_input(const ModelParams& theta, const Volume& input) {
  if (theta.kind != ModelKind::kTdm) throw ShapeError("tdm_forward: parameters are not a TDM");
  if (input.c != 3 || input.h != theta.tdm.input_size || input.w != theta.tdm.input_size) {
    throw ShapeError("tdm_forward: expected T x " + std::to_string(theta.tdm.input_size) + " x " +
                     std::to_string(theta.tdm.input_size) + " x 3 input, got volume " +
                     input.shape_string());
  }
  if (input.t < 1) throw ShapeError("tdm_forward: empty clip");
}

}  // namespace

PulseSignal tdm_forward(const ModelParams& theta, const VideoClip& clip) {
  clip.validate();
  return tdm_forward(theta, to_volume(clip), clip.fps);
}

PulseSignal tdm_forward(const ModelParams& theta, const Volume& input, double fps,
                        TdmTapePtr* tape_out) {
  check_tdm_input(theta, input);
  const auto& cfg = theta.tdm;
  auto tape = TdmTapePtr(new TdmTape);
  tape->t = input.t;
  tape->in_h = input.h;
  tape->in_w = input.w;
  tape->fps = fps;

  Volume x = nn::avg_pool_spatial(input, cfg.pool);
  if (cfg.input_norm) {
    const std::size_t fs = x.frame_size();
    std::vector<double> mu(fs, 0.0);
    for (int t = 0; t < x.t; ++t) {
      const double* f = x.frame(t);
      for (std::size_t i = 0; i < fs; ++i) mu[i] += f[i];
    }
    for (double& m : mu) m /= static_cast<double>(x.t);
    double ss = 0.0;
    for (int t = 0; t < x.t; ++t) {
      double* f = x.frame(t);
      for (std::size_t i = 0; i < fs; ++i) {
        f[i] -= mu[i];
        ss += f[i] * f[i];
      }
    }
    tape->rms = std::sqrt(ss / static_cast<double>(x.data.size()) + kNormEps);
    for (double& v : x.data) v /= tape->rms;
  }

  const int orders = cfg.max_order + 1;
  const Tensor& mix = theta.get("mix");
  tape->features.assign(static_cast<std::size_t>(x.t) * cfg.width2, 0.0);
  for (int k = 0; k < orders; ++k) {
    const std::string base = "order" + std::to_string(k);
    Volume d = nn::temporal_difference(x, k);
    const nn::ConvSource s1{&d, 1};
    Volume h1 = nn::conv3d_forward(conv_of(theta, base + ".conv1"), {&s1, 1}, kPad);
    std::vector<std::uint8_t> m1;
    nn::relu_forward(h1, m1);
    const nn::ConvSource s2{&h1, 1};
    Volume h2 = nn::conv3d_forward(conv_of(theta, base + ".conv2"), {&s2, 1}, kPad);
    std::vector<std::uint8_t> m2;
    nn::relu_forward(h2, m2);
    auto g = nn::global_avg_pool(h2);
    const double a = mix.data[static_cast<std::size_t>(k)];
    for (std::size_t i = 0; i < g.size(); ++i) tape->features[i] += a * g[i];
    tape->diffs.push_back(std::move(d));
    tape->h1.push_back(std::move(h1));
    tape->mask1.push_back(std::move(m1));
    tape->mask2.push_back(std::move(m2));
    tape->gap.push_back(std::move(g));
  }
  auto out = nn::temporal_head_forward(tape->features, x.t, cfg.width2, theta.get("head.weight"),
                                       theta.get("head.bias"));
  tape->normalized = std::move(x);
  if (tape_out != nullptr) *tape_out = std::move(tape);
  return {std::move(out), fps};
}

void tdm_backward(const ModelParams& theta, const TdmTape& tape, std::span<const double> d_out,
                  TensorMap* d_params, Volume* d_input) {
  const auto& cfg = theta.tdm;
  const int frames = tape.t;
  if (d_out.size() != static_cast<std::size_t>(frames)) {
    throw ShapeError("tdm_backward: gradient length mismatch");
  }
  std::vector<double> d_features(tape.features.size(), 0.0);
  nn::temporal_head_backward(tape.features, frames, cfg.width2, theta.get("head.weight"), d_out,
                             d_params ? &d_params->at("head.weight") : nullptr,
                             d_params ? &d_params->at("head.bias") : nullptr, d_features);

  const Volume& x = tape.normalized;
  Volume d_x;
  if (d_input != nullptr) d_x = Volume(x.t, x.c, x.h, x.w);
  const Tensor& mix = theta.get("mix");
  const int orders = cfg.max_order + 1;
  for (int k = 0; k < orders; ++k) {
    const auto ks = static_cast<std::size_t>(k);
    const std::string base = "order" + std::to_string(k);
    if (d_params != nullptr) {
      double acc = 0.0;
      for (std::size_t i = 0; i < d_features.size(); ++i) acc += d_features[i] * tape.gap[ks][i];
      d_params->at("mix").data[ks] += acc;
    }
    std::vector<double> d_gap(d_features.size());
    for (std::size_t i = 0; i < d_gap.size(); ++i) d_gap[i] = mix.data[ks] * d_features[i];

    const Volume& h1 = tape.h1[ks];
    Volume d_h2(h1.t, cfg.width2, h1.h, h1.w);
    nn::global_avg_pool_backward(d_gap, d_h2);
    nn::relu_backward(d_h2, tape.mask2[ks]);

    Volume d_h1(h1.t, h1.c, h1.h, h1.w);
    const nn::ConvSource s2{&h1, 1};
    Volume* d_h1_ptr = &d_h1;
    nn::conv3d_backward(conv_of(theta, base + ".conv2"), {&s2, 1}, kPad, d_h2,
                        conv_grads(d_params, base + ".conv2"), {&d_h1_ptr, 1});
    nn::relu_backward(d_h1, tape.mask1[ks]);

    const Volume& d = tape.diffs[ks];
    Volume d_d;
    Volume* d_d_ptr = nullptr;
    if (d_input != nullptr) {
      d_d = Volume(d.t, d.c, d.h, d.w);
      d_d_ptr = &d_d;
    }
    const nn::ConvSource s1{&d, 1};
    nn::conv3d_backward(conv_of(theta, base + ".conv1"), {&s1, 1}, kPad, d_h1,
                        conv_grads(d_params, base + ".conv1"), {&d_d_ptr, 1});
    if (d_input != nullptr) nn::temporal_difference_backward(d_d, k, d_x);
  }
  if (d_input == nullptr) return;

  if (cfg.input_norm) {
    // x = u / r with u the temporally centred pooled input and r its RMS.
    const double r = tape.rms;
    double dot = 0.0;
    for (std::size_t i = 0; i < x.data.size(); ++i) dot += d_x.data[i] * x.data[i];
    // sum(dx * u) = r * sum(dx * x)
    const double n = static_cast<double>(x.data.size());
    for (std::size_t i = 0; i < x.data.size(); ++i) {
      d_x.data[i] = d_x.data[i] / r - x.data[i] * dot / (n * r);
    }
    const std::size_t fs = d_x.frame_size();
    std::vector<double> mu(fs, 0.0);
    for (int t = 0; t < d_x.t; ++t) {
      const double* f = d_x.frame(t);
      for (std::size_t i = 0; i < fs; ++i) mu[i] += f[i];
    }
    for (double& m : mu) m /= static_cast<double>(d_x.t);
    for (int t = 0; t < d_x.t; ++t) {
      double* f = d_x.frame(t);
      for (std::size_t i = 0; i < fs; ++i) f[i] -= mu[i];
    }
  }
  if (d_input->t != tape.t || d_input->c != 3 || d_input->h != tape.in_h ||
      d_input->w != tape.in_w) {
    throw ShapeError("tdm_backward: input gradient has the wrong shape");
  }
  nn::avg_pool_spatial_backward(d_x, cfg.pool, *d_input);
}

// ---------------------------------------------------------------------------
// Magnifier

namespace {

PsmnTape::Block run_block(const ModelParams& psi, const std::string& name,
                          std::span<const nn::ConvSource> sources) {
  PsmnTape::Block b;
  b.y = nn::conv3d_forward(conv_of(psi, name), sources, kPad);
  nn::relu_forward(b.y, b.mask);
  nn::instance_norm_forward(b.y, b.inv_std);
  return b;
}

// `d` is the gradient w.r.t. the block output and is consumed.
void block_backward(const ModelParams& psi, const std::string& name, const PsmnTape::Block& b,
                    std::span<const nn::ConvSource> sources, Volume& d, TensorMap* d_params,
                    std::span<Volume* const> d_sources) {
  nn::instance_norm_backward(d, b.y, b.inv_std);
  nn::relu_backward(d, b.mask);
  nn::conv3d_backward(conv_of(psi, name), sources, kPad, d, conv_grads(d_params, name), d_sources);
}

Volume zeros_as(const Volume& v) { return Volume(v.t, v.c, v.h, v.w); }

}  // namespace

MagnifiedClip psmn_forward(const ModelParams& psi, const VideoClip& clip) {
  clip.validate();
  return psmn_forward(psi, to_volume(clip), clip.fps);
}

MagnifiedClip psmn_forward(const ModelParams& psi, const Volume& input, double fps,
                           PsmnTapePtr* tape_out) {
  if (psi.kind != ModelKind::kPsmn) throw ShapeError("psmn_forward: parameters are not a PSMN");
  if (input.c != 3) throw ShapeError("psmn_forward: expected 3 colour channels");
  if (input.h % 8 != 0 || input.w % 8 != 0 || input.h == 0 || input.w == 0) {
    throw ShapeError("psmn_forward: H and W must be divisible by 8 (three 2x poolings), got " +
                     std::to_string(input.h) + "x" + std::to_string(input.w));
  }
  auto tape = PsmnTapePtr(new PsmnTape);
  auto& tp = *tape;
  tp.input = &input;

  const nn::ConvSource in{&input, 1};
  tp.enc1 = run_block(psi, "enc1", {&in, 1});
  tp.pool1 = nn::avg_pool_spatial(tp.enc1.y, 2);
  const nn::ConvSource p1{&tp.pool1, 1};
  tp.enc2 = run_block(psi, "enc2", {&p1, 1});
  tp.pool2 = nn::avg_pool_spatial(tp.enc2.y, 2);
  const nn::ConvSource p2{&tp.pool2, 1};
  tp.enc3 = run_block(psi, "enc3", {&p2, 1});
  tp.pool3 = nn::avg_pool_spatial(tp.enc3.y, 2);
  const nn::ConvSource p3{&tp.pool3, 1};
  tp.mid1 = run_block(psi, "mid1", {&p3, 1});
  const nn::ConvSource m1{&tp.mid1.y, 1};
  tp.mid2 = run_block(psi, "mid2", {&m1, 1});

  const std::array<nn::ConvSource, 2> c3{nn::ConvSource{&tp.mid2.y, 2}, nn::ConvSource{&tp.enc3.y, 1}};
  tp.dec3 = run_block(psi, "dec3", c3);
  const std::array<nn::ConvSource, 2> c2{nn::ConvSource{&tp.dec3.y, 2}, nn::ConvSource{&tp.enc2.y, 1}};
  tp.dec2 = run_block(psi, "dec2", c2);
  const std::array<nn::ConvSource, 2> c1{nn::ConvSource{&tp.dec2.y, 2}, nn::ConvSource{&tp.enc1.y, 1}};
  tp.dec1 = run_block(psi, "dec1", c1);

  const nn::ConvSource d1{&tp.dec1.y, 1};
  MagnifiedClip out;
  out.fps = fps;
  out.volume = nn::conv3d_forward(conv_of(psi, "out"), {&d1, 1}, kPad);
  for (std::size_t i = 0; i < out.volume.data.size(); ++i) out.volume.data[i] += input.data[i];
  if (tape_out != nullptr) *tape_out = std::move(tape);
  return out;
}

void psmn_backward(const ModelParams& psi, const PsmnTape& tp, const Volume& d_out,
                   TensorMap* d_params, Volume* d_input) {
  const Volume& input = *tp.input;
  if (!d_out.same_shape(input)) throw ShapeError("psmn_backward: gradient shape mismatch");
  if (d_input != nullptr) {
    for (std::size_t i = 0; i < d_out.data.size(); ++i) d_input->data[i] += d_out.data[i];
  }

  Volume d_dec1 = zeros_as(tp.dec1.y);
  {
    const nn::ConvSource d1{&tp.dec1.y, 1};
    Volume* dst = &d_dec1;
    nn::conv3d_backward(conv_of(psi, "out"), {&d1, 1}, kPad, d_out, conv_grads(d_params, "out"),
                        {&dst, 1});
  }
  Volume d_enc1 = zeros_as(tp.enc1.y);
  Volume d_enc2 = zeros_as(tp.enc2.y);
  Volume d_enc3 = zeros_as(tp.enc3.y);
  Volume d_dec2 = zeros_as(tp.dec2.y);
  Volume d_dec3 = zeros_as(tp.dec3.y);
  Volume d_mid2 = zeros_as(tp.mid2.y);
  Volume d_mid1 = zeros_as(tp.mid1.y);
  {
    const std::array<nn::ConvSource, 2> c1{nn::ConvSource{&tp.dec2.y, 2}, nn::ConvSource{&tp.enc1.y, 1}};
    const std::array<Volume*, 2> dst{&d_dec2, &d_enc1};
    block_backward(psi, "dec1", tp.dec1, c1, d_dec1, d_params, dst);
  }
  {
    const std::array<nn::ConvSource, 2> c2{nn::ConvSource{&tp.dec3.y, 2}, nn::ConvSource{&tp.enc2.y, 1}};
    const std::array<Volume*, 2> dst{&d_dec3, &d_enc2};
    block_backward(psi, "dec2", tp.dec2, c2, d_dec2, d_params, dst);
  }
  {
    const std::array<nn::ConvSource, 2> c3{nn::ConvSource{&tp.mid2.y, 2}, nn::ConvSource{&tp.enc3.y, 1}};
    const std::array<Volume*, 2> dst{&d_mid2, &d_enc3};
    block_backward(psi, "dec3", tp.dec3, c3, d_dec3, d_params, dst);
  }
  {
    const nn::ConvSource m1{&tp.mid1.y, 1};
    Volume* dst = &d_mid1;
    block_backward(psi, "mid2", tp.mid2, {&m1, 1}, d_mid2, d_params, {&dst, 1});
  }
  Volume d_pool3 = zeros_as(tp.pool3);
  {
    const nn::ConvSource p3{&tp.pool3, 1};
    Volume* dst = &d_pool3;
    block_backward(psi, "mid1", tp.mid1, {&p3, 1}, d_mid1, d_params, {&dst, 1});
  }
  nn::avg_pool_spatial_backward(d_pool3, 2, d_enc3);
  Volume d_pool2 = zeros_as(tp.pool2);
  {
    const nn::ConvSource p2{&tp.pool2, 1};
    Volume* dst = &d_pool2;
    block_backward(psi, "enc3", tp.enc3, {&p2, 1}, d_enc3, d_params, {&dst, 1});
  }
  nn::avg_pool_spatial_backward(d_pool2, 2, d_enc2);
  Volume d_pool1 = zeros_as(tp.pool1);
  {
    const nn::ConvSource p1{&tp.pool1, 1};
    Volume* dst = &d_pool1;
    block_backward(psi, "enc2", tp.enc2, {&p1, 1}, d_enc2, d_params, {&dst, 1});
  }
  nn::avg_pool_spatial_backward(d_pool1, 2, d_enc1);
  {
    const nn::ConvSource in{&input, 1};
    Volume* dst = d_input;
    block_backward(psi, "enc1", tp.enc1, {&in, 1}, d_enc1, d_params, {&dst, 1});
  }
}

PulseSignal pipeline_forward(const ModelParams& theta, const ModelParams& psi,
                             const VideoClip& clip) {
  clip.validate();
  const auto magnified = psmn_forward(psi, to_volume(clip), clip.fps);
  return tdm_forward(theta, magnified.volume, magnified.fps);
}

}  // namespace pmag
