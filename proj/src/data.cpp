#include "pmag/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <set>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "json.hpp"
#include "pmag/compression.hpp"
#include "pmag/util.hpp"

namespace pmag {

namespace fs = std::filesystem;
using nlohmann::json;

double HrTrajectory::at(double t_sec, double duration_sec) const {
  if (duration_sec <= 0.0) return start_bpm;
  return start_bpm + (end_bpm - start_bpm) * (t_sec / duration_sec);
}

void SynthConfig::validate() const {
  if (t < 1 || h < 8 || w < 8) throw DataError("SynthConfig: need T >= 1 and H, W >= 8");
  if (!(fps > 0.0)) throw DataError("SynthConfig: fps must be positive");
  for (double bpm : {hr.start_bpm, hr.end_bpm}) {
    if (!(bpm >= 40.0 && bpm <= 180.0)) {
      throw DataError("SynthConfig: HR trajectory must stay within [40, 180] BPM");
    }
  }
  if (pulse_amplitude < 0.0 || noise_std < 0.0 || motion_amp < 0.0) {
    throw DataError("SynthConfig: amplitudes must be non-negative");
  }
  if (!(mask.rx > 0.0 && mask.ry > 0.0)) throw DataError("SynthConfig: empty mask ellipse");
}

std::vector<int> DatasetManifest::crf_values() const {
  std::set<int> crfs;
  for (const auto& r : records) crfs.insert(r.compression ? r.compression->crf : 0);
  return {crfs.begin(), crfs.end()};
}

// ---------------------------------------------------------------------------
// Synthesis

PulseSignal synth_ppg_waveform(const SynthConfig& cfg) {
  cfg.validate();
  const double duration = cfg.t / cfg.fps;
  const double h0 = cfg.hr.start_bpm;
  const double h1 = cfg.hr.end_bpm;
  std::vector<double> s(static_cast<std::size_t>(cfg.t));
  for (int i = 0; i < cfg.t; ++i) {
    const double t = i / cfg.fps;
    // Closed-form integral of the linear HR ramp, in cycles.
    const double phi = cfg.phase + (h0 * t + (h1 - h0) * t * t / (2.0 * duration)) / 60.0;
    s[static_cast<std::size_t>(i)] = std::sin(2.0 * std::numbers::pi * phi) +
                                     0.3 * std::sin(4.0 * std::numbers::pi * phi + 0.7);
  }
  return {std::move(s), cfg.fps};
}

Sample render_video(const SynthConfig& cfg, const PulseSignal& ppg) {
  cfg.validate();
  if (ppg.size() != static_cast<std::size_t>(cfg.t)) {
    throw DataError("render_video: PPG length " + std::to_string(ppg.size()) +
                    " does not match T = " + std::to_string(cfg.t));
  }
  const double rx = cfg.mask.rx * cfg.w;
  const double ry = cfg.mask.ry * cfg.h;
  const double cy = cfg.mask.cy * cfg.h;
  auto inside = [&](int y, int x, double cx) {
    const double dx = (x + 0.5 - cx) / rx;
    const double dy = (y + 0.5 - cy) / ry;
    return dx * dx + dy * dy <= 1.0;
  };
  auto centre_x = [&](int t) {
    return cfg.mask.cx * cfg.w +
           cfg.motion_amp * std::sin(2.0 * std::numbers::pi * cfg.motion_hz * t / cfg.fps);
  };

  Sample s;
  s.clip = VideoClip(cfg.t, cfg.h, cfg.w, cfg.fps);
  s.mask.assign(static_cast<std::size_t>(cfg.h) * cfg.w, 0);
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int t = 0; t < cfg.t; ++t) {
    const double cx = centre_x(t);
    const double pulse = cfg.pulse_amplitude * ppg.samples[static_cast<std::size_t>(t)];
    for (int y = 0; y < cfg.h; ++y) {
      const double light = 1.0 - cfg.shading * (y + 0.5 - cy) / ry;
      for (int x = 0; x < cfg.w; ++x) {
        if (!inside(y, x, cx)) continue;
        s.mask[static_cast<std::size_t>(y) * cfg.w + x] = 1;
        for (int c = 0; c < 3; ++c) {
          double v = cfg.skin_rgb[static_cast<std::size_t>(c)] * light +
                     pulse * cfg.channel_weights[static_cast<std::size_t>(c)];
          if (cfg.noise_std > 0.0) v += cfg.noise_std * noise(rng);
          s.clip.at(t, y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
    }
  }
  if (std::none_of(s.mask.begin(), s.mask.end(), [](auto m) { return m != 0; })) {
    throw DataError("render_video: skin mask is empty");
  }
  s.ppg_raw = ppg;
  s.ppg_gt = denoise_ppg(ppg).signal;
  s.hr_gt = window_hr(s.ppg_gt, 300);
  return s;
}

std::vector<SynthConfig> dataset_configs(const SynthConfig& tmpl, const DatasetOptions& opts) {
  if (opts.n < 1) throw DataError("make_dataset: need at least one sample");
  if (!(opts.hr_lo <= opts.hr_hi)) throw DataError("make_dataset: empty HR range");
  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> hr(opts.hr_lo, opts.hr_hi);
  std::uniform_real_distribution<double> phase(0.0, 1.0);
  std::vector<SynthConfig> out;
  const double ramp = tmpl.hr.end_bpm - tmpl.hr.start_bpm;
  for (int i = 0; i < opts.n; ++i) {
    SynthConfig c = tmpl;
    c.hr.start_bpm = hr(rng);
    c.hr.end_bpm = c.hr.start_bpm + ramp;
    c.phase = phase(rng);
    c.seed = rng();
    c.validate();
    out.push_back(c);
  }
  return out;
}

namespace {

std::string sample_id(const DatasetOptions& opts, int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03d", i);
  return opts.id_prefix + buf;
}

}  // namespace

std::vector<Sample> synth_samples(const SynthConfig& tmpl, const DatasetOptions& opts) {
  std::vector<Sample> out;
  const auto cfgs = dataset_configs(tmpl, opts);
  for (std::size_t i = 0; i < cfgs.size(); ++i) {
    Sample s = render_video(cfgs[i], synth_ppg_waveform(cfgs[i]));
    s.id = sample_id(opts, static_cast<int>(i));
    s.subject = s.id;
    out.push_back(std::move(s));
  }
  return out;
}

DatasetManifest make_dataset(const SynthConfig& tmpl, const DatasetOptions& opts,
                             const fs::path& root) {
  DatasetManifest m;
  m.root = root;
  m.fps = tmpl.fps;
  m.size = tmpl.h;
  fs::create_directories(root);
  const auto cfgs = dataset_configs(tmpl, opts);
  for (std::size_t i = 0; i < cfgs.size(); ++i) {
    Sample s = render_video(cfgs[i], synth_ppg_waveform(cfgs[i]));
    s.id = sample_id(opts, static_cast<int>(i));
    s.subject = s.id;
    const double mean_hr = 0.5 * (cfgs[i].hr.start_bpm + cfgs[i].hr.end_bpm);
    m.records.push_back(write_sample(s, root, mean_hr));
  }
  save_manifest(m, root / "manifest.json");
  return m;
}

// ---------------------------------------------------------------------------
// Windows

std::vector<int> window_starts(int frames, int win, int overlap) {
  if (win < 1 || overlap < 0 || overlap >= win) {
    throw DataError("window_starts: need win > overlap >= 0");
  }
  if (frames < win) {
    throw DataError("clip has " + std::to_string(frames) + " frames, fewer than the window of " +
                    std::to_string(win));
  }
  std::vector<int> starts;
  for (int s = 0; s + win <= frames; s += win - overlap) starts.push_back(s);
  return starts;
}

namespace {

PulseSignal slice(const PulseSignal& sig, int first, int count) {
  if (sig.samples.empty()) return sig;
  const auto b = sig.samples.begin() + first;
  return {std::vector<double>(b, b + count), sig.fs};
}

}  // namespace

std::vector<Sample> window_clip(const Sample& sample, int win, int overlap,
                                const FrequencyGrid& grid) {
  std::vector<Sample> out;
  for (int start : window_starts(sample.clip.t, win, overlap)) {
    Sample w;
    w.id = sample.id;
    w.subject = sample.subject;
    w.clip = sample.clip.slice(start, win);
    w.ppg_raw = slice(sample.ppg_raw, start, win);
    w.ppg_gt = slice(sample.ppg_gt, start, win);
    w.hr_gt = {estimate_hr(bandpass(w.ppg_gt, grid), grid)};
    w.mask = sample.mask;
    w.window_start = sample.window_start + start;
    w.compression = sample.compression;
    out.push_back(std::move(w));
  }
  return out;
}

std::vector<HRValue> window_hr(const PulseSignal& ppg, int win, const FrequencyGrid& grid) {
  const int n = static_cast<int>(ppg.size());
  if (n < win) return {estimate_hr(bandpass(ppg, grid), grid)};
  std::vector<HRValue> out;
  for (int s : window_starts(n, win, 0)) out.push_back(estimate_hr(bandpass(slice(ppg, s, win), grid), grid));
  return out;
}

PulseSignal masked_channel_mean(const VideoClip& clip, const std::vector<std::uint8_t>& mask,
                                int channel) {
  if (mask.size() != static_cast<std::size_t>(clip.h) * clip.w) {
    throw DataError("masked_channel_mean: mask size does not match the frame");
  }
  std::size_t count = 0;
  for (auto m : mask) count += m != 0;
  if (count == 0) throw DataError("masked_channel_mean: empty mask");
  std::vector<double> out(static_cast<std::size_t>(clip.t), 0.0);
  for (int t = 0; t < clip.t; ++t) {
    double acc = 0.0;
    for (int y = 0; y < clip.h; ++y) {
      for (int x = 0; x < clip.w; ++x) {
        if (mask[static_cast<std::size_t>(y) * clip.w + x]) acc += clip.at(t, y, x, channel);
      }
    }
    out[static_cast<std::size_t>(t)] = acc / static_cast<double>(count);
  }
  return {std::move(out), clip.fps};
}

// ---------------------------------------------------------------------------
// Disk

void write_frames(const VideoClip& clip, const fs::path& dir) {
  fs::create_directories(dir);
  cv::Mat img(clip.h, clip.w, CV_8UC3);
  char name[32];
  for (int t = 0; t < clip.t; ++t) {
    for (int y = 0; y < clip.h; ++y) {
      auto* row = img.ptr<std::uint8_t>(y);
      for (int x = 0; x < clip.w; ++x) {
        for (int c = 0; c < 3; ++c) {
          const double v = std::clamp(static_cast<double>(clip.at(t, y, x, c)), 0.0, 1.0);
          row[3 * x + (2 - c)] = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
      }
    }
    std::snprintf(name, sizeof name, "%06d.png", t);
    if (!cv::imwrite((dir / name).string(), img)) {
      throw DataError("cannot write frame " + (dir / name).string());
    }
  }
}

VideoClip read_frames(const fs::path& dir, double fps) {
  if (!fs::is_directory(dir)) throw DataError("frame directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".png") files.push_back(e.path());
  }
  if (files.empty()) throw DataError("no PNG frames in " + dir.string());
  std::sort(files.begin(), files.end());
  VideoClip clip;
  for (std::size_t t = 0; t < files.size(); ++t) {
    const cv::Mat img = cv::imread(files[t].string(), cv::IMREAD_COLOR);
    if (img.empty()) throw DataError("cannot decode frame " + files[t].string());
    if (t == 0) {
      clip = VideoClip(static_cast<int>(files.size()), img.rows, img.cols, fps);
    } else if (img.rows != clip.h || img.cols != clip.w) {
      throw DataError("frame size changes at " + files[t].string());
    }
    for (int y = 0; y < img.rows; ++y) {
      const auto* row = img.ptr<std::uint8_t>(y);
      for (int x = 0; x < img.cols; ++x) {
        for (int c = 0; c < 3; ++c) {
          clip.at(static_cast<int>(t), y, x, c) = static_cast<float>(row[3 * x + (2 - c)] / 255.0);
        }
      }
    }
  }
  return clip;
}

void write_mask(const std::vector<std::uint8_t>& mask, int h, int w, const fs::path& path) {
  cv::Mat img(h, w, CV_8UC1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      img.at<std::uint8_t>(y, x) = mask[static_cast<std::size_t>(y) * w + x] ? 255 : 0;
    }
  }
  if (!cv::imwrite(path.string(), img)) throw DataError("cannot write mask " + path.string());
}

std::vector<std::uint8_t> read_mask(const fs::path& path, int h, int w) {
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (img.empty()) throw DataError("cannot read mask " + path.string());
  if (img.rows != h || img.cols != w) {
    cv::Mat resized;
    cv::resize(img, resized, cv::Size(w, h), 0, 0, cv::INTER_NEAREST);
    img = resized;
  }
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) mask[static_cast<std::size_t>(y) * w + x] = img.at<std::uint8_t>(y, x) > 127;
  }
  return mask;
}

SampleRecord write_sample(const Sample& sample, const fs::path& root, double hr_bpm) {
  SampleRecord r;
  r.id = sample.id;
  r.subject = sample.subject;
  r.frames = sample.id + "/frames";
  r.gt = sample.id + "/gt.csv";
  r.mask = sample.id + "/mask.png";
  r.num_frames = sample.clip.t;
  r.hr_bpm = hr_bpm;
  r.compression = sample.compression;
  write_frames(sample.clip, root / r.frames);
  write_pulse_csv(root / r.gt, sample.ppg_raw.samples.empty() ? sample.ppg_gt : sample.ppg_raw,
                  "ppg");
  write_mask(sample.mask, sample.clip.h, sample.clip.w, root / r.mask);
  return r;
}

namespace {

json profile_json(const CompressionProfile& p) {
  return {{"codec", p.codec},
          {"crf", p.crf},
          {"pixel_format", p.pixel_format},
          {"encoder_version", p.encoder_version},
          {"bitrate_kbps", p.bitrate_kbps},
          {"target_kbps", p.target_kbps},
          {"bypass", p.bypass}};
}

CompressionProfile profile_from(const json& j) {
  CompressionProfile p;
  p.codec = j.value("codec", p.codec);
  p.crf = j.value("crf", 0);
  p.pixel_format = j.value("pixel_format", p.pixel_format);
  p.encoder_version = j.value("encoder_version", std::string{});
  p.bitrate_kbps = j.value("bitrate_kbps", 0.0);
  p.target_kbps = j.value("target_kbps", 0.0);
  p.bypass = j.value("bypass", false);
  return p;
}

}  // namespace

void save_manifest(const DatasetManifest& m, const fs::path& path) {
  json recs = json::array();
  for (const auto& r : m.records) {
    json j{{"id", r.id}, {"subject", r.subject}, {"gt", r.gt}, {"num_frames", r.num_frames}};
    if (!r.frames.empty()) j["frames"] = r.frames;
    if (!r.video.empty()) j["video"] = r.video;
    if (!r.mask.empty()) j["mask"] = r.mask;
    if (r.hr_bpm > 0.0) j["hr_bpm"] = r.hr_bpm;
    if (r.compression) j["compression"] = profile_json(*r.compression);
    recs.push_back(std::move(j));
  }
  const json doc{{"fps", m.fps}, {"size", m.size}, {"samples", recs}};
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  write_file_atomic(path, doc.dump(2) + "\n");
}

DatasetManifest load_manifest(const fs::path& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const std::exception& e) {
    throw DataError("cannot read manifest " + path.string() + ": " + e.what());
  }
  DatasetManifest m;
  m.root = path.parent_path();
  try {
    m.fps = doc.value("fps", 30.0);
    m.size = doc.value("size", 96);
    for (const auto& j : doc.at("samples")) {
      SampleRecord r;
      r.id = j.at("id").get<std::string>();
      r.subject = j.value("subject", r.id);
      r.frames = j.value("frames", std::string{});
      r.video = j.value("video", std::string{});
      r.gt = j.at("gt").get<std::string>();
      r.mask = j.value("mask", std::string{});
      r.num_frames = j.value("num_frames", 0);
      r.hr_bpm = j.value("hr_bpm", 0.0);
      if (j.contains("compression")) r.compression = profile_from(j.at("compression"));
      m.records.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw DataError("malformed manifest " + path.string() + ": " + e.what());
  }
  if (m.records.empty()) throw DataError("manifest lists no samples: " + path.string());
  for (const auto& r : m.records) {
    if (r.subject.empty()) throw DataError("record `" + r.id + "` has an empty subject");
    const fs::path media = m.root / (r.video.empty() ? r.frames : r.video);
    if ((r.video.empty() && r.frames.empty()) || !fs::exists(media)) {
      throw DataError("record `" + r.id + "`: missing media " + media.string());
    }
    if (!fs::exists(m.root / r.gt)) {
      throw DataError("record `" + r.id + "`: missing ground truth " + (m.root / r.gt).string());
    }
  }
  return m;
}

namespace {

VideoClip resize_clip(const VideoClip& clip, int size) {
  if (clip.h == size && clip.w == size) return clip;
  VideoClip out(clip.t, size, size, clip.fps);
  const std::size_t in_frame = static_cast<std::size_t>(clip.h) * clip.w * 3;
  const std::size_t out_frame = static_cast<std::size_t>(size) * size * 3;
  for (int t = 0; t < clip.t; ++t) {
    const cv::Mat src(clip.h, clip.w, CV_32FC3,
                      const_cast<float*>(clip.rgb.data() + static_cast<std::size_t>(t) * in_frame));
    cv::Mat dst(size, size, CV_32FC3, out.rgb.data() + static_cast<std::size_t>(t) * out_frame);
    cv::resize(src, dst, dst.size(), 0, 0, cv::INTER_AREA);
  }
  return out;
}

}  // namespace

Sample load_sample(const DatasetManifest& m, const SampleRecord& r, const LoadOptions& opts) {
  Sample s;
  s.id = r.id;
  s.subject = r.subject;
  s.compression = r.compression;
  const fs::path media = m.root / (r.video.empty() ? r.frames : r.video);
  VideoClip clip = r.video.empty() ? read_frames(media, m.fps) : decode(media, m.fps);
  clip.fps = m.fps;
  s.clip = resize_clip(clip, opts.size);

  const fs::path gt_path = m.root / r.gt;
  PulseSignal gt;
  try {
    gt = read_pulse_csv(gt_path);
  } catch (const SignalError& e) {
    throw DataError(e.what());
  }
  const double clip_sec = s.clip.t / m.fps;
  if (std::abs(gt.duration_sec() - clip_sec) > 0.05 * clip_sec) {
    throw DataError(gt_path.string() + ": ground truth lasts " + std::to_string(gt.duration_sec()) +
                    " s but the clip lasts " + std::to_string(clip_sec) + " s");
  }
  if (std::abs(gt.fs - m.fps) > 1e-6 * m.fps || gt.size() != static_cast<std::size_t>(s.clip.t)) {
    gt = resample_linear(gt, m.fps, static_cast<std::size_t>(s.clip.t));
  } else {
    gt.fs = m.fps;
  }
  s.ppg_raw = gt;
  auto den = denoise_ppg(gt, opts.grid);
  if (den.zero_variance) warn("ground truth of `" + r.id + "` has zero variance");
  s.ppg_gt = std::move(den.signal);
  s.hr_gt = window_hr(s.ppg_gt, opts.window, opts.grid);

  const fs::path mask_path = m.root / r.mask;
  if (r.mask.empty() || !fs::exists(mask_path)) {
    warn("no mask for `" + r.id + "`; using the full frame");
    s.mask.assign(static_cast<std::size_t>(s.clip.h) * s.clip.w, 1);
  } else {
    s.mask = read_mask(mask_path, s.clip.h, s.clip.w);
  }
  return s;
}

std::vector<Sample> load_all(const DatasetManifest& m, const LoadOptions& opts) {
  std::vector<Sample> out;
  out.reserve(m.records.size());
  for (const auto& r : m.records) out.push_back(load_sample(m, r, opts));
  return out;
}

}  // namespace pmag
