#include "pmag/compression.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <mutex>
#include <regex>
#include <sstream>

#include <opencv2/imgcodecs.hpp>

#include "pmag/util.hpp"

namespace pmag {

namespace fs = std::filesystem;

namespace {

constexpr const char* kHint =
    "install ffmpeg (with libx264) or point PMAG_FFMPEG at an ffmpeg binary";

struct ProcessResult {
  int status = -1;
  std::string output;
};

// Runs a shell command, capturing stdout and stderr together.
ProcessResult run_capture(const std::string& cmd) {
  ProcessResult r;
  FILE* pipe = ::popen((cmd + " 2>&1").c_str(), "r");
  if (pipe == nullptr) throw CompressionError("cannot start: " + cmd);
  char buf[4096];
  std::size_t n = 0;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
  const int st = ::pclose(pipe);
  r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

std::string tail(const std::string& s, std::size_t lines = 6) {
  std::size_t pos = s.size();
  for (std::size_t i = 0; i < lines && pos > 0; ++i) {
    pos = s.rfind('\n', pos - 1);
    if (pos == std::string::npos) return s;
  }
  return s.substr(pos + 1);
}

std::size_t count_png(const fs::path& dir) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) n += e.path().extension() == ".png";
  return n;
}

struct StreamInfo {
  int w = 0;
  int h = 0;
  double fps = 0.0;
  double duration = 0.0;
  double bitrate_kbps = 0.0;
};

StreamInfo probe(const fs::path& file) {
  if (!fs::is_regular_file(file)) throw CompressionError("no such video file: " + file.string());
  const auto r = run_capture(shell_quote(find_encoder().string()) + " -hide_banner -i " +
                             shell_quote(file.string()));
  StreamInfo info;
  std::smatch m;
  static const std::regex video(R"(Stream #.*Video: .*?, (\d+)x(\d+))");
  if (!std::regex_search(r.output, m, video)) {
    throw CompressionError("cannot decode " + file.string() + ": no video stream\n" + tail(r.output));
  }
  info.w = std::stoi(m[1]);
  info.h = std::stoi(m[2]);
  static const std::regex rate(R"(, ([0-9.]+) fps)");
  if (std::regex_search(r.output, m, rate)) info.fps = std::stod(m[1]);
  static const std::regex dur(R"(Duration: (\d+):(\d+):([0-9.]+))");
  if (std::regex_search(r.output, m, dur)) {
    info.duration = std::stod(m[1]) * 3600.0 + std::stod(m[2]) * 60.0 + std::stod(m[3]);
  }
  static const std::regex br(R"(bitrate: ([0-9.]+) kb/s)");
  if (std::regex_search(r.output, m, br)) info.bitrate_kbps = std::stod(m[1]);
  return info;
}

}  // namespace

void validate_crf(int crf) {
  if (crf < 0 || crf > kMaxCrf) {
    throw CompressionError("crf " + std::to_string(crf) + " is outside [0, 51]");
  }
}

fs::path find_encoder() {
  if (const char* env = std::getenv("PMAG_FFMPEG"); env != nullptr && *env != '\0') {
    const fs::path p(env);
    if (!fs::is_regular_file(p) || ::access(p.c_str(), X_OK) != 0) {
      throw EncoderMissingError("PMAG_FFMPEG=" + p.string() + " is not an executable file; " +
                                kHint);
    }
    return p;
  }
  if (const char* path = std::getenv("PATH"); path != nullptr) {
    std::stringstream ss(path);
    std::string dir;
    while (std::getline(ss, dir, ':')) {
      if (dir.empty()) continue;
      const fs::path p = fs::path(dir) / "ffmpeg";
      if (fs::is_regular_file(p) && ::access(p.c_str(), X_OK) == 0) return p;
    }
  }
  throw EncoderMissingError(std::string("ffmpeg not found; ") + kHint);
}

std::string encoder_version() {
  static std::mutex mu;
  static std::map<std::string, std::string> cache;
  const auto exe = find_encoder().string();
  std::lock_guard lock(mu);
  if (auto it = cache.find(exe); it != cache.end()) return it->second;
  const auto r = run_capture(shell_quote(exe) + " -hide_banner -version");
  if (r.status != 0) throw EncoderMissingError("cannot run " + exe + "; " + kHint);
  std::string first = r.output.substr(0, r.output.find('\n'));
  cache.emplace(exe, first);
  return first;
}

EncodeResult encode_crf(const fs::path& frames_dir, double fps, int crf, const fs::path& out_dir,
                        const EncodeOptions& opts) {
  validate_crf(crf);
  if (!fs::is_directory(frames_dir)) {
    throw CompressionError("frame directory not found: " + frames_dir.string());
  }
  const std::size_t frames = count_png(frames_dir);
  if (frames == 0) throw CompressionError("no PNG frames in " + frames_dir.string());
  fs::create_directories(out_dir);

  EncodeResult res;
  res.frames = static_cast<int>(frames);
  res.profile.crf = crf;
  res.profile.pixel_format = opts.pixel_format;
  res.profile.target_kbps = opts.target_kbps;
  if (crf == 0 && opts.target_kbps <= 0.0) {
    res.output = out_dir / "frames";
    fs::create_directories(res.output);
    for (const auto& e : fs::directory_iterator(frames_dir)) {
      if (e.path().extension() == ".png") {
        fs::copy_file(e.path(), res.output / e.path().filename(),
                      fs::copy_options::overwrite_existing);
      }
    }
    res.profile.codec = "raw";
    res.profile.pixel_format = "rgb24";
    res.profile.bypass = true;
    res.profile.encoder_version = "bypass";
    res.profile.bitrate_kbps = probe_bitrate(res.output, fps);
    return res;
  }

  const auto exe = find_encoder();
  res.output = out_dir / "video.mp4";
  std::ostringstream cmd;
  cmd.precision(17);
  cmd << shell_quote(exe.string()) << " -hide_banner -loglevel error -y -framerate " << fps
      << " -start_number 0 -i " << shell_quote((frames_dir / "%06d.png").string())
      << " -c:v libx264 -threads 1 -pix_fmt " << shell_quote(opts.pixel_format);
  if (opts.target_kbps > 0.0) {
    const long kbps = std::lround(opts.target_kbps);
    cmd << " -b:v " << kbps << "k -minrate " << kbps << "k -maxrate " << kbps << "k -bufsize "
        << 2 * kbps << "k";
  } else {
    cmd << " -crf " << crf;
  }
  cmd << " -fps_mode passthrough -an " << shell_quote(res.output.string());
  const auto r = run_capture(cmd.str());
  if (r.status != 0) {
    throw CompressionError("encoding " + frames_dir.string() + " failed:\n" + tail(r.output));
  }
  const VideoClip back = decode(res.output, fps);
  if (back.t != res.frames) {
    throw CompressionError(res.output.string() + ": encoded " + std::to_string(back.t) +
                           " frames, expected " + std::to_string(res.frames));
  }
  res.profile.encoder_version = encoder_version();
  res.profile.bitrate_kbps = probe_bitrate(res.output, fps);
  return res;
}

EncodeResult encode_crf(const VideoClip& clip, int crf, const fs::path& out_dir,
                        const EncodeOptions& opts) {
  validate_crf(crf);
  clip.validate();
  const fs::path staging = out_dir / "source_frames";
  write_frames(clip, staging);
  EncodeResult res;
  try {
    res = encode_crf(staging, clip.fps, crf, out_dir, opts);
  } catch (...) {
    fs::remove_all(staging);
    throw;
  }
  fs::remove_all(staging);
  return res;
}

VideoClip decode(const fs::path& path, double fps) {
  if (fs::is_directory(path)) {
    try {
      return read_frames(path, fps);
    } catch (const DataError& e) {
      throw CompressionError(e.what());
    }
  }
  const StreamInfo info = probe(path);
  const fs::path err = fs::temp_directory_path() /
                       ("pmag_decode_" + std::to_string(::getpid()) + ".log");
  const std::string cmd = shell_quote(find_encoder().string()) + " -v error -i " +
                          shell_quote(path.string()) +
                          " -f rawvideo -pix_fmt rgb24 -fps_mode passthrough - 2>" +
                          shell_quote(err.string());
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (pipe == nullptr) throw CompressionError("cannot start decoder for " + path.string());
  const std::size_t frame_bytes = static_cast<std::size_t>(info.w) * info.h * 3;
  std::vector<std::uint8_t> raw;
  std::vector<std::uint8_t> buf(frame_bytes);
  std::size_t got = 0;
  while ((got = std::fread(buf.data(), 1, frame_bytes, pipe)) == frame_bytes) {
    raw.insert(raw.end(), buf.begin(), buf.end());
  }
  const int st = ::pclose(pipe);
  std::string log;
  if (fs::exists(err)) {
    log = read_file(err);
    fs::remove(err);
  }
  if (!WIFEXITED(st) || WEXITSTATUS(st) != 0 || got != 0 || raw.empty()) {
    throw CompressionError("cannot decode " + path.string() + "\n" + tail(log));
  }
  const int frames = static_cast<int>(raw.size() / frame_bytes);
  VideoClip clip(frames, info.h, info.w, info.fps > 0.0 ? info.fps : fps);
  for (std::size_t i = 0; i < raw.size(); ++i) clip.rgb[i] = static_cast<float>(raw[i] / 255.0);
  return clip;
}

double probe_bitrate(const fs::path& path, double fps) {
  if (fs::is_directory(path)) {
    fs::path first;
    for (const auto& e : fs::directory_iterator(path)) {
      if (e.path().extension() == ".png" && (first.empty() || e.path() < first)) first = e.path();
    }
    if (first.empty()) throw CompressionError("no PNG frames in " + path.string());
    const cv::Mat img = cv::imread(first.string(), cv::IMREAD_UNCHANGED);
    if (img.empty()) throw CompressionError("cannot read " + first.string());
    return static_cast<double>(img.cols) * img.rows * 3.0 * 8.0 * fps / 1000.0;
  }
  const StreamInfo info = probe(path);
  if (info.duration > 0.0) {
    return static_cast<double>(fs::file_size(path)) * 8.0 / info.duration / 1000.0;
  }
  if (info.bitrate_kbps > 0.0) return info.bitrate_kbps;
  throw CompressionError("cannot determine the bitrate of " + path.string());
}

DatasetManifest compress_dataset(const DatasetManifest& manifest, int crf, const fs::path& out_root,
                                 const EncodeOptions& opts) {
  validate_crf(crf);
  if (crf > 0 || opts.target_kbps > 0.0) find_encoder();  // fail fast with the remediation hint
  DatasetManifest out;
  out.root = out_root;
  out.fps = manifest.fps;
  out.size = manifest.size;
  std::vector<std::string> failed;
  for (const auto& r : manifest.records) {
    try {
      const fs::path dir = out_root / r.id;
      EncodeResult enc;
      if (r.video.empty()) {
        enc = encode_crf(manifest.root / r.frames, manifest.fps, crf, dir, opts);
      } else {
        enc = encode_crf(decode(manifest.root / r.video, manifest.fps), crf, dir, opts);
      }
      SampleRecord nr = r;
      const auto rel = fs::relative(enc.output, out_root).generic_string();
      nr.frames = enc.profile.bypass ? rel : "";
      nr.video = enc.profile.bypass ? "" : rel;
      nr.gt = r.id + "/gt.csv";
      fs::copy_file(manifest.root / r.gt, out_root / nr.gt, fs::copy_options::overwrite_existing);
      if (!r.mask.empty() && fs::exists(manifest.root / r.mask)) {
        nr.mask = r.id + "/mask.png";
        fs::copy_file(manifest.root / r.mask, out_root / nr.mask,
                      fs::copy_options::overwrite_existing);
      } else {
        nr.mask.clear();
      }
      nr.num_frames = enc.frames;
      nr.compression = enc.profile;
      out.records.push_back(std::move(nr));
    } catch (const EncoderMissingError&) {
      throw;
    } catch (const std::exception& e) {
      failed.push_back(r.id + ": " + e.what());
    }
  }
  if (!failed.empty()) {
    std::string msg = "compression failed for " + std::to_string(failed.size()) + " sample(s):";
    for (const auto& f : failed) msg += "\n  " + f;
    throw CompressionError(msg);
  }
  save_manifest(out, out_root / "manifest.json");
  return out;
}

}  // namespace pmag
