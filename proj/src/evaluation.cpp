#include "pmag/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "json.hpp"
#include "pmag/plot.hpp"
#include "pmag/util.hpp"

namespace pmag {

namespace fs = std::filesystem;
using nlohmann::json;

HRMetrics hr_metrics(std::span<const double> pred, std::span<const double> gt) {
  if (pred.size() != gt.size()) {
    throw EvalError("hr_metrics: " + std::to_string(pred.size()) + " predictions vs " +
                    std::to_string(gt.size()) + " references");
  }
  if (pred.empty()) throw EvalError("hr_metrics: empty series");
  HRMetrics m;
  m.n = static_cast<int>(pred.size());
  double abs_sum = 0.0;
  double sq_sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - gt[i];
    abs_sum += std::abs(d);
    sq_sum += d * d;
  }
  m.mae = abs_sum / m.n;
  m.rmse = std::sqrt(sq_sum / m.n);
  const double r = pearson(pred, gt);
  m.r_defined = std::isfinite(r);
  m.pearson_r = m.r_defined ? std::clamp(r, -1.0, 1.0) : std::numeric_limits<double>::quiet_NaN();
  return m;
}

namespace {

// Argmax HR of a model output. A spectrum that is zero everywhere has no
// dominant frequency; every bin ties, so the lowest bin is reported.
double predicted_bpm(const PulseSignal& pred, const FrequencyGrid& grid, const std::string& where) {
  try {
    return estimate_hr(bandpass(pred, grid), grid).bpm;
  } catch (const SignalError& e) {
    warn(where + ": " + e.what() + "; reporting the lowest grid bin");
    return grid.bins_bpm().front();
  }
}

std::string fmt(double v) {
  if (!std::isfinite(v)) return "nan";
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

json metrics_json(const HRMetrics& m) {
  return {{"mae", m.mae},
          {"rmse", m.rmse},
          {"pearson_r", m.r_defined ? json(m.pearson_r) : json(nullptr)},
          {"pearson_defined", m.r_defined},
          {"n", m.n}};
}

}  // namespace

EvalResult evaluate(const PulseModel& model, const std::vector<Sample>& samples,
                    const EvalOptions& opts) {
  EvalResult res;
  std::vector<double> pred;
  std::vector<double> gt;
  for (const auto& s : samples) {
    std::vector<Sample> windows;
    if (opts.whole_clip) {
      Sample w = s;
      w.hr_gt = {estimate_hr(bandpass(s.ppg_gt, opts.grid), opts.grid)};
      windows.push_back(std::move(w));
    } else if (s.clip.t >= opts.window) {
      windows = window_clip(s, opts.window, 0, opts.grid);
    } else {
      warn("sample `" + s.id + "` is shorter than one evaluation window; skipped");
    }
    for (const auto& w : windows) {
      WindowResult r;
      r.sample_id = w.id;
      r.start = w.window_start;
      r.window_id = w.id + "@" + std::to_string(w.window_start);
      r.pred_bpm = predicted_bpm(model(w), opts.grid, r.window_id);
      r.gt_bpm = w.hr_gt.at(0).bpm;
      pred.push_back(r.pred_bpm);
      gt.push_back(r.gt_bpm);
      res.windows.push_back(std::move(r));
    }
  }
  if (res.windows.empty()) throw EvalError("no evaluation windows");
  res.metrics = hr_metrics(pred, gt);
  return res;
}

EvalResult evaluate_model(const ModelParams& theta, const ModelParams* psi,
                          const std::vector<Sample>& samples, const EvalOptions& opts) {
  return evaluate(
      [&](const Sample& w) {
        return psi != nullptr ? pipeline_forward(theta, *psi, w.clip) : tdm_forward(theta, w.clip);
      },
      samples, opts);
}

void write_metrics_csv(const EvalResult& result, const fs::path& path) {
  std::ostringstream os;
  os << "window_id,pred_bpm,gt_bpm\n";
  for (const auto& w : result.windows) {
    os << w.window_id << ',' << fmt(w.pred_bpm) << ',' << fmt(w.gt_bpm) << '\n';
  }
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  write_file_atomic(path, os.str());
}

void write_summary_json(const EvalResult& result, const fs::path& path,
                        const std::string& config_hash,
                        const std::map<std::string, std::string>& provenance) {
  json j = metrics_json(result.metrics);
  j["config_hash"] = config_hash;
  j["provenance"] = provenance;
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  write_file_atomic(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Sweep

double mean_green_snr(const std::vector<Sample>& samples, const EvalOptions& opts) {
  double acc = 0.0;
  int n = 0;
  for (const auto& s : samples) {
    for (const auto& w : window_clip(s, opts.window, 0, opts.grid)) {
      const auto g = masked_channel_mean(w.clip, w.mask, 1);
      const auto snr = snr_db(bandpass(g, opts.grid), w.hr_gt.at(0), opts.grid);
      acc += std::clamp(snr.db, -100.0, 100.0);
      ++n;
    }
  }
  if (n == 0) throw EvalError("mean_green_snr: no windows");
  return acc / n;
}

namespace {

double mean_bitrate(const DatasetManifest& m) {
  double acc = 0.0;
  for (const auto& r : m.records) acc += r.compression ? r.compression->bitrate_kbps : 0.0;
  return acc / static_cast<double>(m.records.size());
}

fs::path crf_dir(const fs::path& root, int crf) { return root / ("crf_" + std::to_string(crf)); }

}  // namespace

std::vector<SweepRow> crf_sweep(const ModelParams& theta, const ModelParams* psi,
                                const DatasetManifest& test, const SweepOptions& opts) {
  if (opts.crfs.empty()) throw EvalError("crf_sweep: empty CRF list");
  for (int crf : opts.crfs) validate_crf(crf);
  if (opts.retrain && opts.train == nullptr) {
    throw EvalError("crf_sweep: matched retraining needs a training manifest");
  }
  std::vector<SweepRow> rows;
  for (int crf : opts.crfs) {
    const auto test_c = compress_dataset(test, crf, crf_dir(opts.work_dir, crf) / "test", opts.encode);
    const auto samples = load_all(test_c, opts.load);
    SweepRow base;
    base.crf = crf;
    base.mode = opts.mode;
    base.bitrate_kbps = mean_bitrate(test_c);
    base.snr_db = mean_green_snr(samples, opts.eval);

    ModelParams estimator = theta;
    if (opts.retrain && crf > 0) {
      const auto train_c =
          compress_dataset(*opts.train, crf, crf_dir(opts.work_dir, crf) / "train", opts.encode);
      const auto train_samples = load_all(train_c, opts.load);
      estimator = *train_stage1_from(train_samples, theta, *opts.retrain).theta;
      if (opts.on_retrained) opts.on_retrained(crf, estimator);
    }
    SweepRow b = base;
    b.condition = "baseline";
    b.metrics = evaluate_model(estimator, nullptr, samples, opts.eval).metrics;
    rows.push_back(b);
    if (psi != nullptr) {
      SweepRow p = base;
      p.condition = "with-psmn";
      p.metrics = evaluate_model(theta, psi, samples, opts.eval).metrics;
      rows.push_back(p);
    }
  }
  return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const fs::path& path) {
  std::ostringstream os;
  os << "crf,condition,mode,mae,rmse,pearson_r,n,bitrate_kbps,snr_db\n";
  for (const auto& r : rows) {
    os << r.crf << ',' << r.condition << ',' << r.mode << ',' << fmt(r.metrics.mae) << ','
       << fmt(r.metrics.rmse) << ',' << fmt(r.metrics.pearson_r) << ',' << r.metrics.n << ','
       << fmt(r.bitrate_kbps) << ',' << fmt(r.snr_db) << '\n';
  }
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  write_file_atomic(path, os.str());
}

void plot_sweep(const std::vector<SweepRow>& rows, const fs::path& png) {
  std::vector<Series> series;
  std::vector<std::string> order;
  for (const auto& r : rows) {
    const std::string key = r.condition + " (" + r.mode + ")";
    auto it = std::find(order.begin(), order.end(), key);
    if (it == order.end()) {
      order.push_back(key);
      series.push_back({key, {}, {}, palette(series.size()), true});
      it = order.end() - 1;
    }
    auto& s = series[static_cast<std::size_t>(it - order.begin())];
    s.x.push_back(r.crf);
    s.y.push_back(r.metrics.mae);
  }
  plot_lines(series, {"HR error vs compression", "CRF", "MAE [BPM]"}, png);
}

// ---------------------------------------------------------------------------
// Ablation

std::vector<AblationRow> ablate_losses(const std::vector<Sample>& train,
                                       const std::vector<Sample>& test, const TrainConfig& cfg,
                                       const TdmConfig& arch, const EvalOptions& eval) {
  std::vector<AblationRow> rows;
  for (LossTerms terms : {LossTerms::kTemporal, LossTerms::kFrequency, LossTerms::kCombined}) {
    TrainConfig c = cfg;
    c.terms = terms;
    const auto ck = train_stage1(train, c, arch);
    AblationRow r;
    r.terms = terms;
    r.lambda = c.lambda;
    r.config_hash = sha256_hex(to_json(c).dump());
    r.metrics = evaluate_model(*ck.theta, nullptr, test, eval).metrics;
    rows.push_back(r);
  }
  return rows;
}

void write_ablation_csv(const std::vector<AblationRow>& rows, const fs::path& path) {
  std::ostringstream os;
  os << "loss,lambda,config_hash,mae,rmse,pearson_r,n\n";
  for (const auto& r : rows) {
    os << to_string(r.terms) << ',' << fmt(r.lambda) << ',' << r.config_hash << ','
       << fmt(r.metrics.mae) << ',' << fmt(r.metrics.rmse) << ',' << fmt(r.metrics.pearson_r)
       << ',' << r.metrics.n << '\n';
  }
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  write_file_atomic(path, os.str());
}

// ---------------------------------------------------------------------------
// Strategy comparison

CompareReport compare_strategies(const ModelParams& theta, const DatasetManifest& train_u,
                                 const DatasetManifest& test_u, const CompareOptions& opts) {
  if (opts.crfs.empty()) throw EvalError("compare_strategies: empty CRF list");
  for (int crf : opts.crfs) validate_crf(crf);
  CompareReport report;
  ModelParams frozen = theta;
  frozen.frozen = true;
  for (int crf : opts.crfs) {
    const fs::path dir = crf_dir(opts.work_dir, crf);
    const auto train_c = compress_dataset(train_u, crf, dir / "train", opts.encode);
    const auto test_c = compress_dataset(test_u, crf, dir / "test", opts.encode);
    const auto train = load_all(train_c, opts.load);
    const auto test = load_all(test_c, opts.load);

    const auto two = train_stage2(train, frozen, opts.stage2, opts.psmn);
    if (opts.on_trained) opts.on_trained(crf, "two_stage", two);
    report.rows.push_back({crf, "two_stage", evaluate_model(*two.theta, &*two.psi, test, opts.eval).metrics});

    if (opts.run_end_to_end) {
      const auto e2e = train_end_to_end(train, opts.end_to_end, opts.tdm, opts.psmn);
      if (opts.on_trained) opts.on_trained(crf, "end_to_end", e2e);
      report.rows.push_back(
          {crf, "end_to_end", evaluate_model(*e2e.theta, &*e2e.psi, test, opts.eval).metrics});
    }
    if (opts.run_baseline) {
      ModelParams estimator = theta;
      if (crf > 0) {
        const auto ck = train_stage1_from(train, theta, opts.baseline);
        if (opts.on_trained) opts.on_trained(crf, "baseline", ck);
        estimator = *ck.theta;
      }
      report.rows.push_back({crf, "baseline", evaluate_model(estimator, nullptr, test, opts.eval).metrics});
    }
  }
  return report;
}

const StrategyRow* find_row(const CompareReport& report, int crf, const std::string& strategy) {
  for (const auto& r : report.rows) {
    if (r.crf == crf && r.strategy == strategy) return &r;
  }
  return nullptr;
}

void write_compare_csv(const CompareReport& report, const fs::path& dir) {
  fs::create_directories(dir);
  std::ostringstream rows;
  rows << "crf,strategy,mae,rmse,pearson_r,n\n";
  std::set<int> crfs;
  for (const auto& r : report.rows) {
    crfs.insert(r.crf);
    rows << r.crf << ',' << r.strategy << ',' << fmt(r.metrics.mae) << ',' << fmt(r.metrics.rmse)
         << ',' << fmt(r.metrics.pearson_r) << ',' << r.metrics.n << '\n';
  }
  write_file_atomic(dir / "compare.csv", rows.str());

  std::ostringstream delta;
  delta << "crf,two_stage_mae,end_to_end_mae,baseline_mae,delta_vs_end_to_end,delta_vs_baseline,"
           "winner\n";
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (int crf : crfs) {
    auto mae = [&](const char* s) {
      const auto* r = find_row(report, crf, s);
      return r != nullptr ? r->metrics.mae : nan;
    };
    const double two = mae("two_stage");
    const double e2e = mae("end_to_end");
    const double base = mae("baseline");
    std::string winner = "two_stage";
    double best = two;
    bool tie = false;
    for (auto [name, v] : {std::pair{"end_to_end", e2e}, std::pair{"baseline", base}}) {
      if (!std::isfinite(v)) continue;
      if (!std::isfinite(best) || v < best) {
        best = v;
        winner = name;
        tie = false;
      } else if (v == best) {
        tie = true;
      }
    }
    delta << crf << ',' << fmt(two) << ',' << fmt(e2e) << ',' << fmt(base) << ',' << fmt(two - e2e)
          << ',' << fmt(two - base) << ',' << (tie ? "tie" : winner) << '\n';
  }
  write_file_atomic(dir / "compare_delta.csv", delta.str());
}

void plot_compare(const CompareReport& report, const fs::path& png) {
  std::vector<Series> series;
  for (const char* name : {"two_stage", "end_to_end", "baseline"}) {
    Series s{name, {}, {}, palette(series.size()), true};
    for (const auto& r : report.rows) {
      if (r.strategy == name) {
        s.x.push_back(r.crf);
        s.y.push_back(r.metrics.mae);
      }
    }
    if (!s.x.empty()) series.push_back(std::move(s));
  }
  plot_lines(series, {"Training procedure comparison", "CRF", "MAE [BPM]"}, png);
}

// ---------------------------------------------------------------------------
// Visualisation

PixelCounts classify_pixels(const VideoClip& clip, const std::vector<std::uint8_t>& mask,
                            const VisualizeOptions& opts) {
  if (mask.size() != static_cast<std::size_t>(clip.h) * clip.w) {
    throw EvalError("classify_pixels: mask size does not match the frame");
  }
  PixelCounts out;
  out.green.assign(static_cast<std::size_t>(clip.t), 0.0);
  out.magenta.assign(static_cast<std::size_t>(clip.t), 0.0);
  const std::size_t frame = static_cast<std::size_t>(clip.h) * clip.w * 3;
  cv::Mat rgb(clip.h, clip.w, CV_32FC3);
  cv::Mat hsv;
  for (int t = 0; t < clip.t; ++t) {
    const float* src = clip.rgb.data() + static_cast<std::size_t>(t) * frame;
    auto* dst = rgb.ptr<float>(0);
    for (std::size_t i = 0; i < frame; ++i) dst[i] = std::clamp(src[i], 0.0f, 1.0f);
    cv::cvtColor(rgb, hsv, cv::COLOR_RGB2HSV);  // float: H in [0, 360), S, V in [0, 1]
    for (int y = 0; y < clip.h; ++y) {
      const auto* row = hsv.ptr<float>(y);
      for (int x = 0; x < clip.w; ++x) {
        if (!mask[static_cast<std::size_t>(y) * clip.w + x]) continue;
        const double h = row[3 * x];
        const double s = row[3 * x + 1];
        if (s < opts.min_saturation) continue;
        if (h >= opts.green_lo && h <= opts.green_hi) out.green[static_cast<std::size_t>(t)] += 1.0;
        if (h >= opts.magenta_lo && h <= opts.magenta_hi) {
          out.magenta[static_cast<std::size_t>(t)] += 1.0;
        }
      }
    }
  }
  return out;
}

VideoClip pulse_view(const VideoClip& clip, const std::vector<std::uint8_t>& mask,
                     const VisualizeOptions& opts) {
  const std::size_t frame = static_cast<std::size_t>(clip.h) * clip.w * 3;
  std::vector<double> mean(frame, 0.0);
  for (int t = 0; t < clip.t; ++t) {
    const float* f = clip.rgb.data() + static_cast<std::size_t>(t) * frame;
    for (std::size_t i = 0; i < frame; ++i) mean[i] += f[i];
  }
  for (double& m : mean) m /= clip.t;

  VideoClip dev(clip.t, clip.h, clip.w, clip.fps);
  cv::Mat tmp(clip.h, clip.w, CV_32FC3);
  for (int t = 0; t < clip.t; ++t) {
    const float* f = clip.rgb.data() + static_cast<std::size_t>(t) * frame;
    float* d = dev.rgb.data() + static_cast<std::size_t>(t) * frame;
    for (std::size_t i = 0; i < frame; ++i) d[i] = static_cast<float>(f[i] - mean[i]);
    if (opts.blur > 1) {
      cv::Mat view(clip.h, clip.w, CV_32FC3, d);
      cv::blur(view, tmp, cv::Size(opts.blur, opts.blur), cv::Point(-1, -1), cv::BORDER_REPLICATE);
      tmp.copyTo(view);
    }
  }
  double ss = 0.0;
  std::size_t n = 0;
  for (int t = 0; t < clip.t; ++t) {
    for (std::size_t p = 0; p < mask.size(); ++p) {
      if (!mask[p]) continue;
      for (int c = 0; c < 3; ++c) {
        const double v = dev.rgb[static_cast<std::size_t>(t) * frame + 3 * p + c];
        ss += v * v;
        ++n;
      }
    }
  }
  const double rms = n > 0 ? std::sqrt(ss / static_cast<double>(n)) : 0.0;
  const double gain = rms > 0.0 ? opts.target_rms / rms : 1.0;
  for (int t = 0; t < clip.t; ++t) {
    for (std::size_t p = 0; p < mask.size(); ++p) {
      for (int c = 0; c < 3; ++c) {
        float& v = dev.rgb[static_cast<std::size_t>(t) * frame + 3 * p + c];
        v = mask[p] ? static_cast<float>(std::clamp(0.5 + gain * v, 0.0, 1.0)) : 0.0f;
      }
    }
  }
  return dev;
}

namespace {

std::vector<double> zscore(std::vector<double> v) {
  const double m = mean(v);
  const double s = stddev(v);
  for (double& x : v) x = s > 0.0 ? (x - m) / s : 0.0;
  return v;
}

}  // namespace

VisualizationResult visualize_magnification(const ModelParams& psi, const ModelParams& theta,
                                            const Sample& sample, const fs::path& out_dir,
                                            const VisualizeOptions& opts) {
  sample.clip.validate();
  fs::create_directories(out_dir);
  const auto mag = psmn_forward(psi, sample.clip);
  const VideoClip shown = to_clip(mag.volume, mag.fps, /*clamp=*/true);

  VisualizationResult res;
  res.predicted = tdm_forward(theta, mag.volume, mag.fps);
  const VideoClip classified =
      opts.view == ActivityView::kPulse ? pulse_view(to_clip(mag.volume, mag.fps), sample.mask, opts)
                                        : shown;
  res.counts = classify_pixels(classified, sample.mask, opts);
  const PulseSignal green{res.counts.green, sample.clip.fps};
  res.green_hr = HRValue{predicted_bpm(green, opts.grid, sample.id + " green activity")};
  res.gt_hr = estimate_hr(bandpass(sample.ppg_gt, opts.grid), opts.grid);

  if (opts.write_frames) {
    write_frames(shown, out_dir / "frames");
    if (opts.view == ActivityView::kPulse) write_frames(classified, out_dir / "pulse_frames");
  }
  std::ostringstream csv;
  csv << "frame,t_sec,green,magenta\n";
  std::vector<double> t(static_cast<std::size_t>(sample.clip.t));
  for (int i = 0; i < sample.clip.t; ++i) {
    t[static_cast<std::size_t>(i)] = i / sample.clip.fps;
    csv << i << ',' << fmt(t[static_cast<std::size_t>(i)]) << ','
        << res.counts.green[static_cast<std::size_t>(i)] << ','
        << res.counts.magenta[static_cast<std::size_t>(i)] << '\n';
  }
  write_file_atomic(out_dir / "activity.csv", csv.str());
  plot_lines({{"green", t, res.counts.green, {44, 160, 44}, false},
              {"magenta", t, res.counts.magenta, {200, 0, 200}, false}},
             {"Pixel activity of the magnified clip", "time [s]", "pixels"},
             out_dir / "activity.png");
  plot_lines({{"predicted", t, zscore(bandpass(res.predicted, opts.grid).samples), palette(0), false},
              {"ground truth", t, zscore(sample.ppg_gt.samples), palette(1), false}},
             {"Recovered pulse", "time [s]", "z-score"}, out_dir / "signals.png");
  return res;
}

}  // namespace pmag
