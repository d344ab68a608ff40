#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pmag/compression.hpp"
#include "pmag/data.hpp"
#include "pmag/models.hpp"
#include "pmag/training.hpp"

namespace pmag {

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct HRMetrics {
  double mae = 0.0;
  double rmse = 0.0;
  double pearson_r = 0.0;
  bool r_defined = false;  // false iff either series has zero variance
  int n = 0;
};

HRMetrics hr_metrics(std::span<const double> pred, std::span<const double> gt);

struct WindowResult {
  std::string window_id;  // <sample>@<start frame>
  std::string sample_id;
  int start = 0;
  double pred_bpm = 0.0;
  double gt_bpm = 0.0;
};

struct EvalResult {
  std::vector<WindowResult> windows;
  HRMetrics metrics;
};

struct EvalOptions {
  FrequencyGrid grid{};
  int window = 300;
  bool whole_clip = false;  // one window spanning each clip
};

/// Any clip -> pulse mapping (a network, an oracle, a classical method).
using PulseModel = std::function<PulseSignal(const Sample&)>;

/// Non-overlapping windows; pred HR = estimate_hr(bandpass(model output)),
/// gt HR = estimate_hr(bandpass(ppg_gt)) on the same window.
EvalResult evaluate(const PulseModel& model, const std::vector<Sample>& samples,
                    const EvalOptions& opts = {});
/// `psi` null evaluates the estimator alone.
EvalResult evaluate_model(const ModelParams& theta, const ModelParams* psi,
                          const std::vector<Sample>& samples, const EvalOptions& opts = {});

/// metrics.csv: window_id,pred_bpm,gt_bpm
void write_metrics_csv(const EvalResult& result, const std::filesystem::path& path);
void write_summary_json(const EvalResult& result, const std::filesystem::path& path,
                        const std::string& config_hash,
                        const std::map<std::string, std::string>& provenance = {});

// -- compression sweep --------------------------------------------------------

struct SweepRow {
  int crf = 0;
  std::string condition;      // baseline | with-psmn
  std::string mode = "intra";  // intra | cross
  HRMetrics metrics;
  double bitrate_kbps = 0.0;
  double snr_db = 0.0;  // mean green-channel SNR of the compressed test clips
};

struct SweepOptions {
  std::vector<int> crfs{0, 5, 10, 15, 20, 25};
  std::filesystem::path work_dir;
  EvalOptions eval{};
  EncodeOptions encode{};
  LoadOptions load{};
  std::string mode = "intra";
  /// Matched-compression retraining: the estimator is fine-tuned on `train`
  /// compressed at each crf > 0 before evaluating the baseline condition.
  const DatasetManifest* train = nullptr;
  std::optional<TrainConfig> retrain;
  /// Called with each retrained estimator (crf, params).
  std::function<void(int, const ModelParams&)> on_retrained;
};

std::vector<SweepRow> crf_sweep(const ModelParams& theta, const ModelParams* psi,
                                const DatasetManifest& test, const SweepOptions& opts);

/// sweep.csv: crf,condition,mode,mae,rmse,pearson_r,n,bitrate_kbps,snr_db
void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path);
void plot_sweep(const std::vector<SweepRow>& rows, const std::filesystem::path& png);

/// Mean green-channel snr_db over the masks of `samples`, per evaluation window.
double mean_green_snr(const std::vector<Sample>& samples, const EvalOptions& opts = {});

// -- loss ablation ----------------------------------------------------------

struct AblationRow {
  LossTerms terms = LossTerms::kCombined;
  double lambda = 0.0;
  std::string config_hash;  // hash of the training config
  HRMetrics metrics;
};

std::vector<AblationRow> ablate_losses(const std::vector<Sample>& train,
                                       const std::vector<Sample>& test, const TrainConfig& cfg,
                                       const TdmConfig& arch = {}, const EvalOptions& eval = {});
void write_ablation_csv(const std::vector<AblationRow>& rows, const std::filesystem::path& path);

// -- training strategy comparison -------------------------------------------

struct StrategyRow {
  int crf = 0;
  std::string strategy;  // two_stage | end_to_end | baseline
  HRMetrics metrics;
};

struct CompareOptions {
  std::vector<int> crfs{0, 5, 10, 15, 20, 25};
  std::filesystem::path work_dir;
  TrainConfig stage2{};
  TrainConfig end_to_end{};
  TrainConfig baseline{};
  TdmConfig tdm{};
  PsmnConfig psmn{};
  EvalOptions eval{};
  LoadOptions load{};
  EncodeOptions encode{};
  bool run_end_to_end = true;
  bool run_baseline = true;  // matched-compression estimator fine-tuned from Stage I
  std::function<void(int, const std::string&, const Checkpoint&)> on_trained;
};

struct CompareReport {
  std::vector<StrategyRow> rows;
};

/// Two-stage (frozen `theta` + magnifier trained per crf), end-to-end and the
/// matched baseline, each evaluated on the test set compressed at that crf.
CompareReport compare_strategies(const ModelParams& theta, const DatasetManifest& train_u,
                                 const DatasetManifest& test_u, const CompareOptions& opts);

/// Row for (crf, strategy) or nullptr.
const StrategyRow* find_row(const CompareReport& report, int crf, const std::string& strategy);

/// compare.csv (one row per crf and strategy) and compare_delta.csv
/// (crf,two_stage_mae,end_to_end_mae,baseline_mae,delta_vs_end_to_end,delta_vs_baseline,winner).
void write_compare_csv(const CompareReport& report, const std::filesystem::path& dir);
void plot_compare(const CompareReport& report, const std::filesystem::path& png);

// -- magnification visualisation -------------------------------------------

enum class ActivityView {
  kFrames,  // classify the clamped magnified frames as they are
  kPulse,   // classify 0.5 + gain * (frame - per-pixel temporal mean), spatially smoothed
};

struct VisualizeOptions {
  ActivityView view = ActivityView::kPulse;
  int blur = 5;              // box filter size for the pulse view (1 disables)
  double target_rms = 0.1;   // pulse-view gain maps the in-mask deviation RMS to this
  double min_saturation = 0.2;
  double green_lo = 80.0;
  double green_hi = 160.0;
  double magenta_lo = 280.0;
  double magenta_hi = 340.0;
  bool write_frames = true;
  FrequencyGrid grid{};
};

struct PixelCounts {
  std::vector<double> green;
  std::vector<double> magenta;
};

/// Counts in-mask pixels per frame whose hue falls in the green / magenta ranges
/// with saturation >= min_saturation.
PixelCounts classify_pixels(const VideoClip& clip, const std::vector<std::uint8_t>& mask,
                            const VisualizeOptions& opts = {});

/// The clip shown by the pulse view.
VideoClip pulse_view(const VideoClip& clip, const std::vector<std::uint8_t>& mask,
                     const VisualizeOptions& opts = {});

struct VisualizationResult {
  PixelCounts counts;
  PulseSignal predicted;
  HRValue green_hr;  // spectral peak of the green-count series
  HRValue gt_hr;
};

/// Writes frames/ (clamped magnified frames), activity.png, activity.csv and signals.png.
VisualizationResult visualize_magnification(const ModelParams& psi, const ModelParams& theta,
                                            const Sample& sample,
                                            const std::filesystem::path& out_dir,
                                            const VisualizeOptions& opts = {});

}  // namespace pmag
