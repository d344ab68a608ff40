// pmag: synthesize, compress, train, evaluate and visualise pulse magnification runs.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <opencv2/core/version.hpp>

#include "CLI11.hpp"
#include "json.hpp"
#include "pmag/compression.hpp"
#include "pmag/config.hpp"
#include "pmag/data.hpp"
#include "pmag/evaluation.hpp"
#include "pmag/plot.hpp"
#include "pmag/training.hpp"
#include "pmag/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pmag;

namespace {

constexpr const char* kVersion = "0.1.0";

enum Exit { kOk = 0, kRuntime = 1, kConfig = 2, kEncoder = 3 };

// Exclusive ownership of a run directory for the lifetime of the command.
class RunLock {
 public:
  explicit RunLock(fs::path path) : path_(std::move(path)) {
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (f == nullptr) {
      throw std::runtime_error("run directory is in use (lock file " + path_.string() +
                               " exists); remove it if no other pmag process is running");
    }
    std::fclose(f);
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
};

struct Run {
  RunConfig cfg;
  fs::path dir;
  fs::path checkpoints() const { return dir / "checkpoints"; }
  fs::path reports() const { return dir / "reports"; }
  fs::path plots() const { return dir / "plots"; }
  fs::path frames() const { return dir / "frames"; }
};

std::string encoder_or_none() {
  try {
    return encoder_version();
  } catch (const EncoderMissingError&) {
    return "unavailable";
  }
}

json versions() {
  return {{"pmag", kVersion},
          {"compiler", __VERSION__},
          {"opencv", CV_VERSION},
          {"encoder", encoder_or_none()}};
}

void write_run_header(const Run& run, const std::string& command) {
  for (const auto& d : {run.checkpoints(), run.reports(), run.plots(), run.frames()}) {
    fs::create_directories(d);
  }
  write_file_atomic(run.dir / "resolved_config.json", run.cfg.doc.dump(2) + "\n");
  write_file_atomic(run.dir / "config_hash", run.cfg.hash + "\n");
  json v = versions();
  v["command"] = command;
  write_file_atomic(run.dir / "versions.json", v.dump(2) + "\n");
}

std::string require_path(const RunConfig& cfg, const std::string& key, const std::string& flag) {
  const auto value = cfg.at(key).get<std::string>();
  if (value.empty()) throw ConfigError(key + ": missing; pass " + flag + " or set it in the config file");
  return value;
}

DatasetManifest manifest_at(const RunConfig& cfg, const std::string& key, const std::string& flag) {
  const fs::path p = require_path(cfg, key, flag);
  return load_manifest(fs::is_directory(p) ? p / "manifest.json" : p);
}

std::string crf_summary(const DatasetManifest& m) {
  const auto crfs = m.crf_values();
  if (crfs.empty()) return "uncompressed";
  std::string s;
  for (int c : crfs) s += (s.empty() ? "" : ",") + std::to_string(c);
  return s;
}

std::map<std::string, std::string> data_provenance(const DatasetManifest& m) {
  std::string codec = "none";
  std::string encoder = "none";
  for (const auto& r : m.records) {
    if (r.compression) {
      codec = r.compression->codec;
      encoder = r.compression->encoder_version.empty() ? encoder : r.compression->encoder_version;
    }
  }
  return {{"data", m.root.string()}, {"crf", crf_summary(m)}, {"codec", codec}, {"encoder", encoder}};
}

void plot_history(const std::vector<EpochRecord>& history, const fs::path& png) {
  Series total{"total", {}, {}, palette(0), true};
  Series temp{"temporal", {}, {}, palette(1), false};
  Series freq{"frequency", {}, {}, palette(2), false};
  for (const auto& r : history) {
    total.x.push_back(r.epoch);
    total.y.push_back(r.loss_total);
    temp.x.push_back(r.epoch);
    temp.y.push_back(r.loss_temp);
    freq.x.push_back(r.epoch);
    freq.y.push_back(r.loss_freq);
  }
  plot_lines({total, temp, freq}, {"Training loss", "epoch", "loss"}, png);
}

Checkpoint train_with_artifacts(const Run& run, Procedure proc, const DatasetManifest& data,
                                const std::function<Checkpoint(const TrainHooks&)>& fit) {
  const std::string name = to_string(proc);
  TrainHooks hooks;
  hooks.provenance = data_provenance(data);
  hooks.provenance["config_hash"] = run.cfg.hash;
  hooks.diagnostic_path = run.checkpoints() / (name + "_diverged.ckpt");
  hooks.on_epoch = [&](const Checkpoint& ck, const EpochRecord& rec) {
    save_checkpoint(ck, run.checkpoints() / (name + "_last.ckpt"));
    std::cout << name << " epoch " << rec.epoch << " loss " << rec.loss_total << std::endl;
  };
  Checkpoint ck = fit(hooks);
  const fs::path out = run.checkpoints() / (name + ".ckpt");
  save_checkpoint(ck, out);
  write_history_csv(ck.history, run.reports() / "history.csv");
  plot_history(ck.history, run.plots() / "loss.png");
  std::cout << "checkpoint: " << out.string() << "\n";
  return ck;
}

// -- commands ----------------------------------------------------------------

int cmd_synth(const Run& run) {
  const auto tmpl = synth_config(run.cfg);
  for (bool test : {false, true}) {
    const fs::path root = run.dir / "data" / (test ? "test" : "train");
    const auto m = make_dataset(tmpl, dataset_options(run.cfg, test), root);
    std::cout << (test ? "test" : "train") << ": " << m.records.size() << " clips -> "
              << (root / "manifest.json").string() << "\n";
  }
  return kOk;
}

int cmd_compress(const Run& run) {
  const int crf = run.cfg.at("compress.crf").get<int>();
  bool any = false;
  for (const char* split : {"train", "test"}) {
    const std::string key = std::string("data.") + split;
    if (run.cfg.at(key).get<std::string>().empty()) continue;
    any = true;
    const auto src = manifest_at(run.cfg, key, std::string("--") + split);
    const fs::path out = run.dir / "data" / ("crf_" + std::to_string(crf)) / split;
    const auto m = compress_dataset(src, crf, out, encode_options(run.cfg));
    double kbps = 0.0;
    for (const auto& r : m.records) kbps += r.compression ? r.compression->bitrate_kbps : 0.0;
    std::cout << split << ": crf " << crf << ", mean bitrate "
              << kbps / static_cast<double>(m.records.size()) << " kbps -> "
              << (out / "manifest.json").string() << "\n";
  }
  if (!any) throw ConfigError("data.train: nothing to compress; pass --train and/or --test");
  return kOk;
}

int cmd_train_stage1(const Run& run) {
  const auto data = manifest_at(run.cfg, "data.train", "--train");
  const auto samples = load_all(data, load_options(run.cfg));
  const auto cfg = train_config(run.cfg);
  train_with_artifacts(run, Procedure::kStage1, data, [&](const TrainHooks& h) {
    return train_stage1(samples, cfg, tdm_config(run.cfg), h);
  });
  return kOk;
}

int cmd_train_stage2(const Run& run) {
  const fs::path theta_path = require_path(run.cfg, "paths.theta", "--theta <checkpoint>");
  const auto data = manifest_at(run.cfg, "data.train", "--train");
  const auto ck = load_checkpoint(theta_path);
  if (!ck.theta) throw std::runtime_error(theta_path.string() + ": checkpoint holds no estimator");
  ModelParams theta = *ck.theta;
  theta.frozen = true;
  const auto samples = load_all(data, load_options(run.cfg));
  const auto cfg = train_config(run.cfg);
  train_with_artifacts(run, Procedure::kStage2, data, [&](TrainHooks h) {
    h.provenance["theta"] = theta_path.string();
    return train_stage2(samples, theta, cfg, psmn_config(run.cfg), h);
  });
  return kOk;
}

int cmd_train_e2e(const Run& run) {
  const auto data = manifest_at(run.cfg, "data.train", "--train");
  const auto samples = load_all(data, load_options(run.cfg));
  const auto cfg = train_config(run.cfg);
  train_with_artifacts(run, Procedure::kEndToEnd, data, [&](const TrainHooks& h) {
    return train_end_to_end(samples, cfg, tdm_config(run.cfg), psmn_config(run.cfg), h);
  });
  return kOk;
}

// Estimator and optional magnifier named by paths.checkpoint or paths.theta / paths.psi.
struct Models {
  ModelParams theta;
  std::optional<ModelParams> psi;
  std::map<std::string, std::string> provenance;
};

Models resolve_models(const RunConfig& cfg, bool need_psi) {
  Models m;
  const auto ckpt = cfg.at("paths.checkpoint").get<std::string>();
  const auto theta = cfg.at("paths.theta").get<std::string>();
  const auto psi = cfg.at("paths.psi").get<std::string>();
  if (!ckpt.empty()) {
    auto ck = load_checkpoint(ckpt);
    if (!ck.theta) throw std::runtime_error(ckpt + ": checkpoint holds no estimator");
    m.theta = *ck.theta;
    m.psi = ck.psi;
    m.provenance["checkpoint"] = ckpt;
  }
  if (!theta.empty()) {
    auto ck = load_checkpoint(theta);
    if (!ck.theta) throw std::runtime_error(theta + ": checkpoint holds no estimator");
    m.theta = *ck.theta;
    m.provenance["theta"] = theta;
  }
  if (!psi.empty()) {
    auto ck = load_checkpoint(psi);
    if (!ck.psi) throw std::runtime_error(psi + ": checkpoint holds no magnifier");
    m.psi = ck.psi;
    m.provenance["psi"] = psi;
  }
  if (m.provenance.empty()) {
    throw ConfigError("paths.checkpoint: missing; pass --checkpoint or --theta [--psi]");
  }
  if (need_psi && !m.psi) throw ConfigError("paths.psi: a trained magnifier is required");
  return m;
}

int cmd_eval(const Run& run) {
  const auto models = resolve_models(run.cfg, false);
  const auto data = manifest_at(run.cfg, "data.test", "--test");
  const auto samples = load_all(data, load_options(run.cfg));
  const auto res = evaluate_model(models.theta, models.psi ? &*models.psi : nullptr, samples,
                                  eval_options(run.cfg));
  auto prov = data_provenance(data);
  prov.insert(models.provenance.begin(), models.provenance.end());
  write_metrics_csv(res, run.reports() / "metrics.csv");
  write_summary_json(res, run.reports() / "summary.json", run.cfg.hash, prov);
  std::cout << "MAE " << res.metrics.mae << " RMSE " << res.metrics.rmse << " r "
            << (res.metrics.r_defined ? std::to_string(res.metrics.pearson_r) : "undefined")
            << " over " << res.metrics.n << " windows\n";
  return kOk;
}

int cmd_sweep(const Run& run) {
  const auto models = resolve_models(run.cfg, false);
  const auto test = manifest_at(run.cfg, "data.test", "--test");
  SweepOptions opts;
  opts.crfs = crf_list(run.cfg, "sweep");
  opts.work_dir = run.dir / "data";
  opts.eval = eval_options(run.cfg);
  opts.encode = encode_options(run.cfg);
  opts.load = load_options(run.cfg);
  opts.mode = run.cfg.at("sweep.mode").get<std::string>();
  std::optional<DatasetManifest> train;
  if (run.cfg.at("sweep.retrain").get<bool>()) {
    train = manifest_at(run.cfg, "data.train", "--train");
    opts.train = &*train;
    opts.retrain = train_config(run.cfg);
    opts.on_retrained = [&](int crf, const ModelParams& theta) {
      Checkpoint ck;
      ck.theta = theta;
      ck.config = *opts.retrain;
      save_checkpoint(ck, run.checkpoints() / ("baseline_crf" + std::to_string(crf) + ".ckpt"));
    };
  }
  const auto rows = crf_sweep(models.theta, models.psi ? &*models.psi : nullptr, test, opts);
  write_sweep_csv(rows, run.reports() / "sweep.csv");
  plot_sweep(rows, run.plots() / "sweep.png");
  for (const auto& r : rows) {
    std::cout << "crf " << r.crf << " " << r.condition << ": MAE " << r.metrics.mae << " snr "
              << r.snr_db << " dB, " << r.bitrate_kbps << " kbps\n";
  }
  return kOk;
}

int cmd_ablate(const Run& run) {
  const auto train = load_all(manifest_at(run.cfg, "data.train", "--train"), load_options(run.cfg));
  const auto test = load_all(manifest_at(run.cfg, "data.test", "--test"), load_options(run.cfg));
  const auto rows =
      ablate_losses(train, test, train_config(run.cfg), tdm_config(run.cfg), eval_options(run.cfg));
  write_ablation_csv(rows, run.reports() / "ablation.csv");
  for (const auto& r : rows) std::cout << to_string(r.terms) << ": MAE " << r.metrics.mae << "\n";
  return kOk;
}

int cmd_compare(const Run& run) {
  const auto models = resolve_models(run.cfg, false);
  const auto train = manifest_at(run.cfg, "data.train", "--train");
  const auto test = manifest_at(run.cfg, "data.test", "--test");
  CompareOptions opts;
  opts.crfs = crf_list(run.cfg, "compare");
  opts.work_dir = run.dir / "data";
  opts.stage2 = opts.end_to_end = opts.baseline = train_config(run.cfg);
  opts.tdm = tdm_config(run.cfg);
  opts.psmn = psmn_config(run.cfg);
  opts.eval = eval_options(run.cfg);
  opts.load = load_options(run.cfg);
  opts.encode = encode_options(run.cfg);
  opts.run_end_to_end = run.cfg.at("compare.end_to_end").get<bool>();
  opts.run_baseline = run.cfg.at("compare.baseline").get<bool>();
  opts.on_trained = [&](int crf, const std::string& strategy, const Checkpoint& ck) {
    save_checkpoint(ck, run.checkpoints() / (strategy + "_crf" + std::to_string(crf) + ".ckpt"));
  };
  const auto report = compare_strategies(models.theta, train, test, opts);
  write_compare_csv(report, run.reports());
  plot_compare(report, run.plots() / "compare.png");
  for (const auto& r : report.rows) {
    std::cout << "crf " << r.crf << " " << r.strategy << ": MAE " << r.metrics.mae << "\n";
  }
  return kOk;
}

int cmd_visualize(const Run& run) {
  const auto models = resolve_models(run.cfg, true);
  const auto data = manifest_at(run.cfg, "data.test", "--test");
  const int index = run.cfg.at("visualize.sample").get<int>();
  if (index < 0 || index >= static_cast<int>(data.records.size())) {
    throw ConfigError("visualize.sample: index " + std::to_string(index) + " outside 0.." +
                      std::to_string(data.records.size() - 1));
  }
  const auto sample = load_sample(data, data.records[static_cast<std::size_t>(index)], load_options(run.cfg));
  const auto res = visualize_magnification(*models.psi, models.theta, sample,
                                           run.frames() / sample.id, visualize_options(run.cfg));
  std::cout << sample.id << ": green-activity HR " << res.green_hr.bpm << " BPM, ground truth "
            << res.gt_hr.bpm << " BPM -> " << (run.frames() / sample.id).string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pulse-signal magnification for heart-rate estimation from compressed video"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  std::optional<std::string> config_path;
  std::vector<std::string> sets;
  std::string name;
  std::string root;
  bool deterministic = false;
  bool quiet = false;
  app.add_option("-c,--config", config_path, "JSON config file");
  app.add_option("--set", sets, "override a config key, e.g. --set train.lr=3e-4");
  app.add_option("--name", name, "run name (run.name)");
  app.add_option("--root", root, "runs directory (run.root)");
  app.add_flag("--deterministic", deterministic, "force deterministic execution");
  app.add_flag("-q,--quiet", quiet, "suppress warnings");

  // Flags that map onto config keys; applied after --set.
  std::map<std::string, std::string> flag_values;
  auto key_option = [&](CLI::App* sub, const std::string& flag, const std::string& key,
                        const std::string& help) {
    sub->add_option_function<std::string>(
        flag, [&flag_values, key](const std::string& v) { flag_values[key] = v; }, help);
  };
  auto data_flags = [&](CLI::App* sub, bool train, bool test) {
    if (train) key_option(sub, "--train", "data.train", "training dataset manifest or directory");
    if (test) key_option(sub, "--test", "data.test", "test dataset manifest or directory");
  };
  auto model_flags = [&](CLI::App* sub) {
    key_option(sub, "--checkpoint", "paths.checkpoint", "checkpoint holding the networks");
    key_option(sub, "--theta", "paths.theta", "checkpoint holding the estimator");
    key_option(sub, "--psi", "paths.psi", "checkpoint holding the magnifier");
  };

  std::map<std::string, std::function<int(const Run&)>> handlers;
  auto add = [&](const std::string& cmd, const std::string& help, auto fn) {
    handlers[cmd] = fn;
    return app.add_subcommand(cmd, help);
  };

  add("synth", "render a synthetic train/test dataset", cmd_synth);
  auto* compress = add("compress", "re-encode datasets at one CRF", cmd_compress);
  key_option(compress, "--crf", "compress.crf", "constant rate factor (0 = uncompressed)");
  data_flags(compress, true, true);
  auto* s1 = add("train-stage1", "fit the estimator on uncompressed clips", cmd_train_stage1);
  data_flags(s1, true, false);
  key_option(s1, "--epochs", "train.epochs", "training epochs");
  auto* s2 = add("train-stage2", "fit the magnifier through a frozen estimator", cmd_train_stage2);
  data_flags(s2, true, false);
  key_option(s2, "--theta", "paths.theta", "stage-1 checkpoint (required)");
  key_option(s2, "--epochs", "train.epochs", "training epochs");
  auto* e2e = add("train-e2e", "fit both networks jointly", cmd_train_e2e);
  data_flags(e2e, true, false);
  key_option(e2e, "--epochs", "train.epochs", "training epochs");
  auto* ev = add("eval", "HR metrics on a test set", cmd_eval);
  data_flags(ev, false, true);
  model_flags(ev);
  auto* sw = add("sweep", "HR error across CRF values", cmd_sweep);
  data_flags(sw, true, true);
  model_flags(sw);
  auto* ab = add("ablate-loss", "train with each loss term alone and combined", cmd_ablate);
  data_flags(ab, true, true);
  auto* cmp = add("compare", "two-stage vs end-to-end vs matched baseline", cmd_compare);
  data_flags(cmp, true, true);
  model_flags(cmp);
  auto* vis = add("visualize", "magnified frames and pixel activity", cmd_visualize);
  data_flags(vis, false, true);
  model_flags(vis);
  key_option(vis, "--sample", "visualize.sample", "index of the test clip");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }
  if (quiet) set_warnings_enabled(false);

  const std::string command = app.get_subcommands().front()->get_name();
  std::vector<std::string> overrides = sets;
  if (!name.empty()) overrides.push_back("run.name=\"" + name + "\"");
  if (!root.empty()) overrides.push_back("run.root=\"" + root + "\"");
  if (deterministic) overrides.push_back("run.deterministic=true");
  for (const auto& [key, value] : flag_values) {
    const bool is_path = key.rfind("data.", 0) == 0 || key.rfind("paths.", 0) == 0;
    overrides.push_back(key + "=" + (is_path ? json(value).dump() : value));
  }

  try {
    Run run;
    run.cfg = parse_config(config_path ? std::optional<fs::path>(*config_path) : std::nullopt, overrides);
    run.dir = fs::path(run.cfg.at("run.root").get<std::string>()) / run.cfg.at("run.name").get<std::string>();
    fs::create_directories(run.dir);
    RunLock lock(run.dir / ".lock");
    write_run_header(run, command);
    return handlers.at(command)(run);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const EncoderMissingError& e) {
    std::cerr << "encoder missing: " << e.what()
              << "\nhint: install ffmpeg with libx264 or point PMAG_FFMPEG at an ffmpeg binary\n";
    return kEncoder;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
}
