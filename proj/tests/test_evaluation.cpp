#include <cmath>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "pmag/evaluation.hpp"
#include "pmag/util.hpp"
#include "support.hpp"

using namespace pmag;
using pmag::test::scratch_dir;

namespace fs = std::filesystem;

namespace {

std::vector<std::string> lines(const fs::path& p) {
  std::istringstream is(read_file(p));
  std::vector<std::string> out;
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

std::vector<Sample> clips(int n, int t, int size, std::uint64_t seed = 1) {
  SynthConfig tmpl;
  tmpl.t = t;
  tmpl.h = tmpl.w = size;
  DatasetOptions o;
  o.n = n;
  o.seed = seed;
  return synth_samples(tmpl, o);
}

TdmConfig tdm32() {
  TdmConfig c;
  c.input_size = 32;
  return c;
}

PsmnConfig psmn_tiny() {
  PsmnConfig c;
  c.widths = {2, 4, 4};
  c.bottleneck = 4;
  return c;
}

TrainConfig quick(int epochs = 1) {
  TrainConfig c;
  c.window = 300;
  c.epochs = epochs;
  c.lr = 1e-3;
  c.seed = 2;
  return c;
}

}  // namespace

TEST_CASE("hr metrics against hand-computed values") {
  const std::vector<double> gt{60, 70, 80, 90};
  auto m = hr_metrics(gt, gt);
  CHECK(m.mae == 0.0);
  CHECK(m.rmse == 0.0);
  CHECK(m.r_defined);
  CHECK(m.pearson_r == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m.n == 4);

  std::vector<double> plus2{62, 72, 82, 92};
  m = hr_metrics(plus2, gt);
  CHECK(m.mae == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(m.rmse == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(m.pearson_r == doctest::Approx(1.0).epsilon(1e-12));

  m = hr_metrics(std::vector<double>{70, 80}, std::vector<double>{80, 70});
  CHECK(m.mae == doctest::Approx(10.0).epsilon(1e-14));
  CHECK(m.rmse == doctest::Approx(10.0).epsilon(1e-14));
  CHECK(m.pearson_r == doctest::Approx(-1.0).epsilon(1e-12));

  // errors 1, -3, 0, 4: mae 2, rmse sqrt(26/4)
  m = hr_metrics(std::vector<double>{61, 67, 80, 94}, gt);
  CHECK(m.mae == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(m.rmse == doctest::Approx(std::sqrt(6.5)).epsilon(1e-14));
  CHECK(m.rmse >= m.mae);
}

TEST_CASE("pearson is undefined, never zero, on constant series; bad input throws") {
  auto m = hr_metrics(std::vector<double>{72, 72, 72}, std::vector<double>{60, 70, 80});
  CHECK_FALSE(m.r_defined);
  CHECK(std::isnan(m.pearson_r));
  CHECK(m.mae == doctest::Approx(22.0 / 3.0).epsilon(1e-14));
  CHECK_THROWS_AS(hr_metrics(std::vector<double>{1, 2}, std::vector<double>{1}), EvalError);
  CHECK_THROWS_AS(hr_metrics(std::vector<double>{}, std::vector<double>{}), EvalError);
}

TEST_CASE("rmse >= mae and |r| <= 1 on random series") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(40.0, 180.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + trial % 7;
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = u(rng);
      b[i] = u(rng);
    }
    const auto m = hr_metrics(a, b);
    CHECK(m.rmse >= m.mae);
    CHECK(m.mae >= 0.0);
    CHECK(std::abs(m.pearson_r) <= 1.0 + 1e-12);
  }
}

TEST_CASE("evaluate: oracle model scores zero on disjoint ordered windows") {
  const auto s = clips(2, 900, 8);
  const PulseModel oracle = [](const Sample& w) { return w.ppg_gt; };
  const auto r = evaluate(oracle, s);
  REQUIRE(r.windows.size() == 6);
  CHECK(r.metrics.mae == 0.0);
  CHECK(r.metrics.n == 6);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(r.windows[i].start == static_cast<int>(300 * i));
    CHECK(r.windows[i].sample_id == s[0].id);
    CHECK(r.windows[i].window_id == s[0].id + "@" + std::to_string(300 * i));
  }
  const PulseModel flat = [](const Sample& w) {
    return PulseSignal(std::vector<double>(static_cast<std::size_t>(w.clip.t), 0.0), w.clip.fps);
  };
  set_warnings_enabled(false);
  const auto f = evaluate(flat, s);
  set_warnings_enabled(true);
  CHECK(f.metrics.mae > 0.0);

  EvalOptions whole;
  whole.whole_clip = true;
  CHECK(evaluate(oracle, s, whole).windows.size() == 2);

  EvalOptions too_long;
  too_long.window = 1200;
  set_warnings_enabled(false);
  CHECK_THROWS_AS(evaluate(oracle, s, too_long), EvalError);
  set_warnings_enabled(true);
}

TEST_CASE("evaluate_model: zero-init magnifier equals the estimator alone") {
  const auto s = clips(2, 300, 32);
  const auto theta = init_tdm(1, tdm32());
  const auto psi = init_psmn(2, psmn_tiny());
  const auto a = evaluate_model(theta, nullptr, s);
  const auto b = evaluate_model(theta, &psi, s);
  REQUIRE(a.windows.size() == b.windows.size());
  for (std::size_t i = 0; i < a.windows.size(); ++i) {
    CHECK(a.windows[i].pred_bpm == b.windows[i].pred_bpm);
    CHECK(a.windows[i].gt_bpm == b.windows[i].gt_bpm);
  }
}

TEST_CASE("metrics.csv and summary.json formats") {
  const auto dir = scratch_dir("eval_reports");
  EvalResult r;
  r.windows = {{"a@0", "a", 0, 72.0, 71.0}, {"a@300", "a", 300, 80.0, 82.0}};
  r.metrics = hr_metrics(std::vector<double>{72, 80}, std::vector<double>{71, 82});
  write_metrics_csv(r, dir / "metrics.csv");
  const auto l = lines(dir / "metrics.csv");
  REQUIRE(l.size() == 3);
  CHECK(l[0] == "window_id,pred_bpm,gt_bpm");
  CHECK(l[1] == "a@0,72,71");
  CHECK(l[2] == "a@300,80,82");

  write_summary_json(r, dir / "summary.json", "abc", {{"data", "synthetic"}});
  const auto j = nlohmann::json::parse(read_file(dir / "summary.json"));
  CHECK(j.at("mae").get<double>() == doctest::Approx(1.5));
  CHECK(j.at("rmse").get<double>() == doctest::Approx(std::sqrt(2.5)));
  CHECK(j.at("n").get<int>() == 2);
  CHECK(j.at("config_hash") == "abc");
  CHECK(j.at("provenance").at("data") == "synthetic");
  CHECK(j.at("pearson_defined").get<bool>());

  r.metrics = hr_metrics(std::vector<double>{72, 72}, std::vector<double>{71, 82});
  write_summary_json(r, dir / "undefined.json", "abc");
  const auto u = nlohmann::json::parse(read_file(dir / "undefined.json"));
  CHECK(u.at("pearson_r").is_null());
  CHECK_FALSE(u.at("pearson_defined").get<bool>());
}

TEST_CASE("crf sweep: complete rows, crf 0 equals plain evaluation, csv schema") {
  const auto dir = scratch_dir("eval_sweep");
  SynthConfig tmpl;
  tmpl.t = 300;
  tmpl.h = tmpl.w = 32;
  DatasetOptions o;
  o.n = 2;
  const auto test = make_dataset(tmpl, o, dir / "test");
  const auto theta = init_tdm(1, tdm32());
  const auto psi = init_psmn(2, psmn_tiny());
  SweepOptions so;
  so.crfs = {0, 30};
  so.work_dir = dir / "work";
  so.load.size = 32;
  const auto rows = crf_sweep(theta, &psi, test, so);
  REQUIRE(rows.size() == 4);
  int seen_baseline = 0, seen_psmn = 0;
  for (const auto& r : rows) {
    seen_baseline += r.condition == "baseline";
    seen_psmn += r.condition == "with-psmn";
    CHECK(r.bitrate_kbps > 0.0);
    CHECK(r.mode == "intra");
  }
  CHECK(seen_baseline == 2);
  CHECK(seen_psmn == 2);
  LoadOptions lo;
  lo.size = 32;
  const auto plain = evaluate_model(theta, nullptr, load_all(test, lo));
  CHECK(rows[0].crf == 0);
  CHECK(rows[0].metrics.mae == plain.metrics.mae);
  CHECK(rows[0].bitrate_kbps == doctest::Approx(32.0 * 32 * 3 * 8 * 30 / 1000));
  CHECK(rows[0].snr_db > rows[2].snr_db);

  write_sweep_csv(rows, dir / "sweep.csv");
  const auto l = lines(dir / "sweep.csv");
  REQUIRE(l.size() == 5);
  CHECK(l[0] == "crf,condition,mode,mae,rmse,pearson_r,n,bitrate_kbps,snr_db");
  plot_sweep(rows, dir / "sweep.png");
  CHECK(fs::file_size(dir / "sweep.png") > 0);

  so.crfs = {52};
  CHECK_THROWS(crf_sweep(theta, nullptr, test, so));
}

TEST_CASE("compare report: delta table and winner") {
  const auto dir = scratch_dir("eval_compare");
  CompareReport rep;
  auto row = [](int crf, const char* s, double mae) {
    StrategyRow r;
    r.crf = crf;
    r.strategy = s;
    r.metrics.mae = mae;
    r.metrics.n = 3;
    return r;
  };
  rep.rows = {row(0, "two_stage", 1.0), row(0, "end_to_end", 2.0), row(0, "baseline", 1.5),
              row(20, "two_stage", 4.0), row(20, "end_to_end", 3.0), row(20, "baseline", 3.0),
              row(35, "two_stage", 5.0), row(35, "baseline", 6.0)};
  CHECK(find_row(rep, 20, "end_to_end")->metrics.mae == 3.0);
  CHECK(find_row(rep, 35, "end_to_end") == nullptr);
  write_compare_csv(rep, dir);
  const auto c = lines(dir / "compare.csv");
  CHECK(c[0] == "crf,strategy,mae,rmse,pearson_r,n");
  CHECK(c.size() == 9);
  const auto d = lines(dir / "compare_delta.csv");
  REQUIRE(d.size() == 4);
  CHECK(d[0] == "crf,two_stage_mae,end_to_end_mae,baseline_mae,delta_vs_end_to_end,delta_vs_baseline,winner");
  CHECK(d[1] == "0,1,2,1.5,-1,-0.5,two_stage");
  CHECK(d[2] == "20,4,3,3,1,1,tie");
  CHECK(d[3] == "35,5,nan,6,nan,-1,two_stage");
  plot_compare(rep, dir / "compare.png");
  CHECK(fs::file_size(dir / "compare.png") > 0);
}

TEST_CASE("compare_strategies and ablate_losses run end to end on a tiny set") {
  const auto dir = scratch_dir("eval_strategies");
  SynthConfig tmpl;
  tmpl.t = 300;
  tmpl.h = tmpl.w = 32;
  DatasetOptions o;
  o.n = 2;
  const auto train = make_dataset(tmpl, o, dir / "train");
  o.seed = 1;
  o.id_prefix = "t";
  const auto test = make_dataset(tmpl, o, dir / "test");
  LoadOptions lo;
  lo.size = 32;
  const auto stage1 = train_stage1(load_all(train, lo), quick(), tdm32());

  CompareOptions co;
  co.crfs = {0, 25};
  co.work_dir = dir / "work";
  co.stage2 = co.end_to_end = co.baseline = quick();
  co.tdm = tdm32();
  co.psmn = psmn_tiny();
  co.load = lo;
  std::vector<std::string> trained;
  co.on_trained = [&](int crf, const std::string& s, const Checkpoint&) {
    trained.push_back(std::to_string(crf) + s);
  };
  const auto rep = compare_strategies(*stage1.theta, train, test, co);
  CHECK(rep.rows.size() == 6);
  for (int crf : {0, 25}) {
    for (const char* s : {"two_stage", "end_to_end", "baseline"}) {
      const auto* r = find_row(rep, crf, s);
      REQUIRE(r != nullptr);
      CHECK(std::isfinite(r->metrics.mae));
      CHECK(r->metrics.n == 2);
    }
  }
  // The crf 0 baseline is the Stage I estimator itself.
  const auto plain = evaluate_model(*stage1.theta, nullptr, load_all(test, lo));
  CHECK(find_row(rep, 0, "baseline")->metrics.mae == plain.metrics.mae);
  CHECK(std::find(trained.begin(), trained.end(), "25two_stage") != trained.end());

  const auto rows = ablate_losses(load_all(train, lo), load_all(test, lo), quick(), tdm32());
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].terms == LossTerms::kTemporal);
  CHECK(rows[1].terms == LossTerms::kFrequency);
  CHECK(rows[2].terms == LossTerms::kCombined);
  CHECK(rows[2].lambda == 0.01);
  for (const auto& r : rows) CHECK(std::isfinite(r.metrics.mae));
  CHECK(rows[0].config_hash != rows[1].config_hash);
  CHECK(rows[1].config_hash != rows[2].config_hash);
  write_ablation_csv(rows, dir / "ablation.csv");
  const auto l = lines(dir / "ablation.csv");
  CHECK(l[0] == "loss,lambda,config_hash,mae,rmse,pearson_r,n");
  CHECK(l.size() == 4);
}

TEST_CASE("pixel classification: solid magenta, solid green, unsaturated grey") {
  VideoClip c(3, 8, 8, 30.0);
  std::vector<std::uint8_t> mask(64, 0);
  for (int i = 0; i < 20; ++i) mask[static_cast<std::size_t>(i)] = 1;
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      c.at(0, y, x, 0) = 1.0f, c.at(0, y, x, 1) = 0.0f, c.at(0, y, x, 2) = 1.0f;  // magenta, hue 300
      c.at(1, y, x, 0) = 0.1f, c.at(1, y, x, 1) = 0.9f, c.at(1, y, x, 2) = 0.2f;  // green
      c.at(2, y, x, 0) = c.at(2, y, x, 1) = c.at(2, y, x, 2) = 0.5f;              // grey
    }
  const auto n = classify_pixels(c, mask);
  CHECK(n.magenta == std::vector<double>{20, 0, 0});
  CHECK(n.green == std::vector<double>{0, 20, 0});
}

TEST_CASE("pulse view: zero outside the mask, unit-centred inside") {
  const auto s = clips(1, 60, 16)[0];
  const auto v = pulse_view(s.clip, s.mask);
  CHECK(v.t == 60);
  double mean = 0.0;
  int n = 0;
  for (int t = 0; t < v.t; ++t)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x)
        for (int ch = 0; ch < 3; ++ch) {
          const float val = v.at(t, y, x, ch);
          if (s.mask[static_cast<std::size_t>(y) * 16 + x] == 0) {
            REQUIRE(val == 0.0f);
          } else {
            REQUIRE(val >= 0.0f);
            REQUIRE(val <= 1.0f);
            mean += val;
            ++n;
          }
        }
  CHECK(mean / n == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("visualize: zero-init magnifier leaves frames unchanged and writes all outputs") {
  const auto dir = scratch_dir("eval_visualize");
  const auto s = clips(1, 300, 32)[0];
  const auto theta = init_tdm(1, tdm32());
  const auto psi = init_psmn(2, psmn_tiny());
  const auto mag = psmn_forward(psi, to_volume(s.clip), 30.0);
  CHECK(to_clip(mag.volume, 30.0).rgb == s.clip.rgb);

  VisualizeOptions o;
  const auto r = visualize_magnification(psi, theta, s, dir, o);
  CHECK(r.counts.green.size() == 300);
  CHECK(r.counts.magenta.size() == 300);
  CHECK(r.gt_hr.bpm == s.hr_gt[0].bpm);
  for (const char* f : {"activity.csv", "activity.png", "signals.png"}) CHECK(fs::exists(dir / f));
  CHECK(fs::exists(dir / "frames" / "000000.png"));
  CHECK(fs::exists(dir / "pulse_frames" / "000299.png"));
  CHECK(lines(dir / "activity.csv")[0] == "frame,t_sec,green,magenta");
  // The pulse view of an untrained identity magnifier already follows the
  // synthetic pulse, whose green channel dominates.
  CHECK(std::abs(r.green_hr.bpm - r.gt_hr.bpm) <= 1.0);
}
