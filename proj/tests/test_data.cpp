#include <cmath>
#include <fstream>
#include <set>

#include "doctest.h"
#include "pmag/data.hpp"
#include "pmag/util.hpp"
#include "support.hpp"

using namespace pmag;
using pmag::test::scratch_dir;
using pmag::test::tone;

namespace {

SynthConfig small_cfg() {
  SynthConfig c;
  c.t = 90;
  c.h = c.w = 24;
  return c;
}

// Independent waveform: phase accumulated by fine trapezoidal integration of hr(t)/60.
double waveform_oracle(double start, double end, double duration, double phase0, double t) {
  const int steps = 20000;
  double phi = phase0;
  const double dt = t / steps;
  auto hr = [&](double u) { return start + (end - start) * u / duration; };
  for (int i = 0; i < steps; ++i) phi += 0.5 * (hr(i * dt) + hr((i + 1) * dt)) / 60.0 * dt;
  return std::sin(2.0 * std::numbers::pi * phi) + 0.3 * std::sin(4.0 * std::numbers::pi * phi + 0.7);
}

}  // namespace

TEST_CASE("waveform follows the integrated HR trajectory") {
  SynthConfig c;
  c.t = 900;
  c.hr = {60.0, 90.0};
  c.phase = 0.25;
  const auto s = synth_ppg_waveform(c);
  REQUIRE(s.size() == 900);
  for (int i : {0, 1, 123, 450, 899}) {
    CHECK(std::abs(s.samples[static_cast<std::size_t>(i)] -
                   waveform_oracle(60.0, 90.0, 30.0, 0.25, i / 30.0)) <= 1e-6);
  }
}

TEST_CASE("constant HR lands on its bin; a ramp gives increasing window estimates") {
  SynthConfig c;
  c.hr = {72.0, 72.0};
  CHECK(estimate_hr(synth_ppg_waveform(c)).bpm == 72.0);

  c.t = 900;
  c.hr = {60.0, 90.0};
  const auto hr = window_hr(denoise_ppg(synth_ppg_waveform(c)).signal, 300);
  REQUIRE(hr.size() == 3);
  CHECK(hr[0].bpm < hr[1].bpm);
  CHECK(hr[1].bpm < hr[2].bpm);
  // Window means of the ramp are 65, 75 and 85 BPM.
  CHECK(std::abs(hr[0].bpm - 65.0) <= 2.0);
  CHECK(std::abs(hr[1].bpm - 75.0) <= 2.0);
  CHECK(std::abs(hr[2].bpm - 85.0) <= 2.0);
}

TEST_CASE("synth config validation") {
  SynthConfig c;
  c.hr = {30.0, 72.0};
  CHECK_THROWS_AS(synth_ppg_waveform(c), DataError);
  c.hr = {72.0, 200.0};
  CHECK_THROWS_AS(c.validate(), DataError);
  c = SynthConfig{};
  c.h = 4;
  CHECK_THROWS_AS(c.validate(), DataError);
  c = SynthConfig{};
  c.mask.rx = 0.0;
  CHECK_THROWS_AS(c.validate(), DataError);
  c = SynthConfig{};
  c.mask = {0.5, 0.5, 0.001, 0.001};  // smaller than a pixel centre can hit
  c.h = c.w = 8;
  CHECK_THROWS_AS(render_video(c, synth_ppg_waveform(c)), DataError);
  c = small_cfg();
  CHECK_THROWS_AS(render_video(c, PulseSignal(std::vector<double>(10, 0.0), 30.0)), DataError);
}

TEST_CASE("render: mask discipline, clamping, static video and determinism") {
  auto c = small_cfg();
  c.motion_amp = 2.0;
  const auto s = render_video(c, synth_ppg_waveform(c));
  REQUIRE(s.mask.size() == 24u * 24u);
  for (int t = 0; t < c.t; ++t) {
    const double cx = c.mask.cx * c.w + c.motion_amp * std::sin(2.0 * std::numbers::pi * c.motion_hz * t / c.fps);
    for (int y = 0; y < c.h; ++y)
      for (int x = 0; x < c.w; ++x) {
        const double dx = (x + 0.5 - cx) / (c.mask.rx * c.w);
        const double dy = (y + 0.5 - c.mask.cy * c.h) / (c.mask.ry * c.h);
        if (dx * dx + dy * dy > 1.0) {
          for (int ch = 0; ch < 3; ++ch) REQUIRE(s.clip.at(t, y, x, ch) == 0.0f);
        }
      }
  }
  for (float v : s.clip.rgb) {
    REQUIRE(v >= 0.0f);
    REQUIRE(v <= 1.0f);
  }

  auto still = small_cfg();
  still.pulse_amplitude = 0.0;
  still.noise_std = 0.0;
  const auto st = render_video(still, synth_ppg_waveform(still));
  const std::size_t frame = 24 * 24 * 3;
  float worst = 0.0f;
  for (int t = 1; t < still.t; ++t)
    for (std::size_t i = 0; i < frame; ++i) worst = std::max(worst, std::abs(st.clip.rgb[t * frame + i] - st.clip.rgb[(t - 1) * frame + i]));
  CHECK(worst == 0.0f);

  const auto again = render_video(c, synth_ppg_waveform(c));
  CHECK(again.clip.rgb == s.clip.rgb);
  CHECK(again.mask == s.mask);
}

TEST_CASE("noise-free render: masked green mean tracks the pulse") {
  SynthConfig c;
  c.t = 300;
  c.h = c.w = 32;
  c.noise_std = 0.0;
  const auto ppg = synth_ppg_waveform(c);
  const auto s = render_video(c, ppg);
  const auto green = bandpass(masked_channel_mean(s.clip, s.mask, 1));
  CHECK(pearson(green.samples, bandpass(ppg).samples) >= 0.99);
}

TEST_CASE("ground truth consistency: per-window HR equals the configured HR within one bin") {
  SynthConfig tmpl;
  tmpl.t = 300;
  tmpl.h = tmpl.w = 16;
  DatasetOptions o;
  o.n = 12;
  o.seed = 5;
  const auto cfgs = dataset_configs(tmpl, o);
  const auto samples = synth_samples(tmpl, o);
  REQUIRE(samples.size() == 12);
  std::set<std::string> subjects;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    subjects.insert(s.subject);
    CHECK(s.ppg_gt.size() == static_cast<std::size_t>(s.clip.t));
    REQUIRE(s.hr_gt.size() == 1);
    CHECK(std::abs(s.hr_gt[0].bpm - cfgs[i].hr.start_bpm) <= 1.0);
    CHECK(cfgs[i].hr.start_bpm >= 55.0);
    CHECK(cfgs[i].hr.start_bpm <= 95.0);
    CHECK(estimate_hr(denoise_ppg(s.ppg_gt).signal).bpm == s.hr_gt[0].bpm);
  }
  CHECK(subjects.size() == 12);
}

TEST_CASE("window starts and windowing partitions") {
  CHECK(window_starts(900, 300, 10) == std::vector<int>{0, 290, 580});
  CHECK(window_starts(900, 300, 0) == std::vector<int>{0, 300, 600});
  CHECK(window_starts(1000, 300, 0) == std::vector<int>{0, 300, 600});
  CHECK_THROWS_AS(window_starts(299, 300, 0), DataError);
  CHECK_THROWS_AS(window_starts(900, 300, 300), DataError);
  CHECK_THROWS_AS(window_starts(900, 300, -1), DataError);

  SynthConfig c;
  c.t = 900;
  c.h = c.w = 8;
  c.mask = {0.5, 0.5, 0.5, 0.5};
  c.hr = {60.0, 90.0};
  auto s = render_video(c, synth_ppg_waveform(c));
  s.id = s.subject = "x";
  const auto train = window_clip(s, 300, 10);
  REQUIRE(train.size() == 3);
  for (std::size_t k = 1; k < train.size(); ++k) {
    CHECK(train[k].window_start - train[k - 1].window_start == 290);
  }
  const auto eval = window_clip(s, 300, 0);
  REQUIRE(eval.size() == 3);
  for (std::size_t k = 0; k < eval.size(); ++k) {
    const auto& w = eval[k];
    CHECK(w.window_start == static_cast<int>(300 * k));
    CHECK(w.clip.t == 300);
    CHECK(w.ppg_gt.size() == 300);
    REQUIRE(w.hr_gt.size() == 1);
    CHECK(w.subject == "x");
    // Window contents are the source frames.
    CHECK(w.clip.at(17, 4, 4, 1) == s.clip.at(w.window_start + 17, 4, 4, 1));
    CHECK(w.ppg_gt.samples[5] == s.ppg_gt.samples[static_cast<std::size_t>(w.window_start + 5)]);
  }
  CHECK(eval[0].hr_gt[0].bpm < eval[2].hr_gt[0].bpm);
}

TEST_CASE("make_dataset: manifest, files and determinism") {
  const auto dir = scratch_dir("data_make");
  SynthConfig tmpl;
  tmpl.t = 60;
  tmpl.h = tmpl.w = 16;
  DatasetOptions o;
  o.n = 3;
  o.seed = 9;
  const auto m = make_dataset(tmpl, o, dir / "a");
  const auto m2 = make_dataset(tmpl, o, dir / "b");
  REQUIRE(m.records.size() == 3);
  CHECK(read_file(dir / "a" / "manifest.json").size() > 0);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& r = m.records[i];
    CHECK(std::filesystem::is_directory(m.root / r.frames));
    CHECK(std::filesystem::exists(m.root / r.gt));
    CHECK(std::filesystem::exists(m.root / r.mask));
    CHECK(r.num_frames == 60);
    CHECK(r.id == m2.records[i].id);
    CHECK(r.hr_bpm == m2.records[i].hr_bpm);
    CHECK(sha256_file(m.root / r.gt) == sha256_file(m2.root / m2.records[i].gt));
    CHECK(sha256_file(m.root / r.frames / "000007.png") ==
          sha256_file(m2.root / m2.records[i].frames / "000007.png"));
  }
  const auto back = load_manifest(dir / "a" / "manifest.json");
  CHECK(back.records.size() == 3);
  CHECK(back.records[1].subject == m.records[1].subject);
  CHECK(back.fps == 30.0);
}

TEST_CASE("load_sample: PNG round trip within 8-bit quantisation") {
  const auto dir = scratch_dir("data_roundtrip");
  SynthConfig tmpl;
  tmpl.t = 60;
  tmpl.h = tmpl.w = 16;
  DatasetOptions o;
  o.n = 1;
  const auto src = synth_samples(tmpl, o);
  const auto m = make_dataset(tmpl, o, dir);
  LoadOptions lo;
  lo.size = 16;
  const auto s = load_sample(m, m.records[0], lo);
  REQUIRE(s.clip.rgb.size() == src[0].clip.rgb.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < s.clip.rgb.size(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(s.clip.rgb[i]) - src[0].clip.rgb[i]));
  }
  CHECK(worst <= 1.0 / 255.0 + 1e-9);
  CHECK(s.mask == src[0].mask);
  CHECK(s.ppg_gt.size() == 60);
  for (std::size_t i = 0; i < 60; ++i) {
    CHECK(std::abs(s.ppg_gt.samples[i] - src[0].ppg_gt.samples[i]) <= 1e-9);
  }

  lo.size = 8;
  const auto small = load_sample(m, m.records[0], lo);
  CHECK(small.clip.h == 8);
  CHECK(small.clip.w == 8);
  CHECK(small.mask.size() == 64);
  // Area interpolation by 2 is the mean of each 2x2 block.
  const auto& c = s.clip;
  const double block = (c.at(3, 4, 6, 1) + c.at(3, 4, 7, 1) + c.at(3, 5, 6, 1) + c.at(3, 5, 7, 1)) / 4.0;
  CHECK(std::abs(small.clip.at(3, 2, 3, 1) - block) <= 1e-6);
}

TEST_CASE("load_sample: resampled ground truth, missing mask, missing files, length mismatch") {
  const auto dir = scratch_dir("data_ingest");
  SynthConfig tmpl;
  tmpl.t = 300;
  tmpl.h = tmpl.w = 8;
  tmpl.mask = {0.5, 0.5, 0.5, 0.5};
  DatasetOptions o;
  o.n = 1;
  auto m = make_dataset(tmpl, o, dir);
  auto& r = m.records[0];

  // A 77 BPM tone recorded at 256 Hz over the same 10 s.
  write_pulse_csv(m.root / r.gt, PulseSignal(tone(2560, 256.0, 77.0 / 60.0), 256.0), "ppg");
  set_warnings_enabled(false);
  std::filesystem::remove(m.root / r.mask);
  const auto s = load_sample(m, r);
  set_warnings_enabled(true);
  CHECK(s.ppg_gt.size() == 300);
  CHECK(s.ppg_gt.fs == 30.0);
  CHECK(estimate_hr(s.ppg_gt).bpm == 77.0);
  CHECK(std::all_of(s.mask.begin(), s.mask.end(), [](auto v) { return v == 1; }));

  write_pulse_csv(m.root / r.gt, PulseSignal(tone(2000, 256.0, 1.2), 256.0), "ppg");  // 7.8 s
  CHECK_THROWS_AS(load_sample(m, r), DataError);

  std::filesystem::remove(m.root / r.gt);
  CHECK_THROWS_AS(load_manifest(dir / "manifest.json"), DataError);
  try {
    load_manifest(dir / "manifest.json");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("gt.csv") != std::string::npos);
  }
  CHECK_THROWS_AS(load_manifest(dir / "nope.json"), DataError);
  std::ofstream(dir / "bad.json") << "{\"records\": 3}";
  CHECK_THROWS_AS(load_manifest(dir / "bad.json"), DataError);
}

TEST_CASE("masked channel mean") {
  VideoClip c(2, 8, 8, 30.0, 0.0f);
  std::vector<std::uint8_t> mask(64, 0);
  mask[0] = mask[9] = 1;
  c.at(0, 0, 0, 1) = 0.2f;
  c.at(0, 1, 1, 1) = 0.4f;
  c.at(1, 0, 0, 1) = 1.0f;
  c.at(0, 5, 5, 1) = 0.9f;  // outside the mask
  const auto m = masked_channel_mean(c, mask, 1);
  CHECK(m.samples[0] == doctest::Approx(0.3).epsilon(1e-6));
  CHECK(m.samples[1] == doctest::Approx(0.5).epsilon(1e-6));
  CHECK_THROWS_AS(masked_channel_mean(c, std::vector<std::uint8_t>(64, 0)), DataError);
  CHECK_THROWS_AS(masked_channel_mean(c, std::vector<std::uint8_t>(10, 1)), DataError);
}
