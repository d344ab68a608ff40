#include <cmath>
#include <fstream>

#include "doctest.h"
#include "pmag/training.hpp"
#include "pmag/util.hpp"
#include "support.hpp"

using namespace pmag;
using pmag::test::scratch_dir;

namespace fs = std::filesystem;

namespace {

// Four 120-frame 32x32 clips with a stronger pulse so a few epochs show progress.
std::vector<Sample> tiny_data(std::uint64_t seed = 1, int crf = 0) {
  SynthConfig tmpl;
  tmpl.t = 120;
  tmpl.h = tmpl.w = 32;
  tmpl.pulse_amplitude = 0.02;
  DatasetOptions o;
  o.n = 4;
  o.seed = seed;
  auto s = synth_samples(tmpl, o);
  if (crf > 0) {
    for (auto& x : s) x.compression = CompressionProfile{"h264", crf};
  }
  return s;
}

TrainConfig tiny_cfg(int epochs = 2) {
  TrainConfig c;
  c.window = 120;
  c.overlap = 10;
  c.max_shift = 5;
  c.epochs = epochs;
  c.lr = 1e-3;
  c.seed = 3;
  return c;
}

TdmConfig tiny_tdm() {
  TdmConfig c;
  c.input_size = 32;
  return c;
}

PsmnConfig tiny_psmn() {
  PsmnConfig c;
  c.widths = {2, 4, 4};
  c.bottleneck = 4;
  return c;
}

ModelParams frozen(ModelParams p) {
  p.frozen = true;
  return p;
}

}  // namespace

TEST_CASE("train config defaults and validation") {
  TrainConfig c;
  CHECK(c.lr == 1e-4);
  CHECK(c.weight_decay == 1e-5);
  CHECK(c.shift_lr == 1e-2);
  CHECK(c.lambda == 0.01);
  CHECK(c.window == 300);
  CHECK(c.overlap == 10);
  CHECK_NOTHROW(c.validate());
  for (auto bad : {&TrainConfig::lr, &TrainConfig::shift_lr}) {
    TrainConfig b;
    b.*bad = 0.0;
    CHECK_THROWS_AS(b.validate(), TrainError);
  }
  TrainConfig b;
  b.overlap = 300;
  CHECK_THROWS_AS(b.validate(), TrainError);
  b = TrainConfig{};
  b.lambda = -1.0;
  CHECK_THROWS(b.validate());
  const auto back = train_config_from_json(to_json(tiny_cfg()));
  CHECK(to_json(back) == to_json(tiny_cfg()));
  CHECK(procedure_from_string(to_string(Procedure::kEndToEnd)) == Procedure::kEndToEnd);
  CHECK_THROWS_AS(procedure_from_string("stage3"), CheckpointError);
}

TEST_CASE("adamw matches a hand-computed two-step trajectory") {
  TensorMap p{{"w", Tensor({2})}};
  p["w"].data = {1.0, -2.0};
  AdamState st;
  const double lr = 0.1, wd = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const std::vector<std::vector<double>> grads{{0.5, 0.0}, {-1.0, 3.0}};
  std::vector<double> x{1.0, -2.0}, m{0.0, 0.0}, v{0.0, 0.0};
  for (int step = 1; step <= 2; ++step) {
    TensorMap g{{"w", Tensor({2})}};
    g["w"].data = grads[static_cast<std::size_t>(step - 1)];
    adamw_step(p, g, st, lr, wd);
    for (std::size_t i = 0; i < 2; ++i) {
      const double gi = grads[static_cast<std::size_t>(step - 1)][i];
      x[i] -= lr * wd * x[i];
      m[i] = b1 * m[i] + (1 - b1) * gi;
      v[i] = b2 * v[i] + (1 - b2) * gi * gi;
      const double mh = m[i] / (1 - std::pow(b1, step));
      const double vh = v[i] / (1 - std::pow(b2, step));
      x[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
  CHECK(st.step == 2);
  CHECK(p["w"].data[0] == doctest::Approx(x[0]).epsilon(1e-14));
  CHECK(p["w"].data[1] == doctest::Approx(x[1]).epsilon(1e-14));
  // First step moves by about lr regardless of gradient scale.
  CHECK(std::abs(x[0] - 1.0) < 0.25);
}

TEST_CASE("grad norm") {
  TensorMap g{{"a", Tensor({2})}, {"b", Tensor({1})}};
  g["a"].data = {3.0, 0.0};
  g["b"].data = {4.0};
  CHECK(grad_norm(g) == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(grad_norm({}) == 0.0);
}

TEST_CASE("training windows follow the stride") {
  SynthConfig tmpl;
  tmpl.t = 600;
  tmpl.h = tmpl.w = 16;
  DatasetOptions o;
  o.n = 2;
  const auto s = synth_samples(tmpl, o);
  TrainConfig c;
  const auto w = training_windows(s, c);
  // Starts 0 and 290 fit in 600 frames; 580 would run past the end.
  REQUIRE(w.size() == 4);
  CHECK(w[1].window_start == 290);
  CHECK(w[0].subject == s[0].subject);
  CHECK(w[3].subject == s[1].subject);
}

TEST_CASE("checkpoint round trip is lossless and byte stable; hash mismatch is refused") {
  const auto dir = scratch_dir("train_ckpt");
  const auto data = tiny_data();
  const auto ck = train_stage1(data, tiny_cfg(1), tiny_tdm());
  save_checkpoint(ck, dir / "a.ckpt");
  const auto back = load_checkpoint(dir / "a.ckpt", ck.config_hash());
  save_checkpoint(back, dir / "b.ckpt");
  CHECK(read_file(dir / "a.ckpt") == read_file(dir / "b.ckpt"));
  CHECK(hash_params(back.theta->tensors) == hash_params(ck.theta->tensors));
  CHECK(back.shifts.logits(data[0].subject) == ck.shifts.logits(data[0].subject));
  CHECK(back.epoch == 1);
  CHECK(back.rng_state == ck.rng_state);
  CHECK(back.history.size() == 1);
  CHECK(back.history[0].loss_total == ck.history[0].loss_total);
  CHECK(to_json(back.config) == to_json(ck.config));
  CHECK(back.adam_theta.step == ck.adam_theta.step);
  CHECK_FALSE(back.psi.has_value());

  CHECK_THROWS_AS(load_checkpoint(dir / "a.ckpt", std::string(64, '0')), CheckpointError);
  std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  CHECK_THROWS_AS(load_checkpoint(dir / "junk.ckpt"), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint(dir / "absent.ckpt"), CheckpointError);
  auto bytes = read_file(dir / "a.ckpt");
  bytes.resize(bytes.size() / 2);
  write_file_atomic(dir / "half.ckpt", bytes);
  CHECK_THROWS_AS(load_checkpoint(dir / "half.ckpt"), CheckpointError);
}

TEST_CASE("loss decreases for all three procedures") {
  const auto data = tiny_data();
  const auto cdata = tiny_data(1, 28);
  auto first_last = [](const Checkpoint& ck) {
    REQUIRE(ck.history.size() >= 2);
    return std::pair{ck.history.front().loss_total, ck.history.back().loss_total};
  };
  const auto s1 = train_stage1(data, tiny_cfg(6), tiny_tdm());
  auto [a1, b1] = first_last(s1);
  CHECK(b1 < a1);
  const auto s2 = train_stage2(cdata, frozen(*s1.theta), tiny_cfg(4), tiny_psmn());
  auto [a2, b2] = first_last(s2);
  CHECK(b2 < a2);
  const auto e2e = train_end_to_end(cdata, tiny_cfg(6), tiny_tdm(), tiny_psmn());
  auto [a3, b3] = first_last(e2e);
  CHECK(b3 < a3);
  MESSAGE("first/last epoch loss: stage1 " << a1 << "/" << b1 << ", stage2 " << a2 << "/" << b2
                                           << ", end-to-end " << a3 << "/" << b3);
}

TEST_CASE("stage II freezes the estimator; end-to-end moves both networks") {
  const auto data = tiny_data(2, 28);
  auto theta = frozen(init_tdm(4, tiny_tdm()));
  const auto before = hash_params(theta.tensors);
  int epochs_seen = 0;
  TrainHooks hooks;
  hooks.on_epoch = [&](const Checkpoint& ck, const EpochRecord&) {
    ++epochs_seen;
    CHECK(hash_params(ck.theta->tensors) == before);
  };
  const auto ck = train_stage2(data, theta, tiny_cfg(2), tiny_psmn(), hooks);
  CHECK(epochs_seen == 2);
  CHECK(hash_params(ck.theta->tensors) == before);
  CHECK(hash_params(ck.psi->tensors) != hash_params(init_psmn(0, tiny_psmn()).tensors));
  // Fresh, uniform shift logits per stage.
  ShiftDistribution fresh(5);
  CHECK(ck.shifts.offsets() == fresh.offsets());

  theta.frozen = false;
  CHECK_THROWS_AS(train_stage2(data, theta, tiny_cfg(1), tiny_psmn()), TrainError);
  CHECK_THROWS_AS(train_stage2(data, init_psmn(1, tiny_psmn()), tiny_cfg(1), tiny_psmn()), TrainError);

  auto cfg = tiny_cfg(1);
  const auto e2e = train_end_to_end(data, cfg, tiny_tdm(), tiny_psmn());
  CHECK(hash_params(e2e.theta->tensors) != hash_params(init_tdm(cfg.seed, tiny_tdm()).tensors));
  CHECK(e2e.psi->parameter_count() == init_psmn(0, tiny_psmn()).parameter_count());
  CHECK(hash_params(e2e.psi->tensors) != hash_params(init_psmn(cfg.seed, tiny_psmn()).tensors));
}

TEST_CASE("stage II refuses mixed compression levels unless overridden") {
  auto data = tiny_data(3, 20);
  data[1].compression->crf = 35;
  const auto theta = frozen(init_tdm(5, tiny_tdm()));
  try {
    train_stage2(data, theta, tiny_cfg(1), tiny_psmn());
    FAIL("mixed CRFs accepted");
  } catch (const TrainError& e) {
    CHECK(std::string(e.what()).find("20, 35") != std::string::npos);
  }
  auto cfg = tiny_cfg(1);
  cfg.allow_mixed_crf = true;
  CHECK_NOTHROW(train_stage2(data, theta, cfg, tiny_psmn()));
}

TEST_CASE("determinism: same seed gives identical checkpoints; resume matches an uninterrupted run") {
  const auto dir = scratch_dir("train_determinism");
  const auto data = tiny_data(4);
  const auto a = train_stage1(data, tiny_cfg(2), tiny_tdm());
  const auto b = train_stage1(data, tiny_cfg(2), tiny_tdm());
  save_checkpoint(a, dir / "a.ckpt");
  save_checkpoint(b, dir / "b.ckpt");
  CHECK(sha256_file(dir / "a.ckpt") == sha256_file(dir / "b.ckpt"));

  auto other = tiny_cfg(2);
  other.seed = 4;
  CHECK(hash_params(train_stage1(data, other, tiny_tdm()).theta->tensors) != hash_params(a.theta->tensors));

  const auto half = train_stage1(data, tiny_cfg(1), tiny_tdm());
  save_checkpoint(half, dir / "half.ckpt");
  const auto loaded = load_checkpoint(dir / "half.ckpt");
  TrainHooks hooks;
  hooks.resume = &loaded;
  const auto resumed = train_stage1(data, tiny_cfg(2), tiny_tdm(), hooks);
  CHECK(resumed.epoch == 2);
  CHECK(hash_params(resumed.theta->tensors) == hash_params(a.theta->tensors));
  CHECK(resumed.shifts.logits(data[0].subject) == a.shifts.logits(data[0].subject));
  CHECK(resumed.history.size() == 2);
  CHECK(resumed.history[1].loss_total == a.history[1].loss_total);

  // Resuming into another procedure or architecture is refused.
  const auto s2 = train_stage2(tiny_data(4, 20), frozen(*a.theta), tiny_cfg(1), tiny_psmn());
  TrainHooks wrong;
  wrong.resume = &s2;
  CHECK_THROWS_AS(train_stage1(data, tiny_cfg(2), tiny_tdm(), wrong), TrainError);
  auto other_arch = tiny_tdm();
  other_arch.width1 = 4;
  wrong.resume = &half;
  CHECK_THROWS_AS(train_stage1(data, tiny_cfg(2), other_arch, wrong), TrainError);
}

TEST_CASE("divergence aborts with a diagnostic checkpoint") {
  const auto dir = scratch_dir("train_divergence");
  const auto data = tiny_data(5);
  auto init = init_tdm(7, tiny_tdm());
  init.tensors.begin()->second.data[0] = std::numeric_limits<double>::quiet_NaN();
  TrainHooks hooks;
  hooks.diagnostic_path = dir / "diag.ckpt";
  CHECK_THROWS_AS(train_stage1_from(data, init, tiny_cfg(1), hooks), DivergenceError);
  CHECK(fs::exists(dir / "diag.ckpt"));
  CHECK_NOTHROW(load_checkpoint(dir / "diag.ckpt"));
}

TEST_CASE("gradient clipping is recorded in the history") {
  const auto data = tiny_data(6);
  auto cfg = tiny_cfg(1);
  cfg.clip_norm = 1e-9;
  const auto ck = train_stage1(data, cfg, tiny_tdm());
  CHECK(ck.history[0].clipped_steps > 0);
  cfg.clip_norm = 0.0;
  CHECK(train_stage1(data, cfg, tiny_tdm()).history[0].clipped_steps == 0);

  const auto dir = scratch_dir("train_history");
  write_history_csv(ck.history, dir / "history.csv");
  const auto text = read_file(dir / "history.csv");
  CHECK(text.rfind("epoch,split,loss_temp,loss_freq,loss_total\n", 0) == 0);
  CHECK(text.find("\n1,train,") != std::string::npos);
}
