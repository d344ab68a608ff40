#include <cmath>
#include <numeric>

#include "doctest.h"
#include "pmag/losses.hpp"
#include "support.hpp"

using namespace pmag;
using pmag::test::gaussian;
using pmag::test::rel_err;
using pmag::test::tone;

namespace {

PulseSignal sig(std::vector<double> x) { return PulseSignal(std::move(x), 30.0); }

ShiftDistribution point_mass(int k0, int max_offset = 15) {
  ShiftDistribution d(max_offset);
  d.register_subject("s");
  const auto& off = d.offsets();
  for (std::size_t i = 0; i < off.size(); ++i) d.logits("s")[i] = off[i] == k0 ? 50.0 : 0.0;
  return d;
}

// Brute-force valid-region mse of pred against gt delayed by k.
double shifted_mse_oracle(const std::vector<double>& pred, const std::vector<double>& gt, int k) {
  double acc = 0.0;
  int n = 0;
  for (int t = 0; t < static_cast<int>(pred.size()); ++t) {
    const int s = t - k;
    if (s < 0 || s >= static_cast<int>(gt.size())) continue;
    acc += std::pow(pred[static_cast<std::size_t>(t)] - gt[static_cast<std::size_t>(s)], 2);
    ++n;
  }
  return acc / n;
}

template <class F>
double central_diff(F&& f, double& x, double h = 1e-5) {
  const double x0 = x;
  x = x0 + h;
  const double fp = f();
  x = x0 - h;
  const double fm = f();
  x = x0;
  return (fp - fm) / (2.0 * h);
}

}  // namespace

TEST_CASE("shift distribution defaults and validation") {
  ShiftDistribution d;
  CHECK(d.offsets().size() == 31);
  CHECK(d.offsets().front() == -15);
  CHECK(d.offsets().back() == 15);
  CHECK(d.max_abs_offset() == 15);
  CHECK_THROWS_AS(ShiftDistribution(std::vector<int>{1, 2}), LossError);
  CHECK_THROWS_AS(ShiftDistribution(std::vector<int>{-2, 0, 1}), LossError);
  CHECK_THROWS_AS(shift_probabilities(d, "nobody"), LossError);
}

TEST_CASE("shift probabilities: uniform start, saturation, normalisation, shift invariance") {
  ShiftDistribution d;
  d.register_subject("a");
  for (double p : shift_probabilities(d, "a")) CHECK(p == doctest::Approx(1.0 / 31.0).epsilon(1e-14));

  const auto pm = point_mass(4);
  const auto p = shift_probabilities(pm, "s");
  CHECK(p[19] >= 1.0 - 1e-9);

  auto& l = d.logits("a");
  const auto r = gaussian(l.size(), 3, 5.0);
  std::copy(r.begin(), r.end(), l.begin());
  const auto q = shift_probabilities(d, "a");
  CHECK(std::accumulate(q.begin(), q.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-9));
  for (double v : q) CHECK(v >= 0.0);
  for (double& v : l) v += 123.0;
  const auto q2 = shift_probabilities(d, "a");
  for (std::size_t i = 0; i < q.size(); ++i) CHECK(std::abs(q[i] - q2[i]) <= 1e-12);
}

TEST_CASE("talos: point mass at zero is plain mse") {
  const auto pred = gaussian(120, 1);
  const auto gt = gaussian(120, 2);
  CHECK(std::abs(talos_loss(sig(pred), sig(gt), point_mass(0), "s") - mse(pred, gt)) <= 1e-9);
  ShiftDistribution only_zero(std::vector<int>{0});
  only_zero.register_subject("s");
  CHECK(talos_loss(sig(pred), sig(gt), only_zero, "s") == doctest::Approx(mse(pred, gt)).epsilon(1e-15));
}

TEST_CASE("talos: perfectly aligned shift gives zero") {
  const auto gt = gaussian(120, 5);
  for (int k0 : {-6, 3, 9}) {
    const auto pred = shift(sig(gt), k0);
    CHECK(talos_loss(pred, sig(gt), point_mass(k0), "s") <= 1e-12);
  }
}

TEST_CASE("talos: uniform over {-1,0,1} is the mean of the shifted mses") {
  const auto pred = gaussian(120, 6);
  const auto gt = gaussian(120, 7);
  ShiftDistribution d(1);
  d.register_subject("s");
  const double oracle = (shifted_mse_oracle(pred, gt, -1) + shifted_mse_oracle(pred, gt, 0) +
                         shifted_mse_oracle(pred, gt, 1)) / 3.0;
  CHECK(talos_loss(sig(pred), sig(gt), d, "s") == doctest::Approx(oracle).epsilon(1e-12));
  CHECK(talos_loss(sig(pred), sig(gt), d, "s") >= 0.0);
}

TEST_CASE("talos: errors") {
  ShiftDistribution d;
  d.register_subject("s");
  CHECK_THROWS_AS(talos_loss(sig(gaussian(120, 1)), sig(gaussian(100, 1)), d, "s"), LossError);
  // max |k| must stay below T/4
  CHECK_THROWS_AS(talos_loss(sig(gaussian(60, 1)), sig(gaussian(60, 2)), d, "s"), LossError);
}

TEST_CASE("freq loss: zero and flat spectra give log(bins)") {
  const PulseSignal z(std::vector<double>(300, 0.0), 30.0);
  CHECK(std::abs(freq_loss(z, HRValue{72.0}) - std::log(141.0)) <= 1e-9);
  CHECK(std::abs(freq_loss(z, HRValue{180.0}) - std::log(141.0)) <= 1e-9);
  // A flat in-band spectrum: impulse responses are not flat on a coarse grid,
  // so check the uniform case through a custom grid with one bin.
  FrequencyGrid one{1.19, 1.21, 1.0};  // the single bin 72 BPM
  LossConfig cfg;
  cfg.grid = one;
  CHECK(std::abs(freq_loss(sig(gaussian(300, 3)), HRValue{72.0}, cfg)) <= 1e-12);
}

TEST_CASE("freq loss: tone at the target bin beats a tone 20 BPM away") {
  const double on = freq_loss(sig(tone(300, 30.0, 1.2)), HRValue{72.0});
  const double off = freq_loss(sig(tone(300, 30.0, 92.0 / 60.0)), HRValue{72.0});
  CHECK(on < off);
  CHECK(on >= 0.0);
  CHECK(std::isfinite(freq_loss(sig(gaussian(300, 2, 1e-200)), HRValue{72.0})));
  CHECK_THROWS(freq_loss(sig(tone(300, 30.0, 1.2)), HRValue{20.0}));
}

TEST_CASE("combined loss decomposition and monotonicity in lambda") {
  const auto pred = gaussian(300, 8);
  const auto gt = gaussian(300, 9);
  ShiftDistribution d;
  d.register_subject("s");
  const HRValue hr{81.0};
  double prev = -1.0;
  for (double lambda : {0.0, 0.01, 0.1, 1.0, 10.0}) {
    LossConfig cfg;
    cfg.lambda = lambda;
    const double t = talos_loss(sig(pred), sig(gt), d, "s");
    const double f = freq_loss(sig(pred), hr, cfg);
    const double c = combined_loss(sig(pred), sig(gt), hr, d, "s", cfg);
    CHECK(rel_err(c, t + lambda * f, 1e-300) <= 1e-12);
    if (lambda == 0.0) CHECK(c == t);
    CHECK(c >= prev);
    prev = c;
  }
  CHECK(LossConfig{}.lambda == 0.01);
}

TEST_CASE("combined loss grad selects terms") {
  const auto pred = gaussian(120, 10);
  const auto gt = gaussian(120, 11);
  ShiftDistribution d;
  d.register_subject("s");
  const HRValue hr{66.0};
  const auto c = combined_loss_grad(sig(pred), sig(gt), hr, d, "s", {}, LossTerms::kCombined);
  const auto t = combined_loss_grad(sig(pred), sig(gt), hr, d, "s", {}, LossTerms::kTemporal);
  const auto f = combined_loss_grad(sig(pred), sig(gt), hr, d, "s", {}, LossTerms::kFrequency);
  CHECK(t.total.value == doctest::Approx(c.temporal).epsilon(1e-15));
  CHECK(f.total.value == doctest::Approx(c.frequency).epsilon(1e-15));
  CHECK(rel_err(c.total.value, c.temporal + 0.01 * c.frequency) <= 1e-12);
  CHECK(loss_terms_from_string(to_string(LossTerms::kFrequency)) == LossTerms::kFrequency);
  CHECK_THROWS_AS(loss_terms_from_string("neither"), LossError);
}

TEST_CASE("loss gradients match central differences (T=120, step 1e-5)") {
  auto pred = gaussian(120, 12);
  const auto gt = gaussian(120, 13);
  ShiftDistribution d;
  d.register_subject("s");
  auto& logits = d.logits("s");
  const auto r = gaussian(logits.size(), 14);
  std::copy(r.begin(), r.end(), logits.begin());
  const HRValue hr{75.0};
  LossConfig cfg;
  cfg.lambda = 0.3;  // large enough that the frequency term shows in the sum

  double worst = 0.0;
  auto check_pred = [&](const char* what, auto value, const LossGrad& g) {
    for (std::size_t i = 0; i < pred.size(); i += 3) {
      const double fd = central_diff(value, pred[i]);
      worst = std::max(worst, rel_err(fd, g.d_pred[i], 1e-7));
      CHECK_MESSAGE(rel_err(fd, g.d_pred[i], 1e-7) <= 1e-4, what << " d_pred[" << i << "]");
    }
  };
  auto check_logits = [&](const char* what, auto value, const LossGrad& g) {
    REQUIRE(g.d_logits.size() == logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const double fd = central_diff(value, logits[i]);
      CHECK_MESSAGE(rel_err(fd, g.d_logits[i], 1e-7) <= 1e-4, what << " d_logits[" << i << "]");
    }
  };

  auto talos = [&] { return talos_loss(sig(pred), sig(gt), d, "s"); };
  const auto gt_grad = talos_loss_grad(sig(pred), sig(gt), d, "s");
  CHECK(gt_grad.value == doctest::Approx(talos()).epsilon(1e-14));
  check_pred("talos", talos, gt_grad);
  check_logits("talos", talos, gt_grad);

  auto freq = [&] { return freq_loss(sig(pred), hr, cfg); };
  const auto fg = freq_loss_grad(sig(pred), hr, cfg);
  CHECK(fg.d_logits.empty());
  check_pred("freq", freq, fg);

  auto comb = [&] { return combined_loss(sig(pred), sig(gt), hr, d, "s", cfg); };
  const auto cg = combined_loss_grad(sig(pred), sig(gt), hr, d, "s", cfg).total;
  check_pred("combined", comb, cg);
  check_logits("combined", comb, cg);
  MESSAGE("worst relative error " << worst);
}
