#include "pmag/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pmag {

ShiftDistribution::ShiftDistribution(int max_offset) {
  if (max_offset < 0) throw LossError("ShiftDistribution: max_offset must be >= 0");
  for (int k = -max_offset; k <= max_offset; ++k) offsets_.push_back(k);
}

ShiftDistribution::ShiftDistribution(std::vector<int> offsets) : offsets_(std::move(offsets)) {
  std::sort(offsets_.begin(), offsets_.end());
  if (std::adjacent_find(offsets_.begin(), offsets_.end()) != offsets_.end()) {
    throw LossError("ShiftDistribution: duplicate offsets");
  }
  if (!std::binary_search(offsets_.begin(), offsets_.end(), 0)) {
    throw LossError("ShiftDistribution: offsets must include 0");
  }
  for (int k : offsets_) {
    if (!std::binary_search(offsets_.begin(), offsets_.end(), -k)) {
      throw LossError("ShiftDistribution: offsets must be symmetric around 0");
    }
  }
}

int ShiftDistribution::max_abs_offset() const {
  int m = 0;
  for (int k : offsets_) m = std::max(m, std::abs(k));
  return m;
}

void ShiftDistribution::register_subject(const std::string& subject) {
  logits_.try_emplace(subject, std::vector<double>(offsets_.size(), 0.0));
}

const std::vector<double>& ShiftDistribution::logits(const std::string& subject) const {
  const auto it = logits_.find(subject);
  if (it == logits_.end()) throw LossError("ShiftDistribution: unknown subject `" + subject + "`");
  return it->second;
}

std::vector<double>& ShiftDistribution::logits(const std::string& subject) {
  const auto it = logits_.find(subject);
  if (it == logits_.end()) throw LossError("ShiftDistribution: unknown subject `" + subject + "`");
  return it->second;
}

std::vector<double> shift_probabilities(const ShiftDistribution& dist,
                                        const std::string& subject) {
  const auto& z = dist.logits(subject);
  const double zmax = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - zmax);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

void LossConfig::validate() const {
  if (!(lambda >= 0.0)) throw LossError("LossConfig: lambda must be >= 0");
  if (!(epsilon > 0.0)) throw LossError("LossConfig: epsilon must be > 0");
  grid.validate();
}

namespace {

void check_pair(const PulseSignal& pred, const PulseSignal& gt, const ShiftDistribution& dist) {
  if (pred.size() != gt.size()) {
    throw LossError("talos_loss: prediction has " + std::to_string(pred.size()) +
                    " samples but ground truth has " + std::to_string(gt.size()));
  }
  if (4 * static_cast<std::size_t>(dist.max_abs_offset()) >= pred.size()) {
    throw LossError("talos_loss: max |k| must be < T/4");
  }
}

}  // namespace

double talos_loss(const PulseSignal& pred, const PulseSignal& gt, const ShiftDistribution& dist,
                  const std::string& subject) {
  check_pair(pred, gt, dist);
  const auto p = shift_probabilities(dist, subject);
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    total += shifted_mse(pred.samples, gt.samples, dist.offsets()[i]) * p[i];
  }
  return total;
}

LossGrad talos_loss_grad(const PulseSignal& pred, const PulseSignal& gt,
                         const ShiftDistribution& dist, const std::string& subject) {
  check_pair(pred, gt, dist);
  const auto p = shift_probabilities(dist, subject);
  const std::size_t n = pred.size();
  LossGrad out;
  out.d_pred.assign(n, 0.0);
  std::vector<double> m(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const int k = dist.offsets()[i];
    const auto [first, last] = valid_region(n, k);
    const double inv = 1.0 / static_cast<double>(last - first);
    double acc = 0.0;
    for (std::size_t t = first; t < last; ++t) {
      const double d = pred.samples[t] - gt.samples[static_cast<std::size_t>(
                                             static_cast<long>(t) - k)];
      acc += d * d;
      out.d_pred[t] += 2.0 * d * inv * p[i];
    }
    m[i] = acc * inv;
    out.value += m[i] * p[i];
  }
  // d/dz_j sum_i m_i softmax(z)_i = p_j (m_j - L)
  out.d_logits.resize(p.size());
  for (std::size_t j = 0; j < p.size(); ++j) out.d_logits[j] = p[j] * (m[j] - out.value);
  return out;
}

namespace {

LossGrad freq_impl(const PulseSignal& pred, HRValue hr_gt, const LossConfig& cfg, bool grad) {
  cfg.validate();
  if (!cfg.grid.contains_bpm(hr_gt.bpm)) {
    throw LossError("freq_loss: ground-truth HR " + std::to_string(hr_gt.bpm) +
                    " BPM is outside the band");
  }
  const std::size_t target = cfg.grid.bin_index(hr_gt.bpm);
  const auto spec = power_spectrum(pred, cfg.grid);
  double total = 0.0;
  for (double v : spec.power) total += v + cfg.epsilon;
  LossGrad out;
  out.value = std::log(total) - std::log(spec.power[target] + cfg.epsilon);
  if (grad) {
    std::vector<double> d_power(spec.power.size(), 1.0 / total);
    d_power[target] -= 1.0 / (spec.power[target] + cfg.epsilon);
    out.d_pred = power_spectrum_backward(pred, cfg.grid, d_power);
  }
  return out;
}

}  // namespace

double freq_loss(const PulseSignal& pred, HRValue hr_gt, const LossConfig& cfg) {
  return freq_impl(pred, hr_gt, cfg, false).value;
}

LossGrad freq_loss_grad(const PulseSignal& pred, HRValue hr_gt, const LossConfig& cfg) {
  return freq_impl(pred, hr_gt, cfg, true);
}

double combined_loss(const PulseSignal& pred, const PulseSignal& gt, HRValue hr_gt,
                     const ShiftDistribution& dist, const std::string& subject,
                     const LossConfig& cfg) {
  return talos_loss(pred, gt, dist, subject) + cfg.lambda * freq_loss(pred, hr_gt, cfg);
}

const char* to_string(LossTerms terms) {
  switch (terms) {
    case LossTerms::kTemporal: return "temporal";
    case LossTerms::kFrequency: return "frequency";
    case LossTerms::kCombined: return "combined";
  }
  return "combined";
}

LossTerms loss_terms_from_string(const std::string& name) {
  if (name == "temporal") return LossTerms::kTemporal;
  if (name == "frequency") return LossTerms::kFrequency;
  if (name == "combined") return LossTerms::kCombined;
  throw LossError("unknown loss selection `" + name + "` (temporal|frequency|combined)");
}

CombinedLossGrad combined_loss_grad(const PulseSignal& pred, const PulseSignal& gt,
                                    HRValue hr_gt, const ShiftDistribution& dist,
                                    const std::string& subject, const LossConfig& cfg,
                                    LossTerms terms) {
  double w_temp = 1.0;
  double w_freq = cfg.lambda;
  if (terms == LossTerms::kTemporal) w_freq = 0.0;
  if (terms == LossTerms::kFrequency) {
    w_temp = 0.0;
    w_freq = 1.0;
  }
  const auto temp = talos_loss_grad(pred, gt, dist, subject);
  const auto freq = freq_loss_grad(pred, hr_gt, cfg);
  CombinedLossGrad out;
  out.temporal = temp.value;
  out.frequency = freq.value;
  out.total.value = w_temp * temp.value + w_freq * freq.value;
  out.total.d_pred.resize(pred.size());
  for (std::size_t t = 0; t < pred.size(); ++t) {
    out.total.d_pred[t] = w_temp * temp.d_pred[t] + w_freq * freq.d_pred[t];
  }
  out.total.d_logits = temp.d_logits;
  for (double& g : out.total.d_logits) g *= w_temp;
  return out;
}

}  // namespace pmag
