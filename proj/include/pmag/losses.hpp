#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "pmag/signal.hpp"

namespace pmag {

class LossError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Learnable per-subject distribution over temporal offsets (frames) used by
/// the shift-tolerant temporal loss. Probabilities are softmax(logits).
class ShiftDistribution {
 public:
  /// Offsets {-max_offset, ..., +max_offset}.
  explicit ShiftDistribution(int max_offset = 15);
  explicit ShiftDistribution(std::vector<int> offsets);

  const std::vector<int>& offsets() const { return offsets_; }
  int max_abs_offset() const;

  /// Adds the subject with all-zero logits (uniform). No-op if present.
  void register_subject(const std::string& subject);
  bool has_subject(const std::string& subject) const { return logits_.count(subject) != 0; }

  const std::vector<double>& logits(const std::string& subject) const;
  std::vector<double>& logits(const std::string& subject);
  const std::map<std::string, std::vector<double>>& all_logits() const { return logits_; }

  /// Drops every subject; used when a training stage starts afresh.
  void reset() { logits_.clear(); }

 private:
  std::vector<int> offsets_;
  std::map<std::string, std::vector<double>> logits_;
};

std::vector<double> shift_probabilities(const ShiftDistribution& dist, const std::string& subject);

struct LossConfig {
  double lambda = 0.01;
  FrequencyGrid grid{};
  double epsilon = 1e-8;

  void validate() const;
};

/// A loss value with its gradients. `d_logits` is empty for losses that do
/// not depend on the shift distribution.
struct LossGrad {
  double value = 0.0;
  std::vector<double> d_pred;
  std::vector<double> d_logits;
};

double talos_loss(const PulseSignal& pred, const PulseSignal& gt, const ShiftDistribution& dist,
                  const std::string& subject);
LossGrad talos_loss_grad(const PulseSignal& pred, const PulseSignal& gt,
                         const ShiftDistribution& dist, const std::string& subject);

/// Cross-entropy between the epsilon-regularised normalised power spectrum of
/// `pred` and a one-hot target at the ground-truth HR bin.
double freq_loss(const PulseSignal& pred, HRValue hr_gt, const LossConfig& cfg = {});
LossGrad freq_loss_grad(const PulseSignal& pred, HRValue hr_gt, const LossConfig& cfg = {});

double combined_loss(const PulseSignal& pred, const PulseSignal& gt, HRValue hr_gt,
                     const ShiftDistribution& dist, const std::string& subject,
                     const LossConfig& cfg = {});

/// Selects which terms of the combined objective are active (loss ablation).
enum class LossTerms { kTemporal, kFrequency, kCombined };

const char* to_string(LossTerms terms);
LossTerms loss_terms_from_string(const std::string& name);

struct CombinedLossGrad {
  LossGrad total;
  double temporal = 0.0;
  double frequency = 0.0;
};

/// total = w_temp * temporal + w_freq * frequency, with (w_temp, w_freq) =
/// (1, lambda) for kCombined, (1, 0) for kTemporal and (0, 1) for kFrequency.
CombinedLossGrad combined_loss_grad(const PulseSignal& pred, const PulseSignal& gt,
                                    HRValue hr_gt, const ShiftDistribution& dist,
                                    const std::string& subject, const LossConfig& cfg = {},
                                    LossTerms terms = LossTerms::kCombined);

}  // namespace pmag
