#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "pmag/data.hpp"
#include "pmag/losses.hpp"
#include "pmag/models.hpp"

namespace pmag {

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Loss or parameters became non-finite; a diagnostic checkpoint may exist.
class DivergenceError : public TrainError {
 public:
  using TrainError::TrainError;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 1e-5;
  double shift_lr = 1e-2;
  double lambda = 0.01;
  int epochs = 10;
  int batch_size = 2;
  int window = 300;
  int overlap = 10;
  std::uint64_t seed = 0;
  bool deterministic = true;
  FrequencyGrid grid{};
  double clip_norm = 5.0;  // <= 0 disables clipping
  int max_shift = 15;
  LossTerms terms = LossTerms::kCombined;
  bool allow_mixed_crf = false;

  void validate() const;
  LossConfig loss_config() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
/// Missing keys keep their defaults; unknown keys are the caller's concern.
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EpochRecord {
  int epoch = 0;  // 1-based
  std::string split = "train";
  double loss_temp = 0.0;
  double loss_freq = 0.0;
  double loss_total = 0.0;
  int clipped_steps = 0;
};

struct AdamState {
  TensorMap m;
  TensorMap v;
  std::int64_t step = 0;
};

enum class Procedure { kStage1, kStage2, kEndToEnd };
const char* to_string(Procedure p);
Procedure procedure_from_string(const std::string& s);

struct Checkpoint {
  Procedure procedure = Procedure::kStage1;
  std::optional<ModelParams> theta;
  std::optional<ModelParams> psi;
  ShiftDistribution shifts;
  TrainConfig config;
  int epoch = 0;  // epochs completed
  std::string rng_state;
  std::vector<EpochRecord> history;
  AdamState adam_theta;
  AdamState adam_psi;
  std::map<std::string, std::string> provenance;

  /// SHA-256 over the architecture JSON of the stored networks.
  std::string config_hash() const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws CheckpointError on a malformed file, or when `expected_config_hash`
/// is non-empty and differs from the stored architecture hash.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::string& expected_config_hash = {});

/// history.csv: epoch,split,loss_temp,loss_freq,loss_total
void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path);

struct TrainHooks {
  /// Continue from this checkpoint (same procedure and architecture) up to cfg.epochs.
  const Checkpoint* resume = nullptr;
  /// Where to write a checkpoint when training diverges; empty disables it.
  std::filesystem::path diagnostic_path;
  std::function<void(const Checkpoint&, const EpochRecord&)> on_epoch;
  std::map<std::string, std::string> provenance;
};

/// Windows used for training: stride window - overlap over every sample.
std::vector<Sample> training_windows(const std::vector<Sample>& samples, const TrainConfig& cfg);

/// Fits the estimator on uncompressed clips.
Checkpoint train_stage1(const std::vector<Sample>& samples, const TrainConfig& cfg,
                        const TdmConfig& arch = {}, const TrainHooks& hooks = {});
/// Starts from `init` instead of a fresh estimator (matched-compression retraining).
Checkpoint train_stage1_from(const std::vector<Sample>& samples, const ModelParams& init,
                             const TrainConfig& cfg, const TrainHooks& hooks = {});

/// Fits the magnifier on compressed clips through the frozen estimator `theta`.
Checkpoint train_stage2(const std::vector<Sample>& samples, const ModelParams& theta,
                        const TrainConfig& cfg, const PsmnConfig& arch = {},
                        const TrainHooks& hooks = {});

/// Fits both networks jointly on compressed clips.
Checkpoint train_end_to_end(const std::vector<Sample>& samples, const TrainConfig& cfg,
                            const TdmConfig& tdm_arch = {}, const PsmnConfig& psmn_arch = {},
                            const TrainHooks& hooks = {});

struct WindowGradients {
  double temporal = 0.0;
  double frequency = 0.0;
  double total = 0.0;
  TensorMap theta;  // empty for Stage II, where the estimator is frozen
  TensorMap psi;    // empty for Stage I
  std::vector<double> logits;
};

/// Loss of one training window and its gradients, exactly as the training loop
/// computes them.
WindowGradients window_gradients(Procedure proc, const ModelParams& theta, const ModelParams* psi,
                                 const Sample& window, const ShiftDistribution& shifts,
                                 const TrainConfig& cfg);

/// Global L2 norm over every tensor of `grads`.
double grad_norm(const TensorMap& grads);
/// Decoupled-weight-decay Adam step; `state` is created on first use.
void adamw_step(TensorMap& params, const TensorMap& grads, AdamState& state, double lr,
                double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

}  // namespace pmag
