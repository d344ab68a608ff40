#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "pmag/compression.hpp"
#include "pmag/data.hpp"
#include "pmag/evaluation.hpp"
#include "pmag/models.hpp"
#include "pmag/training.hpp"

namespace pmag {

/// Bad configuration: unknown key, wrong type or an invalid value. The message
/// starts with the offending key path.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Merged configuration document. Every key that may appear is present in
/// default_config(); the hash is SHA-256 over the canonical (key-sorted) dump.
struct RunConfig {
  nlohmann::json doc;
  std::string hash;

  /// Value at a dotted path, e.g. "train.lr".
  const nlohmann::json& at(const std::string& path) const;
};

nlohmann::json default_config();

/// defaults <- file (optional) <- overrides ("dotted.key=value", value parsed as
/// JSON when it parses, else taken as a string). Throws ConfigError.
RunConfig parse_config(const std::optional<std::filesystem::path>& path,
                       const std::vector<std::string>& overrides = {});

/// Same document as JSON text parsed from memory (used by parse_config).
RunConfig parse_config_text(const std::string& text, const std::vector<std::string>& overrides = {});

// Typed views of the document.
FrequencyGrid grid_config(const RunConfig& cfg);
SynthConfig synth_config(const RunConfig& cfg);
DatasetOptions dataset_options(const RunConfig& cfg, bool test);
TrainConfig train_config(const RunConfig& cfg);
TdmConfig tdm_config(const RunConfig& cfg);
PsmnConfig psmn_config(const RunConfig& cfg);
LoadOptions load_options(const RunConfig& cfg);
EvalOptions eval_options(const RunConfig& cfg);
EncodeOptions encode_options(const RunConfig& cfg);
VisualizeOptions visualize_options(const RunConfig& cfg);
std::vector<int> crf_list(const RunConfig& cfg, const std::string& section);

}  // namespace pmag
