#include "pmag/config.hpp"

#include <sstream>

#include "pmag/util.hpp"

namespace pmag {

namespace fs = std::filesystem;
using nlohmann::json;

json default_config() {
  const TrainConfig t;
  const TdmConfig tdm;
  const PsmnConfig psmn;
  const SynthConfig s;
  const DatasetOptions d;
  const VisualizeOptions v;
  return {
      {"run", {{"name", "default"}, {"root", "runs"}, {"deterministic", true}}},
      {"grid", {{"band_lo_hz", 0.66}, {"band_hi_hz", 3.0}, {"bin_bpm", 1.0}}},
      {"synth",
       {{"frames", s.t},
        {"size", s.h},
        {"fps", s.fps},
        {"pulse_amplitude", s.pulse_amplitude},
        {"channel_weights", s.channel_weights},
        {"skin_rgb", s.skin_rgb},
        {"shading", s.shading},
        {"noise_std", s.noise_std},
        {"motion_amp", s.motion_amp},
        {"motion_hz", s.motion_hz},
        {"hr_lo", d.hr_lo},
        {"hr_hi", d.hr_hi},
        {"n_train", 16},
        {"n_test", 8},
        {"seed", 0}}},
      {"train",
       {{"lr", t.lr},
        {"weight_decay", t.weight_decay},
        {"shift_lr", t.shift_lr},
        {"lambda", t.lambda},
        {"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"window", t.window},
        {"overlap", t.overlap},
        {"seed", t.seed},
        {"clip_norm", t.clip_norm},
        {"max_shift", t.max_shift},
        {"loss_terms", to_string(t.terms)},
        {"allow_mixed_crf", t.allow_mixed_crf}}},
      {"tdm",
       {{"input_size", tdm.input_size},
        {"pool", tdm.pool},
        {"width1", tdm.width1},
        {"width2", tdm.width2},
        {"max_order", tdm.max_order},
        {"head_kernel", tdm.head_kernel},
        {"input_norm", tdm.input_norm}}},
      {"psmn", {{"widths", psmn.widths}, {"bottleneck", psmn.bottleneck}}},
      {"data", {{"train", ""}, {"test", ""}, {"size", 96}}},
      {"paths", {{"theta", ""}, {"psi", ""}, {"checkpoint", ""}}},
      {"compress", {{"crf", 23}, {"target_kbps", 0.0}, {"pixel_format", "yuv420p"}}},
      {"eval", {{"window", 300}, {"whole_clip", false}}},
      {"sweep", {{"crfs", {0, 5, 10, 15, 20, 25, 30, 35}}, {"retrain", true}, {"mode", "intra"}}},
      {"compare", {{"crfs", {0, 5, 10, 15, 20, 25}}, {"end_to_end", true}, {"baseline", true}}},
      {"visualize",
       {{"view", "pulse"},
        {"blur", v.blur},
        {"target_rms", v.target_rms},
        {"sample", 0},
        {"write_frames", v.write_frames}}},
  };
}

namespace {

std::string type_name(const json& j) {
  if (j.is_number_integer()) return "integer";
  if (j.is_number()) return "number";
  return j.type_name();
}

// `value` may replace `def` when the JSON kinds agree; integers widen to numbers.
bool compatible(const json& def, const json& value) {
  if (def.is_number_integer()) return value.is_number_integer();
  if (def.is_number()) return value.is_number();
  if (def.is_array()) {
    if (!value.is_array()) return false;
    if (def.empty()) return true;
    for (const auto& e : value) {
      if (!compatible(def.front(), e)) return false;
    }
    return true;
  }
  return def.type() == value.type();
}

void merge(json& base, const json& patch, const std::string& prefix) {
  if (!patch.is_object()) {
    throw ConfigError((prefix.empty() ? std::string("<root>") : prefix) + ": expected an object");
  }
  for (const auto& [key, value] : patch.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw ConfigError(path + ": unknown key");
    json& slot = base[key];
    if (slot.is_object()) {
      merge(slot, value, path);
    } else if (!compatible(slot, value)) {
      throw ConfigError(path + ": expected " + type_name(slot) + ", got " + type_name(value));
    } else {
      slot = value;
    }
  }
}

json override_patch(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError(assignment + ": override must look like key.path=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (value.is_discarded()) value = text;

  json patch = value;
  std::string rest = key;
  std::vector<std::string> parts;
  std::size_t pos = 0;
  while ((pos = rest.find('.')) != std::string::npos) {
    parts.push_back(rest.substr(0, pos));
    rest.erase(0, pos + 1);
  }
  parts.push_back(rest);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
    if (it->empty()) throw ConfigError(key + ": empty key component");
    patch = json{{*it, patch}};
  }
  return patch;
}

template <class F>
void check(const std::string& key, F&& f) {
  try {
    f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

void validate(const RunConfig& cfg) {
  check("grid", [&] { grid_config(cfg).validate(); });
  check("synth", [&] { synth_config(cfg).validate(); });
  check("train", [&] { train_config(cfg).validate(); });
  check("tdm", [&] {
    const auto t = tdm_config(cfg);
    if (t.pool < 1 || t.input_size % t.pool != 0) throw ConfigError("tdm.pool must divide tdm.input_size");
    if (t.width1 < 1 || t.width2 < 1 || t.max_order < 0 || t.head_kernel < 1 || t.head_kernel % 2 == 0) {
      throw ConfigError("tdm: widths and max_order must be positive and head_kernel odd");
    }
  });
  check("psmn", [&] {
    const auto& w = cfg.at("psmn.widths");
    if (w.size() != 3) throw ConfigError("psmn.widths: expected 3 entries");
    for (const auto& x : w) {
      if (x.get<int>() < 1) throw ConfigError("psmn.widths: entries must be positive");
    }
    if (cfg.at("psmn.bottleneck").get<int>() < 1) throw ConfigError("psmn.bottleneck: must be positive");
  });
  check("compress.crf", [&] { validate_crf(cfg.at("compress.crf").get<int>()); });
  for (const char* section : {"sweep", "compare"}) {
    const std::string key = std::string(section) + ".crfs";
    check(key, [&] {
      for (const auto& c : cfg.at(key)) validate_crf(c.get<int>());
    });
  }
  check("eval.window", [&] {
    if (cfg.at("eval.window").get<int>() < 1) throw ConfigError("eval.window: must be positive");
  });
  check("data.size", [&] {
    if (cfg.at("data.size").get<int>() < 8) throw ConfigError("data.size: must be at least 8");
  });
  check("visualize.view", [&] {
    const auto view = cfg.at("visualize.view").get<std::string>();
    if (view != "pulse" && view != "frames") throw ConfigError("visualize.view: expected pulse or frames");
    if (cfg.at("visualize.blur").get<int>() < 1) throw ConfigError("visualize.blur: must be >= 1");
  });
  check("sweep.mode", [&] {
    const auto mode = cfg.at("sweep.mode").get<std::string>();
    if (mode != "intra" && mode != "cross") throw ConfigError("sweep.mode: expected intra or cross");
  });
  for (const char* key : {"synth.seed", "train.seed"}) {
    if (cfg.at(key).get<std::int64_t>() < 0) throw ConfigError(std::string(key) + ": must be non-negative");
  }
  const auto d = dataset_options(cfg, false);
  if (!(d.hr_lo >= 40.0 && d.hr_hi <= 180.0 && d.hr_lo <= d.hr_hi)) {
    throw ConfigError("synth.hr_lo/hr_hi: need 40 <= hr_lo <= hr_hi <= 180 BPM");
  }
  for (const char* key : {"synth.n_train", "synth.n_test"}) {
    if (cfg.at(key).get<int>() < 1) throw ConfigError(std::string(key) + ": must be positive");
  }
}

}  // namespace

const json& RunConfig::at(const std::string& path) const {
  const json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(key)) throw ConfigError(path + ": unknown key");
    node = &(*node)[key];
    if (dot == std::string::npos) return *node;
    start = dot + 1;
  }
}

RunConfig parse_config_text(const std::string& text, const std::vector<std::string>& overrides) {
  RunConfig cfg;
  cfg.doc = default_config();
  if (!text.empty()) {
    json file;
    try {
      file = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ConfigError(std::string("<file>: ") + e.what());
    }
    if (!file.is_null()) merge(cfg.doc, file, "");
  }
  for (const auto& o : overrides) merge(cfg.doc, override_patch(o), "");
  validate(cfg);
  cfg.hash = sha256_hex(cfg.doc.dump());
  return cfg;
}

RunConfig parse_config(const std::optional<fs::path>& path, const std::vector<std::string>& overrides) {
  std::string text;
  if (path) {
    try {
      text = read_file(*path);
    } catch (const std::exception& e) {
      throw ConfigError(path->string() + ": " + e.what());
    }
  }
  try {
    return parse_config_text(text, overrides);
  } catch (const ConfigError& e) {
    if (path) throw ConfigError(path->string() + ": " + e.what());
    throw;
  }
}

FrequencyGrid grid_config(const RunConfig& cfg) {
  FrequencyGrid g;
  g.lo = cfg.at("grid.band_lo_hz").get<double>();
  g.hi = cfg.at("grid.band_hi_hz").get<double>();
  g.bin_bpm = cfg.at("grid.bin_bpm").get<double>();
  return g;
}

SynthConfig synth_config(const RunConfig& cfg) {
  SynthConfig s;
  s.t = cfg.at("synth.frames").get<int>();
  s.h = s.w = cfg.at("synth.size").get<int>();
  s.fps = cfg.at("synth.fps").get<double>();
  s.pulse_amplitude = cfg.at("synth.pulse_amplitude").get<double>();
  const auto& cw = cfg.at("synth.channel_weights");
  const auto& rgb = cfg.at("synth.skin_rgb");
  if (cw.size() != 3) throw ConfigError("synth.channel_weights: expected 3 entries");
  if (rgb.size() != 3) throw ConfigError("synth.skin_rgb: expected 3 entries");
  for (int c = 0; c < 3; ++c) {
    s.channel_weights[c] = cw[c].get<double>();
    s.skin_rgb[c] = rgb[c].get<double>();
  }
  s.shading = cfg.at("synth.shading").get<double>();
  s.noise_std = cfg.at("synth.noise_std").get<double>();
  s.motion_amp = cfg.at("synth.motion_amp").get<double>();
  s.motion_hz = cfg.at("synth.motion_hz").get<double>();
  return s;
}

DatasetOptions dataset_options(const RunConfig& cfg, bool test) {
  DatasetOptions d;
  d.n = cfg.at(test ? "synth.n_test" : "synth.n_train").get<int>();
  d.seed = cfg.at("synth.seed").get<std::uint64_t>() + (test ? 1 : 0);
  d.hr_lo = cfg.at("synth.hr_lo").get<double>();
  d.hr_hi = cfg.at("synth.hr_hi").get<double>();
  d.id_prefix = test ? "t" : "s";
  return d;
}

TrainConfig train_config(const RunConfig& cfg) {
  json j = cfg.at("train");
  j["deterministic"] = cfg.at("run.deterministic");
  for (const char* k : {"band_lo_hz", "band_hi_hz", "bin_bpm"}) j[k] = cfg.at(std::string("grid.") + k);
  try {
    return train_config_from_json(j);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
}

TdmConfig tdm_config(const RunConfig& cfg) {
  TdmConfig t;
  t.input_size = cfg.at("tdm.input_size").get<int>();
  t.pool = cfg.at("tdm.pool").get<int>();
  t.width1 = cfg.at("tdm.width1").get<int>();
  t.width2 = cfg.at("tdm.width2").get<int>();
  t.max_order = cfg.at("tdm.max_order").get<int>();
  t.head_kernel = cfg.at("tdm.head_kernel").get<int>();
  t.input_norm = cfg.at("tdm.input_norm").get<bool>();
  return t;
}

PsmnConfig psmn_config(const RunConfig& cfg) {
  PsmnConfig p;
  const auto& w = cfg.at("psmn.widths");
  for (std::size_t i = 0; i < 3 && i < w.size(); ++i) p.widths[i] = w[i].get<int>();
  p.bottleneck = cfg.at("psmn.bottleneck").get<int>();
  return p;
}

LoadOptions load_options(const RunConfig& cfg) {
  LoadOptions l;
  l.size = cfg.at("data.size").get<int>();
  l.window = cfg.at("eval.window").get<int>();
  l.grid = grid_config(cfg);
  return l;
}

EvalOptions eval_options(const RunConfig& cfg) {
  EvalOptions e;
  e.grid = grid_config(cfg);
  e.window = cfg.at("eval.window").get<int>();
  e.whole_clip = cfg.at("eval.whole_clip").get<bool>();
  return e;
}

EncodeOptions encode_options(const RunConfig& cfg) {
  EncodeOptions e;
  e.target_kbps = cfg.at("compress.target_kbps").get<double>();
  e.pixel_format = cfg.at("compress.pixel_format").get<std::string>();
  return e;
}

VisualizeOptions visualize_options(const RunConfig& cfg) {
  VisualizeOptions v;
  v.view = cfg.at("visualize.view").get<std::string>() == "frames" ? ActivityView::kFrames
                                                                  : ActivityView::kPulse;
  v.blur = cfg.at("visualize.blur").get<int>();
  v.target_rms = cfg.at("visualize.target_rms").get<double>();
  v.write_frames = cfg.at("visualize.write_frames").get<bool>();
  v.grid = grid_config(cfg);
  return v;
}

std::vector<int> crf_list(const RunConfig& cfg, const std::string& section) {
  return cfg.at(section + ".crfs").get<std::vector<int>>();
}

}  // namespace pmag
