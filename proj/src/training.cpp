#include "pmag/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include "pmag/util.hpp"

namespace pmag {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !(shift_lr > 0.0)) throw TrainError("learning rates must be positive");
  if (weight_decay < 0.0) throw TrainError("weight_decay must be non-negative");
  if (lambda < 0.0) throw TrainError("lambda must be non-negative");
  if (epochs < 0) throw TrainError("epochs must be non-negative");
  if (batch_size < 1) throw TrainError("batch_size must be at least 1");
  if (!(window > overlap && overlap >= 0)) throw TrainError("need window > overlap >= 0");
  if (max_shift < 0 || 4 * max_shift >= window) {
    throw TrainError("max_shift must satisfy 0 <= 4 * max_shift < window");
  }
  grid.validate();
}

LossConfig TrainConfig::loss_config() const {
  LossConfig lc;
  lc.lambda = lambda;
  lc.grid = grid;
  return lc;
}

json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"shift_lr", c.shift_lr},
          {"lambda", c.lambda},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"window", c.window},
          {"overlap", c.overlap},
          {"seed", c.seed},
          {"deterministic", c.deterministic},
          {"band_lo_hz", c.grid.lo},
          {"band_hi_hz", c.grid.hi},
          {"bin_bpm", c.grid.bin_bpm},
          {"clip_norm", c.clip_norm},
          {"max_shift", c.max_shift},
          {"loss_terms", to_string(c.terms)},
          {"allow_mixed_crf", c.allow_mixed_crf}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.shift_lr = j.value("shift_lr", c.shift_lr);
  c.lambda = j.value("lambda", c.lambda);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.window = j.value("window", c.window);
  c.overlap = j.value("overlap", c.overlap);
  c.seed = j.value("seed", c.seed);
  c.deterministic = j.value("deterministic", c.deterministic);
  c.grid.lo = j.value("band_lo_hz", c.grid.lo);
  c.grid.hi = j.value("band_hi_hz", c.grid.hi);
  c.grid.bin_bpm = j.value("bin_bpm", c.grid.bin_bpm);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.max_shift = j.value("max_shift", c.max_shift);
  c.terms = loss_terms_from_string(j.value("loss_terms", std::string(to_string(c.terms))));
  c.allow_mixed_crf = j.value("allow_mixed_crf", c.allow_mixed_crf);
  return c;
}

const char* to_string(Procedure p) {
  switch (p) {
    case Procedure::kStage1: return "stage1";
    case Procedure::kStage2: return "stage2";
    case Procedure::kEndToEnd: return "e2e";
  }
  return "?";
}

Procedure procedure_from_string(const std::string& s) {
  if (s == "stage1") return Procedure::kStage1;
  if (s == "stage2") return Procedure::kStage2;
  if (s == "e2e") return Procedure::kEndToEnd;
  throw CheckpointError("unknown training procedure `" + s + "`");
}

// ---------------------------------------------------------------------------
// Optimisation primitives

double grad_norm(const TensorMap& grads) {
  double ss = 0.0;
  for (const auto& [name, g] : grads) {
    for (double v : g.data) ss += v * v;
  }
  return std::sqrt(ss);
}

void adamw_step(TensorMap& params, const TensorMap& grads, AdamState& st, double lr,
                double weight_decay, double beta1, double beta2, double eps) {
  if (st.m.empty()) {
    st.m = zeros_like(params);
    st.v = zeros_like(params);
  }
  ++st.step;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(st.step));
  for (auto& [name, p] : params) {
    const auto& g = grads.at(name).data;
    auto& m = st.m.at(name).data;
    auto& v = st.v.at(name).data;
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      p.data[i] *= 1.0 - lr * weight_decay;
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      const double mh = m[i] / bc1;
      const double vh = v[i] / bc2;
      p.data[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'P', 'M', 'A', 'G', 'C', 'K', 'P', 'T'};
constexpr int kFormat = 1;

json model_json(const ModelParams& p) {
  return {{"config", json::parse(p.config_json())}, {"seed", p.seed}, {"frozen", p.frozen}};
}

ModelParams model_from_json(const json& j) {
  ModelParams p;
  const json& c = j.at("config");
  p.kind = model_kind_from_string(c.at("kind").get<std::string>());
  if (p.kind == ModelKind::kTdm) {
    p.tdm.input_size = c.at("input_size");
    p.tdm.pool = c.at("pool");
    p.tdm.width1 = c.at("width1");
    p.tdm.width2 = c.at("width2");
    p.tdm.max_order = c.at("max_order");
    p.tdm.head_kernel = c.at("head_kernel");
    p.tdm.input_norm = c.at("input_norm");
  } else {
    p.psmn.widths = c.at("widths").get<std::array<int, 3>>();
    p.psmn.bottleneck = c.at("bottleneck");
  }
  p.seed = j.at("seed");
  p.frozen = j.at("frozen");
  return p;
}

template <typename T>
void put(std::string& out, T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    out.append(bytes.data(), bytes.size());
  } else {
    out.append(reinterpret_cast<const char*>(&v), sizeof(T));
  }
}

template <typename T>
T get(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw CheckpointError("checkpoint is truncated");
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), in.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  pos += sizeof(T);
  return std::bit_cast<T>(bytes);
}

void list_tensors(const std::string& prefix, const TensorMap& m,
                  std::vector<std::pair<std::string, const Tensor*>>& out) {
  for (const auto& [name, t] : m) out.emplace_back(prefix + name, &t);
}

}  // namespace

std::string Checkpoint::config_hash() const {
  json j = json::object();
  if (theta) j["theta"] = json::parse(theta->config_json());
  if (psi) j["psi"] = json::parse(psi->config_json());
  return sha256_hex(j.dump());
}

void save_checkpoint(const Checkpoint& ck, const fs::path& path) {
  std::vector<std::pair<std::string, const Tensor*>> tensors;
  json models = json::object();
  if (ck.theta) {
    models["theta"] = model_json(*ck.theta);
    list_tensors("theta/", ck.theta->tensors, tensors);
  }
  if (ck.psi) {
    models["psi"] = model_json(*ck.psi);
    list_tensors("psi/", ck.psi->tensors, tensors);
  }
  list_tensors("adam_theta/m/", ck.adam_theta.m, tensors);
  list_tensors("adam_theta/v/", ck.adam_theta.v, tensors);
  list_tensors("adam_psi/m/", ck.adam_psi.m, tensors);
  list_tensors("adam_psi/v/", ck.adam_psi.v, tensors);
  std::vector<Tensor> shift_tensors;
  shift_tensors.reserve(ck.shifts.all_logits().size());
  for (const auto& [subject, logits] : ck.shifts.all_logits()) {
    Tensor t({static_cast<std::int64_t>(logits.size())});
    t.data = logits;
    shift_tensors.push_back(std::move(t));
    tensors.emplace_back("shift/" + subject, &shift_tensors.back());
  }

  json hist = json::array();
  for (const auto& r : ck.history) {
    hist.push_back({{"epoch", r.epoch},
                    {"split", r.split},
                    {"loss_temp", r.loss_temp},
                    {"loss_freq", r.loss_freq},
                    {"loss_total", r.loss_total},
                    {"clipped_steps", r.clipped_steps}});
  }
  json index = json::array();
  for (const auto& [name, t] : tensors) index.push_back({{"name", name}, {"shape", t->shape}});

  const json manifest{{"format", kFormat},
                      {"procedure", to_string(ck.procedure)},
                      {"config_hash", ck.config_hash()},
                      {"models", models},
                      {"train_config", to_json(ck.config)},
                      {"epoch", ck.epoch},
                      {"rng_state", ck.rng_state},
                      {"history", hist},
                      {"adam_steps", {{"theta", ck.adam_theta.step}, {"psi", ck.adam_psi.step}}},
                      {"shift_offsets", ck.shifts.offsets()},
                      {"provenance", ck.provenance},
                      {"tensors", index}};
  const std::string header = manifest.dump();

  std::string out(kMagic, sizeof kMagic);
  put<std::uint64_t>(out, header.size());
  out += header;
  for (const auto& [name, t] : tensors) {
    for (double v : t->data) put<double>(out, v);
  }
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  write_file_atomic(path, out);
}

Checkpoint load_checkpoint(const fs::path& path, const std::string& expected_config_hash) {
  std::string in;
  try {
    in = read_file(path);
  } catch (const std::exception& e) {
    throw CheckpointError("cannot read checkpoint " + path.string() + ": " + e.what());
  }
  if (in.size() < sizeof kMagic || std::memcmp(in.data(), kMagic, sizeof kMagic) != 0) {
    throw CheckpointError(path.string() + " is not a checkpoint file");
  }
  std::size_t pos = sizeof kMagic;
  const auto len = get<std::uint64_t>(in, pos);
  if (pos + len > in.size()) throw CheckpointError(path.string() + ": truncated manifest");
  Checkpoint ck;
  try {
    const json m = json::parse(in.substr(pos, len));
    pos += len;
    if (m.at("format").get<int>() != kFormat) {
      throw CheckpointError(path.string() + ": unsupported checkpoint format version " +
                            m.at("format").dump());
    }
    ck.procedure = procedure_from_string(m.at("procedure"));
    const json& models = m.at("models");
    if (models.contains("theta")) ck.theta = model_from_json(models.at("theta"));
    if (models.contains("psi")) ck.psi = model_from_json(models.at("psi"));
    const std::string stored = m.at("config_hash");
    if (stored != ck.config_hash()) {
      throw CheckpointError(path.string() + ": config hash " + stored +
                            " does not match the stored architecture (" + ck.config_hash() + ")");
    }
    if (!expected_config_hash.empty() && stored != expected_config_hash) {
      throw CheckpointError(path.string() + ": checkpoint config hash " + stored +
                            " differs from the expected " + expected_config_hash);
    }
    ck.config = train_config_from_json(m.at("train_config"));
    ck.epoch = m.at("epoch");
    ck.rng_state = m.at("rng_state");
    for (const auto& r : m.at("history")) {
      EpochRecord e;
      e.epoch = r.at("epoch");
      e.split = r.at("split");
      e.loss_temp = r.at("loss_temp");
      e.loss_freq = r.at("loss_freq");
      e.loss_total = r.at("loss_total");
      e.clipped_steps = r.at("clipped_steps");
      ck.history.push_back(e);
    }
    ck.adam_theta.step = m.at("adam_steps").at("theta");
    ck.adam_psi.step = m.at("adam_steps").at("psi");
    ck.shifts = ShiftDistribution(m.at("shift_offsets").get<std::vector<int>>());
    ck.provenance = m.at("provenance").get<std::map<std::string, std::string>>();

    for (const auto& entry : m.at("tensors")) {
      const std::string name = entry.at("name");
      Tensor t(entry.at("shape").get<std::vector<std::int64_t>>());
      for (double& v : t.data) v = get<double>(in, pos);
      auto route = [&](const std::string& prefix) {
        return name.rfind(prefix, 0) == 0 ? name.substr(prefix.size()) : std::string{};
      };
      if (auto n = route("theta/"); !n.empty() && ck.theta) {
        ck.theta->tensors.emplace(n, std::move(t));
      } else if (auto n = route("psi/"); !n.empty() && ck.psi) {
        ck.psi->tensors.emplace(n, std::move(t));
      } else if (auto n = route("adam_theta/m/"); !n.empty()) {
        ck.adam_theta.m.emplace(n, std::move(t));
      } else if (auto n = route("adam_theta/v/"); !n.empty()) {
        ck.adam_theta.v.emplace(n, std::move(t));
      } else if (auto n = route("adam_psi/m/"); !n.empty()) {
        ck.adam_psi.m.emplace(n, std::move(t));
      } else if (auto n = route("adam_psi/v/"); !n.empty()) {
        ck.adam_psi.v.emplace(n, std::move(t));
      } else if (auto n = route("shift/"); !n.empty()) {
        if (t.data.size() != ck.shifts.offsets().size()) {
          throw CheckpointError(path.string() + ": shift logits for `" + n + "` have wrong size");
        }
        ck.shifts.register_subject(n);
        ck.shifts.logits(n) = t.data;
      } else {
        throw CheckpointError(path.string() + ": unexpected tensor `" + name + "`");
      }
    }
  } catch (const json::exception& e) {
    throw CheckpointError(path.string() + ": malformed manifest: " + e.what());
  }
  if (pos != in.size()) throw CheckpointError(path.string() + ": trailing bytes after tensors");
  return ck;
}

void write_history_csv(const std::vector<EpochRecord>& history, const fs::path& path) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,split,loss_temp,loss_freq,loss_total\n";
  for (const auto& r : history) {
    os << r.epoch << ',' << r.split << ',' << r.loss_temp << ',' << r.loss_freq << ','
       << r.loss_total << '\n';
  }
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  write_file_atomic(path, os.str());
}

// ---------------------------------------------------------------------------
// Training loop

std::vector<Sample> training_windows(const std::vector<Sample>& samples, const TrainConfig& cfg) {
  std::vector<Sample> out;
  for (const auto& s : samples) {
    for (auto& w : window_clip(s, cfg.window, cfg.overlap, cfg.grid)) out.push_back(std::move(w));
  }
  if (out.empty()) throw TrainError("no training windows");
  return out;
}

namespace {

constexpr std::uint64_t kPsiSeedOffset = 0x9E3779B97F4A7C15ULL;

struct WindowLoss {
  double temporal = 0.0;
  double frequency = 0.0;
  double total = 0.0;
};

// One forward/backward pass over a window, accumulating gradients.
WindowLoss window_step(Procedure proc, const ModelParams& theta, const ModelParams* psi,
                       const Sample& w, const ShiftDistribution& shifts, const TrainConfig& cfg,
                       TensorMap* g_theta, TensorMap* g_psi, std::vector<double>& g_logits) {
  const Volume input = to_volume(w.clip);
  PsmnTapePtr ptape;
  MagnifiedClip mag;
  const Volume* tdm_in = &input;
  if (proc != Procedure::kStage1) {
    mag = psmn_forward(*psi, input, w.clip.fps, &ptape);
    tdm_in = &mag.volume;
  }
  TdmTapePtr ttape;
  const PulseSignal pred = tdm_forward(theta, *tdm_in, w.clip.fps, &ttape);
  if (!std::all_of(pred.samples.begin(), pred.samples.end(), [](double v) { return std::isfinite(v); })) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    return {nan, nan, nan};
  }
  const auto lg = combined_loss_grad(pred, w.ppg_gt, w.hr_gt.at(0), shifts, w.subject,
                                     cfg.loss_config(), cfg.terms);
  for (std::size_t i = 0; i < g_logits.size(); ++i) g_logits[i] += lg.total.d_logits[i];
  if (!std::isfinite(lg.total.value)) return {lg.temporal, lg.frequency, lg.total.value};

  if (proc == Procedure::kStage1) {
    tdm_backward(theta, *ttape, lg.total.d_pred, g_theta, nullptr);
  } else {
    Volume d_mag(mag.volume.t, mag.volume.c, mag.volume.h, mag.volume.w);
    tdm_backward(theta, *ttape, lg.total.d_pred, proc == Procedure::kEndToEnd ? g_theta : nullptr,
                 &d_mag);
    ttape.reset();
    psmn_backward(*psi, *ptape, d_mag, g_psi, nullptr);
  }
  return {lg.temporal, lg.frequency, lg.total.value};
}

void scale(TensorMap& g, double s) {
  for (auto& [name, t] : g) {
    for (double& v : t.data) v *= s;
  }
}

std::vector<int> crfs_of(const std::vector<Sample>& samples) {
  std::set<int> s;
  for (const auto& x : samples) s.insert(x.compression ? x.compression->crf : 0);
  return {s.begin(), s.end()};
}

std::string rng_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

Checkpoint run(Procedure proc, const std::vector<Sample>& samples, Checkpoint ck,
               const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  const auto windows = training_windows(samples, cfg);
  const bool train_theta = proc != Procedure::kStage2;
  const bool train_psi = proc != Procedure::kStage1;
  const std::string theta_hash_before = hash_params(ck.theta->tensors);

  std::mt19937_64 rng(cfg.seed);
  if (hooks.resume != nullptr) {
    const Checkpoint& r = *hooks.resume;
    if (r.procedure != proc) throw TrainError("cannot resume: checkpoint is from a different procedure");
    if (r.config_hash() != ck.config_hash()) {
      throw TrainError("cannot resume: checkpoint architecture differs (config hash " +
                       r.config_hash() + ")");
    }
    ck = r;
    ck.config = cfg;
    std::istringstream is(r.rng_state);
    is >> rng;
    if (!is) throw TrainError("cannot resume: corrupt RNG state");
  } else {
    ck.shifts = ShiftDistribution(cfg.max_shift);
    for (const auto& w : windows) ck.shifts.register_subject(w.subject);
  }
  for (const auto& [k, v] : hooks.provenance) ck.provenance[k] = v;

  std::vector<std::size_t> order(windows.size());
  const std::size_t n_offsets = ck.shifts.offsets().size();
  for (int epoch = ck.epoch + 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
      TensorMap g_theta = train_theta ? zeros_like(ck.theta->tensors) : TensorMap{};
      TensorMap g_psi = train_psi ? zeros_like(ck.psi->tensors) : TensorMap{};
      std::map<std::string, std::vector<double>> g_logits;
      bool finite = true;
      for (std::size_t i = b; i < e; ++i) {
        const Sample& w = windows[order[i]];
        auto& gl = g_logits[w.subject];
        gl.resize(n_offsets, 0.0);
        const auto loss = window_step(proc, *ck.theta, ck.psi ? &*ck.psi : nullptr, w, ck.shifts,
                                      cfg, train_theta ? &g_theta : nullptr,
                                      train_psi ? &g_psi : nullptr, gl);
        rec.loss_temp += loss.temporal;
        rec.loss_freq += loss.frequency;
        rec.loss_total += loss.total;
        finite = finite && std::isfinite(loss.total);
      }
      const double inv = 1.0 / static_cast<double>(e - b);
      scale(g_theta, inv);
      scale(g_psi, inv);
      const double norm = std::hypot(grad_norm(g_theta), grad_norm(g_psi));
      if (!finite || !std::isfinite(norm)) {
        ck.epoch = epoch - 1;
        ck.rng_state = rng_string(rng);
        if (!hooks.diagnostic_path.empty()) save_checkpoint(ck, hooks.diagnostic_path);
        throw DivergenceError(std::string("training diverged (non-finite loss or gradient) in epoch ") +
                              std::to_string(epoch) +
                              (hooks.diagnostic_path.empty()
                                   ? std::string{}
                                   : "; diagnostic checkpoint: " + hooks.diagnostic_path.string()));
      }
      if (cfg.clip_norm > 0.0 && norm > cfg.clip_norm) {
        scale(g_theta, cfg.clip_norm / norm);
        scale(g_psi, cfg.clip_norm / norm);
        ++rec.clipped_steps;
      }
      if (train_theta) adamw_step(ck.theta->tensors, g_theta, ck.adam_theta, cfg.lr, cfg.weight_decay);
      if (train_psi) adamw_step(ck.psi->tensors, g_psi, ck.adam_psi, cfg.lr, cfg.weight_decay);
      for (auto& [subject, g] : g_logits) {
        auto& logits = ck.shifts.logits(subject);
        for (std::size_t k = 0; k < n_offsets; ++k) logits[k] -= cfg.shift_lr * g[k] * inv;
      }
    }
    const double n = static_cast<double>(windows.size());
    rec.loss_temp /= n;
    rec.loss_freq /= n;
    rec.loss_total /= n;
    ck.epoch = epoch;
    ck.rng_state = rng_string(rng);
    ck.history.push_back(rec);
    if ((train_theta && !all_finite(ck.theta->tensors)) || (train_psi && !all_finite(ck.psi->tensors))) {
      if (!hooks.diagnostic_path.empty()) save_checkpoint(ck, hooks.diagnostic_path);
      throw DivergenceError("parameters became non-finite in epoch " + std::to_string(epoch));
    }
    if (hooks.on_epoch) hooks.on_epoch(ck, rec);
  }
  if (ck.rng_state.empty()) ck.rng_state = rng_string(rng);
  if (!train_theta && hash_params(ck.theta->tensors) != theta_hash_before) {
    throw TrainError("internal error: frozen estimator parameters changed");
  }
  return ck;
}

}  // namespace

WindowGradients window_gradients(Procedure proc, const ModelParams& theta, const ModelParams* psi,
                                 const Sample& window, const ShiftDistribution& shifts,
                                 const TrainConfig& cfg) {
  if (proc != Procedure::kStage1 && psi == nullptr) {
    throw TrainError("window_gradients: this procedure needs a magnifier");
  }
  WindowGradients out;
  if (proc != Procedure::kStage2) out.theta = zeros_like(theta.tensors);
  if (proc != Procedure::kStage1) out.psi = zeros_like(psi->tensors);
  out.logits.assign(shifts.offsets().size(), 0.0);
  const auto loss = window_step(proc, theta, psi, window, shifts, cfg,
                                proc != Procedure::kStage2 ? &out.theta : nullptr,
                                proc != Procedure::kStage1 ? &out.psi : nullptr, out.logits);
  out.temporal = loss.temporal;
  out.frequency = loss.frequency;
  out.total = loss.total;
  return out;
}

Checkpoint train_stage1(const std::vector<Sample>& samples, const TrainConfig& cfg,
                        const TdmConfig& arch, const TrainHooks& hooks) {
  return train_stage1_from(samples, init_tdm(cfg.seed, arch), cfg, hooks);
}

Checkpoint train_stage1_from(const std::vector<Sample>& samples, const ModelParams& init,
                             const TrainConfig& cfg, const TrainHooks& hooks) {
  if (init.kind != ModelKind::kTdm) throw TrainError("stage 1 trains an estimator (tdm) network");
  Checkpoint ck;
  ck.procedure = Procedure::kStage1;
  ck.theta = init;
  ck.theta->frozen = false;
  ck.config = cfg;
  return run(Procedure::kStage1, samples, std::move(ck), cfg, hooks);
}

Checkpoint train_stage2(const std::vector<Sample>& samples, const ModelParams& theta,
                        const TrainConfig& cfg, const PsmnConfig& arch, const TrainHooks& hooks) {
  if (theta.kind != ModelKind::kTdm) throw TrainError("stage 2 needs an estimator (tdm) network");
  if (!theta.frozen) throw TrainError("stage 2 requires the estimator parameters to be frozen");
  const auto crfs = crfs_of(samples);
  if (crfs.size() > 1 && !cfg.allow_mixed_crf) {
    std::string list;
    for (int c : crfs) list += (list.empty() ? "" : ", ") + std::to_string(c);
    throw TrainError("stage 2 data mixes CRF values {" + list +
                     "}; train on one compression level or set allow_mixed_crf");
  }
  Checkpoint ck;
  ck.procedure = Procedure::kStage2;
  ck.theta = theta;
  ck.psi = init_psmn(cfg.seed ^ kPsiSeedOffset, arch);
  ck.config = cfg;
  return run(Procedure::kStage2, samples, std::move(ck), cfg, hooks);
}

Checkpoint train_end_to_end(const std::vector<Sample>& samples, const TrainConfig& cfg,
                            const TdmConfig& tdm_arch, const PsmnConfig& psmn_arch,
                            const TrainHooks& hooks) {
  Checkpoint ck;
  ck.procedure = Procedure::kEndToEnd;
  ck.theta = init_tdm(cfg.seed, tdm_arch);
  ck.psi = init_psmn(cfg.seed ^ kPsiSeedOffset, psmn_arch);
  ck.config = cfg;
  return run(Procedure::kEndToEnd, samples, std::move(ck), cfg, hooks);
}

}  // namespace pmag
