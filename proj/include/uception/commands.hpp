#pragma once

// The batch commands behind the CLI. Each writes its artifacts plus a single
// manifest.json into its output directory and reports failures as
// uception::Error; exit_code_for() maps those onto process exit codes.

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "uception/checkpoint.hpp"
#include "uception/config.hpp"
#include "uception/error.hpp"
#include "uception/gradcheck.hpp"
#include "uception/io.hpp"
#include "uception/metaimage.hpp"
#include "uception/metrics.hpp"
#include "uception/model.hpp"
#include "uception/optim.hpp"
#include "uception/phantom.hpp"
#include "uception/report.hpp"
#include "uception/train.hpp"

#ifndef UCEPTION_VERSION_STRING
#define UCEPTION_VERSION_STRING "unknown"
#endif

namespace uception {

namespace fs = std::filesystem;

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitIo = 3, kExitNumeric = 4 };

inline int exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::Config:
    case ErrorCode::InvalidArgument:
    case ErrorCode::ShapeMismatch:
    case ErrorCode::OddExtent:
    case ErrorCode::Sparseness:
    case ErrorCode::EmptyInput: return kExitConfig;
    case ErrorCode::Io:
    case ErrorCode::MissingKey:
    case ErrorCode::UnsupportedElementType:
    case ErrorCode::PayloadLength:
    case ErrorCode::MalformedHeader:
    case ErrorCode::BadMagic: return kExitIo;
    case ErrorCode::NonFinite:
    case ErrorCode::EmptyMask: return kExitNumeric;
  }
  return kExitFailure;
}

inline std::string version_string() { return UCEPTION_VERSION_STRING; }

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct RunManifest {
  std::string command;
  std::uint64_t seed = 0;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json inputs = nlohmann::json::object();
  std::vector<std::string> outputs;
  std::string started = utc_timestamp();
  std::string finished;
};

inline void write_manifest(const fs::path& dir, RunManifest m) {
  m.finished = utc_timestamp();
  nlohmann::json j;
  j["command"] = m.command;
  j["version"] = version_string();
  j["seed"] = m.seed;
  j["config"] = m.config;
  j["inputs"] = m.inputs;
  j["outputs"] = m.outputs;
  j["started"] = m.started;
  j["finished"] = m.finished;
  write_text_file(dir / "manifest.json", j.dump(2) + "\n");
}

inline nlohmann::json read_manifest(const fs::path& path) {
  const Bytes b = read_file(path);
  try {
    return nlohmann::json::parse(b.begin(), b.end());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Config, path.string(), std::string("bad manifest: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Datasets on disk: <split>/<name>_image.mha with <name>_truth.mha.

struct CasePaths {
  std::string name;
  fs::path image, truth;
};

inline std::vector<CasePaths> list_cases(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::Io, dir.string(), "not a directory");
  std::vector<CasePaths> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string file = entry.path().filename().string();
    const std::string tag = "_image";
    const auto ext = entry.path().extension().string();
    if (ext != ".mha" && ext != ".mhd" && ext != ".uvol") continue;
    const std::string stem = entry.path().stem().string();
    if (stem.size() <= tag.size() || stem.compare(stem.size() - tag.size(), tag.size(), tag) != 0) continue;
    const std::string name = stem.substr(0, stem.size() - tag.size());
    const fs::path truth = dir / (name + "_truth" + ext);
    if (!fs::exists(truth)) throw Error(ErrorCode::Io, truth.string(), "image has no matching truth");
    out.push_back({name, entry.path(), truth});
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
  return out;
}

inline Volume require_spacing(const MetaImage& m, const fs::path& path) {
  if (!m.header.has_spacing) {
    throw Error(ErrorCode::MissingKey, "ElementSpacing", path.string() + " has no spacing metadata");
  }
  return m.volume;
}

// Preprocessed image with its truth brought onto the same 1 mm grid.
inline Sample load_sample(const CasePaths& c, const PreprocessOptions& opt = {}) {
  const Volume raw = require_spacing(read_volume_file(c.image), c.image);
  const BinaryMask truth = binarize(read_volume_file(c.truth).volume);
  require_same_extents(raw.extents, truth.extents, c.name);
  Sample s;
  s.name = c.name;
  s.image = preprocess(raw, opt);
  BinaryMask t = truth;
  t.spacing = raw.spacing;
  s.truth = resample_nearest(t, s.image.extents, s.image.spacing);
  return s;
}

// ---------------------------------------------------------------------------
// phantom

struct PhantomOptions {
  fs::path out_dir;
  std::size_t n_train = 12, n_val = 1, n_test = 3;
  PhantomSpec spec;  // spec.seed is the dataset seed
};

inline nlohmann::json phantom_options_json(const PhantomOptions& o) {
  const auto& s = o.spec;
  return {{"n_train", o.n_train},
          {"n_val", o.n_val},
          {"n_test", o.n_test},
          {"extents", {s.extents.d, s.extents.h, s.extents.w}},
          {"spacing_mm", {s.spacing.d, s.spacing.h, s.spacing.w}},
          {"tubes", s.tubes},
          {"radius", {s.radius_min, s.radius_max}},
          {"step", s.step},
          {"curvature", s.curvature},
          {"noise", s.noise},
          {"background", s.background},
          {"intensity", {s.intensity_min, s.intensity_max}},
          {"blobs", s.blobs},
          {"blob_radius", {s.blob_radius_min, s.blob_radius_max}},
          {"blob_intensity", {s.blob_intensity_min, s.blob_intensity_max}},
          {"axis_aligned", s.axis_aligned},
          {"seed", s.seed},
          {"max_foreground", s.max_foreground}};
}

// Inverse of phantom_options_json; out_dir is left to the caller.
inline PhantomOptions phantom_options_from_json(const nlohmann::json& j) {
  PhantomOptions o;
  try {
    auto& s = o.spec;
    j.at("n_train").get_to(o.n_train);
    j.at("n_val").get_to(o.n_val);
    j.at("n_test").get_to(o.n_test);
    const auto& e = j.at("extents");
    s.extents = {e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>(), e.at(2).get<std::size_t>()};
    const auto& sp = j.at("spacing_mm");
    s.spacing = {sp.at(0).get<double>(), sp.at(1).get<double>(), sp.at(2).get<double>()};
    j.at("tubes").get_to(s.tubes);
    j.at("radius").at(0).get_to(s.radius_min);
    j.at("radius").at(1).get_to(s.radius_max);
    j.at("step").get_to(s.step);
    j.at("curvature").get_to(s.curvature);
    j.at("noise").get_to(s.noise);
    j.at("background").get_to(s.background);
    j.at("intensity").at(0).get_to(s.intensity_min);
    j.at("intensity").at(1).get_to(s.intensity_max);
    j.at("blobs").get_to(s.blobs);
    j.at("blob_radius").at(0).get_to(s.blob_radius_min);
    j.at("blob_radius").at(1).get_to(s.blob_radius_max);
    j.at("blob_intensity").at(0).get_to(s.blob_intensity_min);
    j.at("blob_intensity").at(1).get_to(s.blob_intensity_max);
    j.at("axis_aligned").get_to(s.axis_aligned);
    j.at("seed").get_to(s.seed);
    j.at("max_foreground").get_to(s.max_foreground);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Config, "manifest", std::string("bad phantom config: ") + e.what());
  }
  return o;
}

inline int cmd_phantom(const PhantomOptions& opt, std::ostream& log = std::cerr) {
  const std::size_t total = opt.n_train + opt.n_val + opt.n_test;
  if (total == 0) throw Error(ErrorCode::Config, "n", "at least one phantom must be requested");
  validate(opt.spec);
  RunManifest m;
  m.command = "phantom";
  m.seed = opt.spec.seed;
  m.config = phantom_options_json(opt);

  std::size_t index = 0;
  for (auto [split, n] : {std::pair{"train", opt.n_train}, std::pair{"val", opt.n_val},
                          std::pair{"test", opt.n_test}}) {
    for (std::size_t k = 0; k < n; ++k, ++index) {
      PhantomSpec spec = opt.spec;
      spec.seed = mix_seed(opt.spec.seed, index);
      const Phantom ph = generate_phantom(spec);
      char name[32];
      std::snprintf(name, sizeof name, "case_%03zu", index);
      const fs::path dir = opt.out_dir / split;
      const fs::path image = dir / (std::string(name) + "_image.mha");
      const fs::path truth = dir / (std::string(name) + "_truth.mha");
      write_metaimage_file(image, ph.image, MetaElementType::Float);
      write_metaimage_file(truth, to_volume(ph.truth), MetaElementType::UChar);
      m.outputs.push_back(fs::relative(image, opt.out_dir).string());
      m.outputs.push_back(fs::relative(truth, opt.out_dir).string());
      log << "phantom " << split << "/" << name << " foreground "
          << count_foreground(ph.truth) << " voxels\n";
    }
  }
  write_manifest(opt.out_dir, m);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  TrainConfig config;
  fs::path data_dir;  // holds train/ and val/
  fs::path out_dir;
  bool resume = false;
  std::size_t stop_after = 0;  // stop (unfinalised) after this many epochs in this call; 0 = off
};

inline nlohmann::json config_json(const TrainConfig& cfg) {
  nlohmann::json j = nlohmann::json::object();
  std::istringstream in(config_to_text(cfg));
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    if (eq != std::string::npos) j[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return j;
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorCode::Config, "manifest", "config must be an object");
  TrainConfig cfg;
  for (const auto& [key, value] : j.items()) {
    if (!value.is_string()) throw Error(ErrorCode::Config, key, "manifest values must be strings");
    set_config_value(cfg, key, value.get<std::string>());
  }
  validate(cfg);
  return cfg;
}

inline std::string log_header() { return "epoch\tlr\ttrain_loss\tval_loss\tsnapshot_flag\n"; }

inline std::string log_line(const EpochRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu\t%.9g\t%.9g\t%.9g\t%lld\n", r.epoch, r.lr, r.train_loss,
                r.val_loss, static_cast<long long>(r.captured));
  return buf;
}

namespace detail {

template <class T>
double mean_validation_loss(const ModelGraph<T>& model, const std::vector<Sample>& val,
                            std::size_t patch) {
  double total = 0.0;
  for (const auto& s : val) total += -soft_dice_volume(predict_volume(model, s.image, patch), s.truth, 0.0);
  return total / static_cast<double>(val.size());
}

inline fs::path snapshot_path(const fs::path& out, std::size_t epoch) {
  char name[40];
  std::snprintf(name, sizeof name, "epoch_%04zu.ucpt", epoch);
  return out / "snapshots" / name;
}

template <class T>
int run_training(const TrainOptions& opt, const std::vector<Sample>& train,
                 const std::vector<Sample>& val, std::ostream& log) {
  const TrainConfig& cfg = opt.config;
  const std::string cfg_text = config_to_text(cfg);
  const fs::path out = opt.out_dir;
  const fs::path state_path = out / "state.utst";
  RunManifest manifest;
  manifest.command = "train";
  manifest.seed = cfg.seed;
  manifest.config = config_json(cfg);
  manifest.inputs = {{"data_dir", opt.data_dir.string()},
                     {"train", train.size()},
                     {"val", val.size()},
                     {"resume", opt.resume}};

  ModelGraph<T> model = build_model<T>(model_config(cfg));
  TrainState<T> st;
  if (opt.resume && fs::exists(state_path)) {
    st = decode_train_state<T>(read_file(state_path));
    if (st.config_text != cfg_text) {
      throw Error(ErrorCode::Config, "resume", "config differs from the interrupted run");
    }
    set_parameter_values(model, st.params);
    log << "resuming after epoch " << st.epochs_done << "\n";
  } else {
    st.config_text = cfg_text;
    st.adam = make_adam_state(model.parameters());
    st.snapshots.capacity = cfg.snapshots;
  }

  std::string log_text = log_header();
  for (const auto& h : st.history) log_text += log_line(h);
  write_text_file(out / "log.tsv", log_text);

  const CyclicSchedule base{cfg.lr_max, cfg.lr_min, cfg.cycle_epochs, 0};
  const BatchSpec batch{cfg.batch, cfg.patch, cfg.steps, cfg.min_fg_frac, cfg.smooth};
  const CheckpointMeta meta0{model.cfg(), cfg.patch, 0};
  std::size_t ran = 0;
  for (std::size_t epoch = st.epochs_done; epoch < cfg.epochs; ++epoch) {
    if (opt.stop_after && ran == opt.stop_after) {
      log << "stopping after " << ran << " epochs as requested\n";
      write_manifest(out, manifest);
      return kExitOk;
    }
    CyclicSchedule sched = base;
    sched.epochs_elapsed = epoch;
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = cyclic_lr(sched);
    rec.train_loss = train_epoch(model, train, batch, st.adam, sched, cfg.seed);
    rec.val_loss = mean_validation_loss(model, val, cfg.patch);
    if (const auto c = snapshot_update(st.snapshots, epoch, rec.val_loss, parameter_values(model))) {
      rec.captured = static_cast<std::int64_t>(*c);
    }
    st.history.push_back(rec);
    st.epochs_done = epoch + 1;
    st.params = parameter_values(model);
    log_text += log_line(rec);

    CheckpointMeta meta = meta0;
    meta.epoch = epoch;
    write_file(out / "last.ucpt", encode_checkpoint(model, meta));
    write_file(state_path, encode_train_state(st));
    write_text_file(out / "log.tsv", log_text);
    log << "epoch " << epoch << " lr " << rec.lr << " train " << rec.train_loss << " val "
        << rec.val_loss << (rec.captured >= 0 ? " (snapshot " + std::to_string(rec.captured) + ")" : "")
        << "\n";
    ++ran;
  }

  // Judge the last epoch and average whatever the set holds.
  SnapshotSet<T> final_set = st.snapshots;
  snapshot_finalize(final_set);
  std::error_code ec;
  fs::remove_all(out / "snapshots", ec);
  std::string snap_text = "epoch\tval_loss\n";
  ModelGraph<T> scratch = model;
  for (const auto& e : final_set.entries) {
    set_parameter_values(scratch, e.params);
    CheckpointMeta meta = meta0;
    meta.epoch = e.epoch;
    const fs::path p = snapshot_path(out, e.epoch);
    write_file(p, encode_checkpoint(scratch, meta));
    manifest.outputs.push_back(fs::relative(p, out).string());
    char line[64];
    std::snprintf(line, sizeof line, "%zu\t%.9g\n", e.epoch, e.val_loss);
    snap_text += line;
  }
  set_parameter_values(scratch, snapshot_average(final_set));
  const double avg_loss = mean_validation_loss(scratch, val, cfg.patch);
  char line[64];
  std::snprintf(line, sizeof line, "average\t%.9g\n", avg_loss);
  snap_text += line;
  write_text_file(out / "snapshots.tsv", snap_text);
  CheckpointMeta meta = meta0;
  meta.epoch = cfg.epochs - 1;
  write_file(out / "final.ucpt", encode_checkpoint(scratch, meta));
  log << "averaged " << final_set.entries.size() << " snapshots; validation loss " << avg_loss << "\n";

  for (const char* f : {"final.ucpt", "last.ucpt", "state.utst", "log.tsv", "snapshots.tsv"})
    manifest.outputs.emplace_back(f);
  write_manifest(out, manifest);
  return kExitOk;
}

}  // namespace detail

inline int cmd_train(const TrainOptions& opt, std::ostream& log = std::cerr) {
  validate(opt.config);
  const auto train_cases = list_cases(opt.data_dir / "train");
  const auto val_cases = list_cases(opt.data_dir / "val");
  if (train_cases.empty()) throw Error(ErrorCode::EmptyInput, "train", "no training volumes found");
  if (val_cases.empty()) throw Error(ErrorCode::EmptyInput, "val", "no validation volumes found");
  std::vector<Sample> train, val;
  for (const auto& c : train_cases) train.push_back(load_sample(c));
  for (const auto& c : val_cases) val.push_back(load_sample(c));
  fs::create_directories(opt.out_dir);
  if (opt.config.precision == 64) return detail::run_training<double>(opt, train, val, log);
  return detail::run_training<float>(opt, train, val, log);
}

// ---------------------------------------------------------------------------
// segment

struct SegmentCmdOptions {
  fs::path checkpoint, input, output;
  double threshold = 0.9;
  std::size_t patch = 0;  // 0 = the patch size stored in the checkpoint
  PreprocessOptions preprocess;
};

inline ModelGraph<float> load_model(const fs::path& path, CheckpointMeta* meta = nullptr) {
  return decode_checkpoint<float>(read_file(path), meta);
}

inline int cmd_segment(const SegmentCmdOptions& opt, std::ostream& log = std::cerr) {
  CheckpointMeta meta;
  const ModelGraph<float> model = load_model(opt.checkpoint, &meta);
  const MetaImage img = read_volume_file(opt.input);
  const Volume raw = require_spacing(img, opt.input);
  SegmentOptions so;
  so.preprocess = opt.preprocess;
  so.patch = opt.patch ? opt.patch : meta.patch;
  so.threshold = opt.threshold;
  const BinaryMask mask = segment_volume(model, raw, so);
  write_volume_file(opt.output, to_volume(mask), MetaElementType::UChar);
  log << "segment " << opt.input.string() << ": " << count_foreground(mask) << " foreground voxels\n";

  RunManifest m;
  m.command = "segment";
  m.config = {{"threshold", opt.threshold},
              {"patch", so.patch},
              {"target_spacing_mm", {so.preprocess.target.d, so.preprocess.target.h, so.preprocess.target.w}},
              {"clip_percentile", so.preprocess.clip_percentile}};
  m.inputs = {{"checkpoint", opt.checkpoint.string()}, {"volume", opt.input.string()}};
  m.outputs.push_back(opt.output.filename().string());
  write_manifest(opt.output.has_parent_path() ? opt.output.parent_path() : fs::path("."), m);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateOptions {
  std::vector<fs::path> preds, truths, images;  // images optional (baseline)
  fs::path report;                              // optional output file
  double baseline_fraction = 0.70;
  double clip_percentile = 99.9;
};

inline bool is_volume_file(const fs::path& p) {
  const auto ext = p.extension().string();
  return ext == ".mha" || ext == ".mhd" || ext == ".uvol";
}

// Splits a stem like case_003_truth into the case key "case_003" and the role
// "truth". _pred, _mask and _seg all mean a prediction; an untagged stem has
// an empty role and fits any.
struct CaseName {
  std::string key, role;
};

inline CaseName case_name(const fs::path& p) {
  const std::string stem = p.stem().string();
  const std::pair<const char*, const char*> suffixes[] = {
      {"_pred", "pred"}, {"_mask", "pred"}, {"_seg", "pred"}, {"_truth", "truth"}, {"_image", "image"}};
  for (const auto& [suffix, role] : suffixes) {
    const std::string s = suffix;
    if (stem.size() > s.size() && stem.ends_with(s)) return {stem.substr(0, stem.size() - s.size()), role};
  }
  return {stem, ""};
}

inline std::string case_key(const fs::path& p) { return case_name(p).key; }

inline std::map<std::string, fs::path> volumes_by_key(const fs::path& dir, std::string_view role) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::Io, dir.string(), "not a directory");
  std::map<std::string, fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!is_volume_file(entry.path())) continue;
    const CaseName n = case_name(entry.path());
    if (!n.role.empty() && n.role != role) continue;
    if (!out.emplace(n.key, entry.path()).second) {
      throw Error(ErrorCode::Config, entry.path().string(), "two files map to the same case");
    }
  }
  return out;
}

// Matches predictions to ground truths (and optionally images) by case key.
// Any file without a partner is an error.
inline void pair_directories(const fs::path& pred_dir, const fs::path& truth_dir,
                             const fs::path& image_dir, std::vector<fs::path>& preds,
                             std::vector<fs::path>& truths, std::vector<fs::path>& images) {
  const auto p = volumes_by_key(pred_dir, "pred");
  const auto t = volumes_by_key(truth_dir, "truth");
  std::map<std::string, fs::path> im;
  if (!image_dir.empty()) im = volumes_by_key(image_dir, "image");
  for (const auto& [key, path] : p) {
    if (!t.count(key)) throw Error(ErrorCode::Config, path.string(), "no ground truth for this prediction");
    if (!image_dir.empty() && !im.count(key)) {
      throw Error(ErrorCode::Config, path.string(), "no image for this prediction");
    }
  }
  for (const auto& [key, path] : t) {
    if (!p.count(key)) throw Error(ErrorCode::Config, path.string(), "no prediction for this ground truth");
    preds.push_back(p.at(key));
    truths.push_back(path);
    if (!image_dir.empty()) images.push_back(im.at(key));
  }
}

struct EvaluateResult {
  std::vector<std::string> names;
  std::vector<SegReport> model, baseline;
  std::string text;
};

inline EvaluateResult evaluate_files(const EvaluateOptions& opt) {
  if (opt.preds.empty()) throw Error(ErrorCode::Config, "pred", "no prediction masks given");
  if (opt.preds.size() != opt.truths.size()) {
    throw Error(ErrorCode::Config, "truth",
                std::to_string(opt.preds.size()) + " predictions but " +
                    std::to_string(opt.truths.size()) + " ground truths");
  }
  if (!opt.images.empty() && opt.images.size() != opt.truths.size()) {
    throw Error(ErrorCode::Config, "image", "image count does not match the ground truths");
  }
  EvaluateResult res;
  std::string records;
  for (std::size_t i = 0; i < opt.preds.size(); ++i) {
    const MetaImage t = read_volume_file(opt.truths[i]);
    const BinaryMask truth = binarize(t.volume);
    BinaryMask pred = binarize(read_volume_file(opt.preds[i]).volume);
    require_same_extents(pred.extents, truth.extents, opt.preds[i].filename().string());
    pred.spacing = truth.spacing;
    const std::string name = case_key(opt.truths[i]);
    res.names.push_back(name);
    res.model.push_back(evaluate_segmentation(pred, truth));
    records += "method=Uception " + format_record(name, res.model.back()) + "\n";
    if (!opt.images.empty()) {
      const Volume image = read_volume_file(opt.images[i]).volume;
      require_same_extents(image.extents, truth.extents, opt.images[i].filename().string());
      BinaryMask base = threshold_baseline(clip_normalize(image, opt.clip_percentile).volume,
                                           opt.baseline_fraction);
      base.spacing = truth.spacing;
      res.baseline.push_back(evaluate_segmentation(base, truth));
      records += "method=Threshold " + format_record(name, res.baseline.back()) + "\n";
    }
  }
  std::vector<ReportColumn> cols{{"Uception", res.model}};
  if (!res.baseline.empty()) cols.push_back({"Threshold", res.baseline});
  res.text = records + "\n" + format_summary(cols);
  return res;
}

inline int cmd_evaluate(const EvaluateOptions& opt, std::ostream& out = std::cout) {
  RunManifest m;
  m.command = "evaluate";
  const EvaluateResult res = evaluate_files(opt);
  out << res.text;
  if (!opt.report.empty()) {
    write_text_file(opt.report, res.text);
    auto paths = [](const std::vector<fs::path>& v) {
      std::vector<std::string> s;
      for (const auto& p : v) s.push_back(p.string());
      return s;
    };
    m.config = {{"baseline_fraction", opt.baseline_fraction}, {"clip_percentile", opt.clip_percentile}};
    m.inputs = {{"pred", paths(opt.preds)}, {"truth", paths(opt.truths)}, {"image", paths(opt.images)}};
    m.outputs.push_back(opt.report.filename().string());
    write_manifest(opt.report.has_parent_path() ? opt.report.parent_path() : fs::path("."), m);
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// gradcheck

inline std::string format_gradcheck(const GradcheckReport& r) {
  std::string out = "check\tmax_rel_error\ttolerance\tchecked\tskipped\tresult\n";
  for (const auto& e : r.entries) {
    char line[200];
    std::snprintf(line, sizeof line, "%s\t%.3e\t%.0e\t%zu\t%zu\t%s\n", e.name.c_str(),
                  e.max_rel_error, e.tolerance, e.checked, e.skipped, e.passed ? "PASS" : "FAIL");
    out += line;
  }
  return out;
}

inline int cmd_gradcheck(const GradcheckOptions& opt, std::ostream& out = std::cout) {
  const GradcheckReport r = run_gradcheck(opt);
  out << format_gradcheck(r);
  out << (r.passed() ? "all gradient checks passed\n" : "gradient check FAILED\n");
  return r.passed() ? kExitOk : kExitNumeric;
}

}  // namespace uception
