// uception: phantom | train | segment | evaluate | gradcheck

#include <CLI11.hpp>

#include <array>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "uception/commands.hpp"

namespace {

using namespace uception;

// --key value for every config key; dashes and underscores both accepted.
void add_config_flags(CLI::App& cmd, std::map<std::string, std::string>& values) {
  for (const auto& key : config_keys()) {
    std::string dashed = key;
    for (char& c : dashed)
      if (c == '_') c = '-';
    std::string names = "--" + key;
    if (dashed != key) names += ",--" + dashed;
    cmd.add_option_function<std::string>(
        names, [&values, key](const std::string& v) { values[key] = v; },
        "config key " + key);
  }
}

Spacing to_spacing(const std::array<double, 3>& a) { return {a[0], a[1], a[2]}; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"3-D vessel segmentation: phantom data, training, inference and evaluation"};
  app.set_version_flag("--version", version_string());
  app.require_subcommand(1);

  // phantom
  PhantomOptions ph;
  std::string ph_out, ph_manifest;
  std::array<std::size_t, 3> ph_size{64, 64, 64};
  std::array<double, 3> ph_spacing{1.0, 1.0, 1.0};
  auto* phantom = app.add_subcommand("phantom", "write a synthetic train/val/test dataset");
  phantom->add_option("--out", ph_out, "output directory")->required();
  phantom->add_option("--manifest", ph_manifest, "replay the settings of an earlier manifest.json");
  phantom->add_option("--n-train", ph.n_train, "training volumes")->capture_default_str();
  phantom->add_option("--n-val", ph.n_val, "validation volumes")->capture_default_str();
  phantom->add_option("--n-test", ph.n_test, "test volumes")->capture_default_str();
  phantom->add_option("--seed", ph.spec.seed, "dataset seed")->capture_default_str();
  phantom->add_option("--size", ph_size, "extents d h w")->capture_default_str();
  phantom->add_option("--spacing", ph_spacing, "voxel spacing d h w in mm")->capture_default_str();
  phantom->add_option("--tubes", ph.spec.tubes, "vessel tubes per volume")->capture_default_str();
  phantom->add_option("--blobs", ph.spec.blobs, "bright non-vessel blobs per volume")->capture_default_str();
  phantom->add_option("--noise", ph.spec.noise, "Gaussian noise std-dev")->capture_default_str();
  phantom->add_option("--curvature", ph.spec.curvature, "tube direction jitter")->capture_default_str();
  phantom->add_flag("--axis-aligned", ph.spec.axis_aligned, "straight tubes along the depth axis");

  // train
  TrainOptions tr;
  std::string tr_config, tr_data, tr_out, tr_manifest;
  std::map<std::string, std::string> tr_overrides;
  auto* train = app.add_subcommand("train", "train a model with snapshot averaging");
  train->add_option("--config", tr_config, "config file (key = value lines)");
  train->add_option("--data", tr_data, "dataset directory holding train/ and val/");
  train->add_option("--out", tr_out, "run directory")->required();
  train->add_option("--manifest", tr_manifest, "replay the config and data of an earlier run");
  train->add_flag("--resume", tr.resume, "continue from <out>/state.utst if present");
  train->add_option("--stop-after", tr.stop_after, "stop after this many epochs (resumable)");
  add_config_flags(*train, tr_overrides);

  // segment
  SegmentCmdOptions sg;
  std::string sg_ckpt, sg_in, sg_out;
  std::array<double, 3> sg_target{1.0, 1.0, 1.0};
  auto* segment = app.add_subcommand("segment", "segment one volume with a checkpoint");
  segment->add_option("--checkpoint", sg_ckpt, "model checkpoint (.ucpt)")->required();
  segment->add_option("--input", sg_in, "input volume (.mha, .mhd or .uvol)")->required();
  segment->add_option("--output", sg_out, "output mask (.mha or .mhd)")->required();
  segment->add_option("--threshold", sg.threshold, "probability threshold")->capture_default_str();
  segment->add_option("--patch", sg.patch, "inference patch size (default: from checkpoint)");
  segment->add_option("--target-spacing", sg_target, "resampling target in mm")->capture_default_str();
  segment->add_option("--clip-percentile", sg.preprocess.clip_percentile, "intensity clip percentile")
      ->capture_default_str();

  // evaluate
  EvaluateOptions ev;
  std::vector<std::string> ev_pred, ev_truth, ev_image;
  std::string ev_pred_dir, ev_truth_dir, ev_image_dir, ev_report;
  auto* evaluate = app.add_subcommand("evaluate", "score masks against ground truth");
  evaluate->add_option("--pred", ev_pred, "predicted masks");
  evaluate->add_option("--truth", ev_truth, "ground-truth masks, same order as --pred");
  evaluate->add_option("--image", ev_image, "raw images for the threshold baseline");
  evaluate->add_option("--pred-dir", ev_pred_dir, "directory of predicted masks");
  evaluate->add_option("--truth-dir", ev_truth_dir, "directory of ground-truth masks");
  evaluate->add_option("--image-dir", ev_image_dir, "directory of raw images");
  evaluate->add_option("--report", ev_report, "also write the report here");
  evaluate->add_option("--baseline-fraction", ev.baseline_fraction, "baseline threshold fraction of max")
      ->capture_default_str();
  evaluate->add_option("--clip-percentile", ev.clip_percentile, "baseline clip percentile")
      ->capture_default_str();

  // gradcheck
  GradcheckOptions gc;
  std::string gc_fault;
  auto* gradcheck = app.add_subcommand("gradcheck", "64-bit finite-difference suite");
  gradcheck->add_option("--seed", gc.seed, "random seed")->capture_default_str();
  gradcheck->add_option("--fault", gc_fault, "corrupt the analytic gradient of this check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*phantom) {
      if (!ph_manifest.empty()) {
        ph = phantom_options_from_json(read_manifest(ph_manifest).at("config"));
      } else {
        ph.spec.extents = {ph_size[0], ph_size[1], ph_size[2]};
        ph.spec.spacing = to_spacing(ph_spacing);
      }
      ph.out_dir = ph_out;
      return cmd_phantom(ph);
    }
    if (*train) {
      if (!tr_manifest.empty()) {
        const auto m = read_manifest(tr_manifest);
        tr.config = config_from_json(m.at("config"));
        if (tr_data.empty()) tr_data = m.at("inputs").at("data_dir").get<std::string>();
      }
      if (!tr_config.empty()) {
        const Bytes text = read_file(tr_config);
        tr.config = parse_config(std::string(text.begin(), text.end()), tr.config);
      }
      for (const auto& [key, value] : tr_overrides) set_config_value(tr.config, key, value);
      if (tr_data.empty()) throw Error(ErrorCode::Config, "data", "--data or --manifest is required");
      tr.data_dir = tr_data;
      tr.out_dir = tr_out;
      return cmd_train(tr);
    }
    if (*segment) {
      sg.checkpoint = sg_ckpt;
      sg.input = sg_in;
      sg.output = sg_out;
      sg.preprocess.target = to_spacing(sg_target);
      return cmd_segment(sg);
    }
    if (*evaluate) {
      for (const auto& p : ev_pred) ev.preds.emplace_back(p);
      for (const auto& p : ev_truth) ev.truths.emplace_back(p);
      for (const auto& p : ev_image) ev.images.emplace_back(p);
      if (!ev_pred_dir.empty() || !ev_truth_dir.empty()) {
        if (ev_pred_dir.empty() || ev_truth_dir.empty()) {
          throw Error(ErrorCode::Config, "evaluate", "--pred-dir and --truth-dir go together");
        }
        pair_directories(ev_pred_dir, ev_truth_dir, ev_image_dir, ev.preds, ev.truths, ev.images);
      }
      ev.report = ev_report;
      return cmd_evaluate(ev);
    }
    if (*gradcheck) {
      if (!gc_fault.empty()) {
        gc.fault = [gc_fault](std::string_view check, std::vector<double>& g) {
          if (check == gc_fault)
            for (double& v : g) v *= 1.01;
        };
      }
      gc.on_entry = [](const GradcheckEntry& e) {
        std::cerr << e.name << (e.passed ? " ok" : " FAILED") << "\n";
      };
      return cmd_gradcheck(gc);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: manifest: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}
