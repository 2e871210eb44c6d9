// Acceptance gate: one PASS/FAIL line per criterion, exit 0 only if all pass.
//   uception_acceptance [work_dir] [--quick]
// --quick shrinks the end-to-end runs (criteria 5, 6, 10) for smoke testing;
// quick results are reported but are not the gate.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "uception/commands.hpp"

using namespace uception;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int id, bool pass, const std::string& detail) {
  std::printf("criterion %2d: %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Runs a criterion body; an escaping exception is a FAIL with its message.
void guarded(int id, const auto& body) {
  try {
    body();
  } catch (const std::exception& e) {
    report(id, false, std::string("exception: ") + e.what());
  }
}

BinaryMask random_mask(std::mt19937_64& gen, double density) {
  BinaryMask m(Extent3::cube(16), Spacing{});
  std::bernoulli_distribution b(density);
  for (auto& v : m.data) v = b(gen);
  if (count_foreground(m) == 0) m.data[gen() % m.data.size()] = 1;
  return m;
}

// Direct double loops over voxel pairs.
double brute_ahd(const BinaryMask& a, const BinaryMask& b) {
  auto pts = [](const BinaryMask& m) {
    std::vector<std::array<double, 3>> out;
    for (std::size_t z = 0; z < m.extents.d; ++z)
      for (std::size_t y = 0; y < m.extents.h; ++y)
        for (std::size_t x = 0; x < m.extents.w; ++x)
          if (m.at(z, y, x))
            out.push_back({z * m.spacing.d, y * m.spacing.h, x * m.spacing.w});
    return out;
  };
  auto directed = [](const auto& from, const auto& to) {
    double sum = 0.0;
    for (const auto& p : from) {
      double best = INFINITY;
      for (const auto& q : to) {
        const double dz = p[0] - q[0], dy = p[1] - q[1], dx = p[2] - q[2];
        best = std::min(best, dz * dz + dy * dy + dx * dx);
      }
      sum += std::sqrt(best);
    }
    return sum / double(from.size());
  };
  const auto pa = pts(a), pb = pts(b);
  return 0.5 * (directed(pa, pb) + directed(pb, pa));
}

BinaryMask points(std::initializer_list<std::array<std::size_t, 3>> pts, Extent3 e = {1, 1, 8}) {
  BinaryMask m(e, Spacing{});
  for (const auto& p : pts) m.at(p[0], p[1], p[2]) = 1;
  return m;
}

void criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  const GradcheckReport r = run_gradcheck({});
  const double secs = seconds_since(t0);
  bool ok = secs <= 120.0;
  double worst_layer = 0.0, worst_model = 0.0;
  bool has_dice = false, has_blocks = false, has_mini = false;
  for (const auto& e : r.entries) {
    const bool model = e.name.starts_with("uception_") || e.name.starts_with("unet3d_");
    (model ? worst_model : worst_layer) = std::max(model ? worst_model : worst_layer, e.max_rel_error);
    ok = ok && e.checked > 0 && e.max_rel_error <= (model ? 1e-3 : 1e-4);
    has_dice |= e.name == "soft_dice";
    has_blocks |= e.name == "deep_block" || e.name == "reduction_block";
    has_mini |= e.name == "uception_d2_l1";
  }
  ok = ok && has_dice && has_blocks && has_mini;
  report(1, ok, fmt("%zu checks; max rel err layers %.2e (<=1e-4), miniature models %.2e (<=1e-3); %.1f s (<=120 s)",
                    r.entries.size(), worst_layer, worst_model, secs));
}

void criterion2() {
  ModelCfg cfg;
  cfg.depth = 10;
  cfg.levels = 3;
  const auto m = build_uception<float>(cfg);
  Tensor5<float> x(Shape5{1, 1, 64, 64, 64});
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (float& v : x.values()) v = u(gen);
  const auto y = forward(m, x, Mode::Infer);
  bool ok = y.shape() == Shape5{1, 1, 64, 64, 64};
  float lo = 1, hi = 0;
  for (float v : y.values()) lo = std::min(lo, v), hi = std::max(hi, v);
  ok = ok && lo > 0.0f && hi < 1.0f;

  bool halves = true, preserves = true;
  for (std::size_t e : {8u, 16u}) {
    const auto red = make_reduction_block<float>({3, 5}, 0.0, 2);
    const auto ro = forward(red, Tensor5<float>(Shape5{1, 3, e, e, e / 2}), Mode::Infer);
    halves = halves && ro.shape() == Shape5{1, 3 + 2 * 5, e / 2, e / 2, e / 4};
    const auto deep = make_deep_block<float>({3, 5}, 0.0, 2);
    const auto d = forward(deep, Tensor5<float>(Shape5{1, 3, e, e, e / 2}), Mode::Infer);
    preserves = preserves && d.shape() == Shape5{1, 20, e, e, e / 2};
  }
  report(2, ok && halves && preserves,
         fmt("D=10 L=3: (1,1,64,64,64) -> %s, outputs in [%.3g, %.3g]; reduction halves: %s; deep block 4D channels, same extents: %s",
             y.shape().str().c_str(), double(lo), double(hi), halves ? "yes" : "no", preserves ? "yes" : "no"));
}

void criterion3() {
  std::mt19937_64 gen(33);
  std::size_t bad = 0;
  for (int i = 0; i < 200; ++i) {
    const auto p = random_mask(gen, 0.02 + 0.2 * double(i % 10) / 10.0);
    const auto t = random_mask(gen, 0.05 + 0.1 * double(i % 7) / 7.0);
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t k = 0; k < p.data.size(); ++k) {
      tp += p.data[k] && t.data[k];
      fp += p.data[k] && !t.data[k];
      fn += !p.data[k] && t.data[k];
    }
    const double dice = 2.0 * double(tp) / double(2 * tp + fp + fn);
    const double sens = double(tp) / double(tp + fn);
    bad += hard_dice(p, t) != dice || sensitivity(p, t) != sens || average_hausdorff(p, t) != brute_ahd(p, t);
  }
  const double h0 = average_hausdorff(points({{0, 0, 1}, {0, 0, 4}}), points({{0, 0, 1}, {0, 0, 4}}));
  const double h3 = average_hausdorff(points({{0, 0, 0}}), points({{0, 0, 3}}));
  // P {0} vs T {0,2}: P->T 0, T->P (0+2)/2
  const double h5 = average_hausdorff(points({{0, 0, 0}}), points({{0, 0, 0}, {0, 0, 2}}));
  const bool hand = std::abs(h0) <= 1e-9 && std::abs(h3 - 3.0) <= 1e-9 && std::abs(h5 - 0.5) <= 1e-9;
  report(3, bad == 0 && hand,
         fmt("%zu/200 random 16^3 pairs differ from brute force; hand cases %.9g, %.9g, %.9g (want 0, 3, 0.5)",
             bad, h0, h3, h5));
}

void criterion4() {
  std::mt19937_64 gen(44);
  std::size_t bad = 0;
  for (int i = 0; i < 200; ++i) {
    const auto p = random_mask(gen, 0.01 + 0.05 * (i % 9));
    const auto t = random_mask(gen, 0.01 + 0.04 * (i % 5));
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t k = 0; k < p.data.size(); ++k) {
      tp += p.data[k] && t.data[k];
      fp += p.data[k] && !t.data[k];
      fn += !p.data[k] && t.data[k];
    }
    const double want = 2.0 * double(tp) / double(2 * tp + fp + fn);
    const double got = soft_dice(mask_tensor<double>(p), mask_tensor<double>(t), 0.0);
    bad += got != want;
  }
  report(4, bad == 0, fmt("%zu/200 random binary pairs where soft dice != 2TP/(2TP+FP+FN)", bad));
}

struct EndToEnd {
  bool ran = false;
  fs::path run_dir, data_dir;
  double train_seconds = 0;
};

EndToEnd criterion5(const fs::path& work, bool quick) {
  EndToEnd out;
  out.data_dir = work / "phantoms";
  out.run_dir = work / "uception";
  PhantomOptions ph;
  ph.out_dir = out.data_dir;
  std::ostringstream quiet;
  cmd_phantom(ph, quiet);

  TrainOptions tr;
  tr.config = parse_config(
      "depth = 4\nlevels = 2\npatch = 32\nbatch = 2\nsteps = 12\nlr_max = 3e-3\nlr_min = 3e-5\n"
      "cycle_epochs = 20\nepochs = 40\ndropout = 0.25\nseed = 1\n");
  if (quick) tr.config.epochs = 4;
  tr.data_dir = out.data_dir;
  tr.out_dir = out.run_dir;
  const auto t0 = std::chrono::steady_clock::now();
  cmd_train(tr, quiet);
  out.train_seconds = seconds_since(t0);
  out.ran = true;

  EvaluateOptions ev;
  for (const auto& c : list_cases(out.data_dir / "test")) {
    SegmentCmdOptions sg;
    sg.checkpoint = out.run_dir / "final.ucpt";
    sg.input = c.image;
    sg.output = work / "masks" / (c.name + "_pred.mha");
    fs::create_directories(sg.output.parent_path());
    cmd_segment(sg, quiet);
    ev.preds.push_back(sg.output);
    ev.truths.push_back(c.truth);
    ev.images.push_back(c.image);
  }
  const auto res = evaluate_files(ev);
  write_text_file(work / "phantom_report.txt", res.text);
  auto mean = [](const std::vector<SegReport>& v, double SegReport::*f) {
    return mean_std([&] {
             std::vector<double> x;
             for (const auto& r : v) x.push_back(r.*f);
             return x;
           }())
        .mean;
  };
  const double dice = mean(res.model, &SegReport::dice), base_dice = mean(res.baseline, &SegReport::dice);
  const double ahd = mean(res.model, &SegReport::avg_hausdorff_mm),
               base_ahd = mean(res.baseline, &SegReport::avg_hausdorff_mm);
  const bool ok = !quick && dice >= 0.80 && dice > base_dice && ahd < base_ahd && out.train_seconds <= 900.0 &&
                  tr.config.epochs <= 40;
  report(5, ok,
         fmt("%s%zu epochs in %.0f s (<=900 s); test Dice %.3f (>=0.80) vs threshold %.3f; AHD %.2f mm vs %.2f mm",
             quick ? "[quick, not gating] " : "", tr.config.epochs, out.train_seconds, dice, base_dice, ahd,
             base_ahd));
  return out;
}

void criterion6(const fs::path& work, const fs::path& data_dir, bool quick) {
  bool counts = true;
  std::string detail;
  for (auto [d, l] : {std::pair<std::size_t, std::size_t>{10, 3}, {4, 2}}) {
    ModelCfg cfg;
    cfg.depth = d;
    cfg.levels = l;
    const double u = double(build_uception<float>(cfg).parameter_count());
    const double b = double(build_unet3d_baseline<float>(cfg).parameter_count());
    const double rel = b / u - 1.0;
    counts = counts && std::abs(rel) <= 0.10;
    detail += fmt("D=%zu L=%zu params %.0f vs %.0f (%+.1f%%); ", d, l, u, b, 100 * rel);
  }
  TrainOptions tr;
  tr.config = parse_config(
      "arch = unet3d\ndepth = 4\nlevels = 2\npatch = 32\nbatch = 2\nsteps = 12\nlr_max = 1e-3\n"
      "lr_min = 1e-5\ncycle_epochs = 20\nepochs = 20\ndropout = 0.25\nseed = 1\n");
  if (quick) tr.config.epochs = 3;
  tr.data_dir = data_dir;
  tr.out_dir = work / "unet3d";
  std::ostringstream quiet;
  cmd_train(tr, quiet);
  const auto rows = slurp(tr.out_dir / "log.tsv");
  const auto last = rows.substr(rows.rfind('\n', rows.size() - 2) + 1);
  std::istringstream in(last);
  double epoch, lr, train_loss;
  in >> epoch >> lr >> train_loss;
  report(6, !quick && counts && train_loss < -0.5,
         fmt("%s%sU-net final training loss %.3f after %zu epochs (< -0.5)", quick ? "[quick, not gating] " : "",
             detail.c_str(), train_loss, tr.config.epochs));
}

void criterion7() {
  const auto r = resample_trilinear(Volume({128, 448, 448}, Spacing{0.8, 0.5, 0.5}, 1.0f), {1, 1, 1});
  const bool dims = r.extents == Extent3{102, 224, 224};
  std::mt19937_64 gen(7);
  std::uniform_real_distribution<float> u(0.0f, 1000.0f);
  Volume v({37, 70, 65}, Spacing{0.8, 0.5, 0.5});
  for (float& x : v.data) x = u(gen);
  const auto n = clip_normalize(v).volume;
  const float mx = *std::max_element(n.data.begin(), n.data.end());
  const auto t = tile_patches(v, 32);
  const bool round = crop(reassemble(t.patches, t.padded_extents, v.spacing), v.extents) == v;
  report(7, dims && mx == 1.0f && round,
         fmt("448x448x128 @ (0.5,0.5,0.8) mm -> %zux%zux%zu; clip_normalize max %.9g; tile round trip %s",
             r.extents.w, r.extents.h, r.extents.d, double(mx), round ? "bit-exact" : "differs"));
}

void criterion8() {
  std::mt19937_64 gen(8);
  std::uniform_real_distribution<float> u(-1e6f, 1e6f);
  Volume v({5, 6, 7}, Spacing{0.8, 0.5, 0.25});
  for (float& x : v.data) x = u(gen);
  const Bytes good = write_metaimage(v, MetaElementType::Float);
  const bool round = read_metaimage(good).volume == v;
  std::size_t parsed = 0, structured = 0, other = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    Bytes b = good;
    const int edits = 1 + int(gen() % 3);
    for (int e = 0; e < edits && !b.empty(); ++e) {
      // Header bytes are hit more often than the payload.
      const std::size_t header = good.size() - v.data.size() * 4;
      const std::size_t at = (gen() % 3) ? gen() % header : gen() % b.size();
      if (at >= b.size()) continue;
      switch (gen() % 4) {
        case 0: b[at] = std::uint8_t(gen()); break;
        case 1: b.resize(at); break;
        case 2: b.insert(b.begin() + at, std::uint8_t(gen())); break;
        case 3: b.erase(b.begin() + at); break;
      }
    }
    try {
      (void)read_metaimage(b);
      ++parsed;
    } catch (const Error&) {
      ++structured;
    } catch (...) {
      ++other;
    }
  }
  report(8, round && other == 0,
         fmt("MET_FLOAT round trip %s; 1000 mutations: %zu parsed, %zu structured errors, %zu other",
             round ? "bit-exact" : "differs", parsed, structured, other));
}

void criterion9(const fs::path& work) {
  PhantomOptions ph;
  ph.out_dir = work / "det_data";
  ph.n_train = 2;
  ph.n_val = 1;
  ph.n_test = 0;
  ph.spec.extents = Extent3::cube(32);
  ph.spec.tubes = 2;
  ph.spec.blobs = 2;
  std::ostringstream quiet;
  cmd_phantom(ph, quiet);
  TrainOptions a;
  a.config = parse_config("depth = 2\nlevels = 1\npatch = 16\nbatch = 2\nsteps = 3\nepochs = 4\n"
                          "cycle_epochs = 2\nprecision = 64\nseed = 9\n");
  a.data_dir = ph.out_dir;
  a.out_dir = work / "det_a";
  cmd_train(a, quiet);
  const auto m = read_manifest(a.out_dir / "manifest.json");
  TrainOptions b;
  b.config = config_from_json(m.at("config"));
  b.data_dir = m.at("inputs").at("data_dir").get<std::string>();
  b.out_dir = work / "det_b";
  cmd_train(b, quiet);
  const auto ca = slurp(a.out_dir / "final.ucpt"), cb = slurp(b.out_dir / "final.ucpt");
  report(9, !ca.empty() && ca == cb,
         fmt("64-bit manifest replay: final checkpoints %zu and %zu bytes, %s", ca.size(), cb.size(),
             ca == cb ? "bit-identical" : "different"));
}

void criterion10(const EndToEnd& run, bool quick) {
  std::mt19937_64 gen(10);
  std::normal_distribution<double> n;
  std::vector<Tensor5<double>> member{Tensor5<double>(Shape5{2, 3, 2, 2, 2}), Tensor5<double>(Shape5{4, 1, 1, 1, 1})};
  for (auto& t : member)
    for (double& v : t.values()) v = n(gen);
  SnapshotSet<double> set;
  set.capacity = 5;
  for (std::size_t e = 0; e < 5; ++e) set.entries.push_back(Snapshot<double>{e, -0.5, member});
  const auto avg = snapshot_average(set);
  const bool identical = avg == member;

  bool loss_ok = false;
  std::string detail = "no phantom run";
  if (run.ran) {
    std::istringstream in(slurp(run.run_dir / "snapshots.tsv"));
    double worst = -INFINITY, average = NAN;
    std::size_t count = 0;
    for (std::string key, val; in >> key >> val;) {
      if (key == "epoch") continue;
      if (key == "average") {
        average = std::stod(val);
      } else {
        worst = std::max(worst, std::stod(val));
        ++count;
      }
    }
    loss_ok = count > 0 && average <= worst;
    detail = fmt("%zu snapshots, worst val loss %.4f, averaged model %.4f", count, worst, average);
  }
  report(10, identical && loss_ok && !quick,
         fmt("%sidentical-member average %s; %s", quick ? "[quick, not gating] " : "",
             identical ? "equals member" : "differs", detail.c_str()));
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "uception_acceptance";
  bool quick = false;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--quick") quick = true;
    else work = a;
  }
  fs::remove_all(work);
  fs::create_directories(work);
  std::printf("uception acceptance %s, work dir %s\n", version_string().c_str(), work.string().c_str());

  guarded(1, criterion1);
  guarded(2, criterion2);
  guarded(3, criterion3);
  guarded(4, criterion4);
  EndToEnd run;
  guarded(5, [&] { run = criterion5(work, quick); });
  guarded(6, [&] { criterion6(work, run.data_dir.empty() ? work / "phantoms" : run.data_dir, quick); });
  guarded(7, criterion7);
  guarded(8, criterion8);
  guarded(9, [&] { criterion9(work); });
  guarded(10, [&] { criterion10(run, quick); });

  std::printf("%s: %d of 10 criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
