// Command-line front end: one verb per pipeline stage plus `run` for all of them.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include <CLI11.hpp>

#include "pdml/config.hpp"
#include "pdml/dataset.hpp"
#include "pdml/error.hpp"
#include "pdml/motion_boundary.hpp"
#include "pdml/pipeline.hpp"
#include "pdml/png_io.hpp"
#include "pdml/synth.hpp"

namespace fs = std::filesystem;
using namespace pdml;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
};

void add_common(CLI::App* app, Common& c, bool with_seed = true) {
  app->add_option("--config", c.config, "JSON configuration file")->check(CLI::ExistingFile);
  if (with_seed) app->add_option("--seed", c.seed, "Override the configured seed");
  app->add_option("--jobs", c.jobs, "Worker threads")->check(CLI::PositiveNumber);
}

PipelineConfig load(const Common& c) {
  PipelineConfig cfg = c.config.empty() ? parse_config("{}", "") : load_config(c.config);
  if (c.seed) {
    cfg.seed = *c.seed;
    cfg.sampler.rng_seed = *c.seed;
  }
  if (c.jobs) cfg.jobs = *c.jobs;
  cfg.validate();
  return cfg;
}

std::vector<fs::path> sorted_files(const fs::path& dir, const std::string& prefix, const std::string& ext) {
  if (!fs::is_directory(dir)) throw InputError(dir.string() + " is not a directory");
  std::vector<fs::path> out;
  for (const auto& f : fs::directory_iterator(dir)) {
    const auto name = f.path().filename().string();
    if (name.rfind(prefix, 0) == 0 && f.path().extension() == ext) out.push_back(f.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string numbered(const char* stem, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%05zu.flo", stem, i);
  return buf;
}

void set_flow_param(TvL1Params& p, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("--param expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq), value = assignment.substr(eq + 1);
  try {
    if (key == "lambda") p.lambda = std::stod(value);
    else if (key == "theta") p.theta = std::stod(value);
    else if (key == "tau") p.tau = std::stod(value);
    else if (key == "pyramid_levels") p.pyramid_levels = std::stoi(value);
    else if (key == "scale_factor") p.scale_factor = std::stod(value);
    else if (key == "warps_per_level") p.warps_per_level = std::stoi(value);
    else if (key == "iterations_per_warp") p.iterations_per_warp = std::stoi(value);
    else if (key == "stop_epsilon") p.stop_epsilon = std::stod(value);
    else throw ConfigError("unknown flow parameter '" + key + "'");
  } catch (const std::logic_error&) {
    throw ConfigError("bad value for flow parameter '" + key + "': " + value);
  }
}

void print_epoch(Modality m, std::size_t fold, const EpochLog& log) {
  std::fprintf(stderr, "[%s fold %zu] epoch %zu loss %.6f", std::string(modality_name(m)).c_str(), fold, log.epoch,
               log.mean_loss);
  if (log.train_f1) std::fprintf(stderr, " train_f1 %.4f", *log.train_f1);
  if (log.validation_f1) std::fprintf(stderr, " val_f1 %.4f", *log.validation_f1);
  std::fprintf(stderr, "\n");
}

void summarize_events(const std::vector<StageEvent>& events) {
  std::map<std::string, std::pair<std::size_t, std::size_t>> counts;  // stage -> (total, hits)
  std::vector<std::string> order;
  for (const auto& e : events) {
    if (!counts.count(e.stage)) order.push_back(e.stage);
    auto& c = counts[e.stage];
    ++c.first;
    c.second += e.cache_hit;
  }
  for (const auto& s : order) {
    std::fprintf(stderr, "%s: %zu items, %zu cached, %zu computed\n", s.c_str(), counts[s].first, counts[s].second,
                 counts[s].first - counts[s].second);
  }
}

// ---- verbs ------------------------------------------------------------------

int cmd_synth(const Common& c, const std::string& out, const std::string& task) {
  PipelineConfig cfg = load(c);
  SynthConfig s = cfg.synth;
  if (c.seed) s.seed = *c.seed;
  if (!task.empty()) s.task = parse_task(task);
  const DatasetManifest m = generate_synthetic(s, out);
  std::cout << "wrote " << m.entries.size() << " clips to " << out << "\n"
            << "manifest: " << (fs::path(out) / "manifest.json").string() << "\n";
  return 0;
}

int cmd_ingest(const Common& c, const std::string& root, const std::string& manifest_file) {
  const PipelineConfig cfg = load(c);
  const DatasetManifest m = ingest(root, manifest_file);
  std::set<std::string> subjects;
  std::map<std::string, std::size_t> tasks;
  std::array<std::size_t, 3> classes{};
  std::size_t resized = 0, min_frames = SIZE_MAX, max_frames = 0;
  for (const auto& e : m.entries) {
    subjects.insert(e.subject_id);
    ++tasks[std::string(task_name(e.task))];
    ++classes[group_scores(e.updrs_raw)];
    min_frames = std::min(min_frames, e.frame_count);
    max_frames = std::max(max_frames, e.frame_count);
    const RgbImage first = read_png_rgb(m.root / e.frame_dir / frame_filename(0));
    if (first.width != cfg.frame_width || first.height != cfg.frame_height) ++resized;
  }
  std::cout << "manifest ok: " << m.entries.size() << " clips, " << subjects.size() << " subjects\n";
  for (const auto& [t, n] : tasks) std::cout << "task " << t << ": " << n << " clips\n";
  std::cout << "classes (0 / 1-2 / 3-4): " << classes[0] << " / " << classes[1] << " / " << classes[2] << "\n";
  std::cout << "frames per clip: " << min_frames << ".." << max_frames << "\n";
  std::cout << resized << " clips will be resized to " << cfg.frame_width << "x" << cfg.frame_height << "\n";
  return 0;
}

int cmd_extract_flow(const Common& c, const std::string& in, const std::string& out,
                     const std::vector<std::string>& params) {
  PipelineConfig cfg = load(c);
  for (const auto& p : params) set_flow_param(cfg.flow, p);
  cfg.flow.validate();
  const auto frames = sorted_files(in, "frame_", ".png");
  if (frames.size() < 2) throw InputError("need at least two frame_*.png files in " + in);
  fs::create_directories(out);
  parallel_for(frames.size() - 1, cfg.jobs, [&](std::size_t i) {
    const Plane a = to_gray(read_png_rgb(frames[i])), b = to_gray(read_png_rgb(frames[i + 1]));
    write_flo(fs::path(out) / numbered("flow", i), estimate_flow(a, b, cfg.flow));
  });
  std::cout << "wrote " << frames.size() - 1 << " flow fields to " << out << "\n";
  return 0;
}

int cmd_extract_mb(const Common& c, const std::string& in, const std::string& out) {
  const PipelineConfig cfg = load(c);
  const auto flows = sorted_files(in, "flow_", ".flo");
  if (flows.empty()) throw InputError("no flow_*.flo files in " + in);
  fs::create_directories(out);
  parallel_for(flows.size(), cfg.jobs, [&](std::size_t i) {
    write_mb(fs::path(out) / numbered("mb", i), motion_boundary(read_flo(flows[i])));
  });
  std::cout << "wrote " << flows.size() << " motion-boundary fields to " << out << "\n";
  return 0;
}

int cmd_sample(const Common& c, const std::string& mode, std::size_t epoch, std::optional<std::size_t> fold) {
  const PipelineConfig cfg = load(c);
  Pipeline p(cfg);
  const TrainHyper hyper = fold ? fold_hyper(cfg.hyper(), *fold) : cfg.hyper();
  std::cout << "clip_id\tmodality\tstart\tlength\ttransform\n";
  for (const auto& e : p.entries()) {
    for (Modality m : cfg.modalities) {
      // Flow-derived streams have one frame fewer than the video.
      const std::size_t n = m == Modality::rgb ? e.frame_count : e.frame_count - 1;
      const std::string mod(modality_name(m));
      if (mode == "train") {
        for (const auto& s : training_snippets(n, e.clip_id, hyper, epoch)) {
          std::cout << e.clip_id << '\t' << mod << '\t' << s.start << '\t' << s.length << '\t' << s.transform << '\n';
        }
      } else {
        for (std::size_t start : dense_starts(n, cfg.sampler)) {
          std::cout << e.clip_id << '\t' << mod << '\t' << start << '\t' << cfg.sampler.test_len << "\tnone\n";
        }
      }
    }
  }
  return 0;
}

int cmd_train(const Common& c, const std::string& task, const std::string& modality, std::size_t fold, bool quiet) {
  PipelineConfig cfg = load(c);
  if (!task.empty()) cfg.task = parse_task(task);
  const Modality m = parse_modality(modality);
  cfg.modalities = cfg.fuse = {m};
  Pipeline p(cfg);
  const auto data = p.samples({m});
  const FoldPlan plan = p.fold_plan();
  if (fold >= plan.k) throw ConfigError("fold must be below " + std::to_string(plan.k));
  write_fold_plan(plan, cfg.work_dir / "folds.json");
  FoldTraining summary;
  bool hit = false;
  const StreamModel model = p.fold_model(m, fold, plan, data, &summary, [&](const EpochLog& log) {
    if (!quiet) print_epoch(m, fold, log);
  }, &hit);
  const fs::path dest = cfg.work_dir / "models" / std::string(modality_name(m)) / ("fold" + std::to_string(fold) + ".ckpt");
  fs::create_directories(dest.parent_path());
  save_stream(model, dest);
  std::cout << (hit ? "reused cached model" : "trained model") << ": " << dest.string() << "\n"
            << "epochs " << summary.epochs << ", final_loss " << summary.final_loss << ", train_macro_f1 "
            << summary.train_f1 << "\n";
  return 0;
}

int cmd_evaluate(const Common& c, const std::string& plan_file, const std::string& models_dir,
                 const std::string& fuse, const std::string& out) {
  PipelineConfig cfg = load(c);
  if (!fuse.empty()) cfg.fuse = parse_modality_list(fuse);
  cfg.modalities = cfg.fuse;
  const FoldPlan plan = read_fold_plan(plan_file);
  if (plan.k != cfg.folds) cfg.folds = plan.k;
  Pipeline p(cfg);
  const auto data = p.samples(cfg.fuse);
  for (const auto& s : data) plan.fold_of(s.meta.subject_id);  // every subject must be planned

  std::vector<std::map<Modality, StreamModel>> models(plan.k);
  std::vector<StreamReport> streams;
  for (Modality m : cfg.fuse) {
    std::vector<std::map<Modality, StreamModel>> single(plan.k);
    for (std::size_t f = 0; f < plan.k; ++f) {
      const fs::path file = fs::path(models_dir) / std::string(modality_name(m)) / ("fold" + std::to_string(f) + ".ckpt");
      if (!fs::exists(file)) throw InputError("missing model " + file.string());
      models[f][m] = single[f][m] = load_stream(file, cfg.encoder);
    }
    streams.push_back({m, evaluate(plan, data, single, {m}, cfg.sampler), {}});
  }
  std::set<std::string> subjects;
  for (const auto& s : data) subjects.insert(s.meta.subject_id);
  const std::string report = format_report(cfg, data.size(), subjects.size(), streams,
                                           evaluate(plan, data, models, cfg.fuse, cfg.sampler));
  if (!out.empty()) {
    std::ofstream f(out, std::ios::binary);
    f << report;
    if (!f) throw IoError("cannot write " + out);
  }
  std::cout << report;
  return 0;
}

int cmd_run(const Common& c, bool quiet) {
  const PipelineConfig cfg = load(c);
  const RunResult r = pipeline_run(cfg, {}, [&](Modality m, std::size_t f, const EpochLog& log) {
    if (!quiet) print_epoch(m, f, log);
  });
  summarize_events(r.events);
  std::cerr << "report: " << (cfg.work_dir / "report.txt").string() << "\n";
  std::cout << r.report;
  return 0;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const InputError*>(&e)) return 3;
  if (dynamic_cast<const IoError*>(&e)) return 4;
  if (dynamic_cast<const DivergenceError*>(&e)) return 5;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Video motion assessment: optical flow, motion boundaries and two-stream 3D CNN training"};
  app.require_subcommand(1);

  Common common;
  std::string out, in, root, manifest, mode = "train", task, modality, plan, models, fuse;
  std::vector<std::string> params;
  std::size_t fold = 0, epoch = 1;
  std::optional<std::size_t> sample_fold;
  bool quiet = false;

  auto* synth = app.add_subcommand("synth", "Render a synthetic dataset with labels, masks and ground truth");
  add_common(synth, common);
  synth->add_option("--out", out, "Output directory")->required();
  synth->add_option("--task", task, "hand or gait (default from config)");

  auto* ing = app.add_subcommand("ingest", "Validate a manifest and its frames");
  add_common(ing, common, false);
  ing->add_option("--manifest", manifest, "Manifest JSON")->required()->check(CLI::ExistingFile);
  ing->add_option("--root", root, "Override the manifest's data root");

  auto* xflow = app.add_subcommand("extract-flow", "TV-L1 flow between consecutive frames of one clip");
  add_common(xflow, common, false);
  xflow->add_option("--in", in, "Directory of frame_*.png")->required();
  xflow->add_option("--out", out, "Output directory for .flo files")->required();
  xflow->add_option("--param", params, "Solver override key=value (repeatable)");

  auto* xmb = app.add_subcommand("extract-mb", "Motion boundaries from a directory of flow fields");
  add_common(xmb, common, false);
  xmb->add_option("--in", in, "Directory of flow_*.flo")->required();
  xmb->add_option("--out", out, "Output directory")->required();

  auto* smp = app.add_subcommand("sample", "List the snippets the sampler draws for every clip");
  add_common(smp, common);
  smp->add_option("--mode", mode, "train or test")->check(CLI::IsMember({"train", "test"}));
  smp->add_option("--epoch", epoch, "Training epoch to replay (1-based)")->check(CLI::PositiveNumber);
  smp->add_option("--fold", sample_fold, "Replay the draws of this fold's training run");

  auto* trn = app.add_subcommand("train", "Train one modality on one cross-validation fold");
  add_common(trn, common);
  trn->add_option("--task", task, "hand or gait")->check(CLI::IsMember({"hand", "gait"}));
  trn->add_option("--modality", modality, "rgb, flow or mb")->required()->check(CLI::IsMember({"rgb", "flow", "mb"}));
  trn->add_option("--fold", fold, "Held-out fold index")->required();
  trn->add_flag("--quiet", quiet, "No per-epoch log");

  auto* ev = app.add_subcommand("evaluate", "Score held-out folds and fuse modalities");
  add_common(ev, common, false);
  ev->add_option("--plan", plan, "folds.json")->required()->check(CLI::ExistingFile);
  ev->add_option("--models", models, "Directory with <modality>/fold<i>.ckpt")->required();
  ev->add_option("--fuse", fuse, "Comma-separated modalities, e.g. rgb,flow,mb");
  ev->add_option("--out", out, "Also write the report here");

  auto* run = app.add_subcommand("run", "Whole pipeline with caching; prints the report");
  add_common(run, common);
  run->add_flag("--quiet", quiet, "No per-epoch log");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*synth) return cmd_synth(common, out, task);
    if (*ing) return cmd_ingest(common, root, manifest);
    if (*xflow) return cmd_extract_flow(common, in, out, params);
    if (*xmb) return cmd_extract_mb(common, in, out);
    if (*smp) return cmd_sample(common, mode, epoch, sample_fold);
    if (*trn) return cmd_train(common, task, modality, fold, quiet);
    if (*ev) return cmd_evaluate(common, plan, models, fuse, out);
    if (*run) return cmd_run(common, quiet);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return 1;
}
