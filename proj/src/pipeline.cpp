#include "pdml/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "pdml/flow.hpp"
#include "pdml/hash.hpp"
#include "pdml/motion_boundary.hpp"

namespace pdml {

using json = nlohmann::json;

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(jobs, n));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

void write_fold_plan(const FoldPlan& plan, const std::filesystem::path& path) {
  json assignment = json::object();
  for (const auto& [subject, fold] : plan.assignment) assignment[subject] = fold;
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << json{{"k", plan.k}, {"assignment", assignment}}.dump(2) << '\n';
  if (!out) throw IoError("cannot write fold plan " + path.string());
}

FoldPlan read_fold_plan(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open fold plan " + path.string());
  FoldPlan plan;
  try {
    const json doc = json::parse(in);
    plan.k = doc.at("k").get<std::size_t>();
    for (const auto& [subject, fold] : doc.at("assignment").items()) {
      plan.assignment[subject] = fold.get<std::size_t>();
      if (plan.assignment[subject] >= plan.k) throw InputError("fold index out of range for " + subject);
    }
  } catch (const json::exception& e) {
    throw InputError("fold plan " + path.string() + ": " + e.what());
  }
  return plan;
}

namespace {

std::string flow_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "flow_%05zu.flo", i);
  return buf;
}

std::string mb_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "mb_%05zu.flo", i);
  return buf;
}

std::string fold_item(Modality m, std::size_t fold) {
  return std::string(modality_name(m)) + "/fold" + std::to_string(fold);
}

// Every setting that changes the weights, or the logged training summary.
std::string training_fingerprint(const PipelineConfig& c) {
  json doc = json::parse(config_to_json(c));
  for (const char* key : {"paths", "run", "synth", "folds", "task", "ingest"}) doc.erase(key);
  doc["flow"] = {{"bound", c.flow_bound}};
  return doc.dump();
}

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string confusion_text(const ConfusionMatrix& cm) {
  std::string s = "[";
  for (std::size_t t = 0; t < cm.classes(); ++t) {
    s += t ? " [" : "[";
    for (std::size_t p = 0; p < cm.classes(); ++p) s += (p ? " " : "") + std::to_string(cm.at(t, p));
    s += "]";
  }
  return s + "]";
}

void write_summary(const FoldTraining& t, const std::filesystem::path& path) {
  std::ofstream out(path);
  out << json{{"epochs", t.epochs}, {"final_loss", t.final_loss}, {"train_f1", t.train_f1}}.dump() << '\n';
  if (!out) throw IoError("cannot write " + path.string());
}

FoldTraining read_summary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  const json doc = json::parse(in);
  return {doc.at("epochs").get<std::size_t>(), doc.at("final_loss").get<double>(), doc.at("train_f1").get<double>()};
}

}  // namespace

// ---- Pipeline ----------------------------------------------------------------

Pipeline::Pipeline(PipelineConfig config, EventSink on_event)
    : config_(std::move(config)), cache_(config_.resolved_cache_dir()), on_event_(std::move(on_event)) {
  config_.validate();
}

void Pipeline::emit(const StageEvent& e) {
  if (on_event_) on_event_(e);
}

const DatasetManifest& Pipeline::manifest() {
  if (!manifest_) {
    if (config_.manifest.empty()) throw ConfigError("no manifest configured (paths.manifest)");
    manifest_ = ingest("", config_.manifest);
    for (const auto& e : manifest_->entries)
      if (e.task == config_.task) entries_.push_back(e);
    if (entries_.empty()) {
      throw InputError("manifest has no clips for task '" + std::string(task_name(config_.task)) + "'");
    }
    frames_keys_.assign(entries_.size(), "");
  }
  return *manifest_;
}

const std::vector<ManifestEntry>& Pipeline::entries() {
  manifest();
  return entries_;
}

std::string Pipeline::frames_key(std::size_t clip) {
  manifest();
  if (frames_keys_[clip].empty()) {
    const auto& e = entries_[clip];
    Sha256 h;
    h.field("frames/1").field(std::to_string(e.frame_count));
    for (std::size_t i = 0; i < e.frame_count; ++i) h.file(manifest_->root / e.frame_dir / frame_filename(i));
    frames_keys_[clip] = h.digest();
  }
  return frames_keys_[clip];
}

std::string Pipeline::flow_key(std::size_t clip) {
  const auto& p = config_.flow;
  std::ostringstream params;
  params.precision(17);
  params << p.lambda << ' ' << p.theta << ' ' << p.tau << ' ' << p.pyramid_levels << ' ' << p.scale_factor << ' '
         << p.warps_per_level << ' ' << p.iterations_per_warp << ' ' << p.stop_epsilon;
  Sha256 h;
  h.field("flow/1").field(frames_key(clip));
  h.field(std::to_string(config_.frame_width) + "x" + std::to_string(config_.frame_height)).field(params.str());
  return h.digest();
}

std::string Pipeline::mb_key(std::size_t clip) {
  Sha256 h;
  h.field("mb/1").field(flow_key(clip));
  return h.digest();
}

std::string Pipeline::input_key(std::size_t clip, Modality modality) {
  switch (modality) {
    case Modality::rgb: {
      Sha256 h;
      h.field("rgb/1").field(frames_key(clip));
      h.field(std::to_string(config_.frame_width) + "x" + std::to_string(config_.frame_height));
      return h.digest();
    }
    case Modality::flow: return flow_key(clip);
    case Modality::motion_boundaries: return mb_key(clip);
  }
  throw ContractError("unknown modality");
}

std::filesystem::path Pipeline::flow_dir(std::size_t clip, bool* hit) {
  return cache_.ensure("flow", flow_key(clip), [&](const std::filesystem::path& dir) {
    const auto frames = load_frames(*manifest_, entries_[clip], config_.frame_width, config_.frame_height);
    Plane prev = to_gray(frames[0]);
    for (std::size_t t = 1; t < frames.size(); ++t) {
      Plane next = to_gray(frames[t]);
      write_flo(dir / flow_name(t - 1), estimate_flow(prev, next, config_.flow));
      prev = std::move(next);
    }
  }, hit);
}

std::filesystem::path Pipeline::mb_dir(std::size_t clip, bool* hit) {
  const auto flows = flow_dir(clip, nullptr);
  return cache_.ensure("mb", mb_key(clip), [&](const std::filesystem::path& dir) {
    for (std::size_t t = 0; t + 1 < entries_[clip].frame_count; ++t) {
      write_mb(dir / mb_name(t), motion_boundary(read_flo(flows / flow_name(t))));
    }
  }, hit);
}

void Pipeline::extract(const std::vector<Modality>& modalities) {
  const std::size_t n = entries().size();
  const bool want_flow = std::any_of(modalities.begin(), modalities.end(),
                                     [](Modality m) { return m != Modality::rgb; });
  const bool want_mb = std::find(modalities.begin(), modalities.end(), Modality::motion_boundaries) !=
                       modalities.end();
  if (!want_flow) return;

  std::vector<char> flow_hit(n), mb_hit(n);
  parallel_for(n, config_.jobs, [&](std::size_t i) {
    bool hit = false;
    try {
      flow_dir(i, &hit);
    } catch (const std::exception& e) {
      throw StageError("flow", entries_[i].clip_id, e.what());
    }
    flow_hit[i] = hit;
    if (!want_mb) return;
    try {
      mb_dir(i, &hit);
    } catch (const std::exception& e) {
      throw StageError("mb", entries_[i].clip_id, e.what());
    }
    mb_hit[i] = hit;
  });
  // Reported after the barrier, in manifest order.
  for (std::size_t i = 0; i < n; ++i) emit({"flow", entries_[i].clip_id, flow_hit[i] != 0});
  if (want_mb)
    for (std::size_t i = 0; i < n; ++i) emit({"mb", entries_[i].clip_id, mb_hit[i] != 0});
}

std::vector<VideoSample> Pipeline::samples(const std::vector<Modality>& modalities) {
  extract(modalities);
  const std::size_t n = entries_.size();
  std::vector<VideoSample> out(n);
  parallel_for(n, config_.jobs, [&](std::size_t i) {
    const auto& e = entries_[i];
    VideoSample& s = out[i];
    s.meta = label_of(e);
    for (Modality m : modalities) {
      try {
        Tensor volume;
        if (m == Modality::rgb) {
          volume = rgb_volume(load_frames(*manifest_, e, config_.frame_width, config_.frame_height));
        } else if (m == Modality::flow) {
          std::vector<FlowField> flows;
          const auto dir = cache_.location("flow", flow_key(i));
          for (std::size_t t = 0; t + 1 < e.frame_count; ++t) flows.push_back(read_flo(dir / flow_name(t)));
          volume = flow_to_input(flows, config_.flow_bound);
        } else {
          std::vector<MotionBoundaryField> fields;
          const auto dir = cache_.location("mb", mb_key(i));
          for (std::size_t t = 0; t + 1 < e.frame_count; ++t) fields.push_back(read_mb(dir / mb_name(t)));
          volume = mb_to_input(fields, config_.flow_bound);
        }
        s.streams[m] = ClipVolume{m, std::move(volume), e.clip_id, e.subject_id};
      } catch (const std::exception& ex) {
        throw StageError("load-" + std::string(modality_name(m)), e.clip_id, ex.what());
      }
    }
  });
  return out;
}

FoldPlan Pipeline::fold_plan() {
  std::vector<std::string> subjects;
  for (const auto& e : entries()) subjects.push_back(e.subject_id);
  std::mt19937_64 rng(derive_seed(config_.seed, "folds"));
  return subject_folds(std::move(subjects), config_.folds, rng);
}

std::string Pipeline::model_key(Modality modality, std::size_t fold, const FoldPlan& plan) {
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < entries().size(); ++i)
    if (plan.fold_of(entries_[i].subject_id) != fold) members.push_back(i);
  std::sort(members.begin(), members.end(),
            [&](std::size_t a, std::size_t b) { return entries_[a].clip_id < entries_[b].clip_id; });

  Sha256 h;
  h.field("model/1").field(modality_name(modality)).field(std::to_string(fold));
  h.field(training_fingerprint(config_));
  for (std::size_t i : members) {
    const auto& e = entries_[i];
    h.field(e.clip_id).field(e.subject_id).field(std::to_string(group_scores(e.updrs_raw)));
    h.field(input_key(i, modality));
  }
  return h.digest();
}

StreamModel Pipeline::fold_model(Modality modality, std::size_t fold, const FoldPlan& plan,
                                 const std::vector<VideoSample>& data, FoldTraining* summary,
                                 const std::function<void(const EpochLog&)>& on_epoch, bool* hit) {
  try {
    const auto dir = cache_.ensure("model", model_key(modality, fold, plan), [&](const std::filesystem::path& tmp) {
      const TrainResult r = train_fold(plan, data, modality, config_.encoder, config_.hyper(), fold, on_epoch);
      save_stream(r.model, tmp / "model.ckpt");
      FoldTraining t;
      t.epochs = r.log.size();
      t.final_loss = r.log.back().mean_loss;
      t.train_f1 = r.log.back().train_f1.value_or(0.0);
      write_summary(t, tmp / "training.json");
    }, hit);
    // Always read back, so fresh and cached runs evaluate the same bytes.
    if (summary) *summary = read_summary(dir / "training.json");
    return load_stream(dir / "model.ckpt", config_.encoder);
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError("train", fold_item(modality, fold), e.what());
  }
}

std::vector<StreamModel> Pipeline::fold_models(Modality modality, const FoldPlan& plan,
                                               const std::vector<VideoSample>& data,
                                               std::vector<FoldTraining>* summaries,
                                               const std::function<void(std::size_t, const EpochLog&)>& on_epoch) {
  // Keys hash files lazily; compute them before fanning out.
  for (std::size_t f = 0; f < plan.k; ++f) model_key(modality, f, plan);

  std::vector<StreamModel> models(plan.k);
  std::vector<FoldTraining> trained(plan.k);
  std::vector<char> hits(plan.k);
  std::mutex log_mutex;
  parallel_for(plan.k, config_.jobs, [&](std::size_t f) {
    auto cb = [&](const EpochLog& log) {
      if (!on_epoch) return;
      std::lock_guard lock(log_mutex);
      on_epoch(f, log);
    };
    bool hit = false;
    models[f] = fold_model(modality, f, plan, data, &trained[f], cb, &hit);
    hits[f] = hit;
  });
  for (std::size_t f = 0; f < plan.k; ++f) emit({"model", fold_item(modality, f), hits[f] != 0});
  if (summaries) *summaries = std::move(trained);
  return models;
}

// ---- report -------------------------------------------------------------------

namespace {

void evaluation_block(std::ostringstream& os, const EvaluationResult& r) {
  for (const auto& f : r.folds) {
    os << "  fold " << f.fold << ": clips " << f.confusion.total() << ", macro_f1 " << fixed(f.f1) << ", accuracy "
       << fixed(f.accuracy) << ", confusion " << confusion_text(f.confusion) << '\n';
  }
  os << "  mean_macro_f1: " << fixed(r.mean_f1) << " ± " << fixed(r.std_f1) << '\n';
  os << "  mean_accuracy: " << fixed(r.mean_accuracy) << '\n';
  os << "  pooled_macro_f1: " << fixed(r.pooled_f1) << '\n';
  os << "  pooled_accuracy: " << fixed(r.pooled_accuracy) << '\n';
  os << "  pooled_confusion: " << confusion_text(r.pooled) << '\n';
}

}  // namespace

std::string format_report(const PipelineConfig& config, std::size_t clips, std::size_t subjects,
                          const std::vector<StreamReport>& streams, const std::optional<EvaluationResult>& fused) {
  std::ostringstream os;
  os << "schema_version: 1\n";
  os << "task: " << task_name(config.task) << '\n';
  os << "seed: " << config.seed << '\n';
  os << "clips: " << clips << '\n';
  os << "subjects: " << subjects << '\n';
  os << "folds: " << config.folds << '\n';
  os << "modalities: " << modality_list(config.modalities, ',') << '\n';
  os << "attention: " << (config.attention ? "on" : "off") << '\n';
  os << "headline: mean_macro_f1 over folds\n";
  for (const auto& s : streams) {
    os << "\nstream: " << modality_name(s.modality) << '\n';
    evaluation_block(os, s.evaluation);
    for (std::size_t f = 0; f < s.training.size(); ++f) {
      const auto& t = s.training[f];
      os << "  training fold " << f << ": epochs " << t.epochs << ", final_loss " << fixed(t.final_loss, 6)
         << ", train_macro_f1 " << fixed(t.train_f1) << '\n';
    }
  }
  if (fused) {
    os << "\nfused: " << modality_list(fused->modalities, '+') << '\n';
    evaluation_block(os, *fused);
  }
  return os.str();
}

RunResult pipeline_run(const PipelineConfig& config, const EventSink& on_event,
                       const std::function<void(Modality, std::size_t, const EpochLog&)>& on_epoch) {
  RunResult result;
  Pipeline p(config, [&](const StageEvent& e) {
    result.events.push_back(e);
    if (on_event) on_event(e);
  });
  const auto data = p.samples(config.modalities);
  const FoldPlan plan = p.fold_plan();
  write_fold_plan(plan, config.work_dir / "folds.json");

  std::vector<std::map<Modality, StreamModel>> per_fold(plan.k);
  for (Modality m : config.modalities) {
    StreamReport sr;
    sr.modality = m;
    const auto models = p.fold_models(m, plan, data, &sr.training, [&](std::size_t f, const EpochLog& log) {
      if (on_epoch) on_epoch(m, f, log);
    });
    const auto model_dir = config.work_dir / "models" / std::string(modality_name(m));
    std::filesystem::create_directories(model_dir);
    std::vector<std::map<Modality, StreamModel>> single(plan.k);
    for (std::size_t f = 0; f < plan.k; ++f) {
      save_stream(models[f], model_dir / ("fold" + std::to_string(f) + ".ckpt"));
      per_fold[f][m] = models[f];
      single[f][m] = models[f];
    }
    try {
      sr.evaluation = evaluate(plan, data, single, {m}, config.sampler);
    } catch (const std::exception& e) {
      throw StageError("evaluate", std::string(modality_name(m)), e.what());
    }
    result.streams.push_back(std::move(sr));
  }
  if (!config.fuse.empty()) {
    try {
      result.fused = evaluate(plan, data, per_fold, config.fuse, config.sampler);
    } catch (const std::exception& e) {
      throw StageError("evaluate", "fused " + modality_list(config.fuse, '+'), e.what());
    }
  }

  std::set<std::string> subjects;
  for (const auto& s : data) subjects.insert(s.meta.subject_id);
  result.report = format_report(config, data.size(), subjects.size(), result.streams, result.fused);
  std::ofstream out(config.work_dir / "report.txt", std::ios::binary);
  out << result.report;
  if (!out) throw IoError("cannot write " + (config.work_dir / "report.txt").string());
  return result;
}

}  // namespace pdml
