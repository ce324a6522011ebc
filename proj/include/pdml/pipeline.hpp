#pragma once

// End-to-end orchestration: ingest -> flow -> motion boundaries -> per-fold
// training -> evaluation and fusion. Every stage output lives in an
// ArtifactCache keyed by a SHA-256 over everything that determines it.

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pdml/cache.hpp"
#include "pdml/config.hpp"
#include "pdml/dataset.hpp"
#include "pdml/error.hpp"
#include "pdml/training.hpp"

namespace pdml {

// A stage failed on one item (clip or fold model).
class StageError : public Error {
 public:
  StageError(std::string stage, std::string item, const std::string& cause)
      : Error("stage '" + stage + "' failed on " + item + ": " + cause), stage_(std::move(stage)), item_(std::move(item)) {}
  const std::string& stage() const { return stage_; }
  const std::string& item() const { return item_; }

 private:
  std::string stage_, item_;
};

struct StageEvent {
  std::string stage;  // "flow", "mb" or "model"
  std::string item;   // clip id, or "<modality>/fold<i>"
  bool cache_hit = false;
};

using EventSink = std::function<void(const StageEvent&)>;

void write_fold_plan(const FoldPlan& plan, const std::filesystem::path& path);
FoldPlan read_fold_plan(const std::filesystem::path& path);

// Training summary stored next to each cached model.
struct FoldTraining {
  std::size_t epochs = 0;
  double final_loss = 0.0;
  double train_f1 = 0.0;
};

class Pipeline {
 public:
  explicit Pipeline(PipelineConfig config, EventSink on_event = {});

  const PipelineConfig& config() const { return config_; }
  const ArtifactCache& cache() const { return cache_; }

  // Manifest entries of the configured task, in manifest order.
  const std::vector<ManifestEntry>& entries();
  const DatasetManifest& manifest();

  // Key of everything a clip's input volume for `modality` depends on.
  std::string input_key(std::size_t clip, Modality modality);

  // Makes sure flow (and, when asked, motion boundaries) exist for every clip.
  void extract(const std::vector<Modality>& modalities);

  // Input volumes for every clip; extracts first if needed.
  std::vector<VideoSample> samples(const std::vector<Modality>& modalities);

  // Subject-level folds derived from the seed.
  FoldPlan fold_plan();

  // Key of a fold model: modality, fold, training hyperparameters and the
  // input keys and labels of its training clips.
  std::string model_key(Modality modality, std::size_t fold, const FoldPlan& plan);

  // Trains (or reuses) one fold model. Does not emit an event.
  StreamModel fold_model(Modality modality, std::size_t fold, const FoldPlan& plan,
                         const std::vector<VideoSample>& data, FoldTraining* summary = nullptr,
                         const std::function<void(const EpochLog&)>& on_epoch = {}, bool* hit = nullptr);

  // Trains (or reuses) every fold of one modality; folds run on config.jobs threads.
  std::vector<StreamModel> fold_models(Modality modality, const FoldPlan& plan, const std::vector<VideoSample>& data,
                                       std::vector<FoldTraining>* summaries = nullptr,
                                       const std::function<void(std::size_t, const EpochLog&)>& on_epoch = {});

 private:
  void emit(const StageEvent& e);
  std::string frames_key(std::size_t clip);
  std::string flow_key(std::size_t clip);
  std::string mb_key(std::size_t clip);
  std::filesystem::path flow_dir(std::size_t clip, bool* hit);
  std::filesystem::path mb_dir(std::size_t clip, bool* hit);

  PipelineConfig config_;
  ArtifactCache cache_;
  EventSink on_event_;
  std::optional<DatasetManifest> manifest_;
  std::vector<ManifestEntry> entries_;
  std::vector<std::string> frames_keys_;
};

struct StreamReport {
  Modality modality = Modality::rgb;
  EvaluationResult evaluation;
  std::vector<FoldTraining> training;
};

struct RunResult {
  std::vector<StreamReport> streams;
  std::optional<EvaluationResult> fused;
  std::string report;
  std::vector<StageEvent> events;
};

// Structured text report. Depends only on results, never on timing or cache
// state, so reruns are byte-identical.
std::string format_report(const PipelineConfig& config, std::size_t clips, std::size_t subjects,
                          const std::vector<StreamReport>& streams, const std::optional<EvaluationResult>& fused);

// Runs everything, writes <work_dir>/{folds.json, models/, report.txt}.
RunResult pipeline_run(const PipelineConfig& config, const EventSink& on_event = {},
                       const std::function<void(Modality, std::size_t, const EpochLog&)>& on_epoch = {});

// Runs fn(i) for i in [0, n) on up to `jobs` threads. If several calls throw,
// the exception of the smallest index is rethrown.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

}  // namespace pdml
