#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pdml/model.hpp"
#include "pdml/optim.hpp"
#include "pdml/sampling.hpp"

namespace pdml {

// ---- labels and loss -------------------------------------------------------

enum class Task { hand_movement, gait };

// "hand" / "gait"
std::string_view task_name(Task t);
Task parse_task(std::string_view name);

// UPDRS 0 -> 0, 1-2 -> 1, 3-4 -> 2.
std::size_t group_scores(int updrs_raw);

struct FocalConfig {
  double alpha = 0.5;
  double gamma = 2.0;

  void validate() const;
};

// -alpha (1 - p_y)^gamma log p_y on a probability vector, p_y floored at 1e-12.
double focal_loss(const std::vector<double>& probs, std::size_t label, const FocalConfig& config);
double cross_entropy(const std::vector<double>& probs, std::size_t label);

struct LabeledClip {
  std::string clip_id;
  std::string subject_id;
  Task task = Task::hand_movement;
  int updrs_raw = 0;
  std::size_t class_label = 0;
};

// One video with its per-modality input volumes.
struct VideoSample {
  LabeledClip meta;
  std::map<Modality, ClipVolume> streams;
};

// ---- training --------------------------------------------------------------

struct TrainHyper {
  AdamConfig adam;
  std::size_t batch_size = 2;
  std::size_t epochs = 120;
  std::size_t eval_every = 10;
  FocalConfig focal;
  SamplerConfig sampler;
  AugConfig augment;
  bool use_attention = true;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0.0;
  std::optional<double> train_f1;
  std::optional<double> validation_f1;
};

struct TrainResult {
  StreamModel model;
  std::vector<EpochLog> log;
};

// Trains one stream end to end. Every `eval_every` epochs (and after the last)
// the model is scored in inference mode on the training set and, if given, on
// the validation set. Throws DivergenceError on a non-finite loss.
TrainResult train(const std::vector<VideoSample>& data, Modality modality, const EncoderConfig& encoder,
                  const TrainHyper& hyper, const std::vector<VideoSample>* validation = nullptr,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

// Seed for a named sub-task, e.g. ("fold", 3) or ("init").
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0);

struct PlannedSnippet {
  std::size_t segment = 0;
  std::size_t start = 0;
  std::size_t length = 0;
  std::string transform;
};

// The snippets train() draws for one clip in one epoch, without touching
// pixel data.
std::vector<PlannedSnippet> training_snippets(std::size_t clip_length, const std::string& clip_id,
                                              const TrainHyper& hyper, std::size_t epoch);

// ---- folds and metrics -----------------------------------------------------

struct FoldPlan {
  std::size_t k = 5;
  std::map<std::string, std::size_t> assignment;  // subject -> fold

  std::vector<std::string> subjects_in(std::size_t fold) const;
  std::size_t fold_of(const std::string& subject) const;
};

// Sorts and de-duplicates the subjects, shuffles them with rng and deals them
// round-robin into k folds.
FoldPlan subject_folds(std::vector<std::string> subjects, std::size_t k, std::mt19937_64& rng);

// Clips of one fold's split.
std::vector<VideoSample> split(const std::vector<VideoSample>& data, const FoldPlan& plan, std::size_t fold,
                               bool held_out);

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes = 3) : classes_(classes), counts_(classes * classes, 0) {}

  void add(std::size_t truth, std::size_t predicted);
  void merge(const ConfusionMatrix& other);
  std::size_t at(std::size_t truth, std::size_t predicted) const { return counts_.at(truth * classes_ + predicted); }
  std::size_t classes() const { return classes_; }
  std::size_t total() const;

 private:
  std::size_t classes_;
  std::vector<std::size_t> counts_;
};

// Unweighted mean of per-class F1 over classes that occur in the truth or the
// predictions. A class never seen on either side carries no information and is
// skipped; a class with support but no correct prediction counts as 0.
double macro_f1(const ConfusionMatrix& cm);
double accuracy(const ConfusionMatrix& cm);

struct FoldResult {
  std::size_t fold = 0;
  ConfusionMatrix confusion;
  double f1 = 0.0;
  double accuracy = 0.0;
};

struct EvaluationResult {
  std::vector<Modality> modalities;
  std::vector<FoldResult> folds;
  double mean_f1 = 0.0;
  double std_f1 = 0.0;  // population std over folds
  double mean_accuracy = 0.0;
  ConfusionMatrix pooled;
  double pooled_f1 = 0.0;
  double pooled_accuracy = 0.0;
};

// fold_models[i] holds the stream models trained without fold i.
EvaluationResult evaluate(const FoldPlan& plan, const std::vector<VideoSample>& data,
                          const std::vector<std::map<Modality, StreamModel>>& fold_models,
                          const std::vector<Modality>& modalities, const SamplerConfig& sampler);

// Hyperparameters used for one fold: the seed is derived from (seed, fold).
TrainHyper fold_hyper(const TrainHyper& hyper, std::size_t fold);

// Trains on every fold but `fold`, validating on `fold`.
TrainResult train_fold(const FoldPlan& plan, const std::vector<VideoSample>& data, Modality modality,
                       const EncoderConfig& encoder, const TrainHyper& hyper, std::size_t fold,
                       const std::function<void(const EpochLog&)>& on_epoch = {});

// Trains one model per fold for one modality. Folds run on up to `jobs`
// threads; results do not depend on the thread count.
std::vector<StreamModel> train_folds(const FoldPlan& plan, const std::vector<VideoSample>& data, Modality modality,
                                     const EncoderConfig& encoder, const TrainHyper& hyper, std::size_t jobs = 1,
                                     const std::function<void(std::size_t fold, const EpochLog&)>& on_epoch = {});

}  // namespace pdml
