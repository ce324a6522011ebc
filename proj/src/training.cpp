#include "pdml/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

#include "pdml/error.hpp"

namespace pdml {

std::string_view task_name(Task t) { return t == Task::hand_movement ? "hand" : "gait"; }

Task parse_task(std::string_view name) {
  if (name == "hand") return Task::hand_movement;
  if (name == "gait") return Task::gait;
  throw ConfigError("unknown task '" + std::string(name) + "' (expected hand or gait)");
}

std::size_t group_scores(int updrs_raw) {
  if (updrs_raw < 0 || updrs_raw > 4) throw InputError("UPDRS score " + std::to_string(updrs_raw) + " outside 0..4");
  if (updrs_raw == 0) return 0;
  return updrs_raw <= 2 ? 1 : 2;
}

void FocalConfig::validate() const {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("focal alpha must lie in (0, 1]");
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ConfigError("focal gamma must be >= 0");
}

double focal_loss(const std::vector<double>& probs, std::size_t label, const FocalConfig& config) {
  if (label >= probs.size()) throw InputError("label " + std::to_string(label) + " outside the probability vector");
  const double p = std::max(probs[label], 1e-12);
  return -config.alpha * std::pow(1.0 - p, config.gamma) * std::log(p);
}

double cross_entropy(const std::vector<double>& probs, std::size_t label) {
  if (label >= probs.size()) throw InputError("label " + std::to_string(label) + " outside the probability vector");
  return -std::log(std::max(probs[label], 1e-12));
}

// ---- training --------------------------------------------------------------

void TrainHyper::validate() const {
  adam.validate();
  focal.validate();
  sampler.validate();
  augment.validate();
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
}

namespace {

const ClipVolume& stream_of(const VideoSample& s, Modality m) {
  const auto it = s.streams.find(m);
  if (it == s.streams.end()) {
    throw InputError("clip '" + s.meta.clip_id + "' has no " + std::string(modality_name(m)) + " data");
  }
  return it->second;
}

double dataset_f1(const std::vector<VideoSample>& data, const StreamModel& model, const SamplerConfig& sampler,
                  std::size_t classes) {
  ConfusionMatrix cm(classes);
  for (const auto& s : data) {
    cm.add(s.meta.class_label, argmax_first(stream_scores(stream_of(s, model.modality), model, sampler)));
  }
  return macro_f1(cm);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t index) {
  auto rng = clip_rng(seed, tag, index);
  return rng();
}

std::vector<PlannedSnippet> training_snippets(std::size_t clip_length, const std::string& clip_id,
                                              const TrainHyper& hyper, std::size_t epoch) {
  auto rng = clip_rng(hyper.seed, clip_id, epoch);
  const auto starts = segment_starts(clip_length, hyper.sampler, rng);
  std::vector<PlannedSnippet> out;
  for (std::size_t i = 0; i < starts.size(); ++i) {
    PlannedSnippet p{i, starts[i], hyper.sampler.train_len, "none"};
    if (hyper.augment.enabled) p.transform = draw_transform(hyper.augment, rng).describe();
    out.push_back(p);
  }
  return out;
}

TrainHyper fold_hyper(const TrainHyper& hyper, std::size_t fold) {
  TrainHyper h = hyper;
  h.seed = derive_seed(hyper.seed, "fold", fold);
  return h;
}

TrainResult train(const std::vector<VideoSample>& data, Modality modality, const EncoderConfig& encoder,
                  const TrainHyper& hyper, const std::vector<VideoSample>* validation,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  hyper.validate();
  encoder.validate();
  if (data.empty()) throw InputError("training set is empty");
  for (const auto& s : data) {
    stream_of(s, modality);
    if (s.meta.class_label >= encoder.num_classes) {
      throw InputError("clip '" + s.meta.clip_id + "' has class " + std::to_string(s.meta.class_label));
    }
  }

  TrainResult result;
  StreamModel& model = result.model;
  model.modality = modality;
  model.config = encoder;
  model.use_attention = hyper.use_attention;
  model.params = init_params<float>(encoder, modality_channels(modality), derive_seed(hyper.seed, "init"));

  std::vector<std::size_t> order(data.size());
  for (std::size_t epoch = 1; epoch <= hyper.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    auto shuffle_rng = clip_rng(hyper.seed, "shuffle", epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += hyper.batch_size) {
      const std::size_t end = std::min(order.size(), b + hyper.batch_size);
      Tape<float> tape;
      tape.attach(model.params);
      std::vector<Var<float>> losses;
      for (std::size_t i = b; i < end; ++i) {
        const VideoSample& sample = data[order[i]];
        // Sampling and augmentation share one stream, dropout has its own, so
        // training_snippets() can replay the former without a forward pass.
        auto rng = clip_rng(hyper.seed, sample.meta.clip_id, epoch);
        auto dropout_rng = clip_rng(derive_seed(hyper.seed, "dropout", epoch), sample.meta.clip_id);
        std::vector<SnippetOutput<float>> outs;
        for (const Snippet& s : segment_sample(stream_of(sample, modality), hyper.sampler, rng)) {
          const Snippet aug = augment(s, rng, hyper.augment);
          outs.push_back(encode_snippet(tape, model.params, aug.frames, encoder, ForwardMode{true, &dropout_rng}));
        }
        const Var<float> probs = class_probs(consensus(tape, outs, hyper.use_attention));
        losses.push_back(focal_loss(probs, sample.meta.class_label, hyper.focal.alpha, hyper.focal.gamma));
      }
      const Var<float> batch_loss = mul_const(add_n(losses), 1.0f / static_cast<float>(losses.size()));
      const float value = batch_loss.value()[0];
      if (!std::isfinite(value)) {
        std::string ids;
        for (std::size_t i = b; i < end; ++i) ids += (ids.empty() ? "" : ", ") + data[order[i]].meta.clip_id;
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + " on clips [" + ids + "]");
      }
      tape.backward(batch_loss);
      adam_step(model.params, hyper.adam);
      loss_sum += static_cast<double>(value) * static_cast<double>(end - b);
    }

    EpochLog log;
    log.epoch = epoch;
    log.mean_loss = loss_sum / static_cast<double>(data.size());
    if ((hyper.eval_every && epoch % hyper.eval_every == 0) || epoch == hyper.epochs) {
      log.train_f1 = dataset_f1(data, model, hyper.sampler, encoder.num_classes);
      if (validation && !validation->empty()) {
        log.validation_f1 = dataset_f1(*validation, model, hyper.sampler, encoder.num_classes);
      }
    }
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return result;
}

// ---- folds and metrics -----------------------------------------------------

std::vector<std::string> FoldPlan::subjects_in(std::size_t fold) const {
  std::vector<std::string> out;
  for (const auto& [subject, f] : assignment)
    if (f == fold) out.push_back(subject);
  return out;
}

std::size_t FoldPlan::fold_of(const std::string& subject) const {
  const auto it = assignment.find(subject);
  if (it == assignment.end()) throw InputError("subject '" + subject + "' is not in the fold plan");
  return it->second;
}

FoldPlan subject_folds(std::vector<std::string> subjects, std::size_t k, std::mt19937_64& rng) {
  std::sort(subjects.begin(), subjects.end());
  subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
  if (k < 1) throw ConfigError("fold count must be >= 1");
  if (k > subjects.size()) {
    throw ConfigError("cannot split " + std::to_string(subjects.size()) + " subjects into " + std::to_string(k) +
                      " folds");
  }
  std::shuffle(subjects.begin(), subjects.end(), rng);
  FoldPlan plan;
  plan.k = k;
  for (std::size_t i = 0; i < subjects.size(); ++i) plan.assignment[subjects[i]] = i % k;
  return plan;
}

std::vector<VideoSample> split(const std::vector<VideoSample>& data, const FoldPlan& plan, std::size_t fold,
                               bool held_out) {
  std::vector<VideoSample> out;
  for (const auto& s : data)
    if ((plan.fold_of(s.meta.subject_id) == fold) == held_out) out.push_back(s);
  return out;
}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted) {
  if (truth >= classes_ || predicted >= classes_) throw InputError("class index outside the confusion matrix");
  ++counts_[truth * classes_ + predicted];
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw DimensionError("confusion matrices of different sizes");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::size_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::size_t{0}); }

double macro_f1(const ConfusionMatrix& cm) {
  const std::size_t m = cm.classes();
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < m; ++c) {
    std::size_t support = 0, predicted = 0;
    for (std::size_t j = 0; j < m; ++j) {
      support += cm.at(c, j);
      predicted += cm.at(j, c);
    }
    if (support == 0 && predicted == 0) continue;
    const double tp = static_cast<double>(cm.at(c, c));
    sum += 2.0 * tp / static_cast<double>(support + predicted);
    ++counted;
  }
  return counted ? sum / static_cast<double>(counted) : 0.0;
}

double accuracy(const ConfusionMatrix& cm) {
  const std::size_t n = cm.total();
  if (n == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t c = 0; c < cm.classes(); ++c) correct += cm.at(c, c);
  return static_cast<double>(correct) / static_cast<double>(n);
}

EvaluationResult evaluate(const FoldPlan& plan, const std::vector<VideoSample>& data,
                          const std::vector<std::map<Modality, StreamModel>>& fold_models,
                          const std::vector<Modality>& modalities, const SamplerConfig& sampler) {
  if (fold_models.size() != plan.k) {
    throw ConfigError("expected " + std::to_string(plan.k) + " fold models, got " + std::to_string(fold_models.size()));
  }
  if (modalities.empty()) throw ConfigError("evaluate: no modalities requested");
  std::size_t classes = 0;
  for (std::size_t f = 0; f < plan.k; ++f) {
    for (Modality m : modalities) {
      const auto it = fold_models[f].find(m);
      if (it == fold_models[f].end()) {
        throw ConfigError("fold " + std::to_string(f) + " has no " + std::string(modality_name(m)) + " model");
      }
      classes = it->second.config.num_classes;
    }
  }

  EvaluationResult r;
  r.modalities = modalities;
  r.pooled = ConfusionMatrix(classes);
  for (std::size_t f = 0; f < plan.k; ++f) {
    FoldResult fr;
    fr.fold = f;
    fr.confusion = ConfusionMatrix(classes);
    for (const auto& s : split(data, plan, f, true)) {
      fr.confusion.add(s.meta.class_label, predict_video(s.streams, fold_models[f], modalities, sampler).label);
    }
    fr.f1 = macro_f1(fr.confusion);
    fr.accuracy = accuracy(fr.confusion);
    r.pooled.merge(fr.confusion);
    r.folds.push_back(fr);
  }
  double sum_f1 = 0, sum_acc = 0;
  for (const auto& fr : r.folds) {
    sum_f1 += fr.f1;
    sum_acc += fr.accuracy;
  }
  const double k = static_cast<double>(plan.k);
  r.mean_f1 = sum_f1 / k;
  r.mean_accuracy = sum_acc / k;
  double var = 0;
  for (const auto& fr : r.folds) var += (fr.f1 - r.mean_f1) * (fr.f1 - r.mean_f1);
  r.std_f1 = std::sqrt(var / k);
  r.pooled_f1 = macro_f1(r.pooled);
  r.pooled_accuracy = accuracy(r.pooled);
  return r;
}

TrainResult train_fold(const FoldPlan& plan, const std::vector<VideoSample>& data, Modality modality,
                       const EncoderConfig& encoder, const TrainHyper& hyper, std::size_t fold,
                       const std::function<void(const EpochLog&)>& on_epoch) {
  if (fold >= plan.k) throw ConfigError("fold " + std::to_string(fold) + " out of range for k=" + std::to_string(plan.k));
  const auto train_set = split(data, plan, fold, false);
  const auto held_out = split(data, plan, fold, true);
  return train(train_set, modality, encoder, fold_hyper(hyper, fold), &held_out, on_epoch);
}

std::vector<StreamModel> train_folds(const FoldPlan& plan, const std::vector<VideoSample>& data, Modality modality,
                                     const EncoderConfig& encoder, const TrainHyper& hyper, std::size_t jobs,
                                     const std::function<void(std::size_t, const EpochLog&)>& on_epoch) {
  std::vector<StreamModel> models(plan.k);
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  std::exception_ptr failure;
  auto worker = [&] {
    for (std::size_t f = next++; f < plan.k; f = next++) {
      try {
        auto cb = [&](const EpochLog& log) {
          if (!on_epoch) return;
          std::lock_guard lock(log_mutex);
          on_epoch(f, log);
        };
        models[f] = train_fold(plan, data, modality, encoder, hyper, f, cb).model;
      } catch (...) {
        std::lock_guard lock(log_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(jobs, plan.k));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t i = 0; i < n; ++i) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return models;
}

}  // namespace pdml
