#include "pdml/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "pdml/error.hpp"

namespace pdml {

using json = nlohmann::json;

std::vector<SynthClassSpec> SynthConfig::default_classes() {
  return {SynthClassSpec{{4.5, 6.0}, {2.5, 3.5}, {0.0, 0.0}}, SynthClassSpec{{2.5, 4.0}, {1.5, 2.5}, {0.3, 0.6}},
          SynthClassSpec{{1.0, 2.0}, {0.8, 1.5}, {0.9, 1.5}}};
}

void SynthConfig::validate() const {
  if (n_subjects < 1 || clips_per_subject < 1) throw ConfigError("synth: need at least one subject and one clip");
  if (width < 16 || height < 16) throw ConfigError("synth: frames must be at least 16x16");
  if (frame_count_min < 2 || frame_count_max < frame_count_min) throw ConfigError("synth: bad frame count range");
  if (!(fps > 0)) throw ConfigError("synth: fps must be positive");
  if (classes.size() < 2) throw ConfigError("synth: need at least two severity classes");
  auto ordered = [](const std::array<double, 2>& r) { return r[0] <= r[1]; };
  for (const auto& c : classes) {
    if (!ordered(c.amplitude_px) || !ordered(c.frequency_hz) || !ordered(c.decay_per_s)) {
      throw ConfigError("synth: class ranges must be [min, max]");
    }
    if (c.amplitude_px[0] < 0 || c.frequency_hz[0] < 0 || c.decay_per_s[0] < 0) {
      throw ConfigError("synth: class parameters must be non-negative");
    }
  }
  auto disjoint = [](const std::array<double, 2>& a, const std::array<double, 2>& b) { return a[1] < b[0] || b[1] < a[0]; };
  for (std::size_t i = 0; i < classes.size(); ++i)
    for (std::size_t j = i + 1; j < classes.size(); ++j)
      if (!disjoint(classes[i].amplitude_px, classes[j].amplitude_px) &&
          !disjoint(classes[i].decay_per_s, classes[j].decay_per_s)) {
        throw ConfigError("synth: classes " + std::to_string(i) + " and " + std::to_string(j) +
                          " overlap in both amplitude and decay");
      }
  if (!ordered(pan_x) || !ordered(pan_y)) throw ConfigError("synth: pan ranges must be [min, max]");
}

TrainHyper PipelineConfig::hyper() const {
  TrainHyper h;
  h.adam = adam;
  h.batch_size = batch_size;
  h.epochs = epochs;
  h.eval_every = eval_every;
  h.focal = focal;
  h.sampler = sampler;
  h.augment = augment;
  h.use_attention = attention;
  h.seed = seed;
  return h;
}

std::filesystem::path PipelineConfig::resolved_cache_dir() const {
  if (!cache_dir.empty()) return cache_dir;
  if (const char* env = std::getenv("PDML_CACHE"); env && *env) return env;
  return work_dir / "cache";
}

void PipelineConfig::validate() const {
  if (frame_width < 16 || frame_height < 16) throw ConfigError("frame size must be at least 16x16");
  flow.validate();
  if (!(flow_bound > 0)) throw ConfigError("flow bound must be positive");
  encoder.validate();
  hyper().validate();
  if (folds < 2) throw ConfigError("need at least 2 folds");
  if (modalities.empty()) throw ConfigError("no modalities requested");
  for (Modality m : fuse) {
    if (std::find(modalities.begin(), modalities.end(), m) == modalities.end()) {
      throw ConfigError("fusion uses " + std::string(modality_name(m)) + ", which is not in run.modalities");
    }
  }
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
}

std::vector<Modality> parse_modality_list(const std::string& text) {
  std::vector<Modality> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const Modality m = parse_modality(item);
    if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
  }
  if (out.empty()) throw ConfigError("empty modality list");
  return out;
}

std::string modality_list(const std::vector<Modality>& ms, char sep) {
  std::string s;
  for (Modality m : ms) {
    if (!s.empty()) s += sep;
    s += modality_name(m);
  }
  return s;
}

// ---- JSON ------------------------------------------------------------------

namespace {

// Reads fields from one object and complains about keys nobody asked for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown config key '" + path_ + "." + key + "'");
    }
  }

  template <typename V>
  void get(const char* key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<V>();
    } catch (const json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  Section sub(const char* key) {
    seen_.insert(key);
    return Section(j_.at(key), path_ + "." + key);
  }
  const json& raw(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename Fn>
void with_section(Section& parent, const char* key, Fn&& fn) {
  if (parent.has(key)) {
    Section s = parent.sub(key);
    fn(s);
  }
}

void read_modalities(Section& s, const char* key, std::vector<Modality>& out) {
  if (!s.has(key)) return;
  out.clear();
  const json& arr = s.raw(key);
  if (!arr.is_array()) throw ConfigError(std::string("run.") + key + ": expected an array of modality names");
  for (const auto& v : arr) out.push_back(parse_modality(v.get<std::string>()));
}

void read_task(Section& s, Task& task) {
  if (!s.has("task")) return;
  task = parse_task(s.raw("task").get<std::string>());
}

void read_synth(Section& s, SynthConfig& c) {
  s.get("n_subjects", c.n_subjects);
  s.get("clips_per_subject", c.clips_per_subject);
  read_task(s, c.task);
  s.get("width", c.width);
  s.get("height", c.height);
  s.get("frame_count_min", c.frame_count_min);
  s.get("frame_count_max", c.frame_count_max);
  s.get("fps", c.fps);
  s.get("pan_x", c.pan_x);
  s.get("pan_y", c.pan_y);
  s.get("seed", c.seed);
  if (s.has("classes")) {
    c.classes.clear();
    const json& arr = s.raw("classes");
    if (!arr.is_array()) throw ConfigError("synth.classes: expected an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      Section cs(arr[i], "synth.classes[" + std::to_string(i) + "]");
      SynthClassSpec spec;
      cs.get("amplitude_px", spec.amplitude_px);
      cs.get("frequency_hz", spec.frequency_hz);
      cs.get("decay_per_s", spec.decay_per_s);
      c.classes.push_back(spec);
    }
  }
}

json synth_json(const SynthConfig& c) {
  json classes = json::array();
  for (const auto& k : c.classes) {
    classes.push_back({{"amplitude_px", k.amplitude_px}, {"frequency_hz", k.frequency_hz}, {"decay_per_s", k.decay_per_s}});
  }
  return {{"n_subjects", c.n_subjects},
          {"clips_per_subject", c.clips_per_subject},
          {"task", task_name(c.task)},
          {"width", c.width},
          {"height", c.height},
          {"frame_count_min", c.frame_count_min},
          {"frame_count_max", c.frame_count_max},
          {"fps", c.fps},
          {"classes", classes},
          {"pan_x", c.pan_x},
          {"pan_y", c.pan_y},
          {"seed", c.seed}};
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

json modality_json(const std::vector<Modality>& ms) {
  json a = json::array();
  for (Modality m : ms) a.push_back(modality_name(m));
  return a;
}

}  // namespace

PipelineConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  PipelineConfig c;
  Section root(doc, "config");
  root.get("seed", c.seed);
  read_task(root, c.task);

  with_section(root, "paths", [&](Section& s) {
    std::string manifest, work_dir, cache_dir;
    s.get("manifest", manifest);
    s.get("work_dir", work_dir);
    s.get("cache_dir", cache_dir);
    if (!manifest.empty()) c.manifest = resolve(base_dir, manifest);
    if (!work_dir.empty()) c.work_dir = resolve(base_dir, work_dir);
    if (!cache_dir.empty()) c.cache_dir = resolve(base_dir, cache_dir);
  });
  with_section(root, "ingest", [&](Section& s) {
    s.get("width", c.frame_width);
    s.get("height", c.frame_height);
  });
  with_section(root, "flow", [&](Section& s) {
    s.get("lambda", c.flow.lambda);
    s.get("theta", c.flow.theta);
    s.get("tau", c.flow.tau);
    s.get("pyramid_levels", c.flow.pyramid_levels);
    s.get("scale_factor", c.flow.scale_factor);
    s.get("warps_per_level", c.flow.warps_per_level);
    s.get("iterations_per_warp", c.flow.iterations_per_warp);
    s.get("stop_epsilon", c.flow.stop_epsilon);
    s.get("bound", c.flow_bound);
  });
  with_section(root, "sampler", [&](Section& s) {
    s.get("k_segments", c.sampler.k_segments);
    s.get("train_len", c.sampler.train_len);
    s.get("test_snippets", c.sampler.test_snippets);
    s.get("test_len", c.sampler.test_len);
  });
  with_section(root, "augment", [&](Section& s) {
    s.get("enabled", c.augment.enabled);
    s.get("scales", c.augment.scales);
    s.get("flip_probability", c.augment.flip_probability);
  });
  with_section(root, "model", [&](Section& s) {
    s.get("num_classes", c.encoder.num_classes);
    s.get("attention_hidden", c.encoder.attention_hidden);
    s.get("dropout", c.encoder.dropout);
    s.get("attention", c.attention);
    if (s.has("stages")) {
      c.encoder.stages.clear();
      const json& arr = s.raw("stages");
      if (!arr.is_array()) throw ConfigError("model.stages: expected an array");
      for (std::size_t i = 0; i < arr.size(); ++i) {
        Section st(arr[i], "model.stages[" + std::to_string(i) + "]");
        ConvStage cs;
        st.get("channels", cs.channels);
        st.get("kernel", cs.kernel);
        st.get("stride", cs.stride);
        st.get("padding", cs.padding);
        c.encoder.stages.push_back(cs);
      }
    }
  });
  with_section(root, "loss", [&](Section& s) {
    s.get("alpha", c.focal.alpha);
    s.get("gamma", c.focal.gamma);
  });
  with_section(root, "optimizer", [&](Section& s) {
    s.get("learning_rate", c.adam.learning_rate);
    s.get("beta1", c.adam.beta1);
    s.get("beta2", c.adam.beta2);
    s.get("epsilon", c.adam.epsilon);
    s.get("batch_size", c.batch_size);
    s.get("epochs", c.epochs);
    s.get("eval_every", c.eval_every);
  });
  with_section(root, "folds", [&](Section& s) { s.get("k", c.folds); });
  with_section(root, "run", [&](Section& s) {
    read_modalities(s, "modalities", c.modalities);
    read_modalities(s, "fuse", c.fuse);
    s.get("jobs", c.jobs);
  });
  with_section(root, "synth", [&](Section& s) { read_synth(s, c.synth); });
  c.sampler.rng_seed = c.seed;
  c.validate();
  c.synth.validate();
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path());
}

std::string config_to_json(const PipelineConfig& c) {
  json stages = json::array();
  for (const auto& s : c.encoder.stages) {
    stages.push_back({{"channels", s.channels}, {"kernel", s.kernel}, {"stride", s.stride}, {"padding", s.padding}});
  }
  const json doc = {
      {"seed", c.seed},
      {"task", task_name(c.task)},
      {"paths", {{"manifest", c.manifest.string()}, {"work_dir", c.work_dir.string()}, {"cache_dir", c.cache_dir.string()}}},
      {"ingest", {{"width", c.frame_width}, {"height", c.frame_height}}},
      {"flow",
       {{"lambda", c.flow.lambda},
        {"theta", c.flow.theta},
        {"tau", c.flow.tau},
        {"pyramid_levels", c.flow.pyramid_levels},
        {"scale_factor", c.flow.scale_factor},
        {"warps_per_level", c.flow.warps_per_level},
        {"iterations_per_warp", c.flow.iterations_per_warp},
        {"stop_epsilon", c.flow.stop_epsilon},
        {"bound", c.flow_bound}}},
      {"sampler",
       {{"k_segments", c.sampler.k_segments},
        {"train_len", c.sampler.train_len},
        {"test_snippets", c.sampler.test_snippets},
        {"test_len", c.sampler.test_len}}},
      {"augment",
       {{"enabled", c.augment.enabled}, {"scales", c.augment.scales}, {"flip_probability", c.augment.flip_probability}}},
      {"model",
       {{"stages", stages},
        {"num_classes", c.encoder.num_classes},
        {"attention_hidden", c.encoder.attention_hidden},
        {"dropout", c.encoder.dropout},
        {"attention", c.attention}}},
      {"loss", {{"alpha", c.focal.alpha}, {"gamma", c.focal.gamma}}},
      {"optimizer",
       {{"learning_rate", c.adam.learning_rate},
        {"beta1", c.adam.beta1},
        {"beta2", c.adam.beta2},
        {"epsilon", c.adam.epsilon},
        {"batch_size", c.batch_size},
        {"epochs", c.epochs},
        {"eval_every", c.eval_every}}},
      {"folds", {{"k", c.folds}}},
      {"run", {{"modalities", modality_json(c.modalities)}, {"fuse", modality_json(c.fuse)}, {"jobs", c.jobs}}},
      {"synth", synth_json(c.synth)}};
  return doc.dump(2);
}

std::string synth_config_to_json(const SynthConfig& c) { return synth_json(c).dump(2); }

}  // namespace pdml
