#include "pdml/model.hpp"

#include <cmath>

#include "pdml/error.hpp"
#include "pdml/optim.hpp"

namespace pdml {

namespace {

// Correctly rounded sum of doubles (Shewchuk partials, as in Python's
// math.fsum). The result depends only on the multiset of inputs.
double exact_sum(const std::vector<double>& xs) {
  std::vector<double> partials;
  for (double x : xs) {
    std::size_t i = 0;
    for (double y : partials) {
      if (std::abs(x) < std::abs(y)) std::swap(x, y);
      const double hi = x + y;
      const double lo = y - (hi - x);
      if (lo != 0.0) partials[i++] = lo;
      x = hi;
    }
    partials.resize(i);
    partials.push_back(x);
  }
  if (partials.empty()) return 0.0;
  std::size_t n = partials.size();
  double hi = partials[--n], lo = 0.0;
  while (n > 0) {
    const double x = hi, y = partials[--n];
    hi = x + y;
    lo = y - (hi - x);
    if (lo != 0.0) break;
  }
  // half-way case: round towards the remaining partials
  if (n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0))) {
    const double y = lo * 2.0, x = hi + y;
    if (y == x - hi) hi = x;
  }
  return hi;
}

std::string stage_name(std::size_t i, const char* what) { return "stage" + std::to_string(i) + "." + what; }

template <typename T>
BasicTensor<T> uniform_tensor(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-bound, bound);
  BasicTensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(d(rng));
  return t;
}

template <typename T, typename Set>
SnippetOutput<T> encode_impl(Tape<T>& tape, Set& params, const BasicTensor<T>& frames, const EncoderConfig& config,
                             const ForwardMode& mode) {
  if (frames.rank() != 4) throw InputError("snippet must be [C, L, H, W], got " + shape_string(frames.shape()));
  const auto& stem = params.value(stage_name(0, "weight"));
  if (frames.dim(0) != stem.dim(1)) {
    throw InputError("snippet has " + std::to_string(frames.dim(0)) + " channels, model expects " +
                     std::to_string(stem.dim(1)));
  }
  Var<T> x = tape.constant(frames);
  for (std::size_t i = 0; i < config.stages.size(); ++i) {
    const ConvStage& st = config.stages[i];
    Conv3dGeometry geom;
    geom.stride = st.stride;
    geom.padding = st.padding;
    x = conv3d(x, tape.parameter(params, stage_name(i, "weight")), geom);
    x = relu(add_channel_bias(x, tape.parameter(params, stage_name(i, "bias"))));
  }
  SnippetOutput<T> out;
  out.features = global_avg_pool(x);

  Var<T> h = relu(linear(out.features, tape.parameter(params, "attn.fc1.weight"), tape.parameter(params, "attn.fc1.bias")));
  out.attention = sigmoid(linear(h, tape.parameter(params, "attn.fc2.weight"), tape.parameter(params, "attn.fc2.bias")));

  std::mt19937_64 unused(0);
  std::mt19937_64* rng = mode.rng;
  if (mode.train && config.dropout > 0.0 && rng == nullptr) throw ContractError("training forward pass needs an rng");
  if (rng == nullptr) rng = &unused;
  Var<T> dropped = dropout(out.features, config.dropout, mode.train, *rng);
  out.class_scores = linear(dropped, tape.parameter(params, "head.weight"), tape.parameter(params, "head.bias"));
  return out;
}

}  // namespace

std::vector<ConvStage> EncoderConfig::default_stages() {
  return {ConvStage{8, {3, 3, 3}, {1, 2, 2}, {1, 1, 1}}, ConvStage{16, {3, 3, 3}, {2, 1, 1}, {1, 1, 1}},
          ConvStage{32, {3, 3, 3}, {1, 2, 2}, {1, 1, 1}}, ConvStage{64, {3, 3, 3}, {2, 1, 1}, {1, 1, 1}}};
}

void EncoderConfig::validate() const {
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (stages.empty()) throw ConfigError("encoder needs at least one conv stage");
  for (const auto& s : stages) {
    if (s.channels < 1) throw ConfigError("conv stage channels must be >= 1");
    for (int a = 0; a < 3; ++a) {
      if (s.kernel[a] < 1 || s.stride[a] < 1) throw ConfigError("conv kernel extents and strides must be >= 1");
    }
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
}

template <typename T>
ParamSet<T> init_params(const EncoderConfig& config, std::size_t in_channels, std::uint64_t seed) {
  config.validate();
  if (in_channels < 1) throw ConfigError("in_channels must be >= 1");
  std::mt19937_64 rng(seed);
  ParamSet<T> params;
  std::size_t c_in = in_channels;
  for (std::size_t i = 0; i < config.stages.size(); ++i) {
    const ConvStage& st = config.stages[i];
    const std::size_t fan_in = c_in * st.kernel[0] * st.kernel[1] * st.kernel[2];
    params.add(stage_name(i, "weight"),
               uniform_tensor<T>(Shape{st.channels, c_in, st.kernel[0], st.kernel[1], st.kernel[2]},
                                 std::sqrt(6.0 / static_cast<double>(fan_in)), rng));
    params.add(stage_name(i, "bias"), BasicTensor<T>(Shape{st.channels}));
    c_in = st.channels;
  }
  const std::size_t d = config.feature_dim(), hidden = config.hidden_dim(), m = config.num_classes;
  auto fc = [&](const std::string& name, std::size_t out, std::size_t in) {
    params.add(name + ".weight", uniform_tensor<T>(Shape{out, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng));
    params.add(name + ".bias", BasicTensor<T>(Shape{out}));
  };
  fc("attn.fc1", hidden, d);
  fc("attn.fc2", 1, hidden);
  fc("head", m, d);
  return params;
}

template <typename T>
BasicTensor<T> inflate_kernel(const BasicTensor<T>& k2, std::size_t depth) {
  if (depth < 1) throw ConfigError("inflation depth must be >= 1");
  if (k2.rank() != 4) throw DimensionError("inflate_kernel: expected [C_out, C_in, kH, kW], got " + shape_string(k2.shape()));
  const std::size_t co = k2.dim(0), ci = k2.dim(1), plane = k2.dim(2) * k2.dim(3);
  BasicTensor<T> out(Shape{co, ci, depth, k2.dim(2), k2.dim(3)});
  const T scale = static_cast<T>(depth);
  for (std::size_t f = 0; f < co * ci; ++f)
    for (std::size_t t = 0; t < depth; ++t)
      for (std::size_t i = 0; i < plane; ++i) out[(f * depth + t) * plane + i] = k2[f * plane + i] / scale;
  return out;
}

template <typename T>
SnippetOutput<T> encode_snippet(Tape<T>& tape, ParamSet<T>& params, const BasicTensor<T>& frames,
                                const EncoderConfig& config, const ForwardMode& mode) {
  return encode_impl(tape, params, frames, config, mode);
}

template <typename T>
SnippetOutput<T> encode_snippet(Tape<T>& tape, const ParamSet<T>& params, const BasicTensor<T>& frames,
                                const EncoderConfig& config, const ForwardMode& mode) {
  return encode_impl(tape, params, frames, config, mode);
}

template <typename T>
Var<T> consensus(const std::vector<Var<T>>& scores, const std::vector<Var<T>>& lambdas) {
  if (scores.empty()) throw ContractError("consensus over zero snippets");
  if (scores.size() != lambdas.size()) throw ContractError("consensus: one attention weight per snippet required");
  Tape<T>* tape = scores[0].tape;
  const std::size_t k = scores.size(), m = scores[0].value().size();
  std::vector<std::size_t> parents;
  for (std::size_t i = 0; i < k; ++i) {
    if (scores[i].tape != tape || lambdas[i].tape != tape) throw ContractError("consensus: operands on different tapes");
    if (scores[i].value().shape() != Shape{m}) throw DimensionError("consensus: score vectors differ in shape");
    if (lambdas[i].value().size() != 1) throw DimensionError("consensus: attention weight must be a scalar");
    parents.push_back(scores[i].id);
    parents.push_back(lambdas[i].id);
  }
  BasicTensor<T> f(Shape{m});
  std::vector<double> terms(k);
  for (std::size_t c = 0; c < m; ++c) {
    for (std::size_t i = 0; i < k; ++i) terms[i] = static_cast<double>(lambdas[i].value()[0]) * static_cast<double>(scores[i].value()[c]);
    f[c] = static_cast<T>(exact_sum(terms) / static_cast<double>(k));
  }
  return tape->record(std::move(f), parents, [parents, k, m](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const double inv_k = 1.0 / static_cast<double>(k);
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t s_id = parents[2 * i], l_id = parents[2 * i + 1];
      const T lambda = t.value(l_id)[0];
      if (t.requires_grad(s_id)) {
        auto& gs = t.grad(s_id);
        for (std::size_t c = 0; c < m; ++c) gs[c] += static_cast<T>(lambda * g[c] * inv_k);
      }
      if (t.requires_grad(l_id)) {
        const auto& s = t.value(s_id);
        double acc = 0;
        for (std::size_t c = 0; c < m; ++c) acc += static_cast<double>(s[c]) * g[c];
        t.grad(l_id)[0] += static_cast<T>(acc * inv_k);
      }
    }
  });
}

template <typename T>
Var<T> consensus(Tape<T>& tape, const std::vector<SnippetOutput<T>>& outputs, bool use_attention) {
  std::vector<Var<T>> scores, lambdas;
  for (const auto& o : outputs) {
    scores.push_back(o.class_scores);
    lambdas.push_back(use_attention ? o.attention : tape.constant(BasicTensor<T>::scalar(T(1))));
  }
  return consensus(scores, lambdas);
}

template <typename T>
BasicTensor<T> segment_mean(const std::vector<BasicTensor<T>>& scores) {
  if (scores.empty()) throw ContractError("segment_mean over zero snippets");
  const std::size_t m = scores[0].size();
  BasicTensor<T> out(Shape{m});
  std::vector<double> terms(scores.size());
  for (std::size_t c = 0; c < m; ++c) {
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i].size() != m) throw DimensionError("segment_mean: score vectors differ in length");
      terms[i] = static_cast<double>(scores[i][c]);
    }
    out[c] = static_cast<T>(exact_sum(terms) / static_cast<double>(scores.size()));
  }
  return out;
}

std::vector<double> class_probs(const std::vector<double>& f) {
  if (f.empty()) throw DimensionError("class_probs of an empty score vector");
  const double mx = *std::max_element(f.begin(), f.end());
  std::vector<double> p(f.size());
  double denom = 0;
  for (std::size_t i = 0; i < f.size(); ++i) denom += p[i] = std::exp(f[i] - mx);
  for (auto& v : p) v /= denom;
  return p;
}

std::vector<double> fuse_modalities(const std::vector<std::vector<double>>& streams) {
  if (streams.empty()) throw ContractError("fuse_modalities needs at least one stream");
  const std::size_t m = streams[0].size();
  std::vector<double> out(m, 0.0);
  for (const auto& s : streams) {
    if (s.size() != m) {
      throw InputError("fuse_modalities: score vectors of length " + std::to_string(m) + " and " + std::to_string(s.size()));
    }
    for (std::size_t c = 0; c < m; ++c) out[c] += s[c];
  }
  for (auto& v : out) v /= static_cast<double>(streams.size());
  return out;
}

std::size_t argmax_first(const std::vector<double>& p) {
  if (p.empty()) throw ContractError("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < p.size(); ++i)
    if (p[i] > p[best]) best = i;
  return best;
}

std::vector<double> stream_scores(const ClipVolume& clip, const StreamModel& model, const SamplerConfig& sampler) {
  if (clip.modality != model.modality) {
    throw InputError("clip '" + clip.clip_id + "' is " + std::string(modality_name(clip.modality)) + " but the model is " +
                     std::string(modality_name(model.modality)));
  }
  const auto snippets = dense_snippets(clip, sampler);
  std::vector<double> mean(model.config.num_classes, 0.0);
  for (const Snippet& s : snippets) {
    Tape<float> tape;
    tape.set_grad_enabled(false);
    const auto out = encode_snippet(tape, model.params, s.frames, model.config);
    const auto f = consensus(tape, std::vector<SnippetOutput<float>>{out}, model.use_attention);
    const auto p = class_probs(f).value();
    for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += p[c];
  }
  for (auto& v : mean) v /= static_cast<double>(snippets.size());
  return mean;
}

VideoPrediction predict_video(const std::map<Modality, ClipVolume>& clips, const std::map<Modality, StreamModel>& models,
                              const std::vector<Modality>& modalities, const SamplerConfig& sampler) {
  if (modalities.empty()) throw ConfigError("predict_video: no modalities requested");
  VideoPrediction pred;
  std::vector<std::vector<double>> streams;
  for (Modality m : modalities) {
    const auto model = models.find(m);
    if (model == models.end()) throw ConfigError("no trained model for modality " + std::string(modality_name(m)));
    const auto clip = clips.find(m);
    if (clip == clips.end()) throw InputError("no clip data for modality " + std::string(modality_name(m)));
    streams.push_back(stream_scores(clip->second, model->second, sampler));
    pred.per_modality[m] = streams.back();
  }
  pred.probs = fuse_modalities(streams);
  pred.label = argmax_first(pred.probs);
  return pred;
}

void save_stream(const StreamModel& model, const std::filesystem::path& path) {
  ParamSet<float> out = model.params;
  out.add("modality:" + std::string(modality_name(model.modality)), Tensor::scalar(1.0f));
  out.add("attention", Tensor::scalar(model.use_attention ? 1.0f : 0.0f));
  save_checkpoint(out, path);
}

StreamModel load_stream(const std::filesystem::path& path, const EncoderConfig& config) {
  ParamSet<float> loaded = load_checkpoint(path);
  StreamModel model;
  model.config = config;
  bool found = false;
  for (const auto& [name, p] : loaded.entries()) {
    if (name.rfind("modality:", 0) == 0) {
      model.modality = parse_modality(name.substr(9));
      found = true;
    } else if (name == "attention") {
      model.use_attention = p.value[0] != 0.0f;
    } else {
      model.params.add(name, p.value);
    }
  }
  if (!found) throw IoError(path.string() + ": checkpoint has no modality record");
  // shape check against the config
  const ParamSet<float> reference = init_params<float>(config, modality_channels(model.modality), 0);
  for (const auto& [name, p] : reference.entries()) {
    if (!model.params.contains(name) || model.params.value(name).shape() != p.value.shape()) {
      throw ConfigError(path.string() + ": parameter '" + name + "' missing or shaped differently from the config");
    }
  }
  model.params.set_step(loaded.step());
  return model;
}

#define PDML_INSTANTIATE(T)                                                                                     \
  template ParamSet<T> init_params<T>(const EncoderConfig&, std::size_t, std::uint64_t);                        \
  template BasicTensor<T> inflate_kernel<T>(const BasicTensor<T>&, std::size_t);                                \
  template SnippetOutput<T> encode_snippet<T>(Tape<T>&, ParamSet<T>&, const BasicTensor<T>&, const EncoderConfig&, \
                                              const ForwardMode&);                                              \
  template SnippetOutput<T> encode_snippet<T>(Tape<T>&, const ParamSet<T>&, const BasicTensor<T>&,              \
                                              const EncoderConfig&, const ForwardMode&);                        \
  template Var<T> consensus<T>(const std::vector<Var<T>>&, const std::vector<Var<T>>&);                         \
  template Var<T> consensus<T>(Tape<T>&, const std::vector<SnippetOutput<T>>&, bool);                           \
  template BasicTensor<T> segment_mean<T>(const std::vector<BasicTensor<T>>&);

PDML_INSTANTIATE(float)
PDML_INSTANTIATE(double)

#undef PDML_INSTANTIATE

}  // namespace pdml
