#pragma once

// Shared-weight 3D conv snippet encoder with an attention gate, the
// attention-weighted consensus over snippets, and late fusion across streams.

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "pdml/autodiff.hpp"
#include "pdml/sampling.hpp"

namespace pdml {

struct ConvStage {
  std::size_t channels = 8;
  std::array<std::size_t, 3> kernel{3, 3, 3};
  std::array<std::size_t, 3> stride{1, 1, 1};
  std::array<std::size_t, 3> padding{1, 1, 1};
};

struct EncoderConfig {
  std::vector<ConvStage> stages = default_stages();
  std::size_t num_classes = 3;
  std::size_t attention_hidden = 0;  // 0 means feature_dim / 2
  double dropout = 0.7;

  // 8 -> 16 -> 32 -> 64 channels, 3x3x3 kernels; spatial stride 2 on stages
  // 1 and 3, temporal stride 2 on stages 2 and 4.
  static std::vector<ConvStage> default_stages();

  std::size_t feature_dim() const { return stages.back().channels; }
  std::size_t hidden_dim() const { return attention_hidden ? attention_hidden : std::max<std::size_t>(1, feature_dim() / 2); }
  void validate() const;
};

// Parameter names: stage{i}.weight / stage{i}.bias, head.weight / head.bias,
// attn.fc1.weight / attn.fc1.bias / attn.fc2.weight / attn.fc2.bias.
template <typename T>
ParamSet<T> init_params(const EncoderConfig& config, std::size_t in_channels, std::uint64_t seed);

// Replicates a [C_out, C_in, kH, kW] kernel along a new time axis and divides
// by depth, so a temporally constant input reproduces the 2D response.
template <typename T>
BasicTensor<T> inflate_kernel(const BasicTensor<T>& kernel2d, std::size_t depth);

template <typename T>
struct SnippetOutput {
  Var<T> features;      // [feature_dim]
  Var<T> class_scores;  // [M]
  Var<T> attention;     // [1], in [0, 1]
};

struct ForwardMode {
  bool train = false;
  std::mt19937_64* rng = nullptr;  // required when train is true and dropout > 0
};

// frames: [C, L, H, W]. Throws InputError when C does not match the stem.
template <typename T>
SnippetOutput<T> encode_snippet(Tape<T>& tape, ParamSet<T>& params, const BasicTensor<T>& frames,
                                const EncoderConfig& config, const ForwardMode& mode = {});
// Inference overload; params enter the tape as constants.
template <typename T>
SnippetOutput<T> encode_snippet(Tape<T>& tape, const ParamSet<T>& params, const BasicTensor<T>& frames,
                                const EncoderConfig& config, const ForwardMode& mode = {});

// F = (sum_i lambda_i * scores_i) / K. Sums are correctly rounded, so the
// result is independent of snippet order, and lambda = 1 reproduces the
// plain segment mean bit for bit.
template <typename T>
Var<T> consensus(const std::vector<Var<T>>& scores, const std::vector<Var<T>>& lambdas);

// Uses each output's attention, or a constant 1 when use_attention is false.
template <typename T>
Var<T> consensus(Tape<T>& tape, const std::vector<SnippetOutput<T>>& outputs, bool use_attention = true);

// Unweighted mean of score vectors, same summation as consensus().
template <typename T>
BasicTensor<T> segment_mean(const std::vector<BasicTensor<T>>& scores);

template <typename T>
Var<T> class_probs(Var<T> f) {
  return softmax(f);
}
std::vector<double> class_probs(const std::vector<double>& f);

// Elementwise mean across modality streams.
std::vector<double> fuse_modalities(const std::vector<std::vector<double>>& per_modality);

// Largest entry, smallest index on ties.
std::size_t argmax_first(const std::vector<double>& p);

// One trained stream.
struct StreamModel {
  Modality modality = Modality::rgb;
  EncoderConfig config;
  ParamSet<float> params;
  bool use_attention = true;
};

struct VideoPrediction {
  std::size_t label = 0;
  std::vector<double> probs;                                  // fused
  std::map<Modality, std::vector<double>> per_modality;  // averaged over snippets
};

// Mean over test snippets of softmax(consensus of the single snippet).
std::vector<double> stream_scores(const ClipVolume& clip, const StreamModel& model, const SamplerConfig& sampler);

// clips and models keyed by modality; every requested modality needs both.
VideoPrediction predict_video(const std::map<Modality, ClipVolume>& clips, const std::map<Modality, StreamModel>& models,
                              const std::vector<Modality>& modalities, const SamplerConfig& sampler);

// Parameter checkpoint plus two header records: "modality:<name>" and
// "attention" (1 or 0). The encoder config comes from the caller.
void save_stream(const StreamModel& model, const std::filesystem::path& path);
StreamModel load_stream(const std::filesystem::path& path, const EncoderConfig& config);

}  // namespace pdml
