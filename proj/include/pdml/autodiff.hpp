#pragma once

// Tape-based reverse-mode differentiation over BasicTensor<T>.
//
// A Tape records one forward pass. Every op appends a node holding its value
// and a closure that pushes the node's gradient into its parents. Parameters
// enter the tape through Tape::parameter(); Tape::backward() writes the
// accumulated gradients back into the owning ParamSet.

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "pdml/tensor.hpp"

namespace pdml {

template <typename T>
struct Parameter {
  BasicTensor<T> value;
  BasicTensor<T> grad;
  BasicTensor<T> first_moment;
  BasicTensor<T> second_moment;
  bool has_grad = false;
};

template <typename T>
class ParamSet {
 public:
  void add(const std::string& name, BasicTensor<T> value);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  Parameter<T>& at(const std::string& name);
  const Parameter<T>& at(const std::string& name) const;
  const BasicTensor<T>& value(const std::string& name) const { return at(name).value; }

  std::map<std::string, Parameter<T>>& entries() { return params_; }
  const std::map<std::string, Parameter<T>>& entries() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t num_scalars() const;

  std::uint64_t step() const { return step_; }
  void set_step(std::uint64_t step) { step_ = step; }

  void zero_grads();

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& [name, p] : params_) out.add(name, p.value.template cast<U>());
    out.set_step(step_);
    return out;
  }

 private:
  std::map<std::string, Parameter<T>> params_;
  std::uint64_t step_ = 0;
};

template <typename T>
class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const BasicTensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
};

template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // With gradients disabled the tape keeps values only (inference).
  void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }
  bool grad_enabled() const { return grad_enabled_; }

  Var<T> constant(BasicTensor<T> value);
  Var<T> parameter(ParamSet<T>& set, const std::string& name);
  // Read-only use (inference): the value enters as a constant.
  Var<T> parameter(const ParamSet<T>& set, const std::string& name) { return constant(set.value(name)); }
  // Registers a set so backward() zeroes parameters the loss never reached.
  void attach(ParamSet<T>& set);

  Var<T> record(BasicTensor<T> value, std::vector<std::size_t> parents, BackwardFn backward);

  const BasicTensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  // Gradient slot of a node, allocated as zeros on first use.
  BasicTensor<T>& grad(std::size_t id);
  bool has_grad(std::size_t id) const { return !nodes_.at(id).grad.empty(); }
  std::size_t size() const { return nodes_.size(); }

  void backward(Var<T> loss);

 private:
  struct Node {
    BasicTensor<T> value;
    BasicTensor<T> grad;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  std::map<const Parameter<T>*, std::size_t> param_nodes_;
  std::vector<ParamSet<T>*> sets_;
  bool grad_enabled_ = true;
};

template <typename T>
const BasicTensor<T>& Var<T>::value() const {
  return tape->value(id);
}

// ---- differentiable ops -------------------------------------------------

struct Conv3dGeometry {
  std::array<std::size_t, 3> stride{1, 1, 1};
  std::array<std::size_t, 3> padding{0, 0, 0};
};

// input [C_in, T, H, W], kernel [C_out, C_in, kT, kH, kW] -> [C_out, T', H', W']
template <typename T>
Var<T> conv3d(Var<T> input, Var<T> kernel, const Conv3dGeometry& geom);

// Adds bias[c] to every element of channel c of a [C, ...] tensor.
template <typename T>
Var<T> add_channel_bias(Var<T> x, Var<T> bias);

template <typename T>
Var<T> relu(Var<T> x);

template <typename T>
Var<T> sigmoid(Var<T> x);

// [C, ...] -> [C], mean over all trailing axes.
template <typename T>
Var<T> global_avg_pool(Var<T> x);

// weight [out, in] * x [in] + bias [out]
template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias);

// Inverted dropout: zeroes with probability drop_prob, scales survivors by
// 1/(1-drop_prob). Identity when train is false.
template <typename T>
Var<T> dropout(Var<T> x, double drop_prob, bool train, std::mt19937_64& rng);

// x * s where s holds a single value.
template <typename T>
Var<T> scale_by(Var<T> x, Var<T> s);

template <typename T>
Var<T> mul_const(Var<T> x, T c);

template <typename T>
Var<T> add_n(const std::vector<Var<T>>& xs);

template <typename T>
Var<T> sum(Var<T> x);

// Numerically stable softmax of a rank-1 tensor.
template <typename T>
Var<T> softmax(Var<T> x);

// -alpha (1 - p_y)^gamma log(max(p_y, 1e-12)) for a probability vector p.
template <typename T>
Var<T> focal_loss(Var<T> probs, std::size_t label, double alpha, double gamma);

// ---- raw kernels shared with the ops (exposed for tests and tools) ------

// Output extents of a conv3d; throws DimensionError naming the offending axis.
std::array<std::size_t, 3> conv3d_output_extents(const Shape& input, const Shape& kernel,
                                                 const Conv3dGeometry& geom);

template <typename T>
BasicTensor<T> conv3d_forward(const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                              const Conv3dGeometry& geom);

}  // namespace pdml
