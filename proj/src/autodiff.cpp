#include "pdml/autodiff.hpp"

#include <cmath>
#include <string>

#include "blas.hpp"
#include "conv3d_impl.hpp"

namespace pdml {

// ---- ParamSet ------------------------------------------------------------

template <typename T>
void ParamSet<T>::add(const std::string& name, BasicTensor<T> value) {
  if (params_.count(name)) throw ContractError("duplicate parameter '" + name + "'");
  Parameter<T> p;
  const Shape shape = value.shape();
  p.value = std::move(value);
  p.grad = BasicTensor<T>(shape);
  p.first_moment = BasicTensor<T>(shape);
  p.second_moment = BasicTensor<T>(shape);
  params_.emplace(name, std::move(p));
}

template <typename T>
Parameter<T>& ParamSet<T>::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

template <typename T>
const Parameter<T>& ParamSet<T>::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

template <typename T>
std::size_t ParamSet<T>::num_scalars() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += p.value.size();
  return n;
}

template <typename T>
void ParamSet<T>::zero_grads() {
  for (auto& [_, p] : params_) {
    p.grad.fill(T(0));
    p.has_grad = false;
  }
}

// ---- Tape ----------------------------------------------------------------

template <typename T>
Var<T> Tape<T>::constant(BasicTensor<T> value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T>
void Tape<T>::attach(ParamSet<T>& set) {
  for (auto* s : sets_) {
    if (s == &set) return;
  }
  sets_.push_back(&set);
}

template <typename T>
Var<T> Tape<T>::parameter(ParamSet<T>& set, const std::string& name) {
  attach(set);
  Parameter<T>& p = set.at(name);
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return {this, it->second};
  Node n;
  n.value = p.value;
  n.param = &p;
  n.requires_grad = grad_enabled_;
  nodes_.push_back(std::move(n));
  param_nodes_.emplace(&p, nodes_.size() - 1);
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::record(BasicTensor<T> value, std::vector<std::size_t> parents, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  if (grad_enabled_) {
    for (std::size_t id : parents) {
      if (nodes_.at(id).requires_grad) {
        n.requires_grad = true;
        break;
      }
    }
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T>
BasicTensor<T>& Tape<T>::grad(std::size_t id) {
  Node& n = nodes_.at(id);
  if (n.grad.empty()) n.grad = BasicTensor<T>(n.value.shape());
  return n.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  if (loss.tape != this) throw ContractError("backward: loss belongs to another tape");
  if (value(loss.id).size() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " +
                        shape_string(value(loss.id).shape()));
  }
  for (auto* set : sets_) set->zero_grads();
  grad(loss.id).fill(T(1));
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param) {
      auto dst = n.param->grad.data();
      auto src = n.grad.data();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
  }
  for (auto* set : sets_) {
    for (auto& [_, p] : set->entries()) p.has_grad = true;
  }
}

// ---- ops -----------------------------------------------------------------

namespace {

template <typename T>
void check_same_tape(Var<T> a, Var<T> b, const char* op) {
  if (a.tape != b.tape) throw ContractError(std::string(op) + ": operands on different tapes");
}

}  // namespace

template <typename T>
Var<T> conv3d(Var<T> input, Var<T> kernel, const Conv3dGeometry& geom) {
  check_same_tape(input, kernel, "conv3d");
  Tape<T>& tape = *input.tape;
  const auto d = detail::make_dims(input.shape(), kernel.shape(), geom);
  BasicTensor<T> out(Shape{d.out_c, d.out_t, d.out_h, d.out_w});
  detail::conv3d_forward_raw(input.value().data().data(), kernel.value().data().data(), d,
                             out.data().data());
  const std::size_t in_id = input.id, k_id = kernel.id;
  return tape.record(std::move(out), {in_id, k_id}, [in_id, k_id, d](Tape<T>& t, std::size_t self) {
    T* in_grad = t.requires_grad(in_id) ? t.grad(in_id).data().data() : nullptr;
    T* k_grad = t.requires_grad(k_id) ? t.grad(k_id).data().data() : nullptr;
    detail::conv3d_backward_raw(t.value(in_id).data().data(), t.value(k_id).data().data(),
                                t.grad(self).data().data(), d, in_grad, k_grad);
  });
}

template <typename T>
Var<T> add_channel_bias(Var<T> x, Var<T> bias) {
  check_same_tape(x, bias, "add_channel_bias");
  const auto& xv = x.value();
  const auto& bv = bias.value();
  if (bv.rank() != 1 || bv.dim(0) != xv.dim(0)) {
    throw DimensionError("add_channel_bias: bias " + shape_string(bv.shape()) +
                         " does not match channel axis of " + shape_string(xv.shape()));
  }
  const std::size_t channels = xv.dim(0);
  const std::size_t inner = xv.size() / channels;
  BasicTensor<T> out = xv;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < inner; ++i) out[c * inner + i] += bv[c];
  }
  const std::size_t x_id = x.id, b_id = bias.id;
  return x.tape->record(std::move(out), {x_id, b_id},
                        [x_id, b_id, channels, inner](Tape<T>& t, std::size_t self) {
                          const auto& g = t.grad(self);
                          if (t.requires_grad(x_id)) {
                            auto& gx = t.grad(x_id);
                            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                          }
                          if (t.requires_grad(b_id)) {
                            auto& gb = t.grad(b_id);
                            for (std::size_t c = 0; c < channels; ++c) {
                              double acc = 0;
                              for (std::size_t i = 0; i < inner; ++i) acc += g[c * inner + i];
                              gb[c] += static_cast<T>(acc);
                            }
                          }
                        });
}

template <typename T>
Var<T> relu(Var<T> x) {
  BasicTensor<T> out = x.value();
  for (auto& v : out.data()) v = v < T(0) ? T(0) : v;  // NaN passes through
  const std::size_t x_id = x.id;
  return x.tape->record(std::move(out), {x_id}, [x_id](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& xv = t.value(x_id);
    auto& gx = t.grad(x_id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > T(0)) gx[i] += g[i];
    }
  });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  BasicTensor<T> out = x.value();
  for (auto& v : out.data()) v = T(1) / (T(1) + std::exp(-v));
  const std::size_t x_id = x.id;
  return x.tape->record(std::move(out), {x_id}, [x_id](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    auto& gx = t.grad(x_id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (T(1) - y[i]);
  });
}

template <typename T>
Var<T> global_avg_pool(Var<T> x) {
  const auto& xv = x.value();
  const std::size_t channels = xv.dim(0);
  const std::size_t inner = xv.size() / channels;
  BasicTensor<T> out(Shape{channels});
  for (std::size_t c = 0; c < channels; ++c) {
    double acc = 0;
    for (std::size_t i = 0; i < inner; ++i) acc += xv[c * inner + i];
    out[c] = static_cast<T>(acc / static_cast<double>(inner));
  }
  const std::size_t x_id = x.id;
  return x.tape->record(std::move(out), {x_id}, [x_id, channels, inner](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(x_id);
    const T scale = T(1) / static_cast<T>(inner);
    for (std::size_t c = 0; c < channels; ++c) {
      const T gc = g[c] * scale;
      for (std::size_t i = 0; i < inner; ++i) gx[c * inner + i] += gc;
    }
  });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias) {
  check_same_tape(x, weight, "linear");
  check_same_tape(x, bias, "linear");
  const auto& xv = x.value();
  const auto& wv = weight.value();
  const auto& bv = bias.value();
  if (xv.rank() != 1) throw DimensionError("linear: input must be rank 1, got " + shape_string(xv.shape()));
  if (wv.rank() != 2 || wv.dim(1) != xv.dim(0)) {
    throw DimensionError("linear: weight " + shape_string(wv.shape()) + " does not accept input " +
                         shape_string(xv.shape()));
  }
  const std::size_t n_out = wv.dim(0), n_in = wv.dim(1);
  if (bv.rank() != 1 || bv.dim(0) != n_out) {
    throw DimensionError("linear: bias " + shape_string(bv.shape()) + " does not match output width " +
                         std::to_string(n_out));
  }
  BasicTensor<T> out(Shape{n_out});
  for (std::size_t o = 0; o < n_out; ++o) {
    double acc = bv[o];
    for (std::size_t i = 0; i < n_in; ++i) acc += static_cast<double>(wv[o * n_in + i]) * xv[i];
    out[o] = static_cast<T>(acc);
  }
  const std::size_t x_id = x.id, w_id = weight.id, b_id = bias.id;
  return x.tape->record(std::move(out), {x_id, w_id, b_id},
                        [x_id, w_id, b_id, n_out, n_in](Tape<T>& t, std::size_t self) {
                          const auto& g = t.grad(self);
                          if (t.requires_grad(x_id)) {
                            const auto& wv = t.value(w_id);
                            auto& gx = t.grad(x_id);
                            for (std::size_t o = 0; o < n_out; ++o) {
                              for (std::size_t i = 0; i < n_in; ++i) gx[i] += wv[o * n_in + i] * g[o];
                            }
                          }
                          if (t.requires_grad(w_id)) {
                            const auto& xv = t.value(x_id);
                            auto& gw = t.grad(w_id);
                            for (std::size_t o = 0; o < n_out; ++o) {
                              for (std::size_t i = 0; i < n_in; ++i) gw[o * n_in + i] += g[o] * xv[i];
                            }
                          }
                          if (t.requires_grad(b_id)) {
                            auto& gb = t.grad(b_id);
                            for (std::size_t o = 0; o < n_out; ++o) gb[o] += g[o];
                          }
                        });
}

template <typename T>
Var<T> dropout(Var<T> x, double drop_prob, bool train, std::mt19937_64& rng) {
  if (!(drop_prob >= 0.0 && drop_prob < 1.0)) {
    throw ConfigError("dropout probability must lie in [0, 1), got " + std::to_string(drop_prob));
  }
  if (!train || drop_prob == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - drop_prob));
  BasicTensor<T> mask(x.shape());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (auto& m : mask.data()) m = unit(rng) < drop_prob ? T(0) : keep_scale;
  BasicTensor<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  const std::size_t x_id = x.id;
  return x.tape->record(std::move(out), {x_id},
                        [x_id, mask = std::move(mask)](Tape<T>& t, std::size_t self) {
                          const auto& g = t.grad(self);
                          auto& gx = t.grad(x_id);
                          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
                        });
}

template <typename T>
Var<T> scale_by(Var<T> x, Var<T> s) {
  check_same_tape(x, s, "scale_by");
  if (s.value().size() != 1) {
    throw DimensionError("scale_by: scale must hold one value, got " + shape_string(s.shape()));
  }
  const T sv = s.value()[0];
  BasicTensor<T> out = x.value();
  for (auto& v : out.data()) v *= sv;
  const std::size_t x_id = x.id, s_id = s.id;
  return x.tape->record(std::move(out), {x_id, s_id}, [x_id, s_id](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(x_id)) {
      const T sv = t.value(s_id)[0];
      auto& gx = t.grad(x_id);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * sv;
    }
    if (t.requires_grad(s_id)) {
      const auto& xv = t.value(x_id);
      double acc = 0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += static_cast<double>(g[i]) * xv[i];
      t.grad(s_id)[0] += static_cast<T>(acc);
    }
  });
}

template <typename T>
Var<T> mul_const(Var<T> x, T c) {
  BasicTensor<T> out = x.value();
  for (auto& v : out.data()) v *= c;
  const std::size_t x_id = x.id;
  return x.tape->record(std::move(out), {x_id}, [x_id, c](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(x_id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * c;
  });
}

template <typename T>
Var<T> add_n(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw ContractError("add_n: no operands");
  BasicTensor<T> out = xs.front().value();
  std::vector<std::size_t> ids{xs.front().id};
  for (std::size_t k = 1; k < xs.size(); ++k) {
    check_same_tape(xs.front(), xs[k], "add_n");
    const auto& v = xs[k].value();
    if (v.shape() != out.shape()) {
      throw DimensionError("add_n: operand " + std::to_string(k) + " has shape " +
                           shape_string(v.shape()) + ", expected " + shape_string(out.shape()));
    }
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += v[i];
    ids.push_back(xs[k].id);
  }
  return xs.front().tape->record(std::move(out), ids, [ids](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    for (std::size_t id : ids) {
      if (!t.requires_grad(id)) continue;
      auto& gx = t.grad(id);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
  });
}

template <typename T>
Var<T> sum(Var<T> x) {
  double acc = 0;
  for (T v : x.value().data()) acc += v;
  const std::size_t x_id = x.id;
  return x.tape->record(BasicTensor<T>::scalar(static_cast<T>(acc)), {x_id},
                        [x_id](Tape<T>& t, std::size_t self) {
                          const T g = t.grad(self)[0];
                          for (auto& v : t.grad(x_id).data()) v += g;
                        });
}

template <typename T>
Var<T> softmax(Var<T> x) {
  const auto& xv = x.value();
  if (xv.rank() != 1) throw DimensionError("softmax: expected rank 1, got " + shape_string(xv.shape()));
  double max_v = xv[0];
  for (T v : xv.data()) max_v = std::max(max_v, static_cast<double>(v));
  std::vector<double> e(xv.size());
  double denom = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    e[i] = std::exp(static_cast<double>(xv[i]) - max_v);
    denom += e[i];
  }
  BasicTensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = static_cast<T>(e[i] / denom);
  const std::size_t x_id = x.id;
  return x.tape->record(std::move(out), {x_id}, [x_id](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    double dot = 0;
    for (std::size_t i = 0; i < g.size(); ++i) dot += static_cast<double>(g[i]) * y[i];
    auto& gx = t.grad(x_id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += static_cast<T>(y[i] * (g[i] - dot));
  });
}

template <typename T>
Var<T> focal_loss(Var<T> probs, std::size_t label, double alpha, double gamma) {
  const auto& pv = probs.value();
  if (pv.rank() != 1 || label >= pv.dim(0)) {
    throw DimensionError("focal_loss: label " + std::to_string(label) + " outside probability vector " +
                         shape_string(pv.shape()));
  }
  constexpr double kFloor = 1e-12;
  const double raw = pv[label];
  const double p = std::max(raw, kFloor);
  const double loss = -alpha * std::pow(1.0 - p, gamma) * std::log(p);
  const std::size_t p_id = probs.id;
  return probs.tape->record(
      BasicTensor<T>::scalar(static_cast<T>(loss)), {p_id},
      [p_id, label, alpha, gamma, raw, p](Tape<T>& t, std::size_t self) {
        if (raw < kFloor) return;
        // dL/dp = -alpha [ (1-p)^g / p - g (1-p)^(g-1) log p ]
        double modulating_term = 0.0;
        if (gamma != 0.0 && p < 1.0) modulating_term = gamma * std::pow(1.0 - p, gamma - 1.0) * std::log(p);
        const double dl_dp = -alpha * (std::pow(1.0 - p, gamma) / p - modulating_term);
        t.grad(p_id)[label] += static_cast<T>(t.grad(self)[0] * dl_dp);
      });
}

#define PDML_INSTANTIATE(T)                                                                 \
  template class ParamSet<T>;                                                               \
  template class Tape<T>;                                                                   \
  template Var<T> conv3d(Var<T>, Var<T>, const Conv3dGeometry&);                            \
  template Var<T> add_channel_bias(Var<T>, Var<T>);                                         \
  template Var<T> relu(Var<T>);                                                             \
  template Var<T> sigmoid(Var<T>);                                                          \
  template Var<T> global_avg_pool(Var<T>);                                                  \
  template Var<T> linear(Var<T>, Var<T>, Var<T>);                                           \
  template Var<T> dropout(Var<T>, double, bool, std::mt19937_64&);                          \
  template Var<T> scale_by(Var<T>, Var<T>);                                                 \
  template Var<T> mul_const(Var<T>, T);                                                     \
  template Var<T> add_n(const std::vector<Var<T>>&);                                        \
  template Var<T> sum(Var<T>);                                                              \
  template Var<T> softmax(Var<T>);                                                          \
  template Var<T> focal_loss(Var<T>, std::size_t, double, double);

PDML_INSTANTIATE(float)
PDML_INSTANTIATE(double)

#undef PDML_INSTANTIATE

}  // namespace pdml
