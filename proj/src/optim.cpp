#include "pdml/optim.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace pdml {

void AdamConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("adam learning_rate must be finite and non-negative");
  }
  if (!(beta1 > 0.0 && beta1 < beta2 && beta2 < 1.0)) {
    throw ConfigError("adam betas must satisfy 0 < beta1 < beta2 < 1");
  }
  if (!(epsilon > 0.0)) throw ConfigError("adam epsilon must be positive");
}

template <typename T>
void adam_step(ParamSet<T>& params, const AdamConfig& config) {
  config.validate();
  for (const auto& [name, p] : params.entries()) {
    if (!p.has_grad) throw ContractError("adam_step: parameter '" + name + "' has no gradient");
  }
  const std::uint64_t step = params.step() + 1;
  const double correction1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
  const double correction2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
  for (auto& [_, p] : params.entries()) {
    auto value = p.value.data();
    auto grad = p.grad.data();
    auto m = p.first_moment.data();
    auto v = p.second_moment.data();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i];
      const double mi = config.beta1 * m[i] + (1.0 - config.beta1) * g;
      const double vi = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double m_hat = mi / correction1;
      const double v_hat = vi / correction2;
      value[i] = static_cast<T>(value[i] - config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon));
    }
  }
  params.set_step(step);
  params.zero_grads();
}

template void adam_step<float>(ParamSet<float>&, const AdamConfig&);
template void adam_step<double>(ParamSet<double>&, const AdamConfig&);

// ---- checkpoint ----------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'P', 'D', 'M', 'L', '0', '0', '0', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  bool done() const { return pos_ == bytes_.size(); }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }

  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw IoError("checkpoint truncated at byte " + std::to_string(pos_));
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const ParamSet<float>& params) {
  std::string out(kMagic, sizeof(kMagic));
  for (const auto& [name, p] : params.entries()) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t e : p.value.shape()) put_u32(out, static_cast<std::uint32_t>(e));
    for (float f : p.value.data()) put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

ParamSet<float> decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw IoError("not a PDML0001 checkpoint");
  }
  Reader r(bytes);
  r.take(sizeof(kMagic));
  ParamSet<float> params;
  while (!r.done()) {
    const std::string name = r.take(r.u32());
    const std::uint32_t rank = r.u32();
    if (rank == 0) throw IoError("checkpoint parameter '" + name + "' has rank 0");
    Shape shape(rank);
    for (auto& e : shape) e = r.u32();
    std::vector<float> data(shape_numel(shape));
    for (auto& f : data) f = std::bit_cast<float>(r.u32());
    params.add(name, Tensor(std::move(shape), std::move(data)));
  }
  return params;
}

void save_checkpoint(const ParamSet<float>& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const std::string bytes = encode_checkpoint(params);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

ParamSet<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace pdml
