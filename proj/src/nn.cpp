#include "gtrans/nn.hpp"

#include <cmath>
#include <cstring>

namespace gtrans {

Var init_linear(int fan_in, int fan_out, std::mt19937_64& rng) {
  Scalar bound = 1.0 / std::sqrt(static_cast<Scalar>(fan_in));
  return Var(randu({fan_in, fan_out}, -bound, bound, rng), true);
}

Var init_matrix(int rows, int cols, std::mt19937_64& rng) {
  Scalar bound = 1.0 / std::sqrt(static_cast<Scalar>(cols));
  return Var(randu({rows, cols}, -bound, bound, rng), true);
}

Var init_bias(int n, int fan_in, std::mt19937_64& rng) {
  Scalar bound = 1.0 / std::sqrt(static_cast<Scalar>(fan_in));
  return Var(randu({n}, -bound, bound, rng), true);
}

Var init_conv_weight(int c_out, int c_in, int k, std::mt19937_64& rng) {
  Scalar stddev = std::sqrt(2.0 / (static_cast<Scalar>(c_in) * k * k));
  return Var(randn({c_out, c_in, k, k}, 0.0, stddev, rng), true);
}

uint64_t checksum_params(const ParamList& params, const BufferList& buffers) {
  uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const Tensor& t) {
    const unsigned char* bytes = reinterpret_cast<const unsigned char*>(t.data());
    size_t n = static_cast<size_t>(t.size()) * sizeof(Scalar);
    for (size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& p : params) mix(p.var.val());
  for (const auto& b : buffers) mix(*b.tensor);
  return h;
}

Conv2d Conv2d::make(int c_in, int c_out, int k, int stride, int pad, bool with_bias,
                    std::mt19937_64& rng) {
  Conv2d conv;
  conv.weight = init_conv_weight(c_out, c_in, k, rng);
  if (with_bias) conv.bias = init_bias(c_out, c_in * k * k, rng);
  conv.stride = stride;
  conv.pad = pad;
  return conv;
}

void Conv2d::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight});
  if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

BatchNorm2d BatchNorm2d::make(int channels) {
  BatchNorm2d bn;
  bn.gamma = Var(Tensor::full({channels}, 1.0), true);
  bn.beta = Var(Tensor::zeros({channels}), true);
  bn.running_mean = Tensor::zeros({channels});
  bn.running_var = Tensor::full({channels}, 1.0);
  return bn;
}

void BatchNorm2d::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

void BatchNorm2d::collect_buffers(const std::string& prefix, BufferList& out) {
  out.push_back({prefix + ".running_mean", &running_mean});
  out.push_back({prefix + ".running_var", &running_var});
}

Linear Linear::make(int in, int out, std::mt19937_64& rng) {
  Linear lin;
  lin.weight = init_linear(in, out, rng);
  lin.bias = init_bias(out, in, rng);
  return lin;
}

void Linear::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

void set_requires_grad(const ParamList& params, bool rg) {
  for (const auto& p : params) const_cast<Var&>(p.var).set_requires_grad(rg);
}

}  // namespace gtrans
