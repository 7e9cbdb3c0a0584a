#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gtrans/tensor.hpp"

namespace gtrans {

struct NamedParam {
  std::string name;
  Var var;
};

// Named non-trainable state (batch-norm running statistics).
struct NamedBuffer {
  std::string name;
  Tensor* tensor;
};

using ParamList = std::vector<NamedParam>;
using BufferList = std::vector<NamedBuffer>;

// Fan-in scaled initializers.
Var init_linear(int fan_in, int fan_out, std::mt19937_64& rng);        // (fan_in, fan_out)
Var init_matrix(int rows, int cols, std::mt19937_64& rng);             // (rows, cols), fan-in = cols
Var init_bias(int n, int fan_in, std::mt19937_64& rng);
Var init_conv_weight(int c_out, int c_in, int k, std::mt19937_64& rng);

// FNV-1a over the raw bytes of every listed parameter/buffer, in order.
uint64_t checksum_params(const ParamList& params, const BufferList& buffers = {});

struct Conv2d {
  Var weight;  // (Cout, Cin, k, k)
  Var bias;    // optional; undefined when bias-free
  int stride = 1;
  int pad = 0;

  static Conv2d make(int c_in, int c_out, int k, int stride, int pad, bool with_bias,
                     std::mt19937_64& rng);
  Var forward(const Var& x) const { return conv2d(x, weight, bias, stride, pad); }
  void collect(const std::string& prefix, ParamList& out) const;
};

struct BatchNorm2d {
  Var gamma;
  Var beta;
  Tensor running_mean;
  Tensor running_var;
  Scalar momentum = 0.1;
  Scalar eps = 1e-5;

  static BatchNorm2d make(int channels);
  Var forward(const Var& x, bool training) {
    return batch_norm2d(x, gamma, beta, running_mean, running_var, training, momentum, eps);
  }
  void collect(const std::string& prefix, ParamList& out) const;
  void collect_buffers(const std::string& prefix, BufferList& out);
};

// y = x @ weight + bias for row-major feature rows x (m, in).
struct Linear {
  Var weight;  // (in, out)
  Var bias;    // (out)

  static Linear make(int in, int out, std::mt19937_64& rng);
  Var forward(const Var& rows) const { return add_rowvec(matmul(rows, weight), bias); }
  void collect(const std::string& prefix, ParamList& out) const;
};

void set_requires_grad(const ParamList& params, bool rg);

}  // namespace gtrans
