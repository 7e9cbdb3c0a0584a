#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gtrans/nn.hpp"
#include "gtrans/tensor.hpp"

namespace gtrans {

struct TrainConfig {
  int epochs = 300;
  int batch_size = 32;
  Scalar lr_init = 1e-3;
  Scalar weight_decay = 1e-4;
  Scalar decay_rate = 0.9;
  uint64_t seed = 0;
  std::string checkpoint_dir;  // empty: keep the best model in memory only
  std::string checkpoint_stem = "checkpoint";

  void validate() const;
};

struct TrainLogRow {
  int epoch = 0;
  Scalar train_loss = 0;
  Scalar val_loss = 0;
  Scalar lr = 0;
  double wall_seconds = 0;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;
  void write_csv(const std::string& path) const;  // epoch,train_loss,val_loss,lr
};

// Pixel-wise squared-L2 loss over the channel axis with the 1/2 factor.
// Inputs are (c, w*h) feature matrices; output has one entry per pixel.
Var pixel_loss(const Var& guide_layer, const Var& mapped_layer);

// Sum over layers of the spatial mean of pixel_loss.
Var total_loss(const std::vector<Var>& guide, const std::vector<Var>& mapped);

// Exponential schedule: lr_init * rate^(step/total_steps).
Scalar lr_at(int64_t step, int64_t total_steps, const TrainConfig& config);

// Adam with coupled weight decay over the listed trainable parameters.
class AdamOptimizer {
 public:
  AdamOptimizer(ParamList params, Scalar weight_decay, Scalar beta1 = 0.9, Scalar beta2 = 0.999,
                Scalar eps = 1e-8);
  void zero_grad();
  void step(Scalar lr);
  int64_t steps_taken() const { return t_; }

 private:
  ParamList params_;
  std::vector<Tensor> m_, v_;
  Scalar weight_decay_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

}  // namespace gtrans
