#include "gtrans/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <random>

#include "gtrans/errors.hpp"

namespace gtrans {

namespace {

Scalar loss_over(GTransModel& model, const std::vector<ImageSample>& samples,
                 const PreprocessConfig& preprocess, int batch_size) {
  NoGradGuard ng;
  bool was_training = model.student().training_mode();
  model.set_training(false);
  Scalar total = 0;
  for (size_t start = 0; start < samples.size(); start += static_cast<size_t>(batch_size)) {
    std::vector<size_t> idx;
    for (size_t k = start; k < std::min(samples.size(), start + static_cast<size_t>(batch_size));
         ++k)
      idx.push_back(k);
    Tensor batch = make_batch(samples, idx, preprocess);
    total += model.training_loss(batch).val()[0] * static_cast<Scalar>(idx.size());
  }
  model.set_training(was_training);
  return total / static_cast<Scalar>(samples.size());
}

struct ParamSnapshot {
  std::vector<Tensor> values;
  std::vector<Tensor> buffers;
};

ParamSnapshot snapshot(GTransModel& model) {
  ParamSnapshot s;
  for (const auto& p : model.trainable_parameters()) s.values.push_back(p.var.val());
  for (auto& b : model.student_buffers()) s.buffers.push_back(*b.tensor);
  return s;
}

void restore(GTransModel& model, const ParamSnapshot& s) {
  ParamList params = model.trainable_parameters();
  for (size_t i = 0; i < params.size(); ++i) const_cast<Var&>(params[i].var).val() = s.values[i];
  BufferList bufs = model.student_buffers();
  for (size_t i = 0; i < bufs.size(); ++i) *bufs[i].tensor = s.buffers[i];
}

}  // namespace

TrainResult train(GTransModel& model, const DatasetSplit& data, const TrainConfig& config,
                  const PreprocessConfig& preprocess, const std::string& run_config_json) {
  config.validate();
  if (data.train.empty()) throw DataError("train: empty training split");
  for (const auto& s : data.train)
    if (s.label != Label::normal)
      throw DataError("train: training split contains an anomalous sample");

  size_t n = data.train.size();
  int64_t batches_per_epoch = static_cast<int64_t>(
      (n + static_cast<size_t>(config.batch_size) - 1) / static_cast<size_t>(config.batch_size));
  int64_t total_steps = batches_per_epoch * config.epochs;

  AdamOptimizer optimizer(model.trainable_parameters(), config.weight_decay);
  std::mt19937_64 shuffle_rng(config.seed);
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;

  // Warm the student's batch-norm running statistics with one cumulative
  // averaging pass so eval-mode validation losses are meaningful from the
  // first epoch.
  {
    NoGradGuard ng;
    model.set_training(true);
    int pass = 0;
    for (size_t start = 0; start < n; start += static_cast<size_t>(config.batch_size)) {
      std::vector<size_t> idx;
      for (size_t k = start; k < std::min(n, start + static_cast<size_t>(config.batch_size)); ++k)
        idx.push_back(k);
      model.student().set_bn_momentum(1.0 / static_cast<Scalar>(++pass));
      Var batch(make_batch(data.train, idx, preprocess));
      (void)model.student().extract_pyramid(batch);
    }
    model.student().set_bn_momentum(0.1);
  }

  TrainResult result;
  result.total_steps = total_steps;
  int64_t global_step = 0;
  Scalar best_val = std::numeric_limits<Scalar>::infinity();
  ParamSnapshot best;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    model.set_training(true);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    Scalar epoch_loss = 0;
    Scalar last_lr = config.lr_init;
    for (size_t start = 0; start < n; start += static_cast<size_t>(config.batch_size)) {
      std::vector<size_t> idx(order.begin() + static_cast<long>(start),
                              order.begin() +
                                  static_cast<long>(std::min(n, start + static_cast<size_t>(
                                                                        config.batch_size))));
      Tensor batch = make_batch(data.train, idx, preprocess);
      optimizer.zero_grad();
      Var loss = model.training_loss(batch);
      Scalar loss_value = loss.val()[0];
      if (!std::isfinite(loss_value))
        throw DivergedError("training diverged: non-finite loss at step " +
                                std::to_string(global_step),
                            global_step);
      backward(loss);
      last_lr = lr_at(global_step, total_steps, config);
      optimizer.step(last_lr);
      ++global_step;
      epoch_loss += loss_value * static_cast<Scalar>(idx.size());
    }
    epoch_loss /= static_cast<Scalar>(n);

    Scalar val_loss = data.val.empty()
                          ? epoch_loss
                          : loss_over(model, data.val, preprocess, config.batch_size);
    if (val_loss < best_val) {
      best_val = val_loss;
      best = snapshot(model);
      result.best_epoch = epoch;
    }
    auto t1 = std::chrono::steady_clock::now();
    result.log.rows.push_back(
        {epoch, epoch_loss, val_loss, last_lr,
         std::chrono::duration<double>(t1 - t0).count()});
  }

  restore(model, best);
  model.set_training(false);
  result.best_val_loss = best_val;

  if (!config.checkpoint_dir.empty()) {
    std::filesystem::create_directories(config.checkpoint_dir);
    result.checkpoint_path = config.checkpoint_dir + "/" + config.checkpoint_stem + ".gtw";
    model.save_checkpoint(result.checkpoint_path, run_config_json, result.best_epoch, global_step);
  }
  return result;
}

}  // namespace gtrans
