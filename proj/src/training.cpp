#include "gtrans/training.hpp"

#include <cmath>
#include <fstream>

#include "gtrans/errors.hpp"

namespace gtrans {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("training.epochs must be positive");
  if (batch_size < 1) throw ConfigError("training.batch_size must be positive");
  if (lr_init <= 0) throw ConfigError("training.lr_init must be positive");
  if (weight_decay < 0) throw ConfigError("training.weight_decay must be non-negative");
  if (decay_rate <= 0 || decay_rate > 1) throw ConfigError("training.decay_rate must be in (0,1]");
}

void TrainLog::write_csv(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open for writing: " + path);
  os << "epoch,train_loss,val_loss,lr\n";
  os.precision(17);
  for (const auto& r : rows)
    os << r.epoch << "," << r.train_loss << "," << r.val_loss << "," << r.lr << "\n";
}

Var pixel_loss(const Var& guide_layer, const Var& mapped_layer) {
  if (!guide_layer.val().same_shape(mapped_layer.val()))
    throw ShapeError("pixel_loss: " + shape_str(guide_layer.val().shape()) + " vs " +
                     shape_str(mapped_layer.val().shape()));
  Var diff = sub(guide_layer, mapped_layer);
  Var sq = mul(diff, diff);
  // reduce over the channel axis (rows): 0.5 * column sums
  int c = sq.val().dim(0);
  Var ones(Tensor::full({1, c}, 0.5));
  return matmul(ones, sq);  // (1, w*h)
}

Var total_loss(const std::vector<Var>& guide, const std::vector<Var>& mapped) {
  if (guide.size() != mapped.size()) throw ShapeError("total_loss: layer count mismatch");
  if (guide.empty()) throw InvalidInputError("total_loss: empty pyramids");
  Var loss;
  for (size_t l = 0; l < guide.size(); ++l) {
    Var per_pixel = pixel_loss(guide[l], mapped[l]);
    Var term = scale(sum_all(per_pixel), 1.0 / per_pixel.val().dim(1));
    loss = loss.defined() ? add(loss, term) : term;
  }
  return loss;
}

Scalar lr_at(int64_t step, int64_t total_steps, const TrainConfig& config) {
  if (total_steps <= 0) throw ConfigError("lr_at: total_steps must be positive");
  if (step < 0 || step > total_steps) throw ConfigError("lr_at: step out of range");
  return config.lr_init *
         std::pow(config.decay_rate, static_cast<Scalar>(step) / static_cast<Scalar>(total_steps));
}

AdamOptimizer::AdamOptimizer(ParamList params, Scalar weight_decay, Scalar beta1, Scalar beta2,
                             Scalar eps)
    : params_(std::move(params)),
      weight_decay_(weight_decay),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.var.val().shape());
    v_.emplace_back(p.var.val().shape());
  }
}

void AdamOptimizer::zero_grad() {
  for (auto& p : params_) const_cast<Var&>(p.var).zero_grad();
}

void AdamOptimizer::step(Scalar lr) {
  ++t_;
  Scalar bc1 = 1.0 - std::pow(beta1_, static_cast<Scalar>(t_));
  Scalar bc2 = 1.0 - std::pow(beta2_, static_cast<Scalar>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Var& p = const_cast<Var&>(params_[i].var);
    if (p.grad().empty()) continue;  // parameter unused by this graph
    Tensor& theta = p.val();
    Tensor& g = p.grad();
    for (int64_t k = 0; k < theta.size(); ++k) {
      Scalar grad = g[k] + weight_decay_ * theta[k];
      m_[i][k] = beta1_ * m_[i][k] + (1 - beta1_) * grad;
      v_[i][k] = beta2_ * v_[i][k] + (1 - beta2_) * grad * grad;
      Scalar mhat = m_[i][k] / bc1;
      Scalar vhat = v_[i][k] / bc2;
      theta[k] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

}  // namespace gtrans
