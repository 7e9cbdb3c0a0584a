#include "gtrans/tokenizer.hpp"

#include <cmath>

#include "gtrans/errors.hpp"

namespace gtrans {

Tokenizer Tokenizer::build(int groups, int dim, const std::vector<int>& layer_channels,
                           std::mt19937_64& rng) {
  if (groups < 1 || dim < 1) throw ConfigError("tokenizer: groups and dim must be positive");
  Tokenizer t;
  t.groups_ = groups;
  t.dim_ = dim;
  for (int c : layer_channels) {
    LayerParams lp;
    lp.to_groups = Linear::make(c, groups, rng);
    lp.to_embed = Linear::make(c, dim, rng);
    lp.channels = c;
    t.layers_.push_back(std::move(lp));
  }
  return t;
}

Var Tokenizer::tokenize_layer(const Var& feature_rows, int layer) const {
  return tokenize_layer(feature_rows, layer, nullptr);
}

Var Tokenizer::tokenize_layer(const Var& feature_rows, int layer, Tensor* attention_out) const {
  const LayerParams& lp = layers_.at(static_cast<size_t>(layer));
  if (feature_rows.val().ndim() != 2 || feature_rows.val().dim(1) != lp.channels)
    throw ShapeError("tokenize_layer: expected (w*h," + std::to_string(lp.channels) + "), got " +
                     shape_str(feature_rows.val().shape()));
  // G = Lg(F)/sqrt(c); one spatial softmax per semantic group.
  Var logits = scale(lp.to_groups.forward(feature_rows), 1.0 / std::sqrt(Scalar(lp.channels)));
  Var attention = softmax_cols(logits);  // (w*h, g)
  if (attention_out) *attention_out = attention.val();
  Var values = lp.to_embed.forward(feature_rows);  // (w*h, d)
  // T = softmax(G)^T V reported in (d, g) orientation.
  return matmul(transpose(values), attention);
}

Var Tokenizer::tokenize_pyramid(const std::vector<Var>& feature_rows_per_layer) const {
  if (feature_rows_per_layer.size() != layers_.size())
    throw ShapeError("tokenize_pyramid: " + std::to_string(feature_rows_per_layer.size()) +
                     " layers vs " + std::to_string(layers_.size()) + " parameter sets");
  std::vector<Var> blocks;
  for (size_t l = 0; l < layers_.size(); ++l)
    blocks.push_back(tokenize_layer(feature_rows_per_layer[l], static_cast<int>(l)));
  if (blocks.size() == 1) return blocks[0];
  return concat_cols(blocks);
}

ParamList Tokenizer::parameters(const std::string& prefix) const {
  ParamList out;
  for (size_t l = 0; l < layers_.size(); ++l) {
    std::string p = prefix + ".layer" + std::to_string(l);
    layers_[l].to_groups.collect(p + ".to_groups", out);
    layers_[l].to_embed.collect(p + ".to_embed", out);
  }
  return out;
}

}  // namespace gtrans
