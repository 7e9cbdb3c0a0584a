#pragma once

#include <string>
#include <vector>

#include "gtrans/nn.hpp"
#include "gtrans/tensor.hpp"

namespace gtrans {

// Converts each critical-layer feature map into g visual tokens of dimension d
// via two point-wise projections and spatial attention, then concatenates the
// per-layer token blocks.
class Tokenizer {
 public:
  struct LayerParams {
    Linear to_groups;   // c_l -> g, scaled by 1/sqrt(c_l) before the softmax
    Linear to_embed;    // c_l -> d
    int channels = 0;
  };

  static Tokenizer build(int groups, int dim, const std::vector<int>& layer_channels,
                         std::mt19937_64& rng);

  // feature_rows is the flattened map, (w*h, c_l) row-major. Returns (d, g).
  Var tokenize_layer(const Var& feature_rows, int layer) const;
  // Same, but also exposing the spatial attention weights ((w*h, g), columns
  // sum to 1) for inspection.
  Var tokenize_layer(const Var& feature_rows, int layer, Tensor* attention_out) const;

  // Concatenates per-layer tokens along the group axis: (d, g*L).
  Var tokenize_pyramid(const std::vector<Var>& feature_rows_per_layer) const;

  int groups() const { return groups_; }
  int dim() const { return dim_; }
  int layer_count() const { return static_cast<int>(layers_.size()); }

  ParamList parameters(const std::string& prefix) const;

 private:
  int groups_ = 0;
  int dim_ = 0;
  std::vector<LayerParams> layers_;
};

}  // namespace gtrans
