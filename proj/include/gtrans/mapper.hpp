#pragma once

#include <string>
#include <vector>

#include "gtrans/nn.hpp"
#include "gtrans/tensor.hpp"

namespace gtrans {

enum class TokenSource { encoder, decoder };
enum class QuerySource { guide, student };

TokenSource token_source_from_string(const std::string& s);
QuerySource query_source_from_string(const std::string& s);
std::string to_string(TokenSource s);
std::string to_string(QuerySource s);

// Writes TFM token information back onto each critical layer's pixel grid via
// per-pixel cross-attention over that layer's token block, with a residual
// connection to the student's raw features.
class Mapper {
 public:
  struct LayerParams {
    Var proj_query;  // (c_l, c_l), applied to pixel features
    Var proj_key;    // (c_l, d), applied to tokens
    Var proj_value;  // (c_l, d), zero-initialized so the residual dominates early
    int channels = 0;
  };

  static Mapper build(int groups, int dim, const std::vector<int>& layer_channels,
                      QuerySource query_source, std::mt19937_64& rng);

  // student_features / query_features are (c_l, w*h); tokens is this layer's
  // (d, g) block. Returns (c_l, w*h).
  Var map_layer(const Var& student_features, const Var& query_features, const Var& tokens,
                int layer, Tensor* attention_out = nullptr) const;

  // Applies map_layer per critical layer, slicing this layer's g columns out
  // of the (d, g*L) token matrix.
  std::vector<Var> map_pyramid(const std::vector<Var>& student_features,
                               const std::vector<Var>& guide_features, const Var& tokens) const;

  int groups() const { return groups_; }
  QuerySource query_source() const { return query_source_; }
  ParamList parameters(const std::string& prefix) const;

 private:
  int groups_ = 0;
  QuerySource query_source_ = QuerySource::guide;
  std::vector<LayerParams> layers_;
};

}  // namespace gtrans
