#include "gtrans/mapper.hpp"

#include <cmath>

#include "gtrans/errors.hpp"

namespace gtrans {

TokenSource token_source_from_string(const std::string& s) {
  if (s == "encoder") return TokenSource::encoder;
  if (s == "decoder") return TokenSource::decoder;
  throw ConfigError("unknown mapper token_source: " + s);
}

QuerySource query_source_from_string(const std::string& s) {
  if (s == "guide") return QuerySource::guide;
  if (s == "student") return QuerySource::student;
  throw ConfigError("unknown mapper query_source: " + s);
}

std::string to_string(TokenSource s) { return s == TokenSource::encoder ? "encoder" : "decoder"; }
std::string to_string(QuerySource s) { return s == QuerySource::guide ? "guide" : "student"; }

Mapper Mapper::build(int groups, int dim, const std::vector<int>& layer_channels,
                     QuerySource query_source, std::mt19937_64& rng) {
  Mapper m;
  m.groups_ = groups;
  m.query_source_ = query_source;
  for (int c : layer_channels) {
    LayerParams lp;
    lp.proj_query = init_matrix(c, c, rng);
    lp.proj_key = init_matrix(c, dim, rng);
    lp.proj_value = Var(Tensor::zeros({c, dim}), true);
    lp.channels = c;
    m.layers_.push_back(std::move(lp));
  }
  return m;
}

Var Mapper::map_layer(const Var& student_features, const Var& query_features, const Var& tokens,
                      int layer, Tensor* attention_out) const {
  const LayerParams& lp = layers_.at(static_cast<size_t>(layer));
  if (student_features.val().ndim() != 2 || student_features.val().dim(0) != lp.channels)
    throw ShapeError("map_layer: features " + shape_str(student_features.val().shape()) +
                     " vs channels " + std::to_string(lp.channels));
  if (!student_features.val().same_shape(query_features.val()))
    throw ShapeError("map_layer: student/query feature shapes differ");
  if (tokens.val().ndim() != 2 || tokens.val().dim(0) != lp.proj_key.val().dim(1))
    throw ShapeError("map_layer: tokens " + shape_str(tokens.val().shape()) + " vs dim " +
                     std::to_string(lp.proj_key.val().dim(1)));

  Var x_q = matmul(lp.proj_query, query_features);  // (c, w*h)
  Var t_k = matmul(lp.proj_key, tokens);            // (c, g)
  Var t_v = matmul(lp.proj_value, tokens);          // (c, g)
  // per-pixel softmax over the token axis
  Var logits = scale(matmul(transpose(x_q), t_k), 1.0 / std::sqrt(Scalar(lp.channels)));
  Var weights = softmax_rows(logits);  // (w*h, g)
  if (attention_out) *attention_out = weights.val();
  return add(student_features, matmul(t_v, transpose(weights)));
}

std::vector<Var> Mapper::map_pyramid(const std::vector<Var>& student_features,
                                     const std::vector<Var>& guide_features,
                                     const Var& tokens) const {
  if (student_features.size() != layers_.size() || guide_features.size() != layers_.size())
    throw ShapeError("map_pyramid: layer count mismatch");
  if (tokens.val().dim(1) != groups_ * static_cast<int>(layers_.size()))
    throw ShapeError("map_pyramid: token columns " + std::to_string(tokens.val().dim(1)) +
                     " vs g*L = " + std::to_string(groups_ * layers_.size()));
  std::vector<Var> mapped;
  for (size_t l = 0; l < layers_.size(); ++l) {
    Var block = slice_cols(tokens, static_cast<int>(l) * groups_,
                           static_cast<int>(l + 1) * groups_);
    const Var& query =
        query_source_ == QuerySource::guide ? guide_features[l] : student_features[l];
    mapped.push_back(map_layer(student_features[l], query, block, static_cast<int>(l)));
  }
  return mapped;
}

ParamList Mapper::parameters(const std::string& prefix) const {
  ParamList out;
  for (size_t l = 0; l < layers_.size(); ++l) {
    std::string p = prefix + ".layer" + std::to_string(l);
    out.push_back({p + ".proj_query", layers_[l].proj_query});
    out.push_back({p + ".proj_key", layers_[l].proj_key});
    out.push_back({p + ".proj_value", layers_[l].proj_value});
  }
  return out;
}

}  // namespace gtrans
