#include "gtrans/tfm.hpp"

#include <cmath>

#include "gtrans/errors.hpp"

namespace gtrans {

TfmBlockParams TfmBlockParams::make(int dim, std::mt19937_64& rng) {
  TfmBlockParams p;
  p.w_q = init_matrix(dim, dim, rng);
  p.w_k = init_matrix(dim, dim, rng);
  p.w_v = init_matrix(dim, dim, rng);
  p.ff1 = init_matrix(dim, dim, rng);
  p.ff2 = init_matrix(dim, dim, rng);
  p.ln1_gain = Var(Tensor::full({dim}, 1.0), true);
  p.ln1_off = Var(Tensor::zeros({dim}), true);
  p.ln2_gain = Var(Tensor::full({dim}, 1.0), true);
  p.ln2_off = Var(Tensor::zeros({dim}), true);
  return p;
}

void TfmBlockParams::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".w_q", w_q});
  out.push_back({prefix + ".w_k", w_k});
  out.push_back({prefix + ".w_v", w_v});
  out.push_back({prefix + ".ff1", ff1});
  out.push_back({prefix + ".ff2", ff2});
  out.push_back({prefix + ".ln1_gain", ln1_gain});
  out.push_back({prefix + ".ln1_off", ln1_off});
  out.push_back({prefix + ".ln2_gain", ln2_gain});
  out.push_back({prefix + ".ln2_off", ln2_off});
}

Tfm Tfm::build(int dim, int blocks, bool use_decoder, std::mt19937_64& rng) {
  if (blocks < 1) throw ConfigError("tfm: block count must be >= 1");
  if (dim < 1) throw ConfigError("tfm: dim must be >= 1");
  Tfm t;
  t.dim_ = dim;
  t.use_decoder_ = use_decoder;
  for (int s = 0; s < blocks; ++s) {
    t.encoders_.push_back(TfmBlockParams::make(dim, rng));
    t.decoders_.push_back(TfmBlockParams::make(dim, rng));
  }
  return t;
}

namespace {

// Shared attention + feed-forward body. Queries come from `q_src`, keys and
// values from `kv_src`; for self-attention both are the same matrix.
Var block_body(const Var& q_src, const Var& kv_src, const TfmBlockParams& p,
               AttentionProbe* probe) {
  if (q_src.val().ndim() != 2 || !q_src.val().same_shape(kv_src.val()))
    throw ShapeError("tfm block: token shapes " + shape_str(q_src.val().shape()) + " vs " +
                     shape_str(kv_src.val().shape()));
  int d = q_src.val().dim(0);
  if (d != p.w_q.val().dim(1))
    throw ShapeError("tfm block: token dim " + std::to_string(d) + " vs parameter dim " +
                     std::to_string(p.w_q.val().dim(1)));
  Var q = matmul(p.w_q, q_src);
  Var k = matmul(p.w_k, kv_src);
  Var v = matmul(p.w_v, kv_src);
  // softmax over the key axis for each query column
  Var weights = softmax_cols(scale(matmul(transpose(k), q), 1.0 / std::sqrt(Scalar(d))));
  if (probe) probe->weights = weights.val();
  Var attended = matmul(v, weights);
  Var after_attn = add(q_src, layer_norm_cols(attended, p.ln1_gain, p.ln1_off));
  Var ff = matmul(p.ff1, relu(matmul(p.ff2, after_attn)));
  return layer_norm_cols(add(after_attn, ff), p.ln2_gain, p.ln2_off);
}

}  // namespace

Var Tfm::encoder_block(const Var& e_in, const TfmBlockParams& p, AttentionProbe* probe) {
  return block_body(e_in, e_in, p, probe);
}

Var Tfm::decoder_block(const Var& d_in, const Var& e_out, const TfmBlockParams& p,
                       AttentionProbe* probe) {
  return block_body(d_in, e_out, p, probe);
}

std::pair<Var, Var> Tfm::forward(const Var& guide_tokens, const Var& student_tokens) const {
  if (!guide_tokens.val().same_shape(student_tokens.val()))
    throw ShapeError("tfm: guide/student token shapes differ");
  Var e = guide_tokens;
  for (const auto& p : encoders_) e = encoder_block(e, p);
  Var d = student_tokens;
  for (const auto& p : decoders_)
    d = use_decoder_ ? decoder_block(d, e, p) : encoder_block(d, p);
  return {e, d};
}

ParamList Tfm::parameters(const std::string& prefix) const {
  ParamList out;
  for (size_t s = 0; s < encoders_.size(); ++s)
    encoders_[s].collect(prefix + ".encoder" + std::to_string(s), out);
  for (size_t s = 0; s < decoders_.size(); ++s)
    decoders_[s].collect(prefix + ".decoder" + std::to_string(s), out);
  return out;
}

}  // namespace gtrans
