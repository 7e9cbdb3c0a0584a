#pragma once

#include <string>
#include <utility>
#include <vector>

#include "gtrans/nn.hpp"
#include "gtrans/tensor.hpp"

namespace gtrans {

// One encoder or decoder block: single-head attention with learnable
// projections, point-wise-convolution feed-forward, two layer norms,
// no position embedding.
struct TfmBlockParams {
  Var w_q, w_k, w_v;      // (d, d)
  Var ff1, ff2;           // point-wise convolutions, (d, d)
  Var ln1_gain, ln1_off;  // applied to the attention output
  Var ln2_gain, ln2_off;  // applied around the feed-forward residual

  static TfmBlockParams make(int dim, std::mt19937_64& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

// Attention internals exposed for inspection in tests.
struct AttentionProbe {
  Tensor weights;  // (tokens, tokens); each column sums to 1
};

class Tfm {
 public:
  static Tfm build(int dim, int blocks, bool use_decoder, std::mt19937_64& rng);

  // Self-attention encoder block on a (d, g*L) token matrix.
  static Var encoder_block(const Var& e_in, const TfmBlockParams& p,
                           AttentionProbe* probe = nullptr);
  // Cross-attention decoder block: queries from d_in, keys/values from e_out.
  static Var decoder_block(const Var& d_in, const Var& e_out, const TfmBlockParams& p,
                           AttentionProbe* probe = nullptr);

  // Runs S encoder blocks over the guide tokens and S decoder blocks over the
  // student tokens, every decoder attending the final encoder output. With
  // use_decoder=false the D path runs pure self-attention blocks instead.
  std::pair<Var, Var> forward(const Var& guide_tokens, const Var& student_tokens) const;

  int blocks() const { return static_cast<int>(encoders_.size()); }
  bool use_decoder() const { return use_decoder_; }
  int dim() const { return dim_; }

  const std::vector<TfmBlockParams>& encoder_params() const { return encoders_; }
  const std::vector<TfmBlockParams>& decoder_params() const { return decoders_; }

  ParamList parameters(const std::string& prefix) const;

 private:
  int dim_ = 0;
  bool use_decoder_ = true;
  std::vector<TfmBlockParams> encoders_;
  std::vector<TfmBlockParams> decoders_;
};

}  // namespace gtrans
