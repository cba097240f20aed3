// ViT-style encoder: patch embedding, learned positional embedding, and a
// stack of pre-norm transformer blocks whose tap-layer outputs feed the
// reassemble stages. No class token anywhere: all four fusion topologies
// share this patch-tokens-only encoder.
#pragma once

#include <string>
#include <vector>

#include "rcf/ops.hpp"
#include "rcf/param_store.hpp"
#include "rcf/tensor.hpp"
#include "rcf/util.hpp"

namespace rcf {

struct EncoderConfig {
  size_t patch_size = 8;                       // p
  size_t token_dim = 64;                       // D
  size_t num_layers = 4;                       // L
  size_t num_heads = 4;                        // h
  size_t mlp_ratio = 4;                        // hidden = ratio * D
  std::vector<size_t> tap_layers = {2, 3, 4};  // 1-based layer indices
  size_t in_channels = 3;

  void validate() const {
    if (patch_size == 0 || token_dim == 0 || num_layers == 0 || num_heads == 0 ||
        mlp_ratio == 0 || in_channels == 0)
      throw value_error("encoder config: all dimensions must be positive");
    if (token_dim % num_heads != 0)
      throw value_error("encoder config: token_dim " + std::to_string(token_dim) +
                        " not divisible by num_heads " + std::to_string(num_heads));
    if (tap_layers.empty()) throw value_error("encoder config: need at least one tap layer");
    size_t prev = 0;
    for (size_t l : tap_layers) {
      if (l < 1 || l > num_layers)
        throw value_error("encoder config: tap layer " + std::to_string(l) + " outside [1, " +
                          std::to_string(num_layers) + "]");
      if (l <= prev) throw value_error("encoder config: tap layers must be strictly ascending");
      prev = l;
    }
  }
};

template <class T>
class VitEncoder {
 public:
  // grid_h/grid_w: token grid (H/p, W/p); fixes the positional table size.
  VitEncoder(const EncoderConfig& cfg, size_t grid_h, size_t grid_w, ParamStore<T>& ps,
             const std::string& prefix, Rng& rng)
      : cfg_(cfg), grid_h_(grid_h), grid_w_(grid_w) {
    cfg_.validate();
    const size_t d = cfg_.token_dim;
    const size_t pd = cfg_.patch_size * cfg_.patch_size * cfg_.in_channels;
    embed_w_ = ps.add(prefix + ".embed.w", trunc_normal_tensor<T>({pd, d}, rng, 0.02));
    embed_b_ = ps.add(prefix + ".embed.b", Tensor<T>({d}));
    pos_ = ps.add(prefix + ".pos", trunc_normal_tensor<T>({grid_h * grid_w, d}, rng, 0.02));
    const size_t hidden = cfg_.mlp_ratio * d;
    blocks_.resize(cfg_.num_layers);
    for (size_t l = 0; l < cfg_.num_layers; ++l) {
      auto bp = prefix + ".blk" + std::to_string(l);
      auto& b = blocks_[l];
      b.ln1_g = ps.add(bp + ".ln1.g", Tensor<T>({d}, T(1)));
      b.ln1_b = ps.add(bp + ".ln1.b", Tensor<T>({d}));
      b.wq = ps.add(bp + ".attn.wq", trunc_normal_tensor<T>({d, d}, rng, 0.02));
      b.bq = ps.add(bp + ".attn.bq", Tensor<T>({d}));
      // No key bias: softmax rows are invariant to the uniform logit shift
      // q . b_k it would add, so the parameter could never affect anything.
      b.wk = ps.add(bp + ".attn.wk", trunc_normal_tensor<T>({d, d}, rng, 0.02));
      b.wv = ps.add(bp + ".attn.wv", trunc_normal_tensor<T>({d, d}, rng, 0.02));
      b.bv = ps.add(bp + ".attn.bv", Tensor<T>({d}));
      b.wo = ps.add(bp + ".attn.wo", trunc_normal_tensor<T>({d, d}, rng, 0.02));
      b.bo = ps.add(bp + ".attn.bo", Tensor<T>({d}));
      b.ln2_g = ps.add(bp + ".ln2.g", Tensor<T>({d}, T(1)));
      b.ln2_b = ps.add(bp + ".ln2.b", Tensor<T>({d}));
      b.w1 = ps.add(bp + ".mlp.w1", trunc_normal_tensor<T>({d, hidden}, rng, 0.02));
      b.b1 = ps.add(bp + ".mlp.b1", Tensor<T>({hidden}));
      b.w2 = ps.add(bp + ".mlp.w2", trunc_normal_tensor<T>({hidden, d}, rng, 0.02));
      b.b2 = ps.add(bp + ".mlp.b2", Tensor<T>({d}));
    }
  }

  const EncoderConfig& config() const { return cfg_; }
  size_t grid_h() const { return grid_h_; }
  size_t grid_w() const { return grid_w_; }

  // [H x W x C] -> [Np x D]: shared linear projection of flattened patches.
  Tensor<T> patch_embed(const Tensor<T>& x) const {
    if (x.rank() != 3 || x.dim(2) != cfg_.in_channels)
      throw shape_error("patch_embed: expected [H x W x " + std::to_string(cfg_.in_channels) +
                        "], got " + shape_str(x.shape()));
    if (x.dim(0) % cfg_.patch_size || x.dim(1) % cfg_.patch_size)
      throw shape_error("patch_embed: input " + shape_str(x.shape()) +
                        " not divisible by patch size " + std::to_string(cfg_.patch_size) +
                        "; pad or crop the input");
    if (x.dim(0) / cfg_.patch_size != grid_h_ || x.dim(1) / cfg_.patch_size != grid_w_)
      throw shape_error("patch_embed: input grid does not match positional table grid " +
                        std::to_string(grid_h_) + "x" + std::to_string(grid_w_));
    return linear(patchify(x, cfg_.patch_size), embed_w_, embed_b_);
  }

  Tensor<T> add_positional(const Tensor<T>& tok) const { return add(tok, pos_); }

  // Runs the full stack, returning one token sequence per tap layer
  // (ascending), each [Np x D] and tape-live.
  std::vector<Tensor<T>> encode_with_taps(const Tensor<T>& x) const {
    Tensor<T> tok = add_positional(patch_embed(x));
    std::vector<Tensor<T>> taps;
    taps.reserve(cfg_.tap_layers.size());
    size_t next_tap = 0;
    for (size_t l = 1; l <= cfg_.num_layers; ++l) {
      tok = block_forward(blocks_[l - 1], tok);
      if (next_tap < cfg_.tap_layers.size() && cfg_.tap_layers[next_tap] == l) {
        taps.push_back(tok);
        ++next_tap;
      }
    }
    return taps;
  }

 private:
  struct Block {
    Tensor<T> ln1_g, ln1_b, wq, bq, wk, wv, bv, wo, bo;
    Tensor<T> ln2_g, ln2_b, w1, b1, w2, b2;
  };

  Tensor<T> block_forward(const Block& b, const Tensor<T>& tok) const {
    const size_t d = cfg_.token_dim;
    const size_t heads = cfg_.num_heads;
    const size_t dh = d / heads;
    const T att_scale = T(1) / std::sqrt(T(dh));

    auto xn = layer_norm_last(tok, b.ln1_g, b.ln1_b);
    auto q = linear(xn, b.wq, b.bq);
    auto k = matmul(xn, b.wk);
    auto v = linear(xn, b.wv, b.bv);
    std::vector<Tensor<T>> head_outs;
    head_outs.reserve(heads);
    for (size_t h = 0; h < heads; ++h) {
      auto qh = slice_last(q, h * dh, dh);
      auto kh = slice_last(k, h * dh, dh);
      auto vh = slice_last(v, h * dh, dh);
      auto att = softmax_last(scale(matmul(qh, transpose(kh)), att_scale));
#if RCF_DEBUG_CHECKS
      for (size_t r = 0; r < att.dim(0); ++r) {
        T row_sum{};
        for (size_t c = 0; c < att.dim(1); ++c) row_sum += att.at2(r, c);
        if (std::abs(double(row_sum) - 1.0) > 1e-5)
          throw value_error("attention row does not sum to 1");
      }
#endif
      head_outs.push_back(matmul(att, vh));
    }
    auto attn_out = linear(concat_last(head_outs), b.wo, b.bo);
    auto mid = add(tok, attn_out);
    auto mn = layer_norm_last(mid, b.ln2_g, b.ln2_b);
    auto mlp_out = linear(gelu(linear(mn, b.w1, b.b1)), b.w2, b.b2);
    return add(mid, mlp_out);
  }

  EncoderConfig cfg_;
  size_t grid_h_, grid_w_;
  Tensor<T> embed_w_, embed_b_, pos_;
  std::vector<Block> blocks_;
};

}  // namespace rcf
