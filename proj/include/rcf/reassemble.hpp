// Reassemble stages: Read (token projection, optionally fusing radar
// tokens into the slot the readout token vacated), Concatenate (token
// sequence -> spatial map), and Resample_s (1x1 projection to D-hat plus
// spatial rescale to H/s x W/s).
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rcf/ops.hpp"
#include "rcf/param_store.hpp"
#include "rcf/tensor.hpp"

namespace rcf {

struct ReassembleConfig {
  std::vector<size_t> scale_ratios = {4, 8, 16};  // one s per tap, ascending
  size_t dhat = 32;                               // D-hat
  size_t patch_size = 8;
  size_t height = 48, width = 48;

  void validate() const {
    if (dhat == 0) throw value_error("reassemble config: dhat must be positive");
    if (scale_ratios.empty()) throw value_error("reassemble config: need at least one stage");
    for (size_t s : scale_ratios) {
      if (s == 0 || (s & (s - 1)) != 0)
        throw value_error("reassemble config: scale ratio " + std::to_string(s) +
                          " is not a positive power of two");
      const size_t need = std::max(s, patch_size);
      if (height % need || width % need)
        throw value_error("reassemble config: input " + std::to_string(height) + "x" +
                          std::to_string(width) + " not divisible by " + std::to_string(need) +
                          " required by stage s=" + std::to_string(s));
    }
    if (height % patch_size || width % patch_size)
      throw value_error("reassemble config: input not divisible by patch size");
  }
};

// Eq.-(3) reshape: token k of an [Np x D] sequence lands at grid position
// (k div gw, k mod gw). Pure bijective reshape.
template <class T>
Tensor<T> spatial_concatenate(const Tensor<T>& tok, size_t gh, size_t gw) {
  if (tok.rank() != 2 || tok.dim(0) != gh * gw)
    throw shape_error("spatial_concatenate: " + shape_str(tok.shape()) + " does not match grid " +
                      std::to_string(gh) + "x" + std::to_string(gw));
  return reshape(tok, {gh, gw, tok.dim(1)});
}

template <class T>
Tensor<T> spatial_concatenate_inverse(const Tensor<T>& map) {
  if (map.rank() != 3) throw shape_error("spatial_concatenate_inverse: need [gh x gw x D]");
  return reshape(map, {map.dim(0) * map.dim(1), map.dim(2)});
}

// One reassemble stage. fused=true reads cat(t_I, t_R) through a 2D->D
// linear layer (the paper's radar fusion); fused=false reads t_I through a
// D->D linear layer so the two paths stay weight-comparable.
template <class T>
class ReassembleStage {
 public:
  ReassembleStage(const ReassembleConfig& rc, size_t stage_idx, size_t token_dim, bool fused,
                  ParamStore<T>& ps, const std::string& prefix, Rng& rng, PadMode pm)
      : s_(rc.scale_ratios[stage_idx]),
        p_(rc.patch_size),
        gh_(rc.height / rc.patch_size),
        gw_(rc.width / rc.patch_size),
        fused_(fused),
        pm_(pm) {
    const size_t d = token_dim, dh = rc.dhat;
    const size_t in_dim = fused ? 2 * d : d;
    read_w_ = ps.add(prefix + ".read.w", trunc_normal_tensor<T>({in_dim, d}, rng, 0.02));
    read_b_ = ps.add(prefix + ".read.b", Tensor<T>({d}));
    proj_w_ = ps.add(prefix + ".proj.w", conv_init_tensor<T>({1, 1, d, dh}, rng));
    proj_b_ = ps.add(prefix + ".proj.b", Tensor<T>({dh}));
    if (s_ < p_) {
      const size_t f = p_ / s_;
      spat_w_ = ps.add(prefix + ".up.w", conv_init_tensor<T>({f, f, dh, dh}, rng));
      spat_b_ = ps.add(prefix + ".up.b", Tensor<T>({dh}));
    } else if (s_ > p_) {
      spat_w_ = ps.add(prefix + ".down.w", conv_init_tensor<T>({3, 3, dh, dh}, rng));
      spat_b_ = ps.add(prefix + ".down.b", Tensor<T>({dh}));
    }
  }

  // Read_proj of Eq. (2): concatenate modalities along features, project
  // back to D, GELU.
  Tensor<T> read_proj(const Tensor<T>& t_img, const Tensor<T>& t_rad) const {
    if (t_img.shape() != t_rad.shape())
      throw shape_error("read_proj: modality grids differ, " + shape_str(t_img.shape()) +
                        " vs " + shape_str(t_rad.shape()));
    return gelu(linear(concat_last<T>({t_img, t_rad}), read_w_, read_b_));
  }

  Tensor<T> read_single(const Tensor<T>& t_img) const {
    return gelu(linear(t_img, read_w_, read_b_));
  }

  // Resample_s of Eq. (4): 1x1 conv D->D-hat, then upsample (transposed
  // conv, s < p), downsample (strided 3x3 conv, s > p), or nothing (s == p).
  Tensor<T> resample(const Tensor<T>& feat) const {
    Tensor<T> y = conv2d(feat, proj_w_, proj_b_, 1, 0, pm_);
    if (s_ < p_) {
      y = conv_transpose2d(y, spat_w_, spat_b_, p_ / s_);
    } else if (s_ > p_) {
      y = conv2d(y, spat_w_, spat_b_, s_ / p_, 1, pm_);
    }
    return y;
  }

  // Full stage: Resample_s ∘ Concatenate ∘ Read. Pass an empty optional
  // for the single-modality path.
  Tensor<T> forward(const Tensor<T>& t_img, const std::optional<Tensor<T>>& t_rad) const {
    Tensor<T> tok = t_rad ? read_proj(t_img, *t_rad) : read_single(t_img);
    return resample(spatial_concatenate(tok, gh_, gw_));
  }

  size_t scale_ratio() const { return s_; }
  bool fused() const { return fused_; }

 private:
  size_t s_, p_, gh_, gw_;
  bool fused_;
  PadMode pm_;
  Tensor<T> read_w_, read_b_, proj_w_, proj_b_, spat_w_, spat_b_;
};

}  // namespace rcf
