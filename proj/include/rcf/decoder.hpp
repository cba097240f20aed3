// RefineNet-style fusion decoder and the monocular depth head. Fusion
// blocks merge the reassembled pyramid from the deepest stage upward,
// doubling resolution per block; the head does the final x2 to input
// resolution and maps features to non-negative metric depth.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rcf/ops.hpp"
#include "rcf/param_store.hpp"
#include "rcf/tensor.hpp"

namespace rcf {

// Residual conv unit: x + conv(relu(conv(relu(x)))), 3x3, channel-preserving.
template <class T>
class Rcu {
 public:
  Rcu() = default;
  Rcu(size_t ch, ParamStore<T>& ps, const std::string& prefix, Rng& rng, PadMode pm) : pm_(pm) {
    w1_ = ps.add(prefix + ".c1.w", conv_init_tensor<T>({3, 3, ch, ch}, rng));
    b1_ = ps.add(prefix + ".c1.b", Tensor<T>({ch}));
    w2_ = ps.add(prefix + ".c2.w", conv_init_tensor<T>({3, 3, ch, ch}, rng));
    b2_ = ps.add(prefix + ".c2.b", Tensor<T>({ch}));
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    auto y = conv2d(relu(x), w1_, b1_, 1, 1, pm_);
    y = conv2d(relu(y), w2_, b2_, 1, 1, pm_);
    return add(x, y);
  }

 private:
  PadMode pm_ = PadMode::Zero;
  Tensor<T> w1_, b1_, w2_, b2_;
};

// out = upsample2(RCU2(RCU1(deep + skip))); the deepest block takes no skip.
template <class T>
class FusionBlock {
 public:
  FusionBlock() = default;
  FusionBlock(size_t ch, ParamStore<T>& ps, const std::string& prefix, Rng& rng, PadMode pm)
      : rcu1_(ch, ps, prefix + ".rcu1", rng, pm),
        rcu2_(ch, ps, prefix + ".rcu2", rng, pm),
        pm_(pm) {}

  Tensor<T> forward(const Tensor<T>& deep, const std::optional<Tensor<T>>& skip) const {
    Tensor<T> x = deep;
    if (skip) {
      if (skip->shape() != deep.shape())
        throw shape_error("fusion_block: skip " + shape_str(skip->shape()) +
                          " does not match deep " + shape_str(deep.shape()));
      x = add(deep, *skip);
    }
    return upsample_bilinear(rcu2_.forward(rcu1_.forward(x)), 2, pm_);
  }

 private:
  Rcu<T> rcu1_, rcu2_;
  PadMode pm_ = PadMode::Zero;
};

// Merges the reassembled pyramid (stages ordered by ascending s, i.e.
// shallowest/largest first) into one map at H/2 x W/2 x D-hat.
template <class T>
class FusionDecoder {
 public:
  FusionDecoder() = default;
  FusionDecoder(size_t n_stages, size_t ch, ParamStore<T>& ps, const std::string& prefix,
                Rng& rng, PadMode pm) {
    blocks_.reserve(n_stages);
    for (size_t i = 0; i < n_stages; ++i)
      blocks_.emplace_back(ch, ps, prefix + ".blk" + std::to_string(i), rng, pm);
  }

  Tensor<T> forward(const std::vector<Tensor<T>>& pyramid) const {
    if (pyramid.size() != blocks_.size())
      throw shape_error("decoder: expected " + std::to_string(blocks_.size()) + " stages, got " +
                        std::to_string(pyramid.size()));
    const size_t n = pyramid.size();
    Tensor<T> x = blocks_[0].forward(pyramid[n - 1], std::nullopt);
    for (size_t i = 1; i < n; ++i) x = blocks_[i].forward(x, pyramid[n - 1 - i]);
    return x;
  }

 private:
  std::vector<FusionBlock<T>> blocks_;
};

// 3x3 conv D-hat -> D-hat/2, bilinear x2, 3x3 conv -> 32, ReLU, 1x1 conv
// -> 1, ReLU, times a constant output scale mapping the normalized
// prediction to meters. Output is H x W x 1, non-negative.
template <class T>
class DepthHead {
 public:
  DepthHead() = default;
  DepthHead(size_t ch, T output_scale, ParamStore<T>& ps, const std::string& prefix, Rng& rng,
            PadMode pm)
      : pm_(pm), output_scale_(output_scale) {
    if (ch % 2) throw value_error("depth head: channel dim must be even");
    w1_ = ps.add(prefix + ".c1.w", conv_init_tensor<T>({3, 3, ch, ch / 2}, rng));
    b1_ = ps.add(prefix + ".c1.b", Tensor<T>({ch / 2}));
    w2_ = ps.add(prefix + ".c2.w", conv_init_tensor<T>({3, 3, ch / 2, 32}, rng));
    b2_ = ps.add(prefix + ".c2.b", Tensor<T>({32}));
    w3_ = ps.add(prefix + ".c3.w", conv_init_tensor<T>({1, 1, 32, 1}, rng));
    // bias 0.75 => untrained output ~ three quarters of the output scale,
    // a plausible mid-range depth sitting safely inside the ReLU's active
    // region rather than near its dead zone
    b3_ = ps.add(prefix + ".c3.b", Tensor<T>({1}, T(0.75)));
  }

  Tensor<T> forward(const Tensor<T>& feat) const {
    auto x = conv2d(feat, w1_, b1_, 1, 1, pm_);
    x = upsample_bilinear(x, 2, pm_);
    x = relu(conv2d(x, w2_, b2_, 1, 1, pm_));
    x = relu(conv2d(x, w3_, b3_, 1, 0, pm_));
    return scale(x, output_scale_);
  }

 private:
  PadMode pm_ = PadMode::Zero;
  T output_scale_ = T(80);
  Tensor<T> w1_, b1_, w2_, b2_, w3_, b3_;
};

}  // namespace rcf
