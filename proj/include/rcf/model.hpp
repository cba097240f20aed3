// The four fusion topologies over a shared encoder/reassemble/decoder
// vocabulary:
//   ImageOnly        one encoder, single-modality reassemble
//   Early            radar channels concatenated onto the image before the
//                    (single) patch embedding
//   Late             two full encoder+reassemble+decoder branches merged by
//                    a 1x1 conv in front of a shared depth head
//   RcdptReassemble  two encoders; radar tokens join inside every
//                    reassemble stage's Read projection (Eq. 1-2)
#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rcf/decoder.hpp"
#include "rcf/encoder.hpp"
#include "rcf/param_store.hpp"
#include "rcf/reassemble.hpp"
#include "rcf/tensor.hpp"
#include "rcf/util.hpp"

namespace rcf {

enum class FusionMode { ImageOnly, Early, Late, RcdptReassemble };

inline std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::ImageOnly: return "image-only";
    case FusionMode::Early: return "early";
    case FusionMode::Late: return "late";
    case FusionMode::RcdptReassemble: return "rcdpt";
  }
  throw value_error("unknown fusion mode");
}

inline FusionMode fusion_mode_from_string(const std::string& s) {
  if (s == "image-only") return FusionMode::ImageOnly;
  if (s == "early") return FusionMode::Early;
  if (s == "late") return FusionMode::Late;
  if (s == "rcdpt") return FusionMode::RcdptReassemble;
  throw value_error("unknown fusion mode '" + s + "' (image-only|early|late|rcdpt)");
}

struct ModelConfig {
  FusionMode mode = FusionMode::RcdptReassemble;
  size_t height = 48, width = 48;
  size_t patch_size = 8;
  size_t token_dim = 64;
  size_t num_layers = 4;
  size_t num_heads = 4;
  size_t mlp_ratio = 4;
  std::vector<size_t> tap_layers = {2, 3, 4};
  std::vector<size_t> scale_ratios = {4, 8, 16};
  size_t dhat = 32;
  size_t radar_channels = 3;
  // Meters per unit of head activation. Typical scene depths then sit well
  // inside the final ReLU's active region (~0.2..5 units), which keeps
  // momentum-SGD oscillations from pushing every pixel negative at once.
  double output_scale = 16.0;
  PadMode pad_mode = PadMode::Zero;
  uint64_t init_seed = 1;

  // ViT-Base geometry from the paper; needs ~hours of CPU per epoch.
  static ModelConfig paper_preset() {
    ModelConfig c;
    c.height = c.width = 384;
    c.patch_size = 16;
    c.token_dim = 768;
    c.num_layers = 12;
    c.num_heads = 12;
    c.tap_layers = {3, 6, 9, 12};
    c.scale_ratios = {4, 8, 16, 32};
    c.dhat = 256;
    return c;
  }

  EncoderConfig encoder_config(size_t in_channels) const {
    return EncoderConfig{patch_size, token_dim,  num_layers, num_heads,
                         mlp_ratio,  tap_layers, in_channels};
  }

  ReassembleConfig reassemble_config() const {
    return ReassembleConfig{scale_ratios, dhat, patch_size, height, width};
  }

  void validate() const {
    encoder_config(3).validate();
    reassemble_config().validate();
    if (radar_channels == 0) throw value_error("model config: radar_channels must be positive");
    if (tap_layers.size() != scale_ratios.size())
      throw value_error("model config: " + std::to_string(tap_layers.size()) + " tap layers vs " +
                        std::to_string(scale_ratios.size()) + " scale ratios");
    // the decoder doubles resolution per stage and the head doubles once
    // more, so the scale chain must be 4, 8, 16, ...
    if (scale_ratios.front() != 4)
      throw value_error("model config: scale chain must start at 4 for the decoder cascade");
    for (size_t i = 1; i < scale_ratios.size(); ++i)
      if (scale_ratios[i] != 2 * scale_ratios[i - 1])
        throw value_error("model config: scale ratios must double per stage");
    if (output_scale <= 0) throw value_error("model config: output_scale must be positive");
  }
};

template <class T>
class DepthModel {
 public:
  explicit DepthModel(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(mix_seed(cfg_.init_seed, 0x5eed));
    const size_t gh = cfg_.height / cfg_.patch_size;
    const size_t gw = cfg_.width / cfg_.patch_size;
    const size_t n = cfg_.tap_layers.size();
    const auto rc = cfg_.reassemble_config();
    const bool late = cfg_.mode == FusionMode::Late;

    const size_t img_ch = cfg_.mode == FusionMode::Early ? 3 + cfg_.radar_channels : 3;
    enc_img_ = std::make_unique<VitEncoder<T>>(cfg_.encoder_config(img_ch), gh, gw, ps_,
                                               "enc_img", rng);
    if (cfg_.mode == FusionMode::Late || cfg_.mode == FusionMode::RcdptReassemble)
      enc_rad_ = std::make_unique<VitEncoder<T>>(cfg_.encoder_config(cfg_.radar_channels), gh, gw,
                                                 ps_, "enc_rad", rng);

    const bool fused_read = cfg_.mode == FusionMode::RcdptReassemble;
    for (size_t i = 0; i < n; ++i)
      stages_.emplace_back(rc, i, cfg_.token_dim, fused_read, ps_,
                           (late ? "img_stage" : "stage") + std::to_string(i), rng,
                           cfg_.pad_mode);
    if (late) {
      for (size_t i = 0; i < n; ++i)
        rad_stages_.emplace_back(rc, i, cfg_.token_dim, false, ps_,
                                 "rad_stage" + std::to_string(i), rng, cfg_.pad_mode);
    }

    dec_ = FusionDecoder<T>(n, cfg_.dhat, ps_, late ? "img_dec" : "dec", rng, cfg_.pad_mode);
    if (late) {
      rad_dec_ = FusionDecoder<T>(n, cfg_.dhat, ps_, "rad_dec", rng, cfg_.pad_mode);
      merge_w_ = ps_.add("merge.w", conv_init_tensor<T>({1, 1, 2 * cfg_.dhat, cfg_.dhat}, rng));
      merge_b_ = ps_.add("merge.b", Tensor<T>({cfg_.dhat}));
    }
    head_ = DepthHead<T>(cfg_.dhat, T(cfg_.output_scale), ps_, "head", rng, cfg_.pad_mode);
  }

  // image [H x W x 3], radar [H x W x C_R] -> depth [H x W x 1].
  // ImageOnly ignores radar (it still validates the shape).
  Tensor<T> forward(const Tensor<T>& image, const Tensor<T>& radar) const {
    check_input(image, 3, "image");
    check_input(radar, cfg_.radar_channels, "radar");
    // Radar carries meters; bring it to the image's O(1) range so patch
    // embeddings with a shared init scale see comparable magnitudes.
    const Tensor<T> rad = scale(radar, T(1) / T(cfg_.output_scale));
    switch (cfg_.mode) {
      case FusionMode::ImageOnly: {
        auto taps = enc_img_->encode_with_taps(image);
        return head_.forward(dec_.forward(single_pyramid(stages_, taps)));
      }
      case FusionMode::Early: {
        auto taps = enc_img_->encode_with_taps(concat_last<T>({image, rad}));
        return head_.forward(dec_.forward(single_pyramid(stages_, taps)));
      }
      case FusionMode::Late: {
        auto ti = enc_img_->encode_with_taps(image);
        auto tr = enc_rad_->encode_with_taps(rad);
        auto fi = dec_.forward(single_pyramid(stages_, ti));
        auto fr = rad_dec_.forward(single_pyramid(rad_stages_, tr));
        auto merged = conv2d(concat_last<T>({fi, fr}), merge_w_, merge_b_, 1, 0, cfg_.pad_mode);
        return head_.forward(merged);
      }
      case FusionMode::RcdptReassemble: {
        auto ti = enc_img_->encode_with_taps(image);
        auto tr = enc_rad_->encode_with_taps(rad);
        std::vector<Tensor<T>> pyr;
        pyr.reserve(stages_.size());
        for (size_t i = 0; i < stages_.size(); ++i)
          pyr.push_back(stages_[i].forward(ti[i], tr[i]));
        return head_.forward(dec_.forward(pyr));
      }
    }
    throw value_error("unknown fusion mode");
  }

  ParamStore<T>& params() { return ps_; }
  const ParamStore<T>& params() const { return ps_; }
  const ModelConfig& config() const { return cfg_; }
  const std::vector<ReassembleStage<T>>& stages() const { return stages_; }

 private:
  static std::vector<Tensor<T>> single_pyramid(const std::vector<ReassembleStage<T>>& stages,
                                               const std::vector<Tensor<T>>& taps) {
    std::vector<Tensor<T>> pyr;
    pyr.reserve(stages.size());
    for (size_t i = 0; i < stages.size(); ++i) pyr.push_back(stages[i].forward(taps[i], {}));
    return pyr;
  }

  void check_input(const Tensor<T>& t, size_t ch, const char* what) const {
    if (t.rank() != 3 || t.dim(0) != cfg_.height || t.dim(1) != cfg_.width || t.dim(2) != ch)
      throw shape_error(std::string(what) + ": expected [" + std::to_string(cfg_.height) + "x" +
                        std::to_string(cfg_.width) + "x" + std::to_string(ch) + "], got " +
                        shape_str(t.shape()));
  }

  ModelConfig cfg_;
  ParamStore<T> ps_;
  std::unique_ptr<VitEncoder<T>> enc_img_, enc_rad_;
  std::vector<ReassembleStage<T>> stages_, rad_stages_;
  FusionDecoder<T> dec_, rad_dec_;
  Tensor<T> merge_w_, merge_b_;
  DepthHead<T> head_;
};

// Checkpoints: a directory of one RTEN file per parameter plus a
// `manifest.txt` (key = value) recording the ModelConfig.
void save_checkpoint(const DepthModel<float>& model, const std::string& dir);
DepthModel<float> load_checkpoint(const std::string& dir);
ModelConfig model_config_from_kv(const std::vector<std::pair<std::string, std::string>>& kv);
std::vector<std::pair<std::string, std::string>> model_config_to_kv(const ModelConfig& cfg);

}  // namespace rcf
