#include <filesystem>

#include "rcf/kv.hpp"
#include "rcf/model.hpp"
#include "rcf/rten.hpp"

namespace fs = std::filesystem;

namespace rcf {

std::vector<std::pair<std::string, std::string>> model_config_to_kv(const ModelConfig& cfg) {
  KvPairs kv;
  kv.emplace_back("format", "rcdpt-checkpoint-1");
  kv.emplace_back("mode", to_string(cfg.mode));
  kv.emplace_back("height", std::to_string(cfg.height));
  kv.emplace_back("width", std::to_string(cfg.width));
  kv.emplace_back("patch_size", std::to_string(cfg.patch_size));
  kv.emplace_back("token_dim", std::to_string(cfg.token_dim));
  kv.emplace_back("num_layers", std::to_string(cfg.num_layers));
  kv.emplace_back("num_heads", std::to_string(cfg.num_heads));
  kv.emplace_back("mlp_ratio", std::to_string(cfg.mlp_ratio));
  kv.emplace_back("tap_layers", join_size_list(cfg.tap_layers));
  kv.emplace_back("scale_ratios", join_size_list(cfg.scale_ratios));
  kv.emplace_back("dhat", std::to_string(cfg.dhat));
  kv.emplace_back("radar_channels", std::to_string(cfg.radar_channels));
  kv.emplace_back("output_scale", kv_double(cfg.output_scale));
  kv.emplace_back("pad_mode", cfg.pad_mode == PadMode::Circular ? "circular" : "zero");
  kv.emplace_back("init_seed", std::to_string(cfg.init_seed));
  return kv;
}

ModelConfig model_config_from_kv(const std::vector<std::pair<std::string, std::string>>& kv) {
  ModelConfig cfg;
  cfg.mode = fusion_mode_from_string(kv_get(kv, "mode"));
  cfg.height = std::stoull(kv_get(kv, "height"));
  cfg.width = std::stoull(kv_get(kv, "width"));
  cfg.patch_size = std::stoull(kv_get(kv, "patch_size"));
  cfg.token_dim = std::stoull(kv_get(kv, "token_dim"));
  cfg.num_layers = std::stoull(kv_get(kv, "num_layers"));
  cfg.num_heads = std::stoull(kv_get(kv, "num_heads"));
  cfg.mlp_ratio = std::stoull(kv_get(kv, "mlp_ratio"));
  cfg.tap_layers = parse_size_list(kv_get(kv, "tap_layers"));
  cfg.scale_ratios = parse_size_list(kv_get(kv, "scale_ratios"));
  cfg.dhat = std::stoull(kv_get(kv, "dhat"));
  cfg.radar_channels = std::stoull(kv_get(kv, "radar_channels"));
  cfg.output_scale = std::stod(kv_get(kv, "output_scale"));
  const std::string pm = kv_get(kv, "pad_mode");
  if (pm != "zero" && pm != "circular") throw format_error("bad pad_mode '" + pm + "'");
  cfg.pad_mode = pm == "circular" ? PadMode::Circular : PadMode::Zero;
  cfg.init_seed = std::stoull(kv_get(kv, "init_seed"));
  return cfg;
}

void save_checkpoint(const DepthModel<float>& model, const std::string& dir) {
  fs::create_directories(dir);
  write_kv_file((fs::path(dir) / "manifest.txt").string(), model_config_to_kv(model.config()));
  for (const auto& [name, t] : model.params().items())
    write_rten((fs::path(dir) / (name + ".rten")).string(), t);
}

DepthModel<float> load_checkpoint(const std::string& dir) {
  const fs::path d(dir);
  if (!fs::exists(d / "manifest.txt")) throw io_error("no checkpoint manifest in " + dir);
  DepthModel<float> model(model_config_from_kv(read_kv_file((d / "manifest.txt").string())));
  for (const auto& [name, t] : model.params().items()) {
    Tensor<float> loaded = read_rten((d / (name + ".rten")).string());
    if (loaded.shape() != t.shape())
      throw format_error("checkpoint " + dir + ": parameter " + name + " has shape " +
                         shape_str(loaded.shape()) + ", model expects " + shape_str(t.shape()));
    Tensor<float> dst = t;  // shared handle; fills the model's storage
    dst.vals() = loaded.vals();
  }
  return model;
}

}  // namespace rcf
