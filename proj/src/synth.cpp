#include "rcf/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "rcf/kv.hpp"
#include "rcf/rten.hpp"

namespace rcf {
namespace {

namespace fs = std::filesystem;

struct SceneObject {
  double depth = 0;
  double cx = 0, cy = 0;  // center, pixels
  double rx = 1, ry = 1;  // half extents
  bool ellipse = false;
  double albedo = 0.5;
  double tint[3] = {1, 1, 1};
};

// Ground-plane depth: hyperbolic in image row (far at the top).
double ground_depth(double row, double rows, double d_top, double d_bot) {
  const double t = row / (rows - 1.0);
  const double inv = (1.0 / d_top) + t * ((1.0 / d_bot) - (1.0 / d_top));
  return 1.0 / inv;
}

// Shading encodes depth relative to the scene's far plane, the way exposure
// normalizes a photograph: two scenes with the same layout but different
// metric scale look alike, so absolute scale must come from the radar.
double shade(double d, double d_far) { return 0.35 + 0.65 * std::exp(-1.5 * d / d_far); }

}  // namespace

SceneSample gen_scene(uint64_t seed, size_t h, size_t w, size_t radar_channels) {
  if (h < 32 || w < 32 || h % 16 != 0 || w % 16 != 0)
    throw value_error("gen_scene: dims must be multiples of 16 and >= 32, got " +
                      std::to_string(h) + "x" + std::to_string(w));
  if (radar_channels == 0) throw value_error("gen_scene: radar_channels must be >= 1");
  Rng rng(mix_seed(seed, 0x5ce11eULL));

  const double dh = double(h), dw = double(w);
  const double d_top = rng.uniform(40.0, 78.0);
  const double d_bot = rng.uniform(2.0, 8.0);

  // Objects stratified in depth; albedo alternates dark/bright bands so
  // silhouettes are visible against the mid-albedo background.
  const size_t n_obj = 2 + rng.index(5);
  std::vector<SceneObject> objs(n_obj);
  for (size_t i = 0; i < n_obj; ++i) {
    SceneObject& o = objs[i];
    const double u = (double(i) + rng.uniform(0.05, 0.95)) / double(n_obj);
    o.depth = 2.0 + std::pow(u, 1.2) * 58.0;
    const double real_h = rng.uniform(1.5, 4.0);
    o.ry = std::clamp(0.5 * 0.8 * dh * real_h / o.depth, 1.5, 0.2 * dh);
    o.rx = std::clamp(o.ry * rng.uniform(0.6, 1.6), 1.5, 0.2 * dw);
    // Stand the object on the row whose ground depth matches it.
    const double span = (1.0 / d_bot) - (1.0 / d_top);
    double contact = (dh - 1.0) * ((1.0 / o.depth) - (1.0 / d_top)) / span;
    contact = std::clamp(contact, 0.12 * dh, dh - 1.0);
    o.cy = std::clamp(contact - o.ry + rng.uniform(-1.5, 1.5), 1.0, dh - 2.0);
    o.cx = rng.uniform(0.08 * dw, 0.92 * dw);
    o.ellipse = rng.coin(0.5);
    o.albedo = (i % 2 == 0) ? rng.uniform(0.15, 0.40) : rng.uniform(0.65, 0.95);
    for (double& t : o.tint) t = rng.uniform(0.7, 1.0);
  }
  const double bg_albedo = rng.uniform(0.45, 0.62);
  double bg_tint[3];
  for (double& t : bg_tint) t = rng.uniform(0.7, 1.0);

  SceneSample s{Tensor<float>({h, w, 3}), Tensor<float>({h, w, radar_channels}),
                Tensor<float>({h, w}), Tensor<float>({h, w})};

  // Dense depth with painter-free min test; remember the owning region.
  std::vector<int> region(h * w, -1);
  for (size_t r = 0; r < h; ++r) {
    const double dbg = ground_depth(double(r), dh, d_top, d_bot);
    for (size_t c = 0; c < w; ++c) {
      double d = dbg;
      int reg = -1;
      for (size_t i = 0; i < n_obj; ++i) {
        const SceneObject& o = objs[i];
        const double dx = (double(c) - o.cx) / o.rx;
        const double dy = (double(r) - o.cy) / o.ry;
        const bool inside =
            o.ellipse ? (dx * dx + dy * dy <= 1.0) : (std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0);
        if (inside && o.depth < d) {
          d = o.depth;
          reg = int(i);
        }
      }
      s.dense_depth.at2(r, c) = float(d);
      region[r * w + c] = reg;
    }
  }

  // Image: region albedo x tint x depth shading, plus a roughness dither
  // whose contrast scales with the local depth gradient. That ties the
  // image-edge strength to the depth-edge strength everywhere at once, so
  // silhouettes and the steep far rows of the ground both stay textured.
  for (size_t r = 0; r < h; ++r)
    for (size_t c = 0; c < w; ++c) {
      const int reg = region[r * w + c];
      const double a = reg < 0 ? bg_albedo : objs[size_t(reg)].albedo;
      const double* tint = reg < 0 ? bg_tint : objs[size_t(reg)].tint;
      const double d = s.dense_depth.at2(r, c);
      const double sh = shade(d, d_top);
      double grad = 0;
      if (r + 1 < h) grad += std::abs(s.dense_depth.at2(r + 1, c) - d);
      if (c + 1 < w) grad += std::abs(s.dense_depth.at2(r, c + 1) - d);
      const double dither = 1.0 - 0.45 * std::min(grad / 4.0, 1.0) * double((r + c) % 2);
      for (size_t k = 0; k < 3; ++k) {
        const double v = a * tint[k] * sh * dither + rng.uniform(-0.015, 0.015);
        s.image.at3(r, c, k) = float(std::clamp(v, 0.0, 1.0));
      }
    }

  // Lidar: jittered scanlines, density 1/(kr*kc) in [1/36, 1/16].
  const size_t kr = 4 + rng.index(3);
  const size_t kc = 4 + rng.index(3);
  const size_t rphase = rng.index(kr);
  for (size_t r = rphase; r < h; r += kr) {
    const size_t cphase = rng.index(kc);
    for (size_t c = cphase; c < w; c += kc) {
      const size_t rj = std::min(h - 1, r + rng.index(2));
      const long cj = long(c) + long(rng.index(3)) - 1;
      if (cj < 0 || cj >= long(w)) continue;
      s.lidar_gt.at2(rj, size_t(cj)) = s.dense_depth.at2(rj, size_t(cj));
    }
  }

  // Radar: a handful of noisy returns, mostly on objects; each return fills
  // a column segment above the hit in the higher channels.
  const size_t n_ret = std::max<size_t>(3, size_t(std::lround(dh * dw * rng.uniform(0.005, 0.0095))));
  for (size_t i = 0; i < n_ret; ++i) {
    size_t rr = 0, cc = 0;
    bool placed = false;
    if (i < 2) {
      // Anchor a far and a near ground return: the depth spread keeps the
      // radar-vs-truth regression well conditioned in every scene. Walk rows
      // inward from the top (resp. bottom) until one holds a ground pixel.
      const size_t c0 = rng.index(w);
      for (size_t step = 0; step + 3 < h && !placed; ++step) {
        const size_t r = i == 0 ? 1 + step : h - 2 - step;
        for (size_t probe = 0; probe < w && !placed; ++probe) {
          const size_t c = (c0 + probe) % w;
          if (region[r * w + c] < 0) {
            rr = r;
            cc = c;
            placed = true;
          }
        }
      }
      if (!placed) {
        rr = i == 0 ? 1 : h - 2;
        cc = c0;
        placed = true;
      }
    } else if (rng.coin(0.75)) {
      const SceneObject& o = objs[rng.index(n_obj)];
      for (int tries = 0; tries < 20 && !placed; ++tries) {
        const long r = std::lround(o.cy + rng.uniform(-1.0, 1.0) * o.ry * 0.9);
        const long c = std::lround(o.cx + rng.uniform(-1.0, 1.0) * o.rx * 0.9);
        if (r < 0 || c < 0 || r >= long(h) || c >= long(w)) continue;
        if (region[size_t(r) * w + size_t(c)] < 0) continue;
        rr = size_t(r);
        cc = size_t(c);
        placed = true;
      }
    }
    if (!placed) {
      for (int tries = 0; tries < 20 && !placed; ++tries) {
        const size_t r = size_t(0.3 * dh) + rng.index(h - size_t(0.3 * dh));
        const size_t c = rng.index(w);
        if (region[r * w + c] >= 0) continue;
        rr = r;
        cc = c;
        placed = true;
      }
      if (!placed) {
        rr = h - 1 - rng.index(h / 4);
        cc = rng.index(w);
      }
    }
    const double truth = s.dense_depth.at2(rr, cc);
    const double m = std::clamp(truth + rng.normal() * 0.5, 0.05, 80.0);
    for (size_t k = 0; k < radar_channels; ++k) {
      const size_t extent = k == 0 ? 0 : 3 * k - 1;
      const size_t top = rr >= extent ? rr - extent : 0;
      for (size_t r = top; r <= rr; ++r) {
        float& cell = s.radar.at3(r, cc, k);
        if (cell == 0.0f || float(m) < cell) cell = float(m);
      }
    }
  }
  return s;
}

Tensor<float> apply_photometric(const Tensor<float>& image, double gamma, double brightness,
                                const std::vector<double>& color) {
  if (image.rank() != 3) throw shape_error("apply_photometric: want [H x W x C], got " +
                                           shape_str(image.shape()));
  const size_t ch = image.dim(2);
  if (color.size() != ch)
    throw shape_error("apply_photometric: " + std::to_string(color.size()) + " color factors for " +
                      std::to_string(ch) + " channels");
  Tensor<float> out(image.shape());
  const size_t hw = image.dim(0) * image.dim(1);
  for (size_t i = 0; i < hw; ++i)
    for (size_t k = 0; k < ch; ++k) {
      const double v = std::pow(double(image[i * ch + k]), gamma) * brightness * color[k];
      out.vals()[i * ch + k] = float(std::clamp(v, 0.0, 1.0));
    }
  return out;
}

Augmented augment(const Tensor<float>& image, Rng& rng) {
  const double gamma = rng.uniform(0.9, 1.1);
  const double brightness = rng.uniform(0.9, 1.1);
  std::vector<double> color(image.rank() == 3 ? image.dim(2) : 0);
  for (double& c : color) c = rng.uniform(0.9, 1.1);
  Augmented a;
  a.image = apply_photometric(image, gamma, brightness, color);
  a.flip = rng.coin(0.5);
  return a;
}

Tensor<float> hflip(const Tensor<float>& t) {
  if (t.rank() != 2 && t.rank() != 3)
    throw shape_error("hflip: want rank 2 or 3, got " + shape_str(t.shape()));
  const size_t h = t.dim(0), w = t.dim(1);
  const size_t ch = t.rank() == 3 ? t.dim(2) : 1;
  Tensor<float> out(t.shape());
  for (size_t r = 0; r < h; ++r)
    for (size_t c = 0; c < w; ++c)
      for (size_t k = 0; k < ch; ++k)
        out.vals()[(r * w + c) * ch + k] = t[(r * w + (w - 1 - c)) * ch + k];
  return out;
}

SceneSample augment_sample(const SceneSample& s, Rng& rng) {
  Augmented a = augment(s.image, rng);
  SceneSample out;
  out.image = a.image;
  if (a.flip) {
    out.image = hflip(out.image);
    out.radar = hflip(s.radar);
    out.lidar_gt = hflip(s.lidar_gt);
    out.dense_depth = hflip(s.dense_depth);
  } else {
    out.radar = s.radar.clone();
    out.lidar_gt = s.lidar_gt.clone();
    out.dense_depth = s.dense_depth.clone();
  }
  return out;
}

void write_sample(const std::string& dir, const SceneSample& s) {
  fs::create_directories(dir);
  const fs::path d(dir);
  write_rten((d / "image.rten").string(), s.image);
  write_rten((d / "radar.rten").string(), s.radar);
  write_rten((d / "lidar.rten").string(), s.lidar_gt);
  write_rten((d / "depth.rten").string(), s.dense_depth);
}

SceneSample read_sample(const std::string& dir) {
  const fs::path d(dir);
  SceneSample s;
  s.image = read_rten((d / "image.rten").string());
  s.radar = read_rten((d / "radar.rten").string());
  s.lidar_gt = read_rten((d / "lidar.rten").string());
  s.dense_depth = read_rten((d / "depth.rten").string());
  if (s.image.rank() != 3 || s.image.dim(2) != 3 || s.radar.rank() != 3 || s.lidar_gt.rank() != 2 ||
      s.dense_depth.rank() != 2 || s.image.dim(0) != s.radar.dim(0) ||
      s.image.dim(1) != s.radar.dim(1) || s.lidar_gt.shape() != s.dense_depth.shape() ||
      s.lidar_gt.dim(0) != s.image.dim(0) || s.lidar_gt.dim(1) != s.image.dim(1))
    throw format_error("sample " + dir + ": inconsistent tensor shapes");
  return s;
}

std::string Dataset::sample_dir(size_t i) const {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%06zu", i);
  return (fs::path(root) / buf).string();
}

SceneSample Dataset::load(size_t i) const {
  if (i >= count) throw value_error("dataset index " + std::to_string(i) + " out of range");
  return read_sample(sample_dir(i));
}

void generate_dataset(const std::string& dir, size_t n, size_t h, size_t w, uint64_t seed,
                      size_t radar_channels) {
  fs::create_directories(dir);
  Dataset ds{dir, n, h, w, radar_channels, seed};
  for (size_t i = 0; i < n; ++i)
    write_sample(ds.sample_dir(i), gen_scene(mix_seed(seed, i), h, w, radar_channels));
  KvPairs kv;
  kv.emplace_back("format", "rcdpt-dataset-1");
  kv.emplace_back("count", std::to_string(n));
  kv.emplace_back("height", std::to_string(h));
  kv.emplace_back("width", std::to_string(w));
  kv.emplace_back("radar_channels", std::to_string(radar_channels));
  kv.emplace_back("seed", std::to_string(seed));
  write_kv_file((fs::path(dir) / "manifest.txt").string(), kv);
}

Dataset open_dataset(const std::string& dir) {
  const std::string manifest = (fs::path(dir) / "manifest.txt").string();
  if (!fs::exists(manifest)) throw io_error("dataset " + dir + ": missing manifest.txt");
  const KvPairs kv = read_kv_file(manifest);
  if (kv_get(kv, "format") != "rcdpt-dataset-1")
    throw format_error("dataset " + dir + ": unknown format '" + kv_get(kv, "format") + "'");
  Dataset ds;
  ds.root = dir;
  ds.count = std::stoull(kv_get(kv, "count"));
  ds.height = std::stoull(kv_get(kv, "height"));
  ds.width = std::stoull(kv_get(kv, "width"));
  ds.radar_channels = std::stoull(kv_get(kv, "radar_channels"));
  ds.seed = std::stoull(kv_get(kv, "seed"));
  return ds;
}

}  // namespace rcf
