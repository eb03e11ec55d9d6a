// Synthetic multi-modal driving clips with exact ground truth: moving
// rectangles (vehicles) and small squares (pedestrians) on a road band, with
// per-pixel optical flow, label maps, drivable masks, a Gaussian-mixture
// saliency target, and peak fixations. Also the on-disk clip layout, input
// normalization, and the counterfactual transforms.

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "gatedap/io.hpp"
#include "gatedap/tensor.hpp"

namespace gatedap {

enum class StreamKind { rgb, flow, semantic, drivable };

inline const char* stream_name(StreamKind s) {
  switch (s) {
    case StreamKind::rgb: return "rgb";
    case StreamKind::flow: return "flow";
    case StreamKind::semantic: return "semantic";
    case StreamKind::drivable: return "drivable";
  }
  return "?";
}

inline StreamKind stream_from_name(const std::string& n) {
  if (n == "rgb") return StreamKind::rgb;
  if (n == "flow") return StreamKind::flow;
  if (n == "semantic") return StreamKind::semantic;
  if (n == "drivable") return StreamKind::drivable;
  throw UsageError("unknown stream: " + n);
}

// semantic class labels
enum : std::uint8_t { kBackground = 0, kRoad = 1, kVehicle = 2, kPedestrian = 3 };

struct Frame {
  Tensor rgb;   // 3xHxW in [0,1]
  Tensor flow;  // 2xHxW, (dx,dy) pixels/frame
  std::vector<std::uint8_t> semantic;  // HxW labels 0..3
  std::vector<std::uint8_t> drivable;  // HxW binary
};

struct ClipSample {
  std::string clip_id;
  std::size_t height = 0, width = 0;
  std::vector<Frame> frames;            // k+1 frames; the last one is the prediction target
  std::vector<real> saliency;           // HxW, sums to 1; ground truth for the last frame
  std::vector<std::uint8_t> fixations;  // HxW binary

  std::size_t clip_len() const { return frames.empty() ? 0 : frames.size() - 1; }
};

struct SceneSpec {
  std::uint64_t seed = 0;
  std::size_t image_size = 64;
  std::size_t clip_len = 4;  // k; a clip carries k+1 frames
  std::size_t min_vehicles = 1, max_vehicles = 2;
  std::size_t min_pedestrians = 0, max_pedestrians = 2;
  real max_speed = 3.0;  // pixels/frame; also the flow normalization constant
  real sigma_g = 4.0;    // saliency kernel width
  real sudden_event_prob = 0.25;
  std::size_t fixation_peaks = 3;
};

// ---------------------------------------------------------------------------
// generation
// ---------------------------------------------------------------------------

namespace detail {

struct SceneObject {
  std::uint8_t label;  // kVehicle or kPedestrian
  real x0, y0;         // top-left at frame 0 (continuous)
  real w, h;
  real vx, vy;
  std::array<real, 3> color;
  std::size_t appear_frame = 0;  // invisible before this frame
  std::size_t accel_frame = SIZE_MAX;
  real accel_factor = 1.0;

  real vx_at(std::size_t t) const { return t >= accel_frame ? vx * accel_factor : vx; }
  // top-left at frame t, integrating any mid-clip acceleration
  std::pair<real, real> pos_at(std::size_t t) const {
    real x = x0, y = y0;
    for (std::size_t s = 0; s < t; ++s) {
      x += vx_at(s + 1);
      y += vy;
    }
    return {x, y};
  }
};

inline std::size_t road_top(std::size_t h) { return h * 45 / 100; }
inline std::size_t road_bottom(std::size_t h) { return h * 85 / 100; }

}  // namespace detail

inline ClipSample generate_synthetic_clip(const SceneSpec& spec, std::size_t clip_index = 0) {
  const std::size_t H = spec.image_size, W = spec.image_size, k = spec.clip_len;
  std::mt19937_64 rng(spec.seed ^ (0x9E3779B97F4A7C15ull * (clip_index + 1)));
  auto urand = [&](real lo, real hi) {
    return std::uniform_real_distribution<real>(lo, hi)(rng);
  };
  auto irand = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };

  const std::size_t rt = detail::road_top(H), rb = detail::road_bottom(H);

  std::vector<detail::SceneObject> objs;
  const std::size_t nv = irand(spec.min_vehicles, spec.max_vehicles);
  for (std::size_t i = 0; i < nv; ++i) {
    detail::SceneObject o;
    o.label = kVehicle;
    o.w = urand(W / 8.0, W / 5.0);
    o.h = urand(H / 12.0, H / 8.0);
    o.x0 = urand(0.0, W - o.w);
    o.y0 = urand(static_cast<real>(rt), static_cast<real>(rb) - o.h);
    o.vx = urand(-spec.max_speed, spec.max_speed);
    o.vy = 0.0;
    o.color = {urand(0.1, 0.9), urand(0.1, 0.9), urand(0.1, 0.9)};
    objs.push_back(o);
  }
  const std::size_t np = irand(spec.min_pedestrians, spec.max_pedestrians);
  for (std::size_t i = 0; i < np; ++i) {
    detail::SceneObject o;
    o.label = kPedestrian;
    o.w = o.h = std::max<real>(2.0, H / 16.0);
    o.x0 = urand(0.0, W - o.w);
    // pedestrians walk near the road edges
    o.y0 = (irand(0, 1) ? static_cast<real>(rt) : static_cast<real>(rb) - o.h);
    o.vx = urand(-spec.max_speed / 3.0, spec.max_speed / 3.0);
    o.vy = 0.0;
    o.color = {urand(0.1, 0.9), urand(0.1, 0.9), urand(0.1, 0.9)};
    objs.push_back(o);
  }
  if (!objs.empty() && urand(0.0, 1.0) < spec.sudden_event_prob) {
    auto& o = objs[irand(0, objs.size() - 1)];
    if (irand(0, 1)) {
      o.appear_frame = irand(1, k);
    } else {
      o.accel_frame = irand(1, k);
      o.accel_factor = 3.0;
    }
  }

  ClipSample clip;
  clip.clip_id = "clip_" + std::to_string(clip_index);
  clip.height = H;
  clip.width = W;

  auto footprint = [&](const detail::SceneObject& o, std::size_t t, auto&& fn) {
    if (t < o.appear_frame) return;
    auto [x, y] = o.pos_at(t);
    const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(std::lround(x)));
    const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(std::lround(y)));
    const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(W, static_cast<std::ptrdiff_t>(std::lround(x + o.w)));
    const std::ptrdiff_t y1 = std::min<std::ptrdiff_t>(H, static_cast<std::ptrdiff_t>(std::lround(y + o.h)));
    for (std::ptrdiff_t py = y0; py < y1; ++py)
      for (std::ptrdiff_t px = x0; px < x1; ++px)
        fn(static_cast<std::size_t>(py), static_cast<std::size_t>(px));
  };

  for (std::size_t t = 0; t <= k; ++t) {
    Frame f;
    std::vector<real> rgb(3 * H * W);
    std::vector<real> flow(2 * H * W, 0.0);
    f.semantic.assign(H * W, kBackground);
    f.drivable.assign(H * W, 0);

    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const std::size_t i = y * W + x;
        std::array<real, 3> c;
        if (y < rt) {
          c = {0.55, 0.65, 0.8};  // sky
        } else if (y < rb) {
          c = {0.35, 0.35, 0.35};  // road
          f.semantic[i] = kRoad;
          f.drivable[i] = 1;
        } else {
          c = {0.3, 0.5, 0.3};  // verge
        }
        rgb[0 * H * W + i] = c[0];
        rgb[1 * H * W + i] = c[1];
        rgb[2 * H * W + i] = c[2];
      }

    // vehicles first, pedestrians drawn on top
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& o : objs) {
        if ((pass == 0) != (o.label == kVehicle)) continue;
        const real dx = t == 0 ? o.vx_at(0) : o.pos_at(t).first - o.pos_at(t - 1).first;
        const real dy = o.vy;
        footprint(o, t, [&](std::size_t y, std::size_t x) {
          const std::size_t i = y * W + x;
          rgb[0 * H * W + i] = o.color[0];
          rgb[1 * H * W + i] = o.color[1];
          rgb[2 * H * W + i] = o.color[2];
          f.semantic[i] = o.label;
          f.drivable[i] = 0;
          flow[0 * H * W + i] = dx;
          flow[1 * H * W + i] = dy;
        });
      }

    f.rgb = Tensor::from_values({3, H, W}, std::move(rgb));
    f.flow = Tensor::from_values({2, H, W}, std::move(flow));
    clip.frames.push_back(std::move(f));
  }

  // ground-truth saliency for the target (last) frame
  clip.saliency.assign(H * W, 0.0);
  const real ego_y = static_cast<real>(H - 1), ego_x = static_cast<real>(W) / 2.0;
  bool any_visible = false;
  for (const auto& o : objs) {
    if (k < o.appear_frame) continue;
    any_visible = true;
    auto [x, y] = o.pos_at(k);
    const real cx = x + o.w / 2.0, cy = y + o.h / 2.0;
    const real speed = std::abs(o.vx_at(k)) + std::abs(o.vy);
    const real d_ego = std::hypot(cx - ego_x, cy - ego_y);
    const real weight = (0.5 + speed) / (1.0 + d_ego / (H / 2.0));
    const real inv2s2 = 1.0 / (2.0 * spec.sigma_g * spec.sigma_g);
    for (std::size_t py = 0; py < H; ++py)
      for (std::size_t px = 0; px < W; ++px) {
        const real d2 = (px - cx) * (px - cx) + (py - cy) * (py - cy);
        clip.saliency[py * W + px] += weight * std::exp(-d2 * inv2s2);
      }
  }
  if (!any_visible) {
    for (std::size_t y = rt; y < rb; ++y)
      for (std::size_t x = 0; x < W; ++x) clip.saliency[y * W + x] = 1.0;
  }
  real ssum = 0.0;
  for (real v : clip.saliency) ssum += v;
  for (auto& v : clip.saliency) v /= ssum;

  // fixations: top-m peaks with suppression radius 2*sigma_g
  clip.fixations.assign(H * W, 0);
  std::vector<real> peaks = clip.saliency;
  const real sup2 = 4.0 * spec.sigma_g * spec.sigma_g;
  for (std::size_t m = 0; m < spec.fixation_peaks; ++m) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < peaks.size(); ++i)
      if (peaks[i] > peaks[best]) best = i;
    if (peaks[best] <= 0.0) break;
    clip.fixations[best] = 1;
    const std::size_t by = best / W, bx = best % W;
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const real d2 = (static_cast<real>(x) - bx) * (static_cast<real>(x) - bx) +
                        (static_cast<real>(y) - by) * (static_cast<real>(y) - by);
        if (d2 <= sup2) peaks[y * W + x] = 0.0;
      }
  }

  return clip;
}

// ---------------------------------------------------------------------------
// counterfactual transforms
// ---------------------------------------------------------------------------

struct CounterfactSpec {
  std::set<std::uint8_t> remove;  // subset of {kVehicle, kPedestrian}
  StreamKind target = StreamKind::semantic;
};

namespace detail {

inline std::array<real, 3> median_background_color(const Frame& f, std::size_t hw) {
  std::array<real, 3> med{0.0, 0.0, 0.0};
  std::vector<real> vals;
  for (std::size_t c = 0; c < 3; ++c) {
    vals.clear();
    for (std::size_t i = 0; i < hw; ++i)
      if (f.semantic[i] == kBackground) vals.push_back(f.rgb.value()[c * hw + i]);
    if (vals.empty()) continue;
    std::nth_element(vals.begin(), vals.begin() + vals.size() / 2, vals.end());
    med[c] = vals[vals.size() / 2];
  }
  return med;
}

}  // namespace detail

// Removes the listed object classes from one stream only; every other stream
// is byte-identical to the input. The model is never retrained.
inline ClipSample counterfact_remove_classes(const ClipSample& sample, const CounterfactSpec& spec) {
  if (spec.target == StreamKind::drivable)
    throw UsageError("counterfact_remove_classes: use counterfact_remove_drivable for the mask");
  ClipSample out = sample;
  const std::size_t hw = sample.height * sample.width;
  for (auto& f : out.frames) {
    switch (spec.target) {
      case StreamKind::semantic:
        for (std::size_t i = 0; i < hw; ++i)
          if (spec.remove.count(f.semantic[i])) f.semantic[i] = kBackground;
        break;
      case StreamKind::rgb: {
        const auto med = detail::median_background_color(f, hw);
        std::vector<real> rgb = f.rgb.value();
        for (std::size_t i = 0; i < hw; ++i)
          if (spec.remove.count(f.semantic[i]))
            for (std::size_t c = 0; c < 3; ++c) rgb[c * hw + i] = med[c];
        f.rgb = Tensor::from_values({3, sample.height, sample.width}, std::move(rgb));
        break;
      }
      case StreamKind::flow: {
        std::vector<real> flow = f.flow.value();
        for (std::size_t i = 0; i < hw; ++i)
          if (spec.remove.count(f.semantic[i])) {
            flow[i] = 0.0;
            flow[hw + i] = 0.0;
          }
        f.flow = Tensor::from_values({2, sample.height, sample.width}, std::move(flow));
        break;
      }
      case StreamKind::drivable:
        break;
    }
  }
  return out;
}

inline ClipSample counterfact_remove_drivable(const ClipSample& sample) {
  ClipSample out = sample;
  for (auto& f : out.frames) std::fill(f.drivable.begin(), f.drivable.end(), 0);
  return out;
}

struct CounterfactVariant {
  std::string name;
  StreamKind target;
  std::set<std::uint8_t> remove;  // empty for the drivable-mask variant
};

// The ten named variants: three per pixel stream plus the drivable mask.
inline std::vector<CounterfactVariant> counterfact_variants() {
  std::vector<CounterfactVariant> v;
  const std::vector<std::pair<StreamKind, char>> streams = {
      {StreamKind::rgb, 'I'}, {StreamKind::flow, 'F'}, {StreamKind::semantic, 'S'}};
  for (auto [stream, tag] : streams) {
    v.push_back({std::string("Gate-DAP-") + tag + " w/o P", stream, {kPedestrian}});
    v.push_back({std::string("Gate-DAP-") + tag + " w/o V", stream, {kVehicle}});
    v.push_back({std::string("Gate-DAP-") + tag + " w/o V-P", stream, {kVehicle, kPedestrian}});
  }
  v.push_back({"Gate-DAP-D w/o Mask", StreamKind::drivable, {}});
  return v;
}

inline ClipSample apply_counterfact(const ClipSample& sample, const CounterfactVariant& v) {
  if (v.target == StreamKind::drivable) return counterfact_remove_drivable(sample);
  return counterfact_remove_classes(sample, {v.remove, v.target});
}

// ---------------------------------------------------------------------------
// input normalization
// ---------------------------------------------------------------------------

// Raw per-stream tensors before the learned per-stream projection: rgb passes
// through, flow is scaled to [-1,1], semantic is one-hot, drivable is {0,1}.
inline Tensor normalize_stream(const Frame& f, StreamKind stream, std::size_t h, std::size_t w,
                               real max_speed) {
  const std::size_t hw = h * w;
  switch (stream) {
    case StreamKind::rgb:
      return Tensor::from_values({3, h, w}, f.rgb.value());
    case StreamKind::flow: {
      std::vector<real> v = f.flow.value();
      const real s = 1.0 / std::max<real>(max_speed, 1e-12);
      for (auto& x : v) x *= s;
      return Tensor::from_values({2, h, w}, std::move(v));
    }
    case StreamKind::semantic: {
      std::vector<real> v(4 * hw, 0.0);
      for (std::size_t i = 0; i < hw; ++i) {
        if (f.semantic[i] > 3) throw InputError("unknown semantic label " + std::to_string(f.semantic[i]));
        v[f.semantic[i] * hw + i] = 1.0;
      }
      return Tensor::from_values({4, h, w}, std::move(v));
    }
    case StreamKind::drivable: {
      std::vector<real> v(hw);
      for (std::size_t i = 0; i < hw; ++i) v[i] = f.drivable[i] ? 1.0 : 0.0;
      return Tensor::from_values({1, h, w}, std::move(v));
    }
  }
  throw UsageError("unknown stream");
}

inline std::size_t stream_channels(StreamKind s) {
  switch (s) {
    case StreamKind::rgb: return 3;
    case StreamKind::flow: return 2;
    case StreamKind::semantic: return 4;
    case StreamKind::drivable: return 1;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// clip I/O
// ---------------------------------------------------------------------------

inline void save_clip(const ClipSample& clip, const fs::path& base_dir) {
  const fs::path dir = base_dir / clip.clip_id;
  fs::create_directories(dir);
  for (std::size_t t = 0; t < clip.frames.size(); ++t) {
    const fs::path fdir = dir / ("frame_" + std::to_string(t));
    fs::create_directories(fdir);
    const Frame& f = clip.frames[t];
    write_gdap(fdir / "rgb.gdap", f.rgb);
    write_gdap(fdir / "flow.gdap", f.flow);
    write_pgm(fdir / "semantic.pgm", clip.height, clip.width, f.semantic);
    std::vector<std::uint8_t> drv(f.drivable.size());
    for (std::size_t i = 0; i < drv.size(); ++i) drv[i] = f.drivable[i] ? 255 : 0;
    write_pgm(fdir / "drivable.pgm", clip.height, clip.width, drv);
  }
  write_gdap(dir / "saliency.gdap",
             Tensor::from_values({clip.height, clip.width}, clip.saliency));
  std::vector<std::uint8_t> fix(clip.fixations.size());
  for (std::size_t i = 0; i < fix.size(); ++i) fix[i] = clip.fixations[i] ? 255 : 0;
  write_pgm(dir / "fixations.pgm", clip.height, clip.width, fix);

  json meta;
  meta["clip_id"] = clip.clip_id;
  meta["k"] = clip.clip_len();
  meta["height"] = clip.height;
  meta["width"] = clip.width;
  meta["palette"] = {{"background", 0}, {"road", 1}, {"vehicle", 2}, {"pedestrian", 3}};
  std::ofstream mf(dir / "meta.json");
  mf << meta.dump(2) << "\n";
}

inline ClipSample load_clip(const fs::path& dir) {
  std::ifstream mf(dir / "meta.json");
  if (!mf) throw InputError("missing file: " + (dir / "meta.json").string());
  json meta = json::parse(mf);
  ClipSample clip;
  clip.clip_id = meta.at("clip_id").get<std::string>();
  clip.height = meta.at("height").get<std::size_t>();
  clip.width = meta.at("width").get<std::size_t>();
  const std::size_t k = meta.at("k").get<std::size_t>();

  for (std::size_t t = 0; t <= k; ++t) {
    const fs::path fdir = dir / ("frame_" + std::to_string(t));
    Frame f;
    f.rgb = read_gdap(fdir / "rgb.gdap");
    f.flow = read_gdap(fdir / "flow.gdap");
    std::size_t h = 0, w = 0;
    read_pgm(fdir / "semantic.pgm", h, w, f.semantic);
    if (h != clip.height || w != clip.width) throw FormatError("semantic map size mismatch");
    std::vector<std::uint8_t> drv;
    read_pgm(fdir / "drivable.pgm", h, w, drv);
    f.drivable.resize(drv.size());
    for (std::size_t i = 0; i < drv.size(); ++i) f.drivable[i] = drv[i] ? 1 : 0;
    clip.frames.push_back(std::move(f));
  }
  Tensor sal = read_gdap(dir / "saliency.gdap");
  clip.saliency = sal.value();
  std::size_t h = 0, w = 0;
  std::vector<std::uint8_t> fix;
  read_pgm(dir / "fixations.pgm", h, w, fix);
  clip.fixations.resize(fix.size());
  for (std::size_t i = 0; i < fix.size(); ++i) clip.fixations[i] = fix[i] ? 1 : 0;
  return clip;
}

// Loads every clip_* directory under `data_dir`, sorted by clip id.
inline std::vector<ClipSample> load_dataset(const fs::path& data_dir) {
  std::vector<fs::path> dirs;
  if (!fs::exists(data_dir)) throw InputError("missing data directory: " + data_dir.string());
  for (const auto& e : fs::directory_iterator(data_dir))
    if (e.is_directory() && e.path().filename().string().rfind("clip_", 0) == 0)
      dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end(), [](const fs::path& a, const fs::path& b) {
    auto num = [](const fs::path& p) {
      return std::stol(p.filename().string().substr(5));
    };
    return num(a) < num(b);
  });
  std::vector<ClipSample> clips;
  clips.reserve(dirs.size());
  for (const auto& d : dirs) clips.push_back(load_clip(d));
  if (clips.empty()) throw InputError("no clips found in " + data_dir.string());
  return clips;
}

}  // namespace gatedap
