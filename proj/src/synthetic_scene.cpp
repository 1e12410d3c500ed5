/*
 * Copyright 2026 The fedmde Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "fedmde/synthetic_scene.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>
#include <stdexcept>

#include "fedmde/seeding.hpp"

namespace fedmde {

namespace {

using Vec3 = std::array<double, 3>;

struct Box {
  Vec3 lo;
  Vec3 hi;
  Vec3 albedo;
};

struct Texture {
  std::array<Vec3, 2> direction;
  std::array<Vec3, 2> phase;  // per channel
  std::array<double, 2> frequency;
};

struct SurfaceHit {
  double t = std::numeric_limits<double>::infinity();
  Vec3 albedo{};
};

struct World {
  double ground_y;
  double half_width;
  double far_z;
  bool walls;
  Vec3 ground_albedo;
  Vec3 left_albedo;
  Vec3 right_albedo;
  Vec3 far_albedo;
  std::vector<Box> boxes;
  Texture texture;
  double fog_density;
};

constexpr Vec3 kFogColor = {0.72, 0.74, 0.78};

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

void consider(SurfaceHit& best, double t, const Vec3& albedo) {
  if (t > 1e-9 && t < best.t) {
    best.t = t;
    best.albedo = albedo;
  }
}

// Slab test; returns entry distance or infinity.
double intersect_box(const Box& box, const Vec3& o, const Vec3& d) {
  double t0 = 0.0;
  double t1 = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 3; ++i) {
    if (std::abs(d[i]) < 1e-15) {
      if (o[i] < box.lo[i] || o[i] > box.hi[i]) return std::numeric_limits<double>::infinity();
      continue;
    }
    double a = (box.lo[i] - o[i]) / d[i];
    double b = (box.hi[i] - o[i]) / d[i];
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
    if (t0 > t1) return std::numeric_limits<double>::infinity();
  }
  return t0 > 0.0 ? t0 : std::numeric_limits<double>::infinity();
}

SurfaceHit trace(const World& w, const Vec3& o, const Vec3& d) {
  SurfaceHit best;
  if (d[1] > 0) consider(best, (w.ground_y - o[1]) / d[1], w.ground_albedo);
  if (w.walls) {
    if (d[0] > 0) consider(best, (w.half_width - o[0]) / d[0], w.right_albedo);
    if (d[0] < 0) consider(best, (-w.half_width - o[0]) / d[0], w.left_albedo);
  }
  if (d[2] > 0) consider(best, (w.far_z - o[2]) / d[2], w.far_albedo);
  for (const auto& box : w.boxes) consider(best, intersect_box(box, o, d), box.albedo);
  return best;
}

Vec3 shade(const World& w, const SurfaceHit& hit, const Vec3& o, const Vec3& d) {
  const Vec3 p = {o[0] + hit.t * d[0], o[1] + hit.t * d[1], o[2] + hit.t * d[2]};
  Vec3 color{};
  const double fog = std::exp(-w.fog_density * hit.t);
  for (int c = 0; c < 3; ++c) {
    double pattern = 0.55;
    pattern += 0.25 * std::sin(w.texture.frequency[0] * dot(w.texture.direction[0], p) +
                               w.texture.phase[0][c]);
    pattern += 0.2 * std::sin(w.texture.frequency[1] * dot(w.texture.direction[1], p) +
                              w.texture.phase[1][c]);
    const double lit = hit.albedo[c] * pattern;
    color[c] = std::clamp(lit * fog + kFogColor[c] * (1.0 - fog), 0.0, 1.0);
  }
  return color;
}

Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Vec3 v{g(rng), g(rng), g(rng)};
  const double n = std::sqrt(dot(v, v));
  for (auto& x : v) x /= n;
  return v;
}

Vec3 random_albedo(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  return {u(rng), u(rng), u(rng)};
}

struct CameraState {
  Vec3 position;
  double yaw;  // rotation about the camera y axis
};

// Camera-to-world rotation for a yaw about +y.
std::array<Vec3, 3> yaw_matrix(double yaw) {
  const double c = std::cos(yaw), s = std::sin(yaw);
  return {{{c, 0, s}, {0, 1, 0}, {-s, 0, c}}};
}

torch::Tensor world_from_camera(const CameraState& cam) {
  auto r = yaw_matrix(cam.yaw);
  auto m = torch::eye(4, torch::kFloat64);
  auto acc = m.accessor<double, 2>();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) acc[i][j] = r[i][j];
    acc[i][3] = cam.position[i];
  }
  return m;
}

struct RenderedFrame {
  torch::Tensor image;  // [3, H, W]
  torch::Tensor depth;  // [1, H, W]
};

RenderedFrame render(const World& w, const CameraState& cam, const Intrinsics& k,
                     std::int64_t supersample) {
  const auto rot = yaw_matrix(cam.yaw);
  auto to_world = [&](const Vec3& dc) {
    return Vec3{rot[0][0] * dc[0] + rot[0][1] * dc[1] + rot[0][2] * dc[2],
                rot[1][0] * dc[0] + rot[1][1] * dc[1] + rot[1][2] * dc[2],
                rot[2][0] * dc[0] + rot[2][1] * dc[1] + rot[2][2] * dc[2]};
  };
  RenderedFrame out{torch::empty({3, k.height, k.width}, torch::kFloat32),
                    torch::empty({1, k.height, k.width}, torch::kFloat32)};
  auto img = out.image.accessor<float, 3>();
  auto dep = out.depth.accessor<float, 3>();
  const double inv = 1.0 / static_cast<double>(supersample * supersample);
  for (std::int64_t v = 0; v < k.height; ++v) {
    for (std::int64_t u = 0; u < k.width; ++u) {
      // Camera rays have unit z, so the hit distance is the depth.
      const Vec3 center = to_world({(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0});
      dep[0][v][u] = static_cast<float>(trace(w, cam.position, center).t);
      Vec3 acc{};
      for (std::int64_t sy = 0; sy < supersample; ++sy) {
        for (std::int64_t sx = 0; sx < supersample; ++sx) {
          const double du = (static_cast<double>(sx) + 0.5) / supersample - 0.5;
          const double dv = (static_cast<double>(sy) + 0.5) / supersample - 0.5;
          const Vec3 d = to_world({(u + du - k.cx) / k.fx, (v + dv - k.cy) / k.fy, 1.0});
          const auto hit = trace(w, cam.position, d);
          const auto c = shade(w, hit, cam.position, d);
          for (int ch = 0; ch < 3; ++ch) acc[ch] += c[ch] * inv;
        }
      }
      for (int ch = 0; ch < 3; ++ch) img[ch][v][u] = static_cast<float>(acc[ch]);
    }
  }
  return out;
}

std::string frame_name(const std::string& drive, std::int64_t frame) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%04lld", static_cast<long long>(frame));
  return drive + "/" + buf;
}

}  // namespace

void SyntheticSceneSpec::validate() const {
  if (width <= 0 || height <= 0) throw std::invalid_argument("synthetic scene: non-positive resolution");
  if (drive_frames.empty()) throw std::invalid_argument("synthetic scene: no drives");
  for (auto n : drive_frames) {
    if (n <= 0) throw std::invalid_argument("synthetic scene: drives need at least one sample");
  }
  if (sources != 1 && sources != 2) throw std::invalid_argument("synthetic scene: sources must be 1 or 2");
  if (supersample <= 0) throw std::invalid_argument("synthetic scene: supersample must be positive");
  if (!(camera_height > 0) || !(street_half_width > 0) || !(far_distance > 0)) {
    throw std::invalid_argument("synthetic scene: geometry sizes must be positive");
  }
  if (fog_density < 0 || boxes < 0) throw std::invalid_argument("synthetic scene: negative parameter");
}

SyntheticScene generate_synthetic_scene(const SyntheticSceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  const Intrinsics k{0.58 * static_cast<double>(spec.width), 1.92 * static_cast<double>(spec.height),
                     0.5 * static_cast<double>(spec.width), 0.5 * static_cast<double>(spec.height),
                     spec.width, spec.height};
  k.validate();

  SyntheticScene scene;
  for (std::size_t d = 0; d < spec.drive_frames.size(); ++d) {
    char drive_buf[16];
    std::snprintf(drive_buf, sizeof(drive_buf), "%02zu", d);
    const std::string drive = spec.drive_prefix + drive_buf;
    std::mt19937_64 rng(derive_seed(seed, "synthetic-drive", drive));
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const std::int64_t samples = spec.drive_frames[d];
    const std::int64_t frames = samples + spec.sources;

    World w;
    w.ground_y = spec.camera_height;
    w.half_width = spec.street_half_width;
    w.far_z = spec.far_distance;
    w.walls = spec.street_walls;
    w.ground_albedo = random_albedo(rng, 0.35, 0.55);
    w.left_albedo = random_albedo(rng, 0.3, 0.95);
    w.right_albedo = random_albedo(rng, 0.3, 0.95);
    w.far_albedo = random_albedo(rng, 0.5, 0.9);
    w.fog_density = spec.fog_density;
    for (int i = 0; i < 2; ++i) {
      w.texture.direction[i] = random_unit(rng);
      for (int c = 0; c < 3; ++c) w.texture.phase[i][c] = 2.0 * M_PI * unit(rng);
    }
    w.texture.frequency = {1.3 * spec.texture_frequency, 3.1 * spec.texture_frequency};
    for (std::int64_t b = 0; b < spec.boxes; ++b) {
      const double side = unit(rng) < 0.5 ? -1.0 : 1.0;
      const double inner = 1.8;
      const double outer = std::max(inner + 0.5, spec.street_half_width - 0.8);
      const double xc = side * (inner + (outer - inner) * unit(rng));
      const double half_w = 0.4 + 0.6 * unit(rng);
      const double z_lo = 3.0;
      const double z_hi = std::max(z_lo + 1.0, spec.far_distance - 6.0);
      const double zc = z_lo + (z_hi - z_lo) * unit(rng);
      const double half_d = 0.4 + 1.1 * unit(rng);
      const double height = 0.8 + 1.7 * unit(rng);
      w.boxes.push_back({{xc - half_w, spec.camera_height - height, zc - half_d},
                         {xc + half_w, spec.camera_height, zc + half_d},
                         random_albedo(rng, 0.25, 1.0)});
    }

    std::vector<CameraState> cams;
    std::vector<RenderedFrame> rendered;
    std::vector<std::string> ids;
    for (std::int64_t f = 0; f < frames; ++f) {
      const double phase = 2.0 * M_PI * static_cast<double>(f) / 16.0;
      CameraState cam{{spec.lateral_amplitude * std::sin(phase), 0.0,
                       spec.speed * static_cast<double>(f)},
                      spec.yaw_amplitude * std::sin(phase + 0.7)};
      cams.push_back(cam);
      rendered.push_back(render(w, cam, k, spec.supersample));
      ids.push_back(frame_name(drive, f));
      scene.depth_by_frame[ids.back()] = rendered.back().depth;
    }

    auto relative_pose = [&](std::int64_t target, std::int64_t source) {
      auto t = torch::matmul(invert_transform(world_from_camera(cams[source])),
                             world_from_camera(cams[target]));
      return transform_to_pose(t);
    };

    for (std::int64_t i = 0; i < samples; ++i) {
      Sample s;
      const std::int64_t target = spec.sources == 1 ? i : i + 1;
      std::vector<std::int64_t> source_frames =
          spec.sources == 1 ? std::vector<std::int64_t>{i + 1} : std::vector<std::int64_t>{i, i + 2};
      s.id = ids[target];
      s.drive_id = drive;
      s.intrinsics = k;
      s.target = ingest_image(rendered[target].image);
      std::vector<PoseSE3> poses;
      for (auto sf : source_frames) {
        s.sources.push_back(ingest_image(rendered[sf].image));
        s.source_ids.push_back(ids[sf]);
        poses.push_back(relative_pose(target, sf));
      }
      s.ground_truth = rendered[target].depth.clamp_max(80.0);
      scene.samples.push_back(std::move(s));
      scene.poses.push_back(std::move(poses));
    }
  }
  return scene;
}

}  // namespace fedmde
