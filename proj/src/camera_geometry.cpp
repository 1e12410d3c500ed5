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

#include "fedmde/camera_geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fedmde {

namespace {

namespace F = torch::indexing;

constexpr double kBorderSlack = 1e-4;

void check_finite(const std::array<double, 3>& v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw std::invalid_argument(std::string("non-finite ") + what + " component");
    }
  }
}

// Rodrigues rotation for a single axis-angle vector in plain doubles.
std::array<std::array<double, 3>, 3> rotation_matrix(const std::array<double, 3>& r) {
  const double theta2 = r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
  double a, b;
  if (theta2 < 1e-12) {
    a = 1.0 - theta2 / 6.0;
    b = 0.5 - theta2 / 24.0;
  } else {
    const double theta = std::sqrt(theta2);
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
  }
  const double kx = r[0], ky = r[1], kz = r[2];
  // R = I + a [k]x + b [k]x^2
  const double k[3][3] = {{0, -kz, ky}, {kz, 0, -kx}, {-ky, kx, 0}};
  std::array<std::array<double, 3>, 3> out{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double k2 = 0.0;
      for (int m = 0; m < 3; ++m) k2 += k[i][m] * k[m][j];
      out[i][j] = (i == j ? 1.0 : 0.0) + a * k[i][j] + b * k2;
    }
  }
  return out;
}

void check_same_hw(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.dim() != 4 || b.dim() != 4 || a.size(0) != b.size(0) || a.size(2) != b.size(2) ||
      a.size(3) != b.size(3)) {
    throw std::invalid_argument(std::string("dimension mismatch: ") + what);
  }
}

}  // namespace

void Intrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw std::invalid_argument("intrinsics: focal lengths must be positive");
  }
  if (width <= 0 || height <= 0) {
    throw std::invalid_argument("intrinsics: image size must be positive");
  }
  if (!(cx >= 0.0 && cx < static_cast<double>(width)) ||
      !(cy >= 0.0 && cy < static_cast<double>(height))) {
    throw std::invalid_argument("intrinsics: principal point outside the image");
  }
}

Intrinsics Intrinsics::resized(std::int64_t new_width, std::int64_t new_height) const {
  const double sx = static_cast<double>(new_width) / static_cast<double>(width);
  const double sy = static_cast<double>(new_height) / static_cast<double>(height);
  Intrinsics out{fx * sx, fy * sy, cx * sx, cy * sy, new_width, new_height};
  out.validate();
  return out;
}

torch::Tensor Intrinsics::matrix(torch::Dtype dtype) const {
  return torch::tensor({fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0}, torch::kFloat64)
      .reshape({3, 3})
      .to(dtype);
}

Intrinsics Intrinsics::parse(std::string_view line) {
  std::istringstream in{std::string(line)};
  Intrinsics k;
  if (!(in >> k.fx >> k.fy >> k.cx >> k.cy >> k.width >> k.height)) {
    throw std::invalid_argument("intrinsics: expected \"fx fy cx cy width height\"");
  }
  std::string rest;
  if (in >> rest) {
    throw std::invalid_argument("intrinsics: trailing tokens after height");
  }
  k.validate();
  return k;
}

Intrinsics Intrinsics::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::invalid_argument("intrinsics: cannot open " + path.string());
  }
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    return parse(line);
  }
  throw std::invalid_argument("intrinsics: empty calibration file " + path.string());
}

std::string Intrinsics::to_string() const {
  std::ostringstream out;
  out.precision(17);
  out << fx << ' ' << fy << ' ' << cx << ' ' << cy << ' ' << width << ' ' << height;
  return out.str();
}

torch::Tensor PoseSE3::to_tensor(torch::Dtype dtype) const {
  return torch::tensor({rotation[0], rotation[1], rotation[2], translation[0], translation[1],
                        translation[2]},
                       torch::kFloat64)
      .to(dtype);
}

PoseSE3 PoseSE3::from_tensor(const torch::Tensor& pose6) {
  if (pose6.numel() != 6) throw std::invalid_argument("pose: expected 6 values");
  auto v = pose6.detach().to(torch::kFloat64).contiguous().reshape({6});
  auto acc = v.accessor<double, 1>();
  PoseSE3 p;
  for (int i = 0; i < 3; ++i) {
    p.rotation[i] = acc[i];
    p.translation[i] = acc[i + 3];
  }
  return p;
}

torch::Tensor pose_to_transform(const torch::Tensor& pose6) {
  if (pose6.size(-1) != 6) throw std::invalid_argument("pose: last dimension must be 6");
  if (!torch::isfinite(pose6).all().item<bool>()) {
    throw std::invalid_argument("pose: non-finite component");
  }
  auto r = pose6.index({F::Ellipsis, F::Slice(0, 3)});
  auto t = pose6.index({F::Ellipsis, F::Slice(3, 6)});
  auto theta2 = (r * r).sum(-1, /*keepdim=*/true).unsqueeze(-1);  // [...,1,1]
  auto small = theta2 < 1e-12;
  auto theta2_safe = torch::where(small, torch::ones_like(theta2), theta2);
  auto theta = torch::sqrt(theta2_safe);
  auto a = torch::where(small, 1.0 - theta2 / 6.0, torch::sin(theta) / theta);
  auto b = torch::where(small, 0.5 - theta2 / 24.0, (1.0 - torch::cos(theta)) / theta2_safe);

  auto zero = torch::zeros_like(r.index({F::Ellipsis, 0}));
  auto rx = r.index({F::Ellipsis, 0});
  auto ry = r.index({F::Ellipsis, 1});
  auto rz = r.index({F::Ellipsis, 2});
  auto k = torch::stack({zero, -rz, ry, rz, zero, -rx, -ry, rx, zero}, -1);
  auto shape = r.sizes().vec();
  shape.back() = 3;
  shape.push_back(3);
  k = k.reshape(shape);
  auto eye = torch::eye(3, pose6.options()).expand_as(k);
  auto rot = eye + a * k + b * torch::matmul(k, k);

  auto top = torch::cat({rot, t.unsqueeze(-1)}, -1);  // [...,3,4]
  auto bottom_shape = shape;
  bottom_shape[bottom_shape.size() - 2] = 1;
  bottom_shape.back() = 4;
  auto bottom = torch::zeros(bottom_shape, pose6.options());
  bottom.index_put_({F::Ellipsis, 0, 3}, 1.0);
  return torch::cat({top, bottom}, -2);
}

torch::Tensor pose_to_transform(const PoseSE3& pose) {
  check_finite(pose.rotation, "rotation");
  check_finite(pose.translation, "translation");
  return pose_to_transform(pose.to_tensor(torch::kFloat64));
}

torch::Tensor invert_transform(const torch::Tensor& transform) {
  auto rot = transform.index({F::Ellipsis, F::Slice(0, 3), F::Slice(0, 3)});
  auto t = transform.index({F::Ellipsis, F::Slice(0, 3), F::Slice(3, 4)});
  auto rot_t = rot.transpose(-1, -2);
  auto top = torch::cat({rot_t, -torch::matmul(rot_t, t)}, -1);
  auto bottom = transform.index({F::Ellipsis, F::Slice(3, 4), F::Slice()});
  return torch::cat({top, bottom}, -2);
}

PoseSE3 transform_to_pose(const torch::Tensor& transform) {
  auto m = transform.detach().to(torch::kFloat64).contiguous().reshape({4, 4});
  auto acc = m.accessor<double, 2>();
  PoseSE3 p;
  for (int i = 0; i < 3; ++i) p.translation[i] = acc[i][3];
  const double trace = acc[0][0] + acc[1][1] + acc[2][2];
  const double cos_theta = std::clamp((trace - 1.0) / 2.0, -1.0, 1.0);
  const double theta = std::acos(cos_theta);
  const std::array<double, 3> skew = {acc[2][1] - acc[1][2], acc[0][2] - acc[2][0],
                                      acc[1][0] - acc[0][1]};
  if (theta < 1e-8) {
    for (int i = 0; i < 3; ++i) p.rotation[i] = 0.5 * skew[i];
  } else if (M_PI - theta < 1e-6) {
    // Near pi the skew part vanishes; recover the axis from the diagonal.
    int i = 0;
    if (acc[1][1] > acc[i][i]) i = 1;
    if (acc[2][2] > acc[i][i]) i = 2;
    std::array<double, 3> axis{};
    axis[i] = std::sqrt(std::max(0.0, (acc[i][i] + 1.0) / 2.0));
    for (int j = 0; j < 3; ++j) {
      if (j != i) axis[j] = (acc[i][j] + acc[j][i]) / (4.0 * axis[i]);
    }
    for (int j = 0; j < 3; ++j) p.rotation[j] = axis[j] * theta;
  } else {
    const double s = theta / (2.0 * std::sin(theta));
    for (int i = 0; i < 3; ++i) p.rotation[i] = s * skew[i];
  }
  return p;
}

ReprojectedPoint reproject_point(double u, double v, double depth, const Intrinsics& k,
                                 const PoseSE3& pose) {
  if (!(depth > 0.0)) throw std::invalid_argument("reproject_point: depth must be positive");
  check_finite(pose.rotation, "rotation");
  check_finite(pose.translation, "translation");
  const double x = (u - k.cx) / k.fx * depth;
  const double y = (v - k.cy) / k.fy * depth;
  const double z = depth;
  const auto rot = rotation_matrix(pose.rotation);
  const double px = rot[0][0] * x + rot[0][1] * y + rot[0][2] * z + pose.translation[0];
  const double py = rot[1][0] * x + rot[1][1] * y + rot[1][2] * z + pose.translation[1];
  const double pz = rot[2][0] * x + rot[2][1] * y + rot[2][2] * z + pose.translation[2];
  ReprojectedPoint out;
  out.depth = pz;
  out.in_front = pz > 0.0;
  if (out.in_front) {
    out.u = k.fx * px / pz + k.cx;
    out.v = k.fy * py / pz + k.cy;
  }
  return out;
}

torch::Tensor backproject(const torch::Tensor& depth, const Intrinsics& k) {
  if (depth.dim() != 4 || depth.size(1) != 1) {
    throw std::invalid_argument("backproject: depth must be [B, 1, H, W]");
  }
  const auto h = depth.size(2);
  const auto w = depth.size(3);
  auto opts = depth.options().requires_grad(false);
  auto u = torch::arange(w, opts).view({1, 1, 1, w});
  auto v = torch::arange(h, opts).view({1, 1, h, 1});
  auto x = (u - k.cx) / k.fx * depth;
  auto y = (v - k.cy) / k.fy * depth;
  return torch::cat({x, y, depth}, 1);
}

torch::Tensor bilinear_sample(const torch::Tensor& image, const torch::Tensor& x,
                              const torch::Tensor& y) {
  const auto b = image.size(0);
  const auto c = image.size(1);
  const auto h = image.size(2);
  const auto w = image.size(3);
  auto x0 = torch::floor(x.detach());
  auto y0 = torch::floor(y.detach());
  auto wx = x - x0;
  auto wy = y - y0;
  auto x0i = x0.to(torch::kLong).clamp(0, w - 1);
  auto y0i = y0.to(torch::kLong).clamp(0, h - 1);
  auto x1i = (x0i + 1).clamp(0, w - 1);
  auto y1i = (y0i + 1).clamp(0, h - 1);

  auto flat = image.reshape({b, c, h * w});
  auto gather = [&](const torch::Tensor& yi, const torch::Tensor& xi) {
    auto idx = (yi * w + xi).reshape({b, 1, -1}).expand({b, c, -1});
    return flat.gather(2, idx).reshape({b, c, x.size(1), x.size(2)});
  };
  auto wx4 = wx.unsqueeze(1);
  auto wy4 = wy.unsqueeze(1);
  return gather(y0i, x0i) * (1 - wx4) * (1 - wy4) + gather(y0i, x1i) * wx4 * (1 - wy4) +
         gather(y1i, x0i) * (1 - wx4) * wy4 + gather(y1i, x1i) * wx4 * wy4;
}

std::int64_t WarpResult::valid_count() const {
  return validity.sum().item<std::int64_t>();
}

WarpResult warp_frame(const torch::Tensor& source, const torch::Tensor& source_depth,
                      const torch::Tensor& target_depth, const torch::Tensor& pose,
                      const Intrinsics& k) {
  k.validate();
  check_same_hw(source, target_depth, "source image vs target depth");
  check_same_hw(source_depth, target_depth, "source depth vs target depth");
  if (source.size(2) != k.height || source.size(3) != k.width) {
    throw std::invalid_argument("dimension mismatch: image vs intrinsics");
  }
  if (pose.dim() != 2 || pose.size(0) != source.size(0) || pose.size(1) != 6) {
    throw std::invalid_argument("dimension mismatch: pose must be [B, 6]");
  }
  const auto b = source.size(0);
  const auto h = k.height;
  const auto w = k.width;

  auto points = backproject(target_depth, k).reshape({b, 3, h * w});
  auto transform = pose_to_transform(pose);
  auto rot = transform.index({F::Slice(), F::Slice(0, 3), F::Slice(0, 3)});
  auto t = transform.index({F::Slice(), F::Slice(0, 3), F::Slice(3, 4)});
  auto moved = torch::matmul(rot, points) + t;  // [B,3,HW]
  auto px = moved.select(1, 0).reshape({b, h, w});
  auto py = moved.select(1, 1).reshape({b, h, w});
  auto pz = moved.select(1, 2).reshape({b, h, w});

  auto in_front = pz > 0;
  auto z_safe = torch::where(in_front, pz, torch::ones_like(pz));
  // Rounding can push a pixel that maps onto itself a hair past the border;
  // snap coordinates within kBorderSlack back onto the image edge.
  auto snap = [](const torch::Tensor& c, double hi) {
    auto near = (c > -kBorderSlack) & (c < hi + kBorderSlack);
    return torch::where(near, c.clamp(0.0, hi), c);
  };
  auto u = snap(k.fx * px / z_safe + k.cx, static_cast<double>(w - 1));
  auto v = snap(k.fy * py / z_safe + k.cy, static_cast<double>(h - 1));
  auto inside = (u >= 0) & (u <= static_cast<double>(w - 1)) & (v >= 0) &
                (v <= static_cast<double>(h - 1));
  auto valid = in_front & inside;

  auto zeros = torch::zeros_like(u);
  auto u_safe = torch::where(valid, u, zeros);
  auto v_safe = torch::where(valid, v, zeros);
  auto valid4 = valid.unsqueeze(1);
  auto mask = valid4.to(source.scalar_type());

  WarpResult out;
  out.reconstruction = bilinear_sample(source, u_safe, v_safe) * mask;
  out.interpolated_depth = bilinear_sample(source_depth, u_safe, v_safe) * mask;
  out.projected_depth = pz.unsqueeze(1);
  out.validity = valid4;
  out.source_u = u.unsqueeze(1);
  out.source_v = v.unsqueeze(1);
  return out;
}

}  // namespace fedmde
