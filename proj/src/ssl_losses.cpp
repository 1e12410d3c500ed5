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

#include "fedmde/ssl_losses.hpp"

#include "fedmde/log.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fedmde/errors.hpp"

namespace fedmde {

namespace {

namespace F = torch::indexing;
namespace nnf = torch::nn::functional;

std::int64_t require_valid_pixels(const torch::Tensor& validity) {
  const auto count = validity.sum().item<std::int64_t>();
  if (count == 0) throw EmptyValidityError("validity mask is empty");
  return count;
}

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.sizes() != b.sizes()) throw std::invalid_argument(std::string("shape mismatch: ") + what);
}

torch::Tensor zero_like_graph(const torch::Tensor& t) {
  // Keeps the result attached to the graph so callers can always backprop.
  return t.sum() * 0.0;
}

}  // namespace

void LossWeights::validate() const {
  for (double w : {alpha, beta, gamma, delta, epsilon, lambda_i, lambda_s}) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw std::invalid_argument("loss weights must be finite and non-negative");
    }
  }
}

torch::Tensor ssim_map(const torch::Tensor& a, const torch::Tensor& b) {
  require_same_shape(a, b, "ssim inputs");
  if (a.dim() != 4) throw std::invalid_argument("ssim: expected [B, C, H, W]");
  auto pad = [](const torch::Tensor& t) {
    return nnf::pad(t, nnf::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReflect));
  };
  auto pool = [](const torch::Tensor& t) {
    return torch::avg_pool2d(t, /*kernel_size=*/{3, 3}, /*stride=*/{1, 1});
  };
  auto ap = pad(a);
  auto bp = pad(b);
  auto mu_a = pool(ap);
  auto mu_b = pool(bp);
  auto sigma_a = pool(ap * ap) - mu_a * mu_a;
  auto sigma_b = pool(bp * bp) - mu_b * mu_b;
  auto sigma_ab = pool(ap * bp) - mu_a * mu_b;
  auto num = (2 * mu_a * mu_b + kSsimC1) * (2 * sigma_ab + kSsimC2);
  auto den = (mu_a * mu_a + mu_b * mu_b + kSsimC1) * (sigma_a + sigma_b + kSsimC2);
  return (num / den).mean(1, /*keepdim=*/true);
}

torch::Tensor photometric_error_map(const torch::Tensor& reconstruction,
                                    const torch::Tensor& target, const LossWeights& weights) {
  require_same_shape(reconstruction, target, "photometric inputs");
  auto l1 = (target - reconstruction).abs().mean(1, /*keepdim=*/true);
  auto dssim = torch::clamp((1.0 - ssim_map(target, reconstruction)) / 2.0, 0.0, 1.0);
  return weights.lambda_i * l1 + weights.lambda_s * dssim;
}

torch::Tensor photometric_loss(const WarpResult& warp, const torch::Tensor& target,
                               const LossWeights& weights) {
  const auto count = require_valid_pixels(warp.validity);
  auto per_pixel = photometric_error_map(warp.reconstruction, target, weights);
  auto mask = warp.validity.to(per_pixel.scalar_type());
  return (per_pixel * mask).sum() / static_cast<double>(count);
}

torch::Tensor depth_inconsistency(const torch::Tensor& projected,
                                  const torch::Tensor& interpolated,
                                  const torch::Tensor& validity) {
  require_same_shape(projected, interpolated, "depth inconsistency inputs");
  auto bad = validity & ((projected <= 0) | (interpolated <= 0));
  if (bad.any().item<bool>()) {
    throw std::invalid_argument("depth inconsistency: non-positive depth on valid pixel");
  }
  auto ones = torch::ones_like(projected);
  auto p = torch::where(validity, projected, ones);
  auto q = torch::where(validity, interpolated, ones);
  return torch::where(validity, (p - q).abs() / (p + q), torch::zeros_like(p));
}

torch::Tensor mask_weighted_photometric(const WarpResult& warp, const torch::Tensor& target,
                                        const torch::Tensor& mask, const LossWeights& weights) {
  const auto count = require_valid_pixels(warp.validity);
  auto per_pixel = photometric_error_map(warp.reconstruction, target, weights);
  require_same_shape(per_pixel, mask, "weight mask");
  auto v = warp.validity.to(per_pixel.scalar_type());
  return (mask * per_pixel * v).sum() / static_cast<double>(count);
}

torch::Tensor geometry_consistency_loss(const torch::Tensor& inconsistency,
                                        const torch::Tensor& validity) {
  const auto count = require_valid_pixels(validity);
  return (inconsistency * validity.to(inconsistency.scalar_type())).sum() /
         static_cast<double>(count);
}

SurfaceNormals surface_normals(const torch::Tensor& depth, const Intrinsics& intrinsics) {
  if (depth.size(2) < 3 || depth.size(3) < 3) {
    throw std::invalid_argument("surface normals need at least 3x3 pixels");
  }
  auto p = backproject(depth, intrinsics);
  auto dx = p.index({F::Slice(), F::Slice(), F::Slice(1, -1), F::Slice(2, F::None)}) -
            p.index({F::Slice(), F::Slice(), F::Slice(1, -1), F::Slice(F::None, -2)});
  auto dy = p.index({F::Slice(), F::Slice(), F::Slice(2, F::None), F::Slice(1, -1)}) -
            p.index({F::Slice(), F::Slice(), F::Slice(F::None, -2), F::Slice(1, -1)});
  auto c = torch::linalg_cross(dx, dy, /*dim=*/1);
  auto norm2 = (c * c).sum(1, /*keepdim=*/true);
  auto ok = norm2 > 1e-24;
  auto norm = torch::sqrt(torch::where(ok, norm2, torch::ones_like(norm2)));
  auto n = torch::where(ok, c / norm, torch::zeros_like(c));

  SurfaceNormals out;
  out.normals = nnf::pad(n, nnf::PadFuncOptions({1, 1, 1, 1}));
  out.valid = nnf::pad(ok.to(torch::kUInt8), nnf::PadFuncOptions({1, 1, 1, 1})).to(torch::kBool);
  return out;
}

torch::Tensor normal_matching_loss(const torch::Tensor& depth, const torch::Tensor& pseudo_depth,
                                   const Intrinsics& intrinsics) {
  require_same_shape(depth, pseudo_depth, "normal matching inputs");
  if ((depth <= 0).any().item<bool>() || (pseudo_depth <= 0).any().item<bool>()) {
    throw std::invalid_argument("normal matching: depths must be positive");
  }
  auto pred = surface_normals(depth, intrinsics);
  auto prior = surface_normals(pseudo_depth.detach(), intrinsics);
  auto valid = pred.valid & prior.valid;
  const auto count = valid.sum().item<std::int64_t>();
  if (count == 0) {
    log::warn("normal matching: no pixel with two valid normals");
    return zero_like_graph(depth);
  }
  auto per_pixel = (pred.normals - prior.normals).abs().sum(1, /*keepdim=*/true);
  return (per_pixel * valid.to(per_pixel.scalar_type())).sum() / static_cast<double>(count);
}

torch::Tensor sample_point_pairs(std::int64_t pixel_count, std::int64_t count,
                                 std::mt19937_64& rng) {
  if (pixel_count <= 0 || count < 0) throw std::invalid_argument("sample_point_pairs: bad sizes");
  std::uniform_int_distribution<std::int64_t> pick(0, pixel_count - 1);
  auto pairs = torch::empty({count, 2}, torch::kLong);
  auto acc = pairs.accessor<std::int64_t, 2>();
  for (std::int64_t i = 0; i < count; ++i) {
    acc[i][0] = pick(rng);
    acc[i][1] = pick(rng);
  }
  return pairs;
}

torch::Tensor confident_depth_ranking_loss(const torch::Tensor& depth,
                                           const torch::Tensor& pseudo_depth,
                                           const torch::Tensor& pairs,
                                           const RankingOptions& options) {
  require_same_shape(depth, pseudo_depth, "ranking inputs");
  if (pairs.dim() != 2 || pairs.size(1) != 2) {
    throw std::invalid_argument("ranking: pairs must be [N, 2]");
  }
  const auto b = depth.size(0);
  auto d = depth.reshape({b, -1});
  auto pd = pseudo_depth.detach().reshape({b, -1});
  auto ia = pairs.select(1, 0).to(torch::kLong).unsqueeze(0).expand({b, -1});
  auto ib = pairs.select(1, 1).to(torch::kLong).unsqueeze(0).expand({b, -1});
  auto pa = pd.gather(1, ia);
  auto pb = pd.gather(1, ib);
  auto da = d.gather(1, ia);
  auto db = d.gather(1, ib);
  auto a_farther = pa > pb * (1.0 + options.tau);
  auto b_farther = pb > pa * (1.0 + options.tau);
  auto confident = a_farther | b_farther;
  const auto count = confident.sum().item<std::int64_t>();
  if (count == 0) {
    log::warn("confident depth ranking: no confident pairs");
    return zero_like_graph(depth);
  }
  // The pseudo-farther point must stay farther by at least the margin.
  auto hinge = torch::where(a_farther, torch::relu(db - da + options.margin),
                            torch::relu(da - db + options.margin));
  return (hinge * confident.to(hinge.scalar_type())).sum() / static_cast<double>(count);
}

EdgePairs find_edge_pairs(const torch::Tensor& image, const EdgeOptions& options) {
  if (image.dim() != 4) throw std::invalid_argument("edge pairs: expected [B, C, H, W]");
  const auto b = image.size(0);
  const auto h = image.size(2);
  const auto w = image.size(3);
  auto gray = image.detach().to(torch::kFloat64).mean(1).contiguous();
  auto acc = gray.accessor<double, 3>();

  std::vector<std::int64_t> first, second, batch;
  std::vector<double> mags;
  for (std::int64_t n = 0; n < b; ++n) {
    mags.clear();
    for (std::int64_t y = 1; y + 1 < h; ++y) {
      for (std::int64_t x = 1; x + 1 < w; ++x) {
        const double gx = acc[n][y][x + 1] - acc[n][y][x - 1];
        const double gy = acc[n][y + 1][x] - acc[n][y - 1][x];
        mags.push_back(std::sqrt(gx * gx + gy * gy));
      }
    }
    if (mags.empty()) continue;
    auto sorted = mags;
    std::sort(sorted.begin(), sorted.end());
    const double pos = options.percentile * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double threshold = sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);

    for (std::int64_t y = 1; y + 1 < h; ++y) {
      for (std::int64_t x = 1; x + 1 < w; ++x) {
        const double gx = acc[n][y][x + 1] - acc[n][y][x - 1];
        const double gy = acc[n][y + 1][x] - acc[n][y - 1][x];
        if (!(std::sqrt(gx * gx + gy * gy) > threshold)) continue;
        const bool horizontal = std::abs(gx) >= std::abs(gy);
        const std::int64_t dx = horizontal ? 1 : 0;
        const std::int64_t dy = horizontal ? 0 : 1;
        // Both members need interior normals.
        if (x - dx < 1 || x + dx > w - 2 || y - dy < 1 || y + dy > h - 2) continue;
        first.push_back((y - dy) * w + (x - dx));
        second.push_back((y + dy) * w + (x + dx));
        batch.push_back(n);
      }
    }
  }
  EdgePairs out;
  out.first = torch::tensor(first, torch::kLong);
  out.second = torch::tensor(second, torch::kLong);
  out.batch = torch::tensor(batch, torch::kLong);
  return out;
}

torch::Tensor edge_aware_relative_normal_loss(const torch::Tensor& depth,
                                              const torch::Tensor& pseudo_depth,
                                              const torch::Tensor& image,
                                              const Intrinsics& intrinsics,
                                              const EdgeOptions& options) {
  require_same_shape(depth, pseudo_depth, "relative normal inputs");
  if ((depth <= 0).any().item<bool>() || (pseudo_depth <= 0).any().item<bool>()) {
    throw std::invalid_argument("relative normal: depths must be positive");
  }
  const auto pairs = find_edge_pairs(image, options);
  if (pairs.size() == 0) {
    log::warn("edge-aware relative normal: no edge pixels");
    return zero_like_graph(depth);
  }
  const auto b = depth.size(0);
  auto pred = surface_normals(depth, intrinsics);
  auto prior = surface_normals(pseudo_depth.detach(), intrinsics);

  auto pick = [&](const torch::Tensor& t, const torch::Tensor& idx) {
    // t [B, C, H, W] -> [N, C] at (batch, flat index)
    auto flat = t.reshape({b, t.size(1), -1}).permute({0, 2, 1});
    return flat.index({pairs.batch, idx});
  };
  auto valid = pick(pred.valid, pairs.first) & pick(pred.valid, pairs.second) &
               pick(prior.valid, pairs.first) & pick(prior.valid, pairs.second);
  valid = valid.squeeze(1);
  const auto count = valid.sum().item<std::int64_t>();
  if (count == 0) {
    log::warn("edge-aware relative normal: no edge pair with valid normals");
    return zero_like_graph(depth);
  }
  auto cos_pred = (pick(pred.normals, pairs.first) * pick(pred.normals, pairs.second)).sum(1);
  auto cos_prior = (pick(prior.normals, pairs.first) * pick(prior.normals, pairs.second)).sum(1);
  auto diff = (cos_pred - cos_prior).abs();
  return (diff * valid.to(diff.scalar_type())).sum() / static_cast<double>(count);
}

MinReprojection min_reprojection_with_automask(std::span<const torch::Tensor> per_source_errors,
                                               std::span<const torch::Tensor> identity_errors) {
  if (per_source_errors.empty() || identity_errors.empty()) {
    throw std::invalid_argument("min reprojection: need at least one source");
  }
  const auto shape = per_source_errors.front().sizes();
  for (const auto& e : per_source_errors) require_same_shape(e, per_source_errors.front(), "errors");
  for (const auto& e : identity_errors) {
    if (e.sizes() != shape) throw std::invalid_argument("shape mismatch: identity errors");
  }
  auto warped = torch::stack(std::vector<torch::Tensor>(per_source_errors.begin(),
                                                        per_source_errors.end()));
  auto identity = torch::stack(std::vector<torch::Tensor>(identity_errors.begin(),
                                                          identity_errors.end()));
  auto [best, index] = warped.min(0);
  auto best_identity = std::get<0>(identity.min(0));
  MinReprojection out;
  out.error = best;
  out.source_index = index;
  out.keep = best < best_identity;
  return out;
}

SelfSupervisionLoss total_self_supervision_loss(const LossTerms& terms,
                                                const LossWeights& weights) {
  weights.validate();
  const std::pair<const char*, const torch::Tensor*> named[] = {
      {"l_p", &terms.l_p},     {"l_p_masked", &terms.l_p_masked}, {"l_g", &terms.l_g},
      {"l_n", &terms.l_n},     {"l_cdr", &terms.l_cdr},           {"l_ern", &terms.l_ern}};
  for (const auto& [name, t] : named) {
    if (!t->defined()) throw std::invalid_argument(std::string("loss term missing: ") + name);
    if (!std::isfinite(t->item<double>())) {
      throw NonFiniteLossError(name, std::string("non-finite loss term ") + name);
    }
  }
  SelfSupervisionLoss out;
  out.total = weights.alpha * terms.l_p_masked + weights.beta * terms.l_g +
              weights.gamma * terms.l_n + weights.delta * terms.l_cdr +
              weights.epsilon * terms.l_ern;
  auto& r = out.breakdown;
  r.l_p = terms.l_p.item<double>();
  r.l_p_masked = terms.l_p_masked.item<double>();
  r.l_g = terms.l_g.item<double>();
  r.l_n = terms.l_n.item<double>();
  r.l_cdr = terms.l_cdr.item<double>();
  r.l_ern = terms.l_ern.item<double>();
  r.l_self = weights.alpha * r.l_p_masked + weights.beta * r.l_g + weights.gamma * r.l_n +
             weights.delta * r.l_cdr + weights.epsilon * r.l_ern;
  r.weights = weights;
  return out;
}

LossTerms self_supervision_terms(const ObjectiveInputs& in, const ObjectiveOptions& options) {
  const auto slots = in.sources.size();
  if (slots == 0 || in.source_depths.size() != slots || in.poses.size() != slots) {
    throw std::invalid_argument("objective: sources, source depths and poses must align");
  }
  // Stands in for the error of pixels that did not project into a slot.
  constexpr double kUnreachable = 1e3;

  std::vector<torch::Tensor> warped_errors, weighted_errors, identity_errors;
  std::vector<torch::Tensor> geometry_terms;
  for (std::size_t k = 0; k < slots; ++k) {
    auto warp = warp_frame(in.sources[k], in.source_depths[k], in.target_depth, in.poses[k],
                           in.intrinsics);
    auto error = photometric_error_map(warp.reconstruction, in.target, options.weights);
    auto inconsistency =
        depth_inconsistency(warp.projected_depth, warp.interpolated_depth, warp.validity);
    auto unreachable = torch::full_like(error, kUnreachable);
    warped_errors.push_back(torch::where(warp.validity, error, unreachable));
    weighted_errors.push_back((1.0 - inconsistency) * error);
    identity_errors.push_back(
        photometric_error_map(in.sources[k], in.target, options.weights).detach());
    if (warp.valid_count() > 0) {
      geometry_terms.push_back(geometry_consistency_loss(inconsistency, warp.validity));
    }
  }
  if (geometry_terms.empty()) throw EmptyValidityError("no pixel projected into any source");

  auto best = min_reprojection_with_automask(warped_errors, identity_errors);
  auto keep = best.keep & (best.error < kUnreachable);
  const auto count = keep.sum().item<std::int64_t>();
  if (count == 0) throw EmptyValidityError("no pixel survived automasking");
  auto keep_f = keep.to(best.error.scalar_type());
  auto weighted = torch::stack(weighted_errors).gather(0, best.source_index.unsqueeze(0)).squeeze(0);

  LossTerms t;
  t.l_p = (best.error * keep_f).sum() / static_cast<double>(count);
  t.l_p_masked = (weighted * keep_f).sum() / static_cast<double>(count);
  t.l_g = torch::stack(geometry_terms).mean();
  if (in.pseudo_depth.defined()) {
    t.l_n = normal_matching_loss(in.target_depth, in.pseudo_depth, in.intrinsics);
    t.l_cdr = in.ranking_pairs.defined() && in.ranking_pairs.size(0) > 0
                  ? confident_depth_ranking_loss(in.target_depth, in.pseudo_depth,
                                                 in.ranking_pairs, options.ranking)
                  : zero_like_graph(in.target_depth);
    t.l_ern = edge_aware_relative_normal_loss(in.target_depth, in.pseudo_depth, in.target,
                                              in.intrinsics, options.edges);
  } else {
    t.l_n = zero_like_graph(in.target_depth);
    t.l_cdr = zero_like_graph(in.target_depth);
    t.l_ern = zero_like_graph(in.target_depth);
  }
  return t;
}

}  // namespace fedmde
