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

#include "fedmde/cost_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "fedmde/errors.hpp"

namespace fedmde {

namespace {

double median_of(std::vector<double> v) {
  const auto n = v.size();
  std::sort(v.begin(), v.end());
  if (n % 2 == 1) return v[n / 2];
  return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<double> masked_values(const torch::Tensor& t, const torch::Tensor& mask) {
  auto sel = t.detach().to(torch::kFloat64).masked_select(mask.to(torch::kBool)).contiguous();
  return {sel.data_ptr<double>(), sel.data_ptr<double>() + sel.numel()};
}

}  // namespace

void Fraction::validate() const {
  if (denominator <= 0 || numerator <= 0 || numerator > denominator) {
    throw std::invalid_argument("fraction must lie in (0, 1]: " + to_string());
  }
}

std::string Fraction::to_string() const {
  if (numerator == denominator) return "1";
  return std::to_string(numerator) + "/" + std::to_string(denominator);
}

Fraction Fraction::parse(const std::string& text) {
  Fraction f;
  const auto slash = text.find('/');
  try {
    if (slash != std::string::npos) {
      f.numerator = std::stoll(text.substr(0, slash));
      f.denominator = std::stoll(text.substr(slash + 1));
    } else {
      const auto dot = text.find('.');
      if (dot == std::string::npos) {
        f.numerator = std::stoll(text);
        f.denominator = 1;
      } else {
        const auto decimals = text.size() - dot - 1;
        if (decimals > 12) throw std::invalid_argument("too many decimals");
        std::string digits = text.substr(0, dot) + text.substr(dot + 1);
        f.numerator = std::stoll(digits);
        f.denominator = 1;
        for (std::size_t i = 0; i < decimals; ++i) f.denominator *= 10;
      }
    }
  } catch (const std::logic_error&) {
    throw std::invalid_argument("cannot parse fraction: " + text);
  }
  const auto g = std::gcd(f.numerator, f.denominator);
  if (g > 0) {
    f.numerator /= g;
    f.denominator /= g;
  }
  f.validate();
  return f;
}

std::uint64_t comm_upper_bound(std::uint64_t rounds, std::uint64_t participants,
                               std::uint64_t omega_bytes) {
  return 2 * rounds * participants * omega_bytes;
}

double comm_lower_bound(std::uint64_t rounds, std::uint64_t participants, const Fraction& fraction,
                        std::uint64_t omega_bytes) {
  fraction.validate();
  // Integer numerator first so the only rounding is the final division.
  const auto scaled = 2 * rounds * participants * omega_bytes *
                      static_cast<std::uint64_t>(fraction.numerator);
  return static_cast<double>(scaled) / static_cast<double>(fraction.denominator);
}

std::uint64_t comm_per_participant_round(std::uint64_t omega_bytes) { return 2 * omega_bytes; }

std::uint64_t steps_centralized(std::uint64_t epochs, std::uint64_t batches_per_epoch) {
  return epochs * batches_per_epoch;
}

std::uint64_t steps_federated(std::span<const std::vector<ParticipantSteps>> rounds) {
  std::uint64_t total = 0;
  for (const auto& round : rounds) {
    for (const auto& p : round) total += p.epochs * p.batches;
  }
  return total;
}

torch::Tensor evaluation_mask(const torch::Tensor& ground_truth, double cap) {
  return (ground_truth > 0) & (ground_truth <= cap);
}

torch::Tensor median_scale_align(const torch::Tensor& pred, const torch::Tensor& ground_truth,
                                 const torch::Tensor& mask) {
  if (pred.sizes() != ground_truth.sizes() || pred.sizes() != mask.sizes()) {
    throw std::invalid_argument("median_scale_align: shape mismatch");
  }
  auto p = masked_values(pred, mask);
  auto g = masked_values(ground_truth, mask);
  if (p.empty()) throw EvaluationError("median_scale_align: no valid pixel");
  for (double x : p) {
    if (!(x > 0)) throw EvaluationError("median_scale_align: non-positive prediction");
  }
  const double scale = median_of(std::move(g)) / median_of(std::move(p));
  return pred.detach() * scale;
}

DepthMetrics depth_errors(const torch::Tensor& pred, const torch::Tensor& ground_truth,
                          const torch::Tensor& mask, double cap) {
  if (pred.sizes() != ground_truth.sizes() || pred.sizes() != mask.sizes()) {
    throw std::invalid_argument("depth_errors: shape mismatch");
  }
  auto p = masked_values(pred, mask);
  auto g = masked_values(ground_truth, mask);
  if (p.empty()) throw EvaluationError("depth_errors: no valid pixel");
  DepthMetrics m;
  double d1 = 0, d2 = 0, d3 = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = p[i];
    const double gi = std::min(g[i], cap);
    if (!(pi > 0) || !(gi > 0)) throw EvaluationError("depth_errors: non-positive depth");
    const double diff = pi - gi;
    m.abs_rel += std::abs(diff) / gi;
    m.sq_rel += diff * diff / gi;
    m.rms += diff * diff;
    const double ld = std::log(pi) - std::log(gi);
    m.rms_log += ld * ld;
    const double ratio = std::max(pi / gi, gi / pi);
    d1 += ratio < 1.25 ? 1 : 0;
    d2 += ratio < 1.25 * 1.25 ? 1 : 0;
    d3 += ratio < 1.25 * 1.25 * 1.25 ? 1 : 0;
  }
  const double n = static_cast<double>(p.size());
  m.abs_rel /= n;
  m.sq_rel /= n;
  m.rms = std::sqrt(m.rms / n);
  m.rms_log = std::sqrt(m.rms_log / n);
  m.delta1 = d1 / n;
  m.delta2 = d2 / n;
  m.delta3 = d3 / n;
  m.pixels = static_cast<std::int64_t>(p.size());
  return m;
}

DepthMetrics evaluate_depth(const torch::Tensor& pred, const torch::Tensor& ground_truth,
                            double cap) {
  auto mask = evaluation_mask(ground_truth, cap);
  return depth_errors(median_scale_align(pred, ground_truth, mask), ground_truth, mask, cap);
}

RegionMetrics region_split_errors(const torch::Tensor& pred, const torch::Tensor& ground_truth,
                                  const torch::Tensor& region_mask, double cap) {
  auto valid = evaluation_mask(ground_truth, cap);
  auto dynamic = valid & region_mask.to(torch::kBool);
  auto stat = valid & ~region_mask.to(torch::kBool);
  RegionMetrics out;
  if (dynamic.any().item<bool>()) out.dynamic_region = depth_errors(pred, ground_truth, dynamic, cap);
  if (stat.any().item<bool>()) out.static_region = depth_errors(pred, ground_truth, stat, cap);
  return out;
}

DepthMetrics average_metrics(std::span<const DepthMetrics> metrics) {
  if (metrics.empty()) throw EvaluationError("average_metrics: nothing to average");
  DepthMetrics out;
  for (const auto& m : metrics) {
    out.abs_rel += m.abs_rel;
    out.sq_rel += m.sq_rel;
    out.rms += m.rms;
    out.rms_log += m.rms_log;
    out.delta1 += m.delta1;
    out.delta2 += m.delta2;
    out.delta3 += m.delta3;
    out.pixels += m.pixels;
  }
  const double n = static_cast<double>(metrics.size());
  out.abs_rel /= n;
  out.sq_rel /= n;
  out.rms /= n;
  out.rms_log /= n;
  out.delta1 /= n;
  out.delta2 /= n;
  out.delta3 /= n;
  return out;
}

}  // namespace fedmde
