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

#include "fedmde/kitti_dataset.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include "fedmde/log.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "fedmde/errors.hpp"

namespace fedmde {

namespace fs = std::filesystem;

namespace {

struct FramePath {
  std::string drive;
  fs::path relative;
  std::string stem;
};

FramePath parse_frame_path(const std::string& line) {
  FramePath f;
  f.relative = fs::path(line);
  if (f.relative.begin() == f.relative.end()) throw IngestionError("empty frame path in split");
  f.drive = f.relative.begin()->string();
  f.stem = f.relative.stem().string();
  return f;
}

// Neighbouring frame with the same zero-padded width.
fs::path neighbour(const FramePath& f, long offset) {
  const long index = std::stol(f.stem) + offset;
  if (index < 0) return {};
  std::string name = std::to_string(index);
  if (name.size() < f.stem.size()) name.insert(0, f.stem.size() - name.size(), '0');
  return f.relative.parent_path() / (name + f.relative.extension().string());
}

torch::Tensor read_color(const fs::path& path, std::int64_t width, std::int64_t height) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) return {};
  cv::Mat resized;
  cv::resize(bgr, resized, cv::Size(static_cast<int>(width), static_cast<int>(height)), 0, 0,
             cv::INTER_AREA);
  cv::Mat rgb;
  cv::cvtColor(resized, rgb, cv::COLOR_BGR2RGB);
  auto t = torch::from_blob(rgb.data, {height, width, 3}, torch::kUInt8).clone();
  return ingest_image(t.permute({2, 0, 1}).to(torch::kFloat32) / 255.0);
}

torch::Tensor read_depth_png(const fs::path& path, std::int64_t width, std::int64_t height) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_ANYDEPTH);
  if (raw.empty()) return {};
  cv::Mat metres;
  raw.convertTo(metres, CV_32F, 1.0 / 256.0);
  cv::Mat resized;
  cv::resize(metres, resized, cv::Size(static_cast<int>(width), static_cast<int>(height)), 0, 0,
             cv::INTER_NEAREST);
  return torch::from_blob(resized.data, {1, height, width}, torch::kFloat32).clone();
}

Intrinsics drive_intrinsics(const fs::path& root, const std::string& drive,
                            std::vector<std::string>& missing) {
  for (const auto& candidate : {root / drive / "calib.txt", root / "calib.txt"}) {
    if (fs::exists(candidate)) return Intrinsics::load(candidate);
  }
  missing.push_back((root / drive / "calib.txt").string());
  return {};
}

}  // namespace

std::vector<Sample> load_kitti_layout(const fs::path& root, const fs::path& split_file,
                                      const KittiOptions& options) {
  if (options.sources != 1 && options.sources != 2) {
    throw std::invalid_argument("kitti: sources must be 1 or 2");
  }
  std::ifstream split(split_file);
  if (!split) throw IngestionError("missing split file " + split_file.string());

  std::vector<FramePath> frames;
  std::string line;
  while (std::getline(split, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    frames.push_back(parse_frame_path(line));
  }

  std::vector<std::string> missing;
  std::map<std::string, Intrinsics> calib;
  for (const auto& f : frames) {
    if (!calib.count(f.drive)) calib[f.drive] = drive_intrinsics(root, f.drive, missing);
    std::vector<fs::path> needed = {f.relative, neighbour(f, +1)};
    if (options.sources == 2) needed.push_back(neighbour(f, -1));
    for (const auto& p : needed) {
      if (p.empty() || !fs::exists(root / p)) {
        missing.push_back((root / (p.empty() ? f.relative : p)).string() +
                          (p.empty() ? " (no previous frame)" : ""));
      }
    }
  }
  if (!missing.empty()) {
    std::ostringstream msg;
    msg << "kitti: " << missing.size() << " missing file(s):";
    for (const auto& m : missing) msg << "\n  " << m;
    throw IngestionError(msg.str());
  }

  std::vector<Sample> samples;
  for (const auto& f : frames) {
    Sample s;
    s.id = f.relative.generic_string();
    s.drive_id = f.drive;
    s.intrinsics = calib.at(f.drive).resized(options.width, options.height);
    s.target = read_color(root / f.relative, options.width, options.height);
    std::vector<fs::path> source_paths;
    if (options.sources == 2) source_paths.push_back(neighbour(f, -1));
    source_paths.push_back(neighbour(f, +1));
    bool ok = s.target.defined();
    for (const auto& p : source_paths) {
      auto img = read_color(root / p, options.width, options.height);
      ok = ok && img.defined();
      s.sources.push_back(img);
      s.source_ids.push_back(p.generic_string());
    }
    if (!ok) {
      log::warn("kitti: skipping unreadable frame " + s.id);
      continue;
    }
    const auto gt_path = root / f.drive / "proj_depth" / "groundtruth" / "image_02" /
                         (f.stem + ".png");
    if (fs::exists(gt_path)) {
      auto gt = read_depth_png(gt_path, options.width, options.height);
      if (gt.defined()) {
        s.ground_truth = gt.clamp_max(options.max_depth);
      } else {
        log::warn("kitti: unreadable ground truth " + gt_path.string());
      }
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

FilePseudoDepth::FilePseudoDepth(fs::path root, std::int64_t width, std::int64_t height)
    : root_(std::move(root)), width_(width), height_(height) {}

torch::Tensor FilePseudoDepth::predict(const std::string& frame_id, const torch::Tensor&) const {
  const auto f = parse_frame_path(frame_id);
  const auto path = root_ / f.drive / "pseudo_depth" / (f.stem + ".png");
  auto depth = read_depth_png(path, width_, height_);
  if (!depth.defined()) throw IngestionError("missing pseudo depth " + path.string());
  return depth.clamp_min(kMinDepth);
}

}  // namespace fedmde
