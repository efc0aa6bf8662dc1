#include "moco/types.hpp"

#include <algorithm>

namespace moco {

std::string role_name(FrameRole r) {
  switch (r) {
    case FrameRole::PERF: return "PERF";
    case FrameRole::PD: return "PD";
    case FrameRole::AIF: return "AIF";
  }
  throw std::invalid_argument("unknown frame role");
}

FrameRole role_from_name(const std::string& s) {
  if (s == "PERF") return FrameRole::PERF;
  if (s == "PD") return FrameRole::PD;
  if (s == "AIF") return FrameRole::AIF;
  throw std::invalid_argument("unknown frame role tag: " + s);
}

void DynamicSeries::validate() const {
  if (frames.empty()) throw std::invalid_argument("series has no frames");
  if (roles.size() != frames.size())
    throw std::invalid_argument("role tags do not match frame count");
  if (n_frames() < 3) throw std::invalid_argument("series needs at least 3 frames");
  for (const Image& f : frames) {
    if (f.rows() != height || f.cols() != width)
      throw std::invalid_argument("frame dimensions differ within series");
    if (!f.isFinite().all() || (f < 0.0).any())
      throw std::invalid_argument("frame intensities must be finite and non-negative");
  }
  // PD frames, when present, precede the first PERF frame.
  int first_perf = -1;
  for (int i = 0; i < n_frames(); ++i)
    if (roles[i] == FrameRole::PERF) { first_perf = i; break; }
  if (first_perf >= 0) {
    for (int i = first_perf; i < n_frames(); ++i)
      if (roles[i] == FrameRole::PD)
        throw std::invalid_argument("PD frame after first PERF frame");
  }
}

std::vector<int> DynamicSeries::indices_with_role(FrameRole r) const {
  std::vector<int> out;
  for (int i = 0; i < n_frames(); ++i)
    if (roles[i] == r) out.push_back(i);
  return out;
}

Eigen::MatrixXd DynamicSeries::as_matrix() const {
  const int T = n_frames();
  const int P = width * height;
  Eigen::MatrixXd m(T, P);
  for (int t = 0; t < T; ++t) {
    const Image& f = frames[t];
    for (int r = 0; r < height; ++r)
      for (int c = 0; c < width; ++c) m(t, r * width + c) = f(r, c);
  }
  return m;
}

Image DynamicSeries::frame_from_row(const Eigen::VectorXd& row, int height, int width) {
  if (row.size() != static_cast<Eigen::Index>(height) * width)
    throw std::invalid_argument("row length does not match frame dimensions");
  Image f(height, width);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) f(r, c) = row(r * width + c);
  return f;
}

void Mask::validate() const {
  if (labels.rows() != height || labels.cols() != width)
    throw std::invalid_argument("mask dimensions mismatch");
  if ((labels < 0).any()) throw std::invalid_argument("negative mask label");
  // Label set contiguous from 0.
  const int mx = labels.maxCoeff();
  std::vector<bool> seen(static_cast<size_t>(mx) + 1, false);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) seen[static_cast<size_t>(labels(r, c))] = true;
  for (int v = 0; v <= mx; ++v)
    if (!seen[static_cast<size_t>(v)])
      throw std::invalid_argument("mask label set not contiguous");
}

int Mask::n_labels() const { return labels.size() ? labels.maxCoeff() : 0; }

std::vector<std::pair<int, int>> Mask::pixels_with_label(int lab) const {
  std::vector<std::pair<int, int>> out;
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c)
      if (labels(r, c) == lab) out.emplace_back(r, c);
  return out;
}

BoundingBox BoundingBox::clamped(int width, int height) const {
  if (side > width || side > height)
    throw std::invalid_argument("bounding box larger than image");
  BoundingBox b = *this;
  b.x0 = std::clamp(b.x0, 0, width - side);
  b.y0 = std::clamp(b.y0, 0, height - side);
  return b;
}

}  // namespace moco
