#include "moco/series_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace moco {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path stem_path(const fs::path& path) {
  fs::path p = path;
  std::string name = p.filename().string();
  for (const char* suffix : {".json", ".raw", ".dseries"}) {
    if (name.size() > std::strlen(suffix) &&
        name.ends_with(suffix)) {
      name.resize(name.size() - std::strlen(suffix));
      break;
    }
  }
  p.replace_filename(name);
  return p;
}

std::vector<char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  return bytes;
}

void write_bytes(const fs::path& p, const char* data, size_t n) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out.write(data, static_cast<std::streamsize>(n));
  if (!out) throw std::runtime_error("write failed for " + p.string());
}

float to_le_f32(double v) {
  // Host is little-endian on all supported targets; keep the conversion
  // explicit so the format stays pinned.
  return static_cast<float>(v);
}

}  // namespace

DynamicSeries load_series(const std::filesystem::path& path) {
  const fs::path stem = stem_path(path);
  json hdr;
  {
    std::ifstream in(stem.string() + ".json");
    if (!in) throw std::runtime_error("cannot open " + stem.string() + ".json");
    in >> hdr;
  }
  DynamicSeries s;
  s.width = hdr.at("width").get<int>();
  s.height = hdr.at("height").get<int>();
  const int n = hdr.at("n_frames").get<int>();
  s.frame_interval = hdr.value("frame_interval", 1.0);
  s.pixel_spacing = hdr.value("pixel_spacing", 1.0);
  for (const auto& r : hdr.at("roles")) s.roles.push_back(role_from_name(r.get<std::string>()));
  if (static_cast<int>(s.roles.size()) != n)
    throw std::runtime_error("role tag count disagrees with n_frames");

  const std::vector<char> bytes = read_bytes(stem.string() + ".raw");
  const size_t expect = static_cast<size_t>(n) * s.width * s.height * sizeof(float);
  if (bytes.size() != expect)
    throw std::runtime_error("payload size mismatch: expected " + std::to_string(expect) +
                             " bytes, got " + std::to_string(bytes.size()));
  const float* f32 = reinterpret_cast<const float*>(bytes.data());
  for (int t = 0; t < n; ++t) {
    Image f(s.height, s.width);
    for (int r = 0; r < s.height; ++r)
      for (int c = 0; c < s.width; ++c) {
        const double v = static_cast<double>(*f32++);
        if (!std::isfinite(v)) throw std::runtime_error("non-finite value in payload");
        f(r, c) = v;
      }
    s.frames.push_back(std::move(f));
  }
  s.validate();
  return s;
}

void save_series(const DynamicSeries& series, const std::filesystem::path& path) {
  series.validate();
  const fs::path stem = stem_path(path);
  json hdr;
  hdr["width"] = series.width;
  hdr["height"] = series.height;
  hdr["n_frames"] = series.n_frames();
  hdr["frame_interval"] = series.frame_interval;
  hdr["pixel_spacing"] = series.pixel_spacing;
  std::vector<std::string> roles;
  for (FrameRole r : series.roles) roles.push_back(role_name(r));
  hdr["roles"] = roles;
  {
    std::ofstream out(stem.string() + ".json");
    if (!out) throw std::runtime_error("cannot write " + stem.string() + ".json");
    out << hdr.dump(2) << "\n";
  }
  std::vector<float> payload;
  payload.reserve(static_cast<size_t>(series.n_frames()) * series.width * series.height);
  for (const Image& f : series.frames)
    for (int r = 0; r < series.height; ++r)
      for (int c = 0; c < series.width; ++c) payload.push_back(to_le_f32(f(r, c)));
  write_bytes(stem.string() + ".raw", reinterpret_cast<const char*>(payload.data()),
              payload.size() * sizeof(float));
}

Image load_image(const std::filesystem::path& path) {
  const fs::path stem = stem_path(path);
  json hdr;
  {
    std::ifstream in(stem.string() + ".json");
    if (!in) throw std::runtime_error("cannot open " + stem.string() + ".json");
    in >> hdr;
  }
  const int width = hdr.at("width").get<int>();
  const int height = hdr.at("height").get<int>();
  const std::vector<char> bytes = read_bytes(stem.string() + ".raw");
  const size_t expect = static_cast<size_t>(width) * height * sizeof(float);
  if (bytes.size() != expect)
    throw std::runtime_error("payload size mismatch: expected " + std::to_string(expect) +
                             " bytes, got " + std::to_string(bytes.size()));
  const float* f32 = reinterpret_cast<const float*>(bytes.data());
  Image img(height, width);
  // Unlike series frames, single images may carry NaN (e.g. parameter maps
  // undefined outside a region of interest).
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) img(r, c) = static_cast<double>(*f32++);
  return img;
}

void save_image(const Image& image, const std::filesystem::path& path) {
  const fs::path stem = stem_path(path);
  json hdr;
  hdr["width"] = static_cast<int>(image.cols());
  hdr["height"] = static_cast<int>(image.rows());
  {
    std::ofstream out(stem.string() + ".json");
    if (!out) throw std::runtime_error("cannot write " + stem.string() + ".json");
    out << hdr.dump(2) << "\n";
  }
  std::vector<float> payload;
  payload.reserve(static_cast<size_t>(image.size()));
  for (int r = 0; r < image.rows(); ++r)
    for (int c = 0; c < image.cols(); ++c) payload.push_back(to_le_f32(image(r, c)));
  write_bytes(stem.string() + ".raw", reinterpret_cast<const char*>(payload.data()),
              payload.size() * sizeof(float));
}

Mask load_mask(const std::filesystem::path& path) {
  fs::path stem = stem_path(path);
  std::string name = stem.filename().string();
  if (name.ends_with(".mask")) { name.resize(name.size() - 5); stem.replace_filename(name); }
  json hdr;
  {
    std::ifstream in(stem.string() + ".mask.json");
    if (!in) throw std::runtime_error("cannot open " + stem.string() + ".mask.json");
    in >> hdr;
  }
  Mask m;
  m.width = hdr.at("width").get<int>();
  m.height = hdr.at("height").get<int>();
  const std::vector<char> bytes = read_bytes(stem.string() + ".mask.raw");
  if (bytes.size() != static_cast<size_t>(m.width) * m.height)
    throw std::runtime_error("mask payload size mismatch");
  m.labels.resize(m.height, m.width);
  const uint8_t* p = reinterpret_cast<const uint8_t*>(bytes.data());
  for (int r = 0; r < m.height; ++r)
    for (int c = 0; c < m.width; ++c) m.labels(r, c) = *p++;
  m.validate();
  return m;
}

void save_mask(const Mask& mask, const std::filesystem::path& path) {
  mask.validate();
  fs::path stem = stem_path(path);
  std::string name = stem.filename().string();
  if (name.ends_with(".mask")) { name.resize(name.size() - 5); stem.replace_filename(name); }
  json hdr;
  hdr["width"] = mask.width;
  hdr["height"] = mask.height;
  {
    std::ofstream out(stem.string() + ".mask.json");
    if (!out) throw std::runtime_error("cannot write mask sidecar");
    out << hdr.dump(2) << "\n";
  }
  std::vector<uint8_t> payload;
  payload.reserve(static_cast<size_t>(mask.width) * mask.height);
  for (int r = 0; r < mask.height; ++r)
    for (int c = 0; c < mask.width; ++c) {
      const int v = mask.labels(r, c);
      if (v > 255) throw std::runtime_error("mask label exceeds uint8 range");
      payload.push_back(static_cast<uint8_t>(v));
    }
  write_bytes(stem.string() + ".mask.raw", reinterpret_cast<const char*>(payload.data()),
              payload.size());
}

Image crop(const Image& image, const BoundingBox& box) {
  const BoundingBox b = box.clamped(static_cast<int>(image.cols()), static_cast<int>(image.rows()));
  return image.block(b.y0, b.x0, b.side, b.side);
}

Mask crop(const Mask& mask, const BoundingBox& box) {
  const BoundingBox b = box.clamped(mask.width, mask.height);
  Mask out;
  out.width = b.side;
  out.height = b.side;
  out.labels = mask.labels.block(b.y0, b.x0, b.side, b.side);
  return out;
}

DynamicSeries crop(const DynamicSeries& series, const BoundingBox& box) {
  series.validate();
  const BoundingBox b = box.clamped(series.width, series.height);
  DynamicSeries out = series;
  out.width = b.side;
  out.height = b.side;
  out.frames.clear();
  for (const Image& f : series.frames) out.frames.push_back(crop(f, b));
  return out;
}

DynamicSeries normalize_01(const DynamicSeries& series) {
  series.validate();
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (const Image& f : series.frames) {
    lo = std::min(lo, f.minCoeff());
    hi = std::max(hi, f.maxCoeff());
  }
  DynamicSeries out = series;
  if (hi <= lo) {
    for (Image& f : out.frames) f.setZero();
    return out;
  }
  for (Image& f : out.frames) f = (f - lo) / (hi - lo);
  return out;
}

Image hist_equalize(const Image& image) {
  if (!image.isFinite().all() || (image < 0.0).any() || (image > 1.0).any())
    throw std::invalid_argument("hist_equalize expects intensities in [0,1]");
  constexpr int kBins = 256;
  Eigen::ArrayXd hist = Eigen::ArrayXd::Zero(kBins);
  const auto bin_of = [](double v) {
    return std::min(kBins - 1, static_cast<int>(v * kBins));
  };
  const int n = static_cast<int>(image.size());
  for (int i = 0; i < n; ++i) hist(bin_of(image(i))) += 1.0;
  Eigen::ArrayXd cdf(kBins);
  double acc = 0.0;
  for (int b = 0; b < kBins; ++b) { acc += hist(b); cdf(b) = acc / n; }
  Image out(image.rows(), image.cols());
  for (int i = 0; i < n; ++i) out(i) = cdf(bin_of(image(i)));
  return out;
}

Image resize_bilinear(const Image& image, int rows, int cols) {
  const int h = static_cast<int>(image.rows()), w = static_cast<int>(image.cols());
  Image out(rows, cols);
  const double ry = rows > 1 ? static_cast<double>(h - 1) / (rows - 1) : 0.0;
  const double rx = cols > 1 ? static_cast<double>(w - 1) / (cols - 1) : 0.0;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const double y = r * ry, x = c * rx;
      const int r0 = static_cast<int>(y), c0 = static_cast<int>(x);
      const int r1 = std::min(r0 + 1, h - 1), c1 = std::min(c0 + 1, w - 1);
      const double fy = y - r0, fx = x - c0;
      out(r, c) = (1 - fy) * ((1 - fx) * image(r0, c0) + fx * image(r0, c1)) +
                  fy * ((1 - fx) * image(r1, c0) + fx * image(r1, c1));
    }
  return out;
}

}  // namespace moco
