#ifndef MOCO_SERIES_IO_HPP
#define MOCO_SERIES_IO_HPP

#include <filesystem>

#include "moco/types.hpp"

namespace moco {

// .dseries on disk = <name>.json sidecar + <name>.raw payload.
// Payload: little-endian float32, row-major within a frame, frame-major.
// `path` names the common stem, with or without the .json/.raw suffix.
DynamicSeries load_series(const std::filesystem::path& path);
void save_series(const DynamicSeries& series, const std::filesystem::path& path);

// Masks: <name>.mask.json + uint8 raw payload.
Mask load_mask(const std::filesystem::path& path);
void save_mask(const Mask& mask, const std::filesystem::path& path);

// Single image in the same header + float32 payload layout as a series.
Image load_image(const std::filesystem::path& path);
void save_image(const Image& image, const std::filesystem::path& path);

DynamicSeries crop(const DynamicSeries& series, const BoundingBox& box);
Image crop(const Image& image, const BoundingBox& box);
Mask crop(const Mask& mask, const BoundingBox& box);

// Global min-max rescale over the whole series; constant series maps to zeros.
DynamicSeries normalize_01(const DynamicSeries& series);

// 256-bin global histogram equalization; input and output in [0,1].
Image hist_equalize(const Image& image);

Image resize_bilinear(const Image& image, int rows, int cols);

}  // namespace moco

#endif
