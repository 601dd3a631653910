#pragma once

#include "aef/data.hpp"
#include "aef/types.hpp"

#include <string>
#include <utility>

namespace aef::img {

/// floor(clip(x, 0, 1 - 1e-6) * 256), the fixed quantization rule for
/// emitted images.
unsigned char quantize_pixel(double v);

/// Writes a planar (c*h*w) image with values in [0, 1); c must be 1 or 3.
void write_png(const std::string& path, const Vector& planar,
               const data::ImageShape& shape);

/// Tiles samples (dim x count) into a ceil(sqrt(count))-per-side grid.
/// Non-image vectors are treated as 1 x dim strips.
std::pair<Vector, data::ImageShape> tile_grid(
    const Matrix& samples, const std::optional<data::ImageShape>& shape);

/// Stacks two equal-width images vertically.
std::pair<Vector, data::ImageShape> vstack(
    const std::pair<Vector, data::ImageShape>& top,
    const std::pair<Vector, data::ImageShape>& bottom);

}  // namespace aef::img
