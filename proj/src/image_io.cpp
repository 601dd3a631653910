#include "aef/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <vector>

namespace aef::img {

unsigned char quantize_pixel(double v) {
  const double c = std::clamp(v, 0.0, 1.0 - 1e-6);
  return static_cast<unsigned char>(std::floor(c * 256.0));
}

void write_png(const std::string& path, const Vector& planar,
               const data::ImageShape& shape) {
  require(shape.c == 1 || shape.c == 3, "write_png: channels must be 1 or 3");
  require(planar.size() == shape.size(), "write_png: size mismatch");

  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw NumericError("write_png: cannot open " + path);

  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw NumericError("write_png: libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw NumericError("write_png: libpng error while writing " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(shape.w),
               static_cast<png_uint_32>(shape.h), 8,
               shape.c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<unsigned char> row(static_cast<std::size_t>(shape.w * shape.c));
  const Index plane = shape.h * shape.w;
  for (Index y = 0; y < shape.h; ++y) {
    for (Index x = 0; x < shape.w; ++x)
      for (Index ch = 0; ch < shape.c; ++ch)
        row[x * shape.c + ch] =
            quantize_pixel(planar[ch * plane + y * shape.w + x]);
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

std::pair<Vector, data::ImageShape> tile_grid(
    const Matrix& samples, const std::optional<data::ImageShape>& shape) {
  require(samples.cols() >= 1, "tile_grid: no samples");
  data::ImageShape cell =
      shape ? *shape : data::ImageShape{1, 1, samples.rows()};
  require(cell.size() == samples.rows(), "tile_grid: shape mismatch");

  const Index count = samples.cols();
  const Index side = static_cast<Index>(
      std::ceil(std::sqrt(static_cast<double>(count))));
  data::ImageShape grid{cell.c, side * cell.h, side * cell.w};
  Vector out = Vector::Zero(grid.size());
  const Index cell_plane = cell.h * cell.w;
  const Index grid_plane = grid.h * grid.w;
  for (Index k = 0; k < count; ++k) {
    const Index gy = (k / side) * cell.h;
    const Index gx = (k % side) * cell.w;
    for (Index ch = 0; ch < cell.c; ++ch)
      for (Index y = 0; y < cell.h; ++y)
        for (Index x = 0; x < cell.w; ++x)
          out[ch * grid_plane + (gy + y) * grid.w + (gx + x)] =
              samples(ch * cell_plane + y * cell.w + x, k);
  }
  return {std::move(out), grid};
}

std::pair<Vector, data::ImageShape> vstack(
    const std::pair<Vector, data::ImageShape>& top,
    const std::pair<Vector, data::ImageShape>& bottom) {
  const auto& [tv, ts] = top;
  const auto& [bv, bs] = bottom;
  require(ts.c == bs.c && ts.w == bs.w, "vstack: incompatible shapes");
  data::ImageShape out{ts.c, ts.h + bs.h, ts.w};
  Vector v(out.size());
  const Index out_plane = out.h * out.w;
  for (Index ch = 0; ch < out.c; ++ch) {
    v.segment(ch * out_plane, ts.h * ts.w) =
        tv.segment(ch * ts.h * ts.w, ts.h * ts.w);
    v.segment(ch * out_plane + ts.h * ts.w, bs.h * bs.w) =
        bv.segment(ch * bs.h * bs.w, bs.h * bs.w);
  }
  return {std::move(v), out};
}

}  // namespace aef::img
