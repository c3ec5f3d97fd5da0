#include "emcid/render.hpp"

#include <cmath>

namespace emcid {

ShapeKind shape_from_name(const std::string& name) {
  if (name == "square") return ShapeKind::Square;
  if (name == "circle") return ShapeKind::Circle;
  if (name == "triangle") return ShapeKind::Triangle;
  if (name == "cross") return ShapeKind::Cross;
  if (name == "blob") return ShapeKind::Blob;
  throw ConfigError("unknown shape '" + name + "'");
}

ColorSpec color_from_name(const std::string& name) {
  if (name == "red") return {1.0, -1.0, -1.0};
  if (name == "green") return {-1.0, 1.0, -1.0};
  if (name == "blue") return {-1.0, -1.0, 1.0};
  if (name == "yellow") return {1.0, 1.0, -1.0};
  if (name == "gray") return {0.15, 0.15, 0.15};
  throw ConfigError("unknown color '" + name + "'");
}

namespace {

bool inside_shape(ShapeKind shape, double dx, double dy) {
  switch (shape) {
    case ShapeKind::Square:
      return std::abs(dx) <= 1.6 && std::abs(dy) <= 1.6;
    case ShapeKind::Circle:
      return dx * dx + dy * dy <= 2.3 * 2.3;
    case ShapeKind::Triangle:
      // Upward triangle: widens towards the bottom row.
      return dy >= -2.0 && dy <= 1.6 && std::abs(dx) <= 0.35 + 0.75 * (dy + 2.0);
    case ShapeKind::Cross:
      return (std::abs(dx) <= 0.7 && std::abs(dy) <= 2.4) ||
             (std::abs(dy) <= 0.7 && std::abs(dx) <= 2.4);
    case ShapeKind::Blob:
      return dx * dx + dy * dy <= 2.7 * 2.7;
  }
  return false;
}

}  // namespace

Matrix render_shape(ShapeKind shape, const ColorSpec& color, int jx, int jy) {
  Matrix img(1, kImagePixels);
  const double cx = (kImageW - 1) / 2.0 + jx;
  const double cy = (kImageH - 1) / 2.0 + jy;
  for (int y = 0; y < kImageH; ++y) {
    for (int x = 0; x < kImageW; ++x) {
      const bool hit = inside_shape(shape, x - cx, y - cy);
      const int base = (y * kImageW + x) * kImageC;
      if (hit) {
        img(0, base + 0) = color.r;
        img(0, base + 1) = color.g;
        img(0, base + 2) = color.b;
      } else {
        img(0, base + 0) = -1.0;
        img(0, base + 1) = -1.0;
        img(0, base + 2) = -1.0;
      }
    }
  }
  return img;
}

Matrix render_prototype(ShapeKind shape, const ColorSpec& color) {
  Matrix acc(1, kImagePixels);
  for (int jy = -1; jy <= 1; ++jy)
    for (int jx = -1; jx <= 1; ++jx) acc = add(acc, render_shape(shape, color, jx, jy));
  return scale(acc, 1.0 / 9.0);
}

Matrix render_sample(ShapeKind shape, const ColorSpec& color, Rng& rng) {
  const int jx = int(rng.below(3)) - 1;
  const int jy = int(rng.below(3)) - 1;
  return render_shape(shape, color, jx, jy);
}

Matrix clamp_image(const Matrix& img) {
  Matrix out = img;
  double* d = out.data();
  for (size_t i = 0; i < out.size(); ++i) d[i] = std::min(1.0, std::max(-1.0, d[i]));
  return out;
}

}  // namespace emcid
