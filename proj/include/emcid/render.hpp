#pragma once

#include <string>

#include "emcid/matrix.hpp"
#include "emcid/rng.hpp"

namespace emcid {

// Toy images are 8x8x3 arrays in [-1, 1], stored flat as a 1 x 192 row in
// (y, x, channel) order. Values are only clamped when rendering or
// classifying, never inside the diffusion chain.
inline constexpr int kImageH = 8;
inline constexpr int kImageW = 8;
inline constexpr int kImageC = 3;
inline constexpr int kImagePixels = kImageH * kImageW * kImageC;

enum class ShapeKind { Square, Circle, Triangle, Cross, Blob };

struct ColorSpec {
  double r, g, b;
};

ShapeKind shape_from_name(const std::string& name);
ColorSpec color_from_name(const std::string& name);

// Renders a shape with its center displaced by (jx, jy) in {-1, 0, 1}^2.
Matrix render_shape(ShapeKind shape, const ColorSpec& color, int jx, int jy);

// Mean over the 3x3 jitter grid; the pixel prototype used by the
// confidence oracle.
Matrix render_prototype(ShapeKind shape, const ColorSpec& color);

// Draws the jitter uniformly from {-1, 0, 1}^2.
Matrix render_sample(ShapeKind shape, const ColorSpec& color, Rng& rng);

Matrix clamp_image(const Matrix& img);

}  // namespace emcid
