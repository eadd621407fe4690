#pragma once

#include <Eigen/Core>

#include "hgen/io.hpp"
#include "hgen/mesh.hpp"

namespace hgen {

using Mat3 = Eigen::Matrix3d;

/// Orthographic camera. The canonical box [-1,1]^3 maps onto the full image;
/// camera-frame depth runs from -1 (nearest the viewer) to +1.
struct Camera {
  int image_size = 128;
  double scale = 64.0;  ///< pixels per canonical unit
  Mat3 rotation = Mat3::Identity();  ///< canonical -> camera frame

  static Camera frontal(int image_size);
  /// Rotation by `azimuth` radians about the vertical axis.
  static Camera orbit(int image_size, double azimuth);
  /// Same view, different pixel grid (feature maps share the image's
  /// alignment at their own resolution).
  Camera resized(int image_size) const;
  void validate() const;

  Json to_json() const;
  static Camera from_json(const Json& j);
};

struct Projection {
  Vec2 pixel;
  double depth = 0.0;
};

Projection project(const Vec3& p, const Camera& camera);
Vec3 backproject(const Vec2& pixel, double depth, const Camera& camera);

inline Vec2 pixel_center(int row, int col) { return {col + 0.5, row + 0.5}; }

}  // namespace hgen
