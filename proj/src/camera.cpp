#include "hgen/camera.hpp"

#include <cmath>

namespace hgen {

Camera Camera::frontal(int image_size) { return orbit(image_size, 0.0); }

Camera Camera::orbit(int image_size, double azimuth) {
  Camera c;
  c.image_size = image_size;
  c.scale = image_size / 2.0;
  const double s = std::sin(azimuth), co = std::cos(azimuth);
  c.rotation << co, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, co;
  if (azimuth == 0.0) c.rotation = Mat3::Identity();
  c.validate();
  return c;
}

Camera Camera::resized(int size) const {
  Camera c = *this;
  c.image_size = size;
  c.scale = scale * size / image_size;
  return c;
}

void Camera::validate() const {
  if (!(scale > 0.0) || image_size <= 0) throw ContractError("camera: scale and image size must be positive");
  if (!(rotation * rotation.transpose()).isApprox(Mat3::Identity(), 1e-6) ||
      (rotation * rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6)
    throw ContractError("camera: rotation is not orthonormal");
}

Json Camera::to_json() const {
  Json r = Json::array();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r.push_back(rotation(i, j));
  return {{"kind", "orthographic"}, {"image_size", image_size}, {"scale", scale}, {"rotation", r}};
}

Camera Camera::from_json(const Json& j) {
  Camera c;
  if (j.at("kind").get<std::string>() != "orthographic") throw ContractError("camera: only orthographic supported");
  c.image_size = j.at("image_size").get<int>();
  c.scale = j.at("scale").get<double>();
  const auto r = j.at("rotation").get<std::vector<double>>();
  if (r.size() != 9) throw ContractError("camera: rotation must have 9 entries");
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) c.rotation(i, k) = r[i * 3 + k];
  c.validate();
  return c;
}

Projection project(const Vec3& p, const Camera& camera) {
  const Vec3 q = camera.rotation * p;
  return {Vec2(camera.scale * (q.x() + 1.0), camera.scale * (1.0 - q.y())), q.z()};
}

Vec3 backproject(const Vec2& pixel, double depth, const Camera& camera) {
  const Vec3 q(pixel.x() / camera.scale - 1.0, 1.0 - pixel.y() / camera.scale, depth);
  return camera.rotation.transpose() * q;
}

}  // namespace hgen
