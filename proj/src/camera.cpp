#include "nvist/camera.h"

#include <Eigen/Geometry>
#include <cmath>
#include <limits>
#include <string>

namespace nvist {

void CameraPose::validate() const {
  const double ortho = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (!(ortho <= 1e-6)) throw GeometryError("camera rotation is not orthonormal (error " + std::to_string(ortho) + ")");
  const double det = rotation.determinant();
  if (!(std::abs(det - 1.0) <= 1e-6)) throw GeometryError("camera rotation has determinant " + std::to_string(det));
  if (!(focal > 0.0)) throw GeometryError("focal length must be positive");
  if (width <= 0 || height <= 0) throw GeometryError("image size must be positive");
  if (!center.allFinite()) throw GeometryError("camera center is not finite");
}

CameraPose SceneNormalization::apply(const CameraPose& pose) const {
  CameraPose out = pose;
  out.center = apply(pose.center);
  return out;
}

NormalizedScene normalize_scene(const std::vector<Eigen::Vector3d>& points, const std::vector<CameraPose>& poses,
                                std::size_t input_index) {
  if (poses.size() < 2) throw GeometryError("normalize_scene needs at least two poses");
  if (input_index >= poses.size()) throw GeometryError("input index out of range");
  if (points.empty()) throw GeometryError("normalize_scene needs a non-empty point cloud");
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector3d hi = -lo;
  for (const auto& p : points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const Eigen::Vector3d extent = hi - lo;
  if (!(extent.minCoeff() > 0.0)) throw GeometryError("degenerate point cloud: bounding box has zero volume");

  NormalizedScene out;
  out.normalization.scale = 1.0 / extent.maxCoeff();
  out.normalization.translation = -0.5 * (lo + hi);
  out.poses.reserve(poses.size());
  for (const auto& pose : poses) {
    pose.validate();
    out.poses.push_back(out.normalization.apply(pose));
  }
  out.normalization.z = out.poses[input_index].center.norm();
  if (!(out.normalization.z > 0.0)) throw GeometryError("input camera sits at the scene centroid");
  return out;
}

Eigen::Vector3d conditioned_input_center(double z) { return {0.0, 0.0, -z}; }

CameraPose relativize_pose(const CameraPose& input, const CameraPose& target, double z) {
  input.validate();
  target.validate();
  if (!(z > 0.0)) throw GeometryError("camera distance z must be positive");
  CameraPose out = target;
  // R^T R is the identity in exact arithmetic; return it exactly for the self case.
  out.rotation = target.rotation == input.rotation ? Eigen::Matrix3d::Identity().eval()
                                                   : (input.rotation.transpose() * target.rotation).eval();
  out.center = input.rotation.transpose() * (target.center - input.center) + conditioned_input_center(z);
  return out;
}

Eigen::Vector3d relativize_point(const CameraPose& input, const Eigen::Vector3d& p, double z) {
  return input.rotation.transpose() * (p - input.center) + conditioned_input_center(z);
}

ConditioningVector conditioning_features(double focal, double z) {
  ConditioningVector c{};
  c[0] = focal;
  c[1] = z;
  for (int k = 1; k <= 4; ++k) {
    const double freq = std::ldexp(1.0, k);
    const std::size_t base = 2 + 4 * static_cast<std::size_t>(k - 1);
    c[base + 0] = std::sin(freq * focal);
    c[base + 1] = std::cos(freq * focal);
    c[base + 2] = std::sin(freq * z);
    c[base + 3] = std::cos(freq * z);
  }
  return c;
}

ConditioningVector encode_conditioning(double focal, double z) {
  if (!(focal > 0.0) || !(z > 0.0)) throw GeometryError("conditioning requires f > 0 and z > 0");
  return conditioning_features(focal, z);
}

Ray generate_ray(const CameraPose& pose, double u, double v) {
  const double f = pose.focal_pixels();
  const Eigen::Vector3d local((u + 0.5 - pose.principal.x()) / f, (v + 0.5 - pose.principal.y()) / f, 1.0);
  Ray ray;
  ray.origin = pose.center;
  ray.direction = (pose.rotation * local.normalized()).normalized();
  return ray;
}

std::vector<Ray> generate_rays(const CameraPose& pose, const std::vector<Pixel>& pixels) {
  std::vector<Ray> rays;
  rays.reserve(pixels.size());
  for (const Pixel& px : pixels) {
    if (px.u < 0 || px.v < 0 || px.u >= pose.width || px.v >= pose.height) {
      throw GeometryError("pixel (" + std::to_string(px.u) + "," + std::to_string(px.v) + ") outside the image");
    }
    rays.push_back(generate_ray(pose, px.u, px.v));
  }
  return rays;
}

Eigen::Vector2d project_point(const CameraPose& pose, const Eigen::Vector3d& p) {
  const Eigen::Vector3d local = pose.rotation.transpose() * (p - pose.center);
  const double f = pose.focal_pixels();
  return {f * local.x() / local.z() + pose.principal.x() - 0.5, f * local.y() / local.z() + pose.principal.y() - 0.5};
}

std::optional<std::pair<double, double>> ray_box_intersect(const Ray& ray, const Box& box) {
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double o = ray.origin[a];
    const double d = ray.direction[a];
    if (d == 0.0) {
      if (o < box.lo[a] || o > box.hi[a]) return std::nullopt;
      continue;
    }
    double ta = (box.lo[a] - o) / d;
    double tb = (box.hi[a] - o) / d;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  t0 = std::max(t0, 0.0);
  if (!(t1 > t0)) return std::nullopt;
  return std::make_pair(t0, t1);
}

Eigen::Matrix3d rotation_about_axis(const Eigen::Vector3d& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

Eigen::Matrix3d look_at_rotation(const Eigen::Vector3d& eye, const Eigen::Vector3d& target) {
  const Eigen::Vector3d forward = (target - eye).normalized();
  Eigen::Vector3d up = Eigen::Vector3d::UnitY();
  if (std::abs(forward.dot(up)) > 0.999) up = Eigen::Vector3d::UnitZ();
  const Eigen::Vector3d right = forward.cross(up).normalized();
  const Eigen::Vector3d down = forward.cross(right);
  Eigen::Matrix3d r;
  r.col(0) = right;
  r.col(1) = down;
  r.col(2) = forward;
  return r;
}

}  // namespace nvist
