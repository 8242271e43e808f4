#pragma once

#include <Eigen/Core>
#include <array>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace nvist {

/// Rejected camera or scene geometry (non-orthonormal rotation, bad focal, ...).
class GeometryError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Pinhole camera. `rotation` maps camera axes to world axes (columns are the
/// camera x/right, y/down and z/forward directions); `center` is the camera
/// position in world units. `focal` is focal length in pixels divided by the
/// image width.
struct CameraPose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  double focal = 1.0;
  Eigen::Vector2d principal = Eigen::Vector2d::Zero();
  int width = 1;
  int height = 1;

  double focal_pixels() const { return focal * width; }
  /// Throws GeometryError unless R^T R = I and det R = +1 (1e-6), focal > 0
  /// and the image size is positive.
  void validate() const;
};

/// x_normalized = scale * (x_world + translation).
struct SceneNormalization {
  double scale = 1.0;
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  double z = 0.0;

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return scale * (p + translation); }
  CameraPose apply(const CameraPose& pose) const;
};

struct NormalizedScene {
  SceneNormalization normalization;
  std::vector<CameraPose> poses;
};

/// Centers the point cloud's bounding box at the origin and scales it so the
/// largest axis extent is 1. Camera centers follow the same transform;
/// rotations are unchanged. `z` is the normalized distance of the camera at
/// `input_index` from the origin.
NormalizedScene normalize_scene(const std::vector<Eigen::Vector3d>& points, const std::vector<CameraPose>& poses,
                                std::size_t input_index);

/// Position the input camera takes in its own relative frame: (0, 0, -z),
/// so that the origin lies at depth z along its +z viewing axis.
Eigen::Vector3d conditioned_input_center(double z);

/// Expresses `target` in the frame where `input` has identity rotation and
/// sits at conditioned_input_center(z).
CameraPose relativize_pose(const CameraPose& input, const CameraPose& target, double z);

/// Maps a world point into the same relative frame used by relativize_pose.
Eigen::Vector3d relativize_point(const CameraPose& input, const Eigen::Vector3d& p, double z);

inline constexpr std::size_t kConditioningSize = 18;
using ConditioningVector = std::array<double, kConditioningSize>;

/// (f, z, sin 2f, cos 2f, sin 2z, cos 2z, sin 4f, ..., cos 16z).
ConditioningVector encode_conditioning(double focal, double z);
/// Same layout without the positivity check.
ConditioningVector conditioning_features(double focal, double z);

struct Ray {
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  Eigen::Vector3d direction = Eigen::Vector3d::UnitZ();
  double t_near = 0.0;
  double t_far = 0.0;
};

struct Pixel {
  int u = 0;
  int v = 0;
};

/// Rays through pixel centers; the camera looks along its +z axis.
std::vector<Ray> generate_rays(const CameraPose& pose, const std::vector<Pixel>& pixels);
Ray generate_ray(const CameraPose& pose, double u, double v);
/// Continuous pixel coordinates (u, v) whose ray passes through `p`.
Eigen::Vector2d project_point(const CameraPose& pose, const Eigen::Vector3d& p);

struct Box {
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(-1.0);
  Eigen::Vector3d hi = Eigen::Vector3d::Constant(1.0);
};

/// Slab-method entry/exit parameters, t_near clamped to >= 0. nullopt on miss.
std::optional<std::pair<double, double>> ray_box_intersect(const Ray& ray, const Box& box);

Eigen::Matrix3d rotation_about_axis(const Eigen::Vector3d& axis, double angle);
/// Camera-to-world rotation for a camera at `eye` looking at `target` with
/// world +y up (image rows grow downward).
Eigen::Matrix3d look_at_rotation(const Eigen::Vector3d& eye, const Eigen::Vector3d& target);

}  // namespace nvist
