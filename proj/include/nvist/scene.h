#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "nvist/camera.h"

namespace nvist {

/// Missing, unreadable or malformed dataset content.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class PrimitiveKind { Sphere, Box };

/// `size` is the radius of a sphere or the half-extents of a box.
struct Primitive {
  PrimitiveKind kind = PrimitiveKind::Sphere;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d size = Eigen::Vector3d::Constant(0.5);
  Eigen::Vector3d albedo = Eigen::Vector3d::Constant(0.8);
};

/// Finite checkered square centered at `center`, facing +y (world up).
struct Ground {
  bool enabled = false;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  double half_extent = 0.8;
  double cell = 0.4;
  Eigen::Vector3d albedo_a = Eigen::Vector3d::Constant(0.85);
  Eigen::Vector3d albedo_b = Eigen::Vector3d::Constant(0.35);
};

struct ToyScene {
  std::vector<Primitive> primitives;
  Ground ground;
  Eigen::Vector3d background = Eigen::Vector3d::Ones();

  /// Corner points of every primitive's bounding box and of the ground square.
  std::vector<Eigen::Vector3d> bounding_points() const;
  /// Uniform scale about the origin followed by a translation.
  ToyScene transformed(double scale, const Eigen::Vector3d& translation) const;
};

/// Unit vector towards the fixed directional light.
Eigen::Vector3d light_direction();

/// Deterministic scene: 1 to 6 primitives, each a sphere or a box with equal
/// odds; sizes uniform in [0.12, 0.35]; centers uniform so the primitive
/// stays inside [-0.8, 0.8]^3; albedo channels uniform in [0.15, 0.95]. Half
/// of the scenes get a ground square under the lowest primitive.
ToyScene generate_scene(std::uint64_t seed);

struct Hit {
  double t = 0.0;
  Eigen::Vector3d normal = Eigen::Vector3d::Zero();
  Eigen::Vector3d albedo = Eigen::Vector3d::Zero();
};

/// Nearest intersection with t > 0, if any.
bool intersect_scene(const ToyScene& scene, const Ray& ray, Hit& hit);

struct OracleImage {
  int width = 0;
  int height = 0;
  std::vector<float> rgb;    // [H, W, 3]
  std::vector<float> depth;  // distance along the unit ray; +inf on a miss
};

/// Ground-truth view: albedo * (0.3 + 0.7 max(0, n.l)) at the nearest hit,
/// background color on a miss. With supersample s > 1 the color is the mean
/// over an s x s grid of rays inside the pixel; depth always comes from the
/// pixel-center ray.
OracleImage raytrace_oracle(const ToyScene& scene, const CameraPose& pose, int supersample = 1);

void write_ppm(const std::filesystem::path& path, const std::vector<float>& rgb, int width, int height);
/// Values scaled to [0, 1]. Throws DataError on anything but a valid P6 file.
std::vector<float> read_ppm(const std::filesystem::path& path, int& width, int& height);

struct DatasetOptions {
  std::size_t scenes = 64;
  std::size_t views = 12;
  int width = 64;
  int height = 64;
  std::uint64_t seed = 0;
  std::size_t holdout_stride = 8;  // every stride-th scene is a test scene; 0 keeps all for training
  double focal_min = 0.9;
  double focal_max = 1.2;
  int supersample = 4;  // rays per pixel axis for stored colors
};

struct ViewRecord {
  std::string file;
  CameraPose pose;  // world frame
  std::vector<float> rgb;
};

struct SceneRecord {
  std::string id;
  std::uint64_t seed = 0;
  bool test = false;
  SceneNormalization normalization;
  std::vector<ViewRecord> views;

  /// View pose mapped into the normalized unit-box frame.
  CameraPose normalized_pose(std::size_t view) const { return normalization.apply(views.at(view).pose); }
};

struct Dataset {
  std::filesystem::path root;
  std::size_t holdout_stride = 0;
  int width = 0;
  int height = 0;
  std::vector<SceneRecord> scenes;

  std::vector<std::size_t> split(bool test) const;
};

/// Whether scene `index` is held out for testing.
bool is_test_scene(std::size_t index, std::size_t holdout_stride);

/// World-frame placement of generate_scene(scene_seed) used by the dataset
/// generator: uniform scale in [0.5, 3] and an offset in [-3, 3]^3.
ToyScene world_scene(std::uint64_t scene_seed);

/// Writes manifest.json and images/<scene_id>/<view>.ppm under `dir`. Each
/// scene is placed in the world by a random scale and offset; cameras orbit
/// the scene center at normalized distances 1.5 to 2.5, elevations 10 to 50
/// degrees. Throws DataError when the directory cannot be written.
Dataset generate_dataset(const std::filesystem::path& dir, const DatasetOptions& options);

/// Reads and validates a dataset directory, loading every image. Loaders for
/// captured multi-view data would produce the same records.
Dataset load_dataset(const std::filesystem::path& dir);

/// Stable 64-bit seed derived from a base seed and two stream indices.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

}  // namespace nvist
