#include "nvist/scene.h"

#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>

#include "json.hpp"
#include "nvist/parallel.h"
#include "nvist/tensor.h"

namespace nvist {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

constexpr double kHitEpsilon = 1e-9;

bool intersect_sphere(const Primitive& p, const Ray& ray, double& t) {
  const Eigen::Vector3d oc = ray.origin - p.center;
  const double r = p.size.x();
  const double b = oc.dot(ray.direction);
  const double c = oc.squaredNorm() - r * r;
  const double disc = b * b - c;
  if (disc < 0.0) return false;
  const double s = std::sqrt(disc);
  t = -b - s;
  if (t <= kHitEpsilon) t = -b + s;
  return t > kHitEpsilon;
}

bool intersect_box(const Primitive& p, const Ray& ray, double& t, Eigen::Vector3d& normal) {
  double t0 = -std::numeric_limits<double>::infinity(), t1 = std::numeric_limits<double>::infinity();
  int axis0 = 0, axis1 = 0;
  double sign0 = -1.0, sign1 = 1.0;
  for (int a = 0; a < 3; ++a) {
    const double lo = p.center[a] - p.size[a], hi = p.center[a] + p.size[a];
    const double d = ray.direction[a], o = ray.origin[a];
    if (std::abs(d) < 1e-15) {
      if (o < lo || o > hi) return false;
      continue;
    }
    double ta = (lo - o) / d, tb = (hi - o) / d;
    double sa = -1.0, sb = 1.0;
    if (ta > tb) {
      std::swap(ta, tb);
      std::swap(sa, sb);
    }
    if (ta > t0) {
      t0 = ta;
      axis0 = a;
      sign0 = sa;
    }
    if (tb < t1) {
      t1 = tb;
      axis1 = a;
      sign1 = sb;
    }
  }
  if (t0 > t1) return false;
  normal.setZero();
  if (t0 > kHitEpsilon) {
    t = t0;
    normal[axis0] = sign0;
    return true;
  }
  if (t1 > kHitEpsilon) {
    t = t1;
    normal[axis1] = -sign1;
    return true;
  }
  return false;
}

bool intersect_ground(const Ground& g, const Ray& ray, double& t) {
  if (!g.enabled || std::abs(ray.direction.y()) < 1e-15) return false;
  t = (g.center.y() - ray.origin.y()) / ray.direction.y();
  if (t <= kHitEpsilon) return false;
  const Eigen::Vector3d p = ray.origin + t * ray.direction;
  return std::abs(p.x() - g.center.x()) <= g.half_extent && std::abs(p.z() - g.center.z()) <= g.half_extent;
}

ordered_json vec_json(const Eigen::Vector3d& v) { return ordered_json::array({v.x(), v.y(), v.z()}); }

Eigen::Vector3d vec3(const ordered_json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw DataError("manifest field " + what + " must hold 3 numbers");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

std::string scene_id(std::size_t i) {
  std::ostringstream os;
  os << "scene_";
  os.width(4);
  os.fill('0');
  os << i;
  return os.str();
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(splitmix64(base) ^ a) ^ b);
}

std::vector<Eigen::Vector3d> ToyScene::bounding_points() const {
  std::vector<Eigen::Vector3d> pts;
  for (const auto& p : primitives) {
    for (int c = 0; c < 8; ++c) {
      pts.push_back(p.center + Eigen::Vector3d((c & 1) ? p.size.x() : -p.size.x(), (c & 2) ? p.size.y() : -p.size.y(),
                                               (c & 4) ? p.size.z() : -p.size.z()));
    }
  }
  if (ground.enabled) {
    for (int c = 0; c < 4; ++c) {
      pts.push_back(ground.center + Eigen::Vector3d((c & 1) ? ground.half_extent : -ground.half_extent, 0.0,
                                                    (c & 2) ? ground.half_extent : -ground.half_extent));
    }
  }
  return pts;
}

ToyScene ToyScene::transformed(double scale, const Eigen::Vector3d& translation) const {
  ToyScene out = *this;
  for (auto& p : out.primitives) {
    p.center = scale * p.center + translation;
    p.size *= scale;
  }
  out.ground.center = scale * ground.center + translation;
  out.ground.half_extent *= scale;
  out.ground.cell *= scale;
  return out;
}

Eigen::Vector3d light_direction() { return Eigen::Vector3d(0.35, 1.0, -0.45).normalized(); }

ToyScene generate_scene(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x5ce1e));
  ToyScene scene;
  const int count = std::uniform_int_distribution<int>(1, 6)(rng);
  double lowest = std::numeric_limits<double>::infinity();
  for (int i = 0; i < count; ++i) {
    Primitive p;
    p.kind = uniform(rng, 0.0, 1.0) < 0.5 ? PrimitiveKind::Sphere : PrimitiveKind::Box;
    if (p.kind == PrimitiveKind::Sphere) {
      p.size = Eigen::Vector3d::Constant(uniform(rng, 0.12, 0.35));
    } else {
      for (int a = 0; a < 3; ++a) p.size[a] = uniform(rng, 0.12, 0.35);
    }
    for (int a = 0; a < 3; ++a) p.center[a] = uniform(rng, -0.8 + p.size[a], 0.8 - p.size[a]);
    for (int a = 0; a < 3; ++a) p.albedo[a] = uniform(rng, 0.15, 0.95);
    lowest = std::min(lowest, p.center.y() - p.size.y());
    scene.primitives.push_back(p);
  }
  if (uniform(rng, 0.0, 1.0) < 0.5) {
    scene.ground.enabled = true;
    scene.ground.center = {0.0, lowest, 0.0};
  }
  return scene;
}

bool intersect_scene(const ToyScene& scene, const Ray& ray, Hit& hit) {
  bool found = false;
  hit.t = std::numeric_limits<double>::infinity();
  for (const auto& p : scene.primitives) {
    double t = 0.0;
    Eigen::Vector3d n;
    const bool ok = p.kind == PrimitiveKind::Sphere ? intersect_sphere(p, ray, t) : intersect_box(p, ray, t, n);
    if (ok && t < hit.t) {
      hit.t = t;
      hit.normal = p.kind == PrimitiveKind::Sphere ? ((ray.origin + t * ray.direction - p.center) / p.size.x()).eval() : n;
      hit.albedo = p.albedo;
      found = true;
    }
  }
  double t = 0.0;
  if (intersect_ground(scene.ground, ray, t) && t < hit.t) {
    const Eigen::Vector3d q = ray.origin + t * ray.direction - scene.ground.center;
    const long cx = static_cast<long>(std::floor(q.x() / scene.ground.cell));
    const long cz = static_cast<long>(std::floor(q.z() / scene.ground.cell));
    hit.t = t;
    hit.normal = Eigen::Vector3d::UnitY();
    hit.albedo = ((cx + cz) & 1) ? scene.ground.albedo_b : scene.ground.albedo_a;
    found = true;
  }
  return found;
}

OracleImage raytrace_oracle(const ToyScene& scene, const CameraPose& pose, int supersample) {
  pose.validate();
  if (supersample < 1) throw DataError("supersample must be at least 1");
  OracleImage img;
  img.width = pose.width;
  img.height = pose.height;
  const std::size_t n = static_cast<std::size_t>(pose.width) * pose.height;
  img.rgb.resize(n * 3);
  img.depth.resize(n);
  const Eigen::Vector3d light = light_direction();
  auto shade = [&](double u, double v, Hit& hit) {
    if (!intersect_scene(scene, generate_ray(pose, u, v), hit)) return std::optional<Eigen::Vector3d>{};
    return std::optional<Eigen::Vector3d>(hit.albedo * (0.3 + 0.7 * std::max(0.0, hit.normal.dot(light))));
  };
  const double step = 1.0 / supersample;
  for (int v = 0; v < pose.height; ++v) {
    for (int u = 0; u < pose.width; ++u) {
      const std::size_t k = static_cast<std::size_t>(v) * pose.width + u;
      Hit hit;
      auto center = shade(u, v, hit);
      img.depth[k] = center ? static_cast<float>(hit.t) : std::numeric_limits<float>::infinity();
      Eigen::Vector3d c = center.value_or(scene.background);
      if (supersample > 1) {
        c.setZero();
        for (int j = 0; j < supersample; ++j) {
          for (int i = 0; i < supersample; ++i) {
            Hit sub;
            c += shade(u - 0.5 + (i + 0.5) * step, v - 0.5 + (j + 0.5) * step, sub).value_or(scene.background);
          }
        }
        c /= supersample * supersample;
      }
      for (int a = 0; a < 3; ++a) img.rgb[k * 3 + a] = static_cast<float>(c[a]);
    }
  }
  return img;
}

void write_ppm(const fs::path& path, const std::vector<float>& rgb, int width, int height) {
  if (rgb.size() != static_cast<std::size_t>(width) * height * 3) throw DataError("image buffer does not match its size");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P6\n" << width << ' ' << height << "\n255\n";
  std::vector<unsigned char> bytes(rgb.size());
  for (std::size_t i = 0; i < rgb.size(); ++i) {
    bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(rgb[i], 0.0f, 1.0f) * 255.0f));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

std::vector<float> read_ppm(const fs::path& path, int& width, int& height) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path.string());
  auto token = [&]() {
    std::string t;
    char c;
    while (in.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
      } else if (!std::isspace(static_cast<unsigned char>(c))) {
        t.push_back(c);
        break;
      }
    }
    while (in.get(c) && !std::isspace(static_cast<unsigned char>(c))) t.push_back(c);
    return t;
  };
  if (token() != "P6") throw DataError(path.string() + " is not a binary PPM (P6) file");
  int maxval = 0;
  try {
    width = std::stoi(token());
    height = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw DataError(path.string() + " has a malformed PPM header");
  }
  if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 255) {
    throw DataError(path.string() + " has an unsupported PPM header");
  }
  std::vector<unsigned char> bytes(static_cast<std::size_t>(width) * height * 3);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw DataError(path.string() + " is truncated");
  std::vector<float> rgb(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) rgb[i] = static_cast<float>(bytes[i]) / static_cast<float>(maxval);
  return rgb;
}

ToyScene world_scene(std::uint64_t scene_seed) {
  Rng rng(derive_seed(scene_seed, 1));
  const double scale = uniform(rng, 0.5, 3.0);
  Eigen::Vector3d offset;
  for (int a = 0; a < 3; ++a) offset[a] = uniform(rng, -3.0, 3.0);
  return generate_scene(scene_seed).transformed(scale, offset);
}

bool is_test_scene(std::size_t index, std::size_t holdout_stride) {
  return holdout_stride > 0 && (index + 1) % holdout_stride == 0;
}

std::vector<std::size_t> Dataset::split(bool test) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < scenes.size(); ++i)
    if (scenes[i].test == test) out.push_back(i);
  return out;
}

Dataset generate_dataset(const fs::path& dir, const DatasetOptions& opt) {
  if (opt.views < 3) throw DataError("a scene needs at least 3 views");
  if (opt.scenes == 0 || opt.width <= 0 || opt.height <= 0) throw DataError("dataset needs scenes and a positive image size");
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  if (ec) throw DataError("cannot create dataset directory " + dir.string() + ": " + ec.message());

  Dataset ds;
  ds.root = dir;
  ds.holdout_stride = opt.holdout_stride;
  ds.width = opt.width;
  ds.height = opt.height;
  std::vector<ToyScene> worlds;
  for (std::size_t i = 0; i < opt.scenes; ++i) {
    SceneRecord rec;
    rec.id = scene_id(i);
    rec.seed = derive_seed(opt.seed, i);
    rec.test = is_test_scene(i, opt.holdout_stride);
    Rng rng(derive_seed(rec.seed, 2));
    ToyScene world = world_scene(rec.seed);
    const auto pts = world.bounding_points();
    Eigen::Vector3d lo = pts[0], hi = pts[0];
    for (const auto& p : pts) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    const Eigen::Vector3d center = 0.5 * (lo + hi);
    const double extent = (hi - lo).maxCoeff();
    const double focal = uniform(rng, opt.focal_min, opt.focal_max);
    std::vector<CameraPose> poses;
    for (std::size_t v = 0; v < opt.views; ++v) {
      const double distance = uniform(rng, 1.5, 2.5);
      const double azimuth = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      const double elevation = uniform(rng, 10.0, 50.0) * std::numbers::pi / 180.0;
      CameraPose pose;
      pose.center = center + extent * distance *
                                 Eigen::Vector3d(std::cos(elevation) * std::cos(azimuth), std::sin(elevation),
                                                 std::cos(elevation) * std::sin(azimuth));
      pose.rotation = look_at_rotation(pose.center, center);
      pose.focal = focal;
      pose.width = opt.width;
      pose.height = opt.height;
      pose.principal = {opt.width / 2.0, opt.height / 2.0};
      poses.push_back(pose);
    }
    rec.normalization = normalize_scene(pts, poses, 0).normalization;
    fs::create_directories(dir / "images" / rec.id, ec);
    if (ec) throw DataError("cannot create " + (dir / "images" / rec.id).string() + ": " + ec.message());
    for (std::size_t v = 0; v < opt.views; ++v) {
      ViewRecord view;
      view.file = "images/" + rec.id + "/" + std::to_string(v) + ".ppm";
      view.pose = poses[v];
      rec.views.push_back(std::move(view));
    }
    ds.scenes.push_back(std::move(rec));
    worlds.push_back(std::move(world));
  }

  const std::size_t per_scene = opt.views;
  parallel_for(opt.scenes * per_scene, [&](std::size_t job) {
    SceneRecord& rec = ds.scenes[job / per_scene];
    ViewRecord& view = rec.views[job % per_scene];
    OracleImage img = raytrace_oracle(worlds[job / per_scene], view.pose, opt.supersample);
    write_ppm(dir / view.file, img.rgb, img.width, img.height);
    // Keep exactly what a reader of the file would see.
    view.rgb.resize(img.rgb.size());
    for (std::size_t i = 0; i < img.rgb.size(); ++i) {
      view.rgb[i] = static_cast<float>(std::lround(std::clamp(img.rgb[i], 0.0f, 1.0f) * 255.0f)) / 255.0f;
    }
  });

  ordered_json manifest;
  manifest["version"] = 1;
  manifest["holdout_stride"] = opt.holdout_stride;
  manifest["image_size"] = {opt.width, opt.height};
  manifest["supersample"] = opt.supersample;
  manifest["scenes"] = ordered_json::array();
  for (const auto& rec : ds.scenes) {
    ordered_json s;
    s["id"] = rec.id;
    s["seed"] = rec.seed;
    s["split"] = rec.test ? "test" : "train";
    s["normalization"] = {{"scale", rec.normalization.scale},
                          {"translation", vec_json(rec.normalization.translation)},
                          {"z", rec.normalization.z}};
    s["views"] = ordered_json::array();
    for (const auto& view : rec.views) {
      ordered_json v;
      v["file"] = view.file;
      ordered_json rot = ordered_json::array();
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) rot.push_back(view.pose.rotation(r, c));
      v["rotation"] = rot;
      v["center"] = vec_json(view.pose.center);
      v["focal_normalized"] = view.pose.focal;
      v["principal"] = {view.pose.principal.x(), view.pose.principal.y()};
      v["size"] = {view.pose.width, view.pose.height};
      s["views"].push_back(v);
    }
    manifest["scenes"].push_back(s);
  }
  const fs::path tmp = dir / "manifest.json.tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << manifest.dump(1) << '\n';
    if (!out) throw DataError("failed writing " + tmp.string());
  }
  fs::rename(tmp, dir / "manifest.json", ec);
  if (ec) throw DataError("cannot finalize manifest: " + ec.message());
  return ds;
}

Dataset load_dataset(const fs::path& dir) {
  const fs::path path = dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw DataError("no manifest.json in " + dir.string());
  ordered_json m;
  try {
    m = ordered_json::parse(in);
  } catch (const std::exception& e) {
    throw DataError("malformed manifest " + path.string() + ": " + e.what());
  }
  Dataset ds;
  ds.root = dir;
  try {
    if (m.at("version").get<int>() != 1) throw DataError("unsupported manifest version");
    ds.holdout_stride = m.value("holdout_stride", std::size_t{0});
    for (const auto& s : m.at("scenes")) {
      SceneRecord rec;
      rec.id = s.at("id").get<std::string>();
      rec.seed = s.at("seed").get<std::uint64_t>();
      rec.test = s.value("split", std::string("train")) == "test";
      const auto& n = s.at("normalization");
      rec.normalization.scale = n.at("scale").get<double>();
      rec.normalization.translation = vec3(n.at("translation"), "translation");
      rec.normalization.z = n.at("z").get<double>();
      for (const auto& v : s.at("views")) {
        ViewRecord view;
        view.file = v.at("file").get<std::string>();
        const auto& rot = v.at("rotation");
        if (!rot.is_array() || rot.size() != 9) throw DataError("rotation must hold 9 numbers");
        for (int r = 0; r < 3; ++r)
          for (int c = 0; c < 3; ++c) view.pose.rotation(r, c) = rot[r * 3 + c].get<double>();
        view.pose.center = vec3(v.at("center"), "center");
        view.pose.focal = v.at("focal_normalized").get<double>();
        view.pose.principal = {v.at("principal").at(0).get<double>(), v.at("principal").at(1).get<double>()};
        view.pose.width = v.at("size").at(0).get<int>();
        view.pose.height = v.at("size").at(1).get<int>();
        try {
          view.pose.validate();
        } catch (const GeometryError& e) {
          throw DataError(rec.id + "/" + view.file + ": " + e.what());
        }
        int w = 0, h = 0;
        view.rgb = read_ppm(dir / view.file, w, h);
        if (w != view.pose.width || h != view.pose.height) throw DataError(view.file + " does not match its stored size");
        if (ds.width == 0) {
          ds.width = w;
          ds.height = h;
        } else if (ds.width != w || ds.height != h) {
          throw DataError("dataset images differ in size");
        }
        rec.views.push_back(std::move(view));
      }
      if (rec.views.size() < 3) throw DataError("scene " + rec.id + " has fewer than 3 views");
      ds.scenes.push_back(std::move(rec));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest " + path.string() + ": " + e.what());
  }
  if (ds.scenes.empty()) throw DataError("manifest lists no scenes");
  return ds;
}

}  // namespace nvist
