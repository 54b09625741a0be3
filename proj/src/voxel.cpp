#include "cdk/voxel.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "cdk/error.hpp"
#include "cdk/tensor_io.hpp"

namespace cdk {

void Camera::validate() const {
  require(width > 0 && height > 0, "camera needs positive width and height");
  require(K(1, 0) == 0.0 && K(2, 0) == 0.0 && K(2, 1) == 0.0,
          "camera intrinsics must be upper-triangular");
  require(K(0, 0) > 0.0 && K(1, 1) > 0.0, "camera focal lengths must be positive");
  require(std::abs(K(2, 2) - 1.0) < 1e-12, "camera K(2,2) must be 1");
  Eigen::Matrix3d r = world_to_cam.topLeftCorner<3, 3>();
  require((r.transpose() * r - Eigen::Matrix3d::Identity()).norm() < 1e-8,
          "camera rotation is not orthonormal");
  require(r.determinant() > 0.0, "camera rotation must have determinant +1");
  require((world_to_cam.row(3) - Eigen::RowVector4d(0, 0, 0, 1)).norm() < 1e-12,
          "camera transform bottom row must be [0,0,0,1]");
}

Eigen::Vector3d Camera::center() const {
  Eigen::Matrix3d r = world_to_cam.topLeftCorner<3, 3>();
  Eigen::Vector3d t = world_to_cam.topRightCorner<3, 1>();
  return -r.transpose() * t;
}

Eigen::Vector3d Camera::to_camera(const Eigen::Vector3d& p) const {
  return world_to_cam.topLeftCorner<3, 3>() * p + world_to_cam.topRightCorner<3, 1>();
}

Eigen::Vector3d Camera::to_world(const Eigen::Vector3d& p) const {
  Eigen::Matrix3d r = world_to_cam.topLeftCorner<3, 3>();
  Eigen::Vector3d t = world_to_cam.topRightCorner<3, 1>();
  return r.transpose() * (p - t);
}

Eigen::Vector3d Camera::project(const Eigen::Vector3d& p_world) const {
  Eigen::Vector3d pc = to_camera(p_world);
  Eigen::Vector3d uvw = K * pc;
  if (pc.z() != 0.0) return Eigen::Vector3d(uvw.x() / pc.z(), uvw.y() / pc.z(), pc.z());
  return Eigen::Vector3d(0, 0, 0);
}

void Camera::pixel_ray(double u, double v, Eigen::Vector3d& origin, Eigen::Vector3d& dir) const {
  origin = center();
  Eigen::Vector3d d_cam = K.inverse() * Eigen::Vector3d(u, v, 1.0);  // depth component 1
  dir = world_to_cam.topLeftCorner<3, 3>().transpose() * d_cam;
}

Eigen::Vector3d Camera::unproject(double u, double v, double depth) const {
  Eigen::Vector3d d_cam = K.inverse() * Eigen::Vector3d(u, v, 1.0);
  return to_world(d_cam * depth);
}

std::vector<Camera> load_cameras_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ParseError("cannot open cameras file: " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw ParseError("invalid cameras JSON: " + std::string(e.what()));
  }
  require(j.is_array() && !j.empty(), "cameras file must be a non-empty JSON array");
  std::vector<Camera> cams;
  for (const auto& c : j) {
    Camera cam;
    auto kj = c.at("K");
    auto wj = c.at("world_to_cam");
    require(kj.size() == 9 && wj.size() == 16, "camera entries need 9 K and 16 pose floats");
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < 3; ++k) cam.K(i, k) = kj[i * 3 + k].get<double>();
    for (int i = 0; i < 4; ++i)
      for (int k = 0; k < 4; ++k) cam.world_to_cam(i, k) = wj[i * 4 + k].get<double>();
    cam.width = c.at("width").get<int>();
    cam.height = c.at("height").get<int>();
    cam.validate();
    cams.push_back(cam);
  }
  return cams;
}

void save_cameras_json(const std::vector<Camera>& cameras, const std::string& path) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& cam : cameras) {
    nlohmann::json c;
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < 3; ++k) c["K"].push_back(cam.K(i, k));
    for (int i = 0; i < 4; ++i)
      for (int k = 0; k < 4; ++k) c["world_to_cam"].push_back(cam.world_to_cam(i, k));
    c["width"] = cam.width;
    c["height"] = cam.height;
    j.push_back(c);
  }
  std::ofstream f(path);
  if (!f) throw ParseError("cannot write cameras file: " + path);
  f << j.dump(2) << "\n";
}

void FeaturePointCloud::validate() const {
  require(features.empty() || (features.rank() == 2 &&
                               features.dim(0) == static_cast<int64_t>(positions.size())),
          "point cloud features must be [N,D] row-paired with positions");
  require(weights.empty() || weights.size() == positions.size(),
          "point cloud weights must pair with positions");
  for (const auto& p : positions)
    require(p.allFinite(), "point cloud contains non-finite positions");
  require(features.all_finite(), "point cloud contains non-finite features");
}

FeaturePointCloud lift(const FeatureGrid& features, const Tensor& depth,
                       const std::vector<Camera>& cameras) {
  validate_feature_grid(features);
  const int64_t T = features.frames(), D = features.feature_dim();
  const int64_t h = features.grid_h(), w = features.grid_w();
  require(depth.rank() == 3 && depth.dim(0) == T && depth.dim(1) == h && depth.dim(2) == w,
          "lift: depth must be [T,h,w] matching the feature grid");
  require(static_cast<int64_t>(cameras.size()) == T, "lift: need one camera per frame");
  for (const auto& cam : cameras) cam.validate();

  std::vector<Eigen::Vector3d> positions;
  std::vector<float> feats;
  for (int64_t t = 0; t < T; ++t) {
    const Camera& cam = cameras[static_cast<size_t>(t)];
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j) {
        double d = static_cast<double>(depth[(t * h + i) * w + j]);
        if (!std::isfinite(d) || d <= 0.0) continue;
        positions.push_back(cam.unproject(static_cast<double>(j) + 0.5,
                                          static_cast<double>(i) + 0.5, d));
        for (int64_t f = 0; f < D; ++f)
          feats.push_back(features.data[((t * D + f) * h + i) * w + j]);
      }
  }

  FeaturePointCloud cloud;
  cloud.positions = std::move(positions);
  cloud.features = Tensor({cloud.size(), D}, std::move(feats));
  cloud.weights.assign(static_cast<size_t>(cloud.size()), 1.0f);
  return cloud;
}

FeatureVoxelGrid voxelize(const FeaturePointCloud& cloud, double voxel_size,
                          const Eigen::Vector3d& origin) {
  require(voxel_size > 0.0, "voxelize: voxel size must be positive");
  cloud.validate();
  const int64_t D = cloud.feature_dim();

  FeatureVoxelGrid grid;
  grid.voxel_size = voxel_size;
  grid.origin = origin;
  grid.feature_dim = D;

  // bucket points per cell, then accumulate in a canonical order so the
  // result is independent of input ordering
  struct Member {
    Eigen::Vector3d pos;
    const float* feat;
    float weight;
  };
  std::map<VoxelKey, std::vector<Member>> buckets;
  for (int64_t n = 0; n < cloud.size(); ++n) {
    const Eigen::Vector3d& p = cloud.positions[static_cast<size_t>(n)];
    VoxelKey key{static_cast<int64_t>(std::floor((p.x() - origin.x()) / voxel_size)),
                 static_cast<int64_t>(std::floor((p.y() - origin.y()) / voxel_size)),
                 static_cast<int64_t>(std::floor((p.z() - origin.z()) / voxel_size))};
    buckets[key].push_back(Member{p, D > 0 ? cloud.features.data() + n * D : nullptr,
                                  cloud.weights.empty() ? 1.0f : cloud.weights[static_cast<size_t>(n)]});
  }

  for (auto& [key, members] : buckets) {
    std::sort(members.begin(), members.end(), [D](const Member& a, const Member& b) {
      if (a.pos.x() != b.pos.x()) return a.pos.x() < b.pos.x();
      if (a.pos.y() != b.pos.y()) return a.pos.y() < b.pos.y();
      if (a.pos.z() != b.pos.z()) return a.pos.z() < b.pos.z();
      return std::lexicographical_compare(a.feat, a.feat + D, b.feat, b.feat + D);
    });
    VoxelCell cell;
    cell.feature.assign(static_cast<size_t>(D), 0.0f);
    double total_w = 0.0;
    for (const auto& m : members) {
      total_w += m.weight;
      for (int64_t f = 0; f < D; ++f)
        cell.feature[static_cast<size_t>(f)] += m.weight * m.feat[f];
    }
    if (total_w > 0.0)
      for (auto& v : cell.feature) v = static_cast<float>(v / total_w);
    cell.count = total_w;
    grid.cells.emplace(key, std::move(cell));
  }
  return grid;
}

std::vector<uint8_t> FeatureVoxelGrid::canonical_bytes() const {
  std::ostringstream os(std::ios::binary);
  auto put = [&os](const void* p, size_t n) { os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); };
  put(&voxel_size, sizeof(voxel_size));
  double o[3] = {origin.x(), origin.y(), origin.z()};
  put(o, sizeof(o));
  put(&feature_dim, sizeof(feature_dim));
  for (const auto& [key, cell] : cells) {  // std::map: already sorted
    put(&key, sizeof(key));
    put(&cell.count, sizeof(cell.count));
    put(cell.feature.data(), cell.feature.size() * sizeof(float));
  }
  const std::string s = os.str();
  return std::vector<uint8_t>(s.begin(), s.end());
}

namespace {

// Slab test against an axis-aligned cube; dir has camera-depth-1 scaling
// so the returned entry parameter is the camera-space hit depth.
bool ray_aabb(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
              const Eigen::Vector3d& lo, const Eigen::Vector3d& hi, double& t_near) {
  double tmin = -std::numeric_limits<double>::infinity();
  double tmax = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (dir[a] == 0.0) {
      if (origin[a] < lo[a] || origin[a] > hi[a]) return false;
      continue;
    }
    double t0 = (lo[a] - origin[a]) / dir[a];
    double t1 = (hi[a] - origin[a]) / dir[a];
    if (t0 > t1) std::swap(t0, t1);
    tmin = std::max(tmin, t0);
    tmax = std::min(tmax, t1);
    if (tmin > tmax) return false;
  }
  if (tmax <= 0.0) return false;
  t_near = std::max(tmin, 0.0);
  return true;
}

RenderedConditioning make_empty_render(int64_t d, int64_t h, int64_t w) {
  RenderedConditioning out;
  out.features.data = Tensor({1, d, h, w});
  out.features.source = FeatureSource::external;
  out.mask = Tensor({1, 1, h, w});
  return out;
}

}  // namespace

RenderedConditioning render_voxels(const FeatureVoxelGrid& grid, const Camera& camera,
                                   int64_t out_h, int64_t out_w) {
  require(out_h > 0 && out_w > 0, "render_voxels: output grid must be positive");
  camera.validate();
  const int64_t D = grid.feature_dim;
  RenderedConditioning out = make_empty_render(D, out_h, out_w);
  if (grid.cells.empty()) return out;  // all holes

  // pixel-center rays, shared across voxels
  std::vector<Eigen::Vector3d> dirs(static_cast<size_t>(out_h * out_w));
  Eigen::Vector3d origin;
  for (int64_t y = 0; y < out_h; ++y)
    for (int64_t x = 0; x < out_w; ++x) {
      Eigen::Vector3d dir;
      camera.pixel_ray(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5, origin, dir);
      dirs[static_cast<size_t>(y * out_w + x)] = dir;
    }

  std::vector<double> zbuf(static_cast<size_t>(out_h * out_w),
                           std::numeric_limits<double>::infinity());
  std::vector<const VoxelCell*> winner(static_cast<size_t>(out_h * out_w), nullptr);

  // cells iterate in (i,j,k) order; strict z comparison keeps the first
  // (lexicographically smallest) cell on exact depth ties
  for (const auto& [key, cell] : grid.cells) {
    const Eigen::Vector3d lo = grid.cell_min(key);
    const Eigen::Vector3d hi = lo + Eigen::Vector3d::Constant(grid.voxel_size);

    // conservative pixel bounds from the projected cube corners
    int64_t x0 = 0, x1 = out_w - 1, y0 = 0, y1 = out_h - 1;
    bool in_front = true;
    double umin = std::numeric_limits<double>::infinity(), umax = -umin;
    double vmin = umin, vmax = -umin;
    for (int corner = 0; corner < 8; ++corner) {
      Eigen::Vector3d p((corner & 1) ? hi.x() : lo.x(), (corner & 2) ? hi.y() : lo.y(),
                        (corner & 4) ? hi.z() : lo.z());
      Eigen::Vector3d pc = camera.to_camera(p);
      if (pc.z() <= 1e-12) {
        in_front = false;
        break;
      }
      Eigen::Vector3d uvw = camera.K * pc;
      umin = std::min(umin, uvw.x() / pc.z());
      umax = std::max(umax, uvw.x() / pc.z());
      vmin = std::min(vmin, uvw.y() / pc.z());
      vmax = std::max(vmax, uvw.y() / pc.z());
    }
    if (in_front) {
      x0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(umin - 0.5)));
      x1 = std::min<int64_t>(out_w - 1, static_cast<int64_t>(std::ceil(umax - 0.5)));
      y0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(vmin - 0.5)));
      y1 = std::min<int64_t>(out_h - 1, static_cast<int64_t>(std::ceil(vmax - 0.5)));
      if (x0 > x1 || y0 > y1) continue;
    }

    for (int64_t y = y0; y <= y1; ++y)
      for (int64_t x = x0; x <= x1; ++x) {
        const size_t pix = static_cast<size_t>(y * out_w + x);
        double t_near;
        if (!ray_aabb(origin, dirs[pix], lo, hi, t_near)) continue;
        if (t_near < zbuf[pix]) {
          zbuf[pix] = t_near;
          winner[pix] = &cell;
        }
      }
  }

  for (int64_t y = 0; y < out_h; ++y)
    for (int64_t x = 0; x < out_w; ++x) {
      const size_t pix = static_cast<size_t>(y * out_w + x);
      if (!winner[pix]) continue;
      out.mask[(0 * 1 + 0) * out_h * out_w + y * out_w + x] = 1.0f;
      for (int64_t f = 0; f < D; ++f)
        out.features.data[(f * out_h + y) * out_w + x] = winner[pix]->feature[static_cast<size_t>(f)];
    }
  return out;
}

RenderedConditioning render_points(const FeaturePointCloud& cloud, const Camera& camera,
                                   int64_t out_h, int64_t out_w, double radius_px) {
  require(radius_px >= 0.0, "render_points: radius must be non-negative");
  camera.validate();
  cloud.validate();
  const int64_t D = cloud.feature_dim();
  RenderedConditioning out = make_empty_render(D, out_h, out_w);
  if (cloud.size() == 0) return out;

  std::vector<double> zbuf(static_cast<size_t>(out_h * out_w),
                           std::numeric_limits<double>::infinity());
  std::vector<int64_t> winner(static_cast<size_t>(out_h * out_w), -1);

  for (int64_t n = 0; n < cloud.size(); ++n) {
    Eigen::Vector3d uvz = camera.project(cloud.positions[static_cast<size_t>(n)]);
    if (uvz.z() <= 1e-12) continue;
    const double u = uvz.x(), v = uvz.y();
    auto cover = [&](int64_t x, int64_t y) {
      if (x < 0 || x >= out_w || y < 0 || y >= out_h) return;
      const size_t pix = static_cast<size_t>(y * out_w + x);
      if (uvz.z() < zbuf[pix]) {
        zbuf[pix] = uvz.z();
        winner[pix] = n;
      }
    };
    // containing cell always covered
    cover(static_cast<int64_t>(std::floor(u)), static_cast<int64_t>(std::floor(v)));
    if (radius_px > 0.0) {
      const int64_t xr0 = static_cast<int64_t>(std::floor(u - radius_px - 1.0));
      const int64_t xr1 = static_cast<int64_t>(std::ceil(u + radius_px + 1.0));
      const int64_t yr0 = static_cast<int64_t>(std::floor(v - radius_px - 1.0));
      const int64_t yr1 = static_cast<int64_t>(std::ceil(v + radius_px + 1.0));
      for (int64_t y = yr0; y <= yr1; ++y)
        for (int64_t x = xr0; x <= xr1; ++x) {
          const double dx = (static_cast<double>(x) + 0.5) - u;
          const double dy = (static_cast<double>(y) + 0.5) - v;
          if (dx * dx + dy * dy <= radius_px * radius_px) cover(x, y);
        }
    }
  }

  for (int64_t y = 0; y < out_h; ++y)
    for (int64_t x = 0; x < out_w; ++x) {
      const size_t pix = static_cast<size_t>(y * out_w + x);
      if (winner[pix] < 0) continue;
      out.mask[y * out_w + x] = 1.0f;
      for (int64_t f = 0; f < D; ++f)
        out.features.data[(f * out_h + y) * out_w + x] =
            cloud.features[winner[pix] * D + f];
    }
  return out;
}

Tensor mask_to_latent(const Tensor& mask_hi, int64_t h_tok, int64_t w_tok) {
  require(mask_hi.rank() == 2, "mask_to_latent: mask must be [H,W]");
  const int64_t H = mask_hi.dim(0), W = mask_hi.dim(1);
  require(h_tok > 0 && w_tok > 0, "mask_to_latent: token grid must be positive");
  require(H % h_tok == 0, "mask_to_latent: height " + std::to_string(H) +
                              " is not a multiple of token rows " + std::to_string(h_tok));
  require(W % w_tok == 0, "mask_to_latent: width " + std::to_string(W) +
                              " is not a multiple of token cols " + std::to_string(w_tok));
  const int64_t fy = H / h_tok, fx = W / w_tok;
  Tensor out({h_tok, w_tok});
  for (int64_t i = 0; i < h_tok; ++i)
    for (int64_t j = 0; j < w_tok; ++j) {
      double acc = 0.0;
      for (int64_t dy = 0; dy < fy; ++dy)
        for (int64_t dx = 0; dx < fx; ++dx)
          acc += static_cast<double>(mask_hi[(i * fy + dy) * W + j * fx + dx]);
      acc /= static_cast<double>(fy * fx);
      out[i * w_tok + j] = acc >= 0.5 ? 1.0f : 0.0f;
    }
  return out;
}

std::vector<Eigen::Vector3d> read_ply_xyz(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open PLY file: " + path);

  std::string line;
  std::getline(f, line);
  if (line != "ply") throw ParseError("not a PLY file: " + path);

  int64_t vertex_count = -1;
  bool little_endian = false;
  struct Prop {
    std::string name;
    int size = 0;
  };
  std::vector<Prop> props;
  bool in_vertex_element = false;

  auto prop_size = [](const std::string& type) -> int {
    if (type == "float" || type == "float32" || type == "int" || type == "int32" ||
        type == "uint" || type == "uint32")
      return 4;
    if (type == "double" || type == "float64") return 8;
    if (type == "char" || type == "uchar" || type == "int8" || type == "uint8") return 1;
    if (type == "short" || type == "ushort" || type == "int16" || type == "uint16") return 2;
    return 0;
  };

  while (std::getline(f, line)) {
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "format") {
      std::string fmt;
      ls >> fmt;
      little_endian = fmt == "binary_little_endian";
      if (!little_endian) throw ParseError("PLY must be binary_little_endian: " + path);
    } else if (tok == "element") {
      std::string what;
      int64_t count;
      ls >> what >> count;
      in_vertex_element = what == "vertex";
      if (in_vertex_element) vertex_count = count;
    } else if (tok == "property" && in_vertex_element) {
      std::string type, name;
      ls >> type >> name;
      if (type == "list") throw ParseError("PLY list properties unsupported in vertex element");
      int sz = prop_size(type);
      if (sz == 0) throw ParseError("PLY property type unsupported: " + type);
      if ((name == "x" || name == "y" || name == "z") && type != "float" && type != "float32")
        throw ParseError("PLY x,y,z must be float32: " + path);
      props.push_back({name, sz});
    } else if (tok == "end_header") {
      break;
    }
  }
  if (vertex_count < 0) throw ParseError("PLY has no vertex element: " + path);

  int64_t stride = 0, off_x = -1, off_y = -1, off_z = -1;
  for (const auto& p : props) {
    if (p.name == "x") off_x = stride;
    if (p.name == "y") off_y = stride;
    if (p.name == "z") off_z = stride;
    stride += p.size;
  }
  if (off_x < 0 || off_y < 0 || off_z < 0)
    throw ParseError("PLY vertex element lacks x,y,z properties: " + path);

  std::vector<char> row(static_cast<size_t>(stride));
  std::vector<Eigen::Vector3d> points;
  points.reserve(static_cast<size_t>(vertex_count));
  for (int64_t i = 0; i < vertex_count; ++i) {
    f.read(row.data(), stride);
    if (f.gcount() != stride)
      throw ParseError("PLY truncated at vertex " + std::to_string(i) + ": " + path);
    float x, y, z;
    std::memcpy(&x, row.data() + off_x, 4);
    std::memcpy(&y, row.data() + off_y, 4);
    std::memcpy(&z, row.data() + off_z, 4);
    points.emplace_back(x, y, z);
  }
  return points;
}

void write_ply_xyz(const std::vector<Eigen::Vector3d>& points, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot write PLY file: " + path);
  f << "ply\nformat binary_little_endian 1.0\nelement vertex " << points.size()
    << "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
  for (const auto& p : points) {
    float xyz[3] = {static_cast<float>(p.x()), static_cast<float>(p.y()),
                    static_cast<float>(p.z())};
    f.write(reinterpret_cast<const char*>(xyz), 12);
  }
}

FeaturePointCloud load_point_cloud(const std::string& ply_path,
                                   const std::string& features_path) {
  FeaturePointCloud cloud;
  cloud.positions = read_ply_xyz(ply_path);
  cloud.features = load_tensor(features_path);
  require(cloud.features.rank() == 2, "point features must be [N,D]");
  require(cloud.features.dim(0) == cloud.size(),
          "point features rows (" + std::to_string(cloud.features.dim(0)) +
              ") do not match PLY vertex count (" + std::to_string(cloud.size()) + ")");
  cloud.weights.assign(static_cast<size_t>(cloud.size()), 1.0f);
  cloud.validate();
  return cloud;
}

}  // namespace cdk
