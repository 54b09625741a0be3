#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cdk/features.hpp"
#include "cdk/tensor.hpp"

namespace cdk {

// Pinhole camera, x-right / y-down / z-forward, pixel centers at
// half-integer coordinates. K is upper-triangular with positive focals;
// world_to_cam is a rigid transform.
struct Camera {
  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
  Eigen::Matrix4d world_to_cam = Eigen::Matrix4d::Identity();
  int width = 0;
  int height = 0;

  void validate() const;

  Eigen::Vector3d center() const;  // camera origin in world coordinates
  Eigen::Vector3d to_camera(const Eigen::Vector3d& p_world) const;
  Eigen::Vector3d to_world(const Eigen::Vector3d& p_cam) const;

  // Projects a world point; returns (u,v,z_cam). Callers check z > 0.
  Eigen::Vector3d project(const Eigen::Vector3d& p_world) const;

  // World-space ray through pixel coordinates (u,v); direction has unit
  // camera-space depth so the ray parameter equals z-depth.
  void pixel_ray(double u, double v, Eigen::Vector3d& origin, Eigen::Vector3d& dir) const;

  // Unprojects pixel (u,v) at camera-space depth d to world coordinates.
  Eigen::Vector3d unproject(double u, double v, double depth) const;
};

std::vector<Camera> load_cameras_json(const std::string& path);
void save_cameras_json(const std::vector<Camera>& cameras, const std::string& path);

struct FeaturePointCloud {
  std::vector<Eigen::Vector3d> positions;
  Tensor features;              // [N,D]
  std::vector<float> weights;   // accumulation weights, default 1

  int64_t size() const { return static_cast<int64_t>(positions.size()); }
  int64_t feature_dim() const { return features.empty() ? 0 : features.dim(1); }
  void validate() const;
};

struct VoxelCell {
  std::vector<float> feature;  // running mean of contributing points
  double count = 0.0;
};

struct VoxelKey {
  int64_t i = 0, j = 0, k = 0;
  auto operator<=>(const VoxelKey&) const = default;
};

// Sparse feature grid; cell indices are floor((p - origin) / voxel_size).
struct FeatureVoxelGrid {
  double voxel_size = 0.02;
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  int64_t feature_dim = 0;
  std::map<VoxelKey, VoxelCell> cells;  // ordered for canonical serialization

  Eigen::Vector3d cell_min(const VoxelKey& key) const {
    return origin + voxel_size * Eigen::Vector3d(static_cast<double>(key.i),
                                                 static_cast<double>(key.j),
                                                 static_cast<double>(key.k));
  }

  // Canonical byte serialization (sorted cells) for order-independence checks.
  std::vector<uint8_t> canonical_bytes() const;
};

// Rendered conditioning frame(s) with a validity mask (1 = geometry
// projected, 0 = hole; features at holes are zero).
struct RenderedConditioning {
  FeatureGrid features;  // [T,D,h,w]
  Tensor mask;           // [T,1,h,w] binary
};

// One point per valid (frame, grid cell): the cell-center ray scaled by
// depth and moved to world coordinates, carrying that cell's feature.
// Invalid depths are marked non-finite (or non-positive) and skipped.
FeaturePointCloud lift(const FeatureGrid& features, const Tensor& depth,
                       const std::vector<Camera>& cameras);

FeatureVoxelGrid voxelize(const FeaturePointCloud& cloud, double voxel_size,
                          const Eigen::Vector3d& origin = Eigen::Vector3d::Zero());

// Z-buffered render of the voxels as axis-aligned cubes: every output cell
// takes the feature of the minimum-depth cube its center ray hits; depth
// ties break toward the lexicographically smallest (i,j,k).
RenderedConditioning render_voxels(const FeatureVoxelGrid& grid, const Camera& camera,
                                   int64_t out_h, int64_t out_w);

// Z-buffered point splats covering the containing cell plus all cells
// whose center lies within radius_px of the projected point.
RenderedConditioning render_points(const FeaturePointCloud& cloud, const Camera& camera,
                                   int64_t out_h, int64_t out_w, double radius_px);

// Area-average the high-resolution binary mask onto the token grid and
// threshold at 0.5 (>= 0.5 counts as valid).
Tensor mask_to_latent(const Tensor& mask_hi, int64_t h_tok, int64_t w_tok);

// Binary little-endian PLY with float32 x,y,z properties; other float32
// properties are skipped. Features travel in a row-paired sidecar tensor.
std::vector<Eigen::Vector3d> read_ply_xyz(const std::string& path);
void write_ply_xyz(const std::vector<Eigen::Vector3d>& points, const std::string& path);

FeaturePointCloud load_point_cloud(const std::string& ply_path,
                                   const std::string& features_path);

}  // namespace cdk
