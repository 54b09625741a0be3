#include <doctest.h>

#include "cdk/voxel.hpp"
#include "oracles.hpp"

using namespace cdk;

namespace {

Camera look_forward(int width, int height, double focal) {
  Camera cam;
  cam.K << focal, 0, width / 2.0, 0, focal, height / 2.0, 0, 0, 1;
  cam.width = width;
  cam.height = height;
  return cam;  // identity pose: camera at the origin looking down +z
}

// Oracle-side ray construction: closed-form inverse of the upper-triangular
// intrinsics, independent of the library's Eigen inverse path.
void oracle_ray(const Camera& cam, double u, double v, Eigen::Vector3d& origin,
                Eigen::Vector3d& dir) {
  const double fx = cam.K(0, 0), sk = cam.K(0, 1), cx = cam.K(0, 2);
  const double fy = cam.K(1, 1), cy = cam.K(1, 2);
  const double yc = (v - cy) / fy;
  const double xc = (u - cx - sk * yc) / fx;
  Eigen::Matrix3d r = cam.world_to_cam.topLeftCorner<3, 3>();
  Eigen::Vector3d t = cam.world_to_cam.topRightCorner<3, 1>();
  origin = -r.transpose() * t;
  dir = r.transpose() * Eigen::Vector3d(xc, yc, 1.0);
}

Eigen::Matrix3d rotation_xyz(double ax, double ay, double az) {
  Eigen::Matrix3d rx, ry, rz;
  rx << 1, 0, 0, 0, std::cos(ax), -std::sin(ax), 0, std::sin(ax), std::cos(ax);
  ry << std::cos(ay), 0, std::sin(ay), 0, 1, 0, -std::sin(ay), 0, std::cos(ay);
  rz << std::cos(az), -std::sin(az), 0, std::sin(az), std::cos(az), 0, 0, 0, 1;
  return rz * ry * rx;
}

}  // namespace

TEST_CASE("camera validation enforces the documented conventions") {
  Camera cam = look_forward(8, 6, 5.0);
  cam.validate();

  Camera bad = cam;
  bad.K(1, 0) = 0.1;
  CHECK_THROWS_AS(bad.validate(), ContractError);

  bad = cam;
  bad.world_to_cam(0, 0) = 2.0;  // not orthonormal
  CHECK_THROWS_AS(bad.validate(), ContractError);

  bad = cam;
  bad.K(0, 0) = -5.0;
  CHECK_THROWS_AS(bad.validate(), ContractError);
}

TEST_CASE("lift: optical axis, invalid depths, and the projective round trip") {
  const int w = 9, h = 7;
  Camera cam = look_forward(w, h, 4.0);

  SUBCASE("the center cell at depth 2 lifts to (0,0,2)") {
    FeatureGrid grid;
    grid.data = Tensor({1, 2, h, w});
    Tensor depth = Tensor::full({1, h, w}, std::numeric_limits<float>::quiet_NaN());
    depth[(h / 2) * w + (w / 2)] = 2.0f;  // pixel center (4.5, 3.5) = principal point
    grid.data[(0 * h + h / 2) * w + w / 2] = 1.0f;

    FeaturePointCloud cloud = lift(grid, depth, {cam});
    REQUIRE(cloud.size() == 1);
    CHECK(cloud.positions[0].x() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(cloud.positions[0].y() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(cloud.positions[0].z() == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(cloud.features[0] == 1.0f);
  }

  SUBCASE("all-invalid depth gives an empty cloud") {
    FeatureGrid grid;
    grid.data = Tensor({1, 2, h, w});
    Tensor depth = Tensor::full({1, h, w}, -1.0f);
    CHECK(lift(grid, depth, {cam}).size() == 0);
  }

  SUBCASE("lift then project returns each source cell center within half a cell") {
    Rng rng(1);
    FeatureGrid grid;
    grid.data = Tensor::randn({1, 2, h, w}, rng);
    Tensor depth({1, h, w});
    for (int64_t i = 0; i < depth.size(); ++i)
      depth[i] = 1.0f + static_cast<float>(rng.uniform()) * 3.0f;

    FeaturePointCloud cloud = lift(grid, depth, {cam});
    REQUIRE(cloud.size() == h * w);
    int64_t n = 0;
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j, ++n) {
        Eigen::Vector3d uvz = cam.project(cloud.positions[static_cast<size_t>(n)]);
        CHECK(std::abs(uvz.x() - (j + 0.5)) < 0.5);
        CHECK(std::abs(uvz.y() - (i + 0.5)) < 0.5);
        CHECK(uvz.z() == doctest::Approx(depth[i * w + j]).epsilon(1e-6));
      }
  }

  SUBCASE("a non-orthonormal pose is rejected") {
    FeatureGrid grid;
    grid.data = Tensor({1, 2, h, w});
    Tensor depth = Tensor::ones({1, h, w});
    Camera bad = cam;
    bad.world_to_cam(0, 1) = 0.3;
    CHECK_THROWS_AS(lift(grid, depth, {bad}), ContractError);
  }
}

TEST_CASE("voxelize: means, boundary rule, and order independence") {
  SUBCASE("two points in one cell average their features") {
    FeaturePointCloud cloud;
    cloud.positions = {{0.005, 0.005, 0.005}, {0.015, 0.012, 0.003}};
    cloud.features = Tensor({2, 2}, {1.0f, 0.0f, 0.0f, 2.0f});
    cloud.weights = {1.0f, 1.0f};
    FeatureVoxelGrid grid = voxelize(cloud, 0.02);
    REQUIRE(grid.cells.size() == 1);
    const VoxelCell& cell = grid.cells.begin()->second;
    CHECK(cell.count == 2.0);
    CHECK(cell.feature[0] == doctest::Approx(0.5f));
    CHECK(cell.feature[1] == doctest::Approx(1.0f));
  }

  SUBCASE("points exactly on a boundary fall in the lower cell by the floor rule") {
    FeaturePointCloud cloud;
    cloud.positions = {{0.02, 0.0, 0.0}};
    cloud.features = Tensor({1, 1}, {1.0f});
    cloud.weights = {1.0f};
    FeatureVoxelGrid grid = voxelize(cloud, 0.02);
    REQUIRE(grid.cells.size() == 1);
    CHECK(grid.cells.begin()->first.i == 1);
    CHECK(grid.cells.begin()->first.j == 0);
  }

  SUBCASE("permuting the points leaves the canonical serialization unchanged") {
    Rng rng(2);
    FeaturePointCloud cloud;
    const int64_t n = 200;
    std::vector<float> feats;
    for (int64_t i = 0; i < n; ++i) {
      cloud.positions.emplace_back(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1),
                                   rng.uniform(-0.1, 0.1));
      feats.push_back(static_cast<float>(rng.normal()));
      feats.push_back(static_cast<float>(rng.normal()));
    }
    cloud.features = Tensor({n, 2}, std::move(feats));
    cloud.weights.assign(n, 1.0f);

    FeatureVoxelGrid a = voxelize(cloud, 0.02);

    // deterministic shuffle
    FeaturePointCloud shuffled;
    std::vector<int64_t> order(n);
    for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    for (int64_t i = n - 1; i > 0; --i)
      std::swap(order[static_cast<size_t>(i)],
                order[static_cast<size_t>(rng.uniform_int(static_cast<uint64_t>(i + 1)))]);
    std::vector<float> sfeats;
    for (int64_t i : order) {
      shuffled.positions.push_back(cloud.positions[static_cast<size_t>(i)]);
      sfeats.push_back(cloud.features[i * 2]);
      sfeats.push_back(cloud.features[i * 2 + 1]);
    }
    shuffled.features = Tensor({n, 2}, std::move(sfeats));
    shuffled.weights.assign(n, 1.0f);

    FeatureVoxelGrid b = voxelize(shuffled, 0.02);
    CHECK(a.canonical_bytes() == b.canonical_bytes());
  }

  SUBCASE("halving the voxel size never decreases the occupied cell count") {
    Rng rng(3);
    FeaturePointCloud cloud;
    std::vector<float> feats;
    for (int i = 0; i < 100; ++i) {
      cloud.positions.emplace_back(rng.uniform(0, 0.2), rng.uniform(0, 0.2), rng.uniform(0, 0.2));
      feats.push_back(1.0f);
    }
    cloud.features = Tensor({100, 1}, std::move(feats));
    cloud.weights.assign(100, 1.0f);
    size_t prev = voxelize(cloud, 0.08).cells.size();
    for (double vs : {0.04, 0.02, 0.01}) {
      size_t now = voxelize(cloud, vs).cells.size();
      CHECK(now >= prev);
      prev = now;
    }
  }
}

TEST_CASE("render_voxels: single voxel, z-order, and tie breaking") {
  SUBCASE("one voxel on the optical axis covers exactly the central cell") {
    // narrow fov: the cube at depth 1 projects inside the central pixel
    Camera cam = look_forward(9, 7, 3.0);
    FeaturePointCloud cloud;
    cloud.positions = {{0.0, 0.0, 1.0}};
    cloud.features = Tensor({1, 2}, {0.5f, -1.0f});
    cloud.weights = {1.0f};
    FeatureVoxelGrid grid = voxelize(cloud, 0.02);

    RenderedConditioning out = render_voxels(grid, cam, 7, 9);
    int64_t covered = 0;
    for (int64_t i = 0; i < 7 * 9; ++i) covered += out.mask[i] == 1.0f;
    CHECK(covered == 1);
    CHECK(out.mask[3 * 9 + 4] == 1.0f);
    CHECK(out.features.data[3 * 9 + 4] == 0.5f);
    CHECK(out.features.data[9 * 7 + 3 * 9 + 4] == -1.0f);
  }

  SUBCASE("the nearer of two voxels on a ray wins") {
    Camera cam = look_forward(5, 5, 3.0);
    FeaturePointCloud cloud;
    cloud.positions = {{0.0, 0.0, 2.0}, {0.0, 0.0, 1.0}};
    cloud.features = Tensor({2, 1}, {7.0f, 3.0f});
    cloud.weights = {1.0f, 1.0f};
    FeatureVoxelGrid grid = voxelize(cloud, 0.02);
    RenderedConditioning out = render_voxels(grid, cam, 5, 5);
    CHECK(out.features.data[2 * 5 + 2] == 3.0f);
  }

  SUBCASE("exact depth ties break toward the smaller (i,j,k)") {
    // two voxels side by side, both entered through the same x-plane by a
    // ray that passes through their shared face plane
    FeatureVoxelGrid grid;
    grid.voxel_size = 1.0;
    grid.feature_dim = 1;
    grid.cells[{0, 0, 0}] = VoxelCell{{1.0f}, 1.0};
    grid.cells[{0, 1, 0}] = VoxelCell{{2.0f}, 1.0};

    Camera cam;
    cam.K << 1.0, 0, 0.5, 0, 1.0, 0.5, 0, 0, 1;
    cam.width = 1;
    cam.height = 1;
    // place the camera so the single pixel ray runs along the shared y=1
    // face plane of both cubes: origin at (-2, 1, 0.5) looking toward +x
    Eigen::Matrix3d r;
    r << 0, 0, -1, 0, 1, 0, 1, 0, 0;  // camera forward axis = world +x
    cam.world_to_cam.topLeftCorner<3, 3>() = r;
    Eigen::Vector3d center(-2.0, 1.0, 0.5);
    cam.world_to_cam.topRightCorner<3, 1>() = -r * center;
    cam.validate();

    RenderedConditioning out = render_voxels(grid, cam, 1, 1);
    REQUIRE(out.mask[0] == 1.0f);
    CHECK(out.features.data[0] == 1.0f);  // lexicographically smaller cell
  }

  SUBCASE("an empty grid renders to all holes") {
    Camera cam = look_forward(4, 4, 2.0);
    FeatureVoxelGrid grid;
    grid.feature_dim = 3;
    RenderedConditioning out = render_voxels(grid, cam, 4, 4);
    for (int64_t i = 0; i < out.mask.size(); ++i) CHECK(out.mask[i] == 0.0f);
    for (int64_t i = 0; i < out.features.data.size(); ++i)
      CHECK(out.features.data[i] == 0.0f);
  }
}

TEST_CASE("render_voxels matches the exhaustive ray-cube oracle on random scenes") {
  Rng rng(4);
  const int64_t out_h = 12, out_w = 18;
  for (int scene = 0; scene < 25; ++scene) {
    // random camera on a shell looking well away from the voxel cluster
    Camera cam;
    cam.K << 14.0 + rng.uniform() * 4.0, 0, out_w / 2.0, 0, 14.0 + rng.uniform() * 4.0,
        out_h / 2.0, 0, 0, 1;
    cam.width = static_cast<int>(out_w);
    cam.height = static_cast<int>(out_h);
    Eigen::Matrix3d r = rotation_xyz(rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2),
                                     rng.uniform(-0.2, 0.2));
    Eigen::Vector3d center(rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05),
                           rng.uniform(-0.6, -0.4));
    cam.world_to_cam.topLeftCorner<3, 3>() = r;
    cam.world_to_cam.topRightCorner<3, 1>() = -r * center;
    cam.validate();

    const double voxel_size = 0.02;
    const int64_t n_vox = 1 + static_cast<int64_t>(rng.uniform_int(50));
    FeatureVoxelGrid grid;
    grid.voxel_size = voxel_size;
    grid.feature_dim = 3;
    std::vector<oracles::OracleVoxel> oracle_voxels;
    for (int64_t v = 0; v < n_vox; ++v) {
      VoxelKey key{static_cast<int64_t>(rng.uniform_int(13)) - 6,
                   static_cast<int64_t>(rng.uniform_int(13)) - 6,
                   static_cast<int64_t>(rng.uniform_int(10))};
      VoxelCell cell;
      cell.feature = {static_cast<float>(rng.normal()), static_cast<float>(rng.normal()),
                      static_cast<float>(rng.normal())};
      cell.count = 1.0;
      grid.cells[key] = cell;
      oracle_voxels.push_back({key.i, key.j, key.k, grid.cells[key].feature});
    }

    RenderedConditioning out = render_voxels(grid, cam, out_h, out_w);

    for (int64_t y = 0; y < out_h; ++y)
      for (int64_t x = 0; x < out_w; ++x) {
        Eigen::Vector3d origin, dir;
        oracle_ray(cam, x + 0.5, y + 0.5, origin, dir);
        oracles::OracleHit hit = oracles::oracle_trace(origin, dir, oracle_voxels, voxel_size,
                                                       Eigen::Vector3d::Zero());
        REQUIRE(out.mask[y * out_w + x] == (hit.hit ? 1.0f : 0.0f));
        if (hit.hit)
          for (int64_t f = 0; f < 3; ++f)
            REQUIRE(out.features.data[(f * out_h + y) * out_w + x] ==
                    hit.feature[static_cast<size_t>(f)]);
      }
  }
}

TEST_CASE("render_points: radius zero, coverage monotonicity, empty cloud") {
  Camera cam = look_forward(10, 8, 5.0);

  SUBCASE("radius 0 covers exactly the containing cell") {
    FeaturePointCloud cloud;
    cloud.positions = {{0.11, 0.07, 1.0}};
    cloud.features = Tensor({1, 1}, {4.0f});
    cloud.weights = {1.0f};
    RenderedConditioning out = render_points(cloud, cam, 8, 10, 0.0);
    int64_t covered = 0;
    for (int64_t i = 0; i < out.mask.size(); ++i) covered += out.mask[i] == 1.0f;
    CHECK(covered == 1);
  }

  SUBCASE("coverage is monotone in the radius") {
    Rng rng(5);
    FeaturePointCloud cloud;
    std::vector<float> feats;
    for (int i = 0; i < 10; ++i) {
      cloud.positions.emplace_back(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3),
                                   1.0 + rng.uniform());
      feats.push_back(static_cast<float>(i));
    }
    cloud.features = Tensor({10, 1}, std::move(feats));
    cloud.weights.assign(10, 1.0f);

    int64_t prev = -1;
    for (double radius : {0.0, 1.0, 2.0, 3.0}) {
      RenderedConditioning out = render_points(cloud, cam, 8, 10, radius);
      int64_t covered = 0;
      for (int64_t i = 0; i < out.mask.size(); ++i) covered += out.mask[i] == 1.0f;
      CHECK(covered >= prev);
      prev = covered;
    }
  }

  SUBCASE("an empty cloud renders to all holes") {
    FeaturePointCloud cloud;
    cloud.features = Tensor({0, 2});
    RenderedConditioning out = render_points(cloud, cam, 8, 10, 2.0);
    for (int64_t i = 0; i < out.mask.size(); ++i) CHECK(out.mask[i] == 0.0f);
  }
}

TEST_CASE("lift-render consistency on a fronto-parallel plane") {
  // one point per cell at constant depth, rendered back at the same
  // resolution, reproduces the source features wherever depth is valid
  const int w = 8, h = 6;
  Camera cam = look_forward(w, h, 10.0);
  Rng rng(6);
  FeatureGrid grid;
  grid.data = Tensor::randn({1, 3, h, w}, rng);
  Tensor depth = Tensor::full({1, h, w}, 2.0f);
  depth[5] = std::numeric_limits<float>::quiet_NaN();

  FeaturePointCloud cloud = lift(grid, depth, {cam});
  RenderedConditioning out = render_points(cloud, cam, h, w, 0.0);
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j) {
      const bool valid = !(i == 0 && j == 5);
      CHECK(out.mask[i * w + j] == (valid ? 1.0f : 0.0f));
      if (valid)
        for (int64_t f = 0; f < 3; ++f)
          CHECK(out.features.data[(f * h + i) * w + j] ==
                doctest::Approx(grid.data[(f * h + i) * w + j]).epsilon(1e-5));
    }
}

TEST_CASE("mask pooling to the token grid") {
  CHECK(max_abs_diff(mask_to_latent(Tensor::ones({8, 8}), 4, 4), Tensor::ones({4, 4})) == 0.0);
  CHECK(max_abs_diff(mask_to_latent(Tensor({8, 8}), 4, 4), Tensor({4, 4})) == 0.0);

  // a checkerboard sits exactly at 0.5 coverage and resolves to valid
  Tensor checker({4, 4});
  for (int64_t i = 0; i < 4; ++i)
    for (int64_t j = 0; j < 4; ++j) checker[i * 4 + j] = static_cast<float>((i + j) % 2);
  Tensor pooled = mask_to_latent(checker, 2, 2);
  for (int64_t i = 0; i < 4; ++i) CHECK(pooled[i] == 1.0f);

  CHECK_THROWS_AS(mask_to_latent(Tensor({5, 4}), 2, 2), ContractError);
}

TEST_CASE("PLY io and the row-paired sidecar contract") {
  const std::string dir = oracles::temp_dir("ply");
  std::vector<Eigen::Vector3d> pts = {{0.5, -1.25, 3.0}, {0.0, 0.0, 1.0}, {2.5, 2.5, 2.5}};
  write_ply_xyz(pts, dir + "/cloud.ply");
  auto back = read_ply_xyz(dir + "/cloud.ply");
  REQUIRE(back.size() == 3);
  for (size_t i = 0; i < 3; ++i) CHECK((back[i] - pts[i]).norm() < 1e-6);

  save_tensor(Tensor({3, 2}, {1, 2, 3, 4, 5, 6}), dir + "/feat.cdkt");
  FeaturePointCloud cloud = load_point_cloud(dir + "/cloud.ply", dir + "/feat.cdkt");
  CHECK(cloud.feature_dim() == 2);

  save_tensor(Tensor({2, 2}, {1, 2, 3, 4}), dir + "/short.cdkt");
  CHECK_THROWS_AS(load_point_cloud(dir + "/cloud.ply", dir + "/short.cdkt"), ContractError);
}
