// SPDX-License-Identifier: Apache-2.0

#include "gemreg/segmentation.hpp"

#include "gemreg/cloud_io.hpp"
#include "oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace gemreg;

namespace {

VoxelCell cell_with_eigenvalues(const Vec3& eigenvalues, std::size_t count = 50) {
  VoxelCell cell;
  cell.count = count;
  cell.mean = Vec3(0.5, 0.5, 0.5);
  cell.cov = eigenvalues.asDiagonal();
  return cell;
}

// dense plate sampled on z = height over [0,nx*step) x [0,ny*step)
PointCloud plate(double height, int nx, int ny, double step, double x0 = 0, double y0 = 0) {
  PointCloud cloud;
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < ny; ++j)
      cloud.points.emplace_back(x0 + i * step + 0.01, y0 + j * step + 0.013, height);
  return cloud;
}

void append(PointCloud& dst, const PointCloud& src) {
  dst.points.insert(dst.points.end(), src.points.begin(), src.points.end());
}

}  // namespace

TEST_CASE("plane voxel classification by eigenvalue ratio") {
  SECTION("thin disc is planar") {
    Vec3 normal;
    REQUIRE(classify_plane_voxel(cell_with_eigenvalues(Vec3(10, 5, 0.1)), 30.0, &normal));
    CHECK(std::abs(std::abs(normal.z()) - 1.0) < 1e-12);  // smallest axis is z
  }
  SECTION("isotropic cell is not") {
    CHECK_FALSE(classify_plane_voxel(cell_with_eigenvalues(Vec3(1, 1, 1)), 30.0));
  }
  SECTION("two points can never be a plane") {
    CHECK_FALSE(classify_plane_voxel(cell_with_eigenvalues(Vec3(10, 5, 0.1), 2), 30.0));
  }
}

TEST_CASE("plane region growing") {
  SegmentationConfig cfg;

  SECTION("coplanar adjacent patches merge into one plane") {
    const PointCloud cloud = plate(0.0, 40, 40, 0.25);
    const VoxelMap map = voxelize(cloud, 1.0);
    const std::vector<Segment> planes = grow_planes(map, cfg);
    REQUIRE(planes.size() == 1);
    CHECK(planes[0].point_count == cloud.size());
    REQUIRE(planes[0].normal.has_value());
    CHECK(std::abs(std::abs(planes[0].normal->z()) - 1.0) < 1e-9);
  }

  SECTION("parallel planes one meter apart stay separate") {
    PointCloud cloud = plate(0.0, 24, 24, 0.25);
    append(cloud, plate(1.0, 24, 24, 0.25));
    const VoxelMap map = voxelize(cloud, 1.0);
    // distance condition: |n.(p1-p2)| = 1 > 0.2
    CHECK(grow_planes(map, cfg).size() == 2);
  }

  SECTION("perpendicular wall and floor stay separate") {
    PointCloud cloud = plate(0.0, 24, 24, 0.25);  // floor on z=0
    for (int i = 0; i < 24; ++i)                  // wall on x~0
      for (int j = 0; j < 24; ++j)
        cloud.points.emplace_back(0.015, i * 0.25 + 0.01, j * 0.25 + 0.26);
    const VoxelMap map = voxelize(cloud, 1.0);
    const std::vector<Segment> planes = grow_planes(map, cfg);
    // normal condition: |n1.n2| = 0 < 0.95
    CHECK(planes.size() == 2);
  }

  SECTION("segments are independent of input point order") {
    Pcg32 rng(11);
    PointCloud cloud = plate(0.0, 30, 30, 0.25);
    append(cloud, plate(2.0, 20, 20, 0.25, 12.0, 0.0));
    PointCloud shuffled = cloud;
    for (std::size_t i = shuffled.points.size(); i > 1; --i)
      std::swap(shuffled.points[i - 1],
                shuffled.points[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    auto keys_of = [](const std::vector<Segment>& segs) {
      std::vector<std::vector<VoxelKey>> out;
      for (const Segment& s : segs) {
        std::vector<VoxelKey> keys = s.voxel_keys;
        std::sort(keys.begin(), keys.end());
        out.push_back(keys);
      }
      std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a < b; });
      return out;
    };
    const auto a = keys_of(grow_planes(voxelize(cloud, 1.0), cfg));
    const auto b = keys_of(grow_planes(voxelize(shuffled, 1.0), cfg));
    CHECK(a == b);
  }

  SECTION("refit normal satisfies the eigen-ratio gate on the merged covariance") {
    const PointCloud cloud = plate(0.0, 40, 40, 0.25);
    const VoxelMap map = voxelize(cloud, 1.0);
    const std::vector<Segment> planes = grow_planes(map, cfg);
    REQUIRE(planes.size() == 1);
    std::vector<const VoxelCell*> cells;
    for (const VoxelKey& k : planes[0].voxel_keys) cells.push_back(map.find(k));
    const auto [mu, sigma] = merge_moments(cells);
    (void)mu;
    Vec3 ev;
    symmetric_eigen_desc(sigma, &ev, nullptr);
    CHECK(ev[1] >= cfg.eigen_ratio * ev[2]);
  }
}

TEST_CASE("clustering of unclaimed voxels") {
  SegmentationConfig cfg;

  SECTION("two blobs far apart give two clusters") {
    Pcg32 rng(5);
    PointCloud cloud;
    for (int i = 0; i < 200; ++i) cloud.points.push_back(Vec3(0, 0, 3) + rng.in_unit_ball());
    for (int i = 0; i < 200; ++i) cloud.points.push_back(Vec3(5, 0, 3) + rng.in_unit_ball());
    const VoxelMap map = voxelize(cloud, 1.0);
    CHECK(cluster_remaining(map, {}, cfg).size() == 2);
  }

  SECTION("one blob spanning adjacent voxels is a single cluster") {
    Pcg32 rng(6);
    PointCloud cloud;
    for (int i = 0; i < 400; ++i)
      cloud.points.push_back(Vec3(0.5, 0.5, 0.5) + rng.in_unit_ball() * 1.4);
    const VoxelMap map = voxelize(cloud, 1.0);
    CHECK(cluster_remaining(map, {}, cfg).size() == 1);
  }

  SECTION("specks below the minimum point count are discarded") {
    PointCloud cloud;
    cloud.points = {Vec3(0, 0, 0), Vec3(0.1, 0, 0), Vec3(0, 0.1, 0)};
    const VoxelMap map = voxelize(cloud, 1.0);
    CHECK(cluster_remaining(map, {}, cfg).empty());
  }
}

TEST_CASE("line classification by sampled fit") {
  SegmentationConfig cfg;
  auto make_segment = [](const PointCloud& cloud) {
    Segment seg;
    seg.id = 0;
    for (std::uint32_t i = 0; i < cloud.size(); ++i) seg.point_refs.push_back(i);
    seg.point_count = cloud.size();
    return seg;
  };

  SECTION("collinear points are a line with full inlier ratio") {
    PointCloud cloud;
    for (int i = 0; i < 60; ++i) cloud.points.emplace_back(i * 0.1, 0, 0);
    Vec3 dir;
    REQUIRE(classify_line(make_segment(cloud), cloud, cfg, &dir));
    CHECK(std::abs(std::abs(dir.x()) - 1.0) < 1e-9);
  }

  SECTION("an isotropic blob is not a line") {
    Pcg32 rng(9);
    PointCloud cloud;
    for (int i = 0; i < 80; ++i) cloud.points.push_back(rng.in_unit_ball() * 3.0);
    // oracle: even the best pair-aligned fit keeps the inlier ratio low
    std::size_t best = 0;
    for (std::size_t a = 0; a < cloud.size(); ++a)
      for (std::size_t b = a + 1; b < cloud.size(); ++b) {
        const Vec3 dir = (cloud.points[b] - cloud.points[a]).normalized();
        std::size_t count = 0;
        for (const Vec3& p : cloud.points) {
          const Vec3 d = p - cloud.points[a];
          if ((d - dir * dir.dot(d)).norm() <= cfg.line_distance) ++count;
        }
        best = std::max(best, count);
      }
    REQUIRE(static_cast<double>(best) / static_cast<double>(cloud.size()) <
            cfg.line_inlier_ratio);
    CHECK_FALSE(classify_line(make_segment(cloud), cloud, cfg, nullptr));
  }

  SECTION("a 60/40 mix of rod and blob is a line at ratio 0.5") {
    Pcg32 rng(10);
    PointCloud cloud;
    for (int i = 0; i < 60; ++i) cloud.points.emplace_back(i * 0.08, 0, 0);
    for (int i = 0; i < 40; ++i)
      cloud.points.push_back(Vec3(2.5, 4.0, 0) + rng.in_unit_ball() * 1.5);
    CHECK(classify_line(make_segment(cloud), cloud, cfg, nullptr));
  }

  SECTION("ratio zero accepts everything, ratio above one only perfect lines") {
    Pcg32 rng(12);
    PointCloud cloud;
    for (int i = 0; i < 30; ++i) cloud.points.push_back(rng.in_unit_ball() * 2.0);
    SegmentationConfig zero = cfg;
    zero.line_inlier_ratio = 0.0;
    CHECK(classify_line(make_segment(cloud), cloud, zero, nullptr));
    SegmentationConfig above = cfg;
    above.line_inlier_ratio = 1.0 + 1e-9;
    CHECK_FALSE(classify_line(make_segment(cloud), cloud, above, nullptr));
  }
}

TEST_CASE("voxel relabeling") {
  SegmentationConfig cfg;
  PointCloud cloud = plate(0.0, 30, 30, 0.25);
  Pcg32 rng(20);
  for (int i = 0; i < 300; ++i) cloud.points.push_back(Vec3(3.5, 3.5, 4.0) + rng.in_unit_ball());
  const VoxelMap map = voxelize(cloud, 1.0);

  SECTION("labels cover exactly the claimed voxels") {
    std::vector<Segment> planes = grow_planes(map, cfg);
    std::vector<Segment> clusters = cluster_remaining(map, planes, cfg);
    REQUIRE(planes.size() == 1);
    REQUIRE(clusters.size() == 1);
    planes[0].id = 0;
    clusters[0].id = 1;
    const SemanticVoxelMap semantic = relabel_voxels(planes, clusters, {}, map);
    std::size_t plane_cells = 0, cluster_cells = 0;
    for (const SemanticVoxel& sv : semantic.cells) {
      if (sv.cell.label == VoxelLabel::plane) ++plane_cells;
      if (sv.cell.label == VoxelLabel::cluster) ++cluster_cells;
    }
    CHECK(plane_cells == planes[0].voxel_keys.size());
    CHECK(cluster_cells == clusters[0].voxel_keys.size());
  }

  SECTION("no segments leaves all voxels unassigned") {
    const SemanticVoxelMap semantic = relabel_voxels({}, {}, {}, map);
    for (const SemanticVoxel& sv : semantic.cells)
      CHECK(sv.cell.label == VoxelLabel::unassigned);
  }

  SECTION("double claims are rejected") {
    Segment a, b;
    a.id = 0;
    b.id = 1;
    a.voxel_keys = {map.cells[0].key};
    b.voxel_keys = {map.cells[0].key};
    REQUIRE_THROWS_AS(relabel_voxels({}, {a, b}, {}, map), ConsistencyError);
  }

  SECTION("full segmentation keeps segment voxel sets disjoint") {
    const SegmentationResult result = segment_cloud(cloud, map, cfg);
    std::unordered_map<VoxelKey, int, VoxelKeyHash> owner;
    auto claim = [&](const std::vector<Segment>& segs) {
      for (const Segment& s : segs)
        for (const VoxelKey& k : s.voxel_keys) {
          CHECK(owner.emplace(k, s.id).second);
        }
    };
    claim(result.planes);
    claim(result.clusters);
    claim(result.lines);
  }
}
