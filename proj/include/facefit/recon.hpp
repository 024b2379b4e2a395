#pragma once

#include "facefit/geometry.hpp"
#include "facefit/types.hpp"

#include <Eigen/Geometry>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace facefit {

/// Scan or reconstruction mesh in meters.
struct TriangleMesh
{
    Vertices vertices;
    Triangles triangles;
    std::vector<Region> regions;          ///< empty, or one label per vertex
    std::vector<std::uint32_t> keypoints; ///< empty, or 7 vertex indices

    void validate() const;
};

/// Rotation, translation and a uniform scale: p -> s R p + t.
struct Similarity
{
    RigidTransform rigid;
    double scale = 1.0;

    Vec3 apply(const Vec3& p) const { return scale * (rigid.rotation_matrix() * p) + rigid.translation; }
};

Vertices transform_points(const Similarity& t, const Vertices& points);

/// Least-squares rigid transform mapping src onto dst (rows correspond).
/// Throws GeometryError for fewer than 3 points or collinear points.
RigidTransform procrustes_rigid(const Vertices& src, const Vertices& dst);

/// As procrustes_rigid with an additional uniform scale.
Similarity procrustes_similarity(const Vertices& src, const Vertices& dst);

/// Closest point to p on triangle abc (handles degenerate triangles).
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

struct ClosestPoint
{
    double distance = 0.0;
    Vec3 point = Vec3::Zero();
    std::uint32_t triangle = 0;
};

/// Bounding-volume hierarchy over the triangles of a mesh. Immutable after
/// construction, so concurrent queries are safe.
class MeshBvh
{
public:
    explicit MeshBvh(const TriangleMesh& mesh);

    /// Nearest surface point; ties go to the lowest triangle index.
    ClosestPoint closest(const Vec3& p) const;
    /// Same result by scanning every triangle.
    ClosestPoint closest_exhaustive(const Vec3& p) const;

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node
    {
        Eigen::AlignedBox3d box;
        std::uint32_t first = 0; ///< into order_ for leaves, left child otherwise
        std::uint32_t count = 0; ///< 0 for inner nodes
        std::uint32_t right = 0;
    };

    std::uint32_t build(std::uint32_t begin, std::uint32_t end, const std::vector<Vec3>& centroids);
    void visit(std::uint32_t tri, const Vec3& p, double& best_d2, ClosestPoint& best) const;

    Vertices vertices_;
    Triangles triangles_;
    std::vector<std::uint32_t> order_;
    std::vector<Node> nodes_;
};

/// Convenience single query (builds a BVH). Throws on an empty mesh.
ClosestPoint point_to_mesh_distance(const Vec3& p, const TriangleMesh& mesh);

struct IcpOptions
{
    int max_iters = 50;
    double tol = 1e-7; ///< meters of mean-distance improvement
    bool with_scale = false;
    /// Anderson-accelerated updates; an accelerated transform is kept only
    /// when it beats the plain update on both mean and RMS distance.
    bool accelerate = true;
};

struct IcpResult
{
    Similarity transform;           ///< best transform seen
    std::vector<double> mean_distance; ///< closest-point mean per evaluated transform, starting with init
    std::vector<double> rms_distance;
    int iterations = 0;
    bool converged = false;
};

/// Point-to-surface ICP moving src onto dst.
IcpResult icp_refine(const Vertices& src, const MeshBvh& dst, const Similarity& init, const IcpOptions& options = {});

struct DistanceStats
{
    bool defined = false;
    std::size_t count = 0;
    double median_mm = 0.0;
    double mean_mm = 0.0;
    double std_mm = 0.0;
};

/// Median, mean and population standard deviation of distances in meters,
/// reported in millimeters. Undefined for an empty input.
DistanceStats distance_stats(std::vector<double> distances_m);

struct ChamferOptions
{
    bool symmetric = false;
    std::vector<NamedRegion> regions = benchmark_regions();
};

struct ChamferReport
{
    std::vector<std::string> regions; ///< the named regions followed by "all"
    std::vector<DistanceStats> stats;
};

/**
 * Distance of every ground-truth vertex to the predicted surface, grouped by
 * the ground-truth region labels. With `symmetric`, predicted vertices are
 * also measured against the ground-truth surface and pooled (grouped by the
 * predicted labels when present, otherwise counted in "all" only).
 */
ChamferReport chamfer_scan_to_mesh(const TriangleMesh& gt, const TriangleMesh& pred, const ChamferOptions& options = {});

struct AlignmentResult
{
    Similarity keypoint_transform;
    IcpResult icp;
    TriangleMesh aligned; ///< pred moved onto gt
};

/// Keypoint Procrustes followed by ICP of pred onto gt.
AlignmentResult align_to_ground_truth(const TriangleMesh& gt, const TriangleMesh& pred, const IcpOptions& options = {});

/// region,count,median_mm,mean_mm,std_mm; undefined rows print "nan".
std::string chamfer_csv(const ChamferReport& report);

/// Vertices and faces of an ASCII OBJ; polygons are fan-triangulated.
TriangleMesh read_obj(const std::filesystem::path& path);
TriangleMesh parse_obj(const std::string& text);

} // namespace facefit
