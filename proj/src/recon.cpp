#include "facefit/recon.hpp"

#include "facefit/error.hpp"

#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

namespace facefit {

void TriangleMesh::validate() const
{
    if (!vertices.allFinite())
        throw NumericError("mesh: non-finite vertex coordinates");
    const auto n = static_cast<std::size_t>(vertices.rows());
    for (const Triangle& t : triangles)
        for (std::uint32_t v : t)
            if (v >= n)
                throw FormatError("mesh: triangle index " + std::to_string(v) + " out of range (" + std::to_string(n) + " vertices)");
    if (!regions.empty() && regions.size() != n)
        throw DimensionError("mesh: " + std::to_string(regions.size()) + " region labels for " + std::to_string(n) + " vertices");
    for (std::uint32_t k : keypoints)
        if (k >= n)
            throw FormatError("mesh: keypoint index " + std::to_string(k) + " out of range");
}

Vertices transform_points(const Similarity& t, const Vertices& points)
{
    const Mat3 r = t.scale * t.rigid.rotation_matrix();
    Vertices out = points * r.transpose();
    out.rowwise() += t.rigid.translation.transpose();
    return out;
}

namespace {

void check_correspondences(const Vertices& src, const Vertices& dst)
{
    if (src.rows() != dst.rows())
        throw DimensionError("procrustes: " + std::to_string(src.rows()) + " source points but " + std::to_string(dst.rows()) +
                             " target points");
    if (src.rows() < 3)
        throw GeometryError("procrustes: at least 3 correspondences required");
    if (!src.allFinite() || !dst.allFinite())
        throw NumericError("procrustes: non-finite points");
    for (const Vertices* pts : {&src, &dst}) {
        const Vertices centered = pts->rowwise() - pts->colwise().mean();
        const Eigen::Vector3d sv = Eigen::JacobiSVD<Eigen::MatrixXd>(centered).singularValues();
        if (!(sv(1) > 1e-9 * std::max(sv(0), 1e-300)))
            throw GeometryError("procrustes: points are collinear or coincident");
    }
}

Similarity solve(const Vertices& src, const Vertices& dst, bool with_scale)
{
    check_correspondences(src, dst);
    const Eigen::Matrix4d m = Eigen::umeyama(src.transpose(), dst.transpose(), with_scale);
    Similarity s;
    const Mat3 sr = m.topLeftCorner<3, 3>();
    s.scale = with_scale ? std::cbrt(sr.determinant()) : 1.0;
    s.rigid = RigidTransform::from_matrix(sr / s.scale, m.topRightCorner<3, 1>());
    return s;
}

} // namespace

RigidTransform procrustes_rigid(const Vertices& src, const Vertices& dst)
{
    return solve(src, dst, false).rigid;
}

Similarity procrustes_similarity(const Vertices& src, const Vertices& dst)
{
    return solve(src, dst, true);
}

namespace {

Vec3 closest_point_on_segment(const Vec3& p, const Vec3& a, const Vec3& b)
{
    const Vec3 ab = b - a;
    const double len2 = ab.squaredNorm();
    if (len2 <= 0.0)
        return a;
    const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
    return a + t * ab;
}

} // namespace

// Voronoi-region walk over vertices, edges and face (Ericson, Real-Time Collision Detection 5.1.5).
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c)
{
    const Vec3 ab = b - a;
    const Vec3 ac = c - a;
    if (ab.cross(ac).squaredNorm() <= 1e-30 * ab.squaredNorm() * ac.squaredNorm()) {
        // Degenerate: nearest of the three edges.
        const Vec3 cands[3] = {closest_point_on_segment(p, a, b), closest_point_on_segment(p, b, c), closest_point_on_segment(p, c, a)};
        std::size_t best = 0;
        for (std::size_t k = 1; k < 3; ++k)
            if ((cands[k] - p).squaredNorm() < (cands[best] - p).squaredNorm())
                best = k;
        return cands[best];
    }
    const Vec3 ap = p - a;
    const double d1 = ab.dot(ap);
    const double d2 = ac.dot(ap);
    if (d1 <= 0.0 && d2 <= 0.0)
        return a;

    const Vec3 bp = p - b;
    const double d3 = ab.dot(bp);
    const double d4 = ac.dot(bp);
    if (d3 >= 0.0 && d4 <= d3)
        return b;

    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0)
        return a + (d1 / (d1 - d3)) * ab;

    const Vec3 cp = p - c;
    const double d5 = ab.dot(cp);
    const double d6 = ac.dot(cp);
    if (d6 >= 0.0 && d5 <= d6)
        return c;

    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0)
        return a + (d2 / (d2 - d6)) * ac;

    const double va = d3 * d6 - d5 * d4;
    if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0)
        return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);

    const double denom = 1.0 / (va + vb + vc);
    return a + ab * (vb * denom) + ac * (vc * denom);
}

namespace {

constexpr std::uint32_t kLeafSize = 4;

} // namespace

MeshBvh::MeshBvh(const TriangleMesh& mesh) : vertices_(mesh.vertices), triangles_(mesh.triangles)
{
    mesh.validate();
    if (triangles_.empty())
        throw GeometryError("mesh has no triangles");
    std::vector<Vec3> centroids(triangles_.size());
    for (std::size_t k = 0; k < triangles_.size(); ++k) {
        const Triangle& t = triangles_[k];
        centroids[k] = (vertices_.row(t[0]) + vertices_.row(t[1]) + vertices_.row(t[2])).transpose() / 3.0;
    }
    order_.resize(triangles_.size());
    std::iota(order_.begin(), order_.end(), 0u);
    nodes_.reserve(2 * triangles_.size() / kLeafSize + 1);
    build(0, static_cast<std::uint32_t>(order_.size()), centroids);
}

std::uint32_t MeshBvh::build(std::uint32_t begin, std::uint32_t end, const std::vector<Vec3>& centroids)
{
    const auto index = static_cast<std::uint32_t>(nodes_.size());
    nodes_.emplace_back();
    Eigen::AlignedBox3d box, cbox;
    for (std::uint32_t k = begin; k < end; ++k) {
        const Triangle& t = triangles_[order_[k]];
        for (std::uint32_t v : t)
            box.extend(vertices_.row(v).transpose());
        cbox.extend(centroids[order_[k]]);
    }
    nodes_[index].box = box;
    if (end - begin <= kLeafSize) {
        nodes_[index].first = begin;
        nodes_[index].count = end - begin;
        return index;
    }
    int axis = 0;
    cbox.sizes().maxCoeff(&axis);
    const std::uint32_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end, [&](std::uint32_t a, std::uint32_t b) {
        const double ca = centroids[a](axis), cb = centroids[b](axis);
        return ca < cb || (ca == cb && a < b);
    });
    const std::uint32_t left = build(begin, mid, centroids);
    const std::uint32_t right = build(mid, end, centroids);
    nodes_[index].first = left;
    nodes_[index].right = right;
    return index;
}

void MeshBvh::visit(std::uint32_t tri, const Vec3& p, double& best_d2, ClosestPoint& best) const
{
    const Triangle& t = triangles_[tri];
    const Vec3 q = closest_point_on_triangle(p, vertices_.row(t[0]).transpose(), vertices_.row(t[1]).transpose(),
                                             vertices_.row(t[2]).transpose());
    const double d2 = (q - p).squaredNorm();
    if (d2 < best_d2 || (d2 == best_d2 && tri < best.triangle)) {
        best_d2 = d2;
        best.point = q;
        best.triangle = tri;
    }
}

ClosestPoint MeshBvh::closest(const Vec3& p) const
{
    ClosestPoint best;
    best.triangle = std::numeric_limits<std::uint32_t>::max();
    double best_d2 = std::numeric_limits<double>::infinity();
    std::vector<std::uint32_t> stack{0};
    stack.reserve(64);
    while (!stack.empty()) {
        const Node& n = nodes_[stack.back()];
        stack.pop_back();
        // Equal distances are still visited so ties resolve like the scan.
        if (n.box.squaredExteriorDistance(p) > best_d2)
            continue;
        if (n.count > 0) {
            for (std::uint32_t k = n.first; k < n.first + n.count; ++k)
                visit(order_[k], p, best_d2, best);
            continue;
        }
        const double dl = nodes_[n.first].box.squaredExteriorDistance(p);
        const double dr = nodes_[n.right].box.squaredExteriorDistance(p);
        if (dl <= dr) {
            stack.push_back(n.right);
            stack.push_back(n.first);
        } else {
            stack.push_back(n.first);
            stack.push_back(n.right);
        }
    }
    best.distance = std::sqrt(best_d2);
    return best;
}

ClosestPoint MeshBvh::closest_exhaustive(const Vec3& p) const
{
    ClosestPoint best;
    best.triangle = std::numeric_limits<std::uint32_t>::max();
    double best_d2 = std::numeric_limits<double>::infinity();
    for (std::uint32_t k = 0; k < triangles_.size(); ++k)
        visit(k, p, best_d2, best);
    best.distance = std::sqrt(best_d2);
    return best;
}

ClosestPoint point_to_mesh_distance(const Vec3& p, const TriangleMesh& mesh)
{
    return MeshBvh(mesh).closest(p);
}

namespace {

struct Correspondences
{
    Vertices points;
    double mean = 0.0;
    double rms = 0.0;
};

Correspondences correspond(const Vertices& moved, const MeshBvh& dst)
{
    const Eigen::Index n = moved.rows();
    Correspondences c;
    c.points.resize(n, 3);
    std::vector<double> dist(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(static)
    for (Eigen::Index i = 0; i < n; ++i) {
        const ClosestPoint q = dst.closest(moved.row(i).transpose());
        c.points.row(i) = q.point.transpose();
        dist[static_cast<std::size_t>(i)] = q.distance;
    }
    double sum = 0.0, sum2 = 0.0;
    for (double d : dist) {
        sum += d;
        sum2 += d * d;
    }
    c.mean = sum / static_cast<double>(n);
    c.rms = std::sqrt(sum2 / static_cast<double>(n));
    return c;
}

} // namespace

namespace {

Eigen::Matrix<double, 7, 1> state_of(const Similarity& s)
{
    Eigen::Matrix<double, 7, 1> x;
    x << s.rigid.rotation, s.rigid.translation, std::log(s.scale);
    return x;
}

Similarity similarity_of(const Eigen::Matrix<double, 7, 1>& x)
{
    Similarity s;
    s.rigid.rotation = x.head<3>();
    s.rigid.translation = x.segment<3>(3);
    s.scale = std::exp(x(6));
    return s;
}

} // namespace

IcpResult icp_refine(const Vertices& src, const MeshBvh& dst, const Similarity& init, const IcpOptions& options)
{
    if (src.rows() < 3)
        throw GeometryError("icp: at least 3 source points required");
    if (options.max_iters < 0 || !(options.tol >= 0.0))
        throw ConfigError("icp: max_iters and tol must be non-negative");

    IcpResult r;
    r.transform = init;
    Similarity current = init;
    Correspondences c = correspond(transform_points(current, src), dst);
    r.mean_distance.push_back(c.mean);
    r.rms_distance.push_back(c.rms);
    double best = c.mean;
    if (c.mean == 0.0) {
        r.converged = true;
        return r;
    }

    // Anderson acceleration history: fixed-point images g and residuals f = g - x.
    using State = Eigen::Matrix<double, 7, 1>;
    constexpr std::size_t kDepth = 5;
    std::vector<State> gs, fs;
    for (int k = 1; k <= options.max_iters; ++k) {
        // Solving from the original points avoids accumulating composition error.
        Similarity next = options.with_scale ? procrustes_similarity(src, c.points) : Similarity{procrustes_rigid(src, c.points), 1.0};
        Correspondences cn = correspond(transform_points(next, src), dst);
        const State g = state_of(next);
        const State f = g - state_of(current);

        if (options.accelerate && !fs.empty()) {
            const auto m = static_cast<Eigen::Index>(fs.size());
            Eigen::Matrix<double, 7, Eigen::Dynamic> df(7, m), dg(7, m);
            for (Eigen::Index i = 0; i < m; ++i) {
                const std::size_t j = static_cast<std::size_t>(i);
                df.col(i) = (j + 1 < fs.size() ? fs[j + 1] : f) - fs[j];
                dg.col(i) = (j + 1 < gs.size() ? gs[j + 1] : g) - gs[j];
            }
            const Eigen::VectorXd gamma = df.completeOrthogonalDecomposition().solve(f);
            const State x = g - dg * gamma;
            if (x.allFinite()) {
                const Similarity candidate = similarity_of(x);
                Correspondences cc = correspond(transform_points(candidate, src), dst);
                if (cc.mean < cn.mean && cc.rms <= cn.rms) {
                    next = candidate;
                    cn = std::move(cc);
                }
            }
        }
        gs.push_back(g);
        fs.push_back(f);
        if (gs.size() > kDepth) {
            gs.erase(gs.begin());
            fs.erase(fs.begin());
        }

        r.mean_distance.push_back(cn.mean);
        r.rms_distance.push_back(cn.rms);
        r.iterations = k;
        if (cn.mean < best) {
            best = cn.mean;
            r.transform = next;
        }
        const double improvement = c.mean - cn.mean;
        current = next;
        c = std::move(cn);
        if (c.mean == 0.0 || improvement < options.tol) {
            r.converged = true;
            break;
        }
    }
    return r;
}

DistanceStats distance_stats(std::vector<double> d)
{
    DistanceStats s;
    s.count = d.size();
    if (d.empty())
        return s;
    s.defined = true;
    double sum = 0.0;
    for (double v : d)
        sum += v;
    const double mean = sum / static_cast<double>(d.size());
    double var = 0.0;
    for (double v : d)
        var += (v - mean) * (v - mean);
    var /= static_cast<double>(d.size());
    std::sort(d.begin(), d.end());
    const std::size_t h = d.size() / 2;
    const double median = d.size() % 2 == 1 ? d[h] : 0.5 * (d[h - 1] + d[h]);
    s.mean_mm = 1e3 * mean;
    s.median_mm = 1e3 * median;
    s.std_mm = 1e3 * std::sqrt(var);
    return s;
}

namespace {

std::vector<double> surface_distances(const Vertices& points, const MeshBvh& surface)
{
    std::vector<double> d(static_cast<std::size_t>(points.rows()));
#pragma omp parallel for schedule(static)
    for (Eigen::Index i = 0; i < points.rows(); ++i)
        d[static_cast<std::size_t>(i)] = surface.closest(points.row(i).transpose()).distance;
    return d;
}

} // namespace

ChamferReport chamfer_scan_to_mesh(const TriangleMesh& gt, const TriangleMesh& pred, const ChamferOptions& options)
{
    gt.validate();
    pred.validate();
    if (gt.vertices.rows() == 0)
        throw GeometryError("chamfer: ground-truth mesh has no vertices");

    struct Sample
    {
        const std::vector<double>* distances;
        const std::vector<Region>* regions;
    };
    const std::vector<double> forward = surface_distances(gt.vertices, MeshBvh(pred));
    std::vector<Sample> samples{{&forward, &gt.regions}};
    std::vector<double> backward;
    if (options.symmetric) {
        backward = surface_distances(pred.vertices, MeshBvh(gt));
        samples.push_back({&backward, &pred.regions});
    }

    ChamferReport report;
    for (const NamedRegion& region : options.regions) {
        std::vector<double> pooled;
        for (const Sample& s : samples) {
            if (s.regions->empty())
                continue;
            for (std::size_t i = 0; i < s.distances->size(); ++i)
                if (region.labels.contains((*s.regions)[i]))
                    pooled.push_back((*s.distances)[i]);
        }
        report.regions.emplace_back(region.name);
        report.stats.push_back(distance_stats(std::move(pooled)));
    }
    std::vector<double> all;
    for (const Sample& s : samples)
        all.insert(all.end(), s.distances->begin(), s.distances->end());
    report.regions.emplace_back("all");
    report.stats.push_back(distance_stats(std::move(all)));
    return report;
}

AlignmentResult align_to_ground_truth(const TriangleMesh& gt, const TriangleMesh& pred, const IcpOptions& options)
{
    gt.validate();
    pred.validate();
    if (gt.keypoints.size() != pred.keypoints.size() || gt.keypoints.size() < 3)
        throw DimensionError("alignment: need matching keypoint lists with at least 3 entries (got " + std::to_string(gt.keypoints.size()) +
                             " and " + std::to_string(pred.keypoints.size()) + ")");
    Vertices src(static_cast<Eigen::Index>(pred.keypoints.size()), 3), dst(src.rows(), 3);
    for (std::size_t k = 0; k < pred.keypoints.size(); ++k) {
        src.row(static_cast<Eigen::Index>(k)) = pred.vertices.row(pred.keypoints[k]);
        dst.row(static_cast<Eigen::Index>(k)) = gt.vertices.row(gt.keypoints[k]);
    }
    AlignmentResult r;
    if (src == dst)
        r.keypoint_transform = Similarity{};
    else
        r.keypoint_transform = options.with_scale ? procrustes_similarity(src, dst) : Similarity{procrustes_rigid(src, dst), 1.0};
    r.icp = icp_refine(pred.vertices, MeshBvh(gt), r.keypoint_transform, options);
    r.aligned = pred;
    r.aligned.vertices = transform_points(r.icp.transform, pred.vertices);
    return r;
}

namespace {

std::string number(double v, bool defined)
{
    if (!defined)
        return "nan";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

std::string chamfer_csv(const ChamferReport& report)
{
    std::string out = "region,count,median_mm,mean_mm,std_mm\n";
    for (std::size_t k = 0; k < report.regions.size(); ++k) {
        const DistanceStats& s = report.stats[k];
        out += report.regions[k] + "," + std::to_string(s.count) + "," + number(s.median_mm, s.defined) + "," +
               number(s.mean_mm, s.defined) + "," + number(s.std_mm, s.defined) + "\n";
    }
    return out;
}

TriangleMesh parse_obj(const std::string& text)
{
    std::vector<Vec3> verts;
    TriangleMesh mesh;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    const auto fail = [&](const std::string& what) { throw FormatError("obj line " + std::to_string(line_no) + ": " + what); };
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag) || tag[0] == '#')
            continue;
        if (tag == "v") {
            Vec3 v;
            if (!(ls >> v.x() >> v.y() >> v.z()))
                fail("expected three vertex coordinates");
            if (!v.allFinite())
                fail("non-finite vertex coordinate");
            verts.push_back(v);
        } else if (tag == "f") {
            std::vector<std::uint32_t> poly;
            std::string tok;
            while (ls >> tok) {
                long idx = 0;
                try {
                    idx = std::stol(tok.substr(0, tok.find('/')));
                } catch (const std::exception&) {
                    fail("bad face index '" + tok + "'");
                }
                const long n = static_cast<long>(verts.size());
                const long resolved = idx < 0 ? n + idx : idx - 1;
                if (idx == 0 || resolved < 0 || resolved >= n)
                    fail("face index " + std::to_string(idx) + " out of range");
                poly.push_back(static_cast<std::uint32_t>(resolved));
            }
            if (poly.size() < 3)
                fail("face with fewer than 3 vertices");
            for (std::size_t k = 1; k + 1 < poly.size(); ++k)
                mesh.triangles.push_back({poly[0], poly[k], poly[k + 1]});
        }
    }
    mesh.vertices.resize(static_cast<Eigen::Index>(verts.size()), 3);
    for (std::size_t k = 0; k < verts.size(); ++k)
        mesh.vertices.row(static_cast<Eigen::Index>(k)) = verts[k].transpose();
    return mesh;
}

TriangleMesh read_obj(const std::filesystem::path& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw Error("cannot open " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_obj(ss.str());
}

} // namespace facefit
