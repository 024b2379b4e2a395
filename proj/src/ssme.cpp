#include "facefit/ssme.hpp"

#include "facefit/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace facefit {

void ScreenMesh::validate() const
{
    if (depths.size() != pixels.size())
        throw DimensionError("screen mesh: depth count does not match vertex count");
    if (!regions.empty() && regions.size() != pixels.size())
        throw DimensionError("screen mesh: region count does not match vertex count");
    for (double d : depths)
        if (!std::isfinite(d))
            throw NumericError("screen mesh: non-finite depth");
    for (const Triangle& t : triangles)
        for (std::uint32_t v : t)
            if (v >= pixels.size())
                throw FormatError("screen mesh: triangle index " + std::to_string(v) + " out of range");
}

ScreenMesh make_screen_mesh(const Camera& camera, const Vertices& world, const Triangles& triangles,
                            const std::vector<Region>& regions)
{
    ScreenMesh m;
    const std::vector<Projection> proj = project(camera, world);
    m.pixels.reserve(proj.size());
    m.depths.reserve(proj.size());
    for (const Projection& p : proj) {
        m.pixels.push_back(p.valid ? p.pixel : Vec2::Zero());
        m.depths.push_back(p.valid ? p.depth : std::min(p.depth, 0.0));
    }
    m.triangles = triangles;
    m.regions = regions;
    m.validate();
    return m;
}

namespace {

double edge(const Vec2& a, const Vec2& b, const Vec2& p)
{
    return (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
}

// Pixels exactly on an edge belong to one of the two triangles sharing it.
bool owns_edge(const Vec2& a, const Vec2& b)
{
    const double dx = b.x() - a.x();
    const double dy = b.y() - a.y();
    return dy < 0.0 || (dy == 0.0 && dx > 0.0);
}

bool usable(const ScreenMesh& m, std::uint32_t v)
{
    return m.depths[v] > kMinDepth && m.pixels[v].allFinite();
}

Region pixel_region(const ScreenMesh& m, const Triangle& tri, const std::array<double, 3>& b)
{
    if (m.regions.empty())
        return Region::other;
    const Region r0 = m.regions[tri[0]], r1 = m.regions[tri[1]], r2 = m.regions[tri[2]];
    if (r0 == r1 || r0 == r2)
        return r0;
    if (r1 == r2)
        return r1;
    const int k = b[0] >= b[1] ? (b[0] >= b[2] ? 0 : 2) : (b[1] >= b[2] ? 1 : 2);
    return m.regions[tri[static_cast<std::size_t>(k)]];
}

} // namespace

Coverage rasterize(const ScreenMesh& mesh, int width, int height)
{
    if (width < 1 || height < 1)
        throw DimensionError("raster size must be positive");
    mesh.validate();
    Coverage c;
    c.width = width;
    c.height = height;
    const std::size_t n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    c.triangle.assign(n, -1);
    c.barycentric.assign(n, {0.0, 0.0, 0.0});
    std::vector<double> inv_depth(n, 0.0);

    for (std::size_t ti = 0; ti < mesh.triangles.size(); ++ti) {
        const Triangle& tri = mesh.triangles[ti];
        if (!usable(mesh, tri[0]) || !usable(mesh, tri[1]) || !usable(mesh, tri[2]))
            continue;
        // Corner order with positive signed area; `slot` maps back to tri.
        std::array<int, 3> slot{0, 1, 2};
        double area = edge(mesh.pixels[tri[0]], mesh.pixels[tri[1]], mesh.pixels[tri[2]]);
        if (area < 0.0) {
            std::swap(slot[1], slot[2]);
            area = -area;
        }
        if (!(area > 1e-12))
            continue;
        const Vec2& v0 = mesh.pixels[tri[static_cast<std::size_t>(slot[0])]];
        const Vec2& v1 = mesh.pixels[tri[static_cast<std::size_t>(slot[1])]];
        const Vec2& v2 = mesh.pixels[tri[static_cast<std::size_t>(slot[2])]];
        const double iz0 = 1.0 / mesh.depths[tri[static_cast<std::size_t>(slot[0])]];
        const double iz1 = 1.0 / mesh.depths[tri[static_cast<std::size_t>(slot[1])]];
        const double iz2 = 1.0 / mesh.depths[tri[static_cast<std::size_t>(slot[2])]];
        const bool own0 = owns_edge(v1, v2), own1 = owns_edge(v2, v0), own2 = owns_edge(v0, v1);

        const double lo_x = std::min({v0.x(), v1.x(), v2.x()});
        const double hi_x = std::max({v0.x(), v1.x(), v2.x()});
        const double lo_y = std::min({v0.y(), v1.y(), v2.y()});
        const double hi_y = std::max({v0.y(), v1.y(), v2.y()});
        const int x0 = std::max(0, static_cast<int>(std::floor(lo_x - 0.5)));
        const int x1 = std::min(width - 1, static_cast<int>(std::ceil(hi_x - 0.5)));
        const int y0 = std::max(0, static_cast<int>(std::floor(lo_y - 0.5)));
        const int y1 = std::min(height - 1, static_cast<int>(std::ceil(hi_y - 0.5)));
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const Vec2 p(x + 0.5, y + 0.5);
                const double w0 = edge(v1, v2, p);
                const double w1 = edge(v2, v0, p);
                const double w2 = edge(v0, v1, p);
                if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0)
                    continue;
                if ((w0 == 0.0 && !own0) || (w1 == 0.0 && !own1) || (w2 == 0.0 && !own2))
                    continue;
                const double b0 = w0 / area, b1 = w1 / area, b2 = w2 / area;
                const double iz = b0 * iz0 + b1 * iz1 + b2 * iz2;
                const std::size_t k = static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x);
                if (c.triangle[k] >= 0 && !(iz > inv_depth[k]))
                    continue;
                inv_depth[k] = iz;
                c.triangle[k] = static_cast<std::int32_t>(ti);
                std::array<double, 3> b{};
                b[static_cast<std::size_t>(slot[0])] = b0;
                b[static_cast<std::size_t>(slot[1])] = b1;
                b[static_cast<std::size_t>(slot[2])] = b2;
                c.barycentric[k] = b;
            }
        }
    }
    return c;
}

FlowField flow_from_coverage(const Coverage& coverage, const ScreenMesh& mesh_t, const ScreenMesh& mesh_th)
{
    if (mesh_t.size() != mesh_th.size() || mesh_t.triangles.size() != mesh_th.triangles.size())
        throw DimensionError("flow needs two frames of the same mesh topology");
    FlowField f;
    f.width = coverage.width;
    f.height = coverage.height;
    const std::size_t n = coverage.triangle.size();
    f.flow.assign(n, Vec2::Zero());
    f.valid.assign(n, 0);
    f.region.assign(n, Region::other);
    for (std::size_t k = 0; k < n; ++k) {
        const std::int32_t ti = coverage.triangle[k];
        if (ti < 0)
            continue;
        const Triangle& tri = mesh_t.triangles[static_cast<std::size_t>(ti)];
        if (!usable(mesh_th, tri[0]) || !usable(mesh_th, tri[1]) || !usable(mesh_th, tri[2]))
            continue;
        const std::array<double, 3>& b = coverage.barycentric[k];
        Vec2 d = Vec2::Zero();
        for (std::size_t c = 0; c < 3; ++c)
            d += b[c] * (mesh_th.pixels[tri[c]] - mesh_t.pixels[tri[c]]);
        f.flow[k] = d;
        f.valid[k] = 1;
        f.region[k] = pixel_region(mesh_t, tri, b);
    }
    return f;
}

FlowField rasterize_flow(const ScreenMesh& mesh_t, const ScreenMesh& mesh_th, int width, int height)
{
    return flow_from_coverage(rasterize(mesh_t, width, height), mesh_t, mesh_th);
}

EpeResult epe(const FlowField& pred, const FlowField& gt, RegionSet region)
{
    if (pred.width != gt.width || pred.height != gt.height)
        throw DimensionError("flow fields have different sizes");
    EpeResult r;
    double sum = 0.0;
    for (std::size_t k = 0; k < gt.flow.size(); ++k) {
        if (!gt.valid[k] || !region.contains(gt.region[k]))
            continue;
        ++r.region_pixels;
        if (!pred.valid[k])
            continue;
        ++r.counted;
        sum += (pred.flow[k] - gt.flow[k]).norm();
    }
    r.defined = r.counted > 0;
    if (r.defined)
        r.value = sum / static_cast<double>(r.counted);
    if (r.region_pixels > 0)
        r.coverage = static_cast<double>(r.counted) / static_cast<double>(r.region_pixels);
    return r;
}

namespace {

std::optional<double> mean_defined(const std::vector<std::optional<double>>& v)
{
    double sum = 0.0;
    std::size_t n = 0;
    for (const std::optional<double>& x : v)
        if (x) {
            sum += *x;
            ++n;
        }
    if (n == 0)
        return std::nullopt;
    return sum / static_cast<double>(n);
}

} // namespace

std::optional<double> ssme_h(const std::vector<std::optional<double>>& epes)
{
    return mean_defined(epes);
}

std::optional<double> ssme_aggregate(const std::vector<std::optional<double>>& per_horizon)
{
    return mean_defined(per_horizon);
}

ScreenTracks temporal_gaussian_filter(const ScreenTracks& tracks, double sigma_frames)
{
    if (!(sigma_frames >= 0.0) || !std::isfinite(sigma_frames))
        throw ConfigError("temporal filter sigma must be a finite non-negative number");
    if (sigma_frames == 0.0 || tracks.size() < 2)
        return tracks;
    const int f = static_cast<int>(tracks.size());
    for (const auto& t : tracks)
        if (t.rows() != tracks.front().rows())
            throw DimensionError("screen tracks must have the same vertex count in every frame");
    const int radius = static_cast<int>(std::ceil(3.0 * sigma_frames));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    for (int k = -radius; k <= radius; ++k)
        kernel[static_cast<std::size_t>(k + radius)] = std::exp(-0.5 * k * k / (sigma_frames * sigma_frames));

    ScreenTracks out(tracks.size());
    for (int t = 0; t < f; ++t) {
        out[static_cast<std::size_t>(t)] = decltype(out)::value_type::Zero(tracks.front().rows(), 2);
        double norm = 0.0;
        for (int k = -radius; k <= radius; ++k) {
            const int s = t + k;
            if (s < 0 || s >= f)
                continue;
            const double w = kernel[static_cast<std::size_t>(k + radius)];
            out[static_cast<std::size_t>(t)] += w * tracks[static_cast<std::size_t>(s)];
            norm += w;
        }
        out[static_cast<std::size_t>(t)] /= norm;
    }
    return out;
}

SsmeReport evaluate_ssme(const std::vector<std::vector<ScreenMesh>>& gt, const std::vector<std::vector<ScreenMesh>>& pred,
                         const SsmeOptions& options)
{
    if (options.horizons < 1)
        throw ConfigError("SSME needs at least one horizon");
    if (gt.size() != pred.size() || gt.empty())
        throw DimensionError("ground truth and prediction must cover the same cameras");
    for (std::size_t c = 0; c < gt.size(); ++c)
        if (gt[c].size() != pred[c].size())
            throw DimensionError("ground truth has " + std::to_string(gt[c].size()) + " frames, prediction has " +
                                 std::to_string(pred[c].size()));
    const std::size_t n_regions = options.regions.size();
    const int horizons = options.horizons;

    SsmeReport report;
    report.horizons = horizons;
    for (const NamedRegion& r : options.regions)
        report.regions.emplace_back(r.name);

    // samples[h-1][region] collects every defined (camera, t) endpoint error.
    struct Accum
    {
        std::vector<std::optional<double>> values;
        std::size_t counted = 0;
        std::size_t region_pixels = 0;
    };
    std::vector<std::vector<Accum>> acc(static_cast<std::size_t>(horizons), std::vector<Accum>(n_regions));

    for (std::size_t cam = 0; cam < gt.size(); ++cam) {
        const auto& g = gt[cam];
        const auto& p = pred[cam];
        const int frames = static_cast<int>(g.size());
        // Results [t][h-1][region], filled in parallel and merged in order.
        std::vector<std::vector<std::vector<EpeResult>>> per_t(static_cast<std::size_t>(frames));
#pragma omp parallel for schedule(dynamic)
        for (int t = 0; t < frames; ++t) {
            const Coverage cg = rasterize(g[static_cast<std::size_t>(t)], options.width, options.height);
            const Coverage cp = rasterize(p[static_cast<std::size_t>(t)], options.width, options.height);
            auto& out = per_t[static_cast<std::size_t>(t)];
            for (int h = 1; h <= horizons && t + h < frames; ++h) {
                const FlowField fg = flow_from_coverage(cg, g[static_cast<std::size_t>(t)], g[static_cast<std::size_t>(t + h)]);
                const FlowField fp = flow_from_coverage(cp, p[static_cast<std::size_t>(t)], p[static_cast<std::size_t>(t + h)]);
                std::vector<EpeResult> row;
                for (const NamedRegion& r : options.regions)
                    row.push_back(epe(fp, fg, r.labels));
                out.push_back(std::move(row));
            }
        }
        for (int t = 0; t < frames; ++t)
            for (std::size_t hi = 0; hi < per_t[static_cast<std::size_t>(t)].size(); ++hi)
                for (std::size_t r = 0; r < n_regions; ++r) {
                    const EpeResult& e = per_t[static_cast<std::size_t>(t)][hi][r];
                    Accum& a = acc[hi][r];
                    a.values.push_back(e.defined ? std::optional<double>(e.value) : std::nullopt);
                    a.counted += e.counted;
                    a.region_pixels += e.region_pixels;
                }
    }

    report.ssme.assign(n_regions, std::vector<std::optional<double>>(static_cast<std::size_t>(horizons)));
    report.coverage.assign(n_regions, std::vector<double>(static_cast<std::size_t>(horizons), 0.0));
    report.aggregate.assign(n_regions, std::nullopt);
    report.aggregate_coverage.assign(n_regions, 0.0);
    for (std::size_t r = 0; r < n_regions; ++r) {
        std::size_t counted = 0, pixels = 0;
        for (std::size_t hi = 0; hi < static_cast<std::size_t>(horizons); ++hi) {
            const Accum& a = acc[hi][r];
            report.ssme[r][hi] = ssme_h(a.values);
            report.coverage[r][hi] = a.region_pixels > 0 ? static_cast<double>(a.counted) / static_cast<double>(a.region_pixels) : 0.0;
            counted += a.counted;
            pixels += a.region_pixels;
        }
        report.aggregate[r] = ssme_aggregate(report.ssme[r]);
        report.aggregate_coverage[r] = pixels > 0 ? static_cast<double>(counted) / static_cast<double>(pixels) : 0.0;
    }
    return report;
}

namespace {

std::string number(const std::optional<double>& v)
{
    if (!v)
        return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", *v);
    return buf;
}

} // namespace

std::string ssme_csv(const SsmeReport& report)
{
    std::ostringstream os;
    os << "region,h,ssme_px,coverage\n";
    for (std::size_t r = 0; r < report.regions.size(); ++r) {
        for (int h = 1; h <= report.horizons; ++h)
            os << report.regions[r] << ',' << h << ',' << number(report.ssme[r][static_cast<std::size_t>(h - 1)]) << ','
               << number(report.coverage[r][static_cast<std::size_t>(h - 1)]) << '\n';
        os << report.regions[r] << ",mean," << number(report.aggregate[r]) << ','
           << number(report.aggregate_coverage[r]) << '\n';
    }
    return os.str();
}

} // namespace facefit
