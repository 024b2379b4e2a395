#pragma once

#include "facefit/geometry.hpp"
#include "facefit/types.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace facefit {

/// One mesh projected into one camera for one frame.
struct ScreenMesh
{
    std::vector<Vec2> pixels;
    std::vector<double> depths;
    Triangles triangles;
    std::vector<Region> regions;

    std::size_t size() const { return pixels.size(); }
    /// Throws on mismatched array sizes, bad indices or non-finite depths.
    void validate() const;
};

/// Projects world vertices; vertices behind the camera keep depth <= 0 and
/// their triangles are never rasterized.
ScreenMesh make_screen_mesh(const Camera& camera, const Vertices& world, const Triangles& triangles,
                            const std::vector<Region>& regions);

/// Front-most triangle and screen-space barycentrics at every pixel center.
struct Coverage
{
    int width = 0;
    int height = 0;
    std::vector<std::int32_t> triangle; ///< -1 where uncovered
    std::vector<std::array<double, 3>> barycentric;
};

/// Z-buffered rasterization (nearest interpolated 1/z wins, top-left fill rule).
/// Degenerate triangles are skipped.
Coverage rasterize(const ScreenMesh& mesh, int width, int height);

struct FlowField
{
    int width = 0;
    int height = 0;
    std::vector<Vec2> flow;
    std::vector<std::uint8_t> valid;
    std::vector<Region> region;

    std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x); }
};

/// Flow of the pixels covered at frame t, using the barycentrics of `coverage`
/// (rasterized from `mesh_t`) to interpolate the displacement to `mesh_th`.
FlowField flow_from_coverage(const Coverage& coverage, const ScreenMesh& mesh_t, const ScreenMesh& mesh_th);

FlowField rasterize_flow(const ScreenMesh& mesh_t, const ScreenMesh& mesh_th, int width, int height);

struct EpeResult
{
    double value = 0.0;     ///< mean endpoint error (pixels); meaningful only when defined
    double coverage = 0.0;  ///< counted / region pixels of the ground truth
    bool defined = false;
    std::size_t counted = 0;
    std::size_t region_pixels = 0;
};

/// Mean Euclidean flow difference over pixels valid in both fields whose
/// ground-truth region label is in `region`.
EpeResult epe(const FlowField& pred, const FlowField& gt, RegionSet region);

/// Mean of the defined endpoint errors of one horizon; nullopt when none is defined.
std::optional<double> ssme_h(const std::vector<std::optional<double>>& epes);

/// Mean over the defined horizons.
std::optional<double> ssme_aggregate(const std::vector<std::optional<double>>& per_horizon);

/// Per-frame screen positions (F entries of N x 2).
using ScreenTracks = std::vector<Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>>;

/// Gaussian smoothing over frames, truncated at 3 sigma and renormalized at
/// the sequence ends. sigma_frames = 0 returns the input.
ScreenTracks temporal_gaussian_filter(const ScreenTracks& tracks, double sigma_frames);

struct SsmeOptions
{
    int horizons = 30;
    int width = 512;
    int height = 512;
    std::vector<NamedRegion> regions = benchmark_regions();
};

struct SsmeReport
{
    std::vector<std::string> regions;
    int horizons = 0;
    /// [region][h - 1]
    std::vector<std::vector<std::optional<double>>> ssme;
    /// Pooled pixel coverage [region][h - 1].
    std::vector<std::vector<double>> coverage;
    std::vector<std::optional<double>> aggregate;
    std::vector<double> aggregate_coverage;
};

/**
 * SSME of a prediction against ground truth. Both are indexed
 * [camera][frame]; every (camera, frame pair) is one endpoint error sample,
 * so horizons are pooled over cameras. Regions come from the ground truth.
 */
SsmeReport evaluate_ssme(const std::vector<std::vector<ScreenMesh>>& gt,
                         const std::vector<std::vector<ScreenMesh>>& pred, const SsmeOptions& options);

/// CSV with columns region,h,ssme_px,coverage; one row per (region, h) and an
/// aggregate row per region with h = "mean". Undefined values print as "nan".
std::string ssme_csv(const SsmeReport& report);

} // namespace facefit
