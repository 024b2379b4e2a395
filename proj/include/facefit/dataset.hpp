#pragma once

#include "facefit/geometry.hpp"
#include "facefit/types.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace facefit {

/// 2D alignment of vertex `vertex` seen by camera `camera` in frame `frame`:
/// expected pixel position `mu` with isotropic uncertainty `sigma` (pixels).
struct AlignmentObservation
{
    std::uint32_t vertex = 0;
    std::uint32_t camera = 0;
    std::uint32_t frame = 0;
    Vec2 mu = Vec2::Zero();
    double sigma = 1.0;
};

/// Per-frame meshes sharing one topology (ground truth or an external tracker).
struct MeshSequence
{
    std::vector<Vertices> frames;
    Triangles triangles;
    std::vector<Region> regions;

    /// Throws on inconsistent vertex counts, bad indices or non-finite values.
    void validate() const;
};

struct SequenceDataset
{
    std::vector<Camera> cameras;
    int frame_count = 0;
    std::vector<AlignmentObservation> observations;
    /// Neutral-shape prior template.
    std::optional<Vertices> mica_template;
    std::optional<MeshSequence> meshes;

    /// Checks index ranges against (n_vertices, cameras, frame_count), sigma > 0
    /// and finiteness everywhere.
    void validate(int n_vertices) const;
};

} // namespace facefit
