#include "facefit/dataset.hpp"

#include "facefit/error.hpp"

#include <string>

namespace facefit {

void MeshSequence::validate() const
{
    if (frames.empty())
        throw DimensionError("mesh sequence has no frames");
    const Eigen::Index n = frames.front().rows();
    for (std::size_t t = 0; t < frames.size(); ++t) {
        if (frames[t].rows() != n)
            throw DimensionError("mesh sequence frame " + std::to_string(t) + " has " +
                                 std::to_string(frames[t].rows()) + " vertices, expected " + std::to_string(n));
        if (!frames[t].allFinite())
            throw NumericError("mesh sequence frame " + std::to_string(t) + " has non-finite vertices");
    }
    for (const Triangle& tri : triangles)
        for (std::uint32_t v : tri)
            if (v >= static_cast<std::uint32_t>(n))
                throw FormatError("mesh sequence triangle index " + std::to_string(v) + " out of range");
    if (!regions.empty() && regions.size() != static_cast<std::size_t>(n))
        throw DimensionError("mesh sequence region labels do not match the vertex count");
}

void SequenceDataset::validate(int n_vertices) const
{
    if (frame_count < 1)
        throw DimensionError("sequence must contain at least one frame");
    if (cameras.empty())
        throw DimensionError("sequence must contain at least one camera");
    for (const Camera& c : cameras)
        c.validate();
    for (std::size_t k = 0; k < observations.size(); ++k) {
        const AlignmentObservation& o = observations[k];
        if (o.vertex >= static_cast<std::uint32_t>(n_vertices) || o.camera >= cameras.size() ||
            o.frame >= static_cast<std::uint32_t>(frame_count))
            throw DimensionError("observation " + std::to_string(k) + " references vertex/camera/frame (" +
                                 std::to_string(o.vertex) + ", " + std::to_string(o.camera) + ", " +
                                 std::to_string(o.frame) + ") out of range");
        if (!o.mu.allFinite())
            throw NumericError("observation " + std::to_string(k) + " has a non-finite position");
        if (!(o.sigma > 0.0) || !std::isfinite(o.sigma))
            throw FormatError("observation " + std::to_string(k) + " has non-positive sigma");
    }
    if (mica_template) {
        if (mica_template->rows() != n_vertices)
            throw DimensionError("neutral template has " + std::to_string(mica_template->rows()) +
                                 " vertices, model has " + std::to_string(n_vertices));
        if (!mica_template->allFinite())
            throw NumericError("neutral template has non-finite vertices");
    }
    if (meshes)
        meshes->validate();
}

} // namespace facefit
