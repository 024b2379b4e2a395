#pragma once

#include "facefit/model.hpp"

#include <cstdint>

namespace facefit {

/// Shape of a procedurally generated head model. The face looks down -z,
/// +y is up, units are meters.
struct ProceduralHeadOptions
{
    int n_vertices = 162;
    int n_identity = 8;
    int n_expression = 6;
    /// 2 (neck, jaw) or 5 (root, neck, jaw, left eye, right eye).
    int n_joints = 2;
    std::uint64_t seed = 7;
    double weight_high = 1.0;
    double weight_low = 0.005;
};

/// Miniature default: 162 vertices, 8 identity and 6 expression bases, 2 joints.
ProceduralHeadOptions miniature_head_options();

/// FLAME-sized: 5023 vertices, 300 identity and 100 expression bases, 5 joints.
ProceduralHeadOptions full_size_head_options();

/// Deterministic synthetic head: ellipsoid skull with a nose, smooth random
/// identity bases, face-localized expression bases, region labels and
/// supplementary-style vertex weights (high on face and ears).
BlendshapeModel build_procedural_head(const ProceduralHeadOptions& options);

} // namespace facefit
