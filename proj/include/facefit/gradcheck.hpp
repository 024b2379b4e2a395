#pragma once

#include "facefit/energy.hpp"
#include "facefit/synth.hpp"

#include <cstdint>
#include <string>

namespace facefit {

struct GradientCheckOptions
{
    /// Coordinates sampled per check; all of them when the layout is smaller.
    int coordinates = 200;
    std::uint64_t seed = 1;
    /// Test hook: scales the analytic gradient so the check must fail.
    double sabotage = 1.0;
};

struct GradientCheckResult
{
    double max_rel_error = 0.0;
    Eigen::Index worst = -1;
    std::string worst_name;
    int checked = 0;
};

/**
 * Compares the analytic gradient against central differences with step
 * 1e-6 * max(1, |x|). Components below the rounding level of the energy,
 * about 1e-11 * max(1, |E|) / h, are compared on that scale.
 */
GradientCheckResult check_gradient(const EnergyFunction& ef, const TrackingParams& at, TermSet terms,
                                   const GradientCheckOptions& options = {});

/// Seeded problem with every parameter group free and nonzero pose and deformations.
struct GradientProblem
{
    SynthResult synth;
    TrackingParams at;
    EnergyConfig config;
};

GradientProblem make_gradient_problem(const BlendshapeModel& model, std::uint64_t seed, int frames, int cameras);

} // namespace facefit
