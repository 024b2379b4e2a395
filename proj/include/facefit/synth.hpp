#pragma once

#include "facefit/dataset.hpp"
#include "facefit/energy.hpp"
#include "facefit/model.hpp"

#include <cstdint>
#include <string_view>

namespace facefit {

enum class MotionModel { static_pose, sinusoidal_expression, rigid_orbit };
enum class SigmaMode { truthful, constant, miscalibrated };

std::string_view motion_model_name(MotionModel m);
MotionModel motion_model_from_name(std::string_view name);
std::string_view sigma_mode_name(SigmaMode m);
SigmaMode sigma_mode_from_name(std::string_view name);

struct SynthSpec
{
    int frames = 20;
    int cameras = 2;
    std::uint64_t seed = 1;
    /// Standard deviation of the ground-truth identity / expression coefficients.
    double beta_scale = 1.0;
    double phi_scale = 1.0;
    MotionModel motion = MotionModel::sinusoidal_expression;
    /// Observation noise (pixels).
    double noise_px = 0.0;
    /// Heteroscedasticity: per-observation noise is noise_px * s with
    /// s = exp(a z - a^2), z standard normal, so that E[s^2] = 1.
    double sigma_spread = 0.0;
    /// Fraction of observations dropped uniformly at random in every frame.
    double occlusion = 0.0;
    SigmaMode sigma_mode = SigmaMode::truthful;
    /// Reported sigma in constant mode.
    double sigma_constant = 1.0;
    /// Reported sigma is the true sigma times this factor in miscalibrated mode.
    double miscalibration = 2.0;

    int image_size = 512;
    double focal = 1000.0;
    /// Camera distance from the head center (meters).
    double distance = 0.8;
    /// Cameras are spread evenly over this yaw range around the frontal view.
    double camera_spread_deg = 40.0;
    bool calibrated = true;

    bool include_meshes = false;
    bool include_mica = false;
    /// Per-coordinate Gaussian noise on the neutral template (meters).
    double mica_noise = 0.0;

    void validate() const;
};

struct SynthResult
{
    SequenceDataset dataset;
    TrackingParams truth;
};

/**
 * Seeded synthetic tracking problem. Every vertex is projected into every
 * camera in every frame; per-frame random streams are derived from
 * (seed, frame), so output is identical on all platforms. With zero noise the
 * truthful reported sigma is 1 px.
 */
SynthResult generate_sequence(const BlendshapeModel& model, const SynthSpec& spec);

/**
 * Adds seeded Gaussian noise to every free group. Standard deviations are
 * `magnitude` for coefficients and rotations (radians), 0.1 * magnitude for
 * translations (meters), 0.01 * magnitude for deformations, and
 * 0.1 * magnitude for log focal lengths.
 */
TrackingParams perturb_params(const TrackingParams& params, double magnitude, std::uint64_t seed,
                              const FreeGroups& free);

} // namespace facefit
