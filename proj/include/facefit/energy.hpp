#pragma once

#include "facefit/dataset.hpp"
#include "facefit/geometry.hpp"
#include "facefit/model.hpp"

#include <Eigen/Core>

#include <optional>
#include <string>
#include <vector>

namespace facefit {

/// Everything the fitter optimizes. Identity, deformations and cameras are
/// shared over the sequence; expression, pose and head pose vary per frame.
struct TrackingParams
{
    Eigen::VectorXd beta;
    Eigen::MatrixXd phi;   ///< F x B_ex
    Eigen::MatrixXd theta; ///< F x (3K + 3)
    Vertices delta_d;
    std::vector<RigidTransform> head_pose;
    std::vector<Camera> cameras;

    int frames() const { return static_cast<int>(head_pose.size()); }
    int n_cameras() const { return static_cast<int>(cameras.size()); }

    ModelParams frame_model_params(int frame) const;

    static TrackingParams zeros(const BlendshapeModel& model, int frames, std::vector<Camera> cameras);

    void validate(const BlendshapeModel& model) const;
};

/// Parameter groups held fixed during optimization.
struct FreezeFlags
{
    bool beta = false;
    bool phi = false;
    bool theta = true;
    bool delta_d = true;
    bool head_pose = false;
    /// When false, cameras not flagged calibrated are optimized.
    bool cameras = false;
};

struct EnergyConfig
{
    double lambda_flame = 1e-4;
    double lambda_temp = 10.0;
    double lambda_mica = 100.0;
    double lambda_deform = 1e3;
    double vertex_weight_high = 1.0;
    double vertex_weight_low = 0.005;

    double learning_rate_init = 1e-2;
    double lr_decay = 0.5;
    int lr_patience = 30;
    /// Relative improvement below which a step counts as "no improvement".
    double lr_threshold = 1e-4;
    double lr_floor = 1e-5;
    int max_iters = 10000;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    double weight_decay = 0.0;

    /// Regions whose vertices may carry static deformations.
    std::vector<Region> deformable_regions{Region::nose};
    /// Explicit per-vertex mask; overrides deformable_regions when set.
    std::optional<std::vector<bool>> deformable_mask;
    FreezeFlags freeze;
    /// Use the sequence's neutral template (if any) for the neutral-shape prior.
    bool use_mica_template = true;
    std::optional<Vertices> mica_template;

    /// Throws ConfigError for negative weights or an invalid schedule.
    void validate() const;
};

/// Per-vertex alignment weights: high on face and ear labels, low elsewhere.
Eigen::VectorXd resolve_vertex_weights(const BlendshapeModel& model, const EnergyConfig& config);

std::vector<bool> resolve_deformable_mask(const BlendshapeModel& model, const EnergyConfig& config);

enum class Term { alignment, flame, temporal, mica, deform };

struct TermSet
{
    bool alignment = true;
    bool flame = true;
    bool temporal = true;
    bool mica = true;
    bool deform = true;

    static TermSet all() { return {}; }
    static TermSet only(Term t);
};

std::string_view term_name(Term t);

struct EnergyBreakdown
{
    double alignment = 0.0;
    double flame = 0.0;
    double temporal = 0.0;
    double mica = 0.0;
    double deform = 0.0;
    /// Observations skipped because the vertex projected behind its camera.
    std::size_t invalid_projections = 0;
    /// The neutral-shape prior was requested but no template is configured.
    bool mica_template_missing = false;

    double total() const { return alignment + flame + temporal + mica + deform; }
    double term(Term t) const;
};

struct CameraGradient
{
    Vec3 rotation = Vec3::Zero();
    Vec3 translation = Vec3::Zero();
    double focal = 0.0;
};

/// Gradient with the shape of TrackingParams; frozen groups are exactly zero.
struct TrackingGradient
{
    Eigen::VectorXd beta;
    Eigen::MatrixXd phi;
    Eigen::MatrixXd theta;
    Vertices delta_d;
    std::vector<Vec3> head_rotation;
    std::vector<Vec3> head_translation;
    std::vector<CameraGradient> cameras;
};

/// Which parameters are optimized for a given parameter set and config.
struct FreeGroups
{
    bool beta = false;
    bool phi = false;
    bool theta = false;
    bool delta_d = false;
    bool head_pose = false;
    std::vector<bool> camera_extrinsics;
    std::vector<bool> camera_focal;
    std::vector<bool> deformable;

    /// Resolves freeze flags, per-camera calibration and the deformable mask.
    /// With no calibrated camera, camera 0's extrinsics anchor the world frame.
    static FreeGroups resolve(const BlendshapeModel& model, const TrackingParams& params, const EnergyConfig& config);
};

/**
 * Total fitting energy and its exact gradient.
 *
 * Observations are copied and sorted into a canonical order at construction,
 * so results do not depend on input order. Frames are evaluated in parallel
 * and reduced in frame order; results are bit-identical across thread counts.
 */
class EnergyFunction
{
public:
    EnergyFunction(const BlendshapeModel& model, std::vector<AlignmentObservation> observations, int frame_count,
                   EnergyConfig config);

    const BlendshapeModel& model() const { return *model_; }
    const EnergyConfig& config() const { return config_; }
    int frame_count() const { return frame_count_; }
    std::size_t observation_count() const { return obs_.size(); }

    EnergyBreakdown energy(const TrackingParams& params, TermSet terms = TermSet::all()) const;

    /// Energy plus gradient of the selected terms w.r.t. every free parameter.
    EnergyBreakdown evaluate(const TrackingParams& params, TrackingGradient& gradient,
                             TermSet terms = TermSet::all()) const;

private:
    struct PreparedObservation
    {
        std::uint32_t vertex;
        std::uint32_t camera;
        Vec2 mu;
        double weight; ///< lambda_i
        double sigma;
    };

    EnergyBreakdown run(const TrackingParams& params, TrackingGradient* gradient, TermSet terms) const;

    const BlendshapeModel* model_;
    EnergyConfig config_;
    int frame_count_;
    std::vector<PreparedObservation> obs_;
    std::vector<std::size_t> frame_begin_; ///< frame_count + 1 offsets into obs_
    Eigen::VectorXd vertex_weights_;
    std::vector<bool> deformable_;
};

double energy_alignment(const TrackingParams& params, const std::vector<AlignmentObservation>& observations,
                        const BlendshapeModel& model, const EnergyConfig& config = {});
double energy_flame_reg(const TrackingParams& params, const EnergyConfig& config);
double energy_temporal(const TrackingParams& params, const BlendshapeModel& model, const EnergyConfig& config);
/// Zero, with `template_missing` set, when no neutral template is configured.
double energy_mica(const TrackingParams& params, const EnergyConfig& config, const BlendshapeModel& model,
                   bool* template_missing = nullptr);
double energy_deform(const TrackingParams& params, const EnergyConfig& config);

EnergyBreakdown total_energy(const TrackingParams& params, const std::vector<AlignmentObservation>& observations,
                             const EnergyConfig& config, const BlendshapeModel& model);

TrackingGradient gradient(const TrackingParams& params, const std::vector<AlignmentObservation>& observations,
                          const EnergyConfig& config, const BlendshapeModel& model, TermSet terms = TermSet::all());

/**
 * Flat vector view of the free parameters, the space the optimizer works in.
 *
 * Order: beta, phi (frame-major), theta (frame-major), deformable delta_d
 * entries, head rotations, head translations, then per camera its extrinsic
 * rotation and translation (if free) and log focal length (if free). Focal
 * lengths are optimized in log space so a single learning rate suits them.
 */
class ParameterLayout
{
public:
    struct Block
    {
        std::string name;
        Eigen::Index offset;
        Eigen::Index size;
    };

    ParameterLayout(const BlendshapeModel& model, const TrackingParams& params, const EnergyConfig& config);

    Eigen::Index size() const { return size_; }
    const std::vector<Block>& blocks() const { return blocks_; }
    const FreeGroups& free_groups() const { return free_; }

    Eigen::VectorXd pack(const TrackingParams& params) const;
    /// Writes the free entries of `x` into `params`; frozen entries are untouched.
    void unpack(const Eigen::VectorXd& x, TrackingParams& params) const;
    /// Gradient in the packed space; `at` supplies focal lengths for the log chain rule.
    Eigen::VectorXd pack_gradient(const TrackingGradient& g, const TrackingParams& at) const;
    /// Human-readable name of a packed coordinate, e.g. "phi[3][1]".
    std::string describe(Eigen::Index index) const;

private:
    FreeGroups free_;
    int frames_;
    int n_identity_;
    int n_expression_;
    int pose_size_;
    std::vector<int> deformable_vertices_;
    std::vector<Block> blocks_;
    Eigen::Index size_ = 0;
};

/// World-space vertices of every frame.
std::vector<Vertices> world_vertices(const BlendshapeModel& model, const TrackingParams& params);

struct ReprojectionStats
{
    double mean = 0.0;
    double rms = 0.0;
    std::size_t count = 0;
    std::size_t invalid = 0;
};

/// Pixel distances between projected fitted vertices and observed positions.
ReprojectionStats reprojection_error(const BlendshapeModel& model, const TrackingParams& params,
                                     const std::vector<AlignmentObservation>& observations);

/// Mean Euclidean distance between the world vertices of two parameter sets.
double mean_vertex_error(const BlendshapeModel& model, const TrackingParams& a, const TrackingParams& b);

} // namespace facefit
