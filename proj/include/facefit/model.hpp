#pragma once

#include "facefit/types.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace facefit {

inline constexpr std::uint32_t kNoParent = 0xFFFFFFFFu;

/**
 * Linear blendshape head model with skeletal linear blend skinning.
 *
 * Bases are stored as 3N x B matrices whose row 3 * i + c holds coordinate c of
 * vertex i, so `identity_basis * beta` is directly a flat vertex offset.
 * Immutable after construction; safe to share between threads.
 */
struct BlendshapeModel
{
    Vertices template_vertices;
    Eigen::MatrixXd identity_basis;
    Eigen::MatrixXd expression_basis;
    Eigen::MatrixXd joint_regressor; ///< K x N
    Eigen::MatrixXd skin_weights;    ///< N x K, rows convex
    std::vector<std::uint32_t> joint_parents;
    Eigen::VectorXd vertex_weights;
    std::vector<Region> region_labels;
    UvCoords uv_coords;
    Triangles triangles;

    int n_vertices() const { return static_cast<int>(template_vertices.rows()); }
    int n_identity() const { return static_cast<int>(identity_basis.cols()); }
    int n_expression() const { return static_cast<int>(expression_basis.cols()); }
    int n_joints() const { return static_cast<int>(joint_regressor.rows()); }
    /// 3 K joint rotations followed by the root translation.
    int pose_size() const { return 3 * n_joints() + 3; }

    /// Checks every structural invariant and throws DimensionError,
    /// NumericError or FormatError on the first violation.
    void validate() const;

    /// Joints ordered so that every parent precedes its children.
    std::vector<int> kinematic_order() const;
};

struct ModelParams
{
    Eigen::VectorXd beta;
    Eigen::VectorXd phi;
    Eigen::VectorXd theta;
    Vertices delta_d;

    static ModelParams zeros(const BlendshapeModel& model);
};

/// template + identity_basis * beta + expression_basis * phi.
Vertices blendshape_vertices(const BlendshapeModel& model, const Eigen::VectorXd& beta, const Eigen::VectorXd& phi);

/// Blendshapes, posed by LBS, plus the static deformations (added after skinning).
Vertices evaluate_model(const BlendshapeModel& model, const ModelParams& params);

Vertices apply_lbs(const Vertices& rest, const BlendshapeModel& model, const Eigen::VectorXd& theta);

/// Model with zero expression and zero pose.
Vertices neutral_vertices(const BlendshapeModel& model, const Eigen::VectorXd& beta, const Vertices& delta_d);

/// True when every entry of theta is exactly zero, in which case LBS is the identity.
bool is_rest_pose(const Eigen::VectorXd& theta);

/**
 * Per-joint skinning transforms A_k (global transform with the rest joint
 * location removed) for one pose, optionally with their Jacobian.
 *
 * A skinned vertex is sum_k w_ik (R_k v + t_k) + root_translation.
 * `jacobian` is 12K x 6K: rows are (R_k row-major, then t_k) per joint, columns
 * are the 3K joint rotations followed by the 3K rest joint coordinates.
 */
struct PoseLinearization
{
    std::vector<Mat3> rotations;
    std::vector<Vec3> translations;
    Vec3 root_translation = Vec3::Zero();
    Eigen::MatrixXd jacobian;
};

/// `joints` is K x 3 (joint_regressor applied to the rest vertices).
PoseLinearization linearize_pose(const BlendshapeModel& model, const Eigen::VectorXd& theta,
                                 const Eigen::Matrix<double, Eigen::Dynamic, 3>& joints, bool with_jacobian);

/// Skins `rest` with a precomputed linearization.
Vertices skin(const BlendshapeModel& model, const PoseLinearization& pose, const Vertices& rest);

} // namespace facefit
