#include "facefit/model.hpp"

#include "facefit/error.hpp"
#include "facefit/geometry.hpp"

#include <unsupported/Eigen/AutoDiff>

#include <string>

namespace facefit {

namespace {

[[noreturn]] void dimension_error(const std::string& what)
{
    throw DimensionError("model: " + what);
}

template <typename Derived>
void require_finite(const Eigen::DenseBase<Derived>& m, const char* what)
{
    if (!m.allFinite())
        throw NumericError(std::string("model: non-finite entry in ") + what);
}

/// Skinning transforms for one pose; see PoseLinearization.
template <typename T>
void skinning_transforms(const BlendshapeModel& model, const std::vector<int>& order,
                         const Eigen::Matrix<T, Eigen::Dynamic, 1>& rotations,
                         const Eigen::Matrix<T, Eigen::Dynamic, 3>& joints, std::vector<Eigen::Matrix<T, 3, 3>>& r_out,
                         std::vector<Eigen::Matrix<T, 3, 1>>& t_out)
{
    using M3 = Eigen::Matrix<T, 3, 3>;
    using V3 = Eigen::Matrix<T, 3, 1>;
    const int k_count = model.n_joints();
    std::vector<M3> global_r(static_cast<std::size_t>(k_count));
    std::vector<V3> global_t(static_cast<std::size_t>(k_count));
    r_out.resize(static_cast<std::size_t>(k_count));
    t_out.resize(static_cast<std::size_t>(k_count));

    for (int k : order) {
        const V3 w = rotations.template segment<3>(3 * k);
        const M3 local = rotation_from_axis_angle<T>(w);
        const V3 joint = joints.row(k).transpose();
        const std::uint32_t parent = model.joint_parents[static_cast<std::size_t>(k)];
        const auto ku = static_cast<std::size_t>(k);
        if (parent == kNoParent) {
            global_r[ku] = local;
            global_t[ku] = joint;
        } else {
            const V3 parent_joint = joints.row(static_cast<Eigen::Index>(parent)).transpose();
            global_r[ku] = global_r[parent] * local;
            global_t[ku] = global_r[parent] * (joint - parent_joint) + global_t[parent];
        }
        r_out[ku] = global_r[ku];
        t_out[ku] = global_t[ku] - global_r[ku] * joint;
    }
}

} // namespace

void BlendshapeModel::validate() const
{
    const Eigen::Index n = template_vertices.rows();
    if (n <= 0)
        dimension_error("template has no vertices");
    require_finite(template_vertices, "template");

    if (identity_basis.rows() != 3 * n)
        dimension_error("identity basis has " + std::to_string(identity_basis.rows()) + " rows, expected " +
                        std::to_string(3 * n));
    if (expression_basis.rows() != 3 * n)
        dimension_error("expression basis has " + std::to_string(expression_basis.rows()) + " rows, expected " +
                        std::to_string(3 * n));
    require_finite(identity_basis, "identity basis");
    require_finite(expression_basis, "expression basis");

    const Eigen::Index k = joint_regressor.rows();
    if (k <= 0)
        dimension_error("model needs at least one joint");
    if (joint_regressor.cols() != n)
        dimension_error("joint regressor must be K x " + std::to_string(n));
    require_finite(joint_regressor, "joint regressor");
    if (skin_weights.rows() != n || skin_weights.cols() != k)
        dimension_error("skin weights must be " + std::to_string(n) + " x " + std::to_string(k));
    require_finite(skin_weights, "skin weights");
    for (Eigen::Index i = 0; i < n; ++i) {
        if ((skin_weights.row(i).array() < 0.0).any())
            throw FormatError("model: negative skin weight at vertex " + std::to_string(i));
        if (std::abs(skin_weights.row(i).sum() - 1.0) > 1e-6)
            throw FormatError("model: skin weights of vertex " + std::to_string(i) + " do not sum to 1");
    }

    if (joint_parents.size() != static_cast<std::size_t>(k))
        dimension_error("joint parent list must have one entry per joint");
    (void)kinematic_order();

    if (vertex_weights.size() != n)
        dimension_error("vertex weight count does not match the vertex count");
    require_finite(vertex_weights, "vertex weights");
    if ((vertex_weights.array() <= 0.0).any())
        throw FormatError("model: vertex weights must be positive");

    if (region_labels.size() != static_cast<std::size_t>(n))
        dimension_error("region label count does not match the vertex count");
    for (Region r : region_labels)
        if (static_cast<int>(r) >= kRegionCount)
            throw FormatError("model: unknown region label " + std::to_string(static_cast<int>(r)));

    if (uv_coords.rows() != n)
        dimension_error("uv coordinate count does not match the vertex count");
    require_finite(uv_coords, "uv coordinates");

    for (const Triangle& tri : triangles)
        for (std::uint32_t v : tri)
            if (v >= static_cast<std::uint32_t>(n))
                throw FormatError("model: triangle index " + std::to_string(v) + " out of range");
}

std::vector<int> BlendshapeModel::kinematic_order() const
{
    const int k = static_cast<int>(joint_parents.size());
    int roots = 0;
    std::vector<std::vector<int>> children(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j) {
        const std::uint32_t p = joint_parents[static_cast<std::size_t>(j)];
        if (p == kNoParent) {
            ++roots;
        } else {
            if (p >= static_cast<std::uint32_t>(k))
                throw FormatError("model: joint " + std::to_string(j) + " has out-of-range parent");
            children[p].push_back(j);
        }
    }
    if (roots != 1)
        throw FormatError("model: joint hierarchy must have exactly one root, found " + std::to_string(roots));

    std::vector<int> order;
    order.reserve(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j)
        if (joint_parents[static_cast<std::size_t>(j)] == kNoParent)
            order.push_back(j);
    for (std::size_t head = 0; head < order.size(); ++head)
        for (int c : children[static_cast<std::size_t>(order[head])])
            order.push_back(c);
    if (order.size() != static_cast<std::size_t>(k))
        throw FormatError("model: joint hierarchy contains a cycle");
    return order;
}

ModelParams ModelParams::zeros(const BlendshapeModel& model)
{
    ModelParams p;
    p.beta = Eigen::VectorXd::Zero(model.n_identity());
    p.phi = Eigen::VectorXd::Zero(model.n_expression());
    p.theta = Eigen::VectorXd::Zero(model.pose_size());
    p.delta_d = Vertices::Zero(model.n_vertices(), 3);
    return p;
}

Vertices blendshape_vertices(const BlendshapeModel& model, const Eigen::VectorXd& beta, const Eigen::VectorXd& phi)
{
    if (beta.size() != model.n_identity())
        dimension_error("beta has " + std::to_string(beta.size()) + " entries, expected " +
                        std::to_string(model.n_identity()));
    if (phi.size() != model.n_expression())
        dimension_error("phi has " + std::to_string(phi.size()) + " entries, expected " +
                        std::to_string(model.n_expression()));
    if (!beta.allFinite() || !phi.allFinite())
        throw NumericError("model: non-finite shape parameter");

    Vertices out = model.template_vertices;
    Eigen::Map<Eigen::VectorXd> flat(out.data(), out.size());
    if (model.n_identity() > 0)
        flat.noalias() += model.identity_basis * beta;
    if (model.n_expression() > 0)
        flat.noalias() += model.expression_basis * phi;
    return out;
}

bool is_rest_pose(const Eigen::VectorXd& theta)
{
    return (theta.array() == 0.0).all();
}

PoseLinearization linearize_pose(const BlendshapeModel& model, const Eigen::VectorXd& theta,
                                 const Eigen::Matrix<double, Eigen::Dynamic, 3>& joints, bool with_jacobian)
{
    const int k = model.n_joints();
    if (theta.size() != model.pose_size())
        dimension_error("theta has " + std::to_string(theta.size()) + " entries, expected " +
                        std::to_string(model.pose_size()));
    if (!theta.allFinite())
        throw NumericError("model: non-finite pose parameter");
    const std::vector<int> order = model.kinematic_order();

    PoseLinearization out;
    out.root_translation = theta.tail<3>();
    const Eigen::VectorXd rotations = theta.head(3 * k);

    if (!with_jacobian) {
        skinning_transforms<double>(model, order, rotations, joints, out.rotations, out.translations);
        return out;
    }

    using Ad = Eigen::AutoDiffScalar<Eigen::VectorXd>;
    const int n_in = 6 * k;
    Eigen::Matrix<Ad, Eigen::Dynamic, 1> rot_ad(3 * k);
    Eigen::Matrix<Ad, Eigen::Dynamic, 3> joints_ad(k, 3);
    for (int i = 0; i < 3 * k; ++i)
        rot_ad(i) = Ad(rotations(i), n_in, i);
    for (int j = 0; j < k; ++j)
        for (int c = 0; c < 3; ++c)
            joints_ad(j, c) = Ad(joints(j, c), n_in, 3 * k + 3 * j + c);

    std::vector<Eigen::Matrix<Ad, 3, 3>> r_ad;
    std::vector<Eigen::Matrix<Ad, 3, 1>> t_ad;
    skinning_transforms<Ad>(model, order, rot_ad, joints_ad, r_ad, t_ad);

    out.rotations.resize(static_cast<std::size_t>(k));
    out.translations.resize(static_cast<std::size_t>(k));
    out.jacobian = Eigen::MatrixXd::Zero(12 * k, n_in);
    for (int j = 0; j < k; ++j) {
        const auto ju = static_cast<std::size_t>(j);
        for (int a = 0; a < 3; ++a) {
            for (int b = 0; b < 3; ++b) {
                const Ad& e = r_ad[ju](a, b);
                out.rotations[ju](a, b) = e.value();
                if (e.derivatives().size() == n_in)
                    out.jacobian.row(12 * j + 3 * a + b) = e.derivatives().transpose();
            }
            const Ad& e = t_ad[ju](a);
            out.translations[ju](a) = e.value();
            if (e.derivatives().size() == n_in)
                out.jacobian.row(12 * j + 9 + a) = e.derivatives().transpose();
        }
    }
    return out;
}

Vertices skin(const BlendshapeModel& model, const PoseLinearization& pose, const Vertices& rest)
{
    const int k = model.n_joints();
    Vertices out(rest.rows(), 3);
    for (Eigen::Index i = 0; i < rest.rows(); ++i) {
        const Vec3 v = rest.row(i).transpose();
        Vec3 acc = pose.root_translation;
        for (int j = 0; j < k; ++j) {
            const double w = model.skin_weights(i, j);
            if (w != 0.0)
                acc += w * (pose.rotations[static_cast<std::size_t>(j)] * v + pose.translations[static_cast<std::size_t>(j)]);
        }
        out.row(i) = acc.transpose();
    }
    return out;
}

Vertices apply_lbs(const Vertices& rest, const BlendshapeModel& model, const Eigen::VectorXd& theta)
{
    if (rest.rows() != model.n_vertices())
        dimension_error("rest vertex count does not match the model");
    const Eigen::Matrix<double, Eigen::Dynamic, 3> joints = model.joint_regressor * rest;
    return skin(model, linearize_pose(model, theta, joints, false), rest);
}

Vertices evaluate_model(const BlendshapeModel& model, const ModelParams& params)
{
    if (params.delta_d.rows() != model.n_vertices())
        dimension_error("delta_d has " + std::to_string(params.delta_d.rows()) + " rows, expected " +
                        std::to_string(model.n_vertices()));
    if (!params.delta_d.allFinite())
        throw NumericError("model: non-finite deformation");
    const Vertices shaped = blendshape_vertices(model, params.beta, params.phi);
    if (params.theta.size() != model.pose_size())
        dimension_error("theta has " + std::to_string(params.theta.size()) + " entries, expected " +
                        std::to_string(model.pose_size()));
    if (!params.theta.allFinite())
        throw NumericError("model: non-finite pose parameter");
    Vertices posed = is_rest_pose(params.theta) ? shaped : apply_lbs(shaped, model, params.theta);
    posed += params.delta_d;
    return posed;
}

Vertices neutral_vertices(const BlendshapeModel& model, const Eigen::VectorXd& beta, const Vertices& delta_d)
{
    ModelParams p = ModelParams::zeros(model);
    p.beta = beta;
    p.delta_d = delta_d;
    return evaluate_model(model, p);
}

} // namespace facefit
