#include "oracle.hpp"

#include "facefit/error.hpp"
#include "facefit/model.hpp"
#include "facefit/procedural_head.hpp"

#include <doctest.h>

#include <numbers>

using namespace facefit;

namespace {

// Four vertices, one joint located at the mean of the first two vertices.
BlendshapeModel single_joint_model()
{
    BlendshapeModel m;
    m.template_vertices.resize(4, 3);
    m.template_vertices << 0, 0, 0, 1, 0, 0, 0, 1, 0, 0.5, 0.5, 1;
    m.identity_basis = Eigen::MatrixXd::Zero(12, 1);
    m.identity_basis(3 * 2 + 1, 0) = 1.0;
    m.expression_basis = Eigen::MatrixXd::Zero(12, 1);
    m.expression_basis(3 * 3 + 2, 0) = 1.0;
    m.joint_regressor = Eigen::MatrixXd::Zero(1, 4);
    m.joint_regressor(0, 0) = 0.5;
    m.joint_regressor(0, 1) = 0.5;
    m.skin_weights = Eigen::MatrixXd::Ones(4, 1);
    m.joint_parents = {kNoParent};
    m.vertex_weights = Eigen::VectorXd::Ones(4);
    m.region_labels.assign(4, Region::face);
    m.uv_coords = UvCoords::Zero(4, 2);
    m.triangles = {{0, 1, 2}, {0, 2, 3}};
    m.validate();
    return m;
}

} // namespace

TEST_CASE("procedural heads are valid and sized as requested")
{
    const BlendshapeModel& m = oracle::mini_model();
    CHECK(m.n_vertices() == 162);
    CHECK(m.n_identity() == 8);
    CHECK(m.n_expression() == 6);
    CHECK(m.n_joints() == 2);
    CHECK_NOTHROW(m.validate());
    CHECK(oracle::mini_model_5_joints().n_joints() == 5);
    for (Eigen::Index i = 0; i < m.skin_weights.rows(); ++i)
        CHECK(std::abs(m.skin_weights.row(i).sum() - 1.0) < 1e-6);
    int regions[kRegionCount] = {};
    for (Region r : m.region_labels)
        ++regions[static_cast<int>(r)];
    for (int r = 0; r < kRegionCount; ++r)
        CHECK(regions[r] > 0);
}

TEST_CASE("procedural head generation is deterministic")
{
    const BlendshapeModel a = build_procedural_head(miniature_head_options());
    const BlendshapeModel b = build_procedural_head(miniature_head_options());
    CHECK(a.template_vertices == b.template_vertices);
    CHECK(a.identity_basis == b.identity_basis);
    CHECK(a.triangles == b.triangles);
}

TEST_CASE("evaluate_model examples")
{
    const BlendshapeModel& m = oracle::mini_model();
    ModelParams p = ModelParams::zeros(m);
    CHECK(evaluate_model(m, p) == m.template_vertices);

    p.beta(0) = 1.0;
    const Vertices v = evaluate_model(m, p);
    for (int i = 0; i < m.n_vertices(); ++i)
        for (int c = 0; c < 3; ++c)
            CHECK(v(i, c) == m.template_vertices(i, c) + m.identity_basis(3 * i + c, 0));

    p = ModelParams::zeros(m);
    Rng rng(1);
    for (Eigen::Index i = 0; i < p.delta_d.rows(); ++i)
        p.delta_d.row(i) << rng.normal(), rng.normal(), rng.normal();
    CHECK(evaluate_model(m, p) == m.template_vertices + p.delta_d);
}

TEST_CASE("evaluate_model rejects bad parameters")
{
    const BlendshapeModel& m = oracle::mini_model();
    ModelParams p = ModelParams::zeros(m);
    p.beta.resize(3);
    CHECK_THROWS_AS(evaluate_model(m, p), DimensionError);
    p = ModelParams::zeros(m);
    p.phi(0) = std::nan("");
    CHECK_THROWS_AS(evaluate_model(m, p), NumericError);
}

TEST_CASE("blendshapes are linear in identity")
{
    const BlendshapeModel& m = oracle::mini_model();
    Rng rng(4);
    ModelParams a = ModelParams::zeros(m), b = ModelParams::zeros(m), ab = ModelParams::zeros(m);
    for (int k = 0; k < m.n_identity(); ++k) {
        a.beta(k) = rng.normal();
        b.beta(k) = rng.normal();
        ab.beta(k) = a.beta(k) + b.beta(k);
    }
    const Vertices t = m.template_vertices;
    const Vertices lhs = evaluate_model(m, ab) - t;
    const Vertices rhs = (evaluate_model(m, a) - t) + (evaluate_model(m, b) - t);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-10 * lhs.cwiseAbs().maxCoeff());
}

TEST_CASE("lbs examples")
{
    const BlendshapeModel m = single_joint_model();
    const Vertices rest = m.template_vertices;
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(m.pose_size());
    CHECK(apply_lbs(rest, m, theta) == rest);

    SUBCASE("rotation about the joint pivot")
    {
        theta.head<3>() = Vec3(0.3, -0.2, 0.9);
        const Mat3 r = rotation_from_axis_angle<double>(Vec3(theta.head<3>()));
        const Vec3 j(0.5, 0.0, 0.0);
        const Vertices posed = apply_lbs(rest, m, theta);
        for (Eigen::Index i = 0; i < rest.rows(); ++i) {
            const Vec3 expect = r * (rest.row(i).transpose() - j) + j;
            CHECK((posed.row(i).transpose() - expect).norm() < 1e-12);
        }
    }
    SUBCASE("root translation only")
    {
        theta.tail<3>() = Vec3(0.1, 0.2, -0.3);
        const Vertices posed = apply_lbs(rest, m, theta);
        for (Eigen::Index i = 0; i < rest.rows(); ++i)
            CHECK((posed.row(i) - rest.row(i) - Eigen::RowVector3d(0.1, 0.2, -0.3)).norm() < 1e-15);
    }
}

TEST_CASE("lbs with a chain follows forward kinematics")
{
    const BlendshapeModel& m = oracle::mini_model_5_joints();
    const Vertices rest = m.template_vertices;
    // Rotating only the root moves everything rigidly about the root joint.
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(m.pose_size());
    theta.head<3>() = Vec3(0.0, 0.4, 0.1);
    const Vertices posed = apply_lbs(rest, m, theta);
    const Vec3 j0 = (m.joint_regressor.row(0) * rest).transpose();
    const Mat3 r = rotation_from_axis_angle<double>(Vec3(0.0, 0.4, 0.1));
    for (Eigen::Index i = 0; i < rest.rows(); ++i)
        CHECK((posed.row(i).transpose() - (r * (rest.row(i).transpose() - j0) + j0)).norm() < 1e-12);
}

TEST_CASE("zero pose is the identity for every model")
{
    for (const BlendshapeModel* m : {&oracle::mini_model(), &oracle::mini_model_5_joints()}) {
        const Vertices rest = blendshape_vertices(*m, Eigen::VectorXd::Ones(m->n_identity()), Eigen::VectorXd::Ones(m->n_expression()));
        const Vertices posed = apply_lbs(rest, *m, Eigen::VectorXd::Zero(m->pose_size()));
        CHECK((posed - rest).cwiseAbs().maxCoeff() < 1e-15);
    }
}

TEST_CASE("neutral vertices match evaluate_model with zero expression and pose")
{
    const BlendshapeModel& m = oracle::mini_model();
    ModelParams p = ModelParams::zeros(m);
    CHECK(neutral_vertices(m, p.beta, p.delta_d) == m.template_vertices);
    Rng rng(2);
    for (int k = 0; k < m.n_identity(); ++k)
        p.beta(k) = rng.normal();
    p.delta_d(7, 1) = 0.01;
    CHECK(neutral_vertices(m, p.beta, p.delta_d) == evaluate_model(m, p));
    Vertices expect = m.template_vertices;
    expect.reshaped<Eigen::RowMajor>() += m.identity_basis * p.beta;
    expect(7, 1) += 0.01;
    CHECK((neutral_vertices(m, p.beta, p.delta_d) - expect).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("evaluate_model is pure")
{
    const BlendshapeModel& m = oracle::mini_model_5_joints();
    ModelParams p = ModelParams::zeros(m);
    Rng rng(6);
    for (Eigen::Index k = 0; k < p.theta.size(); ++k)
        p.theta(k) = 0.1 * rng.normal();
    CHECK(evaluate_model(m, p) == evaluate_model(m, p));
}

TEST_CASE("model validation catches broken invariants")
{
    BlendshapeModel m = single_joint_model();
    SUBCASE("non-convex skin weights")
    {
        m.skin_weights(1, 0) = 0.9;
        CHECK_THROWS_AS(m.validate(), FormatError);
    }
    SUBCASE("two roots")
    {
        m.joint_regressor = Eigen::MatrixXd::Constant(2, 4, 0.25);
        m.skin_weights = Eigen::MatrixXd::Constant(4, 2, 0.5);
        m.joint_parents = {kNoParent, kNoParent};
        CHECK_THROWS_AS(m.validate(), FormatError);
    }
    SUBCASE("cycle")
    {
        m.joint_regressor = Eigen::MatrixXd::Constant(3, 4, 0.25);
        m.skin_weights = Eigen::MatrixXd::Constant(4, 3, 1.0 / 3.0);
        m.joint_parents = {kNoParent, 2, 1};
        CHECK_THROWS_AS(m.validate(), FormatError);
    }
    SUBCASE("non-finite basis")
    {
        m.identity_basis(0, 0) = std::numeric_limits<double>::infinity();
        CHECK_THROWS_AS(m.validate(), NumericError);
    }
    SUBCASE("non-positive vertex weight")
    {
        m.vertex_weights(2) = 0.0;
        CHECK_THROWS_AS(m.validate(), FormatError);
    }
    SUBCASE("triangle out of range")
    {
        m.triangles.push_back({0, 1, 9});
        CHECK_THROWS_AS(m.validate(), FormatError);
    }
}
