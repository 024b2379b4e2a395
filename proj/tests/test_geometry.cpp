#include "oracle.hpp"

#include "facefit/error.hpp"
#include "facefit/geometry.hpp"

#include <Eigen/LU>
#include <doctest.h>

#include <numbers>

using namespace facefit;

TEST_CASE("transform_points examples")
{
    Vertices p(1, 3);
    p << 1.0, 0.0, 0.0;
    CHECK(transform_points(RigidTransform::identity(), p) == p);

    RigidTransform rz;
    rz.rotation = Vec3(0, 0, std::numbers::pi / 2);
    const Vertices q = transform_points(rz, p);
    CHECK((q.row(0) - Eigen::RowVector3d(0, 1, 0)).norm() < 1e-12);

    RigidTransform tz;
    tz.translation = Vec3(0, 0, 5);
    CHECK(transform_points(tz, Vertices::Zero(1, 3)).row(0) == Eigen::RowVector3d(0, 0, 5));
}

TEST_CASE("project examples")
{
    const Camera cam = Camera::centered(RigidTransform::identity(), 100.0, 640, 480);
    const Projection axis = project_point(cam, Vec3(0, 0, 3));
    CHECK(axis.valid);
    CHECK(axis.pixel == cam.principal_point);

    Camera c0;
    c0.focal = 100.0;
    c0.principal_point = Vec2::Zero();
    c0.image_size = {10, 10};
    const Projection p = project_point(c0, Vec3(0.1, -0.2, 1.0));
    CHECK(p.pixel.x() == doctest::Approx(10.0));
    CHECK(p.pixel.y() == doctest::Approx(-20.0));
    CHECK(p.depth == 1.0);

    const Projection near = project_point(cam, Vec3(0.1, 0.05, 1.0));
    const Projection far = project_point(cam, Vec3(0.1, 0.05, 2.0));
    CHECK(((far.pixel - cam.principal_point) * 2.0 - (near.pixel - cam.principal_point)).norm() < 1e-12);
}

TEST_CASE("points behind the camera are flagged, not thrown")
{
    const Camera cam = Camera::centered(RigidTransform::identity(), 100.0, 64, 64);
    CHECK_FALSE(project_point(cam, Vec3(0, 0, -1)).valid);
    CHECK_FALSE(project_point(cam, Vec3(0, 0, 0)).valid);
    CHECK_FALSE(project_point(cam, Vec3(0, 0, 1e-7)).valid);
    CHECK(project_point(cam, Vec3(0, 0, 1e-5)).valid);
}

TEST_CASE("rigid transform inverse round trip and projection scale consistency")
{
    Rng rng(3);
    for (int k = 0; k < 50; ++k) {
        RigidTransform t;
        t.rotation = Vec3(rng.normal(), rng.normal(), rng.normal());
        t.translation = Vec3(rng.normal(), rng.normal(), rng.normal());
        Vertices p(5, 3);
        for (Eigen::Index i = 0; i < 5; ++i)
            p.row(i) << rng.normal(), rng.normal(), rng.normal();
        CHECK((transform_points(t.inverse(), transform_points(t, p)) - p).cwiseAbs().maxCoeff() < 1e-9);

        const Mat3 r = t.rotation_matrix();
        CHECK((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-9);
        CHECK(std::abs(r.determinant() - 1.0) < 1e-9);

        const Camera cam = Camera::centered(RigidTransform::identity(), 500.0, 100, 100);
        const Vec3 x(rng.normal(), rng.normal(), 2.0 + rng.uniform());
        const double s = 0.1 + 5.0 * rng.uniform();
        CHECK((project_point(cam, s * x).pixel - project_point(cam, x).pixel).norm() < 1e-9);
    }
}

TEST_CASE("composition applies right to left")
{
    RigidTransform a, b;
    a.rotation = Vec3(0.1, 0.2, 0.3);
    a.translation = Vec3(1, 2, 3);
    b.rotation = Vec3(-0.4, 0.0, 0.2);
    b.translation = Vec3(0, -1, 0.5);
    const Vec3 p(0.3, -0.7, 1.1);
    CHECK(((a * b).apply(p) - a.apply(b.apply(p))).norm() < 1e-12);
}

TEST_CASE("rodrigues small-angle branch is continuous")
{
    const Vec3 axis = Vec3(1, -2, 0.5).normalized();
    for (double angle : {1e-12, 5e-8, 1e-7, 2e-7, 1e-6}) {
        const Mat3 r = rotation_from_axis_angle<double>(Vec3(angle * axis));
        Mat3 k;
        k << 0, -axis.z(), axis.y(), axis.z(), 0, -axis.x(), -axis.y(), axis.x(), 0;
        const Mat3 exact = Mat3::Identity() + std::sin(angle) * k + (1.0 - std::cos(angle)) * k * k;
        CHECK((r - exact).cwiseAbs().maxCoeff() < 1e-15);
    }
    CHECK(rotation_from_axis_angle<double>(Vec3::Zero()) == Mat3::Identity());
}

TEST_CASE("rotation jacobian matches finite differences")
{
    Rng rng(5);
    for (int k = 0; k < 20; ++k) {
        const Vec3 w = k == 0 ? Vec3::Zero() : Vec3(rng.normal(), rng.normal(), rng.normal());
        const RotationJacobian j = rotation_with_jacobian(w);
        for (int c = 0; c < 3; ++c) {
            Vec3 wp = w, wm = w;
            wp(c) += 1e-6;
            wm(c) -= 1e-6;
            const Mat3 fd = (rotation_from_axis_angle<double>(wp) - rotation_from_axis_angle<double>(wm)) / 2e-6;
            CHECK((fd - j.d[static_cast<std::size_t>(c)]).cwiseAbs().maxCoeff() < 1e-8);
        }
    }
}

TEST_CASE("axis-angle round trip")
{
    Rng rng(8);
    for (int k = 0; k < 30; ++k) {
        const Vec3 w = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized() * rng.uniform(0.0, 3.0);
        CHECK((axis_angle_from_rotation(rotation_from_axis_angle<double>(w)) - w).norm() < 1e-9);
    }
}

TEST_CASE("look_at points the optical axis at the target")
{
    const Vec3 eye(0.3, 0.1, -0.8);
    const RigidTransform ext = look_at(eye, Vec3::Zero(), Vec3::UnitY());
    const Vec3 target_cam = ext.apply(Vec3::Zero());
    CHECK(target_cam.head<2>().norm() < 1e-12);
    CHECK(target_cam.z() == doctest::Approx(eye.norm()));
    // World up projects upward in the image (negative y).
    CHECK(ext.apply(Vec3(0, 0.1, 0)).y() < 0.0);
    CHECK_THROWS_AS(look_at(Vec3(0, 1, 0), Vec3::Zero(), Vec3::UnitY()), GeometryError);
}

TEST_CASE("camera validation")
{
    Camera c = Camera::centered(RigidTransform::identity(), 100.0, 64, 48);
    CHECK_NOTHROW(c.validate());
    CHECK(c.principal_point == Vec2(32, 24));
    c.focal = 0.0;
    CHECK_THROWS_AS(c.validate(), GeometryError);
    c.focal = 100.0;
    c.principal_point = Vec2(-1, 0);
    CHECK_THROWS_AS(c.validate(), GeometryError);
}
