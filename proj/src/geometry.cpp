#include "facefit/geometry.hpp"

#include "facefit/error.hpp"

#include <Eigen/Geometry>
#include <unsupported/Eigen/AutoDiff>

#include <string>

namespace facefit {

RotationJacobian rotation_with_jacobian(const Vec3& axis_angle)
{
    using Ad = Eigen::AutoDiffScalar<Eigen::Vector3d>;
    Eigen::Matrix<Ad, 3, 1> w;
    for (int i = 0; i < 3; ++i)
        w(i) = Ad(axis_angle(i), 3, i);
    const Eigen::Matrix<Ad, 3, 3> r = rotation_from_axis_angle<Ad>(w);

    RotationJacobian out;
    for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) {
            out.rotation(a, b) = r(a, b).value();
            for (int k = 0; k < 3; ++k)
                out.d[k](a, b) = r(a, b).derivatives()(k);
        }
    }
    return out;
}

Vec3 axis_angle_from_rotation(const Mat3& r)
{
    const Eigen::AngleAxisd aa(r);
    return aa.axis() * aa.angle();
}

RigidTransform RigidTransform::from_matrix(const Mat3& r, const Vec3& t)
{
    return {axis_angle_from_rotation(r), t};
}

RigidTransform RigidTransform::inverse() const
{
    const Mat3 rt = rotation_matrix().transpose();
    return {-rotation, -(rt * translation)};
}

RigidTransform RigidTransform::operator*(const RigidTransform& other) const
{
    const Mat3 r = rotation_matrix();
    return from_matrix(r * other.rotation_matrix(), r * other.translation + translation);
}

void Camera::validate() const
{
    if (!(focal > 0.0) || !std::isfinite(focal))
        throw GeometryError("camera focal length must be positive, got " + std::to_string(focal));
    if (image_size[0] <= 0 || image_size[1] <= 0)
        throw GeometryError("camera image size must be positive");
    if (!principal_point.allFinite() || principal_point.x() < 0.0 || principal_point.y() < 0.0 ||
        principal_point.x() > image_size[0] || principal_point.y() > image_size[1])
        throw GeometryError("camera principal point lies outside the image");
    if (!extrinsics.is_finite())
        throw NumericError("camera extrinsics are not finite");
}

Camera Camera::centered(const RigidTransform& extrinsics, double focal, int width, int height, bool calibrated)
{
    Camera cam;
    cam.extrinsics = extrinsics;
    cam.focal = focal;
    cam.principal_point = Vec2(0.5 * width, 0.5 * height);
    cam.image_size = {width, height};
    cam.calibrated = calibrated;
    return cam;
}

Vertices transform_points(const RigidTransform& t, const Vertices& pts)
{
    const Mat3 r = t.rotation_matrix();
    Vertices out(pts.rows(), 3);
    for (Eigen::Index i = 0; i < pts.rows(); ++i)
        out.row(i) = (r * pts.row(i).transpose() + t.translation).transpose();
    return out;
}

namespace {

Projection project_camera_space(const Camera& cam, const Vec3& p)
{
    Projection out;
    out.depth = p.z();
    if (!(p.z() > kMinDepth))
        return out;
    out.pixel = cam.focal * Vec2(p.x() / p.z(), p.y() / p.z()) + cam.principal_point;
    out.valid = true;
    return out;
}

} // namespace

Projection project_point(const Camera& cam, const Vec3& world)
{
    return project_camera_space(cam, cam.extrinsics.apply(world));
}

std::vector<Projection> project(const Camera& cam, const Vertices& world)
{
    const Mat3 r = cam.extrinsics.rotation_matrix();
    std::vector<Projection> out(static_cast<std::size_t>(world.rows()));
    for (Eigen::Index i = 0; i < world.rows(); ++i)
        out[static_cast<std::size_t>(i)] =
            project_camera_space(cam, r * world.row(i).transpose() + cam.extrinsics.translation);
    return out;
}

RigidTransform look_at(const Vec3& eye, const Vec3& target, const Vec3& up)
{
    const Vec3 z = (target - eye).normalized();
    Vec3 y = -(up - up.dot(z) * z);
    if (y.norm() < 1e-12)
        throw GeometryError("look_at: up vector is parallel to the viewing direction");
    y.normalize();
    const Vec3 x = y.cross(z);
    Mat3 r;
    r.row(0) = x.transpose();
    r.row(1) = y.transpose();
    r.row(2) = z.transpose();
    return RigidTransform::from_matrix(r, -(r * eye));
}

} // namespace facefit
