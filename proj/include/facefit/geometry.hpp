#pragma once

#include "facefit/types.hpp"

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <vector>

namespace facefit {

/// Below this angle Rodrigues' formula switches to its Taylor expansion.
inline constexpr double kSmallAngle = 1e-7;

/// Points at or closer than this camera-space depth are behind the camera.
inline constexpr double kMinDepth = 1e-6;

/**
 * Rotation matrix of an axis-angle vector (Rodrigues' formula).
 *
 * Templated on the scalar so the same code runs on doubles and on Eigen's
 * AutoDiffScalar. Near zero the series expansion keeps the value and its
 * first derivative exact.
 */
template <typename T>
Eigen::Matrix<T, 3, 3> rotation_from_axis_angle(const Eigen::Matrix<T, 3, 1>& w)
{
    using std::cos;
    using std::sin;
    using std::sqrt;

    Eigen::Matrix<T, 3, 3> k;
    k << T(0), -w(2), w(1),
         w(2), T(0), -w(0),
        -w(1), w(0), T(0);
    const Eigen::Matrix<T, 3, 3> k2 = k * k;
    const T theta2 = w.squaredNorm();

    Eigen::Matrix<T, 3, 3> r = Eigen::Matrix<T, 3, 3>::Identity();
    if (theta2 < T(kSmallAngle * kSmallAngle)) {
        r += (T(1) - theta2 / T(6)) * k + (T(0.5) - theta2 / T(24)) * k2;
    } else {
        const T theta = sqrt(theta2);
        r += (sin(theta) / theta) * k + ((T(1) - cos(theta)) / theta2) * k2;
    }
    return r;
}

/// Rotation matrix together with its partial derivatives w.r.t. the three
/// axis-angle components.
struct RotationJacobian
{
    Mat3 rotation;
    std::array<Mat3, 3> d;
};

RotationJacobian rotation_with_jacobian(const Vec3& axis_angle);

/// Inverse of rotation_from_axis_angle, angle in [0, pi].
Vec3 axis_angle_from_rotation(const Mat3& r);

/// Rigid transform p -> R p + t with R given as an axis-angle vector.
struct RigidTransform
{
    Vec3 rotation = Vec3::Zero();
    Vec3 translation = Vec3::Zero();

    static RigidTransform identity() { return {}; }
    static RigidTransform from_matrix(const Mat3& r, const Vec3& t);

    Mat3 rotation_matrix() const { return rotation_from_axis_angle<double>(rotation); }
    Vec3 apply(const Vec3& p) const { return rotation_matrix() * p + translation; }
    RigidTransform inverse() const;
    /// (this * other)(p) = this(other(p)).
    RigidTransform operator*(const RigidTransform& other) const;
    bool is_finite() const { return rotation.allFinite() && translation.allFinite(); }
};

/// Pinhole camera with a single focal length and no distortion.
struct Camera
{
    RigidTransform extrinsics; ///< world -> camera
    double focal = 1.0;        ///< pixels
    Vec2 principal_point = Vec2::Zero();
    std::array<int, 2> image_size{1, 1};
    /// Calibrated cameras are held fixed during fitting.
    bool calibrated = true;

    /// Throws GeometryError when focal <= 0, the image size is not positive
    /// or the principal point lies outside the image.
    void validate() const;

    /// Camera whose principal point is the image center.
    static Camera centered(const RigidTransform& extrinsics, double focal, int width, int height,
                           bool calibrated = true);
};

struct Projection
{
    Vec2 pixel = Vec2::Zero();
    double depth = 0.0;
    bool valid = false;
};

Vertices transform_points(const RigidTransform& t, const Vertices& pts);

Projection project_point(const Camera& cam, const Vec3& world);

/// Projects world-space points; points behind the camera are flagged invalid.
std::vector<Projection> project(const Camera& cam, const Vertices& world);

/// World -> camera extrinsics of a camera at `eye` looking at `target`.
/// Image y points away from `up`.
RigidTransform look_at(const Vec3& eye, const Vec3& target, const Vec3& up);

} // namespace facefit
