#include "facefit/procedural_head.hpp"

#include "facefit/error.hpp"
#include "facefit/random.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace facefit {

namespace {

constexpr double kPi = std::numbers::pi;

struct UnitSphere
{
    std::vector<Vec3> directions;
    Triangles triangles;
};

void add_outward(UnitSphere& s, std::uint32_t a, std::uint32_t b, std::uint32_t c)
{
    const Vec3& pa = s.directions[a];
    const Vec3& pb = s.directions[b];
    const Vec3& pc = s.directions[c];
    const Vec3 n = (pb - pa).cross(pc - pa);
    if (n.dot(pa + pb + pc) < 0.0)
        std::swap(b, c);
    s.triangles.push_back({a, b, c});
}

/// Latitude-ring sphere with exactly n vertices: two poles plus rings whose
/// vertex counts follow the ring circumference.
UnitSphere ring_sphere(int n)
{
    if (n < 12)
        throw DimensionError("procedural head needs at least 12 vertices");
    const int interior = n - 2;
    const int rings = std::max(2, static_cast<int>(std::lround(std::sqrt(kPi * interior / 4.0))) - 1);

    std::vector<int> counts(static_cast<std::size_t>(rings));
    for (int r = 0; r < rings; ++r) {
        const double polar = kPi * (r + 1) / (rings + 1);
        counts[static_cast<std::size_t>(r)] =
            std::max(3, static_cast<int>(std::lround(2.0 * (rings + 1) * std::sin(polar))));
    }
    int diff = interior - std::accumulate(counts.begin(), counts.end(), 0);
    std::vector<int> by_size(static_cast<std::size_t>(rings));
    std::iota(by_size.begin(), by_size.end(), 0);
    std::stable_sort(by_size.begin(), by_size.end(),
                     [&](int a, int b) { return counts[static_cast<std::size_t>(a)] > counts[static_cast<std::size_t>(b)]; });
    while (diff != 0) {
        bool changed = false;
        for (int r : by_size) {
            int& c = counts[static_cast<std::size_t>(r)];
            if (diff > 0) {
                ++c;
                --diff;
                changed = true;
            } else if (diff < 0 && c > 3) {
                --c;
                ++diff;
                changed = true;
            }
            if (diff == 0)
                break;
        }
        if (!changed)
            throw DimensionError("procedural head: cannot distribute vertices over rings");
    }

    UnitSphere s;
    s.directions.reserve(static_cast<std::size_t>(n));
    s.directions.emplace_back(0.0, 1.0, 0.0);
    std::vector<std::vector<std::uint32_t>> ring_index(static_cast<std::size_t>(rings));
    std::vector<double> offsets(static_cast<std::size_t>(rings));
    for (int r = 0; r < rings; ++r) {
        const double polar = kPi * (r + 1) / (rings + 1);
        const int count = counts[static_cast<std::size_t>(r)];
        offsets[static_cast<std::size_t>(r)] = (r % 2 == 0) ? 0.0 : 0.5;
        for (int k = 0; k < count; ++k) {
            const double az = 2.0 * kPi * (k + offsets[static_cast<std::size_t>(r)]) / count;
            ring_index[static_cast<std::size_t>(r)].push_back(static_cast<std::uint32_t>(s.directions.size()));
            // Azimuth zero points to +z, the back of the head, so the seam is hidden.
            s.directions.emplace_back(std::sin(polar) * std::sin(az), std::cos(polar), std::sin(polar) * std::cos(az));
        }
    }
    const auto south = static_cast<std::uint32_t>(s.directions.size());
    s.directions.emplace_back(0.0, -1.0, 0.0);

    const auto& top = ring_index.front();
    for (std::size_t k = 0; k < top.size(); ++k)
        add_outward(s, 0, top[k], top[(k + 1) % top.size()]);
    for (int r = 0; r + 1 < rings; ++r) {
        const auto& a = ring_index[static_cast<std::size_t>(r)];
        const auto& b = ring_index[static_cast<std::size_t>(r + 1)];
        const double na = static_cast<double>(a.size());
        const double nb = static_cast<double>(b.size());
        const double oa = offsets[static_cast<std::size_t>(r)];
        const double ob = offsets[static_cast<std::size_t>(r + 1)];
        std::size_t i = 0;
        std::size_t j = 0;
        while (i < a.size() || j < b.size()) {
            const bool advance_a =
                j == b.size() || (i < a.size() && (static_cast<double>(i + 1) + oa) / na <= (static_cast<double>(j + 1) + ob) / nb);
            if (advance_a) {
                add_outward(s, a[i % a.size()], a[(i + 1) % a.size()], b[j % b.size()]);
                ++i;
            } else {
                add_outward(s, a[i % a.size()], b[(j + 1) % b.size()], b[j % b.size()]);
                ++j;
            }
        }
    }
    const auto& bottom = ring_index.back();
    for (std::size_t k = 0; k < bottom.size(); ++k)
        add_outward(s, south, bottom[k], bottom[(k + 1) % bottom.size()]);
    return s;
}

double yaw_of(const Vec3& d) { return std::atan2(d.x(), -d.z()); }
double pitch_of(const Vec3& d) { return std::asin(std::clamp(d.y(), -1.0, 1.0)); }

Vec3 direction_of(double yaw, double pitch)
{
    return {std::cos(pitch) * std::sin(yaw), std::sin(pitch), -std::cos(pitch) * std::cos(yaw)};
}

double sq(double x) { return x * x; }

bool in_ellipse(double dx, double dy, double rx, double ry) { return sq(dx / rx) + sq(dy / ry) < 1.0; }

Region classify(const Vec3& d)
{
    const double yaw = yaw_of(d);
    const double pitch = pitch_of(d);
    const double ay = std::abs(yaw);
    if (in_ellipse(yaw, pitch, 0.24, 0.26))
        return Region::nose;
    if (in_ellipse(ay - 0.4, pitch - 0.26, 0.2, 0.15))
        return Region::eyes;
    if (in_ellipse(yaw, pitch + 0.46, 0.36, 0.17))
        return Region::mouth;
    if (in_ellipse(ay - kPi / 2, pitch, 0.32, 0.38))
        return Region::ears;
    if (ay < 1.05 && pitch > -0.95 && pitch < 0.8)
        return Region::face;
    return Region::other;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Vec3 random_unit(Rng& rng)
{
    Vec3 v(rng.normal(), rng.normal(), rng.normal());
    while (v.norm() < 1e-6)
        v = Vec3(rng.normal(), rng.normal(), rng.normal());
    return v.normalized();
}

/// Row of a joint regressor: Gaussian-weighted average of vertices around `anchor`.
Eigen::RowVectorXd regressor_row(const std::vector<Vec3>& dirs, const std::vector<Vec3>& anchors, double width)
{
    Eigen::RowVectorXd row(static_cast<Eigen::Index>(dirs.size()));
    for (std::size_t i = 0; i < dirs.size(); ++i) {
        double w = 0.0;
        for (const Vec3& a : anchors)
            w += std::exp(-(dirs[i] - a).squaredNorm() / (2.0 * width * width));
        row(static_cast<Eigen::Index>(i)) = w;
    }
    return row / row.sum();
}

} // namespace

ProceduralHeadOptions miniature_head_options()
{
    return {};
}

ProceduralHeadOptions full_size_head_options()
{
    ProceduralHeadOptions o;
    o.n_vertices = 5023;
    o.n_identity = 300;
    o.n_expression = 100;
    o.n_joints = 5;
    return o;
}

BlendshapeModel build_procedural_head(const ProceduralHeadOptions& options)
{
    if (options.n_joints != 2 && options.n_joints != 5)
        throw DimensionError("procedural head supports 2 or 5 joints");
    if (options.n_identity < 0 || options.n_expression < 0)
        throw DimensionError("basis sizes must be non-negative");

    const UnitSphere sphere = ring_sphere(options.n_vertices);
    const auto& dirs = sphere.directions;
    const int n = options.n_vertices;
    Rng rng(options.seed);

    BlendshapeModel m;
    m.triangles = sphere.triangles;
    m.template_vertices.resize(n, 3);
    m.region_labels.resize(static_cast<std::size_t>(n));
    m.vertex_weights.resize(n);
    m.uv_coords.resize(n, 2);
    const Vec3 radii(0.078, 0.105, 0.092);
    for (int i = 0; i < n; ++i) {
        const Vec3& d = dirs[static_cast<std::size_t>(i)];
        const double yaw = yaw_of(d);
        const double pitch = pitch_of(d);
        Vec3 p = d.cwiseProduct(radii);
        const double nose = 0.028 * std::exp(-(sq(yaw) + sq(pitch + 0.02)) / (2.0 * sq(0.12)));
        p.z() -= nose;
        m.template_vertices.row(i) = p.transpose();
        const Region r = classify(d);
        m.region_labels[static_cast<std::size_t>(i)] = r;
        m.vertex_weights(i) = (r == Region::other) ? options.weight_low : options.weight_high;
        m.uv_coords(i, 0) = 0.5 + yaw / (2.0 * kPi);
        m.uv_coords(i, 1) = 0.5 - pitch / kPi;
    }

    // Identity: three axis scalings, then smooth random bump fields with
    // slowly decaying amplitude.
    m.identity_basis = Eigen::MatrixXd::Zero(3 * n, options.n_identity);
    for (int k = 0; k < options.n_identity; ++k) {
        const double amp = 0.004 / std::sqrt(1.0 + 0.05 * k);
        if (k < 3) {
            for (int i = 0; i < n; ++i)
                m.identity_basis(3 * i + k, k) = 0.006 * dirs[static_cast<std::size_t>(i)](k);
            continue;
        }
        for (int bump = 0; bump < 3; ++bump) {
            const Vec3 center = random_unit(rng);
            const double width = rng.uniform(0.35, 0.9);
            const double radial = rng.normal();
            const Vec3 shift = 0.4 * Vec3(rng.normal(), rng.normal(), rng.normal());
            for (int i = 0; i < n; ++i) {
                const Vec3& d = dirs[static_cast<std::size_t>(i)];
                const double g = std::exp(-(d - center).squaredNorm() / (2.0 * width * width));
                const Vec3 disp = amp * g * (radial * d + shift);
                m.identity_basis.block<3, 1>(3 * i, k) += disp;
            }
        }
    }

    // Expression: bumps anchored at mouth, eyes, brows, cheeks and jaw.
    const std::vector<std::pair<double, double>> anchors{
        {0.0, -0.46}, {0.4, 0.26}, {-0.4, 0.26}, {0.35, 0.5}, {-0.35, 0.5}, {0.55, -0.2}, {-0.55, -0.2}, {0.0, -0.75}};
    m.expression_basis = Eigen::MatrixXd::Zero(3 * n, options.n_expression);
    for (int k = 0; k < options.n_expression; ++k) {
        const auto& [ay, ap] = anchors[static_cast<std::size_t>(k) % anchors.size()];
        const Vec3 center = direction_of(ay + 0.15 * rng.normal(), ap + 0.1 * rng.normal());
        const double width = rng.uniform(0.22, 0.4);
        const Vec3 dir = random_unit(rng);
        const double amp = 0.005 / std::sqrt(1.0 + 0.02 * k);
        for (int i = 0; i < n; ++i) {
            const Vec3& d = dirs[static_cast<std::size_t>(i)];
            const double g = std::exp(-(d - center).squaredNorm() / (2.0 * width * width));
            m.expression_basis.block<3, 1>(3 * i, k) = amp * g * dir;
        }
    }

    // Skeleton.
    const int k_count = options.n_joints;
    const Vec3 bottom(0.0, -1.0, 0.0);
    const Vec3 neck_anchor = Vec3(0.0, -0.9, 0.35).normalized();
    const Vec3 cheek_l = direction_of(1.0, -0.3);
    const Vec3 cheek_r = direction_of(-1.0, -0.3);
    const Vec3 eye_l = direction_of(0.4, 0.26);
    const Vec3 eye_r = direction_of(-0.4, 0.26);
    m.joint_regressor.resize(k_count, n);
    m.skin_weights.resize(n, k_count);
    if (k_count == 2) {
        m.joint_parents = {kNoParent, 0};
        m.joint_regressor.row(0) = regressor_row(dirs, {bottom}, 0.35);
        m.joint_regressor.row(1) = regressor_row(dirs, {cheek_l, cheek_r}, 0.3);
    } else {
        m.joint_parents = {kNoParent, 0, 1, 1, 1};
        m.joint_regressor.row(0) = regressor_row(dirs, {bottom}, 0.35);
        m.joint_regressor.row(1) = regressor_row(dirs, {neck_anchor}, 0.35);
        m.joint_regressor.row(2) = regressor_row(dirs, {cheek_l, cheek_r}, 0.3);
        m.joint_regressor.row(3) = regressor_row(dirs, {eye_l}, 0.12);
        m.joint_regressor.row(4) = regressor_row(dirs, {eye_r}, 0.12);
    }
    for (int i = 0; i < n; ++i) {
        const Vec3& d = dirs[static_cast<std::size_t>(i)];
        const double yaw = yaw_of(d);
        const double pitch = pitch_of(d);
        const double jaw = sigmoid((-0.25 - pitch) / 0.08) * sigmoid((1.0 - std::abs(yaw)) / 0.1);
        Eigen::RowVectorXd raw = Eigen::RowVectorXd::Zero(k_count);
        if (k_count == 2) {
            raw << 1.0, 4.0 * jaw;
        } else {
            const double neck = sigmoid((-0.6 - pitch) / 0.1);
            const double el = std::exp(-(d - eye_l).squaredNorm() / (2.0 * sq(0.12)));
            const double er = std::exp(-(d - eye_r).squaredNorm() / (2.0 * sq(0.12)));
            raw << 1.0, 2.0 * neck, 4.0 * jaw, 4.0 * el, 4.0 * er;
        }
        m.skin_weights.row(i) = raw / raw.sum();
    }

    m.validate();
    return m;
}

} // namespace facefit
