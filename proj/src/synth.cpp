#include "facefit/synth.hpp"

#include "facefit/error.hpp"
#include "facefit/random.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

namespace facefit {

std::string_view motion_model_name(MotionModel m)
{
    switch (m) {
    case MotionModel::static_pose: return "static";
    case MotionModel::sinusoidal_expression: return "sinusoidal_expression";
    case MotionModel::rigid_orbit: return "rigid_orbit";
    }
    return "?";
}

MotionModel motion_model_from_name(std::string_view name)
{
    for (MotionModel m : {MotionModel::static_pose, MotionModel::sinusoidal_expression, MotionModel::rigid_orbit})
        if (motion_model_name(m) == name)
            return m;
    throw ConfigError("unknown motion model '" + std::string(name) +
                      "' (expected static, sinusoidal_expression or rigid_orbit)");
}

std::string_view sigma_mode_name(SigmaMode m)
{
    switch (m) {
    case SigmaMode::truthful: return "truthful";
    case SigmaMode::constant: return "constant";
    case SigmaMode::miscalibrated: return "miscalibrated";
    }
    return "?";
}

SigmaMode sigma_mode_from_name(std::string_view name)
{
    for (SigmaMode m : {SigmaMode::truthful, SigmaMode::constant, SigmaMode::miscalibrated})
        if (sigma_mode_name(m) == name)
            return m;
    throw ConfigError("unknown sigma mode '" + std::string(name) + "' (expected truthful, constant or miscalibrated)");
}

void SynthSpec::validate() const
{
    if (frames < 1 || cameras < 1)
        throw ConfigError("synthetic sequence needs at least one frame and one camera");
    if (!(noise_px >= 0.0) || !(sigma_spread >= 0.0) || !(beta_scale >= 0.0) || !(phi_scale >= 0.0) ||
        !(mica_noise >= 0.0))
        throw ConfigError("synthetic noise levels and scales must be non-negative");
    if (!(occlusion >= 0.0 && occlusion < 1.0))
        throw ConfigError("occlusion fraction must lie in [0, 1)");
    if (!(sigma_constant > 0.0) || !(miscalibration > 0.0))
        throw ConfigError("reported sigma settings must be positive");
    if (image_size < 1 || !(focal > 0.0) || !(distance > 0.0))
        throw ConfigError("camera settings must be positive");
}

namespace {

constexpr std::uint64_t kTruthStream = 0x7275746800000000ull;
constexpr std::uint64_t kTemplateStream = 0x6d69636100000000ull;

std::vector<Camera> make_cameras(const SynthSpec& spec)
{
    std::vector<Camera> cams;
    const double spread = spec.camera_spread_deg * std::numbers::pi / 180.0;
    for (int j = 0; j < spec.cameras; ++j) {
        const double a = spec.cameras == 1 ? 0.0 : -0.5 * spread + spread * j / (spec.cameras - 1);
        const double elevation = 0.05 * ((j % 2 == 0) ? 1.0 : -1.0);
        const Vec3 eye = spec.distance * Vec3(std::sin(a), elevation, -std::cos(a)).normalized();
        cams.push_back(Camera::centered(look_at(eye, Vec3::Zero(), Vec3::UnitY()), spec.focal, spec.image_size,
                                        spec.image_size, spec.calibrated));
    }
    return cams;
}

} // namespace

SynthResult generate_sequence(const BlendshapeModel& model, const SynthSpec& spec)
{
    spec.validate();
    model.validate();
    const int f_count = spec.frames;
    const int n = model.n_vertices();

    SynthResult out;
    TrackingParams& truth = out.truth;
    truth = TrackingParams::zeros(model, f_count, make_cameras(spec));

    Rng rng = Rng::stream(spec.seed, kTruthStream);
    for (int b = 0; b < model.n_identity(); ++b)
        truth.beta(b) = spec.beta_scale * rng.normal();

    const int b_ex = model.n_expression();
    Eigen::VectorXd amp(b_ex), period(b_ex), phase(b_ex);
    for (int b = 0; b < b_ex; ++b) {
        amp(b) = spec.phi_scale * rng.normal();
        period(b) = rng.uniform(8.0, 24.0);
        phase(b) = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
    const Vec3 base_rotation(0.05 * rng.normal(), 0.05 * rng.normal(), 0.02 * rng.normal());
    const Vec3 base_translation(0.005 * rng.normal(), 0.005 * rng.normal(), 0.005 * rng.normal());

    for (int t = 0; t < f_count; ++t) {
        RigidTransform& pose = truth.head_pose[static_cast<std::size_t>(t)];
        pose.rotation = base_rotation;
        pose.translation = base_translation;
        switch (spec.motion) {
        case MotionModel::static_pose:
            truth.phi.row(t) = amp.transpose();
            break;
        case MotionModel::sinusoidal_expression:
            for (int b = 0; b < b_ex; ++b)
                truth.phi(t, b) = amp(b) * std::sin(2.0 * std::numbers::pi * t / period(b) + phase(b));
            break;
        case MotionModel::rigid_orbit: {
            truth.phi.row(t) = amp.transpose();
            const double s = 2.0 * std::numbers::pi * t / std::max(f_count, 2);
            pose.rotation += Vec3(0.1 * std::sin(2.0 * s), 0.3 * std::sin(s), 0.05 * std::sin(3.0 * s));
            pose.translation += Vec3(0.01 * std::sin(s), 0.005 * std::sin(2.0 * s), 0.01 * std::cos(s));
            break;
        }
        }
    }

    SequenceDataset& ds = out.dataset;
    ds.cameras = truth.cameras;
    ds.frame_count = f_count;
    const std::vector<Vertices> world = world_vertices(model, truth);

    const std::size_t per_frame = static_cast<std::size_t>(spec.cameras) * static_cast<std::size_t>(n);
    const std::size_t dropped = static_cast<std::size_t>(std::llround(spec.occlusion * static_cast<double>(per_frame)));
    ds.observations.reserve(static_cast<std::size_t>(f_count) * (per_frame - dropped));

    for (int t = 0; t < f_count; ++t) {
        Rng frame_rng = Rng::stream(spec.seed, static_cast<std::uint64_t>(t));
        std::vector<AlignmentObservation> obs;
        obs.reserve(per_frame);
        for (int j = 0; j < spec.cameras; ++j) {
            const std::vector<Projection> proj = project(truth.cameras[static_cast<std::size_t>(j)], world[static_cast<std::size_t>(t)]);
            for (int i = 0; i < n; ++i) {
                const double s = spec.sigma_spread > 0.0
                                     ? std::exp(spec.sigma_spread * frame_rng.normal() - spec.sigma_spread * spec.sigma_spread)
                                     : 1.0;
                const double true_sigma = spec.noise_px * s;
                const double nx = frame_rng.normal();
                const double ny = frame_rng.normal();
                const Projection& pr = proj[static_cast<std::size_t>(i)];
                if (!pr.valid)
                    continue;
                AlignmentObservation o;
                o.vertex = static_cast<std::uint32_t>(i);
                o.camera = static_cast<std::uint32_t>(j);
                o.frame = static_cast<std::uint32_t>(t);
                o.mu = pr.pixel + true_sigma * Vec2(nx, ny);
                const double nominal = spec.noise_px > 0.0 ? true_sigma : s;
                switch (spec.sigma_mode) {
                case SigmaMode::truthful: o.sigma = nominal; break;
                case SigmaMode::constant: o.sigma = spec.sigma_constant; break;
                case SigmaMode::miscalibrated: o.sigma = nominal * spec.miscalibration; break;
                }
                obs.push_back(o);
            }
        }
        // Partial Fisher-Yates: the first `dropped` slots become the occluded set.
        std::vector<std::size_t> order(obs.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        const std::size_t drop = std::min(dropped, obs.size());
        for (std::size_t k = 0; k < drop; ++k)
            std::swap(order[k], order[k + frame_rng.below(order.size() - k)]);
        std::vector<bool> keep(obs.size(), true);
        for (std::size_t k = 0; k < drop; ++k)
            keep[order[k]] = false;
        for (std::size_t k = 0; k < obs.size(); ++k)
            if (keep[k])
                ds.observations.push_back(obs[k]);
    }

    if (spec.include_mica) {
        Vertices tmpl = neutral_vertices(model, truth.beta, truth.delta_d);
        Rng trng = Rng::stream(spec.seed, kTemplateStream);
        for (Eigen::Index i = 0; i < tmpl.rows(); ++i)
            for (int c = 0; c < 3; ++c)
                tmpl(i, c) += spec.mica_noise * trng.normal();
        ds.mica_template = std::move(tmpl);
    }
    if (spec.include_meshes) {
        MeshSequence meshes;
        meshes.frames = world;
        meshes.triangles = model.triangles;
        meshes.regions = model.region_labels;
        ds.meshes = std::move(meshes);
    }
    ds.validate(n);
    return out;
}

TrackingParams perturb_params(const TrackingParams& params, double magnitude, std::uint64_t seed, const FreeGroups& free)
{
    TrackingParams p = params;
    Rng rng(seed);
    const auto noise = [&](double scale) { return magnitude * scale * rng.normal(); };
    if (free.beta)
        for (Eigen::Index b = 0; b < p.beta.size(); ++b)
            p.beta(b) += noise(1.0);
    if (free.phi)
        for (Eigen::Index t = 0; t < p.phi.rows(); ++t)
            for (Eigen::Index b = 0; b < p.phi.cols(); ++b)
                p.phi(t, b) += noise(1.0);
    if (free.theta) {
        const Eigen::Index rot = p.theta.cols() - 3;
        for (Eigen::Index t = 0; t < p.theta.rows(); ++t)
            for (Eigen::Index b = 0; b < p.theta.cols(); ++b)
                p.theta(t, b) += noise(b < rot ? 1.0 : 0.1);
    }
    if (free.delta_d)
        for (Eigen::Index i = 0; i < p.delta_d.rows(); ++i)
            if (free.deformable[static_cast<std::size_t>(i)])
                for (int c = 0; c < 3; ++c)
                    p.delta_d(i, c) += noise(0.01);
    if (free.head_pose)
        for (RigidTransform& h : p.head_pose)
            for (int c = 0; c < 3; ++c) {
                h.rotation(c) += noise(1.0);
                h.translation(c) += noise(0.1);
            }
    for (std::size_t j = 0; j < p.cameras.size(); ++j) {
        Camera& cam = p.cameras[j];
        if (free.camera_extrinsics[j])
            for (int c = 0; c < 3; ++c) {
                cam.extrinsics.rotation(c) += noise(1.0);
                cam.extrinsics.translation(c) += noise(0.1);
            }
        if (free.camera_focal[j])
            cam.focal *= std::exp(noise(0.1));
    }
    return p;
}

} // namespace facefit
