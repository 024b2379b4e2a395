#pragma once

// Reference implementations used only by tests. They favour the most direct
// formulation over speed so they can check the optimized library code.

#include "facefit/energy.hpp"
#include "facefit/geometry.hpp"
#include "facefit/model.hpp"
#include "facefit/procedural_head.hpp"
#include "facefit/random.hpp"
#include "facefit/synth.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace oracle {

using namespace facefit;

inline const BlendshapeModel& mini_model()
{
    static const BlendshapeModel m = build_procedural_head(miniature_head_options());
    return m;
}

inline const BlendshapeModel& mini_model_5_joints()
{
    static const BlendshapeModel m = [] {
        ProceduralHeadOptions o = miniature_head_options();
        o.n_joints = 5;
        return build_procedural_head(o);
    }();
    return m;
}

/// Pinhole projection written out by hand.
inline bool project_naive(const Camera& cam, const Vec3& x, Vec2& pixel)
{
    const Mat3 r = rotation_from_axis_angle<double>(cam.extrinsics.rotation);
    const Vec3 p = r * x + cam.extrinsics.translation;
    if (!(p.z() > kMinDepth))
        return false;
    pixel = Vec2(cam.focal * p.x() / p.z() + cam.principal_point.x(), cam.focal * p.y() / p.z() + cam.principal_point.y());
    return true;
}

/// Direct per-term re-evaluation of the total energy: one frame at a time,
/// one observation at a time, in input order.
inline EnergyBreakdown naive_energy(const BlendshapeModel& model, const TrackingParams& p,
                                    const std::vector<AlignmentObservation>& obs, const EnergyConfig& cfg)
{
    EnergyBreakdown e;
    std::vector<Vertices> world;
    for (int t = 0; t < p.frames(); ++t) {
        ModelParams mp;
        mp.beta = p.beta;
        mp.phi = p.phi.row(t).transpose();
        mp.theta = p.theta.row(t).transpose();
        mp.delta_d = p.delta_d;
        const Vertices local = evaluate_model(model, mp);
        const Mat3 r = rotation_from_axis_angle<double>(p.head_pose[static_cast<std::size_t>(t)].rotation);
        Vertices w(local.rows(), 3);
        for (Eigen::Index i = 0; i < local.rows(); ++i)
            w.row(i) = (r * local.row(i).transpose() + p.head_pose[static_cast<std::size_t>(t)].translation).transpose();
        world.push_back(w);
    }
    for (const AlignmentObservation& o : obs) {
        Vec2 px;
        if (!project_naive(p.cameras[o.camera], world[o.frame].row(o.vertex).transpose(), px)) {
            ++e.invalid_projections;
            continue;
        }
        const double lambda_i = model.region_labels[o.vertex] == Region::other ? cfg.vertex_weight_low : cfg.vertex_weight_high;
        e.alignment += lambda_i * (px - o.mu).squaredNorm() / (2.0 * o.sigma * o.sigma);
    }
    e.flame = cfg.lambda_flame * (p.beta.squaredNorm() + p.phi.squaredNorm());
    for (int t = 1; t + 1 < p.frames(); ++t)
        for (Eigen::Index i = 0; i < world[0].rows(); ++i)
            e.temporal += (world[t - 1].row(i) - 2.0 * world[t].row(i) + world[t + 1].row(i)).squaredNorm();
    e.temporal *= cfg.lambda_temp;
    if (cfg.mica_template) {
        const Vertices neutral = neutral_vertices(model, p.beta, p.delta_d);
        e.mica = cfg.lambda_mica * (neutral - *cfg.mica_template).squaredNorm();
    } else {
        e.mica_template_missing = true;
    }
    e.deform = cfg.lambda_deform * p.delta_d.squaredNorm();
    return e;
}

struct GradCheck
{
    double max_rel_error = 0.0;
    Eigen::Index worst = -1;
    int checked = 0;
};

/// Central finite differences with step 1e-6 * max(1, |x|) on `count`
/// randomly sampled packed coordinates.
inline GradCheck check_gradient(const EnergyFunction& ef, const TrackingParams& at, TermSet terms, int count,
                                std::uint64_t seed)
{
    const ParameterLayout layout(ef.model(), at, ef.config());
    const Eigen::VectorXd x0 = layout.pack(at);
    TrackingGradient g;
    ef.evaluate(at, g, terms);
    const Eigen::VectorXd analytic = layout.pack_gradient(g, at);

    const auto value = [&](const Eigen::VectorXd& x) {
        TrackingParams p = at;
        layout.unpack(x, p);
        const EnergyBreakdown e = ef.energy(p, terms);
        return e.total();
    };
    const double scale = std::max(1.0, std::abs(value(x0)));

    Rng rng(seed);
    GradCheck out;
    const int n = static_cast<int>(std::min<Eigen::Index>(count, x0.size()));
    for (int k = 0; k < n; ++k) {
        const Eigen::Index idx = n == x0.size() ? k : static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(x0.size())));
        const double h = 1e-6 * std::max(1.0, std::abs(x0(idx)));
        Eigen::VectorXd xp = x0, xm = x0;
        xp(idx) += h;
        xm(idx) -= h;
        const double numeric = (value(xp) - value(xm)) / (2.0 * h);
        // Rounding in the energy limits finite differences to about
        // eps * |E| / h, so components far below that are compared on that scale.
        const double floor = 1e-11 * scale / h;
        const double denom = std::max({std::abs(analytic(idx)), std::abs(numeric), floor});
        const double rel = std::abs(analytic(idx) - numeric) / denom;
        if (rel > out.max_rel_error) {
            out.max_rel_error = rel;
            out.worst = idx;
        }
        ++out.checked;
    }
    return out;
}

/// A small seeded problem: synthetic sequence, perturbed parameters and a
/// config that frees every group (including pose and deformations) so all
/// gradient paths are exercised.
struct Problem
{
    SynthResult synth;
    TrackingParams at;
    EnergyConfig config;
};

inline Problem gradient_problem(const BlendshapeModel& model, std::uint64_t seed, int frames = 5, int cameras = 2)
{
    Problem pr;
    SynthSpec spec;
    spec.frames = frames;
    spec.cameras = cameras;
    spec.seed = seed;
    spec.noise_px = 1.0;
    spec.sigma_spread = 0.3;
    spec.occlusion = 0.2;
    spec.calibrated = false;
    spec.include_mica = true;
    spec.mica_noise = 0.002;
    pr.synth = generate_sequence(model, spec);
    pr.config.freeze.theta = false;
    pr.config.freeze.delta_d = false;
    pr.config.lambda_flame = 0.5;
    pr.config.lambda_temp = 1e3;
    pr.config.lambda_mica = 1e3;
    pr.config.lambda_deform = 1e3;
    pr.config.mica_template = pr.synth.dataset.mica_template;
    TrackingParams base = pr.synth.truth;
    const FreeGroups free = FreeGroups::resolve(model, base, pr.config);
    pr.at = perturb_params(base, 0.1, seed + 1000, free);
    // Nonzero pose and deformations so every branch is active.
    Rng rng(seed + 2000);
    for (Eigen::Index t = 0; t < pr.at.theta.rows(); ++t)
        for (Eigen::Index b = 0; b < pr.at.theta.cols(); ++b)
            pr.at.theta(t, b) = (b < pr.at.theta.cols() - 3 ? 0.1 : 0.005) * rng.normal();
    for (Eigen::Index i = 0; i < pr.at.delta_d.rows(); ++i)
        if (free.deformable[static_cast<std::size_t>(i)])
            for (int c = 0; c < 3; ++c)
                pr.at.delta_d(i, c) = 0.002 * rng.normal();
    return pr;
}

} // namespace oracle
