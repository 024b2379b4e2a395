#include "facefit/gradcheck.hpp"

#include "facefit/random.hpp"

#include <algorithm>
#include <cmath>

namespace facefit {

GradientCheckResult check_gradient(const EnergyFunction& ef, const TrackingParams& at, TermSet terms,
                                   const GradientCheckOptions& options)
{
    const ParameterLayout layout(ef.model(), at, ef.config());
    const Eigen::VectorXd x0 = layout.pack(at);
    TrackingGradient g;
    ef.evaluate(at, g, terms);
    const Eigen::VectorXd analytic = options.sabotage * layout.pack_gradient(g, at);

    const auto value = [&](const Eigen::VectorXd& x) {
        TrackingParams p = at;
        layout.unpack(x, p);
        return ef.energy(p, terms).total();
    };
    const double scale = std::max(1.0, std::abs(value(x0)));

    Rng rng(options.seed);
    GradientCheckResult out;
    const Eigen::Index n = std::min<Eigen::Index>(std::max(options.coordinates, 0), x0.size());
    for (Eigen::Index k = 0; k < n; ++k) {
        const Eigen::Index idx =
            n == x0.size() ? k : static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(x0.size())));
        const double h = 1e-6 * std::max(1.0, std::abs(x0(idx)));
        Eigen::VectorXd xp = x0, xm = x0;
        xp(idx) += h;
        xm(idx) -= h;
        const double numeric = (value(xp) - value(xm)) / (2.0 * h);
        const double floor = 1e-11 * scale / h;
        const double denom = std::max({std::abs(analytic(idx)), std::abs(numeric), floor});
        const double rel = std::abs(analytic(idx) - numeric) / denom;
        if (rel > out.max_rel_error || out.worst < 0) {
            out.max_rel_error = std::max(out.max_rel_error, rel);
            out.worst = idx;
        }
        ++out.checked;
    }
    if (out.worst >= 0)
        out.worst_name = layout.describe(out.worst);
    return out;
}

GradientProblem make_gradient_problem(const BlendshapeModel& model, std::uint64_t seed, int frames, int cameras)
{
    GradientProblem pr;
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
    const FreeGroups free = FreeGroups::resolve(model, pr.synth.truth, pr.config);
    pr.at = perturb_params(pr.synth.truth, 0.1, seed + 1000, free);
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

} // namespace facefit
