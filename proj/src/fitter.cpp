#include "facefit/fitter.hpp"

#include "facefit/error.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <string>

namespace facefit {

AdamW::AdamW(Eigen::Index size, double beta1, double beta2, double epsilon, double weight_decay)
    : beta1_(beta1), beta2_(beta2), epsilon_(epsilon), weight_decay_(weight_decay),
      m_(Eigen::VectorXd::Zero(size)), v_(Eigen::VectorXd::Zero(size))
{
}

void AdamW::step(Eigen::VectorXd& x, const Eigen::VectorXd& g, double learning_rate)
{
    if (x.size() != m_.size() || g.size() != m_.size())
        throw DimensionError("optimizer state size mismatch");
    ++t_;
    if (weight_decay_ != 0.0)
        x *= 1.0 - learning_rate * weight_decay_;
    m_ = beta1_ * m_ + (1.0 - beta1_) * g;
    v_ = beta2_ * v_ + (1.0 - beta2_) * g.cwiseAbs2();
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    x.array() -= learning_rate * (m_.array() / c1) / ((v_.array() / c2).sqrt() + epsilon_);
}

PlateauScheduler::PlateauScheduler(double learning_rate, double decay, int patience, double threshold)
    : lr_(learning_rate), decay_(decay), patience_(patience), threshold_(threshold),
      best_(std::numeric_limits<double>::infinity())
{
}

bool PlateauScheduler::observe(double value)
{
    if (value < best_ * (1.0 - threshold_) || best_ == std::numeric_limits<double>::infinity()) {
        best_ = value;
        bad_steps_ = 0;
        return false;
    }
    if (++bad_steps_ > patience_) {
        lr_ *= decay_;
        bad_steps_ = 0;
        return true;
    }
    return false;
}

std::string_view stop_reason_name(StopReason r)
{
    return r == StopReason::lr_floor ? "lr_floor" : "max_iters";
}

EnergyConfig resolve_config(const EnergyConfig& config, const SequenceDataset& dataset)
{
    EnergyConfig c = config;
    if (!c.use_mica_template)
        c.mica_template.reset();
    else if (!c.mica_template && dataset.mica_template)
        c.mica_template = dataset.mica_template;
    return c;
}

namespace {

// Weak-perspective pose of the template in camera coordinates from
// normalized image coordinates q ~ (R X + T)_xy / T_z.
bool weak_perspective_pose(const Vertices& points, const std::vector<Vec2>& q, RigidTransform& out)
{
    const Eigen::Index n = static_cast<Eigen::Index>(q.size());
    if (n < 4)
        return false;
    Vec3 centroid = points.colwise().mean().transpose();
    Eigen::MatrixXd a(n, 4);
    Eigen::MatrixXd b(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
        a.row(i) << (points.row(i) - centroid.transpose()), 1.0;
        b.row(i) = q[static_cast<std::size_t>(i)].transpose();
    }
    const Eigen::MatrixXd sol = a.colPivHouseholderQr().solve(b); // 4 x 2
    if (!sol.allFinite())
        return false;
    const Eigen::Matrix<double, 2, 3> m = sol.topRows(3).transpose();
    const Eigen::JacobiSVD<Eigen::Matrix<double, 2, 3>> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const double s = svd.singularValues().mean();
    if (!(s > 1e-9) || svd.singularValues()(1) < 1e-3 * svd.singularValues()(0))
        return false;
    const Eigen::Matrix<double, 2, 3> rows =
        svd.matrixU() * Eigen::Matrix<double, 2, 3>::Identity() * svd.matrixV().transpose();
    Mat3 r;
    r.row(0) = rows.row(0);
    r.row(1) = rows.row(1);
    r.row(2) = rows.row(0).cross(rows.row(1));
    const Vec2 offset = sol.row(3).transpose();
    const double depth = 1.0 / s;
    // Head centroid sits at (offset * depth, depth) in camera space.
    const Vec3 center(offset.x() * depth, offset.y() * depth, depth);
    out = RigidTransform::from_matrix(r, center - r * centroid);
    return out.is_finite();
}

} // namespace

TrackingParams initialize_params(const BlendshapeModel& model, const SequenceDataset& dataset, const EnergyConfig& config)
{
    dataset.validate(model.n_vertices());
    std::vector<Camera> cameras = dataset.cameras;
    for (Camera& c : cameras)
        if (!c.calibrated && !config.freeze.cameras)
            c.focal = static_cast<double>(c.image_size[0]);
    TrackingParams p = TrackingParams::zeros(model, dataset.frame_count, cameras);

    const std::size_t n_cam = cameras.size();
    std::vector<std::vector<std::vector<const AlignmentObservation*>>> by_frame(
        static_cast<std::size_t>(dataset.frame_count), std::vector<std::vector<const AlignmentObservation*>>(n_cam));
    for (const AlignmentObservation& o : dataset.observations)
        by_frame[o.frame][o.camera].push_back(&o);

    RigidTransform fallback_cam;
    fallback_cam.translation = Vec3(0.0, 0.0, 1.0);
    const RigidTransform fallback = cameras[0].extrinsics.inverse() * fallback_cam;

    for (int t = 0; t < dataset.frame_count; ++t) {
        const auto& per_cam = by_frame[static_cast<std::size_t>(t)];
        std::size_t best = 0;
        for (std::size_t j = 1; j < n_cam; ++j)
            if (per_cam[j].size() > per_cam[best].size())
                best = j;
        const Camera& cam = cameras[best];
        const auto& obs = per_cam[best];
        Vertices pts(static_cast<Eigen::Index>(obs.size()), 3);
        std::vector<Vec2> q;
        q.reserve(obs.size());
        for (std::size_t k = 0; k < obs.size(); ++k) {
            pts.row(static_cast<Eigen::Index>(k)) = model.template_vertices.row(obs[k]->vertex);
            q.push_back((obs[k]->mu - cam.principal_point) / cam.focal);
        }
        RigidTransform in_cam;
        const bool found = weak_perspective_pose(pts, q, in_cam);
        bool ok = found;
        // POSIT-style refinement: rescale the image points by each point's
        // relative depth and refit, converging to the perspective pose.
        for (int iter = 0; ok && iter < 10; ++iter) {
            const Mat3 r = in_cam.rotation_matrix();
            const Vec3 centroid = pts.colwise().mean().transpose();
            const double z0 = (r * centroid + in_cam.translation).z();
            std::vector<Vec2> corrected(q.size());
            for (std::size_t k = 0; k < q.size(); ++k) {
                const double z = (r * pts.row(static_cast<Eigen::Index>(k)).transpose() + in_cam.translation).z();
                corrected[k] = q[k] * (z / z0);
            }
            RigidTransform next;
            ok = weak_perspective_pose(pts, corrected, next);
            if (ok)
                in_cam = next;
        }
        if (found)
            p.head_pose[static_cast<std::size_t>(t)] = cam.extrinsics.inverse() * in_cam;
        else
            p.head_pose[static_cast<std::size_t>(t)] = fallback;
    }
    return p;
}

FitReport fit(const BlendshapeModel& model, const SequenceDataset& dataset, const EnergyConfig& config_in,
              const TrackingParams& init, const FitCallback& callback)
{
    const EnergyConfig config = resolve_config(config_in, dataset);
    config.validate();
    dataset.validate(model.n_vertices());
    init.validate(model);
    if (init.frames() != dataset.frame_count)
        throw DimensionError("initial parameters have " + std::to_string(init.frames()) + " frames, sequence has " +
                             std::to_string(dataset.frame_count));
    if (init.cameras.size() != dataset.cameras.size())
        throw DimensionError("initial parameters have " + std::to_string(init.cameras.size()) +
                             " cameras, sequence has " + std::to_string(dataset.cameras.size()));

    const EnergyFunction energy(model, dataset.observations, dataset.frame_count, config);
    const ParameterLayout layout(model, init, config);

    TrackingParams p = init;
    if (layout.free_groups().delta_d)
        for (Eigen::Index i = 0; i < p.delta_d.rows(); ++i)
            if (!layout.free_groups().deformable[static_cast<std::size_t>(i)])
                p.delta_d.row(i).setZero();

    Eigen::VectorXd x = layout.pack(p);
    Eigen::VectorXd best_x = x;
    double best_e = std::numeric_limits<double>::infinity();

    AdamW opt(layout.size(), config.adam_beta1, config.adam_beta2, config.adam_epsilon, config.weight_decay);
    PlateauScheduler sched(config.learning_rate_init, config.lr_decay, config.lr_patience, config.lr_threshold);

    FitReport report;
    report.initial = energy.energy(p);
    report.reason = StopReason::max_iters;

    TrackingGradient g;
    for (int it = 0; it < config.max_iters; ++it) {
        const EnergyBreakdown e = energy.evaluate(p, g);
        for (Term term : {Term::alignment, Term::flame, Term::temporal, Term::mica, Term::deform})
            if (!std::isfinite(e.term(term)))
                throw NumericError("non-finite " + std::string(term_name(term)) + " energy at iteration " +
                                   std::to_string(it));
        const TracePoint point{it, sched.learning_rate(), e};
        report.trace.push_back(point);
        if (callback)
            callback(point);
        report.iterations = it + 1;
        if (e.total() < best_e) {
            best_e = e.total();
            best_x = x;
        }
        sched.observe(e.total());
        if (sched.learning_rate() < config.lr_floor) {
            report.reason = StopReason::lr_floor;
            break;
        }
        opt.step(x, layout.pack_gradient(g, p), sched.learning_rate());
        layout.unpack(x, p);
    }

    report.final_learning_rate = sched.learning_rate();
    if (report.iterations > 0)
        layout.unpack(best_x, p);
    report.params = p;
    report.final = energy.energy(p);
    return report;
}

} // namespace facefit
