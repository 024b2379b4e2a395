#include "facefit/energy.hpp"

#include "facefit/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <tuple>

namespace facefit {

using RowMajorMap = Eigen::Map<Vertices>;
using ConstRowMajorMap = Eigen::Map<const Vertices>;

// ---------------------------------------------------------------------------
// Parameters and configuration

ModelParams TrackingParams::frame_model_params(int frame) const
{
    ModelParams m;
    m.beta = beta;
    m.phi = phi.row(frame).transpose();
    m.theta = theta.row(frame).transpose();
    m.delta_d = delta_d;
    return m;
}

TrackingParams TrackingParams::zeros(const BlendshapeModel& model, int frames, std::vector<Camera> cameras)
{
    TrackingParams p;
    p.beta = Eigen::VectorXd::Zero(model.n_identity());
    p.phi = Eigen::MatrixXd::Zero(frames, model.n_expression());
    p.theta = Eigen::MatrixXd::Zero(frames, model.pose_size());
    p.delta_d = Vertices::Zero(model.n_vertices(), 3);
    p.head_pose.assign(static_cast<std::size_t>(frames), RigidTransform::identity());
    p.cameras = std::move(cameras);
    return p;
}

void TrackingParams::validate(const BlendshapeModel& model) const
{
    const int f = frames();
    if (f < 1)
        throw DimensionError("tracking parameters need at least one frame");
    if (cameras.empty())
        throw DimensionError("tracking parameters need at least one camera");
    if (beta.size() != model.n_identity())
        throw DimensionError("beta has " + std::to_string(beta.size()) + " entries, model has " +
                             std::to_string(model.n_identity()));
    if (phi.rows() != f || phi.cols() != model.n_expression())
        throw DimensionError("phi must be " + std::to_string(f) + " x " + std::to_string(model.n_expression()));
    if (theta.rows() != f || theta.cols() != model.pose_size())
        throw DimensionError("theta must be " + std::to_string(f) + " x " + std::to_string(model.pose_size()));
    if (delta_d.rows() != model.n_vertices())
        throw DimensionError("delta_d must have one row per model vertex");
    if (!beta.allFinite() || !phi.allFinite() || !theta.allFinite() || !delta_d.allFinite())
        throw NumericError("tracking parameters contain non-finite values");
    for (const RigidTransform& t : head_pose)
        if (!t.is_finite())
            throw NumericError("head pose contains non-finite values");
    for (const Camera& c : cameras)
        c.validate();
}

void EnergyConfig::validate() const
{
    const auto non_negative = [](double v, const char* name) {
        if (!(v >= 0.0) || !std::isfinite(v))
            throw ConfigError(std::string(name) + " must be a finite non-negative number");
    };
    const auto positive = [](double v, const char* name) {
        if (!(v > 0.0) || !std::isfinite(v))
            throw ConfigError(std::string(name) + " must be a finite positive number");
    };
    non_negative(lambda_flame, "lambda_flame");
    non_negative(lambda_temp, "lambda_temp");
    non_negative(lambda_mica, "lambda_mica");
    non_negative(lambda_deform, "lambda_deform");
    positive(vertex_weight_high, "vertex_weight_high");
    positive(vertex_weight_low, "vertex_weight_low");
    positive(learning_rate_init, "learning_rate_init");
    if (!(lr_decay > 0.0 && lr_decay < 1.0))
        throw ConfigError("lr_decay must lie in (0, 1)");
    if (lr_patience < 0)
        throw ConfigError("lr_patience must be non-negative");
    non_negative(lr_threshold, "lr_threshold");
    non_negative(lr_floor, "lr_floor");
    if (max_iters < 0)
        throw ConfigError("max_iters must be non-negative");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0))
        throw ConfigError("adam_beta1 must lie in [0, 1)");
    if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
        throw ConfigError("adam_beta2 must lie in [0, 1)");
    positive(adam_epsilon, "adam_epsilon");
    non_negative(weight_decay, "weight_decay");
}

Eigen::VectorXd resolve_vertex_weights(const BlendshapeModel& model, const EnergyConfig& config)
{
    Eigen::VectorXd w(model.n_vertices());
    for (int i = 0; i < model.n_vertices(); ++i)
        w(i) = model.region_labels[static_cast<std::size_t>(i)] == Region::other ? config.vertex_weight_low
                                                                                : config.vertex_weight_high;
    return w;
}

std::vector<bool> resolve_deformable_mask(const BlendshapeModel& model, const EnergyConfig& config)
{
    if (config.deformable_mask) {
        if (config.deformable_mask->size() != static_cast<std::size_t>(model.n_vertices()))
            throw ConfigError("deformable mask has " + std::to_string(config.deformable_mask->size()) +
                              " entries, model has " + std::to_string(model.n_vertices()) + " vertices");
        return *config.deformable_mask;
    }
    std::vector<bool> mask(static_cast<std::size_t>(model.n_vertices()), false);
    for (std::size_t i = 0; i < mask.size(); ++i)
        mask[i] = std::find(config.deformable_regions.begin(), config.deformable_regions.end(),
                            model.region_labels[i]) != config.deformable_regions.end();
    return mask;
}

TermSet TermSet::only(Term t)
{
    TermSet s{false, false, false, false, false};
    switch (t) {
    case Term::alignment: s.alignment = true; break;
    case Term::flame: s.flame = true; break;
    case Term::temporal: s.temporal = true; break;
    case Term::mica: s.mica = true; break;
    case Term::deform: s.deform = true; break;
    }
    return s;
}

std::string_view term_name(Term t)
{
    switch (t) {
    case Term::alignment: return "alignment";
    case Term::flame: return "flame";
    case Term::temporal: return "temporal";
    case Term::mica: return "mica";
    case Term::deform: return "deform";
    }
    return "?";
}

double EnergyBreakdown::term(Term t) const
{
    switch (t) {
    case Term::alignment: return alignment;
    case Term::flame: return flame;
    case Term::temporal: return temporal;
    case Term::mica: return mica;
    case Term::deform: return deform;
    }
    return 0.0;
}

FreeGroups FreeGroups::resolve(const BlendshapeModel& model, const TrackingParams& params, const EnergyConfig& config)
{
    FreeGroups g;
    g.beta = !config.freeze.beta && model.n_identity() > 0;
    g.phi = !config.freeze.phi && model.n_expression() > 0;
    g.theta = !config.freeze.theta;
    g.delta_d = !config.freeze.delta_d;
    g.head_pose = !config.freeze.head_pose;
    g.deformable = g.delta_d ? resolve_deformable_mask(model, config)
                             : std::vector<bool>(static_cast<std::size_t>(model.n_vertices()), false);

    const std::size_t c = params.cameras.size();
    g.camera_extrinsics.assign(c, false);
    g.camera_focal.assign(c, false);
    bool any_calibrated = false;
    for (std::size_t j = 0; j < c; ++j) {
        const bool free = !config.freeze.cameras && !params.cameras[j].calibrated;
        g.camera_extrinsics[j] = free;
        g.camera_focal[j] = free;
        any_calibrated = any_calibrated || params.cameras[j].calibrated;
    }
    if (!any_calibrated && g.head_pose && c > 0)
        g.camera_extrinsics[0] = false;
    return g;
}

// ---------------------------------------------------------------------------
// Energy evaluation

EnergyFunction::EnergyFunction(const BlendshapeModel& model, std::vector<AlignmentObservation> observations,
                               int frame_count, EnergyConfig config)
    : model_(&model), config_(std::move(config)), frame_count_(frame_count)
{
    config_.validate();
    if (frame_count_ < 1)
        throw DimensionError("energy needs at least one frame");
    if (config_.mica_template && config_.mica_template->rows() != model.n_vertices())
        throw DimensionError("neutral template has " + std::to_string(config_.mica_template->rows()) +
                             " vertices, model has " + std::to_string(model.n_vertices()));
    vertex_weights_ = resolve_vertex_weights(model, config_);
    deformable_ = resolve_deformable_mask(model, config_);

    for (std::size_t k = 0; k < observations.size(); ++k) {
        const AlignmentObservation& o = observations[k];
        if (o.vertex >= static_cast<std::uint32_t>(model.n_vertices()) ||
            o.frame >= static_cast<std::uint32_t>(frame_count_))
            throw DimensionError("observation " + std::to_string(k) + " references an out-of-range vertex or frame");
        if (!(o.sigma > 0.0) || !std::isfinite(o.sigma) || !o.mu.allFinite())
            throw FormatError("observation " + std::to_string(k) + " has invalid sigma or position");
    }
    std::sort(observations.begin(), observations.end(), [](const AlignmentObservation& a, const AlignmentObservation& b) {
        return std::tie(a.frame, a.camera, a.vertex, a.mu.x(), a.mu.y(), a.sigma) <
               std::tie(b.frame, b.camera, b.vertex, b.mu.x(), b.mu.y(), b.sigma);
    });
    obs_.reserve(observations.size());
    frame_begin_.assign(static_cast<std::size_t>(frame_count_) + 1, 0);
    for (const AlignmentObservation& o : observations) {
        obs_.push_back({o.vertex, o.camera, o.mu, vertex_weights_(o.vertex), o.sigma});
        ++frame_begin_[o.frame + 1];
    }
    for (std::size_t t = 1; t < frame_begin_.size(); ++t)
        frame_begin_[t] += frame_begin_[t - 1];
}

EnergyBreakdown EnergyFunction::energy(const TrackingParams& params, TermSet terms) const
{
    return run(params, nullptr, terms);
}

EnergyBreakdown EnergyFunction::evaluate(const TrackingParams& params, TrackingGradient& gradient, TermSet terms) const
{
    return run(params, &gradient, terms);
}

namespace {

struct FrameState
{
    Vertices posed;
    Vertices world;
    Vertices g_world;
    Mat3 head_rotation;
    PoseLinearization pose;
    bool skinned = false;
    double alignment = 0.0;
    std::size_t invalid = 0;
    std::vector<Mat3> g_cam_rotation;
    std::vector<Vec3> g_cam_translation;
    std::vector<double> g_cam_focal;
};

} // namespace

EnergyBreakdown EnergyFunction::run(const TrackingParams& p, TrackingGradient* grad, TermSet terms) const
{
    const BlendshapeModel& m = *model_;
    p.validate(m);
    if (p.frames() != frame_count_)
        throw DimensionError("parameters have " + std::to_string(p.frames()) + " frames, energy expects " +
                             std::to_string(frame_count_));
    for (const PreparedObservation& o : obs_)
        if (o.camera >= static_cast<std::uint32_t>(p.n_cameras()))
            throw DimensionError("observation references camera " + std::to_string(o.camera) + " but only " +
                                 std::to_string(p.n_cameras()) + " cameras exist");

    const int f_count = frame_count_;
    const int n = m.n_vertices();
    const int c_count = p.n_cameras();
    const int k_count = m.n_joints();
    const double lambda_temp = config_.lambda_temp;

    FreeGroups free;
    if (grad) {
        free = FreeGroups::resolve(m, p, config_);
        grad->beta = Eigen::VectorXd::Zero(m.n_identity());
        grad->phi = Eigen::MatrixXd::Zero(f_count, m.n_expression());
        grad->theta = Eigen::MatrixXd::Zero(f_count, m.pose_size());
        grad->delta_d = Vertices::Zero(n, 3);
        grad->head_rotation.assign(static_cast<std::size_t>(f_count), Vec3::Zero());
        grad->head_translation.assign(static_cast<std::size_t>(f_count), Vec3::Zero());
        grad->cameras.assign(static_cast<std::size_t>(c_count), CameraGradient{});
    }
    const bool theta_grad = grad && free.theta;
    const bool shape_grad = grad && (free.beta || free.phi);
    bool any_camera_free = false;
    if (grad)
        for (int j = 0; j < c_count; ++j)
            any_camera_free = any_camera_free || free.camera_extrinsics[static_cast<std::size_t>(j)] ||
                              free.camera_focal[static_cast<std::size_t>(j)];

    EnergyBreakdown out;

    Eigen::VectorXd shaped_id = ConstRowMajorMap(m.template_vertices.data(), n, 3).reshaped<Eigen::RowMajor>();
    if (m.n_identity() > 0)
        shaped_id.noalias() += m.identity_basis * p.beta;

    // Shape-space gradient accumulated over frames (3N x F); feeds beta and phi.
    Eigen::MatrixXd g_shaped;
    Eigen::VectorXd g_shaped_id;
    if (grad)
        g_shaped_id = Eigen::VectorXd::Zero(3 * n);

    if (terms.alignment || terms.temporal) {
        Eigen::MatrixXd shaped(3 * n, f_count);
        if (m.n_expression() > 0)
            shaped.noalias() = m.expression_basis * p.phi.transpose();
        else
            shaped.setZero();
        shaped.colwise() += shaped_id;

        std::vector<Mat3> cam_rotation(static_cast<std::size_t>(c_count));
        std::vector<RotationJacobian> cam_jacobian(static_cast<std::size_t>(c_count));
        for (int j = 0; j < c_count; ++j) {
            cam_jacobian[static_cast<std::size_t>(j)] = rotation_with_jacobian(p.cameras[static_cast<std::size_t>(j)].extrinsics.rotation);
            cam_rotation[static_cast<std::size_t>(j)] = cam_jacobian[static_cast<std::size_t>(j)].rotation;
        }

        std::vector<FrameState> frames(static_cast<std::size_t>(f_count));

#pragma omp parallel for schedule(static)
        for (int t = 0; t < f_count; ++t) {
            FrameState& fs = frames[static_cast<std::size_t>(t)];
            const ConstRowMajorMap rest(shaped.col(t).data(), n, 3);
            const Eigen::VectorXd theta_t = p.theta.row(t).transpose();
            fs.skinned = theta_grad || !is_rest_pose(theta_t);
            if (fs.skinned) {
                const Eigen::Matrix<double, Eigen::Dynamic, 3> joints = m.joint_regressor * rest;
                fs.pose = linearize_pose(m, theta_t, joints, theta_grad || shape_grad);
                fs.posed = skin(m, fs.pose, rest);
            } else {
                fs.posed = rest;
            }
            fs.posed += p.delta_d;

            const RigidTransform& head = p.head_pose[static_cast<std::size_t>(t)];
            fs.head_rotation = head.rotation_matrix();
            fs.world.noalias() = fs.posed * fs.head_rotation.transpose();
            fs.world.rowwise() += head.translation.transpose();

            if (grad) {
                fs.g_world = Vertices::Zero(n, 3);
                fs.g_cam_rotation.assign(static_cast<std::size_t>(c_count), Mat3::Zero());
                fs.g_cam_translation.assign(static_cast<std::size_t>(c_count), Vec3::Zero());
                fs.g_cam_focal.assign(static_cast<std::size_t>(c_count), 0.0);
            }
            if (!terms.alignment)
                continue;

            double e = 0.0;
            for (std::size_t k = frame_begin_[static_cast<std::size_t>(t)]; k < frame_begin_[static_cast<std::size_t>(t) + 1]; ++k) {
                const PreparedObservation& o = obs_[k];
                const Camera& cam = p.cameras[o.camera];
                const Vec3 x = fs.world.row(o.vertex).transpose();
                const Vec3 pc = cam_rotation[o.camera] * x + cam.extrinsics.translation;
                if (!(pc.z() > kMinDepth)) {
                    ++fs.invalid;
                    continue;
                }
                const double inv_z = 1.0 / pc.z();
                const Vec2 q(pc.x() * inv_z, pc.y() * inv_z);
                const Vec2 r = cam.focal * q + cam.principal_point - o.mu;
                const double sigma2 = o.sigma * o.sigma;
                e += o.weight * r.squaredNorm() / (2.0 * sigma2);
                if (!grad)
                    continue;
                const Vec2 gu = (o.weight / sigma2) * r;
                const double s = cam.focal * inv_z;
                const Vec3 gp(s * gu.x(), s * gu.y(), -s * (gu.x() * q.x() + gu.y() * q.y()));
                fs.g_world.row(o.vertex) += (cam_rotation[o.camera].transpose() * gp).transpose();
                fs.g_cam_rotation[o.camera].noalias() += gp * x.transpose();
                fs.g_cam_translation[o.camera] += gp;
                fs.g_cam_focal[o.camera] += gu.dot(q);
            }
            fs.alignment = e;
        }

        for (const FrameState& fs : frames) {
            out.alignment += fs.alignment;
            out.invalid_projections += fs.invalid;
        }

        if (terms.temporal && f_count >= 3) {
            double e = 0.0;
            for (int t = 1; t + 1 < f_count; ++t) {
                const auto tu = static_cast<std::size_t>(t);
                const Vertices acc = frames[tu - 1].world - 2.0 * frames[tu].world + frames[tu + 1].world;
                e += acc.squaredNorm();
                if (grad) {
                    frames[tu - 1].g_world += (2.0 * lambda_temp) * acc;
                    frames[tu].g_world -= (4.0 * lambda_temp) * acc;
                    frames[tu + 1].g_world += (2.0 * lambda_temp) * acc;
                }
            }
            out.temporal = lambda_temp * e;
        }

        if (grad) {
            g_shaped = Eigen::MatrixXd::Zero(3 * n, f_count);
#pragma omp parallel for schedule(static)
            for (int t = 0; t < f_count; ++t) {
                FrameState& fs = frames[static_cast<std::size_t>(t)];
                const auto tu = static_cast<std::size_t>(t);
                if (free.head_pose) {
                    const Mat3 g_r = fs.g_world.transpose() * fs.posed;
                    const RotationJacobian jac = rotation_with_jacobian(p.head_pose[tu].rotation);
                    for (int k = 0; k < 3; ++k)
                        grad->head_rotation[tu](k) = g_r.cwiseProduct(jac.d[static_cast<std::size_t>(k)]).sum();
                    grad->head_translation[tu] = fs.g_world.colwise().sum().transpose();
                }
                // Reuse g_world for the gradient w.r.t. posed model vertices.
                fs.g_world = fs.g_world * fs.head_rotation;
                const Vertices& g_posed = fs.g_world;

                RowMajorMap g_rest(g_shaped.col(t).data(), n, 3);
                if (!fs.skinned) {
                    g_rest = g_posed;
                    continue;
                }
                const ConstRowMajorMap rest(shaped.col(t).data(), n, 3);
                std::vector<Mat3> g_rot(static_cast<std::size_t>(k_count), Mat3::Zero());
                std::vector<Vec3> g_trans(static_cast<std::size_t>(k_count), Vec3::Zero());
                for (int i = 0; i < n; ++i) {
                    const Vec3 g = g_posed.row(i).transpose();
                    const Vec3 v = rest.row(i).transpose();
                    Vec3 gv = Vec3::Zero();
                    for (int k = 0; k < k_count; ++k) {
                        const double w = m.skin_weights(i, k);
                        if (w == 0.0)
                            continue;
                        const auto ku = static_cast<std::size_t>(k);
                        gv.noalias() += w * (fs.pose.rotations[ku].transpose() * g);
                        g_rot[ku].noalias() += (w * g) * v.transpose();
                        g_trans[ku] += w * g;
                    }
                    g_rest.row(i) = gv.transpose();
                }
                if (theta_grad)
                    grad->theta.row(t).tail<3>() = g_posed.colwise().sum();
                if (fs.pose.jacobian.size() == 0)
                    continue;
                Eigen::VectorXd g_vec(12 * k_count);
                for (int k = 0; k < k_count; ++k) {
                    const auto ku = static_cast<std::size_t>(k);
                    for (int a = 0; a < 3; ++a)
                        for (int b = 0; b < 3; ++b)
                            g_vec(12 * k + 3 * a + b) = g_rot[ku](a, b);
                    g_vec.segment<3>(12 * k + 9) = g_trans[ku];
                }
                const Eigen::VectorXd g_in = fs.pose.jacobian.transpose() * g_vec;
                if (theta_grad)
                    grad->theta.row(t).head(3 * k_count) = g_in.head(3 * k_count).transpose();
                const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>> g_joints(
                    g_in.data() + 3 * k_count, k_count, 3);
                g_rest.noalias() += m.joint_regressor.transpose() * g_joints;
            }

            for (int t = 0; t < f_count; ++t) {
                const FrameState& fs = frames[static_cast<std::size_t>(t)];
                if (free.delta_d)
                    grad->delta_d += fs.g_world;
                if (any_camera_free) {
                    for (int j = 0; j < c_count; ++j) {
                        const auto ju = static_cast<std::size_t>(j);
                        CameraGradient& cg = grad->cameras[ju];
                        for (int k = 0; k < 3; ++k)
                            cg.rotation(k) += fs.g_cam_rotation[ju].cwiseProduct(cam_jacobian[ju].d[static_cast<std::size_t>(k)]).sum();
                        cg.translation += fs.g_cam_translation[ju];
                        cg.focal += fs.g_cam_focal[ju];
                    }
                }
            }
            if (free.phi)
                grad->phi.noalias() = (m.expression_basis.transpose() * g_shaped).transpose();
            if (free.beta)
                g_shaped_id = g_shaped.rowwise().sum();
        }
    }

    if (terms.flame) {
        out.flame = config_.lambda_flame * (p.beta.squaredNorm() + p.phi.squaredNorm());
        if (grad) {
            grad->phi += (2.0 * config_.lambda_flame) * p.phi;
            grad->beta += (2.0 * config_.lambda_flame) * p.beta;
        }
    }

    if (terms.mica) {
        if (!config_.mica_template) {
            out.mica_template_missing = true;
        } else {
            Eigen::VectorXd diff = shaped_id;
            diff += ConstRowMajorMap(p.delta_d.data(), n, 3).reshaped<Eigen::RowMajor>();
            diff -= ConstRowMajorMap(config_.mica_template->data(), n, 3).reshaped<Eigen::RowMajor>();
            out.mica = config_.lambda_mica * diff.squaredNorm();
            if (grad) {
                const Eigen::VectorXd g = (2.0 * config_.lambda_mica) * diff;
                g_shaped_id += g;
                grad->delta_d += ConstRowMajorMap(g.data(), n, 3);
            }
        }
    }

    if (terms.deform) {
        out.deform = config_.lambda_deform * p.delta_d.squaredNorm();
        if (grad)
            grad->delta_d += (2.0 * config_.lambda_deform) * p.delta_d;
    }

    if (grad) {
        if (free.beta && m.n_identity() > 0)
            grad->beta.noalias() += m.identity_basis.transpose() * g_shaped_id;
        if (!free.beta)
            grad->beta.setZero();
        if (!free.phi)
            grad->phi.setZero();
        if (!free.theta)
            grad->theta.setZero();
        for (int i = 0; i < n; ++i)
            if (!free.deformable[static_cast<std::size_t>(i)])
                grad->delta_d.row(i).setZero();
        if (!free.head_pose) {
            std::fill(grad->head_rotation.begin(), grad->head_rotation.end(), Vec3::Zero());
            std::fill(grad->head_translation.begin(), grad->head_translation.end(), Vec3::Zero());
        }
        for (int j = 0; j < c_count; ++j) {
            const auto ju = static_cast<std::size_t>(j);
            if (!free.camera_extrinsics[ju]) {
                grad->cameras[ju].rotation.setZero();
                grad->cameras[ju].translation.setZero();
            }
            if (!free.camera_focal[ju])
                grad->cameras[ju].focal = 0.0;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Free-function forms of the individual terms

double energy_alignment(const TrackingParams& params, const std::vector<AlignmentObservation>& observations,
                        const BlendshapeModel& model, const EnergyConfig& config)
{
    return EnergyFunction(model, observations, params.frames(), config).energy(params, TermSet::only(Term::alignment)).alignment;
}

double energy_flame_reg(const TrackingParams& params, const EnergyConfig& config)
{
    return config.lambda_flame * (params.beta.squaredNorm() + params.phi.squaredNorm());
}

double energy_temporal(const TrackingParams& params, const BlendshapeModel& model, const EnergyConfig& config)
{
    return EnergyFunction(model, {}, params.frames(), config).energy(params, TermSet::only(Term::temporal)).temporal;
}

double energy_mica(const TrackingParams& params, const EnergyConfig& config, const BlendshapeModel& model,
                   bool* template_missing)
{
    const EnergyBreakdown e = EnergyFunction(model, {}, params.frames(), config).energy(params, TermSet::only(Term::mica));
    if (template_missing)
        *template_missing = e.mica_template_missing;
    return e.mica;
}

double energy_deform(const TrackingParams& params, const EnergyConfig& config)
{
    return config.lambda_deform * params.delta_d.squaredNorm();
}

EnergyBreakdown total_energy(const TrackingParams& params, const std::vector<AlignmentObservation>& observations,
                             const EnergyConfig& config, const BlendshapeModel& model)
{
    return EnergyFunction(model, observations, params.frames(), config).energy(params);
}

TrackingGradient gradient(const TrackingParams& params, const std::vector<AlignmentObservation>& observations,
                          const EnergyConfig& config, const BlendshapeModel& model, TermSet terms)
{
    TrackingGradient g;
    EnergyFunction(model, observations, params.frames(), config).evaluate(params, g, terms);
    return g;
}

// ---------------------------------------------------------------------------
// Packed parameter layout

ParameterLayout::ParameterLayout(const BlendshapeModel& model, const TrackingParams& params, const EnergyConfig& config)
    : free_(FreeGroups::resolve(model, params, config)),
      frames_(params.frames()),
      n_identity_(model.n_identity()),
      n_expression_(model.n_expression()),
      pose_size_(model.pose_size())
{
    const auto add = [&](std::string name, Eigen::Index count) {
        if (count > 0) {
            blocks_.push_back({std::move(name), size_, count});
            size_ += count;
        }
    };
    if (free_.beta)
        add("beta", n_identity_);
    if (free_.phi)
        add("phi", static_cast<Eigen::Index>(frames_) * n_expression_);
    if (free_.theta)
        add("theta", static_cast<Eigen::Index>(frames_) * pose_size_);
    for (std::size_t i = 0; i < free_.deformable.size(); ++i)
        if (free_.deformable[i])
            deformable_vertices_.push_back(static_cast<int>(i));
    if (free_.delta_d)
        add("delta_d", 3 * static_cast<Eigen::Index>(deformable_vertices_.size()));
    if (free_.head_pose) {
        add("head_rotation", 3 * static_cast<Eigen::Index>(frames_));
        add("head_translation", 3 * static_cast<Eigen::Index>(frames_));
    }
    for (std::size_t j = 0; j < params.cameras.size(); ++j) {
        const std::string prefix = "camera[" + std::to_string(j) + "].";
        if (free_.camera_extrinsics[j]) {
            add(prefix + "rotation", 3);
            add(prefix + "translation", 3);
        }
        if (free_.camera_focal[j])
            add(prefix + "log_focal", 1);
    }
}

namespace {

/// Walks the packed layout in order; `visit` receives (block name, sub-index
/// count, callback index) through a small set of typed lambdas.
template <typename Scalar, typename Vector, typename Fn>
void for_each_slot(const FreeGroups& free, int frames, int n_identity, int n_expression, int pose_size,
                   const std::vector<int>& deformable, std::size_t n_cameras, Vector& x, Fn&& fn)
{
    Eigen::Index o = 0;
    if (free.beta)
        for (int b = 0; b < n_identity; ++b)
            fn(x(o++), 0, b, 0);
    if (free.phi)
        for (int t = 0; t < frames; ++t)
            for (int b = 0; b < n_expression; ++b)
                fn(x(o++), 1, t, b);
    if (free.theta)
        for (int t = 0; t < frames; ++t)
            for (int b = 0; b < pose_size; ++b)
                fn(x(o++), 2, t, b);
    if (free.delta_d)
        for (int v : deformable)
            for (int c = 0; c < 3; ++c)
                fn(x(o++), 3, v, c);
    if (free.head_pose) {
        for (int t = 0; t < frames; ++t)
            for (int c = 0; c < 3; ++c)
                fn(x(o++), 4, t, c);
        for (int t = 0; t < frames; ++t)
            for (int c = 0; c < 3; ++c)
                fn(x(o++), 5, t, c);
    }
    for (std::size_t j = 0; j < n_cameras; ++j) {
        if (free.camera_extrinsics[j]) {
            for (int c = 0; c < 3; ++c)
                fn(x(o++), 6, static_cast<int>(j), c);
            for (int c = 0; c < 3; ++c)
                fn(x(o++), 7, static_cast<int>(j), c);
        }
        if (free.camera_focal[j])
            fn(x(o++), 8, static_cast<int>(j), 0);
    }
    (void)sizeof(Scalar);
}

} // namespace

Eigen::VectorXd ParameterLayout::pack(const TrackingParams& p) const
{
    Eigen::VectorXd x(size_);
    for_each_slot<double>(free_, frames_, n_identity_, n_expression_, pose_size_, deformable_vertices_, p.cameras.size(), x,
                          [&](double& slot, int group, int a, int b) {
                              switch (group) {
                              case 0: slot = p.beta(a); break;
                              case 1: slot = p.phi(a, b); break;
                              case 2: slot = p.theta(a, b); break;
                              case 3: slot = p.delta_d(a, b); break;
                              case 4: slot = p.head_pose[static_cast<std::size_t>(a)].rotation(b); break;
                              case 5: slot = p.head_pose[static_cast<std::size_t>(a)].translation(b); break;
                              case 6: slot = p.cameras[static_cast<std::size_t>(a)].extrinsics.rotation(b); break;
                              case 7: slot = p.cameras[static_cast<std::size_t>(a)].extrinsics.translation(b); break;
                              case 8: slot = std::log(p.cameras[static_cast<std::size_t>(a)].focal); break;
                              }
                          });
    return x;
}

void ParameterLayout::unpack(const Eigen::VectorXd& x_in, TrackingParams& p) const
{
    if (x_in.size() != size_)
        throw DimensionError("packed vector has " + std::to_string(x_in.size()) + " entries, layout expects " +
                             std::to_string(size_));
    Eigen::VectorXd x = x_in;
    for_each_slot<double>(free_, frames_, n_identity_, n_expression_, pose_size_, deformable_vertices_, p.cameras.size(), x,
                          [&](double& slot, int group, int a, int b) {
                              switch (group) {
                              case 0: p.beta(a) = slot; break;
                              case 1: p.phi(a, b) = slot; break;
                              case 2: p.theta(a, b) = slot; break;
                              case 3: p.delta_d(a, b) = slot; break;
                              case 4: p.head_pose[static_cast<std::size_t>(a)].rotation(b) = slot; break;
                              case 5: p.head_pose[static_cast<std::size_t>(a)].translation(b) = slot; break;
                              case 6: p.cameras[static_cast<std::size_t>(a)].extrinsics.rotation(b) = slot; break;
                              case 7: p.cameras[static_cast<std::size_t>(a)].extrinsics.translation(b) = slot; break;
                              case 8: p.cameras[static_cast<std::size_t>(a)].focal = std::exp(slot); break;
                              }
                          });
}

Eigen::VectorXd ParameterLayout::pack_gradient(const TrackingGradient& g, const TrackingParams& at) const
{
    Eigen::VectorXd x(size_);
    for_each_slot<double>(free_, frames_, n_identity_, n_expression_, pose_size_, deformable_vertices_, at.cameras.size(), x,
                          [&](double& slot, int group, int a, int b) {
                              const auto au = static_cast<std::size_t>(a);
                              switch (group) {
                              case 0: slot = g.beta(a); break;
                              case 1: slot = g.phi(a, b); break;
                              case 2: slot = g.theta(a, b); break;
                              case 3: slot = g.delta_d(a, b); break;
                              case 4: slot = g.head_rotation[au](b); break;
                              case 5: slot = g.head_translation[au](b); break;
                              case 6: slot = g.cameras[au].rotation(b); break;
                              case 7: slot = g.cameras[au].translation(b); break;
                              case 8: slot = g.cameras[au].focal * at.cameras[au].focal; break;
                              }
                          });
    return x;
}

std::string ParameterLayout::describe(Eigen::Index index) const
{
    for (const Block& b : blocks_) {
        if (index < b.offset || index >= b.offset + b.size)
            continue;
        const Eigen::Index local = index - b.offset;
        if (b.name == "phi")
            return "phi[" + std::to_string(local / n_expression_) + "][" + std::to_string(local % n_expression_) + "]";
        if (b.name == "theta")
            return "theta[" + std::to_string(local / pose_size_) + "][" + std::to_string(local % pose_size_) + "]";
        if (b.name == "delta_d")
            return "delta_d[" + std::to_string(deformable_vertices_[static_cast<std::size_t>(local / 3)]) + "][" +
                   std::to_string(local % 3) + "]";
        if (b.name == "head_rotation" || b.name == "head_translation")
            return b.name + "[" + std::to_string(local / 3) + "][" + std::to_string(local % 3) + "]";
        return b.name + "[" + std::to_string(local) + "]";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Diagnostics

std::vector<Vertices> world_vertices(const BlendshapeModel& model, const TrackingParams& params)
{
    params.validate(model);
    std::vector<Vertices> out(static_cast<std::size_t>(params.frames()));
    for (int t = 0; t < params.frames(); ++t)
        out[static_cast<std::size_t>(t)] =
            transform_points(params.head_pose[static_cast<std::size_t>(t)], evaluate_model(model, params.frame_model_params(t)));
    return out;
}

ReprojectionStats reprojection_error(const BlendshapeModel& model, const TrackingParams& params,
                                     const std::vector<AlignmentObservation>& observations)
{
    const std::vector<Vertices> world = world_vertices(model, params);
    ReprojectionStats s;
    double sum = 0.0;
    double sum2 = 0.0;
    for (const AlignmentObservation& o : observations) {
        if (o.camera >= params.cameras.size() || o.frame >= world.size() ||
            o.vertex >= static_cast<std::uint32_t>(model.n_vertices()))
            throw DimensionError("observation index out of range");
        const Projection pr = project_point(params.cameras[o.camera], world[o.frame].row(o.vertex).transpose());
        if (!pr.valid) {
            ++s.invalid;
            continue;
        }
        const double d = (pr.pixel - o.mu).norm();
        sum += d;
        sum2 += d * d;
        ++s.count;
    }
    if (s.count > 0) {
        s.mean = sum / static_cast<double>(s.count);
        s.rms = std::sqrt(sum2 / static_cast<double>(s.count));
    }
    return s;
}

double mean_vertex_error(const BlendshapeModel& model, const TrackingParams& a, const TrackingParams& b)
{
    if (a.frames() != b.frames())
        throw DimensionError("parameter sets have different frame counts");
    const std::vector<Vertices> wa = world_vertices(model, a);
    const std::vector<Vertices> wb = world_vertices(model, b);
    double sum = 0.0;
    for (std::size_t t = 0; t < wa.size(); ++t)
        sum += (wa[t] - wb[t]).rowwise().norm().sum();
    return sum / static_cast<double>(wa.size() * static_cast<std::size_t>(model.n_vertices()));
}

} // namespace facefit
