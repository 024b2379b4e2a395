#include "facefit/error.hpp"
#include "facefit/fitter.hpp"
#include "facefit/gradcheck.hpp"
#include "facefit/io.hpp"
#include "facefit/procedural_head.hpp"
#include "facefit/recon.hpp"
#include "facefit/ssme.hpp"
#include "facefit/synth.hpp"

#include <CLI11.hpp>
#include <omp.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace facefit;

namespace {

// Runtime failure that maps to exit code 1 without being a library error.
struct RuntimeFailure : std::runtime_error
{
    using std::runtime_error::runtime_error;
};

std::string fmt(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

void apply_thread_cap()
{
    const char* env = std::getenv("FACEFIT_THREADS");
    if (env == nullptr || *env == '\0')
        return;
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (*end != '\0' || n < 1)
        throw ConfigError("FACEFIT_THREADS must be a positive integer, got '" + std::string(env) + "'");
    omp_set_num_threads(static_cast<int>(n));
}

BlendshapeModel model_or_preset(const std::string& path, const std::string& preset)
{
    if (!path.empty())
        return load_model(path);
    return build_procedural_head(preset == "full" ? full_size_head_options() : miniature_head_options());
}

void print_energy(const char* label, const EnergyBreakdown& e)
{
    std::cout << label << " total=" << fmt(e.total()) << " alignment=" << fmt(e.alignment)
              << " flame=" << fmt(e.flame) << " temporal=" << fmt(e.temporal) << " mica=" << fmt(e.mica)
              << " deform=" << fmt(e.deform) << "\n";
}

// fit

struct FitArgs
{
    std::string model, sequence, config, out, init, trace;
};

int run_fit(const FitArgs& a)
{
    const BlendshapeModel model = load_model(a.model);
    const SequenceDataset data = load_sequence(a.sequence);
    data.validate(model.n_vertices());
    const EnergyConfig config = a.config.empty() ? EnergyConfig{} : load_config_file(a.config);

    TrackingParams init;
    if (a.init.empty()) {
        init = initialize_params(model, data, config);
    } else {
        init = load_params(a.init);
        init.validate(model);
        if (init.frames() != data.frame_count || init.n_cameras() != static_cast<int>(data.cameras.size()))
            throw RuntimeFailure("init params do not match the sequence's frame or camera count");
    }

    const FitReport report = fit(model, data, config, init);
    write_container(a.out, params_to_container(report.params));
    const std::string trace_path = a.trace.empty() ? a.out + ".trace.csv" : a.trace;
    write_file_atomic(trace_path, trace_csv(report.trace));

    const ReprojectionStats rep = reprojection_error(model, report.params, data.observations);
    print_energy("initial", report.initial);
    print_energy("final", report.final);
    std::cout << "iterations " << report.iterations << " stop " << stop_reason_name(report.reason)
              << " lr " << fmt(report.final_learning_rate) << "\n";
    std::cout << "reprojection mean_px=" << fmt(rep.mean) << " rms_px=" << fmt(rep.rms) << " count=" << rep.count
              << " invalid=" << rep.invalid << "\n";
    return 0;
}

// eval-ssme

struct SsmeArgs
{
    std::string gt, pred_params, pred_meshes, model, cameras, out;
    int horizons = 30;
    int resolution = 0;
    double smooth_sigma = 0.0;
};

std::vector<Camera> rescale(std::vector<Camera> cams, int width)
{
    if (width <= 0)
        return cams;
    for (Camera& c : cams) {
        const double s = static_cast<double>(width) / c.image_size[0];
        c.focal *= s;
        c.principal_point *= s;
        c.image_size = {width, static_cast<int>(std::lround(c.image_size[1] * s))};
    }
    return cams;
}

std::vector<std::vector<ScreenMesh>> render(const std::vector<Camera>& cams, const std::vector<Vertices>& frames,
                                            const Triangles& tris, const std::vector<Region>& regions)
{
    std::vector<std::vector<ScreenMesh>> out(cams.size());
    for (std::size_t c = 0; c < cams.size(); ++c)
        for (const Vertices& v : frames)
            out[c].push_back(make_screen_mesh(cams[c], v, tris, regions));
    return out;
}

void smooth(std::vector<std::vector<ScreenMesh>>& meshes, double sigma)
{
    if (sigma <= 0.0)
        return;
    for (auto& cam : meshes) {
        ScreenTracks tracks;
        for (const ScreenMesh& m : cam) {
            ScreenTracks::value_type p(static_cast<Eigen::Index>(m.size()), 2);
            for (std::size_t i = 0; i < m.size(); ++i)
                p.row(static_cast<Eigen::Index>(i)) = m.pixels[i].transpose();
            tracks.push_back(std::move(p));
        }
        const ScreenTracks s = temporal_gaussian_filter(tracks, sigma);
        for (std::size_t t = 0; t < cam.size(); ++t)
            for (std::size_t i = 0; i < cam[t].size(); ++i)
                cam[t].pixels[i] = s[t].row(static_cast<Eigen::Index>(i)).transpose();
    }
}

int run_eval_ssme(const SsmeArgs& a)
{
    const SequenceDataset gt = load_sequence(a.gt);
    if (!gt.meshes)
        throw RuntimeFailure(a.gt + " carries no ground-truth meshes");
    std::vector<Camera> cams = a.cameras.empty() ? gt.cameras : cameras_from_container(read_container(a.cameras));
    cams = rescale(std::move(cams), a.resolution);
    if (cams.empty())
        throw RuntimeFailure("no cameras to evaluate");
    for (const Camera& c : cams)
        if (c.image_size != cams[0].image_size)
            throw RuntimeFailure("all cameras must share one image size");

    std::vector<Vertices> pred_frames;
    Triangles pred_tris;
    if (!a.pred_params.empty()) {
        const BlendshapeModel model = load_model(a.model);
        const TrackingParams p = load_params(a.pred_params);
        p.validate(model);
        pred_frames = world_vertices(model, p);
        pred_tris = model.triangles;
    } else {
        const SequenceDataset pred = load_sequence(a.pred_meshes);
        if (!pred.meshes)
            throw RuntimeFailure(a.pred_meshes + " carries no meshes");
        pred_frames = pred.meshes->frames;
        pred_tris = pred.meshes->triangles;
    }
    if (pred_frames.size() != gt.meshes->frames.size())
        throw RuntimeFailure("frame count mismatch: ground truth has " + std::to_string(gt.meshes->frames.size()) +
                             " frames, prediction has " + std::to_string(pred_frames.size()));

    const auto gt_screen = render(cams, gt.meshes->frames, gt.meshes->triangles, gt.meshes->regions);
    auto pred_screen = render(cams, pred_frames, pred_tris, {});
    smooth(pred_screen, a.smooth_sigma);

    SsmeOptions opts;
    opts.horizons = a.horizons;
    opts.width = cams[0].image_size[0];
    opts.height = cams[0].image_size[1];
    const SsmeReport report = evaluate_ssme(gt_screen, pred_screen, opts);
    const std::string csv = ssme_csv(report);
    if (!a.out.empty())
        write_file_atomic(a.out, csv);
    for (std::size_t r = 0; r < report.regions.size(); ++r)
        std::cout << report.regions[r] << " ssme_px="
                  << (report.aggregate[r] ? fmt(*report.aggregate[r]) : std::string("nan"))
                  << " coverage=" << fmt(report.aggregate_coverage[r]) << "\n";
    return 0;
}

// eval-cd

struct CdArgs
{
    std::string gt, pred, keypoints, pred_keypoints, out;
    bool symmetric = false;
    bool scale = false;
};

int run_eval_cd(const CdArgs& a)
{
    TriangleMesh gt = load_mesh(a.gt);
    TriangleMesh pred = load_mesh(a.pred);
    apply_mesh_sidecar(gt, read_file(a.keypoints));
    apply_mesh_sidecar(pred, read_file(a.pred_keypoints.empty() ? a.keypoints : a.pred_keypoints));

    IcpOptions icp;
    icp.with_scale = a.scale;
    const AlignmentResult aligned = align_to_ground_truth(gt, pred, icp);
    ChamferOptions copts;
    copts.symmetric = a.symmetric;
    const ChamferReport report = chamfer_scan_to_mesh(gt, aligned.aligned, copts);
    const std::string csv = chamfer_csv(report);
    if (!a.out.empty())
        write_file_atomic(a.out, csv);
    std::cout << "icp iterations=" << aligned.icp.iterations << " converged=" << (aligned.icp.converged ? 1 : 0)
              << " scale=" << fmt(aligned.icp.transform.scale) << "\n";
    std::cout << csv;
    return 0;
}

// synth

struct SynthArgs
{
    SynthSpec spec;
    std::string model, preset = "mini", write_model, out, truth;
    std::string motion = "sinusoidal_expression", sigma_mode = "truthful";
    bool f32 = false;
};

int run_synth(SynthArgs a)
{
    a.spec.motion = motion_model_from_name(a.motion);
    a.spec.sigma_mode = sigma_mode_from_name(a.sigma_mode);
    a.spec.validate();
    const BlendshapeModel model = model_or_preset(a.model, a.preset);
    const SynthResult r = generate_sequence(model, a.spec);
    if (!a.write_model.empty())
        write_container(a.write_model, model_to_container(model));
    write_container(a.out, sequence_to_container(r.dataset, a.f32));
    if (!a.truth.empty())
        write_container(a.truth, params_to_container(r.truth));
    std::cout << "frames " << r.dataset.frame_count << " cameras " << r.dataset.cameras.size() << " observations "
              << r.dataset.observations.size() << " vertices " << model.n_vertices() << "\n";
    return 0;
}

// gradcheck

struct GradArgs
{
    std::string model, preset = "mini";
    std::uint64_t seed = 1;
    int frames = 5;
    int cameras = 2;
    int coords = 200;
    double threshold = 1e-4;
    double sabotage = 1.0;
};

int run_gradcheck(const GradArgs& a)
{
    const BlendshapeModel model = model_or_preset(a.model, a.preset);
    const GradientProblem pr = make_gradient_problem(model, a.seed, a.frames, a.cameras);
    const EnergyFunction ef(model, pr.synth.dataset.observations, a.frames, pr.config);
    GradientCheckOptions opts;
    opts.coordinates = a.coords;
    opts.seed = a.seed;
    opts.sabotage = a.sabotage;

    double worst = 0.0;
    const auto report = [&](const std::string& name, TermSet terms) {
        const GradientCheckResult r = check_gradient(ef, pr.at, terms, opts);
        std::cout << name << " max_rel_error=" << fmt(r.max_rel_error) << " checked=" << r.checked
                  << " worst=" << r.worst_name << "\n";
        worst = std::max(worst, r.max_rel_error);
    };
    for (Term t : {Term::alignment, Term::flame, Term::temporal, Term::mica, Term::deform})
        report(std::string(term_name(t)), TermSet::only(t));
    report("total", TermSet::all());
    std::cout << "max_rel_error " << fmt(worst) << " threshold " << fmt(a.threshold) << " "
              << (worst < a.threshold ? "ok" : "FAILED") << "\n";
    return worst < a.threshold ? 0 : 1;
}

// info

int run_info(const std::string& path)
{
    std::string ext = fs::path(path).extension().string();
    for (char& ch : ext)
        ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    if (ext == ".obj") {
        const TriangleMesh m = read_obj(path);
        std::cout << "OBJ vertices " << m.vertices.rows() << " triangles " << m.triangles.size() << "\n";
        return 0;
    }
    const Container c = read_container(path);
    std::cout << std::string(c.magic.data(), 4) << " version " << c.version << " chunks " << c.chunks.size() << "\n";
    for (const Chunk& ch : c.chunks) {
        std::cout << "  " << ch.name << " " << dtype_name(ch.dtype) << " [";
        for (std::size_t i = 0; i < ch.shape.size(); ++i)
            std::cout << (i ? "," : "") << ch.shape[i];
        std::cout << "] " << ch.payload.size() << " bytes\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Multi-view face model fitting and evaluation"};
    app.require_subcommand(1);

    FitArgs fa;
    CLI::App* fit_cmd = app.add_subcommand("fit", "Fit the model to a sequence of 2D alignment observations");
    fit_cmd->add_option("--model", fa.model, "Model container (FTM1)")->required()->check(CLI::ExistingFile);
    fit_cmd->add_option("--sequence", fa.sequence, "Sequence container (FTS1)")->required()->check(CLI::ExistingFile);
    fit_cmd->add_option("--config", fa.config, "JSON energy config")->check(CLI::ExistingFile);
    fit_cmd->add_option("--out", fa.out, "Output params (FTP1)")->required();
    fit_cmd->add_option("--init", fa.init, "Initial params (FTP1)")->check(CLI::ExistingFile);
    fit_cmd->add_option("--trace", fa.trace, "Energy trace CSV (default <out>.trace.csv)");

    SsmeArgs sa;
    CLI::App* ssme_cmd = app.add_subcommand("eval-ssme", "Screen-space motion error against ground-truth meshes");
    ssme_cmd->add_option("--gt-meshes", sa.gt, "Sequence with ground-truth meshes")->required()->check(CLI::ExistingFile);
    auto* pp = ssme_cmd->add_option("--pred-params", sa.pred_params, "Fitted params (FTP1)")->check(CLI::ExistingFile);
    auto* pm = ssme_cmd->add_option("--pred-meshes", sa.pred_meshes, "Sequence with predicted meshes")->check(CLI::ExistingFile);
    auto* mo = ssme_cmd->add_option("--model", sa.model, "Model for --pred-params")->check(CLI::ExistingFile);
    pp->excludes(pm);
    pp->needs(mo);
    ssme_cmd->add_option("--cameras", sa.cameras, "Container with camera chunks (default: the ground truth's)")
        ->check(CLI::ExistingFile);
    ssme_cmd->add_option("--horizons", sa.horizons, "Maximum frame horizon")->check(CLI::PositiveNumber);
    ssme_cmd->add_option("--resolution", sa.resolution, "Evaluation image width; intrinsics are rescaled")
        ->check(CLI::PositiveNumber);
    ssme_cmd->add_option("--smooth-sigma", sa.smooth_sigma, "Gaussian smoothing of the prediction (frames)")
        ->check(CLI::NonNegativeNumber);
    ssme_cmd->add_option("--out", sa.out, "Output CSV");

    CdArgs ca;
    CLI::App* cd_cmd = app.add_subcommand("eval-cd", "Keypoint and ICP aligned scan-to-mesh distance");
    cd_cmd->add_option("--gt", ca.gt, "Ground-truth mesh (OBJ or container)")->required()->check(CLI::ExistingFile);
    cd_cmd->add_option("--pred", ca.pred, "Predicted mesh (OBJ or container)")->required()->check(CLI::ExistingFile);
    cd_cmd->add_option("--keypoints", ca.keypoints, "JSON sidecar with 7 keypoints and optional regions")
        ->required()
        ->check(CLI::ExistingFile);
    cd_cmd->add_option("--pred-keypoints", ca.pred_keypoints, "Sidecar for the prediction (default: --keypoints)")
        ->check(CLI::ExistingFile);
    cd_cmd->add_flag("--symmetric", ca.symmetric, "Also measure predicted vertices against the ground truth");
    cd_cmd->add_flag("--scale", ca.scale, "Allow a uniform scale in the alignment");
    cd_cmd->add_option("--out", ca.out, "Output CSV");

    SynthArgs ya;
    CLI::App* synth_cmd = app.add_subcommand("synth", "Generate a synthetic sequence");
    synth_cmd->add_option("--model", ya.model, "Model container (default: procedural head)")->check(CLI::ExistingFile);
    synth_cmd->add_option("--preset", ya.preset, "Procedural head size")->check(CLI::IsMember({"mini", "full"}));
    synth_cmd->add_option("--write-model", ya.write_model, "Also write the model used (FTM1)");
    synth_cmd->add_option("--out", ya.out, "Output sequence (FTS1)")->required();
    synth_cmd->add_option("--truth", ya.truth, "Output ground-truth params (FTP1)");
    synth_cmd->add_option("--frames", ya.spec.frames)->check(CLI::PositiveNumber);
    synth_cmd->add_option("--cameras", ya.spec.cameras)->check(CLI::PositiveNumber);
    synth_cmd->add_option("--seed", ya.spec.seed);
    synth_cmd->add_option("--beta-scale", ya.spec.beta_scale);
    synth_cmd->add_option("--phi-scale", ya.spec.phi_scale);
    synth_cmd->add_option("--motion", ya.motion)
        ->check(CLI::IsMember({"static_pose", "sinusoidal_expression", "rigid_orbit"}));
    synth_cmd->add_option("--noise", ya.spec.noise_px, "Observation noise (px)");
    synth_cmd->add_option("--sigma-spread", ya.spec.sigma_spread);
    synth_cmd->add_option("--occlusion", ya.spec.occlusion);
    synth_cmd->add_option("--sigma-mode", ya.sigma_mode)->check(CLI::IsMember({"truthful", "constant", "miscalibrated"}));
    synth_cmd->add_option("--sigma-constant", ya.spec.sigma_constant);
    synth_cmd->add_option("--miscalibration", ya.spec.miscalibration);
    synth_cmd->add_option("--image-size", ya.spec.image_size);
    synth_cmd->add_option("--focal", ya.spec.focal);
    synth_cmd->add_option("--distance", ya.spec.distance);
    synth_cmd->add_option("--camera-spread", ya.spec.camera_spread_deg, "Yaw range (degrees)");
    synth_cmd->add_flag("!--uncalibrated", ya.spec.calibrated, "Cameras are optimized during fitting");
    synth_cmd->add_flag("--meshes", ya.spec.include_meshes, "Include ground-truth meshes");
    synth_cmd->add_flag("--mica", ya.spec.include_mica, "Include a neutral template");
    synth_cmd->add_option("--mica-noise", ya.spec.mica_noise);
    synth_cmd->add_flag("--f32", ya.f32, "Store observations as f32");

    GradArgs ga;
    CLI::App* grad_cmd = app.add_subcommand("gradcheck", "Compare the analytic gradient with finite differences");
    grad_cmd->add_option("--model", ga.model, "Model container (default: procedural head)")->check(CLI::ExistingFile);
    grad_cmd->add_option("--preset", ga.preset)->check(CLI::IsMember({"mini", "full"}));
    grad_cmd->add_option("--seed", ga.seed);
    grad_cmd->add_option("--frames", ga.frames)->check(CLI::Range(3, 1000));
    grad_cmd->add_option("--cameras", ga.cameras)->check(CLI::PositiveNumber);
    grad_cmd->add_option("--coords", ga.coords, "Sampled coordinates per term")->check(CLI::PositiveNumber);
    grad_cmd->add_option("--threshold", ga.threshold)->check(CLI::PositiveNumber);
    grad_cmd->add_option("--sabotage-gradient", ga.sabotage)->group("");

    std::string info_path;
    CLI::App* info_cmd = app.add_subcommand("info", "Describe a container or OBJ file");
    info_cmd->add_option("file", info_path)->required()->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n";
        const auto subs = app.get_subcommands();
        std::cerr << (subs.empty() ? app.help() : subs.front()->help());
        return 2;
    }

    try {
        apply_thread_cap();
        if (*fit_cmd)
            return run_fit(fa);
        if (*ssme_cmd) {
            if (sa.pred_params.empty() == sa.pred_meshes.empty()) {
                std::cerr << "error: exactly one of --pred-params and --pred-meshes is required\n\n"
                          << ssme_cmd->help();
                return 2;
            }
            return run_eval_ssme(sa);
        }
        if (*cd_cmd)
            return run_eval_cd(ca);
        if (*synth_cmd)
            return run_synth(ya);
        if (*grad_cmd)
            return run_gradcheck(ga);
        if (*info_cmd)
            return run_info(info_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
