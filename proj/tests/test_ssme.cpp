#include "oracle.hpp"

#include "facefit/error.hpp"
#include "facefit/ssme.hpp"

#include <doctest.h>

#include <cmath>

using namespace facefit;

namespace {

// Regular grid of (n+1)^2 vertices spanning [x0, x0+size]^2 at constant depth.
ScreenMesh grid(int n, double x0, double y0, double size, double depth = 1.0, Region region = Region::face)
{
    ScreenMesh m;
    for (int j = 0; j <= n; ++j)
        for (int i = 0; i <= n; ++i) {
            m.pixels.emplace_back(x0 + size * i / n, y0 + size * j / n);
            m.depths.push_back(depth);
            m.regions.push_back(region);
        }
    const auto id = [n](int i, int j) { return static_cast<std::uint32_t>(j * (n + 1) + i); };
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
            m.triangles.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
            m.triangles.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
        }
    return m;
}

ScreenMesh shifted(ScreenMesh m, const Vec2& d)
{
    for (Vec2& p : m.pixels)
        p += d;
    return m;
}

std::size_t valid_count(const FlowField& f)
{
    std::size_t n = 0;
    for (std::uint8_t v : f.valid)
        n += v;
    return n;
}

FlowField constant_field(int w, int h, const Vec2& flow, Region region = Region::face)
{
    FlowField f;
    f.width = w;
    f.height = h;
    f.flow.assign(static_cast<std::size_t>(w * h), flow);
    f.valid.assign(static_cast<std::size_t>(w * h), 1);
    f.region.assign(static_cast<std::size_t>(w * h), region);
    return f;
}

// Screen meshes of a synthetic head sequence seen by one camera.
std::vector<ScreenMesh> head_sequence(int frames, std::uint64_t seed, double scale = 1.0)
{
    const BlendshapeModel& m = oracle::mini_model();
    SynthSpec spec;
    spec.frames = frames;
    spec.cameras = 1;
    spec.seed = seed;
    spec.motion = MotionModel::rigid_orbit;
    spec.image_size = static_cast<int>(512 * scale);
    spec.focal = 1000.0 * scale;
    const SynthResult s = generate_sequence(m, spec);
    const std::vector<Vertices> world = world_vertices(m, s.truth);
    std::vector<ScreenMesh> out;
    for (const Vertices& w : world)
        out.push_back(make_screen_mesh(s.truth.cameras[0], w, m.triangles, m.region_labels));
    return out;
}

} // namespace

TEST_CASE("static mesh gives zero flow")
{
    const ScreenMesh m = grid(4, 10.3, 12.1, 40.0);
    const FlowField f = rasterize_flow(m, m, 64, 64);
    CHECK(valid_count(f) > 1000);
    for (std::size_t k = 0; k < f.flow.size(); ++k)
        if (f.valid[k])
            CHECK(f.flow[k] == Vec2::Zero());
}

TEST_CASE("rigid screen translation gives constant flow")
{
    const ScreenMesh m = grid(5, 5.0, 7.0, 40.0);
    const FlowField f = rasterize_flow(m, shifted(m, Vec2(3, 4)), 64, 64);
    for (std::size_t k = 0; k < f.flow.size(); ++k)
        if (f.valid[k])
            CHECK((f.flow[k] - Vec2(3, 4)).norm() < 1e-12);
}

TEST_CASE("overlapping triangles resolve to the nearer one")
{
    ScreenMesh near, far;
    for (ScreenMesh* m : {&far, &near}) {
        m->pixels = {Vec2(2, 2), Vec2(30, 2), Vec2(2, 30)};
        m->triangles = {{0, 1, 2}};
        m->regions.assign(3, Region::face);
    }
    near.depths.assign(3, 1.0);
    far.depths.assign(3, 2.0);

    // Both triangles in one mesh, far one listed first and then last.
    for (bool far_first : {true, false}) {
        ScreenMesh both;
        const ScreenMesh& a = far_first ? far : near;
        const ScreenMesh& b = far_first ? near : far;
        both.pixels = a.pixels;
        both.depths = a.depths;
        both.pixels.insert(both.pixels.end(), b.pixels.begin(), b.pixels.end());
        both.depths.insert(both.depths.end(), b.depths.begin(), b.depths.end());
        both.regions.assign(6, Region::face);
        both.triangles = {{0, 1, 2}, {3, 4, 5}};
        ScreenMesh moved = both;
        const std::uint32_t near_base = far_first ? 3 : 0;
        const std::uint32_t far_base = far_first ? 0 : 3;
        for (std::uint32_t v = 0; v < 3; ++v) {
            moved.pixels[near_base + v] += Vec2(1, 0);
            moved.pixels[far_base + v] += Vec2(0, 5);
        }
        const FlowField f = rasterize_flow(both, moved, 32, 32);
        CHECK(valid_count(f) > 100);
        for (std::size_t k = 0; k < f.flow.size(); ++k)
            if (f.valid[k])
                CHECK((f.flow[k] - Vec2(1, 0)).norm() < 1e-12);
    }
}

TEST_CASE("edge ownership covers every pixel exactly once")
{
    // Square whose edges and diagonal pass through pixel centers.
    ScreenMesh sq;
    sq.pixels = {Vec2(0.5, 0.5), Vec2(10.5, 0.5), Vec2(10.5, 10.5), Vec2(0.5, 10.5)};
    sq.depths.assign(4, 1.0);
    sq.regions.assign(4, Region::face);
    std::size_t total = 0;
    for (const Triangle& t : {Triangle{0, 1, 2}, Triangle{0, 2, 3}}) {
        ScreenMesh one = sq;
        one.triangles = {t};
        const Coverage c = rasterize(one, 16, 16);
        for (std::int32_t v : c.triangle)
            total += v >= 0;
    }
    CHECK(total == 100);
}

TEST_CASE("degenerate and behind-camera triangles are skipped")
{
    ScreenMesh m;
    m.pixels = {Vec2(1, 1), Vec2(10, 10), Vec2(20, 20), Vec2(1, 20)};
    m.depths = {1.0, 1.0, 1.0, -1.0};
    m.regions.assign(4, Region::face);
    m.triangles = {{0, 1, 2}, {0, 1, 3}};
    const Coverage c = rasterize(m, 32, 32);
    for (std::int32_t v : c.triangle)
        CHECK(v == -1);
}

TEST_CASE("pixel regions follow the majority vertex label")
{
    ScreenMesh m;
    m.pixels = {Vec2(0, 0), Vec2(40, 0), Vec2(0, 40)};
    m.depths.assign(3, 1.0);
    m.triangles = {{0, 1, 2}};
    m.regions = {Region::nose, Region::eyes, Region::nose};
    FlowField f = rasterize_flow(m, m, 40, 40);
    for (std::size_t k = 0; k < f.region.size(); ++k)
        if (f.valid[k])
            CHECK(f.region[k] == Region::nose);

    m.regions = {Region::nose, Region::eyes, Region::mouth};
    f = rasterize_flow(m, m, 40, 40);
    CHECK(f.region[f.index(1, 1)] == Region::nose);
    CHECK(f.region[f.index(30, 2)] == Region::eyes);
    CHECK(f.region[f.index(2, 30)] == Region::mouth);
}

TEST_CASE("epe examples")
{
    const FlowField gt = constant_field(8, 8, Vec2(1, -1));
    CHECK(epe(gt, gt, RegionSet::all()).value == 0.0);

    const FlowField off = constant_field(8, 8, Vec2(4, 3));
    const EpeResult e = epe(off, gt, RegionSet::all());
    CHECK(e.value == doctest::Approx(5.0));
    CHECK(e.coverage == 1.0);

    FlowField half = gt;
    for (std::size_t k = 0; k < half.flow.size(); k += 2)
        half.flow[k] += Vec2(0, 2);
    CHECK(epe(half, gt, RegionSet::all()).value == doctest::Approx(1.0));
}

TEST_CASE("epe masks, coverage and undefined results")
{
    FlowField gt = constant_field(4, 4, Vec2::Zero());
    for (std::size_t k = 0; k < 8; ++k)
        gt.region[k] = Region::eyes;
    FlowField pred = constant_field(4, 4, Vec2(1, 0));
    pred.valid[0] = 0;
    pred.valid[9] = 0;
    const EpeResult eyes = epe(pred, gt, RegionSet{Region::eyes});
    CHECK(eyes.region_pixels == 8);
    CHECK(eyes.counted == 7);
    CHECK(eyes.coverage == doctest::Approx(7.0 / 8.0));
    CHECK(eyes.value == doctest::Approx(1.0));

    const EpeResult ears = epe(pred, gt, RegionSet{Region::ears});
    CHECK_FALSE(ears.defined);
    CHECK(ears.region_pixels == 0);

    FlowField none = pred;
    std::fill(none.valid.begin(), none.valid.end(), 0);
    const EpeResult e = epe(none, gt, RegionSet::all());
    CHECK_FALSE(e.defined);
    CHECK(e.coverage == 0.0);
    CHECK_THROWS_AS(epe(constant_field(3, 3, Vec2::Zero()), gt, RegionSet::all()), DimensionError);
}

TEST_CASE("epe is symmetric with identical masks")
{
    const auto seq = head_sequence(3, 5);
    const FlowField a = rasterize_flow(seq[0], seq[1], 512, 512);
    const FlowField b = rasterize_flow(seq[0], seq[2], 512, 512);
    CHECK(epe(a, b, RegionSet::all()).value == epe(b, a, RegionSet::all()).value);
}

TEST_CASE("ssme_h and aggregate examples")
{
    CHECK(*ssme_h({2.0, 4.0}) == 3.0);
    CHECK(*ssme_h({0.0, 0.0, 0.0}) == 0.0);
    CHECK(*ssme_h({1.7}) == 1.7);
    CHECK(*ssme_h({std::nullopt, 3.0}) == 3.0);
    CHECK_FALSE(ssme_h({}).has_value());
    CHECK(*ssme_aggregate({2.5, 2.5, 2.5}) == 2.5);
    CHECK(*ssme_aggregate({1.0, 2.0, 3.0}) == 2.0);
    CHECK(*ssme_aggregate({0.4}) == 0.4);
    CHECK(*ssme_aggregate({1.0, std::nullopt}) == 1.0);
}

TEST_CASE("ssme of a tracker against itself is exactly zero")
{
    const auto seq = head_sequence(6, 3);
    SsmeOptions opt;
    opt.horizons = 8; // beyond the sequence length: undefined horizons stay nan
    const SsmeReport r = evaluate_ssme({seq}, {seq}, opt);
    for (std::size_t reg = 0; reg < r.regions.size(); ++reg) {
        for (int h = 1; h <= 5; ++h) {
            REQUIRE(r.ssme[reg][static_cast<std::size_t>(h - 1)].has_value());
            CHECK(*r.ssme[reg][static_cast<std::size_t>(h - 1)] == 0.0);
            CHECK(r.coverage[reg][static_cast<std::size_t>(h - 1)] == 1.0);
        }
        CHECK_FALSE(r.ssme[reg][5].has_value());
        CHECK(*r.aggregate[reg] == 0.0);
    }
    const std::string csv = ssme_csv(r);
    CHECK(csv.rfind("region,h,ssme_px,coverage\n", 0) == 0);
    CHECK(csv.find("face,1,0,1\n") != std::string::npos);
    CHECK(csv.find("face,6,nan,0\n") != std::string::npos);
    CHECK(csv.find("face,mean,0,1\n") != std::string::npos);
}

TEST_CASE("constant screen drift gives ssme_h = h * d")
{
    // Static ground truth; the prediction slides by d pixels per frame.
    const std::vector<ScreenMesh> gt(8, head_sequence(1, 4)[0]);
    const double d = 0.7;
    std::vector<ScreenMesh> pred;
    for (std::size_t t = 0; t < gt.size(); ++t)
        pred.push_back(shifted(gt[t], Vec2(d * static_cast<double>(t), 0.0)));
    SsmeOptions opt;
    opt.horizons = 7;
    const SsmeReport r = evaluate_ssme({gt}, {pred}, opt);
    for (int h = 1; h <= 7; ++h)
        CHECK(std::abs(*r.ssme[0][static_cast<std::size_t>(h - 1)] - h * d) < 1e-9);
}

TEST_CASE("integer screen offsets leave epe unchanged")
{
    const auto seq = head_sequence(2, 6);
    const ScreenMesh gt_t = seq[0], gt_th = seq[1];
    const ScreenMesh pr_th = shifted(seq[1], Vec2(0.4, -0.3));
    const double base = epe(rasterize_flow(gt_t, pr_th, 512, 512), rasterize_flow(gt_t, gt_th, 512, 512), RegionSet::all()).value;
    const Vec2 o(7, -5);
    const double moved = epe(rasterize_flow(shifted(gt_t, o), shifted(pr_th, o), 512, 512),
                             rasterize_flow(shifted(gt_t, o), shifted(gt_th, o), 512, 512), RegionSet::all())
                             .value;
    CHECK(moved == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("epe is consistent across raster resolutions")
{
    // Same scene at 512 and 1024 pixels; flows scale by 2, so EPE/2 is compared.
    const auto lo = head_sequence(2, 7, 1.0);
    const auto hi = head_sequence(2, 7, 2.0);
    const auto wobble = [](const ScreenMesh& m, double s) {
        ScreenMesh out = m;
        for (std::size_t i = 0; i < out.pixels.size(); ++i)
            out.pixels[i] += s * Vec2(std::sin(0.05 * static_cast<double>(i)), std::cos(0.03 * static_cast<double>(i)));
        return out;
    };
    const double e_lo = epe(rasterize_flow(lo[0], wobble(lo[1], 1.0), 512, 512), rasterize_flow(lo[0], lo[1], 512, 512),
                            RegionSet{Region::face, Region::mouth, Region::nose, Region::eyes})
                            .value;
    const double e_hi = epe(rasterize_flow(hi[0], wobble(hi[1], 2.0), 1024, 1024), rasterize_flow(hi[0], hi[1], 1024, 1024),
                            RegionSet{Region::face, Region::mouth, Region::nose, Region::eyes})
                            .value;
    CHECK(std::abs(e_hi / 2.0 - e_lo) / e_lo < 0.05);
}

TEST_CASE("temporal gaussian filter")
{
    ScreenTracks tracks(15, ScreenTracks::value_type::Zero(2, 2));
    for (std::size_t t = 0; t < tracks.size(); ++t)
        tracks[t].row(0) << 3.0, -1.0;
    tracks[7](1, 0) = 1.0; // far enough from the ends that no renormalized window sees it

    CHECK(temporal_gaussian_filter(tracks, 0.0) == tracks);

    const ScreenTracks s = temporal_gaussian_filter(tracks, 1.0);
    double mass = 0.0;
    for (std::size_t t = 0; t < s.size(); ++t) {
        CHECK((s[t].row(0) - Eigen::RowVector2d(3.0, -1.0)).norm() < 1e-12);
        mass += s[t](1, 0);
    }
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s[7](1, 0) < 1.0);
    CHECK(s[6](1, 0) == doctest::Approx(s[8](1, 0)));
    CHECK(s[3](1, 0) == 0.0);
    CHECK_THROWS_AS(temporal_gaussian_filter(tracks, -1.0), ConfigError);
}

TEST_CASE("ssme rejects mismatched inputs")
{
    const auto seq = head_sequence(3, 1);
    std::vector<ScreenMesh> shorter(seq.begin(), seq.begin() + 2);
    CHECK_THROWS_AS(evaluate_ssme({seq}, {shorter}, SsmeOptions{}), DimensionError);
}
