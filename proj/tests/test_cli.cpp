#include "oracle.hpp"

#include "facefit/io.hpp"

#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <regex>
#include <sstream>
#include <string>

using namespace facefit;
namespace fs = std::filesystem;

namespace {

struct Run
{
    int code = -1;
    std::string out;
};

Run run(const std::string& args)
{
    const std::string cmd = std::string(FACEFIT_CLI_PATH) + " " + args + " 2>/dev/null";
    Run r;
    FILE* p = popen(cmd.c_str(), "r");
    REQUIRE(p != nullptr);
    std::array<char, 4096> buf{};
    std::size_t n = 0;
    while ((n = std::fread(buf.data(), 1, buf.size(), p)) > 0)
        r.out.append(buf.data(), n);
    const int status = pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

struct Scratch
{
    fs::path dir;
    Scratch()
    {
        dir = fs::temp_directory_path() / ("facefit_cli_" + std::to_string(::getpid()));
        fs::create_directories(dir);
    }
    ~Scratch() { fs::remove_all(dir); }
    std::string operator/(const std::string& name) const { return (dir / name).string(); }
};

double field(const std::string& text, const std::string& key)
{
    const std::regex re(key + "=([-+0-9.eEnan]+)");
    std::smatch m;
    REQUIRE(std::regex_search(text, m, re));
    return std::stod(m[1].str());
}

// Planar grid facing an identity camera at depth z; frame t is shifted so its
// image moves by `drift` pixels along x per frame.
SequenceDataset drifting_plane(int frames, double drift, double z = 1.0)
{
    SequenceDataset d;
    d.cameras.push_back(Camera::centered(RigidTransform{}, 500.0, 512, 512));
    d.frame_count = frames;
    MeshSequence ms;
    const int n = 20;
    Vertices base((n + 1) * (n + 1), 3);
    for (int j = 0; j <= n; ++j)
        for (int i = 0; i <= n; ++i)
            base.row(j * (n + 1) + i) << -0.2 + 0.4 * i / n, -0.2 + 0.4 * j / n, z;
    const auto id = [n](int i, int j) { return static_cast<std::uint32_t>(j * (n + 1) + i); };
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
            ms.triangles.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
            ms.triangles.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
        }
    ms.regions.assign(static_cast<std::size_t>(base.rows()), Region::face);
    for (int t = 0; t < frames; ++t) {
        Vertices v = base;
        v.col(0).array() += drift * t * z / 500.0;
        ms.frames.push_back(v);
    }
    d.meshes = std::move(ms);
    return d;
}

} // namespace

TEST_CASE("synth, fit and evaluation outputs are byte identical across runs")
{
    Scratch s;
    const std::string synth = "synth --frames 6 --seed 7 --noise 0.5 --occlusion 0.1 --meshes --mica";
    REQUIRE(run(synth + " --out " + s / "a.fts" + " --truth " + s / "a.ftp" + " --write-model " + s / "m.ftm").code == 0);
    REQUIRE(run(synth + " --out " + s / "b.fts" + " --truth " + s / "b.ftp" + " --write-model " + s / "n.ftm").code == 0);
    CHECK(read_file(s / "a.fts") == read_file(s / "b.fts"));
    CHECK(read_file(s / "a.ftp") == read_file(s / "b.ftp"));
    CHECK(read_file(s / "m.ftm") == read_file(s / "n.ftm"));

    const std::string cfg = s / "cfg.json";
    write_file_atomic(cfg, R"({"max_iters": 300})");
    const std::string fit = "fit --model " + s / "m.ftm" + " --sequence " + s / "a.fts" + " --config " + cfg;
    const Run f1 = run(fit + " --out " + s / "f1.ftp");
    const Run f2 = run(fit + " --out " + s / "f2.ftp" + " --trace " + s / "f2.csv");
    REQUIRE(f1.code == 0);
    REQUIRE(f2.code == 0);
    CHECK(f1.out == f2.out);
    CHECK(read_file(s / "f1.ftp") == read_file(s / "f2.ftp"));
    CHECK(read_file(s / "f1.ftp.trace.csv") == read_file(s / "f2.csv"));

    const std::string ev = "eval-ssme --gt-meshes " + s / "a.fts" + " --pred-params " + s / "f1.ftp" + " --model " +
                           s / "m.ftm" + " --horizons 4 --resolution 256";
    REQUIRE(run(ev + " --out " + s / "e1.csv").code == 0);
    REQUIRE(run(ev + " --out " + s / "e2.csv").code == 0);
    CHECK(read_file(s / "e1.csv") == read_file(s / "e2.csv"));

    const Run g1 = run("gradcheck --seed 3 --coords 40");
    const Run g2 = run("gradcheck --seed 3 --coords 40");
    CHECK(g1.code == 0);
    CHECK(g1.out == g2.out);
}

TEST_CASE("fit recovers a noiseless fixture")
{
    Scratch s;
    REQUIRE(run("synth --frames 10 --seed 2 --out " + s / "q.fts" + " --write-model " + s / "m.ftm").code == 0);
    const Run r = run("fit --model " + s / "m.ftm" + " --sequence " + s / "q.fts" + " --out " + s / "p.ftp");
    REQUIRE(r.code == 0);
    CHECK(field(r.out, "rms_px") < 1e-2);
    CHECK(r.out.find("final total=") != std::string::npos);
    CHECK(fs::exists(s / "p.ftp.trace.csv"));
    const TrackingParams p = load_params(s / "p.ftp");
    CHECK(p.frames() == 10);
}

TEST_CASE("usage and data errors map to exit codes")
{
    Scratch s;
    REQUIRE(run("synth --frames 3 --out " + s / "q.fts" + " --write-model " + s / "m.ftm").code == 0);
    CHECK(run("fit --sequence " + s / "q.fts" + " --out " + s / "p.ftp").code == 2);
    CHECK(run("").code == 2);
    CHECK(run("frobnicate").code == 2);
    CHECK(run("fit --model " + s / "missing.ftm" + " --sequence " + s / "q.fts" + " --out " + s / "p.ftp").code == 2);

    write_file_atomic(s / "bad.json", R"({"lambda_tmep": 1})");
    CHECK(run("fit --model " + s / "m.ftm" + " --sequence " + s / "q.fts" + " --config " + s / "bad.json" +
              " --out " + s / "p.ftp")
              .code == 1);
    write_file_atomic(s / "broken.json", "{");
    CHECK(run("fit --model " + s / "m.ftm" + " --sequence " + s / "q.fts" + " --config " + s / "broken.json" +
              " --out " + s / "p.ftp")
              .code == 1);
    CHECK_FALSE(fs::exists(s / "p.ftp"));

    // A model container where a sequence is expected.
    CHECK(run("fit --model " + s / "m.ftm" + " --sequence " + s / "m.ftm" + " --out " + s / "p.ftp").code == 1);
}

TEST_CASE("thread cap does not change results")
{
    Scratch s;
    REQUIRE(run("synth --frames 4 --noise 1 --out " + s / "q.fts" + " --write-model " + s / "m.ftm").code == 0);
    write_file_atomic(s / "cfg.json", R"({"max_iters": 50})");
    const std::string fit = "fit --model " + s / "m.ftm" + " --sequence " + s / "q.fts" + " --config " + s / "cfg.json";
    const std::string cli = FACEFIT_CLI_PATH;
    REQUIRE(std::system(("FACEFIT_THREADS=1 " + cli + " " + fit + " --out " + s / "a.ftp >/dev/null").c_str()) == 0);
    REQUIRE(std::system(("FACEFIT_THREADS=3 " + cli + " " + fit + " --out " + s / "b.ftp >/dev/null").c_str()) == 0);
    CHECK(read_file(s / "a.ftp") == read_file(s / "b.ftp"));
    CHECK(std::system(("FACEFIT_THREADS=0 " + cli + " info " + s / "m.ftm" + " >/dev/null 2>&1").c_str()) != 0);
}

TEST_CASE("gradcheck passes and fails with a sabotaged gradient")
{
    const Run ok = run("gradcheck --seed 5");
    CHECK(ok.code == 0);
    std::smatch m;
    REQUIRE(std::regex_search(ok.out, m, std::regex("\nmax_rel_error ([-+0-9.eE]+) ")));
    CHECK(std::stod(m[1].str()) < 1e-4);
    for (const char* term : {"alignment", "flame", "temporal", "mica", "deform", "total"})
        CHECK(ok.out.find(std::string(term) + " max_rel_error=") != std::string::npos);
    const Run bad = run("gradcheck --seed 5 --sabotage-gradient 1.001");
    CHECK(bad.code == 1);
}

TEST_CASE("eval-ssme self comparison, drift and frame mismatch")
{
    Scratch s;
    write_container(s / "gt.fts", sequence_to_container(drifting_plane(40, 0.0)));
    write_container(s / "drift.fts", sequence_to_container(drifting_plane(40, 1.0)));
    write_container(s / "short.fts", sequence_to_container(drifting_plane(12, 0.0)));

    const Run self = run("eval-ssme --gt-meshes " + s / "gt.fts" + " --pred-meshes " + s / "gt.fts" + " --out " + s / "self.csv");
    REQUIRE(self.code == 0);
    std::istringstream rows(read_file(s / "self.csv"));
    std::string line;
    std::getline(rows, line);
    CHECK(line == "region,h,ssme_px,coverage");
    int face_rows = 0;
    while (std::getline(rows, line))
        if (line.rfind("face,", 0) == 0) {
            ++face_rows;
            CHECK(line.substr(line.find(',', 5) + 1, 2) == "0,");
        }
    CHECK(face_rows == 31); // h = 1..30 default plus the mean row

    REQUIRE(run("eval-ssme --gt-meshes " + s / "gt.fts" + " --pred-meshes " + s / "drift.fts" + " --out " + s / "d.csv").code == 0);
    std::istringstream drows(read_file(s / "d.csv"));
    std::getline(drows, line);
    int checked = 0;
    while (std::getline(drows, line)) {
        if (line.rfind("face,", 0) != 0 || line.find(",mean,") != std::string::npos)
            continue;
        std::istringstream cells(line);
        std::string region, h, value;
        std::getline(cells, region, ',');
        std::getline(cells, h, ',');
        std::getline(cells, value, ',');
        CHECK(std::abs(std::stod(value) - std::stod(h)) < 0.1);
        ++checked;
    }
    CHECK(checked == 30);

    CHECK(run("eval-ssme --gt-meshes " + s / "gt.fts" + " --pred-meshes " + s / "short.fts").code == 1);
    CHECK(run("eval-ssme --gt-meshes " + s / "gt.fts").code == 2);
}

TEST_CASE("eval-cd on identical, rigidly offset and unlabeled inputs")
{
    Scratch s;
    const BlendshapeModel model = oracle::mini_model();
    TriangleMesh gt{model.template_vertices, model.triangles, model.region_labels, {}};
    write_container(s / "gt.ftm", mesh_to_container(gt));
    write_file_atomic(s / "kp.json", R"({"keypoints": [0, 25, 50, 75, 100, 125, 150]})");

    const Run same = run("eval-cd --gt " + s / "gt.ftm" + " --pred " + s / "gt.ftm" + " --keypoints " + s / "kp.json" +
                         " --out " + s / "same.csv");
    REQUIRE(same.code == 0);
    std::istringstream rows(read_file(s / "same.csv"));
    std::string line;
    std::getline(rows, line);
    while (std::getline(rows, line))
        CHECK(line.substr(line.find(',', line.find(',') + 1)) == ",0,0,0");

    Similarity offset;
    offset.rigid.rotation = Vec3(0.1, -0.2, 0.15);
    offset.rigid.translation = Vec3(0.03, -0.02, 0.04);
    TriangleMesh moved = gt;
    moved.vertices = transform_points(offset, gt.vertices);
    write_container(s / "moved.ftm", mesh_to_container(moved));
    const Run rig = run("eval-cd --gt " + s / "gt.ftm" + " --pred " + s / "moved.ftm" + " --keypoints " + s / "kp.json" +
                        " --out " + s / "rig.csv");
    REQUIRE(rig.code == 0);
    const std::string csv = read_file(s / "rig.csv");
    const std::string all = csv.substr(csv.find("all,"));
    std::istringstream cells(all);
    std::string region, count, median, mean;
    std::getline(cells, region, ',');
    std::getline(cells, count, ',');
    std::getline(cells, median, ',');
    std::getline(cells, mean, ',');
    CHECK(std::stod(mean) < 1e-3); // millimeters

    CHECK(run("eval-cd --gt " + s / "gt.ftm" + " --pred " + s / "moved.ftm" + " --keypoints " + s / "none.json").code == 2);
    CHECK(run("eval-cd --gt " + s / "gt.ftm" + " --pred " + s / "moved.ftm").code == 2);
    write_file_atomic(s / "short.json", R"({"keypoints": [0, 1]})");
    CHECK(run("eval-cd --gt " + s / "gt.ftm" + " --pred " + s / "moved.ftm" + " --keypoints " + s / "short.json").code == 1);
}

TEST_CASE("info lists chunks")
{
    Scratch s;
    REQUIRE(run("synth --frames 2 --out " + s / "q.fts").code == 0);
    const Run r = run("info " + s / "q.fts");
    CHECK(r.code == 0);
    CHECK(r.out.rfind("FTS1 version 1", 0) == 0);
    CHECK(r.out.find("obs_sigma f64") != std::string::npos);
    write_file_atomic(s / "junk.bin", "not a container");
    CHECK(run("info " + s / "junk.bin").code == 1);
}
