#include "facefit/io.hpp"

#include "facefit/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include <unistd.h>

namespace facefit {

using json = nlohmann::ordered_json;

std::size_t dtype_size(DType t)
{
    switch (t) {
    case DType::f32: return 4;
    case DType::f64: return 8;
    case DType::u32: return 4;
    case DType::u8: return 1;
    }
    throw FormatError("unknown dtype");
}

std::string_view dtype_name(DType t)
{
    switch (t) {
    case DType::f32: return "f32";
    case DType::f64: return "f64";
    case DType::u32: return "u32";
    case DType::u8: return "u8";
    }
    return "?";
}

namespace {

template <class U>
void put_le(std::string& out, U v)
{
    for (std::size_t k = 0; k < sizeof(U); ++k)
        out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * k)) & 0xffu));
}

template <class U>
U get_le(const char* p)
{
    std::uint64_t v = 0;
    for (std::size_t k = 0; k < sizeof(U); ++k)
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[k])) << (8 * k);
    return static_cast<U>(v);
}

std::uint64_t product(const std::vector<std::uint64_t>& shape)
{
    std::uint64_t n = 1;
    for (std::uint64_t d : shape) {
        if (d != 0 && n > std::numeric_limits<std::uint64_t>::max() / d)
            throw FormatError("array shape overflows");
        n *= d;
    }
    return n;
}

std::string shape_string(const std::vector<std::uint64_t>& shape)
{
    std::string s = "[";
    for (std::size_t k = 0; k < shape.size(); ++k)
        s += (k ? ", " : "") + std::to_string(shape[k]);
    return s + "]";
}

Chunk make(std::string name, DType dtype, std::vector<std::uint64_t> shape)
{
    Chunk c;
    c.name = std::move(name);
    c.dtype = dtype;
    c.shape = std::move(shape);
    c.payload.reserve(product(c.shape) * dtype_size(dtype));
    return c;
}

void require_finite(const Chunk& c, double v)
{
    if (!std::isfinite(v))
        throw NumericError("chunk '" + c.name + "': non-finite value");
}

} // namespace

std::uint64_t Chunk::element_count() const
{
    return product(shape);
}

Chunk Chunk::f64(std::string name, std::vector<std::uint64_t> shape, const double* data)
{
    Chunk c = make(std::move(name), DType::f64, std::move(shape));
    for (std::uint64_t k = 0; k < c.element_count(); ++k) {
        require_finite(c, data[k]);
        put_le(c.payload, std::bit_cast<std::uint64_t>(data[k]));
    }
    return c;
}

Chunk Chunk::f32(std::string name, std::vector<std::uint64_t> shape, const double* data)
{
    Chunk c = make(std::move(name), DType::f32, std::move(shape));
    for (std::uint64_t k = 0; k < c.element_count(); ++k) {
        const auto f = static_cast<float>(data[k]);
        require_finite(c, f);
        put_le(c.payload, std::bit_cast<std::uint32_t>(f));
    }
    return c;
}

Chunk Chunk::u32(std::string name, std::vector<std::uint64_t> shape, const std::uint32_t* data)
{
    Chunk c = make(std::move(name), DType::u32, std::move(shape));
    for (std::uint64_t k = 0; k < c.element_count(); ++k)
        put_le(c.payload, data[k]);
    return c;
}

Chunk Chunk::u8(std::string name, std::vector<std::uint64_t> shape, const std::uint8_t* data)
{
    Chunk c = make(std::move(name), DType::u8, std::move(shape));
    c.payload.assign(reinterpret_cast<const char*>(data), product(c.shape));
    return c;
}

Chunk Chunk::text(std::string name, std::string_view text)
{
    return u8(std::move(name), {text.size()}, reinterpret_cast<const std::uint8_t*>(text.data()));
}

std::vector<double> Chunk::to_f64() const
{
    std::vector<double> out(element_count());
    if (dtype == DType::f64) {
        for (std::size_t k = 0; k < out.size(); ++k)
            out[k] = std::bit_cast<double>(get_le<std::uint64_t>(payload.data() + 8 * k));
    } else if (dtype == DType::f32) {
        for (std::size_t k = 0; k < out.size(); ++k)
            out[k] = std::bit_cast<float>(get_le<std::uint32_t>(payload.data() + 4 * k));
    } else {
        throw FormatError("chunk '" + name + "': expected a floating dtype, found " + std::string(dtype_name(dtype)));
    }
    return out;
}

std::vector<std::uint32_t> Chunk::to_u32() const
{
    if (dtype != DType::u32)
        throw FormatError("chunk '" + name + "': expected u32, found " + std::string(dtype_name(dtype)));
    std::vector<std::uint32_t> out(element_count());
    for (std::size_t k = 0; k < out.size(); ++k)
        out[k] = get_le<std::uint32_t>(payload.data() + 4 * k);
    return out;
}

std::vector<std::uint8_t> Chunk::to_u8() const
{
    if (dtype != DType::u8)
        throw FormatError("chunk '" + name + "': expected u8, found " + std::string(dtype_name(dtype)));
    return {payload.begin(), payload.end()};
}

std::string Chunk::to_text() const
{
    to_u8();
    return payload;
}

const Chunk* Container::find(std::string_view name) const
{
    for (const Chunk& c : chunks)
        if (c.name == name)
            return &c;
    return nullptr;
}

const Chunk& Container::get(std::string_view name) const
{
    if (const Chunk* c = find(name))
        return *c;
    throw FormatError("missing chunk '" + std::string(name) + "'");
}

void Container::put(Chunk chunk)
{
    for (Chunk& c : chunks)
        if (c.name == chunk.name) {
            c = std::move(chunk);
            return;
        }
    chunks.push_back(std::move(chunk));
}

std::string encode_container(const Container& c)
{
    std::string out(c.magic.data(), 4);
    put_le(out, c.version);
    put_le(out, static_cast<std::uint32_t>(c.chunks.size()));
    for (const Chunk& ch : c.chunks) {
        if (ch.name.size() > std::numeric_limits<std::uint16_t>::max())
            throw FormatError("chunk name too long");
        if (ch.shape.size() > 255)
            throw FormatError("chunk '" + ch.name + "': rank above 255");
        if (ch.payload.size() != ch.element_count() * dtype_size(ch.dtype))
            throw FormatError("chunk '" + ch.name + "': payload does not match its shape");
        put_le(out, static_cast<std::uint16_t>(ch.name.size()));
        out += ch.name;
        put_le(out, static_cast<std::uint8_t>(ch.dtype));
        put_le(out, static_cast<std::uint8_t>(ch.shape.size()));
        for (std::uint64_t d : ch.shape)
            put_le(out, d);
        put_le(out, static_cast<std::uint64_t>(ch.payload.size()));
        out += ch.payload;
    }
    return out;
}

namespace {

class Reader
{
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    const char* take(std::size_t n, const std::string& what)
    {
        if (bytes_.size() - pos_ < n)
            throw FormatError("truncated " + what + ": expected " + std::to_string(n) + " bytes, only " +
                              std::to_string(bytes_.size() - pos_) + " available");
        const char* p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }

    template <class U>
    U read(const std::string& what)
    {
        return get_le<U>(take(sizeof(U), what));
    }

    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

} // namespace

Container decode_container(std::string_view bytes)
{
    Reader in(bytes);
    Container c;
    std::memcpy(c.magic.data(), in.take(4, "header"), 4);
    if (c.magic != kModelMagic && c.magic != kSequenceMagic && c.magic != kParamsMagic)
        throw FormatError("bad magic '" + std::string(c.magic.data(), 4) + "'");
    c.version = in.read<std::uint32_t>("header");
    if (c.version != 1)
        throw FormatError("unsupported container version " + std::to_string(c.version));
    const auto count = in.read<std::uint32_t>("header");
    for (std::uint32_t k = 0; k < count; ++k) {
        const std::string where = "chunk #" + std::to_string(k);
        const auto name_len = in.read<std::uint16_t>(where + " header");
        Chunk ch;
        ch.name.assign(in.take(name_len, where + " name"), name_len);
        const std::string label = "chunk '" + ch.name + "'";
        const auto dtype = in.read<std::uint8_t>(label + " header");
        if (dtype > 3)
            throw FormatError(label + ": unknown dtype " + std::to_string(dtype));
        ch.dtype = static_cast<DType>(dtype);
        const auto rank = in.read<std::uint8_t>(label + " header");
        for (std::uint8_t r = 0; r < rank; ++r)
            ch.shape.push_back(in.read<std::uint64_t>(label + " shape"));
        const auto declared = in.read<std::uint64_t>(label + " header");
        const std::uint64_t expected = product(ch.shape) * dtype_size(ch.dtype);
        if (declared != expected)
            throw FormatError(label + ": declares " + std::to_string(declared) + " payload bytes but shape " + shape_string(ch.shape) +
                              " of " + std::string(dtype_name(ch.dtype)) + " needs " + std::to_string(expected));
        if (declared > in.remaining())
            throw FormatError("truncated " + label + ": expected " + std::to_string(declared) + " payload bytes, only " +
                              std::to_string(in.remaining()) + " available");
        ch.payload.assign(in.take(declared, label), declared);
        if (ch.dtype == DType::f32 || ch.dtype == DType::f64)
            for (double v : ch.to_f64())
                require_finite(ch, v);
        if (c.find(ch.name))
            throw FormatError("duplicate chunk '" + ch.name + "'");
        c.chunks.push_back(std::move(ch));
    }
    if (in.remaining() != 0)
        throw FormatError(std::to_string(in.remaining()) + " trailing bytes after the last chunk");
    return c;
}

Container merge_unknown_chunks(Container fresh, const Container& original)
{
    for (const Chunk& c : original.chunks)
        if (!fresh.find(c.name))
            fresh.chunks.push_back(c);
    return fresh;
}

std::string read_file(const std::filesystem::path& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw Error("cannot open " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes)
{
    std::filesystem::path tmp = path;
    tmp += ".tmp-" + std::to_string(::getpid());
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f)
            throw Error("cannot write " + path.string());
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        f.close();
        if (!f) {
            std::error_code ec;
            std::filesystem::remove(tmp, ec);
            throw Error("cannot write " + path.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw Error("cannot write " + path.string() + ": " + ec.message());
    }
}

Container read_container(const std::filesystem::path& path)
{
    try {
        return decode_container(read_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void write_container(const std::filesystem::path& path, const Container& c)
{
    write_file_atomic(path, encode_container(c));
}

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class Derived>
Chunk matrix_chunk(const std::string& name, const Eigen::MatrixBase<Derived>& m, bool f32 = false)
{
    const RowMatrix r = m;
    const std::vector<std::uint64_t> shape{static_cast<std::uint64_t>(r.rows()), static_cast<std::uint64_t>(r.cols())};
    return f32 ? Chunk::f32(name, shape, r.data()) : Chunk::f64(name, shape, r.data());
}

Chunk vector_chunk(const std::string& name, const Eigen::VectorXd& v)
{
    return Chunk::f64(name, {static_cast<std::uint64_t>(v.size())}, v.data());
}

void expect_rank(const Chunk& c, std::size_t rank)
{
    if (c.shape.size() != rank)
        throw FormatError("chunk '" + c.name + "': expected rank " + std::to_string(rank) + ", found shape " + shape_string(c.shape));
}

void expect_dim(const Chunk& c, std::size_t axis, std::uint64_t value)
{
    if (c.shape.at(axis) != value)
        throw FormatError("chunk '" + c.name + "': dimension " + std::to_string(axis) + " is " + std::to_string(c.shape[axis]) +
                          ", expected " + std::to_string(value));
}

RowMatrix matrix_from(const Chunk& c)
{
    expect_rank(c, 2);
    const std::vector<double> v = c.to_f64();
    RowMatrix m(static_cast<Eigen::Index>(c.shape[0]), static_cast<Eigen::Index>(c.shape[1]));
    std::copy(v.begin(), v.end(), m.data());
    return m;
}

Vertices vertices_from(const Chunk& c)
{
    const RowMatrix m = matrix_from(c);
    expect_dim(c, 1, 3);
    return m;
}

Eigen::VectorXd vector_from(const Chunk& c)
{
    expect_rank(c, 1);
    const std::vector<double> v = c.to_f64();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Chunk triangles_chunk(const std::string& name, const Triangles& t)
{
    std::vector<std::uint32_t> flat;
    flat.reserve(3 * t.size());
    for (const Triangle& tri : t)
        flat.insert(flat.end(), tri.begin(), tri.end());
    return Chunk::u32(name, {t.size(), 3}, flat.data());
}

Triangles triangles_from(const Chunk& c)
{
    expect_rank(c, 2);
    expect_dim(c, 1, 3);
    const std::vector<std::uint32_t> flat = c.to_u32();
    Triangles t(c.shape[0]);
    for (std::size_t k = 0; k < t.size(); ++k)
        t[k] = {flat[3 * k], flat[3 * k + 1], flat[3 * k + 2]};
    return t;
}

Chunk regions_chunk(const std::string& name, const std::vector<Region>& r)
{
    std::vector<std::uint8_t> raw(r.size());
    for (std::size_t k = 0; k < r.size(); ++k)
        raw[k] = static_cast<std::uint8_t>(r[k]);
    return Chunk::u8(name, {r.size()}, raw.data());
}

std::vector<Region> regions_from(const Chunk& c)
{
    expect_rank(c, 1);
    std::vector<Region> out;
    for (std::uint8_t v : c.to_u8()) {
        if (v >= kRegionCount)
            throw FormatError("chunk '" + c.name + "': invalid region label " + std::to_string(v));
        out.push_back(static_cast<Region>(v));
    }
    return out;
}

void put_cameras(Container& c, const std::vector<Camera>& cameras)
{
    const std::size_t n = cameras.size();
    RowMatrix ext(static_cast<Eigen::Index>(n), 6), intr(static_cast<Eigen::Index>(n), 3);
    std::vector<std::uint32_t> size(2 * n);
    std::vector<std::uint8_t> calibrated(n);
    for (std::size_t k = 0; k < n; ++k) {
        const Camera& cam = cameras[k];
        const auto i = static_cast<Eigen::Index>(k);
        ext.row(i) << cam.extrinsics.rotation.transpose(), cam.extrinsics.translation.transpose();
        intr.row(i) << cam.focal, cam.principal_point.x(), cam.principal_point.y();
        size[2 * k] = static_cast<std::uint32_t>(cam.image_size[0]);
        size[2 * k + 1] = static_cast<std::uint32_t>(cam.image_size[1]);
        calibrated[k] = cam.calibrated ? 1 : 0;
    }
    c.put(matrix_chunk("camera_extrinsics", ext));
    c.put(matrix_chunk("camera_intrinsics", intr));
    c.put(Chunk::u32("camera_image_size", {n, 2}, size.data()));
    c.put(Chunk::u8("camera_calibrated", {n}, calibrated.data()));
}

std::vector<Camera> cameras_from(const Container& c)
{
    const RowMatrix ext = matrix_from(c.get("camera_extrinsics"));
    expect_dim(c.get("camera_extrinsics"), 1, 6);
    const RowMatrix intr = matrix_from(c.get("camera_intrinsics"));
    expect_dim(c.get("camera_intrinsics"), 1, 3);
    const Chunk& size_chunk = c.get("camera_image_size");
    expect_rank(size_chunk, 2);
    expect_dim(size_chunk, 1, 2);
    const std::vector<std::uint32_t> size = size_chunk.to_u32();
    const std::vector<std::uint8_t> calibrated = c.get("camera_calibrated").to_u8();
    const auto n = static_cast<std::size_t>(ext.rows());
    if (static_cast<std::size_t>(intr.rows()) != n || size_chunk.shape[0] != n || calibrated.size() != n)
        throw FormatError("camera chunks disagree on the camera count");
    std::vector<Camera> cams(n);
    for (std::size_t k = 0; k < n; ++k) {
        const auto i = static_cast<Eigen::Index>(k);
        Camera& cam = cams[k];
        cam.extrinsics.rotation = ext.row(i).head<3>().transpose();
        cam.extrinsics.translation = ext.row(i).tail<3>().transpose();
        cam.focal = intr(i, 0);
        cam.principal_point = Vec2(intr(i, 1), intr(i, 2));
        cam.image_size = {static_cast<int>(size[2 * k]), static_cast<int>(size[2 * k + 1])};
        cam.calibrated = calibrated[k] != 0;
        cam.validate();
    }
    return cams;
}

void expect_magic(const Container& c, const std::array<char, 4>& magic)
{
    if (c.magic != magic)
        throw FormatError("expected a " + std::string(magic.data(), 4) + " container, found " + std::string(c.magic.data(), 4));
}

} // namespace

std::vector<Camera> cameras_from_container(const Container& c)
{
    return cameras_from(c);
}

Container model_to_container(const BlendshapeModel& model)
{
    model.validate();
    Container c;
    c.magic = kModelMagic;
    c.put(matrix_chunk("template", model.template_vertices));
    c.put(matrix_chunk("identity_basis", model.identity_basis));
    c.put(matrix_chunk("expression_basis", model.expression_basis));
    c.put(matrix_chunk("joint_regressor", model.joint_regressor));
    c.put(matrix_chunk("skin_weights", model.skin_weights));
    c.put(Chunk::u32("joint_parents", {model.joint_parents.size()}, model.joint_parents.data()));
    c.put(vector_chunk("vertex_weights", model.vertex_weights));
    c.put(regions_chunk("region_labels", model.region_labels));
    c.put(matrix_chunk("uv_coords", model.uv_coords));
    c.put(triangles_chunk("triangles", model.triangles));
    return c;
}

BlendshapeModel model_from_container(const Container& c)
{
    expect_magic(c, kModelMagic);
    BlendshapeModel m;
    m.template_vertices = vertices_from(c.get("template"));
    m.identity_basis = matrix_from(c.get("identity_basis"));
    m.expression_basis = matrix_from(c.get("expression_basis"));
    m.joint_regressor = matrix_from(c.get("joint_regressor"));
    m.skin_weights = matrix_from(c.get("skin_weights"));
    m.joint_parents = c.get("joint_parents").to_u32();
    m.vertex_weights = vector_from(c.get("vertex_weights"));
    m.region_labels = regions_from(c.get("region_labels"));
    m.uv_coords = matrix_from(c.get("uv_coords"));
    m.triangles = triangles_from(c.get("triangles"));
    m.validate();
    return m;
}

Container sequence_to_container(const SequenceDataset& dataset, bool f32_observations)
{
    Container c;
    c.magic = kSequenceMagic;
    const auto frames = static_cast<std::uint32_t>(dataset.frame_count);
    c.put(Chunk::u32("frame_count", {1}, &frames));
    put_cameras(c, dataset.cameras);
    const std::size_t n = dataset.observations.size();
    std::vector<std::uint32_t> index(3 * n);
    RowMatrix mu(static_cast<Eigen::Index>(n), 2);
    Eigen::VectorXd sigma(static_cast<Eigen::Index>(n));
    for (std::size_t k = 0; k < n; ++k) {
        const AlignmentObservation& o = dataset.observations[k];
        index[3 * k] = o.vertex;
        index[3 * k + 1] = o.camera;
        index[3 * k + 2] = o.frame;
        mu.row(static_cast<Eigen::Index>(k)) = o.mu.transpose();
        sigma(static_cast<Eigen::Index>(k)) = o.sigma;
    }
    c.put(Chunk::u32("obs_index", {n, 3}, index.data()));
    c.put(matrix_chunk("obs_mu", mu, f32_observations));
    c.put(f32_observations ? Chunk::f32("obs_sigma", {n}, sigma.data()) : vector_chunk("obs_sigma", sigma));
    if (dataset.mica_template)
        c.put(matrix_chunk("mica_template", *dataset.mica_template));
    if (dataset.meshes) {
        const MeshSequence& ms = *dataset.meshes;
        ms.validate();
        const std::uint64_t nv = ms.frames.empty() ? 0 : static_cast<std::uint64_t>(ms.frames[0].rows());
        std::vector<double> flat;
        flat.reserve(ms.frames.size() * nv * 3);
        for (const Vertices& f : ms.frames)
            flat.insert(flat.end(), f.data(), f.data() + f.size());
        c.put(Chunk::f64("mesh_vertices", {ms.frames.size(), nv, 3}, flat.data()));
        c.put(triangles_chunk("mesh_triangles", ms.triangles));
        if (!ms.regions.empty())
            c.put(regions_chunk("mesh_regions", ms.regions));
    }
    return c;
}

SequenceDataset sequence_from_container(const Container& c)
{
    expect_magic(c, kSequenceMagic);
    SequenceDataset d;
    const std::vector<std::uint32_t> frames = c.get("frame_count").to_u32();
    if (frames.size() != 1)
        throw FormatError("chunk 'frame_count': expected one value");
    d.frame_count = static_cast<int>(frames[0]);
    d.cameras = cameras_from(c);

    const Chunk& index_chunk = c.get("obs_index");
    expect_rank(index_chunk, 2);
    expect_dim(index_chunk, 1, 3);
    const std::vector<std::uint32_t> index = index_chunk.to_u32();
    const RowMatrix mu = matrix_from(c.get("obs_mu"));
    expect_dim(c.get("obs_mu"), 1, 2);
    const Eigen::VectorXd sigma = vector_from(c.get("obs_sigma"));
    const std::size_t n = index_chunk.shape[0];
    if (static_cast<std::size_t>(mu.rows()) != n || static_cast<std::size_t>(sigma.size()) != n)
        throw FormatError("observation chunks disagree on the observation count");
    d.observations.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        AlignmentObservation& o = d.observations[k];
        o.vertex = index[3 * k];
        o.camera = index[3 * k + 1];
        o.frame = index[3 * k + 2];
        o.mu = mu.row(static_cast<Eigen::Index>(k)).transpose();
        o.sigma = sigma(static_cast<Eigen::Index>(k));
        if (!(o.sigma > 0.0))
            throw FormatError("chunk 'obs_sigma': sigma must be positive (entry " + std::to_string(k) + ")");
        if (o.camera >= d.cameras.size() || o.frame >= frames[0])
            throw FormatError("chunk 'obs_index': camera or frame index out of range (entry " + std::to_string(k) + ")");
    }
    if (const Chunk* t = c.find("mica_template"))
        d.mica_template = vertices_from(*t);
    if (const Chunk* mv = c.find("mesh_vertices")) {
        expect_rank(*mv, 3);
        expect_dim(*mv, 2, 3);
        const std::vector<double> flat = mv->to_f64();
        MeshSequence ms;
        const auto nv = static_cast<Eigen::Index>(mv->shape[1]);
        for (std::uint64_t f = 0; f < mv->shape[0]; ++f) {
            Vertices v(nv, 3);
            std::copy(flat.begin() + static_cast<std::ptrdiff_t>(f * nv * 3), flat.begin() + static_cast<std::ptrdiff_t>((f + 1) * nv * 3),
                      v.data());
            ms.frames.push_back(std::move(v));
        }
        ms.triangles = triangles_from(c.get("mesh_triangles"));
        if (const Chunk* r = c.find("mesh_regions"))
            ms.regions = regions_from(*r);
        ms.validate();
        d.meshes = std::move(ms);
    }
    return d;
}

Container params_to_container(const TrackingParams& params)
{
    Container c;
    c.magic = kParamsMagic;
    c.put(vector_chunk("beta", params.beta));
    c.put(matrix_chunk("phi", params.phi));
    c.put(matrix_chunk("theta", params.theta));
    c.put(matrix_chunk("delta_d", params.delta_d));
    RowMatrix pose(params.frames(), 6);
    for (int t = 0; t < params.frames(); ++t)
        pose.row(t) << params.head_pose[static_cast<std::size_t>(t)].rotation.transpose(),
            params.head_pose[static_cast<std::size_t>(t)].translation.transpose();
    c.put(matrix_chunk("head_pose", pose));
    put_cameras(c, params.cameras);
    return c;
}

TrackingParams params_from_container(const Container& c)
{
    expect_magic(c, kParamsMagic);
    TrackingParams p;
    p.beta = vector_from(c.get("beta"));
    p.phi = matrix_from(c.get("phi"));
    p.theta = matrix_from(c.get("theta"));
    p.delta_d = vertices_from(c.get("delta_d"));
    const RowMatrix pose = matrix_from(c.get("head_pose"));
    expect_dim(c.get("head_pose"), 1, 6);
    for (Eigen::Index t = 0; t < pose.rows(); ++t) {
        RigidTransform h;
        h.rotation = pose.row(t).head<3>().transpose();
        h.translation = pose.row(t).tail<3>().transpose();
        p.head_pose.push_back(h);
    }
    if (p.phi.rows() != pose.rows() || p.theta.rows() != pose.rows())
        throw FormatError("params: phi, theta and head_pose disagree on the frame count");
    p.cameras = cameras_from(c);
    return p;
}

Container mesh_to_container(const TriangleMesh& mesh)
{
    mesh.validate();
    Container c;
    c.magic = kModelMagic;
    c.put(matrix_chunk("vertices", mesh.vertices));
    c.put(triangles_chunk("triangles", mesh.triangles));
    if (!mesh.regions.empty())
        c.put(regions_chunk("region_labels", mesh.regions));
    if (!mesh.keypoints.empty())
        c.put(Chunk::u32("keypoints", {mesh.keypoints.size()}, mesh.keypoints.data()));
    return c;
}

TriangleMesh mesh_from_container(const Container& c)
{
    expect_magic(c, kModelMagic);
    TriangleMesh m;
    const Chunk* v = c.find("vertices");
    m.vertices = vertices_from(v ? *v : c.get("template"));
    m.triangles = triangles_from(c.get("triangles"));
    if (const Chunk* r = c.find("region_labels"))
        m.regions = regions_from(*r);
    if (const Chunk* k = c.find("keypoints"))
        m.keypoints = k->to_u32();
    m.validate();
    return m;
}

BlendshapeModel load_model(const std::filesystem::path& path)
{
    return model_from_container(read_container(path));
}

SequenceDataset load_sequence(const std::filesystem::path& path)
{
    return sequence_from_container(read_container(path));
}

TrackingParams load_params(const std::filesystem::path& path)
{
    return params_from_container(read_container(path));
}

TriangleMesh load_mesh(const std::filesystem::path& path)
{
    std::string ext = path.extension().string();
    for (char& ch : ext)
        ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return ext == ".obj" ? read_obj(path) : mesh_from_container(read_container(path));
}

namespace {

const std::vector<std::string>& config_keys()
{
    static const std::vector<std::string> keys{
        "lambda_flame", "lambda_temp",        "lambda_mica",       "lambda_deform", "vertex_weight_high", "vertex_weight_low",
        "learning_rate_init", "lr_decay",     "lr_patience",       "lr_threshold",  "lr_floor",           "max_iters",
        "adam_beta1",   "adam_beta2",         "adam_epsilon",      "weight_decay",  "deformable_regions", "freeze",
        "use_mica_template"};
    return keys;
}

const std::vector<std::string>& freeze_keys()
{
    static const std::vector<std::string> keys{"beta", "phi", "theta", "delta_d", "head_pose", "cameras"};
    return keys;
}

std::string joined(const std::vector<std::string>& keys)
{
    std::string s;
    for (const std::string& k : keys)
        s += (s.empty() ? "" : ", ") + k;
    return s;
}

void reject_unknown(const json& obj, const std::vector<std::string>& keys, const std::string& where)
{
    for (const auto& [key, value] : obj.items())
        if (std::find(keys.begin(), keys.end(), key) == keys.end())
            throw ConfigError("unknown " + where + " key '" + key + "'; valid keys: " + joined(keys));
}

double number(const json& v, const std::string& key)
{
    if (!v.is_number())
        throw ConfigError("config key '" + key + "' must be a number");
    return v.get<double>();
}

int integer(const json& v, const std::string& key)
{
    if (!v.is_number_integer() || v.get<std::int64_t>() < std::numeric_limits<int>::min() ||
        v.get<std::int64_t>() > std::numeric_limits<int>::max())
        throw ConfigError("config key '" + key + "' must be an integer");
    return v.get<int>();
}

bool boolean(const json& v, const std::string& key)
{
    if (!v.is_boolean())
        throw ConfigError("config key '" + key + "' must be true or false");
    return v.get<bool>();
}

} // namespace

EnergyConfig load_config(std::string_view text)
{
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object())
        throw ConfigError("config must be a JSON object");
    reject_unknown(j, config_keys(), "config");

    EnergyConfig cfg;
    const std::pair<const char*, double*> doubles[] = {
        {"lambda_flame", &cfg.lambda_flame},
        {"lambda_temp", &cfg.lambda_temp},
        {"lambda_mica", &cfg.lambda_mica},
        {"lambda_deform", &cfg.lambda_deform},
        {"vertex_weight_high", &cfg.vertex_weight_high},
        {"vertex_weight_low", &cfg.vertex_weight_low},
        {"learning_rate_init", &cfg.learning_rate_init},
        {"lr_decay", &cfg.lr_decay},
        {"lr_threshold", &cfg.lr_threshold},
        {"lr_floor", &cfg.lr_floor},
        {"adam_beta1", &cfg.adam_beta1},
        {"adam_beta2", &cfg.adam_beta2},
        {"adam_epsilon", &cfg.adam_epsilon},
        {"weight_decay", &cfg.weight_decay},
    };
    for (const auto& [key, field] : doubles)
        if (j.contains(key))
            *field = number(j[key], key);
    if (j.contains("lr_patience"))
        cfg.lr_patience = integer(j["lr_patience"], "lr_patience");
    if (j.contains("max_iters"))
        cfg.max_iters = integer(j["max_iters"], "max_iters");
    if (j.contains("use_mica_template"))
        cfg.use_mica_template = boolean(j["use_mica_template"], "use_mica_template");
    if (j.contains("deformable_regions")) {
        const json& r = j["deformable_regions"];
        if (!r.is_array())
            throw ConfigError("config key 'deformable_regions' must be an array of region names");
        cfg.deformable_regions.clear();
        for (const json& name : r) {
            const auto region = name.is_string() ? region_from_name(name.get<std::string>()) : std::nullopt;
            if (!region)
                throw ConfigError("deformable_regions: unknown region " + name.dump());
            cfg.deformable_regions.push_back(*region);
        }
    }
    if (j.contains("freeze")) {
        const json& f = j["freeze"];
        if (!f.is_object())
            throw ConfigError("config key 'freeze' must be an object");
        reject_unknown(f, freeze_keys(), "freeze");
        const std::pair<const char*, bool*> flags[] = {
            {"beta", &cfg.freeze.beta},         {"phi", &cfg.freeze.phi},
            {"theta", &cfg.freeze.theta},       {"delta_d", &cfg.freeze.delta_d},
            {"head_pose", &cfg.freeze.head_pose}, {"cameras", &cfg.freeze.cameras},
        };
        for (const auto& [key, field] : flags)
            if (f.contains(key))
                *field = boolean(f[key], std::string("freeze.") + key);
    }
    cfg.validate();
    return cfg;
}

EnergyConfig load_config_file(const std::filesystem::path& path)
{
    return load_config(read_file(path));
}

std::string config_to_json(const EnergyConfig& cfg)
{
    json j;
    j["lambda_flame"] = cfg.lambda_flame;
    j["lambda_temp"] = cfg.lambda_temp;
    j["lambda_mica"] = cfg.lambda_mica;
    j["lambda_deform"] = cfg.lambda_deform;
    j["vertex_weight_high"] = cfg.vertex_weight_high;
    j["vertex_weight_low"] = cfg.vertex_weight_low;
    j["learning_rate_init"] = cfg.learning_rate_init;
    j["lr_decay"] = cfg.lr_decay;
    j["lr_patience"] = cfg.lr_patience;
    j["lr_threshold"] = cfg.lr_threshold;
    j["lr_floor"] = cfg.lr_floor;
    j["max_iters"] = cfg.max_iters;
    j["adam_beta1"] = cfg.adam_beta1;
    j["adam_beta2"] = cfg.adam_beta2;
    j["adam_epsilon"] = cfg.adam_epsilon;
    j["weight_decay"] = cfg.weight_decay;
    json regions = json::array();
    for (Region r : cfg.deformable_regions)
        regions.push_back(std::string(region_name(r)));
    j["deformable_regions"] = regions;
    j["freeze"] = {{"beta", cfg.freeze.beta},       {"phi", cfg.freeze.phi},
                   {"theta", cfg.freeze.theta},     {"delta_d", cfg.freeze.delta_d},
                   {"head_pose", cfg.freeze.head_pose}, {"cameras", cfg.freeze.cameras}};
    j["use_mica_template"] = cfg.use_mica_template;
    return j.dump(2) + "\n";
}

std::string trace_csv(const std::vector<TracePoint>& trace)
{
    std::string out = "iteration,learning_rate,total,alignment,flame,temporal,mica,deform\n";
    char buf[512];
    for (const TracePoint& p : trace) {
        const EnergyBreakdown& e = p.energy;
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", p.iteration, p.learning_rate, e.total(),
                      e.alignment, e.flame, e.temporal, e.mica, e.deform);
        out += buf;
    }
    return out;
}

void apply_mesh_sidecar(TriangleMesh& mesh, std::string_view text)
{
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("sidecar is not valid JSON: ") + e.what());
    }
    if (!j.is_object())
        throw FormatError("sidecar must be a JSON object");
    for (const auto& [key, value] : j.items())
        if (key != "keypoints" && key != "regions")
            throw FormatError("unknown sidecar key '" + key + "'; valid keys: keypoints, regions");
    if (j.contains("keypoints")) {
        if (!j["keypoints"].is_array())
            throw FormatError("sidecar 'keypoints' must be an array");
        std::vector<std::uint32_t> kp;
        for (const json& v : j["keypoints"]) {
            if (!v.is_number_unsigned())
                throw FormatError("sidecar keypoints must be non-negative integers");
            kp.push_back(v.get<std::uint32_t>());
        }
        mesh.keypoints = std::move(kp);
    }
    if (j.contains("regions")) {
        if (!j["regions"].is_array())
            throw FormatError("sidecar 'regions' must be an array");
        std::vector<Region> regions;
        for (const json& v : j["regions"]) {
            const auto r = v.is_string() ? region_from_name(v.get<std::string>()) : std::nullopt;
            if (!r)
                throw FormatError("sidecar: unknown region " + v.dump());
            regions.push_back(*r);
        }
        mesh.regions = std::move(regions);
    }
    mesh.validate();
}

} // namespace facefit
