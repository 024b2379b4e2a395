#pragma once

#include "facefit/dataset.hpp"
#include "facefit/energy.hpp"
#include "facefit/fitter.hpp"
#include "facefit/model.hpp"
#include "facefit/recon.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace facefit {

enum class DType : std::uint8_t { f32 = 0, f64 = 1, u32 = 2, u8 = 3 };

std::size_t dtype_size(DType t);
std::string_view dtype_name(DType t);

/// Named n-dimensional array holding its little-endian payload bytes.
struct Chunk
{
    std::string name;
    DType dtype = DType::f64;
    std::vector<std::uint64_t> shape;
    std::string payload;

    std::uint64_t element_count() const;

    static Chunk f64(std::string name, std::vector<std::uint64_t> shape, const double* data);
    static Chunk f32(std::string name, std::vector<std::uint64_t> shape, const double* data);
    static Chunk u32(std::string name, std::vector<std::uint64_t> shape, const std::uint32_t* data);
    static Chunk u8(std::string name, std::vector<std::uint64_t> shape, const std::uint8_t* data);
    static Chunk text(std::string name, std::string_view text);

    /// Floating chunks (f32 or f64) widened to double.
    std::vector<double> to_f64() const;
    std::vector<std::uint32_t> to_u32() const;
    std::vector<std::uint8_t> to_u8() const;
    std::string to_text() const;
};

/**
 * Chunked container. Layout, all integers little-endian:
 *   magic[4] version:u32 count:u32
 *   count x { name_len:u16 name dtype:u8 rank:u8 dims:u64[rank] bytes:u64 payload }
 */
struct Container
{
    std::array<char, 4> magic{'F', 'T', 'M', '1'};
    std::uint32_t version = 1;
    std::vector<Chunk> chunks;

    const Chunk* find(std::string_view name) const;
    /// Throws FormatError naming the chunk when absent.
    const Chunk& get(std::string_view name) const;
    void put(Chunk chunk); ///< replaces a chunk of the same name
};

inline constexpr std::array<char, 4> kModelMagic{'F', 'T', 'M', '1'};
inline constexpr std::array<char, 4> kSequenceMagic{'F', 'T', 'S', '1'};
inline constexpr std::array<char, 4> kParamsMagic{'F', 'T', 'P', '1'};

std::string encode_container(const Container& c);
/// Validates structure and sizes and rejects NaN/Inf in floating payloads.
Container decode_container(std::string_view bytes);

/// Appends the chunks of `original` missing from `fresh` (forward compatibility).
Container merge_unknown_chunks(Container fresh, const Container& original);

std::string read_file(const std::filesystem::path& path);
/// Writes to a temporary file next to `path` and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

Container read_container(const std::filesystem::path& path);
void write_container(const std::filesystem::path& path, const Container& c);

/// Camera chunks of a sequence or params container.
std::vector<Camera> cameras_from_container(const Container& c);

Container model_to_container(const BlendshapeModel& model);
BlendshapeModel model_from_container(const Container& c);

Container sequence_to_container(const SequenceDataset& dataset, bool f32_observations = false);
SequenceDataset sequence_from_container(const Container& c);

Container params_to_container(const TrackingParams& params);
TrackingParams params_from_container(const Container& c);

Container mesh_to_container(const TriangleMesh& mesh);
/// Reads a mesh container ("vertices" chunk) or a model container (its template).
TriangleMesh mesh_from_container(const Container& c);

BlendshapeModel load_model(const std::filesystem::path& path);
SequenceDataset load_sequence(const std::filesystem::path& path);
TrackingParams load_params(const std::filesystem::path& path);
/// OBJ by extension, otherwise a container.
TriangleMesh load_mesh(const std::filesystem::path& path);

/**
 * Energy and schedule configuration from JSON. Missing keys keep their
 * defaults; unknown keys, wrong types and invalid values throw ConfigError.
 */
EnergyConfig load_config(std::string_view json_text);
EnergyConfig load_config_file(const std::filesystem::path& path);
std::string config_to_json(const EnergyConfig& config);

/// iteration,learning_rate,total,alignment,flame,temporal,mica,deform
std::string trace_csv(const std::vector<TracePoint>& trace);

/**
 * Applies a JSON sidecar {"keypoints": [7 vertex indices], "regions": [label
 * names, one per vertex]} to a mesh. Both keys are optional.
 */
void apply_mesh_sidecar(TriangleMesh& mesh, std::string_view json_text);

} // namespace facefit
