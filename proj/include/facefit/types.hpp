#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

namespace facefit {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// N x 3 vertex positions, row-major so that the flat storage index of
/// coordinate c of vertex i is 3 * i + c (the layout the bases use).
using Vertices = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using UvCoords = Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>;

using Triangle = std::array<std::uint32_t, 3>;
using Triangles = std::vector<Triangle>;

/// Semantic vertex regions. Values are the on-disk encoding.
enum class Region : std::uint8_t { face = 0, mouth = 1, nose = 2, eyes = 3, ears = 4, other = 5 };

inline constexpr int kRegionCount = 6;

std::string_view region_name(Region r);
std::optional<Region> region_from_name(std::string_view name);

/// A set of regions, used as an evaluation mask.
class RegionSet
{
public:
    constexpr RegionSet() = default;
    constexpr RegionSet(std::initializer_list<Region> regions)
    {
        for (Region r : regions)
            bits_ |= bit(r);
    }

    static constexpr RegionSet all()
    {
        RegionSet s;
        s.bits_ = (1u << kRegionCount) - 1u;
        return s;
    }

    constexpr bool contains(Region r) const { return (bits_ & bit(r)) != 0; }
    constexpr bool empty() const { return bits_ == 0; }

private:
    static constexpr std::uint32_t bit(Region r) { return 1u << static_cast<std::uint32_t>(r); }
    std::uint32_t bits_ = 0;
};

/// Named evaluation region. "face" covers the whole facial area (face, mouth,
/// nose and eyes labels); the others map to a single label.
struct NamedRegion
{
    std::string_view name;
    RegionSet labels;
};

/// face, eyes, nose, mouth, ears.
std::vector<NamedRegion> benchmark_regions();

} // namespace facefit
