#include "facefit/types.hpp"

namespace facefit {

namespace {
constexpr std::array<std::string_view, kRegionCount> kRegionNames{"face", "mouth", "nose", "eyes", "ears", "other"};
}

std::string_view region_name(Region r)
{
    return kRegionNames.at(static_cast<std::size_t>(r));
}

std::optional<Region> region_from_name(std::string_view name)
{
    for (std::size_t i = 0; i < kRegionNames.size(); ++i)
        if (kRegionNames[i] == name)
            return static_cast<Region>(i);
    return std::nullopt;
}

std::vector<NamedRegion> benchmark_regions()
{
    return {
        {"face", RegionSet{Region::face, Region::mouth, Region::nose, Region::eyes}},
        {"eyes", RegionSet{Region::eyes}},
        {"nose", RegionSet{Region::nose}},
        {"mouth", RegionSet{Region::mouth}},
        {"ears", RegionSet{Region::ears}},
    };
}

} // namespace facefit
