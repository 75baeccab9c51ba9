#pragma once

#include <cstdint>
#include <filesystem>

#include "pixeltrap/bem.hpp"

namespace pixeltrap {

/// Content key of a (layout, mesh) pair.
std::uint64_t basis_key(const ElectrodeLayout& layout, const PanelMesh& mesh);

/// Binary file: layout JSON, panel vertices and the charge matrix.
void save_basis(const ChargeBasis& basis, const std::filesystem::path& path);
ChargeBasis load_basis(const std::filesystem::path& path);

/// $PIXELTRAP_CACHE if set, else ./.pixeltrap_cache
std::filesystem::path default_cache_dir();

/// Meshes the layout and returns the cached basis for it, solving and
/// storing it on a miss.
ChargeBasis cached_basis(const ElectrodeLayout& layout, std::size_t target_panels,
                         const std::filesystem::path& cache_dir = default_cache_dir());

}  // namespace pixeltrap
