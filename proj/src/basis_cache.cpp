#include "pixeltrap/basis_cache.hpp"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "pixeltrap/error.hpp"

namespace pixeltrap {

namespace {

constexpr char kMagic[8] = {'P', 'X', 'T', 'B', 'A', 'S', '0', '1'};

template <class T>
void put(std::ostream& out, const T& v)
{
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in)
{
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw ParseError("truncated basis file");
  return v;
}

}  // namespace

std::uint64_t basis_key(const ElectrodeLayout& layout, const PanelMesh& mesh)
{
  return layout.hash() * 1099511628211ull ^ mesh.hash();
}

void save_basis(const ChargeBasis& basis, const std::filesystem::path& path)
{
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw InputError("cannot write basis file " + path.string());
    out.write(kMagic, sizeof kMagic);
    put(out, basis_key(basis.layout, basis.mesh));
    std::string layout = layout_to_json(basis.layout);
    put<std::uint64_t>(out, layout.size());
    out.write(layout.data(), static_cast<std::streamsize>(layout.size()));
    put<std::uint64_t>(out, basis.mesh.size());
    for (const auto& p : basis.mesh.panels) {
      put<std::int32_t>(out, p.n_vertices);
      put<std::uint64_t>(out, p.electrode);
      for (int k = 0; k < p.n_vertices; ++k) {
        put(out, p.vertices[k].x());
        put(out, p.vertices[k].y());
      }
    }
    put<std::uint64_t>(out, static_cast<std::uint64_t>(basis.charges.cols()));
    out.write(reinterpret_cast<const char*>(basis.charges.data()),
              static_cast<std::streamsize>(sizeof(double) * basis.charges.size()));
    put(out, basis.max_residual);
    if (!out) throw InputError("failed writing basis file " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

ChargeBasis load_basis(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read basis file " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw ParseError(path.string() + ": not a basis file");
  auto key = get<std::uint64_t>(in);
  auto layout_len = get<std::uint64_t>(in);
  std::string layout_text(layout_len, '\0');
  in.read(layout_text.data(), static_cast<std::streamsize>(layout_len));
  ChargeBasis basis;
  basis.layout = layout_from_json(layout_text);
  auto n = get<std::uint64_t>(in);
  basis.mesh.electrode_ids = basis.layout.ids();
  basis.mesh.layout_hash = basis.layout.hash();
  basis.mesh.panels.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    auto nv = get<std::int32_t>(in);
    auto e = get<std::uint64_t>(in);
    if (nv < 3 || nv > 4 || e >= basis.layout.size()) throw ParseError(path.string() + ": corrupt panel record");
    std::vector<Vec2> v;
    for (int k = 0; k < nv; ++k) {
      double x = get<double>(in);
      double y = get<double>(in);
      v.emplace_back(x, y);
    }
    basis.mesh.panels.push_back(make_panel(v, basis.layout.electrodes[e].id, e));
  }
  auto k = get<std::uint64_t>(in);
  basis.charges.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
  in.read(reinterpret_cast<char*>(basis.charges.data()), static_cast<std::streamsize>(sizeof(double) * n * k));
  basis.max_residual = get<double>(in);
  if (basis_key(basis.layout, basis.mesh) != key) throw ParseError(path.string() + ": content key mismatch");
  return basis;
}

std::filesystem::path default_cache_dir()
{
  if (const char* env = std::getenv("PIXELTRAP_CACHE"); env && *env) return env;
  return ".pixeltrap_cache";
}

ChargeBasis cached_basis(const ElectrodeLayout& layout, std::size_t target_panels, const std::filesystem::path& cache_dir)
{
  PanelMesh mesh = mesh_layout(layout, target_panels);
  std::ostringstream name;
  name << "basis_" << std::hex << std::setw(16) << std::setfill('0') << basis_key(layout, mesh) << ".bin";
  auto path = cache_dir / name.str();
  if (std::filesystem::exists(path)) {
    try {
      ChargeBasis b = load_basis(path);
      if (b.layout == layout && b.mesh == mesh) return b;
    } catch (const ParseError&) {
      // stale or corrupt entry: rebuild below
    }
  }
  ChargeBasis basis = build_basis(layout, mesh);
  std::filesystem::create_directories(cache_dir);
  save_basis(basis, path);
  return basis;
}

}  // namespace pixeltrap
