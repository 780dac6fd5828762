#include "octqsm/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace octqsm {

namespace {

void check_range(const std::array<int, 2>& r, const char* what) {
  if (r[0] < 1 || r[0] > r[1]) throw std::invalid_argument(std::string("invalid size range for ") + what);
}

std::array<int, 2> parse_int_pair(const std::string& s) {
  const auto comma = s.find(',');
  if (comma == std::string::npos) throw std::invalid_argument("expected 'lo,hi', got '" + s + "'");
  return {std::stoi(s.substr(0, comma)), std::stoi(s.substr(comma + 1))};
}

std::string int_pair(const std::array<int, 2>& r) { return std::to_string(r[0]) + "," + std::to_string(r[1]); }

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void paint_box(Volume& vol, std::array<int, 3> lo, std::array<int, 3> hi, float value) {
  const auto dims = vol.dims().as_array();
  for (int a = 0; a < 3; ++a) {
    lo[a] = std::max(lo[a], 0);
    hi[a] = std::min(hi[a], dims[a]);
  }
  for (int z = lo[2]; z < hi[2]; ++z)
    for (int y = lo[1]; y < hi[1]; ++y)
      for (int x = lo[0]; x < hi[0]; ++x) vol(x, y, z) = value;
}

void paint_sphere(Volume& vol, std::array<int, 3> c, int radius, float value) {
  const auto dims = vol.dims().as_array();
  const long r2 = static_cast<long>(radius) * radius;
  for (int z = std::max(0, c[2] - radius); z <= std::min(dims[2] - 1, c[2] + radius); ++z)
    for (int y = std::max(0, c[1] - radius); y <= std::min(dims[1] - 1, c[1] + radius); ++y)
      for (int x = std::max(0, c[0] - radius); x <= std::min(dims[0] - 1, c[0] + radius); ++x) {
        const long dx = x - c[0], dy = y - c[1], dz = z - c[2];
        if (dx * dx + dy * dy + dz * dz <= r2) vol(x, y, z) = value;
      }
}

}  // namespace

std::string to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::sphere: return "sphere";
    case ShapeKind::cube: return "cube";
    case ShapeKind::cuboid: return "cuboid";
  }
  return "unknown";
}

ShapeKind shape_kind_from_string(const std::string& name) {
  if (name == "sphere") return ShapeKind::sphere;
  if (name == "cube") return ShapeKind::cube;
  if (name == "cuboid") return ShapeKind::cuboid;
  throw std::invalid_argument("unknown shape kind '" + name + "'");
}

void ShapeConfig::validate() const {
  if (!dims.valid()) throw std::invalid_argument("shape config dims must be >= 1");
  if (count_min < 0 || count_min > count_max) throw std::invalid_argument("invalid shape count range");
  if (kinds.empty()) throw std::invalid_argument("shape config needs at least one shape kind");
  if (!(chi_lo <= chi_hi) || !std::isfinite(chi_lo) || !std::isfinite(chi_hi))
    throw std::invalid_argument("invalid susceptibility range");
  const int smallest = std::min({dims.nx, dims.ny, dims.nz});
  for (ShapeKind kind : kinds) {
    int extent = 0;
    switch (kind) {
      case ShapeKind::sphere:
        check_range(sphere_radius, "sphere");
        extent = 2 * sphere_radius[1] + 1;
        break;
      case ShapeKind::cube:
        check_range(cube_edge, "cube");
        extent = cube_edge[1];
        break;
      case ShapeKind::cuboid:
        check_range(cuboid_edge, "cuboid");
        extent = cuboid_edge[1];
        break;
    }
    if (extent > smallest)
      throw std::invalid_argument("largest " + to_string(kind) + " (" + std::to_string(extent) +
                                  " voxels) exceeds volume dims " + to_string(dims));
  }
}

std::map<std::string, std::string> ShapeConfig::to_key_values() const {
  std::string kind_list;
  for (ShapeKind k : kinds) kind_list += (kind_list.empty() ? "" : ",") + to_string(k);
  return {
      {"dims", std::to_string(dims.nx) + "," + std::to_string(dims.ny) + "," + std::to_string(dims.nz)},
      {"voxel_size", format_double(voxel.dx) + "," + format_double(voxel.dy) + "," + format_double(voxel.dz)},
      {"shape_count", std::to_string(count_min) + "," + std::to_string(count_max)},
      {"kinds", kind_list},
      {"sphere_radius", int_pair(sphere_radius)},
      {"cube_edge", int_pair(cube_edge)},
      {"cuboid_edge", int_pair(cuboid_edge)},
      {"chi_range", format_double(chi_lo) + "," + format_double(chi_hi)},
      {"seed", std::to_string(seed)},
  };
}

ShapeConfig ShapeConfig::from_key_values(const std::map<std::string, std::string>& kv) {
  ShapeConfig c;
  auto split = [](const std::string& s) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
      const auto comma = s.find(',', start);
      parts.push_back(s.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    return parts;
  };
  for (const auto& [key, value] : kv) {
    if (key == "dims") {
      const auto p = split(value);
      if (p.size() == 1) c.dims = {std::stoi(p[0]), std::stoi(p[0]), std::stoi(p[0])};
      else if (p.size() == 3) c.dims = {std::stoi(p[0]), std::stoi(p[1]), std::stoi(p[2])};
      else throw std::invalid_argument("dims needs 1 or 3 values");
    } else if (key == "voxel_size") {
      const auto p = split(value);
      if (p.size() != 3) throw std::invalid_argument("voxel_size needs 3 values");
      c.voxel = {std::stof(p[0]), std::stof(p[1]), std::stof(p[2])};
    } else if (key == "shape_count") {
      const auto r = parse_int_pair(value);
      c.count_min = r[0];
      c.count_max = r[1];
    } else if (key == "kinds") {
      c.kinds.clear();
      for (const auto& k : split(value)) c.kinds.push_back(shape_kind_from_string(k));
    } else if (key == "sphere_radius") {
      c.sphere_radius = parse_int_pair(value);
    } else if (key == "cube_edge") {
      c.cube_edge = parse_int_pair(value);
    } else if (key == "cuboid_edge") {
      c.cuboid_edge = parse_int_pair(value);
    } else if (key == "chi_range") {
      const auto p = split(value);
      if (p.size() != 2) throw std::invalid_argument("chi_range needs 2 values");
      c.chi_lo = std::stod(p[0]);
      c.chi_hi = std::stod(p[1]);
    } else if (key == "seed") {
      c.seed = std::stoull(value);
    } else {
      throw std::invalid_argument("unknown shape config key '" + key + "'");
    }
  }
  return c;
}

Volume random_shapes(const ShapeConfig& config) {
  config.validate();
  Volume vol(config.dims, config.voxel, Unit::ppb);
  std::mt19937_64 rng(config.seed);
  auto uniform_int = [&rng](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  std::uniform_real_distribution<double> chi_dist(config.chi_lo, config.chi_hi);

  const int count = uniform_int(config.count_min, config.count_max);
  const auto dims = config.dims.as_array();
  for (int s = 0; s < count; ++s) {
    const ShapeKind kind = config.kinds[static_cast<std::size_t>(uniform_int(0, static_cast<int>(config.kinds.size()) - 1))];
    const std::array<int, 3> centre{uniform_int(0, dims[0] - 1), uniform_int(0, dims[1] - 1),
                                    uniform_int(0, dims[2] - 1)};
    double chi = config.chi_lo == config.chi_hi ? config.chi_lo : chi_dist(rng);
    const auto value = static_cast<float>(chi);
    switch (kind) {
      case ShapeKind::sphere:
        paint_sphere(vol, centre, uniform_int(config.sphere_radius[0], config.sphere_radius[1]), value);
        break;
      case ShapeKind::cube: {
        const int e = uniform_int(config.cube_edge[0], config.cube_edge[1]);
        std::array<int, 3> lo{}, hi{};
        for (int a = 0; a < 3; ++a) {
          lo[a] = centre[a] - e / 2;
          hi[a] = lo[a] + e;
        }
        paint_box(vol, lo, hi, value);
        break;
      }
      case ShapeKind::cuboid: {
        std::array<int, 3> lo{}, hi{};
        for (int a = 0; a < 3; ++a) {
          const int e = uniform_int(config.cuboid_edge[0], config.cuboid_edge[1]);
          lo[a] = centre[a] - e / 2;
          hi[a] = lo[a] + e;
        }
        paint_box(vol, lo, hi, value);
        break;
      }
    }
  }
  return vol;
}

const std::array<Ellipsoid, 10>& shepp_logan_table() {
  // a, b, c, x0, y0, z0, phi, theta, psi
  static const std::array<Ellipsoid, 10> table{{
      {0.6900, 0.920, 0.810, 0.00, 0.0000, 0.00, 0.0, 0.0, 0.0},
      {0.6624, 0.874, 0.780, 0.00, -0.0184, 0.00, 0.0, 0.0, 0.0},
      {0.1100, 0.310, 0.220, 0.22, 0.0000, 0.00, -18.0, 0.0, 10.0},
      {0.1600, 0.410, 0.280, -0.22, 0.0000, 0.00, 18.0, 0.0, 10.0},
      {0.2100, 0.250, 0.410, 0.00, 0.3500, -0.15, 0.0, 0.0, 0.0},
      {0.0460, 0.046, 0.050, 0.00, 0.1000, 0.25, 0.0, 0.0, 0.0},
      {0.0460, 0.046, 0.050, 0.00, -0.1000, 0.25, 0.0, 0.0, 0.0},
      {0.0460, 0.023, 0.020, -0.08, -0.6050, 0.00, 0.0, 0.0, 0.0},
      {0.0230, 0.023, 0.020, 0.00, -0.6060, 0.00, 0.0, 0.0, 0.0},
      {0.0230, 0.046, 0.020, 0.06, -0.6050, 0.00, 0.0, 0.0, 0.0},
  }};
  return table;
}

LabeledPhantom shepp_logan(Dims dims, const std::array<double, 6>& values, VoxelSize voxel) {
  if (dims.nx < 32 || dims.ny < 32 || dims.nz < 32)
    throw std::invalid_argument("shepp_logan needs dims >= 32 per axis, got " + to_string(dims));
  const auto& table = shepp_logan_table();
  const std::array<int, 3> n{dims.nx, dims.ny, dims.nz};
  for (int row : kSheppLoganRegionRows) {
    const auto& e = table[static_cast<std::size_t>(row)];
    // A semi-axis s spans s * (n - 1) voxels across on a [-1, 1] grid of n samples.
    const double across = std::min({e.a * (n[0] - 1), e.b * (n[1] - 1), e.c * (n[2] - 1)});
    if (across < 2.0)
      throw std::invalid_argument("dims " + to_string(dims) + " too small to resolve Shepp-Logan structure " +
                                  std::to_string(row) + " (< 2 voxels across)");
  }

  LabeledPhantom out{Volume(dims, voxel, Unit::ppb), Volume(dims, voxel, Unit::unitless), {}};
  constexpr double deg = std::numbers::pi / 180.0;
  for (std::size_t r = 0; r < kSheppLoganRegionRows.size(); ++r) {
    const int label = static_cast<int>(r) + 1;
    out.region_table[label] = values[r];
    const auto& e = table[static_cast<std::size_t>(kSheppLoganRegionRows[r])];
    const double cphi = std::cos(e.phi * deg), sphi = std::sin(e.phi * deg);
    const double cth = std::cos(e.theta * deg), sth = std::sin(e.theta * deg);
    const double cpsi = std::cos(e.psi * deg), spsi = std::sin(e.psi * deg);
    const double rot[3][3] = {
        {cpsi * cphi - cth * sphi * spsi, cpsi * sphi + cth * cphi * spsi, spsi * sth},
        {-spsi * cphi - cth * sphi * cpsi, -spsi * sphi + cth * cphi * cpsi, cpsi * sth},
        {sth * sphi, -sth * cphi, cth},
    };
    for (int z = 0; z < n[2]; ++z) {
      const double w = -1.0 + 2.0 * z / (n[2] - 1);
      for (int y = 0; y < n[1]; ++y) {
        const double v = -1.0 + 2.0 * y / (n[1] - 1);
        for (int x = 0; x < n[0]; ++x) {
          const double u = -1.0 + 2.0 * x / (n[0] - 1);
          const double px = rot[0][0] * u + rot[0][1] * v + rot[0][2] * w - e.x0;
          const double py = rot[1][0] * u + rot[1][1] * v + rot[1][2] * w - e.y0;
          const double pz = rot[2][0] * u + rot[2][1] * v + rot[2][2] * w - e.z0;
          if (px * px / (e.a * e.a) + py * py / (e.b * e.b) + pz * pz / (e.c * e.c) <= 1.0) {
            out.labels(x, y, z) = static_cast<float>(label);
            out.chi(x, y, z) = static_cast<float>(values[r]);
          }
        }
      }
    }
  }
  return out;
}

Volume scale_chi(const Volume& volume, double factor) {
  if (!std::isfinite(factor)) throw std::invalid_argument("scale factor must be finite");
  Volume out = volume;
  for (float& v : out.data()) v = static_cast<float>(v * factor);
  return out;
}

}  // namespace octqsm
