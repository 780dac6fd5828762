#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "octqsm/volume.hpp"

namespace octqsm {

enum class ShapeKind { sphere, cube, cuboid };

/// Random geometric-shape phantom settings. Sizes are in voxels: sphere radius,
/// cube edge, cuboid edges (drawn independently per axis).
struct ShapeConfig {
  Dims dims{48, 48, 48};
  VoxelSize voxel{};
  int count_min = 5;
  int count_max = 30;
  std::vector<ShapeKind> kinds{ShapeKind::sphere, ShapeKind::cube, ShapeKind::cuboid};
  std::array<int, 2> sphere_radius{3, 12};
  std::array<int, 2> cube_edge{4, 20};
  std::array<int, 2> cuboid_edge{4, 20};
  double chi_lo = -300.0;
  double chi_hi = 300.0;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument on empty/inverted ranges or shapes larger than dims.
  void validate() const;

  /// Flat key=value form; keys documented in README.
  [[nodiscard]] std::map<std::string, std::string> to_key_values() const;
  static ShapeConfig from_key_values(const std::map<std::string, std::string>& kv);
};

std::string to_string(ShapeKind kind);
ShapeKind shape_kind_from_string(const std::string& name);

/// Shapes with uniform random centres (anywhere in the grid, clipped at the faces),
/// sizes and values; later shapes overwrite earlier ones. Background is 0.
Volume random_shapes(const ShapeConfig& config);

struct LabeledPhantom {
  Volume chi;
  Volume labels;  // region ids stored as f32, unit unitless
  std::map<int, double> region_table;
};

/// One ellipsoid of the 3D Shepp-Logan table in normalised [-1, 1]^3 coordinates.
/// Angles in degrees (z-x-z Euler convention).
struct Ellipsoid {
  double a, b, c;
  double x0, y0, z0;
  double phi, theta, psi;
};

/// Canonical ten-ellipsoid 3D Shepp-Logan geometry.
const std::array<Ellipsoid, 10>& shepp_logan_table();

/// Table rows used as labelled regions 1..6, in that order: the brain envelope and the
/// five largest structures inside it. The outer skull shell is background.
inline constexpr std::array<int, 6> kSheppLoganRegionRows{1, 2, 3, 4, 5, 6};

inline constexpr std::array<double, 6> kSheppLoganDefaultValues{-100.0, -250.0, -200.0, -50.0, 150.0, 350.0};

LabeledPhantom shepp_logan(Dims dims, const std::array<double, 6>& values = kSheppLoganDefaultValues,
                           VoxelSize voxel = {});

Volume scale_chi(const Volume& volume, double factor);

}  // namespace octqsm
