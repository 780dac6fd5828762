#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace octqsm::nn {

struct GradCheckResult {
  std::string name;
  std::size_t checked = 0;  // number of scalar coordinates compared
  double rel_error = 0.0;   // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  double tolerance = 0.0;
  [[nodiscard]] bool passed() const { return rel_error < tolerance; }
};

struct GradCheckOptions {
  double step = 1e-5;
  double layer_tolerance = 1e-4;
  double network_tolerance = 1e-3;
  int network_width = 4;
  int network_dim = 8;
  int network_batch = 2;
  int network_samples = 50;  // parameter coordinates drawn at random; as many input coordinates
  std::uint64_t seed = 7;
};

// Central differences in double precision on L = sum(r * f(x)) with random r.
std::vector<GradCheckResult> check_layers(const GradCheckOptions& options = {});
GradCheckResult check_network(const GradCheckOptions& options = {});

/// Layer checks followed by the end-to-end check.
std::vector<GradCheckResult> check_all(const GradCheckOptions& options = {});

}  // namespace octqsm::nn
