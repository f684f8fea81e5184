#pragma once

// Fixture parameters for the 2-D base densities. Bump the version whenever a
// value changes; it is written into every result artifact.

#include <array>

namespace mpobm::target_constants {

inline constexpr int version = 1;

struct Gauss2 {
  double weight;
  std::array<double, 2> mean;
  std::array<double, 3> cov;  // (s11, s12, s22)
};

// Three components, unequal weights, mildly correlated covariances.
inline constexpr std::array<Gauss2, 3> gmm3{{
    {0.5, {-2.0, -1.0}, {0.70, 0.25, 0.50}},
    {0.3, {2.0, 1.5}, {0.50, -0.20, 0.80}},
    {0.2, {0.5, -2.5}, {0.90, 0.15, 0.40}},
}};

// Equal-weight pair of anisotropic Gaussians rotated by +-45 degrees.
inline constexpr double xshape_sigma_long = 2.0;
inline constexpr double xshape_sigma_short = 0.4;

inline constexpr double ring_radius = 3.0;
inline constexpr double ring_sigma = 0.5;

inline constexpr double funnel_sigma = 1.2;

}  // namespace mpobm::target_constants
