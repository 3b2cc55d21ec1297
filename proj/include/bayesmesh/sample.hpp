#pragma once

#include <complex>
#include <cstddef>
#include <vector>

namespace bayesmesh {

/// One classification example: a unit-norm complex feature vector and its label.
struct Sample {
  std::vector<std::complex<double>> features;
  std::size_t label = 0;
};

}  // namespace bayesmesh
