#pragma once

// Finite-difference certification of every recorded op and every training
// loss, shared by the gradcheck CLI verb and the test suite.

#include "ndoe/autodiff.hpp"

#include <string>
#include <vector>

namespace ndoe {

struct CertificationItem {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t coordinates = 0;
  double tolerance = 0.0;
  bool passed() const { return max_rel_error < tolerance; }
};

// Each op on random inputs of sizes {1, 3, 8}, reduced to a scalar through a
// random linear functional.
std::vector<CertificationItem> certify_ops(std::uint64_t seed = 7, double tolerance = 1e-6);

// L1, L2 and the joint loss on a BNAF and a Real NVP 2+2 toy model, both
// parametric DoE families, and the four critic objectives.
std::vector<CertificationItem> certify_losses(std::uint64_t seed = 11, double tolerance = 1e-5);

}  // namespace ndoe
