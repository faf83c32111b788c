#pragma once

// Registry of gradient checks over every loss and layer, on randomized instances.

#include "gkd/gradcheck.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace gkd::gradsuite {

using CheckFn = std::function<ad::GradCheckResult(std::uint64_t seed)>;

struct Variant {
  std::string name;
  CheckFn check;
};

struct Item {
  std::string name;  // e.g. "gcrd", "layer-gin"
  std::vector<Variant> variants;
};

struct Report {
  std::string name;
  std::size_t checks = 0;  // variants x instances
  double max_rel_error = 0;
  bool finite = true;
  std::string worst;       // variant and coordinate of the worst entry
  bool passed = false;
};

inline constexpr double kTolerance = 1e-4;
inline constexpr double kEps = 1e-5;

/// `with_sabotage` adds a fixture op whose backward rule is deliberately wrong.
std::vector<Item> registry(bool with_sabotage = false);

Report run(const Item& item, std::uint64_t seed, int instances, double tol = kTolerance);

/// A square op whose backward returns 3x instead of 2x.
ad::Tensor sabotaged_square(const ad::Tensor& x);

}  // namespace gkd::gradsuite
