#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "qilcm/graph.hpp"

namespace qilcm::diff {

/// Builds a scalar loss node from a fresh graph whose leaves are bound, in
/// order, to the parameter tensors under test. Must be deterministic.
using GraphBuilder =
    std::function<NodeId(Graph&, const std::vector<NodeId>&)>;

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;   // gradient at the worst element
  double numeric = 0.0;    // central difference at the worst element
  bool pass = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double step = 0.0;
  double tol = 0.0;
  bool pass = true;
  /// One line per failing tensor, or "gradient check passed".
  std::string summary() const;
};

/// Compare reverse-mode gradients against central finite differences,
/// rebuilding the graph per perturbed evaluation. The error measure is
/// |ad - fd| / max(1, |ad|, |fd|), reported per parameter tensor.
GradCheckReport gradient_check(
    const GraphBuilder& f,
    const std::vector<std::pair<std::string, Tensor>>& params, double step,
    double tol);

}  // namespace qilcm::diff
