#include "qilcm/gradient_check.hpp"

#include <cmath>
#include <sstream>

#include "qilcm/errors.hpp"

namespace qilcm::diff {

namespace {

double eval_loss(const GraphBuilder& f,
                 const std::vector<std::pair<std::string, Tensor>>& params) {
  Graph g;
  std::vector<NodeId> leaves;
  leaves.reserve(params.size());
  for (const auto& [name, t] : params) leaves.push_back(g.leaf(t));
  const NodeId loss = f(g, leaves);
  return g.value(loss).item();
}

}  // namespace

std::string GradCheckReport::summary() const {
  if (pass) return "gradient check passed";
  std::ostringstream os;
  for (const auto& e : entries) {
    if (e.pass) continue;
    os << "gradient mismatch in '" << e.name << "' at element "
       << e.worst_index << ": analytic " << e.analytic << " vs numeric "
       << e.numeric << " (rel err " << e.max_rel_err << " > tol " << tol
       << ")\n";
  }
  return os.str();
}

GradCheckReport gradient_check(
    const GraphBuilder& f,
    const std::vector<std::pair<std::string, Tensor>>& params, double step,
    double tol) {
  if (step <= 0.0) throw DomainError("gradient_check step must be positive");

  Graph g;
  std::vector<NodeId> leaves;
  leaves.reserve(params.size());
  for (const auto& [name, t] : params) leaves.push_back(g.leaf(t));
  const NodeId loss = f(g, leaves);
  const Gradients grads = g.backward(loss);

  GradCheckReport report;
  report.step = step;
  report.tol = tol;

  auto work = params;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const Tensor& base = params[p].second;
    const Tensor& analytic = grads.at(leaves[p]);
    GradCheckEntry entry;
    entry.name = params[p].first;
    for (std::size_t i = 0; i < base.numel(); ++i) {
      std::vector<double> bumped(base.values().begin(), base.values().end());
      bumped[i] = base.at(i) + step;
      work[p].second = Tensor(base.shape(), bumped);
      const double up = eval_loss(f, work);
      bumped[i] = base.at(i) - step;
      work[p].second = Tensor(base.shape(), std::move(bumped));
      const double down = eval_loss(f, work);
      const double fd = (up - down) / (2.0 * step);
      const double ad = analytic.at(i);
      const double rel =
          std::abs(ad - fd) / std::max({1.0, std::abs(ad), std::abs(fd)});
      if (rel > entry.max_rel_err) {
        entry.max_rel_err = rel;
        entry.worst_index = i;
        entry.analytic = ad;
        entry.numeric = fd;
      }
    }
    work[p].second = base;
    entry.pass = entry.max_rel_err <= tol;
    report.pass = report.pass && entry.pass;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace qilcm::diff
