#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "strlab/autodiff.hpp"
#include "strlab/random.hpp"

// Central finite-difference checks of reverse-mode gradients at 64-bit.
namespace strlab::gradcheck {

/// Relative error ||a - n|| / max(||a||, ||n||) between the analytic gradient
/// of sum(fn() * R) (R a fixed random weighting, 1 for scalar outputs) and its
/// central difference estimate, over up to max_elements entries per tensor of
/// `wrt`. `fn` must rebuild the graph from the current leaf values.
double relative_error(const std::function<Variable<double>()>& fn, const std::vector<Variable<double>>& wrt,
                      Rng& rng, std::size_t max_elements = 48, double step = 1e-5);

struct CaseResult {
  std::string name;
  int seeds = 0;
  int failures = 0;
  double worst = 0;  // largest relative error over seeds
};

/// Every differentiable layer and both full models, each over `seeds` seeds
/// derived from `seed`.
std::vector<CaseResult> run_suite(std::uint64_t seed, int seeds = 20, double tolerance = 1e-4);

/// "case<TAB>seeds<TAB>failures<TAB>worst" rows with a header.
std::string suite_tsv(const std::vector<CaseResult>& results);

}  // namespace strlab::gradcheck
