#pragma once

#include <array>
#include <functional>
#include <random>

#include "agcnn/tape.hpp"
#include "agcnn/tensor.hpp"

namespace agcnn {

using Rng = std::mt19937_64;

// Central-difference gradient of `f` at `params` compared elementwise with the
// reverse-mode gradient. Returns max |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
// `f` receives the tape and the parameter Var (slot 0) and returns a scalar.
using ScalarFn = std::function<Var(Tape&, Var)>;
double finite_diff_check(const ScalarFn& f, const Tensor& params, double h = 1e-5);

// Evaluates `f` at `params` without recording.
double evaluate(const ScalarFn& f, const Tensor& params);

struct Bivariate {
  std::array<double, 2> mu{};
  std::array<double, 2> sigma{1.0, 1.0};
  double rho = 0.0;
};

// One draw via the 2x2 Cholesky factor:
//   x = mu_x + s_x z1,  y = mu_y + s_y (rho z1 + sqrt(1 - rho^2) z2).
// Throws DomainError unless sigma > 0 and |rho| < 1.
std::array<double, 2> sample_bivariate(const Bivariate& dist, Rng& rng);

}  // namespace agcnn
