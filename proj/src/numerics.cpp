#include "agcnn/numerics.hpp"

#include <algorithm>
#include <cmath>

#include "agcnn/error.hpp"

namespace agcnn {

double evaluate(const ScalarFn& f, const Tensor& params) {
  Tape tape(false);
  Var p = tape.parameter(params, 0);
  return f(tape, p).value().item();
}

double finite_diff_check(const ScalarFn& f, const Tensor& params, double h) {
  Tape tape;
  Var p = tape.parameter(params, 0);
  Var loss = f(tape, p);
  const Tensor g_ad = tape.backward(loss, {params.shape()})[0];

  double worst = 0.0;
  Tensor probe = params;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double x0 = params[i];
    probe[i] = x0 + h;
    const double up = evaluate(f, probe);
    probe[i] = x0 - h;
    const double down = evaluate(f, probe);
    probe[i] = x0;
    const double g_fd = (up - down) / (2.0 * h);
    const double err =
        std::abs(g_ad[i] - g_fd) / std::max(1e-8, std::abs(g_ad[i]) + std::abs(g_fd));
    worst = std::max(worst, err);
  }
  return worst;
}

std::array<double, 2> sample_bivariate(const Bivariate& d, Rng& rng) {
  if (!(d.sigma[0] > 0.0) || !(d.sigma[1] > 0.0))
    throw DomainError("sample_bivariate: sigma must be strictly positive");
  if (!(std::abs(d.rho) < 1.0)) throw DomainError("sample_bivariate: |rho| must be < 1");
  std::normal_distribution<double> normal;
  const double z1 = normal(rng);
  const double z2 = normal(rng);
  return {d.mu[0] + d.sigma[0] * z1,
          d.mu[1] + d.sigma[1] * (d.rho * z1 + std::sqrt(1.0 - d.rho * d.rho) * z2)};
}

}  // namespace agcnn
