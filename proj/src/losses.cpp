#include "agcnn/losses.hpp"

#include <cmath>
#include <numbers>

#include "agcnn/error.hpp"

namespace agcnn {

Var nll_loss(const GaussianVars& pred, Var target) {
  const Shape s = target.shape();
  if (pred.mu.shape() != s || s.size() != 3 || s[2] != 2)
    throw ShapeError("nll_loss: prediction " + shape_str(pred.mu.shape()) + " vs target " +
                     shape_str(s));
  const std::size_t n = s[0], t = s[1];
  auto chan = [](Var v, std::size_t c) { return slice(v, 2, c, c + 1); };

  // dx, dy normalised residuals
  Var dx = mul(sub(chan(target, 0), chan(pred.mu, 0)), exp(scale(chan(pred.log_sigma, 0), -1.0)));
  Var dy = mul(sub(chan(target, 1), chan(pred.mu, 1)), exp(scale(chan(pred.log_sigma, 1), -1.0)));
  Var rho = pred.rho;
  Var one_minus_r2 = add_scalar(scale(square(rho), -1.0), 1.0);
  Var quad = sub(add(square(dx), square(dy)), scale(mul(mul(rho, dx), dy), 2.0));
  // quad / (2 (1 - rho^2)) = 0.5 * quad * exp(-log(1 - rho^2))
  Var log_det = log(one_minus_r2);
  Var mahal = scale(mul(quad, exp(scale(log_det, -1.0))), 0.5);
  Var per_point = add(add(chan(pred.log_sigma, 0), chan(pred.log_sigma, 1)),
                      add(scale(log_det, 0.5), mahal));
  Var total = sum(per_point);
  return add_scalar(total, static_cast<double>(n * t) * std::log(2.0 * std::numbers::pi));
}

LossValue nll_loss(const GaussianField& pred, const Tensor& target) {
  if (pred.mu.shape() != target.shape())
    throw ShapeError("nll_loss: prediction " + shape_str(pred.mu.shape()) + " vs target " +
                     shape_str(target.shape()));
  Tape tape(false);
  Tensor log_sigma = pred.sigma;
  for (auto& v : log_sigma.storage()) v = std::log(v);
  const GaussianVars g{tape.constant(pred.mu), tape.constant(std::move(log_sigma)),
                       tape.constant(pred.rho.reshaped({pred.rho.dim(0), pred.rho.dim(1), 1}))};
  const double total = nll_loss(g, tape.constant(target)).value().item();
  return {total, total / static_cast<double>(target.dim(0))};
}

Var cde_loss(Var pred_abs, Var target_abs, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw DomainError("cde_loss: alpha must lie in [0, 1]");
  const Shape s = target_abs.shape();
  if (pred_abs.shape() != s || s.size() != 3 || s[2] != 2 || s[1] == 0)
    throw ShapeError("cde_loss: prediction " + shape_str(pred_abs.shape()) + " vs target " +
                     shape_str(s));
  Var dist = norm_last(sub(target_abs, pred_abs));  // N x T
  Var all_steps = sum(dist);
  Var final_step = sum(slice(dist, 1, s[1] - 1, s[1]));
  return add(scale(all_steps, alpha), scale(final_step, 1.0 - alpha));
}

LossValue cde_loss(const Tensor& pred_abs, const Tensor& target_abs, double alpha) {
  Tape tape(false);
  const double total =
      cde_loss(tape.constant(pred_abs), tape.constant(target_abs), alpha).value().item();
  return {total, total / static_cast<double>(target_abs.dim(0))};
}

}  // namespace agcnn
