#pragma once

#include <vector>

#include "agcnn/model.hpp"
#include "agcnn/tape.hpp"

namespace agcnn {

struct LossValue {
  double total = 0.0;          // summed over pedestrians and steps
  double per_pedestrian = 0.0; // total / N, for logging across crowd sizes
};

// Negative log-likelihood of `target` (N x T x 2 displacements) under the
// bivariate Gaussian head, summed over pedestrians and predicted steps.
// Evaluated in the log domain from log-sigma.
Var nll_loss(const GaussianVars& pred, Var target);
LossValue nll_loss(const GaussianField& pred, const Tensor& target);

// alpha * sum_{i,t} |Y - Yhat| + (1 - alpha) * sum_i |Y_T - Yhat_T| on
// absolute positions.
Var cde_loss(Var pred_abs, Var target_abs, double alpha);
LossValue cde_loss(const Tensor& pred_abs, const Tensor& target_abs, double alpha);

}  // namespace agcnn
