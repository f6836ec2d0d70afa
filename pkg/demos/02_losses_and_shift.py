#!/usr/bin/env python3
# The training loss, piece by piece: heteroscedastic negative log-likelihood,
# the zero-target constraint penalty, and the scale-free additive shift.

import numpy as np

from softlambert.losses import (
    constraint_nll,
    gaussian_nll,
    laplace_nll,
    optimal_shift,
)

rng = np.random.default_rng(0)

# ---------------------------------------------------------------------------
# 1. Gaussian NLL with a learned log-variance. Per element the value is
#    (mu - y)^2 * exp(-u) / 2 + u / 2 + log(2 pi) / 2   with u = log sigma^2.
mean = np.zeros((2, 2, 1))
target = np.ones((2, 2, 1))

for u in (-2.0, 0.0, 2.0):
    log_var = np.full((2, 2, 1), u)
    term = gaussian_nll(mean, log_var, target)
    print(f"gaussian nll, unit residual, log_var={u:+.0f}: {term.value:8.4f}")
# Small variance punishes the unit residual hard; large variance pays the
# log-partition price instead. The optimum u for a residual r is log r^2.

best_u = 0.0  # residual is 1 everywhere, so log r^2 = 0 is the minimum
term = gaussian_nll(mean, np.full((2, 2, 1), best_u), target)
print("gradient of log-var at its optimum (should be ~0):",
      f"{np.abs(term.grad_log_var).max():.2e}")

# ---------------------------------------------------------------------------
# 2. The Laplace family swaps the quadratic for an absolute residual.
value_g = gaussian_nll(mean, np.zeros((2, 2, 1)), target).value
value_l = laplace_nll(mean, np.zeros((2, 2, 1)), target).value
print(f"\nunit residual, unit scale: gaussian={value_g:.4f} laplace={value_l:.4f}")

# ---------------------------------------------------------------------------
# 3. The constraint penalty is the same NLL against a zero target: it asks
#    the slack (here: a made-up reconstruction residual) to be explainable
#    by the predicted constraint variance.
slack = rng.normal(scale=0.3, size=(2, 2, 1))
for family in ("gaussian", "laplace"):
    term = constraint_nll(slack, np.zeros((2, 2, 1)), family=family)
    print(f"constraint nll ({family}): {term.value:.4f}")

# ---------------------------------------------------------------------------
# 4. The shift: predictions in log domain are only defined up to a global
#    additive constant (a multiplicative gain in linear domain), so the loss
#    first aligns the prediction with the damped least-squares shift
#        alpha = sum(target - pred) / (N + beta).
pred = rng.normal(size=(4, 4, 1))
target = pred + 1.7          # same map, shifted by a constant
shift = optimal_shift(pred, target, beta=0.5)
print(f"\nconstant offset 1.7, recovered shift: {shift.alpha:.4f}")
print("(beta damps it slightly below 1.7; beta=0 recovers it exactly:",
      f"{optimal_shift(pred, target, beta=0.0).alpha:.4f})")

# The damping keeps the shift well-behaved when images are tiny: with one
# pixel and beta=0.5 the shift only absorbs two thirds of the offset.
one_pixel = np.zeros((1, 1, 1))
print("single pixel, offset 3.0, shift:",
      optimal_shift(one_pixel, one_pixel + 3.0, beta=0.5).alpha)

# After the shift, the residual the NLL sees is scale-free: multiplying a
# linear-domain prediction by any gain only changes alpha, not the loss.
shifted = shift.shifted
print("residual after shift (should be ~uniform, tiny):",
      f"max |shifted - target| = {np.abs(shifted - target).max():.4f}")
