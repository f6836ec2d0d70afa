"""Training objectives with analytic gradients w.r.t. the head maps.

Output heads are trained with a heteroscedastic negative log-likelihood:
the net predicts a mean map and a log-variance map, and the NLL weighs
squared residuals by the predicted inverse variance while penalizing
overconfidence through the log-variance term. The Lambertian constraint
residual gets the same treatment with a zero mean.

Albedo and shading are only defined up to a global scale, so every loss
is evaluated after an optimal per-image additive shift in log domain
(regularized so the net cannot push its outputs to an arbitrary scale);
gradients flow through the closed-form shift.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))
LOG_2 = float(np.log(2.0))

DEFAULT_SHIFT_BETA = 0.5

_FAMILIES = ("gaussian", "laplace")


@dataclass
class NllTerm:
    """Summed loss value plus gradients w.r.t. the mean and log-variance maps."""

    value: float
    grad_mean: np.ndarray
    grad_log_var: np.ndarray


@dataclass
class ShiftResult:
    alpha: float
    shifted: np.ndarray


def _check_broadcast(mean: np.ndarray, log_var: np.ndarray, target: np.ndarray) -> None:
    if mean.shape != target.shape:
        raise ValueError(f"mean/target shape mismatch: {mean.shape} vs {target.shape}")
    if log_var.shape[:2] != mean.shape[:2]:
        raise ValueError(f"log_var spatial dims {log_var.shape[:2]} != {mean.shape[:2]}")
    if log_var.shape[2] not in (1, mean.shape[2]):
        raise ValueError(
            f"log_var channels {log_var.shape[2]} not broadcastable to {mean.shape[2]}")


def gaussian_nll(mean: np.ndarray, log_var: np.ndarray, target: np.ndarray) -> NllTerm:
    """Negative log-likelihood of target under N(mean, exp(log_var)).

    value = 1/2 sum[(mu-y)^2 e^-u + u + log 2pi] with u = log sigma^2.
    A 1-channel log_var against a multi-channel mean is broadcast (tied
    sigma across channels); its gradient accumulates over those channels.
    """
    _check_broadcast(mean, log_var, target)
    r = mean - target
    inv_var = np.exp(-log_var)
    per_elem = r * r * inv_var + log_var + LOG_2PI
    value = 0.5 * float(per_elem.sum())
    grad_mean = r * inv_var
    grad_u = 0.5 * (1.0 - r * r * inv_var)
    if log_var.shape[2] == 1 and mean.shape[2] > 1:
        grad_u = grad_u.sum(axis=2, keepdims=True)
    return NllTerm(value, grad_mean, grad_u)


def laplace_nll(mean: np.ndarray, log_var: np.ndarray, target: np.ndarray) -> NllTerm:
    """Negative log-likelihood under Laplace(mean, scale=exp(b)), b = log_var map.

    value = sum[|mu-y| e^-b + b + log 2]. The location subgradient at an
    exactly zero residual is taken as 0.
    """
    _check_broadcast(mean, log_var, target)
    r = mean - target
    inv_scale = np.exp(-log_var)
    value = float((np.abs(r) * inv_scale + log_var + LOG_2).sum())
    grad_mean = np.sign(r) * inv_scale
    grad_b = 1.0 - np.abs(r) * inv_scale
    if log_var.shape[2] == 1 and mean.shape[2] > 1:
        grad_b = grad_b.sum(axis=2, keepdims=True)
    return NllTerm(value, grad_mean, grad_b)


def constraint_nll(residual: np.ndarray, log_var: np.ndarray, family: str) -> NllTerm:
    """Zero-mean NLL of the constraint residual under the chosen family.

    grad_mean is the gradient w.r.t. the residual itself.
    """
    if family not in _FAMILIES:
        raise ValueError(f"family must be one of {_FAMILIES}, got {family!r}")
    zero = np.zeros_like(residual)
    if family == "gaussian":
        return gaussian_nll(residual, log_var, zero)
    return laplace_nll(residual, log_var, zero)


def optimal_shift(pred: np.ndarray, target: np.ndarray,
                  beta: float = DEFAULT_SHIFT_BETA) -> ShiftResult:
    """Closed-form minimizer of ||alpha + pred - target||^2 + beta*alpha^2.

    alpha = sum(target - pred) / (N + beta): one scalar per (image, head).
    """
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    if beta < 0:
        raise ValueError("beta must be non-negative")
    n = pred.size
    if n == 0:
        raise ValueError("empty map")
    alpha = float((target - pred).sum() / (n + beta))
    return ShiftResult(alpha, pred + alpha)


def shift_backward(grad_shifted: np.ndarray, beta: float = DEFAULT_SHIFT_BETA) -> np.ndarray:
    """Pull a gradient on (pred + alpha) back onto pred.

    d alpha / d pred_j = -1/(N + beta), so each element loses the mean of the
    upstream gradient scaled by N/(N + beta).
    """
    n = grad_shifted.size
    return grad_shifted - grad_shifted.sum() / (n + beta)


@dataclass
class HeadGradients:
    """Gradients of a scalar training loss w.r.t. each head map."""

    albedo_mean: np.ndarray
    shading_mean: np.ndarray
    log_var_albedo: np.ndarray
    log_var_shading: np.ndarray
    log_var_constraint: np.ndarray

    def as_map(self) -> np.ndarray:
        """Concatenate in head-channel order, matching HeadBundle.as_map."""
        return np.concatenate(
            [self.albedo_mean, self.shading_mean, self.log_var_albedo,
             self.log_var_shading, self.log_var_constraint], axis=2)


def total_training_loss(heads, targets: dict, image_log: np.ndarray,
                        lambda_reg: float, family: str,
                        beta: float = DEFAULT_SHIFT_BETA,
                        constraint_residual: str = "prediction"):
    """Full distributional objective: output NLLs + constraint NLL + regularizer.

    targets carries log-domain maps under keys "A_log" (h,w,3) and
    "B_log" (h,w,1). Both output heads are shift-aligned before their NLLs,
    and with constraint_residual="prediction" the constraint term uses the
    shifted predictions (training-time light color is zero, so the residual
    is A_c + B - I_c per channel). With "truth" the residual comes from the
    ground-truth maps instead and only the sigma_G head receives gradient
    from the constraint term.

    Returns (value, HeadGradients).
    """
    if constraint_residual not in ("prediction", "truth"):
        raise ValueError(f"unknown constraint_residual {constraint_residual!r}")
    a_log, b_log = targets["A_log"], targets["B_log"]

    shift_a = optimal_shift(heads.albedo_mean, a_log, beta)
    shift_b = optimal_shift(heads.shading_mean, b_log, beta)

    term_a = gaussian_nll(shift_a.shifted, heads.log_var_albedo, a_log)
    term_b = gaussian_nll(shift_b.shifted, heads.log_var_shading, b_log)

    if constraint_residual == "prediction":
        residual = shift_a.shifted + shift_b.shifted - image_log
    else:
        residual = a_log + b_log - image_log
    term_g = constraint_nll(residual, heads.log_var_constraint, family)

    value = term_a.value + term_b.value + term_g.value

    grad_a_shifted = term_a.grad_mean
    grad_b_shifted = term_b.grad_mean
    if constraint_residual == "prediction":
        grad_a_shifted = grad_a_shifted + term_g.grad_mean
        grad_b_shifted = grad_b_shifted + term_g.grad_mean.sum(axis=2, keepdims=True)

    grads = HeadGradients(
        albedo_mean=shift_backward(grad_a_shifted, beta),
        shading_mean=shift_backward(grad_b_shifted, beta),
        log_var_albedo=term_a.grad_log_var.copy(),
        log_var_shading=term_b.grad_log_var.copy(),
        log_var_constraint=term_g.grad_log_var.copy(),
    )

    if lambda_reg:
        for u, g in ((heads.log_var_albedo, grads.log_var_albedo),
                     (heads.log_var_shading, grads.log_var_shading),
                     (heads.log_var_constraint, grads.log_var_constraint)):
            value += lambda_reg * float((u * u).sum())
            g += 2.0 * lambda_reg * u
    return value, grads


def euclidean_training_loss(heads, targets: dict,
                            beta: float = DEFAULT_SHIFT_BETA):
    """Plain shift-aligned squared error on the two mean heads.

    value = ||A_shifted - A~||^2 + ||B_shifted - B~||^2; the variance heads
    are untouched (zero gradient), which is how the L2 ablation detaches them.
    """
    a_log, b_log = targets["A_log"], targets["B_log"]
    shift_a = optimal_shift(heads.albedo_mean, a_log, beta)
    shift_b = optimal_shift(heads.shading_mean, b_log, beta)
    ra = shift_a.shifted - a_log
    rb = shift_b.shifted - b_log
    value = float((ra * ra).sum() + (rb * rb).sum())
    grads = HeadGradients(
        albedo_mean=shift_backward(2.0 * ra, beta),
        shading_mean=shift_backward(2.0 * rb, beta),
        log_var_albedo=np.zeros_like(heads.log_var_albedo),
        log_var_shading=np.zeros_like(heads.log_var_shading),
        log_var_constraint=np.zeros_like(heads.log_var_constraint),
    )
    return value, grads
