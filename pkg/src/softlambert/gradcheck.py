"""Finite-difference certification of every analytic gradient.

Each suite builds seeded micro-instances (tiny nets, tiny maps), probes
every parameter with a central difference at step h = 1e-5, and compares
against the analytic gradient under the relative error

    |analytic - numeric| / max(1, |analytic|, |numeric|).

Suites cover each layer kind (plain and strided convolution, transposed
convolution, relu, plus the composite default stack) and each loss
(gaussian, laplace, constraint, the full training objective with its
shift alignment, and the plain euclidean variant). The CLI surfaces the
same suites, so a broken adjoint fails both the tests and the command
line with the offending suite named.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import losses, net as network
from .tensor import LogDomainImage, PlaneTensor

FD_STEP = 1e-5
REL_TOL = 1e-4


def relative_error(a: float, b: float) -> float:
    return abs(a - b) / max(1.0, abs(a), abs(b))


@dataclass
class SuiteResult:
    name: str
    instances: int
    max_rel_error: float
    passed: bool


def _fd_gradient(f: Callable[[np.ndarray], float], x: np.ndarray,
                 h: float = FD_STEP) -> np.ndarray:
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f(x)
        flat[i] = orig - h
        down = f(x)
        flat[i] = orig
        gf[i] = (up - down) / (2.0 * h)
    return g


def _compare(analytic: np.ndarray, numeric: np.ndarray) -> float:
    worst = 0.0
    for a, b in zip(analytic.reshape(-1), numeric.reshape(-1)):
        worst = max(worst, relative_error(float(a), float(b)))
    return worst


# ---------------------------------------------------------------------------
# Net suites: micro-architectures per layer kind, all heads summed into a
# scalar through fixed random head coefficients so every output channel
# contributes to the probe.

def _micro_layers(kind: str) -> tuple[network.LayerSpec, ...]:
    mk = network.LayerSpec
    if kind == "conv":
        return (mk("conv", 3, 2, 3, 1, 1), mk("conv", 2, 7, 1, 1, 0),
                mk("head_split", 7, 7, 1, 1, 0))
    if kind == "transposed_conv":
        return (mk("conv", 3, 2, 3, 2, 1), mk("transposed_conv", 2, 7, 4, 2, 1),
                mk("head_split", 7, 7, 1, 1, 0))
    if kind == "relu":
        return (mk("conv", 3, 4, 3, 1, 1), mk("relu", 4, 4, 1, 1, 0),
                mk("conv", 4, 7, 1, 1, 0), mk("head_split", 7, 7, 1, 1, 0))
    if kind == "stack":
        return (mk("conv", 3, 3, 3, 1, 1), mk("relu", 3, 3, 1, 1, 0),
                mk("conv", 3, 4, 3, 2, 1), mk("relu", 4, 4, 1, 1, 0),
                mk("transposed_conv", 4, 3, 4, 2, 1), mk("relu", 3, 3, 1, 1, 0),
                mk("conv", 3, 7, 1, 1, 0), mk("head_split", 7, 7, 1, 1, 0))
    raise ValueError(f"unknown micro net kind {kind!r}")


def _make_net_instance(kind: str, seed: int):
    """Seeded micro-instance with every relu pre-activation clear of the
    kink: central differences are meaningless within h of a relu corner,
    so instances whose forward pass grazes one are deterministically
    reseeded (zero-init biases otherwise park dead units exactly at 0).
    """
    h = w = 4
    for attempt in range(50):
        rng = np.random.default_rng(seed + 100_000 * attempt)
        state = network.init_net(seed, _micro_layers(kind))
        state = network.NetState(
            state.layers, [rng.normal(0.0, 0.5, wgt.shape) for wgt in state.weights],
            state.adam_m, state.adam_v, state.step_count, state.rng_seed)
        image = LogDomainImage(PlaneTensor(rng.normal(0.0, 1.0, (h, w, 3))), 1e-4)
        coeff = network.HeadBundle.from_map(rng.normal(0.0, 1.0, (h, w, 7)))
        _, cache = network.forward(state, image)
        margin = min((float(np.abs(x).min())
                      for spec, x in zip(state.layers, cache.entries)
                      if spec.kind == "relu"), default=1.0)
        if margin > 100.0 * FD_STEP:
            return state, image, coeff
    raise RuntimeError(f"could not build a kink-free instance for {kind!r}")


def _net_instance_error(kind: str, seed: int) -> float:
    state, image, coeff = _make_net_instance(kind, seed)

    def loss_at(state_: network.NetState) -> float:
        heads, _ = network.forward(state_, image)
        return float((heads.as_map() * coeff.as_map()).sum())

    _, cache = network.forward(state, image)
    analytic = network.backward(state, cache, coeff)

    worst = 0.0
    for widx, wgt in enumerate(state.weights):
        # _fd_gradient perturbs wgt in place, so loss_at sees the probe.
        numeric = _fd_gradient(lambda _x: loss_at(state), wgt)
        worst = max(worst, _compare(analytic[widx], numeric))
    return worst


def run_net_suite(kind: str, instances: int = 20, base_seed: int = 0) -> SuiteResult:
    worst = 0.0
    for i in range(instances):
        worst = max(worst, _net_instance_error(kind, base_seed + i))
    return SuiteResult(f"net:{kind}", instances, worst, worst < REL_TOL)


# ---------------------------------------------------------------------------
# Loss suites: probe the value function w.r.t. each input map and compare
# with the analytic gradients the loss returns.

def _random_heads(rng, h, w) -> network.HeadBundle:
    return network.HeadBundle.from_map(rng.normal(0.0, 1.0, (h, w, 7)))


def _loss_instance_error(name: str, seed: int) -> float:
    rng = np.random.default_rng(seed)
    h = w = 3
    if name in ("gaussian_nll", "laplace_nll"):
        mean = rng.normal(0.0, 1.0, (h, w, 3))
        log_var = rng.normal(0.0, 0.7, (h, w, 1))
        target = rng.normal(0.0, 1.0, (h, w, 3))
        fn = losses.gaussian_nll if name == "gaussian_nll" else losses.laplace_nll
        term = fn(mean, log_var, target)
        num_mean = _fd_gradient(lambda x: fn(x, log_var, target).value, mean)
        num_lv = _fd_gradient(lambda x: fn(mean, x, target).value, log_var)
        return max(_compare(term.grad_mean, num_mean),
                   _compare(term.grad_log_var, num_lv))
    if name.startswith("constraint_nll"):
        family = name.split(":")[1]
        residual = rng.normal(0.0, 1.0, (h, w, 3))
        log_var = rng.normal(0.0, 0.7, (h, w, 1))
        term = losses.constraint_nll(residual, log_var, family)
        num_res = _fd_gradient(
            lambda x: losses.constraint_nll(x, log_var, family).value, residual)
        num_lv = _fd_gradient(
            lambda x: losses.constraint_nll(residual, x, family).value, log_var)
        return max(_compare(term.grad_mean, num_res),
                   _compare(term.grad_log_var, num_lv))
    if name.startswith("total_training_loss") or name == "euclidean_training_loss":
        heads = _random_heads(rng, h, w)
        targets = {"A_log": rng.normal(0.0, 1.0, (h, w, 3)),
                   "B_log": rng.normal(0.0, 1.0, (h, w, 1))}
        image_log = rng.normal(0.0, 1.0, (h, w, 3))

        if name == "euclidean_training_loss":
            def evaluate(hb):
                return losses.euclidean_training_loss(hb, targets)
        else:
            family = name.split(":")[1]
            residual_source = name.split(":")[2]

            def evaluate(hb):
                return losses.total_training_loss(
                    hb, targets, image_log, lambda_reg=1e-3, family=family,
                    constraint_residual=residual_source)

        _, grads = evaluate(heads)
        analytic = grads.as_map()
        numeric = _fd_gradient(
            lambda x: evaluate(network.HeadBundle.from_map(x))[0],
            heads.as_map().copy())
        return _compare(analytic, numeric)
    raise ValueError(f"unknown loss suite {name!r}")


LOSS_SUITES = ("gaussian_nll", "laplace_nll",
               "constraint_nll:gaussian", "constraint_nll:laplace",
               "total_training_loss:gaussian:prediction",
               "total_training_loss:gaussian:truth",
               "total_training_loss:laplace:prediction",
               "euclidean_training_loss")

NET_SUITES = ("conv", "transposed_conv", "relu", "stack")


def run_loss_suite(name: str, instances: int = 20, base_seed: int = 100) -> SuiteResult:
    worst = 0.0
    for i in range(instances):
        worst = max(worst, _loss_instance_error(name, base_seed + i))
    return SuiteResult(f"loss:{name}", instances, worst, worst < REL_TOL)


def run_all(instances: int = 20, base_seed: int = 0,
            fault: str | None = None) -> list[SuiteResult]:
    """Run every suite. fault="sign" flips the sign of one analytic
    gradient inside the conv suite, for exercising the failure path."""
    results = []
    for kind in NET_SUITES:
        if fault == "sign" and kind == "conv":
            results.append(_run_conv_suite_with_sign_fault(instances, base_seed))
            continue
        results.append(run_net_suite(kind, instances, base_seed))
    for name in LOSS_SUITES:
        results.append(run_loss_suite(name, instances, base_seed + 100))
    return results


def _run_conv_suite_with_sign_fault(instances: int, base_seed: int) -> SuiteResult:
    state, image, coeff = _make_net_instance("conv", base_seed)
    _, cache = network.forward(state, image)
    analytic = [-g for g in network.backward(state, cache, coeff)]

    def loss_at():
        heads, _ = network.forward(state, image)
        return float((heads.as_map() * coeff.as_map()).sum())

    worst = 0.0
    for widx, wgt in enumerate(state.weights):
        numeric = _fd_gradient(lambda _x: loss_at(), wgt)
        worst = max(worst, _compare(analytic[widx], numeric))
    return SuiteResult("net:conv", 1, worst, worst < REL_TOL)


def format_results(results: list[SuiteResult]) -> str:
    lines = []
    for r in results:
        status = "pass" if r.passed else "FAIL"
        lines.append(f"{status}  {r.name:<44} instances={r.instances:<3} "
                     f"max_rel_err={r.max_rel_error:.3e}")
    overall = "all gradients certified" if all(r.passed for r in results) \
        else "GRADIENT CHECK FAILED"
    lines.append(overall)
    return "\n".join(lines) + "\n"
