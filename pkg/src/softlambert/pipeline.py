"""Training loop, decomposition wrapper, and the ablation runner.

The ablation grid crosses two training losses (plain shift-aligned
Euclidean vs heteroscedastic NLL with a constraint head) with three
inference modes (heads used verbatim, hard-constrained projection,
soft-constrained solve weighted by the learned variances). Training is
independent of the inference mode, so the runner trains once per
distinct training setup and reuses the weights across rows.
"""

from __future__ import annotations

import io
import csv
from dataclasses import dataclass, replace

import numpy as np

from . import inference, losses, metrics, net as network
from .synthdata import Scene
from .tensor import PlaneTensor, to_log

LOSSES = ("l2", "distributional")
INFERENCE_MODES = ("none", "hard", "soft_learned")
FAMILIES = ("gaussian", "laplace")
RESIDUAL_SOURCES = ("truth", "prediction")


@dataclass(frozen=True)
class AblationConfig:
    loss: str = "distributional"
    inference: str = "soft_learned"
    family: str = "gaussian"
    lambda_reg: float = 1e-3
    lr: float = 1e-4
    iterations: int = 2000
    seed: int = 0
    batch_size: int = 4
    shift_beta: float = losses.DEFAULT_SHIFT_BETA
    constraint_residual: str = "truth"
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.inference not in INFERENCE_MODES:
            raise ValueError(f"inference must be one of {INFERENCE_MODES}")
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}")
        if self.constraint_residual not in RESIDUAL_SOURCES:
            raise ValueError(f"constraint_residual must be one of {RESIDUAL_SOURCES}")
        if self.loss == "l2" and self.inference == "soft_learned":
            raise ValueError("soft_learned inference needs the distributional "
                             "loss; the l2 loss trains no variance heads")
        if self.lambda_reg < 0 or self.weight_decay < 0:
            raise ValueError("lambda_reg and weight_decay must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def training_key(self) -> tuple:
        """Fields that affect the trained weights (inference mode does not)."""
        return (self.loss, self.family, self.lambda_reg, self.lr,
                self.iterations, self.seed, self.batch_size, self.shift_beta,
                self.constraint_residual, self.weight_decay)

    def label(self) -> str:
        return f"{self.loss}+{self.inference}"


@dataclass
class TrainedModel:
    net: network.NetState
    config: AblationConfig
    loss_history: list[float]

    def __post_init__(self):
        if len(self.loss_history) != self.config.iterations:
            raise ValueError("loss_history must have one entry per iteration")


@dataclass(frozen=True)
class TrainExample:
    """One supervised scene: linear image plus log-domain targets."""

    image: PlaneTensor          # (h, w, 3) linear
    albedo_log: np.ndarray      # (h, w, 3)
    shading_log: np.ndarray     # (h, w, 1)


def example_from_scene(scene: Scene, epsilon: float = 1e-4) -> TrainExample:
    return TrainExample(scene.image,
                        np.log(np.maximum(scene.albedo.array, epsilon)),
                        np.log(np.maximum(scene.shading_gray.array, epsilon)))


def _example_loss(heads: network.HeadBundle, example: TrainExample,
                  image_log: np.ndarray, config: AblationConfig):
    targets = {"A_log": example.albedo_log, "B_log": example.shading_log}
    if config.loss == "l2":
        return losses.euclidean_training_loss(heads, targets, beta=config.shift_beta)
    return losses.total_training_loss(
        heads, targets, image_log, lambda_reg=config.lambda_reg,
        family=config.family, beta=config.shift_beta,
        constraint_residual=config.constraint_residual)


def train(dataset: list[TrainExample], config: AblationConfig,
          initial_state: network.NetState | None = None) -> TrainedModel:
    """Adam over minibatches sampled with replacement from a seeded
    stream; one loss_history entry (batch mean loss) per iteration.

    Pass initial_state to resume from a checkpoint; the sampling stream
    is keyed on (seed, starting step), so a resumed run and a rerun of
    that resumption draw identical batches.
    """
    if not dataset:
        raise ValueError("dataset must be non-empty")
    state = network.init_net(config.seed) if initial_state is None else initial_state
    rng = np.random.default_rng((config.seed, state.step_count))
    log_images = [to_log(ex.image) for ex in dataset]
    history: list[float] = []
    for _ in range(config.iterations):
        idx = rng.integers(0, len(dataset), size=config.batch_size)
        grad_sum = None
        loss_sum = 0.0
        for i in idx:
            heads, cache = network.forward(state, log_images[i])
            value, head_grads = _example_loss(heads, dataset[i],
                                              log_images[i].array, config)
            grads = network.backward(state, cache, head_grads)
            loss_sum += value
            if grad_sum is None:
                grad_sum = grads
            else:
                grad_sum = [a + b for a, b in zip(grad_sum, grads)]
        scale = 1.0 / config.batch_size
        grads = [g * scale for g in grad_sum]
        if config.weight_decay > 0.0:
            grads = [g + config.weight_decay * w
                     for g, w in zip(grads, state.weights)]
        state = network.adam_step(state, grads, lr=config.lr)
        history.append(loss_sum * scale)
    return TrainedModel(state, config, history)


def decompose(model: TrainedModel, image: PlaneTensor,
              sweeps: int = inference.DEFAULT_SWEEPS) -> inference.DecompositionResult:
    """Forward pass plus the configured inference step.

    Mode none returns the heads verbatim at C = 0 (empty objective
    trace). Hard projects onto the reconstruction constraint; after l2
    training the variance heads are untrained, so hard mode then uses
    unit weights (plain Euclidean projection).
    """
    log_image = to_log(image)
    heads, _ = network.forward(model.net, log_image)
    image_log = log_image.array
    mode = model.config.inference
    if mode == "none":
        slack = heads.albedo_mean + heads.shading_mean - image_log
        return inference.DecompositionResult(
            heads.albedo_mean.copy(), heads.shading_mean.copy(), np.zeros(3),
            slack, [])
    unit = model.config.loss == "l2"
    return inference.alternating_decompose(
        heads, image_log, mode={"hard": "hard", "soft_learned": "soft"}[mode],
        sweeps=sweeps, unit_weights=unit)


def linear_outputs(result: inference.DecompositionResult):
    """Linear-domain (albedo, colored shading, reconstruction) maps."""
    albedo = np.exp(result.A_log)
    shading = np.exp(result.B_log + result.C_log[None, None, :])
    return albedo, shading, albedo * shading


@dataclass(frozen=True)
class AblationReport:
    """One row per config; per output (albedo, colored shading) and per
    metric the mean over the test scenes, metric-major column order.

    Every prediction is aligned with its least-squares scale before
    scoring, so all columns are invariant to the global gain the
    shift-aligned losses leave free.
    """

    columns: tuple[str, ...]
    rows: list[tuple[str, tuple[float, ...]]]

    def to_text(self) -> str:
        label_w = max(len("config"), max((len(r[0]) for r in self.rows), default=0))
        widths = [max(len(c), 10) for c in self.columns]
        head = "config".ljust(label_w) + "  " + \
            "  ".join(c.rjust(w) for c, w in zip(self.columns, widths))
        lines = [head, "-" * len(head)]
        for label, vals in self.rows:
            cells = "  ".join(f"{v:.6f}".rjust(w) for v, w in zip(vals, widths))
            lines.append(label.ljust(label_w) + "  " + cells)
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(("config",) + self.columns)
        for label, vals in self.rows:
            writer.writerow((label,) + tuple(f"{v:.10g}" for v in vals))
        return buf.getvalue()

    def cell(self, label: str, column: str) -> float:
        for row_label, vals in self.rows:
            if row_label == label:
                return vals[self.columns.index(column)]
        raise KeyError(label)


METRIC_COLUMNS = tuple(f"{m}_{o}" for m in ("mse", "lmse", "dssim")
                       for o in ("albedo", "shading", "avg"))


def _scored_outputs(model: TrainedModel, scene: Scene,
                    window: int | None, stride: int | None):
    result = decompose(model, scene.image)
    albedo_pred, shading_pred, _ = linear_outputs(result)
    albedo_true = scene.albedo.array
    shading_true = scene.shading_gray.array * \
        np.asarray(scene.light_color)[None, None, :]
    out = {}
    for name, pred, true in (("albedo", albedo_pred, albedo_true),
                             ("shading", shading_pred, shading_true)):
        denom = float((pred * pred).sum())
        scale = float((pred * true).sum()) / denom if denom > 0 else 0.0
        aligned = scale * pred
        out[name] = (metrics.si_mse(aligned, true),
                     metrics.lmse(aligned, true, window, stride),
                     metrics.dssim(aligned, true))
    return out


def evaluate_model(model: TrainedModel, test: list[tuple[str, Scene]],
                   window: int | None = None,
                   stride: int | None = None) -> dict[str, float]:
    per_metric: dict[str, list[float]] = {c: [] for c in METRIC_COLUMNS}
    for _, scene in test:
        scored = _scored_outputs(model, scene, window, stride)
        for k, m in enumerate(("mse", "lmse", "dssim")):
            a = scored["albedo"][k]
            s = scored["shading"][k]
            per_metric[f"{m}_albedo"].append(a)
            per_metric[f"{m}_shading"].append(s)
            per_metric[f"{m}_avg"].append(0.5 * (a + s))
    return {c: float(np.mean(v)) for c, v in per_metric.items()}


def evaluate_truth_against_itself(test: list[tuple[str, Scene]],
                                  window: int | None = None,
                                  stride: int | None = None) -> dict[str, float]:
    """Score the ground truth as its own prediction; a correctness probe
    for the metric stack (every column must come back 0)."""
    per_metric: dict[str, list[float]] = {c: [] for c in METRIC_COLUMNS}
    for _, scene in test:
        albedo = scene.albedo.array
        shading = scene.shading_gray.array * \
            np.asarray(scene.light_color)[None, None, :]
        for k, m in enumerate(("mse", "lmse", "dssim")):
            fn = (metrics.si_mse,
                  lambda p, t: metrics.lmse(p, t, window, stride),
                  metrics.dssim)[k]
            a = fn(albedo, albedo)
            s = fn(shading, shading)
            per_metric[f"{m}_albedo"].append(a)
            per_metric[f"{m}_shading"].append(s)
            per_metric[f"{m}_avg"].append(0.5 * (a + s))
    return {c: float(np.mean(v)) for c, v in per_metric.items()}


def run_ablation(train_scenes: list[tuple[str, Scene]],
                 test_scenes: list[tuple[str, Scene]],
                 configs: list[AblationConfig],
                 window: int | None = None,
                 stride: int | None = None) -> AblationReport:
    """Train each distinct training setup once, decompose the test split
    per config row, and tabulate the scale-aligned metrics."""
    train_ids = {sid for sid, _ in train_scenes}
    test_ids = {sid for sid, _ in test_scenes}
    overlap = train_ids & test_ids
    if overlap:
        raise ValueError(f"train/test scene ids overlap: {sorted(overlap)}")
    examples = [example_from_scene(scene) for _, scene in train_scenes]
    trained: dict[tuple, TrainedModel] = {}
    rows = []
    for config in configs:
        key = config.training_key()
        if key not in trained:
            trained[key] = train(examples, config)
        model = TrainedModel(trained[key].net, config, trained[key].loss_history)
        scores = evaluate_model(model, test_scenes, window, stride)
        rows.append((config.label(), tuple(scores[c] for c in METRIC_COLUMNS)))
    return AblationReport(METRIC_COLUMNS, rows)


def default_ablation_configs(iterations: int = 2000, seed: int = 0,
                             **overrides) -> list[AblationConfig]:
    """The five-row grid: l2 and distributional losses crossed with the
    inference modes each supports."""
    base = AblationConfig(iterations=iterations, seed=seed, **overrides)
    rows = [("l2", "none"), ("l2", "hard"), ("distributional", "none"),
            ("distributional", "hard"), ("distributional", "soft_learned")]
    return [replace(base, loss=lo, inference=inf) for lo, inf in rows]
