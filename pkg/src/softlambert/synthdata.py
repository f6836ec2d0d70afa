"""Deterministic synthetic scenes with ground-truth decompositions.

Each scene is built from the generative counterparts of the decomposition
priors: piecewise-constant random albedo (Voronoi cells), smooth gray
shading (bilinear upsampling of a coarse grid), and a global light color.
The rendered image is

    image_c = albedo_c * shading * light_c  (+ strength * shading inside
                                             the violation mask)

so off-mask pixels satisfy the multiplicative reconstruction identity
exactly, while masked pixels carry an additive highlight that breaks it
in a spatially coherent, predictable way. If the highlight pushes the
image above 1 the whole scene is renormalized by folding the factor into
the shading channel, which keeps the identity exact.

Same spec (including seed) always yields a bit-identical scene.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import PlaneTensor

ALBEDO_RANGE = (0.1, 1.0)
SHADING_RANGE = (0.2, 1.0)
LIGHT_RANGE = (0.5, 1.0)
LAMBERTIAN_TOL = 1e-9


@dataclass(frozen=True)
class SceneSpec:
    """Generator parameters; every field participates in determinism."""

    seed: int
    size: tuple[int, int] = (32, 32)
    albedo_cells: int = 8
    shading_smoothness: int = 4
    light_color: tuple[float, float, float] | None = None  # None: drawn from seed
    specular_fraction: float = 0.0
    specular_strength: float = 0.0

    def __post_init__(self):
        h, w = self.size
        if h < 2 or w < 2:
            raise ValueError(f"size must be at least 2x2, got {self.size}")
        if self.albedo_cells < 1:
            raise ValueError("albedo_cells must be >= 1")
        if self.shading_smoothness < 1:
            raise ValueError("shading_smoothness must be >= 1")
        if self.light_color is not None:
            for v in self.light_color:
                if not (LIGHT_RANGE[0] <= v <= LIGHT_RANGE[1]):
                    raise ValueError(f"light_color components must lie in {LIGHT_RANGE}")
        if not (0.0 <= self.specular_fraction <= 0.5):
            raise ValueError("specular_fraction must lie in [0, 0.5]")
        if self.specular_strength < 0.0:
            raise ValueError("specular_strength must be >= 0")


@dataclass(frozen=True)
class Scene:
    """Rendered image plus the ground truth it was rendered from."""

    image: PlaneTensor          # (h, w, 3) linear
    albedo: PlaneTensor         # (h, w, 3) linear, (0, 1]
    shading_gray: PlaneTensor   # (h, w, 1) linear, (0, 1]
    light_color: tuple[float, float, float]
    violation_mask: np.ndarray  # (h, w) bool

    def __post_init__(self):
        img = self.image.array
        recon = self.albedo.array * self.shading_gray.array * \
            np.asarray(self.light_color)[None, None, :]
        gap = img - recon
        off = ~self.violation_mask
        if off.any() and np.abs(gap[off]).max() > LAMBERTIAN_TOL:
            raise ValueError("off-mask pixels must reconstruct multiplicatively")
        if self.violation_mask.any() and gap[self.violation_mask].min() <= 0.0:
            raise ValueError("masked pixels must carry a positive highlight")
        for name, arr in (("albedo", self.albedo.array),
                          ("shading_gray", self.shading_gray.array)):
            if arr.min() <= 0.0 or arr.max() > 1.0 + 1e-12:
                raise ValueError(f"{name} must lie in (0, 1]")
        if img.min() < 0.0:
            raise ValueError("image must be non-negative")


def _voronoi_albedo(rng: np.random.Generator, h: int, w: int, cells: int) -> np.ndarray:
    sites = rng.uniform(0.0, 1.0, size=(cells, 2)) * np.array([h, w])
    colors = rng.uniform(*ALBEDO_RANGE, size=(cells, 3))
    ys, xs = np.mgrid[0:h, 0:w]
    d2 = (ys[:, :, None] - sites[None, None, :, 0]) ** 2 \
        + (xs[:, :, None] - sites[None, None, :, 1]) ** 2
    return colors[np.argmin(d2, axis=2)]


def _smooth_shading(rng: np.random.Generator, h: int, w: int, grid: int) -> np.ndarray:
    coarse = rng.uniform(*SHADING_RANGE, size=(grid, grid))
    if grid == 1:
        return np.full((h, w), float(coarse[0, 0]))
    # Bilinear, corners aligned: grid corners map onto image corners.
    gy = np.linspace(0.0, grid - 1.0, h)
    gx = np.linspace(0.0, grid - 1.0, w)
    y0 = np.minimum(gy.astype(int), grid - 2)
    x0 = np.minimum(gx.astype(int), grid - 2)
    fy = (gy - y0)[:, None]
    fx = (gx - x0)[None, :]
    c00 = coarse[np.ix_(y0, x0)]
    c01 = coarse[np.ix_(y0, x0 + 1)]
    c10 = coarse[np.ix_(y0 + 1, x0)]
    c11 = coarse[np.ix_(y0 + 1, x0 + 1)]
    return (c00 * (1 - fy) * (1 - fx) + c01 * (1 - fy) * fx
            + c10 * fy * (1 - fx) + c11 * fy * fx)


def _blob_mask(rng: np.random.Generator, h: int, w: int, fraction: float) -> np.ndarray:
    mask = np.zeros((h, w), dtype=bool)
    if fraction <= 0.0:
        return mask
    target = fraction * h * w
    r_lo = max(1.5, 0.05 * min(h, w))
    r_hi = max(r_lo + 0.5, 0.15 * min(h, w))
    ys, xs = np.mgrid[0:h, 0:w]
    for _ in range(1000):
        if mask.sum() >= target:
            break
        cy = rng.uniform(0, h)
        cx = rng.uniform(0, w)
        r = rng.uniform(r_lo, r_hi)
        mask |= (ys - cy) ** 2 + (xs - cx) ** 2 <= r * r
    return mask


def generate(spec: SceneSpec) -> Scene:
    """Render one scene. The violation mask is drawn after everything
    else, so scenes differing only in mask parameters share their
    albedo, shading, and light color bit for bit."""
    h, w = spec.size
    rng = np.random.default_rng(spec.seed)
    albedo = _voronoi_albedo(rng, h, w, spec.albedo_cells)
    shading = _smooth_shading(rng, h, w, spec.shading_smoothness)
    if spec.light_color is None:
        light = tuple(float(v) for v in rng.uniform(*LIGHT_RANGE, size=3))
    else:
        light = tuple(float(v) for v in spec.light_color)
    mask = _blob_mask(rng, h, w, spec.specular_fraction)
    if spec.specular_strength == 0.0:
        mask = np.zeros((h, w), dtype=bool)

    image = albedo * shading[:, :, None] * np.asarray(light)[None, None, :]
    image = image + (spec.specular_strength * shading * mask)[:, :, None]
    peak = float(image.max())
    if peak > 1.0:
        # Fold the normalization into the shading channel; both the
        # multiplicative identity and the additive highlight scale with
        # shading, so ground truth stays exactly consistent.
        image = image / peak
        shading = shading / peak
    return Scene(PlaneTensor(image), PlaneTensor(albedo),
                 PlaneTensor(shading[:, :, None]), light, mask)


@dataclass(frozen=True)
class Dataset:
    ids: list[str]
    scenes: list[Scene]
    train_ids: list[str]
    test_ids: list[str]

    def scene_by_id(self, scene_id: str) -> Scene:
        return self.scenes[self.ids.index(scene_id)]


def make_dataset(n_scenes: int, base_seed: int, template: SceneSpec) -> Dataset:
    """Generate scenes seeded base_seed + index with the template's other
    parameters; even indices form the train split, odd the test split."""
    if n_scenes < 2:
        raise ValueError("need at least 2 scenes for a disjoint split")
    ids = [f"scene_{i:04d}" for i in range(n_scenes)]
    scenes = []
    for i in range(n_scenes):
        spec = SceneSpec(seed=base_seed + i, size=template.size,
                         albedo_cells=template.albedo_cells,
                         shading_smoothness=template.shading_smoothness,
                         light_color=template.light_color,
                         specular_fraction=template.specular_fraction,
                         specular_strength=template.specular_strength)
        scenes.append(generate(spec))
    train_ids = [ids[i] for i in range(n_scenes) if i % 2 == 0]
    test_ids = [ids[i] for i in range(n_scenes) if i % 2 == 1]
    return Dataset(ids, scenes, train_ids, test_ids)
