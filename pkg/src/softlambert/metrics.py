"""Image similarity metrics for decomposition quality.

All metrics take (h, w, c) float64 arrays in linear intensity. Lower is
better for every metric here.

* si_mse: mean squared error after the single best global scale, so a
  prediction that differs from the target by an overall gain scores 0.
* lmse: scale-invariant error accumulated over overlapping square
  windows, each window with its own best scale, normalized by the total
  target energy over the same windows.
* dssim: structural dissimilarity (1 - SSIM) / 2 with an 11x11 Gaussian
  window (sigma 1.5) on intensities clipped to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DSSIM_WINDOW = 11
DSSIM_SIGMA = 1.5
DSSIM_C1 = 0.01 ** 2
DSSIM_C2 = 0.03 ** 2


def _check_pair(pred: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.ndim == 2:
        p = p[:, :, None]
    if t.ndim == 2:
        t = t[:, :, None]
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise ValueError("empty image")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(t))):
        raise ValueError("inputs must be finite")
    return p, t


def si_mse(pred: np.ndarray, target: np.ndarray) -> float:
    """MSE after the least-squares global scale s* = <p,t>/<p,p>.

    A zero prediction has no informative scale; s* is taken as 0 there,
    so the score degrades to the plain target energy.
    """
    p, t = _check_pair(pred, target)
    denom = float((p * p).sum())
    scale = float((p * t).sum()) / denom if denom > 0 else 0.0
    return float(((scale * p - t) ** 2).mean())


def default_lmse_window(h: int, w: int) -> int:
    return max(2, int(0.1 * max(h, w)))


def lmse(pred: np.ndarray, target: np.ndarray,
         window: int | None = None, stride: int | None = None) -> float:
    """Windowed scale-invariant error.

    Every window anchored at (i, j) with i, j stepping by the stride is
    clipped to the image bounds, its best scale (shared by all channels
    in the window) applied, and the squared errors summed; the total is
    divided by the summed target energy over the same windows. With a
    single window covering the image this reduces to si_mse divided by
    the mean target energy.
    """
    p, t = _check_pair(pred, target)
    h, w = p.shape[:2]
    if window is None:
        window = default_lmse_window(h, w)
    if stride is None:
        stride = max(1, window // 2)
    if window < 2:
        raise ValueError("window must be >= 2")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if window > max(h, w):
        raise ValueError(f"window {window} larger than image {h}x{w}")
    sse_total = 0.0
    energy_total = 0.0
    for i in range(0, h, stride):
        for j in range(0, w, stride):
            pw = p[i:min(i + window, h), j:min(j + window, w), :]
            tw = t[i:min(i + window, h), j:min(j + window, w), :]
            dot_pp = float((pw * pw).sum())
            scale = float((pw * tw).sum()) / dot_pp if dot_pp > 0 else 0.0
            sse_total += float(((scale * pw - tw) ** 2).sum())
            energy_total += float((tw * tw).sum())
    if energy_total == 0.0:
        return 0.0
    return sse_total / energy_total


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    win = np.outer(g, g)
    return win / win.sum()


def _filter_sym(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    """2D correlation with symmetric (reflect-including-edge) padding."""
    k = win.shape[0]
    ph = k // 2
    padded = np.pad(img, ((ph, ph), (ph, ph)), mode="symmetric")
    h, w = img.shape
    s0, s1 = padded.strides
    windows = np.lib.stride_tricks.as_strided(
        padded, shape=(h, w, k, k), strides=(s0, s1, s0, s1), writeable=False)
    return np.einsum("ijkl,kl->ij", windows, win)


def dssim(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean structural dissimilarity, (1 - SSIM) / 2, over channels.

    Intensities are clipped to [0, 1] first (dynamic range L = 1), and
    the local statistics use an 11x11 Gaussian window with sigma 1.5 and
    stabilizers C1 = 1e-4, C2 = 9e-4.
    """
    p, t = _check_pair(pred, target)
    p = np.clip(p, 0.0, 1.0)
    t = np.clip(t, 0.0, 1.0)
    win = _gaussian_window(DSSIM_WINDOW, DSSIM_SIGMA)
    vals = []
    for c in range(p.shape[2]):
        x = p[:, :, c]
        y = t[:, :, c]
        mu_x = _filter_sym(x, win)
        mu_y = _filter_sym(y, win)
        xx = _filter_sym(x * x, win) - mu_x ** 2
        yy = _filter_sym(y * y, win) - mu_y ** 2
        xy = _filter_sym(x * y, win) - mu_x * mu_y
        ssim_map = ((2 * mu_x * mu_y + DSSIM_C1) * (2 * xy + DSSIM_C2)) / \
            ((mu_x ** 2 + mu_y ** 2 + DSSIM_C1) * (xx + yy + DSSIM_C2))
        vals.append(float(ssim_map.mean()))
    return (1.0 - float(np.mean(vals))) / 2.0


@dataclass(frozen=True)
class MetricReport:
    """Mean si-MSE / LMSE / DSSIM over a set of images, with the
    per-image (mse, lmse, dssim) triples they were averaged from."""

    mse: float
    lmse: float
    dssim: float
    per_image: list[tuple[float, float, float]]

    def __post_init__(self):
        if not self.per_image:
            raise ValueError("report needs at least one image")
        means = [float(np.mean([row[k] for row in self.per_image])) for k in range(3)]
        for got, want in zip((self.mse, self.lmse, self.dssim), means):
            if abs(got - want) > 1e-12 * max(1.0, abs(want)):
                raise ValueError("aggregate must be the mean of per-image values")


def score_images(pairs: list[tuple[np.ndarray, np.ndarray]],
                 window: int | None = None, stride: int | None = None) -> MetricReport:
    """Score each (pred, target) pair with all three metrics and average."""
    rows = [(si_mse(p, t), lmse(p, t, window, stride), dssim(p, t)) for p, t in pairs]
    return MetricReport(float(np.mean([r[0] for r in rows])),
                        float(np.mean([r[1] for r in rows])),
                        float(np.mean([r[2] for r in rows])),
                        rows)
