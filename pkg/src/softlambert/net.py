"""Small encoder-decoder convnet with hand-written reverse-mode gradients.

The network maps a 3-channel log-domain image to seven full-resolution
output channels: a 3-channel log-albedo mean, a 1-channel log-shading
mean, and three 1-channel log-variance maps (albedo, shading, constraint).
Variances are stored as log sigma^2 so exp(.) keeps them positive.

Layers are plain numpy; convolution and its two adjoints (gradient w.r.t.
input and weight) are the only primitives, and the transposed convolution
is implemented as the input-gradient adjoint of a strided convolution.
Everything is float64 and deterministic given the seed.
"""

from __future__ import annotations

import io
import itertools
import json
import struct
from dataclasses import dataclass

import numpy as np

from .tensor import LogDomainImage

CHECKPOINT_MAGIC = b"CSRNET01"

# Channel layout of the 7-channel head map.
ALBEDO_MEAN = slice(0, 3)
SHADING_MEAN = slice(3, 4)
LOG_VAR_ALBEDO = slice(4, 5)
LOG_VAR_SHADING = slice(5, 6)
LOG_VAR_CONSTRAINT = slice(6, 7)
HEAD_CHANNELS = 7

_LAYER_KINDS = ("conv", "transposed_conv", "relu", "head_split")

_token_counter = itertools.count(1)


class StaleCacheError(RuntimeError):
    """Raised when backward() receives a cache from a different NetState."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 0
    stride: int = 1
    pad: int = 0

    def __post_init__(self):
        if self.kind not in _LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind in ("conv", "transposed_conv"):
            if self.kernel < 1:
                raise ValueError("conv kernels must be square and positive")
            if self.stride not in (1, 2):
                raise ValueError("stride must be 1 or 2")

    @property
    def has_weights(self) -> bool:
        return self.kind in ("conv", "transposed_conv")


@dataclass(frozen=True)
class HeadBundle:
    """Per-pixel prediction maps, all at the input's spatial resolution."""

    albedo_mean: np.ndarray        # (h, w, 3), log domain
    shading_mean: np.ndarray       # (h, w, 1), log domain
    log_var_albedo: np.ndarray     # (h, w, 1)
    log_var_shading: np.ndarray    # (h, w, 1)
    log_var_constraint: np.ndarray  # (h, w, 1)

    def as_map(self) -> np.ndarray:
        """Concatenate back into the raw 7-channel map."""
        return np.concatenate(
            [self.albedo_mean, self.shading_mean, self.log_var_albedo,
             self.log_var_shading, self.log_var_constraint], axis=2)

    @staticmethod
    def from_map(full: np.ndarray) -> "HeadBundle":
        if full.shape[2] != HEAD_CHANNELS:
            raise ValueError(f"head map must have {HEAD_CHANNELS} channels")
        return HeadBundle(
            albedo_mean=full[:, :, ALBEDO_MEAN],
            shading_mean=full[:, :, SHADING_MEAN],
            log_var_albedo=full[:, :, LOG_VAR_ALBEDO],
            log_var_shading=full[:, :, LOG_VAR_SHADING],
            log_var_constraint=full[:, :, LOG_VAR_CONSTRAINT],
        )

    @staticmethod
    def zeros_like(other: "HeadBundle") -> "HeadBundle":
        return HeadBundle.from_map(np.zeros_like(other.as_map()))


class NetState:
    """Weights, Adam moments, and architecture. Treated as immutable;
    adam_step returns a fresh NetState."""

    def __init__(self, layers, weights, adam_m, adam_v, step_count, rng_seed):
        self.layers = tuple(layers)
        self.weights = list(weights)
        self.adam_m = list(adam_m)
        self.adam_v = list(adam_v)
        self.step_count = int(step_count)
        self.rng_seed = int(rng_seed)
        self.token = next(_token_counter)
        for w, m, v in zip(self.weights, self.adam_m, self.adam_v):
            if m.shape != w.shape or v.shape != w.shape:
                raise ValueError("Adam moment shapes must mirror weight shapes")

    def num_parameters(self) -> int:
        return int(sum(w.size for w in self.weights))


class ActivationCache:
    """Per-layer inputs saved by forward() for the matching backward()."""

    def __init__(self, token, entries, input_shape):
        self.token = token
        self.entries = entries
        self.input_shape = input_shape


def default_architecture() -> tuple[LayerSpec, ...]:
    """Two stride-2 encoder stages, two stride-2 decoder stages, 1x1 head.

    With pad=1 everywhere, dims divisible by 4 are reproduced exactly:
    3x3/s2 convs halve even sizes and 4x4/s2 transposed convs double them.
    """
    return (
        LayerSpec("conv", 3, 16, kernel=3, stride=1, pad=1),
        LayerSpec("relu"),
        LayerSpec("conv", 16, 32, kernel=3, stride=2, pad=1),
        LayerSpec("relu"),
        LayerSpec("conv", 32, 32, kernel=3, stride=2, pad=1),
        LayerSpec("relu"),
        LayerSpec("transposed_conv", 32, 16, kernel=4, stride=2, pad=1),
        LayerSpec("relu"),
        LayerSpec("transposed_conv", 16, 16, kernel=4, stride=2, pad=1),
        LayerSpec("relu"),
        LayerSpec("conv", 16, HEAD_CHANNELS, kernel=1, stride=1, pad=0),
        LayerSpec("head_split"),
    )


def init_net(seed: int, layers: tuple[LayerSpec, ...] | None = None) -> NetState:
    """Seeded Glorot-uniform weights, zero biases, zero Adam moments."""
    if layers is None:
        layers = default_architecture()
    rng = np.random.default_rng(seed)
    weights = []
    for spec in layers:
        if not spec.has_weights:
            continue
        k = spec.kernel
        fan_in = k * k * spec.in_channels
        fan_out = k * k * spec.out_channels
        scale = np.sqrt(6.0 / (fan_in + fan_out))
        if spec.kind == "conv":
            shape = (k, k, spec.in_channels, spec.out_channels)
        else:
            # Transposed conv stores the kernel of its adjoint convolution,
            # which maps out_channels back to in_channels.
            shape = (k, k, spec.out_channels, spec.in_channels)
        weights.append(rng.uniform(-scale, scale, size=shape))
        weights.append(np.zeros(spec.out_channels))
    moments = [np.zeros_like(w) for w in weights]
    return NetState(layers, weights,
                    moments, [np.zeros_like(w) for w in weights],
                    step_count=0, rng_seed=seed)


# ---------------------------------------------------------------------------
# Convolution primitives (HWC single image as in everything else here).

def _pad_hw(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((p, p), (p, p), (0, 0)))


def _window_view(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    h, w, c = x.shape
    oh = (h - k) // stride + 1
    ow = (w - k) // stride + 1
    sh, sw, sc = x.strides
    return np.lib.stride_tricks.as_strided(
        x, (oh, ow, k, k, c), (stride * sh, stride * sw, sh, sw, sc),
        writeable=False)


def conv2d(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    """Cross-correlation of (h,w,ci) with (k,k,ci,co) -> (oh,ow,co)."""
    k = w.shape[0]
    xp = _pad_hw(x, pad)
    win = _window_view(xp, k, stride)
    oh, ow = win.shape[:2]
    flat = win.reshape(oh * ow, k * k * x.shape[2])
    out = flat @ w.reshape(k * k * x.shape[2], w.shape[3])
    return out.reshape(oh, ow, w.shape[3])


def conv2d_grad_input(g: np.ndarray, w: np.ndarray, stride: int, pad: int,
                      in_hw: tuple[int, int]) -> np.ndarray:
    """Adjoint of conv2d in its input: scatter g back through the kernel."""
    k = w.shape[0]
    h, wd = in_hw
    oh, ow = g.shape[:2]
    dxp = np.zeros((h + 2 * pad, wd + 2 * pad, w.shape[2]))
    gflat = g.reshape(oh * ow, g.shape[2])
    for u in range(k):
        for v in range(k):
            contrib = gflat @ w[u, v].T
            dxp[u:u + stride * oh:stride, v:v + stride * ow:stride] += \
                contrib.reshape(oh, ow, w.shape[2])
    if pad:
        return dxp[pad:-pad, pad:-pad]
    return dxp


def conv2d_grad_weight(x: np.ndarray, g: np.ndarray, stride: int,
                       pad: int, k: int) -> np.ndarray:
    """Adjoint of conv2d in its weight."""
    xp = _pad_hw(x, pad)
    win = _window_view(xp, k, stride)
    oh, ow = g.shape[:2]
    flat = win.reshape(oh * ow, k * k * x.shape[2])
    dw = flat.T @ g.reshape(oh * ow, g.shape[2])
    return dw.reshape(k, k, x.shape[2], g.shape[2])


def transposed_conv2d(x: np.ndarray, w: np.ndarray, stride: int,
                      pad: int) -> np.ndarray:
    """(h,w,ci) -> ((h-1)*s - 2p + k, ..., co); w is (k,k,co,ci)."""
    k = w.shape[0]
    oh = (x.shape[0] - 1) * stride - 2 * pad + k
    ow = (x.shape[1] - 1) * stride - 2 * pad + k
    return conv2d_grad_input(x, w, stride, pad, (oh, ow))


# ---------------------------------------------------------------------------

def forward(net: NetState, image: LogDomainImage) -> tuple[HeadBundle, ActivationCache]:
    """Run the net on one log-domain image; heads come back at input size."""
    x = image.array
    h, wd, c = x.shape
    if c != 3:
        raise ValueError(f"expected a 3-channel image, got {c} channels")
    if h % 4 != 0 or wd % 4 != 0:
        raise ValueError(
            f"spatial dims must be divisible by 4 for the two stride-2 stages, got {h}x{wd}")
    entries = []
    widx = 0
    for spec in net.layers:
        if spec.kind == "conv":
            w, b = net.weights[widx], net.weights[widx + 1]
            widx += 2
            entries.append(x)
            x = conv2d(x, w, spec.stride, spec.pad) + b
        elif spec.kind == "transposed_conv":
            w, b = net.weights[widx], net.weights[widx + 1]
            widx += 2
            entries.append(x)
            x = transposed_conv2d(x, w, spec.stride, spec.pad) + b
        elif spec.kind == "relu":
            entries.append(x)
            x = np.maximum(x, 0.0)
        else:  # head_split
            entries.append(None)
    if x.shape[0] != h or x.shape[1] != wd:
        raise ValueError("architecture does not preserve spatial dims")
    cache = ActivationCache(net.token, entries, (h, wd, c))
    return HeadBundle.from_map(x), cache


def backward(net: NetState, cache: ActivationCache,
             head_grads: HeadBundle) -> list[np.ndarray]:
    """Gradient of a scalar loss w.r.t. every weight, given head gradients.

    The cache must come from a forward() on this exact NetState.
    """
    if cache.token != net.token:
        raise StaleCacheError("cache does not belong to this NetState")
    g = head_grads.as_map()
    grads: list[np.ndarray] = [None] * len(net.weights)
    widx = len(net.weights)
    for spec, x in zip(reversed(net.layers), reversed(cache.entries)):
        if spec.kind == "head_split":
            continue
        if spec.kind == "relu":
            g = g * (x > 0.0)
            continue
        widx -= 2
        w = net.weights[widx]
        if spec.kind == "conv":
            grads[widx] = conv2d_grad_weight(x, g, spec.stride, spec.pad, spec.kernel)
            grads[widx + 1] = g.sum(axis=(0, 1))
            g = conv2d_grad_input(g, w, spec.stride, spec.pad, x.shape[:2])
        else:  # transposed_conv: the adjoints swap roles
            grads[widx] = conv2d_grad_weight(g, x, spec.stride, spec.pad, spec.kernel)
            grads[widx + 1] = g.sum(axis=(0, 1))
            g = conv2d(g, w, spec.stride, spec.pad)
    return grads


def adam_step(net: NetState, grads: list[np.ndarray], lr: float,
              beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> NetState:
    """One bias-corrected Adam update; returns a new NetState."""
    if not lr > 0:
        raise ValueError("lr must be positive")
    if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
        raise ValueError("betas must lie in [0, 1)")
    if len(grads) != len(net.weights):
        raise ValueError("gradient list does not match parameter list")
    t = net.step_count + 1
    new_w, new_m, new_v = [], [], []
    for w, m, v, g in zip(net.weights, net.adam_m, net.adam_v, grads):
        if g.shape != w.shape:
            raise ValueError(f"gradient shape {g.shape} != weight shape {w.shape}")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        new_w.append(w - lr * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)
    state = NetState(net.layers, new_w, new_m, new_v, t, net.rng_seed)
    return state


# ---------------------------------------------------------------------------
# Checkpoint format: magic, u32 little-endian JSON header length, JSON header
# (architecture, step count, seed, blob shapes), then raw float64 blobs in
# order weights, adam_m, adam_v. Round-trips bit-exactly.

def save_checkpoint(net: NetState, path) -> None:
    header = {
        "layers": [[s.kind, s.in_channels, s.out_channels, s.kernel, s.stride, s.pad]
                   for s in net.layers],
        "shapes": [list(w.shape) for w in net.weights],
        "step_count": net.step_count,
        "rng_seed": net.rng_seed,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    for group in (net.weights, net.adam_m, net.adam_v):
        for arr in group:
            buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_checkpoint(path) -> NetState:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    layers = tuple(LayerSpec(k, ic, oc, kern, s, p)
                   for k, ic, oc, kern, s, p in header["layers"])
    shapes = [tuple(s) for s in header["shapes"]]
    offset = 12 + hlen
    groups = []
    for _ in range(3):
        arrays = []
        for shape in shapes:
            n = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).reshape(shape)
            arrays.append(arr.astype(np.float64))
            offset += 8 * n
        groups.append(arrays)
    if offset != len(raw):
        raise ValueError("checkpoint has trailing or missing bytes")
    return NetState(layers, groups[0], groups[1], groups[2],
                    header["step_count"], header["rng_seed"])
