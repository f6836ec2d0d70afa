"""Command-line surface and file I/O.

Subcommands:

* ``gen-data``: render a synthetic dataset into a directory (raw float
  files for exact values, PNG previews for eyeballs, and an INI manifest
  holding the generator parameters, per-scene seeds, light colors, and
  the parity train/test split).
* ``train``: fit a model on a dataset directory's train split; writes a
  checkpoint and a per-iteration loss log.
* ``infer``: decompose one raw image with a checkpoint; writes log-domain
  head maps plus linear albedo/shading/reconstruction/slack/sigma maps.
* ``eval``: score checkpoints on a dataset's test split; writes the
  ablation table as aligned text and CSV.
* ``gradcheck``: run the finite-difference certification suites.

Exit codes: 0 success, 1 usage or configuration error, 2 I/O or data
error. Every command is deterministic given its arguments and inputs;
raw float outputs are byte-identical across reruns.

Configuration may come from an INI file (``--config``) with sections
named after the subcommands and ``key = value`` entries matching the
long flag names; explicit flags override file values, and unknown file
keys are rejected. BLAS thread count follows OMP_NUM_THREADS; nothing
else reads the environment.
"""

from __future__ import annotations

import argparse
import configparser
import struct
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from PIL import Image

from . import gradcheck, inference, net as network, pipeline
from .synthdata import Dataset, Scene, SceneSpec, make_dataset
from .tensor import PlaneTensor, to_log

RAW_MAGIC = b"CSRF0001"
PREVIEW_GAMMA = 1.0 / 2.2


class UsageError(Exception):
    """Bad flags or configuration: exit code 1."""


class DataError(Exception):
    """Missing, unreadable, or inconsistent inputs: exit code 2."""


# ---------------------------------------------------------------------------
# Raw float format: magic, u32 h/w/c little-endian, float64 row-major.

def write_raw(path: Path, arr: np.ndarray) -> None:
    a = np.ascontiguousarray(arr, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3:
        raise ValueError(f"raw format stores rank-3 maps, got shape {arr.shape}")
    h, w, c = a.shape
    with open(path, "wb") as f:
        f.write(RAW_MAGIC)
        f.write(struct.pack("<III", h, w, c))
        f.write(a.astype("<f8").tobytes())


def read_raw(path: Path) -> np.ndarray:
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    if blob[:8] != RAW_MAGIC:
        raise DataError(f"{path}: not a raw float file (bad magic)")
    h, w, c = struct.unpack("<III", blob[8:20])
    expect = 20 + 8 * h * w * c
    if len(blob) != expect:
        raise DataError(f"{path}: truncated raw file ({len(blob)} of {expect} bytes)")
    data = np.frombuffer(blob[20:], dtype="<f8").reshape(h, w, c)
    return data.astype(np.float64)


def write_png_preview(path: Path, arr: np.ndarray) -> None:
    """Lossy preview: clip to [0,1], gamma 1/2.2, 8-bit. Never read back."""
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[:, :, 0]
    a = np.clip(a, 0.0, 1.0) ** PREVIEW_GAMMA
    b = np.round(a * 255.0).astype(np.uint8)
    Image.fromarray(b, mode="RGB" if b.ndim == 3 else "L").save(path)


# ---------------------------------------------------------------------------
# RunConfig: one flat record of every tunable, with the defaults the
# commands fall back to. INI sections mirror subcommand names.

@dataclass
class RunConfig:
    # generator
    scenes: int = 20
    seed: int = 0
    height: int = 32
    width: int = 32
    albedo_cells: int = 8
    shading_smoothness: int = 4
    specular_fraction: float = 0.15
    specular_strength: float = 2.0
    # training
    loss: str = "distributional"
    family: str = "gaussian"
    iterations: int = 5000
    lr: float = 1e-4
    lambda_reg: float = 1e-3
    batch_size: int = 4
    shift_beta: float = 0.5
    constraint_residual: str = "truth"
    weight_decay: float = 0.0
    # inference
    mode: str = "soft_learned"
    unit_weights: bool = False
    sweeps: int = inference.DEFAULT_SWEEPS
    # metrics
    window: int = 0      # 0: size-derived default
    stride: int = 0      # 0: window // 2


_SECTION_FIELDS = {
    "gen-data": ("scenes", "seed", "height", "width", "albedo_cells",
                 "shading_smoothness", "specular_fraction", "specular_strength"),
    "train": ("loss", "family", "iterations", "lr", "lambda_reg", "seed",
              "batch_size", "shift_beta", "constraint_residual", "weight_decay"),
    "infer": ("mode", "unit_weights", "sweeps"),
    "eval": ("window", "stride"),
    "gradcheck": ("seed",),
}


def load_config(path: str | None) -> RunConfig:
    cfg = RunConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser()
    try:
        with open(path) as f:
            parser.read_file(f)
    except OSError as e:
        raise DataError(f"cannot read config {path}: {e}") from e
    except configparser.Error as e:
        raise UsageError(f"malformed config {path}: {e}") from e
    types = {f.name: f.type for f in fields(RunConfig)}
    for section in parser.sections():
        if section not in _SECTION_FIELDS:
            raise UsageError(f"unknown config section [{section}]")
        for key, value in parser.items(section):
            if key not in _SECTION_FIELDS[section]:
                raise UsageError(f"unknown config key {key!r} in [{section}]")
            kind = types[key]
            try:
                if kind == "bool":
                    parsed = parser.getboolean(section, key)
                elif kind == "int":
                    parsed = int(value)
                elif kind == "float":
                    parsed = float(value)
                else:
                    parsed = value
            except ValueError as e:
                raise UsageError(f"bad value for {key!r} in [{section}]: {value!r}") from e
            setattr(cfg, key, parsed)
    return cfg


def _merge(cfg: RunConfig, args: argparse.Namespace, names: tuple[str, ...]) -> None:
    """Explicit flags (non-None) override config-file/default values."""
    for name in names:
        flag = getattr(args, name, None)
        if flag is not None:
            setattr(cfg, name, flag)


# ---------------------------------------------------------------------------
# Dataset directory layout and manifest.

def _scene_dir(root: Path, scene_id: str) -> Path:
    return root / scene_id


def write_dataset(root: Path, dataset: Dataset, template: SceneSpec,
                  base_seed: int) -> None:
    root.mkdir(parents=True, exist_ok=True)
    manifest = configparser.ConfigParser()
    manifest["generator"] = {
        "scenes": str(len(dataset.ids)),
        "base_seed": str(base_seed),
        "height": str(template.size[0]),
        "width": str(template.size[1]),
        "albedo_cells": str(template.albedo_cells),
        "shading_smoothness": str(template.shading_smoothness),
        "specular_fraction": repr(template.specular_fraction),
        "specular_strength": repr(template.specular_strength),
    }
    for i, (sid, scene) in enumerate(zip(dataset.ids, dataset.scenes)):
        d = _scene_dir(root, sid)
        d.mkdir(exist_ok=True)
        write_raw(d / "image.raw", scene.image.array)
        write_raw(d / "albedo.raw", scene.albedo.array)
        write_raw(d / "shading.raw", scene.shading_gray.array)
        write_png_preview(d / "image.png", scene.image.array)
        write_png_preview(d / "albedo.png", scene.albedo.array)
        write_png_preview(d / "shading.png", scene.shading_gray.array)
        manifest[sid] = {
            "seed": str(base_seed + i),
            "split": "train" if sid in dataset.train_ids else "test",
            "light_color": ",".join(repr(v) for v in scene.light_color),
        }
    with open(root / "manifest.ini", "w") as f:
        manifest.write(f)


def load_dataset(root: Path, verify: bool = True) -> Dataset:
    """Regenerate the dataset a manifest describes, optionally verifying
    the stored raw images match bit for bit (corruption check)."""
    mpath = Path(root) / "manifest.ini"
    if not mpath.exists():
        raise DataError(f"no manifest at {mpath}")
    parser = configparser.ConfigParser()
    try:
        with open(mpath) as f:
            parser.read_file(f)
        gen = parser["generator"]
        template = SceneSpec(
            seed=0, size=(gen.getint("height"), gen.getint("width")),
            albedo_cells=gen.getint("albedo_cells"),
            shading_smoothness=gen.getint("shading_smoothness"),
            specular_fraction=gen.getfloat("specular_fraction"),
            specular_strength=gen.getfloat("specular_strength"))
        n = gen.getint("scenes")
        base_seed = gen.getint("base_seed")
    except (configparser.Error, KeyError, ValueError) as e:
        raise DataError(f"bad manifest {mpath}: {e}") from e
    dataset = make_dataset(n, base_seed, template)
    if verify:
        for sid, scene in zip(dataset.ids, dataset.scenes):
            stored = read_raw(_scene_dir(Path(root), sid) / "image.raw")
            if not np.array_equal(stored, scene.image.array):
                raise DataError(f"{sid}: stored image does not match its seed "
                                "(corrupt or foreign dataset)")
    return dataset


def _split_scenes(dataset: Dataset, which: str) -> list[tuple[str, Scene]]:
    ids = dataset.train_ids if which == "train" else dataset.test_ids
    return [(sid, dataset.scene_by_id(sid)) for sid in ids]


# ---------------------------------------------------------------------------
# Commands.

def cmd_gen_data(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    _merge(cfg, args, _SECTION_FIELDS["gen-data"])
    template = SceneSpec(seed=0, size=(cfg.height, cfg.width),
                         albedo_cells=cfg.albedo_cells,
                         shading_smoothness=cfg.shading_smoothness,
                         specular_fraction=cfg.specular_fraction,
                         specular_strength=cfg.specular_strength)
    try:
        dataset = make_dataset(cfg.scenes, cfg.seed, template)
    except ValueError as e:
        raise DataError(str(e)) from e
    out = Path(args.out)
    try:
        write_dataset(out, dataset, template, cfg.seed)
    except OSError as e:
        raise DataError(f"cannot write dataset to {out}: {e}") from e
    print(f"wrote {len(dataset.ids)} scenes to {out} "
          f"({len(dataset.train_ids)} train / {len(dataset.test_ids)} test)")
    return 0


def _training_config(cfg: RunConfig, inference_mode: str = "none") -> pipeline.AblationConfig:
    try:
        return pipeline.AblationConfig(
            loss=cfg.loss, inference=inference_mode, family=cfg.family,
            lambda_reg=cfg.lambda_reg, lr=cfg.lr, iterations=cfg.iterations,
            seed=cfg.seed, batch_size=cfg.batch_size, shift_beta=cfg.shift_beta,
            constraint_residual=cfg.constraint_residual,
            weight_decay=cfg.weight_decay)
    except ValueError as e:
        raise UsageError(str(e)) from e


def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    _merge(cfg, args, _SECTION_FIELDS["train"])
    config = _training_config(cfg)
    dataset = load_dataset(Path(args.data))
    examples = [pipeline.example_from_scene(s) for _, s in _split_scenes(dataset, "train")]
    initial = None
    if args.resume:
        try:
            initial = network.load_checkpoint(args.resume)
        except (OSError, ValueError) as e:
            raise DataError(f"cannot resume from {args.resume}: {e}") from e
    for key in ("loss", "family", "iterations", "lr", "lambda_reg", "seed",
                "batch_size", "shift_beta", "constraint_residual", "weight_decay"):
        print(f"{key} = {getattr(config, key)!r}")
    print(f"train_scenes = {len(examples)}")
    model = pipeline.train(examples, config, initial_state=initial)
    out = Path(args.out)
    try:
        network.save_checkpoint(model.net, out)
        if args.loss_log:
            Path(args.loss_log).write_text(
                "".join(f"{v!r}\n" for v in model.loss_history))
    except OSError as e:
        raise DataError(f"cannot write outputs: {e}") from e
    final = model.loss_history[-1] if model.loss_history else float("nan")
    print(f"checkpoint = {out} (step {model.net.step_count}, final loss {final:.6g})")
    return 0


def _load_net(path: str) -> network.NetState:
    try:
        return network.load_checkpoint(path)
    except OSError as e:
        raise DataError(f"cannot read checkpoint {path}: {e}") from e
    except ValueError as e:
        raise DataError(f"bad checkpoint {path}: {e}") from e


def _shim_model(net_state: network.NetState, mode: str,
                unit_weights: bool) -> pipeline.TrainedModel:
    """Wrap a bare checkpoint for decompose(): the loss field only
    steers whether hard/soft inference uses unit or learned weights."""
    config = pipeline.AblationConfig(
        loss="l2" if unit_weights else "distributional",
        inference=mode, iterations=0)
    return pipeline.TrainedModel(net_state, config, [])


def cmd_infer(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    _merge(cfg, args, _SECTION_FIELDS["infer"])
    if cfg.mode not in pipeline.INFERENCE_MODES:
        raise UsageError(f"mode must be one of {pipeline.INFERENCE_MODES}")
    if cfg.mode == "soft_learned" and cfg.unit_weights:
        raise UsageError("unit weights only apply to hard mode")
    net_state = _load_net(args.checkpoint)
    image_arr = read_raw(args.image)
    if image_arr.shape[2] != 3:
        raise UsageError(f"input image must have 3 channels, got {image_arr.shape[2]}")
    if image_arr.shape[0] % 4 or image_arr.shape[1] % 4:
        raise UsageError(
            f"image dims must be divisible by 4, got {image_arr.shape[0]}x{image_arr.shape[1]}")
    if cfg.sweeps < 1:
        raise UsageError("sweeps must be >= 1")
    model = _shim_model(net_state, cfg.mode, cfg.unit_weights)
    plane = PlaneTensor(image_arr)
    result = pipeline.decompose(model, plane, sweeps=cfg.sweeps)
    albedo, shading_color, recon = pipeline.linear_outputs(result)
    heads, _ = network.forward(net_state, to_log(plane))

    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_raw(out / "albedo_log.raw", result.A_log)
        write_raw(out / "shading_log.raw", result.B_log)
        write_raw(out / "albedo.raw", albedo)
        write_raw(out / "shading.raw", np.exp(result.B_log))
        write_raw(out / "shading_color.raw", shading_color)
        write_raw(out / "reconstruction.raw", recon)
        write_raw(out / "slack.raw", result.slack)
        for name, lv in (("sigma_albedo", heads.log_var_albedo),
                         ("sigma_shading", heads.log_var_shading),
                         ("sigma_constraint", heads.log_var_constraint)):
            write_raw(out / f"{name}.raw", np.exp(0.5 * lv))
            write_png_preview(out / f"{name}.png", np.exp(0.5 * lv))
        write_png_preview(out / "albedo.png", albedo)
        write_png_preview(out / "shading.png", np.exp(result.B_log))
        write_png_preview(out / "shading_color.png", shading_color)
        write_png_preview(out / "reconstruction.png", recon)
        write_png_preview(out / "slack.png", np.abs(result.slack).mean(axis=2))
    except OSError as e:
        raise DataError(f"cannot write outputs to {out}: {e}") from e
    c = [float(v) for v in result.C_log]
    print(f"light_color_log = [{c[0]!r}, {c[1]!r}, {c[2]!r}]")
    if result.objective_trace:
        print(f"objective = {result.objective_trace[-1]!r} "
              f"({len(result.objective_trace) - 1} sweeps)")
    else:
        print("objective = n/a (mode none)")
    return 0


def _parse_row(text: str) -> tuple[str, str, str, bool]:
    label, sep, rest = text.partition("=")
    if not sep or not label or not rest:
        raise UsageError(f"row must look like LABEL=CHECKPOINT:MODE[:unit], got {text!r}")
    parts = rest.rsplit(":", 2)
    unit = False
    if len(parts) == 3 and parts[2] == "unit":
        parts = parts[:2]
        unit = True
    if len(parts) != 2:
        raise UsageError(f"row must look like LABEL=CHECKPOINT:MODE[:unit], got {text!r}")
    ckpt, mode = parts
    if mode not in pipeline.INFERENCE_MODES:
        raise UsageError(f"unknown inference mode {mode!r} in row {text!r}")
    if unit and mode == "soft_learned":
        raise UsageError("unit weights only apply to none/hard modes")
    return label, ckpt, mode, unit


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    _merge(cfg, args, _SECTION_FIELDS["eval"])
    if not args.row and not args.self_check:
        raise UsageError("nothing to do: pass --row and/or --self-check")
    dataset = load_dataset(Path(args.data))
    test = _split_scenes(dataset, "test")
    window = cfg.window or None
    stride = cfg.stride or None
    rows = []
    if args.self_check:
        zeros = pipeline.evaluate_truth_against_itself(test, window, stride)
        rows.append(("truth", tuple(zeros[c] for c in pipeline.METRIC_COLUMNS)))
    for text in args.row or ():
        label, ckpt, mode, unit = _parse_row(text)
        model = _shim_model(_load_net(ckpt), mode, unit)
        scores = pipeline.evaluate_model(model, test, window, stride)
        rows.append((label, tuple(scores[c] for c in pipeline.METRIC_COLUMNS)))
    report = pipeline.AblationReport(pipeline.METRIC_COLUMNS, rows)
    text_table = report.to_text()
    print(text_table, end="")
    if args.out:
        try:
            Path(str(args.out) + ".txt").write_text(text_table)
            Path(str(args.out) + ".csv").write_text(report.to_csv())
        except OSError as e:
            raise DataError(f"cannot write report: {e}") from e
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    _merge(cfg, args, _SECTION_FIELDS["gradcheck"])
    results = gradcheck.run_all(instances=args.instances, base_seed=cfg.seed,
                                fault=args.inject_fault)
    print(gradcheck.format_results(results), end="")
    if all(r.passed for r in results):
        return 0
    worst = max(results, key=lambda r: r.max_rel_error)
    print(f"worst offender: {worst.name} at {worst.max_rel_error:.3e}",
          file=sys.stderr)
    return 1


# ---------------------------------------------------------------------------
# Argument parsing. argparse wants to exit(2) on bad flags; the exit-code
# contract reserves 2 for I/O, so usage failures are remapped to 1.

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="softlambert",
                description="Intrinsic image decomposition with learned "
                            "per-pixel confidence and constrained inference.")
    sub = p.add_subparsers(dest="command", required=True)

    def add_common(sp):
        sp.add_argument("--config", help="INI config file; flags override it")

    g = sub.add_parser("gen-data", help="render a synthetic dataset")
    add_common(g)
    g.add_argument("--out", required=True, help="output dataset directory")
    g.add_argument("--scenes", type=int, help="number of scenes (default 20)")
    g.add_argument("--seed", type=int, help="base seed (default 0)")
    g.add_argument("--height", type=int, help="scene height (default 32)")
    g.add_argument("--width", type=int, help="scene width (default 32)")
    g.add_argument("--albedo-cells", dest="albedo_cells", type=int,
                   help="piecewise-constant albedo regions (default 8)")
    g.add_argument("--shading-smoothness", dest="shading_smoothness", type=int,
                   help="coarse shading grid size (default 4)")
    g.add_argument("--specular-fraction", dest="specular_fraction", type=float,
                   help="target violation-mask coverage (default 0.15)")
    g.add_argument("--specular-strength", dest="specular_strength", type=float,
                   help="highlight amplitude (default 2.0)")

    t = sub.add_parser("train", help="train on a dataset directory")
    add_common(t)
    t.add_argument("--data", required=True, help="dataset directory")
    t.add_argument("--out", required=True, help="checkpoint output path")
    t.add_argument("--loss", choices=pipeline.LOSSES)
    t.add_argument("--family", choices=pipeline.FAMILIES)
    t.add_argument("--iterations", type=int)
    t.add_argument("--lr", type=float, help="Adam learning rate (default 1e-4)")
    t.add_argument("--lambda-reg", dest="lambda_reg", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--shift-beta", dest="shift_beta", type=float)
    t.add_argument("--constraint-residual", dest="constraint_residual",
                   choices=pipeline.RESIDUAL_SOURCES)
    t.add_argument("--weight-decay", dest="weight_decay", type=float)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--loss-log", dest="loss_log",
                   help="write per-iteration losses here, one per line")

    i = sub.add_parser("infer", help="decompose one raw image")
    add_common(i)
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--image", required=True, help="input image (.raw format)")
    i.add_argument("--out", required=True, help="output directory")
    i.add_argument("--mode", choices=pipeline.INFERENCE_MODES)
    i.add_argument("--unit-weights", dest="unit_weights", action="store_const",
                   const=True, help="hard mode with unweighted projection")
    i.add_argument("--sweeps", type=int)

    e = sub.add_parser("eval", help="score checkpoints on the test split")
    add_common(e)
    e.add_argument("--data", required=True, help="dataset directory")
    e.add_argument("--row", action="append",
                   help="LABEL=CHECKPOINT:MODE[:unit]; repeatable")
    e.add_argument("--self-check", dest="self_check", action="store_true",
                   help="add a row scoring ground truth against itself")
    e.add_argument("--out", help="report path prefix (.txt and .csv added)")
    e.add_argument("--window", type=int, help="LMSE window (default size-derived)")
    e.add_argument("--stride", type=int, help="LMSE stride (default window//2)")

    c = sub.add_parser("gradcheck", help="certify gradients by finite differences")
    add_common(c)
    c.add_argument("--instances", type=int, default=20)
    c.add_argument("--seed", type=int)
    c.add_argument("--inject-fault", dest="inject_fault", choices=("sign",),
                   help="test hook: corrupt one gradient to prove detection")
    return p


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
