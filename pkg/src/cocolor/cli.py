"""Command-line entry point: synth-data, train, infer, eval, inspect.

Every failure prints one line ``error[<kind>]: <message>`` to stderr and exits
with the code listed in ``EXIT_CODES``.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path

import torch

from . import PATHS, __version__
from .checkpoint import CheckpointError, load_checkpoint
from .data import AugmentConfig, DataError, load_dataset, load_image, rgb_to_grayscale, save_image, synth_dataset, write_dataset
from .evaluation import evaluate, predict, save_preview
from .losses import LossWeights, NonFiniteLossError
from .nets import ShapeError
from .train import ABLATIONS, JsonlSink, TrainConfig, train_full

CONFIG_ENV = "COCOLOR_CONFIG"

EXIT_CODES = {
    "usage": 2,
    "missing": 3,
    "data": 4,
    "checkpoint": 5,
    "config": 6,
    "diverged": 7,
    "shape": 8,
    "internal": 1,
}

EPILOG = "\n".join(
    ["exit codes:", "  0 ok"]
    + [f"  {v} {k}" for k, v in sorted(EXIT_CODES.items(), key=lambda kv: kv[1])]
    + [f"train reads a default config path from ${CONFIG_ENV}."]
)


class CliError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        kwargs.setdefault("formatter_class", argparse.RawDescriptionHelpFormatter)
        super().__init__(*args, **kwargs)

    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError("usage", message)


# --- config files ---------------------------------------------------------------------

_SCALARS = {f.name: f.type for f in dataclasses.fields(TrainConfig) if f.name not in ("weights", "augment")}
_AUG_FIELDS = {f.name for f in dataclasses.fields(AugmentConfig)}
_WEIGHT_FIELDS = {f.name for f in dataclasses.fields(LossWeights)}
_FALSE = {"0", "false", "no", "off", "none"}


def _coerce(key: str, value: str, kind):
    kind = str(kind)
    if "int" in kind:
        return int(value)
    if "float" in kind:
        return float(value)
    return value


def parse_config(text: str) -> dict:
    """Parse flat ``key = value`` text into TrainConfig keyword overrides.

    Keys are TrainConfig field names, ``weights.<name>``, ``augment.<field>``,
    or ``augment = off``. ``#`` and ``;`` start comments.
    """
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = lambda k: k.strip().replace("-", "_")
    try:
        cp.read_string("[config]\n" + text)
    except configparser.Error as exc:
        raise CliError("config", f"unreadable config: {exc}".replace("\n", " ")) from exc
    out: dict = {}
    weights: dict = {}
    aug: dict = {}
    for key, value in cp["config"].items():
        try:
            if key in _SCALARS:
                out[key] = _coerce(key, value, _SCALARS[key])
            elif key.startswith("weights.") and key[8:] in _WEIGHT_FIELDS:
                weights[key[8:]] = float(value)
            elif key == "augment":
                aug["_off"] = value.lower() in _FALSE
            elif key.startswith("augment.") and key[8:] in _AUG_FIELDS:
                name = key[8:]
                if name.endswith("_range"):
                    aug[name] = tuple(float(v) for v in value.split(","))
                elif name == "crop_size":
                    aug[name] = None if value.lower() == "none" else int(value)
                else:
                    aug[name] = value.lower() not in _FALSE
            else:
                raise CliError("config", f"unknown config key {key!r}")
        except ValueError as exc:
            raise CliError("config", f"bad value for {key!r}: {value!r}") from exc
    if weights:
        out["weights"] = weights
    if aug:
        out["augment"] = aug
    return out


def build_config(preset: str, file_values: dict, flag_values: dict) -> TrainConfig:
    """Preset, then config file, then flags (flags win)."""
    merged = dict(file_values)
    merged.update({k: v for k, v in flag_values.items() if v is not None})
    weights = LossWeights(**merged.pop("weights", {}))
    aug_spec = merged.pop("augment", {})
    try:
        if aug_spec.pop("_off", False):
            augment = None
        else:
            augment = AugmentConfig(**aug_spec)
        ctor = TrainConfig.desk if preset == "desk" else TrainConfig
        return ctor(weights=weights, augment=augment, **merged)
    except (TypeError, ValueError) as exc:
        raise CliError("config", str(exc)) from exc


# --- verbs ----------------------------------------------------------------------------

def _resolve(workdir: Path, p: str | None) -> Path | None:
    if p is None:
        return None
    p = Path(p)
    return p if p.is_absolute() else workdir / p


def _write_meta(path: Path, argv: list[str], extra: dict | None = None) -> None:
    meta = {"argv": argv, "version": __version__, "created_unix": time.time(),
            "created": time.strftime("%Y-%m-%dT%H:%M:%S%z")}
    meta.update(extra or {})
    path.write_text(json.dumps(meta, indent=2) + "\n")


def cmd_synth(args, workdir: Path) -> int:
    out = _resolve(workdir, args.out)
    paired, gray = synth_dataset(args.seed, args.n_paired, args.n_gray, args.size)
    write_dataset(out, paired, gray)
    print(f"wrote {len(paired)} paired and {len(gray)} gray-only samples to {out}")
    return 0


def cmd_train(args, workdir: Path) -> int:
    cfg_path = args.config or os.environ.get(CONFIG_ENV)
    file_values = {}
    if cfg_path:
        path = _resolve(workdir, cfg_path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        file_values = parse_config(path.read_text())
    flags = {k: getattr(args, k) for k in _SCALARS if hasattr(args, k)}
    cfg = build_config(args.preset, file_values, flags)
    data = load_dataset(_resolve(workdir, args.data))
    out = _resolve(workdir, args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    phase1 = load_checkpoint(_resolve(workdir, args.phase1)) if args.phase1 else None
    with JsonlSink(out / "train_log.jsonl") as sink:
        ckpts = train_full(data, cfg, sink=sink, out_dir=out, phase1=phase1)
    _write_meta(out / "meta.json", args.argv, {"checkpoints": sorted(f"{t}.ckpt" for t in ckpts)})
    print(f"trained {cfg.ablation}: {', '.join(f'{t}.ckpt' for t in ckpts)} in {out}")
    return 0


def _input_files(path: Path) -> list[Path]:
    if path.is_file():
        return [path]
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() == ".png")
        if not files:
            raise DataError(f"no PNG files in {path}")
        return files
    raise FileNotFoundError(f"input not found: {path}")


def cmd_infer(args, workdir: Path) -> int:
    bundle = load_checkpoint(_resolve(workdir, args.checkpoint)).bundle()
    files = _input_files(_resolve(workdir, args.input))
    inputs = []
    for f in files:
        img = load_image(f)
        if img.shape[0] == 3:
            if args.path.startswith("N"):
                raise DataError(f"{f}: NIR input must be single-channel")
            img = rgb_to_grayscale(img)
        inputs.append(img)
    out = _resolve(workdir, args.out)
    out.mkdir(parents=True, exist_ok=True)
    for f, x in zip(files, inputs):
        (pred,) = predict(bundle, args.path, [x])
        save_image(pred, out / f"{f.stem}.png")
    print(f"wrote {len(files)} {args.path} outputs to {out}")
    return 0


def cmd_eval(args, workdir: Path) -> int:
    ckpt = load_checkpoint(_resolve(workdir, args.checkpoint))
    bundle = ckpt.bundle()
    paired, gray = load_dataset(_resolve(workdir, args.data))
    dataset = paired if args.path.startswith("N") or args.path == "G2N" else paired + gray
    report = evaluate(bundle, dataset, args.path, dataset_tag=args.tag or str(args.data),
                      checkpoint_digest=bundle.digest())
    out = _resolve(workdir, args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.write(out)
    if args.preview:
        save_preview(bundle, dataset[: args.preview_rows], args.path, _resolve(workdir, args.preview))
    agg = " ".join(f"{k}={v:.4f}" for k, v in report.mean.items())
    print(f"{args.path} on {len(dataset)} images: {agg}")
    return 0


def cmd_inspect(args, workdir: Path) -> int:
    ckpt = load_checkpoint(_resolve(workdir, args.checkpoint))
    print(json.dumps(ckpt.summary(), indent=2, sort_keys=True))
    return 0


# --- parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cocolor", description="Cooperative NIR/grayscale colorization.", epilog=EPILOG)
    p.add_argument("--workdir", default=".", help="base directory for all relative paths")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    p.add_argument("--version", action="version", version=f"cocolor {__version__}")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    s = sub.add_parser("synth-data", help="write a synthetic paired + gray-only dataset", epilog=EPILOG)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-paired", type=int, required=True)
    s.add_argument("--n-gray", type=int, required=True)
    s.add_argument("--size", type=int, default=32)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="run the training schedule of one ablation mode", epilog=EPILOG)
    t.add_argument("--data", required=True, help="dataset root (paired/ and gray_only/)")
    t.add_argument("--out", required=True, help="run directory for checkpoints and logs")
    t.add_argument("--config", help=f"flat key=value config file (default: ${CONFIG_ENV})")
    t.add_argument("--preset", choices=("full", "desk"), default="full",
                   help="base values before the config file: full 400/250/100 epochs, desk 40/25/10")
    t.add_argument("--phase1", help="reuse this phase-1 checkpoint instead of retraining the translators")
    t.add_argument("--ablation", choices=ABLATIONS)
    for name, kind in _SCALARS.items():
        if name == "ablation":
            continue
        t.add_argument("--" + name.replace("_", "-"), dest=name, type=int if "int" in str(kind) else float)
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="apply one inference path to PNG images", epilog=EPILOG)
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--path", choices=PATHS, required=True)
    i.add_argument("--input", required=True, help="PNG file or directory of PNGs")
    i.add_argument("--out", required=True, help="output directory")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="score one inference path on a dataset", epilog=EPILOG)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--path", choices=PATHS, required=True)
    e.add_argument("--out", required=True, help="report file (JSON lines)")
    e.add_argument("--tag", help="dataset tag recorded in the report")
    e.add_argument("--preview", help="optional preview grid PNG")
    e.add_argument("--preview-rows", type=int, default=4)
    e.set_defaults(func=cmd_eval)

    n = sub.add_parser("inspect", help="print checkpoint metadata as JSON", epilog=EPILOG)
    n.add_argument("--checkpoint", required=True)
    n.set_defaults(func=cmd_inspect)
    return p


def _classify(exc: BaseException) -> str:
    if isinstance(exc, CliError):
        return exc.kind
    if isinstance(exc, FileNotFoundError):
        return "missing"
    if isinstance(exc, CheckpointError):
        return "checkpoint"
    if isinstance(exc, NonFiniteLossError):
        return "diverged"
    if isinstance(exc, ShapeError):
        return "shape"
    if isinstance(exc, (DataError, ValueError)):
        return "data"
    return "internal"


def run(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        args.argv = argv
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        workdir = Path(args.workdir)
        if not workdir.is_dir():
            raise FileNotFoundError(f"workdir not found: {workdir}")
        torch.set_num_threads(1)
        return args.func(args, workdir)
    except Exception as exc:
        kind = _classify(exc)
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"error[{kind}]: {msg}", file=sys.stderr)
        return EXIT_CODES[kind]


def main() -> None:
    sys.exit(run())
