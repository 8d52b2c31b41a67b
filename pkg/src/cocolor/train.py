"""Three-phase progressive and cooperative training, plus ablation variants.

Phase 1 trains the two translators with image-level adversarial, cycle and
identity losses. Phase 2 freezes them and trains both colorizers with the pair,
bilateral-consistency and colour-level adversarial losses. Phase 3 fine-tunes
all eight networks on the full objective.
"""

from __future__ import annotations

import contextlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import torch

from .checkpoint import Checkpoint, config_digest, save_checkpoint
from .data import AugmentConfig, GraySample, PairedSample, iter_epoch
from .losses import (
    LossBreakdown,
    LossWeights,
    NonFiniteLossError,
    bilateral_consistency_loss,
    cycle_loss,
    gan_loss_D,
    gan_loss_G,
    identity_loss,
    pair_loss,
    translation_loss,
)
from .nets import DISCRIMINATORS, GENERATORS, ModelBundle
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

ABLATIONS = ("full", "no_blt", "from_scratch", "n2c_standalone", "n2c_partial", "g2c_standalone")

TrainData = tuple[Sequence[PairedSample], Sequence[GraySample]]
LogSink = Callable[[dict], None]


@dataclass
class TrainConfig:
    image_size: int = 32
    base_channels: int = 8
    batch_size: int = 10
    lr_phase1: float = 1e-4
    lr_phase2: float = 1e-4
    lr_phase3: float = 1e-5
    epochs_phase1: int = 400
    epochs_phase2: int = 250
    epochs_phase3: int = 100
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    ablation: str = "full"
    augment: AugmentConfig | None = field(default_factory=AugmentConfig)

    def __post_init__(self) -> None:
        for name in ("lr_phase1", "lr_phase2", "lr_phase3"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        for name in ("epochs_phase1", "epochs_phase2", "epochs_phase3"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation mode {self.ablation!r}; expected one of {ABLATIONS}")

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """Desk-scale preset: 32x32 images, base width 8, 40/25/10 epochs."""
        base = dict(image_size=32, base_channels=8, epochs_phase1=40, epochs_phase2=25, epochs_phase3=10)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.augment is not None:
            d["augment"]["scale_range"] = list(self.augment.scale_range)
            d["augment"]["contrast_range"] = list(self.augment.contrast_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["weights"] = LossWeights(**d.get("weights", {}))
        aug = d.get("augment")
        if aug is not None:
            aug = dict(aug)
            for k in ("scale_range", "contrast_range"):
                if k in aug:
                    aug[k] = tuple(aug[k])
            d["augment"] = AugmentConfig(**aug)
        return cls(**d)

    def digest(self) -> str:
        return config_digest(self.to_dict())


@dataclass(frozen=True)
class Stage:
    tag: str
    kind: str
    epochs: int
    lr: float


# trainable generators, discriminators and active loss terms for each stage kind
KINDS = {
    "translate": (("g2n", "n2g"), ("d_n_img", "d_g_img"), {"gan_img", "cyc", "idt"}),
    "colorize": (("f_n", "f_g"), ("d_n_feat", "d_g_feat"), {"pair", "blt", "gan_feat"}),
    "joint": (GENERATORS, DISCRIMINATORS, {"gan_img", "cyc", "idt", "pair", "blt", "gan_feat"}),
    "n_direct": (("f_n",), (), {"pair_n"}),
    "n_partial": (("f_n",), (), {"pair_n", "pair_n_latent"}),
    "g_direct": (("f_g",), (), {"pair_g"}),
}


def stages_for(cfg: TrainConfig) -> list[Stage]:
    e1, e2, e3 = cfg.epochs_phase1, cfg.epochs_phase2, cfg.epochs_phase3
    p1 = Stage("phase1", "translate", e1, cfg.lr_phase1)
    mode = cfg.ablation
    if mode in ("full", "no_blt"):
        return [p1, Stage("phase2", "colorize", e2, cfg.lr_phase2), Stage("phase3", "joint", e3, cfg.lr_phase3)]
    if mode == "from_scratch":
        return [Stage("scratch", "joint", e1 + e2, cfg.lr_phase2), Stage("scratch_finetune", "joint", e3, cfg.lr_phase3)]
    if mode == "n2c_partial":
        return [p1, Stage("partial", "n_partial", e2, cfg.lr_phase2), Stage("partial_finetune", "n_partial", e3, cfg.lr_phase3)]
    kind = "n_direct" if mode == "n2c_standalone" else "g_direct"
    return [Stage("standalone", kind, e2, cfg.lr_phase2), Stage("standalone_finetune", kind, e3, cfg.lr_phase3)]


def effective_weights(cfg: TrainConfig) -> LossWeights:
    return replace(cfg.weights, blt=0.0) if cfg.ablation == "no_blt" else cfg.weights


@contextlib.contextmanager
def single_thread():
    prev = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        yield
    finally:
        torch.set_num_threads(prev)


# --- one step -------------------------------------------------------------------------

def forward_outputs(bundle: ModelBundle, t: dict, kind: str) -> dict:
    """Run every network application a stage kind needs.

    Translators are evaluated without gradient unless the stage trains them.
    """
    _, _, terms = KINDS[kind]
    nir, gray = t["nir"], t["gray"]
    nets = bundle.nets
    o = {}
    if kind in ("translate", "joint"):
        o["fake_n"] = nets["g2n"](gray)
        o["fake_g"] = nets["n2g"](nir)
        o["rec_g"] = nets["n2g"](o["fake_n"])
        o["rec_n"] = nets["g2n"](o["fake_g"])
        o["idt_g"] = nets["n2g"](gray)
        o["idt_n"] = nets["g2n"](nir)
    elif kind in ("colorize", "n_partial"):
        with torch.no_grad():
            o["fake_n"] = nets["g2n"](gray)
            if kind == "colorize":
                o["fake_g"] = nets["n2g"](nir)
    if kind in ("colorize", "joint"):
        o["n2c"] = nets["f_n"](nir)
        o["n2g2c"] = nets["f_g"](o["fake_g"])
        o["g2c"] = nets["f_g"](gray)
        o["g2n2c"] = nets["f_n"](o["fake_n"])
    elif kind == "n_direct":
        o["n2c"] = nets["f_n"](nir)
    elif kind == "n_partial":
        o["n2c"] = nets["f_n"](nir)
        o["g2n2c"] = nets["f_n"](o["fake_n"])
    elif kind == "g_direct":
        o["g2c"] = nets["f_g"](gray)
    return o


def discriminator_losses(bundle: ModelBundle, o: dict, t: dict, kind: str) -> dict:
    _, discs, _ = KINDS[kind]
    n = bundle.nets
    pairs = {
        "d_n_img": lambda: (t["nir"], o["fake_n"]),
        "d_g_img": lambda: (t["gray"], o["fake_g"]),
        "d_n_feat": lambda: (o["n2c"], o["g2n2c"]),
        "d_g_feat": lambda: (o["g2c"], o["n2g2c"]),
    }
    out = {}
    for name in discs:
        real, fake = pairs[name]()
        out[name] = gan_loss_D(n[name](real.detach()), n[name](fake.detach()))
    return out


def generator_losses(bundle: ModelBundle, o: dict, t: dict, kind: str, w: LossWeights) -> dict:
    """Generator-side loss components plus ``tran`` and ``total``."""
    _, _, terms = KINDS[kind]
    n = bundle.nets
    c: dict = {k: None for k in ("pair", "blt", "gan_img_N", "gan_feat_N", "gan_img_G", "gan_feat_G", "cyc", "idt")}
    if "gan_img" in terms:
        c["gan_img_N"] = gan_loss_G(n["d_n_img"](o["fake_n"]))
        c["gan_img_G"] = gan_loss_G(n["d_g_img"](o["fake_g"]))
    if "gan_feat" in terms:
        c["gan_feat_N"] = gan_loss_G(n["d_n_feat"](o["g2n2c"]))
        c["gan_feat_G"] = gan_loss_G(n["d_g_feat"](o["n2g2c"]))
    if "cyc" in terms:
        c["cyc"] = cycle_loss(o["rec_g"], t["gray"], o["rec_n"], t["nir"])
    if "idt" in terms:
        c["idt"] = identity_loss(o["idt_g"], t["gray"], o["idt_n"], t["nir"])
    rgb_g, rgb_n = t["rgb_g"], t["rgb_n"]
    if "pair" in terms:
        c["pair"] = pair_loss(o["g2c"], o["n2g2c"], o["n2c"], o["g2n2c"], rgb_g, rgb_n, w)
    elif "pair_n" in terms:
        c["pair"] = pair_loss(None, None, o["n2c"], o.get("g2n2c") if "pair_n_latent" in terms else None, rgb_g, rgb_n, w)
    elif "pair_g" in terms:
        c["pair"] = pair_loss(o["g2c"], None, None, None, rgb_g, rgb_n, w)
    if "blt" in terms:
        c["blt"] = bilateral_consistency_loss(o["n2c"], o["n2g2c"], o["g2c"], o["g2n2c"])
    for name, v in c.items():
        if v is not None and not torch.isfinite(v):
            raise NonFiniteLossError(name)
    c["tran"] = translation_loss(c, w)
    total = c["tran"]
    if c["pair"] is not None:
        total = total + w.pair * c["pair"]
    if c["blt"] is not None:
        total = total + w.blt * c["blt"]
    c["total"] = total
    return c


def _apply_adam(bundle: ModelBundle, names: Iterable[str], states: dict[str, AdamState], lr: float) -> None:
    for name in names:
        model = bundle.nets[name]
        params = dict(model.named_parameters())
        grads = {k: (p.grad if p.grad is not None else torch.zeros_like(p)) for k, p in params.items()}
        try:
            new, states[name] = adam_step({k: p.detach() for k, p in params.items()}, grads, states[name], lr)
        except FloatingPointError as exc:
            raise NonFiniteLossError(f"gradient of {name}", str(exc)) from exc
        with torch.no_grad():
            for k, p in params.items():
                p.copy_(new[k])
                p.grad = None


def _set_trainable(bundle: ModelBundle, names: Iterable[str]) -> None:
    names = set(names)
    for name, m in bundle.nets.items():
        m.requires_grad_(name in names)


def train_step(bundle: ModelBundle, t: dict, kind: str, w: LossWeights, states: dict[str, AdamState], lr: float) -> dict:
    """One alternating update: discriminators first, then generators."""
    gens, discs, _ = KINDS[kind]
    _set_trainable(bundle, (*gens, *discs))
    o = forward_outputs(bundle, t, kind)
    record = {}
    if discs:
        d_losses = discriminator_losses(bundle, o, t, kind)
        for name, v in d_losses.items():
            if not torch.isfinite(v):
                raise NonFiniteLossError(name)
        sum(d_losses.values()).backward()
        _apply_adam(bundle, discs, states, lr)
        record.update({k: v.item() for k, v in d_losses.items()})
        _set_trainable(bundle, gens)
    c = generator_losses(bundle, o, t, kind, w)
    c["total"].backward()
    _apply_adam(bundle, gens, states, lr)
    record.update({k: (None if v is None else float(v.item() if torch.is_tensor(v) else v)) for k, v in c.items()})
    return record


# --- stages and phases ----------------------------------------------------------------

def _check_data(data: TrainData) -> None:
    paired, gray_only = data
    if not paired or not gray_only:
        raise ValueError("training needs non-empty paired and gray-only datasets")


def _new_rng(cfg: TrainConfig, state: dict | None) -> np.random.Generator:
    rng = np.random.default_rng(cfg.seed)
    if state:
        rng.bit_generator.state = state
    return rng


def _epoch_means(records: list[dict]) -> dict:
    keys = [k for k in records[0] if records[0][k] is not None and isinstance(records[0][k], float)]
    return {k: float(np.mean([r[k] for r in records])) for k in keys}


def run_stage(
    bundle: ModelBundle,
    data: TrainData,
    stage: Stage,
    cfg: TrainConfig,
    rng: np.random.Generator,
    sink: LogSink | None = None,
    step0: int = 0,
) -> tuple[dict[str, AdamState], list[dict], int]:
    """Train ``bundle`` in place for one stage; returns optimizer states, epoch history, last step."""
    _check_data(data)
    gens, discs, _ = KINDS[stage.kind]
    w = effective_weights(cfg)
    states = {name: AdamState() for name in (*gens, *discs)}
    history, step = [], step0
    for epoch in range(1, stage.epochs + 1):
        records = []
        for batch in iter_epoch(data[0], data[1], cfg.batch_size, rng, cfg.augment):
            rec = train_step(bundle, batch.tensors(), stage.kind, w, states, stage.lr)
            step += 1
            records.append(rec)
            if sink is not None:
                sink({"step": step, "phase": stage.tag, "epoch": epoch, **rec,
                      "blt_excluded": rec.get("blt") is not None and w.blt == 0.0})
        summary = {"phase": stage.tag, "epoch": epoch, "step": step, **_epoch_means(records)}
        history.append(summary)
        log.info("%s epoch %d/%d total=%.4f", stage.tag, epoch, stage.epochs, summary.get("total", float("nan")))
    _set_trainable(bundle, ())
    return states, history, step


def _make_checkpoint(bundle, stage, cfg, states, rng, history, prev: Checkpoint | None) -> Checkpoint:
    opt = dict(prev.opt_states) if prev else {}
    opt.update(states)
    return Checkpoint(
        phase=stage.tag,
        epoch=stage.epochs,
        params=bundle.params(),
        opt_states=opt,
        config=cfg.to_dict(),
        config_digest=cfg.digest(),
        rng_state=rng.bit_generator.state,
        history=(list(prev.history) if prev else []) + history,
    )


def _continue(data, cfg, stage, prev: Checkpoint | None, sink) -> Checkpoint:
    with single_thread():
        if prev is None:
            bundle = ModelBundle(cfg.image_size, cfg.base_channels, seed=cfg.seed)
        else:
            bundle = prev.bundle()
        rng = _new_rng(cfg, prev.rng_state if prev else None)
        step0 = int(prev.history[-1].get("step", 0)) if prev and prev.history else 0
        states, history, _ = run_stage(bundle, data, stage, cfg, rng, sink, step0)
        return _make_checkpoint(bundle, stage, cfg, states, rng, history, prev)


def train_phase1(data: TrainData, cfg: TrainConfig, sink: LogSink | None = None) -> Checkpoint:
    """Train the bilateral translators from initialization."""
    return _continue(data, cfg, Stage("phase1", "translate", cfg.epochs_phase1, cfg.lr_phase1), None, sink)


def train_phase2(data: TrainData, phase1: Checkpoint, cfg: TrainConfig, sink: LogSink | None = None) -> Checkpoint:
    """Train both colorizers against frozen translators."""
    return _continue(data, cfg, Stage("phase2", "colorize", cfg.epochs_phase2, cfg.lr_phase2), phase1, sink)


def train_phase3(data: TrainData, phase2: Checkpoint, cfg: TrainConfig, sink: LogSink | None = None) -> Checkpoint:
    """Fine-tune all networks jointly on the full objective."""
    return _continue(data, cfg, Stage("phase3", "joint", cfg.epochs_phase3, cfg.lr_phase3), phase2, sink)


def train_full(
    data: TrainData,
    cfg: TrainConfig,
    sink: LogSink | None = None,
    out_dir: str | Path | None = None,
    phase1: Checkpoint | None = None,
) -> dict[str, Checkpoint]:
    """Run every stage of ``cfg.ablation``; returns checkpoints keyed by stage tag.

    A precomputed ``phase1`` checkpoint with a matching seed may be passed to skip
    retraining the translators.
    """
    _check_data(data)
    out: dict[str, Checkpoint] = {}
    prev = None
    for stage in stages_for(cfg):
        if stage.tag == "phase1" and phase1 is not None:
            if phase1.config.get("seed") != cfg.seed or phase1.epoch != stage.epochs:
                raise ValueError("reused phase-1 checkpoint does not match the config")
            ckpt = phase1
        else:
            ckpt = _continue(data, cfg, stage, prev, sink)
        out[stage.tag] = prev = ckpt
        if out_dir is not None:
            save_checkpoint(ckpt, Path(out_dir) / f"{stage.tag}.ckpt")
    return out


class JsonlSink:
    """Line-delimited JSON training log."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._f = open(self.path, "w")

    def __call__(self, record: dict) -> None:
        self._f.write(json.dumps(record) + "\n")

    def close(self) -> None:
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
