"""Dataset-level evaluation over the six inference paths."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
import torch

from . import PATHS
from .data import GraySample, PairedSample, save_image
from .metrics import angular_error, psnr, ssim


class Translator(Protocol):
    def run_path(self, path: str, x: torch.Tensor) -> torch.Tensor: ...


@dataclass
class ImageRecord:
    id: str
    psnr: float
    ssim: float
    ae: float | None


@dataclass
class MetricsReport:
    path: str
    dataset: str
    checkpoint_digest: str | None
    records: list[ImageRecord] = field(default_factory=list)

    lpips = None  # not computed: needs a pretrained perceptual network

    @property
    def has_ae(self) -> bool:
        return bool(self.records) and self.records[0].ae is not None

    @property
    def mean(self) -> dict:
        out = {
            "psnr": float(np.mean([r.psnr for r in self.records])),
            "ssim": float(np.mean([r.ssim for r in self.records])),
        }
        if self.has_ae:
            out["ae"] = float(np.mean([r.ae for r in self.records]))
        return out

    def to_lines(self) -> list[str]:
        lines = []
        for r in self.records:
            rec = {"id": r.id, "psnr": r.psnr, "ssim": r.ssim}
            if r.ae is not None:
                rec["ae"] = r.ae
            lines.append(json.dumps(rec))
        footer = {
            "aggregate": self.mean,
            "n": len(self.records),
            "path": self.path,
            "dataset": self.dataset,
            "checkpoint_digest": self.checkpoint_digest,
            "lpips": "absent",
        }
        lines.append(json.dumps(footer))
        return lines

    def write(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.to_lines()) + "\n")

    @classmethod
    def read(cls, path: str | Path) -> "MetricsReport":
        lines = [json.loads(l) for l in Path(path).read_text().splitlines() if l.strip()]
        footer = lines[-1]
        recs = [ImageRecord(d["id"], d["psnr"], d["ssim"], d.get("ae")) for d in lines[:-1]]
        return cls(footer["path"], footer["dataset"], footer["checkpoint_digest"], recs)


def path_io(sample, path: str) -> tuple[np.ndarray, np.ndarray]:
    """Input image and ground truth of ``sample`` for an inference path."""
    if path not in PATHS:
        raise ValueError(f"unknown path {path!r}; expected one of {PATHS}")
    if path.startswith("N"):
        if not isinstance(sample, PairedSample):
            raise ValueError(f"path {path} needs NIR input, sample {sample.id} has none")
        x = sample.nir
    else:
        x = sample.gray
    if path.endswith("C"):
        return x, sample.rgb
    if path == "N2G":
        return x, sample.gray
    if not isinstance(sample, PairedSample):
        raise ValueError(f"path G2N needs NIR ground truth, sample {sample.id} has none")
    return x, sample.nir


@torch.no_grad()
def predict(bundle: Translator, path: str, inputs: Sequence[np.ndarray], batch_size: int = 10) -> list[np.ndarray]:
    outs = []
    for i in range(0, len(inputs), batch_size):
        x = torch.from_numpy(np.stack(inputs[i:i + batch_size])).float()
        outs.extend(bundle.run_path(path, x).double().numpy())
    return outs


def evaluate(
    bundle: Translator,
    dataset: Sequence[PairedSample | GraySample],
    path: str,
    *,
    dataset_tag: str = "",
    checkpoint_digest: str | None = None,
    batch_size: int = 10,
) -> MetricsReport:
    """Run ``path`` over ``dataset`` and score each output against its ground truth.

    Angular error is reported only for RGB targets.
    """
    if not dataset:
        raise ValueError("cannot evaluate an empty dataset")
    io = [path_io(s, path) for s in dataset]
    preds = predict(bundle, path, [x for x, _ in io], batch_size)
    if checkpoint_digest is None and hasattr(bundle, "digest"):
        checkpoint_digest = bundle.digest()
    report = MetricsReport(path, dataset_tag, checkpoint_digest)
    for s, (_, gt), pred in zip(dataset, io, preds):
        gt = gt.astype(np.float64)
        ae = angular_error(pred, gt) if gt.shape[0] == 3 else None
        report.records.append(ImageRecord(s.id, psnr(pred, gt), ssim(pred, gt), ae))
    return report


def mean_rgb_baseline_psnr(train: Sequence[PairedSample], test: Sequence[PairedSample]) -> float:
    """Mean PSNR of predicting the training set's mean colour for every pixel."""
    mean = np.mean([s.rgb.mean(axis=(1, 2)) for s in train], axis=0)
    return float(np.mean([psnr(np.broadcast_to(mean[:, None, None], s.rgb.shape), s.rgb) for s in test]))


def identity_n2g_psnr(test: Sequence[PairedSample]) -> float:
    """Mean PSNR of using the NIR image itself as the grayscale estimate."""
    return float(np.mean([psnr(s.nir, s.gray) for s in test]))


def save_preview(bundle: Translator, samples: Sequence, path: str, out: str | Path) -> None:
    """Write an (input | prediction | ground truth) grid, one row per sample."""
    io = [path_io(s, path) for s in samples]
    preds = predict(bundle, path, [x for x, _ in io])
    to3 = lambda a: np.repeat(a, 3, axis=0) if a.shape[0] == 1 else a
    rows = [np.concatenate([to3(x), to3(p), to3(g)], axis=2) for (x, g), p in zip(io, preds)]
    save_image(np.concatenate(rows, axis=1), out)
