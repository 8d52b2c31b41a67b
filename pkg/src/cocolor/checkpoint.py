"""Checkpoint persistence.

File layout::

    COCOLOR-CKPT\\n
    <header JSON, one line>\\n
    <payload: torch.save of the checkpoint body>

The header carries ``format_version``, ``payload_bytes`` and ``sha256`` of the
payload. Loading rejects other versions, truncated payloads and digest
mismatches.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .optim import AdamState

MAGIC = b"COCOLOR-CKPT\n"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    phase: str
    epoch: int
    params: dict[str, dict[str, torch.Tensor]]
    opt_states: dict[str, AdamState]
    config: dict
    config_digest: str
    rng_state: dict
    history: list[dict] = field(default_factory=list)
    version: int = FORMAT_VERSION

    def bundle(self):
        from .nets import ModelBundle

        b = ModelBundle(self.config["image_size"], self.config["base_channels"], seed=0)
        b.load_params(self.params)
        return b

    def summary(self) -> dict:
        n_params = sum(t.numel() for p in self.params.values() for t in p.values())
        return {
            "format_version": self.version,
            "phase": self.phase,
            "epoch": self.epoch,
            "config_digest": self.config_digest,
            "networks": sorted(self.params),
            "n_parameters": n_params,
            "optimizer_steps": {k: s.step for k, s in self.opt_states.items()},
            "config": self.config,
            "last_epoch": self.history[-1] if self.history else None,
        }


def config_digest(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    body = {
        "phase": ckpt.phase,
        "epoch": ckpt.epoch,
        "params": {k: dict(v) for k, v in ckpt.params.items()},
        "opt_states": {k: s.to_dict() for k, s in ckpt.opt_states.items()},
        "config_json": json.dumps(ckpt.config, sort_keys=True),
        "config_digest": ckpt.config_digest,
        "rng_state_json": json.dumps(ckpt.rng_state),
        "history_json": json.dumps(ckpt.history),
    }
    buf = io.BytesIO()
    torch.save(body, buf)
    payload = buf.getvalue()
    header = {
        "format_version": ckpt.version,
        "payload_bytes": len(payload),
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        f.write(payload)


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such checkpoint: {path}")
    raw = path.read_bytes()
    if not raw.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    end = raw.find(b"\n", len(MAGIC))
    if end < 0:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[len(MAGIC):end])
        version = header["format_version"]
        size = header["payload_bytes"]
        digest = header["sha256"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version} unsupported (expected {FORMAT_VERSION})")
    payload = raw[end + 1:]
    if len(payload) != size:
        raise CheckpointError(f"{path}: payload is {len(payload)} bytes, header says {size} (truncated?)")
    if hashlib.sha256(payload).hexdigest() != digest:
        raise CheckpointError(f"{path}: payload digest mismatch (corrupt file)")
    try:
        body = torch.load(io.BytesIO(payload), weights_only=True)
    except Exception as exc:  # digest matched, so this is a writer bug
        raise CheckpointError(f"{path}: cannot decode payload ({exc})") from exc
    return Checkpoint(
        phase=body["phase"],
        epoch=body["epoch"],
        params=body["params"],
        opt_states={k: AdamState.from_dict(v) for k, v in body["opt_states"].items()},
        config=json.loads(body["config_json"]),
        config_digest=body["config_digest"],
        rng_state=json.loads(body["rng_state_json"]),
        history=json.loads(body["history_json"]),
        version=version,
    )
