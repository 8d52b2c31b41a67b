"""U-Net generators, PatchGAN discriminators and the eight-network bundle."""

from __future__ import annotations

import hashlib
import math
from collections import OrderedDict
from dataclasses import dataclass

import torch
import torch.nn as nn
from torch.func import functional_call

Params = "OrderedDict[str, torch.Tensor]"

GENERATORS = ("g2n", "n2g", "f_n", "f_g")
DISCRIMINATORS = ("d_n_img", "d_n_feat", "d_g_img", "d_g_feat")
INIT_STD = 0.02


class ShapeError(ValueError):
    pass


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


@dataclass(frozen=True)
class GeneratorSpec:
    in_channels: int
    out_channels: int
    image_size: int = 64
    base_channels: int = 16
    depth: int | None = None

    def __post_init__(self) -> None:
        if not _is_pow2(self.image_size) or self.image_size < 8:
            raise ValueError(f"image_size must be a power of two >= 8, got {self.image_size}")
        if self.depth is None:
            object.__setattr__(self, "depth", max(1, int(math.log2(self.image_size)) - 2))
        if self.depth < 1 or 2 ** self.depth > self.image_size:
            raise ValueError(f"depth {self.depth} too large for image_size {self.image_size}")
        if self.base_channels < 1 or self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")

    @property
    def widths(self) -> list[int]:
        return [min(self.base_channels * 2 ** i, 8 * self.base_channels) for i in range(self.depth)]


@dataclass(frozen=True)
class DiscriminatorSpec:
    in_channels: int
    n_layers: int = 3
    base_channels: int = 16

    def __post_init__(self) -> None:
        if self.n_layers < 1:
            raise ValueError(f"n_layers must be >= 1, got {self.n_layers}")

    @classmethod
    def for_size(cls, in_channels: int, image_size: int, base_channels: int = 16) -> "DiscriminatorSpec":
        if not _is_pow2(image_size) or image_size < 16:
            raise ValueError(f"image_size must be a power of two >= 16, got {image_size}")
        return cls(in_channels, min(3, int(math.log2(image_size)) - 3), base_channels)

    @property
    def widths(self) -> list[int]:
        return [min(self.base_channels * 2 ** i, 8 * self.base_channels) for i in range(self.n_layers + 1)]


def _check_input(x: torch.Tensor, channels: int) -> None:
    if x.ndim != 4:
        raise ShapeError(f"expected (N, C, H, W) input, got shape {tuple(x.shape)}")
    if x.shape[1] != channels:
        raise ShapeError(f"expected {channels} input channels, got {x.shape[1]}")
    if not torch.isfinite(x).all():
        raise ShapeError("input contains non-finite values")


class UNetGenerator(nn.Module):
    """pix2pix-style U-Net ending in a 1x1 projection and a sigmoid.

    Encoder level ``i`` halves the resolution with a 4x4/stride-2 conv; instance
    norm is used on all but the first and innermost levels. The decoder mirrors
    it with transposed convs and concatenates the matching encoder output.
    """

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec
        w = spec.widths
        d = spec.depth
        self.down = nn.ModuleList()
        for i in range(d):
            layers = [nn.Conv2d(spec.in_channels if i == 0 else w[i - 1], w[i], 4, 2, 1)]
            if 0 < i < d - 1:
                layers.append(nn.InstanceNorm2d(w[i]))
            layers.append(nn.LeakyReLU(0.2))
            self.down.append(nn.Sequential(*layers))
        self.up = nn.ModuleList()
        for i in reversed(range(d)):
            cin = w[i] if i == d - 1 else 2 * w[i]
            cout = w[i - 1] if i > 0 else w[0]
            self.up.append(nn.Sequential(nn.ConvTranspose2d(cin, cout, 4, 2, 1), nn.InstanceNorm2d(cout), nn.ReLU()))
        self.head = nn.Conv2d(w[0], spec.out_channels, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _check_input(x, self.spec.in_channels)
        step = 2 ** self.spec.depth
        if x.shape[2] % step or x.shape[3] % step:
            raise ShapeError(f"spatial size {tuple(x.shape[2:])} not divisible by {step}")
        skips = []
        for block in self.down:
            x = block(x)
            skips.append(x)
        skips.pop()
        for block in self.up:
            x = block(x)
            if skips:
                x = torch.cat([x, skips.pop()], dim=1)
        return torch.sigmoid(self.head(x))


class PatchDiscriminator(nn.Module):
    """PatchGAN: ``n_layers`` stride-2 convs, one stride-1 conv, then a 1-channel head.

    The output is a grid of raw (unsquashed) realness scores.
    """

    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        self.spec = spec
        w = spec.widths
        layers: list[nn.Module] = [nn.Conv2d(spec.in_channels, w[0], 4, 2, 1), nn.LeakyReLU(0.2)]
        for k in range(1, spec.n_layers):
            layers += [nn.Conv2d(w[k - 1], w[k], 4, 2, 1), nn.InstanceNorm2d(w[k]), nn.LeakyReLU(0.2)]
        n = spec.n_layers
        layers += [nn.Conv2d(w[n - 1], w[n], 4, 1, 1), nn.InstanceNorm2d(w[n]), nn.LeakyReLU(0.2)]
        layers.append(nn.Conv2d(w[n], 1, 4, 1, 1))
        self.body = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _check_input(x, self.spec.in_channels)
        return self.body(x)


def _as_generator(rng) -> torch.Generator:
    if isinstance(rng, torch.Generator):
        return rng
    g = torch.Generator()
    g.manual_seed(int(rng))
    return g


def init_params(model: nn.Module, rng=0) -> "OrderedDict[str, torch.Tensor]":
    """Fresh parameters for ``model``: weights ~ N(0, 0.02), biases 0."""
    gen = _as_generator(rng)
    out = OrderedDict()
    for name, p in model.named_parameters():
        if name.endswith("bias"):
            out[name] = torch.zeros(p.shape, dtype=p.dtype)
        else:
            out[name] = torch.empty(p.shape, dtype=p.dtype).normal_(0.0, INIT_STD, generator=gen)
    return out


def get_params(model: nn.Module) -> "OrderedDict[str, torch.Tensor]":
    return OrderedDict((k, v.detach().clone()) for k, v in model.named_parameters())


@torch.no_grad()
def set_params(model: nn.Module, params) -> None:
    own = dict(model.named_parameters())
    if set(own) != set(params):
        raise KeyError(f"parameter names differ: {sorted(set(own) ^ set(params))}")
    for name, value in params.items():
        if own[name].shape != value.shape:
            raise ShapeError(f"{name}: expected {tuple(own[name].shape)}, got {tuple(value.shape)}")
        own[name].copy_(value)


def build_generator(spec: GeneratorSpec, rng=0) -> UNetGenerator:
    model = UNetGenerator(spec)
    set_params(model, init_params(model, rng))
    return model


def build_discriminator(spec: DiscriminatorSpec, rng=0) -> PatchDiscriminator:
    model = PatchDiscriminator(spec)
    set_params(model, init_params(model, rng))
    return model


def forward(model: nn.Module, params, x: torch.Tensor) -> torch.Tensor:
    """Evaluate ``model`` with an explicit parameter set (differentiable in both)."""
    return functional_call(model, dict(params), (x,))


def params_digest(params) -> str:
    h = hashlib.sha256()
    for name, t in params.items():
        h.update(name.encode())
        h.update(str(tuple(t.shape)).encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


class ModelBundle:
    """The two translators, two colorizers and four discriminators."""

    def __init__(self, image_size: int = 32, base_channels: int = 8, seed: int = 0):
        self.image_size = image_size
        self.base_channels = base_channels
        gen = _as_generator(seed)
        g = lambda cin, cout: build_generator(GeneratorSpec(cin, cout, image_size, base_channels), gen)
        d = lambda cin: build_discriminator(DiscriminatorSpec.for_size(cin, image_size, base_channels), gen)
        self.nets: dict[str, nn.Module] = {
            "g2n": g(1, 1),
            "n2g": g(1, 1),
            "f_n": g(1, 3),
            "f_g": g(1, 3),
            "d_n_img": d(1),
            "d_n_feat": d(3),
            "d_g_img": d(1),
            "d_g_feat": d(3),
        }

    def __getattr__(self, name):
        nets = self.__dict__.get("nets", {})
        if name in nets:
            return nets[name]
        raise AttributeError(name)

    def params(self) -> dict[str, "OrderedDict[str, torch.Tensor]"]:
        return {name: get_params(m) for name, m in self.nets.items()}

    def load_params(self, params: dict) -> None:
        for name, m in self.nets.items():
            set_params(m, params[name])

    def digest(self, names=None) -> str:
        h = hashlib.sha256()
        for name in names or self.nets:
            h.update(name.encode())
            h.update(params_digest(dict(self.nets[name].named_parameters())).encode())
        return h.hexdigest()

    def to(self, dtype) -> "ModelBundle":
        for m in self.nets.values():
            m.to(dtype)
        return self

    def run_path(self, path: str, x: torch.Tensor) -> torch.Tensor:
        """Apply one of the six inference paths (N2C, N2G, N2G2C, G2C, G2N, G2N2C)."""
        steps = {
            "N2C": ("f_n",),
            "N2G": ("n2g",),
            "N2G2C": ("n2g", "f_g"),
            "G2C": ("f_g",),
            "G2N": ("g2n",),
            "G2N2C": ("g2n", "f_n"),
        }
        if path not in steps:
            raise ValueError(f"unknown path {path!r}; expected one of {sorted(steps)}")
        for name in steps[path]:
            x = self.nets[name](x)
        return x
