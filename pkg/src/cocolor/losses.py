"""Training objectives: pair, bilateral consistency, adversarial, cycle, identity."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import torch
import torch.nn.functional as F

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
K1, K2 = 0.01, 0.03
MIX_ALPHA = 0.84


class NonFiniteLossError(FloatingPointError):
    """A loss term evaluated to NaN or infinity."""

    def __init__(self, component: str, detail: str = ""):
        self.component = component
        super().__init__(f"non-finite loss component {component!r}" + (f" ({detail})" if detail else ""))


@dataclass(frozen=True)
class LossWeights:
    cyc: float = 0.1
    idt: float = 0.01
    latent_gray: float = 0.025
    latent_nir: float = 0.025
    pair: float = 10.0
    blt: float = 1.0

    def __post_init__(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if not (v >= 0 and math.isfinite(v)):
                raise ValueError(f"loss weight {f.name} must be finite and >= 0, got {v}")


@dataclass
class LossBreakdown:
    """Scalar loss values of one step; ``None`` marks a term not evaluated."""

    pair: float | None = None
    blt: float | None = None
    gan_img_N: float | None = None
    gan_feat_N: float | None = None
    gan_img_G: float | None = None
    gan_feat_G: float | None = None
    cyc: float | None = None
    idt: float | None = None
    tran: float | None = None
    total: float | None = None

    def recompute_total(self, w: LossWeights) -> float:
        v = lambda x: 0.0 if x is None else x
        tran = (
            w.cyc * v(self.cyc) + w.idt * v(self.idt)
            + v(self.gan_img_N) + v(self.gan_feat_N) + v(self.gan_img_G) + v(self.gan_feat_G)
        )
        return tran + w.pair * v(self.pair) + w.blt * v(self.blt)

    def as_dict(self) -> dict:
        return asdict(self)


def _same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def _batched(x: torch.Tensor) -> torch.Tensor:
    return x[None] if x.ndim == 3 else x


def l1(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _same_shape(a, b, "l1")
    return (a - b).abs().mean()


# --- SSIM family -----------------------------------------------------------------

def gaussian_window(size: int, sigma: float = SSIM_SIGMA, dtype=torch.float64) -> torch.Tensor:
    x = torch.arange(size, dtype=dtype) - (size - 1) / 2.0
    g = torch.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter(x: torch.Tensor, win: torch.Tensor) -> torch.Tensor:
    # separable valid-mode Gaussian filter applied per channel
    c = x.shape[1]
    k = win.to(x.dtype)
    x = F.conv2d(x, k.view(1, 1, 1, -1).expand(c, 1, 1, -1), groups=c)
    return F.conv2d(x, k.view(1, 1, -1, 1).expand(c, 1, -1, 1), groups=c)


def ssim_terms(a: torch.Tensor, b: torch.Tensor, win_size: int = SSIM_WINDOW) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-(image, channel) mean SSIM and mean contrast-structure term, data range 1."""
    win = gaussian_window(win_size)
    c1, c2 = K1 ** 2, K2 ** 2
    mu_a, mu_b = _filter(a, win), _filter(b, win)
    var_a = _filter(a * a, win) - mu_a * mu_a
    var_b = _filter(b * b, win) - mu_b * mu_b
    cov = _filter(a * b, win) - mu_a * mu_b
    cs = (2 * cov + c2) / (var_a + var_b + c2)
    lum = (2 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1)
    return (lum * cs).mean(dim=(2, 3)), cs.mean(dim=(2, 3))


def ms_ssim_scales(h: int, w: int) -> int:
    """Number of dyadic scales used for an ``h`` x ``w`` input.

    Starts from ``min(5, floor(log2(min(h, w) / 8)) + 1)`` and drops coarse scales
    until the coarsest one holds the full 11x11 window; never fewer than one.
    """
    side = min(h, w)
    if side < 8:
        raise ValueError(f"image side {side} too small for MS-SSIM (need >= 8)")
    s = min(5, int(math.floor(math.log2(side / 8))) + 1)
    while s > 1 and side // 2 ** (s - 1) < SSIM_WINDOW:
        s -= 1
    return s


def _safe_weighted_product(values: list[torch.Tensor], weights: list[float]) -> torch.Tensor:
    # prod(v_i ** w_i) with v_i >= 0; zero factors give 0 with zero gradient instead of NaN
    out = torch.ones_like(values[0])
    for v, wt in zip(values, weights):
        pos = v > 0
        out = out * torch.where(pos, torch.where(pos, v, torch.ones_like(v)) ** wt, torch.zeros_like(v))
    return out


def ms_ssim(a: torch.Tensor, b: torch.Tensor, scales: int | None = None) -> torch.Tensor:
    """Multi-scale SSIM averaged over images and channels.

    Scale weights are the standard five truncated to the usable scales and
    renormalized. Contrast-structure and final SSIM factors are clipped at zero.
    """
    _same_shape(a, b, "ms_ssim")
    a, b = _batched(a), _batched(b)
    h, w = a.shape[-2:]
    if scales is None:
        scales = ms_ssim_scales(h, w)
    wts = list(MS_SSIM_WEIGHTS[:scales])
    total = sum(wts)
    wts = [x / total for x in wts]
    factors = []
    for s in range(scales):
        win = min(SSIM_WINDOW, a.shape[-2], a.shape[-1])
        ssim_val, cs = ssim_terms(a, b, win)
        if s == scales - 1:
            factors.append(torch.relu(ssim_val))
        else:
            factors.append(torch.relu(cs))
            a, b = F.avg_pool2d(a, 2), F.avg_pool2d(b, 2)
    return _safe_weighted_product(factors, wts).mean()


def mix_loss(a: torch.Tensor, b: torch.Tensor, alpha: float = MIX_ALPHA) -> torch.Tensor:
    """``alpha * (1 - MS-SSIM) + (1 - alpha) * L1``."""
    return alpha * (1.0 - ms_ssim(a, b)) + (1.0 - alpha) * l1(a, b)


# --- colorization ----------------------------------------------------------------

def pair_loss(
    out_g_direct,
    out_g_latent,
    out_n_direct,
    out_n_latent,
    gt_gray_rgb,
    gt_nir_rgb,
    w: LossWeights = LossWeights(),
) -> torch.Tensor:
    """Supervised colorization loss over direct and latent-translated inputs.

    Latent outputs are compared with the RGB ground truth of the sample they were
    translated from. Passing ``None`` for an output drops its term, which the
    single-network ablations rely on.
    """
    terms = [
        (out_g_direct, gt_gray_rgb, 1.0),
        (out_g_latent, gt_nir_rgb, w.latent_gray),
        (out_n_direct, gt_nir_rgb, 1.0),
        (out_n_latent, gt_gray_rgb, w.latent_nir),
    ]
    total = None
    for out, gt, wt in terms:
        if out is None:
            continue
        v = wt * l1(gt, out)
        total = v if total is None else total + v
    if total is None:
        raise ValueError("pair_loss needs at least one output")
    return total


def bilateral_consistency_loss(n2c, n2g2c, g2c, g2n2c) -> torch.Tensor:
    """Agreement between direct and cross-domain colorization paths."""
    _same_shape(n2c, n2g2c, "bilateral N-paths")
    _same_shape(g2c, g2n2c, "bilateral G-paths")
    return mix_loss(n2c, n2g2c) + mix_loss(g2c, g2n2c)


# --- adversarial (least squares) ------------------------------------------------

def _finite_scores(*scores: torch.Tensor) -> None:
    for s in scores:
        if not torch.isfinite(s).all():
            raise NonFiniteLossError("discriminator scores")


def gan_loss_D(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    _finite_scores(real_scores, fake_scores)
    return ((real_scores - 1) ** 2).mean() + (fake_scores ** 2).mean()


def gan_loss_G(fake_scores: torch.Tensor) -> torch.Tensor:
    _finite_scores(fake_scores)
    return ((fake_scores - 1) ** 2).mean()


# --- translation --------------------------------------------------------------------

def cycle_loss(g_roundtrip, g_orig, n_roundtrip, n_orig) -> torch.Tensor:
    return l1(g_roundtrip, g_orig) + l1(n_roundtrip, n_orig)


def identity_loss(n2g_of_gray, gray, g2n_of_nir, nir) -> torch.Tensor:
    return l1(n2g_of_gray, gray) + l1(g2n_of_nir, nir)


GAN_TERMS = ("gan_img_N", "gan_feat_N", "gan_img_G", "gan_feat_G")


def translation_loss(components: dict, w: LossWeights = LossWeights()):
    """Generator-side domain translation loss.

    ``components`` must hold ``cyc``, ``idt`` and the four adversarial terms;
    a value of ``None`` counts as an inactive term.
    """
    missing = [k for k in ("cyc", "idt", *GAN_TERMS) if k not in components]
    if missing:
        raise KeyError(f"translation_loss missing components: {missing}")
    total = 0.0
    for key, wt in (("cyc", w.cyc), ("idt", w.idt), *((k, 1.0) for k in GAN_TERMS)):
        v = components[key]
        if v is not None:
            total = total + wt * v
    return total


def total_loss(tran, pair, blt, w: LossWeights = LossWeights()):
    for name, v in (("tran", tran), ("pair", pair), ("blt", blt)):
        fv = float(v.detach()) if torch.is_tensor(v) else float(v)
        if not math.isfinite(fv):
            raise NonFiniteLossError(name)
    return tran + w.pair * pair + w.blt * blt
