"""Losses, paired-mask batches, Adam, and the joint SinoNet + ImgNet training loop."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .core import Geometry, check_same_shape
from .errors import InsufficientMasks, ShapeMismatch
from .marops import compute_trace, li_interpolate, zero_trace
from .nn import ImgNet, SinoNet, autodiff as ad, imgnet_config, sinonet_config
from .projector import fbp

log = logging.getLogger(__name__)

# ablation ladder -> (use_fbp_loss, use_imgnet); joint+mtr differs from joint only at inference
MODES = {
    "sinonet": (False, False),
    "sinonet+fbp": (True, False),
    "joint": (True, True),
    "joint+mtr": (True, True),
}


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 2
    lr: float = 1e-4
    adam_betas: tuple[float, float] = (0.5, 0.999)
    adam_eps: float = 1e-8
    alpha1: float = 1.0
    alpha2: float = 1.0
    seed: int = 0
    use_fbp_loss: bool = True
    use_imgnet: bool = True
    # when set, overrides epochs * ceil(len(dataset) / batch_size)
    iterations: int | None = None
    sn_trace_only: bool = False
    sinonet_depth: int = 3
    sinonet_channels: int = 8
    sinonet_residual: bool = False
    imgnet_channels: int = 4

    def __post_init__(self):
        self.adam_betas = tuple(self.adam_betas)
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise ValueError("alphas must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @classmethod
    def for_mode(cls, mode: str, **kw) -> "TrainConfig":
        use_fbp, use_img = MODES[mode]
        return cls(use_fbp_loss=use_fbp, use_imgnet=use_img, **kw)

    def num_iterations(self, dataset_size: int) -> int:
        if self.iterations is not None:
            return self.iterations
        return self.epochs * math.ceil(dataset_size / self.batch_size)

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def sn_loss_node(s_sn, s, trace=None) -> ad.Var:
    return ad.masked_l1(s_sn, s, trace)


def loss_sn(s_sn: np.ndarray, s: np.ndarray) -> float:
    """Mean absolute difference over every sinogram bin."""
    check_same_shape(s_sn, s)
    return float(sn_loss_node(np.asarray(s_sn, np.float64), np.asarray(s, np.float64)).value)


def loss_fbp(s_sn1, s_sn2, m1, m2, geometry: Geometry) -> float:
    """Mean |FBP(S_sn1) - FBP(S_sn2)| over pixels outside both metal masks."""
    check_same_shape(s_sn1, s_sn2)
    check_same_shape(m1, m2)
    r1 = fbp(s_sn1, geometry).astype(np.float64)
    r2 = fbp(s_sn2, geometry).astype(np.float64)
    keep = ~(np.asarray(m1, bool) | np.asarray(m2, bool))
    return float(ad.masked_l1(r1, r2, np.broadcast_to(keep, r1.shape)).value)


def loss_in(x_out, s, geometry: Geometry) -> float:
    """Mean |X_out - FBP(S)| over all pixels."""
    ref = fbp(s, geometry).astype(np.float64)
    if np.shape(x_out) != ref.shape:
        raise ShapeMismatch(f"x_out {np.shape(x_out)} vs reference {ref.shape}")
    return float(ad.masked_l1(np.asarray(x_out, np.float64), ref).value)


def total_loss(parts, alpha1: float = 1.0, alpha2: float = 1.0,
               use_fbp_loss: bool = True, use_imgnet: bool = True):
    """L_SN + alpha1 L_FBP + alpha2 L_IN; works on floats or graph nodes."""
    l_sn, l_fbp, l_in = parts
    a1 = alpha1 if use_fbp_loss else 0.0
    a2 = alpha2 if use_imgnet else 0.0
    if isinstance(l_sn, ad.Var):
        terms = [(l_sn, 1.0)] + [(t, a) for t, a in ((l_fbp, a1), (l_in, a2)) if a and t is not None]
        return ad.add_scalars(terms)
    return l_sn + a1 * (l_fbp or 0.0) + a2 * (l_in or 0.0)


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


class MaskBank:
    """Training metal masks with their (cached) sinogram traces."""

    def __init__(self, masks: np.ndarray, geometry: Geometry):
        self.masks = np.asarray(masks, dtype=bool)
        self.geometry = geometry
        self._traces: dict[int, np.ndarray] = {}

    def __len__(self):
        return len(self.masks)

    def trace(self, i: int) -> np.ndarray:
        if i not in self._traces:
            self._traces[i] = compute_trace(self.masks[i], self.geometry)
        return self._traces[i]


@dataclass
class PairedBatch:
    s: np.ndarray
    tr1: np.ndarray
    tr2: np.ndarray
    m1: np.ndarray
    m2: np.ndarray
    s_li1: np.ndarray
    s_li2: np.ndarray
    indices: np.ndarray
    mask_ids: np.ndarray = field(repr=False)


def sample_paired_batch(dataset: np.ndarray, mask_bank: MaskBank, rng: np.random.Generator,
                        batch_size: int = 2) -> PairedBatch:
    """One sinogram mini-batch, each sample paired with two distinct masks."""
    if len(mask_bank) < 2:
        raise InsufficientMasks(f"mask bank has {len(mask_bank)} masks, need >= 2")
    n = len(dataset)
    idx = rng.choice(n, size=batch_size, replace=n < batch_size)
    pairs = np.stack([rng.choice(len(mask_bank), size=2, replace=False) for _ in range(batch_size)])
    s = np.asarray(dataset)[idx].astype(np.float32)
    tr = [np.stack([mask_bank.trace(p[j]) for p in pairs]) for j in (0, 1)]
    m = [np.stack([mask_bank.masks[p[j]] for p in pairs]) for j in (0, 1)]
    s_li = [np.stack([li_interpolate(zero_trace(si, t), t) for si, t in zip(s, tr[j])]) for j in (0, 1)]
    return PairedBatch(s, tr[0], tr[1], m[0], m[1], s_li[0], s_li[1], idx, pairs)


# ---------------------------------------------------------------------------
# optimiser
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float = 1e-4, betas=(0.5, 0.999), eps: float = 1e-8):
    """In-place bias-corrected Adam update; returns ``(params, state)``."""
    for k, g in grads.items():
        if k not in params or np.shape(params[k]) != np.shape(g):
            raise ShapeMismatch(f"gradient {k!r} does not match its parameter")
    b1, b2 = betas
    state.step += 1
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for k, p in params.items():
        g = grads.get(k)
        if g is None:
            g = np.zeros_like(p)
        g = g.astype(np.float64)
        m = state.m.setdefault(k, np.zeros(p.shape))
        v = state.v.setdefault(k, np.zeros(p.shape))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        params[k] = (p - update).astype(p.dtype)
    return params, state


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    sinonet: SinoNet
    imgnet: ImgNet | None
    history: list[dict]


def sinogram_scale(dataset: np.ndarray) -> float:
    """99th percentile of the metal-free sinogram values."""
    value = float(np.percentile(np.asarray(dataset, np.float64), 99))
    return value if value > 0 else 1.0


def iteration_losses(sinonet: SinoNet, imgnet: ImgNet | None, batch: PairedBatch, geometry: Geometry,
                     config: TrainConfig, ps: dict, pi: dict | None):
    """Build the graph of one iteration; returns the total node and the parts."""
    s = batch.s[:, None]
    need_recon = config.use_fbp_loss or config.use_imgnet
    ref = fbp(batch.s, geometry)[:, None] if config.use_imgnet else None
    l_sn, l_in, recon = [], [], []
    for s_li, tr in ((batch.s_li1, batch.tr1), (batch.s_li2, batch.tr2)):
        trf = tr[:, None].astype(np.float32)
        raw = sinonet.graph(ps, s_li, tr)
        s_sn = ad.add(ad.mul(raw, trf), s_li[:, None] * (1.0 - trf))
        l_sn.append(sn_loss_node(s_sn, s, tr[:, None] if config.sn_trace_only else None))
        if need_recon:
            rec = ad.fbp_node(s_sn, geometry)
            recon.append(rec)
            if config.use_imgnet:
                l_in.append(ad.masked_l1(imgnet.graph(pi, rec), ref))
    l_sn = ad.scale(ad.add(*l_sn), 0.5)
    l_fbp = None
    if config.use_fbp_loss:
        keep = ~(batch.m1 | batch.m2)[:, None]
        l_fbp = ad.masked_l1(recon[0], recon[1], keep)
    l_in = ad.scale(ad.add(*l_in), 0.5) if l_in else None
    total = total_loss((l_sn, l_fbp, l_in), config.alpha1, config.alpha2,
                       config.use_fbp_loss, config.use_imgnet)
    return total, (l_sn, l_fbp, l_in)


def train(dataset: np.ndarray, mask_bank: MaskBank, geometry: Geometry, config: TrainConfig,
          sinonet: SinoNet | None = None, imgnet: ImgNet | None = None,
          on_iteration: Callable[[dict], None] | None = None) -> TrainResult:
    """Self-supervised joint training on metal-free sinograms.

    Per iteration: sample a paired batch; complete both branches with SinoNet
    and composite; L_SN averaged over the branches, the paired FBP loss, and
    the image loss of ImgNet on both reconstructions; one Adam step on all
    parameters.
    """
    dataset = np.asarray(dataset, np.float32)
    if dataset.ndim != 3 or len(dataset) == 0:
        raise ValueError("dataset must be a non-empty (n, N, D) stack of sinograms")
    if len(mask_bank) < 2:
        raise InsufficientMasks("mask bank needs at least two masks")
    rng = np.random.default_rng(config.seed)
    if sinonet is None:
        cfg = sinonet_config(config.sinonet_depth, config.sinonet_channels, config.sinonet_residual)
        sinonet = SinoNet.create(cfg, seed=config.seed, s_norm=sinogram_scale(dataset))
    if config.use_imgnet and imgnet is None:
        imgnet = ImgNet.create(imgnet_config(config.sinonet_depth, config.imgnet_channels), seed=config.seed + 1)
    if not config.use_imgnet:
        imgnet = None

    opt_s, opt_i = AdamState(), AdamState()
    history = []
    for it in range(config.num_iterations(len(dataset))):
        batch = sample_paired_batch(dataset, mask_bank, rng, config.batch_size)
        ps = sinonet.param_vars()
        pi = imgnet.param_vars() if imgnet is not None else None
        total, (l_sn, l_fbp, l_in) = iteration_losses(sinonet, imgnet, batch, geometry, config, ps, pi)
        ad.backward(total)
        adam_step(sinonet.params, _grads(ps), opt_s, config.lr, config.adam_betas, config.adam_eps)
        if imgnet is not None:
            adam_step(imgnet.params, _grads(pi), opt_i, config.lr, config.adam_betas, config.adam_eps)
        rec = {
            "iter": it,
            "l_sn": float(l_sn.value),
            "l_fbp": float(l_fbp.value) if l_fbp is not None else 0.0,
            "l_in": float(l_in.value) if l_in is not None else 0.0,
            "total": float(total.value),
        }
        if not all(math.isfinite(v) for v in rec.values()):
            raise FloatingPointError(f"non-finite loss at iteration {it}: {rec}")
        history.append(rec)
        if on_iteration is not None:
            on_iteration(rec)
        if it % 50 == 0:
            log.info("iter %d total %.5f", it, rec["total"])
    return TrainResult(sinonet, imgnet, history)


def _grads(pvars: dict[str, ad.Var]) -> dict[str, np.ndarray]:
    return {k: (v.grad if v.grad is not None else np.zeros_like(v.value)) for k, v in pvars.items()}


def write_history(path: str | Path, history: list[dict]) -> None:
    with open(path, "w") as fh:
        for rec in history:
            fh.write(json.dumps(rec) + "\n")
