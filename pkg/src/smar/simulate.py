"""Procedural phantoms, metal masks, unit conversion and metal-artifact synthesis."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .core import Geometry, check_image
from .errors import EmptyMask, PlacementFailed
from .projector import forward_project

MU_WATER = 0.0192  # 1/mm
AIR_HU = -1000.0
BODY_THRESHOLD_HU = -950.0
METAL_THRESHOLD_HU = 2000.0

TISSUE_CLASSES = ("soft", "bone", "lung")
MASK_SHAPES = ("ellipse", "rounded-rect", "screw-pair")


def hu_to_mu(image_hu: np.ndarray) -> np.ndarray:
    return (MU_WATER * (1.0 + np.asarray(image_hu, dtype=np.float64) / 1000.0)).astype(np.float32)


def mu_to_hu(image_mu: np.ndarray) -> np.ndarray:
    return (1000.0 * (np.asarray(image_mu, dtype=np.float64) / MU_WATER - 1.0)).astype(np.float32)


def _pixel_grid(geometry: Geometry):
    """Pixel-centre coordinates normalised to [-1, 1] across the image."""
    h, w = geometry.image_size
    y = np.linspace(-1.0, 1.0, h)
    x = np.linspace(-1.0, 1.0, w)
    return np.meshgrid(x, y)


def _ellipse_field(X, Y, cx, cy, a, b, theta, power=2.0):
    """Superellipse 'radius'; < 1 inside.  power=2 is an ellipse."""
    c, s = np.cos(theta), np.sin(theta)
    u = ((X - cx) * c + (Y - cy) * s) / a
    v = (-(X - cx) * s + (Y - cy) * c) / b
    return (np.abs(u) ** power + np.abs(v) ** power) ** (1.0 / power)


@dataclass
class PhantomSpec:
    seed: int = 0
    num_ellipses: int = 5
    soft_range: tuple[float, float] = (-100.0, 100.0)
    bone_range: tuple[float, float] = (300.0, 1200.0)
    lung_range: tuple[float, float] = (-900.0, -500.0)
    body_hu: float = 40.0
    # body outline: semi-axes as a fraction of the half image, centre jitter
    body_axes: tuple[float, float] = (0.85, 0.7)
    body_jitter: float = 0.05
    class_probs: tuple[float, float, float] = (0.6, 0.25, 0.15)

    def __post_init__(self):
        if not 0 <= self.num_ellipses <= 8:
            raise ValueError("num_ellipses must be in [0, 8]")

    def to_dict(self):
        return asdict(self)


def make_phantom(spec: PhantomSpec, geometry: Geometry) -> np.ndarray:
    """HU image: air background, a soft-tissue body ellipse, random inner ellipses."""
    rng = np.random.default_rng(spec.seed)
    X, Y = _pixel_grid(geometry)
    img = np.full(geometry.image_size, AIR_HU)
    ba, bb = spec.body_axes
    if spec.body_jitter > 0:
        ba *= 1.0 + rng.uniform(-spec.body_jitter, spec.body_jitter)
        bb *= 1.0 + rng.uniform(-spec.body_jitter, spec.body_jitter)
    body = _ellipse_field(X, Y, 0.0, 0.0, ba, bb, 0.0) < 1.0
    img[body] = spec.body_hu
    ranges = {"soft": spec.soft_range, "bone": spec.bone_range, "lung": spec.lung_range}
    for _ in range(spec.num_ellipses):
        cls = TISSUE_CLASSES[rng.choice(3, p=np.asarray(spec.class_probs) / sum(spec.class_probs))]
        lo, hi = ranges[cls]
        value = rng.uniform(lo, hi)
        # centre inside the body, size a fraction of the body
        r = 0.6 * np.sqrt(rng.uniform())
        phi = rng.uniform(0, 2 * np.pi)
        cx, cy = r * ba * np.cos(phi), r * bb * np.sin(phi)
        a = rng.uniform(0.06, 0.3) * ba
        b = rng.uniform(0.06, 0.3) * bb
        inside = (_ellipse_field(X, Y, cx, cy, a, b, rng.uniform(0, np.pi)) < 1.0) & body
        img[inside] = value
    return np.clip(img, -1000.0, 2000.0).astype(np.float32)


@dataclass
class MaskSpec:
    seed: int = 0
    shape: str = "ellipse"
    min_pixels: int = 20
    max_pixels: int = 200
    # metal centres are drawn from body pixels within this fraction of the body extent
    placement_fraction: float = 0.8

    def __post_init__(self):
        if self.shape not in MASK_SHAPES:
            raise ValueError(f"shape must be one of {MASK_SHAPES}")
        if not 1 <= self.min_pixels <= self.max_pixels:
            raise ValueError("need 1 <= min_pixels <= max_pixels")

    def to_dict(self):
        return asdict(self)


def _shape_field(shape, X, Y, cx, cy, size, rng):
    theta = rng.uniform(0, np.pi)
    elong = rng.uniform(1.0, 2.5)
    if shape == "ellipse":
        return _ellipse_field(X, Y, cx, cy, size * elong, size, theta)
    if shape == "rounded-rect":
        return _ellipse_field(X, Y, cx, cy, size * elong, size, theta, power=4.0)
    # screw-pair: two parallel elongated bars either side of the centre
    sep = size * rng.uniform(2.5, 4.0)
    ox, oy = -sep * np.sin(theta), sep * np.cos(theta)
    f1 = _ellipse_field(X, Y, cx + ox, cy + oy, size * 3.0, size * 0.6, theta, power=4.0)
    f2 = _ellipse_field(X, Y, cx - ox, cy - oy, size * 3.0, size * 0.6, theta, power=4.0)
    return np.minimum(f1, f2)


def make_metal_mask(spec: MaskSpec, geometry: Geometry, body: np.ndarray) -> np.ndarray:
    """Boolean mask with a pixel count drawn uniformly from the requested range.

    The shape is the sub-level set of a random shape field holding exactly the
    target number of pixels, restricted to the body interior.
    """
    check_image(body, geometry, "body")
    rng = np.random.default_rng(spec.seed)
    inside = np.asarray(body) > BODY_THRESHOLD_HU
    target = int(rng.integers(spec.min_pixels, spec.max_pixels + 1))
    if inside.sum() < target:
        raise PlacementFailed(f"body interior has {int(inside.sum())} pixels, need {target}")
    X, Y = _pixel_grid(geometry)
    iy, ix = np.nonzero(inside)
    # restrict centres to the inner part of the body
    ccy, ccx = iy.mean(), ix.mean()
    span = max(np.ptp(iy), np.ptp(ix), 1)
    central = np.hypot(iy - ccy, ix - ccx) <= 0.5 * spec.placement_fraction * span
    cand = np.flatnonzero(central) if central.any() else np.arange(iy.size)
    h, w = geometry.image_size
    size = np.sqrt(target / (np.pi * h * w / 4.0))  # radius of a disk with `target` pixels, normalised units
    for _ in range(100):
        k = cand[rng.integers(cand.size)]
        cx, cy = X[iy[k], ix[k]], Y[iy[k], ix[k]]
        fld = _shape_field(spec.shape, X, Y, cx, cy, size, rng)
        fld = np.where(inside, fld, np.inf)
        order = np.argsort(fld, axis=None, kind="stable")[:target]
        # reject placements that had to spill along the body outline
        if np.all(np.isfinite(fld.ravel()[order])) and fld.ravel()[order[-1]] < 3.0:
            mask = np.zeros(geometry.image_size, dtype=bool)
            mask.ravel()[order] = True
            return mask
    raise PlacementFailed("could not place metal after 100 attempts")


@dataclass
class Spectrum:
    """Discrete energy bins as (weight, tissue scale, metal scale)."""

    bins: list[tuple[float, float, float]] = field(
        default_factory=lambda: [(0.3, 1.0, 1.6), (0.5, 1.0, 1.0), (0.2, 1.0, 0.55)]
    )

    def __post_init__(self):
        w = np.array([b[0] for b in self.bins], dtype=np.float64)
        t = np.array([b[1] for b in self.bins], dtype=np.float64)
        m = np.array([b[2] for b in self.bins], dtype=np.float64)
        if w.size == 0 or np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-6:
            raise ValueError("spectrum weights must be positive and sum to 1")
        if np.any(np.diff(m) >= 0):
            raise ValueError("metal scales must strictly decrease with energy")
        if np.any((t < 0.9) | (t > 1.1)):
            raise ValueError("tissue scales must lie in [0.9, 1.1]")
        self.bins = [tuple(float(v) for v in b) for b in self.bins]

    @classmethod
    def mono(cls) -> "Spectrum":
        return cls([(1.0, 1.0, 1.0)])

    def to_dict(self):
        return {"bins": [list(b) for b in self.bins]}


def insert_metal(clean_hu: np.ndarray, mask: np.ndarray, metal_mu: float) -> np.ndarray:
    """Attenuation image with tissue replaced by ``metal_mu`` inside the mask."""
    mu = hu_to_mu(clean_hu)
    mu[mask] = metal_mu
    return mu


def synthesize_metal_sinogram(
    clean_hu: np.ndarray,
    mask: np.ndarray,
    spectrum: Spectrum,
    metal_mu: float,
    geometry: Geometry,
    poisson_photons: float | None = None,
    seed: int = 0,
) -> np.ndarray:
    """Beer-Lambert mixture over energy bins of tissue and metal line integrals.

    ``poisson_photons`` enables counting noise with that many unattenuated photons per bin.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EmptyMask("metal mask is empty")
    tissue = hu_to_mu(clean_hu)
    if metal_mu <= float(tissue.max()):
        raise ValueError(f"metal_mu={metal_mu} must exceed the tissue maximum {float(tissue.max()):.4f}")
    tissue[mask] = 0.0
    p_tissue = forward_project(tissue, geometry).astype(np.float64)
    p_metal = forward_project(np.where(mask, metal_mu, 0.0).astype(np.float32), geometry).astype(np.float64)
    w = np.array([b[0] for b in spectrum.bins])
    t = np.array([b[1] for b in spectrum.bins])
    m = np.array([b[2] for b in spectrum.bins])
    expo = -(t[:, None, None] * p_tissue + m[:, None, None] * p_metal)
    # -log sum_e w_e exp(expo_e), shifted for stability
    top = expo.max(axis=0)
    intensity = np.einsum("e,eij->ij", w, np.exp(expo - top))
    if poisson_photons:
        rng = np.random.default_rng(seed)
        counts = rng.poisson(poisson_photons * intensity * np.exp(top))
        return (-np.log(np.maximum(counts, 1) / poisson_photons)).astype(np.float32)
    return (-(top + np.log(intensity))).astype(np.float32)


def segment_metal(image_hu: np.ndarray, threshold_hu: float = METAL_THRESHOLD_HU) -> np.ndarray:
    return np.asarray(image_hu) > threshold_hu


def dice(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, bool), np.asarray(b, bool)
    denom = a.sum() + b.sum()
    return 1.0 if denom == 0 else 2.0 * float((a & b).sum()) / float(denom)
