"""Desk-scale dataset generation and loading.

Layout of a dataset directory::

    manifest.json   geometry, simulation settings, mask ids, case ids
    train.smar      phantoms_hu (n,H,W), sinograms (n,N,D)
    masks.smar      train_masks (m,H,W), eval_masks (k,H,W)
    eval.smar       s_ma (c,N,D), reference_hu (c,H,W), clean_hu (c,H,W), mask (c,H,W)

Empty groups are simply absent from their container.
"""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import Geometry, read_json, read_tensor_dict, write_json, write_tensor_container
from .metrics import EvalCase
from .projector import fbp, forward_project
from .simulate import (
    MASK_SHAPES,
    MaskSpec,
    PhantomSpec,
    Spectrum,
    hu_to_mu,
    make_metal_mask,
    make_phantom,
    mu_to_hu,
    synthesize_metal_sinogram,
)


@dataclass
class SimConfig:
    seed: int = 0
    train_phantoms: int = 40
    train_masks: int = 12
    eval_cases: int = 10
    eval_masks: int = 3
    num_ellipses: tuple[int, int] = (3, 8)
    train_mask_pixels: tuple[int, int] = (16, 400)
    eval_mask_pixels: tuple[int, int] = (50, 200)
    metal_mu: float = 0.15
    spectrum: list = field(default_factory=lambda: Spectrum().to_dict()["bins"])
    poisson_photons: float | None = None

    def to_dict(self):
        return asdict(self)


def _seeds(seed: int, n_streams: int = 4):
    """Independent integer seed generators for phantoms, train masks, eval phantoms, eval masks."""
    children = np.random.SeedSequence(seed).spawn(n_streams)
    return [np.random.default_rng(c) for c in children]


def nominal_body(geometry: Geometry) -> np.ndarray:
    return make_phantom(PhantomSpec(num_ellipses=0, body_jitter=0.0), geometry)


def _phantoms(rng, count, cfg: SimConfig, geometry):
    out = []
    for _ in range(count):
        n_ell = int(rng.integers(cfg.num_ellipses[0], cfg.num_ellipses[1] + 1))
        out.append(make_phantom(PhantomSpec(seed=int(rng.integers(2**63)), num_ellipses=n_ell), geometry))
    return out


def _masks(rng, count, pixel_range, geometry):
    body = nominal_body(geometry)
    out = []
    for i in range(count):
        spec = MaskSpec(seed=int(rng.integers(2**63)), shape=MASK_SHAPES[i % len(MASK_SHAPES)],
                        min_pixels=pixel_range[0], max_pixels=pixel_range[1])
        out.append(make_metal_mask(spec, geometry, body))
    return out


def mask_digest(mask: np.ndarray) -> str:
    return hashlib.sha1(np.packbits(np.asarray(mask, bool)).tobytes()).hexdigest()[:16]


def simulate_dataset(cfg: SimConfig, geometry: Geometry, out_dir: str | Path) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    r_ph, r_tm, r_ep, r_em = _seeds(cfg.seed)
    spectrum = Spectrum([tuple(b) for b in cfg.spectrum])

    phantoms = _phantoms(r_ph, cfg.train_phantoms, cfg, geometry)
    sinos = [forward_project(hu_to_mu(p), geometry) for p in phantoms]
    train_masks = _masks(r_tm, cfg.train_masks, cfg.train_mask_pixels, geometry)
    eval_masks = _masks(r_em, cfg.eval_masks if cfg.eval_cases else 0, cfg.eval_mask_pixels, geometry)

    cases = {"s_ma": [], "reference_hu": [], "clean_hu": [], "mask": []}
    eval_phantoms = _phantoms(r_ep, cfg.eval_cases, cfg, geometry)
    case_ids, case_masks = [], []
    for i, clean in enumerate(eval_phantoms):
        k = i % len(eval_masks)
        mask = eval_masks[k]
        s_ma = synthesize_metal_sinogram(clean, mask, spectrum, cfg.metal_mu, geometry,
                                         cfg.poisson_photons, seed=cfg.seed + i)
        ref = mu_to_hu(fbp(forward_project(hu_to_mu(clean), geometry), geometry))
        for key, val in (("s_ma", s_ma), ("reference_hu", ref), ("clean_hu", clean), ("mask", mask)):
            cases[key].append(np.asarray(val, np.float32))
        case_ids.append(f"case-{i:04d}")
        case_masks.append(f"eval-mask-{k:03d}")

    def stacked(d):
        return [(k, np.stack(v)) for k, v in d.items() if len(v)]

    write_tensor_container(out / "train.smar", stacked({"phantoms_hu": phantoms, "sinograms": sinos}))
    write_tensor_container(out / "masks.smar", stacked({
        "train_masks": [m.astype(np.float32) for m in train_masks],
        "eval_masks": [m.astype(np.float32) for m in eval_masks],
    }))
    write_tensor_container(out / "eval.smar", stacked(cases))
    manifest = {
        "geometry": geometry.to_dict(),
        "simulation": cfg.to_dict(),
        "train_phantoms": len(phantoms),
        "train_masks": [f"train-mask-{i:03d}" for i in range(len(train_masks))],
        "eval_masks": [f"eval-mask-{i:03d}" for i in range(len(eval_masks))],
        "train_mask_digests": [mask_digest(m) for m in train_masks],
        "eval_mask_digests": [mask_digest(m) for m in eval_masks],
        "eval_cases": [{"id": c, "mask": m} for c, m in zip(case_ids, case_masks)],
        "files": ["train.smar", "masks.smar", "eval.smar"],
    }
    write_json(out / "manifest.json", manifest)
    return manifest


@dataclass
class Dataset:
    geometry: Geometry
    manifest: dict
    sinograms: np.ndarray
    phantoms_hu: np.ndarray
    train_masks: np.ndarray
    cases: list[EvalCase]


def load_dataset(path: str | Path) -> Dataset:
    root = Path(path)
    manifest = read_json(root / "manifest.json")
    geometry = Geometry.from_dict(manifest["geometry"])
    train = read_tensor_dict(root / "train.smar")
    masks = read_tensor_dict(root / "masks.smar")
    ev = read_tensor_dict(root / "eval.smar")
    h, w = geometry.image_size
    cases = []
    for i, meta in enumerate(manifest["eval_cases"]):
        cases.append(EvalCase(meta["id"], ev["s_ma"][i], ev["reference_hu"][i], ev["mask"][i] > 0.5))
    return Dataset(
        geometry=geometry,
        manifest=manifest,
        sinograms=train.get("sinograms", np.zeros((0,) + geometry.sino_shape, np.float32)),
        phantoms_hu=train.get("phantoms_hu", np.zeros((0, h, w), np.float32)),
        train_masks=masks.get("train_masks", np.zeros((0, h, w), np.float32)) > 0.5,
        cases=cases,
    )
