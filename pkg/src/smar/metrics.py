"""RMSE in HU, SSIM, and evaluation over a set of cases."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .core import check_same_shape, write_json
from .errors import AllExcluded, ShapeMismatch

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def rmse_hu(pred: np.ndarray, ref: np.ndarray, exclude: np.ndarray | None = None) -> float:
    """Root mean squared HU difference over pixels not in ``exclude``."""
    check_same_shape(pred, ref)
    keep = np.ones(np.shape(pred), bool) if exclude is None else ~np.asarray(exclude, bool)
    if not keep.any():
        raise AllExcluded("every pixel is excluded")
    diff = np.asarray(pred, np.float64)[keep] - np.asarray(ref, np.float64)[keep]
    return float(np.sqrt(np.mean(diff * diff)))


def _gaussian_window(size=SSIM_WIN, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def ssim(pred: np.ndarray, ref: np.ndarray, dynamic_range: float | None = None) -> float:
    """Mean local SSIM, 11x11 Gaussian window (sigma 1.5), over windows fully inside the image.

    ``dynamic_range`` defaults to the data range of ``ref``.
    """
    check_same_shape(pred, ref)
    x = np.asarray(pred, np.float64)
    y = np.asarray(ref, np.float64)
    if x.ndim != 2 or min(x.shape) < SSIM_WIN:
        raise ShapeMismatch(f"SSIM needs a 2-D image of at least {SSIM_WIN}x{SSIM_WIN}, got {x.shape}")
    if dynamic_range is None:
        dynamic_range = float(y.max() - y.min()) or 1.0
    if not dynamic_range > 0:
        raise ValueError("dynamic_range must be positive")
    c1 = (SSIM_K1 * dynamic_range) ** 2
    c2 = (SSIM_K2 * dynamic_range) ** 2
    win = _gaussian_window()

    def filt(img):
        # 'valid' region: drop the half-window border
        full = ndimage.correlate(img, win, mode="constant")
        r = SSIM_WIN // 2
        return full[r:-r, r:-r]

    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


@dataclass
class EvalCase:
    id: str
    s_ma: np.ndarray            # metal-affected sinogram
    reference_hu: np.ndarray    # reconstruction of the metal-free sinogram
    mask: np.ndarray            # true metal mask, excluded from RMSE


@dataclass
class EvalReport:
    cases: list[dict] = field(default_factory=list)

    @property
    def rmse(self) -> np.ndarray:
        return np.array([c["rmse_hu"] for c in self.cases])

    @property
    def ssim(self) -> np.ndarray:
        return np.array([c["ssim"] for c in self.cases])

    def to_dict(self) -> dict:
        r, s = self.rmse, self.ssim
        return {
            "cases": self.cases,
            "mean_rmse_hu": float(r.mean()) if r.size else None,
            "std_rmse_hu": float(r.std()) if r.size else None,
            "mean_ssim": float(s.mean()) if s.size else None,
        }


def evaluate_cases(cases: Sequence[EvalCase], pipeline: Callable[[EvalCase], np.ndarray],
                   report_path: str | Path | None = None, exclude_metal: bool = True,
                   ssim_range: float | None = None) -> EvalReport:
    """Run ``pipeline(case) -> HU image`` per case and score it against the reference."""
    if len(cases) == 0:
        raise ValueError("need at least one case")
    report = EvalReport()
    for case in cases:
        out = pipeline(case)
        report.cases.append({
            "id": case.id,
            "rmse_hu": rmse_hu(out, case.reference_hu, case.mask if exclude_metal else None),
            "ssim": ssim(out, case.reference_hu, ssim_range),
        })
    if report_path is not None:
        write_json(report_path, report.to_dict())
    return report
