"""Test-time MAR: segment, trace, interpolate, complete, refine, replace, reconstruct."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import Geometry, check_sinogram
from .errors import ConfigError
from .marops import composite_completion, compute_trace, li_interpolate, metal_trace_replacement, zero_trace
from .nn import ImgNet, SinoNet
from .projector import fbp, forward_project
from .simulate import METAL_THRESHOLD_HU, hu_to_mu, mu_to_hu, segment_metal

log = logging.getLogger(__name__)

# baselines first, then the ablation ladder
PIPELINE_MODES = ("fbp", "li", "sinonet", "sinonet+fbp", "joint", "joint+mtr")


@dataclass
class MarResult:
    image_hu: np.ndarray
    mask: np.ndarray
    trace: np.ndarray
    s_ma: np.ndarray
    s_li: np.ndarray | None = None
    s_sn: np.ndarray | None = None
    x_out: np.ndarray | None = None
    s_prior: np.ndarray | None = None
    s_corr: np.ndarray | None = None


def run_mar(geometry: Geometry, mode: str, sinogram: np.ndarray | None = None,
            image_hu: np.ndarray | None = None, sinonet: SinoNet | None = None,
            imgnet: ImgNet | None = None, threshold_hu: float = METAL_THRESHOLD_HU) -> MarResult:
    """Run one MAR pipeline on a metal-affected sinogram or a reconstructed HU image.

    An image input is forward projected to obtain S_ma and segmented directly;
    a sinogram input is FBP-reconstructed for segmentation.  Modes stop at
    their ablation stage and reconstruct by FBP; ``joint`` returns the ImgNet
    output itself.
    """
    if mode not in PIPELINE_MODES:
        raise ConfigError(f"unknown mode {mode!r}; choose from {PIPELINE_MODES}")
    if (sinogram is None) == (image_hu is None):
        raise ValueError("pass exactly one of sinogram or image_hu")
    if image_hu is not None:
        s_ma = forward_project(hu_to_mu(image_hu), geometry)
        seg_source = np.asarray(image_hu)
    else:
        check_sinogram(sinogram, geometry)
        s_ma = np.asarray(sinogram, np.float32)
        seg_source = mu_to_hu(fbp(s_ma, geometry))
    mask = segment_metal(seg_source, threshold_hu)
    trace = compute_trace(mask, geometry)
    if mode == "fbp" or not trace.any():
        if mode != "fbp":
            log.warning("metal segmentation is empty; returning plain FBP")
        return MarResult(mu_to_hu(fbp(s_ma, geometry)), mask, trace, s_ma)

    s_li = li_interpolate(zero_trace(s_ma, trace), trace)
    if mode == "li":
        return MarResult(mu_to_hu(fbp(s_li, geometry)), mask, trace, s_ma, s_li)

    if sinonet is None:
        raise ConfigError(f"mode {mode!r} needs a SinoNet checkpoint")
    s_sn = composite_completion(sinonet(s_li, trace), s_li, trace)
    recon = fbp(s_sn, geometry)
    if mode in ("sinonet", "sinonet+fbp"):
        return MarResult(mu_to_hu(recon), mask, trace, s_ma, s_li, s_sn)

    if imgnet is None:
        raise ConfigError(f"mode {mode!r} needs an ImgNet checkpoint")
    x_out = imgnet(recon)
    if mode == "joint":
        return MarResult(mu_to_hu(x_out), mask, trace, s_ma, s_li, s_sn, x_out)

    s_prior = forward_project(x_out, geometry)
    s_corr = metal_trace_replacement(s_li, s_prior, trace)
    return MarResult(mu_to_hu(fbp(s_corr, geometry)), mask, trace, s_ma, s_li, s_sn, x_out, s_prior, s_corr)
