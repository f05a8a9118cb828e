"""SinoNet (mask-pyramid U-Net for trace completion) and ImgNet (residual U-Net)."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..core import read_json, read_tensor_container, write_json, write_tensor_container
from ..errors import ConfigMismatch, ShapeMismatch
from ..simulate import MU_WATER
from . import autodiff as ad


@dataclass(frozen=True)
class UNetConfig:
    depth: int = 3
    base_channels: int = 8
    in_channels: int = 1
    out_channels: int = 1
    kernel_size: int = 3
    mask_pyramid: bool = False
    # add the first input channel to the output (SinoNet then learns a correction to S_LI)
    residual: bool = False

    def channels(self, level: int) -> int:
        return self.base_channels * 2**level


def sinonet_config(depth: int = 3, base_channels: int = 8, residual: bool = False) -> UNetConfig:
    return UNetConfig(depth=depth, base_channels=base_channels, in_channels=2, mask_pyramid=True, residual=residual)


def imgnet_config(depth: int = 3, base_channels: int = 4) -> UNetConfig:
    return UNetConfig(depth=depth, base_channels=base_channels, in_channels=1, mask_pyramid=False)


def param_shapes(cfg: UNetConfig) -> dict[str, tuple[int, ...]]:
    """Ordered parameter names and shapes of a U-Net."""
    k = cfg.kernel_size
    shapes: dict[str, tuple[int, ...]] = {}

    def conv(name, cin, cout, ksize=k):
        shapes[f"{name}.w"] = (cout, cin, ksize, ksize)
        shapes[f"{name}.b"] = (cout,)

    extra = 1 if cfg.mask_pyramid else 0
    conv("enc0.conv1", cfg.in_channels, cfg.channels(0))
    conv("enc0.conv2", cfg.channels(0), cfg.channels(0))
    for lvl in range(1, cfg.depth + 1):
        conv(f"enc{lvl}.conv1", cfg.channels(lvl - 1) + extra, cfg.channels(lvl))
        conv(f"enc{lvl}.conv2", cfg.channels(lvl), cfg.channels(lvl))
    for lvl in range(cfg.depth - 1, -1, -1):
        conv(f"dec{lvl}.conv1", cfg.channels(lvl + 1) + cfg.channels(lvl), cfg.channels(lvl))
        conv(f"dec{lvl}.conv2", cfg.channels(lvl), cfg.channels(lvl))
    conv("out", cfg.channels(0), cfg.out_channels, ksize=1)
    return shapes


def init_params(cfg: UNetConfig, seed: int, zero_output: bool = False) -> dict[str, np.ndarray]:
    """He-normal conv weights (std sqrt(2 / fan_in)), zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".b") or (zero_output and name.startswith("out.")):
            params[name] = np.zeros(shape, dtype=np.float32)
        else:
            fan_in = shape[1] * shape[2] * shape[3]
            params[name] = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)
    return params


def unet_graph(cfg: UNetConfig, p: dict[str, ad.Var], x: ad.Var, mask: np.ndarray | None = None) -> ad.Var:
    """Encoder: leaky-ReLU(0.2) convs, 2x average pooling, optional pooled mask at each scale.
    Decoder: nearest 2x upsampling, skip concat, ReLU convs.  1x1 linear output conv."""

    def block(name, h, act):
        h = act(ad.conv2d(h, p[f"{name}.conv1.w"], p[f"{name}.conv1.b"]))
        return act(ad.conv2d(h, p[f"{name}.conv2.w"], p[f"{name}.conv2.b"]))

    skips = [block("enc0", x, ad.leaky_relu)]
    pyramid = mask
    h = skips[0]
    for lvl in range(1, cfg.depth + 1):
        h = ad.avg_pool2(h)
        if cfg.mask_pyramid:
            pyramid = ad.avg_pool2(pyramid)
            h = ad.concat([h, pyramid])
        h = block(f"enc{lvl}", h, ad.leaky_relu)
        skips.append(h)
    for lvl in range(cfg.depth - 1, -1, -1):
        h = ad.concat([ad.upsample2(h), skips[lvl]])
        h = block(f"dec{lvl}", h, ad.relu)
    return ad.conv2d(h, p["out.w"], p["out.b"])


def _as_batch(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.ndim == 2:
        return arr[None, None]
    if arr.ndim == 3:
        return arr[:, None]
    return arr


class _Model:
    prefix = ""

    def __init__(self, config: UNetConfig, params: dict[str, np.ndarray]):
        expected = param_shapes(config)
        if set(params) != set(expected):
            raise ConfigMismatch(f"{self.prefix}: parameter names do not match the config")
        for name, shape in expected.items():
            if tuple(params[name].shape) != shape:
                raise ConfigMismatch(f"{self.prefix}.{name}: shape {params[name].shape}, config wants {shape}")
        self.config = config
        self.params = params

    def param_vars(self) -> dict[str, ad.Var]:
        return {k: ad.param(v, name=f"{self.prefix}.{k}") for k, v in self.params.items()}

    def _const_vars(self) -> dict[str, ad.Var]:
        return {k: ad.Var(v) for k, v in self.params.items()}


class SinoNet(_Model):
    """Completion network f_S(S_LI, Tr).  Inputs are divided by ``s_norm`` and outputs scaled back.

    With ``config.residual`` the network output is added to S_LI, so an
    all-zero network reproduces linear interpolation.
    """

    prefix = "sinonet"

    def __init__(self, config: UNetConfig, params: dict[str, np.ndarray], s_norm: float = 1.0):
        if not s_norm > 0:
            raise ValueError("s_norm must be positive")
        super().__init__(config, params)
        self.s_norm = float(s_norm)

    @classmethod
    def create(cls, config: UNetConfig | None = None, seed: int = 0, s_norm: float = 1.0) -> "SinoNet":
        config = config or sinonet_config()
        return cls(config, init_params(config, seed, zero_output=config.residual), s_norm)

    def graph(self, p: dict[str, ad.Var], s_li: np.ndarray, trace: np.ndarray) -> ad.Var:
        s_li = _as_batch(s_li)
        tr = _as_batch(trace).astype(s_li.dtype)
        if s_li.shape != tr.shape:
            raise ShapeMismatch(f"S_LI {s_li.shape} and trace {tr.shape} differ")
        n, d = s_li.shape[-2:]
        mult = 2**self.config.depth
        ph, pw = -(-n // mult) * mult, -(-d // mult) * mult
        x = ad.concat([ad.Var(s_li / s_li.dtype.type(self.s_norm)), ad.Var(tr)])
        x = ad.pad_to(x, ph, pw)
        mask = np.pad(tr, [(0, 0), (0, 0), (0, ph - n), (0, pw - d)])
        y = ad.scale(ad.crop_to(unet_graph(self.config, p, x, mask), n, d), self.s_norm)
        if self.config.residual:
            y = ad.add(y, ad.Var(s_li))
        return y

    def __call__(self, s_li: np.ndarray, trace: np.ndarray) -> np.ndarray:
        """Raw network output with the input's leading shape."""
        out = self.graph(self._const_vars(), np.asarray(s_li, np.float32), trace).value
        return out.reshape(np.shape(s_li))


class ImgNet(_Model):
    """Refinement X_out = recon + f_I(recon), with an affine intensity window around the network."""

    prefix = "imgnet"

    def __init__(self, config: UNetConfig, params: dict[str, np.ndarray],
                 offset: float = 0.0, scale: float = 2.0 * MU_WATER):
        if not scale > 0:
            raise ValueError("window scale must be positive")
        super().__init__(config, params)
        self.offset = float(offset)
        self.scale = float(scale)

    @classmethod
    def create(cls, config: UNetConfig | None = None, seed: int = 0) -> "ImgNet":
        config = config or imgnet_config()
        return cls(config, init_params(config, seed, zero_output=True))

    def graph(self, p: dict[str, ad.Var], recon: ad.Var) -> ad.Var:
        recon = recon if isinstance(recon, ad.Var) else ad.Var(_as_batch(recon))
        h, w = recon.shape[-2:]
        mult = 2**self.config.depth
        ph, pw = -(-h // mult) * mult, -(-w // mult) * mult
        # the offset cancels in the residual, so only the scale matters for gradients
        x = ad.scale(ad.add(recon, np.full(recon.shape, -self.offset, recon.value.dtype)), 1.0 / self.scale)
        r = unet_graph(self.config, p, ad.pad_to(x, ph, pw))
        return ad.add(recon, ad.scale(ad.crop_to(r, h, w), self.scale))

    def __call__(self, recon: np.ndarray) -> np.ndarray:
        out = self.graph(self._const_vars(), _as_batch(np.asarray(recon, np.float32))).value
        return out.reshape(np.shape(recon))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def sidecar_path(path: str | Path) -> Path:
    return Path(str(path) + ".json")


def save_model(path: str | Path, sinonet: SinoNet | None = None, imgnet: ImgNet | None = None,
               meta: dict | None = None) -> None:
    """SMAR tensors with ``sinonet.``/``imgnet.`` prefixes plus a JSON config sidecar."""
    tensors, cfg = [], {"meta": meta or {}}
    if sinonet is not None:
        tensors += [(f"sinonet.{k}", v) for k, v in sinonet.params.items()]
        cfg["sinonet"] = {"config": asdict(sinonet.config), "s_norm": sinonet.s_norm}
    if imgnet is not None:
        tensors += [(f"imgnet.{k}", v) for k, v in imgnet.params.items()]
        cfg["imgnet"] = {"config": asdict(imgnet.config), "offset": imgnet.offset, "scale": imgnet.scale}
    write_tensor_container(path, tensors)
    write_json(sidecar_path(path), cfg)


@dataclass
class Checkpoint:
    sinonet: SinoNet | None
    imgnet: ImgNet | None
    meta: dict = field(default_factory=dict)


def load_model(path: str | Path, sinonet_config: UNetConfig | None = None,
               imgnet_config: UNetConfig | None = None) -> Checkpoint:
    """Inverse of :func:`save_model`.  Passing an expected config makes a mismatch an error."""
    cfg = read_json(sidecar_path(path))
    tensors = read_tensor_container(path)
    groups: dict[str, dict[str, np.ndarray]] = {"sinonet": {}, "imgnet": {}}
    for name, value in tensors:
        prefix, _, rest = name.partition(".")
        if prefix not in groups:
            raise ConfigMismatch(f"unexpected tensor {name!r} in checkpoint")
        groups[prefix][rest] = value

    def build(key, expected):
        if key not in cfg:
            if groups[key]:
                raise ConfigMismatch(f"{key} tensors present without a config")
            if expected is not None:
                raise ConfigMismatch(f"checkpoint has no {key}")
            return None
        stored = UNetConfig(**cfg[key]["config"])
        if expected is not None and expected != stored:
            raise ConfigMismatch(f"{key}: checkpoint config {stored} != expected {expected}")
        return stored

    s_cfg = build("sinonet", sinonet_config)
    i_cfg = build("imgnet", imgnet_config)
    sinonet = SinoNet(s_cfg, groups["sinonet"], cfg["sinonet"]["s_norm"]) if s_cfg else None
    imgnet = ImgNet(i_cfg, groups["imgnet"], cfg["imgnet"]["offset"], cfg["imgnet"]["scale"]) if i_cfg else None
    return Checkpoint(sinonet, imgnet, cfg.get("meta", {}))
