"""Acquisition geometry, array conventions and the SMAR tensor container.

Images, sinograms, masks and traces are plain numpy arrays:

* images are ``(H, W)`` float32; row ``i`` sits at ``y = (i - (H-1)/2) * pixel_spacing``
  and column ``j`` at ``x = (j - (W-1)/2) * pixel_spacing`` (mm, rotation centre at 0)
* sinograms are ``(N, D)`` float32, one row per projection view
* metal masks are ``(H, W)`` bool, metal traces ``(N, D)`` bool

Whether an image holds attenuation (1/mm) or Hounsfield units is part of each
function's contract (``hu_to_mu`` / ``mu_to_hu`` convert).
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    BadMagic,
    DuplicateName,
    GeometryError,
    InvalidName,
    ShapeMismatch,
    Truncated,
    VersionMismatch,
)

PARALLEL = "parallel"
FAN = "fan-equidistant"


@dataclass(frozen=True)
class Geometry:
    kind: str = PARALLEL
    num_views: int = 180
    num_detectors: int = 185
    image_size: tuple[int, int] = (128, 128)
    pixel_spacing: float = 1.0
    detector_spacing: float = 1.0
    source_to_center: float | None = None
    source_to_detector: float | None = None
    angular_range: float | None = None
    angles: tuple[float, ...] | None = field(default=None, compare=True)

    def __post_init__(self):
        object.__setattr__(self, "image_size", tuple(int(v) for v in self.image_size))
        if self.angular_range is None:
            object.__setattr__(self, "angular_range", math.pi if self.kind == PARALLEL else 2 * math.pi)
        if self.angles is not None:
            object.__setattr__(self, "angles", tuple(float(a) for a in self.angles))
        self.validate()

    def validate(self) -> None:
        if self.kind not in (PARALLEL, FAN):
            raise GeometryError("bad_kind", f"unknown geometry kind {self.kind!r}")
        if self.num_views < 2:
            raise GeometryError("too_few_views", f"num_views={self.num_views} < 2")
        if self.num_detectors < 2:
            raise GeometryError("too_few_detectors", f"num_detectors={self.num_detectors} < 2")
        if len(self.image_size) != 2 or min(self.image_size) < 4:
            raise GeometryError("image_too_small", f"image_size={self.image_size} must be >= 4x4")
        if not (self.pixel_spacing > 0 and self.detector_spacing > 0):
            raise GeometryError("bad_spacing", "pixel and detector spacing must be positive")
        if not self.angular_range > 0:
            raise GeometryError("bad_angular_range", "angular_range must be positive")
        if self.kind == FAN:
            sc, sd = self.source_to_center, self.source_to_detector
            if sc is None or sd is None or sc <= 0:
                raise GeometryError("missing_fan_distances", "fan geometry needs positive source distances")
            if not sc < sd:
                raise GeometryError("source_beyond_detector", f"source_to_center={sc} >= source_to_detector={sd}")
            h, w = self.image_size
            radius = 0.5 * math.hypot(h, w) * self.pixel_spacing
            if sc <= radius:
                raise GeometryError("source_inside_image", f"source_to_center={sc} <= image radius {radius:.1f}")
        if self.angles is not None:
            a = np.asarray(self.angles)
            if a.size != self.num_views:
                raise GeometryError("angles_length", f"{a.size} angles for {self.num_views} views")
            if np.any(np.diff(a) <= 0):
                raise GeometryError("angles_not_increasing", "angles must be strictly increasing")

    @property
    def view_angles(self) -> np.ndarray:
        if self.angles is not None:
            return np.asarray(self.angles, dtype=np.float64)
        return np.arange(self.num_views, dtype=np.float64) * (self.angular_range / self.num_views)

    @property
    def sino_shape(self) -> tuple[int, int]:
        return (self.num_views, self.num_detectors)

    @property
    def is_fan(self) -> bool:
        return self.kind == FAN

    @property
    def iso_detector_spacing(self) -> float:
        """Detector spacing referred to the rotation centre."""
        if self.is_fan:
            return self.detector_spacing * self.source_to_center / self.source_to_detector
        return self.detector_spacing

    def to_dict(self) -> dict:
        d = asdict(self)
        d["image_size"] = list(self.image_size)
        if d["angles"] is not None:
            d["angles"] = list(d["angles"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Geometry":
        d = dict(d)
        if d.get("angles") is not None:
            d["angles"] = tuple(d["angles"])
        return cls(**d)


def desk_parallel() -> Geometry:
    return Geometry(kind=PARALLEL, num_views=180, num_detectors=185, image_size=(128, 128))


def desk_fan() -> Geometry:
    # 2x magnification, 1 mm effective detector pitch at isocentre
    return Geometry(
        kind=FAN, num_views=360, num_detectors=185, image_size=(128, 128),
        detector_spacing=2.0, source_to_center=500.0, source_to_detector=1000.0,
    )


def clinical_fan() -> Geometry:
    # 416x416 image, 640 views, 641 detectors; the distances are typical scanner values
    return Geometry(
        kind=FAN, num_views=640, num_detectors=641, image_size=(416, 416),
        pixel_spacing=1.0, detector_spacing=1.4, source_to_center=1075.0, source_to_detector=1500.0,
    )


PRESETS = {"desk-parallel": desk_parallel, "desk-fan": desk_fan, "clinical-fan": clinical_fan}


def check_image(image: np.ndarray, geometry: Geometry, name: str = "image") -> None:
    if tuple(np.shape(image)[-2:]) != geometry.image_size:
        raise ShapeMismatch(f"{name} shape {np.shape(image)} does not match image_size {geometry.image_size}")


def check_sinogram(sino: np.ndarray, geometry: Geometry, name: str = "sinogram") -> None:
    if tuple(np.shape(sino)[-2:]) != geometry.sino_shape:
        raise ShapeMismatch(f"{name} shape {np.shape(sino)} does not match {geometry.sino_shape}")


def check_same_shape(*arrays: np.ndarray) -> None:
    shapes = {tuple(np.shape(a)) for a in arrays}
    if len(shapes) != 1:
        raise ShapeMismatch(f"shape mismatch: {sorted(shapes)}")


# ---------------------------------------------------------------------------
# SMAR container
# ---------------------------------------------------------------------------

MAGIC = b"SMAR"
VERSION = 1
_HEADER = struct.Struct("<4sHI")


def _encode_name(name: str) -> bytes:
    try:
        raw = name.encode("ascii")
    except UnicodeEncodeError as exc:
        raise InvalidName(f"tensor name {name!r} is not ASCII") from exc
    if len(raw) > 255:
        raise InvalidName(f"tensor name is {len(raw)} bytes, max 255")
    return raw


def write_tensor_container(path: str | Path, named_tensors: Iterable[tuple[str, np.ndarray]]) -> None:
    """Write ``(name, array)`` pairs as little-endian float32 tensors."""
    items = list(named_tensors)
    seen: set[str] = set()
    chunks = [_HEADER.pack(MAGIC, VERSION, len(items))]
    for name, tensor in items:
        if name in seen:
            raise DuplicateName(f"duplicate tensor name {name!r}")
        seen.add(name)
        raw = _encode_name(name)
        arr = np.asarray(tensor)
        if arr.ndim > 255:
            raise ValueError("at most 255 dimensions")
        data = np.ascontiguousarray(arr, dtype="<f4")
        chunks.append(struct.pack("<B", len(raw)) + raw)
        chunks.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(data.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_tensor_container(path: str | Path) -> list[tuple[str, np.ndarray]]:
    buf = Path(path).read_bytes()
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagic(f"{path}: not a SMAR container")
    if len(buf) < _HEADER.size:
        raise Truncated(f"{path}: header truncated")
    _, version, count = _HEADER.unpack_from(buf, 0)
    if version != VERSION:
        raise VersionMismatch(f"{path}: container version {version}, expected {VERSION}")

    def take(pos: int, n: int) -> int:
        if pos + n > len(buf):
            raise Truncated(f"{path}: needs {pos + n} bytes, file has {len(buf)}")
        return pos + n

    pos = _HEADER.size
    out = []
    for _ in range(count):
        end = take(pos, 1)
        nlen = buf[pos]
        pos, end = end, take(end, nlen)
        name = buf[pos:end].decode("ascii")
        pos, end = end, take(end, 1)
        ndim = buf[pos]
        pos, end = end, take(end, 4 * ndim)
        shape = struct.unpack_from(f"<{ndim}I", buf, pos)
        count_values = math.prod(shape)
        pos, end = end, take(end, 4 * count_values)
        data = np.frombuffer(buf, dtype="<f4", count=count_values, offset=pos)
        out.append((name, data.astype(np.float32).reshape(shape)))
        pos = end
    return out


def read_tensor_dict(path: str | Path) -> dict[str, np.ndarray]:
    return dict(read_tensor_container(path))


def write_json(path: str | Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path: str | Path):
    return json.loads(Path(path).read_text())


def stack_or_empty(arrays: Sequence[np.ndarray]) -> np.ndarray | None:
    return np.stack(arrays).astype(np.float32) if len(arrays) else None
