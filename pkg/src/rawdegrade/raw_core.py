"""RAW data model: Bayer mosaics in digital numbers, normalization, RGGB packing.

A sensor readout enters as a :class:`MosaicImage` (integer DNs plus black/white
levels), is normalized to linear [0, 1] intensities and packed into a
:class:`RawImage` of four half-resolution planes ordered (R, G1, G2, B).
All degradation math runs on packed float64 planes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

CFA_PATTERNS = ("RGGB",)
PLANE_NAMES = ("R", "G1", "G2", "B")


class RawFormatError(ValueError):
    """Raised when image data violates the RAW data-model invariants."""


class DimensionError(RawFormatError):
    pass


@dataclass(frozen=True)
class MosaicImage:
    """Sensor readout before normalization; ``data`` is (height, width) DNs."""

    data: np.ndarray
    bit_depth: int
    black_level: int
    white_level: int
    cfa_pattern: str = "RGGB"
    sensor_id: Optional[str] = None

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise DimensionError(f"mosaic must be 2-D, got shape {data.shape}")
        if not np.issubdtype(data.dtype, np.integer):
            raise RawFormatError(f"mosaic samples must be integer DNs, got {data.dtype}")
        h, w = data.shape
        if h % 2 or w % 2 or h == 0 or w == 0:
            raise DimensionError(f"mosaic dimensions must be even and non-zero, got {h}x{w}")
        if not 8 <= int(self.bit_depth) <= 16:
            raise RawFormatError(f"bit_depth must be in [8, 16], got {self.bit_depth}")
        if self.cfa_pattern not in CFA_PATTERNS:
            raise RawFormatError(f"unsupported CFA pattern {self.cfa_pattern!r}; only RGGB")
        max_dn = (1 << int(self.bit_depth)) - 1
        if not 0 <= self.black_level < self.white_level <= max_dn:
            raise RawFormatError(
                f"need 0 <= black_level < white_level <= {max_dn}, "
                f"got black={self.black_level} white={self.white_level}"
            )
        if data.size and (data.min() < 0 or data.max() > max_dn):
            raise RawFormatError(f"DN samples outside [0, {max_dn}]")
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class NormalizedMosaic:
    """Full-resolution mosaic of linear intensities (usually in [0, 1])."""

    data: np.ndarray
    bit_depth: int = 16
    sensor_id: Optional[str] = None


@dataclass(frozen=True)
class RawImage:
    """Packed RGGB image; ``planes`` has shape (4, height_p, width_p)."""

    planes: np.ndarray
    bit_depth: int = 16
    sensor_id: Optional[str] = None

    def __post_init__(self):
        planes = np.asarray(self.planes, dtype=np.float64)
        if planes.ndim != 3 or planes.shape[0] != 4:
            raise DimensionError(f"planes must have shape (4, H, W), got {planes.shape}")
        object.__setattr__(self, "planes", planes)

    @property
    def height_p(self) -> int:
        return self.planes.shape[1]

    @property
    def width_p(self) -> int:
        return self.planes.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.planes.shape

    def with_planes(self, planes: np.ndarray) -> "RawImage":
        return replace(self, planes=planes)


@dataclass(frozen=True)
class RgbPreview:
    """Demosaiced (height, width, 3) linear RGB, for viewing only."""

    rgb: np.ndarray

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def width(self) -> int:
        return self.rgb.shape[1]


def normalize(mosaic: MosaicImage) -> NormalizedMosaic:
    """Map DNs to [0, 1] using the black and white levels.

    Values below black or above white are clamped.
    """
    if mosaic.black_level >= mosaic.white_level:
        raise RawFormatError("black_level must be below white_level")
    span = float(mosaic.white_level - mosaic.black_level)
    x = (mosaic.data.astype(np.float64) - mosaic.black_level) / span
    np.clip(x, 0.0, 1.0, out=x)
    return NormalizedMosaic(x, bit_depth=mosaic.bit_depth, sensor_id=mosaic.sensor_id)


def pack_rggb(mosaic: NormalizedMosaic | np.ndarray, cfa_pattern: str = "RGGB") -> RawImage:
    if cfa_pattern not in CFA_PATTERNS:
        raise RawFormatError(f"unsupported CFA pattern {cfa_pattern!r}; only RGGB")
    if isinstance(mosaic, NormalizedMosaic):
        data, bit_depth, sensor_id = mosaic.data, mosaic.bit_depth, mosaic.sensor_id
    else:
        data, bit_depth, sensor_id = np.asarray(mosaic), 16, None
    if data.ndim != 2:
        raise DimensionError(f"mosaic must be 2-D, got shape {data.shape}")
    h, w = data.shape
    if h % 2 or w % 2:
        raise DimensionError(f"cannot pack odd-sized mosaic {h}x{w}")
    planes = np.stack(
        [data[0::2, 0::2], data[0::2, 1::2], data[1::2, 0::2], data[1::2, 1::2]]
    )
    return RawImage(planes, bit_depth=bit_depth, sensor_id=sensor_id)


def unpack_rggb(raw: RawImage) -> NormalizedMosaic:
    _, hp, wp = raw.planes.shape
    out = np.empty((2 * hp, 2 * wp), dtype=raw.planes.dtype)
    out[0::2, 0::2] = raw.planes[0]
    out[0::2, 1::2] = raw.planes[1]
    out[1::2, 0::2] = raw.planes[2]
    out[1::2, 1::2] = raw.planes[3]
    return NormalizedMosaic(out, bit_depth=raw.bit_depth, sensor_id=raw.sensor_id)


def demosaic_bilinear(raw: RawImage) -> RgbPreview:
    """Bilinear CFA interpolation with replicate padding.

    Padding is done on the packed planes so the padded border keeps the RGGB
    phase; every output is then a convex combination of same-colour samples.
    """
    padded = np.pad(raw.planes, ((0, 0), (1, 1), (1, 1)), mode="edge")
    m = unpack_rggb(RawImage(padded)).data
    H, W = m.shape
    h, w = H - 4, W - 4

    rows = np.arange(H)[:, None] % 2
    cols = np.arange(W)[None, :] % 2
    r_mask = (rows == 0) & (cols == 0)
    b_mask = (rows == 1) & (cols == 1)
    g_mask = ~(r_mask | b_mask)

    def interp(values: np.ndarray, cross_only: bool) -> np.ndarray:
        # correlate with [[1,2,1],[2,4,2],[1,2,1]]/4 or [[0,1,0],[1,4,1],[0,1,0]]/4
        def s(dy: int, dx: int) -> np.ndarray:
            return values[2 + dy : 2 + dy + h, 2 + dx : 2 + dx + w]

        acc = 4.0 * s(0, 0)
        if cross_only:
            acc = acc + s(-1, 0) + s(1, 0) + s(0, -1) + s(0, 1)
        else:
            acc = acc + 2.0 * (s(-1, 0) + s(1, 0) + s(0, -1) + s(0, 1))
            acc = acc + s(-1, -1) + s(-1, 1) + s(1, -1) + s(1, 1)
        return acc / 4.0

    red = interp(np.where(r_mask, m, 0.0), cross_only=False)
    green = interp(np.where(g_mask, m, 0.0), cross_only=True)
    blue = interp(np.where(b_mask, m, 0.0), cross_only=False)
    return RgbPreview(np.stack([red, green, blue], axis=-1))


def clip01(image):
    """Clamp to [0, 1]; accepts a RawImage or a plain array."""
    if isinstance(image, RawImage):
        return image.with_planes(np.clip(image.planes, 0.0, 1.0))
    return np.clip(image, 0.0, 1.0)
