"""Blur kernel pool: Gaussian, disk (defocus), motion and measured PSF kernels.

Kernels are applied per packed RGGB plane so the colour pattern is never mixed.
Randomness always comes from an explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import fft as sp_fft
from scipy import signal

from .raw_core import RawImage

KINDS = ("iso_gaussian", "aniso_gaussian", "disk", "motion", "measured_psf")
SUM_TOL = 1e-6


class KernelError(ValueError):
    pass


class KernelFileError(KernelError):
    pass


@dataclass(frozen=True)
class Kernel:
    weights: np.ndarray
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] % 2 == 0:
            raise KernelError(f"kernel must be square with odd side, got {w.shape}")
        if self.kind not in KINDS:
            raise KernelError(f"unknown kernel kind {self.kind!r}")
        if (w < 0).any():
            raise KernelError("kernel weights must be non-negative")
        if abs(w.sum() - 1.0) > SUM_TOL:
            raise KernelError(f"kernel weights sum to {w.sum()!r}, expected 1")
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    def to_record(self) -> dict:
        rec = {"kind": self.kind, "size": self.size, "params": dict(self.params)}
        if self.kind == "measured_psf":
            # the PSF file may move or change; keep the exact weights
            rec["weights"] = self.weights.tolist()
        return rec


def identity_kernel() -> Kernel:
    return Kernel(np.ones((1, 1)), "measured_psf", {"source": "identity"})


def _normalized(w: np.ndarray) -> np.ndarray:
    return w / w.sum()


def gaussian_kernel(size: int, sigma_x: float, sigma_y: float, theta: float = 0.0) -> Kernel:
    """Rotated bivariate Gaussian sampled at integer offsets from the centre.

    ``sigma_x``/``sigma_y`` are standard deviations along the kernel's principal
    axes before rotation by ``theta`` (radians, counter-clockwise in x/y with
    x along columns and y along rows).
    """
    size = int(size)
    if size < 1 or size % 2 == 0:
        raise KernelError(f"size must be odd and >= 1, got {size}")
    if not (sigma_x > 0 and sigma_y > 0):
        raise KernelError(f"sigmas must be positive, got ({sigma_x}, {sigma_y})")
    half = size // 2
    y, x = np.mgrid[-half : half + 1, -half : half + 1].astype(np.float64)
    c, s = math.cos(theta), math.sin(theta)
    u = c * x + s * y
    v = -s * x + c * y
    q = (u / sigma_x) ** 2 + (v / sigma_y) ** 2
    w = _normalized(np.exp(-0.5 * q))

    # 3-sigma reach along the image axes
    var_x = (c * sigma_x) ** 2 + (s * sigma_y) ** 2
    var_y = (s * sigma_x) ** 2 + (c * sigma_y) ** 2
    reach = 3.0 * math.sqrt(max(var_x, var_y))
    kind = "iso_gaussian" if sigma_x == sigma_y else "aniso_gaussian"
    params = {
        "size": size,
        "sigma_x": float(sigma_x),
        "sigma_y": float(sigma_y),
        "theta": float(theta),
        "truncated": bool(reach > half),
    }
    return Kernel(w, kind, params)


def _disk_cell_areas(radius: float, half: int, samples: int = 256) -> np.ndarray:
    # area of disk ∩ unit cell, integrated column-wise with the midpoint rule
    offsets = np.arange(-half, half + 1, dtype=np.float64)
    t = (np.arange(samples) + 0.5) / samples - 0.5
    xs = offsets[:, None] + t[None, :]  # (cols, samples)
    h = np.sqrt(np.clip(radius * radius - xs * xs, 0.0, None))
    y0 = offsets[:, None, None] - 0.5  # rows
    y1 = offsets[:, None, None] + 0.5
    top = np.minimum(y1, h[None])
    bottom = np.maximum(y0, -h[None])
    heights = np.clip(top - bottom, 0.0, None)
    return heights.mean(axis=-1)  # (rows, cols), cell width 1


def disk_kernel(radius: float) -> Kernel:
    """Uniform defocus disk with area-fraction anti-aliased edge cells."""
    if not radius > 0:
        raise KernelError(f"radius must be positive, got {radius}")
    # tight support: the disk reaches the cell at offset k iff radius > k - 0.5
    half = max(0, math.ceil(radius - 0.5 - 1e-12))
    w = _normalized(_disk_cell_areas(float(radius), half))
    return Kernel(w, "disk", {"radius": float(radius), "size": 2 * half + 1})


def _trajectory(length: float, angle: float, wiggle: float, rng) -> np.ndarray:
    arc = float(length) - 1.0
    if arc <= 0:
        return np.zeros((1, 2))
    n_seg = max(1, math.ceil(arc))
    if wiggle > 0:
        headings = angle + np.cumsum(rng.normal(0.0, wiggle, size=n_seg))
    else:
        headings = np.full(n_seg, float(angle))
    step = arc / n_seg
    dx = step * np.cos(headings)
    dy = step * np.sin(headings)
    pts = np.zeros((n_seg + 1, 2))
    pts[1:, 0] = np.cumsum(dx)
    pts[1:, 1] = np.cumsum(dy)
    return pts


def motion_kernel_from_points(points: Sequence[Sequence[float]], oversample: int = 20) -> np.ndarray:
    """Rasterize a polyline (x, y) with bilinear splatting, centred on its mean."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 1:
        return np.ones((1, 1))
    samples = []
    for a, b in zip(pts[:-1], pts[1:]):
        seg = float(np.hypot(*(b - a)))
        n = max(1, math.ceil(seg * oversample))
        t = (np.arange(n) + 0.5) / n
        samples.append(a[None, :] + t[:, None] * (b - a)[None, :])
    s = np.concatenate(samples)
    s = s - s.mean(axis=0)
    half = int(math.ceil(np.abs(s).max() - 1e-12))
    size = 2 * half + 1
    w = np.zeros((size, size))
    ix0 = np.floor(s[:, 0]).astype(int)
    iy0 = np.floor(s[:, 1]).astype(int)
    fx = s[:, 0] - ix0
    fy = s[:, 1] - iy0
    for ox, oy, wt in (
        (0, 0, (1 - fx) * (1 - fy)),
        (1, 0, fx * (1 - fy)),
        (0, 1, (1 - fx) * fy),
        (1, 1, fx * fy),
    ):
        cx, cy = ix0 + ox + half, iy0 + oy + half
        keep = (wt > 0) & (cx >= 0) & (cx < size) & (cy >= 0) & (cy < size)
        np.add.at(w, (cy[keep], cx[keep]), wt[keep])
    return _normalized(w)


def motion_kernel(length: float, angle: float, wiggle: float, rng) -> Kernel:
    """Random-walk camera trajectory kernel; ``wiggle=0`` gives a straight line.

    ``length`` counts covered pixels, so ``length=1`` is the identity.
    """
    if not length >= 1:
        raise KernelError(f"motion length must be >= 1, got {length}")
    if wiggle < 0:
        raise KernelError(f"wiggle must be >= 0, got {wiggle}")
    pts = _trajectory(length, angle, wiggle, rng)
    w = motion_kernel_from_points(pts)
    params = {
        "length": float(length),
        "angle": float(angle),
        "wiggle": float(wiggle),
        "points": pts.tolist(),
    }
    return Kernel(w, "motion", params)


def load_psf(path) -> Kernel:
    """Read a ``RAWKERN <size>`` text kernel; negatives are clamped to 0."""
    path = Path(path)
    try:
        text = path.read_text(encoding="ascii")
    except FileNotFoundError:
        raise KernelFileError(f"{path}: no such kernel file") from None
    except (OSError, UnicodeDecodeError) as exc:
        raise KernelFileError(f"{path}: unreadable kernel file ({exc})") from None
    tokens = text.split()
    if len(tokens) < 2 or tokens[0] != "RAWKERN":
        raise KernelFileError(f"{path}: missing 'RAWKERN <size>' header")
    try:
        size = int(tokens[1])
        values = np.array([float(t) for t in tokens[2:]])
    except ValueError as exc:
        raise KernelFileError(f"{path}: bad number ({exc})") from None
    if size < 1 or size % 2 == 0:
        raise KernelFileError(f"{path}: kernel size must be odd and >= 1, got {size}")
    if values.size != size * size:
        raise KernelFileError(f"{path}: expected {size * size} weights, found {values.size}")
    if not np.isfinite(values).all():
        raise KernelFileError(f"{path}: non-finite weights")
    w = np.clip(values.reshape(size, size), 0.0, None)
    total = w.sum()
    if total <= 0:
        raise KernelFileError(f"{path}: kernel is all zero after clamping negatives")
    return Kernel(w / total, "measured_psf", {"source": str(path)})


def save_psf(kernel: Kernel | np.ndarray, path) -> None:
    w = kernel.weights if isinstance(kernel, Kernel) else np.asarray(kernel, dtype=np.float64)
    lines = [f"RAWKERN {w.shape[0]}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in w]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


@dataclass(frozen=True)
class KernelRanges:
    sizes: tuple[int, ...] = (7, 9, 11, 13, 15, 17, 19, 21)
    sigma: tuple[float, float] = (0.2, 4.0)
    theta: tuple[float, float] = (0.0, math.pi)
    disk_radius: tuple[float, float] = (0.5, 6.0)
    motion_length: tuple[float, float] = (1.0, 21.0)
    motion_wiggle: tuple[float, float] = (0.0, 0.5)


DEFAULT_KIND_WEIGHTS = {
    "iso_gaussian": 0.25,
    "aniso_gaussian": 0.30,
    "disk": 0.20,
    "motion": 0.25,
}


@dataclass(frozen=True)
class KernelPool:
    """Kernel generators with per-kind sampling weights.

    ``psfs`` backs the ``measured_psf`` kind; one is picked uniformly per draw.
    ``count_probs`` gives P(0), P(1), P(2) kernels per degraded image.
    """

    kind_weights: dict = field(default_factory=lambda: dict(DEFAULT_KIND_WEIGHTS))
    psfs: tuple = ()
    count_probs: tuple[float, float, float] = (0.1, 0.6, 0.3)
    ranges: KernelRanges = field(default_factory=KernelRanges)

    def __post_init__(self):
        weights = {k: float(v) for k, v in self.kind_weights.items() if v > 0}
        if not weights:
            raise KernelError("kernel pool is empty")
        for k in weights:
            if k not in KINDS:
                raise KernelError(f"unknown kernel kind {k!r} in pool")
        if abs(sum(weights.values()) - 1.0) > 1e-9:
            raise KernelError(f"pool weights sum to {sum(weights.values())}, expected 1")
        if "measured_psf" in weights and not self.psfs:
            raise KernelError("measured_psf weight given but no PSFs loaded")
        _check_probs(self.count_probs, "count_probs")
        object.__setattr__(self, "kind_weights", weights)
        object.__setattr__(self, "psfs", tuple(self.psfs))

    @classmethod
    def identity(cls) -> "KernelPool":
        return cls({"measured_psf": 1.0}, psfs=(identity_kernel(),), count_probs=(0.0, 1.0, 0.0))

    def to_dict(self) -> dict:
        r = self.ranges
        return {
            "kind_weights": dict(self.kind_weights),
            "count_probs": list(self.count_probs),
            "psfs": [k.params.get("source", "") for k in self.psfs],
            "ranges": {
                "sizes": list(r.sizes),
                "sigma": list(r.sigma),
                "theta": list(r.theta),
                "disk_radius": list(r.disk_radius),
                "motion_length": list(r.motion_length),
                "motion_wiggle": list(r.motion_wiggle),
            },
        }

    @classmethod
    def from_dict(cls, d: dict, base_dir: Optional[Path] = None) -> "KernelPool":
        psfs = []
        for src in d.get("psfs", []):
            if src == "identity":
                psfs.append(identity_kernel())
                continue
            p = Path(src)
            if base_dir is not None and not p.is_absolute():
                p = base_dir / p
            psfs.append(load_psf(p))
        ranges = KernelRanges(**{k: tuple(v) for k, v in d.get("ranges", {}).items()})
        return cls(
            kind_weights=d.get("kind_weights", dict(DEFAULT_KIND_WEIGHTS)),
            psfs=tuple(psfs),
            count_probs=tuple(d.get("count_probs", (0.1, 0.6, 0.3))),
            ranges=ranges,
        )


def _check_probs(p: Sequence[float], name: str) -> None:
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (3,) or (p < 0).any() or abs(p.sum() - 1.0) > 1e-9:
        raise KernelError(f"{name} must be three non-negative probabilities summing to 1")


def draw_kernel(pool: KernelPool, rng) -> Kernel:
    kinds = list(pool.kind_weights)
    kind = kinds[rng.choice(len(kinds), p=list(pool.kind_weights.values()))]
    r = pool.ranges
    if kind == "iso_gaussian":
        size = int(rng.choice(r.sizes))
        s = rng.uniform(*r.sigma)
        return gaussian_kernel(size, s, s, 0.0)
    if kind == "aniso_gaussian":
        size = int(rng.choice(r.sizes))
        sx = rng.uniform(*r.sigma)
        sy = rng.uniform(*r.sigma)
        theta = rng.uniform(*r.theta)
        k = gaussian_kernel(size, sx, sy, theta)
        # keep the kind the pool asked for even if the two sigmas happen to coincide
        return Kernel(k.weights, "aniso_gaussian", k.params)
    if kind == "disk":
        return disk_kernel(rng.uniform(*r.disk_radius))
    if kind == "motion":
        length = rng.uniform(*r.motion_length)
        angle = rng.uniform(0.0, 2.0 * math.pi)
        wiggle = rng.uniform(*r.motion_wiggle)
        return motion_kernel(length, angle, wiggle, rng)
    psf = pool.psfs[int(rng.integers(len(pool.psfs)))]
    return psf if psf.kind == "measured_psf" else Kernel(psf.weights, "measured_psf", dict(psf.params))


def sample_kernels(pool: KernelPool, rng, count_probs: Optional[Sequence[float]] = None) -> list[Kernel]:
    """Draw 0-2 kernels: first the count, then each kernel's kind and parameters."""
    probs = pool.count_probs if count_probs is None else tuple(count_probs)
    _check_probs(probs, "count_probs")
    count = int(rng.choice(3, p=list(probs)))
    return [draw_kernel(pool, rng) for _ in range(count)]


def kernel_from_record(rec: dict) -> Kernel:
    """Rebuild a kernel from :meth:`Kernel.to_record` output."""
    kind, p = rec["kind"], rec["params"]
    if kind in ("iso_gaussian", "aniso_gaussian"):
        k = gaussian_kernel(p["size"], p["sigma_x"], p["sigma_y"], p["theta"])
        return Kernel(k.weights, kind, k.params)
    if kind == "disk":
        return disk_kernel(p["radius"])
    if kind == "motion":
        w = motion_kernel_from_points(p["points"])
        return Kernel(w, "motion", dict(p))
    if kind == "measured_psf":
        return Kernel(np.asarray(rec["weights"], dtype=np.float64), kind, dict(p))
    raise KernelError(f"unknown kernel kind {kind!r}")


def compose_kernels(k1: Kernel, k2: Kernel) -> Kernel:
    """Single kernel equivalent (away from borders) to applying k1 then k2."""
    w = signal.convolve2d(k1.weights, k2.weights, mode="full")
    return Kernel(_normalized(np.clip(w, 0.0, None)), "measured_psf", {"source": "composed"})


def filter_planes(planes: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Correlate each plane of a (C, H, W) stack with ``weights``, reflect-padded."""
    size = weights.shape[0]
    if size == 1:
        return planes * weights[0, 0]
    _, h, w = planes.shape
    half = size // 2
    # Reflect-pad up to a fast FFT length; the circular product is exact on
    # the valid region, which is all that is kept. Pads wider than the plane
    # reflect repeatedly, so kernels may exceed small planes.
    lh = sp_fft.next_fast_len(h + 2 * half, real=True)
    lw = sp_fft.next_fast_len(w + 2 * half, real=True)
    padded = np.pad(planes, ((0, 0), (half, lh - h - half), (half, lw - w - half)), mode="reflect")
    spectrum = sp_fft.rfft2(padded, axes=(1, 2))
    spectrum *= sp_fft.rfft2(weights[::-1, ::-1], s=(lh, lw))
    out = sp_fft.irfft2(spectrum, s=(lh, lw), axes=(1, 2))
    return out[:, size - 1 : size - 1 + h, size - 1 : size - 1 + w]


def convolve(raw: RawImage, kernel: Kernel) -> RawImage:
    """Blur every packed plane independently; output keeps the input shape.

    The filter is applied as a correlation, so the response to a unit impulse
    is the kernel flipped in both axes.
    """
    return raw.with_planes(filter_planes(raw.planes, kernel.weights))
