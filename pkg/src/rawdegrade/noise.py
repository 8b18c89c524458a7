"""Heteroscedastic shot-read noise, profile registries and profile estimation.

Noise is Gaussian with mean ``x`` and variance ``lambda_read + lambda_shot * x``
on normalized intensities.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .raw_core import RawImage

log = logging.getLogger(__name__)


class NoiseProfileError(ValueError):
    pass


class InsufficientDataError(NoiseProfileError):
    pass


@dataclass(frozen=True)
class NoiseProfile:
    lambda_read: float
    lambda_shot: float
    label: str = ""

    def __post_init__(self):
        for name in ("lambda_read", "lambda_shot"):
            v = float(getattr(self, name))
            if not (math.isfinite(v) and v >= 0):
                raise NoiseProfileError(f"{name} must be finite and >= 0, got {v}")
            object.__setattr__(self, name, v)

    @property
    def is_clean(self) -> bool:
        return self.lambda_read == 0 and self.lambda_shot == 0

    def variance(self, x):
        return self.lambda_read + self.lambda_shot * np.asarray(x)


CLEAN = NoiseProfile(0.0, 0.0, "clean")

# Placeholder smartphone-class profiles, not measured from any specific device.
DEFAULT_PROFILES = (
    NoiseProfile(1e-6, 1e-4, "smartphone-class-default/iso-100"),
    NoiseProfile(4e-6, 3e-4, "smartphone-class-default/iso-200"),
    NoiseProfile(1e-5, 8e-4, "smartphone-class-default/iso-400"),
    NoiseProfile(2e-5, 2e-3, "smartphone-class-default/iso-800"),
    NoiseProfile(5e-5, 5e-3, "smartphone-class-default/iso-1600"),
    NoiseProfile(1e-4, 1e-2, "smartphone-class-default/iso-3200"),
)


@dataclass(frozen=True)
class ProfileRegistry:
    """Stored noise profiles plus optional log-uniform ranges.

    ``stored_prob`` is the chance of picking a stored profile; otherwise the
    parameters are drawn log-uniformly from ``shot_range``/``read_range``.
    Without ranges, stored profiles are always used.
    """

    profiles: tuple = DEFAULT_PROFILES
    shot_range: Optional[tuple[float, float]] = (1e-4, 1e-2)
    read_range: Optional[tuple[float, float]] = (1e-6, 1e-4)
    stored_prob: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "profiles", tuple(self.profiles))
        if not self.profiles:
            raise NoiseProfileError("profile registry is empty")
        if (self.shot_range is None) != (self.read_range is None):
            raise NoiseProfileError("shot_range and read_range must be given together")
        for rng_ in (self.shot_range, self.read_range):
            if rng_ is None:
                continue
            lo, hi = rng_
            if not (0 < lo < hi < math.inf):
                raise NoiseProfileError(f"log-uniform range needs 0 < low < high, got {rng_}")
        if not 0 <= self.stored_prob <= 1:
            raise NoiseProfileError(f"stored_prob must be in [0, 1], got {self.stored_prob}")

    @classmethod
    def clean(cls) -> "ProfileRegistry":
        return cls((CLEAN,), None, None, 1.0)

    @classmethod
    def single(cls, profile: NoiseProfile) -> "ProfileRegistry":
        return cls((profile,), None, None, 1.0)

    @property
    def has_ranges(self) -> bool:
        return self.shot_range is not None

    def to_dict(self) -> dict:
        return {
            "profiles": [[p.label, p.lambda_read, p.lambda_shot] for p in self.profiles],
            "shot_range": list(self.shot_range) if self.shot_range else None,
            "read_range": list(self.read_range) if self.read_range else None,
            "stored_prob": self.stored_prob,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProfileRegistry":
        profiles = tuple(NoiseProfile(r, s, label) for label, r, s in d["profiles"])
        shot = d.get("shot_range")
        read = d.get("read_range")
        return cls(
            profiles,
            tuple(shot) if shot else None,
            tuple(read) if read else None,
            d.get("stored_prob", 1.0 if shot is None else 0.5),
        )


def add_shot_read_noise(raw: RawImage, profile: NoiseProfile, rng) -> RawImage:
    """Replace each sample with a draw from N(x, lambda_read + lambda_shot * x).

    The output is not clipped.
    """
    if profile.is_clean:
        return raw
    x = raw.planes
    var = profile.lambda_read + profile.lambda_shot * x
    np.maximum(var, 0.0, out=var)
    z = rng.standard_normal(size=x.shape)
    return raw.with_planes(x + np.sqrt(var) * z)


def _log_uniform(rng, lo: float, hi: float) -> float:
    return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))


def sample_profile(registry: ProfileRegistry, rng) -> NoiseProfile:
    use_stored = not registry.has_ranges or rng.random() < registry.stored_prob
    if use_stored:
        return registry.profiles[int(rng.integers(len(registry.profiles)))]
    shot = _log_uniform(rng, *registry.shot_range)
    read = _log_uniform(rng, *registry.read_range)
    return NoiseProfile(read, shot, "log-uniform")


@dataclass(frozen=True)
class ProfileFit:
    profile: NoiseProfile
    clamped: bool = False
    rms_residual: float = 0.0
    n_points: int = 0
    means: np.ndarray = field(default=None, repr=False)
    variances: np.ndarray = field(default=None, repr=False)


def estimate_profile(
    means: Sequence[float],
    variances: Sequence[float],
    weights: Optional[Sequence[float]] = None,
    label: str = "estimated",
) -> ProfileFit:
    """Least-squares fit of ``variance = lambda_read + lambda_shot * mean``.

    ``weights`` (e.g. sample counts) turn this into weighted least squares.
    Negative coefficients are clamped to zero and flagged in the result.
    """
    m = np.asarray(means, dtype=np.float64).ravel()
    v = np.asarray(variances, dtype=np.float64).ravel()
    if m.shape != v.shape:
        raise NoiseProfileError("means and variances differ in length")
    if m.size < 3:
        raise InsufficientDataError(f"need at least 3 calibration points, got {m.size}")
    if (v < 0).any():
        raise NoiseProfileError("observed variances must be non-negative")
    distinct = np.unique(m).size
    if distinct == 1:
        raise InsufficientDataError("all calibration intensities are identical; fit is rank-deficient")
    if distinct < 3:
        raise InsufficientDataError(f"need at least 3 distinct intensity levels, got {distinct}")

    A = np.stack([np.ones_like(m), m], axis=1)
    if weights is not None:
        sw = np.sqrt(np.asarray(weights, dtype=np.float64).ravel())
        coef, *_ = np.linalg.lstsq(A * sw[:, None], v * sw, rcond=None)
    else:
        coef, *_ = np.linalg.lstsq(A, v, rcond=None)
    read, shot = float(coef[0]), float(coef[1])

    clamped = False
    if shot < 0:
        # variance can't decrease with intensity; refit as homoscedastic
        shot, clamped = 0.0, True
        read = float(np.average(v, weights=weights))
    if read < 0:
        read, clamped = 0.0, True
        den = float(np.average(m * m, weights=weights))
        shot = max(0.0, float(np.average(m * v, weights=weights)) / den) if den > 0 else 0.0
    if clamped:
        log.warning("noise fit produced negative coefficients; clamped to (%g, %g)", read, shot)
    resid = v - (read + shot * m)
    return ProfileFit(
        NoiseProfile(read, shot, label),
        clamped=clamped,
        rms_residual=float(np.sqrt(np.mean(resid**2))),
        n_points=int(m.size),
        means=m,
        variances=v,
    )


def patch_statistics(patches: Iterable[np.ndarray]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-patch sample mean, unbiased variance and sample count."""
    means, variances, counts = [], [], []
    for p in patches:
        a = np.asarray(p, dtype=np.float64).ravel()
        if a.size < 2:
            raise InsufficientDataError("each flat patch needs at least 2 samples")
        means.append(a.mean())
        variances.append(a.var(ddof=1))
        counts.append(a.size)
    return np.array(means), np.array(variances), np.array(counts, dtype=np.float64)


def estimate_profile_from_flats(patches: Iterable[np.ndarray], label: str = "estimated") -> ProfileFit:
    means, variances, _ = patch_statistics(patches)
    return estimate_profile(means, variances, label=label)


def read_registry(path, **range_kwargs) -> ProfileRegistry:
    """Parse ``<label> <lambda_read> <lambda_shot>`` lines; ``#`` starts a comment."""
    profiles = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise NoiseProfileError(f"{path}:{lineno}: expected '<label> <lambda_read> <lambda_shot>'")
        try:
            profiles.append(NoiseProfile(float(parts[1]), float(parts[2]), parts[0]))
        except ValueError as exc:
            raise NoiseProfileError(f"{path}:{lineno}: {exc}") from None
    if not range_kwargs:
        range_kwargs = {"shot_range": None, "read_range": None, "stored_prob": 1.0}
    return ProfileRegistry(tuple(profiles), **range_kwargs)


def format_profile_line(profile: NoiseProfile) -> str:
    label = profile.label.replace(" ", "_") or "unnamed"
    return f"{label} {profile.lambda_read!r} {profile.lambda_shot!r}"


def write_registry(profiles: Iterable[NoiseProfile], path) -> None:
    lines = ["# label lambda_read lambda_shot"] + [format_profile_line(p) for p in profiles]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
