"""PSNR and SSIM on packed RAW planes, and directory-level benchmarking."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
from scipy import signal

from .raw_core import DimensionError, RawImage

PSNR_INF = math.inf  # sentinel for identical images; serialized as "inf"
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
C1 = 0.01**2
C2 = 0.03**2


def _planes(x) -> np.ndarray:
    return x.planes if isinstance(x, RawImage) else np.asarray(x, dtype=np.float64)


def psnr(pred, gt) -> float:
    """10 log10(1 / MSE), MSE pooled over all planes; peak is 1.0."""
    a, b = _planes(pred), _planes(gt)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_INF
    return 10.0 * math.log10(1.0 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size) - size // 2
    g = np.exp(-(ax**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def _ssim_plane(x: np.ndarray, y: np.ndarray, win: np.ndarray) -> float:
    def filt(a):
        return signal.fftconvolve(a, win, mode="valid")

    mu_x, mu_y = filt(x), filt(y)
    sxx = filt(x * x) - mu_x * mu_x
    syy = filt(y * y) - mu_y * mu_y
    sxy = filt(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + C1) * (2 * sxy + C2)
    den = (mu_x * mu_x + mu_y * mu_y + C1) * (sxx + syy + C2)
    return float(np.mean(num / den))


def ssim(pred, gt) -> float:
    """Single-scale SSIM (11x11 Gaussian window, sigma 1.5, data range 1).

    Computed on each packed plane over 'valid' window positions, then averaged
    with equal weight across the four planes.
    """
    a, b = _planes(pred), _planes(gt)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if min(a.shape[-2:]) < SSIM_WINDOW:
        raise DimensionError(f"planes {a.shape[-2:]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    if np.array_equal(a, b):
        return 1.0
    win = gaussian_window()
    return float(np.mean([_ssim_plane(p, q, win) for p, q in zip(a, b)]))


@dataclass
class MetricRow:
    image_id: str
    psnr_db: float
    ssim: float


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    @property
    def n_evaluated(self) -> int:
        return len(self.rows)

    @property
    def n_skipped(self) -> int:
        return len(self.skipped)

    @property
    def mean_psnr(self) -> float:
        if not self.rows:
            return math.nan
        return float(np.mean([r.psnr_db for r in self.rows]))

    @property
    def mean_ssim(self) -> float:
        if not self.rows:
            return math.nan
        return float(np.mean([r.ssim for r in self.rows]))

    def to_tsv(self) -> str:
        lines = ["id\tpsnr_db\tssim"]
        lines += [f"{r.image_id}\t{_fmt_db(r.psnr_db)}\t{r.ssim:.6f}" for r in self.rows]
        lines.append(
            f"# mean\t{_fmt_db(self.mean_psnr)}\t{self.mean_ssim:.6f}"
            f"\tevaluated={self.n_evaluated}\tskipped={self.n_skipped}"
        )
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "report_version": 1,
            "rows": [{"id": r.image_id, "psnr_db": _json_db(r.psnr_db), "ssim": r.ssim} for r in self.rows],
            "mean_psnr_db": _json_db(self.mean_psnr),
            "mean_ssim": self.mean_ssim,
            "n_evaluated": self.n_evaluated,
            "n_skipped": self.n_skipped,
            "skipped": list(self.skipped),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


def _fmt_db(v: float) -> str:
    return "inf" if math.isinf(v) else f"{v:.4f}"


def _json_db(v: float):
    return "inf" if math.isinf(v) else v


def evaluate_pairs(
    pred: dict[str, RawImage],
    gt: dict[str, RawImage],
) -> MetricReport:
    """Score every prediction against the same-keyed ground truth, sorted by key."""
    report = MetricReport()
    for key in sorted(set(pred) | set(gt)):
        if key not in gt:
            report.skipped.append(f"{key}: no ground truth")
            continue
        if key not in pred:
            report.skipped.append(f"{key}: no prediction")
            continue
        p, g = pred[key], gt[key]
        report.rows.append(MetricRow(key, psnr(p, g), ssim(p, g)))
    return report


def evaluate_dirs(
    pred_dir,
    gt_dir,
    loader: Callable[[Path], RawImage],
    suffixes: Iterable[str] = (".rawir", ".pgm"),
) -> MetricReport:
    """Pair files by name across two directories and evaluate them."""
    suffixes = tuple(suffixes)

    def listing(d) -> dict[str, Path]:
        return {p.name: p for p in sorted(Path(d).iterdir()) if p.is_file() and p.suffix in suffixes}

    preds, gts = listing(pred_dir), listing(gt_dir)
    report = MetricReport()
    for name in sorted(set(preds) | set(gts)):
        if name not in gts:
            report.skipped.append(f"{name}: no ground truth")
        elif name not in preds:
            report.skipped.append(f"{name}: no prediction")
        else:
            p, g = loader(preds[name]), loader(gts[name])
            report.rows.append(MetricRow(name, psnr(p, g), ssim(p, g)))
    return report
