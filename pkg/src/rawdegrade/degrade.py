"""Degradation pipeline: blur, shot-read noise, exposure and requantization.

Level I is blur followed by noise. Level II draws up to two kernels, injects
noise before or after the blur, optionally dims the exposure and drops one or
two bits of precision. Every realized draw is written to a
:class:`DegradationRecord` so the exact output can be replayed.

Randomness for one image comes from a single 64-bit ``per_image_seed``. Four
independent streams are spawned from it (kernels, profile, noise field, stage
plan) so that changing one probability does not shift the other draws.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from .kernels import KernelPool, convolve, kernel_from_record, sample_kernels
from .noise import NoiseProfile, ProfileRegistry, add_shot_read_noise, sample_profile
from .raw_core import RawImage, clip01

RECORD_VERSION = 1
DEFAULT_SEED = 20240601
MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15

_STREAMS = {"kernels": 0, "profile": 1, "noise": 2, "plan": 3}


class DegradationError(ValueError):
    pass


class RecordError(DegradationError):
    pass


def splitmix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def stable_mix(seed: int, index: int) -> int:
    """Derive a child seed: splitmix64(seed + (index + 1) * golden-ratio constant) mod 2**64."""
    return splitmix64((int(seed) + (int(index) + 1) * GOLDEN) & MASK64)


def stream(per_image_seed: int, name: str) -> np.random.Generator:
    ss = np.random.SeedSequence(int(per_image_seed) & MASK64, spawn_key=(_STREAMS[name],))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class DegradationConfig:
    level: int = 2
    kernel_pool: KernelPool = field(default_factory=KernelPool)
    noise_registry: ProfileRegistry = field(default_factory=ProfileRegistry)
    exposure_gain_range: tuple[float, float] = (0.25, 1.0)
    exposure_prob: float = 0.3
    exposure_before_noise_prob: float = 0.5
    quant_bits_drop_range: tuple[int, int] = (1, 2)
    quant_prob: float = 0.3
    noise_injection_order_prob: float = 0.5
    master_seed: int = DEFAULT_SEED

    def __post_init__(self):
        if self.level not in (1, 2):
            raise DegradationError(f"level must be 1 or 2, got {self.level!r}")
        for name in ("exposure_prob", "exposure_before_noise_prob", "quant_prob", "noise_injection_order_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise DegradationError(f"{name} must be in [0, 1], got {p}")
        lo, hi = self.exposure_gain_range
        if not 0 < lo <= hi <= 1:
            raise DegradationError(f"exposure_gain_range must satisfy 0 < lo <= hi <= 1, got {(lo, hi)}")
        dlo, dhi = self.quant_bits_drop_range
        if not 0 <= dlo <= dhi <= 2:
            raise DegradationError(f"quant_bits_drop_range must lie in [0, 2], got {(dlo, dhi)}")
        if not 0 <= int(self.master_seed) <= MASK64:
            raise DegradationError("master_seed must be an unsigned 64-bit integer")
        object.__setattr__(self, "exposure_gain_range", (float(lo), float(hi)))
        object.__setattr__(self, "quant_bits_drop_range", (int(dlo), int(dhi)))

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "kernel_pool": self.kernel_pool.to_dict(),
            "noise_registry": self.noise_registry.to_dict(),
            "exposure_gain_range": list(self.exposure_gain_range),
            "exposure_prob": self.exposure_prob,
            "exposure_before_noise_prob": self.exposure_before_noise_prob,
            "quant_bits_drop_range": list(self.quant_bits_drop_range),
            "quant_prob": self.quant_prob,
            "noise_injection_order_prob": self.noise_injection_order_prob,
            "master_seed": int(self.master_seed),
        }

    @classmethod
    def from_dict(cls, d: dict, base_dir: Optional[Path] = None) -> "DegradationConfig":
        d = dict(d)
        kw: dict[str, Any] = {}
        if "kernel_pool" in d:
            kw["kernel_pool"] = KernelPool.from_dict(d.pop("kernel_pool"), base_dir)
        if "noise_registry" in d:
            kw["noise_registry"] = ProfileRegistry.from_dict(d.pop("noise_registry"))
        for key in ("exposure_gain_range", "quant_bits_drop_range"):
            if key in d:
                kw[key] = tuple(d.pop(key))
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise DegradationError(f"unknown config keys: {sorted(unknown)}")
        kw.update(d)
        return cls(**kw)

    def with_overrides(self, **kw) -> "DegradationConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


@dataclass(frozen=True)
class DegradationRecord:
    level: int
    per_image_seed: int
    bit_depth: int
    stages: tuple
    record_version: int = RECORD_VERSION

    def to_dict(self) -> dict:
        return {
            "record_version": self.record_version,
            "level": self.level,
            "per_image_seed": int(self.per_image_seed),
            "bit_depth": self.bit_depth,
            "n_stages": len(self.stages),
            "stages": [dict(s) for s in self.stages],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationRecord":
        if not isinstance(d, dict):
            raise RecordError("record must be a mapping")
        missing = {"record_version", "level", "per_image_seed", "bit_depth", "n_stages", "stages"} - set(d)
        if missing:
            raise RecordError(f"record is missing fields: {sorted(missing)}")
        if d["record_version"] != RECORD_VERSION:
            raise RecordError(
                f"record_version {d['record_version']} not supported (this version reads {RECORD_VERSION})"
            )
        stages = d["stages"]
        if len(stages) != d["n_stages"]:
            raise RecordError(f"record is truncated: {len(stages)} of {d['n_stages']} stages present")
        if not stages or stages[-1].get("op") != "clip":
            raise RecordError("record does not end with the final clip stage")
        for s in stages:
            _check_stage(s)
        return cls(int(d["level"]), int(d["per_image_seed"]), int(d["bit_depth"]), tuple(stages))

    @classmethod
    def from_json(cls, text: str) -> "DegradationRecord":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise RecordError(f"record is not valid JSON ({exc})") from None
        return cls.from_dict(d)

    def realized(self) -> list[str]:
        """Short human-readable description of each stage."""
        out = []
        for s in self.stages:
            op = s["op"]
            if op == "blur":
                out.append(f"blur[{s['kernel']['kind']} {s['kernel']['size']}px]")
            elif op == "noise":
                out.append(f"noise[read={s['lambda_read']:.3g} shot={s['lambda_shot']:.3g}]")
            elif op == "exposure":
                out.append(f"exposure[gain={s['gain']:.4f}]")
            elif op == "requantize":
                out.append(f"requantize[{s['bits']} bits]")
            else:
                out.append(op)
        return out


_STAGE_FIELDS = {
    "blur": ("kernel",),
    "noise": ("lambda_read", "lambda_shot"),
    "exposure": ("gain",),
    "requantize": ("bits",),
    "clip": (),
}


def _check_stage(s: dict) -> None:
    op = s.get("op") if isinstance(s, dict) else None
    if op not in _STAGE_FIELDS:
        raise RecordError(f"unknown stage {op!r}")
    missing = [f for f in _STAGE_FIELDS[op] if f not in s]
    if missing:
        raise RecordError(f"stage {op!r} is missing {missing}")


def exposure_scale(raw: RawImage, gain: float) -> RawImage:
    """Linear ISO dimming: multiply every sample by ``gain`` in (0, 1]."""
    if not 0 < gain <= 1:
        raise DegradationError(f"exposure gain must be in (0, 1], got {gain}")
    return raw.with_planes(raw.planes * gain)


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def requantize(raw: RawImage, target_bits: int) -> RawImage:
    """Snap samples to the ``2**target_bits`` levels of a ``target_bits``-bit code."""
    target_bits = int(target_bits)
    if not 1 <= target_bits <= raw.bit_depth:
        raise DegradationError(f"target_bits must be in [1, {raw.bit_depth}], got {target_bits}")
    levels = float((1 << target_bits) - 1)
    return raw.with_planes(round_half_away(raw.planes * levels) / levels)


def _apply_stages(raw: RawImage, stages: Sequence[dict], per_image_seed: int) -> RawImage:
    y = raw
    for s in stages:
        op = s["op"]
        if op == "blur":
            y = convolve(y, kernel_from_record(s["kernel"]))
        elif op == "noise":
            profile = NoiseProfile(s["lambda_read"], s["lambda_shot"], s.get("label", ""))
            y = add_shot_read_noise(y, profile, stream(per_image_seed, "noise"))
        elif op == "exposure":
            y = exposure_scale(y, s["gain"])
        elif op == "requantize":
            y = requantize(y, s["bits"])
        elif op == "clip":
            y = clip01(y)
        else:
            raise RecordError(f"unknown stage {op!r}")
    return y


def _noise_stage(p: NoiseProfile) -> dict:
    return {"op": "noise", "lambda_read": p.lambda_read, "lambda_shot": p.lambda_shot, "label": p.label}


def plan_level1(cfg: DegradationConfig, per_image_seed: int, bit_depth: int) -> DegradationRecord:
    (kernel,) = sample_kernels(cfg.kernel_pool, stream(per_image_seed, "kernels"), count_probs=(0.0, 1.0, 0.0))
    profile = sample_profile(cfg.noise_registry, stream(per_image_seed, "profile"))
    stages = ({"op": "blur", "kernel": kernel.to_record()}, _noise_stage(profile), {"op": "clip"})
    return DegradationRecord(1, per_image_seed, bit_depth, stages)


def plan_level2(cfg: DegradationConfig, per_image_seed: int, bit_depth: int) -> DegradationRecord:
    kernels = sample_kernels(cfg.kernel_pool, stream(per_image_seed, "kernels"))
    profile = sample_profile(cfg.noise_registry, stream(per_image_seed, "profile"))

    # every plan variable is drawn unconditionally, in a fixed order
    rng = stream(per_image_seed, "plan")
    noise_first = rng.random() < cfg.noise_injection_order_prob
    use_exposure = rng.random() < cfg.exposure_prob
    gain = float(rng.uniform(*cfg.exposure_gain_range))
    exposure_first = rng.random() < cfg.exposure_before_noise_prob
    use_quant = rng.random() < cfg.quant_prob
    drop = int(rng.integers(cfg.quant_bits_drop_range[0], cfg.quant_bits_drop_range[1] + 1))

    blur = [{"op": "blur", "kernel": k.to_record()} for k in kernels]
    noise = [_noise_stage(profile)]
    if use_exposure and exposure_first:
        noise = [{"op": "exposure", "gain": gain}] + noise
    stages = noise + blur if noise_first else blur + noise
    if use_exposure and not exposure_first:
        stages.append({"op": "exposure", "gain": gain})
    if use_quant:
        stages.append({"op": "requantize", "bits": max(1, bit_depth - drop)})
    stages.append({"op": "clip"})
    return DegradationRecord(2, per_image_seed, bit_depth, tuple(stages))


def degrade_level1(raw: RawImage, cfg: DegradationConfig, per_image_seed: int) -> tuple[RawImage, DegradationRecord]:
    record = plan_level1(cfg, per_image_seed, raw.bit_depth)
    return _apply_stages(raw, record.stages, per_image_seed), record


def degrade_level2(raw: RawImage, cfg: DegradationConfig, per_image_seed: int) -> tuple[RawImage, DegradationRecord]:
    record = plan_level2(cfg, per_image_seed, raw.bit_depth)
    return _apply_stages(raw, record.stages, per_image_seed), record


def degrade(raw: RawImage, cfg: DegradationConfig, per_image_seed: int) -> tuple[RawImage, DegradationRecord]:
    if cfg.level == 1:
        return degrade_level1(raw, cfg, per_image_seed)
    return degrade_level2(raw, cfg, per_image_seed)


def replay(raw: RawImage, record: DegradationRecord | dict | str) -> RawImage:
    """Re-run a recorded degradation on ``raw``."""
    if isinstance(record, str):
        record = DegradationRecord.from_json(record)
    elif isinstance(record, dict):
        record = DegradationRecord.from_dict(record)
    elif record.record_version != RECORD_VERSION:
        raise RecordError(f"record_version {record.record_version} not supported")
    if record.bit_depth != raw.bit_depth:
        raise RecordError(f"record was made for {record.bit_depth}-bit data, image is {raw.bit_depth}-bit")
    return _apply_stages(raw, record.stages, record.per_image_seed)


def degrade_batch(
    images: Sequence[RawImage],
    cfg: DegradationConfig,
    threads: int = 1,
    start_index: int = 0,
) -> list[tuple[RawImage, DegradationRecord]]:
    """Degrade ``images[i]`` with seed ``stable_mix(cfg.master_seed, start_index + i)``.

    Output order follows input order; thread count does not change results.
    """

    def one(i: int):
        return degrade(images[i], cfg, stable_mix(cfg.master_seed, start_index + i))

    if threads <= 1 or len(images) <= 1:
        return [one(i) for i in range(len(images))]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, range(len(images))))
