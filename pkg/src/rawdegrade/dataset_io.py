"""File formats, manifests, patch extraction and paired-dataset generation.

RawContainer (``.rawir``) layout, all integers little-endian::

    7 bytes   magic b"RAWIR1\\0"
    uint32    width (mosaic pixels)
    uint32    height
    uint8     bit_depth
    uint16    black_level
    uint16    white_level
    uint8     cfa code (0 = RGGB)
    uint16    sensor_id length n, followed by n bytes of UTF-8
    payload   width*height uint16 DN samples, row-major

The manifest is a JSON document::

    {"manifest_version": 1,
     "entries": [{"source": "a.rawir", "device": "phone", "sensor": "IMX",
                  "split": "train", "patches": [[row, col], ...]}]}

``patches`` is optional (a full grid is used when absent); coordinates are
top-left corners in packed-plane pixels. PGM sources may add ``black_level``
and ``white_level``. Relative sources resolve against the manifest file.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .degrade import DegradationConfig, degrade, round_half_away, stable_mix
from .raw_core import (
    MosaicImage,
    RawFormatError,
    RawImage,
    normalize,
    pack_rggb,
    unpack_rggb,
)

log = logging.getLogger(__name__)

MAGIC = b"RAWIR1\0"
_HEADER = struct.Struct("<IIBHHBH")
CFA_CODES = {"RGGB": 0}
MANIFEST_VERSION = 1
SUMMARY_VERSION = 1
SPLITS = ("train", "test")
PATCH_SIZE = 248


class ContainerError(ValueError):
    pass


class BadMagicError(ContainerError):
    pass


class TruncatedPayloadError(ContainerError):
    pass


class HeaderValidationError(ContainerError):
    pass


class PgmFormatError(ValueError):
    pass


class ManifestError(ValueError):
    pass


class BuildError(RuntimeError):
    pass


# --- RawContainer -----------------------------------------------------------


def write_container(mosaic: MosaicImage, path) -> None:
    sensor = (mosaic.sensor_id or "").encode("utf-8")
    header = MAGIC + _HEADER.pack(
        mosaic.width,
        mosaic.height,
        mosaic.bit_depth,
        mosaic.black_level,
        mosaic.white_level,
        CFA_CODES[mosaic.cfa_pattern],
        len(sensor),
    )
    payload = np.ascontiguousarray(mosaic.data, dtype="<u2").tobytes()
    Path(path).write_bytes(header + sensor + payload)


def read_container(path) -> MosaicImage:
    path = Path(path)
    buf = path.read_bytes()
    if buf[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"{path}: not a RAWIR1 container (bad magic {buf[:len(MAGIC)]!r})")
    off = len(MAGIC)
    if len(buf) < off + _HEADER.size:
        raise TruncatedPayloadError(f"{path}: header truncated ({len(buf)} bytes)")
    width, height, bit_depth, black, white, cfa, slen = _HEADER.unpack_from(buf, off)
    off += _HEADER.size
    if len(buf) < off + slen:
        raise TruncatedPayloadError(f"{path}: sensor_id truncated")
    try:
        sensor = buf[off : off + slen].decode("utf-8") or None
    except UnicodeDecodeError:
        raise HeaderValidationError(f"{path}: sensor_id is not UTF-8") from None
    off += slen
    expected = width * height * 2
    actual = len(buf) - off
    if actual != expected:
        kind = "truncated" if actual < expected else "has trailing bytes"
        raise TruncatedPayloadError(f"{path}: payload {kind}: expected {expected} bytes, got {actual}")
    cfa_name = {v: k for k, v in CFA_CODES.items()}.get(cfa)
    if cfa_name is None:
        raise HeaderValidationError(f"{path}: unsupported CFA code {cfa}")
    data = np.frombuffer(buf, dtype="<u2", offset=off).reshape(height, width).astype(np.uint16)
    try:
        return MosaicImage(data, bit_depth, black, white, cfa_name, sensor)
    except RawFormatError as exc:
        raise HeaderValidationError(f"{path}: {exc}") from None


# --- Netpbm -------------------------------------------------------------------


def _pgm_header(buf: bytes, path) -> tuple[list[bytes], int]:
    tokens: list[bytes] = []
    i = 0
    while len(tokens) < 4:
        if i >= len(buf):
            raise PgmFormatError(f"{path}: malformed PGM header")
        c = buf[i : i + 1]
        if c == b"#":
            while i < len(buf) and buf[i : i + 1] not in (b"\n", b"\r"):
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(buf) and not buf[j : j + 1].isspace() and buf[j : j + 1] != b"#":
                j += 1
            tokens.append(buf[i:j])
            i = j
    # exactly one whitespace byte separates maxval from the raster
    return tokens, i + 1


def read_pgm16(path, black_level: int = 0, white_level: Optional[int] = None, sensor_id=None) -> MosaicImage:
    """Read a binary 16-bit PGM (``P5``) as a mosaic of DNs."""
    path = Path(path)
    buf = path.read_bytes()
    if buf[:2] != b"P5":
        if buf[:2] == b"P2":
            raise PgmFormatError(f"{path}: ASCII PGM (P2) is not supported; convert to binary P5")
        raise PgmFormatError(f"{path}: not a binary PGM (magic {buf[:2]!r})")
    tokens, off = _pgm_header(buf, path)
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError:
        raise PgmFormatError(f"{path}: malformed PGM header") from None
    if maxval <= 255:
        raise PgmFormatError(f"{path}: maxval {maxval} is 8-bit; RAW interchange needs 16-bit samples")
    if maxval > 65535:
        raise PgmFormatError(f"{path}: maxval {maxval} out of range")
    n = width * height * 2
    if len(buf) - off < n:
        raise PgmFormatError(f"{path}: raster truncated: expected {n} bytes, got {len(buf) - off}")
    data = np.frombuffer(buf, dtype=">u2", count=width * height, offset=off).reshape(height, width)
    bit_depth = math.ceil(math.log2(maxval + 1))
    try:
        return MosaicImage(
            data.astype(np.uint16),
            bit_depth,
            black_level,
            maxval if white_level is None else white_level,
            "RGGB",
            sensor_id,
        )
    except RawFormatError as exc:
        raise PgmFormatError(f"{path}: {exc}") from None


def write_pgm16(data: np.ndarray, path, maxval: int = 65535) -> None:
    data = np.asarray(data)
    h, w = data.shape
    header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(header + np.ascontiguousarray(data, dtype=">u2").tobytes())


def write_ppm(rgb: np.ndarray, path) -> None:
    """Write (H, W, 3) uint8 data as binary ``P6`` with maxval 255."""
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes())


def read_ppm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:2] != b"P6":
        raise PgmFormatError(f"{path}: not a binary PPM")
    tokens, off = _pgm_header(buf, path)
    w, h = int(tokens[1]), int(tokens[2])
    return np.frombuffer(buf, dtype=np.uint8, count=w * h * 3, offset=off).reshape(h, w, 3)


# --- conversions --------------------------------------------------------------


def load_mosaic(path, black_level: Optional[int] = None, white_level: Optional[int] = None) -> MosaicImage:
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return read_pgm16(path, black_level or 0, white_level)
    return read_container(path)


def load_raw(path, black_level: Optional[int] = None, white_level: Optional[int] = None) -> RawImage:
    return pack_rggb(normalize(load_mosaic(path, black_level, white_level)))


def to_mosaic(raw: RawImage, black_level: int, white_level: int, sensor_id=None) -> MosaicImage:
    """Quantize normalized planes back to DNs (round half away from zero)."""
    x = np.clip(unpack_rggb(raw).data, 0.0, 1.0)
    dn = round_half_away(x * (white_level - black_level)) + black_level
    return MosaicImage(dn.astype(np.uint16), raw.bit_depth, black_level, white_level, "RGGB", sensor_id)


# --- patches --------------------------------------------------------------------


def patch_origins(length: int, patch: int, stride: int) -> list[int]:
    if patch > length:
        raise RawFormatError(f"patch of {patch} does not fit in {length}")
    if stride < 1:
        raise RawFormatError("stride must be >= 1")
    starts = list(range(0, length - patch + 1, stride))
    if starts[-1] + patch < length:
        starts.append(length - patch)
    return starts


def extract_patches(
    raw: RawImage, patch_size: int = PATCH_SIZE, stride: Optional[int] = None
) -> list[tuple[tuple[int, int], RawImage]]:
    """Tile the packed image; the last row/column is anchored to the far edge."""
    stride = patch_size if stride is None else stride
    rows = patch_origins(raw.height_p, patch_size, stride)
    cols = patch_origins(raw.width_p, patch_size, stride)
    return [((r, c), crop(raw, r, c, patch_size)) for r in rows for c in cols]


def crop(raw: RawImage, row: int, col: int, size: int) -> RawImage:
    if row < 0 or col < 0 or row + size > raw.height_p or col + size > raw.width_p:
        raise RawFormatError(f"patch at ({row}, {col}) of size {size} is outside {raw.height_p}x{raw.width_p}")
    return raw.with_planes(raw.planes[:, row : row + size, col : col + size].copy())


# --- manifest -----------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    source: str
    device: str = ""
    sensor: str = ""
    split: str = "train"
    patches: Optional[tuple] = None
    black_level: Optional[int] = None
    white_level: Optional[int] = None

    def to_dict(self) -> dict:
        d = {"source": self.source, "device": self.device, "sensor": self.sensor, "split": self.split}
        if self.patches is not None:
            d["patches"] = [list(p) for p in self.patches]
        if self.black_level is not None:
            d["black_level"] = self.black_level
        if self.white_level is not None:
            d["white_level"] = self.white_level
        return d


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple
    base_dir: Path = Path(".")

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        seen, stems = set(), set()
        for e in self.entries:
            if e.split not in SPLITS:
                raise ManifestError(f"{e.source}: split must be one of {SPLITS}, got {e.split!r}")
            if e.source in seen:
                raise ManifestError(f"duplicate source {e.source!r}")
            stem = Path(e.source).stem
            if stem in stems:
                raise ManifestError(f"two sources share the output name {stem!r}")
            seen.add(e.source)
            stems.add(stem)
            if e.patches is not None:
                for p in e.patches:
                    if len(p) != 2 or min(p) < 0:
                        raise ManifestError(f"{e.source}: bad patch coordinate {p!r}")

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.source)
        return p if p.is_absolute() else self.base_dir / p

    def to_dict(self) -> dict:
        return {"manifest_version": MANIFEST_VERSION, "entries": [e.to_dict() for e in self.entries]}

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "DatasetManifest":
        if d.get("manifest_version") != MANIFEST_VERSION:
            raise ManifestError(f"unsupported manifest_version {d.get('manifest_version')!r}")
        entries = []
        for raw in d.get("entries", []):
            if "source" not in raw:
                raise ManifestError("manifest entry without 'source'")
            patches = raw.get("patches")
            entries.append(
                ManifestEntry(
                    source=raw["source"],
                    device=raw.get("device", ""),
                    sensor=raw.get("sensor", ""),
                    split=raw.get("split", "train"),
                    patches=None if patches is None else tuple(tuple(int(v) for v in p) for p in patches),
                    black_level=raw.get("black_level"),
                    white_level=raw.get("white_level"),
                )
            )
        return cls(tuple(entries), Path(base_dir))

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        path = Path(path)
        try:
            d = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(d, path.parent)


# --- dataset generation -------------------------------------------------------


@dataclass
class BuildSummary:
    n_patches: int = 0
    per_split: Counter = field(default_factory=Counter)
    per_device: Counter = field(default_factory=Counter)
    skipped: list = field(default_factory=list)
    outputs: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.skipped

    def to_dict(self, cfg: DegradationConfig, patch_size: int, stride: int) -> dict:
        return {
            "summary_version": SUMMARY_VERSION,
            "n_patches": self.n_patches,
            "per_split": dict(sorted(self.per_split.items())),
            "per_device": dict(sorted(self.per_device.items())),
            "skipped": list(self.skipped),
            "patch_size": patch_size,
            "stride": stride,
            "config": cfg.to_dict(),
        }


def _patch_name(stem: str, row: int, col: int) -> str:
    return f"{stem}_y{row:04d}_x{col:04d}"


def build_dataset(
    manifest: DatasetManifest,
    cfg: DegradationConfig,
    out_dir,
    patch_size: int = PATCH_SIZE,
    stride: Optional[int] = None,
    threads: int = 1,
    overwrite: bool = False,
) -> BuildSummary:
    """Write clean/degraded patch pairs plus degradation records.

    Layout under ``out_dir``: ``clean/<split>/<name>.rawir``,
    ``degraded/<split>/<name>.rawir`` with ``<name>.json`` records next to the
    degraded files, ``manifest.json`` listing every pair and ``summary.json``.
    Patch ``j`` of entry ``i`` uses seed
    ``stable_mix(stable_mix(master_seed, i), j)``.
    """
    out_dir = Path(out_dir)
    stride = patch_size if stride is None else stride
    if out_dir.exists() and any(out_dir.iterdir()) and not overwrite:
        raise BuildError(f"{out_dir} exists and is not empty (use overwrite)")
    for split in SPLITS:
        (out_dir / "clean" / split).mkdir(parents=True, exist_ok=True)
        (out_dir / "degraded" / split).mkdir(parents=True, exist_ok=True)

    summary = BuildSummary()
    executor = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for ei, entry in enumerate(manifest.entries):
            src = manifest.resolve(entry)
            try:
                mosaic = load_mosaic(src, entry.black_level, entry.white_level)
                raw = pack_rggb(normalize(mosaic))
                if entry.patches is None:
                    patches = extract_patches(raw, patch_size, stride)
                else:
                    patches = [((r, c), crop(raw, r, c, patch_size)) for r, c in entry.patches]
            except (OSError, ValueError) as exc:
                msg = f"{entry.source}: {exc}"
                log.error("skipping %s", msg)
                summary.skipped.append(msg)
                continue

            entry_seed = stable_mix(cfg.master_seed, ei)
            stem = Path(entry.source).stem
            sensor = mosaic.sensor_id or entry.sensor or None

            def work(item):
                j, ((r, c), clean) = item
                seed = stable_mix(entry_seed, j)
                degraded, record = degrade(clean, cfg, seed)
                name = _patch_name(stem, r, c)
                clean_rel = Path("clean", entry.split, name + ".rawir")
                deg_rel = Path("degraded", entry.split, name + ".rawir")
                rec_rel = Path("degraded", entry.split, name + ".json")
                write_container(to_mosaic(clean, mosaic.black_level, mosaic.white_level, sensor), out_dir / clean_rel)
                write_container(
                    to_mosaic(degraded, mosaic.black_level, mosaic.white_level, sensor), out_dir / deg_rel
                )
                (out_dir / rec_rel).write_text(record.to_json(), encoding="utf-8")
                return {
                    "clean": clean_rel.as_posix(),
                    "degraded": deg_rel.as_posix(),
                    "record": rec_rel.as_posix(),
                    "source": entry.source,
                    "device": entry.device,
                    "sensor": entry.sensor,
                    "split": entry.split,
                    "row": r,
                    "col": c,
                    "seed": seed,
                }

            items = list(enumerate(patches))
            rows = list(executor.map(work, items)) if executor else [work(it) for it in items]
            summary.outputs.extend(rows)
            summary.n_patches += len(rows)
            summary.per_split[entry.split] += len(rows)
            summary.per_device[entry.device or "unknown"] += len(rows)
    finally:
        if executor:
            executor.shutdown()

    out_manifest = {"manifest_version": MANIFEST_VERSION, "level": cfg.level, "pairs": summary.outputs}
    (out_dir / "manifest.json").write_text(json.dumps(out_manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    (out_dir / "summary.json").write_text(
        json.dumps(summary.to_dict(cfg, patch_size, stride), indent=1, sort_keys=True) + "\n", encoding="utf-8"
    )
    return summary
