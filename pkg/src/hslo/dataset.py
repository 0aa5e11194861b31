"""Random layout sampling and checksummed on-disk sample storage.

A dataset directory holds ``manifest.txt`` (``key=value`` lines) and
``samples.bin``, an append-only sequence of little-endian records::

    u32 index | u16 n_sources | n_sources * (u16 cell, f64 intensity)
    | HSLF field | u64 checksum

The checksum is an 8-byte BLAKE2b digest of the record bytes before it.
Every sample draws from its own generator seeded by ``(seed, index)`` so an
interrupted run resumes to exactly the same bytes.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import DomainError, FormatError, SolverError
from .fieldio import pack_field, read_field_stream
from .thermal import (
    DEFAULT_TOL,
    REFERENCE_INTENSITY,
    DomainSpec,
    Layout,
    metric_from_tmax,
    solve_temperature,
)

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.txt"
SAMPLES_NAME = "samples.bin"

CASE2_LEVELS = tuple(float(q) for q in range(2000, 20001, 2000))


@dataclass(frozen=True)
class IntensityScheme:
    """How intensities are handed out to sampled cells.

    ``uniform``: every source at ``intensity``.  ``case2``: two sources at each
    of 2000, 4000, ..., 20000 W/m^2, permuted per sample.
    """

    kind: str = "uniform"
    n_sources: int = 20
    intensity: float = REFERENCE_INTENSITY

    def __post_init__(self):
        if self.kind not in ("uniform", "case2"):
            raise DomainError(f"unknown intensity scheme {self.kind!r}")
        if self.n_sources < 0:
            raise DomainError("n_sources must be non-negative")
        if self.kind == "case2" and self.n_sources != 2 * len(CASE2_LEVELS):
            raise DomainError("the case2 scheme has exactly 20 sources")
        if not self.intensity > 0:
            raise DomainError("intensity must be positive")

    @classmethod
    def case2(cls) -> "IntensityScheme":
        return cls("case2", 2 * len(CASE2_LEVELS))

    def multiset(self) -> tuple[float, ...]:
        if self.kind == "uniform":
            return (self.intensity,) * self.n_sources
        return tuple(q for q in CASE2_LEVELS for _ in range(2))

    def to_text(self) -> str:
        if self.kind == "uniform":
            return f"uniform:{self.n_sources}:{self.intensity!r}"
        return f"case2:{self.n_sources}"

    @classmethod
    def from_text(cls, text: str) -> "IntensityScheme":
        parts = text.strip().split(":")
        try:
            if parts[0] == "uniform":
                n = int(parts[1]) if len(parts) > 1 else 20
                q = float(parts[2]) if len(parts) > 2 else REFERENCE_INTENSITY
                return cls("uniform", n, q)
            if parts[0] == "case2":
                return cls.case2()
        except ValueError as exc:
            raise DomainError(f"bad scheme {text!r}") from exc
        raise DomainError(f"bad scheme {text!r}")


def sample_random_layout(spec: DomainSpec, scheme: IntensityScheme, rng: np.random.Generator) -> Layout:
    n = scheme.n_sources
    if n > spec.n_cells:
        raise DomainError(f"{n} sources do not fit in {spec.n_cells} cells")
    cells = rng.choice(spec.n_cells, size=n, replace=False) + 1
    intens = np.asarray(scheme.multiset())
    if scheme.kind != "uniform":
        intens = rng.permutation(intens)
    return Layout(tuple(int(c) for c in cells), tuple(float(q) for q in intens))


@dataclass
class SamplePair:
    index: int
    layout: Layout
    field: np.ndarray
    tmax_K: float
    r_m: float


@dataclass
class DatasetManifest:
    spec: DomainSpec
    scheme: IntensityScheme
    count: int
    seed: int
    format_version: int = FORMAT_VERSION
    created: str = ""

    _KEYS = {
        "L": ("side_length_m", float),
        "k": ("conductivity", float),
        "T0": ("sink_temperature_K", float),
        "sink_edge": ("sink_edge", str),
        "sink_center_fraction": ("sink_center_fraction", float),
        "sink_width": ("sink_width_m", float),
        "N": ("fine_resolution", int),
        "C": ("cell_partition", int),
    }

    def to_text(self) -> str:
        lines = [f"format_version={self.format_version}"]
        for key, (attr, _) in self._KEYS.items():
            val = getattr(self.spec, attr)
            lines.append(f"{key}={val!r}" if isinstance(val, float) else f"{key}={val}")
        lines += [
            f"scheme={self.scheme.to_text()}",
            f"count={self.count}",
            f"seed={self.seed}",
            f"created={self.created}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "DatasetManifest":
        kv = {}
        for ln in text.splitlines():
            if not ln.strip():
                continue
            if "=" not in ln:
                raise FormatError(f"manifest line without '=': {ln!r}")
            key, val = ln.split("=", 1)
            kv[key.strip()] = val.strip()
        try:
            version = int(kv["format_version"])
        except (KeyError, ValueError) as exc:
            raise FormatError("manifest lacks a valid format_version") from exc
        if version != FORMAT_VERSION:
            raise FormatError(f"dataset format version {version} != supported {FORMAT_VERSION}")
        try:
            spec = DomainSpec(**{attr: conv(kv[key]) for key, (attr, conv) in cls._KEYS.items()})
            return cls(
                spec=spec,
                scheme=IntensityScheme.from_text(kv["scheme"]),
                count=int(kv["count"]),
                seed=int(kv["seed"]),
                format_version=version,
                created=kv.get("created", ""),
            )
        except KeyError as exc:
            raise FormatError(f"manifest is missing key {exc.args[0]!r}") from exc
        except (ValueError, DomainError) as exc:
            raise FormatError(f"invalid manifest: {exc}") from exc

    def same_content(self, other: "DatasetManifest") -> bool:
        return (self.spec, self.scheme, self.count, self.seed, self.format_version) == (
            other.spec, other.scheme, other.count, other.seed, other.format_version)


def _checksum(data: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


def encode_record(index: int, layout: Layout, field: np.ndarray) -> bytes:
    parts = [struct.pack("<IH", index, len(layout))]
    parts += [struct.pack("<Hd", c, q) for c, q in zip(layout.cells, layout.intensities)]
    parts.append(pack_field(field))
    body = b"".join(parts)
    return body + struct.pack("<Q", _checksum(body))


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) < n:
        raise FormatError(f"truncated file while reading {what}")
    return data


def _read_record(fh, expected_index: int, spec: DomainSpec, scheme: IntensityScheme) -> SamplePair:
    head = _read_exact(fh, 6, f"sample {expected_index} header")
    index, ns = struct.unpack("<IH", head)
    body = [head]
    pairs = []
    for _ in range(ns):
        chunk = _read_exact(fh, 10, f"sample {expected_index} layout")
        body.append(chunk)
        pairs.append(struct.unpack("<Hd", chunk))
    start = fh.tell()
    try:
        field = read_field_stream(fh)
    except FormatError as exc:
        raise FormatError(f"sample {expected_index}: {exc}") from exc
    end = fh.tell()
    fh.seek(start)
    body.append(fh.read(end - start))
    (stored,) = struct.unpack("<Q", _read_exact(fh, 8, f"sample {expected_index} checksum"))
    if stored != _checksum(b"".join(body)):
        raise FormatError(f"checksum mismatch in sample {expected_index}")
    if index != expected_index:
        raise FormatError(f"sample index {index} found where {expected_index} was expected")
    layout = Layout.from_pairs(pairs)
    tmax = float(field.max())
    r_m = metric_from_tmax(tmax, spec, _reference(scheme))
    return SamplePair(index, layout, field, tmax, r_m)


def _reference(scheme: IntensityScheme) -> float:
    return scheme.intensity if scheme.kind == "uniform" else REFERENCE_INTENSITY


def make_sample(spec: DomainSpec, scheme: IntensityScheme, seed: int, index: int,
                tol: float = DEFAULT_TOL) -> SamplePair:
    rng = np.random.default_rng([seed, index])
    layout = sample_random_layout(spec, scheme, rng)
    try:
        field = solve_temperature(layout, spec, tol=tol)
    except SolverError as exc:
        raise SolverError(f"sample {index}: {exc}", residual=exc.residual) from exc
    tmax = float(field.max())
    return SamplePair(index, layout, field, tmax, metric_from_tmax(tmax, spec, _reference(scheme)))


def _count_valid(path: Path, manifest: DatasetManifest) -> int:
    """Number of intact leading records; a damaged tail is cut off."""
    n = 0
    good_end = 0
    with open(path, "rb") as fh:
        while n < manifest.count:
            try:
                _read_record(fh, n, manifest.spec, manifest.scheme)
            except FormatError:
                break
            n += 1
            good_end = fh.tell()
    if path.stat().st_size != good_end:
        with open(path, "r+b") as fh:
            fh.truncate(good_end)
    return n


def generate_dataset(spec: DomainSpec, scheme: IntensityScheme, count: int, seed: int, out_path,
                     tol: float = DEFAULT_TOL, progress=None) -> DatasetManifest:
    """Write (or resume) a dataset directory; returns its manifest."""
    if count < 0:
        raise DomainError("count must be non-negative")
    out = Path(out_path)
    out.mkdir(parents=True, exist_ok=True)
    manifest = DatasetManifest(spec, scheme, count, seed,
                               created=datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"))
    mpath, spath = out / MANIFEST_NAME, out / SAMPLES_NAME
    start = 0
    if mpath.exists() and spath.exists():
        old = DatasetManifest.from_text(mpath.read_text())
        if old.same_content(manifest):
            manifest.created = old.created
            start = _count_valid(spath, manifest)
        else:
            spath.unlink()
    elif spath.exists():
        spath.unlink()
    mpath.write_text(manifest.to_text())
    with open(spath, "ab") as fh:
        for i in range(start, count):
            pair = make_sample(spec, scheme, seed, i, tol)
            fh.write(encode_record(i, pair.layout, pair.field))
            fh.flush()
            if progress is not None:
                progress(i + 1, count)
        os.fsync(fh.fileno())
    return manifest


def load_dataset(path) -> tuple[DatasetManifest, Iterator[SamplePair]]:
    root = Path(path)
    mpath = root / MANIFEST_NAME
    if not mpath.exists():
        raise FormatError(f"no {MANIFEST_NAME} in {root}")
    manifest = DatasetManifest.from_text(mpath.read_text())
    spath = root / SAMPLES_NAME

    def samples():
        if manifest.count == 0:
            return
        if not spath.exists():
            raise FormatError(f"missing {SAMPLES_NAME} in {root}")
        with open(spath, "rb") as fh:
            for i in range(manifest.count):
                yield _read_record(fh, i, manifest.spec, manifest.scheme)
            if fh.read(1):
                raise FormatError("trailing bytes after the last sample")

    return manifest, samples()
