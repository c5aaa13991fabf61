"""Labeled feature sets: in-memory type, binary file format, synthetic data.

File layout (little-endian throughout)::

    offset  size     field
    0       4        magic b"FEAT"
    4       4        format version, u32 (= 1)
    8       8        n, u64
    16      8        d, u64
    24      4*n*d    float32 payload, row-major

Labels live in a UTF-8 CSV sidecar next to the feature file
(``query.feat`` -> ``query.labels.csv``) with header ``id,label,camera,role``.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

MAGIC = b"FEAT"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sIQQ")
ROLES = ("query", "gallery")
SIDECAR_HEADER = ["id", "label", "camera", "role"]


class FeatureFormatError(ValueError):
    """Malformed feature or label file. Carries the path and byte offset."""

    def __init__(self, message: str, path: str | Path | None = None, offset: int | None = None):
        self.path = None if path is None else str(path)
        self.offset = offset
        where = ""
        if path is not None:
            where = f"{path}"
            if offset is not None:
                where += f" @ byte {offset}"
            where += ": "
        super().__init__(where + message)


class MagicMismatch(FeatureFormatError):
    pass


class UnsupportedVersion(FeatureFormatError):
    pass


class TruncatedFile(FeatureFormatError):
    pass


class TrailingBytes(FeatureFormatError):
    pass


class NonFiniteFeature(FeatureFormatError):
    pass


class LabelCountMismatch(FeatureFormatError):
    pass


class LabelFileError(FeatureFormatError):
    """Sidecar missing, wrong header, bad role/integer field, or duplicate id."""


class IoFailure(OSError):
    pass


class DegenerateSpec(ValueError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FeatureSet:
    """n x d embedding matrix plus per-row id/label/camera/role.

    ``label == -1`` marks distractors; ``camera == -1`` means no camera info.
    Arrays are copied and made read-only on construction.
    """

    features: np.ndarray
    ids: tuple[str, ...]
    labels: np.ndarray
    cameras: np.ndarray
    roles: tuple[str, ...]

    def __post_init__(self):
        feats = np.asarray(self.features)
        if feats.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {feats.shape}")
        n, d = feats.shape
        if n < 1 or d < 1:
            raise ValueError(f"need n >= 1 and d >= 1, got {feats.shape}")
        if not np.issubdtype(feats.dtype, np.floating):
            feats = feats.astype(np.float64)
        if not np.all(np.isfinite(feats)):
            raise ValueError("features contain NaN or Inf")
        ids = tuple(str(i) for i in self.ids)
        roles = tuple(str(r) for r in self.roles)
        labels = np.asarray(self.labels, dtype=np.int64)
        cameras = np.asarray(self.cameras, dtype=np.int64)
        for name, seq in (("ids", ids), ("labels", labels), ("cameras", cameras), ("roles", roles)):
            if len(seq) != n:
                raise ValueError(f"{name} has {len(seq)} entries, expected {n}")
        if len(set(ids)) != n:
            raise ValueError("ids must be unique")
        bad = set(roles) - set(ROLES)
        if bad:
            raise ValueError(f"unknown role(s) {sorted(bad)}")
        object.__setattr__(self, "features", _frozen(feats))
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "cameras", _frozen(cameras))
        object.__setattr__(self, "roles", roles)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.n

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureSet):
            return NotImplemented
        return (
            self.features.dtype == other.features.dtype
            and self.features.shape == other.features.shape
            and self.features.tobytes() == other.features.tobytes()
            and self.ids == other.ids
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.cameras, other.cameras)
            and self.roles == other.roles
        )

    __hash__ = None

    def with_features(self, features: np.ndarray) -> "FeatureSet":
        return FeatureSet(features, self.ids, self.labels, self.cameras, self.roles)

    def take(self, rows: Sequence[int] | np.ndarray) -> "FeatureSet":
        rows = np.asarray(rows, dtype=np.intp)
        return FeatureSet(
            self.features[rows],
            [self.ids[i] for i in rows],
            self.labels[rows],
            self.cameras[rows],
            [self.roles[i] for i in rows],
        )


def make_feature_set(features, labels=None, cameras=None, role: str = "gallery",
                     prefix: str | None = None) -> FeatureSet:
    """Convenience constructor: sequential ids, label/camera default to -1."""
    features = np.atleast_2d(np.asarray(features))
    n = features.shape[0]
    prefix = role[0] if prefix is None else prefix
    labels = np.full(n, -1) if labels is None else labels
    cameras = np.full(n, -1) if cameras is None else cameras
    return FeatureSet(features, [f"{prefix}{i}" for i in range(n)], labels, cameras, [role] * n)


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".labels.csv") if path.suffix else path.with_name(path.name + ".labels.csv")


def write_feature_set(fs: FeatureSet, path: str | Path) -> None:
    """Write ``fs`` as a float32 feature file plus its label sidecar.

    Non-float32 features are cast; load(write(fs)) is bit-identical only when
    ``fs.features`` is already float32.
    """
    path = Path(path)
    payload = np.ascontiguousarray(fs.features, dtype="<f4")
    try:
        with open(path, "wb") as f:
            f.write(HEADER.pack(MAGIC, FORMAT_VERSION, fs.n, fs.d))
            f.write(payload.tobytes(order="C"))
        with open(sidecar_path(path), "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(SIDECAR_HEADER)
            for row in zip(fs.ids, fs.labels.tolist(), fs.cameras.tolist(), fs.roles):
                w.writerow(row)
    except OSError as exc:
        raise IoFailure(f"cannot write feature set to {path}: {exc}") from exc


def _read_sidecar(path: Path, n: int):
    side = sidecar_path(path)
    try:
        with open(side, newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
    except FileNotFoundError:
        raise LabelFileError("label sidecar not found", side) from None
    except OSError as exc:
        raise IoFailure(f"cannot read {side}: {exc}") from exc
    if not rows or rows[0] != SIDECAR_HEADER:
        raise LabelFileError(f"expected header {','.join(SIDECAR_HEADER)}", side)
    body = [r for r in rows[1:] if r]
    if len(body) != n:
        raise LabelCountMismatch(f"sidecar has {len(body)} rows, feature file has n={n}", side)
    ids, labels, cameras, roles = [], [], [], []
    for lineno, r in enumerate(body, start=2):
        if len(r) != 4:
            raise LabelFileError(f"line {lineno}: expected 4 fields, got {len(r)}", side)
        try:
            labels.append(int(r[1]))
            cameras.append(int(r[2]))
        except ValueError:
            raise LabelFileError(f"line {lineno}: label/camera must be integers", side) from None
        if r[3] not in ROLES:
            raise LabelFileError(f"line {lineno}: role must be one of {ROLES}", side)
        ids.append(r[0])
        roles.append(r[3])
    if len(set(ids)) != n:
        raise LabelFileError("duplicate ids", side)
    return ids, labels, cameras, roles


def load_feature_set(path: str | Path) -> FeatureSet:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise MagicMismatch(f"not a feature file (magic {raw[:4]!r})", path, 0)
    if len(raw) < HEADER.size:
        raise TruncatedFile(f"header needs {HEADER.size} bytes, file has {len(raw)}", path, len(raw))
    _, version, n, d = HEADER.unpack_from(raw)
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"format version {version}, expected {FORMAT_VERSION}", path, 4)
    if n < 1 or d < 1:
        raise FeatureFormatError(f"header declares n={n}, d={d}", path, 8)
    expected = HEADER.size + 4 * n * d
    if len(raw) < expected:
        raise TruncatedFile(
            f"payload needs {4 * n * d} bytes for n={n}, d={d}, found {len(raw) - HEADER.size}",
            path, len(raw))
    if len(raw) > expected:
        raise TrailingBytes(f"{len(raw) - expected} unexpected bytes after payload", path, expected)
    feats = np.frombuffer(raw, dtype="<f4", count=n * d, offset=HEADER.size).reshape(n, d)
    bad = np.flatnonzero(~np.isfinite(feats.ravel()))
    if bad.size:
        raise NonFiniteFeature(
            f"non-finite value at row {bad[0] // d}, column {bad[0] % d}",
            path, HEADER.size + 4 * int(bad[0]))
    ids, labels, cameras, roles = _read_sidecar(path, n)
    return FeatureSet(feats.astype(np.float32), ids, labels, cameras, roles)


@dataclass(frozen=True)
class SynthSpec:
    n_classes: int
    per_class: int
    dim: int
    noise_sigma: float = 0.1
    queries_per_class: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 1 or self.per_class < 1 or self.dim < 1:
            raise DegenerateSpec("n_classes, per_class and dim must be positive")
        if self.queries_per_class < 0:
            raise DegenerateSpec("queries_per_class must be nonnegative")
        if self.per_class < self.queries_per_class:
            raise DegenerateSpec(
                f"per_class={self.per_class} < queries_per_class={self.queries_per_class}")
        if not self.noise_sigma >= 0:
            raise DegenerateSpec("noise_sigma must be >= 0")


def synth_dataset(spec: SynthSpec) -> tuple[FeatureSet, FeatureSet]:
    """Gaussian clusters around random unit centroids, split into query/gallery.

    The generator is numpy's Philox4x64 counter-based bit generator keyed by
    ``spec.seed``; centroids are drawn first (C x dim standard normals), then
    noise (C x per_class x dim), so outputs are reproducible across platforms.
    Within each class the first ``queries_per_class`` points become queries.
    Camera ids alternate 0/1 by within-class position.
    """
    rng = np.random.Generator(np.random.Philox(spec.seed))
    C, P, d, Q = spec.n_classes, spec.per_class, spec.dim, spec.queries_per_class
    centroids = rng.standard_normal((C, d))
    centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)
    noise = rng.standard_normal((C, P, d)) * spec.noise_sigma
    pts = centroids[:, None, :] + noise
    pts /= np.linalg.norm(pts, axis=2, keepdims=True)
    pts = pts.astype(np.float32)
    labels = np.repeat(np.arange(C), P).reshape(C, P)
    cams = np.tile(np.arange(P) % 2, (C, 1))

    def part(sl, role, prefix):
        f = pts[:, sl].reshape(-1, d)
        lab = labels[:, sl].ravel()
        cam = cams[:, sl].ravel()
        ids = [f"{prefix}{i:06d}" for i in range(f.shape[0])]
        return f, ids, lab, cam, [role] * f.shape[0]

    qf, qids, ql, qc, qr = part(slice(0, Q), "query", "q")
    gf, gids, gl, gc, gr = part(slice(Q, P), "gallery", "g")
    if qf.shape[0] == 0 or gf.shape[0] == 0:
        raise DegenerateSpec("these settings leave the query or gallery set empty")
    return FeatureSet(qf, qids, ql, qc, qr), FeatureSet(gf, gids, gl, gc, gr)
