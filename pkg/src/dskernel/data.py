"""Labeled SPD datasets: file formats, synthetic generators, descriptors and splits."""

from __future__ import annotations

import hashlib
import os
import struct
import tempfile
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .dsk import EigStack
from .errors import (
    DegenerateCovariance,
    DimensionMismatch,
    FormatError,
    InsufficientClassSamples,
    NotPositiveDefinite,
)
from .spd import SpdMatrix, make_spd


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Ordered SPD samples with integer class labels ``1..M``."""

    samples: tuple
    labels: np.ndarray

    def __post_init__(self):
        samples = tuple(make_spd(s) for s in self.samples)
        labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if len(samples) != labels.size:
            raise ValueError(f"{len(samples)} samples but {labels.size} labels")
        if samples and any(s.dim != samples[0].dim for s in samples):
            raise DimensionMismatch("samples have mixed dimensions")
        if labels.size and labels.min() < 1:
            raise ValueError("class labels must be positive integers")
        labels.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def dim(self) -> int:
        return self.samples[0].dim

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.labels)

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) if self.labels.size else 0

    def check_complete(self) -> None:
        """Every label in ``1..M`` must occur at least once."""
        missing = set(range(1, self.n_classes + 1)) - set(self.labels.tolist())
        if missing:
            raise ValueError(f"labels {sorted(missing)} never occur")

    def class_indices(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.labels == label)

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        sub = LabeledDataset(tuple(self.samples[i] for i in idx), self.labels[idx])
        if "eig" in self.__dict__:
            st = self.eig
            sub.__dict__["eig"] = EigStack(st.vals[idx], st.vecs[idx])
        return sub

    @cached_property
    def eig(self) -> EigStack:
        return EigStack.of(self.samples)

    @cached_property
    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.labels.astype("<i8").tobytes())
        for s in self.samples:
            h.update(np.ascontiguousarray(s.entries, dtype="<f8").tobytes())
        return h.hexdigest()


def merge(*parts: LabeledDataset) -> LabeledDataset:
    return LabeledDataset(
        tuple(s for p in parts for s in p.samples), np.concatenate([p.labels for p in parts])
    )


# ---------------------------------------------------------------------------
# File formats


def _atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    _atomic_write(path, text.encode("utf-8"))


def format_float(x: float) -> str:
    """17 significant digits: enough for an exact binary64 round trip."""
    return format(float(x), ".17g")


def dumps_spdset(ds: LabeledDataset) -> str:
    n, d = len(ds), ds.dim if len(ds) else 0
    lines = [f"spdset v1 {n} {d} {ds.n_classes}"]
    for s, label in zip(ds.samples, ds.labels):
        lines.append(str(int(label)))
        for row in s.entries:
            lines.append(" ".join(format_float(v) for v in row))
    return "\n".join(lines) + "\n"


def dumps_spdb(ds: LabeledDataset) -> bytes:
    n, d = len(ds), ds.dim if len(ds) else 0
    out = [f"spdb v1 {n} {d} {ds.n_classes}\n".encode("ascii")]
    for s, label in zip(ds.samples, ds.labels):
        out.append(struct.pack("<q", int(label)))
        out.append(np.ascontiguousarray(s.entries, dtype="<f8").tobytes())
    return b"".join(out)


def save_dataset(ds: LabeledDataset, path, binary: bool | None = None) -> None:
    """Write ``spdset v1`` text, or ``spdb v1`` binary when ``binary`` or the suffix is ``.spdb``."""
    if binary is None:
        binary = str(path).endswith(".spdb")
    _atomic_write(path, dumps_spdb(ds) if binary else dumps_spdset(ds).encode("ascii"))


def _parse_header(line: str, magic: str):
    parts = line.split()
    if len(parts) != 5 or parts[0] != magic or parts[1] != "v1":
        raise FormatError(f"bad header {line!r}")
    try:
        n, d, m = (int(v) for v in parts[2:])
    except ValueError as exc:
        raise FormatError(f"bad header {line!r}") from exc
    return n, d, m


def _build(mats, labels, m) -> LabeledDataset:
    try:
        ds = LabeledDataset(tuple(mats), np.array(labels, dtype=np.int64))
    except (ValueError, NotPositiveDefinite) as exc:
        raise FormatError(str(exc)) from exc
    if len(ds) and ds.n_classes != m:
        raise FormatError(f"header declares {m} classes, labels reach {ds.n_classes}")
    return ds


def loads_spdset(text: str) -> LabeledDataset:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise FormatError("empty dataset file")
    n, d, m = _parse_header(lines[0], "spdset")
    if len(lines) != 1 + n * (d + 1):
        raise FormatError(f"expected {1 + n * (d + 1)} lines, found {len(lines)}")
    mats, labels = [], []
    pos = 1
    try:
        for _ in range(n):
            labels.append(int(lines[pos]))
            block = np.array([[float(v) for v in lines[pos + 1 + r].split()] for r in range(d)])
            if block.shape != (d, d):
                raise FormatError("matrix row has the wrong length")
            mats.append(block)
            pos += d + 1
    except ValueError as exc:
        raise FormatError(str(exc)) from exc
    return _build(mats, labels, m)


def loads_spdb(data: bytes) -> LabeledDataset:
    nl = data.find(b"\n")
    if nl < 0:
        raise FormatError("missing spdb header")
    n, d, m = _parse_header(data[:nl].decode("ascii", "replace"), "spdb")
    rec = 8 + 8 * d * d
    body = data[nl + 1 :]
    if len(body) != n * rec:
        raise FormatError(f"expected {n * rec} payload bytes, found {len(body)}")
    mats, labels = [], []
    for i in range(n):
        chunk = body[i * rec : (i + 1) * rec]
        labels.append(struct.unpack("<q", chunk[:8])[0])
        mats.append(np.frombuffer(chunk[8:], dtype="<f8").reshape(d, d))
    return _build(mats, labels, m)


def load_dataset(path) -> LabeledDataset:
    raw = Path(path).read_bytes()
    if raw.startswith(b"spdb "):
        return loads_spdb(raw)
    if raw.startswith(b"spdset "):
        return loads_spdset(raw.decode("ascii"))
    raise FormatError(f"{path}: not an spdset or spdb file")


# ---------------------------------------------------------------------------
# Random generation


def make_rng(seed) -> np.random.Generator:
    """Counter-based generator (Philox) for every random draw in the package."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def box_muller(rng: np.random.Generator, size) -> np.ndarray:
    """Standard normals from pairs of uniforms via the Box-Muller transform."""
    shape = (size,) if np.isscalar(size) else tuple(size)
    count = int(np.prod(shape))
    half = (count + 1) // 2
    u1 = 1.0 - rng.random(half)  # (0, 1]
    u2 = rng.random(half)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
    return z[:count].reshape(shape)


@dataclass(frozen=True)
class WishartSpec:
    dim: int
    dof: float
    scale: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if not self.dof >= self.dim:
            raise ValueError(f"degrees of freedom {self.dof} must be at least dim {self.dim}")
        scale = np.eye(self.dim) if self.scale is None else np.asarray(self.scale, dtype=float)
        make_spd(scale)
        object.__setattr__(self, "scale", scale)


def sample_wishart(spec: WishartSpec, count: int, seed) -> list[SpdMatrix]:
    """Draws from ``W_d(scale, dof)`` via the Bartlett decomposition."""
    rng = make_rng(seed)
    d = spec.dim
    chol = np.linalg.cholesky(spec.scale)
    rows, cols = np.tril_indices(d, k=-1)
    out = []
    for _ in range(count):
        a = np.zeros((d, d))
        a[np.arange(d), np.arange(d)] = np.sqrt(rng.chisquare(spec.dof - np.arange(d)))
        a[rows, cols] = box_muller(rng, rows.size)
        la = chol @ a
        out.append(make_spd(la @ la.T))
    return out


def make_wishart_task(d: int, dof: float, tau: float, per_class: int, seed) -> LabeledDataset:
    """Two classes drawn from ``W_d(I, dof)`` (label 1) and ``W_d((1+tau) I, dof)`` (label 2)."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    first = sample_wishart(WishartSpec(d, dof), per_class, [seed, 1])
    second = sample_wishart(WishartSpec(d, dof, (1.0 + tau) * np.eye(d)), per_class, [seed, 2])
    return LabeledDataset(tuple(first + second), np.repeat([1, 2], per_class))


def random_spd(rng: np.random.Generator, d: int, spread: float = 1.0) -> SpdMatrix:
    """Random SPD matrix with log-eigenvalues uniform in ``[-spread, spread]`` and a random basis."""
    q, r = np.linalg.qr(box_muller(rng, (d, d)))
    q = q * np.sign(np.diag(r))
    lam = np.exp(rng.uniform(-spread, spread, d))
    return make_spd((q * lam) @ q.T)


def eigenvalue_bias_experiment(n: int, trials: int = 100, d: int = 40, seed=0, variances=None) -> dict:
    """Mean extreme eigenvalues of sample covariances of ``N(0, diag(1..d))``."""
    if n <= d:
        raise ValueError("need more samples than dimensions")
    var = np.arange(1, d + 1, dtype=float) if variances is None else np.asarray(variances, dtype=float)
    rng = make_rng(seed)
    largest, smallest = [], []
    for _ in range(trials):
        x = box_muller(rng, (n, d)) * np.sqrt(var)
        ev = np.linalg.eigvalsh(np.cov(x, rowvar=False))
        largest.append(ev[-1])
        smallest.append(ev[0])
    return {
        "n": n,
        "trials": trials,
        "mean_largest": float(np.mean(largest)),
        "mean_smallest": float(np.mean(smallest)),
        "true_largest": float(var.max()),
        "true_smallest": float(var.min()),
    }


# ---------------------------------------------------------------------------
# Covariance descriptors


@dataclass(frozen=True)
class ImagePatchSpec:
    patch: tuple = (32, 32)
    grid: tuple = (8, 8)
    fraction: float = 1.0
    ridge: bool = False

    def __post_init__(self):
        if self.patch[0] * self.patch[1] < 6:
            raise ValueError("patch needs at least d + 1 = 6 pixels")
        if not 0 < self.fraction <= 1:
            raise ValueError("fraction must lie in (0, 1]")

    @property
    def image_shape(self) -> tuple:
        return (self.patch[0] * self.grid[0], self.patch[1] * self.grid[1])


def pixel_features(patch: np.ndarray) -> np.ndarray:
    """Per-pixel ``[I, |I_x|, |I_y|, |I_xx|, |I_yy|]`` with central differences.

    Borders use reflect padding. ``x`` runs along columns. Returns an
    ``(h*w, 5)`` array.
    """
    img = np.asarray(patch, dtype=float)
    p = np.pad(img, 1, mode="reflect")
    c = p[1:-1, 1:-1]
    ix = 0.5 * (p[1:-1, 2:] - p[1:-1, :-2])
    iy = 0.5 * (p[2:, 1:-1] - p[:-2, 1:-1])
    ixx = p[1:-1, 2:] - 2.0 * c + p[1:-1, :-2]
    iyy = p[2:, 1:-1] - 2.0 * c + p[:-2, 1:-1]
    feats = np.stack([c, np.abs(ix), np.abs(iy), np.abs(ixx), np.abs(iyy)], axis=-1)
    return feats.reshape(-1, 5)


def feature_covariance(feats: np.ndarray, ridge: bool = False) -> SpdMatrix:
    """Unbiased covariance of the rows of ``feats``, checked for full rank.

    Rank-deficient estimates raise :class:`DegenerateCovariance` unless
    ``ridge`` is set, in which case ``1e-8 * trace / d`` is added to the diagonal.
    """
    feats = np.asarray(feats, dtype=float)
    if len(feats) < feats.shape[1] + 1:
        raise DegenerateCovariance(f"{len(feats)} feature vectors cannot give a full-rank {feats.shape[1]}-d covariance")
    cov = np.cov(feats, rowvar=False)
    cov = 0.5 * (cov + cov.T)
    ev = np.linalg.eigvalsh(cov)
    if ev[0] <= 1e-12 * max(1.0, ev[-1]):
        eps = 1e-8 * np.trace(cov) / cov.shape[0]
        if not ridge or eps <= 0:
            raise DegenerateCovariance(f"covariance is rank deficient (min eigenvalue {ev[0]:.3g})")
        cov = cov + eps * np.eye(cov.shape[0])
    return make_spd(cov)


def covariance_descriptor(patch: np.ndarray, spec: ImagePatchSpec = ImagePatchSpec(), seed=0) -> SpdMatrix:
    """Covariance of the 5-D pixel features of one patch.

    With ``spec.fraction < 1`` only that share of the pixels (drawn without
    replacement) enters the estimate.
    """
    feats = pixel_features(patch)
    if spec.fraction < 1.0:
        keep = max(6, int(round(spec.fraction * len(feats))))
        idx = np.sort(make_rng(seed).permutation(len(feats))[:keep])
        feats = feats[idx]
    return feature_covariance(feats, spec.ridge)


def image_descriptors(image: np.ndarray, spec: ImagePatchSpec = ImagePatchSpec(), seed=0) -> list[SpdMatrix]:
    """Split an image into the configured patch grid and describe each patch.

    Images whose size differs from the grid footprint are first resampled
    (bilinear) to it.
    """
    img = np.asarray(image, dtype=float)
    target = spec.image_shape
    if img.shape != target:
        from scipy.ndimage import zoom

        img = zoom(img, (target[0] / img.shape[0], target[1] / img.shape[1]), order=1)
        img = img[: target[0], : target[1]]
    ph, pw = spec.patch
    out = []
    for r in range(spec.grid[0]):
        for c in range(spec.grid[1]):
            patch = img[r * ph : (r + 1) * ph, c * pw : (c + 1) * pw]
            out.append(covariance_descriptor(patch, spec, seed=[seed, r, c]))
    return out


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit binary PGM (P5) image."""
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace() and raw[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: only binary PGM (P5) is supported")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError(f"{path}: bad PGM header") from exc
    if not 0 < maxval < 256:
        raise FormatError(f"{path}: only 8-bit PGM is supported")
    pos += 1  # single whitespace byte after maxval
    pixels = raw[pos : pos + w * h]
    if len(pixels) != w * h:
        raise FormatError(f"{path}: truncated pixel data")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w).astype(float)


def write_pgm(path, image: np.ndarray) -> None:
    img = np.clip(np.rint(np.asarray(image, dtype=float)), 0, 255).astype(np.uint8)
    h, w = img.shape
    _atomic_write(path, f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


# ---------------------------------------------------------------------------
# Splits


def _require_per_class(labels: np.ndarray, need: int) -> None:
    for c in np.unique(labels):
        if np.count_nonzero(labels == c) < need:
            raise InsufficientClassSamples(f"class {c} has fewer than {need} samples")


def split_indices(labels: Sequence[int], fraction: float, seed) -> tuple[np.ndarray, np.ndarray]:
    labels = np.asarray(labels)
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    _require_per_class(labels, 2)
    rng = make_rng(seed)
    train = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        take = int(np.clip(np.floor(fraction * idx.size + 0.5), 1, idx.size - 1))
        train.extend(rng.permutation(idx)[:take].tolist())
    train = np.sort(np.array(train, dtype=np.int64))
    test = np.setdiff1d(np.arange(labels.size), train)
    return train, test


def split(ds: LabeledDataset, fraction: float = 0.5, seed=0) -> tuple[LabeledDataset, LabeledDataset]:
    """Stratified random split; ``fraction`` of each class goes to the training part."""
    train, test = split_indices(ds.labels, fraction, seed)
    return ds.subset(train), ds.subset(test)


def loo_splits(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    everything = np.arange(n)
    return [(np.delete(everything, i), np.array([i])) for i in range(n)]


def stratified_folds(labels: Sequence[int], folds: int, seed) -> list[np.ndarray]:
    """Partition indices into ``folds`` groups, dealing each shuffled class round-robin."""
    labels = np.asarray(labels)
    if folds < 2:
        raise ValueError("need at least two folds")
    _require_per_class(labels, folds)
    rng = make_rng(seed)
    groups: list[list[int]] = [[] for _ in range(folds)]
    offset = 0
    for c in np.unique(labels):
        for k, i in enumerate(rng.permutation(np.flatnonzero(labels == c))):
            groups[(k + offset) % folds].append(int(i))
        offset += np.count_nonzero(labels == c)
    return [np.sort(np.array(g, dtype=np.int64)) for g in groups]
