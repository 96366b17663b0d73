"""SPD matrices, the S-divergence, the Stein kernel and baseline SPD metrics."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    NotPositiveDefinite,
    NotSymmetric,
    UnsupportedKernel,
)

SYMMETRY_TOL = 1e-10
POSITIVITY_FLOOR = 1e-12

# Upper bound on floats held by one stacked batch of pair matrices.
_BATCH_FLOATS = 2_000_000


class SpdMatrix:
    """Immutable symmetric positive definite matrix with a cached eigendecomposition.

    Eigenvalues are stored in descending order and ``eigvecs[:, i]`` pairs with
    ``eigvals[i]``. Build instances with :func:`make_spd`.
    """

    __slots__ = ("entries", "eigvals", "eigvecs", "__dict__")

    def __init__(self, entries: np.ndarray, eigvals: np.ndarray, eigvecs: np.ndarray):
        entries = np.array(entries, dtype=float)
        eigvals = np.array(eigvals, dtype=float)
        eigvecs = np.array(eigvecs, dtype=float)
        for a in (entries, eigvals, eigvecs):
            a.setflags(write=False)
        self.entries = entries
        self.eigvals = eigvals
        self.eigvecs = eigvecs

    @classmethod
    def from_eig(cls, eigvals: np.ndarray, eigvecs: np.ndarray) -> "SpdMatrix":
        """Assemble ``U diag(eigvals) U^T``, re-sorting the pairs descending."""
        eigvals = np.asarray(eigvals, dtype=float)
        order = np.argsort(-eigvals, kind="stable")
        vals = eigvals[order]
        vecs = np.asarray(eigvecs, dtype=float)[:, order]
        entries = (vecs * vals) @ vecs.T
        entries = 0.5 * (entries + entries.T)
        return cls(entries, vals, vecs)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @cached_property
    def log_eigvals(self) -> np.ndarray:
        return np.log(self.eigvals)

    @cached_property
    def logdet(self) -> float:
        return float(np.sum(self.log_eigvals))

    @cached_property
    def logm(self) -> np.ndarray:
        return self.func(np.log)

    @cached_property
    def inv_sqrt(self) -> np.ndarray:
        return self.func(lambda v: 1.0 / np.sqrt(v))

    @cached_property
    def chol(self) -> np.ndarray:
        return np.linalg.cholesky(self.entries)

    def func(self, f) -> np.ndarray:
        """Apply a scalar function to the spectrum: ``U f(L) U^T``."""
        u = self.eigvecs
        return (u * f(self.eigvals)) @ u.T

    def power(self, p: float) -> np.ndarray:
        return self.func(lambda v: v**p)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)

    def __repr__(self) -> str:
        return f"SpdMatrix(dim={self.dim}, eigvals={np.array2string(self.eigvals, precision=4)})"


def make_spd(entries) -> SpdMatrix:
    """Validate a square matrix and return it as an :class:`SpdMatrix`.

    Asymmetry up to ``1e-10 * max(1, |A_ij|)`` is removed by averaging with the
    transpose; anything larger raises :class:`NotSymmetric`. A minimum
    eigenvalue at or below ``1e-12 * max(1, lambda_max)`` raises
    :class:`NotPositiveDefinite`.
    """
    if isinstance(entries, SpdMatrix):
        return entries
    a = np.array(entries, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
        raise DimensionMismatch(f"expected a non-empty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    gap = np.abs(a - a.T)
    if np.any(gap > SYMMETRY_TOL * np.maximum(1.0, np.abs(a))):
        raise NotSymmetric(f"asymmetry {gap.max():.3g} exceeds tolerance")
    a = 0.5 * (a + a.T)
    vals, vecs = np.linalg.eigh(a)
    vals, vecs = vals[::-1], vecs[:, ::-1]
    if vals[-1] <= POSITIVITY_FLOOR * max(1.0, vals[0]):
        raise NotPositiveDefinite(f"minimum eigenvalue {vals[-1]:.3g} is not positive")
    return SpdMatrix(a, vals, vecs)


def _check_dims(x: SpdMatrix, y: SpdMatrix) -> None:
    if x.dim != y.dim:
        raise DimensionMismatch(f"dimensions differ: {x.dim} vs {y.dim}")


def s_divergence(x: SpdMatrix, y: SpdMatrix) -> float:
    """S-divergence ``log det((X+Y)/2) - log det(XY)/2`` in eigenvalue form."""
    _check_dims(x, y)
    mid = np.linalg.eigvalsh(0.5 * (x.entries + y.entries))
    s = np.sum(np.log(mid)) - 0.5 * (x.logdet + y.logdet)
    return max(float(s), 0.0)


def stein_kernel(x: SpdMatrix, y: SpdMatrix, theta: float) -> float:
    if theta <= 0:
        raise ValueError("theta must be positive")
    return float(np.exp(-theta * s_divergence(x, y)))


METRIC_KINDS = (
    "airm",
    "cholesky",
    "euclidean",
    "log-euclidean",
    "power-euclidean",
    "s-divergence-root",
)

_ALIASES = {
    "airm": "airm",
    "cholesky": "cholesky",
    "chk": "cholesky",
    "euclidean": "euclidean",
    "euk": "euclidean",
    "log-euclidean": "log-euclidean",
    "logeuclidean": "log-euclidean",
    "lek": "log-euclidean",
    "power-euclidean": "power-euclidean",
    "powereuclidean": "power-euclidean",
    "pek": "power-euclidean",
    "s-divergence-root": "s-divergence-root",
    "sdivergenceroot": "s-divergence-root",
    "stein": "s-divergence-root",
    "sk": "s-divergence-root",
}


@dataclass(frozen=True)
class MetricId:
    """One of the baseline SPD metrics; ``zeta`` only matters for power-euclidean."""

    kind: str
    zeta: float = 1.0

    def __post_init__(self):
        if self.kind not in METRIC_KINDS:
            raise ValueError(f"unknown metric {self.kind!r}")
        if self.kind == "power-euclidean" and not self.zeta > 0:
            raise ValueError("power-euclidean requires zeta > 0")

    @classmethod
    def parse(cls, text: str) -> "MetricId":
        """Parse ``name`` or ``power-euclidean:<zeta>``."""
        name, _, arg = text.strip().lower().partition(":")
        kind = _ALIASES.get(name)
        if kind is None:
            raise ValueError(f"unknown metric {text!r}")
        if arg:
            return cls(kind, float(arg))
        return cls(kind)

    @property
    def has_kernel(self) -> bool:
        return self.kind != "airm"

    def __str__(self) -> str:
        if self.kind == "power-euclidean":
            return f"{self.kind}:{self.zeta:g}"
        return self.kind


AIRM = MetricId("airm")
CHOLESKY = MetricId("cholesky")
EUCLIDEAN = MetricId("euclidean")
LOG_EUCLIDEAN = MetricId("log-euclidean")
S_DIVERGENCE_ROOT = MetricId("s-divergence-root")

POWER_ZETA_GRID = (0.25, 0.5, 1.0)


def metric_distance(metric: MetricId, x: SpdMatrix, y: SpdMatrix) -> float:
    _check_dims(x, y)
    kind = metric.kind
    if kind == "airm":
        z = x.inv_sqrt @ y.entries @ x.inv_sqrt
        mu = np.linalg.eigvalsh(0.5 * (z + z.T))
        return float(np.sqrt(np.sum(np.log(mu) ** 2)))
    if kind == "cholesky":
        return float(np.linalg.norm(x.chol - y.chol))
    if kind == "euclidean":
        return float(np.linalg.norm(x.entries - y.entries))
    if kind == "log-euclidean":
        return float(np.linalg.norm(x.logm - y.logm))
    if kind == "power-euclidean":
        z = metric.zeta
        return float(np.linalg.norm(x.power(z) - y.power(z)) / z)
    return float(np.sqrt(s_divergence(x, y)))


def metric_kernel(metric: MetricId, x: SpdMatrix, y: SpdMatrix, theta: float) -> float:
    """Gaussian-type kernel ``exp(-theta * d^2)``; AIRM has none."""
    if not metric.has_kernel:
        raise UnsupportedKernel("AIRM does not define a valid exp(-theta d^2) kernel")
    if metric.kind == "s-divergence-root":
        return stein_kernel(x, y, theta)
    return float(np.exp(-theta * metric_distance(metric, x, y) ** 2))


# ---------------------------------------------------------------------------
# Batched Gram assembly


def _pair_chunks(n_a: int, n_b: int | None, d: int) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield index arrays covering all (i, j) pairs; upper triangle when ``n_b`` is None."""
    if n_b is None:
        ii, jj = np.triu_indices(n_a, k=1)
    else:
        ii, jj = np.divmod(np.arange(n_a * n_b), n_b)
    step = max(1, _BATCH_FLOATS // (d * d))
    for start in range(0, len(ii), step):
        yield ii[start : start + step], jj[start : start + step]


def _assemble(values_fn, n_a: int, n_b: int | None, d: int, diag: float) -> np.ndarray:
    if n_b is None:
        out = np.full((n_a, n_a), diag)
        for i, j in _pair_chunks(n_a, None, d):
            v = values_fn(i, j)
            out[i, j] = v
            out[j, i] = v
        return out
    out = np.empty((n_a, n_b))
    for i, j in _pair_chunks(n_a, n_b, d):
        out[i, j] = values_fn(i, j)
    return out


def stack(samples: Sequence[SpdMatrix]) -> np.ndarray:
    return np.stack([s.entries for s in samples])


def _stacked_sq_distance(metric: MetricId, a: Sequence[SpdMatrix], b: Sequence[SpdMatrix] | None):
    """Return a function mapping index arrays into ``a`` and ``b`` to squared distances."""
    other = a if b is None else b
    kind = metric.kind
    if kind == "airm":
        inv_sqrt = np.stack([s.inv_sqrt for s in a])
        ent = stack(other)

        def fn(i, j):
            z = inv_sqrt[i] @ ent[j] @ inv_sqrt[i]
            z = 0.5 * (z + np.swapaxes(z, 1, 2))
            return np.sum(np.log(np.linalg.eigvalsh(z)) ** 2, axis=1)

        return fn
    if kind == "s-divergence-root":
        ea, eb = stack(a), stack(other)
        la = np.array([s.logdet for s in a])
        lb = np.array([s.logdet for s in other])

        def fn(i, j):
            mid = np.linalg.eigvalsh(0.5 * (ea[i] + eb[j]))
            s = np.sum(np.log(mid), axis=1) - 0.5 * (la[i] + lb[j])
            return np.maximum(s, 0.0)

        return fn
    if kind == "cholesky":
        fa = np.stack([s.chol for s in a])
        fb = fa if b is None else np.stack([s.chol for s in other])
    elif kind == "euclidean":
        fa = stack(a)
        fb = fa if b is None else stack(other)
    elif kind == "log-euclidean":
        fa = np.stack([s.logm for s in a])
        fb = fa if b is None else np.stack([s.logm for s in other])
    else:
        z = metric.zeta
        fa = np.stack([s.power(z) for s in a]) / z
        fb = fa if b is None else np.stack([s.power(z) for s in other]) / z

    def fn(i, j):
        return np.sum((fa[i] - fb[j]) ** 2, axis=(1, 2))

    return fn


def sq_distance_matrix(
    metric: MetricId, a: Sequence[SpdMatrix], b: Sequence[SpdMatrix] | None = None
) -> np.ndarray:
    """Pairwise squared distances between ``a`` and ``b`` (or within ``a``)."""
    if not len(a) or (b is not None and not len(b)):
        return np.zeros((len(a), len(a) if b is None else len(b)))
    d = a[0].dim
    if b is not None and b[0].dim != d:
        raise DimensionMismatch("sample sets have different dimensions")
    fn = _stacked_sq_distance(metric, a, b)
    return _assemble(fn, len(a), None if b is None else len(b), d, 0.0)


def distance_matrix(
    metric: MetricId, a: Sequence[SpdMatrix], b: Sequence[SpdMatrix] | None = None
) -> np.ndarray:
    return np.sqrt(sq_distance_matrix(metric, a, b))


def metric_gram(
    metric: MetricId,
    a: Sequence[SpdMatrix],
    b: Sequence[SpdMatrix] | None = None,
    theta: float = 1.0,
) -> np.ndarray:
    if not metric.has_kernel:
        raise UnsupportedKernel("AIRM does not define a valid exp(-theta d^2) kernel")
    return np.exp(-theta * sq_distance_matrix(metric, a, b))


def stein_gram(a: Sequence[SpdMatrix], b: Sequence[SpdMatrix] | None = None, theta: float = 1.0) -> np.ndarray:
    return metric_gram(S_DIVERGENCE_ROOT, a, b, theta)
