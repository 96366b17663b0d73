"""Eigenvalue adjustment and the discriminative Stein kernel (DSK).

A matrix ``X = U diag(lam) U^T`` is adjusted by a vector ``alpha`` acting on its
descending eigenvalues, either as powers (``lam_i ** alpha_i``) or as
coefficients (``alpha_i * lam_i``). The DSK is the Stein kernel evaluated on
the adjusted pair, so it stays a Mercer kernel on the usual theta set.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, NonPositiveCoefficient
from .spd import SpdMatrix, _pair_chunks, s_divergence


class Mode(str, Enum):
    POWER = "power"
    COEFFICIENT = "coefficient"

    @classmethod
    def parse(cls, text: "str | Mode") -> "Mode":
        if isinstance(text, Mode):
            return text
        key = text.strip().lower()
        if key in ("power", "pow", "p"):
            return cls.POWER
        if key in ("coefficient", "coef", "c"):
            return cls.COEFFICIENT
        raise ValueError(f"unknown adjustment mode {text!r}")

    @property
    def short(self) -> str:
        return "p" if self is Mode.POWER else "c"


@dataclass(frozen=True)
class AdjustmentParams:
    """Adjustment vector ``alpha`` with its mode and prior ``alpha0`` (all ones by default)."""

    mode: Mode
    alpha: np.ndarray
    alpha0: np.ndarray = field(default=None)

    def __post_init__(self):
        mode = Mode.parse(self.mode)
        alpha = np.array(self.alpha, dtype=float).ravel()
        alpha0 = np.ones_like(alpha) if self.alpha0 is None else np.array(self.alpha0, dtype=float).ravel()
        if alpha0.shape != alpha.shape:
            raise DimensionMismatch("alpha and alpha0 lengths differ")
        if not np.all(np.isfinite(alpha)):
            raise ValueError("alpha must be finite")
        if mode is Mode.COEFFICIENT and np.any(alpha <= 0):
            raise NonPositiveCoefficient("coefficient mode requires every alpha_i > 0")
        alpha.setflags(write=False)
        alpha0.setflags(write=False)
        object.__setattr__(self, "mode", mode)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "alpha0", alpha0)

    @classmethod
    def identity(cls, d: int, mode: "Mode | str" = Mode.POWER) -> "AdjustmentParams":
        return cls(Mode.parse(mode), np.ones(d))

    @property
    def dim(self) -> int:
        return self.alpha.shape[0]

    def with_alpha(self, alpha) -> "AdjustmentParams":
        return AdjustmentParams(self.mode, alpha, self.alpha0)

    # Spectral maps shared by the scalar and batched paths. ``lam`` has the
    # eigenvalues in its last axis.

    def adjusted_eigvals(self, lam: np.ndarray) -> np.ndarray:
        if self.mode is Mode.POWER:
            return lam**self.alpha
        return lam * self.alpha

    def adjusted_log_eigvals(self, log_lam: np.ndarray) -> np.ndarray:
        if self.mode is Mode.POWER:
            return log_lam * self.alpha
        return log_lam + np.log(self.alpha)

    def eigval_derivative(self, lam: np.ndarray) -> np.ndarray:
        """d(adjusted lam_z)/d(alpha_z)."""
        if self.mode is Mode.POWER:
            return np.log(lam) * lam**self.alpha
        return np.broadcast_to(lam, lam.shape).copy()

    def log_derivative(self, lam: np.ndarray) -> np.ndarray:
        """tr(X~^-1 dX~/d alpha_z) = d(log adjusted lam_z)/d(alpha_z)."""
        if self.mode is Mode.POWER:
            return np.log(lam)
        return np.broadcast_to(1.0 / self.alpha, lam.shape).copy()


def _check(x: SpdMatrix, p: AdjustmentParams) -> None:
    if x.dim != p.dim:
        raise DimensionMismatch(f"alpha has length {p.dim} but matrix is {x.dim}x{x.dim}")


def adjust(x: SpdMatrix, p: AdjustmentParams) -> SpdMatrix:
    _check(x, p)
    if np.all(p.alpha == 1.0):
        return x  # identity in both modes; skip the rounding of U diag(lam) U^T
    return SpdMatrix.from_eig(p.adjusted_eigvals(x.eigvals), x.eigvecs)


def adjusted_s_divergence(x: SpdMatrix, y: SpdMatrix, p: AdjustmentParams) -> float:
    _check(x, p)
    _check(y, p)
    return s_divergence(adjust(x, p), adjust(y, p))


def dsk_kernel(x: SpdMatrix, y: SpdMatrix, theta: float, p: AdjustmentParams) -> float:
    if theta <= 0:
        raise ValueError("theta must be positive")
    return float(np.exp(-theta * adjusted_s_divergence(x, y, p)))


def dsk_gradient(x: SpdMatrix, y: SpdMatrix, theta: float, p: AdjustmentParams) -> np.ndarray:
    """Gradient of ``dsk_kernel(x, y, theta, p)`` with respect to ``alpha``."""
    _check(x, p)
    _check(y, p)
    xt = (x.eigvecs * p.adjusted_eigvals(x.eigvals)) @ x.eigvecs.T
    yt = (y.eigvecs * p.adjusted_eigvals(y.eigvals)) @ y.eigvecs.T
    mu, v = np.linalg.eigh(0.5 * (xt + yt))
    s = np.sum(np.log(mu)) - 0.5 * (
        np.sum(p.adjusted_log_eigvals(x.log_eigvals)) + np.sum(p.adjusted_log_eigvals(y.log_eigvals))
    )
    k = np.exp(-theta * max(s, 0.0))
    # u_z^T M^-1 u_z for every eigenvector u_z, from the eigenpairs of M
    qx = np.sum((v.T @ x.eigvecs) ** 2 / mu[:, None], axis=0)
    qy = np.sum((v.T @ y.eigvecs) ** 2 / mu[:, None], axis=0)
    bracket = (
        p.log_derivative(x.eigvals)
        + p.log_derivative(y.eigvals)
        - p.eigval_derivative(x.eigvals) * qx
        - p.eigval_derivative(y.eigvals) * qy
    )
    return 0.5 * theta * k * bracket


# ---------------------------------------------------------------------------
# Batched Gram matrices


@dataclass(frozen=True)
class EigStack:
    """Stacked eigendecompositions of a sample set (values descending)."""

    vals: np.ndarray  # (n, d)
    vecs: np.ndarray  # (n, d, d)

    @classmethod
    def of(cls, samples: Sequence[SpdMatrix]) -> "EigStack":
        if not len(samples):
            raise ValueError("empty sample set")
        d = samples[0].dim
        if any(s.dim != d for s in samples):
            raise DimensionMismatch("samples have mixed dimensions")
        return cls(np.stack([s.eigvals for s in samples]), np.stack([s.eigvecs for s in samples]))

    def __len__(self) -> int:
        return self.vals.shape[0]

    @property
    def dim(self) -> int:
        return self.vals.shape[1]


def _as_stack(samples) -> EigStack:
    return samples if isinstance(samples, EigStack) else EigStack.of(samples)


class _Adjusted:
    def __init__(self, st: EigStack, p: AdjustmentParams, grad: bool):
        if st.dim != p.dim:
            raise DimensionMismatch(f"alpha has length {p.dim} but matrices are {st.dim}-dimensional")
        lam = st.vals
        self.vecs = st.vecs
        adj = p.adjusted_eigvals(lam)
        self.mats = np.einsum("nij,nj,nkj->nik", st.vecs, adj, st.vecs)
        self.logdet = np.sum(p.adjusted_log_eigvals(np.log(lam)), axis=1)
        if grad:
            self.dlam = p.eigval_derivative(lam)
            self.dlog = p.log_derivative(lam)


def _pair_values(a: _Adjusted, b: _Adjusted, i, j, theta: float, grad: bool):
    m = 0.5 * (a.mats[i] + b.mats[j])
    if not grad:
        mu = np.linalg.eigvalsh(m)
        s = np.sum(np.log(mu), axis=1) - 0.5 * (a.logdet[i] + b.logdet[j])
        return np.exp(-theta * np.maximum(s, 0.0)), None
    mu, v = np.linalg.eigh(m)
    s = np.sum(np.log(mu), axis=1) - 0.5 * (a.logdet[i] + b.logdet[j])
    k = np.exp(-theta * np.maximum(s, 0.0))
    vt = np.swapaxes(v, 1, 2)
    inv_mu = (1.0 / mu)[:, :, None]
    qa = np.sum((vt @ a.vecs[i]) ** 2 * inv_mu, axis=1)
    qb = np.sum((vt @ b.vecs[j]) ** 2 * inv_mu, axis=1)
    bracket = a.dlog[i] + b.dlog[j] - a.dlam[i] * qa - b.dlam[j] * qb
    return k, (0.5 * theta) * k[:, None] * bracket


def dsk_gram(
    samples,
    theta: float,
    p: AdjustmentParams,
    other=None,
    with_grad: bool = False,
):
    """DSK Gram matrix, optionally with its derivative tensor.

    ``samples`` and ``other`` are sequences of :class:`SpdMatrix` or prebuilt
    :class:`EigStack` objects. Within one set the result is symmetric with a
    unit diagonal. With ``with_grad`` the return value is ``(K, dK)`` where
    ``dK[z]`` is the elementwise derivative of ``K`` with respect to ``alpha_z``.
    """
    if theta <= 0:
        raise ValueError("theta must be positive")
    st = _as_stack(samples)
    a = _Adjusted(st, p, with_grad)
    n, d = len(st), st.dim
    if other is None:
        b, m_cols = a, None
        k_mat = np.eye(n)
    else:
        sb = _as_stack(other)
        b, m_cols = _Adjusted(sb, p, with_grad), len(sb)
        k_mat = np.empty((n, m_cols))
    dk = np.zeros((d,) + k_mat.shape) if with_grad else None
    for i, j in _pair_chunks(n, m_cols, d):
        k, g = _pair_values(a, b, i, j, theta, with_grad)
        k_mat[i, j] = k
        if other is None:
            k_mat[j, i] = k
        if with_grad:
            dk[:, i, j] = g.T
            if other is None:
                dk[:, j, i] = g.T
    return (k_mat, dk) if with_grad else k_mat
