"""Kernel learning criteria with gradients with respect to the adjustment vector.

* kernel alignment against the ideal +/-1 label kernel (maximized)
* class separability tr(S_B) / tr(S_W) in feature space (maximized)
* the radius-margin bound summed over one-vs-one class pairs, and its
  trace-margin variant (minimized, jointly over alpha and log C)
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .dsk import AdjustmentParams, dsk_gram
from .errors import DegenerateScatter, Infeasible, NonFinite, SizeMismatch, ZeroKernel
from .qp import QpReport, maximize_on_simplex, maximize_svm_dual

SCATTER_FLOOR = 1e-12


def ideal_kernel(labels) -> np.ndarray:
    labels = np.asarray(labels)
    return np.where(labels[:, None] == labels[None, :], 1.0, -1.0)


def kernel_alignment(k: np.ndarray, t: np.ndarray) -> float:
    k = np.asarray(k, dtype=float)
    t = np.asarray(t, dtype=float)
    if k.shape != t.shape:
        raise SizeMismatch(f"kernel {k.shape} vs ideal kernel {t.shape}")
    kk = float(np.sum(k * k))
    if kk == 0.0:
        raise ZeroKernel("alignment is undefined for an all-zero kernel")
    return float(np.sum(t * k) / np.sqrt(np.sum(t * t) * kk))


def _alignment_grad(k, dk, t):
    tk = np.sum(t * k)
    kk = np.sum(k * k)
    tt = np.sum(t * t)
    t_dk = np.einsum("ij,zij->z", t, dk)
    k_dk = np.einsum("ij,zij->z", k, dk)
    return t_dk / np.sqrt(tt * kk) - tk * k_dk / (np.sqrt(tt) * kk**1.5)


def _regularize(value, grad, p: AdjustmentParams, reg_lambda: float):
    if reg_lambda:
        diff = p.alpha - p.alpha0
        value = value - reg_lambda * float(diff @ diff)
        grad = grad - 2.0 * reg_lambda * diff
    return value, grad


def _require_classes(dataset, at_least: int = 2):
    if len(dataset.classes) < at_least:
        raise ValueError(f"criterion needs at least {at_least} classes, got {len(dataset.classes)}")


def alignment_objective(dataset, theta: float, p: AdjustmentParams, reg_lambda: float = 0.0):
    """Regularized kernel alignment of the DSK Gram matrix and its alpha-gradient."""
    _require_classes(dataset)
    k, dk = dsk_gram(dataset.eig, theta, p, with_grad=True)
    t = ideal_kernel(dataset.labels)
    value = kernel_alignment(k, t)
    return _regularize(value, _alignment_grad(k, dk, t), p, reg_lambda)


def scatter_traces(k: np.ndarray, labels) -> tuple[float, float]:
    """``(tr(S_B), tr(S_W))`` in the feature space of Gram matrix ``k``."""
    labels = np.asarray(labels)
    n = labels.size
    within_means = 0.0
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        within_means += k[np.ix_(idx, idx)].sum() / idx.size
    tr_b = within_means - k.sum() / n
    tr_w = float(np.trace(k)) - within_means
    return float(tr_b), float(tr_w)


def _scatter_grads(dk: np.ndarray, labels):
    labels = np.asarray(labels)
    n = labels.size
    within = np.zeros(dk.shape[0])
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        within += dk[:, idx][:, :, idx].sum(axis=(1, 2)) / idx.size
    d_b = within - dk.sum(axis=(1, 2)) / n
    d_w = np.trace(dk, axis1=1, axis2=2) - within
    return d_b, d_w


def class_separability(dataset, theta: float, p: AdjustmentParams, reg_lambda: float = 0.0):
    """``tr(S_B) / tr(S_W)`` of the DSK feature map, with its alpha-gradient."""
    _require_classes(dataset)
    k, dk = dsk_gram(dataset.eig, theta, p, with_grad=True)
    tr_b, tr_w = scatter_traces(k, dataset.labels)
    if tr_w <= SCATTER_FLOOR:
        raise DegenerateScatter(f"within-class scatter {tr_w:.3g} is zero")
    d_b, d_w = _scatter_grads(dk, dataset.labels)
    value = tr_b / tr_w
    grad = (d_b * tr_w - tr_b * d_w) / tr_w**2
    return _regularize(value, grad, p, reg_lambda)


# ---------------------------------------------------------------------------
# QP-backed pieces


@dataclass(frozen=True)
class SvmDual:
    eta: np.ndarray
    objective: float  # ||w||^2 / 2
    bias: float
    support: np.ndarray
    report: QpReport

    @property
    def norm_w_sq(self) -> float:
        return 2.0 * self.objective


@dataclass(frozen=True)
class SphereSolution:
    beta: np.ndarray
    radius_sq: float
    report: QpReport


def solve_svm_dual(k_tilde: np.ndarray, t, init=None, **qp_options) -> SvmDual:
    """Hard-margin dual on the ridged kernel ``k + I/C``; ``t`` holds +/-1 labels.

    The bias is the common value of ``t_i - sum_j eta_j t_j k~_ij`` over the
    support vectors (their KKT multiplier), averaged for numerical stability.
    """
    t = np.asarray(t, dtype=float)
    k_tilde = np.asarray(k_tilde, dtype=float)
    if not np.all(np.isin(t, (-1.0, 1.0))):
        raise ValueError("labels must be +1 or -1")
    if not (np.any(t > 0) and np.any(t < 0)):
        raise Infeasible("SVM needs samples of both classes")
    eta, value, report = maximize_svm_dual(np.outer(t, t) * k_tilde, t, init=init, **qp_options)
    support = np.flatnonzero(eta > 0)
    margins = t - k_tilde @ (eta * t)
    bias = float(np.mean(margins[support])) if support.size else 0.0
    return SvmDual(eta, value, bias, support, report)


def solve_enclosing_sphere(k_tilde: np.ndarray, init=None, **qp_options) -> SphereSolution:
    k_tilde = np.asarray(k_tilde, dtype=float)
    beta, value, report = maximize_on_simplex(k_tilde, np.diag(k_tilde).copy(), init=init, **qp_options)
    return SphereSolution(beta, max(value, 0.0), report)


RADIUS_MARGIN = "rm"
TRACE_MARGIN = "tm"


def class_pairs(classes) -> list[tuple[int, int]]:
    return list(combinations(sorted(int(c) for c in classes), 2))


@dataclass
class PairTerm:
    pair: tuple
    index: np.ndarray
    t: np.ndarray
    svm: SvmDual
    radius_sq: float
    sphere: SphereSolution | None


class RadiusMarginObjective:
    """Evaluator for ``J = sum_{i<j} R_ij^2 ||w_ij||^2`` over one-vs-one pairs.

    Calls take ``(alpha, log_c)`` style parameters and return ``(J, grad)``
    with the gradient ordered as ``[dJ/dalpha..., dJ/dlog C]``. QP solutions
    from the previous call warm-start the next one; the optimal duals are held
    fixed when differentiating.
    """

    def __init__(self, dataset, theta: float, variant: str = RADIUS_MARGIN):
        if variant not in (RADIUS_MARGIN, TRACE_MARGIN):
            raise ValueError(f"unknown variant {variant!r}")
        _require_classes(dataset)
        self.dataset = dataset
        self.theta = theta
        self.variant = variant
        self.pairs = []
        labels = dataset.labels
        for a, b in class_pairs(dataset.classes):
            idx = np.flatnonzero((labels == a) | (labels == b))
            t = np.where(labels[idx] == a, 1.0, -1.0)
            self.pairs.append(((a, b), idx, t))
        self._warm: dict = {}
        self.terms: list[PairTerm] = []

    def evaluate(self, p: AdjustmentParams, c: float, with_grad: bool = True):
        if not c > 0:
            raise ValueError("C must be positive")
        if with_grad:
            k, dk = dsk_gram(self.dataset.eig, self.theta, p, with_grad=True)
        else:
            k, dk = dsk_gram(self.dataset.eig, self.theta, p), None
        if not np.all(np.isfinite(k)):
            raise NonFinite("kernel matrix has non-finite entries", iterate=p.alpha)
        total = 0.0
        g_alpha = np.zeros(p.dim)
        g_c = 0.0
        terms = []
        for pair, idx, t in self.pairs:
            l = idx.size
            kt = k[np.ix_(idx, idx)] + np.eye(l) / c
            warm_eta, warm_beta = self._warm.get(pair, (None, None))
            try:
                svm = solve_svm_dual(kt, t, init=warm_eta)
            except Infeasible as exc:
                raise Infeasible(str(exc), pair=pair) from exc
            w2 = svm.norm_w_sq
            sphere = None
            if self.variant == RADIUS_MARGIN:
                sphere = solve_enclosing_sphere(kt, init=warm_beta)
                r2 = sphere.radius_sq
            else:
                r2 = float(np.trace(kt) - kt.sum() / l)
            self._warm[pair] = (svm.eta, None if sphere is None else sphere.beta)
            total += r2 * w2
            terms.append(PairTerm(pair, idx, t, svm, r2, sphere))
            if not with_grad:
                continue
            et = svm.eta * t
            dks = dk[:, idx][:, :, idx]
            dw2 = -np.einsum("i,zij,j->z", et, dks, et)
            dw2_dc = float(et @ et) / c**2
            if sphere is not None:
                beta = sphere.beta
                dr2 = np.einsum("i,zii->z", beta, dks) - np.einsum("i,zij,j->z", beta, dks, beta)
                dr2_dc = (-1.0 + float(beta @ beta)) / c**2
            else:
                dr2 = np.trace(dks, axis1=1, axis2=2) - dks.sum(axis=(1, 2)) / l
                dr2_dc = (1.0 - l) / c**2
            g_alpha += w2 * dr2 + r2 * dw2
            g_c += w2 * dr2_dc + r2 * dw2_dc
        self.terms = terms
        if not with_grad:
            return total, None
        return total, np.append(g_alpha, c * g_c)


def radius_margin_objective(dataset, theta: float, p: AdjustmentParams, c: float, variant: str = RADIUS_MARGIN):
    """``(J, grad)`` of the pairwise radius-margin (or trace-margin) bound.

    ``grad`` stacks the alpha components followed by the derivative with
    respect to ``log C``.
    """
    return RadiusMarginObjective(dataset, theta, variant).evaluate(p, c)
