"""Solvers for the two small QPs behind the radius-margin criterion.

Both maximize a concave quadratic over a polyhedron of the form
``{x >= 0, y^T x = const}``: the probability simplex (enclosing sphere) and the
hard-margin SVM dual. Iterates stay feasible, the objective never decreases,
and whenever the support looks settled the exact optimum on that face is
computed from its KKT system ("face polish"). A polish is only accepted when it
is feasible and does not lower the objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import Infeasible, NotConverged

KKT_TOL = 1e-8
# Objective decreases below this relative size are rounding, not regress.
MONOTONE_SLACK = 1e-12


@dataclass(frozen=True)
class QpReport:
    iterations: int
    residual: float
    objective: float
    converged: bool


def project_to_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto ``{x >= 0, sum(x) = 1}`` (sort-based, exact)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    tau = css[rho] / (rho + 1.0)
    return np.maximum(v - tau, 0.0)


def _iteration_cap(n: int, max_iter: int | None) -> int:
    return 10 * n * n if max_iter is None else max_iter


def _face_solve(p_ss: np.ndarray, c_s: np.ndarray, y_s: np.ndarray, rhs: float):
    """Stationary point of ``c^T x - x^T P x / 2`` subject to ``y^T x = rhs`` on one face."""
    m = len(c_s)
    a = np.zeros((m + 1, m + 1))
    a[:m, :m] = p_ss
    a[:m, m] = y_s
    a[m, :m] = y_s
    b = np.append(c_s, rhs)
    try:
        sol = np.linalg.solve(a, b)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(a, b, rcond=None)[0]
    if not np.all(np.isfinite(sol)):
        return None
    return sol[:m]


def _polish(p_mat, c, y, rhs, idx, rounds: int = 4):
    """Face solve on ``idx``, dropping coordinates that come out negative."""
    for _ in range(rounds):
        if idx.size == 0:
            return None
        sol = _face_solve(p_mat[np.ix_(idx, idx)], c[idx], y[idx], rhs)
        if sol is None:
            return None
        if np.all(sol >= 0):
            out = np.zeros(c.size)
            out[idx] = sol
            return out
        idx = idx[sol > 0]
    return None


# ---------------------------------------------------------------------------
# Simplex


def _simplex_residual(g: np.ndarray, beta: np.ndarray) -> float:
    return max(0.0, float(np.max(g) - np.min(g[beta > 0])))


def maximize_on_simplex(
    q: np.ndarray,
    lin: np.ndarray,
    tol: float = KKT_TOL,
    max_iter: int | None = None,
    init: np.ndarray | None = None,
):
    """Maximize ``lin^T b - b^T Q b`` over the probability simplex.

    Projected-gradient ascent with backtracking, plus face polishing. Returns
    ``(beta, value, report)``; raises :class:`NotConverged` at the iteration cap
    (``10 * l**2`` by default).
    """
    q = np.asarray(q, dtype=float)
    lin = np.asarray(lin, dtype=float)
    n = lin.size
    if q.shape != (n, n):
        raise ValueError("Q and the linear term disagree in size")

    def value(b):
        return float(lin @ b - b @ q @ b)

    if n == 1:
        beta = np.ones(1)
        v = value(beta)
        return beta, v, QpReport(0, 0.0, v, True)

    beta = np.full(n, 1.0 / n) if init is None else project_to_simplex(init)
    f = value(beta)
    lip = 2.0 * max(float(np.max(np.abs(np.linalg.eigvalsh(q)))), 1e-12)
    step = 1.0 / lip
    cap = _iteration_cap(n, max_iter)
    stable, last_support, polished = 0, None, None
    residual = np.inf
    it = 0
    while it < cap:
        g = lin - 2.0 * q @ beta
        residual = _simplex_residual(g, beta)
        if residual <= tol:
            f = value(beta)
            return beta, f, QpReport(it, residual, f, True)
        support = beta > 0
        if last_support is not None and np.array_equal(support, last_support):
            stable += 1
        else:
            stable = 0
        last_support = support
        fresh = polished is None or not np.array_equal(polished, support)
        if stable >= 3 and (fresh or stable % 16 == 0):
            polished = support.copy()
            cand = _polish(2.0 * q, lin, np.ones(n), 1.0, np.flatnonzero(support))
            if cand is not None:
                fc = value(cand)
                if fc >= f - MONOTONE_SLACK * max(1.0, abs(f)):
                    beta, f = cand, fc
                    it += 1
                    continue
        # backtracking projected-gradient step
        t = min(step * 4.0, 1e12)
        while True:
            cand = project_to_simplex(beta + t * g)
            fc = value(cand)
            if fc >= f + 1e-4 * g @ (cand - beta) - 1e-15 * abs(f) or t < 1e-16:
                break
            t *= 0.5
        step = t
        if fc >= f:
            beta, f = cand, fc
            g = lin - 2.0 * q @ beta
        # exact step on the maximal violating pair: shift mass from j to i
        i = int(np.argmax(g))
        j = int(np.argmin(np.where(beta > 0, g, np.inf)))
        a = q[i, i] + q[j, j] - 2.0 * q[i, j]
        if g[i] > g[j]:
            s = min((g[i] - g[j]) / (2.0 * max(a, 1e-12)), beta[j])
            beta = beta.copy()
            beta[i] += s
            beta[j] = 0.0 if s == beta[j] else beta[j] - s
            f += s * (g[i] - g[j]) - s * s * a
        it += 1
    raise NotConverged(
        f"simplex QP did not converge in {cap} iterations (residual {residual:.3g})",
        residual=float(residual),
        solution=beta,
        iterations=it,
    )


# ---------------------------------------------------------------------------
# SVM dual


def _svm_violation(v: np.ndarray, eta: np.ndarray, t: np.ndarray):
    up = (t > 0) | (eta > 0)
    low = (t < 0) | (eta > 0)
    vu = np.where(up, v, -np.inf)
    vl = np.where(low, v, np.inf)
    i = int(np.argmax(vu))
    j = int(np.argmin(vl))
    return i, j, max(0.0, float(vu[i] - vl[j]))


def maximize_svm_dual(
    q: np.ndarray,
    t: np.ndarray,
    tol: float = KKT_TOL,
    max_iter: int | None = None,
    init: np.ndarray | None = None,
):
    """Maximize ``sum(eta) - eta^T Q eta / 2`` with ``t^T eta = 0`` and ``eta >= 0``.

    ``Q`` has the labels folded in (``Q_ij = t_i t_j k_ij``). Pairwise updates on
    the maximal violating pair keep the equality constraint exact; face
    polishing finishes the job. Returns ``(eta, value, report)``.
    """
    q = np.asarray(q, dtype=float)
    t = np.asarray(t, dtype=float)
    n = t.size
    if q.shape != (n, n):
        raise ValueError("Q and the labels disagree in size")
    if not (np.any(t > 0) and np.any(t < 0)):
        raise Infeasible("SVM dual needs both labels; only eta = 0 is feasible")

    def value(e):
        return float(e.sum() - 0.5 * e @ q @ e)

    eta = np.zeros(n) if init is None else np.maximum(np.asarray(init, dtype=float), 0.0)
    if init is not None and abs(t @ eta) > 1e-12 * max(1.0, eta.sum()):
        eta = np.zeros(n)
    grad = 1.0 - q @ eta
    f = value(eta)
    cap = _iteration_cap(n, max_iter)
    stable, last_support, polished = 0, None, None
    residual = np.inf
    it = 0
    while it < cap:
        v = t * grad
        i, j, residual = _svm_violation(v, eta, t)
        if residual <= tol:
            f = value(eta)
            return eta, f, QpReport(it, residual, f, True)
        support = eta > 0
        if last_support is not None and np.array_equal(support, last_support):
            stable += 1
        else:
            stable = 0
        last_support = support
        fresh = polished is None or not np.array_equal(polished, support)
        if stable >= 3 and (fresh or stable % 16 == 0):
            polished = support.copy()
            cand = _polish(q, np.ones(n), t, 0.0, np.flatnonzero(support))
            if cand is not None and np.any(cand > 0):
                fc = value(cand)
                if fc >= f - MONOTONE_SLACK * max(1.0, abs(f)):
                    eta, f = cand, fc
                    grad = 1.0 - q @ eta
                    it += 1
                    continue
        a = q[i, i] + q[j, j] - 2.0 * t[i] * t[j] * q[i, j]
        if a <= 1e-14 * max(1.0, q[i, i] + q[j, j]) and t[i] > 0 and t[j] < 0:
            # ascent direction with no curvature and no bound: the margin is undefined
            raise Infeasible(f"SVM dual is unbounded (samples {i} and {j} coincide in feature space)")
        s = (v[i] - v[j]) / max(a, 1e-12)
        if t[i] < 0:
            s = min(s, eta[i])
        if t[j] > 0:
            s = min(s, eta[j])
        eta[i] += t[i] * s
        eta[j] -= t[j] * s
        # exact zero at the bound keeps the support bookkeeping clean
        if t[i] < 0 and eta[i] < 1e-300:
            eta[i] = 0.0
        if t[j] > 0 and eta[j] < 1e-300:
            eta[j] = 0.0
        grad -= s * (t[i] * q[:, i] - t[j] * q[:, j])
        f += s * (v[i] - v[j]) - 0.5 * s * s * a
        it += 1
        if it % 256 == 0:
            f = value(eta)
    raise NotConverged(
        f"SVM dual did not converge in {cap} iterations (residual {residual:.3g})",
        residual=float(residual),
        solution=eta,
        iterations=it,
    )
