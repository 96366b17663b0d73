"""Learning theta, alpha (and C) for the discriminative Stein kernel."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .criteria import (
    RADIUS_MARGIN,
    TRACE_MARGIN,
    RadiusMarginObjective,
    alignment_objective,
    class_separability,
    ideal_kernel,
    kernel_alignment,
    scatter_traces,
)
from .data import LabeledDataset, atomic_write_text, format_float, stratified_folds
from .dsk import AdjustmentParams, Mode, dsk_gram
from .errors import DegenerateScatter, FormatError, NonFinite

log = logging.getLogger(__name__)

CRITERIA = ("ka", "cs", "rm", "tm")
ASCENT = ("ka", "cs")
C_GRID = (0.1, 1.0, 10.0, 100.0)
REG_LAMBDA_GRID = (0.0, 1e-3, 1e-2, 1e-1)
ALPHA_FLOOR = 1e-6
LOG_C_BOUNDS = (np.log(1e-6), np.log(1e8))


def parse_criterion(text: str) -> str:
    key = text.strip().lower()
    aliases = {
        "ka": "ka", "alignment": "ka", "kernel-alignment": "ka",
        "cs": "cs", "separability": "cs", "class-separability": "cs",
        "rm": "rm", "radius-margin": "rm",
        "tm": "tm", "trace-margin": "tm",
    }
    if key not in aliases:
        raise ValueError(f"unknown criterion {text!r}")
    return aliases[key]


def theta_grid(d: int) -> tuple[float, ...]:
    """Half-integers ``1/2 .. (d-1)/2`` followed by ``(d-1)/2 * 2**j`` for ``j = 1..4``."""
    if d < 2:
        return (0.5, 1.0, 2.0, 4.0)
    base = [k / 2 for k in range(1, d)]
    top = (d - 1) / 2
    return tuple(base + [top * 2**j for j in range(1, 5)])


@dataclass(frozen=True)
class StoppingRule:
    max_iters: int = 100
    rel_tol: float = 1e-5

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")


@dataclass
class DskModel:
    """A learned kernel: theta*, alpha*, mode, criterion and (for rm/tm) C*."""

    theta: float
    alpha: np.ndarray
    mode: Mode
    criterion: str
    c: float | None = None
    reg_lambda: float = 0.0
    fingerprint: str = ""
    objective: float = float("nan")
    iterations: int = 0
    converged: bool = False
    history: list = field(default_factory=list)
    pair_duals: dict = field(default_factory=dict)

    def __post_init__(self):
        self.alpha = np.array(self.alpha, dtype=float)
        self.mode = Mode.parse(self.mode)
        AdjustmentParams(self.mode, self.alpha)

    @classmethod
    def stein(cls, theta: float, d: int, criterion: str = "sk", c: float | None = None) -> "DskModel":
        """The original Stein kernel expressed as a DSK with alpha = 1."""
        return cls(theta, np.ones(d), Mode.POWER, criterion, c)

    @property
    def params(self) -> AdjustmentParams:
        return AdjustmentParams(self.mode, self.alpha)

    @property
    def dim(self) -> int:
        return self.alpha.size

    def gram(self, a, b=None) -> np.ndarray:
        return dsk_gram(_eig(a), self.theta, self.params, None if b is None else _eig(b))

    def baseline(self) -> "DskModel":
        return DskModel.stein(self.theta, self.dim, "sk", self.c)


def _eig(x):
    return x.eig if isinstance(x, LabeledDataset) else x


# ---------------------------------------------------------------------------
# theta selection


def _criterion_value(criterion: str, dataset: LabeledDataset, theta: float, p: AdjustmentParams, c=None):
    if criterion == "ka":
        k = dsk_gram(dataset.eig, theta, p)
        return kernel_alignment(k, ideal_kernel(dataset.labels))
    if criterion == "cs":
        k = dsk_gram(dataset.eig, theta, p)
        tr_b, tr_w = scatter_traces(k, dataset.labels)
        if tr_w <= 1e-12:
            raise DegenerateScatter(f"within-class scatter {tr_w:.3g} is zero")
        return tr_b / tr_w
    variant = RADIUS_MARGIN if criterion == "rm" else TRACE_MARGIN
    return RadiusMarginObjective(dataset, theta, variant).evaluate(p, c, with_grad=False)[0]


def select_theta(
    dataset: LabeledDataset,
    criterion: str,
    grid: Sequence[float] | None = None,
    c_grid: Sequence[float] = C_GRID,
):
    """Grid search for theta (and C for rm/tm) at alpha = 1.

    ka/cs maximize their criterion, rm/tm minimize the bound over the
    ``theta x C`` grid. Ties keep the earliest grid point (smallest theta,
    then smallest C). Returns ``(theta, C or None, scores)`` where ``scores``
    maps each grid point to its criterion value.
    """
    criterion = parse_criterion(criterion)
    if len(dataset.classes) < 2:
        raise ValueError("theta selection needs at least two classes")
    grid = sorted(theta_grid(dataset.dim) if grid is None else grid)
    p = AdjustmentParams.identity(dataset.dim)
    scores = {}
    best = None
    if criterion in ASCENT:
        for theta in grid:
            v = _criterion_value(criterion, dataset, theta, p)
            scores[theta] = v
            if best is None or v > best[0]:
                best = (v, theta, None)
    else:
        variant = RADIUS_MARGIN if criterion == "rm" else TRACE_MARGIN
        for theta in grid:
            obj = RadiusMarginObjective(dataset, theta, variant)
            for c in sorted(c_grid):
                v = obj.evaluate(p, c, with_grad=False)[0]
                scores[(theta, c)] = v
                if best is None or v < best[0]:
                    best = (v, theta, c)
    return best[1], best[2], scores


# ---------------------------------------------------------------------------
# alpha learning


@dataclass
class AscentResult:
    x: np.ndarray
    value: float
    iterations: int
    converged: bool
    history: list


def gradient_ascent(
    fun: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0: np.ndarray,
    stopping: StoppingRule = StoppingRule(),
    project: Callable[[np.ndarray], np.ndarray] | None = None,
    armijo: float = 1e-4,
    shrink: float = 0.5,
    min_step: float = 1e-10,
    quasi_newton: bool = False,
    max_move: float | None = None,
) -> AscentResult:
    """Maximize ``fun`` by line-searched gradient steps.

    Directions are the plain gradient, or with ``quasi_newton`` the gradient
    preconditioned by a BFGS inverse-Hessian estimate. ``max_move`` optionally
    caps the largest coordinate change of a unit step. Each step starts at
    length 1 and shrinks until the Armijo condition holds and the objective has
    not dropped. Stops on a relative change below ``stopping.rel_tol``, after
    ``stopping.max_iters`` steps, or when no step length is accepted.
    """
    project = project or (lambda x: x)
    x = project(np.array(x0, dtype=float))
    f, g = fun(x)
    if not (np.isfinite(f) and np.all(np.isfinite(g))):
        raise NonFinite("objective is not finite at the starting point", iterate=x)
    history = [f]
    h = None
    converged = False
    it = 0
    while it < stopping.max_iters:
        d = g if h is None else h @ g
        if g @ d <= 0:
            h, d = None, g
        if max_move is not None:
            d = d * min(1.0, max_move / max(float(np.max(np.abs(d))), 1e-300))
        step = 1.0
        accepted = None
        saw_finite = False
        while step >= min_step:
            xn = project(x + step * d)
            try:
                with np.errstate(all="ignore"):
                    fn, gn = fun(xn)
            except (FloatingPointError, np.linalg.LinAlgError):
                fn, gn = np.nan, None
            if np.isfinite(fn) and np.all(np.isfinite(gn)):
                saw_finite = True
                if fn >= f + armijo * (g @ (xn - x)) and fn >= f:
                    accepted = (xn, fn, gn)
                    break
            step *= shrink
        if accepted is None:
            if not saw_finite:
                raise NonFinite("objective became non-finite along the search direction", iterate=x)
            converged = True
            break
        xn, fn, gn = accepted
        it += 1
        s = xn - x
        y = g - gn  # gradient change of the minimized function -fun
        sy = float(s @ y)
        if quasi_newton and sy > 1e-12 * max(1.0, float(np.linalg.norm(s) * np.linalg.norm(y))):
            if h is None:
                h = np.eye(x.size) * (sy / float(y @ y))
            rho = 1.0 / sy
            v = np.eye(x.size) - rho * np.outer(s, y)
            h = v @ h @ v.T + rho * np.outer(s, s)
        change = abs(fn - f)
        x, f, g = xn, fn, gn
        history.append(f)
        if change <= stopping.rel_tol * abs(history[-2]):
            converged = True
            break
    return AscentResult(x, f, it, converged, history)


def learn_alpha(
    dataset: LabeledDataset,
    theta: float,
    criterion: str,
    mode: "Mode | str" = Mode.POWER,
    stopping: StoppingRule = StoppingRule(),
    reg_lambda: float = 0.0,
    c: float | None = None,
    quasi_newton: bool = True,
) -> DskModel:
    """Optimize alpha (and log C for rm/tm) from alpha0 = 1 at fixed theta.

    Steps are BFGS-preconditioned by default; ``quasi_newton=False`` uses the
    raw gradient, which needs far more iterations on badly scaled criteria.
    """
    criterion = parse_criterion(criterion)
    mode = Mode.parse(mode)
    if len(dataset.classes) < 2:
        raise ValueError("learning alpha needs at least two classes")
    d = dataset.dim
    alpha0 = np.ones(d)

    def clip_alpha(a):
        return np.maximum(a, ALPHA_FLOOR) if mode is Mode.COEFFICIENT else a

    if criterion in ASCENT:
        fn = alignment_objective if criterion == "ka" else class_separability

        def fun(x):
            return fn(dataset, theta, AdjustmentParams(mode, x, alpha0), reg_lambda)

        x0, project = alpha0, clip_alpha
    else:
        if c is None:
            raise ValueError("rm/tm learning needs an initial C")
        variant = RADIUS_MARGIN if criterion == "rm" else TRACE_MARGIN
        obj = RadiusMarginObjective(dataset, theta, variant)

        def fun(x):
            j, g = obj.evaluate(AdjustmentParams(mode, x[:d], alpha0), float(np.exp(x[d])))
            return -j, -g

        def project(x):
            out = x.copy()
            out[:d] = clip_alpha(out[:d])
            out[d] = np.clip(out[d], *LOG_C_BOUNDS)
            return out

        x0 = np.append(alpha0, np.log(c))

    res = gradient_ascent(fun, x0, stopping, project=project, quasi_newton=quasi_newton)
    if criterion in ASCENT:
        alpha, c_out, value, hist = res.x, None, res.value, res.history
    else:
        alpha, c_out = res.x[:d], float(np.exp(res.x[d]))
        value, hist = -res.value, [-v for v in res.history]
    log.info("%s/%s: %d iterations, objective %.6g -> %.6g", criterion, mode.value, res.iterations, hist[0], value)
    return DskModel(
        theta=theta,
        alpha=alpha,
        mode=mode,
        criterion=criterion,
        c=c_out,
        reg_lambda=reg_lambda,
        fingerprint=dataset.fingerprint,
        objective=value,
        iterations=res.iterations,
        converged=res.converged,
        history=hist,
    )


def fit(
    dataset: LabeledDataset,
    criterion: str,
    mode: "Mode | str" = Mode.POWER,
    stopping: StoppingRule = StoppingRule(),
    reg_lambda: float = 0.0,
    theta_values: Sequence[float] | None = None,
    c_grid: Sequence[float] = C_GRID,
) -> DskModel:
    """Select theta (and C) on the grid, then learn alpha."""
    criterion = parse_criterion(criterion)
    theta, c, _ = select_theta(dataset, criterion, theta_values, c_grid)
    return learn_alpha(dataset, theta, criterion, mode, stopping, reg_lambda, c)


# ---------------------------------------------------------------------------
# cross-validation


def cross_validate(
    dataset: LabeledDataset,
    folds: int,
    grid: Sequence[dict],
    score: Callable[[LabeledDataset, LabeledDataset, dict], float],
    seed=0,
):
    """Stratified k-fold model selection.

    ``score(train, valid, params)`` returns a validation accuracy. The grid
    point with the best mean accuracy wins; ties keep the earliest point.
    Returns ``(best_params, mean_scores)``.
    """
    if not grid:
        raise ValueError("empty hyperparameter grid")
    parts = stratified_folds(dataset.labels, folds, seed)
    means = []
    for params in grid:
        accs = []
        for k in range(folds):
            valid_idx = parts[k]
            train_idx = np.sort(np.concatenate([parts[j] for j in range(folds) if j != k]))
            accs.append(score(dataset.subset(train_idx), dataset.subset(valid_idx), params))
        means.append(float(np.mean(accs)))
    best = int(np.argmax(means))
    return grid[best], means


# ---------------------------------------------------------------------------
# model files

MODEL_MAGIC = "dskmodel v1"


def dumps_model(model: DskModel) -> str:
    lines = [
        MODEL_MAGIC,
        f"theta = {format_float(model.theta)}",
        f"mode = {model.mode.value}",
        f"criterion = {model.criterion}",
        f"dim = {model.dim}",
        "alpha = " + " ".join(format_float(v) for v in model.alpha),
        f"c = {'none' if model.c is None else format_float(model.c)}",
        f"reg_lambda = {format_float(model.reg_lambda)}",
        f"objective = {format_float(model.objective)}",
        f"iterations = {model.iterations}",
        f"converged = {str(bool(model.converged)).lower()}",
        f"fingerprint = {model.fingerprint or 'none'}",
    ]
    for (a, b), (eta, bias) in sorted(model.pair_duals.items()):
        lines.append(f"pair.{a}.{b}.bias = {format_float(bias)}")
        lines.append(f"pair.{a}.{b}.eta = " + " ".join(format_float(v) for v in eta))
    return "\n".join(lines) + "\n"


def loads_model(text: str) -> DskModel:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0] != MODEL_MAGIC:
        raise FormatError("not a dskmodel v1 file")
    kv = {}
    for ln in lines[1:]:
        key, sep, value = ln.partition("=")
        if not sep:
            raise FormatError(f"bad model line {ln!r}")
        kv[key.strip()] = value.strip()
    try:
        alpha = np.array([float(v) for v in kv["alpha"].split()])
        if alpha.size != int(kv["dim"]):
            raise FormatError("alpha length disagrees with dim")
        duals = {}
        for key, value in kv.items():
            if key.startswith("pair.") and key.endswith(".eta"):
                _, a, b, _ = key.split(".")
                eta = np.array([float(v) for v in value.split()])
                duals[(int(a), int(b))] = (eta, float(kv[f"pair.{a}.{b}.bias"]))
        return DskModel(
            theta=float(kv["theta"]),
            alpha=alpha,
            mode=Mode.parse(kv["mode"]),
            criterion=kv["criterion"],
            c=None if kv["c"] == "none" else float(kv["c"]),
            reg_lambda=float(kv["reg_lambda"]),
            objective=float(kv["objective"]),
            iterations=int(kv["iterations"]),
            converged=kv["converged"] == "true",
            fingerprint="" if kv["fingerprint"] == "none" else kv["fingerprint"],
            pair_duals=duals,
        )
    except KeyError as exc:
        raise FormatError(f"model file lacks {exc.args[0]!r}") from exc
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def save_model(model: DskModel, path) -> None:
    atomic_write_text(path, dumps_model(model))


def load_model(path) -> DskModel:
    with open(path, encoding="utf-8") as fh:
        return loads_model(fh.read())
