"""Command-line front end: ``dskernel <command> [options]``.

Exit codes: 0 success, 1 failed check, 2 usage or I/O error, 3 solver did not
converge. Every command that writes files also writes the resolved
configuration next to its main output (``<output>.config.json``).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .classify import KnnConfig, evaluate, knn_predict, ovo_predict, ovo_train, paired_t_test
from .criteria import RadiusMarginObjective, alignment_objective, class_separability
from .data import (
    ImagePatchSpec,
    LabeledDataset,
    WishartSpec,
    atomic_write_text,
    image_descriptors,
    load_dataset,
    make_rng,
    make_wishart_task,
    random_spd,
    read_pgm,
    save_dataset,
    split,
)
from .dsk import AdjustmentParams, EigStack, Mode, dsk_gram
from .errors import DskError, NonFinite, NotConverged
from .learn import (
    C_GRID,
    REG_LAMBDA_GRID,
    DskModel,
    StoppingRule,
    cross_validate,
    learn_alpha,
    load_model,
    parse_criterion,
    save_model,
    select_theta,
)
from .spd import POWER_ZETA_GRID, MetricId, distance_matrix, metric_gram, stein_gram
from .study import compare_splits, predict, worker_count

log = logging.getLogger("dskernel")

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_SOLVER = 0, 1, 2, 3


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def _pair(text: str) -> tuple[int, int]:
    a, _, b = text.lower().partition("x")
    return int(a), int(b or a)


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..")
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    return out


def _write_config(output, args) -> None:
    cfg = {k: v for k, v in vars(args).items() if k not in ("func", "config")}
    atomic_write_text(str(output) + ".config.json", json.dumps(cfg, indent=2, sort_keys=True, default=str) + "\n")


def _write_csv(path, header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    text = buf.getvalue()
    if path:
        atomic_write_text(path, text)
    return text


def _stopping(args) -> StoppingRule:
    return StoppingRule(args.max_iters, args.rel_tol)


def _add_stopping(p):
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--rel-tol", type=float, default=1e-5)


def _check_pairing(criterion: str, classifier: str) -> None:
    if criterion in ("rm", "tm") and classifier != "svm":
        raise UsageError(f"criterion {criterion} is only available with --classifier svm")


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    WishartSpec(args.dim, args.dof)
    ds = make_wishart_task(args.dim, args.dof, args.tau, args.per_class, args.seed)
    save_dataset(ds, args.out, binary=args.binary or None)
    _write_config(args.out, args)
    print(f"wrote {len(ds)} samples (d={ds.dim}, {ds.n_classes} classes) to {args.out}")
    return EXIT_OK


def _read_manifest(path) -> list[tuple[str, int]]:
    base = Path(path).parent
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if rows and rows[0][0].strip().lower() == "path":
        rows = rows[1:]
    return [(str(base / r[0].strip()), int(r[1])) for r in rows]


def cmd_extract(args) -> int:
    items = []
    for spec in args.image or []:
        path, _, label = spec.rpartition(":")
        if not path:
            raise UsageError(f"--image expects PATH:LABEL, got {spec!r}")
        items.append((path, int(label)))
    if args.manifest:
        items.extend(_read_manifest(args.manifest))
    if not items:
        raise UsageError("no images given (use --image PATH:LABEL or --manifest)")
    spec = ImagePatchSpec(_pair(args.patch), _pair(args.grid), args.fraction, args.ridge)
    samples, labels = [], []
    for n, (path, label) in enumerate(items):
        descs = image_descriptors(read_pgm(path), spec, seed=[args.seed, n])
        samples.extend(descs)
        labels.extend([label] * len(descs))
    ds = LabeledDataset(tuple(samples), np.array(labels))
    save_dataset(ds, args.out, binary=args.binary or None)
    _write_config(args.out, args)
    print(f"wrote {len(ds)} descriptors from {len(items)} images to {args.out}")
    return EXIT_OK


def _fit_model(train, criterion, mode, stopping, reg_lambda):
    theta, c0, _ = select_theta(train, criterion)
    return learn_alpha(train, theta, criterion, mode, stopping, reg_lambda, c0)


def cmd_tune(args) -> int:
    criterion = parse_criterion(args.criterion)
    _check_pairing(criterion, args.classifier)
    ds = load_dataset(args.data)
    stopping = _stopping(args)
    reg_grid = REG_LAMBDA_GRID if criterion in ("ka", "cs") else (0.0,)
    if args.classifier == "knn":
        grid = [{"reg_lambda": r, "k": k} for r in reg_grid for k in _ints(args.k_grid)]
    elif criterion in ("rm", "tm"):
        grid = [{"reg_lambda": 0.0}]
    else:
        grid = [{"reg_lambda": r, "C": c} for r in reg_grid for c in C_GRID]
    cache = {}

    def score(train, valid, params):
        key = (train.fingerprint, params["reg_lambda"])
        if key not in cache:
            cache[key] = _fit_model(train, criterion, args.mode, stopping, params["reg_lambda"])
        model = cache[key]
        pred = predict(model, train, valid, args.classifier, params.get("k", 1), params.get("C"))
        return evaluate(pred, valid.labels).accuracy

    best, means = cross_validate(ds, args.folds, grid, score, seed=args.seed)
    rows = [[json.dumps(p, sort_keys=True), f"{m:.6f}"] for p, m in zip(grid, means)]
    text = _write_csv(args.out, ["params", "cv_accuracy"], rows)
    if args.out:
        _write_config(args.out, args)
    else:
        sys.stdout.write(text)
    print("best " + json.dumps(best, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    criterion = parse_criterion(args.criterion)
    _check_pairing(criterion, args.classifier)
    ds = load_dataset(args.data)
    model = _fit_model(ds, criterion, args.mode, _stopping(args), args.reg_lambda)
    if args.classifier == "svm":
        c = model.c if model.c is not None else args.C
        model.pair_duals = ovo_train(model.gram(ds), ds.labels, c).duals()
        if model.c is None:
            model.c = c
    save_model(model, args.out_model)
    _write_config(args.out_model, args)
    print(f"theta* = {model.theta:.17g}")
    print("alpha* = " + " ".join(f"{a:.6g}" for a in model.alpha))
    if model.c is not None:
        print(f"C* = {model.c:.6g}")
    print(f"objective = {model.objective:.10g}")
    print(f"iterations = {model.iterations} (converged: {str(model.converged).lower()})")
    return EXIT_OK


def _score(model, train, test, args):
    pred = predict(model, train, test, args.classifier, args.k, args.C)
    return evaluate(pred, test.labels)


def _eval_record(ev) -> dict:
    return {
        "accuracy": ev.accuracy,
        "per_class": {str(k): v for k, v in ev.per_class.items()},
        "labels": list(ev.labels),
        "confusion": ev.confusion.tolist(),
        "n_test": int(ev.confusion.sum()),
    }


def cmd_eval(args) -> int:
    model = load_model(args.model)
    if args.splits:
        if not args.data:
            raise UsageError("--splits needs --data")
        ds = load_dataset(args.data)
        _check_dims(model, ds)
        baseline = load_model(args.baseline) if args.baseline else model.baseline()
        runs = []
        for seed in _ints(args.splits):
            train, test = split(ds, 0.5, seed=seed)
            runs.append((seed, _score(model, train, test, args), _score(baseline, train, test, args)))
        acc = np.array([r[1].accuracy for r in runs])
        base = np.array([r[2].accuracy for r in runs])
        t, p = paired_t_test(acc, base) if len(runs) > 1 else (float("nan"), float("nan"))
        report = {
            "splits": [{"seed": s, "model": _eval_record(a), "baseline": _eval_record(b)} for s, a, b in runs],
            "mean_accuracy": float(acc.mean()),
            "std_accuracy": float(acc.std(ddof=1)) if len(runs) > 1 else 0.0,
            "baseline_mean_accuracy": float(base.mean()),
            "baseline_std_accuracy": float(base.std(ddof=1)) if len(runs) > 1 else 0.0,
            "t_statistic": t,
            "p_value": p,
        }
        summary = f"accuracy {acc.mean():.4f} +/- {report['std_accuracy']:.4f}, baseline {base.mean():.4f}, p = {p:.4g}"
    else:
        if not (args.train and args.test):
            raise UsageError("eval needs --train and --test (or --data with --splits)")
        train, test = load_dataset(args.train), load_dataset(args.test)
        _check_dims(model, train)
        _check_dims(model, test)
        ev = _score(model, train, test, args)
        report = _eval_record(ev)
        summary = f"accuracy {ev.accuracy:.4f}"
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.report:
        atomic_write_text(args.report, text)
        _write_config(args.report, args)
    else:
        sys.stdout.write(text)
    print(summary, file=sys.stderr if not args.report else sys.stdout)
    return EXIT_OK


def _check_dims(model: DskModel, ds: LabeledDataset) -> None:
    if model.dim != ds.dim:
        raise UsageError(f"model is {model.dim}-dimensional but the dataset is {ds.dim}-dimensional")


ALL_METRICS = ("airm", "cholesky", "euclidean", "log-euclidean", "power-euclidean", "sk")


def _metric_list(text: str) -> list[MetricId]:
    names = ALL_METRICS if text == "all" else [t.strip() for t in text.split(",") if t.strip()]
    out = []
    for name in names:
        m = MetricId.parse(name)
        if m.kind == "power-euclidean" and ":" not in name:
            out.extend(MetricId(m.kind, z) for z in POWER_ZETA_GRID)
        else:
            out.append(m)
    return out


def _metric_theta(metric: MetricId, train: LabeledDataset) -> float:
    if metric.kind == "s-divergence-root":
        return select_theta(train, "ka")[0]
    d2 = distance_matrix(metric, train.samples) ** 2
    off = d2[np.triu_indices(len(train), 1)]
    med = float(np.median(off[off > 0])) if np.any(off > 0) else 1.0
    return 1.0 / med


def _metric_accuracy(metric: MetricId, train, test, args) -> float:
    if args.classifier == "svm":
        if not metric.has_kernel:
            raise UsageError(f"{metric} has no valid kernel; use --classifier knn")
        theta = args.theta or _metric_theta(metric, train)
        svm = ovo_train(metric_gram(metric, train.samples, theta=theta), train.labels, args.C)
        pred = ovo_predict(svm, metric_gram(metric, test.samples, train.samples, theta=theta))
    elif metric.has_kernel:
        # ranking by a normalized kernel is the same for every theta
        theta = args.theta or 1.0
        k_cross = metric_gram(metric, test.samples, train.samples, theta=theta)
        pred = knn_predict(k_cross, train.labels, KnnConfig(args.k))
    else:
        d = distance_matrix(metric, test.samples, train.samples)
        pred = knn_predict(-0.5 * d**2, train.labels, KnnConfig(args.k))
    return evaluate(pred, test.labels).accuracy


def cmd_compare(args) -> int:
    ds = load_dataset(args.data)
    metrics = _metric_list(args.metrics)
    if args.classifier == "svm":
        bad = [str(m) for m in metrics if not m.has_kernel]
        if bad:
            raise UsageError(f"no valid kernel for {', '.join(bad)}; use --classifier knn")
    seeds = _ints(args.splits)
    rows = []
    for metric in metrics:
        accs = np.array([_metric_accuracy(metric, *split(ds, 0.5, seed=s), args) for s in seeds])
        std = float(accs.std(ddof=1)) if accs.size > 1 else 0.0
        rows.append([str(metric), f"{accs.mean():.6f}", f"{std:.6f}", len(seeds)])
    text = _write_csv(args.out, ["metric", "mean_accuracy", "std_accuracy", "splits"], rows)
    if args.out:
        _write_config(args.out, args)
    sys.stdout.write(text)
    return EXIT_OK


def _timed(fn, repeat: int) -> float:
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_times(dims, count: int, metrics, repeat: int = 3, seed=0) -> dict:
    """Best-of-``repeat`` seconds to build a ``count x count`` similarity matrix."""
    out = {}
    for d in dims:
        rng = make_rng([seed, d])
        samples = [random_spd(rng, d) for _ in range(count)]
        alpha = 1.0 + 0.1 * rng.standard_normal(d)
        for name in metrics:
            if name == "dsk":
                p = AdjustmentParams(Mode.POWER, alpha)
                fn = lambda: dsk_gram(EigStack.of(samples), 1.0, p)
            elif name == "sk":
                fn = lambda: stein_gram(samples, theta=1.0)
            else:
                metric = MetricId.parse(name)
                fn = lambda: distance_matrix(metric, samples)
            out[(d, name)] = _timed(fn, repeat)
    return out


def cmd_bench(args) -> int:
    dims = _ints(args.dims)
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    times = bench_times(dims, args.count, metrics, args.repeat, args.seed)
    rows = [[d, m, f"{times[(d, m)]:.6f}"] for d in dims for m in metrics]
    text = _write_csv(args.out, ["dim", "metric", "seconds"], rows)
    if args.out:
        _write_config(args.out, args)
    sys.stdout.write(text)
    failed = False
    if args.count >= 2:
        top = max(dims)
        if "airm" in metrics and "sk" in metrics:
            ok = times[(top, "airm")] > times[(top, "sk")]
            failed |= not ok
            print(f"check airm slower than sk at d={top}: {'pass' if ok else 'FAIL'}")
        if "dsk" in metrics and "sk" in metrics:
            for d in dims:
                ratio = times[(d, "dsk")] / max(times[(d, "sk")], 1e-12)
                ok = ratio <= 3.0
                failed |= not ok
                print(f"check dsk <= 3x sk at d={d} (ratio {ratio:.2f}): {'pass' if ok else 'FAIL'}")
    return EXIT_CHECK if failed else EXIT_OK


GRADCHECK_MAX_N = 30


def gradient_errors(ds: LabeledDataset, criterion: str, mode, eps: float, seed=0, theta=None):
    """Analytic versus central-difference gradient at a random alpha near one.

    Returns ``(max relative error, analytic gradient, numeric gradient)``; the
    error is normalized by the largest gradient component.
    """
    criterion = parse_criterion(criterion)
    mode = Mode.parse(mode)
    rng = make_rng(seed)
    d = ds.dim
    alpha = 1.0 + 0.1 * rng.uniform(-1.0, 1.0, d)
    if theta is None:
        theta = select_theta(ds, "ka")[0]
    if criterion in ("ka", "cs"):
        fn = alignment_objective if criterion == "ka" else class_separability

        def f(x):
            return fn(ds, theta, AdjustmentParams(mode, x))

        x0 = alpha
    else:
        obj = RadiusMarginObjective(ds, theta, criterion)

        def f(x):
            return obj.evaluate(AdjustmentParams(mode, x[:d]), float(np.exp(x[d])))

        x0 = np.append(alpha, 0.0)
    _, g = f(x0)
    num = np.empty_like(x0)
    for i in range(x0.size):
        e = np.zeros_like(x0)
        e[i] = eps
        num[i] = (f(x0 + e)[0] - f(x0 - e)[0]) / (2 * eps)
    scale = max(float(np.max(np.abs(g))), float(np.max(np.abs(num))), 1e-300)
    return float(np.max(np.abs(g - num))) / scale, g, num


def cmd_gradcheck(args) -> int:
    ds = load_dataset(args.data)
    if len(ds) > GRADCHECK_MAX_N:
        raise UsageError(f"gradcheck is limited to {GRADCHECK_MAX_N} samples (got {len(ds)})")
    if args.eps >= 1e-3:
        print(f"warning: eps={args.eps:g} is coarse; central-difference truncation error grows as eps^2", file=sys.stderr)
    criteria = ["ka", "cs", "rm", "tm"] if args.criterion == "all" else [parse_criterion(args.criterion)]
    failed = False
    for crit in criteria:
        err, _, _ = gradient_errors(ds, crit, args.mode, args.eps, args.seed, args.theta)
        tol = 5e-3 if crit in ("rm", "tm") else 1e-4
        ok = err <= tol
        failed |= not ok
        print(f"{crit} {Mode.parse(args.mode).value}: max relative error {err:.3e} (tol {tol:g}) {'pass' if ok else 'FAIL'}")
    return EXIT_CHECK if failed else EXIT_OK


def cmd_study(args) -> int:
    criterion = parse_criterion(args.criterion)
    _check_pairing(criterion, args.classifier)
    rows, summary = [], []
    for tau in _floats(args.taus):
        ds = make_wishart_task(args.dim, args.dof, tau, args.per_class, args.seed)
        res = compare_splits(
            ds, range(args.splits), criterion, args.mode, args.classifier, args.k, args.C,
            _stopping(args), worker_count(), tau=tau,
        )
        for o in res.outcomes:
            rows.append([f"{tau:.6g}", o.seed, f"{o.theta:g}", "" if o.c is None else f"{o.c:.6g}",
                         o.iterations, f"{o.acc_dsk:.6f}", f"{o.acc_sk:.6f}"])
        t, p = res.t_test
        summary.append([f"{tau:.6g}", f"{res.acc_dsk.mean():.6f}", f"{res.acc_sk.mean():.6f}",
                        f"{res.gain_pp:.4f}", f"{t:.6g}", f"{p:.6g}"])
        print(f"tau={tau:g}: dsk {res.acc_dsk.mean():.4f} sk {res.acc_sk.mean():.4f} "
              f"gain {res.gain_pp:.2f} pp, p = {p:.4g}", file=sys.stderr)
    header = ["tau", "mean_dsk", "mean_sk", "gain_pp", "t", "p_value"]
    text = _write_csv(args.out, header, summary)
    if args.out:
        _write_csv(str(args.out) + ".splits.csv",
                   ["tau", "split", "theta", "C", "iterations", "acc_dsk", "acc_sk"], rows)
        _write_config(args.out, args)
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dskernel", description="Discriminative Stein kernels for SPD matrices.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON file of option defaults; flags override it")
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=func)
        return p

    p = command("synth", cmd_synth, "generate a two-class Wishart task")
    p.add_argument("--dim", type=int, default=5)
    p.add_argument("--dof", type=float, default=200)
    p.add_argument("--tau", type=float, default=0.1)
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--binary", action="store_true", help="write spdb instead of spdset")
    p.add_argument("--out", required=True)

    p = command("extract", cmd_extract, "covariance descriptors from PGM images")
    p.add_argument("--image", action="append", metavar="PATH:LABEL")
    p.add_argument("--manifest", help="CSV of path,label rows")
    p.add_argument("--patch", default="32x32")
    p.add_argument("--grid", default="8x8")
    p.add_argument("--fraction", type=float, default=1.0)
    p.add_argument("--ridge", action="store_true")
    p.add_argument("--binary", action="store_true")
    p.add_argument("--out", required=True)

    def learning(p):
        p.add_argument("--criterion", default="ka")
        p.add_argument("--mode", type=Mode.parse, default=Mode.POWER)
        p.add_argument("--classifier", choices=("knn", "svm"), default="svm")
        _add_stopping(p)

    p = command("tune", cmd_tune, "cross-validate reg_lambda, C and k")
    p.add_argument("--data", required=True)
    learning(p)
    p.add_argument("--folds", type=int, default=3)
    p.add_argument("--k-grid", default="1,3,5,7,9,11")
    p.add_argument("--out")

    p = command("train", cmd_train, "learn theta*, alpha* (and C*)")
    p.add_argument("--data", required=True)
    learning(p)
    p.add_argument("--reg-lambda", type=float, default=0.0)
    p.add_argument("--C", type=float, default=1.0, help="SVM C for ka/cs models")
    p.add_argument("--cv-folds", type=int, default=0, help="accepted for symmetry with tune; use tune to select hyperparameters")
    p.add_argument("--out-model", required=True)

    p = command("eval", cmd_eval, "score a model on a test set or repeated splits")
    p.add_argument("--model", required=True)
    p.add_argument("--train")
    p.add_argument("--test")
    p.add_argument("--data", help="dataset for --splits")
    p.add_argument("--splits", help="comma-separated split seeds, e.g. 0..19")
    p.add_argument("--baseline", help="baseline model file (default: SK with the model's theta)")
    p.add_argument("--classifier", choices=("knn", "svm"), default="svm")
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--C", type=float, default=None)
    p.add_argument("--report")

    p = command("compare", cmd_compare, "accuracy of the classical SPD metrics")
    p.add_argument("--data", required=True)
    p.add_argument("--metrics", default="all")
    p.add_argument("--classifier", choices=("knn", "svm"), default="knn")
    p.add_argument("--splits", default="0")
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--C", type=float, default=1.0)
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--out")

    p = command("bench", cmd_bench, "time similarity-matrix construction")
    p.add_argument("--dims", default="5,10,20,50,100")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--metrics", default="airm,sk,dsk,log-euclidean,cholesky,euclidean")
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--out")

    p = command("gradcheck", cmd_gradcheck, "compare analytic and finite-difference gradients")
    p.add_argument("--data", required=True)
    p.add_argument("--criterion", default="all")
    p.add_argument("--mode", type=Mode.parse, default=Mode.POWER)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--theta", type=float, default=None)

    p = command("study", cmd_study, "DSK versus SK on two-class Wishart tasks over repeated splits")
    p.add_argument("--dim", type=int, default=5)
    p.add_argument("--dof", type=float, default=200)
    p.add_argument("--taus", default="0.1")
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--splits", type=int, default=20)
    p.add_argument("--criterion", default="rm")
    p.add_argument("--mode", type=Mode.parse, default=Mode.POWER)
    p.add_argument("--classifier", choices=("knn", "svm"), default="svm")
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--C", type=float, default=1.0)
    _add_stopping(p)
    p.add_argument("--out")
    return parser


def _config_path(argv) -> str | None:
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _apply_config(parser, argv):
    """Parse ``argv``; values from ``--config`` become defaults that flags override."""
    argv = list(sys.argv[1:] if argv is None else argv)
    path = _config_path(argv)
    if path is None:
        return parser.parse_args(argv)
    subs = parser._subparsers._group_actions[0].choices
    command = next((tok for tok in argv if tok in subs), None)
    if command is None:
        return parser.parse_args(argv)
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    sub = subs[command]
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        if dest not in known or dest in ("help", "config"):
            raise UsageError(f"unknown config key {key!r} for {command}")
        action = known[dest]
        if action.type is not None and isinstance(value, str):
            value = action.type(value)
        defaults[dest] = value
    sub.set_defaults(**defaults)
    for action in sub._actions:
        if action.dest in defaults:
            action.required = False
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (NotConverged, NonFinite) as exc:
        extra = f" (residual {exc.residual:.3g}, {exc.iterations} iterations)" if isinstance(exc, NotConverged) else ""
        print(f"error: solver failed: {exc}{extra}", file=sys.stderr)
        return EXIT_SOLVER
    except (UsageError, DskError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
