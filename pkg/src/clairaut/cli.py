"""Command line front end: ``clairaut analyze|transform|evolve|verify``.

Every error exits with the code of its exception class (1 parse, 2 rank,
3 resolution, 4 inconsistent system, 5 verification) after printing one
JSON line to stderr.
"""

import argparse
import functools
import itertools
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ClairautError, IntegrationAborted
from .evolution import GaugeChoice, integrate
from .kernel import available_backends
from .models import load_corpus, load_model


class UsageError(ClairautError):
    exit_code = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _fmt(x):
    return format(float(x), ".17g")


def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _warn(message):
    print(f"clairaut: warning: {message}", file=sys.stderr)


def _split_info(system):
    split = system.split
    return {
        "n": split.n,
        "r": split.rank,
        "regular": [k + 1 for k in split.regular],
        "degenerate": [k + 1 for k in split.degenerate],
        "regular_names": list(system.regular_names),
        "degenerate_names": list(system.degenerate_names),
        "condition_number": split.condition_number,
    }


@functools.lru_cache(maxsize=None)
def _calibrated(backend):
    from .verification import calibrate_convention

    entries = []
    for spec in load_corpus():
        system = spec.build_system(backend)
        initial, guess = spec.initial_point(system)
        entries.append((spec.name, system, initial, guess))
    return calibrate_convention(entries).convention


def _convention(spec, override, backend):
    if override and override != "auto":
        return override, "command line"
    if spec.convention != "auto":
        return spec.convention, "model file"
    return _calibrated(backend), "calibrated on the built-in corpus"


# ---------------------------------------------------------------------------
# subcommands


def cmd_analyze(args):
    from .evolution import gauge_report

    spec = load_model(args.model)
    system = spec.build_system(args.backend)
    initial, _ = spec.initial_point(system)
    gauges = gauge_report(system, initial)
    report = {
        "model": spec.name,
        "model_hash": spec.content_hash,
        **_split_info(system),
        "sample_points": [
            {"q": q.tolist(), "v": v.tolist()} for q, v in spec.samples()
        ],
        "rank_F": gauges.rank_F,
        "gauge_count": gauges.gauge_count,
        "gauge_kernel": gauges.kernel.T.tolist(),
        "evaluated_at": {"q": initial.q.tolist(), "p": initial.p.tolist()},
    }
    _write(args.output, _dump(report))
    return 0


def _grid_axes(system, grid_args, at_args):
    names = list(system.table.coordinates) + list(system.momentum_names)
    fixed = {}
    for item in at_args:
        key, _, value = item.partition("=")
        if key not in names:
            raise UsageError(f"--at: unknown variable {key!r}; choose from {names}")
        fixed[key] = float(value)
    axes = {}
    for item in grid_args:
        key, _, rng = item.partition("=")
        if key not in names:
            raise UsageError(f"--grid: unknown variable {key!r}; choose from {names}")
        try:
            lo, hi, count = rng.split(":")
            axes[key] = np.linspace(float(lo), float(hi), int(count))
        except ValueError:
            raise UsageError(f"--grid expects NAME=LO:HI:COUNT, got {item!r}") from None
    if not grid_args:
        free = [name for name in names if name not in fixed]
        count = 5 if 5 ** len(free) <= 5000 else 3
        axes = {name: np.linspace(-1.0, 1.0, count) for name in free}
    for name in names:
        if name not in axes:
            axes[name] = np.array([fixed.get(name, 0.0)])
    return names, axes


def _monomials(names, axes, degree):
    """Exponent tuples of total degree <= ``degree`` resolvable on the grid."""
    caps = [len(axes[name]) - 1 for name in names]
    out = []
    for exps in itertools.product(*(range(min(c, degree) + 1) for c in caps)):
        if sum(exps) <= degree:
            out.append(exps)
    out.sort(key=lambda e: (sum(e), tuple(-x for x in e)))
    return out


def _monomial_source(names, exps):
    parts = []
    for name, k in zip(names, exps):
        if k == 1:
            parts.append(name)
        elif k > 1:
            parts.append(f"{name}^{k}")
    return "*".join(parts)


def _fit(names, axes, X, y, max_degree):
    scale = 1.0 + float(np.abs(y).max())
    for degree in range(max_degree + 1):
        monos = _monomials(names, axes, degree)
        if len(monos) > len(y):
            break
        A = np.stack([np.prod(X ** np.array(e), axis=1) for e in monos], axis=1)
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        resid = float(np.abs(A @ coef - y).max())
        if resid <= 1e-9 * scale:
            terms = []
            for c, e in zip(coef, monos):
                if abs(c) <= 1e-10 * scale:
                    continue
                mono = _monomial_source(names, e)
                value = float(f"{c:.12g}")
                terms.append(f"{value!r}*{mono}" if mono else repr(value))
            source = " + ".join(terms).replace("+ -", "- ") or "0"
            return {"degree": degree, "polynomial": source, "max_abs_residual": resid}
    return {"degree": None, "polynomial": None, "note": f"no exact fit up to degree {max_degree}"}


def cmd_transform(args):
    spec = load_model(args.model)
    system = spec.build_system(args.backend)
    names, axes = _grid_axes(system, args.grid, args.at)
    X = np.array(list(itertools.product(*(axes[name] for name in names))), dtype=float)
    n = system.n
    h_cols = [f"h_{c}" for c in system.degenerate_names]
    columns = names + ["H0"] + h_cols
    rows = []
    failed = []
    for x in X:
        try:
            d = system.local(x[:n], x[n:])
            rows.append([*x, d.H0, *d.h])
        except ClairautError as exc:
            # e.g. a Hessian minor that degenerates at an isolated grid point
            rows.append([*x] + [np.nan] * (1 + len(h_cols)))
            failed.append({"point": x.tolist(), "kind": exc.kind, "message": str(exc)})
    values = np.array(rows, dtype=float).reshape(len(X), len(columns))
    ok = ~np.isnan(values).any(axis=1)
    fits = {}
    free = [k for k, name in enumerate(names) if len(axes[name]) > 1]
    free_names = [names[k] for k in free]
    for j, col in enumerate(["H0"] + h_cols):
        y = values[ok, len(names) + j]
        fits[col] = _fit(free_names, axes, X[ok][:, free], y, args.max_degree) if len(y) else None
    if args.output:
        lines = [",".join(columns)]
        lines += [",".join(_fmt(x) for x in row) for row in values]
        Path(args.output).write_text("\n".join(lines) + "\n", encoding="utf-8")
    summary = {
        "model": spec.name,
        "model_hash": spec.content_hash,
        **_split_info(system),
        "grid": {name: [float(v) for v in axes[name]] for name in names},
        "points": len(X),
        "points_used": int(ok.sum()),
        "failed_points": failed,
        "fits": fits,
    }
    if not args.output:
        summary["columns"] = columns
        summary["values"] = values.tolist()
    _write(None, _dump(summary))
    return 0


def cmd_evolve(args):
    spec = load_model(args.model)
    system = spec.build_system(args.backend)
    initial, guess = spec.initial_point(system)
    t0 = spec.t0 if args.t0 is None else args.t0
    t1 = spec.t1 if args.t1 is None else args.t1
    dt = spec.dt if args.dt is None else args.dt
    initial = type(initial)(initial.q, initial.p, initial.v, t0)
    convention, source = _convention(spec, args.convention, args.backend)
    notes = []
    gauge = spec.gauge_choice(system)
    if gauge is None and system.m:
        from .evolution import gauge_report

        if gauge_report(system, initial).gauge_count:
            notes.append("no [gauge] section: free degenerate velocities set to zero")
            gauge = GaugeChoice.zero(system)
    try:
        traj = integrate(system, initial, t0, t1, dt, gauge=gauge, convention=convention, guess=guess)
    except IntegrationAborted as exc:
        if args.output:
            _write_trajectory(args.output, system, exc.partial)
        raise
    notes += traj.notes
    for note in notes:
        _warn(note)
    out = Path(args.output or f"{spec.name}.csv")
    columns = _write_trajectory(out, system, traj)
    el = traj.el_residual_max
    meta = {
        "model": spec.name,
        "model_hash": spec.content_hash,
        "tool_version": __version__,
        "split": _split_info(system),
        "rank_F": traj.gauge.rank_F,
        "gauge_count": traj.gauge.gauge_count,
        "convention": convention,
        "convention_source": source,
        "kernel_path": traj.path,
        "tolerances": spec.tolerances.as_dict(),
        "integrate": {"t0": t0, "t1": t1, "dt": dt, "samples": len(traj)},
        "initial": {"q": initial.q.tolist(), "p": initial.p.tolist()},
        "gauge": None if gauge is None else gauge.sources,
        "columns": columns,
        "el_residual_max": None if np.all(np.isnan(el)) else float(np.nanmax(el)),
        "warnings": notes,
    }
    out.with_suffix(".json").write_text(_dump(meta), encoding="utf-8")
    print(f"wrote {len(traj)} samples to {out} and metadata to {out.with_suffix('.json')}")
    return 0


def _write_trajectory(path, system, traj):
    columns = ["t", *system.table.coordinates]
    columns += [f"p_{c}" for c in system.regular_names]
    columns += [f"v_{c}" for c in system.degenerate_names]
    columns += ["H0", "el_residual_max"]
    data = np.column_stack([traj.t, traj.q, traj.p, traj.v, traj.H0, traj.el_residual_max])
    lines = [",".join(columns)]
    lines += [",".join(_fmt(x) for x in row) for row in data]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return columns


def cmd_verify(args):
    from .verification import run_suite

    specs = [] if args.no_corpus else load_corpus()
    specs += [load_model(m) for m in args.models]
    if not specs:
        raise UsageError("nothing to verify")
    convention = None if args.convention == "auto" else args.convention
    report = run_suite(specs, convention=convention, backend=args.backend)
    for c in report.checks:
        verdict = ("PASS" if c.passed else "FAIL") if c.asserted else "INFO"
        print(f"{verdict} {c.model} {c.name} residual={c.max_residual:.3e} tol={c.tolerance:.1e}")
    status = "passed" if report.passed else f"FAILED ({len(report.failures)} check(s))"
    print(f"verify {status} in {report.elapsed:.1f}s, convention {report.convention}")
    if args.report:
        Path(args.report).write_text(report.to_json() + "\n", encoding="utf-8")
    return 0 if report.passed else 5


def _write(path, text):
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------


def build_parser():
    parser = _Parser(prog="clairaut", description="Clairaut-Legendre transform of singular Lagrangians.")
    parser.add_argument("--version", action="version", version=f"clairaut {__version__}")
    parser.add_argument(
        "--backend", choices=available_backends(), default=None, help="kernel implementation"
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("analyze", help="Hessian rank, index split and gauge count")
    p.add_argument("model", help="model file or built-in corpus name")
    p.add_argument("-o", "--output", help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("transform", help="H0 and h_a on a grid, with polynomial fits")
    p.add_argument("model")
    p.add_argument("--grid", action="append", default=[], metavar="NAME=LO:HI:COUNT")
    p.add_argument("--at", action="append", default=[], metavar="NAME=VALUE", help="fix a variable")
    p.add_argument("--max-degree", type=int, default=4)
    p.add_argument("-o", "--output", help="CSV file for the grid values")
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("evolve", help="integrate the equations of motion")
    p.add_argument("model")
    p.add_argument("-o", "--output", help="CSV path (default: <model>.csv); metadata goes next to it")
    p.add_argument("--t0", type=float)
    p.add_argument("--t1", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--convention", choices=("auto", "A", "B"), default=None)
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("verify", help="run the verification suite")
    p.add_argument("models", nargs="*", help="extra model files")
    p.add_argument("--no-corpus", action="store_true", help="skip the built-in corpus")
    p.add_argument("--convention", choices=("auto", "A", "B"), default="auto")
    p.add_argument("--report", help="write the JSON report here")
    p.set_defaults(func=cmd_verify)
    return parser


def _error_line(exc):
    info = {"code": exc.exit_code, "kind": exc.kind, "message": str(exc)}
    if isinstance(exc, IntegrationAborted):
        info["cause"] = exc.cause.kind if isinstance(exc.cause, ClairautError) else type(exc.cause).__name__
    line = getattr(exc, "line", None)
    if line is not None:
        info["line"] = line
        info["column"] = exc.column
    return "clairaut: error: " + json.dumps(info, sort_keys=True)


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return args.func(args)
    except ClairautError as exc:
        print(_error_line(exc), file=sys.stderr)
        return exc.exit_code
    except (ValueError, OSError) as exc:
        wrapped = UsageError(str(exc))
        print(_error_line(wrapped), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
