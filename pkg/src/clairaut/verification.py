"""Independent checks of the transform, the bracket and the dynamics.

Each check produces a :class:`Check` record with its residual, tolerance and
verdict.  Checks marked ``asserted=False`` are probes whose outcome is
reported but does not decide the suite's verdict.
"""

import itertools
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .brackets import (
    HamiltonianObservable,
    PhasePoint,
    bracket_F,
    curvature_F,
    jacobi_sum,
    observable,
)
from .errors import (
    CalibrationAmbiguous,
    ClairautError,
    ModelSingular,
    SupremumOnBoundary,
)
from .euler_lagrange import el_residual as _el_residual
from .evolution import GaugeChoice, evolve_observable, gauge_report, integrate, oracle_for, rk4

WITNESS_FILE = Path(__file__).with_name("corpus") / "witnesses.json"
WITNESS_THRESHOLD = 1e-3


@dataclass
class Check:
    name: str
    model: str
    max_residual: float
    tolerance: float
    passed: bool
    witness: dict = None
    asserted: bool = True
    detail: dict = None

    def as_dict(self):
        out = asdict(self)
        for key in ("max_residual", "tolerance"):
            value = out[key]
            out[key] = None if value is None or not np.isfinite(value) else float(value)
        return out


def _check(name, model, residual, tolerance, witness=None, asserted=True, detail=None, above=False):
    """Build a :class:`Check`; ``above=True`` means the residual must exceed the tolerance."""
    residual = float(residual)
    ok = residual > tolerance if above else residual <= tolerance
    return Check(name, model, residual, float(tolerance), bool(ok), witness, asserted, detail)


@dataclass
class VerificationReport:
    checks: list = field(default_factory=list)
    convention: str = None
    elapsed: float = 0.0

    @property
    def passed(self):
        return all(c.passed for c in self.checks if c.asserted)

    @property
    def failures(self):
        return [c for c in self.checks if c.asserted and not c.passed]

    def add(self, check):
        self.checks.append(check)
        return check

    def as_dict(self):
        return {
            "passed": self.passed,
            "convention": self.convention,
            "elapsed_s": round(self.elapsed, 3),
            "checks": [c.as_dict() for c in self.checks],
        }

    def to_json(self):
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# individual checks


def el_residual(system, trajectory):
    """Euler-Lagrange residual components along a trajectory."""
    return _el_residual(
        oracle_for(system), system.split, trajectory.t, trajectory.q, trajectory.p, trajectory.v
    )


def standard_trajectory(system, initial, times, guess=None):
    """Integrate the standard Hamilton equations on the sample times ``times``.

    Uses the oracle's own Newton resolver and the same RK4 step as the
    transform pipeline.
    """
    oracle = oracle_for(system)
    n = system.n
    warm = [np.zeros(n) if guess is None else np.asarray(guess, dtype=float)]

    def f(t, y):
        dq, dp, V = oracle.standard_rhs(y[:n], y[n:], warm[0])
        warm[0] = V
        return np.concatenate([dq, dp])

    Y = np.empty((len(times), 2 * n))
    Y[0] = np.concatenate([initial.q, initial.p])
    for k in range(1, len(times)):
        Y[k] = rk4(f, times[k - 1], Y[k - 1], times[k] - times[k - 1])
    return Y


def nonsingular_equivalence(system, initial, t0, t1, dt, guess=None, tolerance=1e-8, model=""):
    """Max state difference between the transform pipeline and standard Hamilton."""
    if system.r < system.n:
        raise ModelSingular(f"Hessian rank {system.r} < {system.n}: no standard Hamiltonian")
    traj = integrate(system, initial, t0, t1, dt, guess=guess, diagnostics=False)
    Y = standard_trajectory(system, initial, traj.t, guess)
    ours = np.hstack([traj.q, traj.p])
    diff = np.abs(ours - Y).max(axis=1)
    k = int(np.argmax(diff))
    return _check(
        "nonsingular_equivalence",
        model,
        diff[k],
        tolerance,
        witness={"t": float(traj.t[k])},
        detail={"t0": t0, "t1": t1, "dt": dt},
    )


@dataclass
class Calibration:
    convention: str
    residuals: dict


def calibrate_convention(entries, t1=1.0, dt=5e-3, tolerance=1e-6):
    """Pick the contraction convention that zeroes the Euler-Lagrange residual.

    ``entries`` is an iterable of ``(name, system, initial, guess)``.  Only
    models with degenerate directions and an invertible curvature at the
    initial point take part.  Raises :class:`CalibrationAmbiguous` unless
    every participating model accepts exactly one convention and they agree.
    """
    residuals = {}
    verdicts = {}
    for name, system, initial, guess in entries:
        if system.m == 0 or gauge_report(system, initial).gauge_count:
            continue
        res = {}
        for convention in ("A", "B"):
            t0 = initial.t
            try:
                traj = integrate(system, initial, t0, t0 + t1, dt, convention=convention, guess=guess)
                res[convention] = traj.el.max
            except ClairautError:
                res[convention] = float("inf")
        residuals[name] = res
        verdicts[name] = {c for c, value in res.items() if value <= tolerance}
    if not verdicts:
        raise CalibrationAmbiguous("no model with an invertible curvature to calibrate on", residuals=residuals)
    for name, ok in verdicts.items():
        if len(ok) != 1:
            raise CalibrationAmbiguous(
                f"{name}: {len(ok)} conventions pass the Euler-Lagrange check", residuals=residuals
            )
    chosen = {next(iter(ok)) for ok in verdicts.values()}
    if len(chosen) != 1:
        raise CalibrationAmbiguous("models disagree on the convention", residuals=residuals)
    return Calibration(chosen.pop(), residuals)


def legendre_sup_check(system, q, p, tolerance=1e-5, model="", half_width=10.0, step=1e-3):
    """Grid supremum of ``p v - L(q, v)`` against the standard Hamiltonian (n = 1)."""
    if system.n != 1:
        raise ValueError("supremum check is for one-dimensional models")
    grid = np.linspace(-half_width, half_width, int(round(2 * half_width / step)) + 1)
    oracle = oracle_for(system)
    q = float(q)
    p = float(p)
    values = p * grid - oracle.lagrangian(np.full((len(grid), 1), q), grid[:, None])
    k = int(np.argmax(values))
    if k == 0 or k == len(grid) - 1:
        raise SupremumOnBoundary(
            f"p v - L peaks at the grid edge v = {grid[k]:g}; the model is not coercive", v=float(grid[k])
        )
    H = system.h_standard([q], [p])
    return _check(
        "legendre_supremum",
        model,
        abs(values[k] - H),
        tolerance,
        witness={"q": q, "p": p, "v_max": float(grid[k]), "grid_max": float(values[k]), "h_standard": H},
    )


def _random_points(system, rng, count, p_scale=1.0):
    for _ in range(count):
        q = rng.uniform(-1.0, 1.0, system.n)
        p = rng.uniform(-p_scale, p_scale, system.r)
        yield q, p


def curvature_antisymmetry(system, rng, count=100, tolerance=1e-12, model=""):
    worst, where = 0.0, None
    for q, p in _random_points(system, rng, count):
        F = curvature_F(system, PhasePoint(q, p))
        err = float(np.abs(F + F.T).max()) if F.size else 0.0
        if err >= worst:
            worst, where = err, {"q": q.tolist(), "p": p.tolist()}
    return _check("curvature_antisymmetry", model, worst, tolerance, witness=where)


def independence(system, rng, count=100, tolerance=1e-8, model=""):
    """``h_a`` and ``H0`` under two random probes of ``v^a`` and ``pbar_a``."""
    worst, where = 0.0, None
    for q, p in _random_points(system, rng, count):
        v1, v2 = rng.uniform(-1.0, 1.0, (2, system.m))
        b1, b2 = rng.uniform(-1.0, 1.0, (2, system.m))
        h1 = system.local(q, p, v1).h
        h2 = system.local(q, p, v2).h
        H1 = system.h_physical(q, p, b1, v1, check=False)
        H2 = system.h_physical(q, p, b2, v2, check=False)
        err = max(float(np.abs(h1 - h2).max()) if system.m else 0.0, abs(H1 - H2))
        if err >= worst:
            worst, where = err, {"q": q.tolist(), "p": p.tolist()}
    return _check("independence", model, worst, tolerance, witness=where)


def envelope_equivalence(system, rng, count=100, tolerance=1e-10, model=""):
    """``H0`` against the oracle's standard Hamiltonian on nonsingular models."""
    oracle = oracle_for(system)
    worst, where = 0.0, None
    for q, p in _random_points(system, rng, count):
        V = oracle.standard_rhs(q, p, np.zeros(system.n))[2]
        H_st = float(p @ V - oracle.lagrangian(q[None], V[None])[0])
        err = abs(system.h_physical(q, p) - H_st)
        if err >= worst:
            worst, where = err, {"q": q.tolist(), "p": p.tolist()}
    return _check("envelope_equivalence", model, worst, tolerance, witness=where)


def clairaut_residuals(system, rng, count=100, n_constants=10, tolerance=1e-6, model=""):
    """Clairaut-equation residual of the standard and general solutions."""
    checks = []
    step = system.tolerances.fd_step
    if system.r == system.n:
        worst = 0.0
        for q, pbar in _random_points(system, rng, count):
            res = system.clairaut_residual(lambda q, pb: system.h_standard(q, pb), q, pbar, step)
            worst = max(worst, abs(res))
        checks.append(_check("clairaut_residual_standard", model, worst, tolerance))
    worst = 0.0
    for _ in range(n_constants):
        c = rng.uniform(-1.0, 1.0, system.n)
        for _ in range(count):
            q, pbar = rng.uniform(-1.0, 1.0, (2, system.n))
            res = system.clairaut_residual(lambda q, pb, c=c: system.h_general(q, pb, c), q, pbar, step)
            worst = max(worst, abs(res))
    checks.append(_check("clairaut_residual_general", model, worst, tolerance, detail={"constants": n_constants}))
    return checks


def halving_ratio(system, initial, t0, t1, guess=None, dt=0.04, convention="B", model=""):
    """EL residual ratio between step sizes ``dt`` and ``dt / 2``."""
    coarse = integrate(system, initial, t0, t1, dt, convention=convention, guess=guess).el.max
    fine = integrate(system, initial, t0, t1, dt / 2, convention=convention, guess=guess).el.max
    ratio = coarse / fine if fine > 0 else float("inf")
    ok = 8.0 <= ratio <= 32.0
    return Check(
        "rk4_halving_ratio",
        model,
        float(ratio),
        32.0,
        ok,
        detail={"dt": dt, "residual_dt": coarse, "residual_dt_half": fine, "bounds": [8.0, 32.0]},
    )


def gauge_invariance(system, initial, t0, t1, dt, guess=None, convention="B", tolerance=1e-8, model=""):
    """Regular momenta under a zero gauge and ``sin(t)`` in every degenerate velocity."""
    names = [system.table.velocity_of(c) for c in system.degenerate_names]
    zero = GaugeChoice(system, {})
    wave = GaugeChoice(system, {name: "sin(t)" for name in names})
    a = integrate(system, initial, t0, t1, dt, gauge=zero, convention=convention, guess=guess)
    b = integrate(system, initial, t0, t1, dt, gauge=wave, convention=convention, guess=guess)
    dp = float(np.abs(a.p - b.p).max()) if a.p.size else 0.0
    frozen = float(np.abs(a.q[:, list(system.degenerate)] - a.q[0, list(system.degenerate)]).max())
    return [
        _check("gauge_invariance_p", model, dp, tolerance, detail={"gauges": ["0", "sin(t)"]}),
        _check("gauge_zero_freezes_q_alpha", model, frozen, 1e-12),
        _check("el_residual_gauge_sin", model, b.el.max, 1e-6),
    ], a


def time_evolution(system, trajectory, stride=25, tolerance=1e-5, model=""):
    """Time derivative of observables against ``{X, H0}_F`` along a trajectory."""
    checks = []
    table = system.table
    reg = list(system.regular)
    asserted = [table.coordinates[k] for k in reg] + list(system.momentum_names)
    probes = [(src, observable(system, src)) for src in asserted]
    probes.append(("H0", HamiltonianObservable(system)))
    for src, X in probes:
        ev = evolve_observable(X, trajectory, stride=stride)
        checks.append(_check(f"time_evolution[{src}]", model, ev.bracket_residual, tolerance))
    for k in system.degenerate:
        src = table.coordinates[k]
        ev = evolve_observable(observable(system, src), trajectory, stride=stride)
        checks.append(
            _check(
                f"time_evolution[{src}]",
                model,
                ev.bracket_residual,
                tolerance,
                asserted=False,
                detail={"chain_rule_residual": ev.chain_residual},
            )
        )
        checks.append(_check(f"time_evolution_chain_rule[{src}]", model, ev.chain_residual, tolerance))
    return checks


# ---------------------------------------------------------------------------
# non-Lie witnesses


def _candidate_sources(system):
    names = list(system.table.coordinates) + list(system.momentum_names)
    out = list(names)
    out += [f"{a} + {b}" for a, b in itertools.combinations(names, 2)]
    out += [f"{a}*{b}" for a, b in itertools.combinations(names, 2)]
    return out


def _full_rank_everywhere(system, points):
    try:
        return all(gauge_report(system, PhasePoint(q, p)).gauge_count == 0 for q, p in points)
    except ClairautError:
        return False


def search_witnesses(systems, convention="B", count=20, seed=0):
    """Largest ``|{X, X}_F|`` and cyclic Jacobi sum over simple observables.

    ``systems`` maps model names to systems; models with empty degenerate
    sets or singular curvature are skipped.
    """
    rng = np.random.default_rng(seed)
    best_anti = {"value": 0.0}
    best_jacobi = {"value": 0.0}
    for name, system in systems.items():
        if system.m == 0:
            continue
        points = list(_random_points(system, rng, count, p_scale=0.5))
        if not _full_rank_everywhere(system, points):
            continue
        sources = _candidate_sources(system)
        obs = {src: observable(system, src) for src in sources}
        for q, p in points:
            at = PhasePoint(q, p)
            for src, X in obs.items():
                value = bracket_F(X, X, system, at, convention)
                if abs(value) > abs(best_anti["value"]):
                    best_anti = {"model": name, "X": src, "q": q.tolist(), "p": p.tolist(), "value": value}
        # inner brackets of bare coordinates are too simple; sums expose the violation
        base = [src for src in sources if "*" not in src]
        for q, p in points[:3]:
            at = PhasePoint(q, p)
            for triple in itertools.combinations(base, 3):
                X, Y, Z = (obs[s] for s in triple)
                value = jacobi_sum(X, Y, Z, system, at, convention)
                if abs(value) > abs(best_jacobi["value"]):
                    best_jacobi = {
                        "model": name,
                        "X": triple[0],
                        "Y": triple[1],
                        "Z": triple[2],
                        "q": q.tolist(),
                        "p": p.tolist(),
                        "value": value,
                    }
    return {"convention": convention, "anticommutator": best_anti, "jacobi": best_jacobi}


def load_witnesses(path=WITNESS_FILE):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def evaluate_witnesses(systems, witnesses, convention=None):
    """Recompute the frozen witnesses; returns ``(anticommutator, jacobi)`` values."""
    convention = convention or witnesses["convention"]
    w = witnesses["anticommutator"]
    system = systems[w["model"]]
    X = observable(system, w["X"])
    anti = bracket_F(X, X, system, PhasePoint(w["q"], w["p"]), convention)
    w = witnesses["jacobi"]
    system = systems[w["model"]]
    X, Y, Z = (observable(system, w[k]) for k in ("X", "Y", "Z"))
    jac = jacobi_sum(X, Y, Z, system, PhasePoint(w["q"], w["p"]), convention)
    return anti, jac


def witness_checks(systems, witnesses, convention=None):
    anti, jac = evaluate_witnesses(systems, witnesses, convention)
    wa, wj = witnesses["anticommutator"], witnesses["jacobi"]
    return [
        _check("non_lie_anticommutator", wa["model"], abs(anti), WITNESS_THRESHOLD, witness=wa, above=True),
        _check("non_lie_jacobi", wj["model"], abs(jac), WITNESS_THRESHOLD, witness=wj, above=True),
    ]


# ---------------------------------------------------------------------------
# whole suite


def run_suite(specs, convention=None, seed=None, stride=25, backend=None):
    """Run every check on the given model specs.

    ``convention`` fixes the contraction order; by default it is calibrated
    on the models themselves.
    """
    start = time.perf_counter()
    report = VerificationReport()
    entries = []
    for spec in specs:
        system = spec.build_system(backend)
        initial, guess = spec.initial_point(system)
        entries.append((spec, system, initial, guess))

    calibration_entries = [(s.name, sys, ini, g) for s, sys, ini, g in entries]
    try:
        calibration = calibrate_convention(calibration_entries)
        chosen = calibration.convention
        report.add(Check("calibrate_convention", "corpus", 0.0, 0.0, True, detail={
            "convention": chosen, "residuals": calibration.residuals}))
        flipped = [(n, sys.with_curvature_sign(-1.0), ini, g) for n, sys, ini, g in calibration_entries]
        try:
            opposite = calibrate_convention(flipped).convention
        except CalibrationAmbiguous:
            opposite = None
        report.add(Check("calibration_fault_injection", "corpus", 0.0, 0.0, opposite not in (None, chosen),
                         detail={"flipped_curvature_selects": opposite}))
    except CalibrationAmbiguous as exc:
        chosen = None
        report.add(Check("calibrate_convention", "corpus", float("nan"), 0.0, convention is not None,
                         asserted=convention is None, detail={"error": str(exc)}))
    convention = convention or chosen or "B"
    report.convention = convention

    for k, (spec, system, initial, guess) in enumerate(entries):
        name = spec.name
        rng = np.random.default_rng((spec.tolerances.seed if seed is None else seed) + k)
        try:
            _model_checks(report, spec, system, initial, guess, convention, rng, stride)
        except ClairautError as exc:
            report.add(Check("model_error", name, float("nan"), 0.0, False, detail={
                "kind": exc.kind, "message": str(exc)}))

    systems = {spec.name: system for spec, system, _, _ in entries}
    try:
        witnesses = load_witnesses()
        if all(witnesses[k]["model"] in systems for k in ("anticommutator", "jacobi")):
            for check in witness_checks(systems, witnesses, convention):
                report.add(check)
    except (OSError, KeyError, ClairautError) as exc:
        report.add(Check("non_lie_witnesses", "corpus", float("nan"), WITNESS_THRESHOLD, False,
                         detail={"error": str(exc)}))
    report.elapsed = time.perf_counter() - start
    return report


def _model_checks(report, spec, system, initial, guess, convention, rng, stride):
    name = spec.name
    report.add(curvature_antisymmetry(system, rng, model=name))
    if system.m:
        report.add(independence(system, rng, model=name))
    for check in clairaut_residuals(system, rng, model=name):
        report.add(check)
    gauges = gauge_report(system, initial)
    if system.r == system.n:
        report.add(envelope_equivalence(system, rng, model=name))
        report.add(nonsingular_equivalence(system, initial, spec.t0, spec.t1, spec.dt, guess, model=name))
        if system.n == 1:
            for p in (-1.5, 0.5, 2.0):
                report.add(legendre_sup_check(system, initial.q[0], p, model=name))
    if gauges.gauge_count:
        checks, traj = gauge_invariance(system, initial, spec.t0, spec.t1, spec.dt, guess, convention, model=name)
        for check in checks:
            report.add(check)
    else:
        gauge = spec.gauge_choice(system)
        traj = integrate(system, initial, spec.t0, spec.t1, spec.dt, gauge=gauge, convention=convention, guess=guess)
        if system.m:
            report.add(halving_ratio(system, initial, spec.t0, spec.t1, guess, convention=convention, model=name))
        for check in time_evolution(system, traj, stride=stride, model=name):
            report.add(check)
    report.add(_check("el_residual", name, traj.el.max, 1e-6, detail={
        "dt": spec.dt, "unsplit_max": traj.el.unsplit_max}))


def freeze_witnesses(systems, path=WITNESS_FILE, convention="B", seed=0):
    """Search the corpus and write the witnesses file."""
    found = search_witnesses(systems, convention, seed=seed)
    Path(path).write_text(json.dumps(found, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return found

