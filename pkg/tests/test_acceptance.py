"""Acceptance criteria, one test per criterion.

Each test prints a ``PASS``/``FAIL`` line; the lines are also collected and
repeated in the pytest terminal summary.
"""

import json
import subprocess
import sys
import time

import numpy as np
import pytest

from clairaut.brackets import PhasePoint, bracket_F, curvature_F, observable, poisson
from clairaut.cli import main as cli_main
from clairaut.evolution import gauge_report, integrate
from clairaut.models import load_corpus, load_model
from clairaut.verification import (
    calibrate_convention,
    clairaut_residuals,
    curvature_antisymmetry,
    gauge_invariance,
    halving_ratio,
    independence,
    load_witnesses,
    search_witnesses,
    time_evolution,
)

RESULTS = []


def record(number, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {title} ({detail})"
    RESULTS.append(line)
    print(line)
    assert ok, line


def setup(name):
    spec = load_model(name)
    system = spec.build_system()
    initial, guess = spec.initial_point(system)
    return spec, system, initial, guess


def random_points(system, rng, count=100):
    for _ in range(count):
        yield rng.uniform(-1, 1, system.n), rng.uniform(-1, 1, system.r)


def test_criterion_1_nonsingular_reduction():
    start = time.perf_counter()
    spec, osc, initial, guess = setup("oscillator")
    traj = integrate(osc, initial, 0.0, 10.0, 1e-3, guess=guess)
    elapsed = time.perf_counter() - start
    q0, p0 = initial.q[0], initial.p[0]
    q_err = float(np.abs(traj.q[:, 0] - (q0 * np.cos(traj.t) + p0 * np.sin(traj.t))).max())

    rng = np.random.default_rng(1)
    h_err = br_err = 0.0
    X = observable(osc, "sin(q1)*p1 + q1^3")
    Y = observable(osc, "exp(0.5*p1) - q1*p1")
    for q, p in random_points(osc, rng):
        at = PhasePoint(q, p)
        h_err = max(h_err, abs(osc.h_physical(q, p) - osc.h_standard(q, p)))
        h_err = max(h_err, abs(osc.h_physical(q, p) - 0.5 * (p[0] ** 2 + q[0] ** 2)))
        br_err = max(br_err, abs(bracket_F(X, Y, osc, at) - poisson(X, Y, at)))
    ok = q_err <= 1e-6 and h_err <= 1e-10 and br_err <= 1e-12 and elapsed < 1.0
    record(
        1,
        "nonsingular reduction",
        ok,
        f"max|q-q_exact|={q_err:.2e}<=1e-6, |H0-H_st|={h_err:.2e}<=1e-10, "
        f"|{{,}}_F-{{,}}|={br_err:.2e}<=1e-12, runtime={elapsed:.3f}s<1s",
    )


def test_criterion_2_clairaut_equation():
    rng = np.random.default_rng(2)
    worst = {}
    for spec in load_corpus():
        system = spec.build_system()
        for check in clairaut_residuals(system, rng, count=100, n_constants=10, model=spec.name):
            worst[(spec.name, check.name)] = check.max_residual
    standard = [k for k in worst if k[1].endswith("standard")]
    general = [k for k in worst if k[1].endswith("general")]
    value = max(worst.values())
    ok = value <= 1e-6 and len(standard) == 3 and len(general) == len(load_corpus())
    record(
        2,
        "Clairaut-equation residual",
        ok,
        f"max residual {value:.2e}<=1e-6 over {len(standard)} standard and {len(general)} general model sets",
    )


def test_criterion_3_independence():
    rng = np.random.default_rng(3)
    worst = 0.0
    for name in ("rank1_gauge", "first_order"):
        spec, system, initial, guess = setup(name)
        worst = max(worst, independence(system, rng, count=100, model=name).max_residual)
    spec, gauge, initial, guess = setup("rank1_gauge")
    hand = 0.0
    for q, p in random_points(gauge, rng):
        hand = max(hand, abs(gauge.h_physical(q, p) - (0.5 * p[0] ** 2 + p[0] * q[1])))
    ok = worst <= 1e-8 and hand <= 1e-10
    record(3, "mixed-solution independence", ok, f"probe difference {worst:.2e}<=1e-8, |H0-hand|={hand:.2e}<=1e-10")


def test_criterion_4_full_rank_dynamics():
    entries = [(name, *setup(name)[1:]) for name in ("first_order", "first_order_4d")]
    calibration = calibrate_convention(entries)
    parts = []
    ok = True
    for name, system, initial, guess in entries:
        traj = integrate(system, initial, 0.0, 10.0, 1e-3, convention=calibration.convention, guess=guess)
        ratio = halving_ratio(system, initial, 0.0, 10.0, guess, convention=calibration.convention, model=name)
        ok &= traj.el.max <= 1e-6 and ratio.passed
        parts.append(f"{name}: EL={traj.el.max:.2e}<=1e-6, halving={ratio.max_residual:.1f} in [8,32]")
    record(4, "full-rank-F dynamics", ok, f"convention {calibration.convention}; " + "; ".join(parts))


def test_criterion_5_gauge_sector(capsys):
    assert cli_main(["analyze", "rank1_gauge"]) == 0
    report = json.loads(capsys.readouterr().out)
    spec, system, initial, guess = setup("rank1_gauge")
    checks, traj = gauge_invariance(system, initial, 0.0, 10.0, 1e-3, guess, model="rank1_gauge")
    diff = max(c.max_residual for c in checks)
    on_surface = initial.p[0] == 0.0
    ok = (report["r"], report["rank_F"], report["gauge_count"]) == (1, 0, 1) and diff <= 1e-8 and on_surface
    record(
        5,
        "gauge sector",
        ok,
        f"r={report['r']}, rank_F={report['rank_F']}, gauge_count={report['gauge_count']}, "
        f"p1 difference (v2=0 vs sin t)={diff:.2e}<=1e-8",
    )


def test_criterion_6_curvature():
    rng = np.random.default_rng(6)
    worst = 0.0
    for spec in load_corpus():
        worst = max(worst, curvature_antisymmetry(spec.build_system(), rng, count=100).max_residual)
    spec, fo, initial, guess = setup("first_order")
    hand = 0.0
    for q, p in random_points(fo, rng):
        F = curvature_F(fo, PhasePoint(q, p))
        hand = max(hand, abs(F[0, 1] + F[1, 0]), abs(abs(F[0, 1]) - 1.0), abs(F[0, 1] + 1.0))
    ok = worst <= 1e-12 and hand <= 1e-10
    record(6, "curvature properties", ok, f"||F+F^T||={worst:.2e}<=1e-12, first_order |F12|-1={hand:.2e}<=1e-10")


def test_criterion_7_non_lie_witnesses():
    systems = {spec.name: spec.build_system() for spec in load_corpus()}
    found = search_witnesses(systems)
    frozen = load_witnesses()
    anti, jac = found["anticommutator"], found["jacobi"]
    same = all(
        found[k][f] == frozen[k][f] for k in ("anticommutator", "jacobi") for f in ("model", "X", "q", "p")
    )
    ok = abs(anti["value"]) > 1e-3 and abs(jac["value"]) > 1e-3 and same
    record(
        7,
        "non-Lie bracket",
        ok,
        f"|{{X,X}}_F|={abs(anti['value']):.3f}>1e-3 ({anti['model']}, X={anti['X']}), "
        f"|Jacobi|={abs(jac['value']):.3f}>1e-3 ({jac['model']}); frozen fixture reproduced",
    )


def test_criterion_8_time_evolution():
    asserted, reported = 0.0, []
    models = []
    for spec in load_corpus():
        system = spec.build_system()
        initial, guess = spec.initial_point(system)
        if system.m == 0 or gauge_report(system, initial).gauge_count:
            continue
        models.append(spec.name)
        traj = integrate(system, initial, spec.t0, spec.t1, spec.dt, guess=guess)
        for check in time_evolution(system, traj, stride=25, model=spec.name):
            if "chain_rule" in check.name:
                continue
            if check.asserted:
                asserted = max(asserted, check.max_residual)
            else:
                reported.append(f"{spec.name}:{check.name.split('[')[1][:-1]}={check.max_residual:.2e}")
    ok = asserted <= 1e-5
    record(
        8,
        "time evolution of observables",
        ok,
        f"max |dX/dt-{{X,H0}}_F|={asserted:.2e}<=1e-5 for q^i, p_i, H0 on {', '.join(models)}; "
        f"reported only: {', '.join(reported)}",
    )


@pytest.mark.slow
def test_criterion_9_verify_suite():
    start = time.perf_counter()
    proc = subprocess.run(
        [sys.executable, "-m", "clairaut", "verify"], capture_output=True, text=True, check=False
    )
    elapsed = time.perf_counter() - start
    ok = proc.returncode == 0 and elapsed < 60.0
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr.strip()
    record(9, "verify suite", ok, f"exit {proc.returncode}, {elapsed:.1f}s<60s; {summary}")
