"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line."""

import csv
import json
import math
import time

import numpy as np
import pytest

from conftest import closed_form_1d
from oracles import shooting_curves
from fucik_link import concentration as conc
from fucik_link.cli import EXIT_OK, run_command
from fucik_link.discrete_operator import Domain, build_operator, compute_spectrum
from fucik_link.fucik_spectrum import (FucikPoint, curve_point, jumping_functional,
                                       membership_residual, m_level, n_level,
                                       spectrum_for_level, tau_map, theta_map, trace_curve)
from fucik_link.linking_solver import Nonlinearity, build_geometry, c_star, minimax_search

pytestmark = pytest.mark.slow


def _read_curve(path):
    with open(path) as fh:
        return [(float(r["a"]), float(r["b"]), float(r["bracket_width"]))
                for r in csv.DictReader(fh)]


@pytest.fixture(scope="module")
def curve_runs(tmp_path_factory):
    """Criterion-2 CLI run, twice with the same seed."""
    op = build_operator(Domain.parse("interval:pi"), 511)
    lam = compute_spectrum(op, 3).values
    a_lo, a_hi = lam[0] + 0.2, lam[2] - 0.2
    grid = np.linspace(a_lo, a_hi, 26)[1:-1]
    runs = []
    for k in range(2):
        out = tmp_path_factory.mktemp(f"curves{k}")
        t0 = time.perf_counter()
        status, _ = run_command(["curves", "--domain", "interval:pi", "--n", "511", "--level", "2",
                                 "--kind", "both", "--seed", "7", "--a-grid",
                                 f"{float(grid[0])!r}:{float(grid[-1])!r}:24", "--out", str(out)])
        runs.append((status, out, time.perf_counter() - t0))
    return lam, runs


@pytest.fixture(scope="module")
def solve_runs(tmp_path_factory):
    """Criterion-7 CLI runs (below and above the curves), twice each."""
    cases = {"below": ("5.0", "4.1"), "above": ("5.0", "6.2")}
    runs = {}
    for geom, (a, b) in cases.items():
        for k in range(2):
            out = tmp_path_factory.mktemp(f"solve_{geom}{k}")
            t0 = time.perf_counter()
            status, _ = run_command(["solve", "--domain", "square:pi", "--n", "63", "--level", "2",
                                     "--a", a, "--b", b, "--geometry", geom, "--nl",
                                     "exponential", "--seed", "3", "--out", str(out)])
            runs[geom, k] = (status, out, time.perf_counter() - t0)
    return runs


def test_criterion_01_eigenvalue_oracle(criterion):
    t0 = time.perf_counter()
    op = build_operator(Domain.parse("interval:pi"), 511)
    spec = compute_spectrum(op, 4)
    elapsed = time.perf_counter() - t0
    lam = spec.values[:4]
    err_disc = float(np.max(np.abs(lam / closed_form_1d(511, count=4) - 1)))
    err_cont = float(np.max(np.abs(lam / np.array([1.0, 4.0, 9.0, 16.0]) - 1)))
    ok = err_disc <= 1e-9 and err_cont <= 1e-3 and elapsed < 5
    criterion(1, ok, f"stencil rel err {err_disc:.1e}, continuum {err_cont:.1e}, "
                     f"{elapsed:.2f}s")
    assert ok


def test_criterion_02_1d_curves_vs_shooting(curve_runs, criterion):
    lam, runs = curve_runs
    status, out, elapsed = runs[0]
    assert status == EXIT_OK
    nu = _read_curve(out / "nu_l2.csv")
    mu = _read_curve(out / "mu_l2.csv")
    worst = 0.0
    for rows, pick in ((nu, 0), (mu, 1)):
        for a, b, _ in rows:
            ref = shooting_curves(a, 2)[pick]
            worst = max(worst, abs(b - ref) / ref)
    # passage through (lambda_2, lambda_2)
    op = build_operator(Domain.parse("interval:pi"), 511)
    spec = compute_spectrum(op, 6, seed=7)
    diag = [curve_point(spec, k, 2, spec.eigenvalue(2), seed=7) for k in ("nu", "mu")]
    diag_err = max(abs(s.b - spec.eigenvalue(2)) - s.bracket_width for s in diag)
    ok = (worst <= 1e-2 and len(nu) >= 12 and len(mu) >= 12 and diag_err <= 1e-9
          and elapsed < 600)
    criterion(2, ok, f"{len(nu)}+{len(mu)} of 48 samples in range, max rel err {worst:.1e}, "
                     f"diagonal ok={diag_err <= 1e-9}, {elapsed:.0f}s")
    assert ok


@pytest.fixture(scope="module")
def square63():
    op = build_operator(Domain.parse("square:pi"), 63)
    return spectrum_for_level(op, 2)


def test_criterion_03_square_curve_properties(square63, criterion):
    spec = square63
    t0 = time.perf_counter()
    grid = np.linspace(4.0, 6.0, 5)
    traces = {k: trace_curve(spec, k, 2, grid) for k in ("nu", "mu")}
    tol_b = traces["nu"].tol_b
    decreasing = all(np.all(np.diff(t.b) < 0) for t in traces.values())
    sym = 0.0
    for kind, t in traces.items():
        for s in t.inside:
            back = curve_point(spec, kind, 2, s.b)
            sym = max(sym, abs(back.b - s.a))
    order = all(n.b <= m.b + tol_b for n, m in zip(traces["nu"].samples, traces["mu"].samples))
    full = all(len(t.inside) == len(grid) for t in traces.values())
    elapsed = time.perf_counter() - t0
    ok = decreasing and sym <= 2 * tol_b and order and full and elapsed < 1800
    criterion(3, ok, f"decreasing={decreasing}, reflection err {sym:.1e} (2 tol_b = "
                     f"{2 * tol_b:.1e}), nu<=mu={order}, {elapsed:.0f}s")
    assert ok


def test_criterion_04_reduction_maps(square63, criterion):
    spec = square63
    op = spec.op
    r = np.random.default_rng(2024)
    lam = spec.eigenvalue(2)
    s1, s2 = spec.split_level(1), spec.split_level(2)
    worst = {"res": 0.0, "hom": 0.0, "zero": 0.0, "shape": 0.0}
    for k in range(50):
        pt = FucikPoint(*r.uniform(2.3, 7.7, 2), 2)
        t = float(r.uniform(0.2, 5.0))
        w = s1.project_m(op.solve(r.standard_normal(op.size)))
        w /= op.d_norm(w)
        v = s2.combine(r.standard_normal(s2.modes))
        v /= op.d_norm(v)
        th, ta = theta_map(spec, w, pt), tau_map(spec, v, pt)
        worst["res"] = max(worst["res"], th.residual, ta.residual)
        th_t, ta_t = theta_map(spec, t * w, pt), tau_map(spec, t * v, pt)
        for a_, b_ in ((th_t.output, th.output), (ta_t.output, ta.output)):
            worst["hom"] = max(worst["hom"], op.d_norm(a_ - t * b_) / max(t * op.d_norm(b_), 1e-12))
        if k % 5 == 0:
            diag = FucikPoint(lam, lam, 2)
            worst["zero"] = max(worst["zero"], op.d_norm(theta_map(spec, w, diag).output),
                                op.d_norm(tau_map(spec, v, diag).output))
        # concave in the N_{l-1} direction, convex in M_l; the maps sit at the extremum
        phi = s1.basis[:, 0]
        u_th = w + th.output
        c1, c2 = r.normal(0, 1, 2)
        f = [jumping_functional(op, u_th + c * phi, pt.a, pt.b) for c in (c1, c2, 0.5 * (c1 + c2))]
        f0 = jumping_functional(op, u_th, pt.a, pt.b)
        m1, m2 = (s2.project_m(op.solve(r.standard_normal(op.size))) for _ in range(2))
        m1, m2 = m1 / op.d_norm(m1), m2 / op.d_norm(m2)
        u_ta = v + ta.output
        g = [jumping_functional(op, u_ta + m, pt.a, pt.b) for m in (m1, m2, 0.5 * (m1 + m2))]
        g0 = jumping_functional(op, u_ta, pt.a, pt.b)
        viol = max(0.5 * (f[0] + f[1]) - f[2], g[2] - 0.5 * (g[0] + g[1]),
                   max(f) - f0, g0 - min(g))
        worst["shape"] = max(worst["shape"], viol)
    ok = (worst["res"] <= 1e-8 and worst["hom"] <= 1e-6 and worst["zero"] <= 1e-6
          and worst["shape"] <= 1e-10)
    criterion(4, ok, "50 instances: residual {res:.1e}, homogeneity {hom:.1e}, "
                     "diagonal {zero:.1e}, midpoint violation {shape:.1e}".format(**worst))
    assert ok


def test_criterion_05_monotone_level_functions(square63, criterion):
    spec = square63
    grid = np.linspace(2.5, 7.5, 5)
    N = np.array([[n_level(spec, FucikPoint(a, b, 2)).value for b in grid] for a in grid])
    M = np.array([[m_level(spec, FucikPoint(a, b, 2)).value for b in grid] for a in grid])
    slack = 1e-8
    mono = all(np.all(np.diff(X, axis=ax) <= slack) for X in (N, M) for ax in (0, 1))
    lam = spec.eigenvalue(2)
    pt = FucikPoint(lam, lam, 2)
    zero = max(abs(n_level(spec, pt).value), abs(m_level(spec, pt).value))
    ok = mono and zero <= 1e-4
    criterion(5, ok, f"nonincreasing on 5x5 ={mono}, |n|,|m| at (lambda_2, lambda_2) <= "
                     f"{zero:.1e}")
    assert ok


def test_criterion_06_membership_gap(criterion):
    op = build_operator(Domain.parse("interval:pi"), 511)
    spec = spectrum_for_level(op, 2)
    on, off = [], []
    for a in (2.5, 3.0, 5.0, 6.0, 7.5):
        s = curve_point(spec, "nu", 2, a)
        assert s.in_range
        on.append(membership_residual(spec, a, s.b, level=2).residual)
        off.append(membership_residual(spec, a, s.b - 0.3, level=2).residual)
    ok = max(on) <= 1e-4 and min(off) >= 10 * max(on)
    criterion(6, ok, f"on-curve max {max(on):.1e}, off-curve min {min(off):.1e}")
    assert ok


def test_criterion_07_linking_solves(solve_runs, criterion):
    lines, ok = [], True
    for geom in ("below", "above"):
        status, out, elapsed = solve_runs[geom, 0]
        rep = json.loads((out / "report.json").read_text())
        good = (status == EXIT_OK and rep["classification"] == "nontrivial_ok"
                and rep["grad_norm"] <= 1e-6 and rep["d_norm"] >= 1e-2
                and 0 < rep["energy"] < 2 * math.pi and elapsed < 1200)
        ok &= good
        lines.append(f"{geom}: {rep['classification']} E={rep['energy']:.4f} "
                     f"|E'|={rep['grad_norm']:.1e} {elapsed:.0f}s")
    criterion(7, ok, "; ".join(lines))
    assert ok


def test_criterion_08_brezis_nirenberg(criterion):
    op = build_operator(Domain.parse("hypercube:pi"), 15)
    spec = spectrum_for_level(op, 1)
    lam1 = spec.eigenvalue(1)
    nl = Nonlinearity("critical_power", 4)
    pt = FucikPoint(0.5 * lam1, 0.5 * lam1, 1)
    # with N_0 = {0} the minimal curve of Q_1 is b = lambda_1
    geom = build_geometry("below_curve", pt, spec, nl, curve_b=lam1, seed=0)
    cs = c_star(nl, op)
    rep = minimax_search(geom, nl, seed=0, cstar=cs.value)
    u = rep.u
    top = np.abs(u).max()
    sign_definite = bool(np.all(u > -1e-12 * top) or np.all(u < 1e-12 * top))
    ok = rep.classification == "nontrivial_ok" and sign_definite and rep.energy < cs.value
    criterion(8, ok, f"{rep.classification}, sign-definite={sign_definite}, "
                     f"E={rep.energy:.3f} < c*={cs.value:.2f} (continuum {cs.reference:.2f})")
    assert ok


def test_criterion_09_estimate_exponents(criterion):
    t0 = time.perf_counter()
    fits = conc.estimate_suite()
    elapsed = time.perf_counter() - t0
    bad = [f.quantity for f in fits if not f.passed]
    l2 = next(f for f in fits if f.quantity == "l2_N4")
    log_helps = l2.residual < l2.plain_residual
    ok = not bad and log_helps and elapsed < 300
    criterion(9, ok, f"{len(fits) - len(bad)}/{len(fits)} exponents within 0.2, "
                     f"N=4 log-factor residual {l2.residual:.3f} < {l2.plain_residual:.3f}, "
                     f"{elapsed:.0f}s" + (f", failing {bad}" if bad else ""))
    assert ok


def test_criterion_10_strict_level_lemmas(criterion):
    moser = conc.sup_energy_check("L60", FucikPoint(5.0, 4.1, 2), [4.0, 8.0, 16.0])
    m = moser.margins
    moser_ok = all(y > x for x, y in zip(m, m[1:])) and m[-1] > 0
    bubble = conc.sup_energy_check("L8", FucikPoint(5.0, 5.5, 2),
                                   [1e-8, 1e-14, 1e-20, 1e-26, 1e-32])
    bubble_ok = bubble.final_below and bubble.improving
    ok = moser_ok and bubble_ok
    criterion(10, ok, "L60 margins " + ", ".join(f"{x:.3f}" for x in m)
              + "; L8 margin/eps^2 " + ", ".join(f"{x:.0f}" for x in bubble.scaled_margins))
    assert ok


def test_criterion_11_determinism(curve_runs, solve_runs, criterion):
    _, runs = curve_runs
    same = True
    for name in ("nu_l2.csv", "mu_l2.csv", "nu_l2.dat", "mu_l2.dat"):
        same &= (runs[0][1] / name).read_bytes() == (runs[1][1] / name).read_bytes()
    for geom in ("below", "above"):
        a, b = solve_runs[geom, 0][1], solve_runs[geom, 1][1]
        same &= (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
        same &= (a / "solution.bin").read_bytes() == (b / "solution.bin").read_bytes()
        ma = json.loads((a / "manifest.json").read_text())
        mb = json.loads((b / "manifest.json").read_text())
        same &= ma["spectrum_digest"] == mb["spectrum_digest"]
    criterion(11, same, "curve CSVs, solve reports and solutions identical across reruns")
    assert same
