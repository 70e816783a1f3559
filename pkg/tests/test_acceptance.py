"""Acceptance criteria, one test each; every test prints a PASS/FAIL line in the summary."""

import json
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, SMALL_CONFIGS
from efimov.asymptotics import (
    SobolevKernel, efimov_slope_fit, s_hat_eigenvalues, s_r_count, singular_part_count,
    sphere_nystrom_count, u_coefficient,
)
from efimov.cli import main
from efimov.counting import eigen_count_N, oracle_negative_count, probe_energies, weyl_inequality_check
from efimov.friedrichs import (
    ThresholdKind, classify_threshold, critical_params, essential_band, fredholm_delta,
    threshold_expansion_fit,
)
from efimov.lattice import ModelParams, TrigPoly, epsilon, epsilon_gradient, epsilon_hessian, lambda_set
from efimov.quadrature import build_grid, graded_grid

TORUS = (2 * np.pi) ** 3


def record(num, title, ok, detail, elapsed=None, budget=None):
    timing = "" if elapsed is None else f" [{elapsed:.1f}s / {budget}s]"
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {num}. {title}: {detail}{timing}")


def test_birman_schwinger_identity():
    t0 = time.perf_counter()
    params = {n: ModelParams(n=n, v0=TrigPoly.const(2.0), v1=TrigPoly.const(1.0)) for n in (1, 2)}
    cases, bad = 0, []
    for n in (1, 2):
        lam = lambda_set(n).points
        # for n = 1 the zero set is {0}; a generic K stands in for the second point
        Ks = [lam[0], lam[1]] if n > 1 else [lam[0], np.array([1.0, 0.5, -0.5])]
        for N in (3, 4):
            grid = build_grid(N)
            for K in Ks:
                for z in probe_energies(K, params[n], grid):
                    cases += 1
                    a = eigen_count_N(K, z, params[n], grid)
                    b = oracle_negative_count(K, z, params[n], grid)
                    if a != b:
                        bad.append((n, N, tuple(K), z, a, b))
    elapsed = time.perf_counter() - t0
    ok = not bad and cases == 40 and elapsed <= 120
    record(1, "Birman-Schwinger count equals direct count", ok,
           f"{cases - len(bad)}/{cases} cases agree", elapsed, 120)
    assert not bad and cases == 40
    assert elapsed <= 120


def test_zero_set_structure():
    problems = []
    for n in range(1, 5):
        pts = lambda_set(n).points
        if len(pts) != n**3 or len(np.unique(np.round(pts, 12), axis=0)) != n**3:
            problems.append(f"n={n}: {len(pts)} points")
        if np.any(epsilon(pts, n) != 0.0):
            problems.append(f"n={n}: eps != 0")
        if np.any(np.abs(epsilon_gradient(pts, n)) > 1e-12):
            problems.append(f"n={n}: gradient")
        for H in epsilon_hessian(pts, n):
            if np.linalg.eigvalsh(H).min() <= 0:
                problems.append(f"n={n}: Hessian not positive definite")
                break
    record(2, "zero set has n^3 nondegenerate minima, n = 1..4", not problems,
           "exact" if not problems else "; ".join(problems))
    assert not problems


def test_threshold_trichotomy(fine_grid_n1):
    t0 = time.perf_counter()
    g = fine_grid_n1
    res = classify_threshold(critical_params(ModelParams(), TrigPoly.const(1.0), g), g)
    eig = classify_threshold(critical_params(ModelParams(), TrigPoly.sin_product(1), g), g)
    reg = classify_threshold(critical_params(ModelParams(), TrigPoly.const(1.0), g, scale=0.9), g)
    elapsed = time.perf_counter() - t0
    kinds = (res.kind, eig.kind, reg.kind)
    ok = (kinds == (ThresholdKind.ZERO_RESONANCE, ThresholdKind.ZERO_EIGENVALUE, ThresholdKind.REGULAR_POINT)
          and abs(res.g_eigenvalue - 1) <= 1e-3 and abs(eig.g_eigenvalue - 1) <= 1e-3 and elapsed <= 60)
    record(3, "threshold trichotomy", ok,
           f"{'/'.join(k.value for k in kinds)}, g = {res.g_eigenvalue:.6f}, {eig.g_eigenvalue:.6f}",
           elapsed, 60)
    assert kinds == (ThresholdKind.ZERO_RESONANCE, ThresholdKind.ZERO_EIGENVALUE, ThresholdKind.REGULAR_POINT)
    assert res.g_eigenvalue == pytest.approx(1, abs=1e-3)
    assert eig.g_eigenvalue == pytest.approx(1, abs=1e-3)
    assert elapsed <= 60


def test_threshold_expansion(fine_grid_n1):
    t0 = time.perf_counter()
    details, ok = [], True
    for n in (1, 2):
        g = fine_grid_n1 if n == 1 else graded_grid(2, 16, 14, order=2)
        params = critical_params(ModelParams(n=n), TrigPoly.const(1.0), g, on_grid=True)
        fit = threshold_expansion_fit(params, [0, 0, 0], [0, 0, 0], g)
        ratio = fit.leading_coeff / fit.predicted_coeff
        ok &= abs(fit.exponent - 1) <= 0.05 and abs(ratio - 1) <= 0.05
        details.append(f"n={n} exponent {fit.exponent:.4f} coefficient ratio {ratio:.4f}")
    g = fine_grid_n1
    eig = critical_params(ModelParams(), TrigPoly.sin_product(1), g, on_grid=True)
    quad = threshold_expansion_fit(eig, [0, 0, 0], [0, 0, 0], g)
    ok &= abs(quad.exponent - 2) <= 0.1
    details.append(f"zero eigenvalue exponent {quad.exponent:.4f}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed <= 300
    record(4, "threshold expansion of the determinant", ok, "; ".join(details), elapsed, 300)
    assert ok


def test_u_coefficient_cross_validation():
    t0 = time.perf_counter()
    k = SobolevKernel(1.0, 1.0)
    mismatches = []
    for theta in (0.0, 0.5, 1.0, 2.0, 5.0):
        angular = s_hat_eigenvalues(theta, 12, k)
        for gamma in (0.5, 1.0, 2.0):
            a, b = angular.count_above(gamma), sphere_nystrom_count(theta, gamma, k)
            if a != b:
                mismatches.append((theta, gamma, a, b))
    u1 = u_coefficient(1.0, k)
    drift = 0.0
    for c in (0.5, 3.0, 17.0):
        for gamma in (0.5, 1.0):
            base = u_coefficient(gamma, k)
            drift = max(drift, abs(u_coefficient(gamma, SobolevKernel(c, c)) - base))
    drift_l = abs(u_coefficient(1.0, SobolevKernel(2.0, 3.0)) - u_coefficient(1.0, SobolevKernel(4.0, 6.0)))
    drift = max(drift, drift_l)
    elapsed = time.perf_counter() - t0
    ok = not mismatches and u1 > 0 and drift <= 1e-12 and elapsed <= 60
    record(5, "angular counts: Legendre modes vs sphere Nystrom", ok,
           f"{15 - len(mismatches)}/15 counts agree, U(1) = {u1:.12f}, scaling drift {drift:.1e}",
           elapsed, 60)
    assert not mismatches
    assert u1 > 0
    assert drift <= 1e-12
    assert elapsed <= 60


def test_truncated_operator_limit():
    t0 = time.perf_counter()
    k = SobolevKernel(1.0, 1.0)
    res = s_r_count(40.0, 1.0, k)
    u1 = u_coefficient(1.0, k)
    gap = abs(res["ratio"] - u1)
    elapsed = time.perf_counter() - t0
    ok = gap <= 0.1 * u1 and elapsed <= 180
    record(6, "truncated operator count / 2r at r = 40", ok,
           f"n = {res['count']}, ratio {res['ratio']:.5f} vs U(1) {u1:.5f} (gap {gap / u1:.1%})", elapsed, 180)
    assert gap <= 0.1 * u1
    assert elapsed <= 180


def test_singular_part_rate():
    t0 = time.perf_counter()
    grid = graded_grid(1, 16, 8)
    params = critical_params(ModelParams(), TrigPoly.const(1.0), grid, on_grid=True)
    z = -1e-4
    count = singular_part_count(math.pi / 4, z, params, grid, 1.0)
    rate = count / abs(math.log(abs(z)))
    u1 = u_coefficient(1.0, SobolevKernel.from_params(params))
    gap = abs(rate - u1) / u1
    elapsed = time.perf_counter() - t0
    ok = gap <= 0.25 and elapsed <= 600
    record(7, "singular part count / |log|z|| at |z| = 1e-4", ok,
           f"n(1, T11) = {count}, rate {rate:.4f} vs U(1) {u1:.4f} (gap {gap:.0%})", elapsed, 600)
    assert gap <= 0.25
    assert elapsed <= 600


def _sweep(shape, scale, zs):
    counts = []
    for z in zs:
        grid = graded_grid(1, 8, 4 + math.ceil(math.log10(1e-2 / abs(z)) - 1e-9) if abs(z) < 1e-2 else 4)
        params = critical_params(ModelParams(), shape, grid, scale=scale, on_grid=True)
        counts.append(eigen_count_N([0, 0, 0], z, params, grid))
    return counts


def test_efimov_dichotomy():
    t0 = time.perf_counter()
    zs = [-(10.0 ** -j) for j in range(1, 5)]
    resonance = _sweep(TrigPoly.const(1.0), 1.0, zs)
    zero_eig = _sweep(TrigPoly.sin_product(1), 1.0, zs)
    regular = _sweep(TrigPoly.const(1.0), 0.9, zs)
    fit = efimov_slope_fit(zs, resonance, SobolevKernel(1.0, 1.0, 1.0))
    elapsed = time.perf_counter() - t0
    finite = all(c[-1] == c[-2] for c in (zero_eig, regular))
    increasing = all(a < b for a, b in zip(resonance, resonance[1:]))
    ok = finite and increasing and fit.relative_gap <= 0.25 and elapsed <= 1200
    record(8, "Efimov dichotomy along z = -10^-j, j = 1..4", ok,
           f"resonance {resonance}, zero eigenvalue {zero_eig}, regular {regular}; "
           f"slope {fit.slope:.4f} vs U(1) {fit.u1:.4f}", elapsed, 1200)
    assert finite
    assert increasing
    assert fit.relative_gap <= 0.25
    assert elapsed <= 1200


def _random_model(r):
    n = int(r.integers(1, 3))
    terms = [{"axis": int(a), "harmonic": int(r.integers(1, 3)), "kind": "cos", "coef": float(r.normal(0, 0.1))}
             for a in r.integers(1, 4, size=2)]
    v1 = TrigPoly.from_dict({"constant": float(r.uniform(0.05, 0.3)), "terms": terms})
    return ModelParams(l1=float(r.uniform(0.5, 2)), l2=float(r.uniform(0.5, 2)), n=n, v1=v1)


def _rerun_identical(tmp_path):
    differing = []
    for name, cfg in SMALL_CONFIGS.items():
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps(cfg))
        for out in ("a", "b"):
            main([name, "--config", str(path), "--out", str(tmp_path / out / name), "--svg", "-q"])
        files_a = sorted(p.name for p in (tmp_path / "a" / name).iterdir())
        files_b = sorted(p.name for p in (tmp_path / "b" / name).iterdir())
        if not files_a or files_a != files_b or any(
                (tmp_path / "a" / name / f).read_bytes() != (tmp_path / "b" / name / f).read_bytes()
                for f in files_a):
            differing.append(name)
    return differing


def test_property_suites(tmp_path):
    weyl_bad = 0
    for seed in range(200):
        r = np.random.default_rng(seed)
        size = int(r.integers(2, 30))
        X, Y = r.standard_normal((2, size, size))
        g1, g2 = r.uniform(-3, 3, size=2)
        weyl_bad += not weyl_inequality_check(X + X.T, Y + Y.T, g1, g2)

    mono_bad = 0
    for m in range(10):
        r = np.random.default_rng(1000 + m)
        params = _random_model(r)
        grid = build_grid(6)
        for _ in range(50):
            k = r.uniform(-np.pi, np.pi, 3)
            emin = essential_band(k, params).emin
            z1, z2 = np.sort(emin - r.uniform(1e-3, 5.0, 2))
            mono_bad += not fredholm_delta(k, z1, params, grid) > fredholm_delta(k, z2, params, grid)

    grids = [build_grid(7, shift=False), build_grid(8), graded_grid(1, 8, 6), graded_grid(2, 16, 3, order=2),
             graded_grid(3, 24, 2, order=3)]
    weight_err = max(abs(g.weights.sum() - TORUS) / TORUS for g in grids)

    differing = _rerun_identical(tmp_path)
    ok = weyl_bad == 0 and mono_bad == 0 and weight_err <= 1e-12 and not differing
    record(9, "property suites", ok,
           f"Weyl violations {weyl_bad}/200, monotonicity violations {mono_bad}/500, "
           f"weight error {weight_err:.1e}, non-identical reruns {differing or 0} of {len(SMALL_CONFIGS)} commands")
    assert weyl_bad == 0
    assert mono_bad == 0
    assert weight_err <= 1e-12
    assert not differing
