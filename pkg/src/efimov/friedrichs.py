"""Friedrichs models h(k): determinant, band, eigenvalues and threshold analysis."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from .errors import (
    BracketError,
    FitUnstableError,
    GridTooCoarseError,
    IndeterminateThresholdError,
    NonIntegrableError,
    PreconditionError,
)
from .lattice import ModelParams, TrigPoly, epsilon, epsilon_gradient, lambda_set, reduce_torus, w2_matrix
from .quadrature import QuadratureGrid, richardson

_ROW_CHUNK = 512


def _dispersion(k, q, params: ModelParams) -> np.ndarray:
    """E_k(q) = l1 eps(q) + l2 eps(k - q)."""
    n = params.n
    return params.l1 * epsilon(q, n) + params.l2 * epsilon(np.asarray(k) - q, n)


def _delta_on_grid(k, z: float, params: ModelParams, grid: QuadratureGrid) -> float:
    t = grid.nodes
    with np.errstate(divide="ignore"):
        integrand = params.v1(t) ** 2 / (_dispersion(k, t, params) - z)
    return params.l2 * float(epsilon(k, params.n)) + 1.0 - z - 0.5 * grid.integrate(integrand)


def fredholm_delta(k, z: float, params: ModelParams, grid: QuadratureGrid, *,
                   rtol: float | None = None) -> float:
    """Fredholm determinant of h(k) at real ``z`` off the essential band.

    With ``rtol`` the value is compared with the one-level-coarser grid and
    :class:`GridTooCoarseError` is raised when they differ by more than
    ``rtol * max(1, |value|)``.
    """
    k = reduce_torus(k)
    if z >= 0:
        band = essential_band(k, params)
        inside = band.emin < z < band.emax
        on_edge = z in (band.emin, band.emax) and z > 0
        if inside or on_edge:
            raise NonIntegrableError(f"z={z} lies in the essential band [{band.emin}, {band.emax}]")
    value = _delta_on_grid(k, z, params, grid)
    if rtol is not None:
        est = richardson(lambda g: _delta_on_grid(k, z, params, g), grid)
        if est.error > rtol * max(1.0, abs(value)):
            raise GridTooCoarseError(f"refinement changes the determinant by {est.error:.3e}")
    return value


def delta_shifted(K, P, z: float, params: ModelParams, grid: QuadratureGrid) -> np.ndarray:
    """Delta(K - p; z - l1 eps(p)) for each row ``p`` of ``P``, on ``grid``.

    This is the determinant entering the Birman-Schwinger kernel; the
    denominators are w2(K; p, t) - z.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    K = np.asarray(K, dtype=float)
    t, w = grid.nodes, grid.weights
    wv = w * params.v1(t) ** 2
    n, l1, l2 = params.n, params.l1, params.l2
    w1 = l1 * epsilon(P, n) + l2 * epsilon(K - P, n) + 1.0
    out = np.empty(len(P))
    for start in range(0, len(P), _ROW_CHUNK):
        rows = slice(start, start + _ROW_CHUNK)
        W2 = w2_matrix(K, P[rows], t, params)
        out[rows] = w1[rows] - z - 0.5 * np.sum(wv / (W2 - z), axis=1)
    return out


@dataclass(frozen=True)
class EssentialBand:
    k: np.ndarray
    emin: float
    emax: float
    argmin: np.ndarray
    argmax: np.ndarray


def _polish(fun, jac, starts):
    best = None
    for x0 in starts:
        res = minimize(fun, x0, jac=jac, method="BFGS", options={"gtol": 1e-13})
        if best is None or res.fun < best.fun:
            best = res
    return best


def _basin_starts(points: np.ndarray, values: np.ndarray, count: int, sep: float):
    order = np.argsort(values, kind="stable")
    starts: list[np.ndarray] = []
    for i in order:
        if all(np.linalg.norm(points[i] - s) > sep for s in starts):
            starts.append(points[i])
        if len(starts) == count:
            break
    return starts


def essential_band(k, params: ModelParams, resolution: int | None = None) -> EssentialBand:
    """Min and max of E_k over the torus: grid scan, then BFGS from three basins."""
    k = reduce_torus(k)
    n, l1, l2 = params.n, params.l1, params.l2
    res = max(8 * n, 8) if resolution is None else resolution
    ax = -np.pi + np.arange(1, res + 1) * (2 * np.pi / res)
    scan = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1).reshape(-1, 3)
    vals = _dispersion(k, scan, params)

    def grad(q):
        return l1 * epsilon_gradient(q, n) - l2 * epsilon_gradient(k - q, n)

    sep = 2 * np.pi / res
    lo = _polish(lambda q: float(_dispersion(k, q, params)), grad, _basin_starts(scan, vals, 3, sep))
    hi = _polish(lambda q: -float(_dispersion(k, q, params)), lambda q: -grad(q),
                 _basin_starts(scan, -vals, 3, sep))
    emin = max(0.0, min(float(lo.fun), float(vals.min())))
    emax = max(-float(hi.fun), float(vals.max()))
    return EssentialBand(k=k, emin=emin, emax=emax, argmin=reduce_torus(lo.x), argmax=reduce_torus(hi.x))


def _bisect(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-12) -> float:
    """Root of a decreasing function with f(lo) > 0 > f(hi)."""
    for _ in range(400):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def discrete_spectrum_h(k, params: ModelParams, grid: QuadratureGrid) -> list[tuple[float, str]]:
    """Eigenvalues of h(k) below and above its essential band, by bisection."""
    k = reduce_torus(k)
    band = essential_band(k, params)
    span = 20.0 * (params.l1 + params.l2)

    def delta(z):
        return _delta_on_grid(k, z, params, grid)

    out = []
    if delta(band.emin) < 0:
        z_lo = band.emin - span
        if delta(z_lo) <= 0:
            raise BracketError(f"no sign change of the determinant on [{z_lo}, {band.emin})")
        out.append((_bisect(delta, z_lo, band.emin), "below"))
    if delta(band.emax) > 0:
        z_hi = band.emax + span + abs(params.l2 * float(epsilon(k, params.n)) + 1.0)
        if delta(z_hi) >= 0:
            raise BracketError(f"no sign change of the determinant on ({band.emax}, {z_hi}]")
        out.append((_bisect(delta, band.emax, z_hi), "above"))
    return out


def friedrichs_matrix(k, params: ModelParams, grid: QuadratureGrid) -> np.ndarray:
    """h(k) on the grid: scalar corner bordered by the weighted coupling row."""
    k = reduce_torus(k)
    t = grid.nodes
    M = grid.size
    H = np.zeros((M + 1, M + 1))
    H[0, 0] = params.l2 * float(epsilon(k, params.n)) + 1.0
    border = params.v1(t) * np.sqrt(grid.weights) / math.sqrt(2.0)
    H[0, 1:] = border
    H[1:, 0] = border
    H[np.arange(1, M + 1), np.arange(1, M + 1)] = _dispersion(k, t, params)
    return H


# -- threshold analysis -------------------------------------------------------


class ThresholdKind(str, enum.Enum):
    ZERO_RESONANCE = "ZeroResonance"
    ZERO_EIGENVALUE = "ZeroEigenvalue"
    REGULAR_POINT = "RegularPoint"


@dataclass(frozen=True)
class ThresholdClass:
    kind: ThresholdKind
    delta00: float
    g_eigenvalue: float
    v1_on_lambda: list
    lambda0: np.ndarray
    error_estimate: float
    tol: float

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "delta00": self.delta00,
            "g_eigenvalue": self.g_eigenvalue,
            "v1_on_lambda": [{"point": list(map(float, p)), "value": float(v)} for p, v in self.v1_on_lambda],
            "error_estimate": self.error_estimate,
            "tol": self.tol,
        }


def _threshold_integral(poly: TrigPoly, params: ModelParams) -> Callable[[QuadratureGrid], float]:
    """Grid functional  J = int poly^2 / eps."""
    def J(g: QuadratureGrid) -> float:
        return g.integrate(poly(g.nodes) ** 2 / epsilon(g.nodes, params.n))
    return J


def classify_threshold(params: ModelParams, grid: QuadratureGrid, tol: float | None = None) -> ThresholdClass:
    """Resonance / eigenvalue / regular point at the bottom of the band of h(0).

    Delta(0;0) = 1 - J / (2(l1+l2)) and the nonzero eigenvalue of the
    rank-one operator G is J / (2(l1+l2)), with J = int v1^2/eps.
    """
    c = 1.0 / (2.0 * (params.l1 + params.l2))
    est = richardson(_threshold_integral(params.v1, params), grid)
    delta00 = 1.0 - c * est.extrapolated
    err = c * est.error
    if tol is None:
        tol = max(10.0 * err, 1e-10)
    if 0.5 * tol < abs(delta00) <= 2.0 * tol:
        raise IndeterminateThresholdError(
            f"|Delta(0;0)| = {abs(delta00):.3e} is too close to the tolerance {tol:.3e}")

    lam = lambda_set(params.n).points
    vals = params.v1(lam)
    zero_tol = max(tol, 1e-12 * max(1.0, params.v1.bound))
    nonzero = np.abs(vals) > zero_tol
    if abs(delta00) > tol:
        kind = ThresholdKind.REGULAR_POINT
    elif nonzero.any():
        kind = ThresholdKind.ZERO_RESONANCE
    else:
        kind = ThresholdKind.ZERO_EIGENVALUE
    return ThresholdClass(
        kind=kind, delta00=delta00, g_eigenvalue=c * est.extrapolated,
        v1_on_lambda=list(zip(lam, vals)), lambda0=lam[nonzero], error_estimate=err, tol=tol,
    )


@dataclass(frozen=True)
class Calibration:
    """Critical coupling: ``value`` from the extrapolated integral, ``on_grid``
    makes Delta(0;0) vanish exactly on the grid itself."""

    value: float
    low: float
    high: float
    on_grid: float


def calibrate_resonance(v1_shape: TrigPoly, params: ModelParams, grid: QuadratureGrid) -> Calibration:
    """Positive coupling lam with Delta(0;0) = 0 for v1 = lam * v1_shape."""
    est = richardson(_threshold_integral(v1_shape, params), grid)
    if not est.extrapolated > 0:
        raise ValueError("v1_shape vanishes almost everywhere; no critical coupling")
    if est.error > 0.1 * est.extrapolated:
        raise GridTooCoarseError("threshold integral does not stabilise under refinement")
    s = 2.0 * (params.l1 + params.l2)
    lo_J, hi_J = est.extrapolated + est.error, max(est.extrapolated - est.error, 1e-300)
    return Calibration(
        value=math.sqrt(s / est.extrapolated), low=math.sqrt(s / lo_J), high=math.sqrt(s / hi_J),
        on_grid=math.sqrt(s / est.value),
    )


def critical_params(params: ModelParams, v1_shape: TrigPoly, grid: QuadratureGrid, *,
                    scale: float = 1.0, on_grid: bool = False) -> ModelParams:
    """``params`` with v1 = scale * lam_crit * v1_shape."""
    cal = calibrate_resonance(v1_shape, params, grid)
    lam = cal.on_grid if on_grid else cal.value
    return params.with_v1(v1_shape.scaled(scale * lam))


@dataclass(frozen=True)
class ResonanceVector:
    f0: float
    f1: Callable[[np.ndarray], np.ndarray]
    r0: float
    r1: Callable[[np.ndarray], np.ndarray]
    integrability_report: dict = field(default_factory=dict)


def resonance_vector(params: ModelParams, grid: QuadratureGrid, f0: float = 1.0) -> ResonanceVector:
    """Zero-energy solution (f0, f1) of h(0) f = 0 and its integrability.

    ``integrability_report`` holds the L1 estimate and the L2 estimates at
    three refinement depths; ``L2_divergence_flag`` is set when successive
    increments grow.
    """
    if f0 == 0:
        raise ValueError("f0 must be nonzero")
    cls = classify_threshold(params, grid)
    if cls.kind is ThresholdKind.REGULAR_POINT:
        raise PreconditionError("h(0) has neither a zero-energy resonance nor a zero eigenvalue")
    n, s = params.n, params.l1 + params.l2

    def f1(q):
        q = np.asarray(q, dtype=float)
        return -params.v1(q) * f0 / (math.sqrt(2.0) * s * epsilon(q, n))

    def r1(q):
        q = np.asarray(q, dtype=float)
        return params.v1(q) * f0 / math.sqrt(2.0) + s * epsilon(q, n) * f1(q)

    def coupling(g):
        return g.integrate(params.v1(g.nodes) * f1(g.nodes))

    r0 = f0 + richardson(coupling, grid).extrapolated / math.sqrt(2.0)
    l1_est = richardson(lambda g: g.integrate(np.abs(f1(g.nodes))), grid)

    grids = [grid]
    for _ in range(2):
        try:
            grids.append(grids[-1].coarsened())
        except ValueError:
            break
    l2_seq = [g.integrate(f1(g.nodes) ** 2) for g in reversed(grids)]
    incs = np.diff(l2_seq)
    growth = float(incs[-1] / incs[-2]) if len(incs) >= 2 and incs[-2] != 0 else float("nan")
    report = {
        "L1_estimate": l1_est.extrapolated,
        "L1_error": l1_est.error,
        "L2_estimates": l2_seq,
        "L2_ratio": l2_seq[-1] / l2_seq[-2] if len(l2_seq) > 1 else float("nan"),
        "L2_increment_growth": growth,
        "L2_divergence_flag": bool(growth > 1.0),
    }
    return ResonanceVector(f0=f0, f1=f1, r0=r0, r1=r1, integrability_report=report)


@dataclass(frozen=True)
class ExpansionFit:
    exponent: float
    leading_coeff: float
    predicted_coeff: float | None
    steps: np.ndarray
    values: np.ndarray
    residual: float


def expansion_prediction(params: ModelParams, lambda0_values) -> float:
    """Leading coefficient of Delta(K-p; -l1 eps(p)) in |p - p'| at a resonance."""
    l1, l2, n = params.l1, params.l2, params.n
    m = (l1 * l1 + 2 * l1 * l2) / (l1 + l2)
    total = float(np.sum(np.asarray(lambda0_values) ** 2))
    return 2 * np.pi**2 / (n * n * (l1 + l2) ** 1.5) * total * math.sqrt(m)


def threshold_expansion_fit(params: ModelParams, K, p_prime, grid: QuadratureGrid, *,
                            direction=(1.0, 0.0, 0.0), t0: float = 0.1, steps: int = 8,
                            max_residual: float = 0.05) -> ExpansionFit:
    """Growth of Delta(K-p; -l1 eps(p)) as p -> p' along a ray.

    Fits log Delta = log c + a log t + b t over t = t0 2^-j; ``a`` is the
    exponent, the ``b t`` term absorbing the next order of the expansion.
    The leading coefficient is refitted with the exponent fixed at round(a).
    """
    lam = lambda_set(params.n)
    if not (lam.contains(reduce_torus(K)) and lam.contains(reduce_torus(p_prime))):
        raise PreconditionError("K and p' must both belong to the zero set of the dispersion")
    cls = classify_threshold(params, grid)
    if cls.kind is ThresholdKind.REGULAR_POINT:
        raise PreconditionError("expansion fit needs a resonance or a zero eigenvalue at threshold")
    u = np.asarray(direction, dtype=float)
    u = u / np.linalg.norm(u)
    ts = t0 * 2.0 ** -np.arange(steps)
    P = np.asarray(p_prime, dtype=float) + ts[:, None] * u
    vals = delta_shifted(K, P, 0.0, params, grid)
    if np.any(vals <= 0):
        raise FitUnstableError("nonpositive determinant along the ray; grid too coarse for the step sizes")
    A = np.column_stack([np.ones_like(ts), np.log(ts), ts])
    coef, *_ = np.linalg.lstsq(A, np.log(vals), rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - np.log(vals)) ** 2)))
    if resid > max_residual:
        raise FitUnstableError(f"log-log fit residual {resid:.3e} exceeds {max_residual}")
    # coefficient at the integer exponent: Delta / t^k = c + c b t
    k = round(float(coef[1]))
    B = np.column_stack([np.ones_like(ts), ts])
    (lead, _), *_ = np.linalg.lstsq(B, vals / ts**k, rcond=None)
    predicted = None
    if cls.kind is ThresholdKind.ZERO_RESONANCE:
        predicted = expansion_prediction(params, params.v1(cls.lambda0))
    return ExpansionFit(exponent=float(coef[1]), leading_coeff=float(lead),
                        predicted_coeff=predicted, steps=ts, values=vals, residual=resid)
