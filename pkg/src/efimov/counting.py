"""Birman-Schwinger assembly, eigenvalue counting by inertia, and the finite-model oracle."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigvalsh, ldl
from scipy.optimize import minimize

from .errors import DimensionGuardError, NearSingularShiftError, NonPositiveDeterminantError
from .friedrichs import delta_shifted, discrete_spectrum_h
from .lattice import ModelParams, epsilon, lambda_set, reduce_torus, w2_matrix
from .quadrature import QuadratureGrid

DIRECT_H_MAX_DIM = 25_000
TIE_WINDOW = 1e-10
TIE_SHIFT = 1e-9
_ROW_CHUNK = 256


def worker_count() -> int:
    """Thread cap from EFIMOV_THREADS (default 1)."""
    try:
        return max(1, int(os.environ.get("EFIMOV_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True, eq=False)
class BlockOperatorAssembly:
    dimension: int
    matrix: np.ndarray
    block_meta: dict
    provenance: dict = field(default_factory=dict)


@dataclass(frozen=True)
class CountResult:
    gamma: float
    count: int
    method: str
    perturbed: bool = False


def _fill_rows(out: np.ndarray, nrows: int, fill) -> None:
    """Run ``fill(rows)`` over row chunks; chunks write disjoint slices."""
    chunks = [slice(s, min(s + _ROW_CHUNK, nrows)) for s in range(0, nrows, _ROW_CHUNK)]
    workers = worker_count()
    if workers == 1:
        for rows in chunks:
            fill(rows)
    else:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(fill, chunks))


def assemble_bs_operator(K, z: float, params: ModelParams, grid: QuadratureGrid) -> BlockOperatorAssembly:
    """Weight-symmetrised Nystrom matrix of the Birman-Schwinger operator T(K, z).

    Index 0 is the scalar sector; index j >= 1 is grid node j - 1.  The
    determinants inside the kernel are evaluated on ``grid`` itself.
    """
    K = reduce_torus(K)
    t, w = grid.nodes, grid.weights
    M = grid.size
    delta = delta_shifted(K, t, z, params, grid)
    if np.any(delta <= 0):
        bad = int(np.argmin(delta))
        raise NonPositiveDeterminantError(
            f"Delta(K-t; z-l1 eps(t)) = {delta[bad]:.3e} <= 0 at node {bad}; z={z} is not below the essential spectrum")
    sw = np.sqrt(w)
    a = params.v1(t) * sw / np.sqrt(delta)

    A = np.empty((M + 1, M + 1))
    A[0, 0] = 1.0 + z - float(params.w0(K))
    border = -params.v0(t) * sw / np.sqrt(delta)
    A[0, 1:] = border
    A[1:, 0] = border

    def fill(rows):
        W2 = w2_matrix(K, t[rows], t, params)
        A[1 + rows.start:1 + rows.stop, 1:] = 0.5 * a[rows, None] * a[None, :] / (W2 - z)

    _fill_rows(A, M, fill)
    bulk = A[1:, 1:]
    bulk += bulk.T.copy()
    bulk *= 0.5
    return BlockOperatorAssembly(
        dimension=M + 1, matrix=A,
        block_meta={"scalar_index": 0, "node_map": t},
        provenance={"K": K.tolist(), "z": z, "grid_id": grid.id, "kind": "BS"},
    )


def _inertia_above(A: np.ndarray, gamma: float) -> int:
    """Eigenvalues of A above gamma from the LDL^T (Bunch-Kaufman) pivots."""
    n = A.shape[0]
    _, d, _ = ldl(A - gamma * np.eye(n), lower=True)
    count, i = 0, 0
    while i < n:
        if i + 1 < n and d[i + 1, i] != 0.0:
            block = d[i:i + 2, i:i + 2]
            count += int(np.sum(np.linalg.eigvalsh(block) > 0))
            i += 2
        else:
            count += int(d[i, i] > 0)
            i += 1
    return count


def _eigen_above(A: np.ndarray, gamma: float) -> int:
    return int(np.sum(eigvalsh(A) > gamma))


def count_above(A, gamma: float, method: str = "inertia", *, retry: bool = True) -> CountResult:
    """Number of eigenvalues strictly above ``gamma``.

    A tie (an eigenvalue within 1e-10 of gamma) is detected by bracketing
    gamma; with ``retry`` the count is taken at gamma + 1e-9 instead,
    otherwise :class:`NearSingularShiftError` is raised.
    """
    M = A.matrix if isinstance(A, BlockOperatorAssembly) else np.asarray(A, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("count_above needs a square matrix")
    if method == "inertia":
        lo, hi = _inertia_above(M, gamma - TIE_WINDOW), _inertia_above(M, gamma + TIE_WINDOW)
    elif method == "eigensolve":
        ev = eigvalsh(M)
        lo, hi = int(np.sum(ev > gamma - TIE_WINDOW)), int(np.sum(ev > gamma + TIE_WINDOW))
    else:
        raise ValueError(f"unknown counting method {method!r}")
    if lo == hi:
        return CountResult(gamma=gamma, count=hi, method=method)
    if not retry:
        raise NearSingularShiftError(f"{lo - hi} eigenvalue(s) within {TIE_WINDOW} of gamma={gamma}")
    shifted = gamma + TIE_SHIFT
    count = _inertia_above(M, shifted) if method == "inertia" else _eigen_above(M, shifted)
    return CountResult(gamma=gamma, count=count, method=method, perturbed=True)


def eigen_count_N(K, z: float, params: ModelParams, grid: QuadratureGrid, method: str = "inertia") -> int:
    """N(K, z) = n(1, T(K, z))."""
    return count_above(assemble_bs_operator(K, z, params, grid), 1.0, method).count


def direct_h_dimension(M: int) -> int:
    return 1 + M + M * (M + 1) // 2


def assemble_direct_H(K, params: ModelParams, grid: QuadratureGrid) -> BlockOperatorAssembly:
    """Finite-model H(K) on the grid measure: scalar, one-particle and symmetric pair sectors.

    Pair (i, j), i <= j, carries the symmetric function normalised so that
    the embedding into the product space is isometric; the diagonal pair
    picks up the factor sqrt(2) relative to the off-diagonal ones.
    """
    K = reduce_torus(K)
    t, w = grid.nodes, grid.weights
    M = grid.size
    dim = direct_h_dimension(M)
    if dim > DIRECT_H_MAX_DIM:
        raise DimensionGuardError(f"direct H would have dimension {dim} > {DIRECT_H_MAX_DIM}")
    n, l1, l2 = params.n, params.l1, params.l2
    sw = np.sqrt(w)
    v1 = params.v1(t)
    I, J = np.triu_indices(M)
    P = len(I)

    H = np.zeros((dim, dim))
    H[0, 0] = float(params.w0(K))
    b = params.v0(t) * sw
    H[0, 1:M + 1] = b
    H[1:M + 1, 0] = b
    one = np.arange(1, M + 1)
    H[one, one] = l1 * epsilon(t, n) + l2 * epsilon(K - t, n) + 1.0
    pair = np.arange(M + 1, M + 1 + P)
    H[pair, pair] = l1 * epsilon(t[I], n) + l1 * epsilon(t[J], n) + l2 * epsilon(K - t[I] - t[J], n)

    diag = I == J
    # coupling of one-particle node i to pair {i, j}: v1(t_j) sqrt(w_j / 2), or v1(t_i) sqrt(w_i) when j = i
    c_i = np.where(diag, v1[I] * sw[I], v1[J] * sw[J] / math.sqrt(2.0))
    c_j = np.where(diag, 0.0, v1[I] * sw[I] / math.sqrt(2.0))
    H[1 + I, pair] = c_i
    H[pair, 1 + I] = c_i
    off = ~diag
    H[1 + J[off], pair[off]] = c_j[off]
    H[pair[off], 1 + J[off]] = c_j[off]
    return BlockOperatorAssembly(
        dimension=dim, matrix=H,
        block_meta={"scalar_index": 0, "node_map": t, "pairs": np.column_stack([I, J])},
        provenance={"K": K.tolist(), "z": None, "grid_id": grid.id, "kind": "DirectH"},
    )


def direct_h_spectrum(K, params: ModelParams, grid: QuadratureGrid) -> np.ndarray:
    return eigvalsh(assemble_direct_H(K, params, grid).matrix)


def oracle_negative_count(K, z: float, params: ModelParams, grid: QuadratureGrid) -> int:
    """Eigenvalues of the finite-model H(K) strictly below z, by dense eigensolve."""
    return int(np.sum(direct_h_spectrum(K, params, grid) < z))


def pair_threshold(K, params: ModelParams, grid: QuadratureGrid) -> float:
    """Smallest w2(K; t_i, t_j) over node pairs: the finite model's proxy for m_K."""
    K = reduce_torus(K)
    return float(np.min(w2_matrix(K, grid.nodes, grid.nodes, params)))


# -- essential spectrum -------------------------------------------------------


@dataclass(frozen=True)
class EssentialSpectrumReport:
    K: np.ndarray
    band: tuple
    branch_samples: list
    hull: list
    gaps: list
    resolution: float

    def to_dict(self) -> dict:
        return {
            "K": [float(x) for x in self.K],
            "band": [float(self.band[0]), float(self.band[1])],
            "branches": [{"p": [float(x) for x in p], "z": float(zv), "shifted": float(s)}
                         for p, zv, s in self.branch_samples],
            "hull": [[float(a), float(b)] for a, b in self.hull],
            "gaps": [[float(a), float(b)] for a, b in self.gaps],
            "resolution": float(self.resolution),
        }


def _axis_w2(x, c, l1, l2, n):
    return l1 * (2.0 - np.cos(n * x[..., 0]) - np.cos(n * x[..., 1])) + l2 * (1.0 - np.cos(n * (c - x[..., 0] - x[..., 1])))


def _axis_w2_grad(x, c, l1, l2, n):
    s = l2 * n * np.sin(n * (c - x[0] - x[1]))
    return np.array([l1 * n * np.sin(n * x[0]) - s, l1 * n * np.sin(n * x[1]) - s])


def _axis_extreme(c: float, params: ModelParams, sign: float) -> float:
    """min (sign=+1) or max (sign=-1) over (p, q) of one axis' share of w2."""
    n, l1, l2 = params.n, params.l1, params.l2
    res = 16 * n
    ax = -np.pi + np.arange(1, res + 1) * (2 * np.pi / res)
    X = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1).reshape(-1, 2)
    vals = sign * _axis_w2(X, c, l1, l2, n)
    best = float(vals.min())
    order = np.argsort(vals, kind="stable")
    starts: list = []
    for i in order:
        if all(np.linalg.norm(X[i] - s) > 2 * np.pi / res for s in starts):
            starts.append(X[i])
        if len(starts) == 3:
            break
    for x0 in starts:
        r = minimize(lambda x: sign * float(_axis_w2(x, c, l1, l2, n)),
                     x0, jac=lambda x: sign * _axis_w2_grad(x, c, l1, l2, n),
                     method="BFGS", options={"gtol": 1e-13})
        best = min(best, float(r.fun))
    return sign * best


def w2_band(K, params: ModelParams) -> tuple:
    """[m_K, M_K]: w2 separates into a sum over axes, each optimised in the plane."""
    K = reduce_torus(K)
    lo = sum(_axis_extreme(float(c), params, 1.0) for c in K)
    hi = sum(_axis_extreme(float(c), params, -1.0) for c in K)
    return max(lo, 0.0), hi


def _merge(values: np.ndarray, gap: float) -> list:
    values = np.sort(values)
    out = [[values[0], values[0]]]
    for v in values[1:]:
        if v - out[-1][1] <= gap:
            out[-1][1] = v
        else:
            out.append([v, v])
    return out


def essential_spectrum_H(K, params: ModelParams, p_grid_resolution: int, grid: QuadratureGrid) -> EssentialSpectrumReport:
    """Band [m_K, M_K] plus the branches sigma_disc(h(K-p)) + l1 eps(p) on a uniform p-grid.

    Sampled branch values closer than the largest step between neighbouring
    p-samples are merged into one interval; the remaining gaps are reported.
    """
    K = reduce_torus(K)
    m_K, M_K = w2_band(K, params)
    res = int(p_grid_resolution)
    ax = -np.pi + np.arange(1, res + 1) * (2 * np.pi / res)
    P = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1).reshape(-1, 3)
    samples = []
    by_kind: dict = {"below": {}, "above": {}}
    for idx, p in enumerate(P):
        shift = params.l1 * float(epsilon(p, params.n))
        for zv, kind in discrete_spectrum_h(K - p, params, grid):
            samples.append((p, zv, zv + shift))
            by_kind[kind][idx] = zv + shift

    # largest jump between axis neighbours on the p-grid, per branch
    step = 0.0
    ijk = np.arange(len(P)).reshape(res, res, res)
    for vals in by_kind.values():
        for axis in range(3):
            nb = np.roll(ijk, -1, axis=axis).ravel()
            for a, b in zip(ijk.ravel(), nb):
                if a in vals and b in vals:
                    step = max(step, abs(vals[a] - vals[b]))
    points = np.array([s for _, _, s in samples] + [m_K, M_K])
    hull = _merge(points, max(step, 1e-12))
    # the band itself is a full interval
    merged = []
    for a, b in hull:
        if b >= m_K and a <= M_K:
            a, b = min(a, m_K), max(b, M_K)
            if merged and merged[-1][1] >= a:
                merged[-1][1] = max(merged[-1][1], b)
                continue
        merged.append([a, b])
    gaps = [[merged[i][1], merged[i + 1][0]] for i in range(len(merged) - 1)]
    return EssentialSpectrumReport(K=K, band=(m_K, M_K), branch_samples=samples,
                                   hull=merged, gaps=gaps, resolution=step)


def weyl_inequality_check(A, B, gamma1: float, gamma2: float) -> bool:
    """n(g1 + g2, A + B) <= n(g1, A) + n(g2, B)."""
    a = A.matrix if isinstance(A, BlockOperatorAssembly) else np.asarray(A, dtype=float)
    b = B.matrix if isinstance(B, BlockOperatorAssembly) else np.asarray(B, dtype=float)
    if a.shape != b.shape:
        raise ValueError("operators must have the same dimension")
    lhs = count_above(a + b, gamma1 + gamma2, "eigensolve").count
    return lhs <= count_above(a, gamma1, "eigensolve").count + count_above(b, gamma2, "eigensolve").count


def k_independence(params: ModelParams, grid: QuadratureGrid, z: float) -> dict:
    """N(K, z) for every K in the zero set."""
    return {tuple(float(x) for x in K): eigen_count_N(K, z, params, grid) for K in lambda_set(params.n).points}


def admissible_ceiling(K, params: ModelParams, grid: QuadratureGrid, margin: float = 1e-6) -> float:
    """Largest z (minus ``margin``) below the pair threshold with every BS determinant positive.

    Each Delta_i(z) decreases in z below the pair threshold, so the minimum
    over nodes is bisected for its first zero.
    """
    K = reduce_torus(K)
    top = min(pair_threshold(K, params, grid), 0.0) - margin

    def worst(z):
        return float(np.min(delta_shifted(K, grid.nodes, z, params, grid)))

    if worst(top) > 0:
        return top
    lo = top - 1.0
    while worst(lo) <= 0:
        lo = top - 2.0 * (top - lo)
    hi = top
    while hi - lo > 1e-12 * max(1.0, abs(lo)):
        mid = 0.5 * (lo + hi)
        if worst(mid) > 0:
            lo = mid
        else:
            hi = mid
    return lo - margin


def probe_energies(K, params: ModelParams, grid: QuadratureGrid, count: int = 5) -> np.ndarray:
    """``count`` energies below the admissible ceiling, midway between direct-H eigenvalues."""
    ceil = admissible_ceiling(K, params, grid)
    ev = direct_h_spectrum(K, params, grid)
    ev = ev[ev < ceil]
    if len(ev):
        # one representative per degenerate cluster
        ev = ev[np.concatenate([[True], np.diff(ev) > 1e-8 * max(1.0, float(np.abs(ev).max()))])]
    marks = np.concatenate([[ev[0] - 1.0 if len(ev) else ceil - 1.0], ev, [ceil]])
    mids = 0.5 * (marks[:-1] + marks[1:])
    mids = np.unique(np.append(mids, ceil))
    if len(mids) >= count:
        idx = np.round(np.linspace(0, len(mids) - 1, count)).astype(int)
        return mids[idx]
    extra = np.linspace(marks[0], ceil, count - len(mids) + 2)[1:-1]
    return np.sort(np.concatenate([mids, extra]))
