"""Limit operators of the Efimov asymptotics: S_r, its Fourier symbol, U(gamma) and the slope test.

The symbol is the Fourier transform in the logarithmic radius,

    S_hat(theta, t) = int e^{-i theta y} S(y, t) dy
                    = (l1+l2) / (2 pi sqrt(l1^2 + 2 l1 l2)) * sinh(theta phi) / (sin(phi) sinh(pi theta)),

with cos(phi) = l2 t / (l1 + l2).  It acts on the unit sphere through
t = <xi, eta>, so its spectrum is the Funk-Hecke sequence
lambda_l = 2 pi int P_l(t) S_hat(theta, t) dt with multiplicity 2l + 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss, legvander
from scipy.linalg import eigvalsh, toeplitz

from .errors import InsufficientRangeError, PreconditionError, TruncationError
from .lattice import ModelParams, lambda_set, torus_displacement
from .quadrature import QuadratureGrid

DEFAULT_LMAX = 12
DEFAULT_THETA_MAX = 30.0
DEFAULT_GAUSS = 64


@dataclass(frozen=True)
class SobolevKernel:
    l1: float
    l2: float
    v1_sq_sum: float | None = None

    def __post_init__(self):
        if not (self.l1 > 0 and self.l2 > 0):
            raise ValueError("l1 and l2 must be positive")

    @property
    def m(self) -> float:
        return (self.l1**2 + 2 * self.l1 * self.l2) / (self.l1 + self.l2)

    @property
    def root(self) -> float:
        return math.sqrt(self.l1**2 + 2 * self.l1 * self.l2)

    @property
    def D(self) -> float:
        """Prefactor of the singular kernel, (l1+l2)^{3/2} / (2 pi^2 sum v1^2)."""
        if not self.v1_sq_sum:
            raise ValueError("D needs a positive sum of v1^2 over the zero set")
        return (self.l1 + self.l2) ** 1.5 / (2 * np.pi**2 * self.v1_sq_sum)

    @classmethod
    def from_params(cls, params: ModelParams) -> "SobolevKernel":
        lam = lambda_set(params.n).points
        return cls(params.l1, params.l2, float(np.sum(params.v1(lam) ** 2)))


def s_kernel(y, t, k: SobolevKernel):
    """S(y, t) = (l1+l2)^2 / (4 pi^2 sqrt(l1^2+2 l1 l2)) / ((l1+l2) cosh y + l2 t)."""
    y, t = np.asarray(y, dtype=float), np.asarray(t, dtype=float)
    if np.any(np.abs(t) > 1 + 1e-15):
        raise ValueError("t must lie in [-1, 1]")
    s = k.l1 + k.l2
    return s * s / (4 * np.pi**2 * k.root) / (s * np.cosh(y) + k.l2 * t)


def _sinh_ratio(theta, phi):
    """sinh(theta phi) / sinh(pi theta), with the limit phi / pi at theta = 0."""
    theta = np.abs(np.asarray(theta, dtype=float))
    out = np.empty(np.broadcast(theta, phi).shape)
    th, ph = np.broadcast_arrays(theta, phi)
    small = th < 1e-8
    out[small] = ph[small] / np.pi
    big = ~small
    a, b = th[big] * ph[big], np.pi * th[big]
    # exp form keeps large theta finite
    out[big] = np.exp(a - b) * (-np.expm1(-2 * a)) / (-np.expm1(-2 * b))
    return out


def s_hat_kernel(theta, t, k: SobolevKernel):
    t = np.asarray(t, dtype=float)
    s = k.l1 + k.l2
    phi = np.arccos(k.l2 * t / s)
    return s / (2 * np.pi * k.root) * _sinh_ratio(theta, phi) / np.sin(phi)


def _legendre_moments(theta, lmax: int, k: SobolevKernel, nodes: int) -> np.ndarray:
    """lambda_l(theta_i) for all theta_i (rows) and l = 0..lmax (columns)."""
    x, w = leggauss(nodes)
    P = legvander(x, lmax)
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    S = s_hat_kernel(th[:, None], x[None, :], k)
    return 2 * np.pi * (S * w) @ P


@dataclass(frozen=True)
class AngularSpectrum:
    theta: float
    lmax: int
    lambdas: np.ndarray
    truncation_bound: float

    def count_above(self, gamma: float) -> int:
        ells = np.arange(self.lmax + 1)
        return int(np.sum((2 * ells + 1) * (self.lambdas > gamma)))


def s_hat_eigenvalues(theta: float, lmax: int, k: SobolevKernel, nodes: int = DEFAULT_GAUSS) -> AngularSpectrum:
    """Spherical-harmonic eigenvalues of S_hat(theta); raises if doubling the Gauss rule moves any by > 1e-10."""
    if lmax < 0:
        raise ValueError("lmax must be non-negative")
    nodes = max(nodes, 4 * lmax)
    lam = _legendre_moments(theta, lmax, k, nodes)[0]
    check = _legendre_moments(theta, lmax, k, 2 * nodes)[0]
    if np.max(np.abs(lam - check)) > 1e-10:
        raise TruncationError(f"Gauss-Legendre rule with {nodes} nodes is not converged at theta={theta}")
    return AngularSpectrum(theta=float(theta), lmax=lmax, lambdas=lam,
                           truncation_bound=float(np.max(np.abs(lam[-2:]))))


def lambda0_closed_form(theta, k: SobolevKernel):
    """lambda_0 in closed form: l = 0 needs only int sinh(theta phi) dphi."""
    s = k.l1 + k.l2
    c = k.l2 / s
    phi_hi, phi_lo = np.arccos(-c), np.arccos(c)
    th = np.abs(np.asarray(theta, dtype=float))
    pref = s * s / (k.l2 * k.root)
    with np.errstate(invalid="ignore", divide="ignore"):
        val = pref * (np.cosh(th * phi_hi) - np.cosh(th * phi_lo)) / (th * np.sinh(np.pi * th))
    limit = pref * (phi_hi**2 - phi_lo**2) / (2 * np.pi)
    return np.where(th < 1e-6, limit, val)


def sphere_grid(n_polar: int = 16, n_azimuth: int = 32):
    """Product rule on the unit sphere: Gauss-Legendre in cos(polar), uniform in azimuth."""
    x, w = leggauss(n_polar)
    phi = 2 * np.pi * np.arange(n_azimuth) / n_azimuth
    ct, ph = np.meshgrid(x, phi, indexing="ij")
    st = np.sqrt(1 - ct**2)
    pts = np.stack([st * np.cos(ph), st * np.sin(ph), ct], axis=-1).reshape(-1, 3)
    wts = np.repeat(w, n_azimuth) * (2 * np.pi / n_azimuth)
    return pts, wts


def sphere_nystrom_eigenvalues(theta: float, k: SobolevKernel, n_polar: int = 16, n_azimuth: int = 32) -> np.ndarray:
    """Eigenvalues of S_hat(theta) discretised directly on the sphere, descending."""
    pts, wts = sphere_grid(n_polar, n_azimuth)
    t = np.clip(pts @ pts.T, -1.0, 1.0)
    sw = np.sqrt(wts)
    A = sw[:, None] * s_hat_kernel(theta, t, k) * sw[None, :]
    return eigvalsh(A)[::-1]


def sphere_nystrom_count(theta: float, gamma: float, k: SobolevKernel, **kw) -> int:
    return int(np.sum(sphere_nystrom_eigenvalues(theta, k, **kw) > gamma))


# -- U(gamma) -----------------------------------------------------------------


def _crossings(f, grid: np.ndarray, tol: float) -> list:
    """Roots of f - 0 located by sampling on ``grid`` and bisecting sign changes."""
    vals = f(grid)
    roots = []
    for i in np.nonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0]:
        a, b = grid[i], grid[i + 1]
        fa = vals[i]
        while b - a > tol:
            mid = 0.5 * (a + b)
            fm = f(np.array([mid]))[0]
            if np.sign(fm) == np.sign(fa):
                a, fa = mid, fm
            else:
                b = mid
        roots.append(0.5 * (a + b))
    return roots


@dataclass(frozen=True)
class SuperLevelSets:
    """Per mode l, the theta-intervals in [0, theta_max] where lambda_l > gamma."""

    gamma: float
    intervals: list
    measures: np.ndarray


def superlevel_sets(gamma: float, k: SobolevKernel, lmax: int = DEFAULT_LMAX,
                    theta_max: float = DEFAULT_THETA_MAX, samples: int = 600,
                    tol: float = 1e-14) -> SuperLevelSets:
    nodes = max(DEFAULT_GAUSS, 4 * lmax)
    grid = np.linspace(0.0, theta_max, samples + 1)
    table = _legendre_moments(grid, lmax, k, nodes)
    if np.any(table[:, lmax] > gamma):
        raise TruncationError(f"lambda_{lmax} exceeds gamma={gamma}; raise lmax")
    if np.any(table[-1] > gamma):
        raise TruncationError(f"some lambda_l(theta_max) exceeds gamma={gamma}; raise theta_max")
    intervals, measures = [], []
    for ell in range(lmax + 1):
        def f(th, ell=ell):
            return _legendre_moments(th, ell, k, nodes)[:, ell] - gamma
        roots = _crossings(f, grid, tol)
        edges = ([0.0] if table[0, ell] > gamma else []) + roots
        pairs = [(edges[i], edges[i + 1]) for i in range(0, len(edges) - 1, 2)]
        intervals.append(pairs)
        measures.append(sum(b - a for a, b in pairs))
    return SuperLevelSets(gamma=gamma, intervals=intervals, measures=np.array(measures))


def u_coefficient(gamma: float, k: SobolevKernel, tol: float = 1e-14, *, lmax: int = DEFAULT_LMAX,
                  theta_max: float = DEFAULT_THETA_MAX) -> float:
    """U(gamma) = (1/4pi) int n(gamma, S_hat(theta)) dtheta by exact step areas.

    The integrand is even in theta, so the half line is doubled.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    sets = superlevel_sets(gamma, k, lmax, theta_max, tol=tol)
    ells = np.arange(lmax + 1)
    return float(2.0 * np.sum((2 * ells + 1) * sets.measures) / (4 * np.pi))


@dataclass(frozen=True)
class UCurve:
    gammas: np.ndarray
    values: np.ndarray
    theta_max: float
    theta_nodes: int
    lmax: int

    def rows(self):
        return [{"gamma": float(g), "U": float(u)} for g, u in zip(self.gammas, self.values)]


def u_curve(gammas, k: SobolevKernel, *, lmax: int = DEFAULT_LMAX, theta_max: float = DEFAULT_THETA_MAX) -> UCurve:
    gammas = np.asarray(gammas, dtype=float)
    vals = np.array([u_coefficient(g, k, lmax=lmax, theta_max=theta_max) for g in gammas])
    return UCurve(gammas=gammas, values=vals, theta_max=theta_max,
                  theta_nodes=max(DEFAULT_GAUSS, 4 * lmax), lmax=lmax)


def spectral_bound(k: SobolevKernel, lmax: int = DEFAULT_LMAX, theta_max: float = DEFAULT_THETA_MAX,
                   samples: int = 600) -> float:
    """Largest sampled lambda_l(theta); lambda_0(0) in practice."""
    grid = np.linspace(0.0, theta_max, samples + 1)
    return float(np.max(_legendre_moments(grid, lmax, k, max(DEFAULT_GAUSS, 4 * lmax))))


# -- S_r ----------------------------------------------------------------------


def radial_mode_kernel(y, ell_max: int, k: SobolevKernel, nodes: int = DEFAULT_GAUSS) -> np.ndarray:
    """k_l(y) = 2 pi int S(y, t) P_l(t) dt; rows y, columns l."""
    x, w = leggauss(nodes)
    P = legvander(x, ell_max)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    return 2 * np.pi * (s_kernel(y[:, None], x[None, :], k) * w) @ P


def _s_r_raw(r: float, gamma: float, k: SobolevKernel, npu: int, lmax: int) -> int:
    M = max(1, int(round(r * npu)))
    h = r / M
    kern = radial_mode_kernel(np.arange(M) * h, lmax, k)
    total = 0
    for ell in range(lmax + 1):
        col = h * kern[:, ell]
        # Gershgorin: every eigenvalue is below the largest absolute row sum
        if 2 * np.sum(np.abs(col)) < gamma:
            continue
        total += (2 * ell + 1) * int(np.sum(eigvalsh(toeplitz(col)) > gamma))
    return total


def s_r_count(r: float, gamma: float, k: SobolevKernel, nodes_per_unit: int = 8,
              lmax: int = DEFAULT_LMAX, check: bool = True) -> dict:
    """n(gamma, S_r) on L2((0, r) x sphere) by uniform midpoint Nystrom; ratio = count / 2r."""
    if not r > 0:
        raise ValueError("r must be positive")
    count = _s_r_raw(r, gamma, k, nodes_per_unit, lmax)
    if check:
        fine = _s_r_raw(r, gamma, k, 2 * nodes_per_unit, lmax)
        if abs(fine - count) > 0.02 * max(count, 1):
            raise TruncationError(f"S_r count moves from {count} to {fine} when nodes_per_unit doubles")
    return {"r": r, "gamma": gamma, "count": count, "ratio": count / (2 * r),
            "nodes_per_unit": nodes_per_unit, "lmax": lmax}


# -- singular part ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SingularPartAssembly:
    matrix: np.ndarray
    nodes: np.ndarray
    anchors: np.ndarray


def singular_part_matrix(delta: float, z: float, params: ModelParams, grid: QuadratureGrid) -> SingularPartAssembly:
    """Nystrom matrix of the singular part of T_11 on the nodes within ``delta`` of the zero set.

    Each node is attached to its zero-set point p'; the kernel pairs
    (p - p') with (q - q'), symmetric under exchanging both.
    """
    n = params.n
    if not 0 < delta <= np.pi / (4 * n) + 1e-15:
        raise ValueError(f"delta must lie in (0, pi/(4n)], got {delta}")
    if not z < 0:
        raise ValueError("z must be negative")
    lam = lambda_set(n).points
    v1_lam = params.v1(lam)
    keep_anchor = np.abs(v1_lam) > 1e-12 * max(1.0, params.v1.bound)
    k = SobolevKernel(params.l1, params.l2, float(np.sum(v1_lam**2)))
    lam0, v0 = lam[keep_anchor], v1_lam[keep_anchor]
    if len(lam0) == 0:
        return SingularPartAssembly(np.zeros((0, 0)), np.zeros((0, 3)), np.zeros(0, dtype=int))

    disp = np.stack([torus_displacement(grid.nodes, p) for p in lam0])  # (A, M, 3)
    dist = np.linalg.norm(disp, axis=2)
    anchor = np.argmin(dist, axis=0)
    idx = np.nonzero(dist[anchor, np.arange(grid.size)] < delta)[0]
    a = anchor[idx]
    x = disp[a, idx]
    sw = np.sqrt(grid.weights[idx])
    s, l2 = params.l1 + params.l2, params.l2
    e = 2 * abs(z) / n**2
    r2 = np.sum(x * x, axis=1)
    left = v0[a] * (k.m * r2 + e) ** -0.25 * sw
    denom = s * r2[:, None] + 2 * l2 * (x @ x.T) + s * r2[None, :] + e
    A = k.D * left[:, None] * left[None, :] / denom
    A = 0.5 * (A + A.T)
    return SingularPartAssembly(matrix=A, nodes=grid.nodes[idx], anchors=a)


def singular_part_count(delta: float, z: float, params: ModelParams, grid: QuadratureGrid, gamma: float) -> int:
    """n(gamma, T_11(delta; |z|)) on ``grid``; zero when v1 vanishes on the zero set."""
    A = singular_part_matrix(delta, z, params, grid).matrix
    if A.size == 0:
        return 0
    return int(np.sum(eigvalsh(A) > gamma))


# -- slope ----------------------------------------------------------------------


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    u1: float
    relative_gap: float
    z_values: list
    counts: list
    grid_meta: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "u1": self.u1,
                "relative_gap": self.relative_gap, "z_values": self.z_values,
                "counts": self.counts, "grid_meta": self.grid_meta}


def efimov_slope_fit(z_values, counts, k: SobolevKernel, grid_meta=None) -> SlopeFit:
    """Least-squares slope of N(K, z) against |log|z||, compared with U(1)."""
    z = np.asarray(z_values, dtype=float)
    c = np.asarray(counts, dtype=float)
    if len(z) < 4 or len(z) != len(c):
        raise PreconditionError("slope fit needs at least four (z, count) pairs")
    if np.any(z >= 0):
        raise PreconditionError("z values must be negative")
    L = np.abs(np.log(np.abs(z)))
    if L.max() - L.min() < 3:
        raise InsufficientRangeError(f"|log|z|| spans only {L.max() - L.min():.3f} < 3")
    slope, intercept = np.polyfit(L, c, 1)
    u1 = u_coefficient(1.0, k)
    return SlopeFit(slope=float(slope), intercept=float(intercept), u1=u1,
                    relative_gap=abs(float(slope) - u1) / u1,
                    z_values=[float(v) for v in z], counts=[int(v) for v in c],
                    grid_meta=list(grid_meta or []))
