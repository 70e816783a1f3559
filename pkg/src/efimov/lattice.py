"""Torus geometry, the lattice dispersion, its zero set and the model data.

Points of the torus are plain ``numpy`` arrays whose last axis has length 3;
every function here is vectorised over leading axes.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Any, NamedTuple, Sequence

import numpy as np

TWO_PI = 2.0 * np.pi
_KINDS = ("cos", "sin")
_PARITIES = ("even", "odd")


def reduce_torus(x) -> np.ndarray:
    """Reduce real coordinates modulo 2*pi into the window (-pi, pi]."""
    x = np.asarray(x, dtype=float)
    return np.pi - np.mod(np.pi - x, TWO_PI)


def torus_point(c1: float, c2: float, c3: float) -> np.ndarray:
    return reduce_torus([c1, c2, c3])


def torus_displacement(p, q) -> np.ndarray:
    """Shortest periodic displacement ``p - q`` (components in [-pi, pi))."""
    d = np.asarray(p, dtype=float) - np.asarray(q, dtype=float)
    return np.mod(d + np.pi, TWO_PI) - np.pi


def torus_distance(p, q) -> np.ndarray:
    return np.linalg.norm(torus_displacement(p, q), axis=-1)


def epsilon(q, n: int) -> np.ndarray:
    """Lattice dispersion sum_i (1 - cos(n q_i)); range [0, 6]."""
    q = np.asarray(q, dtype=float)
    return np.sum(1.0 - np.cos(n * q), axis=-1)


def epsilon_gradient(q, n: int) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return n * np.sin(n * q)


def epsilon_hessian(q, n: int) -> np.ndarray:
    """Closed-form Hessian; diagonal since the dispersion is separable."""
    q = np.asarray(q, dtype=float)
    diag = n * n * np.cos(n * q)
    return diag[..., :, None] * np.eye(3)


@dataclass(frozen=True)
class LambdaSet:
    """The n**3 global minimisers of the dispersion."""

    n: int
    points: np.ndarray

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def contains(self, q, atol: float = 1e-12) -> bool:
        return bool(np.any(torus_distance(self.points, q) <= atol))


def lambda_set(n: int) -> LambdaSet:
    if n < 1:
        raise ValueError(f"n must be a positive integer, got {n}")
    coords = reduce_torus(TWO_PI * np.arange(n) / n)
    # exact zero and exact pi survive the reduction; keep them tidy
    coords = np.where(np.abs(coords) < 1e-15, 0.0, coords)
    coords = np.sort(coords)
    pts = np.array(list(itertools.product(coords, repeat=3)), dtype=float)
    return LambdaSet(n=n, points=pts)


# -- trigonometric polynomials -------------------------------------------------


class ParityError(ValueError):
    """A trigonometric polynomial does not have the parity it declares."""


@dataclass(frozen=True)
class Factor:
    axis: int  # 1-based, as in the JSON format
    harmonic: int
    kind: str

    def __post_init__(self):
        if self.axis not in (1, 2, 3):
            raise ValueError(f"axis must be 1, 2 or 3, got {self.axis}")
        if int(self.harmonic) != self.harmonic or self.harmonic < 1:
            raise ValueError(f"harmonic must be a positive integer, got {self.harmonic}")
        if self.kind not in _KINDS:
            raise ValueError(f"kind must be 'cos' or 'sin', got {self.kind!r}")

    def value(self, x: np.ndarray, order: int = 0) -> np.ndarray:
        m = self.harmonic
        # d^k/dx^k cos(mx) = m^k cos(mx + k pi/2); same shift for sin
        phase = order * np.pi / 2 - (np.pi / 2 if self.kind == "sin" else 0.0)
        return m**order * np.cos(m * x + phase)


@dataclass(frozen=True)
class TrigPoly:
    """Finite trigonometric polynomial on the 3-torus.

    ``terms`` are single-axis harmonics, ``products`` separable products of
    harmonics on distinct axes.  Internally both are products of factors.
    ``parity`` optionally declares "even"/"odd" per axis; a declaration is
    checked by sampling when the object is built.
    """

    constant: float = 0.0
    terms: tuple = ()
    products: tuple = ()
    parity: tuple | None = None
    _monomials: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        monos = []
        for coef, axis, harmonic, kind in self.terms:
            monos.append((float(coef), (Factor(int(axis), int(harmonic), kind),)))
        for coef, factors in self.products:
            fs = tuple(Factor(int(a), int(h), k) for a, h, k in factors)
            axes = [f.axis for f in fs]
            if len(set(axes)) != len(axes):
                raise ValueError("a product may use each axis at most once")
            monos.append((float(coef), fs))
        object.__setattr__(self, "_monomials", tuple(monos))
        if self.parity is not None:
            parity = tuple(self.parity)
            if len(parity) != 3 or any(p not in _PARITIES for p in parity):
                raise ValueError(f"parity must list 'even'/'odd' for 3 axes, got {self.parity!r}")
            object.__setattr__(self, "parity", parity)
            found = self.axis_parity()
            for i, (want, got) in enumerate(zip(parity, found)):
                if want != got:
                    raise ParityError(f"declared {want} on axis {i + 1} but the polynomial is not")

    # construction helpers
    @classmethod
    def const(cls, c: float) -> "TrigPoly":
        return cls(constant=float(c), parity=("even",) * 3)

    @classmethod
    def sin_product(cls, n: int, coef: float = 1.0) -> "TrigPoly":
        """coef * sin(n q1) sin(n q2) sin(n q3); vanishes on the zero set of the dispersion."""
        return cls(products=((coef, ((1, n, "sin"), (2, n, "sin"), (3, n, "sin"))),),
                   parity=("odd",) * 3)

    def scaled(self, c: float) -> "TrigPoly":
        return TrigPoly(
            constant=c * self.constant,
            terms=tuple((c * coef, a, h, k) for coef, a, h, k in self.terms),
            products=tuple((c * coef, fs) for coef, fs in self.products),
            parity=self.parity,
        )

    @property
    def bound(self) -> float:
        return abs(self.constant) + sum(abs(c) for c, _ in self._monomials)

    @property
    def is_zero(self) -> bool:
        return self.bound == 0.0

    def derivative(self, q, orders: Sequence[int]) -> np.ndarray:
        """Mixed partial derivative with the given per-axis orders."""
        q = np.asarray(q, dtype=float)
        out = np.zeros(q.shape[:-1])
        if not any(orders):
            out = out + self.constant
        for coef, factors in self._monomials:
            used = {f.axis - 1 for f in factors}
            if any(orders[a] for a in range(3) if a not in used):
                continue
            term = np.full(q.shape[:-1], coef)
            for f in factors:
                term = term * f.value(q[..., f.axis - 1], orders[f.axis - 1])
            out = out + term
        return out

    def __call__(self, q) -> np.ndarray:
        return self.derivative(q, (0, 0, 0))

    def gradient(self, q) -> np.ndarray:
        return np.stack([self.derivative(q, o) for o in np.eye(3, dtype=int)], axis=-1)

    def hessian(self, q) -> np.ndarray:
        rows = []
        for i in range(3):
            cols = []
            for j in range(3):
                o = [0, 0, 0]
                o[i] += 1
                o[j] += 1
                cols.append(self.derivative(q, o))
            rows.append(np.stack(cols, axis=-1))
        return np.stack(rows, axis=-2)

    def axis_parity(self, samples: int = 64, seed: int = 0) -> tuple:
        """Parity per axis found by sampling: 'even', 'odd' or None."""
        rng = np.random.default_rng(seed)
        q = rng.uniform(-np.pi, np.pi, size=(samples, 3))
        f = self(q)
        atol = 1e-12 * max(1.0, self.bound)
        found = []
        for axis in range(3):
            r = q.copy()
            r[:, axis] = -r[:, axis]
            g = self(r)
            if np.allclose(g, f, rtol=0, atol=atol):
                found.append("even")
            elif np.allclose(g, -f, rtol=0, atol=atol):
                found.append("odd")
            else:
                found.append(None)
        return tuple(found)

    # JSON
    def to_dict(self) -> dict:
        d: dict[str, Any] = {
            "constant": self.constant,
            "terms": [{"axis": a, "harmonic": h, "kind": k, "coef": c} for c, a, h, k in self.terms],
            "products": [
                {"coef": c, "factors": [{"axis": a, "harmonic": h, "kind": k} for a, h, k in fs]}
                for c, fs in self.products
            ],
        }
        if self.parity is not None:
            d["parity"] = list(self.parity)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrigPoly":
        terms = tuple((t["coef"], t["axis"], t["harmonic"], t["kind"]) for t in d.get("terms", ()))
        products = tuple(
            (p["coef"], tuple((f["axis"], f["harmonic"], f["kind"]) for f in p["factors"]))
            for p in d.get("products", ())
        )
        parity = d.get("parity")
        return cls(constant=float(d.get("constant", 0.0)), terms=terms, products=products,
                   parity=tuple(parity) if parity is not None else None)


@dataclass(frozen=True)
class ModelParams:
    """Couplings, lattice index and coefficient functions of the operator matrix."""

    l1: float = 1.0
    l2: float = 1.0
    n: int = 1
    w0: TrigPoly = field(default_factory=lambda: TrigPoly.const(1.0))
    v0: TrigPoly = field(default_factory=lambda: TrigPoly.const(0.0))
    v1: TrigPoly = field(default_factory=lambda: TrigPoly.const(1.0))

    def __post_init__(self):
        errors = []
        if not self.l1 > 0:
            errors.append(f"l1 must be positive, got {self.l1}")
        if not self.l2 > 0:
            errors.append(f"l2 must be positive, got {self.l2}")
        if int(self.n) != self.n or self.n < 1:
            errors.append(f"n must be a positive integer, got {self.n}")
        if errors:
            raise ValueError("; ".join(errors))
        if None in self.v1.axis_parity():
            raise ParityError("v1 must be even or odd in each variable")

    def with_v1(self, v1: TrigPoly) -> "ModelParams":
        return replace(self, v1=v1)

    @property
    def lam(self) -> LambdaSet:
        return lambda_set(self.n)

    def to_dict(self) -> dict:
        return {"l1": self.l1, "l2": self.l2, "n": self.n, "w0": self.w0.to_dict(),
                "v0": self.v0.to_dict(), "v1": self.v1.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        kw: dict[str, Any] = {k: d[k] for k in ("l1", "l2", "n") if k in d}
        for name in ("w0", "v0", "v1"):
            if name in d:
                kw[name] = TrigPoly.from_dict(d[name])
        return cls(**kw)


class WValues(NamedTuple):
    w1: np.ndarray
    w2: np.ndarray
    Ek: np.ndarray


def w_functions(K, p, q, params: ModelParams) -> WValues:
    """w1(K;p), w2(K;p,q) and the Friedrichs dispersion E_K(p)."""
    K, p, q = (np.asarray(a, dtype=float) for a in (K, p, q))
    l1, l2, n = params.l1, params.l2, params.n
    ep = epsilon(p, n)
    ek = l1 * ep + l2 * epsilon(K - p, n)
    w1 = ek + 1.0
    w2 = ep * l1 + l1 * epsilon(q, n) + l2 * epsilon(K - p - q, n)
    return WValues(w1=w1, w2=w2, Ek=ek)


def w2_matrix(K, P: np.ndarray, Q: np.ndarray, params: ModelParams) -> np.ndarray:
    """w2(K; P_i, Q_j) for all pairs, using the cosine addition formula.

    Avoids forming the (len(P), len(Q), 3) difference array.
    """
    n, l1, l2 = params.n, params.l1, params.l2
    K = np.asarray(K, dtype=float)
    a = n * (K - P)
    b = n * Q
    left = np.hstack([np.cos(a), np.sin(a)])
    right = np.hstack([np.cos(b), np.sin(b)])
    eps_kpq = 3.0 - left @ right.T
    return l1 * epsilon(P, n)[:, None] + l1 * epsilon(Q, n)[None, :] + l2 * eps_kpq
