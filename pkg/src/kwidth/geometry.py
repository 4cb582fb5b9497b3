"""Constraint sets, Minkowski gauges and constrained quadratic maximization.

A constraint set ``K`` is described by its gauge ``rho_K``; everything the
width solver needs from ``K`` goes through :func:`quad_max_oracle`, which
returns an approximate maximizer of ``theta' X theta`` over ``K`` together
with the approximation factor ``kappa`` it guarantees.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

FEAS_TOL = 1e-8
GAUGE_BISECT_ITERS = 60

# Declared approximation factors: worst ratio brute-force / heuristic seen by
# scripts/calibrate_oracle_kappa.py (1.015 for boxes with d <= 12, 1.16 for
# l_p balls with p in {1.5, 3, 4}), padded by 1.5 and rounded up.
HYPERRECTANGLE_KAPPA = 1.55
GAUGE_DEFINED_KAPPA = 1.75

KINDS = ("ball", "ellipsoid", "hyperrectangle", "gauge")


class GeometryError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    """A balanced set ``K`` in ``R^dim``.

    ``axes`` holds the radius (ball), semi-axes (ellipsoid) or half-widths
    (hyperrectangle). Gauge-defined sets carry either a ``gauge`` callable or
    a monotone ``membership`` callable together with the radii ``r_in`` and
    ``r_out`` of balls sandwiching the set.
    """

    kind: str
    dim: int
    axes: Optional[np.ndarray] = None
    gauge: Optional[Callable[[np.ndarray], float]] = None
    membership: Optional[Callable[[np.ndarray], bool]] = None
    r_in: Optional[float] = None
    r_out: Optional[float] = None
    kappa: float = 1.0
    family: dict = field(default_factory=dict)
    t2_estimate: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise GeometryError(f"unknown constraint kind {self.kind!r}")
        if self.dim < 1:
            raise GeometryError("dim must be positive")
        if self.kind == "gauge":
            if self.gauge is None and self.membership is None:
                raise GeometryError("gauge-defined set needs a gauge or membership callback")
            if self.r_in is None or self.r_out is None or not 0 < self.r_in <= self.r_out < math.inf:
                raise GeometryError("gauge-defined set needs 0 < r_in <= r_out < inf")
        else:
            axes = np.asarray(self.axes, dtype=float)
            if axes.shape != (self.dim,) or not np.all(axes > 0) or not np.all(np.isfinite(axes)):
                raise GeometryError("axes must be a positive finite vector of length dim")
            object.__setattr__(self, "axes", axes)
            object.__setattr__(self, "r_in", float(axes.min()))
            outer = float(axes.max()) * (math.sqrt(self.dim) if self.kind == "hyperrectangle" else 1.0)
            object.__setattr__(self, "r_out", outer)

    # constructors -------------------------------------------------------

    @classmethod
    def ball(cls, dim: int, radius: float = 1.0) -> "ConstraintSet":
        return cls("ball", dim, axes=np.full(dim, float(radius)))

    @classmethod
    def ellipsoid(cls, axes) -> "ConstraintSet":
        axes = np.asarray(axes, dtype=float)
        return cls("ellipsoid", len(axes), axes=axes)

    @classmethod
    def hyperrectangle(cls, half_widths) -> "ConstraintSet":
        half_widths = np.asarray(half_widths, dtype=float)
        return cls("hyperrectangle", len(half_widths), axes=half_widths,
                   kappa=HYPERRECTANGLE_KAPPA)

    @classmethod
    def gauge_defined(cls, dim, *, gauge=None, membership=None, r_in, r_out,
                      kappa=GAUGE_DEFINED_KAPPA, family=None) -> "ConstraintSet":
        return cls("gauge", dim, gauge=gauge, membership=membership, r_in=r_in,
                   r_out=r_out, kappa=kappa, family=dict(family or {}))

    @classmethod
    def lp_ball(cls, dim: int, p: float, radius: float = 1.0) -> "ConstraintSet":
        """Unit ``l_p`` ball (scaled by ``radius``) as a gauge-defined set."""
        if p < 1:
            raise GeometryError("l_p balls need p >= 1")

        def gauge(theta, p=p, radius=radius):
            return float(np.linalg.norm(theta, ord=p)) / radius

        # ||x||_2 <= ||x||_p for p <= 2, and ||x||_2 <= d^{1/2-1/p} ||x||_p otherwise
        if p <= 2:
            r_in, r_out = radius * dim ** (0.5 - 1.0 / p), radius
        else:
            r_in, r_out = radius, radius * dim ** (0.5 - 1.0 / p)
        return cls.gauge_defined(dim, gauge=gauge, r_in=r_in, r_out=r_out,
                                 family={"p": float(p), "radius": float(radius)})

    @property
    def orthosymmetric(self) -> bool:
        return self.kind != "gauge" or "p" in self.family

    def to_dict(self) -> dict:
        if self.kind == "gauge":
            if "p" not in self.family:
                raise GeometryError("only l_p gauge-defined sets are serializable")
            return {"kind": "lp_ball", "dim": self.dim, "p": self.family["p"],
                    "radius": self.family.get("radius", 1.0)}
        out = {"kind": self.kind, "dim": self.dim}
        if self.kind == "ball":
            out["radius"] = float(self.axes[0])
        else:
            out["axes"] = [float(a) for a in self.axes]
        return out

    @classmethod
    def from_dict(cls, spec: dict) -> "ConstraintSet":
        spec = dict(spec)
        kind = spec.pop("kind", None)
        allowed = {
            "ball": {"dim", "radius"},
            "ellipsoid": {"dim", "axes"},
            "hyperrectangle": {"dim", "axes"},
            "lp_ball": {"dim", "p", "radius"},
        }
        if kind not in allowed:
            raise GeometryError(f"constraint.kind: unknown kind {kind!r}")
        extra = set(spec) - allowed[kind]
        if extra:
            raise GeometryError(f"constraint: unknown key(s) {sorted(extra)}")
        if kind == "ball":
            return cls.ball(int(spec["dim"]), float(spec.get("radius", 1.0)))
        if kind == "lp_ball":
            return cls.lp_ball(int(spec["dim"]), float(spec["p"]), float(spec.get("radius", 1.0)))
        axes = np.asarray(spec["axes"], dtype=float)
        if "dim" in spec and int(spec["dim"]) != len(axes):
            raise GeometryError("constraint.dim does not match len(constraint.axes)")
        return cls.ellipsoid(axes) if kind == "ellipsoid" else cls.hyperrectangle(axes)


@dataclass(frozen=True, eq=False)
class QuadMaxResult:
    maximizer: np.ndarray
    value: float
    kappa: float


def _check_vector(K: ConstraintSet, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (K.dim,):
        raise GeometryError(f"expected a vector of length {K.dim}, got shape {theta.shape}")
    return theta


def _bisect_gauge(K: ConstraintSet, theta: np.ndarray) -> float:
    norm = float(np.linalg.norm(theta))
    if norm == 0.0:
        return 0.0
    lo, hi = norm / K.r_out, norm / K.r_in
    if not K.membership(theta / hi):
        return math.inf
    if K.membership(theta / lo):
        return lo
    for _ in range(GAUGE_BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        if K.membership(theta / mid):
            hi = mid
        else:
            lo = mid
    return hi


def gauge_eval(K: ConstraintSet, theta) -> float:
    """Minkowski gauge ``inf{r >= 0 : theta in r K}``."""
    theta = _check_vector(K, theta)
    if K.kind in ("ball", "ellipsoid"):
        return float(np.linalg.norm(theta / K.axes))
    if K.kind == "hyperrectangle":
        return float(np.max(np.abs(theta) / K.axes))
    if K.gauge is not None:
        return float(K.gauge(theta))
    return _bisect_gauge(K, theta)


def _gauge_rows(K: ConstraintSet, thetas: np.ndarray) -> np.ndarray:
    if K.kind in ("ball", "ellipsoid"):
        return np.linalg.norm(thetas / K.axes, axis=1)
    if K.kind == "hyperrectangle":
        return np.max(np.abs(thetas) / K.axes, axis=1)
    return np.array([gauge_eval(K, t) for t in thetas])


def contains(K: ConstraintSet, theta, tol: float = 0.0) -> bool:
    if tol < 0:
        raise GeometryError("tol must be nonnegative")
    return gauge_eval(K, theta) <= 1.0 + tol


def _check_matrix(K: ConstraintSet, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape != (K.dim, K.dim):
        raise GeometryError(f"expected a {K.dim}x{K.dim} matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise GeometryError("matrix has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(X))))
    if np.max(np.abs(X - X.T)) > 1e-10 * scale:
        raise GeometryError("matrix is not symmetric")
    return 0.5 * (X + X.T)


def quad_max_exact(K: ConstraintSet, X) -> QuadMaxResult:
    """Exact maximum of ``theta' X theta`` over a ball or ellipsoid."""
    if K.kind not in ("ball", "ellipsoid"):
        raise GeometryError(f"no exact oracle for kind {K.kind!r}; use quad_max_oracle")
    X = _check_matrix(K, X)
    a = K.axes
    M = a[:, None] * X * a[None, :]
    evals, evecs = np.linalg.eigh(M)
    top = float(evals[-1])
    if top <= 0.0:
        return QuadMaxResult(np.zeros(K.dim), 0.0, 1.0)
    theta = a * evecs[:, -1]
    return QuadMaxResult(theta, float(theta @ X @ theta), 1.0)


def _box_local_search(M: np.ndarray, s: np.ndarray, max_sweeps: int = 100) -> tuple[np.ndarray, float]:
    # coordinate ascent on s' M s over the unit box; each step is an exact 1-d maximization
    s = s.astype(float).copy()
    Ms = M @ s
    val = float(s @ Ms)
    diag = np.diag(M)
    for _ in range(max_sweeps):
        improved = False
        for i in range(len(s)):
            b = Ms[i] - diag[i] * s[i]
            if diag[i] >= 0:
                t = 1.0 if b >= 0 else -1.0
            else:
                t = float(np.clip(-b / diag[i], -1.0, 1.0))
            new_val = val + diag[i] * (t * t - s[i] * s[i]) + 2.0 * b * (t - s[i])
            if new_val > val + 1e-12 * max(1.0, abs(val)):
                Ms += M[:, i] * (t - s[i])
                s[i] = t
                val = new_val
                improved = True
        if not improved:
            break
    return s, float(s @ M @ s)


def _hyperrectangle_oracle(K: ConstraintSet, X: np.ndarray) -> QuadMaxResult:
    a = K.axes
    d = K.dim
    M = a[:, None] * X * a[None, :]
    _, evecs = np.linalg.eigh(M)
    starts = [np.where(evecs[:, j] >= 0, 1.0, -1.0) for j in range(d - 1, -1, -1)]
    rng = np.random.default_rng(0)
    starts += list(np.where(rng.random((d, d)) < 0.5, -1.0, 1.0))
    best_s, best_val = np.zeros(d), 0.0
    for s0 in starts:
        s, val = _box_local_search(M, s0)
        if val > best_val:
            best_s, best_val = s, val
    theta = a * best_s
    return QuadMaxResult(theta, float(theta @ X @ theta) if best_val > 0 else 0.0, K.kappa)


def _gauge_ascent_oracle(K: ConstraintSet, X: np.ndarray, n_random: int = 8) -> QuadMaxResult:
    d = K.dim

    def to_boundary(u):
        g = gauge_eval(K, u)
        return u / g if 0 < g < math.inf else None

    _, evecs = np.linalg.eigh(X)
    rng = np.random.default_rng(0)
    starts = [evecs[:, -j] for j in range(1, min(d, 4) + 1)]
    starts += list(rng.standard_normal((n_random, d)))
    best_theta, best_val = np.zeros(d), 0.0
    for u in starts:
        theta = to_boundary(u)
        if theta is None:
            continue
        val = float(theta @ X @ theta)
        step = 0.5
        for _ in range(400):
            grad = X @ theta
            gnorm = float(np.linalg.norm(grad))
            if gnorm == 0.0 or step < 1e-7:
                break
            cand = to_boundary(theta + step * grad * (np.linalg.norm(theta) / gnorm))
            cand_val = -math.inf if cand is None else float(cand @ X @ cand)
            if cand_val > val:
                theta, val = cand, cand_val
                step *= 1.5
            else:
                step *= 0.5
        if val > best_val:
            best_theta, best_val = theta, val
    return QuadMaxResult(best_theta, best_val, K.kappa)


def quad_max_oracle(K: ConstraintSet, X) -> QuadMaxResult:
    """Approximate ``max_{theta in K} theta' X theta`` within factor ``kappa``.

    Exact (``kappa = 1``) for balls and ellipsoids; coordinate-ascent local
    search from eigenvector sign roundings for hyperrectangles; multi-start
    ascent along the boundary for gauge-defined sets.
    """
    X = _check_matrix(K, X)
    if not np.any(X):
        return QuadMaxResult(np.zeros(K.dim), 0.0, 1.0)
    if K.kind in ("ball", "ellipsoid"):
        return quad_max_exact(K, X)
    if K.kind == "hyperrectangle":
        return _hyperrectangle_oracle(K, X)
    return _gauge_ascent_oracle(K, X)


def quad_max_bruteforce(K: ConstraintSet, X, samples: int = 10_000, seed: int = 0) -> float:
    """Lower bound on ``max_{theta in K} theta' X theta`` by sampling the boundary.

    Random Gaussian directions are rescaled onto the boundary of ``K``; for a
    hyperrectangle with ``dim <= 12`` every vertex is evaluated as well.
    """
    X = _check_matrix(K, X)
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((samples, K.dim))
    g = _gauge_rows(K, dirs)
    ok = (g > 0) & np.isfinite(g)
    pts = dirs[ok] / g[ok, None]
    best = 0.0
    if len(pts):
        best = max(best, float(np.max(np.einsum("ij,jk,ik->i", pts, X, pts))))
    if K.kind == "hyperrectangle" and K.dim <= 12:
        signs = np.array(list(itertools.product((-1.0, 1.0), repeat=K.dim)))
        verts = signs * K.axes
        best = max(best, float(np.max(np.einsum("ij,jk,ik->i", verts, X, verts))))
    return best


def type2_constant_estimate(K: ConstraintSet) -> float:
    """Order of the type-2 constant ``T_2(K)``; metadata only."""
    if K.t2_estimate is not None:
        return float(K.t2_estimate)
    d = K.dim
    log_d = max(math.log(d), 1.0)
    if K.kind == "ball":
        return 1.0
    if K.kind in ("ellipsoid", "hyperrectangle"):
        return math.sqrt(log_d)
    p = K.family.get("p")
    if p is None:
        return math.sqrt(log_d)
    if p <= 2:
        return d ** (1.0 / p - 0.5)
    return math.sqrt(min(p, log_d))
