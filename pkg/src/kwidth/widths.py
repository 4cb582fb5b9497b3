"""Approximate Kolmogorov widths via an equality-constrained ellipsoid method.

For a constraint set ``K`` and ``0 <= k <= d`` the relaxed width is

    h~_k = min { max_{theta in K} theta' X theta : tr X = d - k, 0 <= X <= I }

and ``D~_k = sqrt(h~_k)``. The minimization runs in ``svec`` coordinates, so
symmetry is structural and the trace is the only equality row. Objective cuts
are the rank-one matrices ``theta theta'`` returned by the quadratic oracle;
feasibility cuts come from the extreme eigenvectors of the current center.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from .geometry import ConstraintSet, quad_max_oracle

log = logging.getLogger(__name__)

PSD_TOL = 1e-9
DEGENERATE_CUT_TOL = 1e-12
# relative radius at which the ellipsoid is treated as numerically converged
COLLAPSE_RTOL = 1e-9


class SolverError(RuntimeError):
    pass


class DegenerateCut(SolverError):
    """Cut has no component along the affine feasible set."""


class ShapeCollapse(SolverError):
    """Shape matrix lost positive definiteness or became non-finite."""


# ---------------------------------------------------------------------------
# svec coordinates


@lru_cache(maxsize=None)
def _triu(d: int):
    iu = np.triu_indices(d)
    scale = np.where(iu[0] == iu[1], 1.0, math.sqrt(2.0))
    return iu, scale


def svec_dim(d: int) -> int:
    return d * (d + 1) // 2


def _side(m: int) -> int:
    d = int(round((math.sqrt(8 * m + 1) - 1) / 2))
    if svec_dim(d) != m:
        raise ValueError(f"length {m} is not a triangular number")
    return d


def svec(M) -> np.ndarray:
    """Upper triangle, row-major, off-diagonals scaled by sqrt(2)."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("svec expects a square matrix")
    iu, scale = _triu(M.shape[0])
    return M[iu] * scale


def smat(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise ValueError("smat expects a vector")
    d = _side(len(v))
    iu, scale = _triu(d)
    M = np.zeros((d, d))
    M[iu] = v / scale
    return M + np.triu(M, 1).T


# ---------------------------------------------------------------------------
# domain types


@dataclass(eq=False)
class SymMatrixPoint:
    matrix: np.ndarray
    trace_target: float
    eigen_cache: Optional[tuple[np.ndarray, np.ndarray]] = None

    def eig(self) -> tuple[np.ndarray, np.ndarray]:
        if self.eigen_cache is None:
            if not np.all(np.isfinite(self.matrix)):
                raise SolverError("non-finite matrix")
            self.eigen_cache = np.linalg.eigh(self.matrix)
        return self.eigen_cache

    def is_feasible(self, psd_tol: float = PSD_TOL) -> bool:
        evals, _ = self.eig()
        return (abs(np.trace(self.matrix) - self.trace_target) <= 1e-9
                and evals[0] >= -psd_tol and evals[-1] <= 1 + psd_tol)


@dataclass(eq=False)
class EllipsoidState:
    center: np.ndarray
    shape: np.ndarray
    iteration: int = 0
    budget: int = 0
    best_point: Optional[SymMatrixPoint] = None
    best_value: float = math.inf


@dataclass(eq=False)
class WidthProfile:
    dim: int
    widths: np.ndarray
    values: np.ndarray
    minimizers: list
    kappa: float = 1.0
    raw_widths: Optional[np.ndarray] = None

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "kappa": self.kappa,
            "widths": [float(w) for w in self.widths],
            "values": [float(v) for v in self.values],
            "raw_widths": None if self.raw_widths is None else [float(w) for w in self.raw_widths],
            "minimizers": [np.asarray(X, dtype=float).ravel().tolist() for X in self.minimizers],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "WidthProfile":
        d = int(data["dim"])
        return cls(
            dim=d,
            widths=np.asarray(data["widths"], dtype=float),
            values=np.asarray(data["values"], dtype=float),
            minimizers=[np.asarray(m, dtype=float).reshape(d, d) for m in data["minimizers"]],
            kappa=float(data.get("kappa", 1.0)),
            raw_widths=None if data.get("raw_widths") is None else np.asarray(data["raw_widths"]),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "WidthProfile":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True, eq=False)
class ApproxProjection:
    matrix: np.ndarray
    source_k: int


# ---------------------------------------------------------------------------
# ellipsoid method


def volume_ratio(n: int) -> float:
    """Volume ratio of successive central-cut ellipsoids in dimension ``n``."""
    return math.exp(log_volume_ratio(n))


def log_volume_ratio(n: int) -> float:
    return n * math.log(n) - 0.5 * (n + 1) * math.log(n + 1) - 0.5 * (n - 1) * math.log(n - 1)


def _range_basis(A_eq) -> np.ndarray:
    if A_eq is None:
        return None
    A = np.atleast_2d(np.asarray(A_eq, dtype=float))
    if A.size == 0:
        return None
    q, _ = np.linalg.qr(A.T)
    return q


def ellipsoid_step(state: EllipsoidState, g, A_eq=None, n: Optional[int] = None,
                   basis: Optional[np.ndarray] = None) -> EllipsoidState:
    """One central-cut update restricted to ``{x : A_eq x = A_eq center}``.

    ``n`` is the dimension used in the update coefficients; it defaults to the
    dimension of the affine slice, ``len(center) - rank(A_eq)``, which makes the
    volume of the slice shrink by exactly :func:`volume_ratio` per step. The
    shape's block normal to the slice is reset after every step, so it never
    grows while leaving the projected update untouched. ``basis`` may carry a
    precomputed orthonormal basis of the row space of ``A_eq``.
    """
    g = np.asarray(g, dtype=float)
    x = state.center
    P = state.shape
    m = len(x)
    U = basis if basis is not None else _range_basis(A_eq)
    p = 0 if U is None else U.shape[1]
    if n is None:
        n = m - p
    if n < 2:
        raise ValueError("update coefficients need slice dimension >= 2")

    g_proj = g if U is None else g - U @ (U.T @ g)
    if np.linalg.norm(g_proj) < DEGENERATE_CUT_TOL * max(1.0, float(np.linalg.norm(g))):
        raise DegenerateCut("cut is orthogonal to the feasible slice")

    Pg = P @ g
    if U is None:
        Qg = Pg
    else:
        A = U.T
        AP = A @ P
        if p == 1:
            Qg = Pg - AP[0] * (float(A[0] @ Pg) / float(AP[0] @ A[0]))
        else:
            Qg = Pg - AP.T @ np.linalg.solve(AP @ A.T, A @ Pg)
    gQg = float(g @ Qg)
    if not math.isfinite(gQg) or gQg <= 0.0:
        raise ShapeCollapse("shape is not positive definite along the cut")
    r = Qg / math.sqrt(gQg)

    new_x = x - r / (n + 1)
    new_P = (n * n / (n * n - 1.0)) * (P - (2.0 / (n + 1)) * np.outer(r, r))
    if U is not None:
        # pin the center to the slice and reset the normal block
        new_x = new_x - U @ (U.T @ (new_x - x))
        PU = new_P @ U
        UPU = U.T @ PU
        inner = new_P - U @ PU.T - PU @ U.T + U @ UPU @ U.T
        c = max(float(np.trace(inner)) / n, np.finfo(float).tiny)
        new_P = inner + c * (U @ U.T)
    new_P = 0.5 * (new_P + new_P.T)
    if not np.isfinite(new_P).all() or np.diag(new_P).min() <= 0.0:
        raise ShapeCollapse("shape lost positive definiteness")
    return EllipsoidState(new_x, new_P, state.iteration + 1, state.budget,
                          state.best_point, state.best_value)


def feasibility_cut(X: SymMatrixPoint, psd_tol: float = PSD_TOL):
    """Violated eigen-constraint of ``0 <= X <= I`` as ``(index, cut matrix)``, or None.

    The index is the position of the offending eigenvalue in ascending order.
    """
    evals, evecs = X.eig()
    if evals[-1] > 1 + psd_tol:
        v = evecs[:, -1]
        return len(evals) - 1, np.outer(v, v)
    if evals[0] < -psd_tol:
        v = evecs[:, 0]
        return 0, -np.outer(v, v)
    return None


def iteration_budget(intrinsic_dim: int, eps_tol: float, budget_scale: float) -> int:
    return max(1, math.ceil(budget_scale * intrinsic_dim ** 2 * math.log(1.0 / eps_tol)))


def _resolve_mode(K: ConstraintSet, mode: str) -> str:
    if mode not in ("auto", "full", "diagonal"):
        raise ValueError(f"unknown coordinate mode {mode!r}")
    if mode == "diagonal" and not K.orthosymmetric:
        raise ValueError("diagonal coordinates need an orthosymmetric set")
    if mode == "auto":
        return "diagonal" if K.orthosymmetric and K.dim > 8 else "full"
    return mode


def solve_width_sdp(K: ConstraintSet, k: int, eps_tol: float = 1e-3, budget_scale: float = 8.0,
                    mode: str = "auto", psd_tol: float = PSD_TOL) -> tuple[SymMatrixPoint, float]:
    """Minimize ``max_{theta in K} theta' X theta`` over ``tr X = d-k, 0 <= X <= I``.

    ``mode="full"`` searches all symmetric matrices (svec coordinates,
    intrinsic dimension ``(d-1)(d+2)/2``). ``mode="diagonal"`` searches diagonal
    matrices only, which loses nothing when ``K`` is orthosymmetric: averaging
    ``X`` over sign flips keeps it feasible and cannot raise the objective.
    ``"auto"`` picks the diagonal search for orthosymmetric sets with ``d > 8``.

    Returns the best feasible iterate and its oracle value.
    """
    d = K.dim
    if not 0 <= k <= d:
        raise ValueError(f"k must lie in [0, {d}]")
    if eps_tol <= 0 or eps_tol >= 1:
        raise ValueError("eps_tol must lie in (0, 1)")
    target = float(d - k)
    if k == d:
        return SymMatrixPoint(np.zeros((d, d)), 0.0), 0.0
    if k == 0:
        X = np.eye(d)
        return SymMatrixPoint(X, target), float(quad_max_oracle(K, X).value)
    mode = _resolve_mode(K, mode)
    if mode == "full" and d < 2:
        mode = "diagonal"
    if mode == "diagonal" and d < 3:
        mode = "full"

    if mode == "full":
        to_mat = smat
        to_coord = svec
        A = svec(np.eye(d))
    else:
        to_mat = np.diag
        to_coord = np.diag
        A = np.ones(d)
    m = len(A)
    n_intr = m - 1
    U = (A / np.linalg.norm(A))[:, None]
    M = iteration_budget(n_intr, eps_tol, budget_scale)

    x0 = to_coord((target / d) * np.eye(d))
    state = EllipsoidState(x0, 4.0 * target * np.eye(m), 0, M)
    radius0 = math.sqrt(4.0 * target * n_intr)
    best_X, best_val = None, math.inf

    while state.iteration < M:
        point = SymMatrixPoint(to_mat(state.center), target)
        if mode == "diagonal":
            order = np.argsort(state.center, kind="stable")
            point.eigen_cache = (state.center[order], np.eye(d)[:, order])
        cut = feasibility_cut(point, psd_tol)
        if cut is None:
            res = quad_max_oracle(K, point.matrix)
            if res.value < best_val:
                best_X, best_val = point, float(res.value)
            g = to_coord(np.outer(res.maximizer, res.maximizer))
        else:
            g = to_coord(cut[1])
        try:
            state = ellipsoid_step(state, g, A, basis=U)
        except DegenerateCut:
            log.debug("degenerate cut at iteration %d", state.iteration)
            break
        except ShapeCollapse:
            log.debug("shape collapse at iteration %d", state.iteration)
            break
        # trace of the shape on the slice bounds the squared semi-axes
        spread = float(np.trace(state.shape)) - float(state.shape @ A @ A) / float(A @ A)
        if spread <= (COLLAPSE_RTOL * radius0) ** 2:
            break
    if best_X is None:
        raise SolverError("no feasible iterate visited")
    best_X.matrix = 0.5 * (best_X.matrix + best_X.matrix.T)
    return best_X, best_val


# ---------------------------------------------------------------------------
# reference oracle and profiles


def water_filling(axes, k: int) -> tuple[np.ndarray, float]:
    """Exact relaxed width for an axis-aligned ellipsoid.

    The optimum is diagonal: minimize ``max_i a_i^2 x_i`` subject to
    ``sum x = d - k`` and ``0 <= x <= 1``. Returns ``(x, value)``.
    """
    a2 = np.asarray(axes, dtype=float) ** 2
    d = len(a2)
    if not 0 <= k <= d:
        raise ValueError("k out of range")
    if k == d:
        return np.zeros(d), 0.0
    order = np.argsort(-a2, kind="stable")
    s = a2[order]
    # the j largest axes sit below 1; the rest are saturated at 1
    for j in range(1, d + 1):
        t = (j - k) / np.sum(1.0 / s[:j])
        if t <= s[j - 1] and (j == d or t >= s[j]):
            break
    x = np.minimum(1.0, t / a2)
    return x, float(t)


def width_profile(K: ConstraintSet, eps_tol: float = 1e-3, budget_scale: float = 8.0,
                  mode: str = "auto") -> WidthProfile:
    """Relaxed widths ``D~_0, ..., D~_d`` with monotone repair of solver noise."""
    d = K.dim
    values = np.zeros(d + 1)
    mins = []
    for k in range(d + 1):
        X, h = solve_width_sdp(K, k, eps_tol, budget_scale, mode)
        values[k] = max(h, 0.0)
        mins.append(X.matrix)
    raw = np.sqrt(values)
    widths = np.minimum.accumulate(raw)
    repair = float(np.max(raw - widths))
    if repair > 0:
        log.info("monotone repair on width profile: max adjustment %.3g", repair)
    kappa = 1.0 if K.kind in ("ball", "ellipsoid") else float(K.kappa)
    return WidthProfile(d, widths, widths ** 2, mins, kappa, raw)


def exact_profile_from_axes(axes) -> WidthProfile:
    """Profile built from the water-filling oracle (exact for ellipsoids)."""
    axes = np.asarray(axes, dtype=float)
    d = len(axes)
    values, mins = np.zeros(d + 1), []
    for k in range(d + 1):
        x, t = water_filling(axes, k) if k > 0 else (np.ones(d), float(np.max(axes) ** 2))
        values[k] = t
        mins.append(np.diag(x))
    widths = np.sqrt(values)
    return WidthProfile(d, widths, values, mins, 1.0, widths.copy())


def optimal_dimension(profile: WidthProfile, threshold_fn: Callable[[int], float]) -> int:
    """Largest ``j`` in ``0..d`` with ``D~_{j-1} > f(j)``; ``D~_{-1} = inf``."""
    best = 0
    for j in range(1, profile.dim + 1):
        if profile.widths[j - 1] > threshold_fn(j):
            best = j
    return best


def first_second_dimensions(profile: WidthProfile, N: int, sigma: float, epsilon: float) -> tuple[int, int]:
    if N < 1 or sigma <= 0 or not 0 <= epsilon < 0.5:
        raise ValueError("need N >= 1, sigma > 0 and epsilon in [0, 1/2)")
    k1 = optimal_dimension(profile, lambda j: j ** 0.25 * sigma / math.sqrt(N))
    k2 = optimal_dimension(profile, lambda j: j ** 0.25 * math.sqrt(epsilon) * sigma / N ** 0.25)
    return k1, k2


def approx_projection(X, source_k: int = -1) -> ApproxProjection:
    """Symmetric square root of ``I - X`` with eigenvalues clamped to [0, 1]."""
    M = X.matrix if isinstance(X, SymMatrixPoint) else np.asarray(X, dtype=float)
    d = M.shape[0]
    C = np.eye(d) - 0.5 * (M + M.T)
    if not np.all(np.isfinite(C)):
        raise SolverError("non-finite matrix")
    evals, evecs = np.linalg.eigh(C)
    root = np.sqrt(np.clip(evals, 0.0, 1.0))
    A = (evecs * root) @ evecs.T
    return ApproxProjection(0.5 * (A + A.T), source_k)
