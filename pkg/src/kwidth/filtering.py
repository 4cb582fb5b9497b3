"""Weight filters that force contaminated projected data to look clean.

All routines work on sigma-normalized, projected rows ``Y_i`` (length ``d``)
whose clean covariance ``cov`` has trace ``k``. Filters never touch the rows;
they only lower the weights ``omega``. Stages that find more damage than the
contamination budget explains return :class:`Rejected`.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from .linalg import op_norm_sym

ITER_CAP_FACTOR = 50


class FilterError(RuntimeError):
    """Diagnostic failure: iteration cap or a numerically degenerate update."""


@dataclass(eq=False)
class WeightedSample:
    data: np.ndarray
    weights: np.ndarray
    dim_k: float
    sigma: float = 1.0
    cov: Optional[np.ndarray] = None
    kept: Optional[np.ndarray] = None
    trace: list = field(default_factory=list)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.data.ndim != 2 or self.weights.shape != (self.data.shape[0],):
            raise ValueError("data must be N x d and weights length N")
        if np.any(self.weights < 0) or np.any(self.weights > 1):
            raise ValueError("weights must lie in [0, 1]")
        if self.cov is None:
            self.cov = np.eye(self.data.shape[1])
        if self.kept is None:
            self.kept = np.ones(self.data.shape[0], dtype=bool)

    @classmethod
    def fresh(cls, data, dim_k: float, cov=None) -> "WeightedSample":
        data = np.asarray(data, dtype=float)
        return cls(data, np.ones(data.shape[0]), float(dim_k), 1.0, cov)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def active_count(self) -> int:
        return int(np.count_nonzero(self.weights > 0))

    def with_weights(self, weights, **kwargs) -> "WeightedSample":
        return replace(self, weights=np.asarray(weights, dtype=float), trace=list(self.trace), **kwargs)

    def weighted_sum(self) -> np.ndarray:
        return np.sqrt(self.weights) @ self.data


@dataclass(frozen=True)
class Rejected:
    stage: str
    reason: str
    trace: tuple = ()


@dataclass(frozen=True)
class RegularityParams:
    """Contamination level, error level and the universal constants of the filters.

    ``c_weight`` is carried for configuration symmetry; the weight filter
    removes a fixed budget and has no threshold to scale.
    """

    epsilon: float
    alpha: float
    c_pre: float = 2.0
    c_low: float = 2.0
    c_high: float = 2.0
    c_weight: float = 2.0
    c_reg: float = 1.0

    def __post_init__(self):
        if not 0 <= self.epsilon < 0.5:
            raise ValueError("epsilon must lie in [0, 1/2)")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        for name in ("c_pre", "c_low", "c_high", "c_weight", "c_reg"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    def budget(self, N: int) -> int:
        return min(int(math.floor(self.epsilon * N + 1e-12)), N)

    def _eps_log(self) -> float:
        return 0.0 if self.epsilon == 0 else self.epsilon * math.log(1.0 / self.epsilon)

    def gamma1(self, N: int, k: float) -> float:
        L = math.log(N / self.alpha)
        return self.c_pre * (math.sqrt(k * L) + L)

    def gamma2(self, N: int, k: float) -> float:
        La = math.log(1.0 / self.alpha)
        return self.c_low * (math.sqrt(N * k) + math.sqrt(N * La) + La + N * self._eps_log())

    def gamma3(self, N: int, k: float) -> float:
        La = math.log(1.0 / self.alpha)
        return self.c_high * (math.sqrt(N * k) + math.sqrt(k * La) + La + N * self._eps_log())

    def beta1(self, N: int, k: float, mu_norm: float = 0.0) -> float:
        eN = self.epsilon * N
        L = math.log(N / self.alpha)
        return (eN * (math.sqrt(k) + math.sqrt(N) * mu_norm) * math.sqrt(L) + eN * L
                + eN * math.sqrt(N) * mu_norm ** 2)

    def beta2(self, N: int, k: float, mu_norm: float = 0.0) -> float:
        eN = self.epsilon * N
        le = 0.0 if self.epsilon == 0 else math.log(1.0 / self.epsilon)
        return (eN * math.sqrt(eN * k * le) + eN ** 2 * le + mu_norm * eN ** 2 * math.sqrt(le)
                + mu_norm ** 2 * eN ** 2)


def prefilter(s: WeightedSample, p: RegularityParams) -> Union[Rejected, WeightedSample]:
    """Zero every row whose squared norm is far from ``k``; reject past the budget."""
    N = s.n
    gamma = p.gamma1(N, s.dim_k)
    dev = np.abs(np.einsum("ij,ij->i", s.data, s.data) - s.dim_k)
    bad = dev > gamma
    count = int(np.count_nonzero(bad))
    trace = list(s.trace) + [{"stage": "prefilter", "iteration": 0, "lambda": float(dev.max(initial=0.0)),
                              "threshold": gamma, "mass_removed": float(s.weights[bad].sum())}]
    if count > p.budget(N):
        return Rejected("prefilter", f"{count} rows exceed the norm threshold", tuple(trace))
    w = s.weights.copy()
    w[bad] = 0.0
    out = s.with_weights(w, kept=s.kept & ~bad)
    out.trace = trace
    return out


def _lowdim_lambda(Y, w, N, cov):
    M = Y.T @ (w[:, None] * Y) - N * cov
    return op_norm_sym(0.5 * (M + M.T))


def sample_filter_lowdim(s: WeightedSample, p: RegularityParams) -> Union[Rejected, WeightedSample]:
    """Spectral filter for ``N > k``: downweight rows aligned with the top direction
    of ``Y' D(w) Y - N cov``, at most ``2 eps N`` mass per round."""
    Y, N = s.data, s.n
    gamma = p.gamma2(N, s.dim_k)
    floor = N * (1 - 2 * p.epsilon)
    mass = 2 * p.epsilon * N
    w = s.weights.copy()
    trace = list(s.trace)
    for it in range(ITER_CAP_FACTOR * N):
        lam, v = _lowdim_lambda(Y, w, N, s.cov)
        if lam < gamma:
            out = s.with_weights(w)
            out.trace = trace + [{"stage": "sample_filter_lowdim", "iteration": it, "lambda": lam,
                                  "threshold": gamma, "mass_removed": 0.0}]
            return out
        tau = (Y @ v) ** 2 * (w > 0)
        order = np.argsort(-tau, kind="stable")
        tau1 = tau[order[0]]
        if tau1 <= 0:
            raise FilterError("all scores vanish while lambda exceeds its threshold")
        cum = np.cumsum(w[order])
        hit = np.nonzero(cum >= mass)[0]
        stop = int(hit[0]) + 1 if len(hit) else N
        sel = order[:stop]
        before = float(w.sum())
        w[sel] = np.clip((1.0 - tau[sel] / tau1) * w[sel], 0.0, None)
        trace.append({"stage": "sample_filter_lowdim", "iteration": it, "lambda": lam,
                      "threshold": gamma, "mass_removed": before - float(w.sum())})
        if w.sum() < floor:
            return Rejected("sample_filter", "weight mass fell below the floor", tuple(trace))
    raise FilterError("sample filter hit its iteration cap")


def _highdim_lambda(Y, w, k):
    r = np.sqrt(w)
    G = (r[:, None] * (Y @ Y.T)) * r[None, :] - k * np.diag(w)
    return op_norm_sym(0.5 * (G + G.T))


def sample_filter_highdim(s: WeightedSample, p: RegularityParams) -> Union[Rejected, WeightedSample]:
    """Spectral filter for ``N <= k`` on the weighted Gram matrix."""
    Y, N, k = s.data, s.n, s.dim_k
    gamma = p.gamma3(N, k)
    floor = N * (1 - 6 * p.epsilon)
    w = s.weights.copy()
    trace = list(s.trace)
    for it in range(ITER_CAP_FACTOR * N):
        lam, v = _highdim_lambda(Y, w, k)
        if lam < gamma:
            out = s.with_weights(w)
            out.trace = trace + [{"stage": "sample_filter_highdim", "iteration": it, "lambda": lam,
                                  "threshold": gamma, "mass_removed": 0.0}]
            return out
        pos = w > 0
        tau = np.zeros(N)
        tau[pos] = v[pos] ** 2 / w[pos]
        top = tau.max()
        if top <= 0:
            raise FilterError("all scores vanish while lambda exceeds its threshold")
        before = float(w.sum())
        w = np.clip((1.0 - tau / top) * w, 0.0, None)
        trace.append({"stage": "sample_filter_highdim", "iteration": it, "lambda": lam,
                      "threshold": gamma, "mass_removed": before - float(w.sum())})
        if w.sum() < floor:
            return Rejected("sample_filter", "weight mass fell below the floor", tuple(trace))
    raise FilterError("sample filter hit its iteration cap")


def weight_filter(s: WeightedSample, p: RegularityParams) -> WeightedSample:
    """Zero the ``floor(eps N)`` weights with the largest cross-term residuals."""
    w = s.weights.copy()
    m = p.budget(s.n)
    tau = _cross_terms(s.data, w, s.dim_k)
    tau = np.abs(tau) * (w > 0)
    removed = 0.0
    if m > 0:
        order = np.argsort(-tau, kind="stable")
        chosen = [i for i in order[:m] if w[i] > 0]
        removed = float(w[chosen].sum())
        w[chosen] = 0.0
    out = s.with_weights(w)
    out.trace = list(s.trace) + [{"stage": "weight_filter", "iteration": 0,
                                  "lambda": float(tau.max(initial=0.0)), "threshold": math.nan,
                                  "mass_removed": removed}]
    return out


def _cross_terms(Y, w, k):
    r = np.sqrt(w)
    total = r @ Y
    return r * (Y @ total) - k * w


def run_filters(s: WeightedSample, p: RegularityParams) -> Union[Rejected, WeightedSample]:
    """Prefilter, the sample filter matching ``N`` vs ``k``, then the weight filter."""
    out = prefilter(s, p)
    if isinstance(out, Rejected):
        return out
    out = sample_filter_lowdim(out, p) if s.n > s.dim_k else sample_filter_highdim(out, p)
    if isinstance(out, Rejected):
        return out
    return weight_filter(out, p)


# ---------------------------------------------------------------------------
# regularity audit


@dataclass
class RegularityReport:
    bounds: tuple[float, float, float]
    worst_ratio: tuple[float, float, float]
    violations: tuple[int, int, int]
    subsets_checked: int
    exhaustive: bool

    @property
    def worst_slack(self) -> tuple[float, float, float]:
        return tuple(b * (1 - r) for b, r in zip(self.bounds, self.worst_ratio))

    @property
    def ok(self) -> bool:
        return not any(self.violations)


def _top_sum(values: np.ndarray, m: int) -> float:
    # max over |S| <= m of |sum_S values|
    if m == 0 or len(values) == 0:
        return 0.0
    srt = np.sort(values)
    hi = float(np.sum(np.clip(srt[::-1][:m], 0, None)))
    lo = float(np.sum(np.clip(srt[:m], None, 0)))
    return max(hi, -lo)


def check_omega_regularity(s: WeightedSample, p: RegularityParams, subset_trials: int = 500,
                           seed: int = 0, mu_norm: float = 0.0) -> RegularityReport:
    """Audit the three subset conditions of omega-regularity.

    Conditions (i) and (iii) are linear in the subset, so their worst case over
    ``|S| <= floor(eps N)`` is computed exactly from sorted terms. Condition
    (ii) is quadratic: the audit takes the worst of ``subset_trials`` random
    subsets, a greedy subset, and every subset when ``N <= 15``. Condition (i)
    ranges over the rows kept by the prefilter.
    """
    if subset_trials < 1:
        raise ValueError("subset_trials must be positive")
    Y, w, k, N = s.data, s.weights, s.dim_k, s.n
    m = p.budget(N)
    c = p.c_reg
    bounds = (c * p.beta1(N, k, mu_norm), c * p.beta2(N, k, mu_norm),
              c * math.sqrt(N) * p.beta1(N, k, mu_norm))

    t1 = np.where(s.kept, np.einsum("ij,ij->i", Y, Y) - k, 0.0)
    t3 = _cross_terms(Y, w, k)
    r = np.sqrt(w)
    WY = r[:, None] * Y

    def cond2(S):
        S = list(S)
        if not S:
            return 0.0
        v = WY[S].sum(axis=0)
        return abs(float(v @ v) - k * float(w[S].sum()))

    def cond_linear(t, S):
        return abs(float(t[list(S)].sum())) if len(S) else 0.0

    exhaustive = N <= 15
    lhs = [[0.0], [0.0], [0.0]]
    if exhaustive:
        subsets = [S for size in range(1, m + 1) for S in itertools.combinations(range(N), size)]
    else:
        rng = np.random.default_rng(seed)
        subsets = []
        for _ in range(subset_trials):
            size = int(rng.integers(1, m + 1)) if m > 0 else 0
            subsets.append(tuple(rng.choice(N, size=size, replace=False)))
        subsets.append(_greedy_cond2(WY, w, k, m))
    for S in subsets:
        lhs[0].append(cond_linear(t1, S))
        lhs[1].append(cond2(S))
        lhs[2].append(cond_linear(t3, S))
    lhs[0].append(_top_sum(t1, m))
    lhs[2].append(_top_sum(t3, m))

    ratios, viol = [], []
    for vals, b in zip(lhs, bounds):
        vals = np.asarray(vals)
        ratios.append(float(vals.max() / b) if b > 0 else (0.0 if vals.max() == 0 else math.inf))
        viol.append(int(np.count_nonzero(vals > b)))
    return RegularityReport(bounds, tuple(ratios), tuple(viol), len(subsets), exhaustive)


def _greedy_cond2(WY, w, k, m):
    # grow S one row at a time, maximizing |‖sum‖^2 - k ‖w_S‖_1|
    S, v, mass = [], np.zeros(WY.shape[1]), 0.0
    for _ in range(m):
        cand = v[None, :] + WY
        vals = np.abs(np.einsum("ij,ij->i", cand, cand) - k * (mass + w))
        vals[S] = -np.inf
        i = int(np.argmax(vals))
        S.append(i)
        v, mass = cand[i], mass + w[i]
    return tuple(S)


def write_trace_csv(trace, path) -> None:
    cols = ["stage", "iteration", "lambda", "threshold", "mass_removed"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        writer.writeheader()
        for row in trace:
            writer.writerow({c: row.get(c) for c in cols})


def calibrate_regularity_constant(samples, p: RegularityParams, quantile: float = 0.99,
                                  subset_trials: int = 500, seed: int = 0) -> float:
    """Constant ``c`` under which a ``quantile`` share of ``samples`` is regular.

    ``samples`` are weighted samples from clean data run through the filters;
    the constant is the ``quantile`` of the worst per-sample ratio of
    left-hand side to bound at ``c = 1``.
    """
    unit = replace(p, c_reg=1.0)
    worst = [max(check_omega_regularity(s, unit, subset_trials, seed + i).worst_ratio)
             for i, s in enumerate(samples)]
    return float(np.quantile(worst, quantile))
