"""Robust signal detection under a convex constraint.

Three tests share the same thresholds:

* :func:`chi_square_test`, the plain norm test for uncontaminated data,
* :func:`robust_test`, the polynomial-time test: project onto the
  approximate optimal subspace, filter the weights, then threshold the
  weighted chi-square statistic,
* :func:`theoretical_test`, the exponential-time reference that looks for a
  subset on which the chi-square decision cannot be flipped by dropping rows.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .filtering import (Rejected, RegularityParams, WeightedSample, prefilter,
                        sample_filter_highdim, sample_filter_lowdim, weight_filter)
from .geometry import ConstraintSet
from .widths import WidthProfile, approx_projection, first_second_dimensions, width_profile

ACCEPT = "accept"
REJECT = "reject"

# Defaults from scripts/calibrate_constants.py (400 null trials per adversary,
# worst strategy kept): c2 at the N=200, d=20 reference, c_theory at N=10, d=6,
# c_reg as the 0.99 quantile on clean filtered data at the reference.
DEFAULT_C2 = 0.52
DEFAULT_C_THEORY = 5.6
DEFAULT_C_REG = 1.6
MAX_THEORY_N = 14


@dataclass(eq=False)
class DetectConfig:
    N: int
    d: int
    sigma: float
    epsilon: float
    alpha: float
    constraint: ConstraintSet
    width_profile: Optional[WidthProfile] = None
    c2: float = DEFAULT_C2
    c_theory: float = DEFAULT_C_THEORY
    c_pre: float = 2.0
    c_low: float = 2.0
    c_high: float = 2.0
    c_weight: float = 2.0
    c_reg: float = DEFAULT_C_REG
    eps_tol: float = 1e-3
    budget_scale: float = 8.0
    _plan: Optional["_Plan"] = field(default=None, repr=False)

    def __post_init__(self):
        if self.N < 1 or self.d < 1:
            raise ValueError("N and d must be positive")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0 <= self.epsilon < 0.5:
            raise ValueError("epsilon must lie in [0, 1/2)")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.constraint.dim != self.d:
            raise ValueError("constraint dimension does not match d")

    def regularity(self) -> RegularityParams:
        return RegularityParams(self.epsilon, self.alpha, self.c_pre, self.c_low,
                                self.c_high, self.c_weight, self.c_reg)

    def profile(self) -> WidthProfile:
        if self.width_profile is None:
            self.width_profile = width_profile(self.constraint, self.eps_tol, self.budget_scale)
        return self.width_profile

    def plan(self) -> "_Plan":
        """Chosen dimension, branch and projection; cached."""
        if self._plan is None:
            prof = self.profile()
            k1, k2 = first_second_dimensions(prof, self.N, 1.0, self.epsilon)
            k1, k2 = max(k1, 1), max(k2, 1)
            k, branch = (k1, "first") if k1 <= k2 else (k2, "second")
            A = approx_projection(prof.minimizers[k], k).matrix
            self._plan = _Plan(k1, k2, k, branch, A, A @ A)
        return self._plan

    def with_(self, **changes) -> "DetectConfig":
        keep_plan = not (set(changes) & {"N", "epsilon", "constraint", "width_profile", "d"})
        return replace(self, _plan=self._plan if keep_plan else None, **changes)


@dataclass(frozen=True, eq=False)
class _Plan:
    k1: int
    k2: int
    k: int
    branch: str
    projection: np.ndarray
    cov: np.ndarray


@dataclass
class TestOutcome:
    decision: str
    stage: str
    statistic: float
    threshold: float
    chosen_k: int
    chosen_branch: str
    weight_mass: float = math.nan
    trace: tuple = ()

    @property
    def rejected(self) -> bool:
        return self.decision == REJECT

    def to_row(self) -> dict:
        return {"decision": self.decision, "stage": self.stage, "statistic": self.statistic,
                "threshold": self.threshold, "chosen_k": self.chosen_k,
                "chosen_branch": self.chosen_branch, "weight_mass": self.weight_mass}


# ---------------------------------------------------------------------------
# thresholds


def p_raw(epsilon: float, N: int, k: float, alpha: float, sigma: float = 1.0) -> float:
    """Squared separation threshold of the polynomial-time test."""
    L = math.log(N / alpha)
    return sigma ** 2 * max(epsilon * L / math.sqrt(N), epsilon ** 2 * L,
                            math.sqrt(epsilon ** 2 * k * L / N),
                            math.sqrt(k) * math.log(1.0 / alpha) / N)


def e_raw(epsilon: float, N: int, k: float, sigma: float = 1.0) -> float:
    """Squared separation threshold of the exponential-time test."""
    le = 0.0 if epsilon == 0 else math.log(1.0 / epsilon)
    return sigma ** 2 * max(math.sqrt(k) / N, epsilon ** 2 * le, math.sqrt(epsilon ** 2 * le * k / N))


def detection_boundary(cfg: DetectConfig) -> float:
    """Squared signal norm at which the robust test is guaranteed to work, up to constants."""
    return p_raw(cfg.epsilon, cfg.N, cfg.plan().k, cfg.alpha, cfg.sigma)


# ---------------------------------------------------------------------------
# tests


def chi_square_test(Y, k: float, sigma: float, t: float) -> str:
    """Reject iff ``||Y||^2 - k sigma^2 >= t``."""
    Y = np.asarray(Y, dtype=float)
    return REJECT if float(Y @ Y) - k * sigma ** 2 >= t else ACCEPT


def chi_square_quantile(k: float, sigma: float, level: float, trials: int = 2000,
                        seed: int = 0) -> float:
    """Monte-Carlo ``1 - level`` quantile of ``||Y||^2 - k sigma^2`` under the null."""
    rng = np.random.default_rng(seed)
    Z = sigma * rng.standard_normal((trials, int(k)))
    stats = np.einsum("ij,ij->i", Z, Z) - k * sigma ** 2
    return float(np.quantile(stats, 1.0 - level))


def _reject_at(stage, plan, trace, mass=math.nan):
    return TestOutcome(REJECT, stage, math.nan, math.nan, plan.k, plan.branch, mass, tuple(trace))


def robust_statistic(Y, cfg: DetectConfig):
    """Run the filters and return ``(TestOutcome-or-None, statistic, threshold)``.

    The outcome is set when a filter stage rejects; otherwise the caller
    compares the statistic to the threshold.
    """
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2 or Y.shape != (cfg.N, cfg.d):
        raise ValueError(f"expected data of shape {(cfg.N, cfg.d)}, got {Y.shape}")
    plan = cfg.plan()
    params = cfg.regularity()
    Yp = (Y / cfg.sigma) @ plan.projection
    s = WeightedSample(Yp, np.ones(cfg.N), float(plan.k), 1.0, plan.cov)
    out = prefilter(s, params)
    if isinstance(out, Rejected):
        return _reject_at("prefilter", plan, out.trace), math.nan, math.nan
    if cfg.N > plan.k:
        out = sample_filter_lowdim(out, params)
    else:
        out = sample_filter_highdim(out, params)
    if isinstance(out, Rejected):
        return _reject_at("sample-filter", plan, out.trace), math.nan, math.nan
    out = weight_filter(out, params)
    v = out.weighted_sum()
    stat = abs(float(v @ v) - plan.k * float(out.weights.sum()))
    thr = cfg.c2 * cfg.N ** 2 * math.sqrt(p_raw(cfg.epsilon, cfg.N, plan.k, cfg.alpha, 1.0))
    return out, stat, thr


def robust_test(Y, cfg: DetectConfig) -> TestOutcome:
    """Polynomial-time robust test; see module docstring."""
    out, stat, thr = robust_statistic(Y, cfg)
    if isinstance(out, TestOutcome):
        return out
    plan = cfg.plan()
    decision = REJECT if stat >= thr else ACCEPT
    return TestOutcome(decision, "final-statistic", stat, thr, plan.k, plan.branch,
                       float(out.weights.sum()), tuple(out.trace))


def theoretical_test(Y, cfg: DetectConfig) -> TestOutcome:
    """Exhaustive consistent-subset test for ``N <= 14``.

    Scans candidate subsets ``S0`` of size at least ``(1-eps)N`` in descending
    size, then lexicographic order, and returns the chi-square decision on
    the first ``S0`` whose every subset of size ``>= (1-2 eps)N`` gives the
    same decision.
    """
    Y = np.asarray(Y, dtype=float)
    N = Y.shape[0]
    if N > MAX_THEORY_N:
        raise ValueError(f"theoretical_test enumerates subsets; N must be <= {MAX_THEORY_N}")
    if Y.shape != (cfg.N, cfg.d):
        raise ValueError(f"expected data of shape {(cfg.N, cfg.d)}, got {Y.shape}")
    plan = cfg.plan()
    Yp = (Y / cfg.sigma) @ plan.projection
    k = plan.k
    E2 = e_raw(cfg.epsilon, N, k, 1.0)
    m = int(math.floor(cfg.epsilon * N + 1e-12))
    min_outer = N - m
    min_inner = max(N - 2 * m, 0)

    cache = {}

    def phi(S):
        if S not in cache:
            v = Yp[list(S)].sum(axis=0)
            lhs = float(v @ v) - k * len(S)
            cache[S] = (lhs >= cfg.c_theory * len(S) ** 2 * E2, lhs)
        return cache[S][0]

    for size in range(N, min_outer - 1, -1):
        for S0 in itertools.combinations(range(N), size):
            base = phi(S0)
            ok = True
            for inner in range(size - 1, min_inner - 1, -1):
                for S in itertools.combinations(S0, inner):
                    if phi(S) != base:
                        ok = False
                        break
                if not ok:
                    break
            if ok:
                lhs = cache[S0][1]
                thr = cfg.c_theory * size ** 2 * E2
                return TestOutcome(REJECT if base else ACCEPT, "consistent-subset", lhs, thr,
                                   k, plan.branch, float(size))
    return TestOutcome(REJECT, "no-consistent-subset", math.nan, math.nan, k, plan.branch)


# ---------------------------------------------------------------------------
# calibration


CALIBRATION_TARGETS = ("c2", "c_pre", "c_low", "c_high", "c_theory")
_STAGE_OF = {"c2": "final-statistic", "c_pre": "prefilter", "c_low": "sample-filter",
             "c_high": "sample-filter", "c_theory": "consistent-subset"}


@dataclass
class CalibrationResult:
    target: str
    constant: float
    rate: float
    share: float
    monotone: bool
    evaluations: list


def _stage_rate(datasets, cfg, target, c) -> float:
    cfg_c = cfg.with_(**{target: c})
    stage = _STAGE_OF[target]
    hits = 0
    for Y in datasets:
        out = theoretical_test(Y, cfg_c) if target == "c_theory" else robust_test(Y, cfg_c)
        hits += out.rejected and out.stage == stage
    return hits / len(datasets)


def calibrate_constant(cfg: DetectConfig, target: str = "c2", trials: int = 200, seed: int = 0,
                       share: Optional[float] = None, data_fn: Optional[Callable] = None,
                       lo: float = 1e-3, hi: float = 1e3, steps: int = 24) -> CalibrationResult:
    """Bisect a constant so the null rejection rate at its stage is about ``share``.

    ``share`` defaults to ``alpha / 4``. Null datasets come from
    ``data_fn(rng)`` (clean Gaussian noise by default) and are shared by every
    probe, so the rate is a deterministic, non-increasing step function of the
    constant. A probe sequence that contradicts monotonicity aborts the search
    and is reported via ``monotone=False``.
    """
    if target not in CALIBRATION_TARGETS:
        raise ValueError(f"unknown calibration target {target!r}")
    if trials < 1:
        raise ValueError("trials must be positive")
    if target == "c_low" and cfg.N <= cfg.plan().k or target == "c_high" and cfg.N > cfg.plan().k:
        raise ValueError(f"{target} does not act at this configuration")
    share = cfg.alpha / 4 if share is None else share
    rng = np.random.default_rng(seed)
    if data_fn is None:
        def data_fn(rng):
            return cfg.sigma * rng.standard_normal((cfg.N, cfg.d))
    datasets = [data_fn(rng) for _ in range(trials)]

    evals = []

    def rate(c):
        r = _stage_rate(datasets, cfg, target, c)
        evals.append((c, r))
        return r

    r_lo, r_hi = rate(lo), rate(hi)
    monotone = r_lo >= r_hi
    while monotone and steps > 0:
        mid = math.sqrt(lo * hi)
        r_mid = rate(mid)
        if not r_hi <= r_mid <= r_lo:
            monotone = False
            break
        if r_mid > share:
            lo, r_lo = mid, r_mid
        else:
            hi, r_hi = mid, r_mid
        steps -= 1
    return CalibrationResult(target, hi, r_hi, share, monotone, evals)


def min_dimension(cfg: DetectConfig) -> int:
    plan = cfg.plan()
    return min(plan.k1, plan.k2)
